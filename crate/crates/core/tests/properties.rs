mod common;

use std::f64::consts::PI;
use std::path::PathBuf;

use mimic_audit::audio::{
    clip_duration, decode_wav, encode_wav_f32, encode_wav_i16, resample, AudioClip,
};
use mimic_audit::dataset::{self, DatasetManifest, Label, LabeledSample, SplitConfig};
use mimic_audit::dsp::{fft_real, mel_filterbank, power_spectrogram, StftParams};
use mimic_audit::features::{extract_features, FeatureVector, N_FEATURES};
use mimic_audit::metrics::roc_curve;
use mimic_audit::net::{self, softmax, MlpModel, TrainConfig};
use proptest::prelude::*;

fn tone(freqs: &[(f64, f64)], rate: u32, len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let t = i as f64 / rate as f64;
            freqs
                .iter()
                .map(|&(f, a)| a * (2.0 * PI * f * t).sin())
                .sum()
        })
        .collect()
}

fn label_vec(flags: &[bool]) -> Vec<Label> {
    flags
        .iter()
        .map(|&f| if f { Label::Faked } else { Label::Real })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pcm16_round_trip(pcm in prop::collection::vec(any::<i16>(), 0..400),
                        stereo in any::<bool>(),
                        rate in 8000u32..96000) {
        let channels = if stereo { 2 } else { 1 };
        let mut pcm = pcm;
        pcm.truncate(pcm.len() / channels * channels);
        let a = decode_wav(&encode_wav_i16(&pcm, channels as u16, rate)).unwrap();
        prop_assert_eq!(a.sample_rate, rate);
        let expected: Vec<f64> = pcm
            .chunks(channels)
            .map(|f| f.iter().map(|&v| v as f64 / 32768.0).sum::<f64>() / channels as f64)
            .collect();
        prop_assert_eq!(&a.samples, &expected);
        if !stereo {
            let b = decode_wav(&mimic_audit::audio::encode_wav_pcm16(&a.samples, rate)).unwrap();
            prop_assert_eq!(b.samples, a.samples);
        }
    }

    #[test]
    fn float_round_trip(x in prop::collection::vec(-1.0f32..1.0, 0..300)) {
        let a = decode_wav(&encode_wav_f32(&x, 1, 44100)).unwrap();
        let back: Vec<f32> = a.samples.iter().map(|&s| s as f32).collect();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn clip_duration_is_idempotent(len in 0usize..5000, max in 0.01f64..0.5) {
        let clip = AudioClip::new(vec![0.25; len], 8000);
        let once = clip_duration(&clip, max);
        prop_assert_eq!(clip_duration(&once, max), once.clone());
        prop_assert!(once.len() <= len);
    }

    #[test]
    fn fft_is_linear(x in prop::collection::vec(-1.0f64..1.0, 256),
                     y in prop::collection::vec(-1.0f64..1.0, 256),
                     a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let (fx, fy, fm) = (fft_real(&x).unwrap(), fft_real(&y).unwrap(), fft_real(&mix).unwrap());
        for k in 0..fm.len() {
            prop_assert!((fm[k] - (fx[k] * a + fy[k] * b)).norm() < 1e-9);
        }
    }

    #[test]
    fn centered_frame_count(len in 1usize..20000, hop in prop::sample::select(vec![128usize, 256, 512])) {
        let params = StftParams { frame_length: 1024, hop_length: hop, centered: true };
        let spec = power_spectrogram(&AudioClip::new(vec![0.1; len], 22050), &params).unwrap();
        prop_assert_eq!(spec.n_frames(), 1 + len / hop);
    }

    #[test]
    fn softmax_is_a_distribution(z in prop::collection::vec(-700.0f64..700.0, 2..6)) {
        let p = softmax(&z);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn auc_matches_pair_count(pairs in prop::collection::vec((0u8..10, any::<bool>()), 2..30)) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64 / 10.0).collect();
        let labels = label_vec(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
        prop_assume!(labels.contains(&Label::Real) && labels.contains(&Label::Faked));
        let curve = roc_curve(&scores, &labels).unwrap();
        prop_assert!((curve.auc - common::pair_auc(&scores, &labels)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&curve.eer));
        for w in curve.points.windows(2) {
            prop_assert!(w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr);
        }
    }

    #[test]
    fn roc_ignores_monotone_transforms(pairs in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..30)) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let labels = label_vec(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
        prop_assume!(labels.contains(&Label::Real) && labels.contains(&Label::Faked));
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 1.0).collect();
        let a = roc_curve(&scores, &labels).unwrap();
        let b = roc_curve(&warped, &labels).unwrap();
        let pts = |c: &mimic_audit::metrics::RocCurve| c.points.iter().map(|p| (p.fpr, p.tpr)).collect::<Vec<_>>();
        prop_assert_eq!(pts(&a), pts(&b));
        prop_assert_eq!(a.auc, b.auc);
        prop_assert_eq!(a.eer, b.eer);
    }

    #[test]
    fn split_partitions_and_stratifies(n_real in 2usize..300, n_faked in 2usize..300,
                                       frac in 0.1f64..0.5, seed in any::<u64>()) {
        let samples: Vec<LabeledSample> = (0..n_real + n_faked)
            .map(|i| LabeledSample {
                index: i as u32,
                label: if i < n_real { Label::Real } else { Label::Faked },
                path: PathBuf::from(format!("{i:04}")),
                features: None,
            })
            .collect();
        let manifest = DatasetManifest::new(samples).unwrap();
        let cfg = SplitConfig { test_fraction: frac, seed, ..SplitConfig::default() };
        let (train, test) = dataset::split(&manifest, &cfg).unwrap();
        let mut all: Vec<u32> = train.samples().iter().chain(test.samples()).map(|s| s.index).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..(n_real + n_faked) as u32).collect::<Vec<_>>());
        let n = manifest.len() as f64;
        for label in [Label::Real, Label::Faked] {
            let expected = test.len() as f64 * manifest.count(label) as f64 / n;
            prop_assert!((test.count(label) as f64 - expected).abs() <= 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn resample_round_trip(f1 in 50.0f64..2000.0, f2 in 50.0f64..2000.0, a in 0.1f64..0.4) {
        let (r1, r2) = (22050u32, 16000u32);
        let x = tone(&[(f1, a), (f2, a)], r1, 8000);
        let there = resample(&AudioClip::new(x.clone(), r1), r2);
        let back = resample(&there, r1);
        let skip = x.len() / 20;
        let (mut err, mut norm) = (0.0, 0.0);
        for i in skip..x.len() - skip {
            err += (back.samples[i] - x[i]).powi(2);
            norm += x[i].powi(2);
        }
        prop_assert!((err / norm).sqrt() < 1e-3, "relative L2 {}", (err / norm).sqrt());
    }

    #[test]
    fn features_are_amplitude_invariant(f0 in 100.0f64..2000.0, c in 0.05f64..1.0, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = tone(&[(f0, 0.5), (2.3 * f0, 0.2)], 22050, 6000)
            .into_iter()
            .map(|v| v + 0.01 * rng.random_range(-1.0..1.0))
            .collect();
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        let a = extract_features(&AudioClip::new(x, 22050)).unwrap();
        let b = extract_features(&AudioClip::new(scaled, 22050)).unwrap();
        let close = |p: f64, q: f64| (p - q).abs() <= 1e-6 * p.abs().max(1.0);
        prop_assert!(close(a.zcr(), b.zcr()));
        prop_assert!(close(a.centroid(), b.centroid()));
        prop_assert!(close(a.bandwidth(), b.bandwidth()));
        prop_assert!(close(a.rolloff(), b.rolloff()));
        prop_assert!(close(a.chroma(), b.chroma()));
        prop_assert!((b.rmse() - c * a.rmse()).abs() <= 1e-12 * a.rmse().max(1.0));
        for k in 1..20 {
            prop_assert!(close(a.mfcc()[k], b.mfcc()[k]), "mfcc {}: {} vs {}", k, a.mfcc()[k], b.mfcc()[k]);
        }
        // 20 log10(c) per band, times sqrt(n_mels) in coefficient 0.
        let shift = 10.0 * (c * c).log10() * 128f64.sqrt();
        prop_assert!((b.mfcc()[0] - a.mfcc()[0] - shift).abs() < 1e-6);
    }
}

// The two reflect-padded edge frames differ between the clips, so the clip
// must be long enough for them to be a small share of the frame mean.
#[test]
fn features_are_stable_under_one_hop_shift() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let rate = 22050;
    let n = 10 * rate as usize;
    let x: Vec<f64> = tone(&[(220.0, 0.4), (440.0, 0.2), (660.0, 0.1)], rate, n + 512)
        .into_iter()
        .map(|v| v + 0.02 * rng.random_range(-1.0..1.0))
        .collect();
    let a = extract_features(&AudioClip::new(x[..n].to_vec(), rate)).unwrap();
    let b = extract_features(&AudioClip::new(x[512..512 + n].to_vec(), rate)).unwrap();
    for (i, (p, q)) in a.values.iter().zip(&b.values).enumerate() {
        assert!(
            (p - q).abs() <= 0.05 * p.abs().max(q.abs()),
            "feature {i}: {p} vs {q}"
        );
    }
}

#[test]
fn flat_spectrum_excites_every_filter() {
    let fb = mel_filterbank(128, 1025, 22050, 0.0, None).unwrap();
    assert!(fb.apply(&vec![1.0; 1025]).unwrap().iter().all(|&v| v > 0.0));
}

#[test]
fn he_init_scale() {
    let scaler = dataset::Scaler { mean: vec![0.0; 26], std: vec![1.0; 26] };
    let model = MlpModel::new_random(&[26, 256, 128, 64, 2], 0.5, scaler, 7).unwrap();
    for layer in &model.layers {
        let n = layer.weights.len() as f64;
        let mean = layer.weights.iter().sum::<f64>() / n;
        let std = (layer.weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n).sqrt();
        let target = (2.0 / layer.inputs as f64).sqrt();
        assert!((std / target - 1.0).abs() < 0.2, "std {std} vs {target}");
        assert!(layer.bias.iter().all(|&b| b == 0.0));
    }
}

#[test]
fn test_rows_never_reach_the_scaler() {
    let (x, y) = common::gaussian_blobs(200, N_FEATURES, 2.0, 3);
    let manifest = |shift: f64| {
        let samples = x
            .iter()
            .zip(&y)
            .enumerate()
            .map(|(i, (row, &label))| LabeledSample {
                index: i as u32,
                label,
                path: PathBuf::from(format!("{i:04}")),
                features: Some(FeatureVector::try_from(row.as_slice()).unwrap()),
            })
            .collect();
        let m = DatasetManifest::new(samples).unwrap();
        let (train, mut test) = dataset::split(&m, &SplitConfig::default()).unwrap();
        for s in test.samples_mut() {
            let fv = s.features.as_mut().unwrap();
            fv.values.iter_mut().for_each(|v| *v += shift);
        }
        (train, test)
    };
    let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
    let fit = |train: &DatasetManifest| {
        let rows: Vec<Vec<f64>> = train
            .feature_vectors()
            .unwrap()
            .iter()
            .map(|f| f.values.to_vec())
            .collect();
        net::train(&rows, &train.labels(), &cfg).unwrap().0.scaler
    };
    let (train_a, test_a) = manifest(0.0);
    let (train_b, test_b) = manifest(1000.0);
    assert_ne!(test_a, test_b);
    assert_eq!(fit(&train_a), fit(&train_b));
}
