//! Helpers shared by the integration tests and the acceptance suite:
//! brute-force oracles written from the definitions, and a synthetic
//! labeled WAV corpus.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::Path;

use mimic_audit::audio::encode_wav_pcm16;
use mimic_audit::dataset::Label;
use mimic_audit::net::{Mode, MlpModel};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// O(n^2) DFT.
pub fn naive_dft(x: &[f64]) -> Vec<Complex64> {
    naive_dft_bins(x, x.len())
}

/// The first `bins` outputs of an O(n^2) DFT.
pub fn naive_dft_bins(x: &[f64], bins: usize) -> Vec<Complex64> {
    let n = x.len();
    let table: Vec<Complex64> = (0..n)
        .map(|j| Complex64::from_polar(1.0, -2.0 * PI * j as f64 / n as f64))
        .collect();
    (0..bins)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(t, &v)| table[(k * t) % n] * v)
                .sum()
        })
        .collect()
}

/// Orthonormal DCT-II by direct summation.
pub fn naive_dct(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    (0..x.len())
        .map(|k| {
            let s = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            s * x
                .iter()
                .enumerate()
                .map(|(i, &v)| v * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos())
                .sum::<f64>()
        })
        .collect()
}

fn mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn inv_mel(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Mean MFCCs over frames, built from the textbook recipe: reflect-padded
/// centered frames, periodic Hann, naive DFT power, explicit triangle
/// weights, dB with a 1e-10 floor and a direct-sum DCT.
pub fn oracle_mfcc(samples: &[f64], rate: u32, n_mels: usize, n_coeffs: usize) -> Vec<f64> {
    let (n_fft, hop) = (2048usize, 512usize);
    let pad = n_fft / 2;
    let len = samples.len() as isize;
    let reflect = |i: isize| -> f64 {
        let mut j = i;
        while j < 0 || j >= len {
            if j < 0 {
                j = -j;
            }
            if j >= len {
                j = 2 * (len - 1) - j;
            }
        }
        samples[j as usize]
    };
    let window: Vec<f64> = (0..n_fft)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n_fft as f64).cos())
        .collect();

    let n_bins = n_fft / 2 + 1;
    let nyquist = rate as f64 / 2.0;
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| inv_mel(mel(nyquist) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let weights: Vec<Vec<f64>> = (0..n_mels)
        .map(|m| {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|bin| {
                    let f = bin as f64 * rate as f64 / n_fft as f64;
                    let rise = (f - lo) / (c - lo);
                    let fall = (hi - f) / (hi - c);
                    rise.min(fall).max(0.0) * 2.0 / (hi - lo)
                })
                .collect()
        })
        .collect();

    let n_frames = 1 + samples.len() / hop;
    let mut acc = vec![0.0; n_coeffs];
    for t in 0..n_frames {
        let frame: Vec<f64> = (0..n_fft)
            .map(|i| reflect((t * hop + i) as isize - pad as isize) * window[i])
            .collect();
        let power: Vec<f64> = naive_dft_bins(&frame, n_bins)
            .iter()
            .map(|c| c.norm_sqr())
            .collect();
        let log_mel: Vec<f64> = weights
            .iter()
            .map(|w| {
                let e: f64 = w.iter().zip(&power).map(|(a, b)| a * b).sum();
                10.0 * e.max(1e-10).log10()
            })
            .collect();
        for (a, c) in acc.iter_mut().zip(naive_dct(&log_mel)) {
            *a += c;
        }
    }
    acc.iter().map(|a| a / n_frames as f64).collect()
}

/// Central-difference check of every parameter tensor. Returns the
/// relative error `|a - n| / (|a| + |n|)` per tensor.
pub fn gradient_check(model: &MlpModel, x: &[f64], labels: &[usize], h: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let trace = model.forward_batch(x, Mode::Infer, &mut rng).unwrap();
    let grads = model.backward(&trace, labels).unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();

    let loss_at = |m: &MlpModel| {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        MlpModel::batch_loss(&m.forward_batch(x, Mode::Infer, &mut r).unwrap(), labels)
    };
    let mut probe = model.clone();
    let mut errors = Vec::new();
    for (ti, a) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for j in 0..a.len() {
            let orig = probe.params_mut()[ti][j];
            probe.params_mut()[ti][j] = orig + h;
            let up = loss_at(&probe);
            probe.params_mut()[ti][j] = orig - h;
            let down = loss_at(&probe);
            probe.params_mut()[ti][j] = orig;
            numeric[j] = (up - down) / (2.0 * h);
        }
        let diff: f64 = a.iter().zip(&numeric).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
        errors.push(if na + nn == 0.0 { 0.0 } else { diff / (na + nn) });
    }
    errors
}

/// Fraction of (faked, real) pairs ordered correctly, ties counting half.
pub fn pair_auc(scores: &[f64], labels: &[Label]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, li) in labels.iter().enumerate() {
        for (j, lj) in labels.iter().enumerate() {
            if *li == Label::Faked && *lj == Label::Real {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Two Gaussian clouds at `±sep` along `ones / sqrt(dim)`; faked on the
/// positive side.
pub fn gaussian_blobs(n: usize, dim: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<Label>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let u = 1.0 / (dim as f64).sqrt();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 { Label::Real } else { Label::Faked };
        let sign = if label == Label::Faked { 1.0 } else { -1.0 };
        x.push(
            (0..dim)
                .map(|_| sign * sep * u + normal.sample(&mut rng))
                .collect(),
        );
        y.push(label);
    }
    (x, y)
}

const CORPUS_RATES: [u32; 4] = [16000, 22050, 44100, 48000];

/// Harmonic tone with a little noise: the "real" class.
fn harmonic_clip(rng: &mut ChaCha8Rng, rate: u32, len: usize) -> Vec<f64> {
    let f0 = rng.random_range(100.0..300.0);
    let n_harm = rng.random_range(3..7);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let phases: Vec<f64> = (0..n_harm).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    (0..len)
        .map(|i| {
            let t = i as f64 / rate as f64;
            let tone: f64 = phases
                .iter()
                .enumerate()
                .map(|(h, ph)| {
                    let k = (h + 1) as f64;
                    (2.0 * PI * f0 * k * t + ph).sin() / k
                })
                .sum();
            0.3 * tone + noise.sample(rng)
        })
        .collect()
}

/// Low-passed noise gated into bursts: the "faked" class.
fn noise_burst_clip(rng: &mut ChaCha8Rng, rate: u32, len: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let cutoff: f64 = rng.random_range(1500.0..5000.0);
    let alpha = 1.0 - (-2.0 * PI * cutoff / rate as f64).exp();
    let burst = (rate as f64 * rng.random_range(0.08..0.2)) as usize;
    let mut y = 0.0;
    (0..len)
        .map(|i| {
            y += alpha * (normal.sample(rng) - y);
            let on = (i / burst).is_multiple_of(2);
            if on { 0.5 * y } else { 0.02 * y }
        })
        .collect()
}

/// Writes `n` convention-named WAV files (alternating real and faked)
/// with assorted sample rates and lengths of 1 to 2 seconds.
pub fn write_corpus(dir: &Path, n: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let label = if i % 2 == 0 { Label::Real } else { Label::Faked };
        let rate = CORPUS_RATES[rng.random_range(0..CORPUS_RATES.len())];
        let len = (rate as f64 * rng.random_range(1.0..2.0)) as usize;
        let samples = match label {
            Label::Real => harmonic_clip(&mut rng, rate, len),
            Label::Faked => noise_burst_clip(&mut rng, rate, len),
        };
        let suffix = if label == Label::Real { 'r' } else { 'f' };
        let path = dir.join(format!("{:04}{suffix}.wav", i + 1));
        std::fs::write(path, encode_wav_pcm16(&samples, rate)).unwrap();
    }
}
