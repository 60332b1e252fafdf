//! The 26-value clip descriptor: zero-crossing rate, RMS energy, spectral
//! centroid, bandwidth, roll-off, chroma and 20 MFCCs, each averaged over
//! frames.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::dsp::{self, DspError, MelFilterbank, Spectrogram, StftParams};

pub const N_FEATURES: usize = 26;
pub const N_MFCC: usize = 20;
pub const N_MELS: usize = 128;
pub const ROLLOFF_FRACTION: f64 = 0.85;

/// Bumped whenever [`FEATURE_NAMES`] changes.
pub const FEATURE_SCHEMA_VERSION: u32 = 1;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "zcr", "rmse", "centroid", "bandwidth", "rolloff", "chroma", "mfcc01", "mfcc02", "mfcc03",
    "mfcc04", "mfcc05", "mfcc06", "mfcc07", "mfcc08", "mfcc09", "mfcc10", "mfcc11", "mfcc12",
    "mfcc13", "mfcc14", "mfcc15", "mfcc16", "mfcc17", "mfcc18", "mfcc19", "mfcc20",
];

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("roll-off fraction must lie in (0, 1], got {0}")]
    RolloffFraction(f64),
}

/// One clip's features in [`FEATURE_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: [f64; N_FEATURES],
}

impl FeatureVector {
    pub fn new(values: [f64; N_FEATURES]) -> Self {
        Self { values }
    }

    pub fn schema_version(&self) -> u32 {
        FEATURE_SCHEMA_VERSION
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn zcr(&self) -> f64 {
        self.values[0]
    }
    pub fn rmse(&self) -> f64 {
        self.values[1]
    }
    pub fn centroid(&self) -> f64 {
        self.values[2]
    }
    pub fn bandwidth(&self) -> f64 {
        self.values[3]
    }
    pub fn rolloff(&self) -> f64 {
        self.values[4]
    }
    pub fn chroma(&self) -> f64 {
        self.values[5]
    }
    pub fn mfcc(&self) -> &[f64] {
        &self.values[6..]
    }
}

impl TryFrom<&[f64]> for FeatureVector {
    type Error = DspError;

    fn try_from(v: &[f64]) -> Result<Self, Self::Error> {
        let values: [f64; N_FEATURES] = v.try_into().map_err(|_| DspError::Dimension {
            expected: N_FEATURES,
            actual: v.len(),
        })?;
        Ok(Self { values })
    }
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Mean over frames of `sign changes / frame_length`; zero counts as
/// non-negative.
pub fn zero_crossing_rate(clip: &AudioClip, params: &StftParams) -> Result<f64, FeatureError> {
    let framed = dsp::frames(&clip.samples, params)?;
    Ok(mean(framed.iter().map(|frame| {
        let flips = frame
            .windows(2)
            .filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0))
            .count();
        flips as f64 / frame.len() as f64
    })))
}

/// Mean over frames of the per-frame root mean square amplitude.
pub fn rmse(clip: &AudioClip, params: &StftParams) -> Result<f64, FeatureError> {
    let framed = dsp::frames(&clip.samples, params)?;
    Ok(mean(framed.iter().map(|frame| {
        (frame.iter().map(|x| x * x).sum::<f64>() / frame.len() as f64).sqrt()
    })))
}

/// Per-frame magnitude-weighted centroid; `None` for a silent frame.
fn frame_centroid(power: &[f64], freqs: &[f64]) -> Option<f64> {
    let (num, den) = power
        .iter()
        .zip(freqs)
        .fold((0.0, 0.0), |(num, den), (&p, &f)| {
            let m = p.sqrt();
            (num + f * m, den + m)
        });
    (den > 0.0).then(|| num / den)
}

pub fn spectral_centroid(spec: &Spectrogram) -> f64 {
    mean(
        spec.power
            .iter()
            .map(|frame| frame_centroid(frame, &spec.bin_freqs).unwrap_or(0.0)),
    )
}

/// Mean over frames of the magnitude-weighted standard deviation of
/// frequency about the frame centroid.
pub fn spectral_bandwidth(spec: &Spectrogram) -> f64 {
    mean(spec.power.iter().map(|frame| {
        let Some(c) = frame_centroid(frame, &spec.bin_freqs) else {
            return 0.0;
        };
        let (num, den) = frame
            .iter()
            .zip(&spec.bin_freqs)
            .fold((0.0, 0.0), |(num, den), (&p, &f)| {
                let m = p.sqrt();
                (num + m * (f - c) * (f - c), den + m)
            });
        (num / den).sqrt()
    }))
}

/// Mean over frames of the lowest bin frequency at which the cumulative
/// magnitude reaches `fraction` of the frame total.
pub fn spectral_rolloff(spec: &Spectrogram, fraction: f64) -> Result<f64, FeatureError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(FeatureError::RolloffFraction(fraction));
    }
    Ok(mean(spec.power.iter().map(|frame| {
        let cumulative: Vec<f64> = frame
            .iter()
            .scan(0.0, |acc, &p| {
                *acc += p.sqrt();
                Some(*acc)
            })
            .collect();
        let total = *cumulative.last().unwrap_or(&0.0);
        if total <= 0.0 {
            return 0.0;
        }
        let threshold = fraction * total;
        let k = cumulative.partition_point(|&c| c < threshold);
        spec.bin_freqs[k.min(spec.bin_freqs.len() - 1)]
    })))
}

/// Pitch class (C = 0, A = 9) of a positive frequency, A4 = 440 Hz.
pub fn pitch_class(freq: f64) -> usize {
    let semitones = (12.0 * (freq / 440.0).log2()).round() as i64;
    (semitones + 9).rem_euclid(12) as usize
}

/// Per-frame 12-class chroma profiles normalized by their maximum.
pub fn chroma_frames(spec: &Spectrogram) -> Vec<[f64; 12]> {
    let classes: Vec<Option<usize>> = spec
        .bin_freqs
        .iter()
        .map(|&f| (f > 0.0).then(|| pitch_class(f)))
        .collect();
    spec.power
        .iter()
        .map(|frame| {
            let mut profile = [0.0; 12];
            for (&p, class) in frame.iter().zip(&classes) {
                if let Some(c) = class {
                    profile[*c] += p;
                }
            }
            let peak = profile.iter().copied().fold(0.0, f64::max);
            if peak > 0.0 {
                profile.iter_mut().for_each(|v| *v /= peak);
            }
            profile
        })
        .collect()
}

/// Chroma collapsed to one scalar: the mean of every normalized class
/// value over every frame.
pub fn chroma_mean(spec: &Spectrogram) -> f64 {
    mean(chroma_frames(spec).iter().flat_map(|p| p.iter().copied()))
}

/// Frame-averaged MFCCs: filterbank energies, dB, orthonormal DCT-II,
/// first `n_coeffs` kept.
pub fn mfcc(
    spec: &Spectrogram,
    fb: &MelFilterbank,
    n_coeffs: usize,
) -> Result<Vec<f64>, FeatureError> {
    if fb.n_bins() != spec.n_bins() {
        return Err(DspError::Dimension {
            expected: spec.n_bins(),
            actual: fb.n_bins(),
        }
        .into());
    }
    let dct = dsp::Dct2::new(fb.n_mels());
    let keep = n_coeffs.min(fb.n_mels());
    let mut acc = vec![0.0; keep];
    for frame in &spec.power {
        let log_mel: Vec<f64> = fb.apply(frame)?.into_iter().map(dsp::power_to_db).collect();
        for (a, c) in acc.iter_mut().zip(dct.transform_prefix(&log_mel, keep)) {
            *a += c;
        }
    }
    let frames = spec.n_frames().max(1) as f64;
    Ok(acc.into_iter().map(|a| a / frames).collect())
}

/// Holds the STFT settings and the mel filterbank for one sample rate so
/// batch extraction does not rebuild them per clip.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    params: StftParams,
    sample_rate: u32,
    filterbank: MelFilterbank,
}

impl FeatureExtractor {
    pub fn new(sample_rate: u32) -> Result<Self, FeatureError> {
        Self::with_params(sample_rate, StftParams::default())
    }

    pub fn with_params(sample_rate: u32, params: StftParams) -> Result<Self, FeatureError> {
        params.validate()?;
        let filterbank =
            dsp::mel_filterbank(N_MELS, params.frame_length / 2 + 1, sample_rate, 0.0, None)?;
        Ok(Self {
            params,
            sample_rate,
            filterbank,
        })
    }

    pub fn params(&self) -> &StftParams {
        &self.params
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureVector, FeatureError> {
        if clip.sample_rate != self.sample_rate {
            return Err(DspError::Parameter(format!(
                "extractor built for {} Hz, clip is {} Hz",
                self.sample_rate, clip.sample_rate
            ))
            .into());
        }
        let spec = dsp::power_spectrogram(clip, &self.params)?;
        let mut values = [0.0; N_FEATURES];
        values[0] = zero_crossing_rate(clip, &self.params)?;
        values[1] = rmse(clip, &self.params)?;
        values[2] = spectral_centroid(&spec);
        values[3] = spectral_bandwidth(&spec);
        values[4] = spectral_rolloff(&spec, ROLLOFF_FRACTION)?;
        values[5] = chroma_mean(&spec);
        values[6..].copy_from_slice(&mfcc(&spec, &self.filterbank, N_MFCC)?);
        Ok(FeatureVector { values })
    }
}

/// Features of one clip with the default STFT settings.
pub fn extract_features(clip: &AudioClip) -> Result<FeatureVector, FeatureError> {
    FeatureExtractor::new(clip.sample_rate)?.extract(clip)
}
