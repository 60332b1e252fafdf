//! Signal kernels shared by the spectral features: framing, Hann window,
//! radix-2 FFT, power spectrogram, mel filterbank, dB scaling and DCT-II.

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::audio::AudioClip;

/// Floor applied before taking logarithms of power values.
pub const POWER_FLOOR: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("{what} must be non-negative, got {value}")]
    Domain { what: &'static str, value: f64 },
    #[error("FFT length {0} is not a power of two")]
    Size(usize),
    #[error("empty input signal")]
    EmptyInput,
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
}

/// Hertz to mel: `2595 * log10(1 + f / 700)`.
pub fn hz_to_mel(hz: f64) -> Result<f64, DspError> {
    if hz.is_nan() || hz < 0.0 {
        return Err(DspError::Domain {
            what: "frequency",
            value: hz,
        });
    }
    Ok(2595.0 * (1.0 + hz / 700.0).log10())
}

/// Mel to hertz: `700 * (10^(m / 2595) - 1)`.
pub fn mel_to_hz(mel: f64) -> Result<f64, DspError> {
    if mel.is_nan() || mel < 0.0 {
        return Err(DspError::Domain {
            what: "mel value",
            value: mel,
        });
    }
    Ok(700.0 * (10f64.powf(mel / 2595.0) - 1.0))
}

/// Precomputed twiddles and bit-reversal permutation for one FFT size.
#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl FftPlan {
    pub fn new(n: usize) -> Result<Self, DspError> {
        if n == 0 || !n.is_power_of_two() {
            return Err(DspError::Size(n));
        }
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        Ok(Self {
            n,
            twiddles,
            bitrev,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place forward transform of a length-`n` buffer.
    pub fn process(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.n, "buffer length does not match plan");
        for i in 0..self.n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= self.n {
            let half = size / 2;
            let stride = self.n / size;
            for start in (0..self.n).step_by(size) {
                for k in 0..half {
                    let w = self.twiddles[k * stride];
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            size *= 2;
        }
    }

    /// Transform of a real signal; returns bins `0..=n/2`.
    pub fn process_real(&self, x: &[f64]) -> Result<Vec<Complex64>, DspError> {
        if x.len() != self.n {
            return Err(DspError::Dimension {
                expected: self.n,
                actual: x.len(),
            });
        }
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.process(&mut buf);
        buf.truncate(self.n / 2 + 1);
        Ok(buf)
    }
}

/// Forward DFT of a real sequence whose length is a power of two.
pub fn fft_real(x: &[f64]) -> Result<Vec<Complex64>, DspError> {
    FftPlan::new(x.len())?.process_real(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftParams {
    pub frame_length: usize,
    pub hop_length: usize,
    /// Reflect-pad by `frame_length / 2` so frame `t` centers on sample `t * hop`.
    pub centered: bool,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            frame_length: 2048,
            hop_length: 512,
            centered: true,
        }
    }
}

impl StftParams {
    pub fn validate(&self) -> Result<(), DspError> {
        if self.frame_length == 0 || !self.frame_length.is_power_of_two() {
            return Err(DspError::Size(self.frame_length));
        }
        if self.hop_length == 0 || self.hop_length > self.frame_length {
            return Err(DspError::Parameter(format!(
                "hop length {} must be in 1..={}",
                self.hop_length, self.frame_length
            )));
        }
        Ok(())
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if self.centered {
            1 + len / self.hop_length
        } else if len <= self.frame_length {
            1
        } else {
            1 + (len - self.frame_length) / self.hop_length
        }
    }
}

/// Reflect index `i` into `0..n` (mirror without repeating the edge sample),
/// repeating the reflection for indices far outside the signal.
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Splits a signal into frames according to `params`. Centered framing
/// reflect-pads; uncentered framing zero-pads a signal shorter than one
/// frame.
pub fn frames(samples: &[f64], params: &StftParams) -> Result<Vec<Vec<f64>>, DspError> {
    params.validate()?;
    if samples.is_empty() {
        return Err(DspError::EmptyInput);
    }
    let n = samples.len();
    let len = params.frame_length;
    let count = params.frame_count(n);
    let out = (0..count)
        .map(|t| {
            if params.centered {
                let start = (t * params.hop_length) as isize - (len / 2) as isize;
                (0..len)
                    .map(|k| samples[reflect_index(start + k as isize, n)])
                    .collect()
            } else {
                let start = t * params.hop_length;
                (0..len)
                    .map(|k| samples.get(start + k).copied().unwrap_or(0.0))
                    .collect()
            }
        })
        .collect();
    Ok(out)
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Power spectrogram, stored frame-major: `power[frame][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub power: Vec<Vec<f64>>,
    pub bin_freqs: Vec<f64>,
    pub params: StftParams,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn n_bins(&self) -> usize {
        self.bin_freqs.len()
    }

    pub fn n_frames(&self) -> usize {
        self.power.len()
    }

    /// Builds a spectrogram directly from power frames (used by tests and
    /// synthetic inputs).
    pub fn from_power(
        power: Vec<Vec<f64>>,
        params: StftParams,
        sample_rate: u32,
    ) -> Result<Self, DspError> {
        params.validate()?;
        let n_bins = params.frame_length / 2 + 1;
        for frame in &power {
            if frame.len() != n_bins {
                return Err(DspError::Dimension {
                    expected: n_bins,
                    actual: frame.len(),
                });
            }
        }
        Ok(Self {
            power,
            bin_freqs: bin_frequencies(params.frame_length, sample_rate),
            params,
            sample_rate,
        })
    }
}

/// Center frequency of every rfft bin.
pub fn bin_frequencies(frame_length: usize, sample_rate: u32) -> Vec<f64> {
    (0..=frame_length / 2)
        .map(|k| k as f64 * sample_rate as f64 / frame_length as f64)
        .collect()
}

/// Hann-windowed STFT power `|X|^2` of a clip.
pub fn power_spectrogram(clip: &AudioClip, params: &StftParams) -> Result<Spectrogram, DspError> {
    let framed = frames(&clip.samples, params)?;
    let plan = FftPlan::new(params.frame_length)?;
    let window = hann_window(params.frame_length);
    let n_bins = params.frame_length / 2 + 1;

    let mut buf = vec![Complex64::new(0.0, 0.0); params.frame_length];
    let power = framed
        .iter()
        .map(|frame| {
            for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&window) {
                *b = Complex64::new(x * w, 0.0);
            }
            plan.process(&mut buf);
            buf[..n_bins].iter().map(|c| c.norm_sqr()).collect()
        })
        .collect();

    Ok(Spectrogram {
        power,
        bin_freqs: bin_frequencies(params.frame_length, clip.sample_rate),
        params: *params,
        sample_rate: clip.sample_rate,
    })
}

/// Triangular filters with mel-uniform peaks, `weights[mel][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub weights: Vec<Vec<f64>>,
    /// The `n_mels + 2` filter edge frequencies in Hz.
    pub hz_edges: Vec<f64>,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.weights.len()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// Mel-band energies of one power frame.
    pub fn apply(&self, power: &[f64]) -> Result<Vec<f64>, DspError> {
        if power.len() != self.n_bins() {
            return Err(DspError::Dimension {
                expected: self.n_bins(),
                actual: power.len(),
            });
        }
        Ok(self
            .weights
            .iter()
            .map(|row| row.iter().zip(power).map(|(w, p)| w * p).sum())
            .collect())
    }
}

/// Builds `n_mels` triangular filters over `n_bins` rfft bins. Each row is
/// scaled by `2 / (upper_edge - lower_edge)` so every filter has unit area
/// on the Hz axis. `f_max = None` means Nyquist.
pub fn mel_filterbank(
    n_mels: usize,
    n_bins: usize,
    sample_rate: u32,
    f_min: f64,
    f_max: Option<f64>,
) -> Result<MelFilterbank, DspError> {
    let nyquist = sample_rate as f64 / 2.0;
    let f_max = f_max.unwrap_or(nyquist);
    if n_mels == 0 {
        return Err(DspError::Parameter("n_mels must be at least 1".into()));
    }
    if n_bins < 2 {
        return Err(DspError::Parameter("need at least 2 frequency bins".into()));
    }
    if !(f_min >= 0.0 && f_min < f_max && f_max <= nyquist) {
        return Err(DspError::Parameter(format!(
            "need 0 <= f_min < f_max <= {nyquist}, got f_min={f_min}, f_max={f_max}"
        )));
    }

    let frame_length = 2 * (n_bins - 1);
    let freqs = bin_frequencies(frame_length, sample_rate);
    let mel_lo = hz_to_mel(f_min)?;
    let mel_hi = hz_to_mel(f_max)?;
    let step = (mel_hi - mel_lo) / (n_mels + 1) as f64;
    let hz_edges = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + step * i as f64))
        .collect::<Result<Vec<_>, _>>()?;

    let weights = (0..n_mels)
        .map(|i| {
            let (lo, mid, hi) = (hz_edges[i], hz_edges[i + 1], hz_edges[i + 2]);
            let scale = 2.0 / (hi - lo);
            freqs
                .iter()
                .map(|&f| {
                    let rising = (f - lo) / (mid - lo);
                    let falling = (hi - f) / (hi - mid);
                    rising.min(falling).max(0.0) * scale
                })
                .collect()
        })
        .collect();

    Ok(MelFilterbank { weights, hz_edges })
}

/// `10 * log10(max(p, 1e-10))`.
pub fn power_to_db(p: f64) -> f64 {
    10.0 * p.max(POWER_FLOOR).log10()
}

/// Orthonormal DCT-II basis for one length, cosines looked up from a
/// quarter-wave table indexed by `k * (2n + 1) mod 4N`.
#[derive(Debug, Clone)]
pub struct Dct2 {
    n: usize,
    basis: Vec<f64>,
}

impl Dct2 {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "DCT length must be at least 1");
        let four_n = 4 * n;
        let cos_table: Vec<f64> = (0..four_n)
            .map(|j| (PI * j as f64 / (2 * n) as f64).cos())
            .collect();
        let s0 = (1.0 / n as f64).sqrt();
        let sk = (2.0 / n as f64).sqrt();
        let mut basis = Vec::with_capacity(n * n);
        for k in 0..n {
            let scale = if k == 0 { s0 } else { sk };
            for i in 0..n {
                basis.push(scale * cos_table[(k * (2 * i + 1)) % four_n]);
            }
        }
        Self { n, basis }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// First `keep` coefficients of the transform of `v`.
    pub fn transform_prefix(&self, v: &[f64], keep: usize) -> Vec<f64> {
        assert_eq!(v.len(), self.n, "DCT input length does not match plan");
        self.basis
            .chunks_exact(self.n)
            .take(keep)
            .map(|row| row.iter().zip(v).map(|(b, x)| b * x).sum())
            .collect()
    }

    pub fn transform(&self, v: &[f64]) -> Vec<f64> {
        self.transform_prefix(v, self.n)
    }
}

/// Orthonormal DCT-II of `v`.
pub fn dct2_ortho(v: &[f64]) -> Vec<f64> {
    Dct2::new(v.len()).transform(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_reference_points() {
        assert_eq!(hz_to_mel(0.0).unwrap(), 0.0);
        assert!((hz_to_mel(700.0).unwrap() - 781.17).abs() < 0.01);
        assert_eq!(mel_to_hz(0.0).unwrap(), 0.0);
        assert!((mel_to_hz(781.17).unwrap() - 700.0).abs() < 0.02);
        for m in [100.0, 1000.0, 3000.0] {
            let back = hz_to_mel(mel_to_hz(m).unwrap()).unwrap();
            assert!((back - m).abs() < 1e-9);
        }
        assert!(mel_to_hz(10.0).unwrap() < mel_to_hz(10.5).unwrap());
    }

    #[test]
    fn mel_domain_errors() {
        assert!(matches!(hz_to_mel(-1.0), Err(DspError::Domain { .. })));
        assert!(matches!(mel_to_hz(-0.5), Err(DspError::Domain { .. })));
        assert!(hz_to_mel(f64::NAN).is_err());
    }

    #[test]
    fn fft_impulse_and_dc() {
        let bins = fft_real(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(bins.len(), 3);
        for b in bins {
            assert!((b - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
        let bins = fft_real(&[1.0; 4]).unwrap();
        assert!((bins[0] - Complex64::new(4.0, 0.0)).norm() < 1e-15);
        assert!(bins[1].norm() < 1e-15 && bins[2].norm() < 1e-15);
    }

    #[test]
    fn fft_rejects_bad_sizes() {
        assert_eq!(fft_real(&[1.0, 2.0, 3.0]), Err(DspError::Size(3)));
        assert_eq!(fft_real(&[]), Err(DspError::Size(0)));
        assert_eq!(fft_real(&[2.5]).unwrap(), vec![Complex64::new(2.5, 0.0)]);
    }

    #[test]
    fn reflect_padding_matches_numpy() {
        // np.pad([0, 1, 2], 4, mode="reflect")
        let got: Vec<usize> = (-4..7).map(|i| reflect_index(i, 3)).collect();
        assert_eq!(got, vec![0, 1, 2, 1, 0, 1, 2, 1, 0, 1, 2]);
        assert_eq!(reflect_index(-3, 1), 0);
    }

    #[test]
    fn frame_count_centered() {
        let p = StftParams::default();
        for len in [1usize, 511, 512, 513, 22050] {
            let f = frames(&vec![0.1; len], &p).unwrap();
            assert_eq!(f.len(), 1 + len / 512);
            assert!(f.iter().all(|fr| fr.len() == 2048));
        }
    }

    #[test]
    fn pure_tone_peaks_at_expected_bin() {
        let rate = 22050;
        let samples = (0..rate)
            .map(|i| (2.0 * PI * 1000.0 * i as f64 / rate as f64).sin())
            .collect();
        let spec = power_spectrogram(&AudioClip::new(samples, rate), &StftParams::default()).unwrap();
        assert_eq!(spec.n_bins(), 1025);
        assert_eq!(*spec.bin_freqs.last().unwrap(), 11025.0);
        let argmax: Vec<usize> = spec
            .power
            .iter()
            .map(|frame| {
                frame
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0
            })
            .collect();
        assert_eq!(argmax.len(), 44);
        // Edge frames see reflected signal; numpy gives 94 and 92 there.
        assert_eq!(argmax[0], 94);
        assert_eq!(argmax[43], 92);
        assert!(argmax[1..43].iter().all(|&b| b == 93));
    }

    #[test]
    fn silent_clip_has_zero_power() {
        let spec =
            power_spectrogram(&AudioClip::new(vec![0.0; 5000], 22050), &StftParams::default())
                .unwrap();
        assert!(spec.power.iter().flatten().all(|&p| p == 0.0));
    }

    #[test]
    fn empty_clip_is_rejected() {
        let err = power_spectrogram(&AudioClip::new(vec![], 22050), &StftParams::default());
        assert_eq!(err, Err(DspError::EmptyInput));
    }

    #[test]
    fn filterbank_shape_and_positivity() {
        let fb = mel_filterbank(128, 1025, 22050, 0.0, None).unwrap();
        assert_eq!(fb.n_mels(), 128);
        assert_eq!(fb.n_bins(), 1025);
        let flat = vec![1.0; 1025];
        for (row, energy) in fb.weights.iter().zip(fb.apply(&flat).unwrap()) {
            assert!(energy > 0.0);
            assert!(row.iter().all(|&w| w >= 0.0));
            // single contiguous support
            let nz: Vec<usize> = (0..row.len()).filter(|&k| row[k] > 0.0).collect();
            assert_eq!(nz.last().unwrap() - nz[0] + 1, nz.len());
        }
    }

    #[test]
    fn filterbank_peaks_are_mel_uniform() {
        let fb = mel_filterbank(40, 513, 16000, 50.0, Some(7000.0)).unwrap();
        let peaks: Vec<f64> = fb.hz_edges[1..=40].iter().map(|&f| hz_to_mel(f).unwrap()).collect();
        let step = peaks[1] - peaks[0];
        for w in peaks.windows(2) {
            assert!(w[1] > w[0]);
            assert!((w[1] - w[0] - step).abs() < 1e-6);
        }
    }

    #[test]
    fn filterbank_parameter_errors() {
        assert!(mel_filterbank(0, 1025, 22050, 0.0, None).is_err());
        assert!(mel_filterbank(10, 1025, 22050, 5000.0, Some(4000.0)).is_err());
        assert!(mel_filterbank(10, 1025, 22050, 0.0, Some(20000.0)).is_err());
    }

    #[test]
    fn filterbank_dimension_mismatch() {
        let fb = mel_filterbank(8, 65, 8000, 0.0, None).unwrap();
        assert!(matches!(fb.apply(&[1.0; 64]), Err(DspError::Dimension { .. })));
    }

    #[test]
    fn db_conversion() {
        assert_eq!(power_to_db(1.0), 0.0);
        assert_eq!(power_to_db(0.0), -100.0);
        assert!((power_to_db(100.0) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn dct_of_constant() {
        let c = dct2_ortho(&[1.0; 4]);
        assert!((c[0] - 2.0).abs() < 1e-15);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-15));
        assert_eq!(dct2_ortho(&[3.0]), vec![3.0]);
    }
}
