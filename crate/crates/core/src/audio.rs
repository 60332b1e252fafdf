//! WAV ingestion: RIFF/WAVE decoding to normalized mono, band-limited
//! resampling and the duration cap applied to every clip.

use std::f64::consts::PI;

use thiserror::Error;

/// Rate every clip is resampled to before feature extraction.
pub const ANALYSIS_RATE: u32 = 22050;

/// Longest clip, in seconds, the pipeline looks at.
pub const MAX_SECONDS: f64 = 20.0;

/// Kaiser window shape parameter of the resampling kernel.
pub const KAISER_BETA: f64 = 8.6;

/// Taps per output sample of the resampling kernel.
pub const RESAMPLE_TAPS: usize = 64;

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed WAV container: {0}")]
    Format(String),
    #[error("unsupported WAV encoding: {0}")]
    Unsupported(String),
    #[error("truncated WAV data: {0}")]
    Truncated(String),
}

/// Mono audio with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_path: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        Self {
            samples,
            sample_rate,
            source_path: String::new(),
        }
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source_path = source.into();
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SampleFormat {
    Pcm16,
    Float32,
}

#[derive(Debug, Clone, Copy)]
struct FmtChunk {
    format: SampleFormat,
    channels: u16,
    sample_rate: u32,
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk, AudioError> {
    if body.len() < 16 {
        return Err(AudioError::Format(format!(
            "fmt chunk is {} bytes, need at least 16",
            body.len()
        )));
    }
    let mut tag = le_u16(body, 0);
    let channels = le_u16(body, 2);
    let sample_rate = le_u32(body, 4);
    let bits = le_u16(body, 14);

    if tag == FORMAT_EXTENSIBLE {
        // The sub-format GUID starts with the plain format tag.
        if body.len() < 26 {
            return Err(AudioError::Format("truncated WAVE_FORMAT_EXTENSIBLE".into()));
        }
        tag = le_u16(body, 24);
    }

    let format = match (tag, bits) {
        (FORMAT_PCM, 16) => SampleFormat::Pcm16,
        (FORMAT_IEEE_FLOAT, 32) => SampleFormat::Float32,
        (FORMAT_PCM, b) | (FORMAT_IEEE_FLOAT, b) => {
            return Err(AudioError::Unsupported(format!(
                "format tag {tag} with {b} bits per sample"
            )))
        }
        (t, _) => return Err(AudioError::Unsupported(format!("format tag {t}"))),
    };
    if !(1..=2).contains(&channels) {
        return Err(AudioError::Unsupported(format!("{channels} channels")));
    }
    if sample_rate == 0 {
        return Err(AudioError::Format("sample rate is zero".into()));
    }
    Ok(FmtChunk {
        format,
        channels,
        sample_rate,
    })
}

/// Decodes a RIFF/WAVE byte buffer (PCM16 or float32, mono or stereo)
/// into a mono clip. Stereo is averaged per sample; PCM is scaled by
/// 1/32768.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    if bytes.len() < 12 {
        return Err(AudioError::Format(format!(
            "{} bytes is too short for a RIFF header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(AudioError::Format(format!(
            "expected RIFF magic, found {:?}",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(AudioError::Format("RIFF form type is not WAVE".into()));
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        match id {
            b"fmt " => {
                let end = body_start
                    .checked_add(size)
                    .filter(|&e| e <= bytes.len())
                    .ok_or_else(|| AudioError::Format("fmt chunk overruns file".into()))?;
                fmt = Some(parse_fmt(&bytes[body_start..end])?);
            }
            b"data" => {
                let fmt = fmt.ok_or_else(|| {
                    AudioError::Format("data chunk appears before fmt chunk".into())
                })?;
                let available = bytes.len() - body_start;
                if size > available {
                    return Err(AudioError::Truncated(format!(
                        "data chunk declares {size} bytes, only {available} present"
                    )));
                }
                return decode_samples(&bytes[body_start..body_start + size], fmt);
            }
            _ => {}
        }
        // Chunks are word aligned.
        pos = body_start.saturating_add(size).saturating_add(size & 1);
    }

    match fmt {
        None => Err(AudioError::Format("no fmt chunk".into())),
        Some(_) => Err(AudioError::Format("no data chunk".into())),
    }
}

fn decode_samples(data: &[u8], fmt: FmtChunk) -> Result<AudioClip, AudioError> {
    let width = match fmt.format {
        SampleFormat::Pcm16 => 2,
        SampleFormat::Float32 => 4,
    };
    let frame_bytes = width * fmt.channels as usize;
    if !data.len().is_multiple_of(frame_bytes) {
        return Err(AudioError::Truncated(format!(
            "data length {} is not a multiple of the {frame_bytes}-byte frame",
            data.len()
        )));
    }

    let mut raw = Vec::with_capacity(data.len() / width);
    match fmt.format {
        SampleFormat::Pcm16 => {
            for c in data.chunks_exact(2) {
                raw.push(i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0);
            }
        }
        SampleFormat::Float32 => {
            for c in data.chunks_exact(4) {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
                if !v.is_finite() {
                    return Err(AudioError::Format("non-finite float sample".into()));
                }
                raw.push(v.clamp(-1.0, 1.0));
            }
        }
    }

    let samples = match fmt.channels {
        1 => raw,
        _ => raw
            .chunks_exact(fmt.channels as usize)
            .map(|frame| frame.iter().sum::<f64>() / frame.len() as f64)
            .collect(),
    };
    Ok(AudioClip::new(samples, fmt.sample_rate))
}

/// Encodes mono samples as a 16-bit PCM WAV. Values are scaled by 32768,
/// rounded and saturated, so `decode_wav` output re-encodes exactly.
pub fn encode_wav_pcm16(samples: &[f64], sample_rate: u32) -> Vec<u8> {
    let data_len = samples.len() * 2;
    let mut out = wav_header(FORMAT_PCM, 1, sample_rate, 16, data_len);
    for &s in samples {
        let v = (s * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Encodes interleaved float samples (`channels` per frame) as a 32-bit
/// IEEE float WAV.
pub fn encode_wav_f32(interleaved: &[f32], channels: u16, sample_rate: u32) -> Vec<u8> {
    let data_len = interleaved.len() * 4;
    let mut out = wav_header(FORMAT_IEEE_FLOAT, channels, sample_rate, 32, data_len);
    for &s in interleaved {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

/// Encodes interleaved PCM16 values as a WAV with `channels` channels.
pub fn encode_wav_i16(interleaved: &[i16], channels: u16, sample_rate: u32) -> Vec<u8> {
    let data_len = interleaved.len() * 2;
    let mut out = wav_header(FORMAT_PCM, channels, sample_rate, 16, data_len);
    for &s in interleaved {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

fn wav_header(tag: u16, channels: u16, sample_rate: u32, bits: u16, data_len: usize) -> Vec<u8> {
    let block_align = channels * bits / 8;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    out
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Resamples with a Kaiser-windowed sinc kernel (beta 8.6, 64 taps).
///
/// When downsampling the sinc cutoff drops to the target Nyquist. Each
/// output's tap weights are renormalized to unit sum so DC passes exactly.
/// Output length is `floor(len * target_rate / sample_rate)`.
pub fn resample(clip: &AudioClip, target_rate: u32) -> AudioClip {
    assert!(target_rate > 0, "target rate must be positive");
    if target_rate == clip.sample_rate {
        return clip.clone();
    }

    let src = clip.sample_rate as u64;
    let dst = target_rate as u64;
    let cutoff = (dst as f64 / src as f64).min(1.0);
    let out_len = (clip.samples.len() as u64 * dst / src) as usize;

    // Output n sits at input position n*src/dst = base + phase/phases, so
    // only `phases` distinct kernels exist.
    let g = gcd(src, dst);
    let phases = (dst / g) as usize;
    let half = (RESAMPLE_TAPS / 2) as isize;
    let i0_beta = bessel_i0(KAISER_BETA);
    let mut table: Vec<Option<Vec<f64>>> = vec![None; phases];
    let kernel = |phase: usize| -> Vec<f64> {
        let frac = phase as f64 / phases as f64;
        let mut w: Vec<f64> = ((-half + 1)..=half)
            .map(|k| {
                let offset = frac - k as f64;
                let r = offset / half as f64;
                if r.abs() >= 1.0 {
                    return 0.0;
                }
                let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
                cutoff * sinc(cutoff * offset) * window
            })
            .collect();
        let norm: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= norm);
        w
    };

    let input = &clip.samples;
    let n_in = input.len() as isize;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len as u64 {
        let num = n * src;
        let base = (num / dst) as isize;
        let phase = ((num % dst) / g) as usize;
        let weights = table[phase].get_or_insert_with(|| kernel(phase));
        let first = base - half + 1;
        let acc: f64 = if first >= 0 && first + RESAMPLE_TAPS as isize <= n_in {
            let s = &input[first as usize..first as usize + RESAMPLE_TAPS];
            s.iter().zip(weights.iter()).map(|(x, w)| x * w).sum()
        } else {
            weights
                .iter()
                .enumerate()
                .filter_map(|(i, w)| {
                    let j = first + i as isize;
                    (j >= 0 && j < n_in).then(|| w * input[j as usize])
                })
                .sum()
        };
        out.push(acc.clamp(-1.0, 1.0));
    }

    AudioClip {
        samples: out,
        sample_rate: target_rate,
        source_path: clip.source_path.clone(),
    }
}

/// Keeps at most the first `max_seconds` of audio.
pub fn clip_duration(clip: &AudioClip, max_seconds: f64) -> AudioClip {
    assert!(max_seconds > 0.0, "max_seconds must be positive");
    let cap = (max_seconds * clip.sample_rate as f64).floor() as usize;
    let keep = clip.samples.len().min(cap);
    AudioClip {
        samples: clip.samples[..keep].to_vec(),
        sample_rate: clip.sample_rate,
        source_path: clip.source_path.clone(),
    }
}

/// Decode, resample to [`ANALYSIS_RATE`] and cap at `max_seconds`.
pub fn load_for_analysis(bytes: &[u8], max_seconds: f64) -> Result<AudioClip, AudioError> {
    let clip = decode_wav(bytes)?;
    Ok(clip_duration(&resample(&clip, ANALYSIS_RATE), max_seconds))
}
