//! Mono audio clips: WAV I/O, synthetic test signals, and white-noise injection.
//!
//! Samples are `f64` in the nominal range [-1, 1]. PCM16 files are normalized
//! by 32768 on read and scaled by 32767 on write, so amplitude parameters such
//! as a perturbation budget of 0.002 mean the same thing here as on disk.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from loading, saving, or generating audio.
#[derive(Debug, Error)]
pub enum AudioError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: not a RIFF/WAVE file")]
    NotRiffWave { path: PathBuf },
    #[error("{path}: malformed WAV: {detail}")]
    Malformed { path: PathBuf, detail: String },
    #[error("{path}: unsupported encoding (format tag {format}, only PCM = 1 is supported)")]
    NonPcm { path: PathBuf, format: u16 },
    #[error("{path}: unsupported bit depth {bits} (only 16-bit PCM is supported)")]
    BitDepth { path: PathBuf, bits: u16 },
    #[error("{path}: data chunk is empty")]
    EmptyData { path: PathBuf },
    #[error("sample {index} = {value} is outside [-1, 1]; clamp before saving")]
    SampleOutOfRange { index: usize, value: f64 },
    #[error("sample {index} is not finite")]
    NonFiniteSample { index: usize },
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error("duration {duration_s} s is too short for {n_bursts} bursts at {sample_rate} Hz")]
    DurationTooShort {
        duration_s: f64,
        n_bursts: usize,
        sample_rate: u32,
    },
    #[error("noise sigma must be finite and >= 0, got {0}")]
    InvalidSigma(f64),
}

/// A mono sampled waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    /// Amplitudes, nominally in [-1, 1].
    pub samples: Vec<f64>,
    /// Sampling frequency in Hz.
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Recipe for a speech-like test signal: harmonic bursts separated by
/// near-silent gaps over a low noise floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Total clip duration in seconds.
    pub duration_s: f64,
    /// Number of harmonic bursts.
    pub n_bursts: usize,
    /// Component frequencies of each burst, in Hz. Keep these well below the
    /// Nyquist rate; the defaults stay under 4 kHz so the high band carries
    /// only floor noise.
    pub burst_freqs: Vec<f64>,
    /// Peak amplitude of a burst (the harmonic mix is normalized first).
    pub burst_amplitude: f64,
    /// Fraction of the duration that is near-silence.
    pub gap_fraction: f64,
    /// Standard deviation of the background noise floor.
    pub floor_noise_sigma: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            duration_s: 4.0,
            n_bursts: 4,
            burst_freqs: vec![440.0, 1320.0, 2640.0],
            burst_amplitude: 0.5,
            gap_fraction: 0.4,
            floor_noise_sigma: 1e-5,
        }
    }
}

impl SynthSpec {
    fn validate(&self, sample_rate: u32) -> Result<(), AudioError> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(AudioError::InvalidSpec(format!(
                "duration_s must be positive, got {}",
                self.duration_s
            )));
        }
        if !(0.0..1.0).contains(&self.gap_fraction) {
            return Err(AudioError::InvalidSpec(format!(
                "gap_fraction must be in [0, 1), got {}",
                self.gap_fraction
            )));
        }
        let nyquist = sample_rate as f64 / 2.0;
        if let Some(f) = self.burst_freqs.iter().find(|f| **f >= nyquist || **f < 0.0) {
            return Err(AudioError::InvalidSpec(format!(
                "burst frequency {f} Hz is outside [0, {nyquist}) Hz"
            )));
        }
        if !(self.floor_noise_sigma.is_finite() && self.floor_noise_sigma >= 0.0) {
            return Err(AudioError::InvalidSpec(format!(
                "floor_noise_sigma must be >= 0, got {}",
                self.floor_noise_sigma
            )));
        }
        if !(self.burst_amplitude.is_finite() && (0.0..=1.0).contains(&self.burst_amplitude)) {
            return Err(AudioError::InvalidSpec(format!(
                "burst_amplitude must be in [0, 1], got {}",
                self.burst_amplitude
            )));
        }
        if self.n_bursts > 0 && self.burst_freqs.is_empty() && self.burst_amplitude > 0.0 {
            return Err(AudioError::InvalidSpec(
                "bursts requested but burst_freqs is empty".into(),
            ));
        }
        Ok(())
    }
}

fn read_u16_le(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn read_u32_le(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

/// Load a RIFF/WAVE file containing 16-bit PCM.
///
/// Multi-channel files are averaged down to mono. Integer samples are mapped
/// to [-1, 1) by dividing by 32768.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|source| AudioError::Open {
        path: path.to_owned(),
        source,
    })?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|source| AudioError::Open {
            path: path.to_owned(),
            source,
        })?;

    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::NotRiffWave {
            path: path.to_owned(),
        });
    }

    let malformed = |detail: &str| AudioError::Malformed {
        path: path.to_owned(),
        detail: detail.to_owned(),
    };

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    let mut offset = 12;
    while offset + 8 <= bytes.len() {
        let id = &bytes[offset..offset + 4];
        let size = read_u32_le(&bytes[offset + 4..offset + 8]) as usize;
        let body_start = offset + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|end| *end <= bytes.len())
            .ok_or_else(|| malformed("chunk size exceeds file length"))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(malformed("fmt chunk shorter than 16 bytes"));
                }
                fmt = Some((
                    read_u16_le(&body[0..2]),
                    read_u16_le(&body[2..4]),
                    read_u32_le(&body[4..8]),
                    read_u16_le(&body[14..16]),
                ));
            }
            b"data" => {
                data = Some(body);
            }
            _ => {}
        }
        // chunks are word-aligned
        offset = body_end + (size & 1);
    }

    let (format, channels, sample_rate, bits) = fmt.ok_or_else(|| malformed("missing fmt chunk"))?;
    if format != 1 {
        return Err(AudioError::NonPcm {
            path: path.to_owned(),
            format,
        });
    }
    if bits != 16 {
        return Err(AudioError::BitDepth {
            path: path.to_owned(),
            bits,
        });
    }
    if channels == 0 {
        return Err(malformed("zero channels"));
    }
    if sample_rate == 0 {
        return Err(malformed("zero sample rate"));
    }
    let data = data.ok_or_else(|| malformed("missing data chunk"))?;
    if data.is_empty() {
        return Err(AudioError::EmptyData {
            path: path.to_owned(),
        });
    }
    let frame_bytes = 2 * channels as usize;
    if data.len() % frame_bytes != 0 {
        return Err(malformed("data chunk is not a whole number of frames"));
    }

    let n_frames = data.len() / frame_bytes;
    let mut samples = Vec::with_capacity(n_frames);
    for frame in data.chunks_exact(frame_bytes) {
        let mut acc = 0.0f64;
        for ch in frame.chunks_exact(2) {
            acc += i16::from_le_bytes([ch[0], ch[1]]) as f64;
        }
        samples.push(acc / channels as f64 / 32768.0);
    }

    Ok(AudioClip {
        samples,
        sample_rate,
    })
}

/// Save a clip as mono 16-bit PCM.
///
/// Samples are quantized by `round(sample * 32767)`. A sample outside [-1, 1]
/// is an error; callers that want saturation must clamp explicitly.
pub fn save_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let path = path.as_ref();
    for (index, &value) in clip.samples.iter().enumerate() {
        if !value.is_finite() {
            return Err(AudioError::NonFiniteSample { index });
        }
        if !(-1.0..=1.0).contains(&value) {
            return Err(AudioError::SampleOutOfRange { index, value });
        }
    }

    let data_len = (clip.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &clip.samples {
        let q = (s * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }

    let mut file = File::create(path).map_err(|source| AudioError::Write {
        path: path.to_owned(),
        source,
    })?;
    file.write_all(&out).map_err(|source| AudioError::Write {
        path: path.to_owned(),
        source,
    })
}

/// Generate a deterministic speech-like clip: `n_bursts` harmonic bursts with
/// smooth on/off envelopes, separated by gaps that carry only floor noise.
pub fn synth_audio(spec: &SynthSpec, sample_rate: u32, seed: u64) -> Result<AudioClip, AudioError> {
    spec.validate(sample_rate)?;
    let total = (spec.duration_s * sample_rate as f64).round() as usize;
    if total == 0 {
        return Err(AudioError::DurationTooShort {
            duration_s: spec.duration_s,
            n_bursts: spec.n_bursts,
            sample_rate,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = vec![0.0f64; total];

    if spec.n_bursts > 0 && spec.burst_amplitude > 0.0 {
        // Gap budget rounds up so total gap time never falls below the request.
        let gap_total = (spec.gap_fraction * total as f64).ceil() as usize;
        let burst_len = (total - gap_total) / spec.n_bursts;
        if burst_len < 2 {
            return Err(AudioError::DurationTooShort {
                duration_s: spec.duration_s,
                n_bursts: spec.n_bursts,
                sample_rate,
            });
        }
        let n_gaps = spec.n_bursts + 1;
        let gap_len = (total - burst_len * spec.n_bursts) / n_gaps;
        let norm = spec.burst_amplitude / spec.burst_freqs.len() as f64;

        let mut pos = gap_len;
        for _ in 0..spec.n_bursts {
            let phases: Vec<f64> = spec
                .burst_freqs
                .iter()
                .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                .collect();
            for n in 0..burst_len {
                let env =
                    0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / (burst_len - 1) as f64).cos();
                let t = n as f64 / sample_rate as f64;
                let tone: f64 = spec
                    .burst_freqs
                    .iter()
                    .zip(&phases)
                    .map(|(f, p)| (std::f64::consts::TAU * f * t + p).sin())
                    .sum();
                samples[pos + n] = norm * env * tone;
            }
            pos += burst_len + gap_len;
        }
    }

    if spec.floor_noise_sigma > 0.0 {
        for s in &mut samples {
            let g: f64 = rng.sample(StandardNormal);
            *s += spec.floor_noise_sigma * g;
        }
    }
    for s in &mut samples {
        *s = s.clamp(-1.0, 1.0);
    }

    Ok(AudioClip {
        samples,
        sample_rate,
    })
}

/// Add i.i.d. Gaussian noise of standard deviation `sigma` to every sample.
///
/// The output is deliberately not clamped to [-1, 1]; saturation is a separate,
/// explicit choice by the caller.
pub fn add_white_noise(clip: &AudioClip, sigma: f64, seed: u64) -> Result<AudioClip, AudioError> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(AudioError::InvalidSigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(clip.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = clip
        .samples
        .iter()
        .map(|&s| {
            let g: f64 = rng.sample(StandardNormal);
            s + sigma * g
        })
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate: clip.sample_rate,
    })
}
