//! Short-time Fourier transform with a symmetric Hann analysis window.
//!
//! Frames are taken strictly inside the signal: frame `m` covers samples
//! `[m*hop, m*hop + fft_len)` and there is **no** centering or edge padding.
//! Many libraries pad by default so that frames straddle the clip boundary;
//! this one intentionally does not, which makes the frame count exactly
//! `floor((L - N) / H) + 1` and keeps frame energies a pure function of the
//! samples they cover.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;

#[derive(Debug, Error)]
pub enum StftError {
    #[error("window length must be >= 2, got {0}")]
    WindowTooShort(usize),
    #[error("fft length {fft_len} must be >= window length {window_len}")]
    FftShorterThanWindow { fft_len: usize, window_len: usize },
    #[error("fft length must be a power of two, got {0}")]
    FftNotPowerOfTwo(usize),
    #[error("hop must be >= 1")]
    ZeroHop,
    #[error("clip has {len} samples but one frame needs {needed}")]
    ClipTooShort { len: usize, needed: usize },
    #[error("clip sample {0} is not finite")]
    NonFiniteSample(usize),
}

/// Analysis window shape. Only the symmetric Hann window is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    #[default]
    Hann,
}

/// STFT geometry: window length `W`, FFT length `N` (power of two, `N >= W`),
/// and hop `H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftParams {
    pub window_len: usize,
    pub fft_len: usize,
    pub hop: usize,
    #[serde(default)]
    pub window_kind: WindowKind,
}

impl Default for StftParams {
    /// 25 ms window, 32 ms FFT, 10 ms hop at 16 kHz.
    fn default() -> Self {
        Self {
            window_len: 400,
            fft_len: 512,
            hop: 160,
            window_kind: WindowKind::Hann,
        }
    }
}

impl StftParams {
    pub fn validate(&self) -> Result<(), StftError> {
        if self.window_len < 2 {
            return Err(StftError::WindowTooShort(self.window_len));
        }
        if self.fft_len < self.window_len {
            return Err(StftError::FftShorterThanWindow {
                fft_len: self.fft_len,
                window_len: self.window_len,
            });
        }
        if !self.fft_len.is_power_of_two() {
            return Err(StftError::FftNotPowerOfTwo(self.fft_len));
        }
        if self.hop == 0 {
            return Err(StftError::ZeroHop);
        }
        Ok(())
    }

    /// Number of retained frequency bins per frame (DC through Nyquist).
    pub fn bins(&self) -> usize {
        self.fft_len / 2 + 1
    }
}

/// Complex STFT frames `S[k, m]` together with the geometry that produced them.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    /// `frames[m][k]` for `m` in `0..frame_count`, `k` in `0..=fft_len/2`.
    pub frames: Vec<Vec<Complex<f64>>>,
    pub params: StftParams,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

/// Symmetric Hann window: `w[n] = 0.5 - 0.5 cos(2 pi n / (W - 1))`.
pub fn hann_window(window_len: usize) -> Result<Vec<f64>, StftError> {
    if window_len < 2 {
        return Err(StftError::WindowTooShort(window_len));
    }
    let denom = (window_len - 1) as f64;
    Ok((0..window_len)
        .map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / denom).cos())
        .collect())
}

/// Frames that fit entirely inside a clip of `len` samples: `floor((L-N)/H) + 1`.
pub fn frame_count(len: usize, params: &StftParams) -> Result<usize, StftError> {
    params.validate()?;
    if len < params.fft_len {
        return Err(StftError::ClipTooShort {
            len,
            needed: params.fft_len,
        });
    }
    Ok((len - params.fft_len) / params.hop + 1)
}

/// Compute `S[k, m] = sum_n w'[n] s[n + mH] e^{-j 2 pi k n / N}` for
/// `k = 0..=N/2`, where `w'` is the Hann window zero-padded from `W` to `N`.
pub fn stft(clip: &AudioClip, params: &StftParams) -> Result<Spectrogram, StftError> {
    let n_frames = frame_count(clip.samples.len(), params)?;
    if let Some(bad) = clip.samples.iter().position(|s| !s.is_finite()) {
        return Err(StftError::NonFiniteSample(bad));
    }

    let n = params.fft_len;
    let mut window = hann_window(params.window_len)?;
    window.resize(n, 0.0);

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];

    let mut frames = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex::default(); n];
    for m in 0..n_frames {
        let start = m * params.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(window[i] * clip.samples[start + i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        frames.push(buf[..=n / 2].to_vec());
    }

    Ok(Spectrogram {
        frames,
        params: *params,
        sample_rate: clip.sample_rate,
    })
}
