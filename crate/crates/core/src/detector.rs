//! Minimum-energy-in-high-frequencies detection of adversarial audio.
//!
//! The detection metric for a clip is the n-th smallest high-band frame
//! energy `E_n`, taken over STFT frames subject to a minimum spacing between
//! picked frames (neighboring frames share samples when the hop is shorter
//! than the FFT length, so unconstrained picks would be redundant). A clip is
//! flagged adversarial when `E_n` exceeds a threshold calibrated on trusted
//! original audio as `mean + k * std`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::stft::{stft, Spectrogram, StftError, StftParams};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error(transparent)]
    Stft(#[from] StftError),
    #[error("frequency threshold bin {bin} exceeds Nyquist bin {nyquist}")]
    BinOutOfRange { bin: usize, nyquist: usize },
    #[error("order must be >= 1")]
    ZeroOrder,
    #[error("spacing must be >= 1")]
    ZeroSpacing,
    #[error(
        "cannot pick {order} frames at spacing {spacing} from {frames} frames; \
         clip is indeterminate at this order"
    )]
    SpacingInfeasible {
        order: usize,
        spacing: usize,
        frames: usize,
    },
    #[error("calibration needs at least 2 training values, got {0}")]
    TooFewTrainingValues(usize),
    #[error("training value {index} is not finite")]
    NonFiniteTrainingValue { index: usize },
    #[error("clip sample rate {clip} Hz does not match profile sample rate {profile} Hz")]
    SampleRateMismatch { clip: u32, profile: u32 },
    #[error("profile is invalid: {0}")]
    InvalidProfile(String),
}

/// Everything needed to score and classify one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorProfile {
    pub stft: StftParams,
    /// First STFT bin counted as "high frequency" (inclusive).
    pub freq_threshold_bin: usize,
    /// Which order statistic to test: 1 uses the minimum, 2 the spaced second
    /// minimum, and so on.
    pub order: usize,
    /// Minimum distance in frames between picked minima.
    pub spacing: usize,
    /// Calibrated thresholds `D_1..D_order`; `detect` compares against
    /// `thresholds[order - 1]`.
    pub thresholds: Vec<f64>,
    pub calibration_k: f64,
    pub sample_rate: u32,
}

impl DetectorProfile {
    /// Profile with the standard STFT geometry and a 7 kHz band edge at
    /// 16 kHz, order 1, thresholds not yet calibrated.
    pub fn new_uncalibrated(order: usize) -> Self {
        let stft = StftParams::default();
        Self {
            freq_threshold_bin: bin_for_freq(7000.0, stft.fft_len, 16000),
            order,
            spacing: default_spacing(&stft),
            thresholds: Vec::new(),
            calibration_k: 3.0,
            stft,
            sample_rate: 16000,
        }
    }

    /// The threshold `D_n` used by `detect` for this profile's order.
    pub fn threshold(&self) -> Result<f64, DetectorError> {
        self.thresholds
            .get(self.order - 1)
            .copied()
            .ok_or_else(|| {
                DetectorError::InvalidProfile(format!(
                    "profile has {} thresholds but order {}",
                    self.thresholds.len(),
                    self.order
                ))
            })
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        self.stft.validate()?;
        if self.order == 0 {
            return Err(DetectorError::ZeroOrder);
        }
        if self.spacing == 0 {
            return Err(DetectorError::ZeroSpacing);
        }
        let nyquist = self.stft.fft_len / 2;
        if self.freq_threshold_bin > nyquist {
            return Err(DetectorError::BinOutOfRange {
                bin: self.freq_threshold_bin,
                nyquist,
            });
        }
        if self.thresholds.len() < self.order {
            return Err(DetectorError::InvalidProfile(format!(
                "profile has {} thresholds but order {}",
                self.thresholds.len(),
                self.order
            )));
        }
        if let Some(bad) = self.thresholds.iter().find(|t| !t.is_finite()) {
            return Err(DetectorError::InvalidProfile(format!(
                "non-finite threshold {bad}"
            )));
        }
        Ok(())
    }
}

/// One picked frame: the j-th spaced minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    /// 1-based order of this pick.
    pub order: usize,
    /// Frame index `T_j`.
    pub frame: usize,
    /// Energy `E_j` at that frame.
    pub energy: f64,
}

/// Audit trail for one detection: the full energy series and the picks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub energies: Vec<f64>,
    pub picks: Vec<Pick>,
}

impl MetricReport {
    /// `E_n` for the highest order picked.
    pub fn metric(&self) -> f64 {
        self.picks.last().map(|p| p.energy).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Original,
    Adversarial,
}

/// Convert a physical band edge in Hz to the nearest STFT bin:
/// `round((N/2) * f / (fs/2))`. 7 kHz at 16 kHz / N = 512 gives bin 224.
pub fn bin_for_freq(freq_hz: f64, fft_len: usize, sample_rate: u32) -> usize {
    let nyquist_bin = fft_len / 2;
    let nyquist_hz = sample_rate as f64 / 2.0;
    ((nyquist_bin as f64 * freq_hz / nyquist_hz).round() as usize).min(nyquist_bin)
}

/// Default minimum frame distance between picks, `ceil(N / H)`: the smallest
/// distance at which two frames share no samples.
pub fn default_spacing(params: &StftParams) -> usize {
    params.fft_len.div_ceil(params.hop)
}

/// High-band energy per frame: `E_r[m] = sum_{k >= f_t} |S[k, m]|^2`,
/// inclusive of the Nyquist bin.
pub fn band_energy_series(
    spec: &Spectrogram,
    freq_threshold_bin: usize,
) -> Result<Vec<f64>, DetectorError> {
    let nyquist = spec.params.fft_len / 2;
    if freq_threshold_bin > nyquist {
        return Err(DetectorError::BinOutOfRange {
            bin: freq_threshold_bin,
            nyquist,
        });
    }
    Ok(spec
        .frames
        .iter()
        .map(|frame| {
            frame[freq_threshold_bin..]
                .iter()
                .map(|c| c.norm_sqr())
                .sum()
        })
        .collect())
}

fn greedy_minima(energies: &[f64], order: usize, spacing: usize) -> Vec<Pick> {
    let mut picks: Vec<Pick> = Vec::with_capacity(order);
    for j in 1..=order {
        let mut best: Option<(usize, f64)> = None;
        for (i, &e) in energies.iter().enumerate() {
            if picks.iter().any(|p| i.abs_diff(p.frame) < spacing) {
                continue;
            }
            if best.map_or(true, |(_, be)| e < be) {
                best = Some((i, e));
            }
        }
        match best {
            Some((frame, energy)) => picks.push(Pick {
                order: j,
                frame,
                energy,
            }),
            None => break,
        }
    }
    picks
}

/// Greedy spaced minima: `T_1` is the argmin of the series; `T_j` is the
/// argmin over frames at distance >= `spacing` from every earlier pick.
/// Ties break toward the smallest frame index.
pub fn pick_minima(
    energies: &[f64],
    order: usize,
    spacing: usize,
) -> Result<Vec<Pick>, DetectorError> {
    if order == 0 {
        return Err(DetectorError::ZeroOrder);
    }
    if spacing == 0 {
        return Err(DetectorError::ZeroSpacing);
    }
    let picks = greedy_minima(energies, order, spacing);
    if picks.len() < order {
        return Err(DetectorError::SpacingInfeasible {
            order: picks.len() + 1,
            spacing,
            frames: energies.len(),
        });
    }
    Ok(picks)
}

/// Like [`pick_minima`], but stops quietly at the highest feasible order
/// instead of erroring; the greedy selection makes lower-order picks a prefix
/// of higher-order ones.
pub fn pick_minima_up_to(
    energies: &[f64],
    max_order: usize,
    spacing: usize,
) -> Result<Vec<Pick>, DetectorError> {
    if max_order == 0 {
        return Err(DetectorError::ZeroOrder);
    }
    if spacing == 0 {
        return Err(DetectorError::ZeroSpacing);
    }
    Ok(greedy_minima(energies, max_order, spacing))
}

/// Detection threshold from trusted original audio: `D = mean + k * std`,
/// with the sample (n-1) standard deviation.
pub fn calibrate(training_metrics: &[f64], k: f64) -> Result<f64, DetectorError> {
    if training_metrics.len() < 2 {
        return Err(DetectorError::TooFewTrainingValues(training_metrics.len()));
    }
    if let Some(index) = training_metrics.iter().position(|v| !v.is_finite()) {
        return Err(DetectorError::NonFiniteTrainingValue { index });
    }
    let n = training_metrics.len() as f64;
    let mean = training_metrics.iter().sum::<f64>() / n;
    let var = training_metrics
        .iter()
        .map(|v| (v - mean).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    Ok(mean + k * var.sqrt())
}

/// Classify a clip: adversarial iff `E_n > D_n` (strictly). `E_n = D_n` is
/// original. Errors are surfaced (too-short or spacing-infeasible clips are
/// indeterminate, never silently classified).
pub fn detect(
    clip: &AudioClip,
    profile: &DetectorProfile,
) -> Result<(Verdict, MetricReport), DetectorError> {
    profile.validate()?;
    if clip.sample_rate != profile.sample_rate {
        return Err(DetectorError::SampleRateMismatch {
            clip: clip.sample_rate,
            profile: profile.sample_rate,
        });
    }
    let threshold = profile.threshold()?;
    let spec = stft(clip, &profile.stft)?;
    let energies = band_energy_series(&spec, profile.freq_threshold_bin)?;
    let picks = pick_minima(&energies, profile.order, profile.spacing)?;
    let metric = picks[profile.order - 1].energy;
    let verdict = if metric > threshold {
        Verdict::Adversarial
    } else {
        Verdict::Original
    };
    Ok((verdict, MetricReport { energies, picks }))
}
