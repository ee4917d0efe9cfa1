//! Experiment orchestration and metrics: detector error rates, attack success
//! rates, CDF tables, latency measurement, and the full attacker-vs-defender
//! grid sweep.

pub mod corpus;
pub mod game;

pub use corpus::{ClipSource, CorpusSource, Label, Manifest, ManifestEntry, SynthCorpusConfig};
pub use game::{run_game, ExperimentConfig, GameOptions, Report};

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::attack::{AttackError, AttackResult};
use crate::audio::{AudioClip, AudioError};
use crate::detector::{detect, DetectorError, DetectorProfile, Verdict};
use crate::sv::SvError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0} must not be empty")]
    EmptySet(&'static str),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Sv(#[from] SvError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Json {
        path: std::path::PathBuf,
        source: serde_json::Error,
    },
}

/// Format a float with 9 significant digits, the precision used by every CSV
/// this crate emits.
pub fn fmt_sig9(x: f64) -> String {
    format!("{x:.8e}")
}

/// False positive and false negative rates of a detector profile:
/// FPR is the fraction of originals flagged adversarial, FNR the fraction of
/// adversarials flagged original. Indeterminate clips surface as errors.
pub fn fpr_fnr(
    profile: &DetectorProfile,
    originals: &[AudioClip],
    adversarials: &[AudioClip],
) -> Result<(f64, f64), EvalError> {
    if originals.is_empty() {
        return Err(EvalError::EmptySet("originals"));
    }
    if adversarials.is_empty() {
        return Err(EvalError::EmptySet("adversarials"));
    }
    let mut false_positives = 0usize;
    for clip in originals {
        if detect(clip, profile)?.0 == Verdict::Adversarial {
            false_positives += 1;
        }
    }
    let mut false_negatives = 0usize;
    for clip in adversarials {
        if detect(clip, profile)?.0 == Verdict::Original {
            false_negatives += 1;
        }
    }
    Ok((
        false_positives as f64 / originals.len() as f64,
        false_negatives as f64 / adversarials.len() as f64,
    ))
}

/// Attack success rate: successes over total.
pub fn asr(results: &[AttackResult]) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptySet("attack results"));
    }
    Ok(results.iter().filter(|r| r.success).count() as f64 / results.len() as f64)
}

/// Right-continuous empirical CDF: sorted `(value, fraction)` pairs with
/// duplicates merged at their highest fraction; the last fraction is 1.
pub fn cdf(values: &[f64]) -> Result<Vec<(f64, f64)>, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptySet("cdf values"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite cdf value"));
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        let fraction = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 = fraction,
            _ => out.push((v, fraction)),
        }
    }
    Ok(out)
}

/// CSV dump of an empirical CDF: `value,fraction` per row.
pub fn cdf_csv(values: &[f64]) -> Result<String, EvalError> {
    let mut out = String::from("value,fraction\n");
    for (value, fraction) in cdf(values)? {
        out.push_str(&format!("{},{}\n", fmt_sig9(value), fmt_sig9(fraction)));
    }
    Ok(out)
}

/// Median wall-clock latency of `detect` over `reps` runs on one clip.
pub fn median_detect_latency(
    profile: &DetectorProfile,
    clip: &AudioClip,
    reps: usize,
) -> Result<Duration, EvalError> {
    if reps == 0 {
        return Err(EvalError::EmptySet("latency reps"));
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        let _ = detect(clip, profile)?;
        times.push(start.elapsed());
    }
    times.sort();
    Ok(times[times.len() / 2])
}

/// Per-order calibration summary over a set of training clips.
#[derive(Debug, Clone)]
pub struct OrderCalibration {
    /// 1-based order.
    pub order: usize,
    /// Metric values, one per training clip that admits this order.
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// `mean + k * std`.
    pub threshold: f64,
}

/// Calibrate thresholds `D_1..D_max_order` from training clips: per clip,
/// compute the spaced minima up to `max_order`; per order, fit
/// `mean + k * std` over the clips that reach that order.
pub fn calibrate_order_stats(
    clips: &[AudioClip],
    stft_params: &crate::stft::StftParams,
    freq_threshold_bin: usize,
    spacing: usize,
    k: f64,
    max_order: usize,
) -> Result<Vec<OrderCalibration>, EvalError> {
    if clips.is_empty() {
        return Err(EvalError::EmptySet("calibration clips"));
    }
    let mut per_order: Vec<Vec<f64>> = vec![Vec::new(); max_order];
    for clip in clips {
        let spec = crate::stft::stft(clip, stft_params).map_err(DetectorError::from)?;
        let energies = crate::detector::band_energy_series(&spec, freq_threshold_bin)?;
        let picks = crate::detector::pick_minima_up_to(&energies, max_order, spacing)?;
        for pick in picks {
            per_order[pick.order - 1].push(pick.energy);
        }
    }
    let mut out = Vec::with_capacity(max_order);
    for (i, values) in per_order.into_iter().enumerate() {
        let order = i + 1;
        if values.len() < 2 {
            return Err(EvalError::InvalidConfig(format!(
                "only {} training clips admit order {order}; need at least 2",
                values.len()
            )));
        }
        let threshold = crate::detector::calibrate(&values, k)?;
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        out.push(OrderCalibration {
            order,
            values,
            mean,
            std,
            threshold,
        });
    }
    Ok(out)
}
