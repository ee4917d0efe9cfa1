//! Closed-form and Monte Carlo predictions of the detection metric under
//! white-noise perturbations.
//!
//! For i.i.d. Gaussian perturbations of variance `sigma^2`, each high-band
//! frame energy divided by `Gamma = 3 (W-1) sigma^2 / 8` follows a chi-squared
//! distribution with `M` degrees of freedom, where `M` is the number of
//! high-frequency bins. The expected metric over `F` frames is therefore
//! `Gamma * E[min of F chi^2_M draws]`, with the minimum expectation obtained
//! by direct Monte Carlo simulation of normal draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("window length must be >= 2, got {0}")]
    WindowTooShort(usize),
    #[error("band bin count M must be >= 1")]
    ZeroBins,
    #[error("frame count F must be >= 1")]
    ZeroFrames,
    #[error("mc_runs must be >= 1")]
    ZeroRuns,
    #[error("sigma must be finite and >= 0, got {0}")]
    InvalidSigma(f64),
    #[error("threshold D must be finite and > 0, got {0}")]
    InvalidThreshold(f64),
}

/// Inputs for a Monte Carlo evaluation of the expected minimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TheoryParams {
    /// Analysis window length W.
    pub window_len: usize,
    /// High-band bin count M.
    pub band_bins: usize,
    /// Number of frames F the minimum is taken over.
    pub frames: usize,
    pub mc_runs: usize,
    pub seed: u64,
}

impl TheoryParams {
    pub fn new(window_len: usize, band_bins: usize, frames: usize) -> Self {
        Self {
            window_len,
            band_bins,
            frames,
            mc_runs: 1000,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<(), TheoryError> {
        if self.window_len < 2 {
            return Err(TheoryError::WindowTooShort(self.window_len));
        }
        if self.band_bins == 0 {
            return Err(TheoryError::ZeroBins);
        }
        if self.frames == 0 {
            return Err(TheoryError::ZeroFrames);
        }
        if self.mc_runs == 0 {
            return Err(TheoryError::ZeroRuns);
        }
        Ok(())
    }
}

/// Expected per-bin STFT power of white noise under a Hann window of length
/// `W`: `Gamma = 3 (W - 1) sigma^2 / 8`.
pub fn gamma(window_len: usize, sigma: f64) -> f64 {
    0.375 * (window_len - 1) as f64 * sigma * sigma
}

// Runs per parallel shard. The shard count is derived from mc_runs alone, so
// results are identical for any rayon thread count.
const SHARD_RUNS: usize = 64;

/// `E[min over F draws of chi^2_M]`, estimated by averaging `mc_runs`
/// simulated minima. Each chi-squared draw is the sum of `M` squared standard
/// normals. Deterministic per seed.
pub fn expected_min_chi2(params: &TheoryParams) -> Result<f64, TheoryError> {
    params.validate()?;
    let shards: Vec<(u64, usize)> = (0..params.mc_runs.div_ceil(SHARD_RUNS))
        .map(|shard| {
            let start = shard * SHARD_RUNS;
            let runs = SHARD_RUNS.min(params.mc_runs - start);
            (shard as u64, runs)
        })
        .collect();

    let shard_sums: Vec<f64> = shards
        .par_iter()
        .map(|&(shard, runs)| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(shard + 1);
            let mut sum = 0.0;
            for _ in 0..runs {
                let mut min = f64::INFINITY;
                for _ in 0..params.frames {
                    let mut chi2 = 0.0;
                    for _ in 0..params.band_bins {
                        let g: f64 = rng.sample(StandardNormal);
                        chi2 += g * g;
                    }
                    if chi2 < min {
                        min = chi2;
                    }
                }
                sum += min;
            }
            sum
        })
        .collect();

    Ok(shard_sums.iter().sum::<f64>() / params.mc_runs as f64)
}

/// Expected detection metric for perturbations of standard deviation `sigma`:
/// `gamma(W, sigma) * E[min chi^2_M over F frames]`.
pub fn predicted_e(params: &TheoryParams, sigma: f64) -> Result<f64, TheoryError> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(TheoryError::InvalidSigma(sigma));
    }
    Ok(gamma(params.window_len, sigma) * expected_min_chi2(params)?)
}

/// The perturbation standard deviation whose expected metric equals the
/// detector threshold `D`: `sigma_D = sqrt(8 D / (3 (W-1) E[min chi^2]))`.
/// Perturbations with `sigma > sigma_D` are expected to be caught.
pub fn sigma_d(params: &TheoryParams, threshold: f64) -> Result<f64, TheoryError> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(TheoryError::InvalidThreshold(threshold));
    }
    let min_chi2 = expected_min_chi2(params)?;
    Ok((8.0 * threshold / (3.0 * (params.window_len - 1) as f64 * min_chi2)).sqrt())
}
