//! Noise-adding defense: perturb the input waveform with small white noise
//! before scoring it, destabilizing adversarial examples built with small
//! perturbation budgets.
//!
//! Adversarial clips are expected to be generated against the *undefended*
//! system and then scored under the defense; that is the evaluation protocol
//! the harness follows.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{add_white_noise, AudioClip};
use crate::sv::{score, SvError, SvModel};

/// How noise seeds are chosen across calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// Every call reuses the configured seed; scoring is a pure function.
    /// Exists for testability and replay.
    FixedSeed,
    /// Each call draws a fresh sub-seed from the defense's own stream; this
    /// is the deployment semantics.
    FreshPerCall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseDefenseParams {
    pub noise_sigma: f64,
    pub seed_policy: SeedPolicy,
}

impl NoiseDefenseParams {
    pub fn new(noise_sigma: f64) -> Self {
        Self {
            noise_sigma,
            seed_policy: SeedPolicy::FreshPerCall,
        }
    }
}

/// Score `clip + white noise(noise_sigma)` under `sv`, with noise drawn from
/// `seed`. With `noise_sigma = 0` this is bit-identical to the plain score.
pub fn defended_score(
    sv: &SvModel,
    clip: &AudioClip,
    noise_sigma: f64,
    seed: u64,
) -> Result<f64, SvError> {
    if noise_sigma == 0.0 {
        return score(sv, clip);
    }
    let noisy = add_white_noise(clip, noise_sigma, seed)
        .map_err(|e| SvError::InvalidParams(e.to_string()))?;
    score(sv, &noisy)
}

/// A scoring wrapper owning the noise stream.
#[derive(Debug, Clone)]
pub struct NoiseDefense {
    pub params: NoiseDefenseParams,
    base_seed: u64,
    stream: ChaCha8Rng,
}

impl NoiseDefense {
    pub fn new(params: NoiseDefenseParams, seed: u64) -> Self {
        Self {
            params,
            base_seed: seed,
            stream: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Score one clip under the defense, advancing the noise stream when the
    /// policy is [`SeedPolicy::FreshPerCall`].
    pub fn score(&mut self, sv: &SvModel, clip: &AudioClip) -> Result<f64, SvError> {
        let seed = match self.params.seed_policy {
            SeedPolicy::FixedSeed => self.base_seed,
            SeedPolicy::FreshPerCall => self.stream.next_u64(),
        };
        defended_score(sv, clip, self.params.noise_sigma, seed)
    }
}
