//! Black-box attack engine: iterative sign updates driven by NES gradient
//! estimates, projected onto an epsilon ball around the original clip, with
//! optional freezing of the frames a minimum-energy detector would inspect.
//!
//! The attacker only calls the verification system's score function; every
//! call is counted in `queries`. An attack succeeds the first time the score
//! reaches the model threshold. The adaptive variant of order `n` computes
//! the defender's `n` spaced minimum-energy frames on the *original* clip and
//! restores those sample ranges after every update, so the detection metric
//! of the result matches the original's.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::detector::{
    band_energy_series, pick_minima, DetectorError, DetectorProfile,
};
use crate::stft::{stft, StftParams};
use crate::sv::{score, SvError, SvModel};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack params: {0}")]
    InvalidParams(String),
    #[error("clip lengths differ: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("freeze order {0} requires detector geometry")]
    MissingGeometry(usize),
    #[error(transparent)]
    Sv(#[from] SvError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

/// The detector-side frame geometry an adaptive attacker mirrors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorGeometry {
    pub stft: StftParams,
    pub freq_threshold_bin: usize,
    pub spacing: usize,
}

impl From<&DetectorProfile> for DetectorGeometry {
    fn from(profile: &DetectorProfile) -> Self {
        Self {
            stft: profile.stft,
            freq_threshold_bin: profile.freq_threshold_bin,
            spacing: profile.spacing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackParams {
    /// Per-sample perturbation bound.
    pub epsilon: f64,
    /// Maximum number of update iterations.
    pub max_iters: usize,
    /// Step size of each sign update.
    pub learning_rate: f64,
    /// Score queries per gradient estimate (even; probes come in antithetic
    /// pairs).
    pub nes_samples: usize,
    /// Standard deviation of NES probe noise.
    pub nes_sigma: f64,
    pub seed: u64,
    /// 0 runs the plain attack; `n >= 1` freezes the defender's `n` spaced
    /// minimum-energy frames of the original clip.
    pub freeze_order: usize,
    /// Required when `freeze_order >= 1`.
    pub detector_geometry: Option<DetectorGeometry>,
}

impl AttackParams {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            max_iters: 200,
            learning_rate: epsilon / 10.0,
            nes_samples: 50,
            nes_sigma: 1e-3,
            seed: 0,
            freeze_order: 0,
            detector_geometry: None,
        }
    }

    fn validate(&self) -> Result<(), AttackError> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(AttackError::InvalidParams(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if self.max_iters == 0 {
            return Err(AttackError::InvalidParams("max_iters must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(AttackError::InvalidParams(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        validate_nes(self.nes_samples, self.nes_sigma)?;
        if self.freeze_order >= 1 && self.detector_geometry.is_none() {
            return Err(AttackError::MissingGeometry(self.freeze_order));
        }
        Ok(())
    }
}

fn validate_nes(nes_samples: usize, nes_sigma: f64) -> Result<(), AttackError> {
    if nes_samples < 2 || nes_samples % 2 != 0 {
        return Err(AttackError::InvalidParams(format!(
            "nes_samples must be even and >= 2, got {nes_samples}"
        )));
    }
    if !(nes_sigma.is_finite() && nes_sigma > 0.0) {
        return Err(AttackError::InvalidParams(format!(
            "nes_sigma must be > 0, got {nes_sigma}"
        )));
    }
    Ok(())
}

/// A sample range the adaptive attacker left untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrozenFrame {
    /// STFT frame index `T_j`.
    pub frame: usize,
    /// First frozen sample, `T_j * hop`.
    pub start: usize,
    /// One past the last frozen sample, `min(start + fft_len, clip length)`.
    pub end: usize,
}

/// Outcome of one attack run.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub adversarial: AudioClip,
    pub success: bool,
    pub iterations_used: usize,
    /// Total score-function evaluations, including NES probes.
    pub queries: usize,
    /// Score before each update, plus the final score.
    pub score_trace: Vec<f64>,
    pub frozen_frames: Vec<FrozenFrame>,
}

/// JSON-friendly record of an attack, without the waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub success: bool,
    pub iterations_used: usize,
    pub queries: usize,
    pub epsilon: f64,
    pub nes_samples: usize,
    pub freeze_order: usize,
    pub final_score: f64,
    pub linf: f64,
    pub score_trace: Vec<f64>,
    pub frozen_frames: Vec<FrozenFrame>,
}

impl AttackResult {
    pub fn summary(
        &self,
        original: &AudioClip,
        params: &AttackParams,
    ) -> Result<AttackSummary, AttackError> {
        Ok(AttackSummary {
            success: self.success,
            iterations_used: self.iterations_used,
            queries: self.queries,
            epsilon: params.epsilon,
            nes_samples: params.nes_samples,
            freeze_order: params.freeze_order,
            final_score: *self.score_trace.last().expect("trace never empty"),
            linf: linf_distance(&self.adversarial, original)?,
            score_trace: self.score_trace.clone(),
            frozen_frames: self.frozen_frames.clone(),
        })
    }
}

/// Attack objective: `max(theta - score, 0)`; zero once the clip is accepted.
pub fn loss(score: f64, theta: f64) -> f64 {
    (theta - score).max(0.0)
}

/// Three-valued sign.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Largest absolute per-sample difference between two equal-length clips.
pub fn linf_distance(a: &AudioClip, b: &AudioClip) -> Result<f64, AttackError> {
    if a.len() != b.len() {
        return Err(AttackError::LengthMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    Ok(a.samples
        .iter()
        .zip(&b.samples)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// Project `a` onto the per-sample band `[s - epsilon, s + epsilon]`.
pub fn clip_to_ball(
    a: &AudioClip,
    s: &AudioClip,
    epsilon: f64,
) -> Result<AudioClip, AttackError> {
    if a.len() != s.len() {
        return Err(AttackError::LengthMismatch {
            a: a.len(),
            b: s.len(),
        });
    }
    let samples = a
        .samples
        .iter()
        .zip(&s.samples)
        .map(|(&ai, &si)| ai.clamp(si - epsilon, si + epsilon))
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate: a.sample_rate,
    })
}

/// NES gradient estimate with antithetic sampling: for each pair draw
/// `u ~ N(0, I)` and accumulate `[L(a + sigma u) - L(a - sigma u)] * u`,
/// normalized by `nes_samples * sigma`. Costs exactly `nes_samples` score
/// queries. Deterministic given the RNG state.
pub fn nes_gradient<F>(
    mut score_fn: F,
    a: &AudioClip,
    theta: f64,
    nes_samples: usize,
    nes_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, AttackError>
where
    F: FnMut(&AudioClip) -> Result<f64, SvError>,
{
    validate_nes(nes_samples, nes_sigma)?;
    let len = a.len();
    let mut grad = vec![0.0f64; len];
    let mut probe = AudioClip {
        samples: vec![0.0; len],
        sample_rate: a.sample_rate,
    };
    for _ in 0..nes_samples / 2 {
        let directions: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        for ((p, &base), &u) in probe.samples.iter_mut().zip(&a.samples).zip(&directions) {
            *p = base + nes_sigma * u;
        }
        let loss_plus = loss(score_fn(&probe)?, theta);
        for ((p, &base), &u) in probe.samples.iter_mut().zip(&a.samples).zip(&directions) {
            *p = base - nes_sigma * u;
        }
        let loss_minus = loss(score_fn(&probe)?, theta);
        let weight = loss_plus - loss_minus;
        if weight != 0.0 {
            for (g, &u) in grad.iter_mut().zip(&directions) {
                *g += weight * u;
            }
        }
    }
    let norm = 1.0 / (nes_samples as f64 * nes_sigma);
    for g in &mut grad {
        *g *= norm;
    }
    Ok(grad)
}

/// Plain black-box attack (`freeze_order` must be 0).
pub fn fakebob(
    original: &AudioClip,
    sv: &SvModel,
    params: &AttackParams,
) -> Result<AttackResult, AttackError> {
    if params.freeze_order != 0 {
        return Err(AttackError::InvalidParams(format!(
            "fakebob requires freeze_order 0, got {}; use nth_fakebob",
            params.freeze_order
        )));
    }
    run_attack(original, sv, params)
}

/// Adaptive attack of order `n >= 1`: identical to the plain attack except
/// that the defender's `n` spaced minimum-energy frames of the original are
/// restored to their original samples after every update.
pub fn nth_fakebob(
    original: &AudioClip,
    sv: &SvModel,
    params: &AttackParams,
) -> Result<AttackResult, AttackError> {
    if params.freeze_order == 0 {
        return Err(AttackError::InvalidParams(
            "nth_fakebob requires freeze_order >= 1; use fakebob".into(),
        ));
    }
    run_attack(original, sv, params)
}

fn run_attack(
    original: &AudioClip,
    sv: &SvModel,
    params: &AttackParams,
) -> Result<AttackResult, AttackError> {
    params.validate()?;

    let frozen_frames = if params.freeze_order >= 1 {
        let geometry = params
            .detector_geometry
            .as_ref()
            .ok_or(AttackError::MissingGeometry(params.freeze_order))?;
        let spec = stft(original, &geometry.stft).map_err(DetectorError::from)?;
        let energies = band_energy_series(&spec, geometry.freq_threshold_bin)?;
        let picks = pick_minima(&energies, params.freeze_order, geometry.spacing)?;
        picks
            .iter()
            .map(|p| {
                let start = p.frame * geometry.stft.hop;
                FrozenFrame {
                    frame: p.frame,
                    start,
                    end: (start + geometry.stft.fft_len).min(original.len()),
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    let theta = sv.theta;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut adversarial = original.clone();
    let mut score_trace = Vec::new();
    let mut queries = 0usize;

    let mut iteration = 0usize;
    let (success, iterations_used) = loop {
        let current = score(sv, &adversarial)?;
        queries += 1;
        score_trace.push(current);
        if current >= theta {
            break (true, iteration);
        }
        if iteration == params.max_iters {
            break (false, iteration);
        }

        let grad = nes_gradient(
            |clip| score(sv, clip),
            &adversarial,
            theta,
            params.nes_samples,
            params.nes_sigma,
            &mut rng,
        )?;
        queries += params.nes_samples;

        for (a, g) in adversarial.samples.iter_mut().zip(&grad) {
            *a -= params.learning_rate * sign(*g);
        }
        adversarial = clip_to_ball(&adversarial, original, params.epsilon)?;
        // Keep the result writable as PCM; the ball alone does not bound
        // absolute amplitude.
        for a in &mut adversarial.samples {
            *a = a.clamp(-1.0, 1.0);
        }
        for f in &frozen_frames {
            adversarial.samples[f.start..f.end].copy_from_slice(&original.samples[f.start..f.end]);
        }
        iteration += 1;
    };

    Ok(AttackResult {
        adversarial,
        success,
        iterations_used,
        queries,
        score_trace,
        frozen_frames,
    })
}

/// Sample standard deviation of the perturbation over one STFT frame's
/// samples, the diagnostic reported alongside attack sweeps.
pub fn perturbation_std_in_frame(
    original: &AudioClip,
    adversarial: &AudioClip,
    frame: usize,
    params: &StftParams,
) -> Result<f64, AttackError> {
    if original.len() != adversarial.len() {
        return Err(AttackError::LengthMismatch {
            a: original.len(),
            b: adversarial.len(),
        });
    }
    let start = frame * params.hop;
    let end = start + params.fft_len;
    if end > original.len() {
        return Err(AttackError::InvalidParams(format!(
            "frame {frame} spans {start}..{end} beyond clip length {}",
            original.len()
        )));
    }
    let diffs: Vec<f64> = (start..end)
        .map(|i| adversarial.samples[i] - original.samples[i])
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::default_spacing;
    use crate::eval::corpus::{Label, SynthCorpusConfig};
    use crate::sv::{eer_threshold, extract_features, train_gmm, FeatureMatrix, FeatureParams};

    /// Small overlapping-voice verification system. Returns the model (theta
    /// at the EER point) and the impostor clips with their scores, nearest
    /// the threshold first.
    fn tuned_system(seed: u64) -> (SvModel, Vec<(AudioClip, f64)>) {
        let mut corpus = SynthCorpusConfig::overlapping_voices(10, 8, seed);
        corpus.duration_s = 1.0;
        let clips = corpus.manifest().materialize().unwrap();
        let fp = FeatureParams::default();
        let mut speaker_rows = Vec::new();
        let mut all_rows = Vec::new();
        for (clip, label) in &clips {
            let f = extract_features(clip, &fp).unwrap();
            if *label == Label::Legit {
                speaker_rows.extend(f.rows.iter().cloned());
            }
            all_rows.extend(f.rows);
        }
        let speaker = train_gmm(&FeatureMatrix { rows: speaker_rows }, 6, 20, 1).unwrap();
        let background = train_gmm(&FeatureMatrix { rows: all_rows }, 6, 20, 2).unwrap();
        let mut model = SvModel {
            speaker,
            background,
            theta: 0.0,
            features: fp,
        };
        let mut legit_scores = Vec::new();
        let mut impostors = Vec::new();
        for (clip, label) in clips {
            let s = score(&model, &clip).unwrap();
            match label {
                Label::Legit => legit_scores.push(s),
                Label::Impostor => impostors.push((clip, s)),
            }
        }
        let impostor_scores: Vec<f64> = impostors.iter().map(|(_, s)| *s).collect();
        let (theta, _) = eer_threshold(&legit_scores, &impostor_scores).unwrap();
        model.theta = theta;
        impostors.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        (model, impostors)
    }

    fn impostor_clips(system: &(SvModel, Vec<(AudioClip, f64)>)) -> Vec<AudioClip> {
        system.1.iter().map(|(c, _)| c.clone()).collect()
    }

    #[test]
    fn loss_is_hinge_at_theta() {
        assert_eq!(loss(2.0, 2.0), 0.0);
        assert_eq!(loss(1.0, 2.0), 1.0);
        assert_eq!(loss(7.0, 2.0), 0.0);
    }

    #[test]
    fn sign_is_three_valued() {
        assert_eq!(sign(3.2), 1.0);
        assert_eq!(sign(-0.1), -1.0);
        assert_eq!(sign(0.0), 0.0);
    }

    #[test]
    fn clip_to_ball_matches_piecewise_definition() {
        let s = AudioClip::new(vec![0.0, 0.0, 0.2], 16000);
        let a = AudioClip::new(vec![0.01, -0.01, 0.2], 16000);
        let c = clip_to_ball(&a, &s, 0.002).unwrap();
        assert_eq!(c.samples, vec![0.002, -0.002, 0.2]);

        let identity = clip_to_ball(&s, &s, 0.5).unwrap();
        assert_eq!(identity.samples, s.samples);

        assert!(matches!(
            clip_to_ball(&AudioClip::new(vec![0.0], 16000), &s, 0.1),
            Err(AttackError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn nes_gradient_is_zero_when_loss_is_flat() {
        let a = AudioClip::new(vec![0.0; 64], 16000);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let grad = nes_gradient(|_| Ok(10.0), &a, 0.0, 10, 0.001, &mut rng).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn nes_gradient_is_deterministic_per_rng_state() {
        let a = AudioClip::new((0..32).map(|i| i as f64 / 64.0).collect(), 16000);
        let quadratic = |c: &AudioClip| -> Result<f64, SvError> {
            Ok(-c.samples.iter().map(|s| s * s).sum::<f64>() / 2.0)
        };
        let mut rng1 = ChaCha8Rng::seed_from_u64(5);
        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        let g1 = nes_gradient(quadratic, &a, 0.0, 20, 0.01, &mut rng1).unwrap();
        let g2 = nes_gradient(quadratic, &a, 0.0, 20, 0.01, &mut rng2).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn nes_gradient_tracks_analytic_gradient_of_quadratic_loss() {
        // With score = theta - |x|^2/2 the loss is |x|^2/2 and the true
        // gradient is x itself. Cosine similarity of the estimate against x
        // improves with probes per dimension; both points below hold with
        // margin for their probe budgets.
        for (dim, nes_samples, seed) in [(40usize, 50usize, 1u64), (1000, 6000, 2)] {
            let x = AudioClip::new(
                (0..dim).map(|i| ((i * 37 + 11) % 97) as f64 / 97.0 - 0.5).collect(),
                16000,
            );
            let score_fn = |c: &AudioClip| -> Result<f64, SvError> {
                Ok(-c.samples.iter().map(|s| s * s).sum::<f64>() / 2.0)
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grad = nes_gradient(score_fn, &x, 0.0, nes_samples, 0.01, &mut rng).unwrap();
            let dot: f64 = grad.iter().zip(&x.samples).map(|(g, s)| g * s).sum();
            let ng: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            let nx: f64 = x.samples.iter().map(|s| s * s).sum::<f64>().sqrt();
            let cosine = dot / (ng * nx);
            assert!(
                cosine > 0.5,
                "dim {dim}, samples {nes_samples}: cosine {cosine}"
            );
        }
    }

    #[test]
    fn accepted_input_returns_immediately() {
        let (mut model, impostors) = tuned_system(3);
        model.theta = -1e9;
        let params = AttackParams::new(0.002);
        let result = fakebob(&impostors[0].0, &model, &params).unwrap();
        assert!(result.success);
        assert_eq!(result.iterations_used, 0);
        assert_eq!(result.queries, 1);
        assert_eq!(result.adversarial, impostors[0].0);
        assert_eq!(result.score_trace.len(), 1);
    }

    #[test]
    fn zero_epsilon_returns_the_original() {
        let (mut model, impostors) = tuned_system(3);
        model.theta = 1e9;
        let mut params = AttackParams::new(0.0);
        params.max_iters = 3;
        params.nes_samples = 4;
        let result = fakebob(&impostors[0].0, &model, &params).unwrap();
        assert!(!result.success);
        assert_eq!(result.adversarial, impostors[0].0);
        assert_eq!(result.iterations_used, 3);
    }

    #[test]
    fn failed_attack_respects_ball_and_query_accounting() {
        let (mut model, impostors) = tuned_system(3);
        model.theta = 1e9; // unreachable: exercises the full loop
        let mut params = AttackParams::new(0.002);
        params.max_iters = 4;
        params.nes_samples = 8;
        let result = fakebob(&impostors[0].0, &model, &params).unwrap();
        assert!(!result.success);
        assert_eq!(result.iterations_used, 4);
        assert_eq!(result.queries, 1 + 4 * (8 + 1));
        assert_eq!(result.score_trace.len(), 5);
        let linf = linf_distance(&result.adversarial, &impostors[0].0).unwrap();
        assert!(linf <= 0.002 + 1e-12, "linf {linf}");
        assert!(linf > 0.0, "attack never moved");
        assert!(result
            .adversarial
            .samples
            .iter()
            .all(|s| (-1.0..=1.0).contains(s)));
    }

    #[test]
    fn successful_attack_trace_ends_at_or_above_theta() {
        let (model, impostors) = tuned_system(3);
        // Nearest rejected impostor: the clip an attacker would pick first.
        let (clip, base) = impostors
            .iter()
            .find(|(_, s)| *s < model.theta)
            .expect("at least one rejected impostor");
        let mut params = AttackParams::new(0.01);
        params.learning_rate = 6e-4;
        params.nes_sigma = 6e-4;
        params.max_iters = 120;
        params.nes_samples = 30;
        let result = fakebob(clip, &model, &params).unwrap();
        assert!(
            result.success,
            "attack failed from {base} toward {}",
            model.theta
        );
        assert!(*result.score_trace.last().unwrap() >= model.theta);
        assert_eq!(
            result.queries,
            1 + result.iterations_used * (params.nes_samples + 1)
        );
    }

    #[test]
    fn frozen_frames_are_bit_identical_and_metric_cannot_grow() {
        let (mut model, impostors) = tuned_system(3);
        model.theta = 1e9;
        let geometry = DetectorGeometry {
            stft: StftParams::default(),
            freq_threshold_bin: 224,
            spacing: default_spacing(&StftParams::default()),
        };
        let mut params = AttackParams::new(0.005);
        params.max_iters = 5;
        params.nes_samples = 8;
        params.freeze_order = 1;
        params.detector_geometry = Some(geometry);

        let original = &impostors[2].0;
        let result = nth_fakebob(original, &model, &params).unwrap();
        assert_eq!(result.frozen_frames.len(), 1);
        let f = result.frozen_frames[0];
        assert_eq!(
            &result.adversarial.samples[f.start..f.end],
            &original.samples[f.start..f.end]
        );

        let orig_energies =
            band_energy_series(&stft(original, &geometry.stft).unwrap(), 224).unwrap();
        let adv_energies =
            band_energy_series(&stft(&result.adversarial, &geometry.stft).unwrap(), 224).unwrap();
        assert_eq!(orig_energies[f.frame], adv_energies[f.frame]);
        let e1_orig = pick_minima(&orig_energies, 1, geometry.spacing).unwrap()[0].energy;
        let e1_adv = pick_minima(&adv_energies, 1, geometry.spacing).unwrap()[0].energy;
        assert!(e1_adv <= e1_orig);
    }

    #[test]
    fn nth_with_zero_epsilon_is_identity() {
        let (mut model, impostors) = tuned_system(3);
        model.theta = 1e9;
        let mut params = AttackParams::new(0.0);
        params.max_iters = 2;
        params.nes_samples = 4;
        params.freeze_order = 2;
        params.detector_geometry = Some(DetectorGeometry {
            stft: StftParams::default(),
            freq_threshold_bin: 224,
            spacing: 4,
        });
        let result = nth_fakebob(&impostors[0].0, &model, &params).unwrap();
        assert_eq!(result.adversarial, impostors[0].0);
    }

    #[test]
    fn wrapper_functions_enforce_their_orders() {
        let (model, impostors) = tuned_system(3);
        let mut params = AttackParams::new(0.002);
        params.freeze_order = 1;
        params.detector_geometry = Some(DetectorGeometry {
            stft: StftParams::default(),
            freq_threshold_bin: 224,
            spacing: 4,
        });
        assert!(fakebob(&impostors[0].0, &model, &params).is_err());
        params.freeze_order = 0;
        assert!(nth_fakebob(&impostors[0].0, &model, &params).is_err());
        params.freeze_order = 3;
        params.detector_geometry = None;
        assert!(matches!(
            nth_fakebob(&impostors[0].0, &model, &params),
            Err(AttackError::MissingGeometry(3))
        ));
    }

    #[test]
    fn freezing_more_frames_never_speeds_up_attacks() {
        let system = tuned_system(3);
        let (mut model, _) = system.clone();
        let impostors = impostor_clips(&system);
        // Per-clip reachable thresholds so iteration counts vary by order.
        let geometry = DetectorGeometry {
            stft: StftParams::default(),
            freq_threshold_bin: 224,
            spacing: 4,
        };
        let mut means = Vec::new();
        for order in [0usize, 1, 4] {
            let mut total = 0usize;
            let mut count = 0usize;
            for (i, clip) in impostors.iter().enumerate().take(8) {
                for round in 0..3u64 {
                    let base = score(&model, clip).unwrap();
                    model.theta = base + 0.05;
                    let mut params = AttackParams::new(0.01);
                    params.learning_rate = 6e-4;
                    params.nes_sigma = 6e-4;
                    params.max_iters = 60;
                    params.nes_samples = 20;
                    params.seed = 7 + round * 1000 + i as u64;
                    params.freeze_order = order;
                    params.detector_geometry = (order > 0).then_some(geometry);
                    let result = run_attack(clip, &model, &params).unwrap();
                    total += result.iterations_used;
                    count += 1;
                }
            }
            means.push(total as f64 / count as f64);
        }
        assert!(
            means[0] <= means[1] + 1e-9 && means[1] <= means[2] + 1e-9,
            "iteration burden not monotone: {means:?}"
        );
    }

    #[test]
    fn perturbation_std_diagnostic_measures_one_frame() {
        let original = AudioClip::new(vec![0.0; 1000], 16000);
        let mut adv = original.clone();
        let params = StftParams {
            window_len: 64,
            fft_len: 64,
            hop: 32,
            ..StftParams::default()
        };
        for i in 64..128 {
            adv.samples[i] = if i % 2 == 0 { 0.002 } else { -0.002 };
        }
        // Frame 2 covers samples 64..128.
        let sd = perturbation_std_in_frame(&original, &adv, 2, &params).unwrap();
        assert!((sd - 0.002).abs() < 1e-4, "std {sd}");
        // Frame 0 covers untouched samples.
        let sd0 = perturbation_std_in_frame(&original, &adv, 0, &params).unwrap();
        assert_eq!(sd0, 0.0);
    }
}
