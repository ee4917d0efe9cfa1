//! Desk-scale score-based speaker verification.
//!
//! Log-mel filterbank features feed two diagonal-covariance GMMs (a speaker
//! model and a background model trained by EM); a clip's score is the mean
//! per-frame log-likelihood ratio, accepted when it reaches a threshold set
//! at the equal-error-rate operating point. This is an explicitly small
//! stand-in for a production verification stack: it exposes the same
//! score-plus-threshold interface that black-box attacks drive, not the same
//! accuracy.
//!
//! Features reuse this crate's STFT (no centering), so attack and detector
//! frame geometry line up exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::stft::{stft, StftError, StftParams};

/// Floor applied to mel band power before the log.
pub const POWER_FLOOR: f64 = 1e-10;
/// Floor applied to GMM variances during EM.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SvError {
    #[error(transparent)]
    Stft(#[from] StftError),
    #[error("invalid feature params: {0}")]
    InvalidParams(String),
    #[error("{rows} feature frames cannot initialize {components} components")]
    TooFewFrames { rows: usize, components: usize },
    #[error("scores list is empty")]
    EmptyScores,
    #[error("feature matrix is empty")]
    EmptyFeatures,
    #[error("model dimensions disagree: {0}")]
    DimensionMismatch(String),
}

/// Log-mel filterbank configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    pub stft: StftParams,
    pub n_mels: usize,
    pub fmin_hz: f64,
    /// Upper band edge; `None` means the Nyquist frequency.
    pub fmax_hz: Option<f64>,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            stft: StftParams::default(),
            n_mels: 20,
            fmin_hz: 0.0,
            fmax_hz: None,
        }
    }
}

/// Feature rows, one per STFT frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn n_frames(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map(|r| r.len()).unwrap_or(0)
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// One triangular mel filter, stored over its nonzero bin span only.
struct MelFilter {
    first_bin: usize,
    weights: Vec<f64>,
}

fn mel_filterbank(params: &FeatureParams, sample_rate: u32) -> Result<Vec<MelFilter>, SvError> {
    let nyquist = sample_rate as f64 / 2.0;
    let fmax = params.fmax_hz.unwrap_or(nyquist);
    if params.n_mels == 0 {
        return Err(SvError::InvalidParams("n_mels must be >= 1".into()));
    }
    if !(0.0..fmax).contains(&params.fmin_hz) || fmax > nyquist {
        return Err(SvError::InvalidParams(format!(
            "band edges {}..{} Hz invalid for Nyquist {} Hz",
            params.fmin_hz, fmax, nyquist
        )));
    }

    let n_bins = params.stft.bins();
    let mel_lo = hz_to_mel(params.fmin_hz);
    let mel_hi = hz_to_mel(fmax);
    let edges: Vec<f64> = (0..params.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (params.n_mels + 1) as f64))
        .collect();

    let bin_hz = sample_rate as f64 / params.stft.fft_len as f64;
    let mut filters = Vec::with_capacity(params.n_mels);
    for j in 0..params.n_mels {
        let (left, center, right) = (edges[j], edges[j + 1], edges[j + 2]);
        let first_bin = ((left / bin_hz).ceil() as usize).min(n_bins.saturating_sub(1));
        let last_bin = ((right / bin_hz).floor() as usize).min(n_bins - 1);
        let mut weights = Vec::with_capacity(last_bin.saturating_sub(first_bin) + 1);
        for k in first_bin..=last_bin {
            let f = k as f64 * bin_hz;
            let rising = if center > left {
                (f - left) / (center - left)
            } else {
                0.0
            };
            let falling = if right > center {
                (right - f) / (right - center)
            } else {
                0.0
            };
            weights.push(rising.min(falling).max(0.0));
        }
        filters.push(MelFilter { first_bin, weights });
    }
    Ok(filters)
}

/// Per-frame log-mel energies: triangular filters applied to `|S[k,m]|^2`,
/// floored at [`POWER_FLOOR`], then `ln`.
pub fn extract_features(
    clip: &AudioClip,
    params: &FeatureParams,
) -> Result<FeatureMatrix, SvError> {
    let filters = mel_filterbank(params, clip.sample_rate)?;
    let spec = stft(clip, &params.stft)?;
    let mut power = vec![0.0f64; params.stft.bins()];
    let rows = spec
        .frames
        .iter()
        .map(|frame| {
            for (p, c) in power.iter_mut().zip(frame) {
                *p = c.norm_sqr();
            }
            filters
                .iter()
                .map(|filter| {
                    let e: f64 = filter
                        .weights
                        .iter()
                        .zip(&power[filter.first_bin..])
                        .map(|(w, p)| w * p)
                        .sum();
                    e.max(POWER_FLOOR).ln()
                })
                .collect()
        })
        .collect();
    Ok(FeatureMatrix { rows })
}

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl Gmm {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map(|m| m.len()).unwrap_or(0)
    }

    /// Log density of one feature vector under the mixture.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut component_logs = Vec::with_capacity(self.weights.len());
        for ((w, mean), var) in self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
        {
            let mut log_p = w.ln();
            for ((&xi, &mi), &vi) in x.iter().zip(mean).zip(var) {
                let d = xi - mi;
                log_p -= 0.5 * (d * d / vi + (std::f64::consts::TAU * vi).ln());
            }
            component_logs.push(log_p);
        }
        log_sum_exp(&component_logs)
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Total log-likelihood of a feature matrix under a mixture.
pub fn log_likelihood(gmm: &Gmm, features: &FeatureMatrix) -> f64 {
    features.rows.iter().map(|row| gmm.log_density(row)).sum()
}

/// EM with per-iteration log-likelihood trace. Initialization picks
/// `n_components` distinct frames (seeded) as means, with global per-dim
/// variance and uniform weights.
fn em_fit(
    features: &FeatureMatrix,
    n_components: usize,
    em_iters: usize,
    seed: u64,
) -> Result<(Gmm, Vec<f64>), SvError> {
    let n = features.n_frames();
    let dim = features.dim();
    if n == 0 || dim == 0 {
        return Err(SvError::EmptyFeatures);
    }
    if n < n_components || n_components == 0 {
        return Err(SvError::TooFewFrames {
            rows: n,
            components: n_components,
        });
    }

    let mut global_mean = vec![0.0f64; dim];
    for row in &features.rows {
        for (g, &x) in global_mean.iter_mut().zip(row) {
            *g += x;
        }
    }
    for g in &mut global_mean {
        *g /= n as f64;
    }
    let mut global_var = vec![0.0f64; dim];
    for row in &features.rows {
        for ((v, &x), &m) in global_var.iter_mut().zip(row).zip(&global_mean) {
            *v += (x - m) * (x - m);
        }
    }
    for v in &mut global_var {
        *v = (*v / n as f64).max(VARIANCE_FLOOR);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, n, n_components);
    let mut gmm = Gmm {
        weights: vec![1.0 / n_components as f64; n_components],
        means: picks
            .iter()
            .map(|i| features.rows[i].clone())
            .collect(),
        variances: vec![global_var.clone(); n_components],
    };

    let mut lls = Vec::with_capacity(em_iters);
    let mut resp = vec![vec![0.0f64; n_components]; n];
    for _ in 0..em_iters {
        // E-step.
        for (row, r) in features.rows.iter().zip(resp.iter_mut()) {
            for (c, rc) in r.iter_mut().enumerate() {
                let mut log_p = gmm.weights[c].ln();
                for ((&xi, &mi), &vi) in row.iter().zip(&gmm.means[c]).zip(&gmm.variances[c]) {
                    let d = xi - mi;
                    log_p -= 0.5 * (d * d / vi + (std::f64::consts::TAU * vi).ln());
                }
                *rc = log_p;
            }
            let norm = log_sum_exp(r);
            for rc in r.iter_mut() {
                *rc = (*rc - norm).exp();
            }
        }

        // M-step.
        for c in 0..n_components {
            let nk: f64 = resp.iter().map(|r| r[c]).sum();
            if nk < 1e-12 {
                // Empty component: leave its parameters untouched.
                gmm.weights[c] = nk / n as f64;
                continue;
            }
            gmm.weights[c] = nk / n as f64;
            let mut mean = vec![0.0f64; dim];
            for (row, r) in features.rows.iter().zip(&resp) {
                for (m, &x) in mean.iter_mut().zip(row) {
                    *m += r[c] * x;
                }
            }
            for m in &mut mean {
                *m /= nk;
            }
            let mut var = vec![0.0f64; dim];
            for (row, r) in features.rows.iter().zip(&resp) {
                for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                    *v += r[c] * (x - m) * (x - m);
                }
            }
            for v in &mut var {
                *v = (*v / nk).max(VARIANCE_FLOOR);
            }
            gmm.means[c] = mean;
            gmm.variances[c] = var;
        }

        lls.push(log_likelihood(&gmm, features));
    }

    Ok((gmm, lls))
}

/// Train a diagonal GMM on feature rows by seeded initialization plus
/// `em_iters` EM steps.
pub fn train_gmm(
    features: &FeatureMatrix,
    n_components: usize,
    em_iters: usize,
    seed: u64,
) -> Result<Gmm, SvError> {
    em_fit(features, n_components, em_iters, seed).map(|(gmm, _)| gmm)
}

/// A complete verification system: speaker and background models, the accept
/// threshold, and the feature geometry both models were trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvModel {
    pub speaker: Gmm,
    pub background: Gmm,
    pub theta: f64,
    pub features: FeatureParams,
}

impl SvModel {
    /// Accept decision: `score >= theta`.
    pub fn accepts(&self, score: f64) -> bool {
        score >= self.theta
    }

    /// Set `theta` at the EER operating point; returns (theta, eer).
    pub fn set_threshold_eer(
        &mut self,
        legit_scores: &[f64],
        impostor_scores: &[f64],
    ) -> Result<(f64, f64), SvError> {
        let (theta, eer) = eer_threshold(legit_scores, impostor_scores)?;
        self.theta = theta;
        Ok((theta, eer))
    }
}

/// Mean per-frame log-likelihood ratio of speaker vs background.
pub fn score(model: &SvModel, clip: &AudioClip) -> Result<f64, SvError> {
    if model.speaker.dim() != model.background.dim() {
        return Err(SvError::DimensionMismatch(format!(
            "speaker dim {} vs background dim {}",
            model.speaker.dim(),
            model.background.dim()
        )));
    }
    let features = extract_features(clip, &model.features)?;
    if features.n_frames() == 0 {
        return Err(SvError::EmptyFeatures);
    }
    let total: f64 = features
        .rows
        .iter()
        .map(|row| model.speaker.log_density(row) - model.background.log_density(row))
        .sum();
    Ok(total / features.n_frames() as f64)
}

/// Threshold where the false acceptance and false rejection rates cross,
/// scanning candidates at every observed score (accept iff `score >= theta`).
/// Ties in `|FAR - FRR|` break toward lower FAR, then toward smaller theta.
/// Returns `(theta, eer)` with `eer = (FAR + FRR) / 2` at the chosen theta.
pub fn eer_threshold(
    legit_scores: &[f64],
    impostor_scores: &[f64],
) -> Result<(f64, f64), SvError> {
    if legit_scores.is_empty() || impostor_scores.is_empty() {
        return Err(SvError::EmptyScores);
    }
    let mut candidates: Vec<f64> = legit_scores
        .iter()
        .chain(impostor_scores)
        .copied()
        .collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();

    let mut best: Option<(f64, f64, f64)> = None; // (theta, far, frr)
    for &theta in &candidates {
        let far = impostor_scores.iter().filter(|&&s| s >= theta).count() as f64
            / impostor_scores.len() as f64;
        let frr =
            legit_scores.iter().filter(|&&s| s < theta).count() as f64 / legit_scores.len() as f64;
        let better = match best {
            None => true,
            Some((_, bfar, bfrr)) => {
                let (d, bd) = ((far - frr).abs(), (bfar - bfrr).abs());
                d < bd - 1e-15 || ((d - bd).abs() <= 1e-15 && far < bfar)
            }
        };
        if better {
            best = Some((theta, far, frr));
        }
    }
    let (theta, far, frr) = best.expect("candidates nonempty");
    Ok((theta, (far + frr) / 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{synth_audio, SynthSpec};
    use rand::Rng;

    fn voice_spec(freqs: &[f64]) -> SynthSpec {
        SynthSpec {
            duration_s: 1.5,
            n_bursts: 3,
            burst_freqs: freqs.to_vec(),
            burst_amplitude: 0.5,
            gap_fraction: 0.3,
            floor_noise_sigma: 1e-4,
        }
    }

    fn random_features(n: usize, dim: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|_| {
                (0..dim)
                    .map(|d| {
                        let center = if rng.random_bool(0.5) { -2.0 } else { 3.0 };
                        center + d as f64 * 0.1 + rng.random_range(-1.0..1.0)
                    })
                    .collect()
            })
            .collect();
        FeatureMatrix { rows }
    }

    #[test]
    fn zero_clip_features_sit_on_the_power_floor() {
        let clip = AudioClip::new(vec![0.0; 2000], 16000);
        let features = extract_features(&clip, &FeatureParams::default()).unwrap();
        let expected = POWER_FLOOR.ln();
        assert_eq!(features.dim(), 20);
        for row in &features.rows {
            for &v in row {
                assert_eq!(v, expected);
            }
        }
    }

    #[test]
    fn feature_frame_count_matches_stft() {
        let clip = synth_audio(&voice_spec(&[500.0, 1500.0]), 16000, 3).unwrap();
        let params = FeatureParams::default();
        let features = extract_features(&clip, &params).unwrap();
        let expected = crate::stft::frame_count(clip.len(), &params.stft).unwrap();
        assert_eq!(features.n_frames(), expected);
    }

    #[test]
    fn doubling_amplitude_adds_log4_to_every_entry() {
        let spec = SynthSpec {
            burst_amplitude: 0.45,
            floor_noise_sigma: 1e-3,
            ..voice_spec(&[500.0, 1500.0, 2500.0])
        };
        let clip = synth_audio(&spec, 16000, 8).unwrap();
        let doubled = AudioClip::new(clip.samples.iter().map(|s| 2.0 * s).collect(), 16000);
        let params = FeatureParams::default();
        let f1 = extract_features(&clip, &params).unwrap();
        let f2 = extract_features(&doubled, &params).unwrap();
        let log4 = 4f64.ln();
        for (r1, r2) in f1.rows.iter().zip(&f2.rows) {
            for (&a, &b) in r1.iter().zip(r2) {
                assert!((b - a - log4).abs() < 1e-6, "{a} -> {b}");
            }
        }
    }

    #[test]
    fn single_component_gmm_recovers_empirical_moments() {
        let features = random_features(400, 3, 5);
        let gmm = train_gmm(&features, 1, 10, 0).unwrap();
        let n = features.n_frames() as f64;
        for d in 0..3 {
            let mean: f64 = features.rows.iter().map(|r| r[d]).sum::<f64>() / n;
            let var: f64 = features
                .rows
                .iter()
                .map(|r| (r[d] - mean).powi(2))
                .sum::<f64>()
                / n;
            assert!((gmm.means[0][d] - mean).abs() < 1e-9);
            assert!((gmm.variances[0][d] - var.max(VARIANCE_FLOOR)).abs() < 1e-9);
        }
        assert!((gmm.weights[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn em_log_likelihood_is_nondecreasing() {
        let features = random_features(300, 4, 11);
        let (_, lls) = em_fit(&features, 6, 25, 2).unwrap();
        for w in lls.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "LL dropped: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn training_is_deterministic_per_seed_and_survives_degenerate_input() {
        let features = random_features(200, 3, 21);
        let a = train_gmm(&features, 4, 12, 9).unwrap();
        let b = train_gmm(&features, 4, 12, 9).unwrap();
        assert_eq!(a, b);

        let constant = FeatureMatrix {
            rows: vec![vec![1.5, -2.0]; 50],
        };
        let gmm = train_gmm(&constant, 3, 10, 0).unwrap();
        for c in 0..gmm.n_components() {
            for d in 0..gmm.dim() {
                assert!(gmm.variances[c][d] >= VARIANCE_FLOOR);
                assert!(gmm.means[c][d].is_finite());
            }
        }
        assert!(log_likelihood(&gmm, &constant).is_finite());
    }

    #[test]
    fn too_few_rows_is_an_error() {
        let features = random_features(3, 2, 0);
        assert!(matches!(
            train_gmm(&features, 8, 5, 0),
            Err(SvError::TooFewFrames { rows: 3, components: 8 })
        ));
    }

    #[test]
    fn gmm_density_integrates_to_one_in_1d() {
        let gmm = Gmm {
            weights: vec![0.3, 0.7],
            means: vec![vec![-1.0], vec![2.0]],
            variances: vec![vec![0.5], vec![1.5]],
        };
        let (lo, hi, steps) = (-40.0f64, 40.0f64, 40_000usize);
        let h = (hi - lo) / steps as f64;
        let mut integral = 0.0;
        for i in 0..=steps {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            integral += w * gmm.log_density(&[x]).exp();
        }
        integral *= h;
        assert!((integral - 1.0).abs() < 1e-3, "integral {integral}");
    }

    #[test]
    fn identical_models_score_zero() {
        let features = random_features(150, 20, 4);
        let gmm = train_gmm(&features, 2, 8, 1).unwrap();
        let model = SvModel {
            speaker: gmm.clone(),
            background: gmm,
            theta: 0.0,
            features: FeatureParams::default(),
        };
        let clip = synth_audio(&voice_spec(&[600.0, 1700.0]), 16000, 50).unwrap();
        let s = score(&model, &clip).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn speaker_clips_outscore_other_voice() {
        let a_freqs = [500.0, 1500.0, 2500.0];
        let b_freqs = [750.0, 1950.0, 3200.0];
        let mut a_rows = Vec::new();
        let mut all_rows = Vec::new();
        let mut a_clips = Vec::new();
        for seed in 0..6u64 {
            let clip = synth_audio(&voice_spec(&a_freqs), 16000, seed).unwrap();
            let f = extract_features(&clip, &FeatureParams::default()).unwrap();
            a_rows.extend(f.rows.iter().cloned());
            all_rows.extend(f.rows);
            a_clips.push(clip);
        }
        for seed in 100..106u64 {
            let clip = synth_audio(&voice_spec(&b_freqs), 16000, seed).unwrap();
            let f = extract_features(&clip, &FeatureParams::default()).unwrap();
            all_rows.extend(f.rows);
        }
        let speaker = train_gmm(&FeatureMatrix { rows: a_rows }, 8, 30, 7).unwrap();
        let background = train_gmm(&FeatureMatrix { rows: all_rows }, 8, 30, 7).unwrap();
        let model = SvModel {
            speaker,
            background,
            theta: 0.0,
            features: FeatureParams::default(),
        };

        let mut wins = 0;
        let trials = 20;
        for t in 0..trials {
            let a = &a_clips[t % a_clips.len()];
            let b = synth_audio(&voice_spec(&b_freqs), 16000, 1000 + t as u64).unwrap();
            if score(&model, a).unwrap() > score(&model, &b).unwrap() {
                wins += 1;
            }
        }
        assert!(wins * 10 >= trials * 9, "only {wins}/{trials} separations");
    }

    #[test]
    fn eer_threshold_matches_hand_enumeration() {
        let (theta, eer) = eer_threshold(&[1.0, 2.0, 3.0], &[-3.0, -2.0, -1.0]).unwrap();
        assert_eq!(theta, 1.0);
        assert_eq!(eer, 0.0);

        let scores = [1.0, 2.0, 3.0, 4.0];
        let (_, eer) = eer_threshold(&scores, &scores).unwrap();
        assert!((eer - 0.5).abs() < 1e-12);

        let (theta, eer) = eer_threshold(&[0.0, 2.0], &[-2.0, 0.0]).unwrap();
        assert_eq!(theta, 2.0);
        assert!((eer - 0.25).abs() < 1e-12);

        assert!(matches!(
            eer_threshold(&[], &[1.0]),
            Err(SvError::EmptyScores)
        ));
    }

    #[test]
    fn model_roundtrips_through_json() {
        let features = random_features(60, 4, 2);
        let gmm = train_gmm(&features, 3, 5, 3).unwrap();
        let model = SvModel {
            speaker: gmm.clone(),
            background: gmm,
            theta: 1.25,
            features: FeatureParams::default(),
        };
        let json = serde_json::to_string(&model).unwrap();
        let back: SvModel = serde_json::from_str(&json).unwrap();
        assert_eq!(model, back);
    }
}
