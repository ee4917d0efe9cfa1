//! The attacker-vs-defender grid: for each (epsilon, attack order) cell,
//! generate adaptive adversarial clips against a trained verification model,
//! calibrate a detector one order above the attack, and measure FPR, FNR,
//! and attack success.
//!
//! Everything is derived deterministically from the config's master seed;
//! rayon only affects wall-clock time, not results.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corpus::{CorpusSource, Label};
use super::{asr, fmt_sig9, EvalError};
use crate::attack::{
    linf_distance, AttackParams, AttackResult, DetectorGeometry, FrozenFrame,
};
use crate::audio::AudioClip;
use crate::defense::defended_score;
use crate::detector::{default_spacing, detect, DetectorProfile, Verdict};
use crate::stft::StftParams;
use crate::sv::{extract_features, score, train_gmm, FeatureMatrix, FeatureParams, SvModel};

/// Detector configuration shared by every cell; the order is set per cell to
/// one above the attack order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorTemplate {
    pub stft: StftParams,
    pub freq_threshold_bin: usize,
    /// `None` uses `ceil(N / H)`.
    pub spacing: Option<usize>,
    pub calibration_k: f64,
    pub sample_rate: u32,
}

impl Default for DetectorTemplate {
    fn default() -> Self {
        Self {
            stft: StftParams::default(),
            freq_threshold_bin: 224,
            spacing: None,
            calibration_k: 3.0,
            sample_rate: 16000,
        }
    }
}

impl DetectorTemplate {
    pub fn spacing(&self) -> usize {
        self.spacing.unwrap_or_else(|| default_spacing(&self.stft))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSettings {
    pub max_iters: usize,
    pub nes_samples: usize,
    pub nes_sigma: f64,
    /// `None` uses `epsilon / 10`.
    pub learning_rate: Option<f64>,
    /// Cap on how many rejected impostor clips each cell attacks.
    pub max_attack_clips: usize,
}

impl Default for AttackSettings {
    fn default() -> Self {
        Self {
            max_iters: 200,
            nes_samples: 50,
            nes_sigma: 1e-3,
            learning_rate: None,
            max_attack_clips: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvSettings {
    pub n_components: usize,
    pub em_iters: usize,
}

impl Default for SvSettings {
    fn default() -> Self {
        Self {
            n_components: 8,
            em_iters: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus: CorpusSource,
    /// Fraction of originals used for calibration (and SV training).
    pub train_fraction: f64,
    pub detector: DetectorTemplate,
    pub epsilons: Vec<f64>,
    /// Attack orders `n`; each cell's detector runs at order `n + 1`.
    pub attack_orders: Vec<usize>,
    pub attack: AttackSettings,
    pub sv: SvSettings,
    /// When set, adversarial clips are additionally scored under the
    /// noise-adding defense at this sigma.
    pub defense_noise_sigma: Option<f64>,
    pub master_seed: u64,
}

impl ExperimentConfig {
    fn validate(&self) -> Result<(), EvalError> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(EvalError::InvalidConfig(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.epsilons.is_empty() || self.attack_orders.is_empty() {
            return Err(EvalError::InvalidConfig(
                "epsilons and attack_orders must be non-empty".into(),
            ));
        }
        Ok(())
    }
}

/// One grid cell's metrics. Rates are NaN on error rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub epsilon: f64,
    pub n_attack: usize,
    pub n_detector: usize,
    pub threshold: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub asr: f64,
    pub asr_defended: Option<f64>,
    pub mean_e_original: f64,
    pub mean_e_adversarial: f64,
    pub error: Option<String>,
}

/// Wall-clock runtimes, kept apart from the metrics so report files stay
/// byte-reproducible under a fixed seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub epsilon: f64,
    pub n_attack: usize,
    pub attack_seconds: f64,
    pub detect_seconds: f64,
}

/// Per-attack bookkeeping for invariant auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackAudit {
    pub clip_index: usize,
    pub success: bool,
    pub iterations_used: usize,
    pub queries: usize,
    pub nes_samples: usize,
    pub epsilon: f64,
    pub linf: f64,
    pub frozen_frames: Vec<FrozenFrame>,
}

/// Everything a cell produced beyond its summary row.
#[derive(Debug, Clone)]
pub struct CellDetail {
    pub epsilon: f64,
    pub n_attack: usize,
    pub audits: Vec<AttackAudit>,
    /// Metric `E_{n_det}` per test original.
    pub original_metrics: Vec<f64>,
    /// Metric `E_{n_det}` per adversarial clip.
    pub adversarial_metrics: Vec<f64>,
    /// Originals that were attacked and their adversarial outputs; populated
    /// only when [`GameOptions::keep_audio`] is set.
    pub attacked_originals: Vec<AudioClip>,
    pub adversarials: Vec<AudioClip>,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub rows: Vec<CellRow>,
    pub timings: Vec<CellTiming>,
    pub details: Vec<CellDetail>,
    pub sv_eer: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GameOptions {
    /// Keep original and adversarial waveforms in [`CellDetail`].
    pub keep_audio: bool,
}

const TAG_SPLIT: u64 = 0x5350_4c49;
const TAG_SV_SPEAKER: u64 = 0x5356_5350;
const TAG_SV_BACKGROUND: u64 = 0x5356_4247;
const TAG_ATTACK: u64 = 0x4154_4b31;
const TAG_DEFENSE: u64 = 0x4445_4631;

fn mix_seed(master: u64, tag: u64, index: u64) -> u64 {
    let mut z = master
        ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

struct Prepared {
    clips: Vec<(AudioClip, Label)>,
    train_idx: Vec<usize>,
    test_idx: Vec<usize>,
    sv: SvModel,
    sv_eer: f64,
    attack_sources: Vec<usize>,
}

fn prepare(config: &ExperimentConfig) -> Result<Prepared, EvalError> {
    let manifest = match &config.corpus {
        CorpusSource::Manifest(m) => m.clone(),
        CorpusSource::Synth(synth) => synth.manifest(),
    };
    let clips = manifest.materialize()?;
    if clips.is_empty() {
        return Err(EvalError::EmptySet("corpus"));
    }

    let mut indices: Vec<usize> = (0..clips.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.master_seed, TAG_SPLIT, 0));
    indices.shuffle(&mut rng);
    let n_train = ((clips.len() as f64 * config.train_fraction).round() as usize)
        .clamp(1, clips.len() - 1);
    let train_idx: Vec<usize> = indices[..n_train].to_vec();
    let test_idx: Vec<usize> = indices[n_train..].to_vec();

    let feature_params = FeatureParams {
        stft: config.detector.stft,
        ..FeatureParams::default()
    };
    let mut speaker_rows = Vec::new();
    let mut background_rows = Vec::new();
    for &i in &train_idx {
        let (clip, label) = &clips[i];
        let features = extract_features(clip, &feature_params)?;
        if *label == Label::Legit {
            speaker_rows.extend(features.rows.iter().cloned());
        }
        background_rows.extend(features.rows);
    }
    if speaker_rows.is_empty() {
        return Err(EvalError::InvalidConfig(
            "training split contains no legit clips".into(),
        ));
    }
    let speaker = train_gmm(
        &FeatureMatrix { rows: speaker_rows },
        config.sv.n_components,
        config.sv.em_iters,
        mix_seed(config.master_seed, TAG_SV_SPEAKER, 0),
    )?;
    let background = train_gmm(
        &FeatureMatrix {
            rows: background_rows,
        },
        config.sv.n_components,
        config.sv.em_iters,
        mix_seed(config.master_seed, TAG_SV_BACKGROUND, 0),
    )?;
    let mut sv = SvModel {
        speaker,
        background,
        theta: 0.0,
        features: feature_params,
    };

    let mut legit_scores = Vec::new();
    let mut impostor_scores = Vec::new();
    for &i in &train_idx {
        let (clip, label) = &clips[i];
        let s = score(&sv, clip)?;
        match label {
            Label::Legit => legit_scores.push(s),
            Label::Impostor => impostor_scores.push(s),
        }
    }
    if impostor_scores.is_empty() {
        return Err(EvalError::InvalidConfig(
            "training split contains no impostor clips".into(),
        ));
    }
    let (_, sv_eer) = sv.set_threshold_eer(&legit_scores, &impostor_scores)?;

    // Attack sources: impostor clips the system rejects, in corpus order.
    let mut attack_sources = Vec::new();
    for (i, (clip, label)) in clips.iter().enumerate() {
        if *label == Label::Impostor && !sv.accepts(score(&sv, clip)?) {
            attack_sources.push(i);
            if attack_sources.len() == config.attack.max_attack_clips {
                break;
            }
        }
    }

    Ok(Prepared {
        clips,
        train_idx,
        test_idx,
        sv,
        sv_eer,
        attack_sources,
    })
}

struct CellOutcome {
    row: CellRow,
    timing: CellTiming,
    detail: CellDetail,
}

fn run_cell(
    config: &ExperimentConfig,
    prepared: &Prepared,
    options: &GameOptions,
    cell_index: usize,
    epsilon: f64,
    n_attack: usize,
) -> Result<CellOutcome, EvalError> {
    let n_detector = n_attack + 1;
    let spacing = config.detector.spacing();

    if prepared.attack_sources.is_empty() {
        return Err(EvalError::InvalidConfig(
            "no rejected impostor clips available to attack".into(),
        ));
    }

    // Calibrate D_1..D_{n_det} on the training originals.
    let train_clips: Vec<AudioClip> = prepared
        .train_idx
        .iter()
        .map(|&i| prepared.clips[i].0.clone())
        .collect();
    let calibration = super::calibrate_order_stats(
        &train_clips,
        &config.detector.stft,
        config.detector.freq_threshold_bin,
        spacing,
        config.detector.calibration_k,
        n_detector,
    )?;
    let profile = DetectorProfile {
        stft: config.detector.stft,
        freq_threshold_bin: config.detector.freq_threshold_bin,
        order: n_detector,
        spacing,
        thresholds: calibration.iter().map(|c| c.threshold).collect(),
        calibration_k: config.detector.calibration_k,
        sample_rate: config.detector.sample_rate,
    };
    let threshold = profile.threshold()?;

    // Attack every source clip with this cell's parameters.
    let attack_started = Instant::now();
    let geometry = DetectorGeometry {
        stft: config.detector.stft,
        freq_threshold_bin: config.detector.freq_threshold_bin,
        spacing,
    };
    let results: Vec<Result<AttackResult, EvalError>> = prepared
        .attack_sources
        .par_iter()
        .enumerate()
        .map(|(j, &clip_index)| {
            let params = AttackParams {
                epsilon,
                max_iters: config.attack.max_iters,
                learning_rate: config.attack.learning_rate.unwrap_or(epsilon / 10.0),
                nes_samples: config.attack.nes_samples,
                nes_sigma: config.attack.nes_sigma,
                seed: mix_seed(
                    config.master_seed,
                    TAG_ATTACK,
                    (cell_index as u64) << 32 | j as u64,
                ),
                freeze_order: n_attack,
                detector_geometry: (n_attack > 0).then_some(geometry),
            };
            let original = &prepared.clips[clip_index].0;
            let result = if n_attack == 0 {
                crate::attack::fakebob(original, &prepared.sv, &params)
            } else {
                crate::attack::nth_fakebob(original, &prepared.sv, &params)
            };
            Ok(result?)
        })
        .collect();
    let results: Vec<AttackResult> = results.into_iter().collect::<Result<_, _>>()?;
    let attack_seconds = attack_started.elapsed().as_secs_f64();

    let asr_value = asr(&results)?;

    let mut audits = Vec::with_capacity(results.len());
    for (j, result) in results.iter().enumerate() {
        let clip_index = prepared.attack_sources[j];
        audits.push(AttackAudit {
            clip_index,
            success: result.success,
            iterations_used: result.iterations_used,
            queries: result.queries,
            nes_samples: config.attack.nes_samples,
            epsilon,
            linf: linf_distance(&result.adversarial, &prepared.clips[clip_index].0)?,
            frozen_frames: result.frozen_frames.clone(),
        });
    }

    // Detection: FPR over held-out originals, FNR over all attack outputs
    // (failed attacks included).
    let detect_started = Instant::now();
    let mut original_metrics = Vec::with_capacity(prepared.test_idx.len());
    let mut false_positives = 0usize;
    for &i in &prepared.test_idx {
        let (verdict, report) = detect(&prepared.clips[i].0, &profile)?;
        original_metrics.push(report.metric());
        if verdict == Verdict::Adversarial {
            false_positives += 1;
        }
    }
    let mut adversarial_metrics = Vec::with_capacity(results.len());
    let mut false_negatives = 0usize;
    for result in &results {
        let (verdict, report) = detect(&result.adversarial, &profile)?;
        adversarial_metrics.push(report.metric());
        if verdict == Verdict::Original {
            false_negatives += 1;
        }
    }
    let detect_seconds = detect_started.elapsed().as_secs_f64();

    let fpr = false_positives as f64 / prepared.test_idx.len() as f64;
    let fnr = false_negatives as f64 / results.len() as f64;

    let asr_defended = match config.defense_noise_sigma {
        Some(sigma) => {
            let mut accepted = 0usize;
            for (j, result) in results.iter().enumerate() {
                let seed = mix_seed(
                    config.master_seed,
                    TAG_DEFENSE,
                    (cell_index as u64) << 32 | j as u64,
                );
                let s = defended_score(&prepared.sv, &result.adversarial, sigma, seed)?;
                if prepared.sv.accepts(s) {
                    accepted += 1;
                }
            }
            Some(accepted as f64 / results.len() as f64)
        }
        None => None,
    };

    let (attacked_originals, adversarials) = if options.keep_audio {
        (
            prepared
                .attack_sources
                .iter()
                .map(|&i| prepared.clips[i].0.clone())
                .collect(),
            results.iter().map(|r| r.adversarial.clone()).collect(),
        )
    } else {
        (Vec::new(), Vec::new())
    };

    Ok(CellOutcome {
        row: CellRow {
            epsilon,
            n_attack,
            n_detector,
            threshold,
            fpr,
            fnr,
            asr: asr_value,
            asr_defended,
            mean_e_original: mean(&original_metrics),
            mean_e_adversarial: mean(&adversarial_metrics),
            error: None,
        },
        timing: CellTiming {
            epsilon,
            n_attack,
            attack_seconds,
            detect_seconds,
        },
        detail: CellDetail {
            epsilon,
            n_attack,
            audits,
            original_metrics,
            adversarial_metrics,
            attacked_originals,
            adversarials,
        },
    })
}

/// Run the full (epsilon, attack order) grid. A failing cell produces an
/// error row; the run continues.
pub fn run_game(config: &ExperimentConfig, options: &GameOptions) -> Result<Report, EvalError> {
    config.validate()?;
    let prepared = prepare(config)?;

    let mut rows = Vec::new();
    let mut timings = Vec::new();
    let mut details = Vec::new();
    let mut cell_index = 0usize;
    for &epsilon in &config.epsilons {
        for &n_attack in &config.attack_orders {
            match run_cell(config, &prepared, options, cell_index, epsilon, n_attack) {
                Ok(outcome) => {
                    rows.push(outcome.row);
                    timings.push(outcome.timing);
                    details.push(outcome.detail);
                }
                Err(err) => {
                    rows.push(CellRow {
                        epsilon,
                        n_attack,
                        n_detector: n_attack + 1,
                        threshold: f64::NAN,
                        fpr: f64::NAN,
                        fnr: f64::NAN,
                        asr: f64::NAN,
                        asr_defended: None,
                        mean_e_original: f64::NAN,
                        mean_e_adversarial: f64::NAN,
                        error: Some(err.to_string()),
                    });
                    timings.push(CellTiming {
                        epsilon,
                        n_attack,
                        attack_seconds: 0.0,
                        detect_seconds: 0.0,
                    });
                    details.push(CellDetail {
                        epsilon,
                        n_attack,
                        audits: Vec::new(),
                        original_metrics: Vec::new(),
                        adversarial_metrics: Vec::new(),
                        attacked_originals: Vec::new(),
                        adversarials: Vec::new(),
                    });
                }
            }
            cell_index += 1;
        }
    }

    Ok(Report {
        rows,
        timings,
        details,
        sv_eer: prepared.sv_eer,
        theta: prepared.sv.theta,
    })
}

impl Report {
    /// Grid metrics, one row per cell. Error cells carry empty metric fields
    /// and the error message in `status`.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(
            "epsilon,n_attack,n_detector,threshold,fpr,fnr,asr,asr_defended,\
             mean_e_original,mean_e_adversarial,status\n",
        );
        for row in &self.rows {
            if let Some(err) = &row.error {
                out.push_str(&format!(
                    "{},{},{},,,,,,,,\"error: {}\"\n",
                    fmt_sig9(row.epsilon),
                    row.n_attack,
                    row.n_detector,
                    err.replace('"', "'")
                ));
            } else {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},ok\n",
                    fmt_sig9(row.epsilon),
                    row.n_attack,
                    row.n_detector,
                    fmt_sig9(row.threshold),
                    fmt_sig9(row.fpr),
                    fmt_sig9(row.fnr),
                    fmt_sig9(row.asr),
                    row.asr_defended.map(fmt_sig9).unwrap_or_default(),
                    fmt_sig9(row.mean_e_original),
                    fmt_sig9(row.mean_e_adversarial),
                ));
            }
        }
        out
    }

    /// Wall-clock runtimes per cell; not byte-reproducible by nature, so kept
    /// out of `metrics_csv`.
    pub fn timings_csv(&self) -> String {
        let mut out = String::from("epsilon,n_attack,attack_seconds,detect_seconds\n");
        for t in &self.timings {
            out.push_str(&format!(
                "{},{},{:.3},{:.3}\n",
                fmt_sig9(t.epsilon),
                t.n_attack,
                t.attack_seconds,
                t.detect_seconds
            ));
        }
        out
    }

    /// Per-clip detection log across all cells.
    pub fn per_clip_csv(&self) -> String {
        let mut out = String::from("epsilon,n_attack,kind,clip,metric,threshold,verdict\n");
        for (row, detail) in self.rows.iter().zip(&self.details) {
            if row.error.is_some() {
                continue;
            }
            for (kind, metrics) in [
                ("original", &detail.original_metrics),
                ("adversarial", &detail.adversarial_metrics),
            ] {
                for (i, &metric) in metrics.iter().enumerate() {
                    let verdict = if metric > row.threshold {
                        "adversarial"
                    } else {
                        "original"
                    };
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{}\n",
                        fmt_sig9(row.epsilon),
                        row.n_attack,
                        kind,
                        i,
                        fmt_sig9(metric),
                        fmt_sig9(row.threshold),
                        verdict
                    ));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::corpus::SynthCorpusConfig;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            corpus: CorpusSource::Synth(SynthCorpusConfig::two_voices(12, 6, 5)),
            train_fraction: 0.8,
            detector: DetectorTemplate::default(),
            epsilons: vec![0.01],
            attack_orders: vec![0],
            attack: AttackSettings {
                max_iters: 4,
                nes_samples: 6,
                max_attack_clips: 3,
                ..AttackSettings::default()
            },
            sv: SvSettings {
                n_components: 4,
                em_iters: 8,
            },
            defense_noise_sigma: Some(5e-4),
            master_seed: 77,
        }
    }

    #[test]
    fn grid_runs_deterministically() {
        let config = tiny_config();
        let a = run_game(&config, &GameOptions::default()).unwrap();
        let b = run_game(&config, &GameOptions::default()).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.metrics_csv(), b.metrics_csv());
        assert_eq!(a.per_clip_csv(), b.per_clip_csv());
        assert_eq!(a.rows.len(), 1);

        let row = &a.rows[0];
        assert!(row.error.is_none(), "{:?}", row.error);
        for rate in [row.fpr, row.fnr, row.asr, row.asr_defended.unwrap()] {
            assert!((0.0..=1.0).contains(&rate), "rate {rate} out of range");
        }
        assert!(row.threshold > 0.0);
        assert_eq!(a.details[0].audits.len(), 3);
        for audit in &a.details[0].audits {
            assert!(audit.linf <= 0.01 + 1e-12);
            assert_eq!(
                audit.queries,
                1 + audit.iterations_used * (audit.nes_samples + 1)
            );
        }
    }

    #[test]
    fn keep_audio_retains_waveforms() {
        let config = tiny_config();
        let report = run_game(&config, &GameOptions { keep_audio: true }).unwrap();
        assert_eq!(report.details[0].adversarials.len(), 3);
        assert_eq!(report.details[0].attacked_originals.len(), 3);
        for (orig, adv) in report.details[0]
            .attacked_originals
            .iter()
            .zip(&report.details[0].adversarials)
        {
            assert_eq!(orig.len(), adv.len());
        }
    }

    #[test]
    fn invalid_config_is_rejected_and_bad_cells_become_error_rows() {
        let mut config = tiny_config();
        config.train_fraction = 1.5;
        assert!(matches!(
            run_game(&config, &GameOptions::default()),
            Err(EvalError::InvalidConfig(_))
        ));

        // A grid whose second order is infeasible for the corpus (order 50
        // needs more spaced frames than these little clips can give).
        let mut config = tiny_config();
        config.attack_orders = vec![0, 49];
        let report = run_game(&config, &GameOptions::default()).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert!(report.rows[0].error.is_none());
        assert!(report.rows[1].error.is_some());
        let csv = report.metrics_csv();
        assert!(csv.contains("ok"));
        assert!(csv.contains("error:"));
    }
}
