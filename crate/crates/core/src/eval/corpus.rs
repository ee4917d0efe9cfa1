//! Corpus manifests: labeled clips sourced from WAV files or from synthetic
//! generation specs, plus a two-voice synthetic corpus builder.

use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::audio::{load_wav, synth_audio, AudioClip, SynthSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Legit,
    Impostor,
}

/// Where a clip comes from: a WAV on disk or a deterministic synthesis spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipSource {
    Path(PathBuf),
    Synth {
        spec: SynthSpec,
        sample_rate: u32,
        seed: u64,
    },
}

impl ClipSource {
    pub fn materialize(&self) -> Result<AudioClip, EvalError> {
        match self {
            ClipSource::Path(path) => Ok(load_wav(path)?),
            ClipSource::Synth {
                spec,
                sample_rate,
                seed,
            } => Ok(synth_audio(spec, *sample_rate, *seed)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub source: ClipSource,
    pub label: Label,
}

/// A labeled clip list, loadable from JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub clips: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.to_owned(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| EvalError::Json {
            path: path.to_owned(),
            source,
        })
    }

    pub fn materialize(&self) -> Result<Vec<(AudioClip, Label)>, EvalError> {
        self.clips
            .iter()
            .map(|entry| Ok((entry.source.materialize()?, entry.label)))
            .collect()
    }
}

/// Where an experiment's corpus comes from: an explicit manifest or a
/// synthetic corpus recipe expanded at run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    Manifest(Manifest),
    Synth(SynthCorpusConfig),
}

/// Spectral identity of one synthetic "voice".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiceProfile {
    pub burst_freqs: Vec<f64>,
    pub n_bursts: usize,
    pub burst_amplitude: f64,
    pub gap_fraction: f64,
}

/// Deterministic two-voice corpus: legit and impostor clips share structure
/// but differ in burst frequencies, with per-clip jitter in frequency,
/// amplitude, and noise floor (sampled log-uniformly) so calibration sees a
/// realistic spread of metric values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpusConfig {
    pub n_legit: usize,
    pub n_impostor: usize,
    pub sample_rate: u32,
    pub duration_s: f64,
    pub legit_voice: VoiceProfile,
    pub impostor_voice: VoiceProfile,
    /// Per-clip uniform jitter applied to every burst frequency, in Hz.
    pub freq_jitter_hz: f64,
    /// Per-clip relative amplitude jitter (0.1 means +/- 10%).
    pub amplitude_jitter: f64,
    /// Per-clip noise floor, drawn log-uniformly from this range.
    pub floor_sigma_range: (f64, f64),
    pub seed: u64,
}

impl SynthCorpusConfig {
    /// A corpus with two cleanly separable voices over a quiet noise floor.
    /// Good for detector calibration and separation tests; verification
    /// scores for the two voices barely overlap.
    pub fn two_voices(n_legit: usize, n_impostor: usize, seed: u64) -> Self {
        Self {
            n_legit,
            n_impostor,
            sample_rate: 16000,
            duration_s: 2.0,
            legit_voice: VoiceProfile {
                burst_freqs: vec![500.0, 1500.0, 2500.0],
                n_bursts: 3,
                burst_amplitude: 0.5,
                gap_fraction: 0.35,
            },
            impostor_voice: VoiceProfile {
                burst_freqs: vec![620.0, 1700.0, 2780.0],
                n_bursts: 3,
                burst_amplitude: 0.5,
                gap_fraction: 0.35,
            },
            freq_jitter_hz: 60.0,
            amplitude_jitter: 0.15,
            floor_sigma_range: (1e-5, 6e-5),
            seed,
        }
    }

    /// A corpus whose two voices overlap enough that score-based attacks can
    /// make headway: nearby burst frequencies with wide per-clip jitter (the
    /// system's EER is visibly nonzero, so rejected impostors sit near the
    /// threshold) and a noise floor high enough that attack-scale probes and
    /// steps move the score smoothly instead of saturating quiet frames.
    pub fn overlapping_voices(n_legit: usize, n_impostor: usize, seed: u64) -> Self {
        Self {
            n_legit,
            n_impostor,
            sample_rate: 16000,
            duration_s: 2.0,
            legit_voice: VoiceProfile {
                burst_freqs: vec![500.0, 1500.0, 2500.0],
                n_bursts: 3,
                burst_amplitude: 0.5,
                gap_fraction: 0.35,
            },
            impostor_voice: VoiceProfile {
                burst_freqs: vec![560.0, 1560.0, 2560.0],
                n_bursts: 3,
                burst_amplitude: 0.5,
                gap_fraction: 0.35,
            },
            freq_jitter_hz: 80.0,
            amplitude_jitter: 0.15,
            floor_sigma_range: (2e-3, 3.2e-3),
            seed,
        }
    }

    fn clip_spec(&self, voice: &VoiceProfile, rng: &mut ChaCha8Rng) -> SynthSpec {
        let freqs = voice
            .burst_freqs
            .iter()
            .map(|f| f + rng.random_range(-self.freq_jitter_hz..=self.freq_jitter_hz))
            .collect();
        let amplitude = voice.burst_amplitude
            * (1.0 + rng.random_range(-self.amplitude_jitter..=self.amplitude_jitter));
        let (lo, hi) = self.floor_sigma_range;
        let floor = if hi > lo && lo > 0.0 {
            (rng.random_range(lo.ln()..=hi.ln())).exp()
        } else {
            lo
        };
        SynthSpec {
            duration_s: self.duration_s,
            n_bursts: voice.n_bursts,
            burst_freqs: freqs,
            burst_amplitude: amplitude.clamp(0.0, 1.0),
            gap_fraction: voice.gap_fraction,
            floor_noise_sigma: floor,
        }
    }

    /// Expand into a manifest of synth entries, deterministically from `seed`.
    pub fn manifest(&self) -> Manifest {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut clips = Vec::with_capacity(self.n_legit + self.n_impostor);
        for _ in 0..self.n_legit {
            let spec = self.clip_spec(&self.legit_voice, &mut rng);
            clips.push(ManifestEntry {
                source: ClipSource::Synth {
                    spec,
                    sample_rate: self.sample_rate,
                    seed: rng.next_u64(),
                },
                label: Label::Legit,
            });
        }
        for _ in 0..self.n_impostor {
            let spec = self.clip_spec(&self.impostor_voice, &mut rng);
            clips.push(ManifestEntry {
                source: ClipSource::Synth {
                    spec,
                    sample_rate: self.sample_rate,
                    seed: rng.next_u64(),
                },
                label: Label::Impostor,
            });
        }
        Manifest { clips }
    }
}
