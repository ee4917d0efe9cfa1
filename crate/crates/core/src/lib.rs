//! Detection of adversarial audio by minimum high-band energy, and the
//! machinery to stress it.
//!
//! Adversarial perturbations against score-based speaker verification behave
//! like low-level white noise across the whole clip. In the short-time
//! periods where speech is absent, an unmodified recording carries almost no
//! energy above ~7 kHz, so the *minimum* over STFT frames of the high-band
//! energy separates perturbed audio from clean audio by orders of magnitude.
//!
//! The crate provides:
//!
//! - [`audio`]: WAV PCM16 I/O, synthetic speech-like test signals, white
//!   noise injection.
//! - [`stft`]: Hann-windowed short-time Fourier transform with no edge
//!   padding, so frame energies are pure functions of the samples they cover.
//! - [`detector`]: the band-energy metric, spaced n-th minimum selection,
//!   threshold calibration, and verdicts.
//! - [`theory`]: closed-form and Monte Carlo predictions of the metric under
//!   white noise (chi-squared minima), and the detectability boundary
//!   `sigma_D`.
//! - [`sv`]: a small GMM log-likelihood-ratio speaker verification model that
//!   supplies the score function and threshold attacks operate against.
//! - [`attack`]: the FAKEBOB-style black-box attack (NES gradient estimates,
//!   sign steps, epsilon-ball projection) and its n-th adaptive variants that
//!   freeze detector-critical frames.
//! - [`defense`]: the noise-adding defense wrapper.
//! - [`eval`]: metrics (FPR/FNR, ASR, EER bookkeeping, CDFs), corpora, and
//!   the attacker-vs-defender grid runner.

pub mod attack;
pub mod audio;
pub mod defense;
pub mod detector;
pub mod eval;
pub mod stft;
pub mod sv;
pub mod theory;

pub use attack::{fakebob, nth_fakebob, AttackParams, AttackResult};
pub use audio::{add_white_noise, load_wav, save_wav, synth_audio, AudioClip, SynthSpec};
pub use detector::{detect, DetectorProfile, MetricReport, Verdict};
pub use stft::{stft, Spectrogram, StftParams};
pub use sv::SvModel;
