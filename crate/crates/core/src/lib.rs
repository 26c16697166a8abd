//! Acoustic feedback cancellation lab.
//!
//! Building blocks for closed-loop feedback-cancellation experiments:
//!
//! * [`filterbank`] — windowed-DFT analysis/synthesis with overlap-add and
//!   exact squared-COLA windows for half and quarter overlap.
//! * [`phase_synth`] — per-bin phase modification: frequency shifting,
//!   periodic phase modulation and a frequency-domain variable delay line,
//!   plus eleven predefined parameter sets.
//! * [`adaptive`] — overlap-save FLMS and a partitioned frequency-domain
//!   Kalman filter with constrained weights.
//! * [`loop_sim`] — the closed electro-acoustic loop: room path, adaptive
//!   canceller, phase program, gain schedule and instability detection.
//! * [`metrics`] — prediction gain, a dense Wiener predictor oracle,
//!   normalized system distance and a phase-slope frequency estimator.
//! * [`signal`] / [`audio`] — deterministic test signals and WAV I/O.
//! * [`experiment`] — config-file driven batch runner with CSV reports.

pub mod adaptive;
pub mod audio;
pub mod error;
pub mod experiment;
mod fft;
pub mod filterbank;
pub mod loop_sim;
pub mod metrics;
pub mod phase_synth;
pub mod signal;

pub use adaptive::{flms_predictor, BiasSolution, Flms, FlmsConfig, KalmanConfig, MdfKalman};
pub use audio::{load_wav, write_wav, write_wav_f32, AudioBuffer, EXPERIMENT_RATE};
pub use error::{Error, Result};
pub use experiment::{BatchReport, ExperimentConfig, RunRecord, RunSpec};
pub use filterbank::{FilterBank, FilterBankConfig, SpectralFrame, StftStream, WindowVector};
pub use loop_sim::{
    detect_instability, evaluate_gain, normalize_coupling, run_afc, FeedbackPath, GainSchedule,
    LoopConfig, SimulationResult, Verdict,
};
pub use metrics::{
    aggregate_trace, dominant_frequency, prediction_gain, system_distance, wiener_bias_oracle,
    DistanceTrace, FrequencyEstimate, PredictionReport,
};
pub use phase_synth::{
    modulation_phase_increment, shift_phase_increment, vibrato_phase_increment, wrap_phase,
    BinProfile, ModulationSpec, PhaseSynthConfig, ShiftSpec, SynthStream, VibratoSpec, Waveform,
};
pub use signal::{generate, synth_speech, synth_vowels, synthetic_room_ir, SignalKind, VoiceParams};
