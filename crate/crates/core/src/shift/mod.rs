//! Simulated target-domain corruption and synthetic study generation.

mod hmm;
mod toy;

pub use hmm::{
    perturb_along_path, perturb_intervals, perturb_intervals_traced, sample_state_path,
    HmmShiftConfig, Perturbation, StatePath, N_STATES,
};
pub use toy::{
    generate_toy_study, render_pulse_waveform, shift_rng, shift_toy_subject, subject_rng,
    IntervalDist, Modulation, PulseRenderConfig, ShiftedSubject, ToyStudyConfig, ToySubject,
    MIN_TOY_INTERVAL_S,
};
