//! Teacher-student domain adaptation for biosensor time series: peak
//! detection, windowed HRV features, simulated sensor shift, a BiLSTM
//! teacher/student pair with exact gradients, and leave-one-subject-out
//! evaluation.
//!
//! The numerical core is generic over [`Scalar`]; the aliases below fix it
//! to `f64`, which is what the experiment harness uses.

// Negated comparisons are how NaN is rejected alongside the range check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod neural;
pub mod scalar;
pub mod shift;
pub mod signal;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Waveform = signal::Waveform<f64>;
pub type PeakSeries = signal::PeakSeries<f64>;
pub type IntervalSeries = signal::IntervalSeries<f64>;
pub type HrvVector = features::HrvVector<f64>;
pub type LabelStream = features::LabelStream<f64>;
pub type PairedExample = features::PairedExample<f64>;
pub type TeacherModel = neural::TeacherModel<f64>;
pub type StudentModel = neural::StudentModel<f64>;
pub type FeatureNorm = neural::FeatureNorm<f64>;
pub type PretrainedTeacher = adaptation::PretrainedTeacher<f64>;
pub type LosoStudy = adaptation::LosoStudy<f64>;
