//! Windowed HRV features, consensus window labels and paired examples.

mod grid;
mod hrv;
mod labels;
mod paired;

pub use grid::{build_window_grid, WindowGrid};
pub use hrv::{extract_hrv_sequence, HrvConfig, HrvVector, FEATURE_DIM};
pub use labels::{consensus_window_labels, LabelSegment, LabelStream};
pub use paired::{
    assemble_paired, standardize, FeatureConfig, PairedExample, RawSource, WindowCounts,
};
