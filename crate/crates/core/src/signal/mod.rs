//! Peak and beat-interval extraction from raw sensor waveforms.

mod ampd;
mod filter;
mod qrs;
mod types;

pub use ampd::{ampd_scan, detect_peaks_ampd, detect_peaks_ampd_with, AmpdConfig, AmpdScan};
pub use filter::{centered_moving_average, filtfilt, five_point_derivative, Biquad};
pub use qrs::{
    detect_qrs, detect_qrs_with, qrs_indices, QrsConfig, MIN_QRS_DURATION_S, MIN_QRS_RATE_HZ,
};
pub use types::{peaks_to_intervals, Interval, IntervalSeries, PeakSeries, Waveform};
