use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::signal::IntervalSeries;

use super::grid::WindowGrid;

/// Number of model inputs derived from one [`HrvVector`].
pub const FEATURE_DIM: usize = 5;

/// Time-domain heart-rate-variability summary of one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrvVector<T> {
    pub mean_nn_s: T,
    pub sdnn_s: T,
    pub rmssd_s: T,
    pub pnn50_frac: T,
    pub nn_count: T,
    pub valid: bool,
}

impl<T: Scalar> HrvVector<T> {
    pub fn features(&self) -> [T; FEATURE_DIM] {
        [
            self.mean_nn_s,
            self.sdnn_s,
            self.rmssd_s,
            self.pnn50_frac,
            self.nn_count,
        ]
    }

    /// Statistics of the intervals `nn`, in order of occurrence.
    pub fn from_intervals(nn: &[T], min_beats: usize) -> Self {
        let n = nn.len();
        let zero = T::zero();
        let count = T::from_usize_lossy(n);
        let mean = if n > 0 {
            nn.iter().copied().sum::<T>() / count
        } else {
            zero
        };
        let sdnn = if n > 1 {
            let ss: T = nn.iter().map(|&v| (v - mean) * (v - mean)).sum();
            (ss / T::from_usize_lossy(n - 1)).sqrt()
        } else {
            zero
        };
        let (rmssd, pnn50) = if n > 1 {
            let threshold = T::lit(0.05);
            let diffs = nn.windows(2).map(|w| w[1] - w[0]);
            let (sq, over) = diffs.fold((zero, 0usize), |(sq, over), d| {
                (sq + d * d, over + usize::from(d.abs() > threshold))
            });
            let m = T::from_usize_lossy(n - 1);
            ((sq / m).sqrt(), T::from_usize_lossy(over) / m)
        } else {
            (zero, zero)
        };
        Self {
            mean_nn_s: mean,
            sdnn_s: sdnn,
            rmssd_s: rmssd,
            pnn50_frac: pnn50,
            nn_count: count,
            valid: n >= min_beats && n > 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrvConfig {
    pub min_beats: usize,
}

impl Default for HrvConfig {
    fn default() -> Self {
        Self { min_beats: 10 }
    }
}

/// One [`HrvVector`] per window; an interval belongs to the window holding
/// its end time.
pub fn extract_hrv_sequence<T: Scalar>(
    iv: &IntervalSeries<T>,
    grid: &WindowGrid<T>,
    cfg: &HrvConfig,
) -> Vec<HrvVector<T>> {
    let entries = iv.entries();
    (0..grid.count)
        .map(|k| {
            let (lo, hi) = grid.window(k);
            let a = entries.partition_point(|e| e.end_time_s < lo);
            let b = entries.partition_point(|e| e.end_time_s < hi);
            let nn: Vec<T> = entries[a..b.max(a)].iter().map(|e| e.interval_s).collect();
            HrvVector::from_intervals(&nn, cfg.min_beats)
        })
        .collect()
}
