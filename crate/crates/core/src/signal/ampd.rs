//! Automatic multiscale peak detection.
//!
//! Each scale `k` marks the samples that dominate both neighbours `k` steps
//! away. The scale with the most such samples (smallest scalogram row sum of
//! non-maxima) fixes the neighbourhood, and a sample is reported when it stays
//! a maximum at every scale up to that one.

use crate::error::{bail, Result};
use crate::scalar::Scalar;

use super::types::{PeakSeries, Waveform};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AmpdConfig {
    /// Upper bound on the scales examined. `None` scans all `ceil(n/2) - 1`
    /// scales, which is quadratic in the signal length.
    pub max_scale: Option<usize>,
}

impl AmpdConfig {
    /// Caps the scale at the longest expected period, which keeps long
    /// recordings tractable.
    pub fn for_max_period(sample_rate_hz: f64, max_period_s: f64) -> Self {
        let max_scale = (sample_rate_hz * max_period_s).ceil().max(1.0) as usize;
        Self {
            max_scale: Some(max_scale),
        }
    }
}

/// Outcome of the scalogram analysis, exposed for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpdScan {
    /// Non-maximum count per scale; index 0 is scale 1.
    pub row_sums: Vec<usize>,
    pub scale: usize,
    pub indices: Vec<usize>,
}

#[inline]
fn dominates<T: Scalar>(x: &[T], i: usize, k: usize) -> bool {
    // Plateaus resolve to their left-most sample.
    i >= k && i + k < x.len() && x[i] > x[i - k] && x[i] >= x[i + k]
}

pub fn ampd_scan<T: Scalar>(x: &[T], cfg: &AmpdConfig) -> Result<AmpdScan> {
    let n = x.len();
    if n < 3 {
        bail!(Length, "peak detection needs at least 3 samples, got {n}");
    }
    if x.iter().any(|v| !v.is_finite()) {
        bail!(Validation, "waveform contains non-finite samples");
    }
    let full = n.div_ceil(2) - 1;
    let scales = cfg.max_scale.map_or(full, |m| m.clamp(1, full));

    let row_sums: Vec<usize> = (1..=scales)
        .map(|k| n - (k..n - k).filter(|&i| dominates(x, i, k)).count())
        .collect();
    // First minimum: ties go to the smaller scale.
    let scale = row_sums
        .iter()
        .enumerate()
        .min_by_key(|&(k, s)| (*s, k))
        .map(|(k, _)| k + 1)
        .unwrap_or(1);

    // Candidates close to an edge lack neighbours at large scales, so only
    // the neighbours that exist are compared. Endpoints have an empty side
    // and are never peaks; a ramp into the boundary fails against its last
    // sample.
    let indices = (1..n - 1)
        .filter(|&i| {
            (1..=scale).all(|k| {
                let left = i < k || x[i] > x[i - k];
                let right = i + k >= n || x[i] >= x[i + k];
                left && right
            })
        })
        .collect();
    Ok(AmpdScan {
        row_sums,
        scale,
        indices,
    })
}

pub fn detect_peaks_ampd<T: Scalar>(w: &Waveform<T>) -> Result<PeakSeries<T>> {
    detect_peaks_ampd_with(w, &AmpdConfig::default())
}

pub fn detect_peaks_ampd_with<T: Scalar>(
    w: &Waveform<T>,
    cfg: &AmpdConfig,
) -> Result<PeakSeries<T>> {
    let scan = ampd_scan(w.samples(), cfg)?;
    let times = scan
        .indices
        .iter()
        .map(|&i| w.time_of(i))
        .filter(|t| *t >= T::zero())
        .collect();
    PeakSeries::new(times)
}
