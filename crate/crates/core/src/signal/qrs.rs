//! R-wave detection: band-pass, slope, squaring and moving-window integration,
//! followed by adaptive signal/noise level thresholding.
//!
//! All filtering is zero-phase, so the integrated energy peaks line up with
//! the QRS complexes; each detection is then snapped to the largest
//! band-passed excursion inside the integration window.

use crate::error::{bail, Result};
use crate::scalar::Scalar;

use super::filter::{centered_moving_average, filtfilt, five_point_derivative, Biquad};
use super::types::{PeakSeries, Waveform};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QrsConfig {
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub window_s: f64,
    /// Threshold position between the noise and signal levels.
    pub threshold_fraction: f64,
    /// Weight of each new peak in the running level estimates.
    pub level_decay: f64,
    pub refractory_s: f64,
    /// Span used to seed the level estimates.
    pub learning_s: f64,
}

impl Default for QrsConfig {
    fn default() -> Self {
        Self {
            band_low_hz: 5.0,
            band_high_hz: 15.0,
            window_s: 0.150,
            threshold_fraction: 0.25,
            level_decay: 0.125,
            refractory_s: 0.200,
            learning_s: 2.0,
        }
    }
}

pub const MIN_QRS_RATE_HZ: f64 = 100.0;
pub const MIN_QRS_DURATION_S: f64 = 2.0;

pub fn detect_qrs<T: Scalar>(w: &Waveform<T>) -> Result<PeakSeries<T>> {
    detect_qrs_with(w, &QrsConfig::default())
}

pub fn detect_qrs_with<T: Scalar>(w: &Waveform<T>, cfg: &QrsConfig) -> Result<PeakSeries<T>> {
    let indices = qrs_indices(w, cfg)?;
    let times = indices
        .iter()
        .map(|&i| w.time_of(i))
        .filter(|t| *t >= T::zero())
        .collect();
    PeakSeries::new(times)
}

/// Sample indices of the detected R-waves.
pub fn qrs_indices<T: Scalar>(w: &Waveform<T>, cfg: &QrsConfig) -> Result<Vec<usize>> {
    let fs = w.sample_rate_hz().as_f64();
    if fs < MIN_QRS_RATE_HZ {
        bail!(
            Config,
            "QRS detection needs at least {MIN_QRS_RATE_HZ} Hz, got {fs}"
        );
    }
    if w.duration_s().as_f64() < MIN_QRS_DURATION_S {
        bail!(
            Length,
            "QRS detection needs at least {MIN_QRS_DURATION_S} s of signal"
        );
    }
    if !(cfg.band_low_hz > 0.0 && cfg.band_low_hz < cfg.band_high_hz && cfg.band_high_hz < fs / 2.0)
    {
        bail!(
            Config,
            "band {}-{} Hz invalid at {fs} Hz",
            cfg.band_low_hz,
            cfg.band_high_hz
        );
    }

    let x = w.samples();
    let n = x.len();
    let sections = [
        Biquad::highpass(cfg.band_low_hz, fs),
        Biquad::lowpass(cfg.band_high_hz, fs),
    ];
    let band = filtfilt(&sections, x, fs.round() as usize);
    let slope = five_point_derivative(&band, w.sample_rate_hz());
    let energy: Vec<T> = slope.iter().map(|&v| v * v).collect();
    let half = ((cfg.window_s * fs).round() as usize / 2).max(1);
    let mwi = centered_moving_average(&energy, half);

    let top = mwi.iter().fold(T::zero(), |m, &v| m.max(v));
    if !(top > T::zero()) {
        return Ok(Vec::new());
    }

    // Local maxima of the integrated energy, thinned so that no two survivors
    // sit closer than the refractory period (larger one wins).
    let refractory = (cfg.refractory_s * fs).round() as usize;
    let mut candidates: Vec<usize> = (1..n - 1)
        .filter(|&i| mwi[i] > mwi[i - 1] && mwi[i] >= mwi[i + 1])
        .collect();
    candidates.sort_by(|&a, &b| mwi[b].partial_cmp(&mwi[a]).unwrap().then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        if kept.iter().all(|&k| k.abs_diff(c) >= refractory) {
            kept.push(c);
        }
    }
    kept.sort_unstable();

    let learn = ((cfg.learning_s * fs) as usize).clamp(1, n);
    let seed = &mwi[..learn];
    let mut signal_level = seed.iter().fold(T::zero(), |m, &v| m.max(v)) / T::lit(3.0);
    let mut noise_level =
        seed.iter().copied().sum::<T>() / T::from_usize_lossy(learn) / T::lit(2.0);
    let frac = T::lit(cfg.threshold_fraction);
    let decay = T::lit(cfg.level_decay);
    let keep = T::one() - decay;

    let mut beats = Vec::new();
    for c in kept {
        let v = mwi[c];
        let threshold = noise_level + frac * (signal_level - noise_level);
        if v > threshold {
            signal_level = decay * v + keep * signal_level;
            beats.push(c);
        } else {
            noise_level = decay * v + keep * noise_level;
        }
    }

    let mut out: Vec<usize> = Vec::with_capacity(beats.len());
    for c in beats {
        let lo = c.saturating_sub(half);
        let hi = (c + half + 1).min(n);
        let r = (lo..hi)
            .max_by(|&a, &b| {
                band[a]
                    .abs()
                    .partial_cmp(&band[b].abs())
                    .unwrap()
                    .then(b.cmp(&a))
            })
            .unwrap_or(c);
        // Drop detections whose integration window hangs over either edge.
        if r < half || r + half >= n {
            continue;
        }
        if out.last().is_some_and(|&p| r <= p) {
            continue;
        }
        out.push(r);
    }
    Ok(out)
}
