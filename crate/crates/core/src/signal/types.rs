use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::scalar::{all_finite, Scalar};

/// A uniformly sampled sensor trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform<T> {
    samples: Vec<T>,
    sample_rate_hz: T,
    start_time_s: T,
}

impl<T: Scalar> Waveform<T> {
    pub fn new(samples: Vec<T>, sample_rate_hz: T, start_time_s: T) -> Result<Self> {
        if !(sample_rate_hz > T::zero()) || !sample_rate_hz.is_finite() {
            bail!(
                Validation,
                "sample rate must be positive, got {sample_rate_hz}"
            );
        }
        if !start_time_s.is_finite() {
            bail!(Validation, "start time must be finite");
        }
        if !all_finite(&samples) {
            bail!(Validation, "waveform contains non-finite samples");
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            start_time_s,
        })
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> T {
        self.sample_rate_hz
    }

    pub fn start_time_s(&self) -> T {
        self.start_time_s
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> T {
        T::from_usize_lossy(self.samples.len()) / self.sample_rate_hz
    }

    /// Time stamp of sample `index`.
    pub fn time_of(&self, index: usize) -> T {
        self.start_time_s + T::from_usize_lossy(index) / self.sample_rate_hz
    }

    /// Samples covering `[t0, t0 + len)` as exactly `count` values; positions
    /// past either end repeat the nearest edge sample.
    pub fn slice_fixed(&self, t0: T, count: usize) -> Vec<T> {
        if self.samples.is_empty() {
            return vec![T::zero(); count];
        }
        let first = ((t0 - self.start_time_s) * self.sample_rate_hz).round();
        let last = self.samples.len() as i64 - 1;
        let first = first.to_i64().unwrap_or(0);
        (0..count as i64)
            .map(|k| self.samples[(first + k).clamp(0, last) as usize])
            .collect()
    }
}

/// Event times in seconds, strictly increasing, non-negative.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PeakSeries<T> {
    times_s: Vec<T>,
}

impl<T: Scalar> PeakSeries<T> {
    pub fn new(times_s: Vec<T>) -> Result<Self> {
        for (k, t) in times_s.iter().enumerate() {
            if !t.is_finite() || *t < T::zero() {
                bail!(
                    Validation,
                    "peak {k} at {t} is not a finite non-negative time"
                );
            }
        }
        if let Some(k) = times_s.windows(2).position(|w| w[1] <= w[0]) {
            bail!(
                Validation,
                "peak times not strictly increasing at index {}: {} then {}",
                k + 1,
                times_s[k],
                times_s[k + 1]
            );
        }
        Ok(Self { times_s })
    }

    pub fn empty() -> Self {
        Self {
            times_s: Vec::new(),
        }
    }

    pub fn times_s(&self) -> &[T] {
        &self.times_s
    }

    pub fn len(&self) -> usize {
        self.times_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_s.is_empty()
    }

    pub fn into_inner(self) -> Vec<T> {
        self.times_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval<T> {
    pub end_time_s: T,
    pub interval_s: T,
}

/// Beat-to-beat intervals keyed by the time of the closing beat.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IntervalSeries<T> {
    entries: Vec<Interval<T>>,
}

impl<T: Scalar> IntervalSeries<T> {
    pub fn new(entries: Vec<Interval<T>>) -> Result<Self> {
        for (k, e) in entries.iter().enumerate() {
            if !e.end_time_s.is_finite() || !e.interval_s.is_finite() || !(e.interval_s > T::zero())
            {
                bail!(Validation, "interval {k} is not a finite positive duration");
            }
        }
        if let Some(k) = entries
            .windows(2)
            .position(|w| w[1].end_time_s <= w[0].end_time_s)
        {
            bail!(
                Validation,
                "interval end times not strictly increasing at index {}",
                k + 1
            );
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[Interval<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn intervals(&self) -> impl Iterator<Item = T> + '_ {
        self.entries.iter().map(|e| e.interval_s)
    }

    /// Rebuilds the end times as a running sum of the intervals, anchored at
    /// `anchor_s` (the time of the beat that opens the first interval).
    pub fn from_intervals(anchor_s: T, intervals: &[T]) -> Result<Self> {
        let mut t = anchor_s;
        let entries = intervals
            .iter()
            .map(|&dt| {
                t += dt;
                Interval {
                    end_time_s: t,
                    interval_s: dt,
                }
            })
            .collect();
        Self::new(entries)
    }
}

/// Entry `k` pairs peak `k + 1` with its distance from peak `k`.
pub fn peaks_to_intervals<T: Scalar>(peaks: &PeakSeries<T>) -> IntervalSeries<T> {
    let entries = peaks
        .times_s()
        .windows(2)
        .map(|w| Interval {
            end_time_s: w[1],
            interval_s: w[1] - w[0],
        })
        .collect();
    IntervalSeries { entries }
}
