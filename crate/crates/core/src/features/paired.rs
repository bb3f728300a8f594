use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::signal::{IntervalSeries, Waveform};

use super::grid::{build_window_grid, WindowGrid};
use super::hrv::{extract_hrv_sequence, HrvConfig, HrvVector};
use super::labels::{consensus_window_labels, LabelStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub window_len_s: f64,
    pub stride_s: f64,
    pub min_beats: usize,
    pub consensus: f64,
    /// Windows per training sequence.
    pub chunk_len: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window_len_s: 60.0,
            stride_s: 60.0,
            min_beats: 10,
            consensus: 0.75,
            chunk_len: 64,
        }
    }
}

/// Aligned source/target window sequences for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedExample<T> {
    pub subject_id: String,
    pub xa: Vec<HrvVector<T>>,
    pub xb: Vec<HrvVector<T>>,
    /// Raw target samples behind each window, all of the same length.
    pub xb_raw: Option<Vec<Vec<T>>>,
    pub labels: Vec<Option<u8>>,
    /// Index of the first window within the subject's full recording.
    pub offset: usize,
}

impl<T: Scalar> PairedExample<T> {
    pub fn new(
        subject_id: impl Into<String>,
        xa: Vec<HrvVector<T>>,
        xb: Vec<HrvVector<T>>,
        xb_raw: Option<Vec<Vec<T>>>,
        labels: Vec<Option<u8>>,
    ) -> Result<Self> {
        let n = xa.len();
        if xb.len() != n || labels.len() != n {
            bail!(
                Shape,
                "paired sequences disagree in length: xA {n}, xB {}, labels {}",
                xb.len(),
                labels.len()
            );
        }
        if let Some(raw) = &xb_raw {
            if raw.len() != n {
                bail!(Shape, "raw slices: {} for {n} windows", raw.len());
            }
            if let Some(first) = raw.first() {
                if raw.iter().any(|s| s.len() != first.len()) {
                    bail!(Shape, "raw slices differ in length");
                }
            }
        }
        Ok(Self {
            subject_id: subject_id.into(),
            xa,
            xb,
            xb_raw,
            labels,
            offset: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.xa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xa.is_empty()
    }

    /// Steps usable for distillation: both domains produced valid features.
    pub fn paired_mask(&self) -> Vec<bool> {
        self.xa
            .iter()
            .zip(&self.xb)
            .map(|(a, b)| a.valid && b.valid)
            .collect()
    }

    /// Steps that take part in evaluation: paired-valid and labelled.
    pub fn eval_mask(&self) -> Vec<bool> {
        self.paired_mask()
            .into_iter()
            .zip(&self.labels)
            .map(|(m, l)| m && l.is_some())
            .collect()
    }

    /// Consecutive pieces of at most `len` windows; the tail is kept short.
    pub fn chunks(&self, len: usize) -> Vec<PairedExample<T>> {
        let len = len.max(1);
        (0..self.len())
            .step_by(len)
            .map(|s| {
                let e = (s + len).min(self.len());
                PairedExample {
                    subject_id: self.subject_id.clone(),
                    xa: self.xa[s..e].to_vec(),
                    xb: self.xb[s..e].to_vec(),
                    xb_raw: self.xb_raw.as_ref().map(|r| r[s..e].to_vec()),
                    labels: self.labels[s..e].to_vec(),
                    offset: self.offset + s,
                }
            })
            .collect()
    }
}

/// Per-subject bookkeeping of what happened to each window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WindowCounts {
    pub total: usize,
    /// Usable for evaluation and supervised training.
    pub kept: usize,
    /// Too few beats in at least one domain.
    pub masked: usize,
    /// Features valid but no label reached consensus.
    pub ignored: usize,
}

impl WindowCounts {
    pub fn of(ex: &PairedExample<impl Scalar>) -> Self {
        let mut c = Self {
            total: ex.len(),
            ..Self::default()
        };
        for (valid, label) in ex.paired_mask().into_iter().zip(&ex.labels) {
            match (valid, label) {
                (false, _) => c.masked += 1,
                (true, None) => c.ignored += 1,
                (true, Some(_)) => c.kept += 1,
            }
        }
        c
    }
}

/// Raw target input for the auxiliary branch.
pub struct RawSource<'a, T> {
    pub waveform: &'a Waveform<T>,
}

/// Windows `[span_start_s, span_end_s]` and builds a [`PairedExample`].
#[allow(clippy::too_many_arguments)]
pub fn assemble_paired<T: Scalar>(
    subject_id: &str,
    source: &IntervalSeries<T>,
    target: &IntervalSeries<T>,
    labels: Option<&LabelStream<T>>,
    raw: Option<RawSource<'_, T>>,
    span_start_s: T,
    span_end_s: T,
    cfg: &FeatureConfig,
) -> Result<(PairedExample<T>, WindowGrid<T>)> {
    let grid = build_window_grid(
        span_start_s,
        span_end_s,
        T::lit(cfg.window_len_s),
        T::lit(cfg.stride_s),
    )?;
    let hrv = HrvConfig {
        min_beats: cfg.min_beats,
    };
    let xa = extract_hrv_sequence(source, &grid, &hrv);
    let xb = extract_hrv_sequence(target, &grid, &hrv);
    let labels = match labels {
        Some(ls) => consensus_window_labels(ls, &grid, T::lit(cfg.consensus))?,
        None => vec![None; grid.count],
    };
    let xb_raw = raw.map(|r| {
        let per_window = (cfg.window_len_s * r.waveform.sample_rate_hz().as_f64()).round() as usize;
        (0..grid.count)
            .map(|k| standardize(r.waveform.slice_fixed(grid.window_start(k), per_window)))
            .collect()
    });
    Ok((
        PairedExample::new(subject_id, xa, xb, xb_raw, labels)?,
        grid,
    ))
}

/// Zero mean, unit variance (left centred only when flat).
pub fn standardize<T: Scalar>(mut xs: Vec<T>) -> Vec<T> {
    if xs.is_empty() {
        return xs;
    }
    let n = T::from_usize_lossy(xs.len());
    let mean = xs.iter().copied().sum::<T>() / n;
    let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let sd = var.sqrt();
    let scale = if sd > T::lit(1e-12) {
        T::one() / sd
    } else {
        T::one()
    };
    for v in &mut xs {
        *v = (*v - mean) * scale;
    }
    xs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::LabelSegment;
    use crate::signal::{peaks_to_intervals, PeakSeries};

    fn beats(dt: f64, secs: f64) -> IntervalSeries<f64> {
        let n = (secs / dt) as usize;
        peaks_to_intervals(&PeakSeries::new((0..=n).map(|k| k as f64 * dt).collect()).unwrap())
    }

    #[test]
    fn assembles_and_counts() {
        let src = beats(1.0, 600.0);
        let tgt = beats(0.9, 600.0);
        let ls = LabelStream::new(vec![
            LabelSegment {
                start_s: 0.0,
                end_s: 300.0,
                label: 0,
            },
            LabelSegment {
                start_s: 330.0,
                end_s: 600.0,
                label: 1,
            },
        ])
        .unwrap();
        let cfg = FeatureConfig::default();
        let (ex, grid) =
            assemble_paired("s1", &src, &tgt, Some(&ls), None, 0.0, 600.0, &cfg).unwrap();
        assert_eq!(grid.count, 10);
        assert_eq!(ex.len(), 10);
        assert_eq!(ex.labels[4], Some(0));
        assert_eq!(ex.labels[5], None);
        assert_eq!(ex.labels[6], Some(1));
        let counts = WindowCounts::of(&ex);
        assert_eq!(
            counts,
            WindowCounts {
                total: 10,
                kept: 9,
                masked: 0,
                ignored: 1
            }
        );
    }

    #[test]
    fn chunks_keep_tail() {
        let src = beats(1.0, 600.0);
        let cfg = FeatureConfig::default();
        let (ex, _) = assemble_paired("s", &src, &src, None, None, 0.0, 600.0, &cfg).unwrap();
        let parts = ex.chunks(4);
        assert_eq!(
            parts.iter().map(|p| p.len()).collect::<Vec<_>>(),
            vec![4, 4, 2]
        );
        assert_eq!(parts[2].offset, 8);
    }

    #[test]
    fn raw_slices_have_window_length() {
        let src = beats(1.0, 180.0);
        let w = Waveform::new(
            (0..3600).map(|i| (i as f64 * 0.1).sin()).collect(),
            20.0,
            0.0,
        )
        .unwrap();
        let cfg = FeatureConfig::default();
        let (ex, _) = assemble_paired(
            "s",
            &src,
            &src,
            None,
            Some(RawSource { waveform: &w }),
            0.0,
            180.0,
            &cfg,
        )
        .unwrap();
        let raw = ex.xb_raw.unwrap();
        assert_eq!(raw.len(), 3);
        assert!(raw.iter().all(|s| s.len() == 1200));
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let h = HrvVector::from_intervals(&[1.0f64; 12], 10);
        assert!(PairedExample::new("s", vec![h; 3], vec![h; 2], None, vec![None; 3]).is_err());
    }
}
