use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::scalar::Scalar;

use super::grid::WindowGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelSegment<T> {
    pub start_s: T,
    pub end_s: T,
    pub label: u8,
}

/// Sorted, non-overlapping binary label segments. Touching segments with the
/// same label are merged, so the stored form is canonical.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelStream<T> {
    segments: Vec<LabelSegment<T>>,
}

impl<T: Scalar> LabelStream<T> {
    pub fn new(segments: Vec<LabelSegment<T>>) -> Result<Self> {
        let mut merged: Vec<LabelSegment<T>> = Vec::with_capacity(segments.len());
        for (k, s) in segments.into_iter().enumerate() {
            if s.label > 1 {
                bail!(
                    Validation,
                    "segment {k} has label {} (expected 0 or 1)",
                    s.label
                );
            }
            if !s.start_s.is_finite() || !s.end_s.is_finite() || !(s.end_s > s.start_s) {
                bail!(Validation, "segment {k} has an empty or non-finite span");
            }
            match merged.last_mut() {
                Some(prev) if s.start_s < prev.end_s => {
                    bail!(
                        Validation,
                        "segment {k} overlaps or precedes its predecessor"
                    )
                }
                Some(prev) if s.start_s == prev.end_s && s.label == prev.label => {
                    prev.end_s = s.end_s
                }
                _ => merged.push(s),
            }
        }
        Ok(Self { segments: merged })
    }

    pub fn segments(&self) -> &[LabelSegment<T>] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn span(&self) -> Option<(T, T)> {
        Some((self.segments.first()?.start_s, self.segments.last()?.end_s))
    }
}

/// Majority label of each window when it covers at least `consensus` of the
/// window's duration; `None` marks a window to be ignored.
pub fn consensus_window_labels<T: Scalar>(
    ls: &LabelStream<T>,
    grid: &WindowGrid<T>,
    consensus: T,
) -> Result<Vec<Option<u8>>> {
    if !(consensus > T::lit(0.5) && consensus <= T::one()) {
        bail!(
            Validation,
            "consensus must lie in (0.5, 1], got {consensus}"
        );
    }
    let segs = ls.segments();
    let tol = T::lit(1e-9) * grid.window_len_s;
    Ok((0..grid.count)
        .map(|k| {
            let (lo, hi) = grid.window(k);
            let first = segs.partition_point(|s| s.end_s <= lo);
            let mut cover = [T::zero(); 2];
            for s in segs[first..].iter().take_while(|s| s.start_s < hi) {
                let overlap = s.end_s.min(hi) - s.start_s.max(lo);
                if overlap > T::zero() {
                    cover[usize::from(s.label)] += overlap;
                }
            }
            let needed = consensus * grid.window_len_s - tol;
            (0..2u8).find(|&l| cover[usize::from(l)] >= needed)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::build_window_grid;

    fn seg(start_s: f64, end_s: f64, label: u8) -> LabelSegment<f64> {
        LabelSegment {
            start_s,
            end_s,
            label,
        }
    }

    fn one_window() -> WindowGrid<f64> {
        build_window_grid(0.0, 60.0, 60.0, 60.0).unwrap()
    }

    #[test]
    fn full_cover() {
        let ls = LabelStream::new(vec![seg(0.0, 60.0, 1)]).unwrap();
        assert_eq!(
            consensus_window_labels(&ls, &one_window(), 0.75).unwrap(),
            vec![Some(1)]
        );
    }

    #[test]
    fn seventy_percent_is_ignored() {
        let ls = LabelStream::new(vec![seg(0.0, 18.0, 0), seg(18.0, 60.0, 1)]).unwrap();
        assert_eq!(
            consensus_window_labels(&ls, &one_window(), 0.75).unwrap(),
            vec![None]
        );
    }

    #[test]
    fn eighty_percent_is_kept() {
        let ls = LabelStream::new(vec![seg(0.0, 12.0, 0), seg(12.0, 60.0, 1)]).unwrap();
        assert_eq!(
            consensus_window_labels(&ls, &one_window(), 0.75).unwrap(),
            vec![Some(1)]
        );
    }

    #[test]
    fn unlabelled_gap_counts_against_consensus() {
        let ls = LabelStream::new(vec![seg(0.0, 40.0, 0)]).unwrap();
        assert_eq!(
            consensus_window_labels(&ls, &one_window(), 0.75).unwrap(),
            vec![None]
        );
    }

    #[test]
    fn merges_touching_segments() {
        let ls = LabelStream::new(vec![
            seg(0.0, 30.0, 1),
            seg(30.0, 60.0, 1),
            seg(60.0, 90.0, 0),
        ])
        .unwrap();
        assert_eq!(ls.segments().len(), 2);
    }

    #[test]
    fn rejects_overlap_and_bad_labels() {
        assert!(LabelStream::new(vec![seg(0.0, 30.0, 1), seg(20.0, 60.0, 0)]).is_err());
        assert!(LabelStream::new(vec![seg(0.0, 30.0, 2)]).is_err());
        assert!(LabelStream::new(vec![seg(5.0, 5.0, 0)]).is_err());
    }

    #[test]
    fn consensus_range_checked() {
        let ls = LabelStream::new(vec![seg(0.0, 60.0, 1)]).unwrap();
        assert!(consensus_window_labels(&ls, &one_window(), 0.5).is_err());
        assert!(consensus_window_labels(&ls, &one_window(), 1.01).is_err());
        assert!(consensus_window_labels(&ls, &one_window(), 1.0).is_ok());
    }
}
