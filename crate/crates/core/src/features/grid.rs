use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::scalar::Scalar;

/// Fixed-length analysis windows ("epochs") laid over a recording span.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowGrid<T> {
    pub start_s: T,
    pub window_len_s: T,
    pub stride_s: T,
    pub count: usize,
}

impl<T: Scalar> WindowGrid<T> {
    pub fn window_start(&self, k: usize) -> T {
        self.start_s + T::from_usize_lossy(k) * self.stride_s
    }

    pub fn window(&self, k: usize) -> (T, T) {
        let s = self.window_start(k);
        (s, s + self.window_len_s)
    }
}

/// Largest grid whose last window ends inside `[span_start_s, span_end_s]`.
pub fn build_window_grid<T: Scalar>(
    span_start_s: T,
    span_end_s: T,
    window_len_s: T,
    stride_s: T,
) -> Result<WindowGrid<T>> {
    if !(window_len_s > T::zero()) || !(stride_s > T::zero()) {
        bail!(Validation, "window length and stride must be positive");
    }
    if !span_start_s.is_finite() || !span_end_s.is_finite() || !(span_end_s > span_start_s) {
        bail!(Validation, "span end must exceed span start");
    }
    let span = span_end_s - span_start_s;
    let slack = T::lit(1e-9) * span.max(T::one());
    let count = if span + slack < window_len_s {
        0
    } else {
        let fits = ((span - window_len_s + slack) / stride_s).floor();
        fits.to_usize().unwrap_or(0) + 1
    };
    Ok(WindowGrid {
        start_s: span_start_s,
        window_len_s,
        stride_s,
        count,
    })
}
