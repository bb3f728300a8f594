use std::f64::consts::PI;

use crate::scalar::Scalar;

/// Normalised second-order IIR section (`a0 = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad<T> {
    pub b: [T; 3],
    pub a: [T; 2],
}

impl<T: Scalar> Biquad<T> {
    fn from_f64(b: [f64; 3], a0: f64, a: [f64; 2]) -> Self {
        Self {
            b: b.map(|v| T::lit(v / a0)),
            a: a.map(|v| T::lit(v / a0)),
        }
    }

    /// Butterworth low-pass (Q = 1/sqrt 2) via the bilinear transform.
    pub fn lowpass(cutoff_hz: f64, sample_rate_hz: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / sample_rate_hz;
        let alpha = w0.sin() / (2.0 * std::f64::consts::FRAC_1_SQRT_2);
        let c = w0.cos();
        Self::from_f64(
            [(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0],
            1.0 + alpha,
            [-2.0 * c, 1.0 - alpha],
        )
    }

    pub fn highpass(cutoff_hz: f64, sample_rate_hz: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / sample_rate_hz;
        let alpha = w0.sin() / (2.0 * std::f64::consts::FRAC_1_SQRT_2);
        let c = w0.cos();
        Self::from_f64(
            [(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0],
            1.0 + alpha,
            [-2.0 * c, 1.0 - alpha],
        )
    }

    /// Direct form II transposed, zero initial state.
    pub fn apply(&self, x: &mut [T]) {
        let (mut s1, mut s2) = (T::zero(), T::zero());
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b[0] * input + s1;
            s1 = self.b[1] * input - self.a[0] * y + s2;
            s2 = self.b[2] * input - self.a[1] * y;
            *v = y;
        }
    }
}

/// Zero-phase filtering: the cascade runs forward, then backward, over an
/// odd-reflected extension of the signal.
pub fn filtfilt<T: Scalar>(sections: &[Biquad<T>], x: &[T], pad: usize) -> Vec<T> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = pad.min(n - 1);
    let two = T::lit(2.0);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|j| two * x[0] - x[j]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|j| two * x[n - 1] - x[n - 1 - j]));

    for s in sections {
        s.apply(&mut ext);
    }
    ext.reverse();
    for s in sections {
        s.apply(&mut ext);
    }
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Centred five-point slope estimate, scaled to units per second.
pub fn five_point_derivative<T: Scalar>(x: &[T], sample_rate_hz: T) -> Vec<T> {
    let n = x.len() as isize;
    let at = |i: isize| x[i.clamp(0, n - 1) as usize];
    let two = T::lit(2.0);
    let scale = sample_rate_hz / T::lit(8.0);
    (0..n)
        .map(|i| (at(i + 2) + two * at(i + 1) - two * at(i - 1) - at(i - 2)) * scale)
        .collect()
}

/// Centred moving average over `2 * half + 1` samples, truncated at the edges.
pub fn centered_moving_average<T: Scalar>(x: &[T], half: usize) -> Vec<T> {
    let n = x.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(T::zero());
    let mut acc = T::zero();
    for &v in x {
        acc += v;
        prefix.push(acc);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / T::from_usize_lossy(hi - lo)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gain_at(sections: &[Biquad<f64>], freq: f64, fs: f64) -> f64 {
        let n = 4000;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / fs).sin())
            .collect();
        let y = filtfilt(sections, &x, 400);
        let mid = &y[1000..3000];
        let amp = mid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        amp
    }

    #[test]
    fn bandpass_passes_centre_and_rejects_extremes() {
        let fs = 200.0;
        let bp = [Biquad::highpass(5.0, fs), Biquad::lowpass(15.0, fs)];
        assert!(gain_at(&bp, 9.0, fs) > 0.6);
        assert!(gain_at(&bp, 0.5, fs) < 0.02);
        assert!(gain_at(&bp, 60.0, fs) < 0.02);
    }

    #[test]
    fn derivative_of_ramp_is_slope() {
        let x: Vec<f64> = (0..50).map(|i| 3.0 * i as f64 / 100.0).collect();
        let d = five_point_derivative(&x, 100.0);
        for v in &d[2..48] {
            assert!((v - 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn moving_average_of_constant() {
        let x = vec![2.5f64; 30];
        assert!(centered_moving_average(&x, 4)
            .iter()
            .all(|v| (v - 2.5).abs() < 1e-12));
    }
}
