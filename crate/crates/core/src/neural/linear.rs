use rand::Rng;

use crate::scalar::Scalar;

use super::params::{ParamView, Parameters};

/// Affine map `y = W x + b` with `W` stored `out x in`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    /// Weights uniform in `+-1/sqrt(fan_in)`, zero bias.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| T::lit(rng.gen_range(-bound..=bound)))
            .collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![T::zero(); out_dim],
        }
    }

    #[inline]
    pub fn forward(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.in_dim);
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            *yo = self.bias[o] + dot(row, x);
        }
    }

    /// Accumulates parameter gradients into `grad` (when given) and the input
    /// gradient into `dx` (when given).
    #[inline]
    pub fn backward(&self, x: &[T], dy: &[T], grad: Option<&mut Linear<T>>, dx: Option<&mut [T]>) {
        if let Some(g) = grad {
            for (o, &d) in dy.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weight[o * self.in_dim..(o + 1) * self.in_dim];
                for (w, &xi) in row.iter_mut().zip(x) {
                    *w += d * xi;
                }
            }
        }
        if let Some(dx) = dx {
            for (o, &d) in dy.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                for (xi, &w) in dx.iter_mut().zip(row) {
                    *xi += d * w;
                }
            }
        }
    }
}

impl<T: Scalar> Parameters<T> for Linear<T> {
    fn views(&self) -> Vec<ParamView<'_, T>> {
        vec![
            ParamView {
                name: "weight".into(),
                shape: vec![self.out_dim, self.in_dim],
                values: &self.weight,
            },
            ParamView {
                name: "bias".into(),
                shape: vec![self.out_dim],
                values: &self.bias,
            },
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}
