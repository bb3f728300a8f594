use rand::Rng;

use crate::error::{bail, Result};
use crate::scalar::Scalar;

use super::linear::Linear;
use super::params::{prefixed, ParamView, Parameters};
use super::tensor::Tensor;

/// Rectifier hidden layers, linear output; applied to every row independently.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
}

/// Intermediates of a sequence forward pass, one entry per layer.
#[derive(Debug, Clone)]
pub struct MlpTrace<T> {
    /// Input of each layer, `n x in_dim` flattened.
    inputs: Vec<Vec<T>>,
    /// Pre-activation of each layer, `n x out_dim` flattened.
    pre: Vec<Vec<T>>,
    rows: usize,
}

impl<T: Scalar> Mlp<T> {
    /// `sizes` lists every width, input first: `[in, h1, ..., out]`.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            bail!(
                Shape,
                "MLP needs at least two non-zero layer sizes, got {sizes:?}"
            );
        }
        Ok(Self {
            layers: sizes
                .windows(2)
                .map(|w| Linear::init(w[0], w[1], rng))
                .collect(),
        })
    }

    pub fn from_layers(layers: Vec<Linear<T>>) -> Result<Self> {
        if layers.is_empty() {
            bail!(Shape, "MLP needs at least one layer");
        }
        if let Some(k) = layers.windows(2).position(|w| w[0].out_dim != w[1].in_dim) {
            bail!(
                Shape,
                "layer {} outputs {} but layer {} expects {}",
                k,
                layers[k].out_dim,
                k + 1,
                layers[k + 1].in_dim
            );
        }
        Ok(Self { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.in_dim()];
        s.extend(self.layers.iter().map(|l| l.out_dim));
        s
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_traced(x)?.0)
    }

    pub fn forward_traced(&self, x: &Tensor<T>) -> Result<(Tensor<T>, MlpTrace<T>)> {
        x.expect_matrix(self.in_dim(), "MLP input")?;
        let n = x.rows();
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.values().to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = vec![T::zero(); n * layer.out_dim];
            for i in 0..n {
                layer.forward(
                    &h[i * layer.in_dim..(i + 1) * layer.in_dim],
                    &mut z[i * layer.out_dim..(i + 1) * layer.out_dim],
                );
            }
            let next = if l < last {
                z.iter().map(|&v| v.max(T::zero())).collect()
            } else {
                z.clone()
            };
            inputs.push(std::mem::replace(&mut h, next));
            pre.push(z);
        }
        let out = Tensor::matrix(n, self.out_dim(), h)?;
        Ok((
            out,
            MlpTrace {
                inputs,
                pre,
                rows: n,
            },
        ))
    }

    /// Backpropagates `dy` (`n x out`). Parameter gradients accumulate into
    /// `grads` when supplied; the input gradient is returned.
    pub fn backward(
        &self,
        trace: &MlpTrace<T>,
        dy: &Tensor<T>,
        mut grads: Option<&mut Mlp<T>>,
    ) -> Result<Tensor<T>> {
        dy.expect_matrix(self.out_dim(), "MLP output gradient")?;
        let n = trace.rows;
        if dy.rows() != n {
            bail!(
                Shape,
                "gradient has {} rows, forward pass had {n}",
                dy.rows()
            );
        }
        let last = self.layers.len() - 1;
        let mut delta = dy.values().to_vec();
        for l in (0..=last).rev() {
            let layer = &self.layers[l];
            if l < last {
                for (d, &z) in delta.iter_mut().zip(&trace.pre[l]) {
                    if z <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            let mut dx = vec![T::zero(); n * layer.in_dim];
            for i in 0..n {
                let g = grads.as_deref_mut().map(|g| &mut g.layers[l]);
                layer.backward(
                    &trace.inputs[l][i * layer.in_dim..(i + 1) * layer.in_dim],
                    &delta[i * layer.out_dim..(i + 1) * layer.out_dim],
                    g,
                    Some(&mut dx[i * layer.in_dim..(i + 1) * layer.in_dim]),
                );
            }
            delta = dx;
        }
        Tensor::matrix(n, self.in_dim(), delta)
    }
}

impl<T: Scalar> Parameters<T> for Mlp<T> {
    fn views(&self) -> Vec<ParamView<'_, T>> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| prefixed(&format!("layer{i}"), l.views()))
            .collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.blocks_mut())
            .collect()
    }
}
