//! Convolutional branch over raw signal slices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::scalar::Scalar;

use super::linear::Linear;
use super::params::{prefixed, ParamView, Parameters};
use super::tensor::Tensor;

/// Valid 1-D convolution. Weights are `out_ch x in_ch x kernel`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv1d<T> {
    pub fn zeros(in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            weight: vec![T::zero(); out_ch * in_ch * kernel],
            bias: vec![T::zero(); out_ch],
        }
    }

    pub fn init<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((in_ch * kernel).max(1) as f64).sqrt();
        let weight = (0..out_ch * in_ch * kernel)
            .map(|_| T::lit(rng.gen_range(-bound..=bound)))
            .collect();
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            weight,
            bias: vec![T::zero(); out_ch],
        }
    }

    /// Output length for an input of `len` steps, if the kernel fits.
    pub fn out_len(&self, len: usize) -> Option<usize> {
        (len >= self.kernel).then(|| (len - self.kernel) / self.stride + 1)
    }

    /// `x` is time-major `len x in_ch`; returns pre-activations `out_len x out_ch`.
    fn apply(&self, x: &[T], len: usize) -> Vec<T> {
        let m = self.out_len(len).unwrap_or(0);
        let (ci, k) = (self.in_ch, self.kernel);
        let mut y = vec![T::zero(); m * self.out_ch];
        for t in 0..m {
            let base = t * self.stride;
            for o in 0..self.out_ch {
                let mut acc = self.bias[o];
                let w = &self.weight[o * ci * k..(o + 1) * ci * k];
                for c in 0..ci {
                    for j in 0..k {
                        acc += w[c * k + j] * x[(base + j) * ci + c];
                    }
                }
                y[t * self.out_ch + o] = acc;
            }
        }
        y
    }

    fn backprop(&self, x: &[T], len: usize, dy: &[T], grad: &mut Conv1d<T>, dx: Option<&mut [T]>) {
        let m = self.out_len(len).unwrap_or(0);
        let (ci, k) = (self.in_ch, self.kernel);
        let mut dx = dx;
        for t in 0..m {
            let base = t * self.stride;
            for o in 0..self.out_ch {
                let d = dy[t * self.out_ch + o];
                if d == T::zero() {
                    continue;
                }
                grad.bias[o] += d;
                let off = o * ci * k;
                for c in 0..ci {
                    for j in 0..k {
                        let xi = (base + j) * ci + c;
                        grad.weight[off + c * k + j] += d * x[xi];
                        if let Some(dx) = dx.as_deref_mut() {
                            dx[xi] += d * self.weight[off + c * k + j];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Parameters<T> for Conv1d<T> {
    fn views(&self) -> Vec<ParamView<'_, T>> {
        vec![
            ParamView {
                name: "weight".into(),
                shape: vec![self.out_ch, self.in_ch, self.kernel],
                values: &self.weight,
            },
            ParamView {
                name: "bias".into(),
                shape: vec![self.out_ch],
                values: &self.bias,
            },
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Convolution stack with rectifiers, mean over time, then a linear projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Cnn<T> {
    pub convs: Vec<Conv1d<T>>,
    pub proj: Linear<T>,
}

/// Per-window intermediates of [`Cnn::forward_traced`].
#[derive(Debug, Clone)]
pub struct CnnTrace<T> {
    /// `windows[w][l]` is the input of conv layer `l` for window `w`.
    windows: Vec<Vec<Vec<T>>>,
    /// Pre-activations of each conv layer per window.
    pre: Vec<Vec<Vec<T>>>,
    pooled: Vec<Vec<T>>,
    slice_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl<T: Scalar> Cnn<T> {
    pub fn init<R: Rng + ?Sized>(
        layers: &[ConvSpec],
        proj_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if layers.is_empty() || proj_dim == 0 {
            bail!(
                Shape,
                "CNN needs at least one conv layer and a non-zero projection"
            );
        }
        if layers
            .iter()
            .any(|s| s.channels == 0 || s.kernel == 0 || s.stride == 0)
        {
            bail!(Shape, "conv layer sizes must be non-zero");
        }
        let mut in_ch = 1;
        let mut convs = Vec::with_capacity(layers.len());
        for s in layers {
            convs.push(Conv1d::init(in_ch, s.channels, s.kernel, s.stride, rng));
            in_ch = s.channels;
        }
        Ok(Self {
            convs,
            proj: Linear::init(in_ch, proj_dim, rng),
        })
    }

    pub fn from_parts(convs: Vec<Conv1d<T>>, proj: Linear<T>) -> Result<Self> {
        if convs.is_empty() || convs[0].in_ch != 1 {
            bail!(Shape, "first conv layer must take a single channel");
        }
        if convs.windows(2).any(|w| w[0].out_ch != w[1].in_ch)
            || convs[convs.len() - 1].out_ch != proj.in_dim
        {
            bail!(Shape, "CNN layer channels do not chain");
        }
        if convs.iter().any(|c| {
            c.kernel == 0 || c.stride == 0 || c.weight.len() != c.out_ch * c.in_ch * c.kernel
        }) {
            bail!(Shape, "conv layer parameters inconsistent");
        }
        Ok(Self { convs, proj })
    }

    pub fn out_dim(&self) -> usize {
        self.proj.out_dim
    }

    /// Smallest slice length that leaves at least one step after every layer.
    pub fn min_slice_len(&self) -> usize {
        self.convs
            .iter()
            .rev()
            .fold(1, |need, c| (need - 1) * c.stride + c.kernel)
    }

    pub fn forward(&self, raw: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_traced(raw)?.0)
    }

    /// `raw` holds one single-channel slice per row.
    pub fn forward_traced(&self, raw: &Tensor<T>) -> Result<(Tensor<T>, CnnTrace<T>)> {
        if raw.shape().len() != 2 {
            bail!(
                Shape,
                "CNN input must be a matrix, got shape {:?}",
                raw.shape()
            );
        }
        let (n, len) = (raw.rows(), raw.cols());
        if len < self.min_slice_len() {
            bail!(
                Shape,
                "slice length {len} shorter than receptive field {}",
                self.min_slice_len()
            );
        }
        let mut windows = Vec::with_capacity(n);
        let mut pres = Vec::with_capacity(n);
        let mut pooled_all = Vec::with_capacity(n);
        let mut out = vec![T::zero(); n * self.out_dim()];
        for w in 0..n {
            let mut h = raw.row(w).to_vec();
            let mut cur = len;
            let mut inputs = Vec::with_capacity(self.convs.len());
            let mut pre = Vec::with_capacity(self.convs.len());
            for conv in &self.convs {
                let z = conv.apply(&h, cur);
                cur = conv.out_len(cur).unwrap_or(0);
                let a = z.iter().map(|&v| v.max(T::zero())).collect();
                inputs.push(std::mem::replace(&mut h, a));
                pre.push(z);
            }
            let ch = self.proj.in_dim;
            let inv = T::one() / T::from_usize_lossy(cur);
            let mut pooled = vec![T::zero(); ch];
            for t in 0..cur {
                for (p, &v) in pooled.iter_mut().zip(&h[t * ch..(t + 1) * ch]) {
                    *p += v;
                }
            }
            pooled.iter_mut().for_each(|p| *p *= inv);
            self.proj.forward(
                &pooled,
                &mut out[w * self.out_dim()..(w + 1) * self.out_dim()],
            );
            windows.push(inputs);
            pres.push(pre);
            pooled_all.push(pooled);
        }
        let trace = CnnTrace {
            windows,
            pre: pres,
            pooled: pooled_all,
            slice_len: len,
        };
        Ok((Tensor::matrix(n, self.out_dim(), out)?, trace))
    }

    /// Accumulates parameter gradients; the raw input receives none.
    pub fn backward(&self, trace: &CnnTrace<T>, dy: &Tensor<T>, grads: &mut Cnn<T>) -> Result<()> {
        dy.expect_matrix(self.out_dim(), "CNN output gradient")?;
        if dy.rows() != trace.windows.len() {
            bail!(
                Shape,
                "gradient has {} rows, forward pass had {}",
                dy.rows(),
                trace.windows.len()
            );
        }
        let ch = self.proj.in_dim;
        for w in 0..dy.rows() {
            let dyw = dy.row(w);
            if dyw.iter().all(|&v| v == T::zero()) {
                continue;
            }
            let mut dpool = vec![T::zero(); ch];
            self.proj.backward(
                &trace.pooled[w],
                dyw,
                Some(&mut grads.proj),
                Some(&mut dpool),
            );
            let mut lens = vec![trace.slice_len];
            for c in &self.convs {
                lens.push(c.out_len(lens[lens.len() - 1]).unwrap_or(0));
            }
            let last = lens[lens.len() - 1];
            let inv = T::one() / T::from_usize_lossy(last);
            let mut delta: Vec<T> = (0..last)
                .flat_map(|_| dpool.iter().map(move |&d| d * inv))
                .collect();
            for l in (0..self.convs.len()).rev() {
                for (d, &z) in delta.iter_mut().zip(&trace.pre[w][l]) {
                    if z <= T::zero() {
                        *d = T::zero();
                    }
                }
                let conv = &self.convs[l];
                let x = &trace.windows[w][l];
                if l == 0 {
                    conv.backprop(x, lens[l], &delta, &mut grads.convs[l], None);
                } else {
                    let mut dx = vec![T::zero(); x.len()];
                    conv.backprop(x, lens[l], &delta, &mut grads.convs[l], Some(&mut dx));
                    delta = dx;
                }
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Parameters<T> for Cnn<T> {
    fn views(&self) -> Vec<ParamView<'_, T>> {
        let mut v: Vec<_> = self
            .convs
            .iter()
            .enumerate()
            .flat_map(|(i, c)| prefixed(&format!("conv{i}"), c.views()))
            .collect();
        v.extend(prefixed("proj", self.proj.views()));
        v
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut v: Vec<&mut [T]> = self.convs.iter_mut().flat_map(|c| c.blocks_mut()).collect();
        v.extend(self.proj.blocks_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_projection_bias() {
        let convs = vec![Conv1d::<f64>::zeros(1, 3, 4, 2), Conv1d::zeros(3, 2, 3, 1)];
        let mut proj = Linear::zeros(2, 5);
        proj.bias = vec![1.0, -2.0, 0.5, 0.0, 3.0];
        let cnn = Cnn::from_parts(convs, proj).unwrap();
        let raw = Tensor::matrix(2, 20, (0..40).map(|v| (v as f64).sin()).collect()).unwrap();
        let y = cnn.forward(&raw).unwrap();
        assert_eq!(y.row(0), &[1.0, -2.0, 0.5, 0.0, 3.0]);
        assert_eq!(y.row(1), y.row(0));
    }

    #[test]
    fn constant_feature_map_survives_pooling() {
        // Zero kernel, bias 0.7: every step of the map equals 0.7.
        let mut conv = Conv1d::<f64>::zeros(1, 1, 3, 1);
        conv.bias[0] = 0.7;
        let mut proj = Linear::zeros(1, 1);
        proj.weight[0] = 1.0;
        let cnn = Cnn::from_parts(vec![conv], proj).unwrap();
        let raw = Tensor::matrix(1, 11, (0..11).map(|v| v as f64).collect()).unwrap();
        assert!((cnn.forward(&raw).unwrap().values()[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn short_slice_rejected() {
        let cnn = Cnn::<f64>::from_parts(
            vec![Conv1d::zeros(1, 2, 7, 2), Conv1d::zeros(2, 2, 7, 2)],
            Linear::zeros(2, 2),
        )
        .unwrap();
        assert_eq!(cnn.min_slice_len(), 19);
        assert!(cnn.forward(&Tensor::zeros(vec![1, 19])).is_ok());
        assert!(matches!(
            cnn.forward(&Tensor::zeros(vec![1, 18])),
            Err(crate::Error::Shape(_))
        ));
    }
}
