//! Teacher `H(S(T(x)))` and student `H(S'(T'(x) + A(raw)))` networks.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::features::{HrvVector, FEATURE_DIM};
use crate::scalar::Scalar;

use super::cnn::{Cnn, CnnTrace, ConvSpec};
use super::lstm::{BiLstm, BiLstmTrace};
use super::mlp::{Mlp, MlpTrace};
use super::params::{prefixed, ParamView, Parameters};
use super::tensor::{aggregate_add, Tensor};

/// Layer widths. Input widths are implied by the data and the previous block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Widths of the tail after its input layer; the last is the tail output.
    pub tail_sizes: Vec<usize>,
    pub lstm_hidden: usize,
    /// Hidden widths of the head; a single logit output is appended.
    pub head_hidden: Vec<usize>,
    pub conv: Vec<ConvSpec>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            tail_sizes: vec![32, 32],
            lstm_hidden: 32,
            head_hidden: vec![128, 128],
            conv: vec![
                ConvSpec {
                    channels: 8,
                    kernel: 7,
                    stride: 2,
                },
                ConvSpec {
                    channels: 16,
                    kernel: 7,
                    stride: 2,
                },
            ],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tail_sizes.is_empty() || self.tail_sizes.contains(&0) {
            bail!(Config, "tail sizes must be non-empty and positive");
        }
        if self.lstm_hidden == 0 || self.head_hidden.contains(&0) {
            bail!(Config, "hidden sizes must be positive");
        }
        if self
            .conv
            .iter()
            .any(|c| c.channels == 0 || c.kernel == 0 || c.stride == 0)
        {
            bail!(Config, "conv layer sizes must be positive");
        }
        Ok(())
    }

    pub fn tail_out(&self) -> usize {
        self.tail_sizes[self.tail_sizes.len() - 1]
    }
}

/// Per-feature z-scoring. Invalid windows map to the zero row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Scalar> FeatureNorm<T> {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![T::zero(); dim],
            std: vec![T::one(); dim],
        }
    }

    /// Statistics over the valid windows of all sequences.
    pub fn fit<'a, I>(sequences: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [HrvVector<T>]>,
    {
        let mut n = 0usize;
        let mut sum = [0.0f64; FEATURE_DIM];
        let mut sq = [0.0f64; FEATURE_DIM];
        for seq in sequences {
            for v in seq.iter().filter(|v| v.valid) {
                n += 1;
                for (k, x) in v.features().iter().enumerate() {
                    let x = x.as_f64();
                    sum[k] += x;
                    sq[k] += x * x;
                }
            }
        }
        if n == 0 {
            bail!(Data, "no valid windows to fit feature normalization");
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / nf - m * m).max(0.0);
                if var.sqrt() > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect::<Vec<_>>();
        Ok(Self {
            mean: mean.into_iter().map(T::lit).collect(),
            std: std.into_iter().map(T::lit).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, xs: &[HrvVector<T>]) -> Result<Tensor<T>> {
        if self.dim() != FEATURE_DIM {
            bail!(
                Shape,
                "normalizer has dimension {}, features have {FEATURE_DIM}",
                self.dim()
            );
        }
        let mut out = Vec::with_capacity(xs.len() * FEATURE_DIM);
        for v in xs {
            if v.valid {
                for (k, x) in v.features().iter().enumerate() {
                    out.push((*x - self.mean[k]) / self.std[k]);
                }
            } else {
                out.extend(std::iter::repeat_n(T::zero(), FEATURE_DIM));
            }
        }
        Tensor::matrix(xs.len(), FEATURE_DIM, out)
    }
}

/// Outputs of a forward pass: the representation `q` (`n x d`) and one logit per step.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs<T> {
    pub q: Tensor<T>,
    pub logits: Vec<T>,
}

/// A sequence model that can be differentiated at `q` and at the logits.
pub trait Network<T: Scalar>: Parameters<T> + Clone {
    type Trace;

    fn forward_traced(
        &self,
        features: &Tensor<T>,
        raw: Option<&Tensor<T>>,
    ) -> Result<(Outputs<T>, Self::Trace)>;

    /// Accumulates parameter gradients into `grads`. `dq` is an optional
    /// direct gradient at the representation, added to what flows back
    /// through the head.
    fn backward(
        &self,
        trace: &Self::Trace,
        dq: Option<&Tensor<T>>,
        dlogits: &[T],
        grads: &mut Self,
    ) -> Result<()>;

    fn forward(&self, features: &Tensor<T>, raw: Option<&Tensor<T>>) -> Result<Outputs<T>> {
        Ok(self.forward_traced(features, raw)?.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherModel<T> {
    pub tail: Mlp<T>,
    pub body: BiLstm<T>,
    pub head: Mlp<T>,
    pub norm: FeatureNorm<T>,
}

#[derive(Debug, Clone)]
pub struct TeacherTrace<T> {
    tail: MlpTrace<T>,
    body: BiLstmTrace<T>,
    head: MlpTrace<T>,
}

fn check_head<T: Scalar>(body: &BiLstm<T>, head: &Mlp<T>) -> Result<()> {
    if head.in_dim() != body.out_dim() || head.out_dim() != 1 {
        bail!(
            Shape,
            "head must map {} inputs to one logit, got {} -> {}",
            body.out_dim(),
            head.in_dim(),
            head.out_dim()
        );
    }
    Ok(())
}

fn head_pass<T: Scalar>(head: &Mlp<T>, q: Tensor<T>) -> Result<(Outputs<T>, MlpTrace<T>)> {
    let (logits, trace) = head.forward_traced(&q)?;
    Ok((
        Outputs {
            q,
            logits: logits.into_values(),
        },
        trace,
    ))
}

/// Back through the head (gradient into `head_grads` if given), then adds `dq`.
fn head_backward<T: Scalar>(
    head: &Mlp<T>,
    trace: &MlpTrace<T>,
    dq: Option<&Tensor<T>>,
    dlogits: &[T],
    head_grads: Option<&mut Mlp<T>>,
) -> Result<Tensor<T>> {
    let dl = Tensor::matrix(dlogits.len(), 1, dlogits.to_vec())?;
    let mut dqt = head.backward(trace, &dl, head_grads)?;
    if let Some(dq) = dq {
        dqt = aggregate_add(&dqt, dq)?;
    }
    Ok(dqt)
}

impl<T: Scalar> TeacherModel<T> {
    pub fn init<R: Rng + ?Sized>(
        cfg: &ModelConfig,
        norm: FeatureNorm<T>,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut tail_sizes = vec![norm.dim()];
        tail_sizes.extend(&cfg.tail_sizes);
        let tail = Mlp::init(&tail_sizes, rng)?;
        let body = BiLstm::init(cfg.tail_out(), cfg.lstm_hidden, rng)?;
        let mut head_sizes = vec![body.out_dim()];
        head_sizes.extend(&cfg.head_hidden);
        head_sizes.push(1);
        let head = Mlp::init(&head_sizes, rng)?;
        Self::from_parts(tail, body, head, norm)
    }

    pub fn from_parts(
        tail: Mlp<T>,
        body: BiLstm<T>,
        head: Mlp<T>,
        norm: FeatureNorm<T>,
    ) -> Result<Self> {
        if tail.in_dim() != norm.dim() {
            bail!(
                Shape,
                "tail expects {} features, normalizer has {}",
                tail.in_dim(),
                norm.dim()
            );
        }
        if tail.out_dim() != body.input_size() {
            bail!(
                Shape,
                "tail outputs {} but body expects {}",
                tail.out_dim(),
                body.input_size()
            );
        }
        check_head(&body, &head)?;
        Ok(Self {
            tail,
            body,
            head,
            norm,
        })
    }

    /// Representation width `d`.
    pub fn repr_dim(&self) -> usize {
        self.body.out_dim()
    }

    /// Normalizes raw feature windows and runs the network.
    pub fn predict(&self, xs: &[HrvVector<T>]) -> Result<Outputs<T>> {
        self.forward(&self.norm.apply(xs)?, None)
    }
}

impl<T: Scalar> Network<T> for TeacherModel<T> {
    type Trace = TeacherTrace<T>;

    fn forward_traced(
        &self,
        features: &Tensor<T>,
        _raw: Option<&Tensor<T>>,
    ) -> Result<(Outputs<T>, TeacherTrace<T>)> {
        let (r, tail) = self.tail.forward_traced(features)?;
        let (q, body) = self.body.forward_traced(&r)?;
        let (out, head) = head_pass(&self.head, q)?;
        Ok((out, TeacherTrace { tail, body, head }))
    }

    fn backward(
        &self,
        trace: &TeacherTrace<T>,
        dq: Option<&Tensor<T>>,
        dlogits: &[T],
        grads: &mut Self,
    ) -> Result<()> {
        let dq = head_backward(&self.head, &trace.head, dq, dlogits, Some(&mut grads.head))?;
        let dr = self.body.backward(&trace.body, &dq, &mut grads.body)?;
        self.tail
            .backward(&trace.tail, &dr, Some(&mut grads.tail))?;
        Ok(())
    }
}

impl<T: Scalar> Parameters<T> for TeacherModel<T> {
    fn views(&self) -> Vec<ParamView<'_, T>> {
        let mut v = prefixed("tail", self.tail.views());
        v.extend(prefixed("body", self.body.views()));
        v.extend(prefixed("head", self.head.views()));
        v
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.tail.blocks_mut();
        v.extend(self.body.blocks_mut());
        v.extend(self.head.blocks_mut());
        v
    }
}

/// Trainable `T'`, `S'` and optional `A`; the head is shared with the
/// teacher and never exposed as a parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel<T> {
    pub tail: Mlp<T>,
    pub body: BiLstm<T>,
    pub aux: Option<Cnn<T>>,
    head: Arc<Mlp<T>>,
}

#[derive(Debug, Clone)]
pub struct StudentTrace<T> {
    tail: MlpTrace<T>,
    aux: Option<CnnTrace<T>>,
    body: BiLstmTrace<T>,
    head: MlpTrace<T>,
}

impl<T: Scalar> StudentModel<T> {
    /// Copies `T` and `S` from the teacher and freezes a copy of `H`.
    pub fn from_teacher(teacher: &TeacherModel<T>, aux: Option<Cnn<T>>) -> Result<Self> {
        Self::from_parts(
            teacher.tail.clone(),
            teacher.body.clone(),
            aux,
            Arc::new(teacher.head.clone()),
        )
    }

    pub fn from_parts(
        tail: Mlp<T>,
        body: BiLstm<T>,
        aux: Option<Cnn<T>>,
        head: Arc<Mlp<T>>,
    ) -> Result<Self> {
        if tail.out_dim() != body.input_size() {
            bail!(
                Shape,
                "tail outputs {} but body expects {}",
                tail.out_dim(),
                body.input_size()
            );
        }
        if let Some(a) = &aux {
            if a.out_dim() != tail.out_dim() {
                bail!(
                    Shape,
                    "CNN projects to {} but the tail outputs {}",
                    a.out_dim(),
                    tail.out_dim()
                );
            }
        }
        check_head(&body, &head)?;
        Ok(Self {
            tail,
            body,
            aux,
            head,
        })
    }

    pub fn head(&self) -> &Mlp<T> {
        &self.head
    }

    pub fn shared_head(&self) -> Arc<Mlp<T>> {
        Arc::clone(&self.head)
    }

    pub fn repr_dim(&self) -> usize {
        self.body.out_dim()
    }
}

impl<T: Scalar> Network<T> for StudentModel<T> {
    type Trace = StudentTrace<T>;

    fn forward_traced(
        &self,
        features: &Tensor<T>,
        raw: Option<&Tensor<T>>,
    ) -> Result<(Outputs<T>, StudentTrace<T>)> {
        let (mut r, tail) = self.tail.forward_traced(features)?;
        let aux = match (&self.aux, raw) {
            (Some(cnn), Some(raw)) => {
                if raw.shape().len() != 2 || raw.rows() != features.rows() {
                    bail!(
                        Input,
                        "raw input has shape {:?}, expected {} rows",
                        raw.shape(),
                        features.rows()
                    );
                }
                let (a, trace) = cnn.forward_traced(raw)?;
                r = aggregate_add(&r, &a)?;
                Some(trace)
            }
            (Some(_), None) => bail!(
                Input,
                "student has a CNN branch but no raw input was supplied"
            ),
            (None, _) => None,
        };
        let (q, body) = self.body.forward_traced(&r)?;
        let (out, head) = head_pass(&self.head, q)?;
        Ok((
            out,
            StudentTrace {
                tail,
                aux,
                body,
                head,
            },
        ))
    }

    fn backward(
        &self,
        trace: &StudentTrace<T>,
        dq: Option<&Tensor<T>>,
        dlogits: &[T],
        grads: &mut Self,
    ) -> Result<()> {
        let dq = head_backward(&self.head, &trace.head, dq, dlogits, None)?;
        let dr = self.body.backward(&trace.body, &dq, &mut grads.body)?;
        self.tail
            .backward(&trace.tail, &dr, Some(&mut grads.tail))?;
        match (&self.aux, &trace.aux, grads.aux.as_mut()) {
            (Some(cnn), Some(t), Some(g)) => cnn.backward(t, &dr, g)?,
            (None, None, _) => {}
            _ => bail!(State, "trace and model disagree about the CNN branch"),
        }
        Ok(())
    }
}

impl<T: Scalar> Parameters<T> for StudentModel<T> {
    fn views(&self) -> Vec<ParamView<'_, T>> {
        let mut v = prefixed("tail", self.tail.views());
        v.extend(prefixed("body", self.body.views()));
        if let Some(a) = &self.aux {
            v.extend(prefixed("aux", a.views()));
        }
        v
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.tail.blocks_mut();
        v.extend(self.body.blocks_mut());
        if let Some(a) = self.aux.as_mut() {
            v.extend(a.blocks_mut());
        }
        v
    }
}

/// Pairs a model with the trace of its most recent forward pass.
#[derive(Debug)]
pub struct Tape<'m, T: Scalar, M: Network<T>> {
    model: &'m M,
    trace: Option<M::Trace>,
}

impl<'m, T: Scalar, M: Network<T>> Tape<'m, T, M> {
    pub fn new(model: &'m M) -> Self {
        Self { model, trace: None }
    }

    pub fn forward(&mut self, features: &Tensor<T>, raw: Option<&Tensor<T>>) -> Result<Outputs<T>> {
        let (out, trace) = self.model.forward_traced(features, raw)?;
        self.trace = Some(trace);
        Ok(out)
    }

    /// Consumes the recorded trace.
    pub fn backward(&mut self, dq: Option<&Tensor<T>>, dlogits: &[T], grads: &mut M) -> Result<()> {
        let Some(trace) = self.trace.take() else {
            bail!(State, "backward called without a recorded forward pass");
        };
        self.model.backward(&trace, dq, dlogits, grads)
    }
}
