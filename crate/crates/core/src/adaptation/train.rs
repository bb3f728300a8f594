use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::features::{HrvVector, PairedExample};
use crate::neural::{
    adam_step, AdamConfig, AdamState, FeatureNorm, Network, Outputs, TeacherModel, Tensor,
};
use crate::scalar::Scalar;

use super::loss::{bce_loss, cross_entropy_da_loss, hybrid_loss, HybridLossConfig, LossGrad};
use super::platt::PlattParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    BceLabels,
    HybridDistill,
    CrossEntropyDa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Sequences per optimizer step.
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub loss_mode: LossMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            lr: 1e-3,
            seed: 0,
            patience: 10,
            loss_mode: LossMode::BceLabels,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            bail!(Config, "batch size must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            bail!(Config, "learning rate must be positive, got {}", self.lr);
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Per-epoch losses; `val` is empty when no validation set was used.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainCurve {
    pub train: Vec<f64>,
    pub val: Vec<f64>,
    /// Epoch (1-based) whose parameters were kept; 0 means the initial ones.
    pub best_epoch: usize,
    pub steps: usize,
}

/// One training sequence with everything the objectives need.
#[derive(Debug, Clone)]
pub struct Sequence<T> {
    pub input: Tensor<T>,
    pub raw: Option<Tensor<T>>,
    pub labels: Vec<Option<u8>>,
    /// Steps whose input is valid and labelled.
    pub label_mask: Vec<bool>,
    /// Steps where both domains are valid.
    pub pair_mask: Vec<bool>,
    /// Teacher representation and calibrated logits on the source input.
    pub teacher: Option<Outputs<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

/// Teacher outputs on the source input with Platt-calibrated logits.
pub fn teacher_targets<T: Scalar>(
    teacher: &TeacherModel<T>,
    platt: &PlattParams,
    xa: &[HrvVector<T>],
) -> Result<Outputs<T>> {
    let mut out = teacher.predict(xa)?;
    for z in out.logits.iter_mut() {
        *z = T::lit(platt.apply(z.as_f64()));
    }
    Ok(out)
}

/// Stacks raw slices into an `n x len` tensor.
pub fn raw_tensor<T: Scalar>(slices: &[Vec<T>]) -> Result<Tensor<T>> {
    Tensor::from_rows(slices)
}

impl<T: Scalar> Sequence<T> {
    /// Normalizes the chosen domain; attaches raw slices when `with_raw`, and
    /// teacher targets when a teacher is given.
    pub fn prepare(
        ex: &PairedExample<T>,
        norm: &FeatureNorm<T>,
        domain: Domain,
        with_raw: bool,
        teacher: Option<(&TeacherModel<T>, &PlattParams)>,
    ) -> Result<Self> {
        let x = match domain {
            Domain::Source => &ex.xa,
            Domain::Target => &ex.xb,
        };
        let raw = if with_raw {
            match &ex.xb_raw {
                Some(r) => Some(raw_tensor(r)?),
                None => bail!(Input, "subject {} has no raw target slices", ex.subject_id),
            }
        } else {
            None
        };
        let label_mask = x
            .iter()
            .zip(&ex.labels)
            .map(|(v, l)| v.valid && l.is_some())
            .collect();
        let teacher = teacher
            .map(|(t, p)| teacher_targets(t, p, &ex.xa))
            .transpose()?;
        Ok(Self {
            input: norm.apply(x)?,
            raw,
            labels: ex.labels.clone(),
            label_mask,
            pair_mask: ex.paired_mask(),
            teacher,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// What a training run minimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Labels,
    Distill(HybridLossConfig),
    LabelsWithActivations { alpha: f64 },
}

impl Objective {
    pub fn from_mode(mode: LossMode, hybrid: HybridLossConfig) -> Self {
        match mode {
            LossMode::BceLabels => Self::Labels,
            LossMode::HybridDistill => Self::Distill(hybrid),
            LossMode::CrossEntropyDa => Self::LabelsWithActivations {
                alpha: hybrid.alpha,
            },
        }
    }

    fn usable_steps<T>(&self, s: &Sequence<T>) -> usize {
        let mask = match self {
            Self::Distill(_) => &s.pair_mask,
            _ => &s.label_mask,
        };
        mask.iter().filter(|&&m| m).count()
    }

    fn needs_teacher(&self) -> bool {
        match self {
            Self::Labels => false,
            Self::Distill(_) => true,
            Self::LabelsWithActivations { alpha } => *alpha > 0.0,
        }
    }
}

fn stack_rows<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let cols = parts.first().map_or(0, |t| t.cols());
    let rows = parts.iter().map(|t| t.rows()).sum();
    let mut values = Vec::with_capacity(rows * cols);
    for p in parts {
        values.extend_from_slice(p.values());
    }
    Tensor::matrix(rows, cols, values)
}

/// Evaluates the objective over several sequences at once, so `n` counts
/// every usable step in the batch.
pub fn batch_loss<T: Scalar>(
    outs: &[Outputs<T>],
    seqs: &[&Sequence<T>],
    obj: &Objective,
) -> Result<LossGrad<T>> {
    let q = stack_rows(&outs.iter().map(|o| &o.q).collect::<Vec<_>>())?;
    let logits: Vec<T> = outs.iter().flat_map(|o| o.logits.iter().copied()).collect();
    let student = Outputs { q, logits };
    let cat_mask = |f: fn(&Sequence<T>) -> &Vec<bool>| -> Vec<bool> {
        seqs.iter().flat_map(|s| f(s).iter().copied()).collect()
    };
    let teacher = || -> Result<Outputs<T>> {
        let parts: Vec<&Outputs<T>> = seqs
            .iter()
            .map(|s| s.teacher.as_ref())
            .collect::<Option<_>>()
            .ok_or_else(|| crate::Error::Data("teacher targets missing".into()))?;
        Ok(Outputs {
            q: stack_rows(&parts.iter().map(|o| &o.q).collect::<Vec<_>>())?,
            logits: parts
                .iter()
                .flat_map(|o| o.logits.iter().copied())
                .collect(),
        })
    };
    match obj {
        Objective::Labels => {
            let labels: Vec<Option<u8>> =
                seqs.iter().flat_map(|s| s.labels.iter().copied()).collect();
            let (loss, dlogits) = bce_loss(&student.logits, &labels, &cat_mask(|s| &s.label_mask))?;
            Ok(LossGrad {
                loss,
                dq: Tensor::zeros(student.q.shape().to_vec()),
                dlogits,
            })
        }
        Objective::Distill(cfg) => {
            hybrid_loss(&student, &teacher()?, &cat_mask(|s| &s.pair_mask), cfg)
        }
        Objective::LabelsWithActivations { alpha } => {
            let labels: Vec<Option<u8>> =
                seqs.iter().flat_map(|s| s.labels.iter().copied()).collect();
            let tq = if *alpha > 0.0 {
                teacher()?.q
            } else {
                Tensor::zeros(student.q.shape().to_vec())
            };
            cross_entropy_da_loss(
                &student,
                &tq,
                &labels,
                &cat_mask(|s| &s.label_mask),
                &cat_mask(|s| &s.pair_mask),
                *alpha,
            )
        }
    }
}

/// Splits stacked output gradients back into per-sequence pieces.
fn split_grad<T: Scalar>(
    g: &LossGrad<T>,
    seqs: &[&Sequence<T>],
) -> Result<Vec<(Tensor<T>, Vec<T>)>> {
    let d = g.dq.cols();
    let mut out = Vec::with_capacity(seqs.len());
    let mut off = 0;
    for s in seqs {
        let n = s.len();
        let dq = Tensor::matrix(n, d, g.dq.values()[off * d..(off + n) * d].to_vec())?;
        out.push((dq, g.dlogits[off..off + n].to_vec()));
        off += n;
    }
    Ok(out)
}

/// Mean objective over `seqs`, without gradients.
pub fn evaluate_loss<T: Scalar, M: Network<T>>(
    model: &M,
    seqs: &[Sequence<T>],
    obj: &Objective,
) -> Result<f64> {
    let used: Vec<&Sequence<T>> = seqs.iter().filter(|s| obj.usable_steps(s) > 0).collect();
    if used.is_empty() {
        bail!(Data, "no usable steps for evaluation");
    }
    let outs = used
        .iter()
        .map(|s| model.forward(&s.input, s.raw.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Ok(batch_loss(&outs, &used, obj)?.loss.as_f64())
}

/// Minimizes `obj` with Adam over shuffled mini-batches of sequences.
///
/// With a non-empty `val` and a positive patience, training stops early and
/// the parameters of the best validation epoch are restored.
pub fn fit<T: Scalar, M: Network<T>>(
    model: &mut M,
    train: &[Sequence<T>],
    val: Option<&[Sequence<T>]>,
    cfg: &TrainConfig,
    obj: &Objective,
) -> Result<TrainCurve> {
    cfg.validate()?;
    if let Objective::Distill(h) = obj {
        h.validate()?;
    }
    let mut curve = TrainCurve::default();
    if cfg.epochs == 0 {
        return Ok(curve);
    }
    let usable: Vec<usize> = (0..train.len())
        .filter(|&i| obj.usable_steps(&train[i]) > 0)
        .collect();
    if usable.is_empty() {
        bail!(Data, "every training step is masked or unlabelled");
    }
    if obj.needs_teacher() && usable.iter().any(|&i| train[i].teacher.is_none()) {
        bail!(Data, "objective needs teacher targets");
    }
    let val = val.filter(|v| cfg.patience > 0 && v.iter().any(|s| obj.usable_steps(s) > 0));
    let adam = cfg.adam();
    let mut state = AdamState::new(model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = usable;
    let mut best: Option<(f64, M)> = None;
    if let Some(v) = val {
        best = Some((evaluate_loss(model, v, obj)?, model.clone()));
    }
    let mut since_best = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let seqs: Vec<&Sequence<T>> = idx.iter().map(|&i| &train[i]).collect();
            let mut outs = Vec::with_capacity(seqs.len());
            let mut traces = Vec::with_capacity(seqs.len());
            for s in &seqs {
                let (o, t) = model.forward_traced(&s.input, s.raw.as_ref())?;
                outs.push(o);
                traces.push(t);
            }
            let lg = batch_loss(&outs, &seqs, obj)?;
            let mut grads = model.zeros_like();
            for ((dq, dl), tr) in split_grad(&lg, &seqs)?.iter().zip(&traces) {
                model.backward(tr, Some(dq), dl, &mut grads)?;
            }
            adam_step(model, &grads, &mut state, &adam)?;
            total += lg.loss.as_f64();
            batches += 1;
            curve.steps += 1;
        }
        curve.train.push(total / batches as f64);
        if let Some(v) = val {
            let loss = evaluate_loss(model, v, obj)?;
            curve.val.push(loss);
            let (best_loss, _) = best.as_ref().expect("initialized with validation");
            if loss < *best_loss {
                best = Some((loss, model.clone()));
                curve.best_epoch = epoch;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        } else {
            curve.best_epoch = epoch;
        }
    }
    if let Some((_, m)) = best {
        *model = m;
    }
    Ok(curve)
}
