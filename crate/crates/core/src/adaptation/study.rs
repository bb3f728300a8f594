use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::evaluation::{
    loso_folds, pooled_evaluate, FoldPlan, PooledMetrics, Prediction, PredictionSet,
};
use crate::features::PairedExample;
use crate::neural::{Cnn, FeatureNorm, ModelConfig, Network, StudentModel, TeacherModel};
use crate::scalar::Scalar;

use super::loss::HybridLossConfig;
use super::platt::{platt_calibrate_smoothed, PlattParams};
use super::train::{fit, Domain, LossMode, Objective, Sequence, TrainConfig, TrainCurve};
use super::variant::{InputDomain, ModelKind, Recipe, VariantSpec};

/// A trained teacher with its calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedTeacher<T> {
    pub model: TeacherModel<T>,
    pub platt: PlattParams,
    pub curve: TrainCurve,
}

fn chunked<T: Scalar>(examples: &[PairedExample<T>], len: usize) -> Vec<PairedExample<T>> {
    examples.iter().flat_map(|e| e.chunks(len)).collect()
}

fn prepare_all<T: Scalar>(
    examples: &[PairedExample<T>],
    norm: &FeatureNorm<T>,
    domain: Domain,
    with_raw: bool,
    teacher: Option<(&TeacherModel<T>, &PlattParams)>,
) -> Result<Vec<Sequence<T>>> {
    examples
        .iter()
        .map(|e| Sequence::prepare(e, norm, domain, with_raw, teacher))
        .collect()
}

/// Trains a freshly initialized teacher on labelled source windows.
///
/// Normalization statistics come from `train`; `val`, when non-empty, drives
/// early stopping.
pub fn pretrain_teacher<T: Scalar>(
    train: &[PairedExample<T>],
    val: &[PairedExample<T>],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(TeacherModel<T>, TrainCurve)> {
    if train.is_empty() {
        bail!(Data, "no source examples to pre-train on");
    }
    let norm = FeatureNorm::fit(train.iter().map(|e| e.xa.as_slice()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut teacher = TeacherModel::init(model_cfg, norm, &mut rng)?;
    let tr = prepare_all(train, &teacher.norm, Domain::Source, false, None)?;
    if !tr.iter().any(|s| s.label_mask.iter().any(|&m| m)) {
        bail!(Data, "every source window is masked or unlabelled");
    }
    let va = prepare_all(val, &teacher.norm, Domain::Source, false, None)?;
    let curve = fit(&mut teacher, &tr, Some(&va), cfg, &Objective::Labels)?;
    Ok((teacher, curve))
}

/// Platt scaling (with Platt's smoothed targets) of teacher logits on the
/// labelled, valid source windows.
pub fn calibrate_teacher<T: Scalar>(
    teacher: &TeacherModel<T>,
    examples: &[PairedExample<T>],
) -> Result<PlattParams> {
    let (mut z, mut y) = (Vec::new(), Vec::new());
    for ex in examples {
        let out = teacher.predict(&ex.xa)?;
        for ((logit, v), l) in out.logits.iter().zip(&ex.xa).zip(&ex.labels) {
            if let (true, Some(label)) = (v.valid, l) {
                z.push(logit.as_f64());
                y.push(*label);
            }
        }
    }
    platt_calibrate_smoothed(&z, &y)
}

/// Copies tail and body, freezes the head, adds a fresh CNN when asked.
pub fn clone_student<T: Scalar>(
    teacher: &TeacherModel<T>,
    use_cnn: bool,
    model_cfg: &ModelConfig,
    seed: u64,
) -> Result<StudentModel<T>> {
    let aux = if use_cnn {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Some(Cnn::init(
            &model_cfg.conv,
            teacher.tail.out_dim(),
            &mut rng,
        )?)
    } else {
        None
    };
    StudentModel::from_teacher(teacher, aux)
}

/// Trains a student against the teacher on paired windows.
///
/// `cfg.loss_mode` picks distillation (`hybrid_distill`) or label
/// cross-entropy plus the activation term (`cross_entropy_da`).
pub fn train_student<T: Scalar>(
    student: &mut StudentModel<T>,
    teacher: &PretrainedTeacher<T>,
    paired: &[PairedExample<T>],
    val: Option<&[PairedExample<T>]>,
    cfg: &TrainConfig,
    loss: &HybridLossConfig,
) -> Result<TrainCurve> {
    let obj = match cfg.loss_mode {
        LossMode::BceLabels => bail!(
            Config,
            "students train with hybrid_distill or cross_entropy_da"
        ),
        m => Objective::from_mode(m, *loss),
    };
    let with_raw = student.aux.is_some();
    let t = Some((&teacher.model, &teacher.platt));
    let tr = prepare_all(paired, &teacher.model.norm, Domain::Target, with_raw, t)?;
    let va = val
        .map(|v| prepare_all(v, &teacher.model.norm, Domain::Target, with_raw, t))
        .transpose()?;
    fit(student, &tr, va.as_deref(), cfg, &obj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyOptions {
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub train: TrainConfig,
    pub alpha: f64,
    /// CNN default for the adaptation rows that leave it open.
    pub use_cnn: bool,
    pub chunk_len: usize,
    /// Share of pre-training subjects held out for calibration and early stopping.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            pretrain: TrainConfig::default(),
            train: TrainConfig::default(),
            alpha: 1.0,
            use_cnn: false,
            chunk_len: 64,
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Deterministic stream id for a named stage of the run.
fn derive_seed(base: u64, stage: u64, index: u64) -> u64 {
    let mut x = base
        ^ stage.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 33;
    x = x.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    x ^ (x >> 33)
}

/// Splits `items` into (kept, held out) with a seeded shuffle; at least one
/// item is held out when there are two or more.
fn holdout_split<T: Clone>(items: &[T], fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    if items.len() < 2 {
        return (items.to_vec(), Vec::new());
    }
    let k = ((items.len() as f64 * fraction).round() as usize).clamp(1, items.len() - 1);
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held: Vec<usize> = idx[..k].to_vec();
    let kept = (0..items.len())
        .filter(|i| !held.contains(i))
        .map(|i| items[i].clone())
        .collect();
    let mut held_sorted = held;
    held_sorted.sort_unstable();
    (
        kept,
        held_sorted.into_iter().map(|i| items[i].clone()).collect(),
    )
}

/// Pre-trains on `subjects` (minus a held-out share) and calibrates on the rest.
fn build_teacher<T: Scalar>(
    subjects: &[PairedExample<T>],
    opts: &StudyOptions,
    seed: u64,
) -> Result<PretrainedTeacher<T>> {
    let (fit_set, held) = holdout_split(subjects, opts.holdout_fraction, derive_seed(seed, 1, 0));
    let (fit_c, held_c) = (
        chunked(&fit_set, opts.chunk_len),
        chunked(&held, opts.chunk_len),
    );
    let cfg = TrainConfig {
        seed: derive_seed(seed, 2, 0),
        loss_mode: LossMode::BceLabels,
        ..opts.pretrain.clone()
    };
    let (model, curve) = pretrain_teacher(&fit_c, &held_c, &opts.model, &cfg)?;
    let calib = if held.is_empty() { &fit_set } else { &held };
    let platt = calibrate_teacher(&model, calib)?;
    Ok(PretrainedTeacher {
        model,
        platt,
        curve,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel<T> {
    Teacher(TeacherModel<T>),
    Student(StudentModel<T>),
}

#[derive(Debug, Clone)]
pub struct FoldOutcome<T> {
    pub validation: Vec<String>,
    pub predictions: PredictionSet,
    pub model: TrainedModel<T>,
    pub teacher: Arc<PretrainedTeacher<T>>,
    pub curve: TrainCurve,
}

#[derive(Debug, Clone)]
pub struct VariantRun<T> {
    pub spec: VariantSpec,
    pub recipe: Recipe,
    pub folds: Vec<FoldOutcome<T>>,
}

impl<T> VariantRun<T> {
    pub fn predictions(&self) -> Vec<PredictionSet> {
        self.folds.iter().map(|f| f.predictions.clone()).collect()
    }

    pub fn pooled(&self) -> Result<PooledMetrics> {
        pooled_evaluate(&self.predictions())
    }
}

/// Leave-one-subject-out runner. Teachers are trained once and shared by
/// every variant: a single one on a separate source pool when supplied,
/// otherwise one per fold on that fold's training subjects.
#[derive(Debug)]
pub struct LosoStudy<T> {
    subjects: Vec<PairedExample<T>>,
    plan: FoldPlan,
    teachers: Vec<Arc<PretrainedTeacher<T>>>,
    opts: StudyOptions,
}

impl<T: Scalar> LosoStudy<T> {
    pub fn prepare(
        subjects: Vec<PairedExample<T>>,
        source_pool: Option<&[PairedExample<T>]>,
        opts: StudyOptions,
    ) -> Result<Self> {
        if opts.chunk_len == 0 {
            bail!(Config, "chunk length must be positive");
        }
        let ids: Vec<&str> = subjects.iter().map(|s| s.subject_id.as_str()).collect();
        let plan = loso_folds(&ids)?;
        let teachers = match source_pool {
            Some(pool) => vec![Arc::new(build_teacher(
                pool,
                &opts,
                derive_seed(opts.seed, 3, 0),
            )?)],
            None => plan
                .folds
                .iter()
                .enumerate()
                .map(|(k, f)| {
                    let train: Vec<PairedExample<T>> = subjects
                        .iter()
                        .filter(|s| f.training.contains(&s.subject_id))
                        .cloned()
                        .collect();
                    Ok(Arc::new(build_teacher(
                        &train,
                        &opts,
                        derive_seed(opts.seed, 3, k as u64 + 1),
                    )?))
                })
                .collect::<Result<_>>()?,
        };
        Ok(Self {
            subjects,
            plan,
            teachers,
            opts,
        })
    }

    pub fn plan(&self) -> &FoldPlan {
        &self.plan
    }

    pub fn options(&self) -> &StudyOptions {
        &self.opts
    }

    pub fn subjects(&self) -> &[PairedExample<T>] {
        &self.subjects
    }

    pub fn teacher(&self, fold: usize) -> &Arc<PretrainedTeacher<T>> {
        &self.teachers[if self.teachers.len() == 1 { 0 } else { fold }]
    }

    pub fn run(&self, spec: &VariantSpec) -> Result<VariantRun<T>> {
        let recipe = spec.recipe(self.opts.alpha, self.opts.use_cnn)?;
        let folds = (0..self.plan.folds.len())
            .map(|k| self.run_fold(&recipe, k))
            .collect::<Result<_>>()?;
        Ok(VariantRun {
            spec: spec.clone(),
            recipe,
            folds,
        })
    }

    fn run_fold(&self, recipe: &Recipe, k: usize) -> Result<FoldOutcome<T>> {
        let fold = &self.plan.folds[k];
        let teacher = Arc::clone(self.teacher(k));
        let of = |ids: &[String]| -> Vec<PairedExample<T>> {
            self.subjects
                .iter()
                .filter(|s| ids.contains(&s.subject_id))
                .cloned()
                .collect()
        };
        let (train_subjects, val_subjects) = (of(&fold.training), of(&fold.validation));
        let base = recipe.seed.unwrap_or(self.opts.seed);
        let seed = derive_seed(base, 10 + recipe.name.rank() as u64, k as u64);
        let cfg = TrainConfig {
            epochs: recipe.epochs.unwrap_or(self.opts.train.epochs),
            lr: recipe.lr.unwrap_or(self.opts.train.lr),
            seed,
            loss_mode: recipe.loss_mode.unwrap_or(LossMode::BceLabels),
            ..self.opts.train.clone()
        };
        // Label-supervised rows hold out target subjects for early stopping;
        // teacher-supervised rows use every training subject for a fixed budget.
        let (fit_subjects, stop_subjects) = if recipe.uses_labels() {
            holdout_split(
                &train_subjects,
                self.opts.holdout_fraction,
                derive_seed(seed, 4, 0),
            )
        } else {
            (train_subjects, Vec::new())
        };
        let (train_c, stop_c) = (
            chunked(&fit_subjects, self.opts.chunk_len),
            chunked(&stop_subjects, self.opts.chunk_len),
        );
        let stop = (!stop_c.is_empty()).then_some(stop_c.as_slice());
        let hybrid = recipe.loss.unwrap_or_default();
        let tref = Some((&teacher.model, &teacher.platt));
        let norm = &teacher.model.norm;
        let (model, curve, domain) = match recipe.kind {
            ModelKind::Teacher(d) => (
                TrainedModel::Teacher(teacher.model.clone()),
                TrainCurve::default(),
                d,
            ),
            ModelKind::Fresh | ModelKind::FineTune => {
                let mut m = if recipe.kind == ModelKind::Fresh {
                    TeacherModel::init(
                        &self.opts.model,
                        norm.clone(),
                        &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 5, 0)),
                    )?
                } else {
                    teacher.model.clone()
                };
                let obj = Objective::from_mode(cfg.loss_mode, hybrid);
                let tr = prepare_all(&train_c, norm, Domain::Target, false, tref)?;
                let va = stop
                    .map(|v| prepare_all(v, norm, Domain::Target, false, tref))
                    .transpose()?;
                let curve = fit(&mut m, &tr, va.as_deref(), &cfg, &obj)?;
                (TrainedModel::Teacher(m), curve, InputDomain::Target)
            }
            ModelKind::Student => {
                let mut s = clone_student(
                    &teacher.model,
                    recipe.use_cnn,
                    &self.opts.model,
                    derive_seed(seed, 6, 0),
                )?;
                let curve = train_student(&mut s, &teacher, &train_c, stop, &cfg, &hybrid)?;
                (TrainedModel::Student(s), curve, InputDomain::Target)
            }
        };
        let calibrate = matches!(recipe.kind, ModelKind::Teacher(_));
        let predictions = predict(
            &model,
            &teacher,
            &val_subjects,
            domain,
            calibrate,
            self.opts.chunk_len,
        )?;
        Ok(FoldOutcome {
            validation: fold.validation.clone(),
            predictions,
            model,
            teacher,
            curve,
        })
    }
}

/// Scores every evaluable window (labelled, valid in both domains) chunk by
/// chunk. Scores are logits; teacher logits are Platt-calibrated when asked.
pub fn predict<T: Scalar>(
    model: &TrainedModel<T>,
    teacher: &PretrainedTeacher<T>,
    subjects: &[PairedExample<T>],
    domain: InputDomain,
    calibrate: bool,
    chunk_len: usize,
) -> Result<PredictionSet> {
    let norm = &teacher.model.norm;
    let mut entries = Vec::new();
    for chunk in chunked(subjects, chunk_len) {
        let x = match domain {
            InputDomain::Source => &chunk.xa,
            InputDomain::Target => &chunk.xb,
        };
        let input = norm.apply(x)?;
        let logits = match model {
            TrainedModel::Teacher(m) => m.forward(&input, None)?.logits,
            TrainedModel::Student(s) => {
                let raw = match (&s.aux, &chunk.xb_raw) {
                    (Some(_), Some(r)) => Some(super::train::raw_tensor(r)?),
                    (Some(_), None) => bail!(
                        Input,
                        "subject {} has no raw target slices",
                        chunk.subject_id
                    ),
                    (None, _) => None,
                };
                s.forward(&input, raw.as_ref())?.logits
            }
        };
        for (i, m) in chunk.eval_mask().into_iter().enumerate() {
            if !m {
                continue;
            }
            let z = logits[i].as_f64();
            entries.push(Prediction {
                subject_id: chunk.subject_id.clone(),
                window_index: chunk.offset + i,
                score: if calibrate { teacher.platt.apply(z) } else { z },
                label: chunk.labels[i].expect("eval mask implies a label"),
            });
        }
    }
    PredictionSet::new(entries)
}
