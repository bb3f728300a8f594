//! Data assembly and experiment orchestration behind the CLI verbs.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use tsda::adaptation::{
    clone_student, predict, train_student, InputDomain, ModelKind, PretrainedTeacher, Recipe,
    StudyOptions, TrainConfig, TrainedModel, VariantRun, VariantSpec,
};
use tsda::evaluation::{pooled_evaluate, MetricsReport, PooledMetrics, PredictionSet, ReportRow};
use tsda::features::{FeatureConfig, HrvVector, WindowCounts};
use tsda::shift::{generate_toy_study, shift_toy_subject, ToyStudyConfig};
use tsda::{LosoStudy, PairedExample, TeacherModel};

use crate::artifact::ModelArtifact;
use crate::config::{DataKind, DataSection, ExperimentConfig, TrainSection};
use crate::error::{CliError, Result};
use crate::fsio;
use crate::record::{ingest_dir, Detectors, SubjectRecord};
use crate::report::{emit_report, order_rows};

/// Subject records of a run: the LOSO cohort and an optional pre-training pool.
#[derive(Debug, Clone)]
pub struct StudyData {
    pub subjects: Vec<SubjectRecord>,
    pub pool: Option<Vec<SubjectRecord>>,
}

/// Seeds of the toy cohorts and their shifts, all derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToySeeds {
    pub study: u64,
    pub study_shift: u64,
    pub pool: u64,
    pub pool_shift: u64,
}

impl ToySeeds {
    pub fn of(seed: u64) -> Self {
        Self {
            study: seed.wrapping_mul(2).wrapping_add(1),
            study_shift: seed,
            pool: seed.wrapping_mul(2).wrapping_add(1000),
            pool_shift: seed.wrapping_add(1000),
        }
    }
}

fn toy_cohort(
    cfg: &ExperimentConfig,
    toy: &ToyStudyConfig,
    seed: u64,
    shift_seed: u64,
    render: bool,
) -> Result<Vec<SubjectRecord>> {
    let toy = ToyStudyConfig {
        seed,
        ..toy.clone()
    };
    let render = if render {
        cfg.data.render.as_ref()
    } else {
        None
    };
    generate_toy_study(&toy)?
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let sh = shift_toy_subject(s, k, &cfg.shift, render, toy.duration_s(), shift_seed)?;
            Ok(SubjectRecord::from_shifted(&sh, &s.peaks))
        })
        .collect()
}

/// Generates the toy cohorts with the HMM shift applied to every subject.
pub fn toy_data(cfg: &ExperimentConfig, seed: u64) -> Result<StudyData> {
    let s = ToySeeds::of(seed);
    let subjects = toy_cohort(cfg, &cfg.data.toy, s.study, s.study_shift, true)?;
    let pool = cfg
        .data
        .pool_toy
        .as_ref()
        .map(|p| toy_cohort(cfg, p, s.pool, s.pool_shift, false))
        .transpose()?;
    Ok(StudyData { subjects, pool })
}

pub fn load_data(cfg: &ExperimentConfig, seed: u64) -> Result<StudyData> {
    match cfg.data.kind {
        DataKind::Toy => toy_data(cfg, seed),
        DataKind::Records => {
            let dir = cfg
                .data
                .records
                .as_deref()
                .ok_or_else(|| CliError::Config("data.records is not set".into()))?;
            let subjects = ingest_dir(dir)?;
            let pool = cfg.data.pool.as_deref().map(ingest_dir).transpose()?;
            Ok(StudyData { subjects, pool })
        }
    }
}

/// Windows every subject; raw target slices are attached when `with_raw`.
pub fn paired_subjects(
    records: &[SubjectRecord],
    detectors: &Detectors,
    features: &FeatureConfig,
    with_raw: bool,
) -> Result<Vec<PairedExample>> {
    records
        .iter()
        .map(|r| Ok(r.resolve(detectors)?.to_paired(features, with_raw)?.0))
        .collect()
}

/// Pool subjects only feed the teacher, so a missing target falls back to the source.
pub fn paired_pool(
    records: &[SubjectRecord],
    detectors: &Detectors,
    features: &FeatureConfig,
) -> Result<Vec<PairedExample>> {
    records
        .iter()
        .map(|r| {
            let mut s = r.resolve(detectors)?;
            if s.target.is_none() {
                s.target = Some(s.source.clone());
            }
            Ok(s.to_paired(features, false)?.0)
        })
        .collect()
}

#[derive(Serialize)]
struct DigestInput<'a> {
    seed: u64,
    data: &'a DataSection,
    model: &'a tsda::neural::ModelConfig,
    shift: &'a tsda::shift::HmmShiftConfig,
    train: &'a TrainSection,
    variant: &'a VariantSpec,
    recipe: &'a Recipe,
}

/// SHA-256 (hex) of everything that determines one report row.
pub fn config_digest(
    cfg: &ExperimentConfig,
    seed: u64,
    spec: &VariantSpec,
    recipe: &Recipe,
) -> String {
    let input = DigestInput {
        seed,
        data: &cfg.data,
        model: &cfg.model,
        shift: &cfg.shift,
        train: &cfg.train,
        variant: spec,
        recipe,
    };
    let json = serde_json::to_vec(&input).expect("digest input serializes");
    Sha256::digest(&json)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Everything a run produced, for callers that need more than the report.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub report: MetricsReport,
    pub runs: Vec<VariantRun<f64>>,
    pub digests: Vec<String>,
    pub study: LosoStudy,
}

fn resolve_recipes(specs: &[VariantSpec], opts: &StudyOptions) -> Result<Vec<Recipe>> {
    Ok(specs
        .iter()
        .map(|s| s.recipe(opts.alpha, opts.use_cnn))
        .collect::<tsda::Result<_>>()?)
}

fn require_labels(data: &StudyData, recipes: &[Recipe]) -> Result<()> {
    let Some(r) = recipes.iter().find(|r| r.uses_labels()) else {
        return Ok(());
    };
    match data.subjects.iter().find(|s| s.labels.is_none()) {
        Some(s) => Err(CliError::Data(format!(
            "variant {} trains on labels but subject {} has none",
            r.name, s.subject_id
        ))),
        None => Ok(()),
    }
}

/// Prepares the cohort and runs every configured variant under leave-one-subject-out.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<ExperimentOutcome> {
    let specs = cfg.variant_specs();
    let opts = cfg.study_options(seed);
    let recipes = resolve_recipes(&specs, &opts)?;
    let data = load_data(cfg, seed)?;
    require_labels(&data, &recipes)?;
    let with_raw = recipes.iter().any(|r| r.use_cnn);
    let subjects = paired_subjects(
        &data.subjects,
        &cfg.data.detectors,
        &cfg.data.features,
        with_raw,
    )?;
    let pool = data
        .pool
        .as_deref()
        .map(|p| paired_pool(p, &cfg.data.detectors, &cfg.data.features))
        .transpose()?;
    let study = LosoStudy::prepare(subjects, pool.as_deref(), opts)?;
    let mut rows = Vec::with_capacity(specs.len());
    let mut runs = Vec::with_capacity(specs.len());
    let mut digests = Vec::with_capacity(specs.len());
    for (spec, recipe) in specs.iter().zip(&recipes) {
        let run = study.run(spec)?;
        let m = run.pooled()?;
        let digest = config_digest(cfg, seed, spec, recipe);
        log::info!("{}: roc {:.4} pr {:.4}", spec.name, m.roc_auc, m.pr_auc);
        rows.push(ReportRow::new(
            spec.name.as_str(),
            m,
            recipe.seed.unwrap_or(seed),
            digest.clone(),
        ));
        runs.push(run);
        digests.push(digest);
    }
    let mut report = MetricsReport { rows };
    order_rows(&mut report);
    report.validate()?;
    Ok(ExperimentOutcome {
        report,
        runs,
        digests,
        study,
    })
}

/// `run`: the full variant matrix, written as report files.
pub fn cmd_run(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    let outcome = run_experiment(cfg, seed)?;
    emit_report(&outcome.report, out, &cfg.output.formats)
}

fn write_records(dir: &Path, records: &[SubjectRecord]) -> Result<()> {
    for r in records {
        r.save(&dir.join(format!("{}.json", r.subject_id)))?;
    }
    Ok(())
}

/// `toy`: writes the shifted toy cohort (and pool) as subject records.
pub fn cmd_toy(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<()> {
    let data = toy_data(cfg, seed)?;
    write_records(&out.join("subjects"), &data.subjects)?;
    if let Some(p) = &data.pool {
        write_records(&out.join("pool"), p)?;
    }
    Ok(())
}

/// `shift`: replaces every subject's target with an HMM perturbation of its source.
pub fn cmd_shift(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<()> {
    let data = load_data(cfg, seed)?;
    let shifted = data
        .subjects
        .iter()
        .enumerate()
        .map(|(k, r)| r.shifted(k, &cfg.shift, seed, &cfg.data.detectors))
        .collect::<Result<Vec<_>>>()?;
    write_records(&out.join("subjects"), &shifted)
}

#[derive(Serialize)]
struct FeatureFile<'a> {
    subject_id: &'a str,
    counts: WindowCounts,
    source: &'a [HrvVector<f64>],
    target: &'a [HrvVector<f64>],
    labels: &'a [Option<u8>],
}

/// `prepare`: detects peaks where only waveforms exist and writes the
/// windowed features of every subject.
pub fn cmd_prepare(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<()> {
    let data = load_data(cfg, seed)?;
    let det = &cfg.data.detectors;
    for r in &data.subjects {
        let mut prepared = r.clone();
        if prepared.source.peaks_s.is_none() && prepared.source.intervals_s.is_none() {
            prepared.source.peaks_s = r.source.peaks(det.source)?.map(|p| p.into_inner());
        }
        if let Some(t) = prepared.target.as_mut() {
            if t.peaks_s.is_none() && t.intervals_s.is_none() {
                t.peaks_s = t.peaks(det.target)?.map(|p| p.into_inner());
            }
        }
        prepared.save(&out.join("prepared").join(format!("{}.json", r.subject_id)))?;
        let resolved = prepared.resolve(det)?;
        if resolved.target.is_none() {
            log::warn!("{}: no target domain, features skipped", r.subject_id);
            continue;
        }
        let (ex, counts) = resolved.to_paired(&cfg.data.features, false)?;
        let file = FeatureFile {
            subject_id: &ex.subject_id,
            counts,
            source: &ex.xa,
            target: &ex.xb,
            labels: &ex.labels,
        };
        let json = serde_json::to_string(&file).expect("features serialize");
        fsio::write_atomic(
            &out.join("features").join(format!("{}.json", r.subject_id)),
            json.as_bytes(),
        )?;
    }
    Ok(())
}

/// `pretrain`: trains and calibrates the teacher on the pool (or the cohort).
pub fn cmd_pretrain(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<PathBuf> {
    let data = load_data(cfg, seed)?;
    let det = &cfg.data.detectors;
    let subjects = paired_subjects(&data.subjects, det, &cfg.data.features, false)?;
    let pool = match &data.pool {
        Some(p) => paired_pool(p, det, &cfg.data.features)?,
        None => subjects.clone(),
    };
    let study = LosoStudy::prepare(subjects, Some(&pool), cfg.study_options(seed))?;
    let teacher = study.teacher(0);
    log::info!(
        "teacher: best epoch {}, platt a {:.4} b {:.4}",
        teacher.curve.best_epoch,
        teacher.platt.a,
        teacher.platt.b
    );
    let path = out.join("teacher.tsda");
    ModelArtifact::teacher(teacher).save(&path)?;
    Ok(path)
}

/// `adapt`: trains a student of the given variant on every cohort subject.
pub fn cmd_adapt(
    cfg: &ExperimentConfig,
    seed: u64,
    out: &Path,
    teacher_path: &Path,
    spec: &VariantSpec,
) -> Result<PathBuf> {
    let opts = cfg.study_options(seed);
    let recipe = spec.recipe(opts.alpha, opts.use_cnn)?;
    if recipe.kind != ModelKind::Student {
        return Err(CliError::Config(format!(
            "variant {} does not train a student",
            spec.name
        )));
    }
    let teacher = ModelArtifact::load(teacher_path)?.into_pretrained()?;
    let data = load_data(cfg, seed)?;
    require_labels(&data, std::slice::from_ref(&recipe))?;
    let subjects = paired_subjects(
        &data.subjects,
        &cfg.data.detectors,
        &cfg.data.features,
        recipe.use_cnn,
    )?;
    let chunks: Vec<PairedExample> = subjects
        .iter()
        .flat_map(|s| s.chunks(opts.chunk_len))
        .collect();
    let train_seed = recipe.seed.unwrap_or(seed);
    let train = TrainConfig {
        epochs: recipe.epochs.unwrap_or(opts.train.epochs),
        lr: recipe.lr.unwrap_or(opts.train.lr),
        seed: train_seed,
        loss_mode: recipe.loss_mode.unwrap_or(opts.train.loss_mode),
        ..opts.train.clone()
    };
    let mut student = clone_student(&teacher.model, recipe.use_cnn, &opts.model, train_seed)?;
    let curve = train_student(
        &mut student,
        &teacher,
        &chunks,
        None,
        &train,
        &recipe.loss.unwrap_or_default(),
    )?;
    log::info!(
        "{}: {} steps, final loss {:?}",
        spec.name,
        curve.steps,
        curve.train.last()
    );
    let path = out.join(format!("{}.tsda", spec.name));
    ModelArtifact::student(&student, &teacher).save(&path)?;
    Ok(path)
}

#[derive(Serialize)]
struct Evaluation<'a> {
    model: &'a str,
    domain: InputDomain,
    metrics: PooledMetrics,
    predictions: &'a PredictionSet,
}

/// `evaluate`: scores a saved model on every cohort subject.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    seed: u64,
    out: &Path,
    model_path: &Path,
    domain: InputDomain,
) -> Result<PathBuf> {
    let art = ModelArtifact::load(model_path)?;
    let data = load_data(cfg, seed)?;
    let with_raw = matches!(&art.model, TrainedModel::Student(s) if s.aux.is_some());
    let subjects = paired_subjects(
        &data.subjects,
        &cfg.data.detectors,
        &cfg.data.features,
        with_raw,
    )?;
    let (calibrate, head_of) = match &art.model {
        TrainedModel::Teacher(t) => (true, t.clone()),
        TrainedModel::Student(s) => {
            if domain == InputDomain::Source {
                return Err(CliError::Config(
                    "students score target windows only".into(),
                ));
            }
            (
                false,
                TeacherModel::from_parts(
                    s.tail.clone(),
                    s.body.clone(),
                    s.head().clone(),
                    art.norm.clone(),
                )?,
            )
        }
    };
    let reference = PretrainedTeacher {
        model: head_of,
        platt: art.platt,
        curve: Default::default(),
    };
    let ps = predict(
        &art.model,
        &reference,
        &subjects,
        domain,
        calibrate,
        cfg.train.chunk_len,
    )?;
    let metrics = pooled_evaluate(std::slice::from_ref(&ps))?;
    let name = model_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("model");
    let json = serde_json::to_string_pretty(&Evaluation {
        model: name,
        domain,
        metrics,
        predictions: &ps,
    })
    .expect("evaluation serializes");
    let path = out.join(format!("{name}.evaluation.json"));
    fsio::write_atomic(&path, json.as_bytes())?;
    log::info!(
        "{name}: roc {:.4} pr {:.4}",
        metrics.roc_auc,
        metrics.pr_auc
    );
    Ok(path)
}
