//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tsda::adaptation::{StudyOptions, TrainConfig, VariantName, VariantSpec};
use tsda::features::FeatureConfig;
use tsda::neural::ModelConfig;
use tsda::shift::{HmmShiftConfig, PulseRenderConfig, ToyStudyConfig};

use crate::error::{CliError, Result};
use crate::fsio;
use crate::record::Detectors;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Toy,
    Records,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub kind: DataKind,
    /// Directory of subject records (`records` kind).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<PathBuf>,
    /// Optional directory of source-only subjects for teacher pre-training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<PathBuf>,
    #[serde(default)]
    pub detectors: Detectors,
    #[serde(default)]
    pub features: FeatureConfig,
    /// Study cohort (`toy` kind). Its seed is derived from the run seed.
    #[serde(default)]
    pub toy: ToyStudyConfig,
    /// Separate pre-training cohort (`toy` kind).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_toy: Option<ToyStudyConfig>,
    /// Renders a raw target waveform for the study cohort (`toy` kind).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub render: Option<PulseRenderConfig>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            kind: DataKind::Toy,
            records: None,
            pool: None,
            detectors: Detectors::default(),
            features: FeatureConfig::default(),
            toy: ToyStudyConfig::default(),
            pool_toy: None,
            render: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub alpha: f64,
    pub use_cnn: bool,
    pub holdout_fraction: f64,
    /// Windows per training sequence.
    pub chunk_len: usize,
    pub pretrain: TrainConfig,
    pub adapt: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let o = StudyOptions::default();
        Self {
            alpha: o.alpha,
            use_cnn: o.use_cnn,
            holdout_fraction: o.holdout_fraction,
            chunk_len: o.chunk_len,
            pretrain: o.pretrain,
            adapt: o.train,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub formats: Vec<ReportFormat>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            formats: vec![ReportFormat::Csv, ReportFormat::Json],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub shift: HmmShiftConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub variants: Vec<VariantSpec>,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config; relative data paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&fsio::read_string(path)?)
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), strip(e))))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.records, &mut cfg.data.pool]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(CliError::Config(m));
        if self.data.kind == DataKind::Records && self.data.records.is_none() {
            return err("data.kind = \"records\" needs data.records".into());
        }
        let f = &self.data.features;
        if !(f.window_len_s > 0.0 && f.stride_s > 0.0) || !(f.consensus > 0.0 && f.consensus <= 1.0)
        {
            return err("data.features: window, stride and consensus must be positive (consensus at most 1)".into());
        }
        if !(0.0..1.0).contains(&self.train.holdout_fraction) {
            return err(format!(
                "train.holdout_fraction must lie in [0, 1), got {}",
                self.train.holdout_fraction
            ));
        }
        if self.train.chunk_len == 0 {
            return err("train.chunk_len must be positive".into());
        }
        self.model.validate()?;
        self.shift.validate()?;
        self.data.toy.validate()?;
        if let Some(p) = &self.data.pool_toy {
            p.validate()?;
        }
        self.train.pretrain.validate()?;
        self.train.adapt.validate()?;
        Ok(())
    }

    /// Study options for run seed `seed`.
    pub fn study_options(&self, seed: u64) -> StudyOptions {
        StudyOptions {
            model: self.model.clone(),
            pretrain: self.train.pretrain.clone(),
            train: self.train.adapt.clone(),
            alpha: self.train.alpha,
            use_cnn: self.train.use_cnn,
            chunk_len: self.train.chunk_len,
            holdout_fraction: self.train.holdout_fraction,
            seed,
        }
    }

    /// Configured variants, or every registered one when none are listed.
    pub fn variant_specs(&self) -> Vec<VariantSpec> {
        if self.variants.is_empty() {
            VariantName::all().map(VariantSpec::new).collect()
        } else {
            self.variants.clone()
        }
    }
}

fn strip(e: CliError) -> String {
    match e {
        CliError::Config(m) => m,
        other => other.to_string(),
    }
}
