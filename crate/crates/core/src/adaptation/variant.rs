use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};

use super::loss::HybridLossConfig;
use super::train::LossMode;

/// Every experiment row: the eight comparison rows followed by the five ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    LabelSupervisedTargetOnly,
    TeacherStudentTargetOnly,
    LabelSupervisedDomainAdaptation,
    LabelSupervisedTransferLearning,
    NaiveTransfer,
    TeacherStudentTransferLearning,
    TeacherStudentDomainAdaptation,
    TeacherOnSource,
    Minimal,
    NoCnn,
    NoOutputLoss,
    NoActivationLoss,
    Full,
}

impl VariantName {
    pub const COMPARISON: [VariantName; 8] = [
        Self::LabelSupervisedTargetOnly,
        Self::TeacherStudentTargetOnly,
        Self::LabelSupervisedDomainAdaptation,
        Self::LabelSupervisedTransferLearning,
        Self::NaiveTransfer,
        Self::TeacherStudentTransferLearning,
        Self::TeacherStudentDomainAdaptation,
        Self::TeacherOnSource,
    ];

    pub const ABLATIONS: [VariantName; 5] = [
        Self::Minimal,
        Self::NoCnn,
        Self::NoOutputLoss,
        Self::NoActivationLoss,
        Self::Full,
    ];

    pub fn all() -> impl Iterator<Item = VariantName> {
        Self::COMPARISON.into_iter().chain(Self::ABLATIONS)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::LabelSupervisedTargetOnly => "label_supervised_target_only",
            Self::TeacherStudentTargetOnly => "teacher_student_target_only",
            Self::LabelSupervisedDomainAdaptation => "label_supervised_domain_adaptation",
            Self::LabelSupervisedTransferLearning => "label_supervised_transfer_learning",
            Self::NaiveTransfer => "naive_transfer",
            Self::TeacherStudentTransferLearning => "teacher_student_transfer_learning",
            Self::TeacherStudentDomainAdaptation => "teacher_student_domain_adaptation",
            Self::TeacherOnSource => "teacher_on_source",
            Self::Minimal => "minimal",
            Self::NoCnn => "no_cnn",
            Self::NoOutputLoss => "no_output_loss",
            Self::NoActivationLoss => "no_activation_loss",
            Self::Full => "full",
        }
    }

    /// Position in report ordering.
    pub fn rank(self) -> usize {
        Self::all().position(|v| v == self).expect("listed")
    }

    pub fn is_ablation(self) -> bool {
        Self::ABLATIONS.contains(&self)
    }
}

impl fmt::Display for VariantName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::all()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

/// A requested experiment row with optional overrides of the run defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub name: VariantName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub use_cnn: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl VariantSpec {
    pub fn new(name: VariantName) -> Self {
        Self {
            name,
            use_cnn: None,
            epochs: None,
            lr: None,
            seed: None,
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(Self::new(name.parse()?))
    }

    pub fn with_cnn(mut self, use_cnn: bool) -> Self {
        self.use_cnn = Some(use_cnn);
        self
    }

    /// Resolves the training recipe; `default_cnn` applies to the adaptation
    /// rows that do not fix the CNN themselves.
    pub fn recipe(&self, alpha: f64, default_cnn: bool) -> Result<Recipe> {
        use VariantName::*;
        let both = HybridLossConfig {
            alpha,
            include_output_term: true,
            include_activation_term: true,
        };
        let output = HybridLossConfig {
            include_activation_term: false,
            ..both
        };
        let activation = HybridLossConfig {
            include_output_term: false,
            ..both
        };
        let (kind, loss, fixed_cnn) = match self.name {
            LabelSupervisedTargetOnly => (
                ModelKind::Fresh,
                Some((LossMode::BceLabels, both)),
                Some(false),
            ),
            TeacherStudentTargetOnly => (
                ModelKind::Fresh,
                Some((LossMode::HybridDistill, output)),
                Some(false),
            ),
            LabelSupervisedDomainAdaptation => (
                ModelKind::Student,
                Some((LossMode::CrossEntropyDa, both)),
                None,
            ),
            LabelSupervisedTransferLearning => (
                ModelKind::FineTune,
                Some((LossMode::BceLabels, both)),
                Some(false),
            ),
            NaiveTransfer => (ModelKind::Teacher(InputDomain::Target), None, Some(false)),
            TeacherStudentTransferLearning => (
                ModelKind::FineTune,
                Some((LossMode::HybridDistill, both)),
                Some(false),
            ),
            TeacherStudentDomainAdaptation => (
                ModelKind::Student,
                Some((LossMode::HybridDistill, both)),
                None,
            ),
            TeacherOnSource => (ModelKind::Teacher(InputDomain::Source), None, Some(false)),
            Minimal => (
                ModelKind::Student,
                Some((LossMode::HybridDistill, output)),
                Some(false),
            ),
            NoCnn => (
                ModelKind::Student,
                Some((LossMode::HybridDistill, both)),
                Some(false),
            ),
            NoOutputLoss => (
                ModelKind::Student,
                Some((LossMode::HybridDistill, activation)),
                Some(true),
            ),
            NoActivationLoss => (
                ModelKind::Student,
                Some((LossMode::HybridDistill, output)),
                Some(true),
            ),
            Full => (
                ModelKind::Student,
                Some((LossMode::HybridDistill, both)),
                Some(true),
            ),
        };
        let use_cnn = match (fixed_cnn, self.use_cnn) {
            (Some(f), Some(req)) if f != req => {
                bail!(
                    Config,
                    "variant {} fixes use_cnn = {f}, config requests {req}",
                    self.name
                )
            }
            (Some(f), _) => f,
            (None, req) => req.unwrap_or(default_cnn),
        };
        if let Some(lr) = self.lr {
            if !(lr.is_finite() && lr > 0.0) {
                bail!(
                    Config,
                    "variant {} has invalid learning rate {lr}",
                    self.name
                );
            }
        }
        Ok(Recipe {
            name: self.name,
            kind,
            loss_mode: loss.map(|l| l.0),
            loss: loss.map(|l| l.1),
            use_cnn,
            epochs: self.epochs,
            lr: self.lr,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputDomain {
    Source,
    Target,
}

/// Which network a variant trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Freshly initialized teacher-shaped model on target inputs.
    Fresh,
    /// Copy of the teacher with every block trainable.
    FineTune,
    /// Cloned tail and body, frozen head, optional CNN.
    Student,
    /// The teacher itself, no updates.
    Teacher(InputDomain),
}

/// The fully resolved procedure behind one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub name: VariantName,
    pub kind: ModelKind,
    pub loss_mode: Option<LossMode>,
    pub loss: Option<HybridLossConfig>,
    pub use_cnn: bool,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub seed: Option<u64>,
}

impl Recipe {
    pub fn uses_labels(&self) -> bool {
        matches!(
            self.loss_mode,
            Some(LossMode::BceLabels | LossMode::CrossEntropyDa)
        )
    }
}
