use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

use super::metrics::{auc_variance_bound, pr_auc, roc_auc};
use super::predictions::PredictionSet;

/// Metrics of one pooled prediction set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledMetrics {
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub variance_bound: f64,
}

/// Concatenates per-fold predictions and scores them once.
pub fn pooled_evaluate(folds: &[PredictionSet]) -> Result<PooledMetrics> {
    let pooled = PredictionSet::concat(folds)?;
    if pooled.is_empty() {
        bail!(Data, "no predictions to evaluate");
    }
    let (n_pos, n_neg) = pooled.class_counts();
    let roc = roc_auc(&pooled)?;
    let pr = pr_auc(&pooled)?;
    Ok(PooledMetrics {
        roc_auc: roc,
        pr_auc: pr,
        n_pos,
        n_neg,
        variance_bound: auc_variance_bound(roc, n_pos, n_neg)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: String,
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub variance_bound: f64,
    pub seed: u64,
    pub config_digest: String,
}

impl ReportRow {
    pub fn new(
        variant: impl Into<String>,
        m: PooledMetrics,
        seed: u64,
        config_digest: impl Into<String>,
    ) -> Self {
        Self {
            variant: variant.into(),
            roc_auc: m.roc_auc,
            pr_auc: m.pr_auc,
            n_pos: m.n_pos,
            n_neg: m.n_neg,
            variance_bound: m.variance_bound,
            seed,
            config_digest: config_digest.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            let in_unit = |v: f64| (0.0..=1.0).contains(&v);
            if !in_unit(r.roc_auc)
                || !in_unit(r.pr_auc)
                || !r.variance_bound.is_finite()
                || r.variance_bound < 0.0
            {
                bail!(Validation, "metrics of {} out of range", r.variant);
            }
        }
        Ok(())
    }

    pub fn row(&self, variant: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}
