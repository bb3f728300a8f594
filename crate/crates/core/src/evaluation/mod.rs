mod folds;
mod metrics;
mod predictions;
mod report;

pub use folds::{loso_folds, Fold, FoldPlan};
pub use metrics::{
    auc_variance_bound, hanley_mcneil_variance, pr_area, pr_auc, pr_auc_scores, roc_auc,
    roc_auc_scores,
};
pub use predictions::{Prediction, PredictionSet};
pub use report::{pooled_evaluate, MetricsReport, PooledMetrics, ReportRow};
