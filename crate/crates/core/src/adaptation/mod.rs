mod loss;
mod platt;
mod study;
mod train;
mod variant;

pub use loss::{bce_loss, cross_entropy_da_loss, hybrid_loss, HybridLossConfig, LossGrad};
pub use platt::{platt_calibrate, platt_calibrate_smoothed, platt_nll, PlattParams};
pub use study::{
    calibrate_teacher, clone_student, predict, pretrain_teacher, train_student, FoldOutcome,
    LosoStudy, PretrainedTeacher, StudyOptions, TrainedModel, VariantRun,
};
pub use train::{
    batch_loss, evaluate_loss, fit, raw_tensor, teacher_targets, Domain, LossMode, Objective,
    Sequence, TrainConfig, TrainCurve,
};
pub use variant::{InputDomain, ModelKind, Recipe, VariantName, VariantSpec};
