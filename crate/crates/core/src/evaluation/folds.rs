use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub validation: Vec<String>,
    pub training: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

/// One fold per subject, holding that subject out; input order is kept.
pub fn loso_folds<S: AsRef<str>>(subject_ids: &[S]) -> Result<FoldPlan> {
    if subject_ids.len() < 2 {
        bail!(
            Plan,
            "leave-one-subject-out needs at least 2 subjects, got {}",
            subject_ids.len()
        );
    }
    let mut seen = HashSet::new();
    for s in subject_ids {
        if !seen.insert(s.as_ref()) {
            bail!(Plan, "subject {} listed twice", s.as_ref());
        }
    }
    let ids: Vec<String> = subject_ids.iter().map(|s| s.as_ref().to_string()).collect();
    let folds = ids
        .iter()
        .map(|v| Fold {
            validation: vec![v.clone()],
            training: ids.iter().filter(|s| *s != v).cloned().collect(),
        })
        .collect();
    Ok(FoldPlan { folds })
}
