use crate::error::{bail, Result};

use super::predictions::PredictionSet;

/// `(score, positives, negatives)` per distinct score, highest score first.
fn tie_groups(scores: &[f64], labels: &[u8]) -> Vec<(f64, u64, u64)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(f64, u64, u64)> = Vec::new();
    for i in idx {
        let (s, y) = (scores[i], labels[i]);
        match groups.last_mut() {
            Some(g) if g.0 == s => {
                if y == 1 {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((s, u64::from(y == 1), u64::from(y != 1))),
        }
    }
    groups
}

fn check(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        bail!(
            Length,
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        );
    }
    if scores.iter().any(|s| !s.is_finite()) || labels.iter().any(|&y| y > 1) {
        bail!(Validation, "scores must be finite and labels binary");
    }
    Ok(())
}

/// Probability that a random positive outscores a random negative, ties
/// counted one half.
pub fn roc_auc_scores(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        bail!(
            Metric,
            "ROC AUC needs both classes ({n_pos} positive, {n_neg} negative)"
        );
    }
    // Twice the Mann-Whitney count, kept integral.
    let mut twice_wins: u128 = 0;
    let mut neg_below = n_neg;
    for (_, p, n) in tie_groups(scores, labels) {
        neg_below -= n as u128;
        twice_wins += p as u128 * (2 * neg_below + n as u128);
    }
    Ok(twice_wins as f64 / (2 * n_pos * n_neg) as f64)
}

/// Step-wise area under the precision-recall curve over descending distinct
/// thresholds.
pub fn pr_auc_scores(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check(scores, labels)?;
    let points: Vec<(u64, u64)> = tie_groups(scores, labels)
        .into_iter()
        .scan((0u64, 0u64), |acc, (_, p, n)| {
            acc.0 += p;
            acc.1 += n;
            Some(*acc)
        })
        .collect();
    pr_area(&points)
}

/// Sums `delta_recall * precision` over cumulative `(tp, fp)` points.
/// Consecutive steps at identical precision are merged before dividing, so a
/// perfect ranker scores exactly 1 and a constant scorer exactly the prevalence.
pub fn pr_area(points: &[(u64, u64)]) -> Result<f64> {
    let total_pos = points.last().map_or(0, |p| p.0);
    if total_pos == 0 {
        bail!(Metric, "PR AUC needs at least one positive");
    }
    let p = total_pos as f64;
    let mut area = 0.0;
    let mut run: Option<(f64, u64)> = None;
    let mut prev_tp = 0;
    for &(tp, fp) in points {
        let d = tp - prev_tp;
        prev_tp = tp;
        if d == 0 {
            continue;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        run = match run {
            Some((prec, acc)) if prec == precision => Some((prec, acc + d)),
            Some((prec, acc)) => {
                area += acc as f64 / p * prec;
                Some((precision, d))
            }
            None => Some((precision, d)),
        };
    }
    if let Some((prec, acc)) = run {
        area += acc as f64 / p * prec;
    }
    Ok(area)
}

pub fn roc_auc(ps: &PredictionSet) -> Result<f64> {
    roc_auc_scores(&ps.scores(), &ps.labels())
}

pub fn pr_auc(ps: &PredictionSet) -> Result<f64> {
    pr_auc_scores(&ps.scores(), &ps.labels())
}

/// Hanley-McNeil variance of an AUC estimate.
pub fn hanley_mcneil_variance(auc: f64, n_pos: usize, n_neg: usize) -> Result<f64> {
    check_bound_args(auc, n_pos, n_neg)?;
    let (np, nn) = (n_pos as f64, n_neg as f64);
    let q1 = auc / (2.0 - auc);
    let q2 = 2.0 * auc * auc / (1.0 + auc);
    let a2 = auc * auc;
    Ok((auc * (1.0 - auc) + (np - 1.0) * (q1 - a2) + (nn - 1.0) * (q2 - a2)) / (np * nn))
}

/// Larger of the Hanley-McNeil estimate and `A(1-A)/min(n+, n-)`.
pub fn auc_variance_bound(auc: f64, n_pos: usize, n_neg: usize) -> Result<f64> {
    let hm = hanley_mcneil_variance(auc, n_pos, n_neg)?;
    let free = auc * (1.0 - auc) / n_pos.min(n_neg) as f64;
    Ok(hm.max(free))
}

fn check_bound_args(auc: f64, n_pos: usize, n_neg: usize) -> Result<()> {
    if !(0.0..=1.0).contains(&auc) {
        bail!(Validation, "AUC {auc} outside [0, 1]");
    }
    if n_pos == 0 || n_neg == 0 {
        bail!(
            Validation,
            "variance bound needs at least one example per class"
        );
    }
    Ok(())
}
