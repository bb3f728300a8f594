use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::neural::{Outputs, Tensor};
use crate::scalar::{sigmoid, softplus, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridLossConfig {
    pub alpha: f64,
    pub include_output_term: bool,
    pub include_activation_term: bool,
}

impl Default for HybridLossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            include_output_term: true,
            include_activation_term: true,
        }
    }
}

impl HybridLossConfig {
    pub fn output_only() -> Self {
        Self {
            include_activation_term: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            bail!(
                Config,
                "alpha must be finite and non-negative, got {}",
                self.alpha
            );
        }
        if !self.include_output_term && !self.include_activation_term {
            bail!(Config, "hybrid loss needs at least one term");
        }
        Ok(())
    }
}

/// A loss value with its gradients at the network outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<T> {
    pub loss: T,
    pub dq: Tensor<T>,
    pub dlogits: Vec<T>,
}

fn check_shapes<T: Scalar>(
    student: &Outputs<T>,
    teacher: &Outputs<T>,
    mask: &[bool],
) -> Result<()> {
    let n = student.logits.len();
    if student.q.shape() != teacher.q.shape()
        || teacher.logits.len() != n
        || mask.len() != n
        || student.q.rows() != n
    {
        bail!(
            Shape,
            "student q {:?} / {} logits, teacher q {:?} / {} logits, mask {}",
            student.q.shape(),
            n,
            teacher.q.shape(),
            teacher.logits.len(),
            mask.len()
        );
    }
    Ok(())
}

/// Mean squared error of the activations over unmasked steps, `sum / (n d)`.
fn activation_term<T: Scalar>(
    student: &Tensor<T>,
    teacher: &Tensor<T>,
    mask: &[bool],
    scale: T,
    dq: &mut Tensor<T>,
) -> T {
    let d = student.cols();
    let n = mask.iter().filter(|&&m| m).count();
    let denom = T::from_usize_lossy(n * d);
    let two = T::lit(2.0);
    let mut sum = T::zero();
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (s, t) = (student.row(i), teacher.row(i));
        let g = dq.row_mut(i);
        for j in 0..d {
            let diff = s[j] - t[j];
            sum += diff * diff;
            g[j] += scale * two * diff / denom;
        }
    }
    scale * sum / denom
}

/// `(1/n) sum (pB - pA)^2 + alpha/(n d) sum (q' - q)^2` over unmasked steps.
pub fn hybrid_loss<T: Scalar>(
    student: &Outputs<T>,
    teacher: &Outputs<T>,
    mask: &[bool],
    cfg: &HybridLossConfig,
) -> Result<LossGrad<T>> {
    cfg.validate()?;
    check_shapes(student, teacher, mask)?;
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        bail!(Data, "every step is masked");
    }
    let nf = T::from_usize_lossy(n);
    let mut dq = Tensor::zeros(student.q.shape().to_vec());
    let mut dlogits = vec![T::zero(); mask.len()];
    let mut loss = T::zero();
    if cfg.include_output_term {
        let two = T::lit(2.0);
        for i in (0..mask.len()).filter(|&i| mask[i]) {
            let diff = student.logits[i] - teacher.logits[i];
            loss += diff * diff / nf;
            dlogits[i] = two * diff / nf;
        }
    }
    if cfg.include_activation_term {
        loss += activation_term(&student.q, &teacher.q, mask, T::lit(cfg.alpha), &mut dq);
    }
    Ok(LossGrad { loss, dq, dlogits })
}

/// Mean binary cross-entropy on logits over steps that are unmasked and labelled.
pub fn bce_loss<T: Scalar>(
    logits: &[T],
    labels: &[Option<u8>],
    mask: &[bool],
) -> Result<(T, Vec<T>)> {
    if labels.len() != logits.len() || mask.len() != logits.len() {
        bail!(
            Shape,
            "{} logits, {} labels, {} mask entries",
            logits.len(),
            labels.len(),
            mask.len()
        );
    }
    let used: Vec<usize> = (0..logits.len())
        .filter(|&i| mask[i] && labels[i].is_some())
        .collect();
    if used.is_empty() {
        bail!(Data, "no labelled unmasked steps");
    }
    let nf = T::from_usize_lossy(used.len());
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); logits.len()];
    for i in used {
        let z = logits[i];
        let y = if labels[i] == Some(1) {
            T::one()
        } else {
            T::zero()
        };
        loss += (softplus(z) - y * z) / nf;
        grad[i] = (sigmoid(z) - y) / nf;
    }
    Ok((loss, grad))
}

/// Cross-entropy against labels in place of the output term, plus the
/// activation term of the hybrid loss.
pub fn cross_entropy_da_loss<T: Scalar>(
    student: &Outputs<T>,
    teacher_q: &Tensor<T>,
    labels: &[Option<u8>],
    label_mask: &[bool],
    pair_mask: &[bool],
    alpha: f64,
) -> Result<LossGrad<T>> {
    let (ce, dlogits) = bce_loss(&student.logits, labels, label_mask)?;
    if student.q.shape() != teacher_q.shape() || pair_mask.len() != student.logits.len() {
        bail!(
            Shape,
            "student q {:?} vs teacher q {:?}",
            student.q.shape(),
            teacher_q.shape()
        );
    }
    let mut dq = Tensor::zeros(student.q.shape().to_vec());
    let mut loss = ce;
    if alpha > 0.0 && pair_mask.iter().any(|&m| m) {
        loss += activation_term(&student.q, teacher_q, pair_mask, T::lit(alpha), &mut dq);
    }
    Ok(LossGrad { loss, dq, dlogits })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outputs(q: &[f64], d: usize, logits: &[f64]) -> Outputs<f64> {
        Outputs {
            q: Tensor::matrix(logits.len(), d, q.to_vec()).unwrap(),
            logits: logits.to_vec(),
        }
    }

    #[test]
    fn hand_case() {
        let teacher = outputs(&[0.0, 0.0, 0.0, 0.0], 2, &[0.0, 1.0]);
        let student = outputs(&[0.5, 0.5, 0.5, 0.5], 2, &[1.0, 1.0]);
        let l = hybrid_loss(
            &student,
            &teacher,
            &[true, true],
            &HybridLossConfig::default(),
        )
        .unwrap();
        assert!((l.loss - 0.75).abs() < 1e-12);
    }

    #[test]
    fn all_masked_is_an_error() {
        let o = outputs(&[0.0, 0.0], 1, &[0.0, 0.0]);
        assert!(matches!(
            hybrid_loss(&o, &o, &[false, false], &HybridLossConfig::default()),
            Err(crate::Error::Data(_))
        ));
        assert!(matches!(
            bce_loss(&[0.0], &[None], &[true]),
            Err(crate::Error::Data(_))
        ));
    }

    #[test]
    fn bce_at_zero_logit_is_ln2() {
        let (l, g) = bce_loss(
            &[0.0, 0.0, 5.0],
            &[Some(1), Some(0), None],
            &[true, true, true],
        )
        .unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(g, vec![-0.25, 0.25, 0.0]);
    }

    #[test]
    fn disabled_terms_rejected() {
        let cfg = HybridLossConfig {
            include_output_term: false,
            include_activation_term: false,
            alpha: 1.0,
        };
        assert!(cfg.validate().is_err());
        assert!(HybridLossConfig {
            alpha: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
