use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::scalar::{sigmoid, softplus};

/// Affine logit recalibration `a z + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattParams {
    pub a: f64,
    pub b: f64,
}

impl Default for PlattParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl PlattParams {
    pub const IDENTITY: Self = Self { a: 1.0, b: 0.0 };

    pub fn apply(&self, z: f64) -> f64 {
        self.a * z + self.b
    }

    pub fn probability(&self, z: f64) -> f64 {
        sigmoid(self.apply(z))
    }
}

/// Mean negative log-likelihood of `sigmoid(a z + b)`.
pub fn platt_nll(p: &PlattParams, logits: &[f64], labels: &[u8]) -> f64 {
    let targets: Vec<f64> = labels.iter().map(|&y| f64::from(y)).collect();
    cross_entropy(p, logits, &targets)
}

fn cross_entropy(p: &PlattParams, logits: &[f64], targets: &[f64]) -> f64 {
    let n = logits.len() as f64;
    logits
        .iter()
        .zip(targets)
        .map(|(&z, &t)| {
            let s = p.apply(z);
            softplus(s) - t * s
        })
        .sum::<f64>()
        / n
}

const MAX_ITER: usize = 200;
const GRAD_TOL: f64 = 1e-8;

fn check_inputs(logits: &[f64], labels: &[u8]) -> Result<usize> {
    if logits.len() != labels.len() {
        bail!(
            Length,
            "{} logits but {} labels",
            logits.len(),
            labels.len()
        );
    }
    if logits.iter().any(|z| !z.is_finite()) || labels.iter().any(|&y| y > 1) {
        bail!(Validation, "logits must be finite and labels binary");
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == labels.len() {
        bail!(
            Calibration,
            "calibration needs both classes ({pos} of {} positive)",
            labels.len()
        );
    }
    Ok(pos)
}

/// Fits `(a, b)` by damped Newton iterations on the mean negative
/// log-likelihood until the gradient norm drops below 1e-8.
pub fn platt_calibrate(logits: &[f64], labels: &[u8]) -> Result<PlattParams> {
    check_inputs(logits, labels)?;
    let targets: Vec<f64> = labels.iter().map(|&y| f64::from(y)).collect();
    newton(logits, &targets)
}

/// Platt's regularized variant: targets `(N+ + 1)/(N+ + 2)` and
/// `1/(N- + 2)` keep the fit finite when the classes are separable.
pub fn platt_calibrate_smoothed(logits: &[f64], labels: &[u8]) -> Result<PlattParams> {
    let pos = check_inputs(logits, labels)? as f64;
    let neg = labels.len() as f64 - pos;
    let (hi, lo) = ((pos + 1.0) / (pos + 2.0), 1.0 / (neg + 2.0));
    let targets: Vec<f64> = labels
        .iter()
        .map(|&y| if y == 1 { hi } else { lo })
        .collect();
    newton(logits, &targets)
}

fn newton(logits: &[f64], targets: &[f64]) -> Result<PlattParams> {
    let n = logits.len() as f64;
    let mut p = PlattParams::IDENTITY;
    let mut f = cross_entropy(&p, logits, targets);
    for _ in 0..MAX_ITER {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&z, &t) in logits.iter().zip(targets) {
            let s = sigmoid(p.apply(z));
            let r = s - t;
            let w = s * (1.0 - s);
            ga += r * z;
            gb += r;
            haa += w * z * z;
            hab += w * z;
            hbb += w;
        }
        let (ga, gb) = (ga / n, gb / n);
        if ga.hypot(gb) < GRAD_TOL {
            return Ok(p);
        }
        let (haa, hab, hbb) = (haa / n, hab / n, hbb / n);
        // Levenberg damping grows until the step decreases the objective.
        let mut lambda = 1e-12;
        loop {
            let (a11, a22) = (haa + lambda, hbb + lambda);
            let det = a11 * a22 - hab * hab;
            if det > 0.0 && det.is_finite() {
                let da = (a22 * ga - hab * gb) / det;
                let db = (a11 * gb - hab * ga) / det;
                let cand = PlattParams {
                    a: p.a - da,
                    b: p.b - db,
                };
                let fc = cross_entropy(&cand, logits, targets);
                if fc <= f {
                    p = cand;
                    f = fc;
                    break;
                }
            }
            lambda = if lambda < 1e-6 { 1e-6 } else { lambda * 10.0 };
            if lambda > 1e12 {
                bail!(
                    Calibration,
                    "Newton iterations stalled with gradient norm {:e}",
                    ga.hypot(gb)
                );
            }
        }
    }
    bail!(Calibration, "no convergence within {MAX_ITER} iterations")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_class_rejected() {
        assert!(matches!(
            platt_calibrate(&[0.1, 0.5, -1.0], &[1, 1, 1]),
            Err(crate::Error::Calibration(_))
        ));
    }

    #[test]
    fn scaled_logits_are_undone() {
        // Labels generated at z/2 thresholds: fit should roughly halve the slope.
        let z: Vec<f64> = (0..400).map(|i| (i as f64 - 200.0) / 20.0).collect();
        let y: Vec<u8> = z
            .iter()
            .enumerate()
            .map(|(i, &v)| u8::from(((i * 7919) % 100) as f64 / 100.0 < sigmoid(v / 2.0)))
            .collect();
        let p = platt_calibrate(&z, &y).unwrap();
        assert!(p.a > 0.2 && p.a < 1.0, "{p:?}");
        assert!(platt_nll(&p, &z, &y) <= platt_nll(&PlattParams::IDENTITY, &z, &y));
    }

    #[test]
    fn smoothing_keeps_separable_fits_finite() {
        let z: Vec<f64> = (0..40).map(|i| i as f64 / 10.0 - 2.0).collect();
        let y: Vec<u8> = z.iter().map(|&v| u8::from(v > 0.0)).collect();
        let p = platt_calibrate_smoothed(&z, &y).unwrap();
        assert!(p.a > 1.0 && p.a < 50.0, "{p:?}");
    }
}
