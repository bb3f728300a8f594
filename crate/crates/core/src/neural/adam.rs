use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::scalar::Scalar;

use super::params::Parameters;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, block-aligned with the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<P: Parameters<T> + ?Sized>(params: &P) -> Self {
        let shapes: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
        let zeros = || shapes.iter().map(|&n| vec![T::zero(); n]).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Scalar, P: Parameters<T>>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    let g = grads.blocks();
    let mut p = params.blocks_mut();
    let shapes_match = p.len() == g.len()
        && p.len() == state.m.len()
        && p.iter()
            .zip(&g)
            .zip(&state.m)
            .all(|((a, b), m)| a.len() == b.len() && a.len() == m.len());
    if !shapes_match {
        bail!(
            Shape,
            "parameter, gradient and optimizer state blocks differ"
        );
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (lr, eps, one) = (T::lit(cfg.lr), T::lit(cfg.eps), T::one());
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);
    for (((pb, gb), mb), vb) in p
        .iter_mut()
        .zip(&g)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for (((w, &gr), m), v) in pb
            .iter_mut()
            .zip(gb.iter())
            .zip(mb.iter_mut())
            .zip(vb.iter_mut())
        {
            *m = b1 * *m + (one - b1) * gr;
            *v = b2 * *v + (one - b2) * gr * gr;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
