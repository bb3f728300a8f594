use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::signal::{Interval, IntervalSeries};

pub const N_STATES: usize = 4;

/// Four-state burst-noise model applied beat by beat.
///
/// State `i` fires with probability `p[i]`; a firing state lengthens the
/// interval by `|N(mu[i], sigma[i])|` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmmShiftConfig {
    pub transition: [[f64; N_STATES]; N_STATES],
    pub p: [f64; N_STATES],
    pub mu: [f64; N_STATES],
    pub sigma: [f64; N_STATES],
    pub initial_state: usize,
}

impl Default for HmmShiftConfig {
    /// Clean state 0 plus three noisy states. State 0 never fires, so its
    /// noise parameters are placeholders.
    fn default() -> Self {
        Self {
            transition: [
                [0.995, 0.002, 0.001, 0.002],
                [0.01, 0.98, 0.01, 0.0],
                [0.0, 0.005, 0.96, 0.035],
                [0.03, 0.0, 0.97, 0.0],
            ],
            p: [0.0, 0.5, 0.1, 0.7],
            mu: [0.0, 0.2, 0.4, 0.0],
            sigma: [0.0, 0.5, 0.6, 1.0],
            initial_state: 0,
        }
    }
}

impl HmmShiftConfig {
    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.transition.iter().enumerate() {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                bail!(Validation, "transition row {i} has entries outside [0, 1]");
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                bail!(Validation, "transition row {i} sums to {sum}");
            }
        }
        if self.p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            bail!(Validation, "firing probabilities must lie in [0, 1]");
        }
        if self.sigma.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            bail!(
                Validation,
                "noise standard deviations must be finite and non-negative"
            );
        }
        if self.mu.iter().any(|v| !v.is_finite()) {
            bail!(Validation, "noise means must be finite");
        }
        if self.initial_state >= N_STATES {
            bail!(
                Validation,
                "initial state {} out of range",
                self.initial_state
            );
        }
        Ok(())
    }

    /// Same model with every state silenced.
    pub fn silent(&self) -> Self {
        Self {
            p: [0.0; N_STATES],
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatePath {
    pub states: Vec<u8>,
}

impl StatePath {
    pub fn new(states: Vec<u8>) -> Result<Self> {
        if states.iter().any(|&s| usize::from(s) >= N_STATES) {
            bail!(Validation, "state index out of range");
        }
        Ok(Self { states })
    }

    /// A path that stays in `state` for `n` steps.
    pub fn constant(state: u8, n: usize) -> Result<Self> {
        Self::new(vec![state; n])
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

fn next_state<R: Rng + ?Sized>(row: &[f64; N_STATES], rng: &mut R) -> u8 {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j as u8;
        }
    }
    // Rounding left `u` above the running sum: take the last reachable state.
    row.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u8
}

/// Markov chain sample of length `n` starting in the configured state.
pub fn sample_state_path<R: Rng + ?Sized>(
    cfg: &HmmShiftConfig,
    n: usize,
    rng: &mut R,
) -> Result<StatePath> {
    cfg.validate()?;
    if n == 0 {
        bail!(Length, "state path length must be at least 1");
    }
    let mut states = Vec::with_capacity(n);
    let mut s = cfg.initial_state as u8;
    states.push(s);
    for _ in 1..n {
        s = next_state(&cfg.transition[usize::from(s)], rng);
        states.push(s);
    }
    Ok(StatePath { states })
}

/// Perturbed series plus the hidden path and which beats received noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation<T> {
    pub intervals: IntervalSeries<T>,
    pub path: StatePath,
    pub fired: Vec<bool>,
}

impl<T: Scalar> Perturbation<T> {
    /// Perturbed interval values stamped with the end times of `reference`,
    /// i.e. beat `k` keeps the clock position it had before perturbation.
    pub fn on_timebase(&self, reference: &IntervalSeries<T>) -> Result<IntervalSeries<T>> {
        if reference.len() != self.intervals.len() {
            bail!(
                Shape,
                "reference has {} beats, perturbation {}",
                reference.len(),
                self.intervals.len()
            );
        }
        IntervalSeries::new(
            reference
                .entries()
                .iter()
                .zip(self.intervals.entries())
                .map(|(r, p)| Interval {
                    end_time_s: r.end_time_s,
                    interval_s: p.interval_s,
                })
                .collect(),
        )
    }
}

pub fn perturb_intervals<T: Scalar, R: Rng + ?Sized>(
    iv: &IntervalSeries<T>,
    cfg: &HmmShiftConfig,
    rng: &mut R,
) -> Result<IntervalSeries<T>> {
    Ok(perturb_intervals_traced(iv, cfg, rng)?.intervals)
}

pub fn perturb_intervals_traced<T: Scalar, R: Rng + ?Sized>(
    iv: &IntervalSeries<T>,
    cfg: &HmmShiftConfig,
    rng: &mut R,
) -> Result<Perturbation<T>> {
    cfg.validate()?;
    if iv.is_empty() {
        return Ok(Perturbation {
            intervals: iv.clone(),
            path: StatePath { states: vec![] },
            fired: vec![],
        });
    }
    let path = sample_state_path(cfg, iv.len(), rng)?;
    perturb_along_path(iv, cfg, path, rng)
}

/// Applies the state-dependent noise along a given path (one state per
/// interval). End times are rebuilt as a running sum from the beat that
/// opens the first interval.
pub fn perturb_along_path<T: Scalar, R: Rng + ?Sized>(
    iv: &IntervalSeries<T>,
    cfg: &HmmShiftConfig,
    path: StatePath,
    rng: &mut R,
) -> Result<Perturbation<T>> {
    cfg.validate()?;
    if path.len() != iv.len() {
        bail!(
            Shape,
            "path has {} states for {} intervals",
            path.len(),
            iv.len()
        );
    }
    let noise: Vec<Normal<f64>> = (0..N_STATES)
        .map(|i| Normal::new(cfg.mu[i], cfg.sigma[i]).expect("validated noise parameters"))
        .collect();
    let mut fired = Vec::with_capacity(iv.len());
    let values: Vec<T> = iv
        .entries()
        .iter()
        .zip(&path.states)
        .map(|(e, &s)| {
            let s = usize::from(s);
            let fire = rng.gen::<f64>() < cfg.p[s];
            fired.push(fire);
            if fire {
                e.interval_s + T::lit(noise[s].sample(rng).abs())
            } else {
                e.interval_s
            }
        })
        .collect();
    let anchor = iv
        .entries()
        .first()
        .map_or(T::zero(), |e| e.end_time_s - e.interval_s);
    let intervals = IntervalSeries::from_intervals(anchor, &values)?;
    Ok(Perturbation {
        intervals,
        path,
        fired,
    })
}
