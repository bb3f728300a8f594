//! Synthetic study generator: labelled beat series whose apnea epochs carry a
//! cyclic heart-rate modulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::features::{LabelSegment, LabelStream};
use crate::signal::{peaks_to_intervals, IntervalSeries, PeakSeries, Waveform};

use super::hmm::{perturb_intervals_traced, HmmShiftConfig, StatePath};

/// Shortest interval the generator emits, in seconds.
pub const MIN_TOY_INTERVAL_S: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalDist {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Modulation {
    pub amplitude_s: f64,
    pub period_s: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyStudyConfig {
    pub n_subjects: usize,
    pub epochs_per_subject: usize,
    pub epoch_len_s: f64,
    /// Row-stochastic epoch-label chain over (normal, apnea).
    pub apnea_chain: [[f64; 2]; 2],
    pub normal_interval: IntervalDist,
    pub apnea_modulation: Modulation,
    /// Spread of the per-subject baseline interval around `normal_interval.mean`.
    pub subject_offset_sd: f64,
    /// Chance that an epoch's recorded label disagrees with its true state,
    /// emulating rater disagreement. The beats always follow the true state.
    pub label_flip_prob: f64,
    pub seed: u64,
}

impl Default for ToyStudyConfig {
    fn default() -> Self {
        Self {
            n_subjects: 12,
            epochs_per_subject: 120,
            epoch_len_s: 60.0,
            apnea_chain: [[0.95, 0.05], [0.30, 0.70]],
            normal_interval: IntervalDist {
                mean: 0.9,
                sd: 0.05,
            },
            apnea_modulation: Modulation {
                amplitude_s: 0.15,
                period_s: 30.0,
                sd: 0.05,
            },
            subject_offset_sd: 0.0,
            label_flip_prob: 0.0,
            seed: 0,
        }
    }
}

impl ToyStudyConfig {
    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.apnea_chain.iter().enumerate() {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) || (row[0] + row[1] - 1.0).abs() > 1e-12
            {
                bail!(
                    Validation,
                    "apnea chain row {i} is not a probability vector"
                );
            }
        }
        let sds = [
            self.normal_interval.sd,
            self.apnea_modulation.sd,
            self.subject_offset_sd,
        ];
        if sds.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            bail!(
                Validation,
                "standard deviations must be finite and non-negative"
            );
        }
        if !(0.0..=1.0).contains(&self.label_flip_prob) {
            bail!(Validation, "label flip probability must lie in [0, 1]");
        }
        if !(self.epoch_len_s > 0.0) || !(self.apnea_modulation.period_s > 0.0) {
            bail!(
                Validation,
                "epoch length and modulation period must be positive"
            );
        }
        if !(self.normal_interval.mean > MIN_TOY_INTERVAL_S) {
            bail!(
                Validation,
                "mean interval must exceed {MIN_TOY_INTERVAL_S} s"
            );
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.epochs_per_subject as f64 * self.epoch_len_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySubject {
    pub subject_id: String,
    pub peaks: PeakSeries<f64>,
    /// Recorded labels, possibly flipped.
    pub labels: LabelStream<f64>,
    /// True per-epoch state.
    pub epoch_labels: Vec<u8>,
}

/// Independent stream per subject, so subject `k` does not depend on how
/// many subjects were requested.
pub fn subject_rng(seed: u64, subject: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(subject as u64 + 1);
    rng
}

fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    // Rejection keeps the shape above the floor; after a few misses (mean far
    // below the floor) the floor itself is used.
    for _ in 0..64 {
        let z: f64 = StandardNormal.sample(rng);
        let v = mean + sd * z;
        if v >= MIN_TOY_INTERVAL_S {
            return v;
        }
    }
    MIN_TOY_INTERVAL_S
}

pub fn generate_toy_study(cfg: &ToyStudyConfig) -> Result<Vec<ToySubject>> {
    cfg.validate()?;
    (0..cfg.n_subjects)
        .map(|k| generate_subject(cfg, k))
        .collect()
}

fn generate_subject(cfg: &ToyStudyConfig, index: usize) -> Result<ToySubject> {
    let mut rng = subject_rng(cfg.seed, index);
    let [[_, to_apnea], [to_normal, _]] = cfg.apnea_chain;
    let stationary_apnea = if to_apnea + to_normal > 0.0 {
        to_apnea / (to_apnea + to_normal)
    } else {
        0.0
    };

    let mut epoch_labels = Vec::with_capacity(cfg.epochs_per_subject);
    let mut state = u8::from(rng.gen::<f64>() < stationary_apnea);
    for _ in 0..cfg.epochs_per_subject {
        epoch_labels.push(state);
        let row = cfg.apnea_chain[usize::from(state)];
        state = u8::from(rng.gen::<f64>() >= row[0]);
    }

    let offset = if cfg.subject_offset_sd > 0.0 {
        Normal::new(0.0, cfg.subject_offset_sd)
            .expect("validated")
            .sample(&mut rng)
    } else {
        0.0
    };
    let base = (cfg.normal_interval.mean + offset).max(MIN_TOY_INTERVAL_S + 0.1);
    let m = cfg.apnea_modulation;
    let duration = cfg.duration_s();
    let mut times = vec![0.0];
    let mut t = 0.0;
    loop {
        let epoch = (t / cfg.epoch_len_s) as usize;
        if epoch >= epoch_labels.len() {
            break;
        }
        let dt = if epoch_labels[epoch] == 1 {
            let mean = base + m.amplitude_s * (2.0 * std::f64::consts::PI * t / m.period_s).sin();
            truncated_normal(&mut rng, mean, m.sd)
        } else {
            truncated_normal(&mut rng, base, cfg.normal_interval.sd)
        };
        t += dt;
        if t >= duration {
            break;
        }
        times.push(t);
    }

    // Separate stream, so flipping never changes the beats.
    let mut label_rng = subject_rng(cfg.seed, index);
    label_rng.set_stream((2u64 << 32) + index as u64);
    let segments = epoch_labels
        .iter()
        .enumerate()
        .map(|(e, &label)| LabelSegment {
            start_s: e as f64 * cfg.epoch_len_s,
            end_s: (e + 1) as f64 * cfg.epoch_len_s,
            label: if cfg.label_flip_prob > 0.0 && label_rng.gen::<f64>() < cfg.label_flip_prob {
                1 - label
            } else {
                label
            },
        })
        .collect();
    Ok(ToySubject {
        subject_id: format!("toy-{index:03}"),
        peaks: PeakSeries::new(times)?,
        labels: LabelStream::new(segments)?,
        epoch_labels,
    })
}

/// Crude pulse-train rendering of a target sensor, used only to give the
/// auxiliary branch a raw input. Pulses sit on the beat times; the additive
/// noise level follows the hidden state of the interval that ends at the
/// next beat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PulseRenderConfig {
    pub sample_rate_hz: f64,
    pub pulse_width_s: f64,
    pub state_noise_sd: [f64; 4],
}

impl Default for PulseRenderConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 20.0,
            pulse_width_s: 0.08,
            state_noise_sd: [0.02, 0.4, 0.25, 0.8],
        }
    }
}

pub fn render_pulse_waveform<R: Rng + ?Sized>(
    beats: &PeakSeries<f64>,
    path: &StatePath,
    duration_s: f64,
    cfg: &PulseRenderConfig,
    rng: &mut R,
) -> Result<Waveform<f64>> {
    if path.len() + 1 != beats.len() && !(beats.is_empty() && path.is_empty()) {
        bail!(Shape, "{} states for {} beats", path.len(), beats.len());
    }
    let fs = cfg.sample_rate_hz;
    let n = (duration_s * fs).round() as usize;
    let mut x = vec![0.0; n];
    let reach = (4.0 * cfg.pulse_width_s * fs).ceil() as i64;
    for &b in beats.times_s() {
        let centre = (b * fs).round() as i64;
        for i in (centre - reach).max(0)..(centre + reach + 1).min(n as i64) {
            let z = (i as f64 / fs - b) / cfg.pulse_width_s;
            x[i as usize] += (-0.5 * z * z).exp();
        }
    }
    let times = beats.times_s();
    let mut k = 0;
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f64 / fs;
        while k + 1 < times.len() && times[k + 1] <= t {
            k += 1;
        }
        let state = path.states.get(k).copied().unwrap_or(0);
        let sd = cfg.state_noise_sd[usize::from(state)];
        let z: f64 = StandardNormal.sample(rng);
        *v += sd * z;
    }
    Waveform::new(x, fs, 0.0)
}

/// One toy subject with its simulated target domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedSubject {
    pub subject_id: String,
    pub source: IntervalSeries<f64>,
    /// Perturbed intervals kept on the source beat clock.
    pub target: IntervalSeries<f64>,
    pub path: StatePath,
    pub labels: LabelStream<f64>,
    pub raw: Option<Waveform<f64>>,
}

/// Stream for the shift of subject `k`, disjoint from [`subject_rng`].
pub fn shift_rng(seed: u64, subject: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1u64 << 32) + subject as u64);
    rng
}

/// Perturbs a subject's intervals with the HMM and, when `render` is given,
/// draws a noisy pulse waveform at the source beats whose noise follows the
/// hidden state.
pub fn shift_toy_subject(
    subject: &ToySubject,
    index: usize,
    shift: &HmmShiftConfig,
    render: Option<&PulseRenderConfig>,
    duration_s: f64,
    seed: u64,
) -> Result<ShiftedSubject> {
    let mut rng = shift_rng(seed, index);
    let source = peaks_to_intervals(&subject.peaks);
    let p = perturb_intervals_traced(&source, shift, &mut rng)?;
    let target = p.on_timebase(&source)?;
    let raw = render
        .map(|r| render_pulse_waveform(&subject.peaks, &p.path, duration_s, r, &mut rng))
        .transpose()?;
    Ok(ShiftedSubject {
        subject_id: subject.subject_id.clone(),
        source,
        target,
        path: p.path,
        labels: subject.labels.clone(),
        raw,
    })
}
