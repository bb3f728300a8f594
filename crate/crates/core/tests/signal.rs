use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsda::signal::{ampd_scan, detect_peaks_ampd, detect_qrs, AmpdConfig, Waveform};

/// Sample positions (fractional) of the maxima of `sin(2 pi f t + phase)`.
fn analytic_maxima(freq: f64, fs: f64, n: usize, phase: f64) -> Vec<f64> {
    let period = 1.0 / freq;
    let first = ((PI / 2.0 - phase) / (2.0 * PI * freq)).rem_euclid(period);
    let mut out = Vec::new();
    let mut t = first;
    while t * fs <= (n - 1) as f64 {
        out.push(t * fs);
        t += period;
    }
    out
}

fn sine(freq: f64, fs: f64, n: usize, phase: f64) -> Vec<f64> {
    (0..n)
        .map(|i| (2.0 * PI * freq * i as f64 / fs + phase).sin())
        .collect()
}

fn indices(w: &Waveform<f64>) -> Vec<f64> {
    detect_peaks_ampd(w)
        .unwrap()
        .times_s()
        .iter()
        .map(|t| (t - w.start_time_s()) * w.sample_rate_hz())
        .collect()
}

#[test]
fn ampd_sinusoid_matches_analytic_maxima() {
    let (f, fs) = (1.2, 100.0);
    let x = sine(f, fs, 1000, 0.0);
    let expected = analytic_maxima(f, fs, 1000, 0.0);
    assert_eq!(expected.len(), 12);
    let got = indices(&Waveform::new(x, fs, 0.0).unwrap());
    assert_eq!(got.len(), 12, "{got:?}");
    for (g, e) in got.iter().zip(&expected) {
        assert!((g - e).abs() <= 1.0, "peak {g} vs analytic {e}");
    }
}

/// Uniform noise in [-0.05, 0.05] can move the sample maximum by up to the
/// offset where the sinusoid drops by 0.1, i.e. `acos(0.9) / (2 pi) * 83.3`
/// ~ 6 samples. The count is exact; most peaks stay within 3 samples.
#[test]
fn ampd_noisy_sinusoid_keeps_every_peak() {
    let (f, fs) = (1.2, 100.0);
    let expected = analytic_maxima(f, fs, 1000, 0.0);
    let bound = (0.9f64).acos() / (2.0 * PI) * fs / f;
    let (mut near, mut total) = (0, 0);
    for seed in 0..200 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = sine(f, fs, 1000, 0.0)
            .into_iter()
            .map(|v| v + rng.gen_range(-0.05..0.05))
            .collect();
        let got = indices(&Waveform::new(x, fs, 0.0).unwrap());
        assert_eq!(got.len(), 12, "seed {seed}: {got:?}");
        for (g, e) in got.iter().zip(&expected) {
            assert!(
                (g - e).abs() <= bound + 0.5,
                "seed {seed}: peak {g} vs analytic {e}"
            );
            near += usize::from((g - e).abs() <= 3.0);
            total += 1;
        }
    }
    assert!(
        near as f64 / total as f64 >= 0.95,
        "{near}/{total} within 3 samples"
    );
}

#[test]
fn ampd_reports_times_offset_by_start() {
    let w = Waveform::new(sine(1.0, 50.0, 500, 0.0), 50.0, 100.0).unwrap();
    let p = detect_peaks_ampd(&w).unwrap();
    assert!((p.times_s()[0] - 100.25).abs() <= 0.02 + 1e-9);
}

/// Gaussian pulses of width `sigma_s`, centred at `centres` (seconds).
fn pulse_train(centres: &[f64], amps: &[f64], fs: f64, secs: f64, sigma_s: f64) -> Vec<f64> {
    let n = (fs * secs).round() as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            centres
                .iter()
                .zip(amps)
                .map(|(c, a)| a * (-0.5 * ((t - c) / sigma_s).powi(2)).exp())
                .sum()
        })
        .collect()
}

#[test]
fn qrs_recovers_gaussian_pulse_centres() {
    let fs = 200.0;
    let centres: Vec<f64> = (0..30).map(|k| 0.5 + k as f64).collect();
    let amps = vec![1.0; 30];
    let w = Waveform::new(pulse_train(&centres, &amps, fs, 30.0, 0.010), fs, 0.0).unwrap();
    let p = detect_qrs(&w).unwrap();
    assert_eq!(p.len(), 30, "{:?}", p.times_s());
    for (t, c) in p.times_s().iter().zip(&centres) {
        assert!(((t - c) * fs).abs() <= 2.0, "beat {t} vs centre {c}");
    }
}

#[test]
fn qrs_alternating_amplitudes_all_detected() {
    let fs = 200.0;
    let centres: Vec<f64> = (0..30).map(|k| 0.5 + k as f64).collect();
    let amps: Vec<f64> = (0..30)
        .map(|k| if k % 2 == 0 { 1.0 } else { 0.8 })
        .collect();
    let w = Waveform::new(pulse_train(&centres, &amps, fs, 30.0, 0.010), fs, 0.0).unwrap();
    let p = detect_qrs(&w).unwrap();
    assert_eq!(p.len(), 30);
    for (t, c) in p.times_s().iter().zip(&centres) {
        assert!(((t - c) * fs).abs() <= 2.0);
    }
}

#[test]
fn qrs_ignores_baseline_wander_and_small_noise() {
    let fs = 250.0;
    let centres: Vec<f64> = (0..40).map(|k| 0.4 + 0.85 * k as f64).collect();
    let amps = vec![1.2; 40];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut x = pulse_train(&centres, &amps, fs, 35.0, 0.012);
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f64 / fs;
        *v += 0.3 * (2.0 * PI * 0.2 * t).sin() + rng.gen_range(-0.02..0.02);
    }
    let p = detect_qrs(&Waveform::new(x, fs, 0.0).unwrap()).unwrap();
    assert_eq!(p.len(), 40);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    // Below roughly 12 samples per period the global scalogram minimum can
    // land on the alias scale near 1.5 periods, which then demands dominance
    // over neighbouring peaks; the domain keeps at least 20.
    #[test]
    fn ampd_clean_periodic_precision_and_recall(
        period in 0.4f64..2.0,
        fs in prop_oneof![Just(50.0f64), Just(64.0), Just(100.0), Just(128.0)],
        secs in 8.0f64..20.0,
        phase in 0.0f64..(2.0 * PI),
    ) {
        let f = 1.0 / period;
        let n = (fs * secs) as usize;
        let x = sine(f, fs, n, phase);
        let got = indices(&Waveform::new(x, fs, 0.0).unwrap());
        let expected = analytic_maxima(f, fs, n, phase);
        // Precision: every reported peak is an analytic maximum.
        for g in &got {
            prop_assert!(expected.iter().any(|e| (g - e).abs() <= 1.0), "spurious {g}");
        }
        // Recall: every maximum whose nearest sample has neighbours on both
        // sides is found.
        for e in expected.iter().filter(|&&e| e.round() >= 1.0 && e.round() <= (n - 2) as f64) {
            prop_assert!(got.iter().any(|g| (g - e).abs() <= 1.0), "missed {e}");
        }
    }

    #[test]
    fn ampd_is_amplitude_scale_invariant(
        xs in proptest::collection::vec(-10.0f64..10.0, 3..300),
        c in 0.001f64..1000.0,
    ) {
        let cfg = AmpdConfig::default();
        let a = ampd_scan(&xs, &cfg).unwrap();
        let scaled: Vec<f64> = xs.iter().map(|v| v * c).collect();
        let b = ampd_scan(&scaled, &cfg).unwrap();
        prop_assert_eq!(a.indices, b.indices);
    }

    #[test]
    fn detectors_emit_strictly_increasing_peaks(
        xs in proptest::collection::vec(-5.0f64..5.0, 400..1200),
    ) {
        let w = Waveform::new(xs, 200.0, 0.0).unwrap();
        let a = detect_peaks_ampd(&w).unwrap();
        prop_assert!(a.times_s().windows(2).all(|p| p[1] > p[0]));
        let q = detect_qrs(&w).unwrap();
        prop_assert!(q.times_s().windows(2).all(|p| p[1] > p[0]));
    }
}
