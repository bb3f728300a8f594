use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tsda::adaptation::*;
use tsda::evaluation::roc_auc_scores;
use tsda::features::*;
use tsda::neural::*;
use tsda::shift::*;

fn small_model() -> ModelConfig {
    ModelConfig {
        tail_sizes: vec![6, 6],
        lstm_hidden: 4,
        head_hidden: vec![8],
        conv: vec![
            ConvSpec {
                channels: 2,
                kernel: 5,
                stride: 4,
            },
            ConvSpec {
                channels: 3,
                kernel: 5,
                stride: 4,
            },
        ],
    }
}

/// Toy subjects with their HMM-shifted target, windowed at one minute.
fn toy_paired(cfg: &ToyStudyConfig, render: bool, seed: u64) -> Vec<PairedExample<f64>> {
    let fc = FeatureConfig::default();
    let pulse = PulseRenderConfig::default();
    generate_toy_study(cfg)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let render = render.then_some(&pulse);
            let sh = shift_toy_subject(
                s,
                k,
                &HmmShiftConfig::default(),
                render,
                cfg.duration_s(),
                seed,
            )
            .unwrap();
            let raw = sh.raw.as_ref().map(|w| RawSource { waveform: w });
            assemble_paired(
                &sh.subject_id,
                &sh.source,
                &sh.target,
                Some(&sh.labels),
                raw,
                0.0,
                cfg.duration_s(),
                &fc,
            )
            .unwrap()
            .0
        })
        .collect()
}

/// Short recordings with an apnea prevalence of 0.4, so both classes show up.
fn toy(n_subjects: usize, epochs: usize, seed: u64) -> ToyStudyConfig {
    ToyStudyConfig {
        n_subjects,
        epochs_per_subject: epochs,
        seed,
        apnea_chain: [[0.8, 0.2], [0.3, 0.7]],
        ..ToyStudyConfig::default()
    }
}

fn quick(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        lr: 3e-3,
        seed,
        ..TrainConfig::default()
    }
}

fn pretrained(data: &[PairedExample<f64>], epochs: usize) -> PretrainedTeacher<f64> {
    let (model, curve) = pretrain_teacher(data, &[], &small_model(), &quick(epochs, 1)).unwrap();
    let platt = calibrate_teacher(&model, data).unwrap();
    PretrainedTeacher {
        model,
        platt,
        curve,
    }
}

fn bits<P: Parameters<f64>>(p: &P) -> Vec<u64> {
    p.flatten().iter().map(|v| v.to_bits()).collect()
}

fn outputs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Outputs<f64> {
    Outputs {
        q: Tensor::matrix(n, d, (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap(),
        logits: (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect(),
    }
}

#[test]
fn hybrid_loss_vanishes_on_exact_match() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let o = outputs(&mut rng, 7, 3);
    let l = hybrid_loss(&o, &o, &[true; 7], &HybridLossConfig::default()).unwrap();
    assert_eq!(l.loss, 0.0);
    assert!(l.dq.values().iter().chain(&l.dlogits).all(|&g| g == 0.0));
}

#[test]
fn hybrid_loss_hand_case() {
    let teacher = Outputs::<f64> {
        q: Tensor::matrix(2, 2, vec![0.0; 4]).unwrap(),
        logits: vec![0.0, 1.0],
    };
    let student = Outputs {
        q: Tensor::matrix(2, 2, vec![0.5; 4]).unwrap(),
        logits: vec![1.0, 1.0],
    };
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
fn alpha_scales_only_the_activation_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let (n, d) = (rng.gen_range(1..9), rng.gen_range(1..6));
        let (s, t) = (outputs(&mut rng, n, d), outputs(&mut rng, n, d));
        let mut mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
        mask[0] = true;
        let at = |alpha: f64| {
            hybrid_loss(
                &s,
                &t,
                &mask,
                &HybridLossConfig {
                    alpha,
                    ..Default::default()
                },
            )
            .unwrap()
            .loss
        };
        let out = hybrid_loss(&s, &t, &mask, &HybridLossConfig::output_only())
            .unwrap()
            .loss;
        assert_eq!(at(0.0), out);
        let c = rng.gen_range(0.0..5.0);
        let (l0, l1, lc) = (at(0.0), at(1.0), at(c));
        assert!((lc - l0 - c * (l1 - l0)).abs() <= 1e-12 * lc.abs().max(1.0));
    }
    // Dyadic values make every operation exact.
    let s = Outputs {
        q: Tensor::matrix(2, 2, vec![0.5, 0.25, -0.5, 1.0]).unwrap(),
        logits: vec![1.0, 0.5],
    };
    let t = Outputs {
        q: Tensor::matrix(2, 2, vec![0.0; 4]).unwrap(),
        logits: vec![0.0, 0.0],
    };
    let at = |alpha: f64| {
        hybrid_loss(
            &s,
            &t,
            &[true, true],
            &HybridLossConfig {
                alpha,
                ..Default::default()
            },
        )
        .unwrap()
        .loss
    };
    assert_eq!(at(4.0) - at(0.0), 4.0 * (at(1.0) - at(0.0)));
}

#[test]
fn hybrid_loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-6;
    for case in 0..10 {
        let (n, d) = (rng.gen_range(1..8), rng.gen_range(1..5));
        let (s, t) = (outputs(&mut rng, n, d), outputs(&mut rng, n, d));
        let mut mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.6)).collect();
        mask[n - 1] = true;
        let cfg = HybridLossConfig {
            alpha: rng.gen_range(0.1..3.0),
            ..Default::default()
        };
        let g = hybrid_loss(&s, &t, &mask, &cfg).unwrap();
        let f = |o: &Outputs<f64>| hybrid_loss(o, &t, &mask, &cfg).unwrap().loss;
        let mut analytic = g.dlogits.clone();
        analytic.extend_from_slice(g.dq.values());
        let mut numeric = Vec::new();
        for i in 0..n {
            let (mut up, mut down) = (s.clone(), s.clone());
            up.logits[i] += h;
            down.logits[i] -= h;
            numeric.push((f(&up) - f(&down)) / (2.0 * h));
        }
        for k in 0..n * d {
            let (mut up, mut down) = (s.clone(), s.clone());
            up.q.values_mut()[k] += h;
            down.q.values_mut()[k] -= h;
            numeric.push((f(&up) - f(&down)) / (2.0 * h));
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = analytic
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(1e-12);
        assert!(diff / norm < 1e-4, "case {case}: {}", diff / norm);
    }
}

#[test]
fn student_loss_gradients_match_finite_differences() {
    // Hybrid loss composed with the student graph, through the batch loss.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-5;
    for case in 0..10 {
        let cfg = small_model();
        let mut t = TeacherModel::init(&cfg, FeatureNorm::identity(5), &mut rng).unwrap();
        for b in t.blocks_mut() {
            b.iter_mut().for_each(|v| *v = rng.gen_range(-0.8..0.8));
        }
        let mut s = StudentModel::from_teacher(&t, None).unwrap();
        for b in s.blocks_mut() {
            b.iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
        }
        let n = rng.gen_range(2..6);
        let x =
            Tensor::matrix(n, 5, (0..n * 5).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let teacher_out = t.forward(&x, None).unwrap();
        let mut pair_mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
        pair_mask[0] = true;
        let seq = Sequence {
            input: x.clone(),
            raw: None,
            labels: vec![None; n],
            label_mask: vec![false; n],
            pair_mask,
            teacher: Some(teacher_out),
        };
        let obj = Objective::Distill(HybridLossConfig {
            alpha: rng.gen_range(0.5..2.0),
            ..Default::default()
        });
        let loss = |m: &StudentModel<f64>| {
            batch_loss(&[m.forward(&x, None).unwrap()], &[&seq], &obj)
                .unwrap()
                .loss
        };
        let mut tape = Tape::new(&s);
        let out = tape.forward(&x, None).unwrap();
        let lg = batch_loss(&[out], &[&seq], &obj).unwrap();
        let mut grads = s.zeros_like();
        tape.backward(Some(&lg.dq), &lg.dlogits, &mut grads)
            .unwrap();
        let analytic = grads.flatten();
        let mut numeric = Vec::new();
        let sizes: Vec<usize> = s.blocks().iter().map(|b| b.len()).collect();
        for (bi, &len) in sizes.iter().enumerate() {
            for k in 0..len {
                let orig = s.blocks_mut()[bi][k];
                s.blocks_mut()[bi][k] = orig + h;
                let up = loss(&s);
                s.blocks_mut()[bi][k] = orig - h;
                let down = loss(&s);
                s.blocks_mut()[bi][k] = orig;
                numeric.push((up - down) / (2.0 * h));
            }
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = analytic
            .iter()
            .chain(&numeric)
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(1e-12);
        assert!(diff / norm < 1e-4, "case {case}: {}", diff / norm);
    }
}

#[test]
fn platt_recovers_logistic_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let z: Vec<f64> = (0..10_000)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0)
        .collect();
    let y: Vec<u8> = z
        .iter()
        .map(|&v| u8::from(rng.gen::<f64>() < 1.0 / (1.0 + (-v).exp())))
        .collect();
    let p = platt_calibrate(&z, &y).unwrap();
    assert!((p.a - 1.0).abs() < 0.05 && p.b.abs() < 0.05, "{p:?}");
    assert!(platt_nll(&p, &z, &y) <= platt_nll(&PlattParams::IDENTITY, &z, &y));
}

#[test]
fn platt_never_worsens_nll() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let n = rng.gen_range(4..300);
        let scale = rng.gen_range(0.1..8.0);
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        let mut y: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.4))).collect();
        y[0] = 0;
        y[1] = 1;
        let p = platt_calibrate(&z, &y).unwrap();
        assert!(platt_nll(&p, &z, &y) <= platt_nll(&PlattParams::IDENTITY, &z, &y));
    }
    assert!(matches!(
        platt_calibrate(&[0.1, 0.2], &[1, 1]),
        Err(tsda::Error::Calibration(_))
    ));
}

#[test]
fn clone_contracts() {
    let data = toy_paired(&toy(2, 8, 3), true, 3);
    let teacher = pretrained(&data, 2);
    let plain = clone_student(&teacher.model, false, &small_model(), 0).unwrap();
    assert!(plain.aux.is_none());
    let x = teacher.model.norm.apply(&data[0].xa).unwrap();
    assert_eq!(
        plain.forward(&x, None).unwrap(),
        teacher.model.forward(&x, None).unwrap()
    );

    let before = bits(&teacher.model);
    let mut s = clone_student(&teacher.model, true, &small_model(), 0).unwrap();
    assert!(s.aux.is_some());
    for b in s.blocks_mut() {
        b.iter_mut().for_each(|v| *v += 1.0);
    }
    assert_eq!(bits(&teacher.model), before);
}

#[test]
fn training_never_touches_the_head() {
    let data = toy_paired(&toy(3, 10, 4), true, 4);
    let teacher = pretrained(&data, 3);
    let head = bits(&teacher.model.head);
    for (use_cnn, mode) in [
        (true, LossMode::HybridDistill),
        (false, LossMode::CrossEntropyDa),
    ] {
        let mut s = clone_student(&teacher.model, use_cnn, &small_model(), 2).unwrap();
        let cfg = TrainConfig {
            loss_mode: mode,
            ..quick(3, 7)
        };
        let curve = train_student(
            &mut s,
            &teacher,
            &data,
            None,
            &cfg,
            &HybridLossConfig::default(),
        )
        .unwrap();
        assert!(curve.steps > 0);
        assert_eq!(bits(s.head()), head);
        assert_ne!(s.tail, teacher.model.tail);
    }
}

#[test]
fn label_mode_without_labels_is_a_data_error() {
    let mut data = toy_paired(&toy(2, 6, 5), false, 5);
    let teacher = pretrained(&data, 1);
    for ex in &mut data {
        ex.labels.iter_mut().for_each(|l| *l = None);
    }
    let mut s = clone_student(&teacher.model, false, &small_model(), 0).unwrap();
    let cfg = TrainConfig {
        loss_mode: LossMode::CrossEntropyDa,
        ..quick(2, 0)
    };
    let r = train_student(
        &mut s,
        &teacher,
        &data,
        None,
        &cfg,
        &HybridLossConfig::default(),
    );
    assert!(matches!(r, Err(tsda::Error::Data(_))));
    let bce = TrainConfig {
        loss_mode: LossMode::BceLabels,
        ..cfg
    };
    assert!(matches!(
        train_student(
            &mut s,
            &teacher,
            &data,
            None,
            &bce,
            &HybridLossConfig::default()
        ),
        Err(tsda::Error::Config(_))
    ));
}

#[test]
fn student_overfits_four_sequences() {
    let data: Vec<PairedExample<f64>> = toy_paired(&toy(4, 16, 6), false, 6);
    let model = ModelConfig {
        tail_sizes: vec![16, 16],
        lstm_hidden: 16,
        head_hidden: vec![32],
        ..small_model()
    };
    // A teacher trained long enough that its calibrated logits are reachable
    // through the frozen head.
    let (m, curve) = pretrain_teacher(&data, &[], &model, &quick(40, 1)).unwrap();
    let teacher = PretrainedTeacher {
        platt: calibrate_teacher(&m, &data).unwrap(),
        model: m,
        curve,
    };
    let mut s = clone_student(&teacher.model, false, &model, 1).unwrap();
    let cfg = TrainConfig {
        loss_mode: LossMode::HybridDistill,
        epochs: 200,
        batch_size: 4,
        lr: 1e-2,
        seed: 3,
        ..TrainConfig::default()
    };
    let curve = train_student(
        &mut s,
        &teacher,
        &data,
        None,
        &cfg,
        &HybridLossConfig::default(),
    )
    .unwrap();
    assert_eq!(curve.steps, 200);
    let (first, last) = (curve.train[0], *curve.train.last().unwrap());
    assert!(last * 10.0 <= first, "loss {first} -> {last}");
}

#[test]
fn identical_domains_start_at_the_minimum() {
    let mut data = toy_paired(&toy(2, 10, 7), false, 7);
    for ex in &mut data {
        ex.xb = ex.xa.clone();
    }
    let mut teacher = pretrained(&data, 2);
    // Raw-logit distillation: identity calibration.
    teacher.platt = PlattParams::IDENTITY;
    let mut s = clone_student(&teacher.model, false, &small_model(), 0).unwrap();
    let initial = s.flatten();
    let seqs: Vec<Sequence<f64>> = data
        .iter()
        .map(|e| {
            Sequence::prepare(
                e,
                &teacher.model.norm,
                Domain::Target,
                false,
                Some((&teacher.model, &teacher.platt)),
            )
            .unwrap()
        })
        .collect();
    let obj = Objective::Distill(HybridLossConfig::default());
    assert!(evaluate_loss(&s, &seqs, &obj).unwrap() < 1e-10);
    let cfg = TrainConfig {
        loss_mode: LossMode::HybridDistill,
        ..quick(5, 0)
    };
    train_student(
        &mut s,
        &teacher,
        &data,
        None,
        &cfg,
        &HybridLossConfig::default(),
    )
    .unwrap();
    let drift = s
        .flatten()
        .iter()
        .zip(&initial)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(drift < 1e-6, "{drift}");
}

#[test]
fn identity_calibration_gives_raw_logit_targets() {
    let data = toy_paired(&toy(1, 8, 8), false, 8);
    let teacher = pretrained(&data, 1);
    let raw = teacher.model.predict(&data[0].xa).unwrap();
    let t = teacher_targets(&teacher.model, &PlattParams::IDENTITY, &data[0].xa).unwrap();
    assert_eq!(t, raw);
    let c = teacher_targets(&teacher.model, &teacher.platt, &data[0].xa).unwrap();
    for (a, z) in c.logits.iter().zip(&raw.logits) {
        assert_eq!(*a, teacher.platt.a * z + teacher.platt.b);
    }
}

#[test]
fn zero_epochs_leave_the_model_unchanged() {
    let data = toy_paired(&toy(2, 6, 9), false, 9);
    let cfg = quick(0, 11);
    let (trained, curve) = pretrain_teacher(&data, &[], &small_model(), &cfg).unwrap();
    let norm = FeatureNorm::fit(data.iter().map(|e| e.xa.as_slice())).unwrap();
    let fresh =
        TeacherModel::init(&small_model(), norm, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    assert_eq!(bits(&trained), bits(&fresh));
    assert_eq!(curve.steps, 0);
}

#[test]
fn pretraining_is_deterministic() {
    let data = toy_paired(&toy(2, 8, 10), false, 10);
    let a = pretrain_teacher(&data, &[], &small_model(), &quick(3, 4)).unwrap();
    let b = pretrain_teacher(&data, &[], &small_model(), &quick(3, 4)).unwrap();
    assert_eq!(bits(&a.0), bits(&b.0));
    assert_eq!(a.1, b.1);
    let c = pretrain_teacher(&data, &[], &small_model(), &quick(3, 5)).unwrap();
    assert_ne!(bits(&a.0), bits(&c.0));
}

#[test]
fn separable_windows_are_learned() {
    // Exaggerated modulation and clean labels.
    let cfg = ToyStudyConfig {
        apnea_modulation: Modulation {
            amplitude_s: 0.3,
            period_s: 30.0,
            sd: 0.02,
        },
        normal_interval: IntervalDist {
            mean: 0.9,
            sd: 0.02,
        },
        ..toy(4, 30, 12)
    };
    let data = toy_paired(&cfg, false, 12);
    let (model, _) = pretrain_teacher(
        &data,
        &[],
        &small_model(),
        &TrainConfig {
            epochs: 50,
            ..quick(50, 2)
        },
    )
    .unwrap();
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for ex in &data {
        let out = model.predict(&ex.xa).unwrap();
        for ((z, v), l) in out.logits.iter().zip(&ex.xa).zip(&ex.labels) {
            if let (true, Some(l)) = (v.valid, l) {
                scores.push(*z);
                labels.push(*l);
            }
        }
    }
    let auc = roc_auc_scores(&scores, &labels).unwrap();
    assert!(auc >= 0.95, "{auc}");
}

fn small_study(pool: bool) -> LosoStudy<f64> {
    let subjects = toy_paired(&toy(3, 12, 13), false, 13);
    let source = pool.then(|| toy_paired(&toy(3, 12, 14), false, 14));
    let opts = StudyOptions {
        model: small_model(),
        pretrain: quick(2, 0),
        train: quick(2, 0),
        chunk_len: 5,
        seed: 21,
        ..StudyOptions::default()
    };
    LosoStudy::prepare(subjects, source.as_deref(), opts).unwrap()
}

#[test]
fn naive_transfer_returns_the_teacher() {
    let study = small_study(true);
    let run = study
        .run(&VariantSpec::new(VariantName::NaiveTransfer))
        .unwrap();
    for (k, f) in run.folds.iter().enumerate() {
        match &f.model {
            TrainedModel::Teacher(m) => assert_eq!(bits(m), bits(&study.teacher(k).model)),
            TrainedModel::Student(_) => panic!("naive transfer trained a student"),
        }
        assert_eq!(f.curve.steps, 0);
    }
}

#[test]
fn teacher_student_transfer_learning_updates_the_head() {
    let study = small_study(true);
    let run = study
        .run(&VariantSpec::new(
            VariantName::TeacherStudentTransferLearning,
        ))
        .unwrap();
    let teacher_head = bits(&study.teacher(0).model.head);
    for f in &run.folds {
        match &f.model {
            TrainedModel::Teacher(m) => assert_ne!(bits(&m.head), teacher_head),
            TrainedModel::Student(_) => panic!("transfer learning produced a student"),
        }
    }
}

#[test]
fn adaptation_rows_keep_the_head_frozen() {
    let study = small_study(false);
    for v in [
        VariantName::TeacherStudentDomainAdaptation,
        VariantName::LabelSupervisedDomainAdaptation,
        VariantName::Minimal,
    ] {
        let run = study.run(&VariantSpec::new(v)).unwrap();
        for (k, f) in run.folds.iter().enumerate() {
            let TrainedModel::Student(s) = &f.model else {
                panic!("{v} did not train a student")
            };
            assert_eq!(bits(s.head()), bits(&study.teacher(k).model.head));
        }
    }
}

#[test]
fn variant_runs_are_reproducible() {
    let a = small_study(false)
        .run(&VariantSpec::new(
            VariantName::TeacherStudentDomainAdaptation,
        ))
        .unwrap();
    let b = small_study(false)
        .run(&VariantSpec::new(
            VariantName::TeacherStudentDomainAdaptation,
        ))
        .unwrap();
    let scores = |r: &VariantRun<f64>| -> Vec<u64> {
        r.predictions()
            .iter()
            .flat_map(|p| p.scores())
            .map(f64::to_bits)
            .collect()
    };
    assert_eq!(scores(&a), scores(&b));
    assert!(!scores(&a).is_empty());
}

#[test]
fn registry_lists_every_row() {
    assert_eq!(VariantName::COMPARISON.len(), 8);
    assert_eq!(VariantName::ABLATIONS.len(), 5);
    assert_eq!(VariantName::all().count(), 13);
    let names: Vec<&str> = VariantName::COMPARISON.iter().map(|v| v.as_str()).collect();
    assert_eq!(names.first(), Some(&"label_supervised_target_only"));
    assert_eq!(names.last(), Some(&"teacher_on_source"));
    assert!(VariantSpec::parse("frobnicate").is_err());
}
