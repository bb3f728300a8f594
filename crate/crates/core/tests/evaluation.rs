use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsda::evaluation::*;

/// Pairwise comparison over every positive/negative pair.
fn roc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut twice, mut pairs) = (0u128, 0u128);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1;
                twice += if si > sj {
                    2
                } else if si == sj {
                    1
                } else {
                    0
                };
            }
        }
    }
    twice as f64 / (2 * pairs) as f64
}

/// Cumulative confusion counts at every distinct threshold, by rescanning.
fn threshold_points(scores: &[f64], labels: &[u8]) -> Vec<(u64, u64)> {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    thresholds
        .iter()
        .map(|&t| {
            let tp = scores
                .iter()
                .zip(labels)
                .filter(|(s, y)| **s >= t && **y == 1)
                .count() as u64;
            let fp = scores
                .iter()
                .zip(labels)
                .filter(|(s, y)| **s >= t && **y == 0)
                .count() as u64;
            (tp, fp)
        })
        .collect()
}

/// Plain step-sum without any run merging.
fn pr_naive(points: &[(u64, u64)]) -> f64 {
    let p = points.last().unwrap().0 as f64;
    let mut prev = 0.0;
    let mut area = 0.0;
    for &(tp, fp) in points {
        let r = tp as f64 / p;
        if tp > 0 {
            area += (r - prev) * tp as f64 / (tp + fp) as f64;
        }
        prev = r;
    }
    area
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    let n = rng.gen_range(2..=100);
    let levels = if rng.gen_bool(0.5) {
        rng.gen_range(2..8)
    } else {
        0
    };
    loop {
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if levels > 0 {
                    rng.gen_range(0..levels) as f64 / levels as f64
                } else {
                    rng.gen::<f64>()
                }
            })
            .collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.3))).collect();
        if labels.contains(&0) && labels.contains(&1) {
            return (scores, labels);
        }
    }
}

#[test]
fn roc_matches_pairwise_oracle_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let (s, y) = random_instance(&mut rng);
        assert_eq!(roc_auc_scores(&s, &y).unwrap(), roc_oracle(&s, &y));
    }
}

#[test]
fn pr_matches_threshold_enumeration_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let (s, y) = random_instance(&mut rng);
        let points = threshold_points(&s, &y);
        let got = pr_auc_scores(&s, &y).unwrap();
        assert_eq!(got, pr_area(&points).unwrap());
        assert!((got - pr_naive(&points)).abs() < 1e-12);
    }
}

#[test]
fn pr_six_point_case() {
    let s = [0.9, 0.8, 0.8, 0.6, 0.4, 0.2];
    let y = [1, 0, 1, 0, 1, 0];
    // Steps: R 1/3 at P 1, R 2/3 at P 2/3, R 1 at P 3/5.
    let expected = 34.0 / 45.0;
    assert!((pr_auc_scores(&s, &y).unwrap() - expected).abs() < 1e-15);
    assert_eq!(
        pr_auc_scores(&s, &y).unwrap(),
        pr_area(&threshold_points(&s, &y)).unwrap()
    );
}

#[test]
fn pr_of_random_scores_is_prevalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 100_000;
    let s: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
    let y: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.2))).collect();
    let ap = pr_auc_scores(&s, &y).unwrap();
    assert!((ap - 0.2).abs() < 0.01, "{ap}");
}

#[test]
fn constant_scorer_pr_is_prevalence_exactly() {
    let y = [1, 0, 0, 1, 0, 0, 0];
    assert_eq!(pr_auc_scores(&[0.3; 7], &y).unwrap(), 2.0 / 7.0);
}

#[test]
fn variance_bound_direct_evaluation() {
    let (a, np, nn) = (0.8f64, 6000.0f64, 54000.0f64);
    let q1 = a / (2.0 - a);
    let q2 = 2.0 * a * a / (1.0 + a);
    let hm = (a * (1.0 - a) + (np - 1.0) * (q1 - a * a) + (nn - 1.0) * (q2 - a * a)) / (np * nn);
    let free = a * (1.0 - a) / np;
    let got = auc_variance_bound(0.8, 6000, 54000).unwrap();
    assert!((hanley_mcneil_variance(0.8, 6000, 54000).unwrap() - hm).abs() < 1e-18);
    assert_eq!(got, hm.max(free));
    // Same order of magnitude as the 3.6e-5 quoted for ~6000 minority examples.
    assert!(got > 3.6e-6 && got < 3.6e-4, "{got}");
}

#[test]
fn distribution_free_term_symmetric() {
    for &(a, p, n) in &[(0.7, 30usize, 500usize), (0.55, 1000, 40), (0.99, 12, 12)] {
        let f = |p: usize, n: usize| a * (1.0 - a) / p.min(n) as f64;
        assert_eq!(f(p, n), f(n, p));
        assert!(auc_variance_bound(a, p, n).unwrap() >= f(p, n));
    }
}

#[test]
fn loso_plan_partitions_subjects() {
    let ids: Vec<String> = (0..17).map(|i| format!("s{i:02}")).collect();
    let plan = loso_folds(&ids).unwrap();
    assert_eq!(plan.folds.len(), 17);
    for id in &ids {
        assert_eq!(
            plan.folds
                .iter()
                .filter(|f| f.validation.contains(id))
                .count(),
            1
        );
    }
    for f in &plan.folds {
        assert!(f.validation.iter().all(|v| !f.training.contains(v)));
        assert_eq!(f.training.len() + f.validation.len(), 17);
    }
    assert!(matches!(loso_folds(&["only"]), Err(tsda::Error::Plan(_))));
}

fn set(subject: &str, scores: &[f64], labels: &[u8]) -> PredictionSet {
    PredictionSet::from_scores(subject, scores, labels).unwrap()
}

#[test]
fn pooled_evaluation_concatenates() {
    let a = set("a", &[0.1, 0.7, 0.4], &[0, 1, 1]);
    let b = set("b", &[0.9, 0.2, 0.5, 0.3], &[1, 0, 0, 1]);
    let single = pooled_evaluate(std::slice::from_ref(&a)).unwrap();
    assert_eq!(single.roc_auc, roc_auc(&a).unwrap());
    assert_eq!(single.pr_auc, pr_auc(&a).unwrap());
    let pooled = pooled_evaluate(&[a.clone(), b.clone()]).unwrap();
    let scores = [0.1, 0.7, 0.4, 0.9, 0.2, 0.5, 0.3];
    let labels = [0, 1, 1, 1, 0, 0, 1];
    assert_eq!(pooled.roc_auc, roc_oracle(&scores, &labels));
    assert_eq!(
        pooled.pr_auc,
        pr_area(&threshold_points(&scores, &labels)).unwrap()
    );
    assert_eq!((pooled.n_pos, pooled.n_neg), (4, 3));
    assert!(matches!(
        pooled_evaluate(&[a.clone(), a]),
        Err(tsda::Error::Data(_))
    ));
    assert!(matches!(pooled_evaluate(&[]), Err(tsda::Error::Data(_))));
}

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..80).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(0u8..2, n),
        )
            .prop_filter("both classes", |(_, y)| y.contains(&0) && y.contains(&1))
    })
}

proptest! {
    #[test]
    fn roc_invariant_under_increasing_transform((s, y) in scored()) {
        let t: Vec<f64> = s.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
        prop_assert_eq!(roc_auc_scores(&s, &y).unwrap(), roc_auc_scores(&t, &y).unwrap());
        prop_assert_eq!(pr_auc_scores(&s, &y).unwrap(), pr_auc_scores(&t, &y).unwrap());
    }

    #[test]
    fn roc_of_negated_scores_complements((s, y) in scored()) {
        let mut sorted = s.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted.windows(2).all(|w| w[0] != w[1]));
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let total = roc_auc_scores(&s, &y).unwrap() + roc_auc_scores(&neg, &y).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_lie_in_unit_interval((s, y) in scored()) {
        let r = roc_auc_scores(&s, &y).unwrap();
        let p = pr_auc_scores(&s, &y).unwrap();
        prop_assert!((0.0..=1.0).contains(&r) && (0.0..=1.0).contains(&p));
    }
}
