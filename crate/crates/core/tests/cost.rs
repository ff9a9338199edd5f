use csrobust::certify::{CertificationRecord, TargetBound};
use csrobust::cost::{cs_robust_error, make_task, misclassification_cost, overall_robust_error, robust_cost, target_sets, CostMatrix, TaskSpec};
use csrobust::numcore::Rng;
use csrobust::Error;
use proptest::prelude::*;

/// A record with a bound of `+1` or `−1` against every listed target.
fn record(id: usize, label: usize, signs: &[(usize, bool)]) -> CertificationRecord {
    CertificationRecord {
        id,
        label,
        targets: signs
            .iter()
            .map(|&(target, ok)| TargetBound {
                target,
                bound: if ok { 1.0 } else { -1.0 },
                certified: ok,
            })
            .collect(),
    }
}

fn full_records(rng: &mut Rng, m: usize, n: usize, p_fail: f64) -> Vec<CertificationRecord> {
    (0..n)
        .map(|i| {
            let y = rng.below(m);
            let signs: Vec<(usize, bool)> = (0..m).filter(|&t| t != y).map(|t| (t, rng.uniform() >= p_fail)).collect();
            record(i, y, &signs)
        })
        .collect()
}

/// Direct transcription of the metric definitions, one loop per metric.
fn brute_force(records: &[CertificationRecord], c: &CostMatrix) -> Option<(f64, f64)> {
    let m = c.classes();
    let mut candidates = 0.0;
    let mut failed = 0.0;
    let mut cost = 0.0;
    for r in records {
        let omega: Vec<usize> = (0..m).filter(|&t| c.get(r.label, t) != 0.0).collect();
        if omega.is_empty() {
            continue;
        }
        candidates += 1.0;
        let mut any = false;
        for t in omega {
            let j = r.targets.iter().find(|b| b.target == t).unwrap().bound;
            if j < 0.0 {
                any = true;
                cost += c.get(r.label, t);
            }
        }
        if any {
            failed += 1.0;
        }
    }
    (candidates > 0.0).then(|| (failed / candidates, cost / candidates))
}

#[test]
fn cs_robust_error_hand_fixture() {
    let c = make_task(&TaskSpec::Multiple { pairs: vec![(0, 1), (0, 2), (1, 0), (1, 2)], seeds: vec![] }, 3).unwrap();
    let records = vec![
        record(0, 0, &[(1, true), (2, true)]),
        record(1, 0, &[(1, true), (2, false)]),
        record(2, 1, &[(0, false), (2, false)]),
        record(3, 1, &[(0, true), (2, true)]),
        // class 2 is not a candidate and must not count
        record(4, 2, &[(0, false), (1, false)]),
    ];
    assert_eq!(cs_robust_error(&records, &c).unwrap(), 0.5);
    assert_eq!(overall_robust_error(&records).unwrap(), 0.6);
}

#[test]
fn single_pair_reference_count() {
    // 980 candidates with three failures
    let c = make_task(&TaskSpec::SinglePair { source: 0, target: 2 }, 10).unwrap();
    let records: Vec<_> = (0..980).map(|i| record(i, 0, &[(2, i >= 3)])).collect();
    let err = cs_robust_error(&records, &c).unwrap();
    assert_eq!(err, 3.0 / 980.0);
    assert!((err * 100.0 - 0.31).abs() < 0.005);
}

#[test]
fn robust_cost_hand_fixture() {
    let c = CostMatrix::from_rows(&[vec![0.0, 4.0, 1.0], vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]]).unwrap();
    let records = vec![record(0, 0, &[(1, false), (2, false)]), record(1, 0, &[(1, true), (2, true)])];
    assert_eq!(robust_cost(&records, &c).unwrap(), 2.5);
    assert!(matches!(robust_cost(&records, &CostMatrix::zeros(3)), Err(Error::UndefinedMetric(_))));
    assert!(matches!(cs_robust_error(&records, &CostMatrix::zeros(3)), Err(Error::UndefinedMetric(_))));
}

#[test]
fn all_certified_is_zero_error() {
    let c = make_task(&TaskSpec::SingleSeed { seed: 1 }, 3).unwrap();
    let records = vec![record(0, 1, &[(0, true), (2, true)])];
    assert_eq!(cs_robust_error(&records, &c).unwrap(), 0.0);
    assert_eq!(robust_cost(&records, &c).unwrap(), 0.0);
}

#[test]
fn records_missing_a_costed_target_are_rejected() {
    let c = make_task(&TaskSpec::SinglePair { source: 0, target: 2 }, 3).unwrap();
    let records = vec![record(0, 0, &[(1, true)])];
    assert!(cs_robust_error(&records, &c).is_err());
}

#[test]
fn misclassification_cost_cases() {
    let c = make_task(&TaskSpec::SmallLarge, 10).unwrap();
    assert_eq!(misclassification_cost(&[3, 4], &[3, 4], &c).unwrap(), 0.0);
    assert_eq!(misclassification_cost(&[0, 3], &[0, 0], &c).unwrap(), 4.5);
    assert!(misclassification_cost(&[0], &[0, 1], &c).is_err());

    let ones = make_task(&TaskSpec::Multiple { pairs: vec![], seeds: (0..10).collect() }, 10).unwrap();
    let mut rng = Rng::new(1);
    let labels: Vec<usize> = (0..200).map(|_| rng.below(10)).collect();
    let preds: Vec<usize> = labels.iter().map(|&y| if rng.uniform() < 0.3 { rng.below(10) } else { y }).collect();
    let err = labels.iter().zip(&preds).filter(|(a, b)| a != b).count() as f64 / 200.0;
    assert_eq!(misclassification_cost(&preds, &labels, &ones).unwrap(), err);
}

#[test]
fn metrics_match_brute_force_on_random_records() {
    let mut rng = Rng::new(2);
    for _ in 0..200 {
        let m = 2 + rng.below(6);
        let mut entries = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                if i != j && rng.uniform() < 0.4 {
                    entries[i * m + j] = (1 + rng.below(9)) as f64 / 2.0;
                }
            }
        }
        let c = CostMatrix::new(m, entries).unwrap();
        let (n, p) = (1 + rng.below(60), rng.uniform());
        let records = full_records(&mut rng, m, n, p);
        match brute_force(&records, &c) {
            Some((err, cost)) => {
                assert_eq!(cs_robust_error(&records, &c).unwrap(), err);
                assert_eq!(robust_cost(&records, &c).unwrap(), cost);
            }
            None => assert!(cs_robust_error(&records, &c).is_err()),
        }
    }
}

#[test]
fn task_sparsities() {
    let m = 10;
    let sparsity = |spec: TaskSpec| make_task(&spec, m).unwrap().sparsity();
    assert_eq!(sparsity(TaskSpec::SinglePair { source: 0, target: 2 }), 1.0 / 90.0);
    assert_eq!(sparsity(TaskSpec::SingleSeed { seed: 3 }), 9.0 / 90.0);
    assert_eq!(sparsity(TaskSpec::SingleTarget { target: 3 }), 9.0 / 90.0);
    assert_eq!(sparsity(TaskSpec::RandomPairs { count: 10, seed: 4 }), 10.0 / 90.0);
    assert_eq!(sparsity(TaskSpec::odd_seeds(m)), 45.0 / 90.0);
    assert_eq!(sparsity(TaskSpec::Multiple { pairs: vec![], seeds: vec![0, 2, 4, 6, 8] }), 45.0 / 90.0);
    assert_eq!(sparsity(TaskSpec::SmallLarge), 45.0 / 90.0);
    assert_eq!(sparsity(TaskSpec::LargeSmall), 45.0 / 90.0);
    // animal ↔ vehicle groups over ten classes
    let vehicles = [0usize, 1, 8, 9];
    let animals = [2usize, 3, 4, 5, 6, 7];
    let pairs = animals.iter().flat_map(|&a| vehicles.iter().map(move |&v| (a, v))).collect();
    assert_eq!(sparsity(TaskSpec::Multiple { pairs, seeds: vec![] }), 24.0 / 90.0);
}

#[test]
fn real_valued_tasks() {
    let sl = make_task(&TaskSpec::SmallLarge, 10).unwrap();
    assert_eq!((sl.get(0, 9), sl.get(9, 0)), (81.0, 0.0));
    let ls = make_task(&TaskSpec::LargeSmall, 10).unwrap();
    assert_eq!((ls.get(9, 0), ls.get(0, 9)), (81.0, 0.0));
    let dense = make_task(&TaskSpec::SmallLargeDense, 10).unwrap();
    assert_eq!((dense.get(2, 1), dense.get(1, 2), dense.get(4, 4)), (0.1, 1.0, 0.0));
    assert!(make_task(&TaskSpec::SinglePair { source: 0, target: 10 }, 10).is_err());
    assert!(make_task(&TaskSpec::RandomPairs { count: 91, seed: 0 }, 10).is_err());
}

#[test]
fn random_pairs_are_seeded() {
    let a = make_task(&TaskSpec::RandomPairs { count: 10, seed: 9 }, 10).unwrap();
    let b = make_task(&TaskSpec::RandomPairs { count: 10, seed: 9 }, 10).unwrap();
    let c = make_task(&TaskSpec::RandomPairs { count: 10, seed: 10 }, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn target_set_cases() {
    let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
    let zero = target_sets(&CostMatrix::zeros(10), &labels).unwrap();
    assert!(zero.delta.iter().all(|&d| !d) && zero.omega.iter().all(Vec::is_empty));
    assert_eq!(zero.counts, vec![10; 10]);
    assert_eq!(zero.candidates(), 0);

    let pair = target_sets(&make_task(&TaskSpec::SinglePair { source: 0, target: 2 }, 10).unwrap(), &labels).unwrap();
    assert_eq!(pair.omega[0], vec![2]);
    assert!(pair.delta[0] && pair.delta[1..].iter().all(|&d| !d));
    assert_eq!(pair.candidates(), 10);
    assert!(target_sets(&CostMatrix::zeros(10), &[10]).is_err());
}

#[test]
fn parsing_cases() {
    let mut text = String::new();
    for i in 0..10 {
        let row: Vec<&str> = (0..10).map(|j| if (i, j) == (0, 2) { "1" } else { "0" }).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    let parsed = CostMatrix::parse_csv(&text).unwrap();
    assert_eq!(parsed, make_task(&TaskSpec::SinglePair { source: 0, target: 2 }, 10).unwrap());

    let diag = "0,1,0\n0,0,0\n0,0,1\n";
    assert!(matches!(CostMatrix::parse_csv(diag), Err(Error::CostMatrix(_))));
    assert!(CostMatrix::parse_csv("0,1\n0,0,0\n").is_err());
    assert!(CostMatrix::parse_csv("0,-1\n0,0\n").is_err());
    assert!(CostMatrix::parse_csv("0,1\n0,x\n").is_err());
    // an optional header row
    assert_eq!(CostMatrix::parse_csv("a,b\n0,1\n0,0\n").unwrap().get(0, 1), 1.0);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sl.csv");
    let sl = make_task(&TaskSpec::SmallLarge, 10).unwrap();
    sl.write_csv(&path).unwrap();
    assert_eq!(CostMatrix::parse_cost_matrix(&path).unwrap(), sl);
}

#[test]
fn task_spec_serde_shape() {
    let spec: TaskSpec = serde_json::from_str(r#"{"kind":"single-pair","source":4,"target":9}"#).unwrap();
    assert_eq!(spec, TaskSpec::SinglePair { source: 4, target: 9 });
    let dense: TaskSpec = serde_json::from_str(r#"{"kind":"small-large-dense"}"#).unwrap();
    assert_eq!(dense, TaskSpec::SmallLargeDense);
    assert!(serde_json::from_str::<TaskSpec>(r#"{"kind":"single-seed","seed":1,"extra":2}"#).is_err());
}

proptest! {
    #[test]
    fn metric_scaling_laws(seed in 0u64..5000, lambda in 0.01..100.0f64) {
        let mut rng = Rng::new(seed);
        let m = 2 + rng.below(6);
        let c = make_task(&TaskSpec::RandomPairs { count: 1 + rng.below(m * m - m), seed }, m).unwrap();
        let p = rng.uniform();
        let records = full_records(&mut rng, m, 40, p);
        let scaled = c.scaled(lambda).unwrap();
        if let Ok(err) = cs_robust_error(&records, &c) {
            prop_assert_eq!(cs_robust_error(&records, &scaled).unwrap(), err);
            let (rc, rs) = (robust_cost(&records, &c).unwrap(), robust_cost(&records, &scaled).unwrap());
            prop_assert!((rs - lambda * rc).abs() <= 1e-12 * rs.abs().max(1.0));
            // binary costs: per-target failures bracket per-example failures
            let widest = (0..m).map(|j| c.targets_of(j).len()).max().unwrap() as f64;
            prop_assert!(rc >= err && rc <= widest * err + 1e-12);
        }
    }
}
