use std::collections::BTreeMap;

use isaaq_core::ensemble::{
    complementarity_report, ensemble_predict, fit_calibration, score_table, FeatureSet, LogisticRegression, L2_PENALTY,
};
use isaaq_core::solvers::SolverScores;
use isaaq_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain iteratively reweighted least squares with Gaussian elimination.
/// `beta[0]` is the unpenalised intercept.
fn irls(xs: &[Vec<f64>], ys: &[bool], l2: f64) -> Vec<f64> {
    let d = xs[0].len() + 1;
    let design: Vec<Vec<f64>> = xs.iter().map(|x| std::iter::once(1.0).chain(x.iter().copied()).collect()).collect();
    let mut beta = vec![0.0; d];
    for _ in 0..500 {
        let mut a = vec![vec![0.0; d]; d];
        let mut rhs = vec![0.0; d];
        for (x, &y) in design.iter().zip(ys) {
            let eta: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let p = 1.0 / (1.0 + (-eta).exp());
            let w = (p * (1.0 - p)).max(1e-12);
            let z = eta + (f64::from(u8::from(y)) - p) / w;
            for i in 0..d {
                rhs[i] += w * x[i] * z;
                for j in 0..d {
                    a[i][j] += w * x[i] * x[j];
                }
            }
        }
        for i in 1..d {
            a[i][i] += l2;
        }
        let next = gauss(a, rhs);
        let step: f64 = next.iter().zip(&beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        beta = next;
        if step < 1e-13 {
            break;
        }
    }
    beta
}

fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap()).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

fn predict(beta: &[f64], x: &[f64]) -> f64 {
    let eta = beta[0] + x.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>();
    1.0 / (1.0 + (-eta).exp())
}

/// Three noisy solvers over 60 four-option questions.
fn synthetic() -> (Vec<SolverScores>, BTreeMap<String, usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut labels = BTreeMap::new();
    let mut scores = Vec::new();
    for q in 0..60 {
        let qid = format!("q{q:02}");
        let answer = rng.gen_range(0..4);
        labels.insert(qid.clone(), answer);
        for (s, skill) in [("a", 1.5), ("b", 0.7), ("c", 0.2)] {
            let logits: Vec<f64> = (0..4).map(|i| rng.gen_range(-1.0..1.0) + if i == answer { skill } else { 0.0 }).collect();
            scores.push(SolverScores::new(qid.clone(), s, logits));
        }
    }
    (scores, labels)
}

#[test]
fn coefficients_match_irls_oracle() {
    let (scores, labels) = synthetic();
    let table = score_table(&scores);
    let model = fit_calibration(&table, &labels, FeatureSet::RawAndSoftmax).unwrap();
    assert_eq!(model.solver_ids(), ["a", "b", "c"]);

    let ys: Vec<bool> = labels.values().flat_map(|&a| (0..4).map(move |i| i == a)).collect();
    let mut second: Vec<Vec<f64>> = vec![Vec::new(); ys.len()];
    for (k, sid) in ["a", "b", "c"].iter().enumerate() {
        let xs: Vec<Vec<f64>> = labels
            .keys()
            .flat_map(|q| {
                let l = &table[*sid][q].logits;
                l.iter().zip(softmax(l)).map(|(&r, s)| vec![r, s]).collect::<Vec<_>>()
            })
            .collect();
        assert_eq!(xs.len(), 60 * 4);
        let beta = irls(&xs, &ys, L2_PENALTY);
        let fitted = &model.solvers[k].model;
        assert!((fitted.intercept - beta[0]).abs() < 1e-4, "{sid}: {} vs {}", fitted.intercept, beta[0]);
        for (w, b) in fitted.weights.iter().zip(&beta[1..]) {
            assert!((w - b).abs() < 1e-4, "{sid}: {w} vs {b}");
        }
        for (row, x) in second.iter_mut().zip(&xs) {
            row.push(predict(&beta, x));
        }
    }
    let beta = irls(&second, &ys, L2_PENALTY);
    assert!((model.combiner.intercept - beta[0]).abs() < 1e-4);
    for (w, b) in model.combiner.weights.iter().zip(&beta[1..]) {
        assert!((w - b).abs() < 1e-4, "combiner: {w} vs {b}");
    }
}

#[test]
fn separable_rows_match_oracle() {
    let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 10.0 - 1.0, ((i * 7) % 5) as f64 / 5.0]).collect();
    let ys: Vec<bool> = (0..20).map(|i| i >= 10).collect();
    let fitted = LogisticRegression::fit(&xs, &ys, L2_PENALTY).unwrap();
    let beta = irls(&xs, &ys, L2_PENALTY);
    let scale = beta.iter().fold(1.0f64, |m, b| m.max(b.abs()));
    assert!((fitted.intercept - beta[0]).abs() / scale < 1e-4);
    for (w, b) in fitted.weights.iter().zip(&beta[1..]) {
        assert!((w - b).abs() / scale < 1e-4, "{w} vs {b}");
    }
}

/// Each solver is sure and right on its own half, flat elsewhere.
fn complementary() -> (Vec<SolverScores>, BTreeMap<String, usize>) {
    let mut labels = BTreeMap::new();
    let mut scores = Vec::new();
    for q in 0..20 {
        let qid = format!("q{q:02}");
        let answer = 1 + q % 3;
        labels.insert(qid.clone(), answer);
        let sure: Vec<f64> = (0..4).map(|i| if i == answer { 6.0 } else { 0.0 }).collect();
        let flat = vec![0.0; 4];
        let (a, b) = if q < 10 { (sure, flat) } else { (flat, sure) };
        scores.push(SolverScores::new(qid.clone(), "left", a));
        scores.push(SolverScores::new(qid.clone(), "right", b));
    }
    (scores, labels)
}

#[test]
fn complementary_solvers_reach_full_accuracy() {
    let (scores, labels) = complementary();
    let table = score_table(&scores);
    for sid in ["left", "right"] {
        let hits = labels.iter().filter(|(q, &a)| table[sid][*q].predicted == a).count();
        assert_eq!(hits, 10);
    }
    let model = fit_calibration(&table, &labels, FeatureSet::RawAndSoftmax).unwrap();
    for (q, &a) in &labels {
        let per: Vec<SolverScores> = table.values().map(|r| r[q].clone()).collect();
        let out = ensemble_predict(&model, &per).unwrap();
        assert_eq!(out.predicted, a, "{q}");
        assert!(out.scores.iter().all(|s| (0.0..=1.0).contains(s)));
        let mut reversed = per.clone();
        reversed.reverse();
        assert_eq!(ensemble_predict(&model, &reversed).unwrap(), out);
        let row = out.to_solver_scores();
        assert_eq!(row.solver_id, "ensemble");
        assert_eq!(row.predicted, a);
    }
    let report = complementarity_report(&table, &labels).unwrap();
    assert_eq!(report.percent, 100.0);
    assert!(report.pairs.iter().all(|p| p.percent == 100.0 && p.missed == 10));
}

#[test]
fn perfect_feature_ranks_perfectly() {
    let mut labels = BTreeMap::new();
    let mut scores = Vec::new();
    for q in 0..12 {
        let qid = format!("q{q}");
        labels.insert(qid.clone(), q % 4);
        scores.push(SolverScores::new(qid, "oracle", (0..4).map(|i| f64::from(u8::from(i == q % 4))).collect()));
    }
    let table = score_table(&scores);
    let model = fit_calibration(&table, &labels, FeatureSet::RawAndSoftmax).unwrap();
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (q, &a) in &labels {
        let cal = model.calibrate("oracle", &table["oracle"][q].logits).unwrap();
        for (i, c) in cal.into_iter().enumerate() {
            if i == a { pos.push(c) } else { neg.push(c) }
        }
    }
    // AUC = 1: every positive outranks every negative
    assert!(pos.iter().all(|p| neg.iter().all(|n| p > n)));
}

#[test]
fn single_solver_ensemble_follows_solver() {
    let (scores, labels) = synthetic();
    let only_a: Vec<SolverScores> = scores.iter().filter(|s| s.solver_id == "a").cloned().collect();
    let table = score_table(&only_a);
    let model = fit_calibration(&table, &labels, FeatureSet::RawAndSoftmax).unwrap();
    assert!(model.solvers[0].model.weights.iter().all(|&w| w > 0.0));
    assert!(model.combiner.weights[0] > 0.0);
    for s in &only_a {
        assert_eq!(ensemble_predict(&model, std::slice::from_ref(s)).unwrap().predicted, s.predicted);
    }
}

#[test]
fn errors() {
    let (scores, labels) = synthetic();
    let mut partial = scores.clone();
    partial.retain(|s| !(s.solver_id == "b" && s.question_id == "q07"));
    match fit_calibration(&score_table(&partial), &labels, FeatureSet::RawAndSoftmax) {
        Err(Error::MissingScores(gaps)) => assert_eq!(gaps, ["b:q07"]),
        other => panic!("{other:?}"),
    }
    let one: BTreeMap<String, usize> = labels.iter().take(1).map(|(k, v)| (k.clone(), *v)).collect();
    let flat: Vec<SolverScores> = (0..4).map(|_| SolverScores::new(one.keys().next().unwrap().clone(), "a", vec![0.0; 4])).collect();
    assert!(fit_calibration(&score_table(&flat), &one, FeatureSet::RawAndSoftmax).is_ok());

    let model = fit_calibration(&score_table(&scores), &labels, FeatureSet::RawAndSoftmax).unwrap();
    let stranger = SolverScores::new("q00", "zzz", vec![0.0; 4]);
    assert!(matches!(ensemble_predict(&model, &[stranger]), Err(Error::NotFound { .. })));
    let lonely = SolverScores::new("q00", "a", vec![0.0; 4]);
    assert!(matches!(ensemble_predict(&model, &[lonely]), Err(Error::MissingScores(_))));

    let left = vec![SolverScores::new("x", "p", vec![1.0, 0.0])];
    let right = vec![SolverScores::new("y", "r", vec![1.0, 0.0])];
    let table = score_table(left.iter().chain(&right));
    let labels = BTreeMap::from([("x".to_string(), 0), ("y".to_string(), 0)]);
    assert!(complementarity_report(&table, &labels).is_err());
}

#[test]
fn complementarity_hand_count() {
    // hit matrix (1 = correct) over five questions:
    //        q0 q1 q2 q3 q4
    //   a     1  0  0  1  0
    //   b     0  1  0  1  1
    //   c     0  0  0  1  1
    let hits = [("a", [1, 0, 0, 1, 0]), ("b", [0, 1, 0, 1, 1]), ("c", [0, 0, 0, 1, 1])];
    let mut scores = Vec::new();
    let mut labels = BTreeMap::new();
    for q in 0..5 {
        labels.insert(format!("q{q}"), 0);
        for (s, row) in &hits {
            let logits = if row[q] == 1 { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
            scores.push(SolverScores::new(format!("q{q}"), *s, logits));
        }
    }
    let table = score_table(&scores);
    let r = complementarity_report(&table, &labels).unwrap();
    assert_eq!(r.questions, 5);
    let pair = |a: &str, b: &str| r.pairs.iter().find(|p| p.missed_by == a && p.recovered_by == b).unwrap();
    assert_eq!((pair("a", "b").missed, pair("a", "b").recovered), (3, 2));
    assert_eq!((pair("c", "a").missed, pair("c", "a").recovered), (3, 1));
    assert_eq!((pair("b", "c").missed, pair("b", "c").recovered), (2, 0));
    // q0, q1, q2, q4 are missed by someone; all but q2 are hit by someone
    assert_eq!((r.missed_by_some, r.recovered_by_other), (4, 3));
    assert_eq!(r.percent, 75.0);

    let mut twins: Vec<SolverScores> = scores.iter().filter(|s| s.solver_id == "a").cloned().collect();
    twins.extend(twins.clone().into_iter().map(|s| SolverScores { solver_id: "a2".into(), ..s }));
    let twins = score_table(&twins);
    assert_eq!(complementarity_report(&twins, &labels).unwrap().percent, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raising_a_raw_score_never_lowers_its_calibration(seed in any::<u64>(), bump in 0.0f64..5.0, i in 0usize..4) {
        let (scores, labels) = synthetic();
        let only_a: Vec<SolverScores> = scores.iter().filter(|s| s.solver_id == "a").cloned().collect();
        let model = fit_calibration(&score_table(&only_a), &labels, FeatureSet::RawAndSoftmax).unwrap();
        let w = &model.solvers[0].model.weights;
        prop_assume!(w[0] > 0.0 && w[1] > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut raised = logits.clone();
        raised[i] += bump;
        let before = model.calibrate("a", &logits).unwrap();
        let after = model.calibrate("a", &raised).unwrap();
        prop_assert!(after[i] >= before[i] - 1e-15);
        let out = ensemble_predict(&model, &[SolverScores::new("q", "a", logits)]).unwrap();
        prop_assert!(out.scores.iter().all(|s| (0.0..=1.0).contains(s)));
    }
}
