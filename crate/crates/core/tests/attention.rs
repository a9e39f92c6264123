use isaaq_core::attention::{attend, butd_attend, gated_tanh, AttentionMode, AttentionParams};
use isaaq_core::params::uniform;
use isaaq_core::solvers::diagram_logits;
use isaaq_core::tensor::Matrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand(rows: usize, cols: usize, scale: f64, seed: u64) -> Matrix {
    uniform(&mut ChaCha8Rng::seed_from_u64(seed), rows, cols, scale)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Straight-line gated tanh: `tanh(x W_t + b_t) * sigmoid(x W_g + b_g)`.
fn gated_tanh_oracle(x: &[f64], p: &AttentionParams) -> Vec<f64> {
    let h = p.tanh_weight.cols();
    (0..h)
        .map(|k| {
            let mut t = p.tanh_bias.get(0, k);
            let mut s = p.gate_bias.get(0, k);
            for (i, xi) in x.iter().enumerate() {
                t += xi * p.tanh_weight.get(i, k);
                s += xi * p.gate_weight.get(i, k);
            }
            t.tanh() * sigmoid(s)
        })
        .collect()
}

/// Straight-line top-down attention weights.
fn alpha_oracle(c: &Matrix, v: &Matrix, p: &AttentionParams) -> Vec<Vec<f64>> {
    (0..c.rows())
        .map(|i| {
            let a: Vec<f64> = (0..v.rows())
                .map(|j| {
                    let x: Vec<f64> = v.row(j).iter().chain(c.row(i)).copied().collect();
                    gated_tanh_oracle(&x, p).iter().enumerate().map(|(k, y)| y * p.score.get(k, 0)).sum()
                })
                .collect();
            let max = a.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = a.iter().map(|x| (x - max).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|x| x / z).collect()
        })
        .collect()
}

#[test]
fn gated_tanh_matches_oracle() {
    for seed in 0..20 {
        let mut p = AttentionParams::init(8, 8, seed).unwrap();
        p.tanh_bias = rand(1, 8, 0.5, seed + 100);
        p.gate_bias = rand(1, 8, 0.5, seed + 200);
        let x = rand(1, 16, 2.0, seed + 300);
        let got = gated_tanh(x.data(), &p).unwrap();
        let want = gated_tanh_oracle(x.data(), &p);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
            assert!(g.abs() < 1.0);
        }
    }
    let p = AttentionParams::init(8, 8, 0).unwrap();
    assert!(gated_tanh(&[0.0; 3], &p).is_err());
}

#[test]
fn attention_matches_oracle() {
    let p = AttentionParams::init(16, 16, 9).unwrap();
    let c = rand(4, 16, 1.0, 1);
    let v = rand(6, 16, 1.0, 2);
    let r = butd_attend(&c, &v, &p).unwrap();
    let want = alpha_oracle(&c, &v, &p);
    for i in 0..4 {
        for j in 0..6 {
            assert!((r.alpha.get(i, j) - want[i][j]).abs() < 1e-12);
        }
        for k in 0..16 {
            let vhat: f64 = (0..6).map(|j| want[i][j] * v.get(j, k)).sum();
            assert!((r.attended.get(i, k) - vhat).abs() < 1e-12);
            assert!((r.fused.get(i, k) - c.get(i, k) * vhat).abs() < 1e-12);
        }
    }
}

#[test]
fn rows_normalised_over_1000_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let p = AttentionParams::init(16, 16, 3).unwrap();
    for k in 0..1000u64 {
        use rand::Rng;
        let n = rng.gen_range(1..6);
        let m = rng.gen_range(1..33);
        let scale = rng.gen_range(0.1..20.0);
        let c = rand(n, 16, scale, 2 * k);
        let v = rand(m, 16, scale, 2 * k + 1);
        let r = butd_attend(&c, &v, &p).unwrap();
        for i in 0..n {
            let row = r.alpha.row(i);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&a| a >= 0.0));
            if m == 1 {
                assert_eq!(row[0], 1.0);
            }
        }
    }
}

#[test]
fn empty_regions_rejected() {
    let p = AttentionParams::init(4, 4, 0).unwrap();
    assert!(butd_attend(&rand(2, 4, 1.0, 0), &Matrix::zeros(0, 4), &p).is_err());
    assert!(butd_attend(&rand(2, 4, 1.0, 0), &rand(2, 3, 1.0, 0), &p).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn region_order_does_not_matter(seed in any::<u64>(), m in 1usize..12, n in 2usize..5) {
        let p = AttentionParams::init(8, 8, seed).unwrap();
        let c = rand(n, 8, 1.0, seed ^ 1);
        let v = rand(m, 8, 1.0, seed ^ 2);
        let mut perm: Vec<usize> = (0..m).collect();
        perm.reverse();
        perm.rotate_left(m / 3);
        let vp = v.select_rows(&perm);
        for mode in [AttentionMode::BottomUp, AttentionMode::TopDown] {
            let a = attend(&c, &v, &p, mode).unwrap();
            let b = attend(&c, &vp, &p, mode).unwrap();
            for (x, y) in a.attended.data().iter().zip(b.attended.data()) {
                prop_assert!((x - y).abs() < 1e-6);
            }
            let la = diagram_logits(&c, &v, &p, mode).unwrap();
            let lb = diagram_logits(&c, &vp, &p, mode).unwrap();
            for (x, y) in la.iter().zip(&lb) {
                prop_assert!((x - y).abs() < 1e-6);
            }
            for i in 0..n {
                for (j, &pj) in perm.iter().enumerate() {
                    prop_assert!((a.alpha.get(i, pj) - b.alpha.get(i, j)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn bottom_up_is_uniform(seed in any::<u64>(), m in 1usize..33) {
        let p = AttentionParams::init(4, 4, seed).unwrap();
        let r = attend(&rand(3, 4, 1.0, seed), &rand(m, 4, 1.0, seed + 1), &p, AttentionMode::BottomUp).unwrap();
        prop_assert!(r.alpha.data().iter().all(|&a| a == 1.0 / m as f64));
    }

    #[test]
    fn text_only_ignores_regions(seed in any::<u64>(), m in 1usize..8) {
        let p = AttentionParams::init(4, 4, seed).unwrap();
        let c = rand(3, 4, 1.0, seed);
        let a = diagram_logits(&c, &rand(m, 4, 1.0, seed + 1), &p, AttentionMode::TextOnly).unwrap();
        let b = diagram_logits(&c, &rand(m + 1, 4, 5.0, seed + 2), &p, AttentionMode::TextOnly).unwrap();
        prop_assert_eq!(a, b);
    }
}
