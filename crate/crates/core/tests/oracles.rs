//! Independent oracles: brute-force threshold enumeration, closed-form
//! Gaussian overlap, straight-line network arithmetic and finite differences.

use adcf_core::loss::{self, LossMode, Steepness};
use adcf_core::metrics::{self, ClassPair, CostModel, Label, ScoreSet};
use adcf_core::network::{MlpModel, DEFAULT_LEAKY_SLOPE};
use adcf_core::trainer::{grid_search_scores, CostObjective};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Exhaustive a-DCF minimum: evaluate every pooled score as a threshold (and
/// one below all scores), counting errors directly.
fn brute_force_min(scores: &ScoreSet, cm: &CostModel) -> f64 {
    let mut taus: Vec<f64> = scores.pooled().map(|(_, s)| s).collect();
    let lowest = taus.iter().copied().fold(f64::INFINITY, f64::min);
    taus.push(lowest - 1.0);
    let rate = |k: usize, n: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    taus.iter()
        .map(|&t| {
            let miss = scores.tar().iter().filter(|&&g| g <= t).count();
            let fa_n = scores.non().iter().filter(|&&g| g > t).count();
            let fa_s = scores.spf().iter().filter(|&&g| g > t).count();
            cm.c_miss_tar * cm.pi_tar * rate(miss, scores.tar().len())
                + cm.c_fa_non * cm.pi_non * rate(fa_n, scores.non().len())
                + cm.c_fa_spf * cm.pi_spf * rate(fa_s, scores.spf().len())
        })
        .fold(f64::INFINITY, f64::min)
}

fn random_scores(rng: &mut ChaCha8Rng, max_n: usize, quantize: bool) -> ScoreSet {
    let draw = |rng: &mut ChaCha8Rng| {
        let n = rng.random_range(0..=max_n);
        (0..n)
            .map(|_| {
                let v: f64 = rng.random();
                if quantize {
                    (v * 20.0).round() / 20.0
                } else {
                    v
                }
            })
            .collect::<Vec<_>>()
    };
    let mut s = ScoreSet::new(draw(rng), draw(rng), draw(rng)).unwrap();
    while s.is_empty() {
        s = ScoreSet::new(draw(rng), draw(rng), draw(rng)).unwrap();
    }
    s
}

fn random_cost_model(rng: &mut ChaCha8Rng) -> CostModel {
    let a: f64 = rng.random_range(0.01..1.0);
    let b: f64 = rng.random_range(0.01..1.0);
    let c: f64 = rng.random_range(0.01..1.0);
    let sum = a + b + c;
    let pi_tar = a / sum;
    let pi_non = b / sum;
    CostModel::new(
        rng.random_range(0.1..10.0),
        rng.random_range(0.1..10.0),
        rng.random_range(0.1..20.0),
        pi_tar,
        pi_non,
        1.0 - pi_tar - pi_non,
    )
    .unwrap()
}

#[test]
fn min_a_dcf_matches_exhaustive_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for i in 0..300 {
        // quantized scores exercise ties across classes
        let s = random_scores(&mut rng, 60, i % 2 == 0);
        let cm = random_cost_model(&mut rng);
        let got = metrics::min_a_dcf(&s, &cm).unwrap();
        assert_eq!(got.cost, brute_force_min(&s, &cm), "case {i}");
        let at_tau = metrics::a_dcf(&metrics::hard_error_rates(&s, got.tau).unwrap(), &cm);
        assert_eq!(at_tau, got.cost);
    }
}

#[test]
fn worked_min_a_dcf_by_brute_force() {
    let s = ScoreSet::new(vec![0.9, 0.4], vec![0.3], vec![0.6]).unwrap();
    assert_eq!(brute_force_min(&s, &CostModel::default()), 0.45);
}

#[test]
fn identical_classes_cost_the_cheaper_trivial_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut draw = || (0..1000).map(|_| normal.sample(&mut rng)).collect::<Vec<f64>>();
    let s = ScoreSet::new(draw(), draw(), draw()).unwrap();
    for cm in [
        CostModel::default(),
        CostModel::setting(2).unwrap(),
        CostModel::new(1.0, 1.0, 1.0, 0.4, 0.3, 0.3).unwrap(),
    ] {
        let expected = cm.miss_weight().min(cm.false_alarm_weight());
        let got = metrics::min_a_dcf(&s, &cm).unwrap().cost;
        assert_eq!(got, brute_force_min(&s, &cm));
        assert!((got - expected).abs() < 0.05, "{got} vs {expected}");
    }
}

#[test]
fn a_dcf_curve_never_beats_the_exact_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    for _ in 0..50 {
        let s = random_scores(&mut rng, 40, false);
        let cm = random_cost_model(&mut rng);
        let min = metrics::min_a_dcf(&s, &cm).unwrap().cost;
        let curve = metrics::a_dcf_vs_threshold(&s, &cm, &grid).unwrap();
        assert!(curve.iter().all(|&(_, c)| c >= min));
        let shifted = metrics::a_dcf_vs_threshold(
            &s.shifted(3.0).unwrap(),
            &cm,
            &grid.iter().map(|t| t + 3.0).collect::<Vec<_>>(),
        )
        .unwrap();
        // shifting with a dyadic constant keeps every comparison exact
        for ((_, a), (_, b)) in curve.iter().zip(&shifted) {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn eer_of_unit_gaussians_two_apart() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tar: Vec<f64> = (0..10_000)
        .map(|_| Normal::new(1.0, 1.0).unwrap().sample(&mut rng))
        .collect();
    let non: Vec<f64> = (0..10_000)
        .map(|_| Normal::new(-1.0, 1.0).unwrap().sample(&mut rng))
        .collect();
    let s = ScoreSet::new(tar, non, vec![]).unwrap();
    // Phi(-1)
    let expected = 0.158_655_253_931_457_05;
    let e = metrics::eer(&s, ClassPair::TarNon).unwrap();
    assert!((e - expected).abs() < 0.01, "{e}");
}

#[test]
fn eer_at_chance_for_identical_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut draw = || (0..1000).map(|_| rng.random::<f64>()).collect::<Vec<_>>();
    let s = ScoreSet::new(draw(), draw(), vec![]).unwrap();
    let e = metrics::eer(&s, ClassPair::TarNon).unwrap();
    assert!((e - 0.5).abs() < 0.05, "{e}");
    let det = metrics::det_curve(&s, ClassPair::TarNon).unwrap();
    // indistinguishable classes stay near the p_fa + p_miss = 1 diagonal
    assert!(det.points.iter().all(|p| (p.p_fa + p.p_miss - 1.0).abs() < 0.1));
}

#[test]
fn det_points_match_direct_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..30 {
        let s = random_scores(&mut rng, 30, true);
        for pair in [ClassPair::TarNon, ClassPair::TarSpf] {
            let neg = s.class(pair.negative());
            if s.tar().is_empty() || neg.is_empty() {
                assert!(metrics::det_curve(&s, pair).is_err());
                continue;
            }
            for p in metrics::det_curve(&s, pair).unwrap().points {
                let miss = s.tar().iter().filter(|&&g| g <= p.tau).count() as f64;
                let fa = neg.iter().filter(|&&g| g > p.tau).count() as f64;
                assert_eq!(p.p_miss, miss / s.tar().len() as f64);
                assert_eq!(p.p_fa, fa / neg.len() as f64);
            }
        }
    }
}

#[test]
fn soft_a_dcf_converges_to_hard_a_dcf() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sharp = Steepness::new(1000.0).unwrap();
    for _ in 0..100 {
        let tau: f64 = rng.random_range(0.2..0.8);
        let draw = |rng: &mut ChaCha8Rng| {
            (0..rng.random_range(1..30))
                .map(|_| {
                    let d: f64 = rng.random_range(0.05..1.0);
                    if rng.random::<bool>() {
                        tau + d
                    } else {
                        tau - d
                    }
                })
                .collect::<Vec<_>>()
        };
        let s = ScoreSet::new(draw(&mut rng), draw(&mut rng), draw(&mut rng)).unwrap();
        let cm = random_cost_model(&mut rng);
        let hard = metrics::a_dcf(&metrics::hard_error_rates(&s, tau).unwrap(), &cm);
        let soft = loss::soft_a_dcf(&s, tau, &cm, sharp).unwrap();
        assert!((soft - hard).abs() < 1e-6);
    }
}

#[test]
fn soft_to_hard_gap_shrinks_with_steepness() {
    let s = ScoreSet::new(vec![0.9, 0.62], vec![0.1, 0.45], vec![0.2, 0.57]).unwrap();
    let cm = CostModel::default();
    let tau = 0.51;
    let hard = metrics::a_dcf(&metrics::hard_error_rates(&s, tau).unwrap(), &cm);
    let mut last = f64::INFINITY;
    for alpha in [1.0, 2.0, 5.0, 10.0, 50.0, 100.0, 400.0] {
        let gap = (loss::soft_a_dcf(&s, tau, &cm, Steepness::new(alpha).unwrap()).unwrap() - hard)
            .abs();
        assert!(gap < last);
        last = gap;
    }
    // min |g - tau| = 0.06, alpha * delta = 24 >= 20
    let gap = (loss::soft_a_dcf(&s, tau, &cm, Steepness::new(400.0).unwrap()).unwrap() - hard).abs();
    assert!(gap < 1e-6);
}

fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Relative error with the denominator floored at 1e-6: central differences
/// at h = 1e-6 carry roughly 1e-10 of roundoff, so smaller gradients are in
/// effect held to an absolute 1e-10.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn score_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = 1e-6;
    for _ in 0..40 {
        let n = rng.random_range(3..20);
        let mut labels: Vec<Label> = (0..n).map(|i| Label::ALL[i % 3]).collect();
        labels.rotate_left(rng.random_range(0..n));
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.02..0.98)).collect();
        let tau = rng.random_range(0.1..0.9);
        let cm = random_cost_model(&mut rng);
        let st = Steepness::new(rng.random_range(0.5..8.0)).unwrap();
        for mode in [LossMode::Bce, LossMode::SoftAdcf, LossMode::Combined] {
            let grad = loss::loss_gradient_wrt_scores(mode, &labels, &scores, tau, &cm, st).unwrap();
            for i in 0..n {
                let f = |x: f64| {
                    let mut s = scores.clone();
                    s[i] = x;
                    loss::loss_value(mode, &labels, &s, tau, &cm, st).unwrap()
                };
                let fd = central_difference(f, scores[i], h);
                assert!(rel_err(grad[i], fd) < 1e-5, "{mode:?} {i}: {} vs {fd}", grad[i]);
            }
        }
    }
}

#[test]
fn worked_target_gradient_by_finite_difference() {
    let cm = CostModel::default();
    let one = Steepness::default();
    let f = |g: f64| {
        loss::soft_a_dcf(&ScoreSet::new(vec![g], vec![], vec![]).unwrap(), 0.5, &cm, one).unwrap()
    };
    let fd = central_difference(f, 0.9, 1e-6);
    assert!((fd - (-0.21624)).abs() < 1e-5, "{fd}");
}

/// Straight-line forward pass written independently of the library kernels.
fn reference_forward(model: &MlpModel, x: &[f64]) -> f64 {
    let mut a = x.to_vec();
    let n = model.layers().len();
    for (l, layer) in model.layers().iter().enumerate() {
        let mut z = vec![0.0; layer.out_dim];
        for (o, zo) in z.iter_mut().enumerate() {
            let mut s = layer.biases[o];
            for (i, ai) in a.iter().enumerate() {
                s += layer.weights[o * layer.in_dim + i] * ai;
            }
            *zo = s;
        }
        a = if l + 1 < n {
            z.iter()
                .map(|&v| if v > 0.0 { v } else { model.leaky_slope() * v })
                .collect()
        } else {
            z.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect()
        };
    }
    a[0]
}

#[test]
fn forward_matches_reference_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for seed in 0..10 {
        let model = MlpModel::init(&[13, 9, 5, 1], DEFAULT_LEAKY_SLOPE, seed).unwrap();
        let x: Vec<f64> = (0..13).map(|_| rng.random_range(-3.0..3.0)).collect();
        let got = model.forward(&x).unwrap();
        assert!((got - reference_forward(&model, &x)).abs() < 1e-12);
        assert!(got > 0.0 && got < 1.0);
    }
}

#[test]
fn batch_forward_equals_row_loop_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = MlpModel::init(&[24, 256, 128, 64, 1], DEFAULT_LEAKY_SLOPE, 1).unwrap();
    let rows = 1024;
    let x: Vec<f64> = (0..rows * 24).map(|_| rng.random_range(-2.0..2.0)).collect();
    let batch = model.forward_batch(&x).unwrap();
    for (r, &b) in batch.iter().enumerate() {
        let single = model.forward(&x[r * 24..(r + 1) * 24]).unwrap();
        assert_eq!(single.to_bits(), b.to_bits());
    }
    // permuting rows permutes outputs
    let mut perm: Vec<usize> = (0..rows).collect();
    perm.reverse();
    let px: Vec<f64> = perm.iter().flat_map(|&r| x[r * 24..(r + 1) * 24].to_vec()).collect();
    let pb = model.forward_batch(&px).unwrap();
    for (i, &r) in perm.iter().enumerate() {
        assert_eq!(pb[i], batch[r]);
    }
}

/// Finite-difference check of every network parameter for every loss mode.
fn network_gradient_check(seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [8, 4, 3, 2, 1];
    let model = MlpModel::init(&dims, DEFAULT_LEAKY_SLOPE, seed).unwrap();
    let rows = 12;
    let x: Vec<f64> = (0..rows * 8).map(|_| rng.random_range(-1.5..1.5)).collect();
    let labels: Vec<Label> = (0..rows).map(|i| Label::ALL[i % 3]).collect();
    let cm = CostModel::default();
    let st = Steepness::default();
    let h = 1e-6;
    for mode in [LossMode::Bce, LossMode::SoftAdcf, LossMode::Combined] {
        let loss_of = |m: &MlpModel| {
            let s = m.forward_batch(&x).unwrap();
            loss::loss_value(mode, &labels, &s, 0.5, &cm, st).unwrap()
        };
        let scores = model.forward_batch(&x).unwrap();
        let up = loss::loss_gradient_wrt_scores(mode, &labels, &scores, 0.5, &cm, st).unwrap();
        let grads = model.backward(&x, &up).unwrap();
        for (l, layer) in model.layers().iter().enumerate() {
            let n_w = layer.weights.len();
            for k in 0..n_w + layer.biases.len() {
                let perturbed = |delta: f64| {
                    let mut m = model.clone();
                    let ly = &mut m.layers_mut()[l];
                    if k < n_w {
                        ly.weights[k] += delta;
                    } else {
                        ly.biases[k - n_w] += delta;
                    }
                    loss_of(&m)
                };
                let fd = (perturbed(h) - perturbed(-h)) / (2.0 * h);
                let an = if k < n_w {
                    grads.layers[l].weights[k]
                } else {
                    grads.layers[l].biases[k - n_w]
                };
                assert!(rel_err(an, fd) < 1e-4, "{mode:?} layer {l} param {k}: {an} vs {fd}");
            }
        }
    }
}

#[test]
fn network_gradients_match_finite_differences() {
    for seed in 0..5 {
        network_gradient_check(seed);
    }
}

#[test]
fn grid_search_agrees_with_hard_minimum_interval() {
    let s = ScoreSet::new(vec![0.9, 0.4], vec![0.3], vec![0.6]).unwrap();
    let cm = CostModel::default();
    let grid: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
    let st = Steepness::new(1000.0).unwrap();
    let tau = grid_search_scores(&s, &cm, st, &grid, CostObjective::SoftAdcf).unwrap();
    assert!(tau > 0.6 && tau < 0.9, "{tau}");
    let at = loss::soft_a_dcf(&s, tau, &cm, st).unwrap();
    for &t in &grid {
        assert!(at <= loss::soft_a_dcf(&s, t, &cm, st).unwrap());
    }
}
