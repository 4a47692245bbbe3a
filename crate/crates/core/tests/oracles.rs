//! Checks against independently computed reference values.

mod common;

use approx::assert_abs_diff_eq;
use common::{rng, uniform_vec, DiagQuadratic};
use meritfed::aggregators::{gompertz, weights_fedavg_sampled};
use meritfed::clients::{attack_alie, attack_rn, AlieSign, GradientSet};
use meritfed::rng::{stream, Purpose};
use meritfed::simplex::{
    grid_minimum, solve_weights, uniform_weights, weight_gradient_exact, Estimator, LossOracle,
    MdConfig, SimplexWeights, WeightObjective,
};
use meritfed::tasks::{
    mean_grad, mean_loss, mixture_stationary_point, sample_gaussian_shard, softmax_task_generate,
    Shard, SoftmaxTask, ValidationMode, ValidationOracle, TaskModel, TARGET_CLASSES,
};
use rand::Rng;
use rand_distr::StandardNormal;

fn md(step_size: f64, steps: usize) -> MdConfig {
    MdConfig { step_size, steps, warm_start: false, ..MdConfig::default() }
}

#[test]
fn two_client_line_instance_matches_grid() {
    // phi(w) = (1.5 - w1)^2 on the segment; grid minimizer w = (1, 0).
    let grads = GradientSet::from_rows(0, vec![vec![2.0], vec![-2.0]]).unwrap();
    let oracle = DiagQuadratic::isotropic(vec![0.0]);
    let obj = WeightObjective::new(&[1.0], &grads, 0.25, &oracle).unwrap();

    let (w_grid, phi_grid) = grid_minimum(2, 1000, |w| obj.value(w, None)).unwrap();
    assert_abs_diff_eq!(w_grid.as_slice()[0], 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(phi_grid, 0.25, epsilon = 1e-12);

    let init = uniform_weights(2).unwrap();
    let sol = solve_weights(&obj, &md(1.0, 200), &init, &mut stream(1, Purpose::Test, 0, 0)).unwrap();
    assert!(sol.weights.as_slice()[0] >= 0.99, "{:?}", sol.weights);
    assert!(sol.value <= 0.2501, "{}", sol.value);
}

#[test]
fn chain_rule_gradient_matches_finite_differences() {
    let mut r = rng(11);
    let (d, n) = (3, 4);
    let x = uniform_vec(&mut r, d, -1.0, 1.0);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| uniform_vec(&mut r, d, -2.0, 2.0)).collect();
    let grads = GradientSet::from_rows(0, rows).unwrap();
    let oracle = DiagQuadratic { scale: uniform_vec(&mut r, d, 0.5, 2.0), center: uniform_vec(&mut r, d, -1.0, 1.0) };
    let obj = WeightObjective::new(&x, &grads, 0.3, &oracle).unwrap();
    let w = SimplexWeights::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let exact = weight_gradient_exact(&x, &grads, 0.3, w.as_slice(), |y| Ok(oracle.eval(y, None)?.1)).unwrap();
    let h = 1e-6;
    for i in 0..n {
        let mut plus = w.as_slice().to_vec();
        let mut minus = plus.clone();
        plus[i] += h;
        minus[i] -= h;
        let fd = (obj.value(&plus, None).unwrap() - obj.value(&minus, None).unwrap()) / (2.0 * h);
        assert!((fd - exact[i]).abs() <= 1e-5 * exact[i].abs().max(1e-8), "{i}: {fd} vs {}", exact[i]);
    }
}

#[test]
fn chain_rule_degenerate_cases() {
    let zero = GradientSet::from_rows(0, vec![vec![0.0; 3]; 4]).unwrap();
    let oracle = DiagQuadratic::isotropic(vec![1.0, 2.0, 3.0]);
    let g = weight_gradient_exact(&[0.5; 3], &zero, 0.1, &[0.25; 4], |y| Ok(oracle.eval(y, None)?.1)).unwrap();
    assert_eq!(g, vec![0.0; 4]);

    // n = 1: the derivative is -gamma ||grad f(x - gamma g)||^2 when g is that gradient.
    let x = [2.0, -1.0];
    let gamma = 0.1;
    // Solve g = 2 (x - gamma g) for the isotropic loss at 0: g = 2x / (1 + 2 gamma).
    let g1: Vec<f64> = x.iter().map(|v| 2.0 * v / (1.0 + 2.0 * gamma)).collect();
    let single = GradientSet::from_rows(0, vec![g1.clone()]).unwrap();
    let oracle = DiagQuadratic::isotropic(vec![0.0, 0.0]);
    let got = weight_gradient_exact(&x, &single, gamma, &[1.0], |y| Ok(oracle.eval(y, None)?.1)).unwrap();
    let expected = -gamma * g1.iter().map(|v| v * v).sum::<f64>();
    assert_abs_diff_eq!(got[0], expected, epsilon = 1e-12);
}

#[test]
fn identical_gradients_keep_uniform_weights() {
    let grads = GradientSet::from_rows(0, vec![vec![0.3, -0.7]; 5]).unwrap();
    let oracle = DiagQuadratic::isotropic(vec![0.0, 0.0]);
    let obj = WeightObjective::new(&[1.0, 1.0], &grads, 0.1, &oracle).unwrap();
    // The exact weight gradient is then a constant vector. (Zeroth-order
    // probes leave the simplex, so its estimates are not shift-only.)
    let init = uniform_weights(5).unwrap();
    let sol = solve_weights(&obj, &md(5.0, 30), &init, &mut stream(3, Purpose::Test, 0, 0)).unwrap();
    for v in sol.weights.as_slice() {
        assert_abs_diff_eq!(*v, 0.2, epsilon = 1e-9);
    }
}

#[test]
fn duplicated_validation_set_leaves_weights_unchanged() {
    let mut r = stream(5, Purpose::Test, 0, 0);
    let data = sample_gaussian_shard(&[0.0; 4], 50, 1, 0, &mut r);
    let mut doubled = data.clone();
    doubled.extend_from(&data).unwrap();
    let model = TaskModel::Mean { dim: 4 };
    let a = ValidationOracle::from_samples(model.clone(), data, ValidationMode::ExtraValidation).unwrap();
    let b = ValidationOracle::from_samples(model, doubled, ValidationMode::ExtraValidation).unwrap();
    let mut g = rng(6);
    let rows: Vec<Vec<f64>> = (0..6).map(|_| uniform_vec(&mut g, 4, -2.0, 2.0)).collect();
    let grads = GradientSet::from_rows(0, rows).unwrap();
    let init = uniform_weights(6).unwrap();
    let solve = |o: &ValidationOracle| {
        let obj = WeightObjective::new(&[0.5; 4], &grads, 0.1, o).unwrap();
        solve_weights(&obj, &md(3.0, 50), &init, &mut stream(1, Purpose::Solver, 0, 0)).unwrap()
    };
    let (wa, wb) = (solve(&a), solve(&b));
    for (x, y) in wa.weights.as_slice().iter().zip(wb.weights.as_slice()) {
        assert_abs_diff_eq!(*x, *y, epsilon = 1e-12);
    }
}

#[test]
fn mean_loss_expectation_is_dimension() {
    let mut r = stream(7, Purpose::Test, 0, 0);
    let x = [0.0; 10];
    let m = 1_000_000;
    let total: f64 = (0..m)
        .map(|_| {
            let xi: Vec<f64> = (0..10).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            mean_loss(&x, &xi).unwrap()
        })
        .sum();
    assert!((total / m as f64 - 10.0).abs() <= 0.05);
}

#[test]
fn mean_gradient_is_unbiased_over_fresh_batches() {
    let x: Vec<f64> = (0..10).map(|i| 0.1 * i as f64 - 0.4).collect();
    let draws = 100_000;
    let mut acc = [0.0; 10];
    for t in 0..draws {
        let mut r = stream(8, Purpose::Batch, 0, t);
        let batch = sample_gaussian_shard(&[0.0; 10], 100, 1, 0, &mut r);
        let g = mean_grad(&x, batch.rows()).unwrap();
        for (a, v) in acc.iter_mut().zip(g) {
            *a += v;
        }
    }
    for (a, xi) in acc.iter().zip(&x) {
        assert!((a / draws as f64 - 2.0 * xi).abs() <= 1e-2);
    }
}

#[test]
fn mixture_point_is_the_gradient_descent_limit() {
    let e = meritfed::tasks::mixture_direction(10, 3);
    let mu = vec![0.1; 10];
    let zero = vec![0.0; 10];
    let xbar = mixture_stationary_point(&[(5, &zero), (95, &mu), (50, &e)]).unwrap();
    // Plain GD on (1/150) sum_i n_i ||x - c_i||^2.
    let mut x = [1.0; 10];
    for _ in 0..10_000 {
        for j in 0..10 {
            let g = 2.0 * (5.0 * x[j] + 95.0 * (x[j] - mu[j]) + 50.0 * (x[j] - e[j])) / 150.0;
            x[j] -= 0.1 * g;
        }
    }
    for (a, b) in x.iter().zip(&xbar) {
        assert!((a - b).abs() <= 1e-10);
    }
    let closed: Vec<f64> = (0..10).map(|j| (95.0 * 0.1 + 50.0 * e[j]) / 150.0).collect();
    for (a, b) in closed.iter().zip(&xbar) {
        assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
    }
}

#[test]
fn softmax_gradient_matches_finite_differences() {
    // The generator needs >= 7 classes; the loss itself works for any layout.
    let task = SoftmaxTask { features: 4, classes: 3, separation: 4.0 };
    let mut r = rng(9);
    let features = uniform_vec(&mut r, 4 * 6, -2.0, 2.0);
    let shard = Shard { dim: 4, features, labels: Some(vec![0, 1, 2, 2, 1, 0]), group: 1, owner: 0 };
    let theta = uniform_vec(&mut r, task.model_dim(), -0.5, 0.5);
    let (_, grad) = task.loss_grad(&theta, &shard, None).unwrap();
    let h = 1e-5;
    for k in 0..theta.len() {
        let mut p = theta.clone();
        let mut m = theta.clone();
        p[k] += h;
        m[k] -= h;
        let fd = (task.loss_grad(&p, &shard, None).unwrap().0 - task.loss_grad(&m, &shard, None).unwrap().0)
            / (2.0 * h);
        assert!((fd - grad[k]).abs() <= 1e-6 * grad[k].abs().max(1e-3), "{k}: {fd} vs {}", grad[k]);
    }
}

#[test]
fn softmax_group_label_composition() {
    let task = SoftmaxTask::new(10, 10).unwrap();
    let mut target_counts = Vec::new();
    for seed in 0..3 {
        let data = softmax_task_generate(&task, [1, 4, 2], 0.5, 1000, 10, seed).unwrap();
        for s in &data.shards[1..5] {
            let labels = s.labels.as_ref().unwrap();
            target_counts.push(labels.iter().filter(|l| TARGET_CLASSES.contains(l)).count() as f64);
            assert!(labels.iter().all(|&l| l < 6));
        }
        for s in &data.shards[5..] {
            assert!(s.labels.as_ref().unwrap().iter().all(|&l| l >= 6));
        }
        assert!(data.shards[0].labels.as_ref().unwrap().iter().all(|l| TARGET_CLASSES.contains(l)));
    }
    let mean = target_counts.iter().sum::<f64>() / target_counts.len() as f64;
    assert!((mean - 500.0).abs() <= 50.0, "{mean}");

    let data = softmax_task_generate(&task, [1, 3, 0], 1.0, 200, 10, 0).unwrap();
    for s in &data.shards {
        assert!(s.labels.as_ref().unwrap().iter().all(|l| TARGET_CLASSES.contains(l)));
    }
}

#[test]
fn validation_minibatch_gradient_is_unbiased() {
    let mut r = stream(12, Purpose::Test, 0, 0);
    let data = sample_gaussian_shard(&[0.0; 10], 200, 1, 0, &mut r);
    let oracle = ValidationOracle::from_samples(TaskModel::Mean { dim: 10 }, data, ValidationMode::ExtraValidation).unwrap();
    let x = [0.3; 10];
    let (_, full) = oracle.validation_eval(&x, 0, &mut r).unwrap();
    let draws = 10_000;
    let mut acc = [0.0; 10];
    for _ in 0..draws {
        let (_, g) = oracle.validation_eval(&x, 20, &mut r).unwrap();
        for (a, v) in acc.iter_mut().zip(g) {
            *a += v;
        }
    }
    for (a, f) in acc.iter().zip(&full) {
        assert!((a / draws as f64 - f).abs() <= 1e-2);
    }
}

#[test]
fn alie_matches_independent_statistics() {
    // Two-pass sample statistics, computed here without the library.
    let honest = [vec![0.0], vec![2.0]];
    let mean = (0.0 + 2.0) / 2.0;
    let var = ((0.0f64 - mean).powi(2) + (2.0f64 - mean).powi(2)) / 1.0;
    let expected = mean - var.sqrt();
    let refs: Vec<&[f64]> = honest.iter().map(Vec::as_slice).collect();
    let got = attack_alie(&refs, 1.0, AlieSign::Minus).unwrap();
    assert_abs_diff_eq!(got[0], expected, epsilon = 1e-15);
    assert_abs_diff_eq!(got[0], -0.41421356237309515, epsilon = 1e-12);
}

#[test]
fn random_noise_moments() {
    let g = [1.0, -2.0, 0.5];
    let sigma = 1.0;
    let draws = 100_000;
    let mut r = stream(13, Purpose::Attack, 0, 0);
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    for _ in 0..draws {
        let out = attack_rn(&g, sigma, &mut r);
        for j in 0..3 {
            let z = out[j] - g[j];
            sum[j] += z;
            sq[j] += z * z;
        }
    }
    let m = draws as f64;
    let se = sigma / m.sqrt();
    for j in 0..3 {
        assert!((sum[j] / m).abs() <= 3.0 * se);
        let var = sq[j] / m - (sum[j] / m).powi(2);
        assert!((var - sigma * sigma).abs() <= 0.05 * sigma * sigma);
    }
}

#[test]
fn fedavg_inclusion_frequency() {
    let (n, k, rounds) = (10usize, 3usize, 100_000u64);
    let mut hits = vec![0u64; n];
    for t in 0..rounds {
        let w = weights_fedavg_sampled(n, k, &mut stream(14, Purpose::Sampling, 0, t)).unwrap();
        for (h, v) in hits.iter_mut().zip(w.as_slice()) {
            if *v > 0.0 {
                *h += 1;
            }
        }
    }
    let p = k as f64 / n as f64;
    let se = (p * (1.0 - p) / rounds as f64).sqrt();
    for h in hits {
        assert!((h as f64 / rounds as f64 - p).abs() <= 3.0 * se);
    }
}

#[test]
fn gompertz_reference_values() {
    // 5 (1 - e^{-1}) evaluated independently.
    assert_abs_diff_eq!(gompertz(0.0, 5.0), 5.0 * (1.0 - (-1.0f64).exp()), epsilon = 1e-15);
    let g_pi = gompertz(std::f64::consts::PI, 5.0);
    assert!((g_pi - 7.55e-7).abs() < 1e-8, "{g_pi}");
    let ratio = (gompertz(0.0, 5.0) - g_pi).exp();
    assert!((ratio - 23.59).abs() < 0.01, "{ratio}");
}

#[test]
fn smoothness_and_pl_identities_hold() {
    // f(x) = ||x - c||^2 + d: L = 2 and PL constant 2 are both tight.
    let mut r = rng(15);
    let c = uniform_vec(&mut r, 10, -1.0, 1.0);
    let f = |x: &[f64]| x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>() + 10.0;
    let grad = |x: &[f64]| x.iter().zip(&c).map(|(a, b)| 2.0 * (a - b)).collect::<Vec<_>>();
    for _ in 0..100 {
        let x = uniform_vec(&mut r, 10, -3.0, 3.0);
        let y = uniform_vec(&mut r, 10, -3.0, 3.0);
        let (gx, gy) = (grad(&x), grad(&y));
        let lhs: f64 = gx.iter().zip(&gy).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let dist: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!((lhs - 2.0 * dist).abs() <= 1e-12 * (1.0 + lhs));
        let g2: f64 = gx.iter().map(|v| v * v).sum();
        assert!((g2 - 2.0 * 2.0 * (f(&x) - 10.0)).abs() <= 1e-12 * (1.0 + g2));
    }
}

#[test]
fn honest_gradient_variance_matches_closed_form() {
    let (d, b) = (10usize, 100usize);
    let x = vec![0.2; d];
    let draws = 100_000u64;
    let mut acc = 0.0;
    for t in 0..draws {
        let batch = sample_gaussian_shard(&vec![0.0; d], b, 1, 0, &mut stream(16, Purpose::Batch, 0, t));
        let g = mean_grad(&x, batch.rows()).unwrap();
        acc += g.iter().zip(&x).map(|(gi, xi)| (gi - 2.0 * xi).powi(2)).sum::<f64>();
    }
    let sigma_sq = 4.0 * d as f64 / b as f64;
    assert!((acc / draws as f64 - sigma_sq).abs() <= 0.05 * sigma_sq);
}

#[test]
fn zeroth_order_solver_reaches_grid_minimum_on_small_instance() {
    let grads = GradientSet::from_rows(0, vec![vec![2.0], vec![-2.0]]).unwrap();
    let oracle = DiagQuadratic::isotropic(vec![0.0]);
    let obj = WeightObjective::new(&[1.0], &grads, 0.25, &oracle).unwrap();
    let cfg = MdConfig { estimator: Estimator::ZerothOrder, ..md(1.0, 400) };
    let sol = solve_weights(&obj, &cfg, &uniform_weights(2).unwrap(), &mut stream(2, Purpose::Solver, 0, 0)).unwrap();
    assert!(sol.value <= 0.2501, "{}", sol.value);
}
