//! Logit-normal GLMM checks. The oracles are plain transcriptions of the
//! density, brute-force grid integration, and prior Monte Carlo, none of which
//! share code with the quadrature or the sampler under test.

#![allow(clippy::needless_range_loop)]

use mcem::glmm::*;
use mcem::numeric::batch_means_se;
use mcem::{rng_stream, Draws, Model, Sampling};
use rand::Rng;

fn benchmark_data() -> PanelDataset {
    PanelDataset::simulate(10, 15, &BENCHMARK_MLE, &mut rng_stream(3, 0)).unwrap()
}

fn naive_complete_loglik(beta: f64, s2: f64, u: &[f64], data: &PanelDataset) -> f64 {
    let mut l = 0.0;
    for i in 0..data.q() {
        l += -0.5 * s2.ln() - u[i] * u[i] / (2.0 * s2);
        for (&x, &y) in data.x()[i].iter().zip(&data.y()[i]) {
            let eta = beta * x + u[i];
            let p = 1.0 / (1.0 + (-eta).exp());
            l += if y == 1 { p.ln() } else { (1.0 - p).ln() };
        }
    }
    l
}

/// Unnormalized log posterior of one group on a uniform grid, by direct
/// transcription of `f(y|u) phi(u)`.
fn grid_posterior(data: &PanelDataset, i: usize, beta: f64, s2: f64) -> (Vec<f64>, Vec<f64>) {
    let half = 12.0 * s2.sqrt() + 10.0;
    let n = 200_001;
    let h = 2.0 * half / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|k| -half + k as f64 * h).collect();
    let logw: Vec<f64> = grid
        .iter()
        .map(|&v| {
            let mut l = -v * v / (2.0 * s2);
            for (&x, &y) in data.x()[i].iter().zip(&data.y()[i]) {
                let p = 1.0 / (1.0 + (-(beta * x + v)).exp());
                l += if y == 1 { p.ln() } else { (1.0 - p).ln() };
            }
            l
        })
        .collect();
    let peak = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - peak).exp()).collect();
    (grid, w)
}

fn grid_moments(grid: &[f64], w: &[f64]) -> (f64, f64) {
    let z: f64 = w.iter().sum();
    let mean = grid.iter().zip(w).map(|(v, w)| v * w).sum::<f64>() / z;
    let var = grid
        .iter()
        .zip(w)
        .map(|(v, w)| (v - mean).powi(2) * w)
        .sum::<f64>()
        / z;
    (mean, var)
}

fn grid_cdf(w: &[f64]) -> Vec<f64> {
    let z: f64 = w.iter().sum();
    let mut acc = 0.0;
    w.iter()
        .map(|wk| {
            acc += wk / z;
            acc
        })
        .collect()
}

fn inverse_cdf(grid: &[f64], cdf: &[f64], p: f64) -> f64 {
    let k = cdf.partition_point(|&c| c < p);
    grid[k.min(grid.len() - 1)]
}

#[test]
fn complete_loglik_matches_naive_transcription() {
    let data = benchmark_data();
    let mut rng = rng_stream(1, 0);
    for _ in 0..50 {
        let beta = rng.random_range(-8.0..8.0);
        let s2 = rng.random_range(0.1..6.0);
        let u: Vec<f64> = (0..10).map(|_| rng.random_range(-4.0..4.0)).collect();
        let th = GlmmTheta::new(beta, s2).unwrap();
        let a = glmm_complete_loglik(&th, &u, &data);
        // the naive form keeps y*u terms, which do not depend on theta
        let b = naive_complete_loglik(beta, s2, &u, &data);
        let offset: f64 = (0..10)
            .map(|i| u[i] * data.y()[i].iter().map(|&y| y as f64).sum::<f64>())
            .sum();
        assert!((a + offset - b).abs() < 1e-9 * b.abs().max(1.0), "{a} {b}");
    }
}

#[test]
fn target_differs_from_complete_loglik_by_a_constant_in_u() {
    let data = benchmark_data();
    let th = BENCHMARK_MLE;
    let mut rng = rng_stream(2, 0);
    let mut diffs = Vec::new();
    for _ in 0..30 {
        let u: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
        diffs.push(
            glmm_target_logdensity(&u, &th, &data)
                - naive_complete_loglik(th.beta, th.sigma2, &u, &data),
        );
    }
    assert!(diffs.iter().all(|d| (d - diffs[0]).abs() < 1e-9));
}

#[test]
fn target_is_separable_across_groups() {
    let data = benchmark_data();
    let th = BENCHMARK_MLE;
    let mut rng = rng_stream(3, 0);
    let u: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
    let base = glmm_target_logdensity(&u, &th, &data);
    for i in 0..10 {
        let mut v = u.clone();
        v[i] += 0.7;
        let change = glmm_target_logdensity(&v, &th, &data) - base;
        let single = group_target_logdensity(&data, i, &th, v[i])
            - group_target_logdensity(&data, i, &th, u[i]);
        assert!((change - single).abs() < 1e-10);
    }
}

#[test]
fn acceptance_ratio_satisfies_detailed_balance() {
    // pi(a) q(b) alpha(a->b) = pi(b) q(a) alpha(b->a) with q the N(0, s2) proposal
    let data = benchmark_data();
    let th = BENCHMARK_MLE;
    let log_q = |v: f64| -v * v / (2.0 * th.sigma2);
    let mut rng = rng_stream(4, 0);
    for _ in 0..200 {
        let i = rng.random_range(0..10);
        let a = rng.random_range(-4.0..4.0);
        let b = rng.random_range(-4.0..4.0);
        let r_ab = mh_log_accept_ratio(&data, i, th.beta, a, b).min(0.0);
        let r_ba = mh_log_accept_ratio(&data, i, th.beta, b, a).min(0.0);
        let lhs = group_target_logdensity(&data, i, &th, a) + log_q(b) + r_ab;
        let rhs = group_target_logdensity(&data, i, &th, b) + log_q(a) + r_ba;
        assert!((lhs - rhs).abs() < 1e-9);
    }
}

#[test]
fn chain_matches_posterior_mean_on_a_single_observation() {
    let data = PanelDataset::new(vec![vec![0.0]], vec![vec![1]]).unwrap();
    let th = GlmmTheta::new(0.0, 1.0).unwrap();
    let mean = glmm_group_quadrature(&th, &data, 0, 20).unwrap().mean;
    let (grid, w) = grid_posterior(&data, 0, 0.0, 1.0);
    assert!((grid_moments(&grid, &w).0 - mean).abs() < 1e-8);
    let draws = mh_chain(&th, &data, 1_000_000, 500, &[0.0], &mut rng_stream(5, 0)).unwrap();
    let col: Vec<f64> = draws.rows().map(|r| r[0]).collect();
    let est = col.iter().sum::<f64>() / col.len() as f64;
    let se = batch_means_se(&col);
    assert!((est - mean).abs() < 3.0 * se, "{est} vs {mean} (se {se})");
}

#[test]
fn chain_deciles_match_grid_cdf() {
    let data = PanelDataset::new(vec![vec![0.5, 1.0]], vec![vec![0, 1]]).unwrap();
    let th = GlmmTheta::new(1.5, 2.0).unwrap();
    let (grid, w) = grid_posterior(&data, 0, 1.5, 2.0);
    let cdf = grid_cdf(&w);
    let draws = mh_chain(&th, &data, 1_000_000, 500, &[0.0], &mut rng_stream(6, 0)).unwrap();
    let mut col: Vec<f64> = draws.rows().map(|r| r[0]).collect();
    col.sort_by(f64::total_cmp);
    for d in 1..10 {
        let p = d as f64 / 10.0;
        let q_hat = col[(p * col.len() as f64) as usize];
        let k = grid.partition_point(|&g| g < q_hat);
        assert!((cdf[k.min(cdf.len() - 1)] - p).abs() < 0.01, "decile {d}");
    }
}

#[test]
fn quadrature_is_stable_and_matches_grid_integration() {
    let data = benchmark_data();
    let th = BENCHMARK_MLE;
    let l20 = glmm_loglik_quadrature(&th, &data, 20).unwrap();
    let l40 = glmm_loglik_quadrature(&th, &data, 40).unwrap();
    assert!((l20 - l40).abs() < 1e-8, "{l20} {l40}");
    for i in 0..data.q() {
        let g = glmm_group_quadrature(&th, &data, i, 20).unwrap();
        let (grid, w) = grid_posterior(&data, i, th.beta, th.sigma2);
        let (mean, var) = grid_moments(&grid, &w);
        assert!((g.mean - mean).abs() < 1e-6, "group {i}");
        assert!((g.var - var).abs() < 1e-6, "group {i}");
    }
    assert!(glmm_loglik_quadrature(&th, &data, 9).is_err());
}

#[test]
fn quadrature_matches_prior_monte_carlo() {
    let data = PanelDataset::simulate(3, 15, &BENCHMARK_MLE, &mut rng_stream(7, 0)).unwrap();
    let th = BENCHMARK_MLE;
    let m = 10_000_000usize;
    let sd = th.sigma2.sqrt();
    for i in 0..data.q() {
        let mut rng = rng_stream(7, 1 + i as u64);
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..m {
            let v: f64 = sd * rng.sample::<f64, _>(rand_distr::StandardNormal);
            let f = group_kernel(&data, i, th.beta, v).exp()
                * data.x()[i]
                    .iter()
                    .zip(&data.y()[i])
                    .map(|(&x, &y)| (th.beta * x * y as f64).exp())
                    .product::<f64>();
            sum += f;
            sum2 += f * f;
        }
        let mean = sum / m as f64;
        let se = ((sum2 / m as f64 - mean * mean) / m as f64).sqrt();
        let exact = glmm_group_quadrature(&th, &data, i, 20)
            .unwrap()
            .log_integral
            .exp();
        assert!(
            (mean - exact).abs() < 4.0 * se,
            "group {i}: {mean} vs {exact} (se {se})"
        );
    }
}

/// Exact EM update by grid integration: sigma2 from E[u^2], beta by bisection
/// on the expected score.
fn grid_em_update(data: &PanelDataset, th: &GlmmTheta) -> (f64, f64) {
    let posts: Vec<(Vec<f64>, Vec<f64>)> = (0..data.q())
        .map(|i| {
            let (g, w) = grid_posterior(data, i, th.beta, th.sigma2);
            let z: f64 = w.iter().sum();
            (g, w.into_iter().map(|v| v / z).collect())
        })
        .collect();
    let s2 = posts
        .iter()
        .map(|(g, w)| g.iter().zip(w).map(|(v, w)| v * v * w).sum::<f64>())
        .sum::<f64>()
        / data.q() as f64;
    let score = |b: f64| -> f64 {
        let mut s = 0.0;
        for (i, (g, w)) in posts.iter().enumerate() {
            for (&x, &y) in data.x()[i].iter().zip(&data.y()[i]) {
                // thin the grid for speed; the posterior is smooth
                let e: f64 = g
                    .iter()
                    .zip(w)
                    .step_by(10)
                    .map(|(v, w)| w * 10.0 / (1.0 + (-(b * x + v)).exp()))
                    .sum();
                s += x * (y as f64 - e);
            }
        }
        s
    };
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if score(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi), s2)
}

#[test]
fn mstep_on_quantile_draws_matches_exact_em_update() {
    let data = benchmark_data();
    let th = GlmmTheta::new(4.0, 1.0).unwrap();
    let m = 4000;
    let cdfs: Vec<(Vec<f64>, Vec<f64>)> = (0..data.q())
        .map(|i| {
            let (g, w) = grid_posterior(&data, i, th.beta, th.sigma2);
            let c = grid_cdf(&w);
            (g, c)
        })
        .collect();
    let mut values = Vec::with_capacity(m * data.q());
    for k in 0..m {
        let p = (k as f64 + 0.5) / m as f64;
        for (g, c) in &cdfs {
            values.push(inverse_cdf(g, c, p));
        }
    }
    let draws = Draws::new(m, data.q(), values, Sampling::Iid).unwrap();
    let mc = glmm_mcem_mstep(&draws, &data, th.beta).unwrap();
    let (beta, s2) = grid_em_update(&data, &th);
    assert!((mc.beta - beta).abs() < 2e-3, "{} vs {beta}", mc.beta);
    assert!((mc.sigma2 - s2).abs() < 2e-3, "{} vs {s2}", mc.sigma2);
}

#[test]
fn complete_loglik_gradient_matches_finite_differences() {
    let data = benchmark_data();
    let mut rng = rng_stream(8, 0);
    for _ in 0..20 {
        let th = GlmmTheta::new(rng.random_range(-5.0..8.0), rng.random_range(0.2..5.0)).unwrap();
        let u: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
        let g = glmm_complete_loglik_grad(&th, &u, &data);
        let h = 1e-6;
        let f = |b: f64, s: f64| glmm_complete_loglik(&GlmmTheta::new(b, s).unwrap(), &u, &data);
        let fd_b = (f(th.beta + h, th.sigma2) - f(th.beta - h, th.sigma2)) / (2.0 * h);
        let fd_s = (f(th.beta, th.sigma2 + h) - f(th.beta, th.sigma2 - h)) / (2.0 * h);
        assert!((fd_b - g[0]).abs() < 1e-5 * g[0].abs().max(1.0));
        assert!((fd_s - g[1]).abs() < 1e-5 * g[1].abs().max(1.0));
    }
}

#[test]
fn direct_mle_is_a_stationary_point() {
    let data = benchmark_data();
    let mle = glmm_direct_mle(&data).unwrap();
    assert!(
        (mle.beta - 5.6318).abs() < 1e-3 && (mle.sigma2 - 1.9594).abs() < 1e-3,
        "{mle:?}"
    );
    let l =
        |b: f64, s: f64| glmm_loglik_quadrature(&GlmmTheta::new(b, s).unwrap(), &data, 30).unwrap();
    let h = 1e-4;
    let gb = (l(mle.beta + h, mle.sigma2) - l(mle.beta - h, mle.sigma2)) / (2.0 * h);
    let gs = (l(mle.beta, mle.sigma2 + h) - l(mle.beta, mle.sigma2 - h)) / (2.0 * h);
    assert!(gb.abs() < 1e-3 && gs.abs() < 1e-3, "{gb} {gs}");
}

#[test]
fn flipping_responses_negates_beta() {
    let data = benchmark_data();
    let a = glmm_direct_mle(&data).unwrap();
    let b = glmm_direct_mle(&data.flipped()).unwrap();
    assert!((a.beta + b.beta).abs() < 1e-3);
    assert!((a.sigma2 - b.sigma2).abs() < 1e-3);
}

#[test]
fn one_sided_data_is_rejected() {
    let data = PanelDataset::new(vec![vec![0.5, 1.0]; 3], vec![vec![1, 1]; 3]).unwrap();
    assert!(glmm_direct_mle(&data).is_err());
    let draws = Draws::new(2, 3, vec![0.1; 6], Sampling::Iid).unwrap();
    assert!(glmm_mcem_mstep(&draws, &data, 0.0).is_err());
}

#[test]
fn large_sample_mcem_step_stays_at_the_mle() {
    use rayon::prelude::*;
    let data = benchmark_data();
    let mle = GlmmTheta::new(5.6318, 1.9594).unwrap();
    let model = GlmmModel::new(data);
    let steps: Vec<GlmmTheta> = (0..10u64)
        .into_par_iter()
        .map(|s| {
            let t = model
                .mcem_step(&mle.to_theta(), 100_000, &mut rng_stream(s, 9))
                .unwrap();
            GlmmTheta::from_theta(&t).unwrap()
        })
        .collect();
    for t in steps {
        assert!(
            (t.beta - mle.beta).abs() < 0.15 && (t.sigma2 - mle.sigma2).abs() < 0.2,
            "{t:?}"
        );
    }
}

#[test]
fn simulation_is_seed_deterministic() {
    let a = benchmark_data();
    let b = benchmark_data();
    assert_eq!(a.y(), b.y());
    assert_eq!(a.total(), 150);
}

#[test]
fn small_closed_form_cases() {
    // complete loglik at u = 0, beta = 0, sigma2 = 1 is -N log 2
    let data = benchmark_data();
    let th = GlmmTheta::new(0.0, 1.0).unwrap();
    let l = glmm_complete_loglik(&th, &[0.0; 10], &data);
    assert!((l + 150.0 * std::f64::consts::LN_2).abs() < 1e-12);

    // proposing the current value is always accepted
    assert_eq!(mh_log_accept_ratio(&data, 3, 6.0, 0.7, 0.7), 0.0);

    // sigma2 is the mean square of the draws
    let one = PanelDataset::new(vec![vec![1.0, 1.0]], vec![vec![1, 0]]).unwrap();
    let d = Draws::new(2, 1, vec![1.0, -1.0], Sampling::Iid).unwrap();
    assert!((glmm_mcem_mstep(&d, &one, 0.3).unwrap().sigma2 - 1.0).abs() < 1e-15);

    // 1 = 2 logistic(beta) at u = 0 gives beta = 0; zero draws are degenerate
    let zeros = Draws::new(2, 1, vec![0.0, 0.0], Sampling::Iid).unwrap();
    assert!(glmm_mcem_mstep(&zeros, &one, 0.3).is_err());
    let tiny = Draws::new(2, 1, vec![1e-12, -1e-12], Sampling::Iid).unwrap();
    assert!(glmm_mcem_mstep(&tiny, &one, 0.3).unwrap().beta.abs() < 1e-9);

    // a collapsing random effect leaves log(1/2) for one success at beta = 0
    let single = PanelDataset::new(vec![vec![1.0]], vec![vec![1]]).unwrap();
    let l = glmm_loglik_quadrature(&GlmmTheta::new(0.0, 1e-12).unwrap(), &single, 20).unwrap();
    assert!((l - 0.5f64.ln()).abs() < 1e-6, "{l}");
}

#[test]
fn chains_are_seed_deterministic() {
    let data = benchmark_data();
    let a = mh_chain(
        &BENCHMARK_MLE,
        &data,
        200,
        10,
        &[0.0; 10],
        &mut rng_stream(12, 0),
    )
    .unwrap();
    let b = mh_chain(
        &BENCHMARK_MLE,
        &data,
        200,
        10,
        &[0.0; 10],
        &mut rng_stream(12, 0),
    )
    .unwrap();
    assert_eq!(a, b);
}

#[test]
fn direct_mle_beats_perturbed_points() {
    let data = benchmark_data();
    let mle = glmm_direct_mle(&data).unwrap();
    let best = glmm_loglik_quadrature(&mle, &data, 30).unwrap();
    let mut rng = rng_stream(13, 0);
    for _ in 0..50 {
        let th = GlmmTheta::new(
            mle.beta + rng.random_range(-0.5..0.5),
            mle.sigma2 * rng.random_range(0.7..1.4),
        )
        .unwrap();
        assert!(glmm_loglik_quadrature(&th, &data, 30).unwrap() <= best + 1e-9);
    }
}

#[test]
fn direct_mle_is_consistent_across_replicate_datasets() {
    use rayon::prelude::*;
    let truth = GlmmTheta::new(6.0, 2.0).unwrap();
    let fits: Vec<GlmmTheta> = (0..200u64)
        .into_par_iter()
        .filter_map(|r| {
            let data = PanelDataset::simulate(10, 15, &truth, &mut rng_stream(1000, r)).unwrap();
            glmm_direct_mle(&data).ok()
        })
        .collect();
    assert!(fits.len() >= 190);
    let n = fits.len() as f64;
    let beta = fits.iter().map(|t| t.beta).sum::<f64>() / n;
    let s2 = fits.iter().map(|t| t.sigma2).sum::<f64>() / n;
    assert!((beta - 6.0).abs() < 0.5, "{beta}");
    assert!((s2 - 2.0).abs() < 0.5, "{s2}");
}
