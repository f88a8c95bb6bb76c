//! Logit-normal GLMM with one random intercept per group.
//!
//! `logit P(y_ij = 1 | u) = beta x_ij + u_i`, `u_i ~ N(0, sigma2)` iid.
//! The E-step target has no closed form, so Monte Carlo EM draws from it
//! with a variable-at-a-time Metropolis–Hastings independence sampler. An
//! adaptive Gauss–Hermite likelihood serves as a deterministic oracle.

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::em::{Component, Draws, Model, Sampling, SimRng, Theta};
use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, gauss_hermite, log1p_exp, logistic, nelder_mead};

pub static GLMM_LAYOUT: [Component; 2] = [
    Component::unconstrained("beta"),
    Component::positive("sigma2"),
];

/// Reference MLE, to three decimals, for the logit-normal benchmark data set.
pub const BENCHMARK_MLE: GlmmTheta = GlmmTheta {
    beta: 6.132,
    sigma2: 1.766,
};

pub const DEFAULT_BURNIN: usize = 500;
pub const DEFAULT_NODES: usize = 20;

/// Binary panel: per group, covariates `x_ij` and responses `y_ij ∈ {0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    x: Vec<Vec<f64>>,
    y: Vec<Vec<u8>>,
}

impl PanelDataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<Vec<u8>>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::invalid("dataset needs at least one group"));
        }
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: y.len(),
            });
        }
        for (i, (xi, yi)) in x.iter().zip(&y).enumerate() {
            if xi.is_empty() || xi.len() != yi.len() {
                return Err(Error::invalid(format!(
                    "group {i}: covariates and responses must be non-empty and of equal length"
                )));
            }
            if yi.iter().any(|&v| v > 1) {
                return Err(Error::invalid(format!(
                    "group {i}: responses must be 0 or 1"
                )));
            }
            if xi.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "group {i}: covariates must be finite"
                )));
            }
        }
        Ok(Self { x, y })
    }

    /// Simulates the benchmark design: `q` groups of `n`, `x_ij = j / n`.
    pub fn simulate(q: usize, n: usize, theta: &GlmmTheta, rng: &mut SimRng) -> Result<Self> {
        if q == 0 || n == 0 {
            return Err(Error::invalid("q and n must be >= 1"));
        }
        let sd = theta.sigma2.sqrt();
        let mut x = Vec::with_capacity(q);
        let mut y = Vec::with_capacity(q);
        for _ in 0..q {
            let z: f64 = rng.sample(StandardNormal);
            let u = sd * z;
            let xi: Vec<f64> = (1..=n).map(|j| j as f64 / n as f64).collect();
            let yi = xi
                .iter()
                .map(|&xij| {
                    let p = logistic(theta.beta * xij + u);
                    u8::from(rng.random::<f64>() < p)
                })
                .collect();
            x.push(xi);
            y.push(yi);
        }
        Self::new(x, y)
    }

    pub fn q(&self) -> usize {
        self.x.len()
    }

    pub fn total(&self) -> usize {
        self.x.iter().map(Vec::len).sum()
    }

    pub fn x(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn y(&self) -> &[Vec<u8>] {
        &self.y
    }

    /// Copy with every response flipped 0 <-> 1.
    pub fn flipped(&self) -> Self {
        Self {
            x: self.x.clone(),
            y: self
                .y
                .iter()
                .map(|g| g.iter().map(|v| 1 - v).collect())
                .collect(),
        }
    }

    fn has_both_outcomes(&self) -> bool {
        let ones: usize = self.y.iter().flatten().map(|&v| v as usize).sum();
        ones > 0 && ones < self.total()
    }

    /// Reads a CSV with header `group,x,y`; groups keep first-appearance order.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(BufReader::new(file), path)
    }

    pub fn from_csv_reader<R: BufRead>(reader: R, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = reader.lines().enumerate();
        match lines.next() {
            Some((_, Ok(h))) if h.trim() == "group,x,y" => {}
            Some((_, Ok(h))) => {
                return Err(parse_err(
                    1,
                    format!("expected header `group,x,y`, found `{h}`"),
                ))
            }
            Some((_, Err(e))) => return Err(Error::io(path, e)),
            None => return Err(parse_err(1, "empty file".into())),
        }
        let mut ids: Vec<String> = Vec::new();
        let mut x: Vec<Vec<f64>> = Vec::new();
        let mut y: Vec<Vec<u8>> = Vec::new();
        for (idx, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [id, xs, ys] = fields[..] else {
                return Err(parse_err(idx + 1, "expected three fields".into()));
            };
            let xv: f64 = xs
                .parse()
                .map_err(|_| parse_err(idx + 1, format!("invalid x `{xs}`")))?;
            let yv: u8 = match ys {
                "0" => 0,
                "1" => 1,
                _ => {
                    return Err(parse_err(
                        idx + 1,
                        format!("y must be 0 or 1, found `{ys}`"),
                    ))
                }
            };
            let g = match ids.iter().position(|s| s == id) {
                Some(g) => g,
                None => {
                    ids.push(id.to_string());
                    x.push(Vec::new());
                    y.push(Vec::new());
                    ids.len() - 1
                }
            };
            x[g].push(xv);
            y[g].push(yv);
        }
        Self::new(x, y)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "group,x,y")?;
        for (i, (xi, yi)) in self.x.iter().zip(&self.y).enumerate() {
            for (xv, yv) in xi.iter().zip(yi) {
                writeln!(w, "{},{},{}", i + 1, xv, yv)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlmmTheta {
    pub beta: f64,
    pub sigma2: f64,
}

impl GlmmTheta {
    pub fn new(beta: f64, sigma2: f64) -> Result<Self> {
        Theta::new(&GLMM_LAYOUT, vec![beta, sigma2])?;
        Ok(Self { beta, sigma2 })
    }

    pub fn to_theta(&self) -> Theta {
        Theta::new(&GLMM_LAYOUT, vec![self.beta, self.sigma2])
            .expect("GlmmTheta is validated on construction")
    }

    pub fn from_theta(theta: &Theta) -> Result<Self> {
        let v = theta.values();
        if v.len() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: v.len(),
            });
        }
        Self::new(v[0], v[1])
    }
}

/// `g_i(v) = sum_j [y_ij v - log(1 + exp(beta x_ij + v))]`: the `u_i`-dependent
/// part of `log f(y_i | u_i)`.
pub fn group_kernel(data: &PanelDataset, i: usize, beta: f64, v: f64) -> f64 {
    data.x[i]
        .iter()
        .zip(&data.y[i])
        .map(|(&x, &y)| y as f64 * v - log1p_exp(beta * x + v))
        .sum()
}

/// Complete-data log-likelihood
/// `-(q/2) log sigma2 - sum u^2 / (2 sigma2) + sum_ij [beta x y - log(1 + e^{beta x + u_i})]`.
pub fn glmm_complete_loglik(theta: &GlmmTheta, u: &[f64], data: &PanelDataset) -> f64 {
    let q = data.q() as f64;
    let mut total = -0.5 * q * theta.sigma2.ln();
    for (i, &ui) in u.iter().enumerate() {
        total -= ui * ui / (2.0 * theta.sigma2);
        for (&x, &y) in data.x[i].iter().zip(&data.y[i]) {
            total += theta.beta * x * y as f64 - log1p_exp(theta.beta * x + ui);
        }
    }
    total
}

/// Gradient of [`glmm_complete_loglik`] in `(beta, sigma2)`.
pub fn glmm_complete_loglik_grad(theta: &GlmmTheta, u: &[f64], data: &PanelDataset) -> [f64; 2] {
    let q = data.q() as f64;
    let mut d_beta = 0.0;
    let mut ss = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        ss += ui * ui;
        for (&x, &y) in data.x[i].iter().zip(&data.y[i]) {
            d_beta += x * (y as f64 - logistic(theta.beta * x + ui));
        }
    }
    let s2 = theta.sigma2;
    [d_beta, -0.5 * q / s2 + ss / (2.0 * s2 * s2)]
}

/// Log of the unnormalized E-step target `h(u | y; theta)`.
pub fn glmm_target_logdensity(u: &[f64], theta: &GlmmTheta, data: &PanelDataset) -> f64 {
    u.iter()
        .enumerate()
        .map(|(i, &ui)| group_target_logdensity(data, i, theta, ui))
        .sum()
}

/// Single-group term of [`glmm_target_logdensity`].
pub fn group_target_logdensity(data: &PanelDataset, i: usize, theta: &GlmmTheta, v: f64) -> f64 {
    group_kernel(data, i, theta.beta, v) - v * v / (2.0 * theta.sigma2)
}

/// Log MH acceptance ratio for replacing `current` by `proposal` in group `i`.
///
/// With a `N(0, sigma2)` independence proposal the normal prior in the target
/// cancels against the proposal density, leaving `g_i(proposal) - g_i(current)`.
pub fn mh_log_accept_ratio(
    data: &PanelDataset,
    i: usize,
    beta: f64,
    current: f64,
    proposal: f64,
) -> f64 {
    group_kernel(data, i, beta, proposal) - group_kernel(data, i, beta, current)
}

/// [`group_kernel`] with `exp(beta x_ij)` precomputed for a fixed `beta`.
struct KernelCache {
    beta: f64,
    exp_bx: Vec<Vec<f64>>,
    y_sum: Vec<f64>,
}

impl KernelCache {
    fn new(data: &PanelDataset, beta: f64) -> Self {
        Self {
            beta,
            exp_bx: data
                .x
                .iter()
                .map(|xi| xi.iter().map(|x| (beta * x).exp()).collect())
                .collect(),
            y_sum: data
                .y
                .iter()
                .map(|yi| yi.iter().map(|&y| y as f64).sum())
                .collect(),
        }
    }

    fn eval(&self, data: &PanelDataset, i: usize, v: f64) -> f64 {
        let ev = v.exp();
        let mut total = self.y_sum[i] * v;
        for (&a, &x) in self.exp_bx[i].iter().zip(&data.x[i]) {
            let prod = a * ev;
            total -= if prod.is_finite() {
                prod.ln_1p()
            } else {
                log1p_exp(self.beta * x + v)
            };
        }
        total
    }
}

/// Variable-at-a-time Metropolis–Hastings independence sampler.
///
/// Each sweep visits groups `0..q` in order and proposes `u_i' ~ N(0, sigma2)`.
/// The first `burnin` sweeps are discarded; `m` sweeps are returned.
pub fn mh_chain(
    theta: &GlmmTheta,
    data: &PanelDataset,
    m: usize,
    burnin: usize,
    u0: &[f64],
    rng: &mut SimRng,
) -> Result<Draws> {
    if m < 1 {
        return Err(Error::invalid("chain length m must be >= 1"));
    }
    let q = data.q();
    if u0.len() != q {
        return Err(Error::DimensionMismatch {
            expected: q,
            found: u0.len(),
        });
    }
    let sd = theta.sigma2.sqrt();
    let kernel = KernelCache::new(data, theta.beta);
    let mut u = u0.to_vec();
    let mut g: Vec<f64> = (0..q).map(|i| kernel.eval(data, i, u[i])).collect();
    let mut values = Vec::with_capacity(m * q);
    for sweep in 0..burnin + m {
        for i in 0..q {
            let z: f64 = rng.sample(StandardNormal);
            let prop = sd * z;
            let g_prop = kernel.eval(data, i, prop);
            let log_unif = rng.random::<f64>().ln();
            if log_unif < g_prop - g[i] {
                u[i] = prop;
                g[i] = g_prop;
            }
        }
        if sweep >= burnin {
            values.extend_from_slice(&u);
        }
    }
    Draws::new(m, q, values, Sampling::Markov)
}

/// Monte Carlo M-step.
///
/// `sigma2' = mean of u^2`; `beta'` solves the averaged score equation
/// `sum x y = (1/m) sum_k sum_ij x logistic(beta x + u_i^(k))` by Newton's
/// method from `beta_init`, falling back to bisection on `[-50, 50]`.
pub fn glmm_mcem_mstep(draws: &Draws, data: &PanelDataset, beta_init: f64) -> Result<GlmmTheta> {
    if draws.m < 2 {
        return Err(Error::invalid("MCEM update needs m >= 2 draws"));
    }
    if draws.q != data.q() {
        return Err(Error::DimensionMismatch {
            expected: data.q(),
            found: draws.q,
        });
    }
    let mq = (draws.m * draws.q) as f64;
    let sigma2 = compensated_sum(draws.values.iter().map(|u| u * u)) / mq;
    if !(sigma2 > 0.0) {
        return Err(Error::Domain {
            component: "sigma2",
            value: sigma2,
        });
    }
    let beta = solve_beta(draws, data, beta_init)?;
    GlmmTheta::new(beta, sigma2)
}

/// `exp(-u)` for every draw, shared by all score evaluations of one M-step.
fn neg_exp_draws(draws: &Draws) -> Vec<f64> {
    draws.values.iter().map(|u| (-u).exp()).collect()
}

/// Averaged score in `beta` and its derivative.
///
/// `logistic(beta x + u) = 1 / (1 + exp(-beta x) exp(-u))`, so each
/// evaluation needs one exponential per distinct `(i, j)` rather than per draw.
fn beta_score(draws: &Draws, neg_exp_u: &[f64], data: &PanelDataset, beta: f64) -> (f64, f64) {
    let target: f64 = data
        .x
        .iter()
        .zip(&data.y)
        .flat_map(|(xi, yi)| xi.iter().zip(yi).map(|(x, &y)| x * y as f64))
        .sum();
    let neg_exp_bx: Vec<Vec<f64>> = data
        .x
        .iter()
        .map(|xi| xi.iter().map(|x| (-beta * x).exp()).collect())
        .collect();
    // per-draw terms are collected in draw order, so the sums below do not
    // depend on thread scheduling
    let per_draw: Vec<(f64, f64)> = draws
        .values
        .par_chunks_exact(draws.q)
        .zip(neg_exp_u.par_chunks_exact(draws.q))
        .map(|(row, bs)| {
            let mut f = 0.0;
            let mut c = 0.0;
            for (i, (&ui, &b)) in row.iter().zip(bs).enumerate() {
                for (&x, &a) in data.x[i].iter().zip(&neg_exp_bx[i]) {
                    let prod = a * b;
                    let p = if prod.is_finite() {
                        1.0 / (1.0 + prod)
                    } else {
                        logistic(beta * x + ui)
                    };
                    f += x * p;
                    c += x * x * p * (1.0 - p);
                }
            }
            (f, c)
        })
        .collect();
    let (fitted, curv): (Vec<f64>, Vec<f64>) = per_draw.into_iter().unzip();
    let m = draws.m as f64;
    (
        target - compensated_sum(fitted) / m,
        -compensated_sum(curv) / m,
    )
}

fn solve_beta(draws: &Draws, data: &PanelDataset, beta_init: f64) -> Result<f64> {
    const LO: f64 = -50.0;
    const HI: f64 = 50.0;
    const TOL: f64 = 1e-10;
    // the score is decreasing in beta, so a root exists iff it changes sign
    let neg_exp_u = neg_exp_draws(draws);
    let (s_lo, _) = beta_score(draws, &neg_exp_u, data, LO);
    let (s_hi, _) = beta_score(draws, &neg_exp_u, data, HI);
    if !(s_lo > 0.0 && s_hi < 0.0) {
        return Err(Error::Convergence(
            "beta score has no root in [-50, 50] (quasi-separation)".into(),
        ));
    }
    let mut lo = LO;
    let mut hi = HI;
    let mut beta = beta_init.clamp(LO, HI);
    for _ in 0..100 {
        let (s, ds) = beta_score(draws, &neg_exp_u, data, beta);
        if !s.is_finite() {
            return Err(Error::Convergence("non-finite score in beta update".into()));
        }
        if s.abs() <= TOL {
            return Ok(beta);
        }
        if s > 0.0 {
            lo = beta;
        } else {
            hi = beta;
        }
        let newton = if ds < 0.0 { beta - s / ds } else { f64::NAN };
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - beta).abs() <= 4.0 * f64::EPSILON * (1.0 + beta.abs()) {
            return Ok(next);
        }
        beta = next;
    }
    Err(Error::Convergence(
        "beta Newton iteration did not converge in 100 steps".into(),
    ))
}

/// Log-integrand `log f(y_i | v) + log phi(v; 0, sigma2)` for one group.
fn group_log_integrand(data: &PanelDataset, i: usize, theta: &GlmmTheta, v: f64) -> f64 {
    let lin: f64 = data.x[i]
        .iter()
        .zip(&data.y[i])
        .map(|(&x, &y)| {
            let eta = theta.beta * x + v;
            y as f64 * eta - log1p_exp(eta)
        })
        .sum();
    lin - v * v / (2.0 * theta.sigma2) - 0.5 * (2.0 * PI * theta.sigma2).ln()
}

/// Mode of the group integrand and the curvature there.
fn group_mode(data: &PanelDataset, i: usize, theta: &GlmmTheta) -> Result<(f64, f64)> {
    let n = data.x[i].len() as f64;
    let s2 = theta.sigma2;
    let derivs = |v: f64| -> (f64, f64) {
        let mut d1 = -v / s2;
        let mut d2 = -1.0 / s2;
        for (&x, &y) in data.x[i].iter().zip(&data.y[i]) {
            let p = logistic(theta.beta * x + v);
            d1 += y as f64 - p;
            d2 -= p * (1.0 - p);
        }
        (d1, d2)
    };
    // sum (y - p) lies in (-n, n), so the root of d1 lies in (-n s2, n s2)
    let mut lo = -n * s2;
    let mut hi = n * s2;
    let mut v = 0.0;
    for _ in 0..200 {
        let (d1, d2) = derivs(v);
        if d1 > 0.0 {
            lo = v;
        } else {
            hi = v;
        }
        let newton = v - d1 / d2;
        let next = if newton.is_finite() && newton >= lo && newton <= hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - v).abs() <= 1e-14 * (1.0 + v.abs()) || d1 == 0.0 {
            let (_, d2) = derivs(next);
            return Ok((next, d2));
        }
        v = next;
    }
    Err(Error::Convergence(format!(
        "mode search for group {i} did not converge"
    )))
}

/// Adaptive Gauss–Hermite summary of one group's marginal integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupQuadrature {
    /// `log ∫ f(y_i | v) phi(v; 0, sigma2) dv`
    pub log_integral: f64,
    /// Posterior mean of `u_i`.
    pub mean: f64,
    /// Posterior variance of `u_i`.
    pub var: f64,
}

pub fn glmm_group_quadrature(
    theta: &GlmmTheta,
    data: &PanelDataset,
    i: usize,
    nodes: usize,
) -> Result<GroupQuadrature> {
    let (x, w) = gauss_hermite(nodes);
    group_quadrature_with_rule(theta, data, i, &x, &w)
}

fn group_quadrature_with_rule(
    theta: &GlmmTheta,
    data: &PanelDataset,
    i: usize,
    x: &[f64],
    w: &[f64],
) -> Result<GroupQuadrature> {
    let (mode, d2) = group_mode(data, i, theta)?;
    let scale = (-1.0 / d2).sqrt();
    let root2s = std::f64::consts::SQRT_2 * scale;
    let terms: Vec<(f64, f64)> = x
        .iter()
        .zip(w)
        .map(|(&xk, &wk)| {
            let v = mode + root2s * xk;
            (
                wk.ln() + group_log_integrand(data, i, theta, v) + xk * xk,
                v,
            )
        })
        .collect();
    let peak = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = terms.iter().map(|t| (t.0 - peak).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mean = weights
        .iter()
        .zip(&terms)
        .map(|(w, t)| w * t.1)
        .sum::<f64>()
        / total;
    let var = weights
        .iter()
        .zip(&terms)
        .map(|(w, t)| w * (t.1 - mean) * (t.1 - mean))
        .sum::<f64>()
        / total;
    Ok(GroupQuadrature {
        log_integral: peak + total.ln() + root2s.ln(),
        mean,
        var,
    })
}

/// Marginal log-likelihood by per-group adaptive Gauss–Hermite quadrature.
pub fn glmm_loglik_quadrature(theta: &GlmmTheta, data: &PanelDataset, nodes: usize) -> Result<f64> {
    if nodes < 10 {
        return Err(Error::invalid("quadrature needs at least 10 nodes"));
    }
    let (x, w) = gauss_hermite(nodes);
    let mut total = 0.0;
    for i in 0..data.q() {
        total += group_quadrature_with_rule(theta, data, i, &x, &w)?.log_integral;
    }
    Ok(total)
}

/// Direct maximizer of the quadrature likelihood over `(beta, log sigma2)`
/// by Nelder–Mead from `(0, 0)`.
pub fn glmm_direct_mle(data: &PanelDataset) -> Result<GlmmTheta> {
    if !data.has_both_outcomes() {
        return Err(Error::invalid(
            "direct MLE needs both response values in the data",
        ));
    }
    let (x, w) = gauss_hermite(30);
    let objective = |p: &[f64]| -> f64 {
        let theta = GlmmTheta {
            beta: p[0],
            sigma2: p[1].exp(),
        };
        if !(theta.sigma2 > 0.0 && theta.sigma2.is_finite()) {
            return f64::INFINITY;
        }
        let mut total = 0.0;
        for i in 0..data.q() {
            match group_quadrature_with_rule(&theta, data, i, &x, &w) {
                Ok(g) => total += g.log_integral,
                Err(_) => return f64::INFINITY,
            }
        }
        -total
    };
    let budget = 10_000;
    let first = nelder_mead(objective, &[0.0, 0.0], 1.0, 1e-12, budget);
    let second = nelder_mead(
        objective,
        &first.x,
        0.1,
        1e-12,
        budget.saturating_sub(first.evaluations),
    );
    if !second.converged {
        return Err(Error::Convergence(
            "direct MLE did not converge within 10^4 evaluations".into(),
        ));
    }
    GlmmTheta::new(second.x[0], second.x[1].exp())
}

/// The GLMM bound to a data set, with sampler and quadrature settings.
#[derive(Debug, Clone)]
pub struct GlmmModel {
    pub data: PanelDataset,
    pub burnin: usize,
    pub nodes: usize,
}

impl GlmmModel {
    pub fn new(data: PanelDataset) -> Self {
        Self {
            data,
            burnin: DEFAULT_BURNIN,
            nodes: DEFAULT_NODES,
        }
    }
}

impl Model for GlmmModel {
    fn layout(&self) -> &'static [Component] {
        &GLMM_LAYOUT
    }

    fn loglik(&self, theta: &Theta) -> Option<f64> {
        let t = GlmmTheta::from_theta(theta).ok()?;
        glmm_loglik_quadrature(&t, &self.data, self.nodes).ok()
    }

    fn complete_loglik(&self, theta: &Theta, u: &[f64]) -> f64 {
        let v = theta.values();
        glmm_complete_loglik(
            &GlmmTheta {
                beta: v[0],
                sigma2: v[1],
            },
            u,
            &self.data,
        )
    }

    /// A fresh chain from `u = 0` on every call.
    fn draw(&self, theta: &Theta, m: usize, rng: &mut SimRng) -> Result<Draws> {
        let t = GlmmTheta::from_theta(theta)?;
        let u0 = vec![0.0; self.data.q()];
        mh_chain(&t, &self.data, m, self.burnin, &u0, rng)
    }

    fn maximize(&self, current: &Theta, draws: &Draws) -> Result<Theta> {
        let beta = current.values()[0];
        Ok(glmm_mcem_mstep(draws, &self.data, beta)?.to_theta())
    }
}
