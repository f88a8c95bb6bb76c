//! One-way random-effects linear mixed model (the bulls example).
//!
//! Internally the model is written as `y_ij = u_i + e_ij` with
//! `u_i ~ N(mu, sigma_u2)` and `e_ij ~ N(0, sigma_e2)`, which is the form the
//! EM and MCEM updates below are stated in. The marginal likelihood uses the
//! equivalent `y_i ~ N(mu 1, sigma_e2 I + sigma_u2 J)` form.

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::em::{run_map, Component, Draws, Model, Sampling, SimRng, StoppingConfig, Theta, Trace};
use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, CompensatedSum};

pub static LMM_LAYOUT: [Component; 3] = [
    Component::unconstrained("mu"),
    Component::positive("sigma_u2"),
    Component::positive("sigma_e2"),
];

/// Reference maximum likelihood estimate for the bulls data, rounded as
/// commonly quoted. The last digit of `sigma_e2` is off by one in that
/// rounding: the exact MLE is 249.22346.
pub const BULLS_MLE: LmmTheta = LmmTheta {
    mu: 53.318,
    sigma_u2: 54.821,
    sigma_e2: 249.23,
};

/// Percentage of conception per semen sample, one row per bull.
const BULLS: [&[f64]; 6] = [
    &[46.0, 31.0, 37.0, 62.0, 30.0],
    &[70.0, 59.0],
    &[52.0, 44.0, 57.0, 40.0, 67.0, 64.0, 70.0],
    &[47.0, 21.0, 70.0, 46.0, 14.0],
    &[42.0, 64.0, 50.0, 69.0, 77.0, 81.0, 87.0],
    &[35.0, 68.0, 59.0, 38.0, 57.0, 76.0, 57.0, 29.0, 60.0],
];

/// Per-group response vectors with cached summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    groups: Vec<Vec<f64>>,
    means: Vec<f64>,
    /// Within-group sums of squares `sum_j (y_ij - ybar_i)^2`.
    within: Vec<f64>,
    total: usize,
}

impl GroupedDataset {
    pub fn new(groups: Vec<Vec<f64>>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::invalid("dataset needs at least one group"));
        }
        if let Some(i) = groups.iter().position(|g| g.is_empty()) {
            return Err(Error::invalid(format!("group {i} is empty")));
        }
        if groups.iter().flatten().any(|y| !y.is_finite()) {
            return Err(Error::invalid("responses must be finite"));
        }
        let means: Vec<f64> = groups
            .iter()
            .map(|g| compensated_sum(g.iter().copied()) / g.len() as f64)
            .collect();
        let within = groups
            .iter()
            .zip(&means)
            .map(|(g, m)| compensated_sum(g.iter().map(|y| (y - m) * (y - m))))
            .collect();
        let total = groups.iter().map(Vec::len).sum();
        Ok(Self {
            groups,
            means,
            within,
            total,
        })
    }

    /// Draws `y_ij = u_i + e_ij` for groups of the given sizes.
    pub fn simulate(sizes: &[usize], theta: &LmmTheta, rng: &mut SimRng) -> Result<Self> {
        theta.validate()?;
        let (su, se) = (theta.sigma_u2.sqrt(), theta.sigma_e2.sqrt());
        let groups = sizes
            .iter()
            .map(|&n| {
                let u = theta.mu + su * rng.sample::<f64, _>(StandardNormal);
                (0..n)
                    .map(|_| u + se * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Self::new(groups)
    }

    /// The six-bull artificial insemination data set.
    pub fn bulls() -> Self {
        Self::new(BULLS.iter().map(|g| g.to_vec()).collect()).expect("bulls data is valid")
    }

    pub fn groups(&self) -> &[Vec<f64>] {
        &self.groups
    }

    pub fn q(&self) -> usize {
        self.groups.len()
    }

    pub fn n(&self, i: usize) -> usize {
        self.groups[i].len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    fn grand_mean(&self) -> f64 {
        compensated_sum(self.groups.iter().flatten().copied()) / self.total as f64
    }

    fn within_total(&self) -> f64 {
        compensated_sum(self.within.iter().copied())
    }

    /// Reads a CSV with header `bull,rate`; groups keep first-appearance order.
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
            Some((_, Ok(h))) if h.trim() == "bull,rate" => {}
            Some((_, Ok(h))) => {
                return Err(parse_err(
                    1,
                    format!("expected header `bull,rate`, found `{h}`"),
                ))
            }
            Some((_, Err(e))) => return Err(Error::io(path, e)),
            None => return Err(parse_err(1, "empty file".into())),
        }
        let mut ids: Vec<String> = Vec::new();
        let mut groups: Vec<Vec<f64>> = Vec::new();
        for (idx, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let (id, rate) = line
                .split_once(',')
                .ok_or_else(|| parse_err(idx + 1, "expected two fields".into()))?;
            let rate: f64 = rate
                .trim()
                .parse()
                .map_err(|_| parse_err(idx + 1, format!("invalid rate `{}`", rate.trim())))?;
            let id = id.trim();
            match ids.iter().position(|x| x == id) {
                Some(g) => groups[g].push(rate),
                None => {
                    ids.push(id.to_string());
                    groups.push(vec![rate]);
                }
            }
        }
        Self::new(groups)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bull,rate")?;
        for (i, g) in self.groups.iter().enumerate() {
            for y in g {
                writeln!(w, "{},{}", i + 1, y)?;
            }
        }
        Ok(())
    }
}

/// `(mu, sigma_u2, sigma_e2)`, both variances strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmmTheta {
    pub mu: f64,
    pub sigma_u2: f64,
    pub sigma_e2: f64,
}

impl LmmTheta {
    pub fn new(mu: f64, sigma_u2: f64, sigma_e2: f64) -> Result<Self> {
        let t = Self {
            mu,
            sigma_u2,
            sigma_e2,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        Theta::new(&LMM_LAYOUT, self.to_vec()).map(|_| ())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.mu, self.sigma_u2, self.sigma_e2]
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.mu, self.sigma_u2, self.sigma_e2]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 3 {
            return Err(Error::DimensionMismatch {
                expected: 3,
                found: v.len(),
            });
        }
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_theta(&self) -> Theta {
        Theta::new(&LMM_LAYOUT, self.to_vec()).expect("LmmTheta is validated on construction")
    }

    pub fn from_theta(theta: &Theta) -> Result<Self> {
        Self::from_slice(theta.values())
    }
}

/// Conditional means and variances of the random effects given the data.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParams {
    pub uhat: Vec<f64>,
    pub vhat: Vec<f64>,
}

/// Exact marginal log-likelihood, `O(N)` via the rank-one structure of each
/// group's covariance.
pub fn lmm_loglik(theta: &LmmTheta, data: &GroupedDataset) -> f64 {
    let LmmTheta {
        mu,
        sigma_u2: su,
        sigma_e2: se,
    } = *theta;
    let mut acc = CompensatedSum::new();
    for i in 0..data.q() {
        let n = data.n(i) as f64;
        let lam = se + n * su;
        let dev = data.means[i] - mu;
        let logdet = (n - 1.0) * se.ln() + lam.ln();
        let quad = data.within[i] / se + n * dev * dev / lam;
        acc.add(-0.5 * (n * (2.0 * PI).ln() + logdet + quad));
    }
    acc.value()
}

pub fn lmm_posterior(theta: &LmmTheta, data: &GroupedDataset) -> PosteriorParams {
    let LmmTheta {
        mu,
        sigma_u2: su,
        sigma_e2: se,
    } = *theta;
    let (uhat, vhat) = (0..data.q())
        .map(|i| {
            let n = data.n(i) as f64;
            let denom = se + n * su;
            let u = (se * mu + n * su * data.means[i]) / denom;
            let v = se * su / denom;
            (u, v)
        })
        .unzip();
    PosteriorParams { uhat, vhat }
}

/// Closed-form EM update.
///
/// `mu' = mean(uhat)`, `sigma_u2' = mean(V + uhat^2) - mu'^2`,
/// `sigma_e2' = (1/N) sum_i [sum_j y_ij^2 - 2 n_i ybar_i uhat_i + n_i (V_i + uhat_i^2)]`,
/// evaluated in the centred form to avoid cancellation.
pub fn lmm_em_step(theta: &LmmTheta, data: &GroupedDataset) -> Result<LmmTheta> {
    let post = lmm_posterior(theta, data);
    let q = data.q() as f64;
    let mu = compensated_sum(post.uhat.iter().copied()) / q;
    let sigma_u2 = compensated_sum(
        post.uhat
            .iter()
            .zip(&post.vhat)
            .map(|(u, v)| v + (u - mu) * (u - mu)),
    ) / q;
    let resid = compensated_sum((0..data.q()).map(|i| {
        let n = data.n(i) as f64;
        let d = data.means[i] - post.uhat[i];
        data.within[i] + n * (d * d + post.vhat[i])
    }));
    let sigma_e2 = resid / data.total() as f64;
    LmmTheta::new(mu, sigma_u2, sigma_e2)
}

/// Sums `(sum_i E[(u_i - mu)^2], sum_i E[sum_j (y_ij - u_i)^2])` under the
/// posterior at `tilde`, with `mu` taken from `theta`.
fn expected_squares(mu: f64, post: &PosteriorParams, data: &GroupedDataset) -> (f64, f64, f64) {
    let dev_sum = compensated_sum(post.uhat.iter().map(|u| u - mu));
    let du = compensated_sum(
        post.uhat
            .iter()
            .zip(&post.vhat)
            .map(|(u, v)| (u - mu) * (u - mu) + v),
    );
    let de = compensated_sum((0..data.q()).map(|i| {
        let n = data.n(i) as f64;
        let d = data.means[i] - post.uhat[i];
        data.within[i] + n * (d * d + post.vhat[i])
    }));
    (dev_sum, du, de)
}

/// `Q(theta | tilde) = E[log f(y, U; theta) | y; tilde]`, including the
/// normalizing constants of both normal densities.
pub fn lmm_q(theta: &LmmTheta, tilde: &LmmTheta, data: &GroupedDataset) -> f64 {
    let post = lmm_posterior(tilde, data);
    let (_, du, de) = expected_squares(theta.mu, &post, data);
    let n = data.total() as f64;
    let q = data.q() as f64;
    -0.5 * n * (2.0 * PI * theta.sigma_e2).ln()
        - de / (2.0 * theta.sigma_e2)
        - 0.5 * q * (2.0 * PI * theta.sigma_u2).ln()
        - du / (2.0 * theta.sigma_u2)
}

/// Complete-data log-likelihood `log f(y | u) + log h(u)` for one vector `u`.
pub fn lmm_complete_loglik(theta: &LmmTheta, u: &[f64], data: &GroupedDataset) -> f64 {
    let n = data.total() as f64;
    let q = data.q() as f64;
    let mut se_ss = CompensatedSum::new();
    let mut su_ss = CompensatedSum::new();
    for (i, &ui) in u.iter().enumerate() {
        let d = data.means[i] - ui;
        se_ss.add(data.within[i] + data.n(i) as f64 * d * d);
        su_ss.add((ui - theta.mu) * (ui - theta.mu));
    }
    -0.5 * n * (2.0 * PI * theta.sigma_e2).ln()
        - se_ss.value() / (2.0 * theta.sigma_e2)
        - 0.5 * q * (2.0 * PI * theta.sigma_u2).ln()
        - su_ss.value() / (2.0 * theta.sigma_u2)
}

/// Gradient and Hessian of `Q(. | theta)` at `theta`, in `(mu, sigma_u2, sigma_e2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QDerivatives {
    pub gradient: [f64; 3],
    pub hessian: [[f64; 3]; 3],
    /// Set when the Hessian is numerically singular.
    pub singular: bool,
}

pub fn lmm_grad_q_diag(theta: &LmmTheta, data: &GroupedDataset) -> QDerivatives {
    let post = lmm_posterior(theta, data);
    let (dev_sum, du, de) = expected_squares(theta.mu, &post, data);
    let n = data.total() as f64;
    let q = data.q() as f64;
    let su = theta.sigma_u2;
    let se = theta.sigma_e2;

    let gradient = [
        dev_sum / su,
        -0.5 * q / su + du / (2.0 * su * su),
        -0.5 * n / se + de / (2.0 * se * se),
    ];
    let h_mm = -q / su;
    let h_mu = -dev_sum / (su * su);
    let h_uu = 0.5 * q / (su * su) - du / (su * su * su);
    let h_ee = 0.5 * n / (se * se) - de / (se * se * se);
    let hessian = [[h_mm, h_mu, 0.0], [h_mu, h_uu, 0.0], [0.0, 0.0, h_ee]];

    let det = h_ee * (h_mm * h_uu - h_mu * h_mu);
    let scale = h_mm.abs().max(h_uu.abs()).max(h_mu.abs()).max(h_ee.abs());
    let singular = !det.is_finite() || det.abs() <= 1e-14 * scale.powi(3);
    QDerivatives {
        gradient,
        hessian,
        singular,
    }
}

/// One Newton step on `Q(. | theta)` from `theta` (the EM gradient algorithm),
/// halved up to 30 times to stay inside the positive-variance region.
pub fn lmm_em_gradient_step(theta: &LmmTheta, data: &GroupedDataset) -> Result<LmmTheta> {
    let d = lmm_grad_q_diag(theta, data);
    if d.singular {
        return Err(Error::SingularHessian);
    }
    let h = nalgebra::Matrix3::from_fn(|r, c| d.hessian[r][c]);
    let g = nalgebra::Vector3::from(d.gradient);
    let step = h.lu().solve(&(-g)).ok_or(Error::SingularHessian)?;
    let mut scale = 1.0;
    for _ in 0..=30 {
        let cand = LmmTheta {
            mu: theta.mu + scale * step[0],
            sigma_u2: theta.sigma_u2 + scale * step[1],
            sigma_e2: theta.sigma_e2 + scale * step[2],
        };
        if cand.sigma_u2 > 0.0 && cand.sigma_e2 > 0.0 && cand.mu.is_finite() {
            return Ok(cand);
        }
        scale *= 0.5;
    }
    Err(Error::Convergence(
        "EM gradient step left the positive-variance region after 30 halvings".into(),
    ))
}

/// Complete-data sufficient statistics of one draw `u` (or their expectation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmmSuffStats {
    /// `sum_i u_i`
    pub sum_u: f64,
    /// `sum_i u_i^2`
    pub sum_u2: f64,
    /// `sum_i n_i ybar_i u_i`
    pub cross: f64,
    /// `sum_i n_i u_i^2`
    pub weighted_u2: f64,
}

impl LmmSuffStats {
    pub fn of_draw(u: &[f64], data: &GroupedDataset) -> Self {
        let mut s = Self {
            sum_u: 0.0,
            sum_u2: 0.0,
            cross: 0.0,
            weighted_u2: 0.0,
        };
        for (i, &ui) in u.iter().enumerate() {
            let n = data.n(i) as f64;
            s.sum_u += ui;
            s.sum_u2 += ui * ui;
            s.cross += n * data.means[i] * ui;
            s.weighted_u2 += n * ui * ui;
        }
        s
    }

    /// Conditional expectation of the statistics under `post`.
    pub fn expected(post: &PosteriorParams, data: &GroupedDataset) -> Self {
        let mut s = Self {
            sum_u: 0.0,
            sum_u2: 0.0,
            cross: 0.0,
            weighted_u2: 0.0,
        };
        for i in 0..data.q() {
            let n = data.n(i) as f64;
            let (u, v) = (post.uhat[i], post.vhat[i]);
            s.sum_u += u;
            s.sum_u2 += v + u * u;
            s.cross += n * data.means[i] * u;
            s.weighted_u2 += n * (v + u * u);
        }
        s
    }

    /// Complete-data maximizer given (averaged) statistics.
    pub fn maximize(&self, data: &GroupedDataset) -> Result<LmmTheta> {
        let q = data.q() as f64;
        let syy = compensated_sum(data.groups.iter().flatten().map(|y| y * y));
        let mu = self.sum_u / q;
        let sigma_u2 = self.sum_u2 / q - mu * mu;
        let sigma_e2 = (syy - 2.0 * self.cross + self.weighted_u2) / data.total() as f64;
        LmmTheta::new(mu, sigma_u2, sigma_e2)
    }
}

/// Streaming accumulator for the MCEM update and its delta-method error.
///
/// Per draw it tracks `(a, b, e)` with `a = sum_i (u_i - c)`,
/// `b = sum_i (u_i - c)^2` and `e = sum_i n_i (ybar_i - u_i)^2`, where `c` is
/// the grand mean of the data. The shift keeps the variance formula free of
/// cancellation and does not change the update.
#[derive(Debug, Clone)]
struct McemAccumulator {
    shift: f64,
    count: usize,
    mean: [f64; 3],
    comoment: [[f64; 3]; 3],
    sums: [CompensatedSum; 3],
}

impl McemAccumulator {
    fn new(shift: f64) -> Self {
        Self {
            shift,
            count: 0,
            mean: [0.0; 3],
            comoment: [[0.0; 3]; 3],
            sums: [CompensatedSum::new(); 3],
        }
    }

    fn push(&mut self, u: &[f64], data: &GroupedDataset) {
        let mut s = [0.0; 3];
        for (i, &ui) in u.iter().enumerate() {
            let c = ui - self.shift;
            let d = data.means[i] - ui;
            s[0] += c;
            s[1] += c * c;
            s[2] += data.n(i) as f64 * d * d;
        }
        for (acc, x) in self.sums.iter_mut().zip(s) {
            acc.add(x);
        }
        self.count += 1;
        let k = self.count as f64;
        let delta: [f64; 3] = std::array::from_fn(|j| s[j] - self.mean[j]);
        for j in 0..3 {
            self.mean[j] += delta[j] / k;
        }
        for r in 0..3 {
            for c in 0..3 {
                self.comoment[r][c] += delta[r] * (s[c] - self.mean[c]);
            }
        }
    }

    fn finish(&self, data: &GroupedDataset) -> Result<(LmmTheta, [f64; 3])> {
        let m = self.count as f64;
        let q = data.q() as f64;
        let n = data.total() as f64;
        let a = self.sums[0].value() / m;
        let b = self.sums[1].value() / m;
        let e = self.sums[2].value() / m;
        let mu = self.shift + a / q;
        let sigma_u2 = b / q - (a / q) * (a / q);
        let sigma_e2 = (data.within_total() + e) / n;
        let theta = LmmTheta::new(mu, sigma_u2, sigma_e2)?;

        // delta method on the means of (a, b, e)
        let cov = |r: usize, c: usize| self.comoment[r][c] / (m - 1.0) / m;
        let g_mu = [1.0 / q, 0.0, 0.0];
        let g_su = [-2.0 * a / (q * q), 1.0 / q, 0.0];
        let g_se = [0.0, 0.0, 1.0 / n];
        let var = |g: &[f64; 3]| {
            let mut v = 0.0;
            for r in 0..3 {
                for c in 0..3 {
                    v += g[r] * g[c] * cov(r, c);
                }
            }
            v.max(0.0).sqrt()
        };
        Ok((theta, [var(&g_mu), var(&g_su), var(&g_se)]))
    }
}

fn sample_posterior_row(post: &PosteriorParams, sd: &[f64], rng: &mut SimRng, out: &mut [f64]) {
    for (i, slot) in out.iter_mut().enumerate() {
        let z: f64 = rng.sample(StandardNormal);
        *slot = post.uhat[i] + sd[i] * z;
    }
}

/// `m` iid draws from the posterior of the random effects.
pub fn lmm_draw_posterior(
    theta: &LmmTheta,
    data: &GroupedDataset,
    m: usize,
    rng: &mut SimRng,
) -> Draws {
    let post = lmm_posterior(theta, data);
    let sd: Vec<f64> = post.vhat.iter().map(|v| v.sqrt()).collect();
    let q = data.q();
    let mut values = vec![0.0; m * q];
    for row in values.chunks_exact_mut(q) {
        sample_posterior_row(&post, &sd, rng, row);
    }
    Draws {
        m,
        q,
        values,
        sampling: Sampling::Iid,
    }
}

/// MCEM update from a stored sample.
pub fn lmm_mstep_from_draws(draws: &Draws, data: &GroupedDataset) -> Result<LmmTheta> {
    if draws.m < 2 {
        return Err(Error::invalid("MCEM update needs m >= 2 draws"));
    }
    if draws.q != data.q() {
        return Err(Error::DimensionMismatch {
            expected: data.q(),
            found: draws.q,
        });
    }
    let mut acc = McemAccumulator::new(data.grand_mean());
    for row in draws.rows() {
        acc.push(row, data);
    }
    acc.finish(data).map(|(t, _)| t)
}

/// MCEM update with `m` iid posterior draws:
/// `mu' = mean of all u`, `sigma_u2' = mean (u - mu')^2`,
/// `sigma_e2' = (1/(mN)) sum_k sum_ij (y_ij - u_i^(k))^2`.
pub fn lmm_mcem_step(
    theta: &LmmTheta,
    data: &GroupedDataset,
    m: usize,
    rng: &mut SimRng,
) -> Result<LmmTheta> {
    lmm_mcem_step_with_se(theta, data, m, rng).map(|(t, _)| t)
}

/// As [`lmm_mcem_step`], also returning delta-method Monte Carlo standard
/// errors of each component computed from the draw-level statistics.
pub fn lmm_mcem_step_with_se(
    theta: &LmmTheta,
    data: &GroupedDataset,
    m: usize,
    rng: &mut SimRng,
) -> Result<(LmmTheta, [f64; 3])> {
    if m < 2 {
        return Err(Error::invalid("MCEM update needs m >= 2 draws"));
    }
    let post = lmm_posterior(theta, data);
    let sd: Vec<f64> = post.vhat.iter().map(|v| v.sqrt()).collect();
    let mut row = vec![0.0; data.q()];
    let mut acc = McemAccumulator::new(data.grand_mean());
    for _ in 0..m {
        sample_posterior_row(&post, &sd, rng, &mut row);
        acc.push(&row, data);
    }
    acc.finish(data)
}

/// The linear mixed model bound to a data set.
#[derive(Debug, Clone)]
pub struct LmmModel {
    pub data: GroupedDataset,
}

impl LmmModel {
    pub fn new(data: GroupedDataset) -> Self {
        Self { data }
    }

    pub fn bulls() -> Self {
        Self::new(GroupedDataset::bulls())
    }

    /// EM gradient algorithm: one Newton step on `Q(. | theta)` per iteration.
    pub fn run_em_gradient(&self, theta0: &Theta, stop: &StoppingConfig) -> Result<Trace> {
        run_map(self, theta0, stop, |theta| {
            let t = LmmTheta::from_theta(theta)?;
            Ok(lmm_em_gradient_step(&t, &self.data)?.to_theta())
        })
    }
}

impl Model for LmmModel {
    fn layout(&self) -> &'static [Component] {
        &LMM_LAYOUT
    }

    fn loglik(&self, theta: &Theta) -> Option<f64> {
        LmmTheta::from_theta(theta)
            .ok()
            .map(|t| lmm_loglik(&t, &self.data))
    }

    fn em_step(&self, theta: &Theta) -> Result<Theta> {
        let t = LmmTheta::from_theta(theta)?;
        Ok(lmm_em_step(&t, &self.data)?.to_theta())
    }

    fn complete_loglik(&self, theta: &Theta, u: &[f64]) -> f64 {
        let v = theta.values();
        let t = LmmTheta {
            mu: v[0],
            sigma_u2: v[1],
            sigma_e2: v[2],
        };
        lmm_complete_loglik(&t, u, &self.data)
    }

    fn draw(&self, theta: &Theta, m: usize, rng: &mut SimRng) -> Result<Draws> {
        let t = LmmTheta::from_theta(theta)?;
        Ok(lmm_draw_posterior(&t, &self.data, m, rng))
    }

    fn maximize(&self, _current: &Theta, draws: &Draws) -> Result<Theta> {
        Ok(lmm_mstep_from_draws(draws, &self.data)?.to_theta())
    }

    fn mcem_step(&self, theta: &Theta, m: usize, rng: &mut SimRng) -> Result<Theta> {
        let t = LmmTheta::from_theta(theta)?;
        Ok(lmm_mcem_step(&t, &self.data, m, rng)?.to_theta())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::rng_stream;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn bulls_shape() {
        let d = GroupedDataset::bulls();
        assert_eq!(d.q(), 6);
        assert_eq!(d.sizes(), vec![5, 2, 7, 5, 7, 9]);
        assert_eq!(d.total(), 35);
        assert_eq!(d.groups()[5][8], 60.0);
    }

    #[test]
    fn loglik_single_standard_normal() {
        let d = GroupedDataset::new(vec![vec![0.0]]).unwrap();
        let t = LmmTheta::new(0.0, 0.5, 0.5).unwrap();
        assert!(close(lmm_loglik(&t, &d), -0.5 * (2.0 * PI).ln(), 1e-14));
    }

    #[test]
    fn posterior_examples() {
        let d = GroupedDataset::new(vec![vec![2.0]]).unwrap();
        let p = lmm_posterior(&LmmTheta::new(0.0, 1.0, 1.0).unwrap(), &d);
        assert!(close(p.uhat[0], 1.0, 1e-15) && close(p.vhat[0], 0.5, 1e-15));

        let d = GroupedDataset::new(vec![vec![20.0; 4]]).unwrap();
        let p = lmm_posterior(&LmmTheta::new(10.0, 1.0, 4.0).unwrap(), &d);
        assert!(close(p.uhat[0], 15.0, 1e-13) && close(p.vhat[0], 0.5, 1e-15));
    }

    #[test]
    fn em_step_from_start_increases_loglik() {
        let d = GroupedDataset::bulls();
        let t0 = LmmTheta::new(55.0, 45.0, 260.0).unwrap();
        let t1 = lmm_em_step(&t0, &d).unwrap();
        assert!(lmm_loglik(&t1, &d) > lmm_loglik(&t0, &d));
    }

    #[test]
    fn mcem_rejects_small_m() {
        let d = GroupedDataset::bulls();
        let mut rng = rng_stream(1, 0);
        assert!(lmm_mcem_step(&BULLS_MLE, &d, 1, &mut rng).is_err());
    }

    #[test]
    fn streaming_and_stored_mcem_agree() {
        let d = GroupedDataset::bulls();
        let t = LmmTheta::new(55.0, 45.0, 260.0).unwrap();
        let a = lmm_mcem_step(&t, &d, 500, &mut rng_stream(9, 0)).unwrap();
        let draws = lmm_draw_posterior(&t, &d, 500, &mut rng_stream(9, 0));
        let b = lmm_mstep_from_draws(&draws, &d).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn suff_stats_maximizer_matches_em_step() {
        let d = GroupedDataset::bulls();
        let t = LmmTheta::new(55.0, 45.0, 260.0).unwrap();
        let s = LmmSuffStats::expected(&lmm_posterior(&t, &d), &d);
        let a = s.maximize(&d).unwrap();
        let b = lmm_em_step(&t, &d).unwrap();
        for (x, y) in a.to_array().iter().zip(b.to_array()) {
            assert!((x - y).abs() < 1e-9 * y.abs());
        }
    }

    #[test]
    fn csv_round_trip() {
        let d = GroupedDataset::bulls();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = GroupedDataset::from_csv_reader(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back, d);
        let bad = GroupedDataset::from_csv_reader(&b"id,y\n1,2\n"[..], Path::new("mem"));
        assert!(matches!(bad, Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn em_gradient_step_from_start_keeps_variances_positive() {
        let d = GroupedDataset::bulls();
        let t = lmm_em_gradient_step(&LmmTheta::new(55.0, 45.0, 260.0).unwrap(), &d).unwrap();
        assert!(t.sigma_u2 > 0.0 && t.sigma_e2 > 0.0);
    }
}
