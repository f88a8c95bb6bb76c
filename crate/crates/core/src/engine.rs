//! Monte Carlo EM drivers: sample-size schedules, plain MCEM, stable MCEM
//! with expanding truncation sets, the replicate-based adaptive sample-size
//! rule, and the ascent-based acceptance check.

use std::time::Instant;

use crate::em::{
    check_layout, elapsed_ms, loglik_or_nan, Draws, IterationRecord, Model, ParamKind, Sampling,
    SimRng, StopMonitor, StoppingConfig, Theta, Trace,
};
use crate::error::{Error, Result};
use crate::numeric::{batch_means_se, iid_se, mean_var, two_sided_z};

/// Monte Carlo sample size as a function of the iteration index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleConfig {
    /// `m_t = m0`.
    Constant { m0: usize },
    /// `m_t = ceil(m0 (1 + t)^alpha)`, `alpha > 1`.
    Polynomial { m0: usize, alpha: f64 },
}

impl ScheduleConfig {
    pub fn constant(m0: usize) -> Result<Self> {
        let s = Self::Constant { m0 };
        s.validate()?;
        Ok(s)
    }

    pub fn polynomial(m0: usize, alpha: f64) -> Result<Self> {
        let s = Self::Polynomial { m0, alpha };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let m0 = match *self {
            Self::Constant { m0 } => m0,
            Self::Polynomial { m0, alpha } => {
                if !(alpha > 1.0) || !alpha.is_finite() {
                    return Err(Error::invalid(format!(
                        "polynomial schedule needs alpha > 1, got {alpha}"
                    )));
                }
                m0
            }
        };
        if m0 < 2 {
            return Err(Error::invalid(format!("schedule needs m0 >= 2, got {m0}")));
        }
        Ok(())
    }

    pub fn m0(&self) -> usize {
        match *self {
            Self::Constant { m0 } | Self::Polynomial { m0, .. } => m0,
        }
    }

    pub fn size(&self, t: usize) -> usize {
        match *self {
            Self::Constant { m0 } => m0,
            Self::Polynomial { m0, alpha } => {
                let v = (m0 as f64 * (1.0 + t as f64).powf(alpha)).ceil();
                if v >= usize::MAX as f64 {
                    usize::MAX
                } else {
                    v as usize
                }
            }
        }
    }

    /// Upper bound on `sum_t 1 / m_t`, or `None` when the series diverges.
    pub fn reciprocal_sum_bound(&self) -> Option<f64> {
        match *self {
            Self::Constant { .. } => None,
            Self::Polynomial { m0, alpha } => Some(zeta(alpha) / m0 as f64),
        }
    }
}

pub fn schedule_size(cfg: &ScheduleConfig, t: usize) -> usize {
    cfg.size(t)
}

/// Precondition of the almost-sure convergence result for stable MCEM:
/// `sum_t 1 / m_t < infinity`.
pub fn require_summable_schedule(cfg: &ScheduleConfig) -> Result<()> {
    cfg.validate()?;
    match cfg.reciprocal_sum_bound() {
        Some(_) => Ok(()),
        None => Err(Error::invalid(
            "schedule does not satisfy sum 1/m_t < infinity (constant sample size)",
        )),
    }
}

/// Riemann zeta for `s > 1`: direct sum plus Euler–Maclaurin tail.
fn zeta(s: f64) -> f64 {
    const N: usize = 1000;
    let head: f64 = (1..N).map(|k| (k as f64).powf(-s)).sum();
    let n = N as f64;
    head + n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s) + s * n.powf(-s - 1.0) / 12.0
}

/// Plain MCEM: `theta(t+1) = mcem_step(theta(t), m_t)`.
pub fn run_mcem<M: Model + ?Sized>(
    model: &M,
    theta0: &Theta,
    schedule: &ScheduleConfig,
    stop: &StoppingConfig,
    rng: &mut SimRng,
) -> Result<Trace> {
    schedule.validate()?;
    stop.validate()?;
    check_layout(model, theta0)?;
    let start = Instant::now();
    let mut trace = Trace::new(model.layout());
    trace.records.push(IterationRecord {
        t: 0,
        theta: theta0.clone(),
        loglik: loglik_or_nan(model, theta0),
        m: 0,
        p: 0,
        wall_ms: elapsed_ms(start),
    });
    let mut monitor = StopMonitor::new(*stop);
    let mut theta = theta0.clone();
    for t in 0..stop.max_iter {
        let m = schedule.size(t);
        let next = model.mcem_step(&theta, m, rng)?;
        let done = monitor.update(&theta, &next)?;
        trace.records.push(IterationRecord {
            t: t + 1,
            theta: next.clone(),
            loglik: loglik_or_nan(model, &next),
            m,
            p: 0,
            wall_ms: elapsed_ms(start),
        });
        theta = next;
        if done {
            trace.converged = true;
            break;
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    Log,
}

impl Transform {
    fn apply(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Log => x.ln(),
        }
    }
}

/// Nested boxes `K_p = { theta : |T_i(theta_i) - T_i(theta0_i)| <= r0_i c^p }`.
#[derive(Debug, Clone, PartialEq)]
pub struct StableConfig {
    pub theta0: Theta,
    pub r0: Vec<f64>,
    pub c: f64,
    pub transforms: Vec<Transform>,
}

impl StableConfig {
    pub fn new(theta0: Theta, r0: Vec<f64>, c: f64, transforms: Vec<Transform>) -> Result<Self> {
        let dim = theta0.len();
        if r0.len() != dim || transforms.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: if r0.len() != dim {
                    r0.len()
                } else {
                    transforms.len()
                },
            });
        }
        if r0.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::invalid("stable MCEM half-widths r0 must be > 0"));
        }
        if !(c > 1.0) {
            return Err(Error::invalid("stable MCEM growth factor c must be > 1"));
        }
        for (comp, tr) in theta0.layout().iter().zip(&transforms) {
            if *tr == Transform::Log && comp.kind != ParamKind::Positive {
                return Err(Error::invalid(format!(
                    "log transform on unconstrained component `{}`",
                    comp.name
                )));
            }
        }
        Ok(Self {
            theta0,
            r0,
            c,
            transforms,
        })
    }

    /// Same half-width in every coordinate; log scale for positive components.
    pub fn uniform(theta0: Theta, r0: f64, c: f64) -> Result<Self> {
        let transforms = theta0
            .layout()
            .iter()
            .map(|comp| match comp.kind {
                ParamKind::Positive => Transform::Log,
                ParamKind::Unconstrained => Transform::Identity,
            })
            .collect();
        let dim = theta0.len();
        Self::new(theta0, vec![r0; dim], c, transforms)
    }
}

/// Membership of `theta` in the closed box `K_p`.
pub fn in_k_set(theta: &Theta, p: usize, cfg: &StableConfig) -> bool {
    let growth = cfg.c.powf(p as f64);
    theta
        .values()
        .iter()
        .zip(cfg.theta0.values())
        .zip(cfg.r0.iter().zip(&cfg.transforms))
        .all(|((&x, &x0), (&r, &tr))| {
            let d = (tr.apply(x) - tr.apply(x0)).abs();
            d.is_finite() && d <= r * growth
        })
}

/// Stable MCEM: an update that leaves `K_{p_t}` sends the iterate back to
/// `theta0` and increments the reinitialization count `p`.
pub fn stable_mcem_run<M: Model + ?Sized>(
    model: &M,
    cfg: &StableConfig,
    schedule: &ScheduleConfig,
    stop: &StoppingConfig,
    rng: &mut SimRng,
) -> Result<Trace> {
    schedule.validate()?;
    stop.validate()?;
    let theta0 = &cfg.theta0;
    check_layout(model, theta0)?;
    let start = Instant::now();
    let mut trace = Trace::new(model.layout());
    trace.records.push(IterationRecord {
        t: 0,
        theta: theta0.clone(),
        loglik: loglik_or_nan(model, theta0),
        m: 0,
        p: 0,
        wall_ms: elapsed_ms(start),
    });
    let mut monitor = StopMonitor::new(*stop);
    let mut theta = theta0.clone();
    let mut p = 0usize;
    for t in 0..stop.max_iter {
        let m = schedule.size(t);
        let proposal = model.mcem_step(&theta, m, rng)?;
        let next = if in_k_set(&proposal, p, cfg) {
            proposal
        } else {
            p += 1;
            theta0.clone()
        };
        let done = monitor.update(&theta, &next)?;
        trace.records.push(IterationRecord {
            t: t + 1,
            theta: next.clone(),
            loglik: loglik_or_nan(model, &next),
            m,
            p,
            wall_ms: elapsed_ms(start),
        });
        theta = next;
        if done {
            trace.converged = true;
            break;
        }
    }
    Ok(trace)
}

/// Settings for the replicate-based adaptive sample-size rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveConfig {
    pub batches: usize,
    pub conf: f64,
    pub growth: f64,
    pub m_start: usize,
    pub m_cap: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            batches: 10,
            conf: 0.95,
            growth: 1.5,
            m_start: 1000,
            m_cap: 1_000_000,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batches < 2 {
            return Err(Error::invalid("adaptive rule needs at least 2 batches"));
        }
        if !(self.conf > 0.0 && self.conf < 1.0) {
            return Err(Error::invalid("confidence level must lie in (0, 1)"));
        }
        if !(self.growth > 1.0) {
            return Err(Error::invalid("growth multiplier must be > 1"));
        }
        if self.m_start > self.m_cap {
            return Err(Error::invalid("m_start must not exceed m_cap"));
        }
        if self.m_start < 2 * self.batches {
            return Err(Error::invalid("m_start must be at least 2 * batches"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptStep {
    pub theta_next: Theta,
    pub m_next: usize,
    /// Every component of the current value lies inside its interval around
    /// the replicate mean: the step is indistinguishable from Monte Carlo noise.
    pub swamped: bool,
    /// Swamped while already at `m_cap`.
    pub cap_reached: bool,
}

/// One update with the replicate swamping test.
///
/// `batches` independent sub-updates with `m / batches` draws give a
/// componentwise normal interval `mean ± z se` for the update; if the current
/// value lies inside every interval the sample size grows by `growth`.
pub fn replicate_adapt<M: Model + ?Sized>(
    model: &M,
    theta: &Theta,
    m: usize,
    cfg: &AdaptiveConfig,
    rng: &mut SimRng,
) -> Result<AdaptStep> {
    if cfg.batches < 2 {
        return Err(Error::invalid("adaptive rule needs at least 2 batches"));
    }
    if m < 2 * cfg.batches {
        return Err(Error::invalid(format!(
            "m = {m} is below 2 * batches = {}",
            2 * cfg.batches
        )));
    }
    let sub_m = m / cfg.batches;
    let mut subs: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.batches); theta.len()];
    for _ in 0..cfg.batches {
        let upd = model.mcem_step(theta, sub_m, rng)?;
        for (col, v) in subs.iter_mut().zip(upd.values()) {
            col.push(*v);
        }
    }
    let z = two_sided_z(cfg.conf);
    let b = cfg.batches as f64;
    let swamped = subs.iter().zip(theta.values()).all(|(col, &cur)| {
        let (mean, var) = mean_var(col);
        let se = (var / b).sqrt();
        (cur - mean).abs() <= z * se
    });
    let m_next = if swamped {
        ((m as f64 * cfg.growth).ceil() as usize)
            .min(cfg.m_cap)
            .max(m)
    } else {
        m
    };
    let cap_reached = swamped && m >= cfg.m_cap;
    let theta_next = model.mcem_step(theta, m, rng)?;
    Ok(AdaptStep {
        theta_next,
        m_next,
        swamped,
        cap_reached,
    })
}

/// MCEM with the sample size driven by [`replicate_adapt`].
pub fn run_mcem_adaptive<M: Model + ?Sized>(
    model: &M,
    theta0: &Theta,
    cfg: &AdaptiveConfig,
    stop: &StoppingConfig,
    rng: &mut SimRng,
) -> Result<Trace> {
    cfg.validate()?;
    stop.validate()?;
    check_layout(model, theta0)?;
    let start = Instant::now();
    let mut trace = Trace::new(model.layout());
    trace.records.push(IterationRecord {
        t: 0,
        theta: theta0.clone(),
        loglik: loglik_or_nan(model, theta0),
        m: 0,
        p: 0,
        wall_ms: elapsed_ms(start),
    });
    let mut monitor = StopMonitor::new(*stop);
    let mut theta = theta0.clone();
    let mut m = cfg.m_start;
    for t in 0..stop.max_iter {
        let step = replicate_adapt(model, &theta, m, cfg, rng)?;
        if step.cap_reached {
            trace.warnings.push(format!(
                "iteration {}: swamped at m_cap = {}",
                t + 1,
                cfg.m_cap
            ));
        }
        let done = monitor.update(&theta, &step.theta_next)?;
        trace.records.push(IterationRecord {
            t: t + 1,
            theta: step.theta_next.clone(),
            loglik: loglik_or_nan(model, &step.theta_next),
            m,
            p: 0,
            wall_ms: elapsed_ms(start),
        });
        theta = step.theta_next;
        m = step.m_next;
        if done {
            trace.converged = true;
            break;
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AscentDecision {
    Accept,
    /// Not enough evidence of ascent; the caller should append draws.
    Extend,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentCheck {
    pub decision: AscentDecision,
    /// Monte Carlo estimate of `Q(prop | theta) - Q(theta | theta)`.
    pub delta_q: f64,
    pub se: f64,
    pub lower_bound: f64,
}

/// Ascent-based check: accept `theta_prop` when the lower `conf` bound of the
/// estimated Q-increase is positive.
pub fn ascent_check<M: Model + ?Sized>(
    model: &M,
    theta: &Theta,
    theta_prop: &Theta,
    draws: &Draws,
    conf: f64,
) -> Result<AscentCheck> {
    if draws.m < 10 {
        return Err(Error::invalid("ascent check needs at least 10 draws"));
    }
    if !(conf > 0.0 && conf < 1.0) {
        return Err(Error::invalid("confidence level must lie in (0, 1)"));
    }
    let diffs: Vec<f64> = draws
        .rows()
        .map(|u| model.complete_loglik(theta_prop, u) - model.complete_loglik(theta, u))
        .collect();
    let (delta_q, _) = mean_var(&diffs);
    let se = match draws.sampling {
        Sampling::Iid => iid_se(&diffs),
        Sampling::Markov => batch_means_se(&diffs),
    };
    let z = crate::numeric::norm_quantile(conf);
    let lower_bound = delta_q - z * se;
    let decision = if lower_bound > 0.0 {
        AscentDecision::Accept
    } else {
        AscentDecision::Extend
    };
    Ok(AscentCheck {
        decision,
        delta_q,
        se,
        lower_bound,
    })
}
