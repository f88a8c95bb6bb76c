//! Model-agnostic EM machinery: parameter vectors, the model contract,
//! traces, stopping rules and the deterministic EM driver.

use std::fmt;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Random stream used by every stochastic routine in the crate.
pub type SimRng = ChaCha8Rng;

/// Seeded stream `stream` of the generator family identified by `seed`.
///
/// Distinct stream indices give independent, reproducible sequences; used to
/// split work across replicate runs.
pub fn rng_stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Means and regression coefficients.
    Unconstrained,
    /// Variance components, strictly positive.
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub name: &'static str,
    pub kind: ParamKind,
}

impl Component {
    pub const fn unconstrained(name: &'static str) -> Self {
        Self {
            name,
            kind: ParamKind::Unconstrained,
        }
    }

    pub const fn positive(name: &'static str) -> Self {
        Self {
            name,
            kind: ParamKind::Positive,
        }
    }
}

/// A named parameter vector whose layout is fixed by the model.
#[derive(Clone, PartialEq)]
pub struct Theta {
    layout: &'static [Component],
    values: Vec<f64>,
}

impl Theta {
    pub fn new(layout: &'static [Component], values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                expected: layout.len(),
                found: values.len(),
            });
        }
        for (c, &v) in layout.iter().zip(&values) {
            let ok = match c.kind {
                ParamKind::Unconstrained => v.is_finite(),
                ParamKind::Positive => v.is_finite() && v > 0.0,
            };
            if !ok {
                return Err(Error::Domain {
                    component: c.name,
                    value: v,
                });
            }
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &'static [Component] {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.layout.iter().map(|c| c.name)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.layout
            .iter()
            .position(|c| c.name == name)
            .map(|i| self.values[i])
    }

    /// Copy of `self` with new values, revalidated.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Theta::new(self.layout, values)
    }

    /// Euclidean distance between two parameter vectors of the same layout.
    pub fn distance(&self, other: &Theta) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl fmt::Debug for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut m = f.debug_map();
        for (c, v) in self.layout.iter().zip(&self.values) {
            m.entry(&c.name, v);
        }
        m.finish()
    }
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (c, v)) in self.layout.iter().zip(&self.values).enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{}={}", c.name, v)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Exact independent draws from the conditional distribution.
    Iid,
    /// Successive states of an ergodic Markov chain.
    Markov,
}

/// Monte Carlo E-step sample: `m` draws of the `q` random effects, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Draws {
    pub m: usize,
    pub q: usize,
    pub values: Vec<f64>,
    pub sampling: Sampling,
}

impl Draws {
    pub fn new(m: usize, q: usize, values: Vec<f64>, sampling: Sampling) -> Result<Self> {
        if values.len() != m * q {
            return Err(Error::DimensionMismatch {
                expected: m * q,
                found: values.len(),
            });
        }
        Ok(Self {
            m,
            q,
            values,
            sampling,
        })
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.q..(k + 1) * self.q]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.q.max(1))
    }
}

/// Capabilities a two-stage hierarchical model offers to the drivers.
///
/// A model owns its data. The Monte Carlo update is `maximize(draw(..))`;
/// models override `mcem_step` only when they can fuse the two.
pub trait Model: Sync {
    fn layout(&self) -> &'static [Component];

    /// Observed-data log-likelihood, when the model can evaluate it.
    fn loglik(&self, _theta: &Theta) -> Option<f64> {
        None
    }

    /// Closed-form EM update, when the E-step is tractable.
    fn em_step(&self, _theta: &Theta) -> Result<Theta> {
        Err(Error::Capability("em_step"))
    }

    /// Complete-data log-likelihood `log f(y, u; theta)`.
    fn complete_loglik(&self, theta: &Theta, u: &[f64]) -> f64;

    /// Simulate `m` draws from `h(u | y; theta)`.
    fn draw(&self, theta: &Theta, m: usize, rng: &mut SimRng) -> Result<Draws>;

    /// Maximize the Monte Carlo Q-function built from `draws`.
    fn maximize(&self, current: &Theta, draws: &Draws) -> Result<Theta>;

    fn mcem_step(&self, theta: &Theta, m: usize, rng: &mut SimRng) -> Result<Theta> {
        let draws = self.draw(theta, m, rng)?;
        self.maximize(theta, &draws)
    }

    fn theta(&self, values: Vec<f64>) -> Result<Theta> {
        Theta::new(self.layout(), values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub t: usize,
    pub theta: Theta,
    /// NaN when the model cannot evaluate its likelihood.
    pub loglik: f64,
    /// Monte Carlo sample size that produced this iterate (0 for EM and the start).
    pub m: usize,
    /// Cumulative reinitializations (stable MCEM only).
    pub p: usize,
    pub wall_ms: f64,
}

/// Sequence of iterates. Record `t = 0` is the starting value.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub names: Vec<&'static str>,
    pub records: Vec<IterationRecord>,
    /// Whether the stopping rule fired before `max_iter`.
    pub converged: bool,
    /// Free-form notices raised during the run (e.g. sample-size cap reached).
    pub warnings: Vec<String>,
}

impl Trace {
    pub fn new(layout: &'static [Component]) -> Self {
        Self {
            names: layout.iter().map(|c| c.name).collect(),
            records: Vec::new(),
            converged: false,
            warnings: Vec::new(),
        }
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn final_theta(&self) -> Option<&Theta> {
        self.records.last().map(|r| &r.theta)
    }

    pub fn logliks(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loglik).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of updates performed (records after the start).
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingConfig {
    pub delta: f64,
    pub epsilon: f64,
    pub consecutive: usize,
    pub max_iter: usize,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        Self {
            delta: 1e-3,
            epsilon: 1e-6,
            consecutive: 3,
            max_iter: 500,
        }
    }
}

impl StoppingConfig {
    pub fn new(delta: f64, epsilon: f64, consecutive: usize, max_iter: usize) -> Result<Self> {
        let cfg = Self {
            delta,
            epsilon,
            consecutive,
            max_iter,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Run exactly `n` updates: the relative-change rule can only fire on
    /// bit-identical consecutive iterates.
    pub fn iterations(n: usize) -> Self {
        Self {
            delta: 1e-3,
            epsilon: f64::MIN_POSITIVE,
            consecutive: 3,
            max_iter: n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::invalid("stopping delta must be > 0"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("stopping epsilon must be > 0"));
        }
        if self.consecutive < 1 {
            return Err(Error::invalid("stopping consecutive must be >= 1"));
        }
        if self.max_iter < 1 {
            return Err(Error::invalid("max_iter must be >= 1"));
        }
        Ok(())
    }
}

/// Largest componentwise relative change `|a_i - b_i| / (|b_i| + delta)`.
pub fn relative_change(prev: &[f64], curr: &[f64], delta: f64) -> Result<f64> {
    if prev.len() != curr.len() {
        return Err(Error::DimensionMismatch {
            expected: prev.len(),
            found: curr.len(),
        });
    }
    Ok(prev
        .iter()
        .zip(curr)
        .map(|(p, c)| (c - p).abs() / (c.abs() + delta))
        .fold(0.0, f64::max))
}

/// `max_i |θ_i(t) − θ_i(t−1)| / (|θ_i(t)| + δ) < ε`.
pub fn stopping_relative_change(
    prev: &[f64],
    curr: &[f64],
    delta: f64,
    epsilon: f64,
) -> Result<bool> {
    if !(delta > 0.0 && epsilon > 0.0) {
        return Err(Error::invalid("delta and epsilon must be > 0"));
    }
    Ok(relative_change(prev, curr, delta)? < epsilon)
}

/// True iff the last `k` entries of `history` are all true.
pub fn stopping_consecutive(history: &[bool], k: usize) -> bool {
    k >= 1 && history.len() >= k && history[history.len() - k..].iter().all(|&b| b)
}

/// Tracks the stopping rule across iterations.
#[derive(Debug, Clone)]
pub(crate) struct StopMonitor {
    cfg: StoppingConfig,
    history: Vec<bool>,
}

impl StopMonitor {
    pub(crate) fn new(cfg: StoppingConfig) -> Self {
        Self {
            cfg,
            history: Vec::new(),
        }
    }

    /// Record one transition; returns true when the run should stop.
    pub(crate) fn update(&mut self, prev: &Theta, curr: &Theta) -> Result<bool> {
        let met = stopping_relative_change(
            prev.values(),
            curr.values(),
            self.cfg.delta,
            self.cfg.epsilon,
        )?;
        self.history.push(met);
        Ok(stopping_consecutive(&self.history, self.cfg.consecutive))
    }
}

pub(crate) fn loglik_or_nan<M: Model + ?Sized>(model: &M, theta: &Theta) -> f64 {
    model.loglik(theta).unwrap_or(f64::NAN)
}

/// Deterministic EM: iterate `em_step` until the stopping rule holds for
/// `stop.consecutive` successive iterations or `stop.max_iter` updates.
pub fn run_em<M: Model + ?Sized>(
    model: &M,
    theta0: &Theta,
    stop: &StoppingConfig,
) -> Result<Trace> {
    run_map(model, theta0, stop, |theta| model.em_step(theta))
}

/// Iterates an arbitrary deterministic update map under the EM stopping rule,
/// recording the model log-likelihood along the way.
pub fn run_map<M, F>(model: &M, theta0: &Theta, stop: &StoppingConfig, mut map: F) -> Result<Trace>
where
    M: Model + ?Sized,
    F: FnMut(&Theta) -> Result<Theta>,
{
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
    for t in 1..=stop.max_iter {
        let next = map(&theta)?;
        let done = monitor.update(&theta, &next)?;
        trace.records.push(IterationRecord {
            t,
            theta: next.clone(),
            loglik: loglik_or_nan(model, &next),
            m: 0,
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

pub(crate) fn check_layout<M: Model + ?Sized>(model: &M, theta: &Theta) -> Result<()> {
    if theta.layout() != model.layout() {
        return Err(Error::invalid(format!(
            "parameter layout {:?} does not match the model",
            theta.names().collect::<Vec<_>>()
        )));
    }
    Ok(())
}

pub(crate) fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    static LAYOUT: [Component; 2] = [Component::unconstrained("a"), Component::positive("b")];

    #[test]
    fn theta_rejects_nonpositive_variance() {
        let err = Theta::new(&LAYOUT, vec![1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Domain { component: "b", .. }));
        assert!(Theta::new(&LAYOUT, vec![-3.0, 0.1]).is_ok());
        assert!(matches!(
            Theta::new(&LAYOUT, vec![1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn relative_change_examples() {
        assert!(stopping_relative_change(&[1.0, 2.0], &[1.0, 2.0], 0.5, 1e-12).unwrap());
        assert!(!stopping_relative_change(&[1.0, 1.0], &[1.1, 1.0], 0.001, 0.05).unwrap());
        assert!(stopping_relative_change(&[1.0, 1.0], &[1.1, 1.0], 0.001, 0.10).unwrap());
        let r = relative_change(&[1.0, 1.0], &[1.1, 1.0], 0.001).unwrap();
        assert!((r - 0.1 / 1.101).abs() < 1e-12);
        assert!(stopping_relative_change(&[1.0], &[1.0, 2.0], 0.1, 0.1).is_err());
    }

    #[test]
    fn consecutive_examples() {
        assert!(stopping_consecutive(&[true, true, true], 3));
        assert!(!stopping_consecutive(&[true, false, true, true], 3));
        assert!(!stopping_consecutive(&[], 1));
        assert!(stopping_consecutive(&[false, true], 1));
    }

    #[test]
    fn model_without_em_step_reports_capability() {
        struct NoEm;
        impl Model for NoEm {
            fn layout(&self) -> &'static [Component] {
                &LAYOUT
            }
            fn complete_loglik(&self, _: &Theta, _: &[f64]) -> f64 {
                0.0
            }
            fn draw(&self, _: &Theta, m: usize, _: &mut SimRng) -> Result<Draws> {
                Draws::new(m, 0, vec![], Sampling::Iid)
            }
            fn maximize(&self, current: &Theta, _: &Draws) -> Result<Theta> {
                Ok(current.clone())
            }
        }
        let theta = Theta::new(&LAYOUT, vec![0.0, 1.0]).unwrap();
        let err = run_em(&NoEm, &theta, &StoppingConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Capability("em_step")));
    }

    proptest! {
        #[test]
        fn relative_change_ignores_appended_equal_components(
            prev in proptest::collection::vec(-1e3f64..1e3, 1..6),
            shift in proptest::collection::vec(-1.0f64..1.0, 6),
            extra in proptest::collection::vec(-1e3f64..1e3, 0..5),
            delta in 1e-4f64..1.0,
            eps in 1e-6f64..1.0,
        ) {
            let curr: Vec<f64> = prev.iter().zip(&shift).map(|(a, s)| a + s).collect();
            let base = stopping_relative_change(&prev, &curr, delta, eps).unwrap();
            let mut p2 = prev.clone();
            let mut c2 = curr.clone();
            p2.extend(&extra);
            c2.extend(&extra);
            prop_assert_eq!(base, stopping_relative_change(&p2, &c2, delta, eps).unwrap());
        }
    }
}
