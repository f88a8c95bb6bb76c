//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Every accepted key is listed in [`KEYS`] together with its default.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use mcem::{AdaptiveConfig, ScheduleConfig, StoppingConfig};

pub struct KeySpec {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

/// Every key the parser accepts. `--help` is generated from this table.
pub const KEYS: &[KeySpec] = &[
    KeySpec {
        name: "model",
        default: "lmm",
        help: "lmm | glmm",
    },
    KeySpec {
        name: "algorithm",
        default: "em",
        help: "em | mcem | stable-mcem | mcem-adaptive | em-gradient",
    },
    KeySpec {
        name: "dataset",
        default: "auto",
        help: "builtin-bulls | synthetic | <csv path>; auto = bulls for lmm, synthetic for glmm",
    },
    KeySpec {
        name: "data_seed",
        default: "3",
        help: "seed of the synthetic data generator",
    },
    KeySpec {
        name: "groups",
        default: "10",
        help: "synthetic data: number of groups",
    },
    KeySpec {
        name: "group_size",
        default: "15",
        help: "synthetic data: observations per group",
    },
    KeySpec {
        name: "truth",
        default: "auto",
        help: "synthetic data: true parameters, comma separated; auto = reference MLE (BULLS_MLE or BENCHMARK_MLE)",
    },
    KeySpec {
        name: "theta0",
        default: "auto",
        help: "starting value, comma separated; auto = 55,45,260 (lmm) or 2,1 (glmm)",
    },
    KeySpec {
        name: "seed",
        default: "-",
        help: "64-bit seed; required for every Monte Carlo command",
    },
    KeySpec {
        name: "schedule",
        default: "constant",
        help: "constant | polynomial: m_t = ceil(m0 (1+t)^alpha)",
    },
    KeySpec {
        name: "m0",
        default: "10000",
        help: "Monte Carlo sample size at t = 0",
    },
    KeySpec {
        name: "alpha",
        default: "2",
        help: "polynomial schedule exponent, must exceed 1",
    },
    KeySpec {
        name: "delta",
        default: "0.001",
        help: "stopping rule denominator offset",
    },
    KeySpec {
        name: "epsilon",
        default: "1e-6",
        help: "stopping rule relative-change tolerance",
    },
    KeySpec {
        name: "consecutive",
        default: "3",
        help: "iterations the stopping rule must hold in a row",
    },
    KeySpec {
        name: "max_iter",
        default: "500",
        help: "iteration cap; hitting it is a convergence failure",
    },
    KeySpec {
        name: "iterations",
        default: "0",
        help: "run exactly this many updates and skip the stopping rule; 0 = off",
    },
    KeySpec {
        name: "r0",
        default: "0.5",
        help: "stable MCEM: half-width of K_0 in transformed units",
    },
    KeySpec {
        name: "c",
        default: "2",
        help: "stable MCEM: growth factor of the nested sets",
    },
    KeySpec {
        name: "batches",
        default: "10",
        help: "adaptive MCEM: replicate sub-updates",
    },
    KeySpec {
        name: "conf",
        default: "0.95",
        help: "adaptive MCEM: interval confidence level",
    },
    KeySpec {
        name: "growth",
        default: "1.5",
        help: "adaptive MCEM: sample size multiplier when swamped",
    },
    KeySpec {
        name: "m_start",
        default: "1000",
        help: "adaptive MCEM: initial sample size",
    },
    KeySpec {
        name: "m_cap",
        default: "1000000",
        help: "adaptive MCEM: sample size ceiling",
    },
    KeySpec {
        name: "burnin",
        default: "500",
        help: "glmm: discarded sweeps per chain",
    },
    KeySpec {
        name: "nodes",
        default: "20",
        help: "glmm: Gauss-Hermite nodes for the likelihood",
    },
    KeySpec {
        name: "out",
        default: "auto",
        help: "output path; auto = trace.csv (run), <kind>.csv (experiment), data.csv (gen-data)",
    },
    KeySpec {
        name: "theta_star",
        default: "auto",
        help: "experiments: reference maximizer; auto = computed MLE",
    },
    KeySpec {
        name: "hit_m",
        default: "100,1000,10000",
        help: "hit-prob: sample sizes, one row each",
    },
    KeySpec {
        name: "t0",
        default: "30",
        help: "hit-prob: updates per run",
    },
    KeySpec {
        name: "hit_epsilon",
        default: "0.5",
        help: "hit-prob: standardized ball radius",
    },
    KeySpec {
        name: "runs",
        default: "50",
        help: "hit-prob: independent runs per sample size",
    },
    KeySpec {
        name: "rate_window",
        default: "10",
        help: "rate: number of trailing ratios analysed",
    },
    KeySpec {
        name: "scaling_m",
        default: "100,1000,10000,100000",
        help: "mcem-error-scaling: sample sizes, one row each",
    },
    KeySpec {
        name: "scaling_seeds",
        default: "30",
        help: "mcem-error-scaling: replicates per sample size",
    },
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub key: Option<String>,
    pub lines: Vec<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(key: &str, line: usize, message: impl Into<String>) -> Self {
        Self {
            key: Some(key.to_string()),
            lines: vec![line],
            message: message.into(),
        }
    }

    pub fn missing(key: &str, message: impl Into<String>) -> Self {
        Self {
            key: Some(key.to_string()),
            lines: Vec::new(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.lines.as_slice() {
            [] => {}
            [l] => write!(f, "line {l}: ")?,
            ls => {
                let s: Vec<String> = ls.iter().map(|l| l.to_string()).collect();
                write!(f, "lines {}: ", s.join(" and "))?
            }
        }
        if let Some(k) = &self.key {
            write!(f, "key `{k}`: ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Lmm,
    Glmm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Em,
    Mcem,
    StableMcem,
    McemAdaptive,
    EmGradient,
}

impl Algorithm {
    pub fn is_monte_carlo(self) -> bool {
        matches!(self, Self::Mcem | Self::StableMcem | Self::McemAdaptive)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Em => "em",
            Self::Mcem => "mcem",
            Self::StableMcem => "stable-mcem",
            Self::McemAdaptive => "mcem-adaptive",
            Self::EmGradient => "em-gradient",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSpec {
    BuiltinBulls,
    Synthetic,
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub algorithm: Algorithm,
    pub dataset: DatasetSpec,
    pub data_seed: u64,
    pub groups: usize,
    pub group_size: usize,
    pub truth: Option<Vec<f64>>,
    pub theta0: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub schedule: ScheduleConfig,
    pub stop: StoppingConfig,
    /// Fixed number of updates, bypassing the stopping rule.
    pub iterations: Option<usize>,
    pub r0: f64,
    pub c: f64,
    pub adaptive: AdaptiveConfig,
    pub burnin: usize,
    pub nodes: usize,
    pub out: Option<PathBuf>,
    pub theta_star: Option<Vec<f64>>,
    pub hit_m: Vec<usize>,
    pub t0: usize,
    pub hit_epsilon: f64,
    pub runs: usize,
    pub rate_window: usize,
    pub scaling_m: Vec<usize>,
    pub scaling_seeds: usize,
}

impl RunConfig {
    /// Stopping settings actually used by a run.
    pub fn stopping(&self) -> StoppingConfig {
        match self.iterations {
            Some(n) => StoppingConfig::iterations(n),
            None => self.stop,
        }
    }

    pub fn require_seed(&self) -> Result<u64, ConfigError> {
        self.seed.ok_or_else(|| {
            ConfigError::missing(
                "seed",
                "required for Monte Carlo commands (set it or pass --seed)",
            )
        })
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        parse_config("").expect("defaults are valid")
    }
}

struct Raw<'a> {
    values: BTreeMap<&'a str, (&'a str, usize)>,
}

impl<'a> Raw<'a> {
    fn get(&self, key: &'static str) -> (&'a str, usize) {
        self.values.get(key).copied().unwrap_or_else(|| {
            let spec = KEYS.iter().find(|k| k.name == key).expect("known key");
            (spec.default, 0)
        })
    }

    fn parse<T: std::str::FromStr>(&self, key: &'static str, what: &str) -> Result<T, ConfigError> {
        let (v, line) = self.get(key);
        v.parse()
            .map_err(|_| ConfigError::at(key, line, format!("expected {what}, found `{v}`")))
    }

    fn auto_list<T: std::str::FromStr>(
        &self,
        key: &'static str,
        what: &str,
    ) -> Result<Option<Vec<T>>, ConfigError> {
        let (v, line) = self.get(key);
        if v == "auto" {
            return Ok(None);
        }
        list(v).map(Some).map_err(|_| {
            ConfigError::at(
                key,
                line,
                format!("expected a comma-separated list of {what}, found `{v}`"),
            )
        })
    }

    fn list<T: std::str::FromStr>(
        &self,
        key: &'static str,
        what: &str,
    ) -> Result<Vec<T>, ConfigError> {
        let (v, line) = self.get(key);
        list(v).map_err(|_| {
            ConfigError::at(
                key,
                line,
                format!("expected a comma-separated list of {what}, found `{v}`"),
            )
        })
    }

    fn fail(&self, key: &'static str, message: impl Into<String>) -> ConfigError {
        ConfigError::at(key, self.get(key).1, message)
    }
}

fn list<T: std::str::FromStr>(v: &str) -> Result<Vec<T>, ()> {
    let items: Vec<&str> = v.split(',').map(str::trim).collect();
    if items.iter().any(|s| s.is_empty()) {
        return Err(());
    }
    items.iter().map(|s| s.parse().map_err(|_| ())).collect()
}

/// Parses and validates a configuration. Keys not present take the defaults
/// in [`KEYS`]. Errors carry the key and line number (0 for a default).
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut values: BTreeMap<&str, (&str, usize)> = BTreeMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError {
                key: None,
                lines: vec![lineno],
                message: format!("expected `key = value`, found `{line}`"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        let Some(spec) = KEYS.iter().find(|k| k.name == key) else {
            return Err(ConfigError::at(key, lineno, "unknown key"));
        };
        if value.is_empty() {
            return Err(ConfigError::at(key, lineno, "missing value"));
        }
        if let Some(&(_, first)) = values.get(spec.name) {
            return Err(ConfigError {
                key: Some(key.to_string()),
                lines: vec![first, lineno],
                message: "duplicate key".into(),
            });
        }
        values.insert(spec.name, (value, lineno));
    }
    build(&Raw { values })
}

fn build(raw: &Raw) -> Result<RunConfig, ConfigError> {
    let model = match raw.get("model").0 {
        "lmm" => ModelKind::Lmm,
        "glmm" => ModelKind::Glmm,
        other => return Err(raw.fail("model", format!("expected lmm or glmm, found `{other}`"))),
    };
    let algorithm = match raw.get("algorithm").0 {
        "em" => Algorithm::Em,
        "mcem" => Algorithm::Mcem,
        "stable-mcem" => Algorithm::StableMcem,
        "mcem-adaptive" => Algorithm::McemAdaptive,
        "em-gradient" => Algorithm::EmGradient,
        other => return Err(raw.fail("algorithm", format!("unknown algorithm `{other}`"))),
    };
    let dataset = match (raw.get("dataset").0, model) {
        ("auto", ModelKind::Lmm) | ("builtin-bulls", ModelKind::Lmm) => DatasetSpec::BuiltinBulls,
        ("builtin-bulls", ModelKind::Glmm) => {
            return Err(raw.fail("dataset", "builtin-bulls is a linear mixed model data set"))
        }
        ("auto", ModelKind::Glmm) | ("synthetic", _) => DatasetSpec::Synthetic,
        (path, _) => DatasetSpec::Path(PathBuf::from(path)),
    };
    let dim = match model {
        ModelKind::Lmm => 3,
        ModelKind::Glmm => 2,
    };
    let check_dim = |key: &'static str, v: &Option<Vec<f64>>| -> Result<(), ConfigError> {
        match v {
            Some(v) if v.len() != dim => {
                Err(raw.fail(key, format!("expected {dim} components, found {}", v.len())))
            }
            _ => Ok(()),
        }
    };
    let truth = raw.auto_list("truth", "numbers")?;
    check_dim("truth", &truth)?;
    let theta0 = raw.auto_list("theta0", "numbers")?;
    check_dim("theta0", &theta0)?;
    let theta_star = raw.auto_list("theta_star", "numbers")?;
    check_dim("theta_star", &theta_star)?;

    let seed = match raw.get("seed").0 {
        "-" => None,
        _ => Some(raw.parse::<u64>("seed", "an unsigned 64-bit integer")?),
    };

    let m0: usize = raw.parse("m0", "a positive integer")?;
    let alpha: f64 = raw.parse("alpha", "a number")?;
    let schedule = match raw.get("schedule").0 {
        "constant" => ScheduleConfig::constant(m0).map_err(|e| raw.fail("m0", e.to_string()))?,
        "polynomial" => {
            if !(alpha > 1.0) {
                return Err(raw.fail(
                    "alpha",
                    format!("must exceed 1 for a polynomial schedule, found {alpha}"),
                ));
            }
            ScheduleConfig::polynomial(m0, alpha).map_err(|e| raw.fail("m0", e.to_string()))?
        }
        other => {
            return Err(raw.fail(
                "schedule",
                format!("expected constant or polynomial, found `{other}`"),
            ))
        }
    };

    let stop = StoppingConfig {
        delta: raw.parse("delta", "a number")?,
        epsilon: raw.parse("epsilon", "a number")?,
        consecutive: raw.parse("consecutive", "a positive integer")?,
        max_iter: raw.parse("max_iter", "a positive integer")?,
    };
    stop.validate().map_err(|e| {
        let key = if !(stop.delta > 0.0) {
            "delta"
        } else if !(stop.epsilon > 0.0) {
            "epsilon"
        } else if stop.consecutive < 1 {
            "consecutive"
        } else {
            "max_iter"
        };
        raw.fail(key, e.to_string())
    })?;
    let iterations = match raw.parse::<usize>("iterations", "a non-negative integer")? {
        0 => None,
        n => Some(n),
    };

    let r0: f64 = raw.parse("r0", "a number")?;
    if !(r0 > 0.0) {
        return Err(raw.fail("r0", "must be > 0"));
    }
    let c: f64 = raw.parse("c", "a number")?;
    if !(c > 1.0) {
        return Err(raw.fail("c", "must be > 1"));
    }

    let adaptive = AdaptiveConfig {
        batches: raw.parse("batches", "a positive integer")?,
        conf: raw.parse("conf", "a number")?,
        growth: raw.parse("growth", "a number")?,
        m_start: raw.parse("m_start", "a positive integer")?,
        m_cap: raw.parse("m_cap", "a positive integer")?,
    };
    adaptive.validate().map_err(|e| {
        let key = if adaptive.batches < 2 {
            "batches"
        } else if !(adaptive.conf > 0.0 && adaptive.conf < 1.0) {
            "conf"
        } else if !(adaptive.growth > 1.0) {
            "growth"
        } else if adaptive.m_cap < adaptive.m_start {
            "m_cap"
        } else {
            "m_start"
        };
        raw.fail(key, e.to_string())
    })?;

    let burnin = raw.parse("burnin", "a non-negative integer")?;
    let nodes: usize = raw.parse("nodes", "a positive integer")?;
    if nodes < 10 {
        return Err(raw.fail("nodes", "quadrature needs at least 10 nodes"));
    }

    let out = match raw.get("out").0 {
        "auto" => None,
        p => Some(PathBuf::from(p)),
    };

    let positive = |key: &'static str| -> Result<usize, ConfigError> {
        let v: usize = raw.parse(key, "a positive integer")?;
        if v == 0 {
            return Err(raw.fail(key, "must be >= 1"));
        }
        Ok(v)
    };
    let sizes = |key: &'static str| -> Result<Vec<usize>, ConfigError> {
        let v: Vec<usize> = raw.list(key, "integers")?;
        if v.iter().any(|&m| m < 2) {
            return Err(raw.fail(key, "sample sizes must be >= 2"));
        }
        Ok(v)
    };
    let hit_epsilon: f64 = raw.parse("hit_epsilon", "a number")?;
    if !(hit_epsilon > 0.0) {
        return Err(raw.fail("hit_epsilon", "must be > 0"));
    }
    let rate_window = raw.parse("rate_window", "an integer")?;
    if rate_window < 3 {
        return Err(raw.fail("rate_window", "must be >= 3"));
    }

    Ok(RunConfig {
        model,
        algorithm,
        dataset,
        data_seed: raw.parse("data_seed", "an unsigned 64-bit integer")?,
        groups: positive("groups")?,
        group_size: positive("group_size")?,
        truth,
        theta0,
        seed,
        schedule,
        stop,
        iterations,
        r0,
        c,
        adaptive,
        burnin,
        nodes,
        out,
        theta_star,
        hit_m: sizes("hit_m")?,
        t0: positive("t0")?,
        hit_epsilon,
        runs: positive("runs")?,
        rate_window,
        scaling_m: sizes("scaling_m")?,
        scaling_seeds: positive("scaling_seeds")?,
    })
}

/// The key table as printed by `--help`.
pub fn keys_help() -> String {
    let width = KEYS.iter().map(|k| k.name.len()).max().unwrap_or(0);
    let dwidth = KEYS.iter().map(|k| k.default.len()).max().unwrap_or(0);
    let mut s = String::from("Config keys (`key = value`, one per line, `#` comments):\n");
    for k in KEYS {
        s.push_str(&format!(
            "  {:<width$}  {:<dwidth$}  {}\n",
            k.name, k.default, k.help
        ));
    }
    s
}
