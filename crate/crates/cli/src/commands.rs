use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mcem::diagnostics::{
    em_jacobian_spectral_radius, fmt_f64, hit_probability, mcem_error_scaling, plot_script,
    rate_estimate, trace_write,
};
use mcem::engine::require_summable_schedule;
use mcem::glmm::{glmm_direct_mle, GLMM_LAYOUT};
use mcem::lmm::{LmmTheta, LMM_LAYOUT};
use mcem::{
    rng_stream, run_em, run_mcem, run_mcem_adaptive, stable_mcem_run, Error, GlmmModel, GlmmTheta,
    GroupedDataset, LmmModel, Model, PanelDataset, StableConfig, StoppingConfig, Theta, Trace,
};

use crate::config::{Algorithm, ConfigError, DatasetSpec, ModelKind, RunConfig};

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or input: exit code 2.
    Config(String),
    /// The algorithm ran but failed to converge or hit a runtime error: exit code 1.
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Failure(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "configuration error: {m}"),
            Self::Failure(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Capability(_)
            | Error::InvalidArgument(_)
            | Error::DimensionMismatch { .. }
            | Error::Parse { .. } => Self::Config(e.to_string()),
            _ => Self::Failure(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub enum Dataset {
    Grouped(GroupedDataset),
    Panel(PanelDataset),
}

impl Dataset {
    pub fn write_csv(&self, w: impl Write) -> std::io::Result<()> {
        match self {
            Self::Grouped(d) => d.write_csv(w),
            Self::Panel(d) => d.write_csv(w),
        }
    }
}

pub fn load_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    let truth = |default: Vec<f64>| cfg.truth.clone().unwrap_or(default);
    Ok(match (cfg.model, &cfg.dataset) {
        (ModelKind::Lmm, DatasetSpec::BuiltinBulls) => Dataset::Grouped(GroupedDataset::bulls()),
        (ModelKind::Lmm, DatasetSpec::Synthetic) => {
            let t = LmmTheta::from_slice(&truth(mcem::lmm::BULLS_MLE.to_vec()))?;
            let sizes = vec![cfg.group_size; cfg.groups];
            Dataset::Grouped(GroupedDataset::simulate(
                &sizes,
                &t,
                &mut rng_stream(cfg.data_seed, 0),
            )?)
        }
        (ModelKind::Lmm, DatasetSpec::Path(p)) => {
            Dataset::Grouped(GroupedDataset::from_csv_path(p)?)
        }
        (ModelKind::Glmm, DatasetSpec::Synthetic) => {
            let b = mcem::glmm::BENCHMARK_MLE;
            let v = truth(vec![b.beta, b.sigma2]);
            let t = GlmmTheta::new(v[0], v[1])?;
            Dataset::Panel(PanelDataset::simulate(
                cfg.groups,
                cfg.group_size,
                &t,
                &mut rng_stream(cfg.data_seed, 0),
            )?)
        }
        (ModelKind::Glmm, DatasetSpec::Path(p)) => Dataset::Panel(PanelDataset::from_csv_path(p)?),
        (ModelKind::Glmm, DatasetSpec::BuiltinBulls) => {
            return Err(CliError::Config(
                "builtin-bulls is not a binary panel data set".into(),
            ))
        }
    })
}

pub enum AnyModel {
    Lmm(LmmModel),
    Glmm(GlmmModel),
}

impl AnyModel {
    pub fn build(cfg: &RunConfig) -> CliResult<Self> {
        Ok(match load_dataset(cfg)? {
            Dataset::Grouped(d) => Self::Lmm(LmmModel::new(d)),
            Dataset::Panel(d) => Self::Glmm(GlmmModel {
                data: d,
                burnin: cfg.burnin,
                nodes: cfg.nodes,
            }),
        })
    }

    pub fn as_dyn(&self) -> &dyn Model {
        match self {
            Self::Lmm(m) => m,
            Self::Glmm(m) => m,
        }
    }

    fn theta(&self, values: Vec<f64>) -> CliResult<Theta> {
        let layout = match self {
            Self::Lmm(_) => &LMM_LAYOUT[..],
            Self::Glmm(_) => &GLMM_LAYOUT[..],
        };
        Ok(Theta::new(layout, values)?)
    }

    pub fn theta0(&self, cfg: &RunConfig) -> CliResult<Theta> {
        let default = match self {
            Self::Lmm(_) => vec![55.0, 45.0, 260.0],
            Self::Glmm(_) => vec![2.0, 1.0],
        };
        self.theta(cfg.theta0.clone().unwrap_or(default))
    }

    /// Reference maximizer: configured, or EM run to machine precision (LMM),
    /// or the direct quadrature MLE (GLMM).
    pub fn theta_star(&self, cfg: &RunConfig) -> CliResult<Theta> {
        if let Some(v) = &cfg.theta_star {
            return self.theta(v.clone());
        }
        match self {
            Self::Lmm(m) => {
                let stop = StoppingConfig {
                    epsilon: 1e-15,
                    max_iter: 5000,
                    ..StoppingConfig::default()
                };
                let tr = run_em(m, &self.theta0(cfg)?, &stop)?;
                Ok(tr.final_theta().expect("nonempty trace").clone())
            }
            Self::Glmm(m) => Ok(glmm_direct_mle(&m.data)?.to_theta()),
        }
    }
}

fn default_out(cfg: &RunConfig, fallback: &str) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> CliResult<()> {
    w.flush()
        .map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))
}

pub fn summary_line(cfg: &RunConfig, trace: &Trace) -> String {
    let last = trace.last().expect("nonempty trace");
    let mut s = format!(
        "model={} algorithm={} iterations={} converged={} reinits={} loglik={:.6}",
        match cfg.model {
            ModelKind::Lmm => "lmm",
            ModelKind::Glmm => "glmm",
        },
        cfg.algorithm.name(),
        trace.iterations(),
        trace.converged,
        last.p,
        last.loglik
    );
    for (name, v) in last.theta.names().zip(last.theta.values()) {
        s.push_str(&format!(" {name}={v:.6}"));
    }
    s
}

/// Runs the configured algorithm. Returns the trace and the path it was written to.
pub fn cmd_run(cfg: &RunConfig) -> CliResult<(Trace, PathBuf)> {
    if cfg.algorithm.is_monte_carlo() {
        cfg.require_seed()?;
    }
    let model = AnyModel::build(cfg)?;
    let theta0 = model.theta0(cfg)?;
    let stop = cfg.stopping();
    let trace = match (cfg.algorithm, &model) {
        (Algorithm::Em, _) => run_em(model.as_dyn(), &theta0, &stop)?,
        (Algorithm::EmGradient, AnyModel::Lmm(m)) => m.run_em_gradient(&theta0, &stop)?,
        (Algorithm::EmGradient, AnyModel::Glmm(_)) => {
            return Err(CliError::Config(
                "em-gradient needs closed-form Q derivatives, available for lmm only".into(),
            ))
        }
        (Algorithm::Mcem, _) => {
            let mut rng = rng_stream(cfg.require_seed()?, 0);
            run_mcem(model.as_dyn(), &theta0, &cfg.schedule, &stop, &mut rng)?
        }
        (Algorithm::StableMcem, _) => {
            require_summable_schedule(&cfg.schedule)?;
            let stable = StableConfig::uniform(theta0, cfg.r0, cfg.c)?;
            let mut rng = rng_stream(cfg.require_seed()?, 0);
            stable_mcem_run(model.as_dyn(), &stable, &cfg.schedule, &stop, &mut rng)?
        }
        (Algorithm::McemAdaptive, _) => {
            let mut rng = rng_stream(cfg.require_seed()?, 0);
            run_mcem_adaptive(model.as_dyn(), &theta0, &cfg.adaptive, &stop, &mut rng)?
        }
    };
    let path = default_out(cfg, "trace.csv");
    trace_write(&trace, &path)?;
    Ok((trace, path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    HitProb,
    Rate,
    McemErrorScaling,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hit-prob" => Some(Self::HitProb),
            "rate" => Some(Self::Rate),
            "mcem-error-scaling" => Some(Self::McemErrorScaling),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::HitProb => "hit-prob",
            Self::Rate => "rate",
            Self::McemErrorScaling => "mcem-error-scaling",
        }
    }
}

/// Runs a diagnostics experiment and writes its results CSV.
///
/// * hit-prob: `m,runs,t0,epsilon,hits,fraction`, one row per `hit_m` entry
/// * rate: `iterations,median_rate,cv,superlinear,spectral_radius`, one row
/// * mcem-error-scaling: `m,<parameter names>` holding median absolute
///   deviations from the exact EM update, one row per `scaling_m` entry
pub fn cmd_experiment(kind: ExperimentKind, cfg: &RunConfig) -> CliResult<PathBuf> {
    let model = AnyModel::build(cfg)?;
    let theta0 = model.theta0(cfg)?;
    let path = default_out(cfg, &format!("{}.csv", kind.name()));
    let mut rows = Vec::new();
    match kind {
        ExperimentKind::HitProb => {
            let seed = cfg.require_seed()?;
            let star = model.theta_star(cfg)?;
            rows.push("m,runs,t0,epsilon,hits,fraction".to_string());
            for &m in &cfg.hit_m {
                let r = hit_probability(
                    model.as_dyn(),
                    &theta0,
                    &star,
                    m,
                    cfg.t0,
                    cfg.hit_epsilon,
                    cfg.runs,
                    seed,
                )?;
                rows.push(format!(
                    "{},{},{},{},{},{}",
                    r.m,
                    r.runs,
                    r.t0,
                    fmt_f64(r.epsilon),
                    r.hits,
                    fmt_f64(r.fraction)
                ));
            }
        }
        ExperimentKind::Rate => {
            let AnyModel::Lmm(m) = &model else {
                return Err(CliError::Config(
                    "the rate experiment needs an exact EM map, available for lmm only".into(),
                ));
            };
            let star = model.theta_star(cfg)?;
            let stop = StoppingConfig {
                epsilon: 1e-15,
                max_iter: 5000,
                ..StoppingConfig::default()
            };
            let trace = run_em(m, &theta0, &stop)?;
            let rep = rate_estimate(&trace, &star, cfg.rate_window)?;
            let rho = em_jacobian_spectral_radius(m, &star, 1e-5)?;
            rows.push("iterations,median_rate,cv,superlinear,spectral_radius".to_string());
            rows.push(format!(
                "{},{},{},{},{}",
                trace.iterations(),
                fmt_f64(rep.median_rate),
                fmt_f64(rep.cv),
                rep.superlinear,
                fmt_f64(rho)
            ));
        }
        ExperimentKind::McemErrorScaling => {
            let seed = cfg.require_seed()?;
            let table = mcem_error_scaling(
                model.as_dyn(),
                &theta0,
                &cfg.scaling_m,
                cfg.scaling_seeds,
                seed,
            )?;
            let names: Vec<&str> = theta0.names().collect();
            rows.push(format!("m,{}", names.join(",")));
            for row in table {
                let devs: Vec<String> = row.median_dev.iter().map(|v| fmt_f64(*v)).collect();
                rows.push(format!("{},{}", row.m, devs.join(",")));
            }
        }
    }
    let mut w = create(&path)?;
    for r in rows {
        writeln!(w, "{r}").map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))?;
    }
    finish(w, &path)?;
    Ok(path)
}

/// Writes the configured data set as CSV.
pub fn cmd_gen_data(cfg: &RunConfig) -> CliResult<PathBuf> {
    let data = load_dataset(cfg)?;
    let path = default_out(cfg, "data.csv");
    let mut w = create(&path)?;
    data.write_csv(&mut w)
        .map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))?;
    finish(w, &path)?;
    Ok(path)
}

/// Writes a matplotlib script that plots `trace_csv` to a PNG next to it.
pub fn cmd_plot_script(trace_csv: &Path, out: Option<&Path>) -> CliResult<PathBuf> {
    let image = trace_csv.with_extension("png");
    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("plot_trace.py"));
    let script = plot_script(&trace_csv.to_string_lossy(), &image.to_string_lossy());
    std::fs::write(&path, script)
        .map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))?;
    Ok(path)
}
