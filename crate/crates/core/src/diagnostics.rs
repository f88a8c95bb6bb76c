//! Convergence analytics over traces and the trace CSV format.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::em::{rng_stream, Component, IterationRecord, Model, StoppingConfig, Theta, Trace};
use crate::engine::{run_mcem, ScheduleConfig};
use crate::error::{Error, Result};
use crate::numeric::{mean_var, median};

/// Distances below this are treated as numerically converged.
pub const RATE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// `|theta(t+1) - theta*| / |theta(t) - theta*|` over the analysis window.
    pub ratios: Vec<f64>,
    pub median_rate: f64,
    /// Coefficient of variation of the ratios.
    pub cv: f64,
    /// Ratios fall monotonically by more than an order of magnitude across
    /// the window, the signature of superlinear convergence.
    pub superlinear: bool,
}

/// Empirical linear rate of a trace converging to `theta_star`.
pub fn rate_estimate(trace: &Trace, theta_star: &Theta, window: usize) -> Result<RateReport> {
    if window < 3 {
        return Err(Error::invalid("rate window must be >= 3"));
    }
    let dists: Vec<f64> = trace
        .records
        .iter()
        .map(|r| r.theta.distance(theta_star))
        .collect();
    let ratios_all: Vec<f64> = dists
        .windows(2)
        .take_while(|w| w[0] > RATE_FLOOR && w[1] > RATE_FLOOR)
        .map(|w| w[1] / w[0])
        .collect();
    if ratios_all.len() < window {
        return Err(Error::invalid(format!(
            "only {} usable iterations above the {RATE_FLOOR:e} floor, window needs {window}",
            ratios_all.len()
        )));
    }
    let ratios = ratios_all[ratios_all.len() - window..].to_vec();
    let (mean, var) = mean_var(&ratios);
    let cv = var.sqrt() / mean;
    let first = ratios[0];
    let last = ratios[window - 1];
    let superlinear = ratios.windows(2).all(|w| w[1] <= w[0]) && last < 0.1 * first;
    Ok(RateReport {
        median_rate: median(&ratios),
        cv,
        superlinear,
        ratios,
    })
}

/// Spectral radius of the Jacobian of the EM map at `theta_star`, by central
/// differences of `em_step` with step `rel_step * (1 + |theta_i|)`.
pub fn em_jacobian_spectral_radius<M: Model + ?Sized>(
    model: &M,
    theta_star: &Theta,
    rel_step: f64,
) -> Result<f64> {
    let dim = theta_star.len();
    let base = theta_star.values();
    let mut jac = DMatrix::<f64>::zeros(dim, dim);
    for j in 0..dim {
        let h = rel_step * (1.0 + base[j].abs());
        let mut plus = base.to_vec();
        let mut minus = base.to_vec();
        plus[j] += h;
        minus[j] -= h;
        let fp = model.em_step(&theta_star.with_values(plus)?)?;
        let fm = model.em_step(&theta_star.with_values(minus)?)?;
        for i in 0..dim {
            jac[(i, j)] = (fp.values()[i] - fm.values()[i]) / (2.0 * h);
        }
    }
    Ok(jac
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HitProbResult {
    pub m: usize,
    pub runs: usize,
    pub t0: usize,
    pub epsilon: f64,
    pub hits: usize,
    pub fraction: f64,
    /// Smallest standardized distance to `theta_star` reached by each run.
    pub closest: Vec<f64>,
}

/// Euclidean distance after dividing each component by `|theta*_i| + 1`.
pub fn standardized_distance(theta: &Theta, theta_star: &Theta) -> f64 {
    theta
        .values()
        .iter()
        .zip(theta_star.values())
        .map(|(a, s)| {
            let d = (a - s) / (s.abs() + 1.0);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Fraction of `runs` independent constant-`m` MCEM runs of `t0` updates
/// that come within `epsilon` (standardized) of `theta_star` at some update.
///
/// Run `r` uses stream `r` of `seed`, so results do not depend on scheduling.
#[allow(clippy::too_many_arguments)]
pub fn hit_probability<M: Model + ?Sized>(
    model: &M,
    theta0: &Theta,
    theta_star: &Theta,
    m: usize,
    t0: usize,
    epsilon: f64,
    runs: usize,
    seed: u64,
) -> Result<HitProbResult> {
    if runs < 1 {
        return Err(Error::invalid("hit probability needs at least one run"));
    }
    if t0 < 1 {
        return Err(Error::invalid("hit probability needs T0 >= 1"));
    }
    let schedule = ScheduleConfig::constant(m)?;
    let stop = StoppingConfig::iterations(t0);
    let closest = (0..runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_stream(seed, r as u64);
            let trace = run_mcem(model, theta0, &schedule, &stop, &mut rng)?;
            Ok(trace.records[1..]
                .iter()
                .map(|rec| standardized_distance(&rec.theta, theta_star))
                .fold(f64::INFINITY, f64::min))
        })
        .collect::<Result<Vec<f64>>>()?;
    let hits = closest.iter().filter(|&&d| d < epsilon).count();
    Ok(HitProbResult {
        m,
        runs,
        t0,
        epsilon,
        hits,
        fraction: hits as f64 / runs as f64,
        closest,
    })
}

/// Median absolute deviation of the MCEM update from the EM update.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub m: usize,
    pub median_dev: Vec<f64>,
}

/// For each `m`, the componentwise median over `seeds` replicates of
/// `|M_m(theta) - M_EM(theta)|`.
pub fn mcem_error_scaling<M: Model + ?Sized>(
    model: &M,
    theta: &Theta,
    ms: &[usize],
    seeds: usize,
    base_seed: u64,
) -> Result<Vec<ScalingRow>> {
    let exact = model.em_step(theta)?;
    ms.iter()
        .enumerate()
        .map(|(cell, &m)| {
            let devs = (0..seeds)
                .into_par_iter()
                .map(|s| {
                    let mut rng = rng_stream(base_seed, (cell * seeds + s) as u64);
                    let upd = model.mcem_step(theta, m, &mut rng)?;
                    Ok(upd
                        .values()
                        .iter()
                        .zip(exact.values())
                        .map(|(a, b)| (a - b).abs())
                        .collect::<Vec<f64>>())
                })
                .collect::<Result<Vec<Vec<f64>>>>()?;
            let median_dev = (0..theta.len())
                .map(|j| median(&devs.iter().map(|d| d[j]).collect::<Vec<_>>()))
                .collect();
            Ok(ScalingRow { m, median_dev })
        })
        .collect()
}

/// Least-squares slope of `log y` on `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Float rendering used in every CSV this crate writes: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes the trace as CSV: header `t,m,p,loglik,<names>`, `\n` line ends.
pub fn write_trace<W: Write>(trace: &Trace, mut w: W) -> std::io::Result<()> {
    let mut header = String::from("t,m,p,loglik");
    for name in &trace.names {
        header.push(',');
        header.push_str(name);
    }
    header.push('\n');
    w.write_all(header.as_bytes())?;
    for rec in &trace.records {
        let mut line = String::new();
        let _ = write!(
            line,
            "{},{},{},{}",
            rec.t,
            rec.m,
            rec.p,
            fmt_f64(rec.loglik)
        );
        for v in rec.theta.values() {
            line.push(',');
            line.push_str(&fmt_f64(*v));
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn trace_write(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_trace(trace, &mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a trace CSV written by [`trace_write`] for a model with `layout`.
/// Wall-clock times are not stored and read back as zero.
pub fn trace_read(path: impl AsRef<Path>, layout: &'static [Component]) -> Result<Trace> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trace(BufReader::new(file), path, layout)
}

pub fn read_trace<R: BufRead>(
    reader: R,
    path: &Path,
    layout: &'static [Component],
) -> Result<Trace> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut trace = Trace::new(layout);
    let expected = {
        let mut h = String::from("t,m,p,loglik");
        for c in layout {
            h.push(',');
            h.push_str(c.name);
        }
        h
    };
    let mut lines = reader.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h == expected => {}
        Some((_, Ok(h))) => {
            return Err(parse_err(
                1,
                format!("expected header `{expected}`, found `{h}`"),
            ))
        }
        Some((_, Err(e))) => return Err(Error::io(path, e)),
        None => return Err(parse_err(1, "empty file".into())),
    }
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 + layout.len() {
            return Err(parse_err(
                lineno,
                format!(
                    "expected {} fields, found {}",
                    4 + layout.len(),
                    fields.len()
                ),
            ));
        }
        let int = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| parse_err(lineno, format!("invalid integer `{s}`")))
        };
        let float = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| parse_err(lineno, format!("invalid number `{s}`")))
        };
        let values = fields[4..]
            .iter()
            .map(|s| float(s))
            .collect::<Result<Vec<_>>>()?;
        trace.records.push(IterationRecord {
            t: int(fields[0])?,
            m: int(fields[1])?,
            p: int(fields[2])?,
            loglik: float(fields[3])?,
            theta: Theta::new(layout, values)?,
            wall_ms: 0.0,
        });
    }
    Ok(trace)
}

/// Matplotlib script that plots every parameter column and the
/// log-likelihood of a trace CSV against `t`.
pub fn plot_script(csv_path: &str, image_path: &str) -> String {
    format!(
        r#"#!/usr/bin/env python3
# Plots an mcem trace CSV (columns t,m,p,loglik,<parameters...>).
import csv
import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

with open({csv:?}, newline="") as fh:
    rows = list(csv.DictReader(fh))

columns = [c for c in rows[0].keys() if c not in ("t", "m", "p")]
t = [int(r["t"]) for r in rows]
ncols = 2
nrows = math.ceil(len(columns) / ncols)
fig, axes = plt.subplots(nrows, ncols, figsize=(9, 3.2 * nrows), squeeze=False)
for ax, col in zip(axes.flat, columns[1:] + columns[:1]):
    ax.plot(t, [float(r[col]) for r in rows], marker=".", linewidth=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel(col)
for ax in list(axes.flat)[len(columns):]:
    ax.set_visible(False)
fig.tight_layout()
fig.savefig({img:?}, dpi=120)
"#,
        csv = csv_path,
        img = image_path
    )
}
