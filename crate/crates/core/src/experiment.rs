//! Monte Carlo sweeps over privacy levels.
//!
//! For every `ε` of a configuration the harness picks `(c, q, p)`, runs
//! `trials` independent executions and records `‖x̄(T) − x*‖²` of each. Trial
//! `j` of level `k` draws its noise from key `(seed, k, j)`, so any single
//! trial can be rerun alone and the aggregation order never depends on
//! thread scheduling.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, TuningMode};
use crate::engine::{final_state, mean_estimate, NoiseSource, ScheduleParams};
use crate::error::{Error, Result};
use crate::math::Point;
use crate::problem::ProblemInstance;
use crate::rng::{Purpose, StreamKey};
use crate::tuning::{accuracy_bound, tune_multistart, AccuracyBound};

/// Resamples used by [`bootstrap_mean_upper`] in summaries.
pub const BOOTSTRAP_RESAMPLES: usize = 2000;

/// Confidence level of the reported bootstrap upper bound.
pub const BOOTSTRAP_LEVEL: f64 = 0.99;

/// Outcome of one privacy level.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonResult {
    pub epsilon: f64,
    pub params: ScheduleParams,
    pub horizon: usize,
    /// `d` reached by tuning; `None` in fixed mode.
    pub tuning_d: Option<f64>,
    pub bound: AccuracyBound,
    /// `‖x̄(T) − x*‖²` per trial, in trial order. Flagged trials hold NaN.
    pub sq_distances: Vec<f64>,
    /// Trials that produced non-finite values.
    pub flagged: Vec<usize>,
    /// Mean over unflagged trials.
    pub mean: f64,
    pub p5: f64,
    pub p50: f64,
    pub p95: f64,
    /// One-sided upper confidence bound on the mean at [`BOOTSTRAP_LEVEL`].
    pub mean_upper: f64,
}

impl EpsilonResult {
    pub fn finite_values(&self) -> Vec<f64> {
        self.sq_distances.iter().copied().filter(|v| v.is_finite()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub seed: u64,
    pub trials: usize,
    pub config_hash: String,
    pub x_star: Point,
    pub f_star: f64,
    pub levels: Vec<EpsilonResult>,
}

/// `(c, q, p)` for level `eps` under the configured policy, with the tuned `d`
/// when tuning ran.
pub fn params_for(config: &ExperimentConfig, problem: &ProblemInstance, eps: f64) -> Result<(ScheduleParams, Option<f64>)> {
    match config.tuning.mode {
        TuningMode::Fixed => Ok((config.tuning.fixed_params(eps)?, None)),
        TuningMode::Auto => {
            let (best, _) = tune_multistart(
                problem.constants(),
                problem.dim(),
                eps,
                config.tuning.starts,
                config.tuning.passes,
                config.seed,
            )?;
            Ok((best.params, Some(best.d_achieved)))
        }
    }
}

/// Runs the full sweep described by `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let problem = config.build_problem()?;
    let optimum = problem.global_optimum()?;
    let x0 = problem.initial_state()?;
    let (agents, dim) = (problem.agents(), problem.dim());

    let mut levels = Vec::with_capacity(config.epsilons.len());
    for (k, &eps) in config.epsilons.iter().enumerate() {
        let (params, tuning_d) = params_for(config, &problem, eps)?;
        let horizon = config.horizon.resolve(&params);
        let weights = problem.graph().window(horizon)?;
        let sq_distances = (0..config.trials as u64)
            .into_par_iter()
            .map(|j| {
                let mut noise = NoiseSource::for_trial(config.seed, k as u64, j, agents, dim);
                let x = final_state(&problem, &params, &x0, &weights, &mut noise)?;
                let v = (mean_estimate(&x) - &optimum.x_star).norm_squared();
                Ok(if v.is_finite() { v } else { f64::NAN })
            })
            .collect::<Result<Vec<f64>>>()?;
        levels.push(summarize(
            eps,
            params,
            horizon,
            tuning_d,
            accuracy_bound(problem.constants(), dim, &params),
            sq_distances,
            StreamKey::new(config.seed, Purpose::Bootstrap, k as u64, 0),
        ));
    }

    Ok(ExperimentResult {
        seed: config.seed,
        trials: config.trials,
        config_hash: config.canonical_hash(),
        x_star: optimum.x_star,
        f_star: optimum.f_star,
        levels,
    })
}

fn summarize(
    epsilon: f64,
    params: ScheduleParams,
    horizon: usize,
    tuning_d: Option<f64>,
    bound: AccuracyBound,
    sq_distances: Vec<f64>,
    bootstrap_key: StreamKey,
) -> EpsilonResult {
    let flagged: Vec<usize> = sq_distances
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_finite())
        .map(|(i, _)| i)
        .collect();
    let mut finite: Vec<f64> = sq_distances.iter().copied().filter(|v| v.is_finite()).collect();
    let mean = mean_of(&finite);
    let mean_upper = bootstrap_mean_upper(&finite, BOOTSTRAP_LEVEL, BOOTSTRAP_RESAMPLES, bootstrap_key);
    finite.sort_by(f64::total_cmp);
    EpsilonResult {
        epsilon,
        params,
        horizon,
        tuning_d,
        bound,
        flagged,
        mean,
        p5: percentile(&finite, 5.0),
        p50: percentile(&finite, 50.0),
        p95: percentile(&finite, 95.0),
        mean_upper,
        sq_distances,
    }
}

fn mean_of(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Percentile of sorted data with linear interpolation between order
/// statistics. NaN for empty input.
pub fn percentile(sorted: &[f64], pct: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * pct / 100.0;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Percentile-bootstrap upper confidence bound on the mean of `values`.
///
/// Resample `r` reads lane `r` of `key`, so the result is reproducible.
pub fn bootstrap_mean_upper(values: &[f64], level: f64, resamples: usize, key: StreamKey) -> f64 {
    if values.is_empty() || resamples == 0 {
        return f64::NAN;
    }
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples as u64)
        .into_par_iter()
        .map(|r| {
            let mut s = key.stream(r);
            (0..n).map(|_| values[s.next_index(n)]).sum::<f64>() / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    percentile(&means, 100.0 * level)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::param("need at least two (x, y) pairs of equal length"));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::param("log-log fit needs positive values"));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = mean_of(&lx);
    let my = mean_of(&ly);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Shortest decimal that reads back to the same `f64`, switching to
/// exponent notation for very small or large magnitudes.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v != 0.0 && v.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

pub const TRIALS_CSV: &str = "trials.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const PLOT_SCRIPT: &str = "plot_summary.py";
pub const CONFIG_COPY: &str = "config.toml";
pub const MANIFEST_CSV: &str = "manifest.csv";

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// Writes the per-trial and summary tables into `dir` and returns their paths.
pub fn emit_csv(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let trials = dir.join(TRIALS_CSV);
    let mut w = csv_writer(&trials)?;
    w.write_record(["epsilon", "trial", "sq_distance"])
        .map_err(|e| csv_err(&trials, e))?;
    for lvl in &result.levels {
        for (j, v) in lvl.sq_distances.iter().enumerate() {
            w.write_record([fmt_f64(lvl.epsilon), j.to_string(), fmt_f64(*v)])
                .map_err(|e| csv_err(&trials, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&trials, e))?;

    let summary = dir.join(SUMMARY_CSV);
    let mut w = csv_writer(&summary)?;
    w.write_record([
        "epsilon",
        "mean_d",
        "p5",
        "p50",
        "p95",
        "theoretical_d",
        "c",
        "q",
        "p",
        "T",
        "seed",
        "theoretical_d_conservative",
        "mean_d_upper99",
        "flagged",
    ])
    .map_err(|e| csv_err(&summary, e))?;
    for lvl in &result.levels {
        w.write_record([
            fmt_f64(lvl.epsilon),
            fmt_f64(lvl.mean),
            fmt_f64(lvl.p5),
            fmt_f64(lvl.p50),
            fmt_f64(lvl.p95),
            fmt_f64(lvl.bound.d),
            fmt_f64(lvl.params.c()),
            fmt_f64(lvl.params.q()),
            fmt_f64(lvl.params.p()),
            lvl.horizon.to_string(),
            result.seed.to_string(),
            fmt_f64(lvl.bound.d_conservative),
            fmt_f64(lvl.mean_upper),
            lvl.flagged.len().to_string(),
        ])
        .map_err(|e| csv_err(&summary, e))?;
    }
    w.flush().map_err(|e| Error::io(&summary, e))?;
    Ok(vec![trials, summary])
}

/// Writes a matplotlib script that plots `summary.csv` from its own directory.
pub fn emit_plot_script(path: &Path) -> Result<PathBuf> {
    let script = r#"#!/usr/bin/env python3
"""Plot empirical and theoretical accuracy against epsilon (log-log)."""
import csv
import pathlib
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = pathlib.Path(__file__).resolve().parent
rows = list(csv.DictReader(open(here / "summary.csv", newline="")))
eps = [float(r["epsilon"]) for r in rows]

fig, ax = plt.subplots(figsize=(5, 4))
ax.loglog(eps, [float(r["mean_d"]) for r in rows], "o-", label="empirical mean")
ax.loglog(eps, [float(r["theoretical_d"]) for r in rows], "s--", label="bound d")
ax.loglog(eps, [float(r["theoretical_d_conservative"]) for r in rows], "^:", label="bound d (2 C1)")
ax.fill_between(eps, [float(r["p5"]) for r in rows], [float(r["p95"]) for r in rows], alpha=0.2, label="5-95%")
ax.set_xlabel("epsilon")
ax.set_ylabel("squared distance")
ax.legend()
fig.tight_layout()
out = sys.argv[1] if len(sys.argv) > 1 else str(here / "accuracy.png")
fig.savefig(out, dpi=150)
"#;
    fs::write(path, script).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Writes every output file under `dir` plus a manifest of
/// `(file, config_hash, seed, sha256)` rows.
pub fn write_outputs(result: &ExperimentResult, config: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = emit_csv(result, dir)?;
    files.push(emit_plot_script(&dir.join(PLOT_SCRIPT))?);
    let copy = dir.join(CONFIG_COPY);
    let mut canonical = config.clone();
    canonical.out_dir = None;
    fs::write(&copy, canonical.to_toml()).map_err(|e| Error::io(&copy, e))?;
    files.push(copy);

    let mut manifest = String::from("file,config_hash,seed,sha256\n");
    for f in &files {
        let bytes = fs::read(f).map_err(|e| Error::io(f, e))?;
        let name = f.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let _ = writeln!(
            manifest,
            "{name},{},{},{}",
            result.config_hash,
            result.seed,
            hex::encode(Sha256::digest(&bytes))
        );
    }
    let path = dir.join(MANIFEST_CSV);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    files.push(path);
    Ok(files)
}
