//! The `dpdo` command line.
//!
//! Exit codes: 0 on success, 1 when a verification fails, 2 on usage,
//! configuration or parameter errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::engine::{run_with_noise, ExecutionTrace, NoiseSource, ScheduleParams};
use crate::error::{Error, Result};
use crate::experiment::{fmt_f64, params_for, run_experiment, write_outputs};
use crate::privacy::{budget, dp_ratio_check, measured_sensitivity, random_observations, sensitivity_bound};
use crate::problem::{make_adjacent, ProblemInstance};
use crate::tuning::{
    accuracy_bound, solve_p_star, solve_p_star_numeric, solve_q_star, tune_multistart, ConvergenceBound,
};

/// Default output directory.
pub const DEFAULT_OUT: &str = "dpdo-out";

/// Slack of the DP ratio check.
pub const DP_RATIO_TOL: f64 = 1e-6;

/// Slack of the sensitivity check.
pub const SENSITIVITY_TOL: f64 = 1e-9;

/// Random observation sequences replayed by `verify`, besides the live one.
const VERIFY_RANDOM_SEQUENCES: u64 = 20;

#[derive(Debug, Parser)]
#[command(name = "dpdo", version, about = "Differentially private distributed optimization toolkit")]
pub struct Cli {
    /// Experiment configuration (TOML). Defaults to the bundled rendezvous sweep.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Overrides the number of trials.
    #[arg(long, global = true, value_name = "N")]
    pub trials: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Only print results that decide the exit code.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one execution and export its trace.
    Run {
        /// Index into the configured privacy levels.
        #[arg(long, default_value_t = 0)]
        level: usize,
        /// Trial index; matches trial numbering of `experiment`.
        #[arg(long, default_value_t = 0)]
        trial: u64,
        /// Overrides the configured horizon.
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Run the Monte Carlo sweep and write CSV results.
    Experiment,
    /// Tune (c, q, p) and compare the solvers against grid searches.
    Tune {
        /// Privacy levels to tune; defaults to the configured ones.
        #[arg(long, num_args = 1..)]
        epsilon: Vec<f64>,
    },
    /// Check the privacy budget, sensitivity and likelihood ratios.
    Verify {
        /// Privacy levels to verify; defaults to the configured ones.
        #[arg(long, num_args = 1..)]
        epsilon: Vec<f64>,
        /// Overrides the configured horizon.
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Evaluate the accuracy bound and convergence envelope.
    Bounds {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        c: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        p: f64,
        /// Round at which to evaluate the noiseless convergence envelope.
        #[arg(long, default_value_t = 100)]
        rounds: usize,
    },
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonConvergence(_) | Error::Certification { .. } => 1,
        _ => 2,
    }
}

fn execute(cli: &Cli) -> Result<bool> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::unit_square(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(trials) = cli.trials {
        config.trials = trials;
    }
    if let Some(out) = &cli.out {
        config.out_dir = Some(out.clone());
    }
    config.validate()?;
    let out_dir = config.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let say = |s: &str| {
        if !cli.quiet {
            println!("{s}");
        }
    };

    match &cli.command {
        Command::Run { level, trial, rounds } => cmd_run(&config, *level, *trial, *rounds, &out_dir, &say),
        Command::Experiment => cmd_experiment(&config, &out_dir, &say),
        Command::Tune { epsilon } => cmd_tune(&config, epsilon, cli.out.as_deref(), &say),
        Command::Verify { epsilon, rounds } => cmd_verify(&config, epsilon, *rounds, &out_dir, &say),
        Command::Bounds {
            epsilon,
            c,
            q,
            p,
            rounds,
        } => cmd_bounds(&config, ScheduleParams::new(*epsilon, *c, *q, *p)?, *rounds, &say),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_run(
    config: &ExperimentConfig,
    level: usize,
    trial: u64,
    rounds: Option<usize>,
    out_dir: &Path,
    say: &dyn Fn(&str),
) -> Result<bool> {
    let eps = *config.epsilons.get(level).ok_or_else(|| {
        Error::Config(format!(
            "level {level} out of range for {} privacy levels",
            config.epsilons.len()
        ))
    })?;
    let problem = config.build_problem()?;
    let (params, _) = params_for(config, &problem, eps)?;
    let horizon = rounds.unwrap_or_else(|| config.horizon.resolve(&params));
    let noise = NoiseSource::for_trial(config.seed, level as u64, trial, problem.agents(), problem.dim());
    let trace = run_with_noise(&problem, &params, horizon, noise)?;
    trace.validate(&problem)?;

    create_dir(out_dir)?;
    let trace_path = out_dir.join("trace.csv");
    write_file(&trace_path, &trace_csv(&trace))?;
    let obs_path = out_dir.join("observations.csv");
    write_file(&obs_path, &observations_csv(&trace))?;

    let optimum = problem.global_optimum()?;
    let xbar = trace.mean_estimate(horizon)?;
    say(&format!(
        "eps {eps}  c {}  q {}  p {}  T {horizon}",
        fmt_f64(params.c()),
        fmt_f64(params.q()),
        fmt_f64(params.p())
    ));
    say(&format!(
        "final mean {:?}  optimum {:?}  squared distance {}  disagreement {}",
        xbar.as_slice(),
        optimum.x_star.as_slice(),
        fmt_f64((&xbar - &optimum.x_star).norm_squared()),
        fmt_f64(trace.disagreement(horizon)?)
    ));
    say(&format!("wrote {} and {}", trace_path.display(), obs_path.display()));
    Ok(true)
}

/// `round, agent, component, x, w, y, z`; round 0 holds the initial state
/// with empty noise columns, round `t ≥ 1` holds `x(t)` and the round's
/// `w, y, z`.
pub fn trace_csv(trace: &ExecutionTrace) -> String {
    let mut s = String::from("round,agent,component,x,w,y,z\n");
    for i in 0..trace.x0.nrows() {
        for k in 0..trace.x0.ncols() {
            let _ = writeln!(s, "0,{i},{k},{},,,", fmt_f64(trace.x0[(i, k)]));
        }
    }
    for r in &trace.records {
        for i in 0..r.x_next.nrows() {
            for k in 0..r.x_next.ncols() {
                let _ = writeln!(
                    s,
                    "{},{i},{k},{},{},{},{}",
                    r.t,
                    fmt_f64(r.x_next[(i, k)]),
                    fmt_f64(r.w[(i, k)]),
                    fmt_f64(r.y[(i, k)]),
                    fmt_f64(r.z[(i, k)])
                );
            }
        }
    }
    s
}

/// `round, agent, component, y`: what an eavesdropper sees.
pub fn observations_csv(trace: &ExecutionTrace) -> String {
    let mut s = String::from("round,agent,component,y\n");
    for r in &trace.records {
        for i in 0..r.y.nrows() {
            for k in 0..r.y.ncols() {
                let _ = writeln!(s, "{},{i},{k},{}", r.t, fmt_f64(r.y[(i, k)]));
            }
        }
    }
    s
}

fn cmd_experiment(config: &ExperimentConfig, out_dir: &Path, say: &dyn Fn(&str)) -> Result<bool> {
    let result = run_experiment(config)?;
    let files = write_outputs(&result, config, out_dir)?;
    say(&format!(
        "{:>6} {:>12} {:>12} {:>12} {:>12} {:>9} {:>9} {:>9} {:>7}",
        "eps", "mean_d", "p95", "bound_d", "bound_2C1", "c", "q", "p", "T"
    ));
    for l in &result.levels {
        say(&format!(
            "{:>6} {:>12.5e} {:>12.5e} {:>12.5e} {:>12.5e} {:>9.3e} {:>9.3e} {:>9.4} {:>7}",
            l.epsilon,
            l.mean,
            l.p95,
            l.bound.d,
            l.bound.d_conservative,
            l.params.c(),
            l.params.q(),
            l.params.p(),
            l.horizon
        ));
        if !l.flagged.is_empty() {
            say(&format!("  {} non-finite trials excluded", l.flagged.len()));
        }
    }
    for f in &files {
        say(&format!("wrote {}", f.display()));
    }
    Ok(true)
}

fn cmd_tune(config: &ExperimentConfig, epsilons: &[f64], out: Option<&Path>, say: &dyn Fn(&str)) -> Result<bool> {
    let problem = config.build_problem()?;
    let (k, n) = (*problem.constants(), problem.dim());
    let levels = if epsilons.is_empty() { &config.epsilons[..] } else { epsilons };
    say(&format!(
        "constants C1 {}  C2 {}  C3 {}  n {n}",
        fmt_f64(k.c1),
        fmt_f64(k.c2),
        fmt_f64(k.c3)
    ));
    let mut table = String::from(
        "epsilon,c,q,p,d,term_init,term_step,term_noise,d_conservative,q_interior,start_spread,c_grid_gap,q_grid_gap,p_root_gap\n",
    );
    for &eps in levels {
        let (best, runs) = tune_multistart(&k, n, eps, config.tuning.starts, config.tuning.passes, config.seed)?;
        let prm = best.params;
        let b = accuracy_bound(&k, n, &prm);
        let spread = runs.iter().map(|r| r.d_achieved).fold(f64::NEG_INFINITY, f64::max) / best.d_achieved - 1.0;
        let interior = solve_q_star(&k, n, eps, prm.c(), prm.p())?.interior;

        // grid oracles: how far the solver's point sits above the best grid point
        let d_at = |c: f64, q: f64| ScheduleParams::new(eps, c, q, prm.p()).map(|s| accuracy_bound(&k, n, &s).d);
        let c_grid = (0..=20_000)
            .map(|i| prm.c() * 10f64.powf(-2.0 + 4.0 * i as f64 / 20_000.0))
            .filter_map(|c| d_at(c, prm.q()).ok())
            .fold(f64::INFINITY, f64::min);
        let mut q_grid = f64::INFINITY;
        let mut q = 0.01;
        while q <= prm.p() - 0.01 {
            q_grid = q_grid.min(d_at(prm.c(), q)?);
            q += 1e-3;
        }
        let c_gap = b.d - c_grid;
        let q_gap = if q_grid.is_finite() { b.d - q_grid } else { f64::NAN };
        let p_gap = (solve_p_star(prm.q())? - solve_p_star_numeric(prm.q())?).abs();

        say(&format!(
            "eps {eps}: c {} q {} p {}  d {} (init {} step {} noise {})  2C1 variant {}",
            fmt_f64(prm.c()),
            fmt_f64(prm.q()),
            fmt_f64(prm.p()),
            fmt_f64(b.d),
            fmt_f64(b.term_init),
            fmt_f64(b.term_step),
            fmt_f64(b.term_noise),
            fmt_f64(b.d_conservative)
        ));
        say(&format!(
            "  starts {}  spread {:.2e}  passes {}  converged {}  q interior {interior}",
            runs.len(),
            spread,
            best.iterations,
            best.converged
        ));
        say(&format!(
            "  oracle: d - min_grid(c) {:.2e}  d - min_grid(q) {:.2e}  |p* - root| {:.2e}",
            c_gap, q_gap, p_gap
        ));
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{},{},{},{interior},{},{},{},{}",
            fmt_f64(eps),
            fmt_f64(prm.c()),
            fmt_f64(prm.q()),
            fmt_f64(prm.p()),
            fmt_f64(b.d),
            fmt_f64(b.term_init),
            fmt_f64(b.term_step),
            fmt_f64(b.term_noise),
            fmt_f64(b.d_conservative),
            fmt_f64(spread),
            fmt_f64(c_gap),
            fmt_f64(q_gap),
            fmt_f64(p_gap)
        );
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        let path = dir.join("tune.csv");
        write_file(&path, &table)?;
        say(&format!("wrote {}", path.display()));
    }
    Ok(true)
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn cmd_verify(
    config: &ExperimentConfig,
    epsilons: &[f64],
    rounds: Option<usize>,
    out_dir: &Path,
    say: &dyn Fn(&str),
) -> Result<bool> {
    let problem = config.build_problem()?;
    let levels = if epsilons.is_empty() { &config.epsilons[..] } else { epsilons };
    let (k, n) = (*problem.constants(), problem.dim());
    let pair = adjacent_for_verify(&problem)?;
    let mut all_ok = true;
    let mut budget_csv = String::from("epsilon,t,ratio,partial_sum,running_sum\n");
    let mut sens_csv = String::from("epsilon,t,bound,measured_max\n");

    for (idx, &eps) in levels.iter().enumerate() {
        let (params, _) = params_for(config, &problem, eps)?;
        let horizon = rounds.unwrap_or_else(|| config.horizon.resolve(&params));

        let eta = problem.graph().certify_eta(horizon);
        let graph_ok = eta.is_ok();
        println!(
            "graph        eps={eps} T={horizon} family={} eta={} {}",
            problem.graph().family().name(),
            eta.as_ref().map(|e| fmt_f64(*e)).unwrap_or_else(|e| e.to_string()),
            verdict(graph_ok)
        );

        let report = budget(&k, n, &params, horizon)?;
        println!(
            "budget       eps={eps} T={horizon} spent={} infinite_sum={} {}",
            fmt_f64(report.horizon_spend()),
            fmt_f64(report.infinite_sum),
            verdict(report.passed)
        );
        for (t, ((r, ps), rs)) in report
            .per_round_ratio
            .iter()
            .zip(&report.partial_sums)
            .zip(&report.running_sums)
            .enumerate()
        {
            let _ = writeln!(
                budget_csv,
                "{},{},{},{},{}",
                fmt_f64(eps),
                t + 1,
                fmt_f64(*r),
                fmt_f64(*ps),
                fmt_f64(*rs)
            );
        }

        let bound = sensitivity_bound(&k, n, &params, horizon)?;
        let x0 = pair.base.initial_state()?;
        let live = crate::engine::run(&pair.base, &params, horizon, config.seed)?;
        let mut worst = measured_sensitivity(&pair, &params, &live.observations(), &x0)?;
        for s in 0..VERIFY_RANDOM_SEQUENCES {
            let obs = random_observations(&pair.base, horizon, 2.0, config.seed, idx as u64 * 1000 + s);
            for (w, m) in worst.iter_mut().zip(measured_sensitivity(&pair, &params, &obs, &x0)?) {
                *w = w.max(m);
            }
        }
        let sens_ok = worst
            .iter()
            .enumerate()
            .all(|(t, m)| *m <= bound.at(t + 1) + SENSITIVITY_TOL);
        for (t, m) in worst.iter().enumerate() {
            let _ = writeln!(
                sens_csv,
                "{},{},{},{}",
                fmt_f64(eps),
                t + 1,
                fmt_f64(bound.at(t + 1)),
                fmt_f64(*m)
            );
        }
        println!(
            "sensitivity  eps={eps} T={horizon} sequences={} {}",
            VERIFY_RANDOM_SEQUENCES + 1,
            verdict(sens_ok)
        );

        let dp = dp_ratio_check(&pair, &params, horizon, config.trials, config.seed)?;
        let dp_ok = dp.max_log_ratio <= eps + DP_RATIO_TOL;
        println!(
            "dp-ratio     eps={eps} T={horizon} trials={} max_log_ratio={} mean={} {}",
            dp.trials,
            fmt_f64(dp.max_log_ratio),
            fmt_f64(dp.mean_abs_log_ratio),
            verdict(dp_ok)
        );
        say(&format!(
            "             accounted={} lagged_bound={}",
            fmt_f64(dp.accounted_budget),
            fmt_f64(dp.lagged_bound)
        ));
        all_ok &= graph_ok && report.passed && sens_ok && dp_ok;
    }

    create_dir(out_dir)?;
    let budget_path = out_dir.join("budget.csv");
    write_file(&budget_path, &budget_csv)?;
    let sens_path = out_dir.join("sensitivity.csv");
    write_file(&sens_path, &sens_csv)?;
    say(&format!("wrote {} and {}", budget_path.display(), sens_path.display()));
    println!("verify {}", verdict(all_ok));
    Ok(all_ok)
}

/// Moves agent 0's anchor to the farthest corner, the largest gradient gap.
fn adjacent_for_verify(problem: &ProblemInstance) -> Result<crate::problem::AdjacentPair> {
    let anchor = problem
        .cost(0)
        .anchor()
        .ok_or_else(|| Error::Problem("verify needs costs with anchors".into()))?;
    let far = problem.domain().far_corner(anchor.as_slice());
    make_adjacent(problem, 0, far)
}

fn cmd_bounds(config: &ExperimentConfig, params: ScheduleParams, rounds: usize, say: &dyn Fn(&str)) -> Result<bool> {
    if rounds == 0 {
        return Err(Error::param("rounds must be at least 1"));
    }
    let problem = config.build_problem()?;
    let (k, n) = (*problem.constants(), problem.dim());
    let b = accuracy_bound(&k, n, &params);
    println!("accuracy d = {}", fmt_f64(b.d));
    say(&format!("  term_init  = {}", fmt_f64(b.term_init)));
    say(&format!("  term_step  = {}", fmt_f64(b.term_step)));
    say(&format!("  term_noise = {}", fmt_f64(b.term_noise)));
    println!("accuracy d with 2 C1 = {}", fmt_f64(b.d_conservative));

    let report = budget(&k, n, &params, rounds)?;
    say(&format!(
        "privacy: M_1 = {}  spent over {rounds} rounds = {}  infinite sum = {}",
        fmt_f64(params.initial_noise_scale(k.c2, n)),
        fmt_f64(report.horizon_spend()),
        fmt_f64(report.infinite_sum)
    ));

    let env = problem.graph().envelope();
    let cb = ConvergenceBound::new(&env, &k, problem.agents(), problem.domain());
    let noiseless = cb.at(&params, &vec![0.0; rounds], rounds)?;
    say(&format!(
        "envelope: eta {}  theta {}  beta {}  M1 {}  M2 {}  M3 {}",
        fmt_f64(problem.graph().eta()),
        fmt_f64(env.theta),
        fmt_f64(env.beta),
        fmt_f64(cb.m1),
        fmt_f64(cb.m2),
        fmt_f64(cb.m3)
    ));
    println!("disagreement envelope at t = {rounds} without noise = {}", fmt_f64(noiseless));
    Ok(true)
}
