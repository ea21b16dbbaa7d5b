//! Privacy accounting and empirical privacy checks.
//!
//! Changing one agent's cost moves the state by at most
//! `Δ(t) = 2 C2 √n γ_t` in L¹ for any fixed observation sequence. With the
//! geometric schedules the per-round loss `Δ(t)/M_t` is
//! `ε (p−q)/p · (q/p)^{t−1}`, a geometric series summing to exactly `ε`.
//!
//! Because every observation sequence determines a unique execution, the
//! likelihood of a sampled broadcast sequence is available in closed form
//! under both members of an adjacent pair. [`dp_ratio_check`] evaluates that
//! log-likelihood ratio directly instead of estimating it from histograms.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::engine::{replay_with_weights, run_with_noise, NoiseSource, ScheduleParams, NOISE_UNDERFLOW};
use crate::error::{Error, Result};
use crate::math::{norm1, LaplaceParam};
use crate::problem::{AdjacentPair, CostConstants, ProblemInstance};
use crate::rng::{Purpose, StreamKey};

/// Relative slack allowed by the budget PASS flag.
pub const BUDGET_TOL: f64 = 1e-9;

/// Per-round sensitivity bounds `Δ(1), …, Δ(T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityProfile {
    pub per_round: Vec<f64>,
}

impl SensitivityProfile {
    /// `Δ(t)` for `t ≥ 1`.
    pub fn at(&self, t: usize) -> f64 {
        self.per_round[t - 1]
    }

    pub fn horizon(&self) -> usize {
        self.per_round.len()
    }
}

/// `Δ(t) = 2 C2 √n c q^{t−1}` for `t = 1..=T`.
pub fn sensitivity_bound(
    constants: &CostConstants,
    dim: usize,
    params: &ScheduleParams,
    horizon: usize,
) -> Result<SensitivityProfile> {
    if horizon == 0 {
        return Err(Error::param("horizon T must be at least 1"));
    }
    let scale = 2.0 * constants.c2 * (dim as f64).sqrt();
    Ok(SensitivityProfile {
        per_round: (1..=horizon).map(|t| scale * params.gamma(t)).collect(),
    })
}

/// Per-round privacy losses and their sums.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetReport {
    /// `Δ(t)/M_t`, evaluated from the two schedules.
    pub per_round_ratio: Vec<f64>,
    /// Closed-form partial sums `ε (1 − (q/p)^T)`.
    pub partial_sums: Vec<f64>,
    /// Compensated running sums of `per_round_ratio`.
    pub running_sums: Vec<f64>,
    /// Geometric series limit `(Δ(1)/M_1) / (1 − q/p)`.
    pub infinite_sum: f64,
    pub epsilon_target: f64,
    /// No running sum exceeds `ε (1 + BUDGET_TOL)`.
    pub passed: bool,
}

impl BudgetReport {
    /// The loss actually spent by a `T`-round run.
    pub fn horizon_spend(&self) -> f64 {
        *self.running_sums.last().expect("horizon is at least 1")
    }
}

/// Privacy budget of a `T`-round run.
pub fn budget(constants: &CostConstants, dim: usize, params: &ScheduleParams, horizon: usize) -> Result<BudgetReport> {
    let sens = sensitivity_bound(constants, dim, params, horizon)?;
    let per_round_ratio: Vec<f64> = (1..=horizon)
        .map(|t| sens.at(t) / params.noise_scale(t, constants.c2, dim))
        .collect();
    let ratio = params.q() / params.p();
    let eps = params.epsilon();
    let partial_sums = (1..=horizon)
        .map(|t| eps * (1.0 - ratio.powf(t as f64)))
        .collect();
    let running_sums = compensated_prefix_sums(&per_round_ratio);
    let infinite_sum = per_round_ratio[0] / (1.0 - ratio);
    let passed = running_sums.iter().all(|s| *s <= eps * (1.0 + BUDGET_TOL));
    Ok(BudgetReport {
        per_round_ratio,
        partial_sums,
        running_sums,
        infinite_sum,
        epsilon_target: eps,
        passed,
    })
}

/// Neumaier summation, returning every prefix.
fn compensated_prefix_sums(values: &[f64]) -> Vec<f64> {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    values
        .iter()
        .map(|&v| {
            let t = sum + v;
            if sum.abs() >= v.abs() {
                comp += (sum - t) + v;
            } else {
                comp += (v - t) + sum;
            }
            sum = t;
            sum + comp
        })
        .collect()
}

/// `‖x(t) − x'(t)‖₁` for `t = 1..=T` when both members of the pair are
/// driven by the same observations from the same start.
pub fn measured_sensitivity(
    pair: &AdjacentPair,
    params: &ScheduleParams,
    observations: &[DMatrix<f64>],
    x0: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let weights = pair.base.graph().window(observations.len())?;
    let base = replay_with_weights(&pair.base, params, observations, x0, &weights)?;
    let variant = replay_with_weights(&pair.variant, params, observations, x0, &weights)?;
    Ok(base
        .iter()
        .zip(&variant)
        .skip(1)
        .map(|(a, b)| norm1((a - b).as_slice()))
        .collect())
}

/// `Σ_t Σ_{i,k} log p_{M_t}(y_ik(t) − x_ik(t−1))` along the unique execution
/// that produces `observations`. Rounds whose noise underflowed are skipped.
pub fn observation_log_likelihood(
    problem: &ProblemInstance,
    params: &ScheduleParams,
    observations: &[DMatrix<f64>],
    x0: &DMatrix<f64>,
) -> Result<f64> {
    let weights = problem.graph().window(observations.len())?;
    let states = replay_with_weights(problem, params, observations, x0, &weights)?;
    let (c2, n) = (problem.constants().c2, problem.dim());
    let mut total = 0.0;
    for (idx, y) in observations.iter().enumerate() {
        let t = idx + 1;
        let scale = params.noise_scale(t, c2, n);
        if scale < NOISE_UNDERFLOW {
            continue;
        }
        let lap = LaplaceParam::new(scale)?;
        total += (y - &states[idx]).iter().map(|r| lap.log_density(*r)).sum::<f64>();
    }
    Ok(total)
}

/// Outcome of [`dp_ratio_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct DpRatioReport {
    /// `max` over trials of `|log L − log L'|`.
    pub max_log_ratio: f64,
    pub mean_abs_log_ratio: f64,
    /// `|log L − log L'|` of every trial, in trial order.
    pub per_trial: Vec<f64>,
    /// `Σ_{t≤T} Δ(t)/M_t`, the accounted budget of the horizon.
    pub accounted_budget: f64,
    /// `Σ_{t≤T} Δ(t−1)/M_t` with `Δ(0) = 0`: the round-`t` broadcast
    /// carries `x(t−1)`, so this is the bound the likelihood ratio obeys
    /// pointwise. It sums to `ε/p` as `T → ∞`.
    pub lagged_bound: f64,
    pub trials: usize,
}

/// Runs the base problem `trials` times and evaluates the exact log
/// likelihood ratio of each sampled observation sequence against the variant.
pub fn dp_ratio_check(
    pair: &AdjacentPair,
    params: &ScheduleParams,
    horizon: usize,
    trials: usize,
    seed: u64,
) -> Result<DpRatioReport> {
    if trials == 0 {
        return Err(Error::param("need at least one trial"));
    }
    if horizon == 0 {
        return Err(Error::param("horizon T must be at least 1"));
    }
    let base = &pair.base;
    let (c2, n, agents) = (base.constants().c2, base.dim(), base.agents());
    let weights = base.graph().window(horizon)?;
    let x0 = base.initial_state()?;
    let scales: Vec<Option<LaplaceParam>> = (1..=horizon)
        .map(|t| {
            let m = params.noise_scale(t, c2, n);
            (m >= NOISE_UNDERFLOW).then(|| LaplaceParam::new(m).expect("positive scale"))
        })
        .collect();

    let per_trial = (0..trials as u64)
        .into_par_iter()
        .map(|trial| -> Result<f64> {
            let key = StreamKey::new(seed, Purpose::Noise, u64::MAX, trial);
            let trace = run_with_noise(base, params, horizon, NoiseSource::new(key, agents, n))?;
            let obs = trace.observations();
            let variant = replay_with_weights(&pair.variant, params, &obs, &x0, &weights)?;
            let mut log_ratio = 0.0;
            for (idx, rec) in trace.records.iter().enumerate() {
                let Some(lap) = &scales[idx] else { continue };
                for ((y, x), xv) in rec.y.iter().zip(rec.x_prev.iter()).zip(variant[idx].iter()) {
                    log_ratio += lap.log_density(y - x) - lap.log_density(y - xv);
                }
            }
            Ok(log_ratio.abs())
        })
        .collect::<Result<Vec<f64>>>()?;

    let sens = sensitivity_bound(base.constants(), n, params, horizon)?;
    let accounted_budget = (1..=horizon).map(|t| sens.at(t) / params.noise_scale(t, c2, n)).sum();
    let lagged_bound = (2..=horizon).map(|t| sens.at(t - 1) / params.noise_scale(t, c2, n)).sum();
    let max_log_ratio = per_trial.iter().copied().fold(0.0, f64::max);
    let mean_abs_log_ratio = per_trial.iter().sum::<f64>() / trials as f64;
    Ok(DpRatioReport {
        max_log_ratio,
        mean_abs_log_ratio,
        per_trial,
        accounted_budget,
        lagged_bound,
        trials,
    })
}

/// Uniformly random observation sequences: each broadcast coordinate is
/// uniform on the domain side widened by `spread` on both ends.
pub fn random_observations(
    problem: &ProblemInstance,
    horizon: usize,
    spread: f64,
    seed: u64,
    index: u64,
) -> Vec<DMatrix<f64>> {
    let mut rng = StreamKey::new(seed, Purpose::Observations, index, 0).stream(0);
    let (lo, hi) = (problem.domain().lower(), problem.domain().upper());
    (0..horizon)
        .map(|_| {
            DMatrix::from_fn(problem.agents(), problem.dim(), |_, k| {
                rng.next_range(lo[k] - spread, hi[k] + spread)
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run;
    use crate::graph::GraphSchedule;
    use crate::math::{BoxDomain, Point};
    use crate::problem::{make_adjacent, make_rendezvous};
    use approx::assert_abs_diff_eq;

    fn rendezvous_constants() -> CostConstants {
        CostConstants::quadratic_on(&BoxDomain::centered_cube(2, 1.0).unwrap())
    }

    fn pair(seed: u64) -> AdjacentPair {
        let d = BoxDomain::centered_cube(2, 1.0).unwrap();
        let p = make_rendezvous(d, 4, GraphSchedule::random_connected(4, seed).unwrap(), seed).unwrap();
        let far = p.domain().far_corner(p.cost(1).anchor().unwrap().as_slice());
        make_adjacent(&p, 1, far).unwrap()
    }

    #[test]
    fn sensitivity_examples() {
        let s = ScheduleParams::new(1.0, 0.1, 0.5, 0.8).unwrap();
        let prof = sensitivity_bound(&rendezvous_constants(), 2, &s, 10).unwrap();
        assert_abs_diff_eq!(prof.at(1), 1.6, epsilon = 1e-12);
        assert_abs_diff_eq!(prof.at(2), 0.8, epsilon = 1e-12);
        for t in 1..10 {
            assert_abs_diff_eq!(prof.at(t + 1) / prof.at(t), 0.5, epsilon = 1e-15);
            assert!(prof.at(t + 1) < prof.at(t));
        }
        assert!(sensitivity_bound(&rendezvous_constants(), 2, &s, 0).is_err());
    }

    #[test]
    fn budget_examples() {
        let s = ScheduleParams::new(1.0, 0.1, 0.5, 0.8).unwrap();
        let r = budget(&rendezvous_constants(), 2, &s, 50).unwrap();
        assert_abs_diff_eq!(r.per_round_ratio[0], 0.375, epsilon = 1e-14);
        assert_abs_diff_eq!(r.per_round_ratio[1], 0.234375, epsilon = 1e-14);
        assert_abs_diff_eq!(r.infinite_sum, 1.0, epsilon = 1e-12);
        assert!(r.partial_sums.iter().all(|s| *s <= 1.0));
        assert!(r.horizon_spend() <= 1.0);
        assert!(r.passed);
        for (a, b) in r.partial_sums.iter().zip(&r.running_sums) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn smaller_epsilon_scales_noise_up() {
        let c2 = rendezvous_constants().c2;
        let s = ScheduleParams::new(2.0, 0.1, 0.5, 0.8).unwrap();
        let half = s.with_epsilon(1.0).unwrap();
        for t in 1..20 {
            assert_abs_diff_eq!(half.noise_scale(t, c2, 2) / s.noise_scale(t, c2, 2), 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn identical_problems_have_zero_sensitivity_and_ratio() {
        let d = BoxDomain::centered_cube(2, 1.0).unwrap();
        let p = make_rendezvous(d, 3, GraphSchedule::ring(3).unwrap(), 5).unwrap();
        let same = AdjacentPair {
            base: p.clone(),
            variant: p.clone(),
            changed_agent: 0,
        };
        let s = ScheduleParams::new(1.0, 0.1, 0.5, 0.8).unwrap();
        let obs = random_observations(&p, 30, 1.0, 3, 0);
        let m = measured_sensitivity(&same, &s, &obs, &p.initial_state().unwrap()).unwrap();
        assert!(m.iter().all(|v| *v == 0.0));
        let r = dp_ratio_check(&same, &s, 30, 20, 1).unwrap();
        assert_eq!(r.max_log_ratio, 0.0);
    }

    #[test]
    fn measured_sensitivity_respects_bound() {
        let pr = pair(3);
        let s = ScheduleParams::new(1.0, 0.3, 0.7, 0.9).unwrap();
        let bound = sensitivity_bound(pr.base.constants(), 2, &s, 60).unwrap();
        let x0 = pr.base.initial_state().unwrap();
        let live = run(&pr.base, &s, 60, 11).unwrap().observations();
        for obs in [live, random_observations(&pr.base, 60, 2.0, 4, 1)] {
            let m = measured_sensitivity(&pr, &s, &obs, &x0).unwrap();
            for (t, v) in m.iter().enumerate() {
                assert!(*v <= bound.at(t + 1) + 1e-9, "round {}: {v} > {}", t + 1, bound.at(t + 1));
            }
            assert!(m.iter().any(|v| *v > 0.0));
        }
    }

    #[test]
    fn likelihood_ratio_within_budget() {
        let pr = pair(9);
        let s = ScheduleParams::new(1.0, 0.2, 0.5, 0.8).unwrap();
        let r = dp_ratio_check(&pr, &s, 60, 200, 7).unwrap();
        assert!(r.max_log_ratio <= 1.0 + 1e-6);
        assert!(r.max_log_ratio <= r.lagged_bound + 1e-9);
        assert_abs_diff_eq!(r.accounted_budget, 1.0 * (1.0 - 0.625f64.powi(60)), epsilon = 1e-12);
        assert_eq!(r.per_trial.len(), 200);
        assert!(r.max_log_ratio > 0.0);
    }

    #[test]
    fn ratio_check_matches_likelihood_difference() {
        let pr = pair(2);
        let s = ScheduleParams::new(0.5, 0.2, 0.5, 0.8).unwrap();
        let r = dp_ratio_check(&pr, &s, 25, 3, 5).unwrap();
        let key = StreamKey::new(5, Purpose::Noise, u64::MAX, 1);
        let trace = run_with_noise(&pr.base, &s, 25, NoiseSource::new(key, 4, 2)).unwrap();
        let obs = trace.observations();
        let x0 = pr.base.initial_state().unwrap();
        let l = observation_log_likelihood(&pr.base, &s, &obs, &x0).unwrap();
        let lv = observation_log_likelihood(&pr.variant, &s, &obs, &x0).unwrap();
        assert_abs_diff_eq!((l - lv).abs(), r.per_trial[1], epsilon = 1e-9);
    }

    #[test]
    fn random_observations_shape() {
        let pr = pair(1);
        let obs = random_observations(&pr.base, 7, 0.5, 1, 2);
        assert_eq!(obs.len(), 7);
        assert_eq!((obs[0].nrows(), obs[0].ncols()), (4, 2));
        assert!(obs.iter().all(|m| m.iter().all(|v| v.abs() <= 1.5)));
        let _ = Point::zeros(1);
    }
}
