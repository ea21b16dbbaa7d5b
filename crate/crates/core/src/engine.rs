//! The noisy projected-gradient iteration.
//!
//! Round `t` for agent `i`:
//!
//! ```text
//! y_i(t) = x_i(t−1) + w_i(t)            w_i(t) ~ Lap(M_t)^n, i.i.d.
//! z_i(t) = Σ_j a_ij(t) y_j(t)
//! x_i(t) = Π_X[ z_i(t) − γ_t ∇f_i(z_i(t)) ]
//! ```
//!
//! with `γ_t = c q^{t−1}` and `M_t = 2 C2 √n · c p / (ε (p − q)) · p^{t−1}`.
//! States are `N × n` matrices, one row per agent.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{norm2, LaplaceParam, Point};
use crate::problem::ProblemInstance;
use crate::rng::{Purpose, RandomStream, StreamKey};

/// Noise scales below this are treated as exactly zero.
pub const NOISE_UNDERFLOW: f64 = 1e-300;

/// Tolerance of the trace validator on the averaging step.
pub const RECORD_TOL: f64 = 1e-12;

/// Privacy level and the two geometric schedules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ScheduleParams {
    epsilon: f64,
    c: f64,
    q: f64,
    p: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    epsilon: f64,
    c: f64,
    q: f64,
    p: f64,
}

impl TryFrom<RawParams> for ScheduleParams {
    type Error = Error;

    fn try_from(r: RawParams) -> Result<Self> {
        ScheduleParams::new(r.epsilon, r.c, r.q, r.p)
    }
}

impl From<ScheduleParams> for RawParams {
    fn from(s: ScheduleParams) -> Self {
        RawParams {
            epsilon: s.epsilon,
            c: s.c,
            q: s.q,
            p: s.p,
        }
    }
}

impl ScheduleParams {
    /// Requires `ε > 0`, `c > 0` and `0 < q < p < 1`.
    pub fn new(epsilon: f64, c: f64, q: f64, p: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::param(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::param(format!("step size c must be positive, got {c}")));
        }
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::param(format!("step decay q must lie in (0, 1), got {q}")));
        }
        if !(p < 1.0) || p.is_nan() {
            return Err(Error::param(format!("noise decay p must be below 1, got {p}")));
        }
        if p <= q {
            return Err(Error::BudgetDivergence { q, p });
        }
        Ok(Self { epsilon, c, q, p })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(epsilon, self.c, self.q, self.p)
    }

    /// Step size `γ_t = c q^{t−1}`.
    pub fn gamma(&self, t: usize) -> f64 {
        debug_assert!(t >= 1);
        self.c * self.q.powf((t - 1) as f64)
    }

    /// Laplace scale `M_t = 2 C2 √n · c p / (ε (p − q)) · p^{t−1}`.
    pub fn noise_scale(&self, t: usize, c2: f64, n: usize) -> f64 {
        debug_assert!(t >= 1);
        self.initial_noise_scale(c2, n) * self.p.powf((t - 1) as f64)
    }

    pub fn initial_noise_scale(&self, c2: f64, n: usize) -> f64 {
        2.0 * c2 * (n as f64).sqrt() * self.c * self.p / (self.epsilon * (self.p - self.q))
    }

    /// Smallest `T` with `γ_T < threshold`.
    pub fn horizon_for_step(&self, threshold: f64) -> usize {
        let t = 1.0 + (threshold / self.c).ln() / self.q.ln();
        if t.is_finite() && t > 1.0 {
            let mut t = t.ceil() as usize;
            // guard against rounding at the boundary
            while self.gamma(t) >= threshold {
                t += 1;
            }
            t
        } else {
            1
        }
    }
}

/// Independent Laplace noise per agent.
///
/// Agent `i` draws from lane `i` of the key; component `k` of round `t`
/// is word `(t−1)·n + k`, so any single draw is addressable.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    key: Option<StreamKey>,
    lanes: Vec<RandomStream>,
    dim: usize,
}

impl NoiseSource {
    pub fn new(key: StreamKey, agents: usize, dim: usize) -> Self {
        Self {
            key: Some(key),
            lanes: (0..agents).map(|i| key.stream(i as u64)).collect(),
            dim,
        }
    }

    /// Noise for trial `trial` of experiment cell `cell` under master `seed`.
    pub fn for_trial(seed: u64, cell: u64, trial: u64, agents: usize, dim: usize) -> Self {
        Self::new(StreamKey::new(seed, Purpose::Noise, cell, trial), agents, dim)
    }

    /// A source that always yields zero noise.
    pub fn silent(dim: usize) -> Self {
        Self {
            key: None,
            lanes: Vec::new(),
            dim,
        }
    }

    pub fn key(&self) -> Option<StreamKey> {
        self.key
    }

    /// Draws the round-`t` noise matrix, positioning every lane first.
    pub fn draw(&mut self, t: usize, scale: f64, agents: usize) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(agents, self.dim);
        if self.key.is_none() {
            return w;
        }
        let lap = if scale >= NOISE_UNDERFLOW {
            Some(LaplaceParam::new(scale).expect("scale is positive"))
        } else {
            None
        };
        let start = ((t - 1) * self.dim) as u64;
        for (i, lane) in self.lanes.iter_mut().enumerate().take(agents) {
            lane.seek(start);
            for k in 0..self.dim {
                let u = lane.next_uniform();
                if let Some(lap) = &lap {
                    w[(i, k)] = lap.quantile(u);
                }
            }
        }
        w
    }
}

/// Everything that happened in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub t: usize,
    pub x_prev: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub x_next: DMatrix<f64>,
    /// The Laplace scale `M_t` that produced `w`.
    pub noise_scale: f64,
    pub gamma: f64,
}

/// `x_i ← Π_X[z_i − γ ∇f_i(z_i)]` for every row.
fn gradient_step(problem: &ProblemInstance, z: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let n = problem.dim();
    let mut x = z.clone();
    let mut row = vec![0.0; n];
    for i in 0..problem.agents() {
        for k in 0..n {
            row[k] = z[(i, k)];
        }
        let g = problem.cost(i).gradient(&row);
        for k in 0..n {
            x[(i, k)] = row[k] - gamma * g[k];
        }
    }
    problem
        .domain()
        .project_rows(&mut x)
        .expect("state width matches the domain");
    x
}

fn check_shape(problem: &ProblemInstance, m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != problem.agents() || m.ncols() != problem.dim() {
        return Err(Error::Problem(format!(
            "{what} has shape {}x{}, expected {}x{}",
            m.nrows(),
            m.ncols(),
            problem.agents(),
            problem.dim()
        )));
    }
    Ok(())
}

/// One synchronous round with the given weight matrix.
pub fn step(
    problem: &ProblemInstance,
    params: &ScheduleParams,
    x_prev: &DMatrix<f64>,
    weights: &DMatrix<f64>,
    t: usize,
    noise: &mut NoiseSource,
) -> Result<RoundRecord> {
    if t == 0 {
        return Err(Error::param("rounds are numbered from 1"));
    }
    check_shape(problem, x_prev, "state")?;
    let gamma = params.gamma(t);
    let scale = params.noise_scale(t, problem.constants().c2, problem.dim());
    let w = noise.draw(t, scale, problem.agents());
    let y = x_prev + &w;
    // every agent averages the same broadcast vector y(t)
    let z = weights * &y;
    let x_next = gradient_step(problem, &z, gamma);
    Ok(RoundRecord {
        t,
        x_prev: x_prev.clone(),
        w,
        y,
        z,
        x_next,
        noise_scale: if scale >= NOISE_UNDERFLOW { scale } else { 0.0 },
        gamma,
    })
}

/// A complete execution for rounds `1..=T`.
#[derive(Debug, Clone)]
pub struct ExecutionTrace {
    pub records: Vec<RoundRecord>,
    pub x0: DMatrix<f64>,
    pub noise_key: Option<StreamKey>,
    pub params: ScheduleParams,
}

impl ExecutionTrace {
    pub fn horizon(&self) -> usize {
        self.records.len()
    }

    /// `x(t)` for `0 ≤ t ≤ T`.
    pub fn state(&self, t: usize) -> Result<&DMatrix<f64>> {
        match t {
            0 => Ok(&self.x0),
            t if t <= self.records.len() => Ok(&self.records[t - 1].x_next),
            t => Err(Error::param(format!("round {t} beyond horizon {}", self.records.len()))),
        }
    }

    /// The adversary's view `(y(1), …, y(T))`.
    pub fn observations(&self) -> Vec<DMatrix<f64>> {
        self.records.iter().map(|r| r.y.clone()).collect()
    }

    /// `max_{i,j} ‖x_i(t) − x_j(t)‖₂`.
    pub fn disagreement(&self, t: usize) -> Result<f64> {
        Ok(disagreement(self.state(t)?))
    }

    /// `x̄(t) = (1/N) Σ_i x_i(t)`.
    pub fn mean_estimate(&self, t: usize) -> Result<Point> {
        Ok(mean_estimate(self.state(t)?))
    }

    /// `max_k ‖w_k(t)‖₂` for `t = 1..=T`.
    pub fn max_noise_norms(&self) -> Vec<f64> {
        self.records.iter().map(|r| max_row_norm(&r.w)).collect()
    }

    /// Re-checks the three defining equalities of every round.
    pub fn validate(&self, problem: &ProblemInstance) -> Result<()> {
        let mut prev = &self.x0;
        for r in &self.records {
            let fail = |what: &str| Error::Problem(format!("round {}: {what}", r.t));
            if &r.x_prev != prev {
                return Err(fail("x_prev is not the previous state"));
            }
            if r.y != &r.x_prev + &r.w {
                return Err(fail("y ≠ x_prev + w"));
            }
            let a = problem.graph().matrix_at(r.t)?.entries;
            let z = a * &r.y;
            if (z - &r.z).amax() > RECORD_TOL {
                return Err(fail("z ≠ A y"));
            }
            if gradient_step(problem, &r.z, r.gamma) != r.x_next {
                return Err(fail("x_next ≠ Π[z − γ∇f(z)]"));
            }
            if !(0..r.x_next.nrows()).all(|i| {
                let row: Vec<f64> = r.x_next.row(i).iter().copied().collect();
                problem.domain().contains(&row)
            }) {
                return Err(fail("state left the domain"));
            }
            prev = &r.x_next;
        }
        Ok(())
    }
}

pub fn disagreement(state: &DMatrix<f64>) -> f64 {
    let n = state.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((state.row(i) - state.row(j)).norm());
        }
    }
    worst
}

pub fn mean_estimate(state: &DMatrix<f64>) -> Point {
    state.row_mean().transpose()
}

pub(crate) fn max_row_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| {
            let row: Vec<f64> = m.row(i).iter().copied().collect();
            norm2(&row)
        })
        .fold(0.0, f64::max)
}

/// Runs `T` rounds with noise keyed by `seed`.
pub fn run(problem: &ProblemInstance, params: &ScheduleParams, horizon: usize, seed: u64) -> Result<ExecutionTrace> {
    let noise = NoiseSource::for_trial(seed, 0, 0, problem.agents(), problem.dim());
    run_with_noise(problem, params, horizon, noise)
}

pub fn run_with_noise(
    problem: &ProblemInstance,
    params: &ScheduleParams,
    horizon: usize,
    mut noise: NoiseSource,
) -> Result<ExecutionTrace> {
    if horizon == 0 {
        return Err(Error::param("horizon T must be at least 1"));
    }
    let x0 = problem.initial_state()?;
    let weights = problem.graph().window(horizon)?;
    let mut records = Vec::with_capacity(horizon);
    let mut x = x0.clone();
    for (t, a) in (1..=horizon).zip(&weights) {
        let r = step(problem, params, &x, a, t, &mut noise)?;
        x = r.x_next.clone();
        records.push(r);
    }
    Ok(ExecutionTrace {
        records,
        x0,
        noise_key: noise.key(),
        params: *params,
    })
}

/// Reconstructs `x(0), x(1), …, x(T)` from broadcasts alone.
///
/// Given the observations, `z(t) = A_t y(t)` is fixed, and so is the
/// projected gradient step; no randomness is involved. Only the step
/// schedule of `params` is used.
pub fn replay(
    problem: &ProblemInstance,
    params: &ScheduleParams,
    observations: &[DMatrix<f64>],
    x0: &DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    let weights = problem.graph().window(observations.len())?;
    replay_with_weights(problem, params, observations, x0, &weights)
}

/// [`replay`] with the weight matrices already materialized.
pub fn replay_with_weights(
    problem: &ProblemInstance,
    params: &ScheduleParams,
    observations: &[DMatrix<f64>],
    x0: &DMatrix<f64>,
    weights: &[DMatrix<f64>],
) -> Result<Vec<DMatrix<f64>>> {
    check_shape(problem, x0, "initial state")?;
    if weights.len() < observations.len() {
        return Err(Error::param("fewer weight matrices than observations"));
    }
    let mut states = Vec::with_capacity(observations.len() + 1);
    states.push(x0.clone());
    for (idx, (y, a)) in observations.iter().zip(weights).enumerate() {
        check_shape(problem, y, "observation")?;
        let z = a * y;
        states.push(gradient_step(problem, &z, params.gamma(idx + 1)));
    }
    Ok(states)
}

/// Runs `T` rounds keeping only the current state; for Monte Carlo loops.
///
/// Produces bit-identical states to [`run_with_noise`] for the same noise.
pub fn final_state(
    problem: &ProblemInstance,
    params: &ScheduleParams,
    x0: &DMatrix<f64>,
    weights: &[DMatrix<f64>],
    noise: &mut NoiseSource,
) -> Result<DMatrix<f64>> {
    check_shape(problem, x0, "initial state")?;
    let (c2, n) = (problem.constants().c2, problem.dim());
    let mut x = x0.clone();
    for (idx, a) in weights.iter().enumerate() {
        let t = idx + 1;
        let w = noise.draw(t, params.noise_scale(t, c2, n), problem.agents());
        let z = a * (x + w);
        x = gradient_step(problem, &z, params.gamma(t));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphSchedule;
    use crate::math::BoxDomain;
    use crate::problem::make_rendezvous;
    use approx::assert_abs_diff_eq;

    fn square() -> BoxDomain {
        BoxDomain::centered_cube(2, 1.0).unwrap()
    }

    fn pt(v: &[f64]) -> Point {
        Point::from_row_slice(v)
    }

    fn two_agents(a: [f64; 2], b: [f64; 2]) -> ProblemInstance {
        ProblemInstance::quadratic(square(), vec![pt(&a), pt(&b)], GraphSchedule::complete(2).unwrap()).unwrap()
    }

    #[test]
    fn schedule_examples() {
        let s = ScheduleParams::new(1.0, 0.1, 0.5, 0.8).unwrap();
        assert_eq!(s.gamma(1), 0.1);
        let c2 = 4.0 * 2f64.sqrt();
        assert_abs_diff_eq!(s.noise_scale(1, c2, 2), 4.266666666666667, epsilon = 1e-12);
        assert_abs_diff_eq!(s.noise_scale(3, c2, 2), 2.730666666666667, epsilon = 1e-12);
    }

    #[test]
    fn schedule_validation() {
        assert!(matches!(
            ScheduleParams::new(1.0, 0.1, 0.8, 0.8),
            Err(Error::BudgetDivergence { .. })
        ));
        assert!(matches!(
            ScheduleParams::new(1.0, 0.1, 0.8, 0.5),
            Err(Error::BudgetDivergence { .. })
        ));
        assert!(ScheduleParams::new(0.0, 0.1, 0.5, 0.8).is_err());
        assert!(ScheduleParams::new(1.0, -0.1, 0.5, 0.8).is_err());
        assert!(ScheduleParams::new(1.0, 0.1, 0.0, 0.8).is_err());
        assert!(ScheduleParams::new(1.0, 0.1, 0.5, 1.0).is_err());
        assert!(ScheduleParams::new(1.0, 0.1, 0.5, f64::NAN).is_err());
    }

    #[test]
    fn auto_horizon() {
        let s = ScheduleParams::new(1.0, 0.1, 0.5, 0.8).unwrap();
        let t = s.horizon_for_step(1e-6);
        assert!(s.gamma(t) < 1e-6);
        assert!(s.gamma(t - 1) >= 1e-6);
        assert_eq!(t, (1.0 + (1e-6f64 / 0.1).ln() / 0.5f64.ln()).ceil() as usize);
    }

    #[test]
    fn hand_computed_round() {
        let p = two_agents([0.0, 0.0], [1.0, 1.0]);
        let s = ScheduleParams::new(1.0, 0.1, 0.5, 0.8).unwrap();
        let x = p.initial_state().unwrap();
        let a = p.graph().matrix_at(1).unwrap().entries;
        let r = step(&p, &s, &x, &a, 1, &mut NoiseSource::silent(2)).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(r.z[(i, 0)], 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(r.z[(i, 1)], 0.5, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(r.x_next[(0, 0)], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(r.x_next[(0, 1)], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(r.x_next[(1, 0)], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(r.x_next[(1, 1)], 0.6, epsilon = 1e-15);
    }

    #[test]
    fn noiseless_identical_anchors_move_together() {
        let anchor = [0.5, -0.25];
        let p = ProblemInstance::quadratic(
            square(),
            vec![pt(&anchor); 4],
            GraphSchedule::complete(4).unwrap(),
        )
        .unwrap()
        .with_initial(crate::problem::InitialPolicy::Fixed { point: vec![-0.5, 0.5] })
        .unwrap();
        let s = ScheduleParams::new(1.0, 0.1, 0.9, 0.95).unwrap();
        let x = p.initial_state().unwrap();
        let a = p.graph().matrix_at(1).unwrap().entries;
        let r = step(&p, &s, &x, &a, 1, &mut NoiseSource::silent(2)).unwrap();
        for i in 1..4 {
            assert_eq!(r.x_next.row(i), r.x_next.row(0));
        }
        let before = (x.row(0).transpose() - pt(&anchor)).norm();
        let after = (r.x_next.row(0).transpose() - pt(&anchor)).norm();
        assert!(after < before);
    }

    #[test]
    fn projection_keeps_states_inside() {
        // anchors in opposite corners and a huge step push z − γ∇f out of the box
        let p = two_agents([1.0, 1.0], [-1.0, -1.0]);
        let s = ScheduleParams::new(0.05, 3.0, 0.5, 0.9).unwrap();
        let trace = run(&p, &s, 40, 3).unwrap();
        trace.validate(&p).unwrap();
        for r in &trace.records {
            for i in 0..2 {
                assert!(square().contains(&[r.x_next[(i, 0)], r.x_next[(i, 1)]]));
            }
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let p = make_rendezvous(square(), 5, GraphSchedule::random_connected(5, 2).unwrap(), 4).unwrap();
        let s = ScheduleParams::new(1.0, 0.1, 0.5, 0.8).unwrap();
        let a = run(&p, &s, 60, 9).unwrap();
        let b = run(&p, &s, 60, 9).unwrap();
        assert_eq!(a.records, b.records);
        let c = run(&p, &s, 60, 10).unwrap();
        assert_ne!(a.records, c.records);
        assert!(run(&p, &s, 0, 9).is_err());
    }

    #[test]
    fn final_state_matches_trace() {
        let p = make_rendezvous(square(), 4, GraphSchedule::random_connected(4, 8).unwrap(), 1).unwrap();
        let s = ScheduleParams::new(0.5, 0.2, 0.7, 0.9).unwrap();
        let trace = run(&p, &s, 80, 5).unwrap();
        let weights = p.graph().window(80).unwrap();
        let mut noise = NoiseSource::for_trial(5, 0, 0, 4, 2);
        let x = final_state(&p, &s, &p.initial_state().unwrap(), &weights, &mut noise).unwrap();
        assert_eq!(&x, trace.state(80).unwrap());
    }

    #[test]
    fn trace_records_satisfy_update_equations() {
        let p = make_rendezvous(square(), 6, GraphSchedule::random_connected(6, 3).unwrap(), 3).unwrap();
        let s = ScheduleParams::new(1.0, 0.1, 0.5, 0.8).unwrap();
        let trace = run(&p, &s, 50, 1).unwrap();
        trace.validate(&p).unwrap();
        let mut broken = trace.clone();
        broken.records[10].y[(2, 1)] += 1e-3;
        assert!(broken.validate(&p).is_err());
    }

    #[test]
    fn replay_reproduces_trace() {
        let p = make_rendezvous(square(), 5, GraphSchedule::random_connected(5, 6).unwrap(), 6).unwrap();
        let s = ScheduleParams::new(0.7, 0.3, 0.6, 0.85).unwrap();
        let trace = run(&p, &s, 120, 2).unwrap();
        let states = replay(&p, &s, &trace.observations(), &trace.x0).unwrap();
        assert_eq!(states.len(), 121);
        for t in 0..=120 {
            let diff = (&states[t] - trace.state(t).unwrap()).amax();
            assert!(diff <= 1e-12);
        }
    }

    #[test]
    fn replay_of_zero_observations() {
        let p = two_agents([0.2, 0.2], [-0.4, 0.9]);
        let s = ScheduleParams::new(1.0, 0.1, 0.5, 0.8).unwrap();
        let obs = vec![DMatrix::zeros(2, 2); 10];
        let states = replay(&p, &s, &obs, &p.initial_state().unwrap()).unwrap();
        assert_eq!(states.len(), 11);
        assert!(states.iter().all(|x| x.iter().all(|v| v.is_finite())));
        let bad = vec![DMatrix::zeros(3, 2)];
        assert!(replay(&p, &s, &bad, &p.initial_state().unwrap()).is_err());
    }

    #[test]
    fn disagreement_examples() {
        let same = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, 0.1, 0.2, 0.1, 0.2]);
        assert_eq!(disagreement(&same), 0.0);
        let two = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        assert_abs_diff_eq!(disagreement(&two), 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(mean_estimate(&two).as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn underflowing_noise_is_zero() {
        let mut src = NoiseSource::for_trial(1, 0, 0, 3, 2);
        let w = src.draw(4, 1e-320, 3);
        assert!(w.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn noise_draws_are_addressable() {
        let mut a = NoiseSource::for_trial(77, 2, 5, 3, 2);
        let w_seq: Vec<DMatrix<f64>> = (1..=5).map(|t| a.draw(t, 1.0, 3)).collect();
        let mut b = NoiseSource::for_trial(77, 2, 5, 3, 2);
        assert_eq!(b.draw(4, 1.0, 3), w_seq[3]);
        let mut lane = StreamKey::new(77, Purpose::Noise, 2, 5).stream(1);
        let u = lane.uniform_at(3 * 2 + 1);
        assert_eq!(LaplaceParam::new(1.0).unwrap().quantile(u), w_seq[3][(1, 1)]);
    }
}
