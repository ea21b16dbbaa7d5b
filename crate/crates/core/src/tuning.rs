//! Accuracy bounds and schedule tuning.
//!
//! The limiting mean squared error of the averaged estimate is bounded by
//!
//! ```text
//! d = C1 e^{−C3 c/(1−q)} + C2² c²/(1−q²) + 8 C2² n c² p² / (ε² (p−q)² (1−p²))
//! ```
//!
//! [`tune`] minimises `d` one coordinate at a time, solving the stationarity
//! condition of each coordinate with the others held fixed.

use rayon::prelude::*;

use crate::engine::ScheduleParams;
use crate::error::{Error, Result};
use crate::graph::ConvergenceEnvelope;
use crate::math::BoxDomain;
use crate::problem::CostConstants;
use crate::rng::{Purpose, StreamKey};

/// Distance kept from the open ends of the `q` interval.
pub const Q_MARGIN: f64 = 1e-6;

/// Relative improvement below which [`tune`] stops early.
pub const TUNE_TOL: f64 = 1e-10;

/// Sign-change scan resolution for [`solve_q_star`].
const Q_SCAN_POINTS: usize = 4096;

/// The three terms of `d`, reported separately.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyBound {
    /// `C1 e^{−C3 c/(1−q)}`
    pub term_init: f64,
    /// `C2² c²/(1−q²)`
    pub term_step: f64,
    /// `8 C2² n c² p² / (ε² (p−q)² (1−p²))`
    pub term_noise: f64,
    pub d: f64,
    /// `d` with the first term doubled. Use this one when comparing against
    /// simulations; it is the form the convergence argument actually yields.
    pub d_conservative: f64,
}

impl AccuracyBound {
    fn from_terms(term_init: f64, term_step: f64, term_noise: f64) -> Self {
        Self {
            term_init,
            term_step,
            term_noise,
            d: term_init + term_step + term_noise,
            d_conservative: 2.0 * term_init + term_step + term_noise,
        }
    }
}

/// Evaluates `d` for validated parameters.
///
/// ```
/// use dpdo::engine::ScheduleParams;
/// use dpdo::problem::CostConstants;
/// use dpdo::tuning::accuracy_bound;
///
/// let k = CostConstants::new(1.0, 1.0, 1.0).unwrap();
/// let params = ScheduleParams::new(1.0, 0.1, 0.5, 0.8).unwrap();
/// let b = accuracy_bound(&k, 1, &params);
/// assert!((b.d - (b.term_init + b.term_step + b.term_noise)).abs() < 1e-15);
/// ```
pub fn accuracy_bound(constants: &CostConstants, dim: usize, params: &ScheduleParams) -> AccuracyBound {
    let (t1, t2, t3) = terms(
        constants,
        dim,
        params.epsilon(),
        params.c(),
        params.q(),
        params.p(),
    );
    AccuracyBound::from_terms(t1, t2, t3)
}

fn terms(k: &CostConstants, dim: usize, eps: f64, c: f64, q: f64, p: f64) -> (f64, f64, f64) {
    let c2sq = k.c2 * k.c2;
    let init = k.c1 * (-k.c3 * c / (1.0 - q)).exp();
    let step = c2sq * c * c / (1.0 - q * q);
    let noise = 8.0 * c2sq * dim as f64 * c * c * p * p / (eps * eps * (p - q).powi(2) * (1.0 - p * p));
    (init, step, noise)
}

fn d_of(k: &CostConstants, dim: usize, eps: f64, c: f64, q: f64, p: f64) -> f64 {
    let (a, b, n) = terms(k, dim, eps, c, q, p);
    a + b + n
}

fn check_inputs(eps: f64, q: f64, p: f64) -> Result<()> {
    ScheduleParams::new(eps, 1.0, q, p).map(|_| ())
}

/// Bisection on a bracket with `f(lo)` and `f(hi)` of opposite sign.
/// Runs to machine resolution.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let f_lo = f(lo);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = f(mid);
        if v == 0.0 {
            return mid;
        }
        if (v > 0.0) == (f_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `∂d/∂c`.
pub fn d_c_derivative(k: &CostConstants, dim: usize, eps: f64, c: f64, q: f64, p: f64) -> f64 {
    -c_residual(k, dim, eps, c, q, p)
}

// left side minus right side of the c stationarity equation; decreasing in c
fn c_residual(k: &CostConstants, dim: usize, eps: f64, c: f64, q: f64, p: f64) -> f64 {
    let r = 1.0 - q;
    let lhs = k.c1 * k.c3 / r * (-k.c3 * c / r).exp();
    let coef = 1.0 / (1.0 - q * q) + 8.0 * dim as f64 * p * p / (eps * eps * (p - q).powi(2) * (1.0 - p * p));
    lhs - 2.0 * k.c2 * k.c2 * c * coef
}

/// The unique minimiser of `d` in `c` with `ε, q, p` fixed.
///
/// The stationarity condition `C1 C3/(1−q) e^{−C3 c/(1−q)} = 2 C2² c (1/(1−q²) + 8np²/(ε²(p−q)²(1−p²)))`
/// has a strictly decreasing left side and a right side increasing from 0,
/// so it has exactly one root.
pub fn solve_c_star(constants: &CostConstants, dim: usize, eps: f64, q: f64, p: f64) -> Result<f64> {
    check_inputs(eps, q, p)?;
    let f = |c: f64| c_residual(constants, dim, eps, c, q, p);
    let lo = 1e-12;
    if f(lo) <= 0.0 {
        return Ok(lo);
    }
    let mut hi = 1.0;
    while f(hi) >= 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::NonConvergence("no upper bracket for c*".into()));
        }
    }
    Ok(bisect(f, lo, hi))
}

/// `∂d/∂q`.
pub fn d_q_derivative(k: &CostConstants, dim: usize, eps: f64, c: f64, q: f64, p: f64) -> f64 {
    let c2sq = k.c2 * k.c2;
    let r = 1.0 - q;
    let init = -k.c1 * k.c3 * c / (r * r) * (-k.c3 * c / r).exp();
    let step = 2.0 * q * c2sq * c * c / (1.0 - q * q).powi(2);
    let noise = 16.0 * c2sq * dim as f64 * c * c * p * p / (eps * eps * (p - q).powi(3) * (1.0 - p * p));
    init + step + noise
}

/// Result of [`solve_q_star`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QStar {
    pub q: f64,
    /// `false` when the best point found is an end of the search interval
    /// rather than a root of `∂d/∂q`.
    pub interior: bool,
}

/// Minimiser of `d` in `q ∈ (0, p)` with `ε, c, p` fixed.
///
/// `d` need not be convex in `q`. The interval is scanned for sign changes of
/// `∂d/∂q`, each bracket is bisected, and the local minima are compared
/// against the interval ends.
pub fn solve_q_star(constants: &CostConstants, dim: usize, eps: f64, c: f64, p: f64) -> Result<QStar> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::param(format!("step size c must be positive, got {c}")));
    }
    check_inputs(eps, p / 2.0, p)?;
    let g = |q: f64| d_q_derivative(constants, dim, eps, c, q, p);
    let d = |q: f64| d_of(constants, dim, eps, c, q, p);
    let (lo, hi) = (Q_MARGIN, p - Q_MARGIN);
    if lo >= hi {
        return Err(Error::param(format!("p = {p} leaves no room for q")));
    }

    let mut best = QStar { q: lo, interior: false };
    let mut best_d = d(lo);
    if d(hi) < best_d {
        best = QStar { q: hi, interior: false };
        best_d = d(hi);
    }
    let grid: Vec<f64> = (0..=Q_SCAN_POINTS)
        .map(|k| lo + (hi - lo) * k as f64 / Q_SCAN_POINTS as f64)
        .collect();
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        // a minimum sits where the derivative turns from negative to positive
        if g(a) < 0.0 && g(b) >= 0.0 {
            let root = bisect(g, a, b);
            let v = d(root);
            if v < best_d {
                best = QStar { q: root, interior: true };
                best_d = v;
            }
        }
    }
    Ok(best)
}

/// `p* = q^{1/3}`, the minimiser of the noise term over `p ∈ (q, 1)`.
pub fn solve_p_star(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::param(format!("q must lie in (0, 1), got {q}")));
    }
    Ok(q.cbrt())
}

/// Residual of `q (1 − p²) = p² (p − q)`.
pub fn p_residual(q: f64, p: f64) -> f64 {
    q * (1.0 - p * p) - p * p * (p - q)
}

/// Numeric root of [`p_residual`] on `(q, 1)`; agrees with [`solve_p_star`].
pub fn solve_p_star_numeric(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::param(format!("q must lie in (0, 1), got {q}")));
    }
    Ok(bisect(|p| p_residual(q, p), q, 1.0))
}

/// Which coordinate a tuning step updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinate {
    C,
    P,
    Q,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningStep {
    pub coordinate: Coordinate,
    pub params: ScheduleParams,
    pub d: f64,
    /// The solver's proposal was kept (it did not increase `d`).
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningResult {
    pub params: ScheduleParams,
    pub d_achieved: f64,
    /// Completed `c → p → q` cycles.
    pub iterations: usize,
    /// Stopped because a cycle improved `d` by less than [`TUNE_TOL`].
    pub converged: bool,
    pub initial_d: f64,
    pub history: Vec<TuningStep>,
}

impl TuningResult {
    pub fn bound(&self, constants: &CostConstants, dim: usize) -> AccuracyBound {
        accuracy_bound(constants, dim, &self.params)
    }
}

/// Cyclic coordinate descent on `d`, updating `c`, then `p`, then `q`.
///
/// A proposal that would raise `d` is rejected, so `d` never increases.
pub fn tune(
    constants: &CostConstants,
    dim: usize,
    eps: f64,
    initial: &ScheduleParams,
    passes: usize,
) -> Result<TuningResult> {
    if passes == 0 {
        return Err(Error::param("tuning needs at least one pass"));
    }
    let mut current = initial.with_epsilon(eps)?;
    let mut d = accuracy_bound(constants, dim, &current).d;
    let initial_d = d;
    let mut history = Vec::with_capacity(3 * passes);
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..passes {
        let start = d;
        for coordinate in [Coordinate::C, Coordinate::P, Coordinate::Q] {
            let (c, q, p) = (current.c(), current.q(), current.p());
            let proposal = match coordinate {
                Coordinate::C => ScheduleParams::new(eps, solve_c_star(constants, dim, eps, q, p)?, q, p)?,
                Coordinate::P => ScheduleParams::new(eps, c, q, solve_p_star(q)?)?,
                Coordinate::Q => ScheduleParams::new(eps, c, solve_q_star(constants, dim, eps, c, p)?.q, p)?,
            };
            let proposed_d = accuracy_bound(constants, dim, &proposal).d;
            let accepted = proposed_d <= d;
            if accepted {
                current = proposal;
                d = proposed_d;
            }
            history.push(TuningStep {
                coordinate,
                params: current,
                d,
                accepted,
            });
        }
        iterations += 1;
        if start - d <= TUNE_TOL * start.abs() {
            converged = true;
            break;
        }
    }

    Ok(TuningResult {
        params: current,
        d_achieved: d,
        iterations,
        converged,
        initial_d,
        history,
    })
}

/// Starting point used when nothing better is known.
pub fn default_initial(eps: f64) -> Result<ScheduleParams> {
    ScheduleParams::new(eps, 0.1, 0.5, 0.8)
}

/// A random valid starting point: `c` log-uniform on `[10⁻³, 1]`,
/// `q` uniform on `[0.05, 0.95]`, `p` uniform on `(q, 1)`.
pub fn random_initial(eps: f64, seed: u64, index: u64) -> Result<ScheduleParams> {
    let mut s = StreamKey::new(seed, Purpose::Tuning, index, 0).stream(0);
    let c = 10f64.powf(s.next_range(-3.0, 0.0));
    let q = s.next_range(0.05, 0.95);
    let p = s.next_range(q, 1.0);
    ScheduleParams::new(eps, c, q, p)
}

/// Runs [`tune`] from the default start and `extra_starts` random starts and
/// returns the best result together with all of them.
///
/// Ties go to the lowest start index, so the outcome does not depend on
/// thread scheduling.
pub fn tune_multistart(
    constants: &CostConstants,
    dim: usize,
    eps: f64,
    extra_starts: usize,
    passes: usize,
    seed: u64,
) -> Result<(TuningResult, Vec<TuningResult>)> {
    let runs = (0..=extra_starts as u64)
        .into_par_iter()
        .map(|k| {
            let init = if k == 0 {
                default_initial(eps)?
            } else {
                random_initial(eps, seed, k)?
            };
            tune(constants, dim, eps, &init, passes)
        })
        .collect::<Result<Vec<_>>>()?;
    let best = runs
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.d_achieved.total_cmp(&b.d_achieved).then(i.cmp(j)))
        .map(|(_, r)| r.clone())
        .expect("at least one start");
    Ok((best, runs))
}

/// Envelope on pairwise disagreement `‖x_i(t) − x_j(t)‖`:
///
/// ```text
/// M1 β^t + M2 Σ_{s≤t} β^{t−s} γ_s + M3 Σ_{s≤t} β^{t−s+1} ‖w(s)‖
/// ```
///
/// with `M1 = 2Nθ sup‖x‖`, `M2 = 2N C2 θ`, `M3 = 2Nθ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceBound {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub beta: f64,
}

impl ConvergenceBound {
    pub fn new(envelope: &ConvergenceEnvelope, constants: &CostConstants, agents: usize, domain: &BoxDomain) -> Self {
        let base = 2.0 * agents as f64 * envelope.theta;
        Self {
            m1: base * domain.sup_norm(),
            m2: base * constants.c2,
            m3: base,
            beta: envelope.beta,
        }
    }

    /// Bound at round `t`; `noise_norms[s−1]` is the noise norm of round `s`.
    pub fn at(&self, params: &ScheduleParams, noise_norms: &[f64], t: usize) -> Result<f64> {
        if t > noise_norms.len() {
            return Err(Error::DimensionMismatch {
                expected: t,
                actual: noise_norms.len(),
            });
        }
        Ok(self.profile(params, &noise_norms[..t]).last().copied().unwrap_or(self.m1))
    }

    /// Bounds for `t = 1..=noise_norms.len()`, computed by recurrence.
    pub fn profile(&self, params: &ScheduleParams, noise_norms: &[f64]) -> Vec<f64> {
        let mut step_sum = 0.0;
        let mut noise_sum = 0.0;
        let mut decay = 1.0;
        noise_norms
            .iter()
            .enumerate()
            .map(|(idx, w)| {
                let t = idx + 1;
                step_sum = self.beta * step_sum + params.gamma(t);
                noise_sum = self.beta * (noise_sum + w);
                decay *= self.beta;
                self.m1 * decay + self.m2 * step_sum + self.m3 * noise_sum
            })
            .collect()
    }
}
