//! Problem instances: domain, per-agent costs, graph schedule and the
//! convexity constants `(C1, C2, C3)` every cost must satisfy.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphSchedule;
use crate::math::{BoxDomain, Point};
use crate::rng::{Purpose, StreamKey};

/// Relative slack allowed by the sampled convexity audits, scaled by the
/// magnitude of the compared terms.
pub const AUDIT_TOL: f64 = 1e-12;

/// Number of sampled points per cost in the construction-time audit.
pub const AUDIT_SAMPLES: usize = 1000;

/// A differentiable individual cost `f_i`.
pub trait CostFunction: fmt::Debug + Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Point;

    /// The private anchor when the cost is `‖x − a‖²`.
    fn anchor(&self) -> Option<&Point> {
        None
    }
}

/// `f(x) = ‖x − anchor‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    anchor: Point,
}

impl QuadraticCost {
    pub fn new(anchor: Point) -> Self {
        Self { anchor }
    }
}

impl CostFunction for QuadraticCost {
    fn dim(&self) -> usize {
        self.anchor.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.anchor.iter())
            .map(|(v, a)| (v - a) * (v - a))
            .sum()
    }

    fn gradient(&self, x: &[f64]) -> Point {
        Point::from_iterator(
            x.len(),
            x.iter().zip(self.anchor.iter()).map(|(v, a)| 2.0 * (v - a)),
        )
    }

    fn anchor(&self) -> Option<&Point> {
        Some(&self.anchor)
    }
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradientFn = dyn Fn(&[f64]) -> Point + Send + Sync;

/// A cost given by user closures for its value and gradient.
#[derive(Clone)]
pub struct ClosureCost {
    name: String,
    dim: usize,
    value: Arc<ValueFn>,
    gradient: Arc<GradientFn>,
}

impl ClosureCost {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> Point + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        }
    }
}

impl fmt::Debug for ClosureCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClosureCost")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .finish()
    }
}

impl CostFunction for ClosureCost {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &[f64]) -> Point {
        (self.gradient)(x)
    }
}

/// Domain diameter `c1`, gradient bound `c2`, strong convexity modulus `c3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl CostConstants {
    pub fn new(c1: f64, c2: f64, c3: f64) -> Result<Self> {
        for (name, v) in [("C1", c1), ("C2", c2), ("C3", c3)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(Self { c1, c2, c3 })
    }

    /// Closed-form constants for `‖x − a‖²` with `x, a` in a box:
    /// `C1 = diam`, `C2 = sup ‖2(x − a)‖ = 2·diam`, `C3 = 2`.
    pub fn quadratic_on(domain: &BoxDomain) -> Self {
        let c1 = domain.diameter();
        Self {
            c1,
            c2: 2.0 * c1,
            c3: 2.0,
        }
    }
}

/// Where agents start.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum InitialPolicy {
    /// Each agent starts at its own anchor (quadratic costs only).
    #[default]
    Anchors,
    /// Every agent starts at the same point.
    Fixed { point: Vec<f64> },
    /// Independent uniform points of the domain.
    Uniform { seed: u64 },
}

/// Checks `‖∇g(x)‖ ≤ C2` and the strong convexity inequality on sampled points.
pub fn audit_cost(
    cost: &dyn CostFunction,
    domain: &BoxDomain,
    constants: &CostConstants,
    samples: usize,
    seed: u64,
) -> Result<()> {
    let mut rng = StreamKey::new(seed, Purpose::Audit, 0, 0).stream(0);
    for _ in 0..samples {
        let x = domain.sample(&mut rng);
        let y = domain.sample(&mut rng);
        let gx = cost.gradient(x.as_slice());
        let gnorm = gx.norm();
        if gnorm > constants.c2 + AUDIT_TOL * (1.0 + constants.c2) {
            return Err(Error::Problem(format!(
                "gradient norm {gnorm} exceeds C2 = {} at {:?}",
                constants.c2,
                x.as_slice()
            )));
        }
        let d = &y - &x;
        let lhs = gx.dot(&d);
        let (fy, fx, curv) = (
            cost.value(y.as_slice()),
            cost.value(x.as_slice()),
            0.5 * constants.c3 * d.norm_squared(),
        );
        let rhs = fy - fx - curv;
        // tolerance relative to the magnitudes that cancel
        let scale = 1.0 + fy.abs() + fx.abs() + curv + lhs.abs();
        if lhs > rhs + AUDIT_TOL * scale {
            return Err(Error::Problem(format!(
                "strong convexity with C3 = {} fails between {:?} and {:?}",
                constants.c3,
                x.as_slice(),
                y.as_slice()
            )));
        }
    }
    Ok(())
}

/// Minimizer of `Σ f_i` over the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub x_star: Point,
    pub f_star: f64,
    /// `true` when found by iterative descent rather than in closed form.
    pub numerical: bool,
}

/// An instance of the private distributed optimization problem.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    domain: BoxDomain,
    costs: Vec<Arc<dyn CostFunction>>,
    graph: Arc<GraphSchedule>,
    constants: CostConstants,
    initial: InitialPolicy,
}

impl ProblemInstance {
    /// Builds and audits an instance. Every cost is checked against the
    /// constants on [`AUDIT_SAMPLES`] sampled pairs.
    pub fn new(
        domain: BoxDomain,
        costs: Vec<Arc<dyn CostFunction>>,
        graph: Arc<GraphSchedule>,
        constants: CostConstants,
    ) -> Result<Self> {
        if costs.len() < 2 {
            return Err(Error::Problem(format!(
                "need at least 2 agents, got {}",
                costs.len()
            )));
        }
        if graph.agents() != costs.len() {
            return Err(Error::Problem(format!(
                "graph has {} agents but {} costs were given",
                graph.agents(),
                costs.len()
            )));
        }
        if constants.c1 + AUDIT_TOL * (1.0 + constants.c1) < domain.diameter() {
            return Err(Error::Problem(format!(
                "C1 = {} is smaller than the domain diameter {}",
                constants.c1,
                domain.diameter()
            )));
        }
        for (i, cost) in costs.iter().enumerate() {
            if cost.dim() != domain.dim() {
                return Err(Error::DimensionMismatch {
                    expected: domain.dim(),
                    actual: cost.dim(),
                });
            }
            if let Some(a) = cost.anchor() {
                if !domain.contains(a.as_slice()) {
                    return Err(Error::Problem(format!("anchor of agent {i} lies outside the domain")));
                }
            }
            audit_cost(cost.as_ref(), &domain, &constants, AUDIT_SAMPLES, i as u64)?;
        }
        Ok(Self {
            domain,
            costs,
            graph,
            constants,
            initial: InitialPolicy::Anchors,
        })
    }

    /// All-quadratic instance with closed-form constants.
    pub fn quadratic(domain: BoxDomain, anchors: Vec<Point>, graph: GraphSchedule) -> Result<Self> {
        let constants = CostConstants::quadratic_on(&domain);
        let costs = anchors
            .into_iter()
            .map(|a| Arc::new(QuadraticCost::new(a)) as Arc<dyn CostFunction>)
            .collect();
        Self::new(domain, costs, Arc::new(graph), constants)
    }

    pub fn with_initial(mut self, initial: InitialPolicy) -> Result<Self> {
        self.initial = initial;
        self.initial_state()?;
        Ok(self)
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn agents(&self) -> usize {
        self.costs.len()
    }

    pub fn costs(&self) -> &[Arc<dyn CostFunction>] {
        &self.costs
    }

    pub fn cost(&self, agent: usize) -> &dyn CostFunction {
        self.costs[agent].as_ref()
    }

    pub fn graph(&self) -> &GraphSchedule {
        &self.graph
    }

    pub fn graph_handle(&self) -> &Arc<GraphSchedule> {
        &self.graph
    }

    pub fn constants(&self) -> &CostConstants {
        &self.constants
    }

    pub fn initial(&self) -> &InitialPolicy {
        &self.initial
    }

    /// Anchors of an all-quadratic instance.
    pub fn anchors(&self) -> Option<Vec<Point>> {
        self.costs.iter().map(|c| c.anchor().cloned()).collect()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn eval_cost(&self, agent: usize, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.cost(agent).value(x))
    }

    pub fn eval_gradient(&self, agent: usize, x: &[f64]) -> Result<Point> {
        self.check_dim(x)?;
        Ok(self.cost(agent).gradient(x))
    }

    /// `f(x) = Σ f_i(x)`.
    pub fn total_cost(&self, x: &[f64]) -> f64 {
        self.costs.iter().map(|c| c.value(x)).sum()
    }

    fn total_gradient(&self, x: &[f64]) -> Point {
        self.costs
            .iter()
            .fold(Point::zeros(x.len()), |acc, c| acc + c.gradient(x))
    }

    /// `N × n` matrix of starting estimates.
    pub fn initial_state(&self) -> Result<DMatrix<f64>> {
        let (n_agents, n) = (self.agents(), self.dim());
        match &self.initial {
            InitialPolicy::Anchors => {
                let anchors = self.anchors().ok_or_else(|| {
                    Error::Problem("anchor start needs quadratic costs; choose a fixed or uniform start".into())
                })?;
                Ok(DMatrix::from_fn(n_agents, n, |i, k| anchors[i][k]))
            }
            InitialPolicy::Fixed { point } => {
                self.check_dim(point)?;
                if !self.domain.contains(point) {
                    return Err(Error::Problem("fixed start lies outside the domain".into()));
                }
                Ok(DMatrix::from_fn(n_agents, n, |_, k| point[k]))
            }
            InitialPolicy::Uniform { seed } => {
                let mut rows = Vec::with_capacity(n_agents);
                for i in 0..n_agents {
                    let mut rng = StreamKey::new(*seed, Purpose::InitialState, 0, 0).stream(i as u64);
                    rows.push(self.domain.sample(&mut rng));
                }
                Ok(DMatrix::from_fn(n_agents, n, |i, k| rows[i][k]))
            }
        }
    }

    /// Minimizer of `Σ f_i` over the domain.
    ///
    /// For all-quadratic instances the objective is separable with
    /// per-coordinate minimizer at the anchor centroid, so the answer is the
    /// clamped centroid. Otherwise projected gradient descent with
    /// backtracking runs until steps fall below `1e-10`.
    pub fn global_optimum(&self) -> Result<Optimum> {
        if let Some(anchors) = self.anchors() {
            let centroid = anchors.iter().fold(Point::zeros(self.dim()), |acc, a| acc + a)
                / anchors.len() as f64;
            let x_star = self.domain.project(centroid.as_slice())?;
            let f_star = self.total_cost(x_star.as_slice());
            return Ok(Optimum {
                x_star,
                f_star,
                numerical: false,
            });
        }
        self.descend(1e-10, 100_000)
    }

    fn descend(&self, tol: f64, max_iter: usize) -> Result<Optimum> {
        let lower = self.domain.lower();
        let upper = self.domain.upper();
        let mut x = (lower + upper) / 2.0;
        let mut fx = self.total_cost(x.as_slice());
        let mut step = 1.0;
        for _ in 0..max_iter {
            let g = self.total_gradient(x.as_slice());
            // backtracking on the projected arc
            loop {
                let cand = self.domain.project((&x - &g * step).as_slice())?;
                let fc = self.total_cost(cand.as_slice());
                let moved = &cand - &x;
                if fc <= fx + g.dot(&moved) + moved.norm_squared() / (2.0 * step) {
                    let delta = moved.norm();
                    x = cand;
                    fx = fc;
                    if delta < tol {
                        return Ok(Optimum {
                            x_star: x,
                            f_star: fx,
                            numerical: true,
                        });
                    }
                    step *= 1.5;
                    break;
                }
                step *= 0.5;
                if step < 1e-300 {
                    return Err(Error::NonConvergence("step size underflow in projected descent".into()));
                }
            }
        }
        Err(Error::NonConvergence(format!(
            "projected gradient descent did not reach tolerance {tol} in {max_iter} iterations"
        )))
    }
}

/// Uniform anchors in `domain` drawn from `seed`, closed-form constants.
pub fn make_rendezvous(
    domain: BoxDomain,
    agents: usize,
    graph: GraphSchedule,
    seed: u64,
) -> Result<ProblemInstance> {
    if agents < 2 {
        return Err(Error::Problem(format!("need at least 2 agents, got {agents}")));
    }
    let anchors = (0..agents)
        .map(|i| {
            let mut rng = StreamKey::new(seed, Purpose::Anchors, 0, 0).stream(i as u64);
            domain.sample(&mut rng)
        })
        .collect();
    ProblemInstance::quadratic(domain, anchors, graph)
}

/// Two instances identical except for one agent's cost.
#[derive(Debug, Clone)]
pub struct AdjacentPair {
    pub base: ProblemInstance,
    pub variant: ProblemInstance,
    pub changed_agent: usize,
}

/// Replaces `agent`'s anchor, keeping domain, graph, constants and all other costs.
pub fn make_adjacent(problem: &ProblemInstance, agent: usize, new_anchor: Point) -> Result<AdjacentPair> {
    if agent >= problem.agents() {
        return Err(Error::Problem(format!(
            "agent {agent} out of range for {} agents",
            problem.agents()
        )));
    }
    if new_anchor.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            actual: new_anchor.len(),
        });
    }
    if !problem.domain().contains(new_anchor.as_slice()) {
        return Err(Error::Problem("new anchor lies outside the domain".into()));
    }
    if let Some(old) = problem.cost(agent).anchor() {
        if *old == new_anchor {
            return Err(Error::Problem(format!(
                "new anchor equals agent {agent}'s current anchor; the pair would not be adjacent"
            )));
        }
    }
    let cost: Arc<dyn CostFunction> = Arc::new(QuadraticCost::new(new_anchor));
    audit_cost(cost.as_ref(), problem.domain(), problem.constants(), AUDIT_SAMPLES, agent as u64)?;
    let mut variant = problem.clone();
    variant.costs[agent] = cost;
    Ok(AdjacentPair {
        base: problem.clone(),
        variant,
        changed_agent: agent,
    })
}
