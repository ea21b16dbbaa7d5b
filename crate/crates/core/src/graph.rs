//! Time-varying doubly stochastic communication matrices.
//!
//! Each round's matrix carries Metropolis weights on a connected undirected
//! graph: `a_ij = 1 / (1 + max(deg_i, deg_j))` on edges and the leftover mass
//! on the diagonal. The construction is symmetric, so rows and columns both
//! sum to one, and every positive entry is at least `1/N`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Purpose, StreamKey};

/// Tolerance on row and column sums of a single weight matrix.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Default probability of adding each non-tree edge in the random family.
pub const DEFAULT_EXTRA_EDGE_PROBABILITY: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum GraphFamily {
    Complete,
    Ring,
    /// A fresh connected graph every round: a uniform spanning tree plus each
    /// remaining edge independently with `extra_edge_probability`.
    RandomConnected {
        #[serde(default = "default_extra_edge_probability")]
        extra_edge_probability: f64,
    },
}

fn default_extra_edge_probability() -> f64 {
    DEFAULT_EXTRA_EDGE_PROBABILITY
}

impl GraphFamily {
    pub fn name(&self) -> &'static str {
        match self {
            GraphFamily::Complete => "complete",
            GraphFamily::Ring => "ring",
            GraphFamily::RandomConnected { .. } => "random-connected",
        }
    }
}

/// The weight matrix `A_t` of round `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub round: usize,
    pub entries: DMatrix<f64>,
}

impl WeightMatrix {
    /// Smallest positive entry (diagonal entries included even when zero).
    pub fn min_positive_entry(&self) -> f64 {
        let n = self.entries.nrows();
        let mut min = f64::INFINITY;
        for i in 0..n {
            for j in 0..n {
                let v = self.entries[(i, j)];
                if i == j || v > 0.0 {
                    min = min.min(v);
                }
            }
        }
        min
    }

    /// Checks nonnegativity, double stochasticity, the `η` floor and
    /// connectivity of the support.
    pub fn validate(&self, eta: f64) -> Result<()> {
        let fail = |reason: String| Error::Certification {
            round: self.round,
            reason,
        };
        let a = &self.entries;
        let n = a.nrows();
        if a.ncols() != n {
            return Err(fail(format!("matrix is {}x{}", n, a.ncols())));
        }
        for i in 0..n {
            let row: f64 = a.row(i).sum();
            let col: f64 = a.column(i).sum();
            if (row - 1.0).abs() > STOCHASTIC_TOL {
                return Err(fail(format!("row {i} sums to {row}")));
            }
            if (col - 1.0).abs() > STOCHASTIC_TOL {
                return Err(fail(format!("column {i} sums to {col}")));
            }
        }
        for i in 0..n {
            for j in 0..n {
                let v = a[(i, j)];
                if v < 0.0 {
                    return Err(fail(format!("negative entry a[{i},{j}] = {v}")));
                }
                if (i == j || v > 0.0) && v < eta - STOCHASTIC_TOL {
                    return Err(fail(format!("entry a[{i},{j}] = {v} below eta = {eta}")));
                }
            }
        }
        if !support_connected(a) {
            return Err(fail("support graph is disconnected".into()));
        }
        Ok(())
    }
}

fn support_connected(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if !seen[j] && (a[(i, j)] > 0.0 || a[(j, i)] > 0.0) {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Constants `(θ, β)` with `|Φ(t,s)_ij − 1/N| ≤ θ β^{t−s}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceEnvelope {
    pub theta: f64,
    pub beta: f64,
}

impl ConvergenceEnvelope {
    /// `β = 1 − η/(4N²)`, `θ = β⁻²`.
    pub fn new(agents: usize, eta: f64) -> Result<Self> {
        if agents < 2 {
            return Err(Error::param(format!("need at least 2 agents, got {agents}")));
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::param(format!("eta must lie in (0, 1], got {eta}")));
        }
        let beta = 1.0 - eta / (4.0 * (agents * agents) as f64);
        Ok(Self {
            theta: beta.powi(-2),
            beta,
        })
    }

    /// `θ β^{gap}`.
    pub fn at(&self, gap: usize) -> f64 {
        self.theta * self.beta.powf(gap as f64)
    }
}

/// A deterministic sequence of weight matrices `A_1, A_2, …`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSchedule {
    #[serde(flatten)]
    family: GraphFamily,
    agents: usize,
    #[serde(default)]
    seed: u64,
}

impl GraphSchedule {
    pub fn new(family: GraphFamily, agents: usize, seed: u64) -> Result<Self> {
        if agents < 2 {
            return Err(Error::param(format!(
                "a communication graph needs at least 2 agents, got {agents}"
            )));
        }
        if let GraphFamily::RandomConnected {
            extra_edge_probability: p,
        } = family
        {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::param(format!(
                    "extra edge probability must lie in [0, 1], got {p}"
                )));
            }
        }
        Ok(Self {
            family,
            agents,
            seed,
        })
    }

    pub fn complete(agents: usize) -> Result<Self> {
        Self::new(GraphFamily::Complete, agents, 0)
    }

    pub fn ring(agents: usize) -> Result<Self> {
        Self::new(GraphFamily::Ring, agents, 0)
    }

    pub fn random_connected(agents: usize, seed: u64) -> Result<Self> {
        Self::new(
            GraphFamily::RandomConnected {
                extra_edge_probability: DEFAULT_EXTRA_EDGE_PROBABILITY,
            },
            agents,
            seed,
        )
    }

    /// Re-checks the invariants of a deserialized schedule.
    pub fn validated(self) -> Result<Self> {
        Self::new(self.family, self.agents, self.seed)
    }

    pub fn family(&self) -> GraphFamily {
        self.family
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A lower bound on the connection strength that holds for every round.
    ///
    /// Exact for the fixed families. For the random family, Metropolis
    /// weights never drop below `1/(1 + deg) ≥ 1/N`; [`certify_eta`]
    /// returns the (larger) value observed over a finite horizon.
    ///
    /// [`certify_eta`]: GraphSchedule::certify_eta
    pub fn eta(&self) -> f64 {
        match self.family {
            GraphFamily::Complete => 1.0 / self.agents as f64,
            GraphFamily::Ring if self.agents == 2 => 0.5,
            GraphFamily::Ring => 1.0 / 3.0,
            GraphFamily::RandomConnected { .. } => 1.0 / self.agents as f64,
        }
    }

    pub fn envelope(&self) -> ConvergenceEnvelope {
        ConvergenceEnvelope::new(self.agents, self.eta()).expect("schedule invariants hold")
    }

    /// Adjacency lists of the round-`t` graph.
    fn edges_at(&self, t: usize) -> Vec<Vec<usize>> {
        let n = self.agents;
        let mut adj = vec![Vec::new(); n];
        let link = |adj: &mut Vec<Vec<usize>>, i: usize, j: usize| {
            adj[i].push(j);
            adj[j].push(i);
        };
        match self.family {
            GraphFamily::Complete => {
                for i in 0..n {
                    for j in i + 1..n {
                        link(&mut adj, i, j);
                    }
                }
            }
            GraphFamily::Ring => {
                if n == 2 {
                    link(&mut adj, 0, 1);
                } else {
                    for i in 0..n {
                        link(&mut adj, i, (i + 1) % n);
                    }
                }
            }
            GraphFamily::RandomConnected {
                extra_edge_probability,
            } => {
                let mut rng = StreamKey::new(self.seed, Purpose::Graph, t as u64, 0).stream(0);
                let mut in_tree = vec![vec![false; n]; n];
                let prufer: Vec<usize> = (0..n.saturating_sub(2)).map(|_| rng.next_index(n)).collect();
                for (i, j) in decode_prufer(&prufer, n) {
                    in_tree[i][j] = true;
                    in_tree[j][i] = true;
                    link(&mut adj, i, j);
                }
                for i in 0..n {
                    for j in i + 1..n {
                        // one draw per candidate pair keeps the stream layout fixed
                        let u = rng.next_uniform();
                        if !in_tree[i][j] && u < extra_edge_probability {
                            link(&mut adj, i, j);
                        }
                    }
                }
            }
        }
        adj
    }

    /// The Metropolis weight matrix of round `t ≥ 1`.
    pub fn matrix_at(&self, t: usize) -> Result<WeightMatrix> {
        if t == 0 {
            return Err(Error::param("rounds are numbered from 1"));
        }
        let adj = self.edges_at(t);
        let n = self.agents;
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            for &j in &adj[i] {
                a[(i, j)] = 1.0 / (1 + adj[i].len().max(adj[j].len())) as f64;
            }
        }
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| a[(i, j)]).sum();
            a[(i, i)] = 1.0 - off;
        }
        Ok(WeightMatrix {
            round: t,
            entries: a,
        })
    }

    /// Matrices for rounds `1..=horizon`.
    pub fn window(&self, horizon: usize) -> Result<Vec<DMatrix<f64>>> {
        match self.family {
            GraphFamily::Complete | GraphFamily::Ring => {
                let a = self.matrix_at(1)?.entries;
                Ok(vec![a; horizon])
            }
            GraphFamily::RandomConnected { .. } => (1..=horizon)
                .map(|t| self.matrix_at(t).map(|w| w.entries))
                .collect(),
        }
    }

    /// Validates every matrix up to `horizon` and returns the smallest
    /// positive entry seen, which is a valid `η` over that horizon.
    pub fn certify_eta(&self, horizon: usize) -> Result<f64> {
        if horizon == 0 {
            return Err(Error::param("certification horizon must be at least 1"));
        }
        let rounds = match self.family {
            GraphFamily::Complete | GraphFamily::Ring => 1,
            GraphFamily::RandomConnected { .. } => horizon,
        };
        let mut eta = f64::INFINITY;
        for t in 1..=rounds {
            let w = self.matrix_at(t)?;
            w.validate(self.eta())?;
            eta = eta.min(w.min_positive_entry());
        }
        Ok(eta)
    }

    /// `Φ(k, s) = A(s+1) · A(s+2) ⋯ A(k)`; the identity when `k = s`.
    ///
    /// Every `A(t)` is symmetric, so this is the transpose of the state
    /// propagator `A(k) ⋯ A(s+1)` and has the same entry bounds.
    pub fn transfer_matrix(&self, s: usize, k: usize) -> Result<DMatrix<f64>> {
        if k < s {
            return Err(Error::param(format!("transfer matrix needs k ≥ s, got k={k}, s={s}")));
        }
        let mut phi = DMatrix::identity(self.agents, self.agents);
        for t in s + 1..=k {
            phi *= self.matrix_at(t)?.entries;
        }
        Ok(phi)
    }
}

/// Decodes a Prüfer sequence into the edges of the labelled tree on `n` nodes.
fn decode_prufer(seq: &[usize], n: usize) -> Vec<(usize, usize)> {
    if n == 2 {
        return vec![(0, 1)];
    }
    let mut degree = vec![1usize; n];
    for &v in seq {
        degree[v] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    for &v in seq {
        let leaf = (0..n).find(|&u| degree[u] == 1).expect("a leaf always exists");
        edges.push((leaf, v));
        degree[leaf] -= 1;
        degree[v] -= 1;
    }
    let rest: Vec<usize> = (0..n).filter(|&u| degree[u] == 1).collect();
    edges.push((rest[0], rest[1]));
    edges
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn complete_four_is_uniform() {
        let a = GraphSchedule::complete(4).unwrap().matrix_at(1).unwrap().entries;
        for v in a.iter() {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn ring_three_is_thirds() {
        let a = GraphSchedule::ring(3).unwrap().matrix_at(7).unwrap().entries;
        for v in a.iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn ring_five_structure() {
        let a = GraphSchedule::ring(5).unwrap().matrix_at(1).unwrap().entries;
        assert_abs_diff_eq!(a[(0, 1)], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a[(0, 4)], 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(a[(0, 2)], 0.0);
        assert_abs_diff_eq!(a[(0, 0)], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn single_agent_rejected() {
        assert!(GraphSchedule::complete(1).is_err());
        assert!(GraphSchedule::ring(1).is_err());
        assert!(GraphSchedule::random_connected(1, 0).is_err());
        assert!(GraphSchedule::ring(4).unwrap().matrix_at(0).is_err());
    }

    #[test]
    fn certified_eta_fixed_families() {
        assert_eq!(GraphSchedule::complete(4).unwrap().certify_eta(50).unwrap(), 0.25);
        assert_abs_diff_eq!(
            GraphSchedule::ring(5).unwrap().certify_eta(50).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn certified_eta_random_family() {
        let g = GraphSchedule::random_connected(6, 17).unwrap();
        let eta = g.certify_eta(1000).unwrap();
        assert!(eta >= 1.0 / 36.0);
        assert!(eta >= g.eta());
    }

    #[test]
    fn random_family_is_deterministic_and_varies() {
        let g = GraphSchedule::random_connected(7, 3).unwrap();
        assert_eq!(g.matrix_at(5).unwrap(), g.matrix_at(5).unwrap());
        let distinct = (1..=20)
            .map(|t| g.matrix_at(t).unwrap().entries)
            .collect::<Vec<_>>()
            .windows(2)
            .filter(|w| w[0] != w[1])
            .count();
        assert!(distinct > 0);
    }

    #[test]
    fn matrices_are_symmetric_and_valid() {
        for n in 2..=8 {
            for g in [
                GraphSchedule::complete(n).unwrap(),
                GraphSchedule::ring(n).unwrap(),
                GraphSchedule::random_connected(n, n as u64).unwrap(),
            ] {
                for t in 1..=30 {
                    let w = g.matrix_at(t).unwrap();
                    assert_eq!(w.entries, w.entries.transpose());
                    w.validate(g.eta()).unwrap();
                }
            }
        }
    }

    #[test]
    fn invalid_matrix_reports_round() {
        let w = WeightMatrix {
            round: 9,
            entries: DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.4, 0.6]),
        };
        match w.validate(0.1) {
            Err(Error::Certification { round, .. }) => assert_eq!(round, 9),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn prufer_decoding_gives_spanning_trees() {
        let mut rng = StreamKey::new(5, Purpose::Audit, 0, 0).stream(0);
        for n in 3..10 {
            for _ in 0..50 {
                let seq: Vec<usize> = (0..n - 2).map(|_| rng.next_index(n)).collect();
                let edges = decode_prufer(&seq, n);
                assert_eq!(edges.len(), n - 1);
                let mut a = DMatrix::zeros(n, n);
                for (i, j) in edges {
                    a[(i, j)] = 1.0;
                    a[(j, i)] = 1.0;
                }
                assert!(support_connected(&a));
            }
        }
    }

    #[test]
    fn envelope_examples() {
        let e = ConvergenceEnvelope::new(4, 0.25).unwrap();
        assert_eq!(e.beta, 0.99609375);
        assert_abs_diff_eq!(e.theta, 1.0078585159554018, epsilon = 1e-12);
        let e = ConvergenceEnvelope::new(2, 1.0).unwrap();
        assert_eq!(e.beta, 0.9375);
        assert_abs_diff_eq!(e.theta, 1.1377777777777778, epsilon = 1e-12);
        let mut last = 0.0;
        for eta in [1.0, 0.5, 0.1, 0.01, 1e-4] {
            let b = ConvergenceEnvelope::new(5, eta).unwrap().beta;
            assert!(b > last);
            last = b;
        }
        assert!(ConvergenceEnvelope::new(1, 0.5).is_err());
        assert!(ConvergenceEnvelope::new(3, 0.0).is_err());
        assert!(ConvergenceEnvelope::new(3, 1.5).is_err());
    }

    #[test]
    fn transfer_matrix_examples() {
        let ring = GraphSchedule::ring(4).unwrap();
        assert_eq!(ring.transfer_matrix(3, 3).unwrap(), DMatrix::identity(4, 4));
        assert!(ring.transfer_matrix(4, 3).is_err());

        let complete = GraphSchedule::complete(5).unwrap();
        let phi = complete.transfer_matrix(2, 9).unwrap();
        for v in phi.iter() {
            assert_abs_diff_eq!(*v, 0.2, epsilon = 1e-14);
        }

        let phi = ring.transfer_matrix(10, 60).unwrap();
        let env = ConvergenceEnvelope::new(4, ring.certify_eta(60).unwrap()).unwrap();
        let worst = phi.iter().map(|v| (v - 0.25).abs()).fold(0.0, f64::max);
        assert!(worst < env.at(50), "{worst} vs {}", env.at(50));
    }

    #[test]
    fn long_products_stay_doubly_stochastic() {
        let g = GraphSchedule::random_connected(6, 99).unwrap();
        let phi = g.transfer_matrix(0, 1000).unwrap();
        for i in 0..6 {
            assert_abs_diff_eq!(phi.row(i).sum(), 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(phi.column(i).sum(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn schedule_roundtrips_through_toml() {
        let g = GraphSchedule::random_connected(5, 11).unwrap();
        let text = toml::to_string(&g).unwrap();
        assert!(text.contains("random-connected"));
        let back: GraphSchedule = toml::from_str(&text).unwrap();
        assert_eq!(back, g);
    }
}
