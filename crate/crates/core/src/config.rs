//! Experiment configuration documents.
//!
//! A configuration is a TOML document; see `configs/unit_square.toml` for the
//! full schema with comments. [`ExperimentConfig::canonical_hash`] identifies
//! a configuration in output manifests.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::ScheduleParams;
use crate::error::{Error, Result};
use crate::graph::{GraphFamily, GraphSchedule, DEFAULT_EXTRA_EDGE_PROBABILITY};
use crate::math::{BoxDomain, Point};
use crate::problem::{make_rendezvous, CostConstants, CostFunction, InitialPolicy, ProblemInstance, QuadraticCost};

/// The rendezvous sweep on the unit square.
pub const UNIT_SQUARE_TOML: &str = include_str!("../configs/unit_square.toml");

/// `γ_T` below which the automatic horizon stops.
pub const AUTO_STEP_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub epsilons: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub horizon: Horizon,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub graph: GraphConfig,
    #[serde(default)]
    pub tuning: TuningConfig,
}

fn default_trials() -> usize {
    500
}

/// `"auto"` or a fixed number of rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Horizon {
    /// Smallest `T` with `γ_T` below [`AUTO_STEP_THRESHOLD`].
    #[default]
    Auto,
    Rounds(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawHorizon {
    Rounds(usize),
    Word(String),
}

impl Serialize for Horizon {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Horizon::Auto => RawHorizon::Word("auto".into()),
            Horizon::Rounds(t) => RawHorizon::Rounds(*t),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Horizon {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match RawHorizon::deserialize(d)? {
            RawHorizon::Rounds(t) => Ok(Horizon::Rounds(t)),
            RawHorizon::Word(w) if w == "auto" => Ok(Horizon::Auto),
            RawHorizon::Word(w) => Err(serde::de::Error::custom(format!(
                "horizon must be \"auto\" or a round count, got \"{w}\""
            ))),
        }
    }
}

impl Horizon {
    /// Rounds to run under `params`.
    pub fn resolve(&self, params: &ScheduleParams) -> usize {
        match self {
            Horizon::Rounds(t) => *t,
            Horizon::Auto => params.horizon_for_step(AUTO_STEP_THRESHOLD),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub agents: usize,
    /// Anchors drawn uniformly from the box with this seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_seed: Option<u64>,
    /// Explicit anchors, one per agent. Takes the place of `anchor_seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub initial: InitialPolicy,
    /// Overrides the closed-form constants; still audited against every cost.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<CostConstants>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    Complete,
    Ring,
    RandomConnected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub family: FamilyName,
    /// Only for `random-connected`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra_edge_probability: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            family: FamilyName::RandomConnected,
            extra_edge_probability: None,
            seed: 0,
        }
    }
}

impl GraphConfig {
    pub fn family(&self) -> Result<GraphFamily> {
        match (self.family, self.extra_edge_probability) {
            (FamilyName::Complete, None) => Ok(GraphFamily::Complete),
            (FamilyName::Ring, None) => Ok(GraphFamily::Ring),
            (FamilyName::RandomConnected, p) => Ok(GraphFamily::RandomConnected {
                extra_edge_probability: p.unwrap_or(DEFAULT_EXTRA_EDGE_PROBABILITY),
            }),
            (_, Some(_)) => Err(Error::Config(
                "extra_edge_probability only applies to the random-connected family".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TuningMode {
    /// Tune `(c, q, p)` separately for every `ε`.
    #[default]
    Auto,
    /// Use the given `(c, q, p)` for every `ε`.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningConfig {
    #[serde(default)]
    pub mode: TuningMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default = "default_passes")]
    pub passes: usize,
    /// Random starts in addition to the default one.
    #[serde(default = "default_starts")]
    pub starts: usize,
}

fn default_passes() -> usize {
    50
}

fn default_starts() -> usize {
    10
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            mode: TuningMode::Auto,
            c: None,
            q: None,
            p: None,
            passes: default_passes(),
            starts: default_starts(),
        }
    }
}

impl TuningConfig {
    /// The fixed `(c, q, p)` at privacy level `eps`.
    pub fn fixed_params(&self, eps: f64) -> Result<ScheduleParams> {
        match (self.c, self.q, self.p) {
            (Some(c), Some(q), Some(p)) => ScheduleParams::new(eps, c, q, p),
            _ => Err(Error::Config("fixed tuning mode needs c, q and p".into())),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// The bundled unit-square sweep, used when no config is given.
    pub fn unit_square() -> Self {
        Self::from_toml(UNIT_SQUARE_TOML).expect("bundled configuration is valid")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical TOML form, in hex. The output directory is
    /// not part of the identity.
    pub fn canonical_hash(&self) -> String {
        let mut cfg = self.clone();
        cfg.out_dir = None;
        hex::encode(Sha256::digest(cfg.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::Config("epsilons must not be empty".into()));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::Config(format!("every epsilon must be positive, got {e}")));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.horizon == Horizon::Rounds(0) {
            return Err(Error::Config("horizon must be at least 1 round".into()));
        }
        if self.problem.agents < 2 {
            return Err(Error::Config(format!(
                "need at least 2 agents, got {}",
                self.problem.agents
            )));
        }
        match (&self.problem.anchor_seed, &self.problem.anchors) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("give either anchor_seed or anchors, not both".into()));
            }
            (None, None) => return Err(Error::Config("problem needs anchor_seed or anchors".into())),
            (None, Some(a)) if a.len() != self.problem.agents => {
                return Err(Error::Config(format!(
                    "{} anchors given for {} agents",
                    a.len(),
                    self.problem.agents
                )));
            }
            _ => {}
        }
        self.graph.family()?;
        if self.tuning.mode == TuningMode::Fixed {
            self.tuning.fixed_params(self.epsilons[0])?;
        } else if self.tuning.passes == 0 {
            return Err(Error::Config("tuning.passes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<BoxDomain> {
        BoxDomain::new(self.problem.lower.clone(), self.problem.upper.clone())
    }

    pub fn graph_schedule(&self) -> Result<GraphSchedule> {
        GraphSchedule::new(self.graph.family()?, self.problem.agents, self.graph.seed)
    }

    /// Builds the problem instance the configuration describes.
    pub fn build_problem(&self) -> Result<ProblemInstance> {
        let domain = self.domain()?;
        let graph = self.graph_schedule()?;
        let base = match (&self.problem.anchors, self.problem.anchor_seed) {
            (Some(anchors), _) => {
                let anchors: Vec<Point> = anchors.iter().map(|a| Point::from_vec(a.clone())).collect();
                match self.problem.constants {
                    Some(k) => {
                        let costs = anchors
                            .into_iter()
                            .map(|a| Arc::new(QuadraticCost::new(a)) as Arc<dyn CostFunction>)
                            .collect();
                        ProblemInstance::new(domain, costs, Arc::new(graph), k)?
                    }
                    None => ProblemInstance::quadratic(domain, anchors, graph)?,
                }
            }
            (None, Some(seed)) => {
                let p = make_rendezvous(domain, self.problem.agents, graph, seed)?;
                match self.problem.constants {
                    Some(k) => ProblemInstance::new(
                        p.domain().clone(),
                        p.costs().to_vec(),
                        Arc::clone(p.graph_handle()),
                        k,
                    )?,
                    None => p,
                }
            }
            (None, None) => return Err(Error::Config("problem needs anchor_seed or anchors".into())),
        };
        base.with_initial(self.problem.initial.clone())
    }
}
