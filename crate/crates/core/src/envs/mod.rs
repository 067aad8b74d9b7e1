//! Simulated cooperative environments.
//!
//! Every environment shares one reward among all agents and exposes the agent
//! graph derived from its natural topology.

pub mod bandit;
pub mod routing;
pub mod wifi;

use thiserror::Error;

use crate::graph::AgentGraph;
use crate::json::AddressedError;

pub use bandit::BanditEnv;
pub use routing::{mlu, DemandConfig, RoutingEnv, RoutingTopology};
pub use wifi::{WifiEnv, WifiModel, WifiTopology};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Schema(#[from] AddressedError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("agent {agent}: action has {actual} components, expected {expected}")]
    ActionLength { agent: usize, expected: usize, actual: usize },
    #[error("agent {agent}: split fractions of commodity {segment} are not on the simplex ({detail})")]
    InvalidSimplex { agent: usize, segment: usize, detail: String },
    #[error("agent {agent}: power {power} outside [10, 30]")]
    PowerOutOfRange { agent: usize, power: i64 },
    #[error("agent {agent}: action {action} out of range for {n_actions} actions")]
    ActionOutOfRange { agent: usize, action: usize, n_actions: usize },
    #[error("expected a {expected} joint action")]
    WrongActionKind { expected: &'static str },
    #[error("joint action covers {actual} agents, environment has {expected}")]
    AgentCount { expected: usize, actual: usize },
    #[error("link {link}: capacity must be positive, got {capacity}")]
    NonPositiveCapacity { link: usize, capacity: f64 },
    #[error("{0} loads for {1} capacities")]
    LengthMismatch(usize, usize),
    #[error("episode finished; call reset")]
    EpisodeFinished,
}

/// Per-agent action space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActionSpace {
    Discrete(usize),
    /// Consecutive probability simplices with the given sizes.
    Simplex(Vec<usize>),
}

impl ActionSpace {
    /// Number of discrete actions, or the length of the continuous vector.
    pub fn dim(&self) -> usize {
        match self {
            ActionSpace::Discrete(n) => *n,
            ActionSpace::Simplex(segments) => segments.iter().sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum JointAction {
    Discrete(Vec<usize>),
    Continuous(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Vec<f64>>,
    pub reward: f64,
    pub terminal: bool,
}

pub trait MultiAgentEnv: Send {
    fn n_agents(&self) -> usize;
    /// Neighborhoods derived from the topology.
    fn graph(&self) -> &AgentGraph;
    fn observation_dim(&self, agent: usize) -> usize;
    fn action_space(&self, agent: usize) -> ActionSpace;
    fn reset(&mut self) -> Vec<Vec<f64>>;
    fn step(&mut self, action: &JointAction) -> Result<StepResult, EnvError>;
    fn horizon(&self) -> usize;
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<String, EnvError> {
    std::fs::read_to_string(path).map_err(|source| EnvError::Io {
        path: path.display().to_string(),
        source,
    })
}
