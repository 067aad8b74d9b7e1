//! Experiment configuration: strict JSON with line-addressed diagnostics.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{OptimizerConfig, OptimizerKind};
use crate::envs::routing::DemandConfig;
use crate::envs::wifi::WifiModel;
use crate::envs::EnvError;
use crate::json::{AddressedError, SpannedDoc};
use crate::nccac::{AcLearnerConfig, AcNetworkConfig, AcVariant};
use crate::nccq::{Bypass, NetworkConfig, QLearnerConfig, QVariant};
use crate::schedule::LinearDecay;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Invalid(#[from] AddressedError),
    /// The referenced topology file itself is broken.
    #[error(transparent)]
    Topology(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Algorithm {
    NccQ,
    GraphQ,
    GccQ,
    Vdn,
    Idqn,
    NccAc,
    GraphAc,
    GccAc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::NccQ,
        Algorithm::GraphQ,
        Algorithm::GccQ,
        Algorithm::Vdn,
        Algorithm::Idqn,
        Algorithm::NccAc,
        Algorithm::GraphAc,
        Algorithm::GccAc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::NccQ => "NCC_Q",
            Algorithm::GraphQ => "GRAPH_Q",
            Algorithm::GccQ => "GCC_Q",
            Algorithm::Vdn => "VDN",
            Algorithm::Idqn => "IDQN",
            Algorithm::NccAc => "NCC_AC",
            Algorithm::GraphAc => "GRAPH_AC",
            Algorithm::GccAc => "GCC_AC",
        }
    }

    pub fn q_variant(self) -> Option<QVariant> {
        Some(match self {
            Algorithm::NccQ => QVariant::Ncc,
            Algorithm::GraphQ => QVariant::Graph,
            Algorithm::GccQ => QVariant::Gcc,
            Algorithm::Vdn => QVariant::Vdn,
            Algorithm::Idqn => QVariant::Idqn,
            _ => return None,
        })
    }

    pub fn ac_variant(self) -> Option<AcVariant> {
        Some(match self {
            Algorithm::NccAc => AcVariant::NccAc,
            Algorithm::GraphAc => AcVariant::GraphAc,
            Algorithm::GccAc => AcVariant::GccAc,
            _ => return None,
        })
    }

    pub fn is_actor_critic(self) -> bool {
        self.ac_variant().is_some()
    }

    /// Module name written into checkpoints.
    pub fn module(self) -> &'static str {
        if self.is_actor_critic() {
            "nccac"
        } else {
            "nccq"
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn default_horizon() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Routing {
        topology: PathBuf,
        #[serde(default)]
        demand: DemandConfig,
        #[serde(default = "default_horizon")]
        horizon: usize,
    },
    Wifi {
        topology: PathBuf,
        #[serde(default)]
        model: WifiModel,
        #[serde(default = "default_horizon")]
        horizon: usize,
    },
    Bandit {
        agents: usize,
        actions: usize,
        target: usize,
        #[serde(default = "one")]
        horizon: usize,
    },
}

fn one() -> usize {
    1
}

impl EnvSpec {
    pub fn horizon(&self) -> usize {
        match self {
            EnvSpec::Routing { horizon, .. } | EnvSpec::Wifi { horizon, .. } | EnvSpec::Bandit { horizon, .. } => *horizon,
        }
    }

    /// Whether the environment takes continuous path splits.
    pub fn continuous(&self) -> bool {
        matches!(self, EnvSpec::Routing { .. })
    }
}

/// Injects a NaN loss into one seed at one training step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fault {
    pub seed: u64,
    pub step: u64,
}

fn d_alpha() -> f64 {
    0.1
}
fn d_gamma() -> f64 {
    0.98
}
fn d_lr() -> f64 {
    1e-3
}
fn d_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn d_replay() -> usize {
    50_000
}
fn d_batch() -> usize {
    32
}
fn d_sync() -> u64 {
    200
}
fn d_eval_episodes() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub env: EnvSpec,
    pub algorithm: Algorithm,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    /// Q network, or the critic for actor-critic algorithms.
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_lr")]
    pub actor_lr: f64,
    #[serde(default = "d_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
    /// Widths; the accepted keys depend on the algorithm family.
    #[serde(default)]
    pub network: Option<serde_json::Value>,
    #[serde(default = "d_replay")]
    pub replay_capacity: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_sync")]
    pub target_sync: u64,
    /// Environment steps between training steps.
    #[serde(default = "one")]
    pub train_every: usize,
    /// Environment steps before the first training step; defaults to one batch.
    #[serde(default)]
    pub warmup: Option<usize>,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    /// Epsilon for Q learners, logit noise scale for actor-critic.
    #[serde(default)]
    pub exploration: Option<LinearDecay>,
    /// Greedy evaluation every this many episodes; 0 disables it.
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default = "d_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default)]
    pub bypass: Bypass,
    #[serde(default)]
    pub stop_grad_neighbor: bool,
    #[serde(default)]
    pub share_agent_nets: Option<bool>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub fault: Option<Fault>,
}

/// A validated config plus where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub cfg: ExperimentConfig,
    /// Relative paths in the config resolve against this directory.
    pub base_dir: PathBuf,
    pub network: Network,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    Q(NetworkConfig),
    Ac(AcNetworkConfig),
}

impl LoadedConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, &path.display().to_string(), &base)
    }

    pub fn from_json(text: &str, origin: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let (cfg, doc): (ExperimentConfig, _) = SpannedDoc::parse(text, origin)?;
        let network = validate(&cfg, &doc)?;
        let loaded = LoadedConfig {
            cfg,
            base_dir: base_dir.to_path_buf(),
            network,
        };
        loaded.check_topology(&doc)?;
        Ok(loaded)
    }

    /// Builds a config from values already in memory (tests, FFI).
    pub fn from_config(cfg: ExperimentConfig, base_dir: &Path) -> Result<Self, ConfigError> {
        let text = serde_json::to_string_pretty(&cfg).expect("config serializes");
        Self::from_json(&text, "<config>", base_dir)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn check_topology(&self, doc: &SpannedDoc) -> Result<(), ConfigError> {
        let path = match &self.cfg.env {
            EnvSpec::Routing { topology, .. } | EnvSpec::Wifi { topology, .. } => self.resolve(topology),
            EnvSpec::Bandit { .. } => return Ok(()),
        };
        if !path.is_file() {
            return Err(doc
                .error_at("/env/topology", format!("topology file {} not found", path.display()))
                .into());
        }
        Ok(())
    }

    pub fn q_config(&self, seed: u64) -> Option<QLearnerConfig> {
        let c = &self.cfg;
        let Network::Q(net) = &self.network else { return None };
        Some(QLearnerConfig {
            variant: c.algorithm.q_variant()?,
            alpha: c.alpha,
            gamma: c.gamma,
            optimizer: self.optimizer(c.lr),
            network: net.clone(),
            replay_capacity: c.replay_capacity,
            batch_size: c.batch_size,
            target_sync: c.target_sync,
            bypass: c.bypass,
            stop_grad_neighbor: c.stop_grad_neighbor,
            inject_nan_at_step: self.fault_step(seed),
        })
    }

    pub fn ac_config(&self, seed: u64) -> Option<AcLearnerConfig> {
        let c = &self.cfg;
        let Network::Ac(net) = &self.network else { return None };
        Some(AcLearnerConfig {
            variant: c.algorithm.ac_variant()?,
            alpha: c.alpha,
            gamma: c.gamma,
            critic_optimizer: self.optimizer(c.lr),
            actor_optimizer: self.optimizer(c.actor_lr),
            network: net.clone(),
            replay_capacity: c.replay_capacity,
            batch_size: c.batch_size,
            target_sync: c.target_sync,
            bypass: c.bypass,
            stop_grad_neighbor: c.stop_grad_neighbor,
            exploration: self.exploration(),
            inject_nan_at_step: self.fault_step(seed),
        })
    }

    pub fn exploration(&self) -> LinearDecay {
        self.cfg.exploration.unwrap_or(if self.cfg.algorithm.is_actor_critic() {
            LinearDecay {
                start: 0.3,
                end: 0.02,
                fraction: 0.8,
            }
        } else {
            LinearDecay {
                start: 1.0,
                end: 0.05,
                fraction: 0.5,
            }
        })
    }

    pub fn warmup(&self) -> usize {
        self.cfg.warmup.unwrap_or(self.cfg.batch_size)
    }

    fn fault_step(&self, seed: u64) -> Option<u64> {
        self.cfg.fault.filter(|f| f.seed == seed).map(|f| f.step)
    }

    fn optimizer(&self, lr: f64) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.cfg.optimizer,
            max_grad_norm: self.cfg.max_grad_norm,
            ..OptimizerConfig::adam(lr)
        }
    }
}

fn validate(c: &ExperimentConfig, doc: &SpannedDoc) -> Result<Network, AddressedError> {
    let err = |p: &str, m: &str| Err(doc.error_at(p, m));
    if !(c.alpha >= 0.0 && c.alpha.is_finite()) {
        return err("/alpha", "alpha must be finite and nonnegative");
    }
    if !(0.0..=1.0).contains(&c.gamma) {
        return err("/gamma", "gamma must lie in [0, 1]");
    }
    for (key, lr) in [("/lr", c.lr), ("/actor_lr", c.actor_lr)] {
        if !(lr >= 0.0 && lr.is_finite()) {
            return err(key, "learning rate must be finite and nonnegative");
        }
    }
    if let Some(g) = c.max_grad_norm {
        if !(g > 0.0) {
            return err("/max_grad_norm", "must be positive");
        }
    }
    if c.batch_size == 0 {
        return err("/batch_size", "must be at least 1");
    }
    if c.replay_capacity < c.batch_size {
        return err("/replay_capacity", "must hold at least one batch");
    }
    if c.target_sync == 0 {
        return err("/target_sync", "must be at least 1");
    }
    if c.train_every == 0 {
        return err("/train_every", "must be at least 1");
    }
    if c.seeds.is_empty() {
        return err("/seeds", "at least one seed is required");
    }
    let mut seen = std::collections::BTreeSet::new();
    for (k, s) in c.seeds.iter().enumerate() {
        if !seen.insert(s) {
            return err(&format!("/seeds/{k}"), "duplicate seed");
        }
    }
    if c.env.horizon() == 0 {
        return err("/env/horizon", "must be at least 1");
    }
    if let EnvSpec::Bandit { agents, actions, target, .. } = c.env {
        if agents == 0 {
            return err("/env/agents", "must be at least 1");
        }
        if actions == 0 {
            return err("/env/actions", "must be at least 1");
        }
        if target >= actions {
            return err("/env/target", "must be a valid action index");
        }
    }
    if let Some(e) = &c.exploration {
        if !(0.0..=1.0).contains(&e.fraction) {
            return err("/exploration/fraction", "must lie in [0, 1]");
        }
        if !c.algorithm.is_actor_critic() {
            for (k, v) in [("start", e.start), ("end", e.end)] {
                if !(0.0..=1.0).contains(&v) {
                    return err(&format!("/exploration/{k}"), "epsilon must lie in [0, 1]");
                }
            }
        } else if !(e.start >= 0.0 && e.end >= 0.0) {
            return err("/exploration", "noise scales must be nonnegative");
        }
    }
    if c.eval_every > 0 && c.eval_episodes == 0 {
        return err("/eval_episodes", "must be at least 1 when evaluation is on");
    }
    if let Some(f) = c.fault {
        if !c.seeds.contains(&f.seed) {
            return err("/fault/seed", "not one of the configured seeds");
        }
    }
    if c.algorithm.is_actor_critic() != c.env.continuous() {
        let want = if c.env.continuous() {
            "continuous actions need an actor-critic algorithm"
        } else {
            "discrete actions need a Q-learning algorithm"
        };
        return err("/algorithm", want);
    }
    let net_value = c.network.clone().unwrap_or_else(|| serde_json::json!({}));
    if c.algorithm.is_actor_critic() {
        if c.bypass.mixing {
            return err("/bypass/mixing", "actor-critic learners have no mixing module");
        }
        if c.share_agent_nets.is_some() {
            return err("/share_agent_nets", "only Q-learning algorithms share agent networks");
        }
        let net: AcNetworkConfig =
            serde_json::from_value(net_value).map_err(|e| doc.error_at("/network", e.to_string()))?;
        check_widths(&[net.hidden_dim, net.gcn_dim, net.latent_dim, net.decoder_hidden], doc)?;
        Ok(Network::Ac(net))
    } else {
        let mut net: NetworkConfig =
            serde_json::from_value(net_value).map_err(|e| doc.error_at("/network", e.to_string()))?;
        if let Some(s) = c.share_agent_nets {
            net.share_agent_nets = s;
        }
        check_widths(&[net.hidden_dim, net.gcn_dim, net.latent_dim, net.decoder_hidden], doc)?;
        Ok(Network::Q(net))
    }
}

fn check_widths(w: &[usize], doc: &SpannedDoc) -> Result<(), AddressedError> {
    if w.contains(&0) {
        return Err(doc.error_at("/network", "layer widths must be positive"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<LoadedConfig, ConfigError> {
        LoadedConfig::from_json(text, "c.json", Path::new("."))
    }

    const BANDIT: &str = r#"{
  "env": {"kind": "bandit", "agents": 2, "actions": 3, "target": 1},
  "algorithm": "VDN",
  "episodes": 10,
  "seeds": [1, 2]
}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = load(BANDIT).unwrap();
        assert_eq!(c.cfg.alpha, 0.1);
        assert_eq!(c.warmup(), 32);
        let q = c.q_config(1).unwrap();
        assert_eq!(q.variant, QVariant::Vdn);
        assert!(c.ac_config(1).is_none());
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line() {
        let text = BANDIT.replace("\"episodes\"", "\"epsiodes\": 3,\n  \"episodes\"");
        let e = load(&text).unwrap_err().to_string();
        assert!(e.starts_with("c.json:4:"), "{e}");
        assert!(e.contains("epsiodes"), "{e}");
    }

    #[test]
    fn semantic_errors_point_at_the_field() {
        let text = BANDIT.replace("[1, 2]", "[1,\n 1]");
        let e = load(&text).unwrap_err().to_string();
        assert!(e.starts_with("c.json:6:2: /seeds/1"), "{e}");
        let text = BANDIT.replace("\"VDN\"", "\"NCC_AC\"");
        let e = load(&text).unwrap_err().to_string();
        assert!(e.starts_with("c.json:3:"), "{e}");
        let text = BANDIT.replace("\"seeds\"", "\"network\": {\"hidden\": 3},\n  \"seeds\"");
        let e = load(&text).unwrap_err().to_string();
        assert!(e.contains("/network") && e.contains("hidden"), "{e}");
    }

    #[test]
    fn missing_topology_is_addressed() {
        let text = r#"{"env": {"kind": "wifi",
  "topology": "nope.json"}, "algorithm": "NCC_Q", "episodes": 1, "seeds": [0]}"#;
        let e = load(text).unwrap_err().to_string();
        assert!(e.starts_with("c.json:2:15:"), "{e}");
    }

    #[test]
    fn fault_applies_to_one_seed() {
        let text = BANDIT.replace("\"seeds\"", "\"fault\": {\"seed\": 2, \"step\": 5},\n  \"seeds\"");
        let c = load(&text).unwrap();
        assert_eq!(c.q_config(1).unwrap().inject_nan_at_step, None);
        assert_eq!(c.q_config(2).unwrap().inject_nan_at_step, Some(5));
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            let s = serde_json::to_string(&a).unwrap();
            assert_eq!(s, format!("\"{}\"", a.name()));
            assert_eq!(serde_json::from_str::<Algorithm>(&s).unwrap(), a);
        }
    }
}
