//! One interface over the Q and actor-critic learners.

use std::path::Path;

use crate::checkpoint::{self, CheckpointMeta};
use crate::envs::{ActionSpace, JointAction, MultiAgentEnv};
use crate::harness::config::LoadedConfig;
use crate::nccac::NccAcLearner;
use crate::nccq::{NccQLearner, TrainMetrics, Transition};

pub enum Learner {
    Q(Box<NccQLearner>),
    Ac(Box<NccAcLearner>),
}

impl Learner {
    pub fn build(loaded: &LoadedConfig, env: &dyn MultiAgentEnv, seed: u64) -> crate::Result<Self> {
        let n = env.n_agents();
        let obs_dims: Vec<usize> = (0..n).map(|i| env.observation_dim(i)).collect();
        let spaces: Vec<ActionSpace> = (0..n).map(|i| env.action_space(i)).collect();
        let graph = env.graph().clone();
        if let Some(cfg) = loaded.ac_config(seed) {
            let segments = spaces
                .iter()
                .map(|s| match s {
                    ActionSpace::Simplex(seg) => Ok(seg.clone()),
                    ActionSpace::Discrete(_) => Err(crate::Error::Incompatible(
                        "actor-critic learners need simplex action spaces".into(),
                    )),
                })
                .collect::<crate::Result<Vec<_>>>()?;
            return Ok(Learner::Ac(Box::new(NccAcLearner::new(cfg, graph, &obs_dims, &segments, seed)?)));
        }
        let cfg = loaded.q_config(seed).expect("validated config has one learner family");
        let n_actions = spaces
            .iter()
            .map(|s| match s {
                ActionSpace::Discrete(k) => Ok(*k),
                ActionSpace::Simplex(_) => Err(crate::Error::Incompatible(
                    "Q-learning needs discrete action spaces".into(),
                )),
            })
            .collect::<crate::Result<Vec<_>>>()?;
        Ok(Learner::Q(Box::new(NccQLearner::new(cfg, graph, &obs_dims, &n_actions, seed)?)))
    }

    /// Exploratory joint action; `noise` is epsilon or the logit noise scale.
    pub fn explore(&mut self, obs: &[Vec<f64>], noise: f64) -> crate::Result<JointAction> {
        Ok(match self {
            Learner::Q(l) => JointAction::Discrete(l.act(obs, noise)?),
            Learner::Ac(l) => JointAction::Continuous(l.act(obs, noise)?),
        })
    }

    /// Noise-free action with latent means.
    pub fn greedy(&self, obs: &[Vec<f64>]) -> crate::Result<JointAction> {
        Ok(match self {
            Learner::Q(l) => JointAction::Discrete(l.greedy(obs)?),
            Learner::Ac(l) => JointAction::Continuous(l.deterministic(obs)?),
        })
    }

    pub fn remember(&mut self, obs: Vec<Vec<f64>>, action: JointAction, reward: f64, next_obs: Vec<Vec<f64>>, terminal: bool) {
        match (self, action) {
            (Learner::Q(l), JointAction::Discrete(actions)) => l.push(Transition {
                obs,
                actions,
                reward,
                next_obs,
                terminal,
            }),
            (Learner::Ac(l), JointAction::Continuous(actions)) => l.push(Transition {
                obs,
                actions,
                reward,
                next_obs,
                terminal,
            }),
            _ => unreachable!("actions come from the same learner"),
        }
    }

    pub fn train(&mut self) -> crate::Result<Option<TrainMetrics>> {
        match self {
            Learner::Q(l) => l.train_step(),
            Learner::Ac(l) => Ok(l.train_step()?.map(|m| m.summary())),
        }
    }

    pub fn steps(&self) -> u64 {
        match self {
            Learner::Q(l) => l.steps(),
            Learner::Ac(l) => l.steps(),
        }
    }

    pub fn save(&self, path: &Path, meta: &CheckpointMeta) -> crate::Result<()> {
        let stores = match self {
            Learner::Q(l) => l.stores(),
            Learner::Ac(l) => l.stores(),
        };
        Ok(checkpoint::save(path, meta, &stores)?)
    }

    pub fn load(&mut self, path: &Path, module: &str, algorithm: &str) -> crate::Result<CheckpointMeta> {
        let mut stores = match self {
            Learner::Q(l) => l.stores_mut(),
            Learner::Ac(l) => l.stores_mut(),
        };
        Ok(checkpoint::load_into(path, module, algorithm, &mut stores)?)
    }
}
