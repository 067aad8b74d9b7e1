//! One-state coordination game: reward 1 iff every agent plays the target
//! action.

use super::{ActionSpace, EnvError, JointAction, MultiAgentEnv, StepResult};
use crate::graph::AgentGraph;

pub struct BanditEnv {
    n_actions: usize,
    target: usize,
    horizon: usize,
    graph: AgentGraph,
    t: usize,
}

impl BanditEnv {
    pub fn new(n_agents: usize, n_actions: usize, target: usize, horizon: usize) -> Result<Self, EnvError> {
        if target >= n_actions {
            return Err(EnvError::ActionOutOfRange {
                agent: 0,
                action: target,
                n_actions,
            });
        }
        let graph = AgentGraph::complete(n_agents).map_err(|_| EnvError::AgentCount {
            expected: 1,
            actual: 0,
        })?;
        Ok(BanditEnv {
            n_actions,
            target,
            horizon: horizon.max(1),
            graph,
            t: 0,
        })
    }

    pub fn target(&self) -> usize {
        self.target
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        vec![vec![1.0]; self.graph.n_agents()]
    }
}

impl MultiAgentEnv for BanditEnv {
    fn n_agents(&self) -> usize {
        self.graph.n_agents()
    }

    fn graph(&self) -> &AgentGraph {
        &self.graph
    }

    fn observation_dim(&self, _agent: usize) -> usize {
        1
    }

    fn action_space(&self, _agent: usize) -> ActionSpace {
        ActionSpace::Discrete(self.n_actions)
    }

    fn reset(&mut self) -> Vec<Vec<f64>> {
        self.t = 0;
        self.observations()
    }

    fn step(&mut self, action: &JointAction) -> Result<StepResult, EnvError> {
        if self.t >= self.horizon {
            return Err(EnvError::EpisodeFinished);
        }
        let JointAction::Discrete(a) = action else {
            return Err(EnvError::WrongActionKind { expected: "discrete" });
        };
        if a.len() != self.n_agents() {
            return Err(EnvError::AgentCount {
                expected: self.n_agents(),
                actual: a.len(),
            });
        }
        if let Some((agent, &bad)) = a.iter().enumerate().find(|(_, &x)| x >= self.n_actions) {
            return Err(EnvError::ActionOutOfRange {
                agent,
                action: bad,
                n_actions: self.n_actions,
            });
        }
        self.t += 1;
        let hit = a.iter().all(|&x| x == self.target);
        Ok(StepResult {
            observations: self.observations(),
            reward: if hit { 1.0 } else { 0.0 },
            terminal: self.t >= self.horizon,
        })
    }

    fn horizon(&self) -> usize {
        self.horizon
    }
}
