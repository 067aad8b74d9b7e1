//! Neighborhood-cognition-consistent Q-learning and its ablations.
//!
//! | variant | GCN | cognition | CD loss            | mixing |
//! |---------|-----|-----------|--------------------|--------|
//! | NCC     | yes | yes       | neighbor KL        | sum    |
//! | GRAPH   | yes | yes       | none (alpha = 0)   | sum    |
//! | GCC     | yes | yes       | unit-Gaussian KL   | sum    |
//! | VDN     | no  | no        | none               | sum    |
//! | IDQN    | no  | no        | none               | none   |
//!
//! Because mixing is a plain sum, the max over joint next actions splits
//! into one max per agent, and every agent acts greedily on its own `Q_i`.

pub mod net;
pub mod replay;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Optimizer, OptimizerConfig, ParamId, ParamStore, Tape, Tensor, Var};
use crate::cognition::{self, CdMode, GaussianLatent};
use crate::graph::AgentGraph;
use crate::rng::{stream, LatentNoise, Stream};

pub use net::{argmax, decomposed_max, mix, Modules, NccQNet, NetworkConfig, QForward};
pub use replay::{ReplayBuffer, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QVariant {
    Ncc,
    Graph,
    Gcc,
    Vdn,
    Idqn,
}

impl QVariant {
    pub fn modules(self) -> Modules {
        let graph = matches!(self, QVariant::Ncc | QVariant::Graph | QVariant::Gcc);
        Modules {
            gcn: graph,
            cognition: graph,
            mixing: self != QVariant::Idqn,
        }
    }

    /// Prior used by the dissonance term, also when it only feeds metrics.
    pub fn cd_mode(self) -> Option<CdMode> {
        match self {
            QVariant::Ncc | QVariant::Graph => Some(CdMode::Neighborhood),
            QVariant::Gcc => Some(CdMode::GlobalUnit),
            QVariant::Vdn | QVariant::Idqn => None,
        }
    }

    /// Whether the dissonance term enters the loss at all.
    pub fn trains_cd(self) -> bool {
        matches!(self, QVariant::Ncc | QVariant::Gcc)
    }
}

/// Switches modules off on top of what the variant already disables.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bypass {
    pub gcn: bool,
    pub cognition: bool,
    pub mixing: bool,
}

impl Bypass {
    pub fn apply(self, m: Modules) -> Modules {
        Modules {
            gcn: m.gcn && !self.gcn,
            cognition: m.cognition && !self.cognition,
            mixing: m.mixing && !self.mixing,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QLearnerConfig {
    pub variant: QVariant,
    pub alpha: f64,
    pub gamma: f64,
    pub optimizer: OptimizerConfig,
    pub network: NetworkConfig,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub target_sync: u64,
    pub bypass: Bypass,
    pub stop_grad_neighbor: bool,
    /// Makes the loss of this training step NaN (fault injection).
    pub inject_nan_at_step: Option<u64>,
}

impl Default for QLearnerConfig {
    fn default() -> Self {
        QLearnerConfig {
            variant: QVariant::Ncc,
            alpha: 0.1,
            gamma: 0.98,
            optimizer: OptimizerConfig::default(),
            network: NetworkConfig::default(),
            replay_capacity: 100_000,
            batch_size: 32,
            target_sync: 200,
            bypass: Bypass::default(),
            stop_grad_neighbor: false,
            inject_nan_at_step: None,
        }
    }
}

/// Per-step training diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainMetrics {
    pub td: f64,
    /// `sum_i cd_i`, present whenever the cognition module is live.
    pub cd: Option<f64>,
    /// Mean KL over ordered neighbor pairs.
    pub neighbor_kl: Option<f64>,
    /// Per agent, mean of the latent-mean components over the batch.
    pub cognition: Option<Vec<f64>>,
}

/// A sampled batch laid out per agent.
#[derive(Debug, Clone)]
pub struct QBatch {
    pub obs: Vec<Tensor>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<Tensor>,
    pub terminal: Vec<bool>,
}

impl QBatch {
    pub fn from_transitions(batch: &[&Transition<usize>]) -> crate::Result<Self> {
        let n = batch[0].obs.len();
        let stack = |f: &dyn Fn(&Transition<usize>) -> &Vec<f64>| -> crate::Result<Tensor> {
            let rows: Vec<&Vec<f64>> = batch.iter().map(|t| f(t)).collect();
            Ok(Tensor::from_rows(&rows)?)
        };
        let mut obs = Vec::with_capacity(n);
        let mut next_obs = Vec::with_capacity(n);
        for i in 0..n {
            obs.push(stack(&|t| &t.obs[i])?);
            next_obs.push(stack(&|t| &t.next_obs[i])?);
        }
        Ok(QBatch {
            obs,
            actions: (0..n).map(|i| batch.iter().map(|t| t.actions[i]).collect()).collect(),
            rewards: batch.iter().map(|t| t.reward).collect(),
            next_obs,
            terminal: batch.iter().map(|t| t.terminal).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Bootstrapped regression targets.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// One `y_total` per row.
    Joint(Vec<f64>),
    /// Per agent, one `y_i` per row (independent learners).
    PerAgent(Vec<Vec<f64>>),
}

/// Loss graph for one batch.
pub struct LossParts<'t> {
    pub total: Var<'t>,
    pub td: Var<'t>,
    pub cd: Option<Var<'t>>,
    pub neighbor_kl: Option<f64>,
    pub cognition: Option<Vec<f64>>,
}

pub struct NccQLearner {
    cfg: QLearnerConfig,
    graph: AgentGraph,
    net: NccQNet,
    params: ParamStore,
    target: ParamStore,
    param_ids: Vec<ParamId>,
    optimizer: Optimizer,
    replay: ReplayBuffer<usize>,
    cd_modes: Vec<CdMode>,
    explore_rng: ChaCha8Rng,
    reparam_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    steps: u64,
    warned_underfilled: bool,
}

impl NccQLearner {
    pub fn new(
        cfg: QLearnerConfig,
        graph: AgentGraph,
        obs_dims: &[usize],
        n_actions: &[usize],
        seed: u64,
    ) -> crate::Result<Self> {
        if obs_dims.len() != graph.n_agents() || n_actions.len() != graph.n_agents() {
            return Err(crate::Error::Dimension {
                context: "agents in learner vs graph".into(),
                expected: graph.n_agents(),
                actual: obs_dims.len(),
            });
        }
        let modules = cfg.bypass.apply(cfg.variant.modules());
        let mut params = ParamStore::new();
        let mut init_rng = stream(seed, Stream::ParamInit);
        let net = NccQNet::new(&mut params, &cfg.network, modules, obs_dims, n_actions, &mut init_rng)?;
        let cd_modes = resolve_cd_modes(cfg.variant.cd_mode().unwrap_or(CdMode::GlobalUnit), &graph);
        Ok(NccQLearner {
            target: params.clone(),
            param_ids: net.params(),
            optimizer: Optimizer::new(cfg.optimizer.clone()),
            replay: ReplayBuffer::new(cfg.replay_capacity),
            explore_rng: stream(seed, Stream::Exploration),
            reparam_rng: stream(seed, Stream::Reparam),
            replay_rng: stream(seed, Stream::Replay),
            steps: 0,
            warned_underfilled: false,
            cd_modes,
            cfg,
            graph,
            net,
            params,
        })
    }

    pub fn config(&self) -> &QLearnerConfig {
        &self.cfg
    }

    pub fn net(&self) -> &NccQNet {
        &self.net
    }

    pub fn graph(&self) -> &AgentGraph {
        &self.graph
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn target_params(&self) -> &ParamStore {
        &self.target
    }

    /// Every parameter store with its checkpoint label.
    pub fn stores(&self) -> Vec<(&'static str, &ParamStore)> {
        vec![("online", &self.params), ("target", &self.target)]
    }

    pub fn stores_mut(&mut self) -> Vec<(&'static str, &mut ParamStore)> {
        vec![("online", &mut self.params), ("target", &mut self.target)]
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.optimizer.set_lr(lr);
    }

    /// Number of completed gradient steps.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    /// Alpha actually applied to the dissonance term.
    pub fn effective_alpha(&self) -> f64 {
        if self.cfg.variant.trains_cd() && self.net.cognition.is_some() {
            self.cfg.alpha
        } else {
            0.0
        }
    }

    /// Per-agent action values from `store` with latent means.
    pub fn q_values_with(&self, store: &ParamStore, obs: &[Vec<f64>]) -> crate::Result<Vec<Vec<f64>>> {
        let tape = Tape::new();
        let p = tape.bind_frozen(store);
        let o = obs
            .iter()
            .map(|v| Ok(tape.constant(Tensor::matrix(1, v.len(), v.clone())?)))
            .collect::<crate::Result<Vec<_>>>()?;
        let out = self.net.forward(&p, &self.graph, &o, &mut LatentNoise::Mean, false)?;
        Ok(out.q.iter().map(Var::to_vec).collect())
    }

    pub fn q_values(&self, obs: &[Vec<f64>]) -> crate::Result<Vec<Vec<f64>>> {
        self.q_values_with(&self.params, obs)
    }

    pub fn greedy(&self, obs: &[Vec<f64>]) -> crate::Result<Vec<usize>> {
        Ok(self.q_values(obs)?.iter().map(|q| argmax(q)).collect())
    }

    /// Epsilon-greedy, independently per agent.
    pub fn act(&mut self, obs: &[Vec<f64>], epsilon: f64) -> crate::Result<Vec<usize>> {
        let greedy = self.greedy(obs)?;
        Ok(greedy
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                if self.explore_rng.random::<f64>() < epsilon {
                    self.explore_rng.random_range(0..self.net.n_actions[i])
                } else {
                    g
                }
            })
            .collect())
    }

    pub fn push(&mut self, t: Transition<usize>) {
        self.replay.push(t);
    }

    /// Targets from the target network with latent means.
    pub fn td_targets(&self, batch: &QBatch) -> crate::Result<Targets> {
        let tape = Tape::new();
        let p = tape.bind_frozen(&self.target);
        let next: Vec<_> = batch.next_obs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = self.net.forward(&p, &self.graph, &next, &mut LatentNoise::Mean, false)?;
        let q: Vec<Vec<f64>> = out.q.iter().map(Var::to_vec).collect();
        let gamma = self.cfg.gamma;
        let rows = batch.len();
        let row_slice = |i: usize, r: usize| {
            let a = self.net.n_actions[i];
            &q[i][r * a..(r + 1) * a]
        };
        let bootstrap = |r: usize, v: f64| {
            if batch.terminal[r] {
                batch.rewards[r]
            } else {
                batch.rewards[r] + gamma * v
            }
        };
        if self.net.modules.mixing {
            Ok(Targets::Joint(
                (0..rows)
                    .map(|r| {
                        let per_agent: Vec<&[f64]> = (0..q.len()).map(|i| row_slice(i, r)).collect();
                        bootstrap(r, decomposed_max(&per_agent))
                    })
                    .collect(),
            ))
        } else {
            Ok(Targets::PerAgent(
                (0..q.len())
                    .map(|i| (0..rows).map(|r| bootstrap(r, decomposed_max(&[row_slice(i, r)]))).collect())
                    .collect(),
            ))
        }
    }

    /// Fresh reparameterization noise for one training forward pass.
    pub fn draw_noise(&mut self, rows: usize) -> Option<Vec<Tensor>> {
        let d = self.net.latent_dim()?;
        let mut noise = LatentNoise::Sample(&mut self.reparam_rng);
        Some(
            (0..self.net.n_agents())
                .map(|_| cognition::noise_tensor(vec![rows, d], &mut noise))
                .collect(),
        )
    }

    /// Builds `L = TD + alpha * sum_i cd_i` on `tape` with the parameters
    /// bound by `p`.
    pub fn loss_parts<'t>(
        &self,
        p: &crate::autodiff::Binding<'t, '_>,
        batch: &QBatch,
        targets: &Targets,
        eps: Option<&[Tensor]>,
    ) -> crate::Result<LossParts<'t>> {
        let tape = p.tape();
        let obs: Vec<_> = batch.obs.iter().map(|t| tape.constant(t.clone())).collect();
        let with_cd = self.net.cognition.is_some();
        let out = self.net.forward_with_eps(p, &self.graph, &obs, eps, with_cd)?;
        let chosen = out
            .q
            .iter()
            .zip(&batch.actions)
            .map(|(q, a)| q.gather_cols(a))
            .collect::<Result<Vec<_>, _>>()?;
        let rows = batch.len();
        let td = match targets {
            Targets::Joint(y) => {
                let y = tape.constant(Tensor::matrix(rows, 1, y.clone())?);
                mix(&chosen)?.sub(y)?.square().mean()
            }
            Targets::PerAgent(ys) => {
                let mut terms = Vec::with_capacity(ys.len());
                for (q, y) in chosen.iter().zip(ys) {
                    let y = tape.constant(Tensor::matrix(rows, 1, y.clone())?);
                    terms.push((q.sub(y)?.square().mean(), 1.0));
                }
                Var::weighted_sum(&terms)?
            }
        };
        let (mut cd, mut neighbor_kl, mut cognition) = (None, None, None);
        if let (Some(lats), Some(recs)) = (&out.latents, &out.reconstructions) {
            let mut terms = Vec::with_capacity(lats.len());
            for i in 0..lats.len() {
                let nbrs: Vec<GaussianLatent<'t>> = self.graph.neighbors(i)?.iter().map(|&j| lats[j]).collect();
                let loss = cognition::cd_loss(
                    &[(obs[i], recs[i])],
                    &lats[i],
                    &nbrs,
                    self.cd_modes[i],
                    self.cfg.stop_grad_neighbor,
                )?;
                terms.push((loss, 1.0));
            }
            cd = Some(Var::weighted_sum(&terms)?);
            neighbor_kl = mean_neighbor_kl(&self.graph, lats)?;
            cognition = Some(lats.iter().map(cognition::cognition_value).collect());
        }
        let alpha = self.effective_alpha();
        let total = match cd {
            Some(c) if alpha > 0.0 => td.add(c.scale(alpha))?,
            _ => td,
        };
        Ok(LossParts {
            total,
            td,
            cd,
            neighbor_kl,
            cognition,
        })
    }

    /// One gradient step on a replayed batch. `Ok(None)` when the buffer
    /// holds fewer transitions than a batch.
    pub fn train_step(&mut self) -> crate::Result<Option<TrainMetrics>> {
        let Some(sample) = self.replay.sample(self.cfg.batch_size, &mut self.replay_rng) else {
            if !self.warned_underfilled {
                log::warn!(
                    "replay holds {} transitions, batch needs {}; skipping training",
                    self.replay.len(),
                    self.cfg.batch_size
                );
                self.warned_underfilled = true;
            }
            return Ok(None);
        };
        let batch = QBatch::from_transitions(&sample)?;
        self.train_on_batch(&batch).map(Some)
    }

    /// One gradient step on the given batch.
    pub fn train_on_batch(&mut self, batch: &QBatch) -> crate::Result<TrainMetrics> {
        let targets = self.td_targets(batch)?;
        let eps = self.draw_noise(batch.len());
        let tape = Tape::new();
        let p = tape.bind(&self.params);
        let parts = self.loss_parts(&p, batch, &targets, eps.as_deref())?;
        let mut loss = parts.total.item();
        if self.cfg.inject_nan_at_step == Some(self.steps) {
            loss = f64::NAN;
        }
        if !loss.is_finite() {
            return Err(crate::Error::NumericFailure { step: self.steps });
        }
        let grads = tape.backward(parts.total)?;
        let metrics = TrainMetrics {
            td: parts.td.item(),
            cd: parts.cd.map(|c| c.item()),
            neighbor_kl: parts.neighbor_kl,
            cognition: parts.cognition,
        };
        drop(p);
        grads.accumulate_into(&mut self.params);
        self.optimizer.step(&mut self.params, &self.param_ids)?;
        self.steps += 1;
        if self.steps % self.cfg.target_sync.max(1) == 0 {
            self.sync_target();
        }
        Ok(metrics)
    }

    /// Hard copy of the online parameters into the target network.
    pub fn sync_target(&mut self) {
        self.target
            .copy_values_from(&self.params)
            .expect("target mirrors the online layout");
    }
}

/// Neighborhood mode per agent; isolated agents use the unit prior.
pub(crate) fn resolve_cd_modes(mode: CdMode, graph: &AgentGraph) -> Vec<CdMode> {
    (0..graph.n_agents())
        .map(|i| {
            if mode == CdMode::Neighborhood && graph.degree(i) == 0 {
                log::warn!("agent {i} has no neighbors; its dissonance term uses the unit prior");
                CdMode::GlobalUnit
            } else {
                mode
            }
        })
        .collect()
}

/// Mean of `KL(q_i || q_j)` over ordered neighbor pairs.
pub(crate) fn mean_neighbor_kl(graph: &AgentGraph, lats: &[GaussianLatent<'_>]) -> crate::Result<Option<f64>> {
    let pairs = graph.directed_pairs();
    if pairs.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for &(i, j) in &pairs {
        total += cognition::kl_diag_gaussians(&lats[i].detach(), &lats[j].detach())?.item();
    }
    Ok(Some(total / pairs.len() as f64))
}
