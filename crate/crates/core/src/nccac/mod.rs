//! Neighborhood-cognition-consistent actor-critic for continuous path splits.
//!
//! Each agent owns a deterministic actor and a critic. Critics are fitted to
//! `TD_i + alpha * CD_i`; actors then ascend their own critic with every
//! other agent's action held at its current policy output.

pub mod actor;
pub mod critic;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, Optimizer, OptimizerConfig, ParamId, ParamStore, Tape, Tensor, Var};
use crate::cognition::{self, CdMode, GaussianLatent};
use crate::graph::AgentGraph;
use crate::nccq::{mean_neighbor_kl, resolve_cd_modes, Bypass, ReplayBuffer, TrainMetrics, Transition};
use crate::rng::{stream, LatentNoise, Stream};
use crate::schedule::LinearDecay;

pub use actor::{actor_objective, Actor};
pub use critic::{AcNetworkConfig, AgentCriticOut, NccCritic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AcVariant {
    NccAc,
    GraphAc,
    GccAc,
}

impl AcVariant {
    pub fn cd_mode(self) -> CdMode {
        match self {
            AcVariant::GccAc => CdMode::GlobalUnit,
            _ => CdMode::Neighborhood,
        }
    }

    pub fn trains_cd(self) -> bool {
        self != AcVariant::GraphAc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcLearnerConfig {
    pub variant: AcVariant,
    pub alpha: f64,
    pub gamma: f64,
    pub critic_optimizer: OptimizerConfig,
    pub actor_optimizer: OptimizerConfig,
    pub network: AcNetworkConfig,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub target_sync: u64,
    /// `mixing` has no meaning here and must stay off.
    pub bypass: Bypass,
    pub stop_grad_neighbor: bool,
    pub exploration: LinearDecay,
    pub inject_nan_at_step: Option<u64>,
}

impl Default for AcLearnerConfig {
    fn default() -> Self {
        AcLearnerConfig {
            variant: AcVariant::NccAc,
            alpha: 0.1,
            gamma: 0.98,
            critic_optimizer: OptimizerConfig::default(),
            actor_optimizer: OptimizerConfig::default(),
            network: AcNetworkConfig::default(),
            replay_capacity: 100_000,
            batch_size: 32,
            target_sync: 200,
            bypass: Bypass::default(),
            stop_grad_neighbor: false,
            exploration: LinearDecay {
                start: 0.3,
                end: 0.02,
                fraction: 0.8,
            },
            inject_nan_at_step: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcMetrics {
    pub td: Vec<f64>,
    pub cd: Option<Vec<f64>>,
    pub neighbor_kl: Option<f64>,
    pub cognition: Option<Vec<f64>>,
    /// `mean Q_i` under the pre-update actors.
    pub actor_objective: Vec<f64>,
}

impl AcMetrics {
    /// Sums over agents, in the shape shared with the Q learner.
    pub fn summary(&self) -> TrainMetrics {
        TrainMetrics {
            td: self.td.iter().sum(),
            cd: self.cd.as_ref().map(|c| c.iter().sum()),
            neighbor_kl: self.neighbor_kl,
            cognition: self.cognition.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AcBatch {
    pub obs: Vec<Tensor>,
    pub actions: Vec<Tensor>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<Tensor>,
    pub terminal: Vec<bool>,
}

impl AcBatch {
    pub fn from_transitions(batch: &[&Transition<Vec<f64>>]) -> crate::Result<Self> {
        let n = batch[0].obs.len();
        let stack = |rows: Vec<&Vec<f64>>| Tensor::from_rows(&rows);
        let mut b = AcBatch {
            obs: Vec::with_capacity(n),
            actions: Vec::with_capacity(n),
            rewards: batch.iter().map(|t| t.reward).collect(),
            next_obs: Vec::with_capacity(n),
            terminal: batch.iter().map(|t| t.terminal).collect(),
        };
        for i in 0..n {
            b.obs.push(stack(batch.iter().map(|t| &t.obs[i]).collect())?);
            b.actions.push(stack(batch.iter().map(|t| &t.actions[i]).collect())?);
            b.next_obs.push(stack(batch.iter().map(|t| &t.next_obs[i]).collect())?);
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

pub struct CriticLossParts<'t> {
    pub total: Var<'t>,
    pub td: Vec<Var<'t>>,
    pub cd: Option<Vec<Var<'t>>>,
    pub neighbor_kl: Option<f64>,
    pub cognition: Option<Vec<f64>>,
}

pub struct NccAcLearner {
    cfg: AcLearnerConfig,
    graph: AgentGraph,
    actors: Vec<Actor>,
    critic: NccCritic,
    actor_params: ParamStore,
    critic_params: ParamStore,
    target_actor: ParamStore,
    target_critic: ParamStore,
    actor_ids: Vec<ParamId>,
    critic_ids: Vec<ParamId>,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
    replay: ReplayBuffer<Vec<f64>>,
    cd_modes: Vec<CdMode>,
    explore_rng: ChaCha8Rng,
    reparam_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    steps: u64,
    warned_underfilled: bool,
}

impl NccAcLearner {
    /// `segments[i]` lists the number of paths of each commodity agent `i`
    /// splits.
    pub fn new(
        cfg: AcLearnerConfig,
        graph: AgentGraph,
        obs_dims: &[usize],
        segments: &[Vec<usize>],
        seed: u64,
    ) -> crate::Result<Self> {
        let n = graph.n_agents();
        if obs_dims.len() != n || segments.len() != n {
            return Err(crate::Error::Dimension {
                context: "agents in learner vs graph".into(),
                expected: n,
                actual: obs_dims.len(),
            });
        }
        if cfg.bypass.mixing {
            return Err(crate::Error::Incompatible("actor-critic learners have no mixing module".into()));
        }
        let mut rng = stream(seed, Stream::ParamInit);
        let mut actor_params = ParamStore::new();
        let net = &cfg.network;
        let actors: Vec<Actor> = (0..n)
            .map(|i| {
                Actor::new(&mut actor_params, &format!("actor{i}"), obs_dims[i], &net.actor_hidden, &segments[i], net.activation, &mut rng)
            })
            .collect();
        let act_dims: Vec<usize> = actors.iter().map(Actor::act_dim).collect();
        let mut critic_params = ParamStore::new();
        let critic = NccCritic::new(
            &mut critic_params,
            net,
            !cfg.bypass.gcn,
            !cfg.bypass.cognition,
            &graph,
            obs_dims,
            &act_dims,
            &mut rng,
        )?;
        Ok(NccAcLearner {
            actor_ids: actors.iter().flat_map(Actor::params).collect(),
            critic_ids: critic.params(),
            target_actor: actor_params.clone(),
            target_critic: critic_params.clone(),
            actor_opt: Optimizer::new(cfg.actor_optimizer.clone()),
            critic_opt: Optimizer::new(cfg.critic_optimizer.clone()),
            replay: ReplayBuffer::new(cfg.replay_capacity),
            cd_modes: resolve_cd_modes(cfg.variant.cd_mode(), &graph),
            explore_rng: stream(seed, Stream::Exploration),
            reparam_rng: stream(seed, Stream::Reparam),
            replay_rng: stream(seed, Stream::Replay),
            steps: 0,
            warned_underfilled: false,
            actors,
            critic,
            actor_params,
            critic_params,
            graph,
            cfg,
        })
    }

    pub fn config(&self) -> &AcLearnerConfig {
        &self.cfg
    }

    pub fn graph(&self) -> &AgentGraph {
        &self.graph
    }

    pub fn actors(&self) -> &[Actor] {
        &self.actors
    }

    pub fn critic(&self) -> &NccCritic {
        &self.critic
    }

    pub fn actor_params(&self) -> &ParamStore {
        &self.actor_params
    }

    pub fn critic_params(&self) -> &ParamStore {
        &self.critic_params
    }

    pub fn actor_params_mut(&mut self) -> &mut ParamStore {
        &mut self.actor_params
    }

    pub fn critic_params_mut(&mut self) -> &mut ParamStore {
        &mut self.critic_params
    }

    /// Every parameter store with its checkpoint label.
    pub fn stores(&self) -> Vec<(&'static str, &ParamStore)> {
        vec![
            ("actor", &self.actor_params),
            ("critic", &self.critic_params),
            ("target_actor", &self.target_actor),
            ("target_critic", &self.target_critic),
        ]
    }

    pub fn stores_mut(&mut self) -> Vec<(&'static str, &mut ParamStore)> {
        vec![
            ("actor", &mut self.actor_params),
            ("critic", &mut self.critic_params),
            ("target_actor", &mut self.target_actor),
            ("target_critic", &mut self.target_critic),
        ]
    }

    pub fn target_critic_params(&self) -> &ParamStore {
        &self.target_critic
    }

    pub fn set_learning_rates(&mut self, actor: f64, critic: f64) {
        self.actor_opt.set_lr(actor);
        self.critic_opt.set_lr(critic);
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    pub fn effective_alpha(&self) -> f64 {
        if self.cfg.variant.trains_cd() && self.critic.latent_dim().is_some() {
            self.cfg.alpha
        } else {
            0.0
        }
    }

    fn policy_rows(&self, store: &ParamStore, obs: &[Tensor]) -> crate::Result<Vec<Tensor>> {
        let tape = Tape::new();
        let p = tape.bind_frozen(store);
        self.actors
            .iter()
            .zip(obs)
            .map(|(a, o)| Ok(a.forward(&p, tape.constant(o.clone()))?.value()))
            .collect()
    }

    /// Noise-free actions for one joint observation.
    pub fn deterministic(&self, obs: &[Vec<f64>]) -> crate::Result<Vec<Vec<f64>>> {
        let rows = obs
            .iter()
            .map(|o| Ok(Tensor::matrix(1, o.len(), o.clone())?))
            .collect::<crate::Result<Vec<_>>>()?;
        Ok(self.policy_rows(&self.actor_params, &rows)?.into_iter().map(Tensor::into_data).collect())
    }

    /// Gaussian noise of scale `sigma` on the logits, then renormalized.
    pub fn act(&mut self, obs: &[Vec<f64>], sigma: f64) -> crate::Result<Vec<Vec<f64>>> {
        let tape = Tape::new();
        let p = tape.bind_frozen(&self.actor_params);
        let mut out = Vec::with_capacity(obs.len());
        for (a, o) in self.actors.iter().zip(obs) {
            let mut logits = a.logits(&p, tape.constant(Tensor::matrix(1, o.len(), o.clone())?))?.to_vec();
            let rng = &mut self.explore_rng;
            let noise = (0..logits.len()).map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            });
            a.perturb(&mut logits, noise);
            out.push(logits);
        }
        Ok(out)
    }

    pub fn push(&mut self, t: Transition<Vec<f64>>) {
        self.replay.push(t);
    }

    /// `y_i = r + gamma * Q_i^-(o', mu^-(o'))`, latent means on the target side.
    pub fn critic_targets(&self, batch: &AcBatch) -> crate::Result<Vec<Vec<f64>>> {
        let next_actions = self.policy_rows(&self.target_actor, &batch.next_obs)?;
        let tape = Tape::new();
        let p = tape.bind_frozen(&self.target_critic);
        let obs: Vec<_> = batch.next_obs.iter().map(|t| Some(tape.constant(t.clone()))).collect();
        let acts: Vec<_> = next_actions.into_iter().map(|t| Some(tape.constant(t))).collect();
        (0..self.critic.n_agents())
            .map(|i| {
                let q = self.critic.forward_agent(&p, &self.graph, i, &obs, &acts, None, false)?.q.to_vec();
                Ok(q.iter()
                    .enumerate()
                    .map(|(r, v)| {
                        if batch.terminal[r] {
                            batch.rewards[r]
                        } else {
                            batch.rewards[r] + self.cfg.gamma * v
                        }
                    })
                    .collect())
            })
            .collect()
    }

    pub fn draw_noise(&mut self, rows: usize) -> Option<Vec<Tensor>> {
        let d = self.critic.latent_dim()?;
        let mut noise = LatentNoise::Sample(&mut self.reparam_rng);
        Some(
            (0..self.critic.n_agents())
                .map(|_| cognition::noise_tensor(vec![rows, d], &mut noise))
                .collect(),
        )
    }

    /// `sum_i (TD_i + alpha * CD_i)` over all critics on one tape.
    pub fn critic_loss_parts<'t>(
        &self,
        p: &Binding<'t, '_>,
        batch: &AcBatch,
        targets: &[Vec<f64>],
        eps: Option<&[Tensor]>,
    ) -> crate::Result<CriticLossParts<'t>> {
        let tape = p.tape();
        let rows = batch.len();
        let obs: Vec<_> = batch.obs.iter().map(|t| Some(tape.constant(t.clone()))).collect();
        let acts: Vec<_> = batch.actions.iter().map(|t| Some(tape.constant(t.clone()))).collect();
        let with_cd = self.critic.latent_dim().is_some();
        let n = self.critic.n_agents();
        let mut td = Vec::with_capacity(n);
        let mut lats: Vec<GaussianLatent<'t>> = Vec::with_capacity(n);
        let mut recs = Vec::with_capacity(n);
        for i in 0..n {
            let e = eps.map(|e| e[i].clone());
            let out = self.critic.forward_agent(p, &self.graph, i, &obs, &acts, e, with_cd)?;
            let y = tape.constant(Tensor::matrix(rows, 1, targets[i].clone())?);
            td.push(out.q.sub(y)?.square().mean());
            if let (Some(l), Some(r)) = (out.latent, out.reconstruction) {
                lats.push(l);
                recs.push(r);
            }
        }
        let (mut cd, mut neighbor_kl, mut cognition) = (None, None, None);
        if with_cd {
            let mut terms = Vec::with_capacity(n);
            for i in 0..n {
                let nbrs: Vec<GaussianLatent<'t>> = self.graph.neighbors(i)?.iter().map(|&j| lats[j]).collect();
                let (o_hat, a_hat) = recs[i];
                terms.push(cognition::cd_loss(
                    &[(obs[i].expect("present"), o_hat), (acts[i].expect("present"), a_hat)],
                    &lats[i],
                    &nbrs,
                    self.cd_modes[i],
                    self.cfg.stop_grad_neighbor,
                )?);
            }
            neighbor_kl = mean_neighbor_kl(&self.graph, &lats)?;
            cognition = Some(lats.iter().map(cognition::cognition_value).collect());
            cd = Some(terms);
        }
        let alpha = self.effective_alpha();
        let mut sum: Vec<(Var<'t>, f64)> = td.iter().map(|&t| (t, 1.0)).collect();
        if let Some(c) = &cd {
            if alpha > 0.0 {
                sum.extend(c.iter().map(|&t| (t, alpha)));
            }
        }
        Ok(CriticLossParts {
            total: Var::weighted_sum(&sum)?,
            td,
            cd,
            neighbor_kl,
            cognition,
        })
    }

    /// `-sum_i mean Q_i(o, a)` with `a_i` live from actor `i` and every other
    /// action a constant from the current policies. `pa` binds the actors,
    /// `pc` the critics. Returns the per-agent objective terms as well.
    pub fn actor_loss<'t>(
        &self,
        pa: &Binding<'t, '_>,
        pc: &Binding<'t, '_>,
        obs: &[Tensor],
    ) -> crate::Result<(Var<'t>, Vec<Var<'t>>)> {
        let tape = pa.tape();
        let fixed = self.policy_rows(pa.store(), obs)?;
        let o: Vec<_> = obs.iter().map(|t| Some(tape.constant(t.clone()))).collect();
        let mut terms = Vec::with_capacity(self.actors.len());
        let mut objectives = Vec::with_capacity(self.actors.len());
        for (i, actor) in self.actors.iter().enumerate() {
            let own_obs = o[i].expect("present");
            let obj = actor_objective(actor, pa, own_obs, |a_i| {
                let mut acts: Vec<Option<Var<'t>>> = fixed.iter().map(|t| Some(tape.constant(t.clone()))).collect();
                acts[i] = Some(a_i);
                Ok(self.critic.forward_agent(pc, &self.graph, i, &o, &acts, None, false)?.q)
            })?;
            terms.push((obj, 1.0));
            objectives.push(obj);
        }
        Ok((Var::weighted_sum(&terms)?, objectives))
    }

    /// One critic step then one actor step; `Ok(None)` while the buffer is
    /// smaller than a batch.
    pub fn train_step(&mut self) -> crate::Result<Option<AcMetrics>> {
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
        let batch = AcBatch::from_transitions(&sample)?;
        self.train_on_batch(&batch).map(Some)
    }

    pub fn train_on_batch(&mut self, batch: &AcBatch) -> crate::Result<AcMetrics> {
        let targets = self.critic_targets(batch)?;
        let eps = self.draw_noise(batch.len());
        let tape = Tape::new();
        let pc = tape.bind(&self.critic_params);
        let parts = self.critic_loss_parts(&pc, batch, &targets, eps.as_deref())?;
        let mut loss = parts.total.item();
        if self.cfg.inject_nan_at_step == Some(self.steps) {
            loss = f64::NAN;
        }
        if !loss.is_finite() {
            return Err(crate::Error::NumericFailure { step: self.steps });
        }
        let grads = tape.backward(parts.total)?;
        let mut metrics = AcMetrics {
            td: parts.td.iter().map(Var::item).collect(),
            cd: parts.cd.as_ref().map(|c| c.iter().map(Var::item).collect()),
            neighbor_kl: parts.neighbor_kl,
            cognition: parts.cognition,
            actor_objective: Vec::new(),
        };
        drop(pc);
        grads.accumulate_into(&mut self.critic_params);
        self.critic_opt.step(&mut self.critic_params, &self.critic_ids)?;

        let tape = Tape::new();
        let pa = tape.bind(&self.actor_params);
        let pc = tape.bind_frozen(&self.critic_params);
        let (loss, objectives) = self.actor_loss(&pa, &pc, &batch.obs)?;
        if !loss.item().is_finite() {
            return Err(crate::Error::NumericFailure { step: self.steps });
        }
        metrics.actor_objective = objectives.iter().map(|o| -o.item()).collect();
        let grads = tape.backward(loss)?;
        drop((pa, pc));
        grads.accumulate_into(&mut self.actor_params);
        self.actor_opt.step(&mut self.actor_params, &self.actor_ids)?;

        self.steps += 1;
        if self.steps % self.cfg.target_sync.max(1) == 0 {
            self.sync_targets();
        }
        Ok(metrics)
    }

    pub fn sync_targets(&mut self) {
        self.target_actor
            .copy_values_from(&self.actor_params)
            .expect("target mirrors the online layout");
        self.target_critic
            .copy_values_from(&self.critic_params)
            .expect("target mirrors the online layout");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    fn cfg(variant: AcVariant) -> AcLearnerConfig {
        AcLearnerConfig {
            variant,
            batch_size: 4,
            network: AcNetworkConfig {
                actor_hidden: vec![6],
                hidden_dim: 6,
                gcn_dim: 6,
                latent_dim: 3,
                decoder_hidden: 6,
                head_hidden: vec![6],
                activation: Activation::Tanh,
                gcn_activation: Activation::Tanh,
            },
            ..AcLearnerConfig::default()
        }
    }

    fn learner(c: AcLearnerConfig, seed: u64) -> NccAcLearner {
        NccAcLearner::new(c, AgentGraph::line(3).unwrap(), &[2, 2, 3], &[vec![2], vec![2, 2], vec![3]], seed).unwrap()
    }

    fn fill(l: &mut NccAcLearner) {
        for k in 0..12 {
            let x = k as f64 * 0.1;
            let obs = vec![vec![x, 1.0], vec![1.0, x], vec![x, x, 1.0]];
            let acts = l.act(&obs, 0.3).unwrap();
            l.push(Transition {
                obs: obs.clone(),
                actions: acts,
                reward: x.sin(),
                next_obs: obs,
                terminal: k % 4 == 3,
            });
        }
    }

    #[test]
    fn exploratory_actions_stay_on_the_simplex() {
        let mut l = learner(cfg(AcVariant::NccAc), 1);
        let obs = vec![vec![0.1, 1.0], vec![1.0, 0.1], vec![0.0, 0.5, 1.0]];
        for _ in 0..50 {
            let a = l.act(&obs, 2.0).unwrap();
            assert!((a[1][0] + a[1][1] - 1.0).abs() < 1e-9 && (a[1][2] + a[1][3] - 1.0).abs() < 1e-9);
            assert!((a[2].iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let run = || {
            let mut l = learner(cfg(AcVariant::NccAc), 9);
            fill(&mut l);
            let m: Vec<AcMetrics> = (0..3).map(|_| l.train_step().unwrap().unwrap()).collect();
            (m, l.actor_params().flat_values(), l.critic_params().flat_values())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_alpha_matches_the_graph_variant() {
        let run = |variant, alpha| {
            let mut c = cfg(variant);
            c.alpha = alpha;
            let mut l = learner(c, 4);
            fill(&mut l);
            let m: Vec<AcMetrics> = (0..3).map(|_| l.train_step().unwrap().unwrap()).collect();
            (m, l.actor_params().flat_values(), l.critic_params().flat_values())
        };
        assert_eq!(run(AcVariant::NccAc, 0.0), run(AcVariant::GraphAc, 0.1));
        assert_ne!(run(AcVariant::NccAc, 0.1), run(AcVariant::GraphAc, 0.1));
    }

    #[test]
    fn zero_gamma_targets_are_rewards() {
        let mut c = cfg(AcVariant::NccAc);
        c.gamma = 0.0;
        let mut l = learner(c, 2);
        fill(&mut l);
        let s = l.replay.sample(4, &mut stream(1, Stream::Replay)).unwrap();
        let b = AcBatch::from_transitions(&s).unwrap();
        for y in l.critic_targets(&b).unwrap() {
            assert_eq!(y, b.rewards);
        }
    }

    #[test]
    fn actor_step_leaves_critics_alone() {
        let mut l = learner(cfg(AcVariant::NccAc), 3);
        fill(&mut l);
        l.set_learning_rates(1e-2, 0.0);
        let critic_before = l.critic_params().flat_values();
        let actor_before = l.actor_params().flat_values();
        l.train_step().unwrap().unwrap();
        assert_eq!(critic_before, l.critic_params().flat_values());
        assert_ne!(actor_before, l.actor_params().flat_values());
    }

    #[test]
    fn actor_gradient_reaches_only_its_own_policy() {
        let l = learner(cfg(AcVariant::NccAc), 6);
        let obs = vec![
            Tensor::matrix(1, 2, vec![0.3, 0.1]).unwrap(),
            Tensor::matrix(1, 2, vec![0.2, 0.4]).unwrap(),
            Tensor::matrix(1, 3, vec![0.5, 0.6, 0.7]).unwrap(),
        ];
        let tape = Tape::new();
        let pa = tape.bind(l.actor_params());
        let pc = tape.bind_frozen(l.critic_params());
        let (_, objectives) = l.actor_loss(&pa, &pc, &obs).unwrap();
        let g = tape.backward(objectives[1]).unwrap();
        for (k, actor) in l.actors().iter().enumerate() {
            for id in actor.params() {
                let grad = g.wrt(pa.get(id));
                let nonzero = grad.is_some_and(|v| v.iter().any(|&x| x != 0.0));
                assert_eq!(nonzero, k == 1, "actor {k}");
            }
        }
    }
}
