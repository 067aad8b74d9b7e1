//! Neighborhood-scoped critics with separate observation and action branches.
//!
//! Critic `i` encodes `o_j` and `a_j` for every `j` in its closed
//! neighborhood, aggregates each branch with its own GCN layer, and sums the
//! two to feed the cognition encoder. The agent-specific feature `A_i` comes
//! straight from `h^a_i`. Nothing outside the neighborhood is read.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, ParamId, ParamStore, Tensor, Var};
use crate::cognition::{self, check_width, CognitionHead, GaussianLatent};
use crate::graph::{AgentGraph, GcnLayer};
use crate::nn::{Activation, Mlp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcNetworkConfig {
    pub actor_hidden: Vec<usize>,
    pub hidden_dim: usize,
    pub gcn_dim: usize,
    pub gcn_activation: Activation,
    pub latent_dim: usize,
    pub decoder_hidden: usize,
    pub head_hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for AcNetworkConfig {
    fn default() -> Self {
        AcNetworkConfig {
            actor_hidden: vec![32],
            hidden_dim: 32,
            gcn_dim: 32,
            gcn_activation: Activation::Relu,
            latent_dim: 16,
            decoder_hidden: 32,
            head_hidden: vec![32],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentCritic {
    /// Closed neighborhood, ascending.
    pub members: Vec<usize>,
    pub obs_enc: Vec<Mlp>,
    pub act_enc: Vec<Mlp>,
    pub gcn_obs: Option<GcnLayer>,
    pub gcn_act: Option<GcnLayer>,
    pub cognition: Option<CognitionHead>,
    pub head: Mlp,
}

/// One critic per agent; parameters are disjoint across critics.
#[derive(Debug, Clone)]
pub struct NccCritic {
    pub agents: Vec<AgentCritic>,
    pub obs_dims: Vec<usize>,
    pub act_dims: Vec<usize>,
}

pub struct AgentCriticOut<'t> {
    /// `batch x 1`.
    pub q: Var<'t>,
    pub latent: Option<GaussianLatent<'t>>,
    /// `(o_hat, a_hat)`.
    pub reconstruction: Option<(Var<'t>, Var<'t>)>,
}

impl NccCritic {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        cfg: &AcNetworkConfig,
        gcn: bool,
        cognition: bool,
        graph: &AgentGraph,
        obs_dims: &[usize],
        act_dims: &[usize],
        rng: &mut impl Rng,
    ) -> crate::Result<Self> {
        let act = cfg.activation;
        let mut agents = Vec::with_capacity(obs_dims.len());
        for i in 0..obs_dims.len() {
            let members = if gcn { graph.closed_neighborhood(i)? } else { vec![i] };
            let mut obs_enc = Vec::with_capacity(members.len());
            let mut act_enc = Vec::with_capacity(members.len());
            for &j in &members {
                let dims_o = [obs_dims[j], cfg.hidden_dim];
                let dims_a = [act_dims[j], cfg.hidden_dim];
                obs_enc.push(Mlp::new(store, &format!("critic{i}.obs{j}"), &dims_o, act, act, rng));
                act_enc.push(Mlp::new(store, &format!("critic{i}.act{j}"), &dims_a, act, act, rng));
            }
            let mut width = cfg.hidden_dim;
            let (gcn_obs, gcn_act) = if gcn {
                let o = GcnLayer::new(store, &format!("critic{i}.gcn_obs"), width, cfg.gcn_dim, cfg.gcn_activation, rng);
                let a = GcnLayer::new(store, &format!("critic{i}.gcn_act"), width, cfg.gcn_dim, cfg.gcn_activation, rng);
                width = cfg.gcn_dim;
                (Some(o), Some(a))
            } else {
                (None, None)
            };
            let head_cog = cognition.then(|| {
                let h = CognitionHead::new(
                    store,
                    &format!("critic{i}.cog"),
                    cfg.hidden_dim,
                    width,
                    cfg.latent_dim,
                    cfg.decoder_hidden,
                    act,
                    &[obs_dims[i], act_dims[i]],
                    rng,
                );
                width = cfg.latent_dim;
                h
            });
            let mut dims = vec![width];
            dims.extend(&cfg.head_hidden);
            dims.push(1);
            agents.push(AgentCritic {
                members,
                obs_enc,
                act_enc,
                gcn_obs,
                gcn_act,
                cognition: head_cog,
                head: Mlp::new(store, &format!("critic{i}.q"), &dims, act, Activation::Identity, rng),
            });
        }
        Ok(NccCritic {
            agents,
            obs_dims: obs_dims.to_vec(),
            act_dims: act_dims.to_vec(),
        })
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn latent_dim(&self) -> Option<usize> {
        self.agents[0].cognition.as_ref().map(CognitionHead::latent_dim)
    }

    /// Critic `i` on full per-agent inputs. Entries outside the closed
    /// neighborhood may be `None`; they are never read.
    pub fn forward_agent<'t>(
        &self,
        p: &Binding<'t, '_>,
        graph: &AgentGraph,
        i: usize,
        obs: &[Option<Var<'t>>],
        acts: &[Option<Var<'t>>],
        eps: Option<Tensor>,
        decode: bool,
    ) -> crate::Result<AgentCriticOut<'t>> {
        let c = &self.agents[i];
        let n = self.n_agents();
        let mut h_o: Vec<Option<Var<'t>>> = vec![None; n];
        let mut h_a: Vec<Option<Var<'t>>> = vec![None; n];
        for (k, &j) in c.members.iter().enumerate() {
            let o = input(obs, j, "observation")?;
            let a = input(acts, j, "action")?;
            check_width(&format!("observation of agent {j}"), &o, self.obs_dims[j])?;
            check_width(&format!("action of agent {j}"), &a, self.act_dims[j])?;
            h_o[j] = Some(c.obs_enc[k].forward(p, o)?);
            h_a[j] = Some(c.act_enc[k].forward(p, a)?);
        }
        let own_a = h_a[i].expect("agent is in its own neighborhood");
        let merged = match (&c.gcn_obs, &c.gcn_act) {
            (Some(go), Some(ga)) => go
                .forward_agent(p, graph, i, &h_o)?
                .add(ga.forward_agent(p, graph, i, &h_a)?)?,
            _ => h_o[i].expect("agent is in its own neighborhood").add(own_a)?,
        };
        let (features, latent, reconstruction) = match &c.cognition {
            None => (merged, None, None),
            Some(head) => {
                let (a_i, lat) = head.encode_with_shortcut(p, own_a, merged)?;
                let c_hat = match eps {
                    Some(e) => cognition::sample(&lat, e)?,
                    None => lat.mu,
                };
                let rec = if decode {
                    let mut r = head.reconstruct(p, c_hat, &[0, 1])?;
                    let a_hat = r.pop().expect("two slots");
                    Some((r.pop().expect("two slots"), a_hat))
                } else {
                    None
                };
                (a_i.add(c_hat)?, Some(lat), rec)
            }
        };
        Ok(AgentCriticOut {
            q: c.head.forward(p, features)?,
            latent,
            reconstruction,
        })
    }

    pub fn agent_params(&self, i: usize) -> Vec<ParamId> {
        let c = &self.agents[i];
        let mut ids = Vec::new();
        for (o, a) in c.obs_enc.iter().zip(&c.act_enc) {
            ids.extend(o.params());
            ids.extend(a.params());
        }
        ids.extend(c.gcn_obs.iter().chain(&c.gcn_act).map(|g| g.weight));
        if let Some(h) = &c.cognition {
            ids.extend(h.params());
        }
        ids.extend(c.head.params());
        ids
    }

    pub fn params(&self) -> Vec<ParamId> {
        (0..self.n_agents()).flat_map(|i| self.agent_params(i)).collect()
    }
}

fn input<'t>(xs: &[Option<Var<'t>>], j: usize, what: &str) -> crate::Result<Var<'t>> {
    xs.get(j).copied().flatten().ok_or_else(|| crate::Error::Dimension {
        context: format!("{what} of agent {j} missing"),
        expected: 1,
        actual: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::rng::{stream, Stream};

    fn setup(store: &mut ParamStore) -> (NccCritic, AgentGraph) {
        let g = AgentGraph::line(4).unwrap();
        let cfg = AcNetworkConfig {
            hidden_dim: 6,
            gcn_dim: 5,
            latent_dim: 3,
            decoder_hidden: 4,
            head_hidden: vec![4],
            activation: Activation::Tanh,
            gcn_activation: Activation::Tanh,
            ..AcNetworkConfig::default()
        };
        let c = NccCritic::new(store, &cfg, true, true, &g, &[2, 3, 2, 2], &[2, 2, 3, 2], &mut stream(4, Stream::ParamInit))
            .unwrap();
        (c, g)
    }

    fn inputs<'t>(tape: &'t Tape, shift: f64) -> (Vec<Option<Var<'t>>>, Vec<Option<Var<'t>>>) {
        let m = |w: usize, s: f64| Some(tape.constant(Tensor::matrix(1, w, (0..w).map(|k| k as f64 * 0.3 + s).collect()).unwrap()));
        (
            vec![m(2, 0.1), m(3, 0.2), m(2, 0.3), m(2, 0.4 + shift)],
            vec![m(2, 0.5), m(2, 0.6), m(3, 0.7), m(2, 0.8 + shift)],
        )
    }

    #[test]
    fn critic_ignores_agents_outside_its_neighborhood() {
        let mut store = ParamStore::new();
        let (c, g) = setup(&mut store);
        let tape = Tape::new();
        let p = tape.bind_frozen(&store);
        let (o, a) = inputs(&tape, 0.0);
        let (o2, a2) = inputs(&tape, 5.0);
        let q = c.forward_agent(&p, &g, 0, &o, &a, None, false).unwrap().q.to_vec();
        let q2 = c.forward_agent(&p, &g, 0, &o2, &a2, None, false).unwrap().q.to_vec();
        assert_eq!(q, q2);
        let q3 = c.forward_agent(&p, &g, 2, &o, &a, None, false).unwrap().q.to_vec();
        let q4 = c.forward_agent(&p, &g, 2, &o2, &a2, None, false).unwrap().q.to_vec();
        assert_ne!(q3, q4);
        let (mut o3, a3) = inputs(&tape, 0.0);
        o3[3] = None;
        assert_eq!(c.forward_agent(&p, &g, 0, &o3, &a3, None, false).unwrap().q.to_vec(), q);
    }

    #[test]
    fn zero_parameters_give_zero_value() {
        let mut store = ParamStore::new();
        let (c, g) = setup(&mut store);
        for id in c.params() {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let tape = Tape::new();
        let p = tape.bind_frozen(&store);
        let (o, a) = inputs(&tape, 0.0);
        for i in 0..4 {
            let out = c.forward_agent(&p, &g, i, &o, &a, None, true).unwrap();
            assert_eq!(out.q.to_vec(), vec![0.0]);
            let (oh, ah) = out.reconstruction.unwrap();
            assert!(oh.to_vec().iter().chain(&ah.to_vec()).all(|&x| x == 0.0));
        }
    }

    #[test]
    fn parameters_are_partitioned_by_agent() {
        let mut store = ParamStore::new();
        let (c, _) = setup(&mut store);
        let mut all = c.params();
        assert_eq!(all.len(), store.len());
        all.sort_by_key(|id| id.index());
        all.dedup();
        assert_eq!(all.len(), store.len());
    }
}
