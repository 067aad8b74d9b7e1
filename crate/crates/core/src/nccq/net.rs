//! Value network shared by all Q-learning variants.
//!
//! ```text
//! o_i --enc_i--> h_i --GCN--> H_i --cognition--> (A_i, q(C_i)) --> A_i + C_i --head_i--> Q_i(o_i, .)
//! ```
//!
//! Disabled modules are skipped entirely, parameters included, so a network
//! with the graph and cognition modules switched off is the same object as a
//! plain per-agent DQN head stack.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, ParamId, ParamStore, Tensor, Var};
use crate::cognition::{self, check_width, CognitionHead, GaussianLatent};
use crate::graph::{AgentGraph, GcnLayer};
use crate::nn::{Activation, Mlp};
use crate::rng::LatentNoise;

/// Layer widths; shared by both learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub encoder_hidden: Vec<usize>,
    pub hidden_dim: usize,
    pub gcn_dim: usize,
    pub gcn_layers: usize,
    pub gcn_activation: Activation,
    pub latent_dim: usize,
    pub decoder_hidden: usize,
    pub head_hidden: Vec<usize>,
    pub activation: Activation,
    /// One encoder and one head for all agents (homogeneous agents only).
    pub share_agent_nets: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            encoder_hidden: vec![],
            hidden_dim: 32,
            gcn_dim: 32,
            gcn_layers: 1,
            gcn_activation: Activation::Relu,
            latent_dim: 16,
            decoder_hidden: 32,
            head_hidden: vec![32],
            activation: Activation::Relu,
            share_agent_nets: false,
        }
    }
}

/// Which parts of the network are live.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Modules {
    pub gcn: bool,
    pub cognition: bool,
    pub mixing: bool,
}

#[derive(Debug, Clone)]
pub struct NccQNet {
    pub modules: Modules,
    pub obs_dims: Vec<usize>,
    pub n_actions: Vec<usize>,
    pub encoders: Vec<Mlp>,
    pub gcn: Vec<GcnLayer>,
    pub cognition: Option<CognitionHead>,
    pub heads: Vec<Mlp>,
    /// Decoder output slot per agent.
    pub decoder_slot: Vec<usize>,
    shared: bool,
}

/// Everything a forward pass produces for one batch.
pub struct QForward<'t> {
    /// Per agent, `batch x n_actions`.
    pub q: Vec<Var<'t>>,
    pub latents: Option<Vec<GaussianLatent<'t>>>,
    /// Per agent reconstruction of its observation.
    pub reconstructions: Option<Vec<Var<'t>>>,
}

impl NccQNet {
    pub fn new(
        store: &mut ParamStore,
        cfg: &NetworkConfig,
        modules: Modules,
        obs_dims: &[usize],
        n_actions: &[usize],
        rng: &mut impl Rng,
    ) -> crate::Result<Self> {
        let n = obs_dims.len();
        let shared = cfg.share_agent_nets;
        if shared && (obs_dims.iter().any(|&d| d != obs_dims[0]) || n_actions.iter().any(|&a| a != n_actions[0])) {
            return Err(crate::Error::Incompatible(
                "share_agent_nets needs identical observation and action sizes".into(),
            ));
        }
        let n_nets = if shared { 1 } else { n };
        let encoders = (0..n_nets)
            .map(|i| {
                let mut dims = vec![obs_dims[i]];
                dims.extend(&cfg.encoder_hidden);
                dims.push(cfg.hidden_dim);
                Mlp::new(store, &format!("enc{i}"), &dims, cfg.activation, cfg.activation, rng)
            })
            .collect();
        let mut width = cfg.hidden_dim;
        let mut gcn = Vec::new();
        if modules.gcn {
            for k in 0..cfg.gcn_layers.max(1) {
                gcn.push(GcnLayer::new(store, &format!("gcn{k}"), width, cfg.gcn_dim, cfg.gcn_activation, rng));
                width = cfg.gcn_dim;
            }
        }
        let uniform_obs = obs_dims.iter().all(|&d| d == obs_dims[0]);
        let (targets, decoder_slot): (Vec<usize>, Vec<usize>) = if uniform_obs {
            (vec![obs_dims[0]], vec![0; n])
        } else {
            (obs_dims.to_vec(), (0..n).collect())
        };
        let cognition = modules.cognition.then(|| {
            let head = CognitionHead::new(
                store,
                "cog",
                width,
                width,
                cfg.latent_dim,
                cfg.decoder_hidden,
                cfg.activation,
                &targets,
                rng,
            );
            width = cfg.latent_dim;
            head
        });
        let heads = (0..n_nets)
            .map(|i| {
                let mut dims = vec![width];
                dims.extend(&cfg.head_hidden);
                dims.push(n_actions[i]);
                Mlp::new(store, &format!("q{i}"), &dims, cfg.activation, Activation::Identity, rng)
            })
            .collect();
        Ok(NccQNet {
            modules,
            obs_dims: obs_dims.to_vec(),
            n_actions: n_actions.to_vec(),
            encoders,
            gcn,
            cognition,
            heads,
            decoder_slot,
            shared,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.obs_dims.len()
    }

    fn encoder(&self, i: usize) -> &Mlp {
        &self.encoders[if self.shared { 0 } else { i }]
    }

    fn head(&self, i: usize) -> &Mlp {
        &self.heads[if self.shared { 0 } else { i }]
    }

    pub fn latent_dim(&self) -> Option<usize> {
        self.cognition.as_ref().map(CognitionHead::latent_dim)
    }

    /// `obs[i]` is `batch x obs_dims[i]`. `noise` supplies one epsilon draw
    /// per agent (or the latent mean). Reconstructions are produced only when
    /// `decode` is set.
    pub fn forward<'t>(
        &self,
        p: &Binding<'t, '_>,
        graph: &AgentGraph,
        obs: &[Var<'t>],
        noise: &mut LatentNoise<'_>,
        decode: bool,
    ) -> crate::Result<QForward<'t>> {
        let sampling = matches!(noise, LatentNoise::Sample(_));
        let eps = match &self.cognition {
            Some(c) if sampling => {
                let rows = obs.first().map_or(1, |o| o.shape()[0]);
                Some(
                    (0..self.n_agents())
                        .map(|_| cognition::noise_tensor(vec![rows, c.latent_dim()], noise))
                        .collect::<Vec<_>>(),
                )
            }
            _ => None,
        };
        self.forward_with_eps(p, graph, obs, eps.as_deref(), decode)
    }

    /// Same as [`forward`](Self::forward) with explicit epsilon tensors;
    /// `None` uses the latent means.
    pub fn forward_with_eps<'t>(
        &self,
        p: &Binding<'t, '_>,
        graph: &AgentGraph,
        obs: &[Var<'t>],
        eps: Option<&[Tensor]>,
        decode: bool,
    ) -> crate::Result<QForward<'t>> {
        let n = self.n_agents();
        if obs.len() != n {
            return Err(crate::Error::Dimension {
                context: "observation count".into(),
                expected: n,
                actual: obs.len(),
            });
        }
        let mut h = Vec::with_capacity(n);
        for (i, o) in obs.iter().enumerate() {
            check_width(&format!("observation of agent {i}"), o, self.obs_dims[i])?;
            h.push(self.encoder(i).forward(p, *o)?);
        }
        for layer in &self.gcn {
            h = layer.forward(p, graph, &h)?;
        }
        let mut latents = None;
        let mut reconstructions = None;
        let features = match &self.cognition {
            None => h,
            Some(head) => {
                let mut feats = Vec::with_capacity(n);
                let mut lats = Vec::with_capacity(n);
                let mut recs = Vec::with_capacity(n);
                for i in 0..n {
                    let (a, lat) = head.encode(p, h[i])?;
                    let c_hat = match eps {
                        Some(e) => cognition::sample(&lat, e[i].clone())?,
                        None => lat.mu,
                    };
                    feats.push(a.add(c_hat)?);
                    if decode {
                        recs.push(head.reconstruct(p, c_hat, &[self.decoder_slot[i]])?.remove(0));
                    }
                    lats.push(lat);
                }
                latents = Some(lats);
                if decode {
                    reconstructions = Some(recs);
                }
                feats
            }
        };
        let q = features
            .iter()
            .enumerate()
            .map(|(i, f)| self.head(i).forward(p, *f))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(QForward {
            q,
            latents,
            reconstructions,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for e in &self.encoders {
            ids.extend(e.params());
        }
        for g in &self.gcn {
            ids.push(g.weight);
        }
        if let Some(c) = &self.cognition {
            ids.extend(c.params());
        }
        for h in &self.heads {
            ids.extend(h.params());
        }
        ids
    }
}

/// `Q_total = sum_i Q_i`; the sum is order independent.
pub fn mix<'t>(chosen: &[Var<'t>]) -> crate::Result<Var<'t>> {
    let terms: Vec<_> = chosen.iter().map(|&q| (q, 1.0)).collect();
    Ok(Var::weighted_sum(&terms)?)
}

/// `sum_i max_a Q_i(a)` for one row, summed in agent order. Equals the max
/// over joint actions of the agent-order sum because floating-point addition
/// is monotone in each argument.
pub fn decomposed_max(per_agent: &[&[f64]]) -> f64 {
    per_agent
        .iter()
        .map(|q| q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .fold(0.0, |acc, m| acc + m)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::rng::{stream, Stream};

    const ALL: Modules = Modules {
        gcn: true,
        cognition: true,
        mixing: true,
    };

    fn build(modules: Modules) -> (ParamStore, NccQNet) {
        let mut store = ParamStore::new();
        let net = NccQNet::new(
            &mut store,
            &NetworkConfig::default(),
            modules,
            &[3, 3, 3],
            &[4, 4, 4],
            &mut stream(1, Stream::ParamInit),
        )
        .unwrap();
        (store, net)
    }

    fn run(store: &ParamStore, net: &NccQNet, graph: &AgentGraph, obs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let tape = Tape::new();
        let p = tape.bind(store);
        let o: Vec<_> = obs
            .iter()
            .map(|v| tape.constant(Tensor::matrix(1, v.len(), v.clone()).unwrap()))
            .collect();
        let out = net.forward(&p, graph, &o, &mut LatentNoise::Mean, false).unwrap();
        out.q.iter().map(|q| q.to_vec()).collect()
    }

    #[test]
    fn zero_parameters_give_zero_values() {
        let (mut store, net) = build(ALL);
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let g = AgentGraph::line(3).unwrap();
        let q = run(&store, &net, &g, &[vec![1.0, 2.0, 3.0], vec![0.5; 3], vec![-1.0; 3]]);
        assert!(q.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn locality_by_construction() {
        let g = AgentGraph::line(3).unwrap();
        let base = vec![vec![0.1, 0.2, 0.3], vec![0.4, -0.5, 0.6], vec![0.7, 0.8, -0.9]];
        let mut moved = base.clone();
        moved[2] = vec![5.0, -3.0, 2.0];
        // agent 0's closed neighborhood is {0, 1}
        let (store, net) = build(ALL);
        assert_eq!(run(&store, &net, &g, &base)[0], run(&store, &net, &g, &moved)[0]);
        assert_ne!(run(&store, &net, &g, &base)[1], run(&store, &net, &g, &moved)[1]);
        let (store, net) = build(Modules {
            gcn: false,
            cognition: false,
            mixing: true,
        });
        let a = run(&store, &net, &g, &base);
        let b = run(&store, &net, &g, &moved);
        assert_eq!(a[0], b[0]);
        assert_eq!(a[1], b[1]);
    }

    #[test]
    fn wrong_observation_width() {
        let (store, net) = build(ALL);
        let g = AgentGraph::line(3).unwrap();
        let tape = Tape::new();
        let p = tape.bind(&store);
        let o: Vec<_> = (0..3).map(|_| tape.constant(Tensor::matrix(1, 2, vec![0.0; 2]).unwrap())).collect();
        assert!(matches!(
            net.forward(&p, &g, &o, &mut LatentNoise::Mean, false),
            Err(crate::Error::Dimension { .. })
        ));
    }

    #[test]
    fn mixing_examples() {
        let tape = Tape::new();
        let qs: Vec<_> = [1.0, 2.0, 3.0].iter().map(|&v| tape.leaf(Tensor::scalar(v).with_requires_grad(true))).collect();
        let total = mix(&qs).unwrap();
        assert_eq!(total.item(), 6.0);
        let g = tape.backward(total).unwrap();
        for q in &qs {
            assert_eq!(g.wrt(*q).unwrap(), &[1.0]);
        }
        let rev: Vec<_> = qs.iter().rev().copied().collect();
        assert_eq!(mix(&rev).unwrap().item(), 6.0);
        assert_eq!(mix(&qs[..1]).unwrap().item(), 1.0);
    }

    #[test]
    fn argmax_is_shift_invariant() {
        let v = [0.3, 1.7, -2.0, 1.7];
        assert_eq!(argmax(&v), 1);
        let shifted: Vec<f64> = v.iter().map(|x| x + 100.0).collect();
        assert_eq!(argmax(&shifted), 1);
    }
}
