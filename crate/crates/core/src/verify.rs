//! Numerical self-checks behind the `gradcheck` and `oracle` subcommands.
//!
//! Gradients are compared against central differences,
//! `|g - g_fd| / max(|g|, |g_fd|, FLOOR)`, on random instances. Composite
//! losses use smooth activations so no instance sits on a ReLU kink, and
//! check a random subset of coordinates per instance.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::autodiff::{Binding, ElemKind, ParamId, ParamStore, ReduceKind, Tape, Tensor, Var};
use crate::cognition::{self, CdMode, CognitionHead, GaussianLatent};
use crate::graph::{AgentGraph, GcnLayer};
use crate::nccac::{AcBatch, AcLearnerConfig, AcNetworkConfig, NccAcLearner};
use crate::nccq::{NccQLearner, NetworkConfig, QBatch, QLearnerConfig, QVariant};
use crate::nn::Activation;
use crate::rng::{stream, Stream};

pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-6;
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub instances: usize,
    /// Largest observed error (relative for gradients and KL, absolute for
    /// the exact-equality oracles).
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} instances={:<5} max_error={:.3e} tol={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.instances,
            self.max_error,
            self.tolerance
        )
    }
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

/// Largest relative error between backprop and central differences of `f`
/// over the parameters `ids` of `store`. With `max_coords` set, a random
/// subset of that many scalar coordinates is checked.
pub fn gradcheck<F>(
    store: &ParamStore,
    ids: &[ParamId],
    max_coords: Option<(usize, &mut ChaCha8Rng)>,
    f: F,
) -> crate::Result<f64>
where
    F: for<'t, 's> Fn(&Binding<'t, 's>) -> crate::Result<Var<'t>>,
{
    let tape = Tape::new();
    let p = tape.bind(store);
    let loss = f(&p)?;
    let grads = tape.backward(loss)?;
    let mut coords: Vec<(ParamId, usize, f64)> = Vec::new();
    for &id in ids {
        let leaf = p.get(id);
        let g = grads.wrt(leaf);
        for k in 0..store.get(id).numel() {
            coords.push((id, k, g.map_or(0.0, |g| g[k])));
        }
    }
    if let Some((n, rng)) = max_coords {
        coords.shuffle(rng);
        coords.truncate(n);
    }
    let eval = |s: &ParamStore| -> crate::Result<f64> {
        let tape = Tape::new();
        let p = tape.bind_frozen(s);
        Ok(f(&p)?.item())
    };
    let mut shifted = store.clone();
    let mut worst = 0.0f64;
    for (id, k, analytic) in coords {
        let x = store.get(id).data()[k];
        shifted.get_mut(id).data_mut()[k] = x + FD_STEP;
        let up = eval(&shifted)?;
        shifted.get_mut(id).data_mut()[k] = x - FD_STEP;
        let down = eval(&shifted)?;
        shifted.get_mut(id).data_mut()[k] = x;
        worst = worst.max(rel_error(analytic, (up - down) / (2.0 * FD_STEP)));
    }
    Ok(worst)
}

fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).expect("sized")
}

/// Values bounded away from zero so ReLU and clamp kinks stay out of reach.
fn off_kink(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.random_range(0.05..1.5);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::matrix(rows, cols, data).expect("sized")
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> AgentGraph {
    let mut g = AgentGraph::empty(n).expect("n > 0");
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < 0.5 {
                g.add_edge(a, b).expect("valid");
            }
        }
    }
    g
}

/// Projects `x` onto fixed random weights so every output element matters.
fn project<'t>(x: Var<'t>, weights: &Tensor) -> crate::Result<Var<'t>> {
    let w = x.tape().constant(weights.clone());
    Ok(x.mul(w)?.sum())
}

type Instance = fn(&mut ChaCha8Rng) -> crate::Result<f64>;

fn unary(kind: ElemKind, positive: bool) -> impl Fn(&mut ChaCha8Rng) -> crate::Result<f64> {
    move |rng| {
        let (r, c) = (rng.random_range(1..4), rng.random_range(1..5));
        let mut store = ParamStore::new();
        let x = if positive {
            matrix(rng, r, c, 0.3, 2.0)
        } else {
            off_kink(rng, r, c)
        };
        let id = store.add("x", x);
        let w = matrix(rng, r, c, -1.0, 1.0);
        gradcheck(&store, &[id], None, |p| project(p.get(id).elementwise(kind, None)?, &w))
    }
}

fn binary(kind: ElemKind) -> impl Fn(&mut ChaCha8Rng) -> crate::Result<f64> {
    move |rng| {
        let (r, c) = (rng.random_range(1..4), rng.random_range(1..5));
        let mut store = ParamStore::new();
        let a = store.add("a", matrix(rng, r, c, -1.5, 1.5));
        let b = store.add("b", matrix(rng, r, c, -1.5, 1.5));
        let w = matrix(rng, r, c, -1.0, 1.0);
        gradcheck(&store, &[a, b], None, |p| project(p.get(a).elementwise(kind, Some(p.get(b)))?, &w))
    }
}

fn op_checks() -> Vec<(String, Box<dyn Fn(&mut ChaCha8Rng) -> crate::Result<f64>>)> {
    let mut v: Vec<(String, Box<dyn Fn(&mut ChaCha8Rng) -> crate::Result<f64>>)> = Vec::new();
    for kind in [ElemKind::Add, ElemKind::Sub, ElemKind::Mul] {
        v.push((format!("op/{kind:?}").to_lowercase(), Box::new(binary(kind))));
    }
    for (kind, positive) in [
        (ElemKind::Relu, false),
        (ElemKind::Tanh, false),
        (ElemKind::Exp, false),
        (ElemKind::Log, true),
        (ElemKind::Square, false),
        (ElemKind::Negate, false),
    ] {
        v.push((format!("op/{kind:?}").to_lowercase(), Box::new(unary(kind, positive))));
    }
    let extra: [(&str, Instance); 9] = [
        ("op/matmul", |rng| {
            let (m, k, n) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4));
            let mut s = ParamStore::new();
            let a = s.add("a", matrix(rng, m, k, -1.0, 1.0));
            let b = s.add("b", matrix(rng, k, n, -1.0, 1.0));
            let w = matrix(rng, m, n, -1.0, 1.0);
            gradcheck(&s, &[a, b], None, |p| project(p.get(a).matmul(p.get(b))?, &w))
        }),
        ("op/add_bias", |rng| {
            let (m, n) = (rng.random_range(1..4), rng.random_range(1..4));
            let mut s = ParamStore::new();
            let a = s.add("a", matrix(rng, m, n, -1.0, 1.0));
            let b = s.add("b", Tensor::vector((0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?);
            let w = matrix(rng, m, n, -1.0, 1.0);
            gradcheck(&s, &[a, b], None, |p| project(p.get(a).add_bias(p.get(b))?, &w))
        }),
        ("op/reduce", |rng| {
            let (m, n) = (rng.random_range(1..4), rng.random_range(1..4));
            let mut s = ParamStore::new();
            let a = s.add("a", matrix(rng, m, n, -1.0, 1.0));
            let kind = if rng.random::<bool>() { ReduceKind::Sum } else { ReduceKind::Mean };
            let axis = rng.random_range(0..3);
            let w0 = Tensor::vector((0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
            let w1 = Tensor::vector((0..m).map(|_| rng.random_range(-1.0..1.0)).collect())?;
            gradcheck(&s, &[a], None, |p| {
                let x = p.get(a).square();
                Ok(match axis {
                    0 => project(x.reduce(kind, Some(0))?, &w0)?,
                    1 => project(x.reduce(kind, Some(1))?, &w1)?,
                    _ => x.reduce(kind, None)?,
                })
            })
        }),
        ("op/gather_cols", |rng| {
            let (m, n) = (rng.random_range(1..5), rng.random_range(1..5));
            let mut s = ParamStore::new();
            let a = s.add("a", matrix(rng, m, n, -1.0, 1.0));
            let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
            let w = matrix(rng, m, 1, -1.0, 1.0);
            gradcheck(&s, &[a], None, |p| project(p.get(a).gather_cols(&idx)?, &w))
        }),
        ("op/softmax_segments", |rng| {
            let segs: Vec<usize> = (0..rng.random_range(1..4)).map(|_| rng.random_range(1..4)).collect();
            let n: usize = segs.iter().sum();
            let m = rng.random_range(1..3);
            let mut s = ParamStore::new();
            let a = s.add("a", matrix(rng, m, n, -2.0, 2.0));
            let w = matrix(rng, m, n, -1.0, 1.0);
            gradcheck(&s, &[a], None, |p| project(p.get(a).softmax_segments(&segs)?, &w))
        }),
        ("op/weighted_sum", |rng| {
            let (m, n, k) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..5));
            let mut s = ParamStore::new();
            let ids: Vec<ParamId> = (0..k).map(|j| s.add(format!("x{j}"), matrix(rng, m, n, -1.0, 1.0))).collect();
            let coef: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let w = matrix(rng, m, n, -1.0, 1.0);
            gradcheck(&s, &ids, None, |p| {
                let terms: Vec<_> = ids.iter().zip(&coef).map(|(&id, &c)| (p.get(id), c)).collect();
                project(Var::weighted_sum(&terms)?, &w)
            })
        }),
        ("op/clamp", |rng| {
            let mut s = ParamStore::new();
            let mut x = off_kink(rng, 2, 3);
            // keep every entry clear of the bounds
            for v in x.data_mut() {
                if (v.abs() - 0.7).abs() < 0.02 {
                    *v *= 0.5;
                }
            }
            let a = s.add("a", x);
            let w = matrix(rng, 2, 3, -1.0, 1.0);
            gradcheck(&s, &[a], None, |p| project(p.get(a).clamp(-0.7, 0.7), &w))
        }),
        ("op/scale_shift", |rng| {
            let mut s = ParamStore::new();
            let a = s.add("a", matrix(rng, 2, 3, -1.0, 1.0));
            let (c, d) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let w = matrix(rng, 2, 3, -1.0, 1.0);
            gradcheck(&s, &[a], None, |p| project(p.get(a).scale(c).add_scalar(d).square(), &w))
        }),
        ("op/shared_subgraph", |rng| {
            // one leaf feeding several paths: gradients must accumulate
            let mut s = ParamStore::new();
            let a = s.add("a", matrix(rng, 2, 2, 0.2, 1.0));
            gradcheck(&s, &[a], None, |p| {
                let x = p.get(a);
                Ok(x.mul(x)?.add(x.exp())?.matmul(x)?.log()?.sum())
            })
        }),
    ];
    for (name, f) in extra {
        v.push((name.to_string(), Box::new(f)));
    }
    v
}

const COMPOSITE_COORDS: usize = 24;

fn gcn_instance(rng: &mut ChaCha8Rng) -> crate::Result<f64> {
    let n = rng.random_range(1..6);
    let g = random_graph(rng, n);
    let (din, dout, b) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..3));
    let mut s = ParamStore::new();
    let layer = GcnLayer::new(&mut s, "gcn", din, dout, Activation::Tanh, rng);
    let h: Vec<ParamId> = (0..n).map(|i| s.add(format!("h{i}"), matrix(rng, b, din, -1.0, 1.0))).collect();
    let ws: Vec<Tensor> = (0..n).map(|_| matrix(rng, b, dout, -1.0, 1.0)).collect();
    let mut ids = h.clone();
    ids.push(layer.weight);
    gradcheck(&s, &ids, None, |p| {
        let x: Vec<_> = h.iter().map(|&id| p.get(id)).collect();
        let out = layer.forward(p, &g, &x)?;
        let terms = out.iter().zip(&ws).map(|(o, w)| Ok((project(*o, w)?, 1.0))).collect::<crate::Result<Vec<_>>>()?;
        Ok(Var::weighted_sum(&terms)?)
    })
}

fn latent_params(s: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, rows: usize, d: usize) -> (ParamId, ParamId) {
    (
        s.add(format!("{name}.mu"), matrix(rng, rows, d, -1.0, 1.0)),
        s.add(format!("{name}.ls"), matrix(rng, rows, d, -1.0, 1.0)),
    )
}

fn latent<'t>(p: &Binding<'t, '_>, ids: (ParamId, ParamId)) -> crate::Result<GaussianLatent<'t>> {
    Ok(GaussianLatent::new(p.get(ids.0), p.get(ids.1))?)
}

fn kl_instance(rng: &mut ChaCha8Rng) -> crate::Result<f64> {
    let (rows, d) = (rng.random_range(1..3), rng.random_range(1..5));
    let mut s = ParamStore::new();
    let a = latent_params(&mut s, rng, "p", rows, d);
    let b = latent_params(&mut s, rng, "q", rows, d);
    let unit = rng.random::<bool>();
    gradcheck(&s, &[a.0, a.1, b.0, b.1], None, |p| {
        let (x, y) = (latent(p, a)?, latent(p, b)?);
        Ok(if unit {
            cognition::kl_to_unit_gaussian(&x)?
        } else {
            cognition::kl_diag_gaussians(&x, &y)?
        })
    })
}

fn vae_instance(rng: &mut ChaCha8Rng) -> crate::Result<f64> {
    let (rows, din, d, target) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4));
    let mut s = ParamStore::new();
    let head = CognitionHead::new(&mut s, "cog", din, din, d, 3, Activation::Tanh, &[target], rng);
    let x = s.add("x", matrix(rng, rows, din, -1.0, 1.0));
    let y = matrix(rng, rows, target, -1.0, 1.0);
    let eps = matrix(rng, rows, d, -2.0, 2.0);
    let mut ids = head.params();
    ids.push(x);
    gradcheck(&s, &ids, Some((COMPOSITE_COORDS, rng)), |p| {
        let (a, lat) = head.encode(p, p.get(x))?;
        let c = cognition::sample(&lat, eps.clone())?;
        let rec = head.reconstruct(p, c, &[0])?.remove(0);
        let target = p.tape().constant(y.clone());
        let l2 = cognition::reconstruction_l2(target, rec)?;
        Ok(l2.add(cognition::kl_to_unit_gaussian(&lat)?)?.add(a.square().mean())?)
    })
}

fn cd_instance(rng: &mut ChaCha8Rng) -> crate::Result<f64> {
    let (rows, d, w) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
    let k = rng.random_range(0..4);
    let mut s = ParamStore::new();
    let own = latent_params(&mut s, rng, "own", rows, d);
    let nbrs: Vec<_> = (0..k).map(|j| latent_params(&mut s, rng, &format!("n{j}"), rows, d)).collect();
    let rec = s.add("rec", matrix(rng, rows, w, -1.0, 1.0));
    let target = matrix(rng, rows, w, -1.0, 1.0);
    let mode = if rng.random::<bool>() { CdMode::Neighborhood } else { CdMode::GlobalUnit };
    let stop = rng.random::<bool>();
    let mut ids = vec![own.0, own.1, rec];
    for n in &nbrs {
        if !stop {
            ids.extend([n.0, n.1]);
        }
    }
    gradcheck(&s, &ids, None, |p| {
        let lats = nbrs.iter().map(|&n| latent(p, n)).collect::<crate::Result<Vec<_>>>()?;
        let t = p.tape().constant(target.clone());
        Ok(cognition::cd_loss(&[(t, p.get(rec))], &latent(p, own)?, &lats, mode, stop)?)
    })
}

fn small_q_net() -> NetworkConfig {
    NetworkConfig {
        hidden_dim: 3,
        gcn_dim: 3,
        latent_dim: 2,
        decoder_hidden: 3,
        head_hidden: vec![3],
        activation: Activation::Tanh,
        gcn_activation: Activation::Tanh,
        ..NetworkConfig::default()
    }
}

fn q_instance(variant: QVariant, rng: &mut ChaCha8Rng) -> crate::Result<f64> {
    let n = rng.random_range(2..4);
    let mut g = random_graph(rng, n);
    if g.edges().is_empty() {
        g.add_edge(0, 1)?;
    }
    let obs_dim = rng.random_range(1..4);
    let n_actions = rng.random_range(2..4);
    let cfg = QLearnerConfig {
        variant,
        alpha: rng.random_range(0.05..1.0),
        network: small_q_net(),
        ..QLearnerConfig::default()
    };
    let mut l = NccQLearner::new(cfg, g, &vec![obs_dim; n], &vec![n_actions; n], rng.random())?;
    let rows = rng.random_range(1..4);
    let batch = QBatch {
        obs: (0..n).map(|_| matrix(rng, rows, obs_dim, -1.0, 1.0)).collect(),
        actions: (0..n).map(|_| (0..rows).map(|_| rng.random_range(0..n_actions)).collect()).collect(),
        rewards: (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect(),
        next_obs: (0..n).map(|_| matrix(rng, rows, obs_dim, -1.0, 1.0)).collect(),
        terminal: (0..rows).map(|_| rng.random::<bool>()).collect(),
    };
    let targets = l.td_targets(&batch)?;
    let eps = l.draw_noise(rows);
    let ids = l.net().params();
    let store = l.params_mut().clone();
    gradcheck(&store, &ids, Some((COMPOSITE_COORDS, rng)), |p| {
        Ok(l.loss_parts(p, &batch, &targets, eps.as_deref())?.total)
    })
}

fn small_ac() -> AcLearnerConfig {
    AcLearnerConfig {
        network: AcNetworkConfig {
            actor_hidden: vec![3],
            hidden_dim: 3,
            gcn_dim: 3,
            gcn_activation: Activation::Tanh,
            latent_dim: 2,
            decoder_hidden: 3,
            head_hidden: vec![3],
            activation: Activation::Tanh,
        },
        ..AcLearnerConfig::default()
    }
}

fn ac_setup(rng: &mut ChaCha8Rng) -> crate::Result<(NccAcLearner, AcBatch)> {
    let n = rng.random_range(2..4);
    let mut g = random_graph(rng, n);
    if g.edges().is_empty() {
        g.add_edge(0, 1)?;
    }
    let obs: Vec<usize> = (0..n).map(|_| rng.random_range(1..4)).collect();
    let segs: Vec<Vec<usize>> = (0..n).map(|_| vec![rng.random_range(1..4); rng.random_range(1..3)]).collect();
    let mut cfg = small_ac();
    cfg.alpha = rng.random_range(0.05..1.0);
    let l = NccAcLearner::new(cfg, g, &obs, &segs, rng.random())?;
    let rows = rng.random_range(1..4);
    let acts = |rng: &mut ChaCha8Rng, i: usize| {
        let w: usize = segs[i].iter().sum();
        matrix(rng, rows, w, 0.0, 1.0)
    };
    let batch = AcBatch {
        obs: obs.iter().map(|&d| matrix(rng, rows, d, -1.0, 1.0)).collect(),
        actions: (0..n).map(|i| acts(rng, i)).collect(),
        rewards: (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect(),
        next_obs: obs.iter().map(|&d| matrix(rng, rows, d, -1.0, 1.0)).collect(),
        terminal: (0..rows).map(|_| rng.random::<bool>()).collect(),
    };
    Ok((l, batch))
}

fn critic_instance(rng: &mut ChaCha8Rng) -> crate::Result<f64> {
    let (mut l, batch) = ac_setup(rng)?;
    let targets = l.critic_targets(&batch)?;
    let eps = l.draw_noise(batch.len());
    let ids = l.critic().params();
    let store = l.critic_params().clone();
    gradcheck(&store, &ids, Some((COMPOSITE_COORDS, rng)), |p| {
        Ok(l.critic_loss_parts(p, &batch, &targets, eps.as_deref())?.total)
    })
}

fn actor_instance(rng: &mut ChaCha8Rng) -> crate::Result<f64> {
    let (l, batch) = ac_setup(rng)?;
    let i = rng.random_range(0..l.actors().len());
    let ids = l.actors()[i].params();
    let critic = l.critic_params().clone();
    gradcheck(l.actor_params(), &ids, Some((COMPOSITE_COORDS, rng)), |pa| {
        let tape = pa.tape();
        let pc = tape.bind_frozen(&critic);
        Ok(l.actor_loss(pa, &pc, &batch.obs)?.1[i])
    })
}

fn composite_checks() -> Vec<(String, Instance)> {
    vec![
        ("loss/gcn_layer".into(), gcn_instance as Instance),
        ("loss/kl".into(), kl_instance),
        ("loss/vae".into(), vae_instance),
        ("loss/cd".into(), cd_instance),
        ("loss/nccq_total".into(), |r| q_instance(QVariant::Ncc, r)),
        ("loss/gccq_total".into(), |r| q_instance(QVariant::Gcc, r)),
        ("loss/vdn_td".into(), |r| q_instance(QVariant::Vdn, r)),
        ("loss/idqn_td".into(), |r| q_instance(QVariant::Idqn, r)),
        ("loss/nccac_critic".into(), critic_instance),
        ("loss/nccac_actor".into(), actor_instance),
    ]
}

/// Runs every operation and composite-loss check on `instances` random
/// instances each.
pub fn gradcheck_suite(seed: u64, instances: usize) -> crate::Result<Vec<CheckReport>> {
    let mut checks: Vec<(String, Box<dyn Fn(&mut ChaCha8Rng) -> crate::Result<f64>>)> = op_checks();
    for (name, f) in composite_checks() {
        checks.push((name, Box::new(f)));
    }
    let mut out = Vec::with_capacity(checks.len());
    for (k, (name, f)) in checks.iter().enumerate() {
        let mut rng = stream(seed.wrapping_add(k as u64), Stream::Evaluation);
        let mut worst = 0.0f64;
        for _ in 0..instances {
            worst = worst.max(f(&mut rng)?);
        }
        out.push(CheckReport {
            name: name.clone(),
            instances,
            max_error: worst,
            tolerance: GRAD_TOLERANCE,
            passed: worst < GRAD_TOLERANCE,
        });
    }
    Ok(out)
}

/// Closed-form KL against a Latin-hypercube Monte Carlo estimate of
/// `E_p[log p(x) - log q(x)]`, plus `KL(p || p)` on every pair.
pub fn kl_oracle(seed: u64, pairs: usize, samples: usize) -> crate::Result<(CheckReport, CheckReport)> {
    let mut rng = stream(seed, Stream::Evaluation);
    let std_normal = Normal::standard();
    let (mut worst, mut self_worst) = (0.0f64, 0.0f64);
    for _ in 0..pairs {
        let d = rng.random_range(1..9);
        let draw = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> Vec<f64> { (0..d).map(|_| rng.random_range(lo..hi)).collect() };
        let (mp, lp, mq, lq) = (draw(&mut rng, -1.0, 1.0), draw(&mut rng, -1.0, 1.0), draw(&mut rng, -1.0, 1.0), draw(&mut rng, -1.0, 1.0));
        let tape = Tape::new();
        let lat = |m: &Vec<f64>, l: &Vec<f64>| -> crate::Result<GaussianLatent<'_>> {
            Ok(GaussianLatent::new(
                tape.constant(Tensor::matrix(1, d, m.clone())?),
                tape.constant(Tensor::matrix(1, d, l.clone())?),
            )?)
        };
        let (p, q) = (lat(&mp, &lp)?, lat(&mq, &lq)?);
        let closed = cognition::kl_diag_gaussians(&p, &q)?.item();
        self_worst = self_worst.max(cognition::kl_diag_gaussians(&p, &p)?.item().abs());
        let mut estimate = 0.0;
        for k in 0..d {
            let np = Normal::new(mp[k], lp[k].exp()).expect("valid");
            let nq = Normal::new(mq[k], lq[k].exp()).expect("valid");
            let mut strata: Vec<usize> = (0..samples).collect();
            strata.shuffle(&mut rng);
            let mut acc = 0.0;
            for s in strata {
                let u = (s as f64 + rng.random::<f64>()) / samples as f64;
                let x = mp[k] + lp[k].exp() * std_normal.inverse_cdf(u);
                acc += np.ln_pdf(x) - nq.ln_pdf(x);
            }
            estimate += acc / samples as f64;
        }
        worst = worst.max((estimate - closed).abs() / closed.abs().max(1e-12));
    }
    Ok((
        CheckReport {
            name: "kl/monte_carlo".into(),
            instances: pairs,
            max_error: worst,
            tolerance: 0.01,
            passed: worst < 0.01,
        },
        CheckReport {
            name: "kl/self".into(),
            instances: pairs,
            max_error: self_worst,
            tolerance: 1e-12,
            passed: self_worst < 1e-12,
        },
    ))
}

/// `act(D^-1/2 (A + I) D^-1/2 H W)` with dense loops.
pub fn dense_gcn(adj: &[Vec<bool>], h: &[Vec<f64>], w: &[Vec<f64>], act: Activation) -> Vec<Vec<f64>> {
    let n = adj.len();
    let deg: Vec<f64> = (0..n).map(|i| 1.0 + (0..n).filter(|&j| j != i && adj[i][j]).count() as f64).collect();
    let din = w.len();
    let dout = w[0].len();
    (0..n)
        .map(|i| {
            let mut agg = vec![0.0; din];
            for j in 0..n {
                if i == j || adj[i][j] {
                    let c = 1.0 / (deg[i] * deg[j]).sqrt();
                    for (a, x) in agg.iter_mut().zip(&h[j]) {
                        *a += c * x;
                    }
                }
            }
            (0..dout)
                .map(|o| act.apply_value((0..din).map(|k| agg[k] * w[k][o]).sum()))
                .collect()
        })
        .collect()
}

/// GCN layer against the dense formula, plus exact permutation
/// equivariance and locality.
pub fn gcn_oracle(seed: u64, graphs: usize) -> crate::Result<Vec<CheckReport>> {
    let mut rng = stream(seed, Stream::Evaluation);
    let (mut dense_err, mut perm_err, mut local_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..graphs {
        let n = rng.random_range(1..9);
        let g = random_graph(&mut rng, n);
        let (din, dout) = (rng.random_range(1..5), rng.random_range(1..5));
        let mut store = ParamStore::new();
        let layer = GcnLayer::new(&mut store, "g", din, dout, Activation::Tanh, &mut rng);
        let h: Vec<Vec<f64>> = (0..n).map(|_| (0..din).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let run = |g: &AgentGraph, h: &[Vec<f64>]| -> crate::Result<Vec<Vec<f64>>> {
            let tape = Tape::new();
            let p = tape.bind_frozen(&store);
            let x = h
                .iter()
                .map(|r| Ok(tape.constant(Tensor::matrix(1, din, r.clone())?)))
                .collect::<crate::Result<Vec<_>>>()?;
            Ok(layer.forward(&p, g, &x)?.iter().map(Var::to_vec).collect())
        };
        let out = run(&g, &h)?;
        let adj: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| g.is_adjacent(i, j)).collect()).collect();
        let w: Vec<Vec<f64>> = store
            .get(layer.weight)
            .data()
            .chunks(dout)
            .map(<[f64]>::to_vec)
            .collect();
        let want = dense_gcn(&adj, &h, &w, Activation::Tanh);
        for (a, b) in out.iter().flatten().zip(want.iter().flatten()) {
            dense_err = dense_err.max((a - b).abs());
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let gp = g.permuted(&perm)?;
        let mut hp = vec![Vec::new(); n];
        for i in 0..n {
            hp[perm[i]] = h[i].clone();
        }
        let outp = run(&gp, &hp)?;
        for i in 0..n {
            if outp[perm[i]] != out[i] {
                perm_err = perm_err.max(1.0);
            }
        }
        let i = rng.random_range(0..n);
        let closed = g.closed_neighborhood(i)?;
        let mut hl = h.clone();
        for (j, row) in hl.iter_mut().enumerate() {
            if !closed.contains(&j) {
                row.iter_mut().for_each(|x| *x += 10.0);
            }
        }
        if run(&g, &hl)?[i] != out[i] {
            local_err = 1.0;
        }
    }
    let report = |name: &str, e: f64, tol: f64| CheckReport {
        name: name.into(),
        instances: graphs,
        max_error: e,
        tolerance: tol,
        passed: e <= tol,
    };
    Ok(vec![
        report("gcn/dense", dense_err, 1e-12),
        report("gcn/permutation", perm_err, 0.0),
        report("gcn/locality", local_err, 0.0),
    ])
}

/// Per-agent max sum against the best joint action found by enumeration.
pub fn joint_max_oracle(seed: u64, trials: usize) -> CheckReport {
    let mut rng = stream(seed, Stream::Evaluation);
    let mut mismatches = 0usize;
    for _ in 0..trials {
        let n = rng.random_range(1..5);
        let q: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let a = rng.random_range(1..6);
                // coarse values make ties common
                (0..a).map(|_| (rng.random_range(-8..8) as f64) * 0.25 + rng.random_range(0..2) as f64 * 1e-3).collect()
            })
            .collect();
        let mut best = f64::NEG_INFINITY;
        let mut idx = vec![0usize; n];
        'outer: loop {
            let total = (0..n).fold(0.0, |acc, i| acc + q[i][idx[i]]);
            best = best.max(total);
            for i in 0..n {
                idx[i] += 1;
                if idx[i] < q[i].len() {
                    continue 'outer;
                }
                idx[i] = 0;
            }
            break;
        }
        let rows: Vec<&[f64]> = q.iter().map(Vec::as_slice).collect();
        if crate::nccq::decomposed_max(&rows) != best {
            mismatches += 1;
        }
    }
    CheckReport {
        name: "td/joint_max".into(),
        instances: trials,
        max_error: mismatches as f64,
        tolerance: 0.0,
        passed: mismatches == 0,
    }
}

/// All oracles with their default sizes.
pub fn oracle_suite(seed: u64) -> crate::Result<Vec<CheckReport>> {
    let (mc, selfkl) = kl_oracle(seed, 50, 100_000)?;
    let mut out = vec![mc, selfkl];
    out.extend(gcn_oracle(seed, 200)?);
    out.push(joint_max_oracle(seed, 1000));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradcheck_flags_a_wrong_gradient() {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::matrix(1, 2, vec![0.3, -0.7]).unwrap());
        let ok = gradcheck(&s, &[a], None, |p| Ok(p.get(a).square().sum())).unwrap();
        assert!(ok < 1e-8);
        // detach hides the dependence from backprop but not from differences
        let bad = gradcheck(&s, &[a], None, |p| Ok(p.get(a).detach().square().sum())).unwrap();
        assert!(bad > 0.5);
    }

    #[test]
    fn small_suites_pass() {
        for r in gradcheck_suite(3, 5).unwrap() {
            assert!(r.passed, "{r}");
        }
        let (mc, s) = kl_oracle(3, 3, 20_000).unwrap();
        assert!(mc.passed && s.passed, "{mc} {s}");
        for r in gcn_oracle(3, 20).unwrap() {
            assert!(r.passed, "{r}");
        }
        assert!(joint_max_oracle(3, 100).passed);
    }
}
