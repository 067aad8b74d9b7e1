//! Deterministic per-agent policies over path-split simplices.

use rand::Rng;

use crate::autodiff::{softmax_segments_in_place, Binding, ParamId, ParamStore, Var};
use crate::cognition::check_width;
use crate::nn::{Activation, Mlp};

#[derive(Debug, Clone)]
pub struct Actor {
    pub mlp: Mlp,
    pub segments: Vec<usize>,
}

impl Actor {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        obs_dim: usize,
        hidden: &[usize],
        segments: &[usize],
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let mut dims = vec![obs_dim];
        dims.extend(hidden);
        dims.push(segments.iter().sum());
        Actor {
            mlp: Mlp::new(store, name, &dims, activation, Activation::Identity, rng),
            segments: segments.to_vec(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.mlp.d_in()
    }

    pub fn act_dim(&self) -> usize {
        self.mlp.d_out()
    }

    /// Pre-normalization scores.
    pub fn logits<'t>(&self, p: &Binding<'t, '_>, obs: Var<'t>) -> crate::Result<Var<'t>> {
        check_width("actor observation", &obs, self.obs_dim())?;
        Ok(self.mlp.forward(p, obs)?)
    }

    /// `batch x act_dim`; each segment of every row sums to one.
    pub fn forward<'t>(&self, p: &Binding<'t, '_>, obs: Var<'t>) -> crate::Result<Var<'t>> {
        Ok(self.logits(p, obs)?.softmax_segments(&self.segments)?)
    }

    /// Adds `noise` to one row of logits and renormalizes in place.
    pub fn perturb(&self, logits: &mut [f64], noise: impl Iterator<Item = f64>) {
        for (l, n) in logits.iter_mut().zip(noise) {
            *l += n;
        }
        softmax_segments_in_place(logits, &self.segments);
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.mlp.params()
    }
}

/// `-mean(Q)` for a policy: `critic` maps the live action batch to Q values.
/// Only parameters reachable through `actor` and `critic` get gradients.
pub fn actor_objective<'t>(
    actor: &Actor,
    p: &Binding<'t, '_>,
    obs: Var<'t>,
    critic: impl FnOnce(Var<'t>) -> crate::Result<Var<'t>>,
) -> crate::Result<Var<'t>> {
    let a = actor.forward(p, obs)?;
    Ok(critic(a)?.mean().neg())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Optimizer, OptimizerConfig, Tape, Tensor};
    use crate::rng::{stream, Stream};

    fn actor(store: &mut ParamStore, segments: &[usize]) -> Actor {
        Actor::new(store, "pi", 3, &[8], segments, Activation::Tanh, &mut stream(1, Stream::ParamInit))
    }

    #[test]
    fn zero_parameters_split_uniformly() {
        let mut store = ParamStore::new();
        let a = actor(&mut store, &[2, 4]);
        for id in a.params() {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let tape = Tape::new();
        let p = tape.bind(&store);
        let out = a.forward(&p, tape.constant(Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap())).unwrap();
        assert_eq!(out.to_vec(), vec![0.5, 0.5, 0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn zero_critic_leaves_policy_unchanged() {
        let mut store = ParamStore::new();
        let a = actor(&mut store, &[3]);
        let before = store.flat_values();
        let tape = Tape::new();
        let p = tape.bind(&store);
        let obs = tape.constant(Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -1.0, 0.0, 1.0]).unwrap());
        let loss = actor_objective(&a, &p, obs, |act| Ok(act.scale(0.0).sum())).unwrap();
        let g = tape.backward(loss).unwrap();
        drop(p);
        g.accumulate_into(&mut store);
        Optimizer::new(OptimizerConfig::adam(1e-2)).step(&mut store, &a.params()).unwrap();
        assert_eq!(before, store.flat_values());
    }

    #[test]
    fn quadratic_critic_pulls_action_to_its_peak() {
        let target = [0.2, 0.3, 0.5];
        let mut store = ParamStore::new();
        let a = actor(&mut store, &[3]);
        let ids = a.params();
        let mut opt = Optimizer::new(OptimizerConfig::adam(1e-2));
        let o = Tensor::matrix(1, 3, vec![0.5, -0.5, 1.0]).unwrap();
        for _ in 0..2000 {
            let tape = Tape::new();
            let p = tape.bind(&store);
            let obs = tape.constant(o.clone());
            let loss = actor_objective(&a, &p, obs, |act| {
                let peak = tape.constant(Tensor::matrix(1, 3, target.to_vec()).unwrap());
                Ok(act.sub(peak)?.square().sum().neg())
            })
            .unwrap();
            let g = tape.backward(loss).unwrap();
            drop(p);
            g.accumulate_into(&mut store);
            opt.step(&mut store, &ids).unwrap();
        }
        let tape = Tape::new();
        let out = a.forward(&tape.bind_frozen(&store), tape.constant(o)).unwrap().to_vec();
        for (x, t) in out.iter().zip(target) {
            assert!((x - t).abs() < 1e-2, "{out:?}");
        }
    }

    #[test]
    fn perturbed_action_stays_on_the_simplex() {
        let mut store = ParamStore::new();
        let a = actor(&mut store, &[2, 3]);
        let mut logits = vec![0.3, -1.0, 2.0, 0.0, 0.1];
        a.perturb(&mut logits, [5.0, -5.0, 0.5, 0.5, 40.0].into_iter());
        assert!((logits[0] + logits[1] - 1.0).abs() < 1e-12);
        assert!((logits[2..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(logits.iter().all(|&x| x >= 0.0));
    }
}
