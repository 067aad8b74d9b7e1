//! Variational cognition head and the cognitive-dissonance loss.
//!
//! The head splits a feature vector into an agent-specific branch `A_i` and a
//! diagonal Gaussian latent `q(C_i)` parameterized by its mean and log-std.
//! A decoder maps a latent sample back onto reconstruction targets. The
//! dissonance loss is reconstruction error plus a KL term that, in
//! neighborhood mode, measures the latent against every neighbor's latent.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Binding, ParamId, ParamStore, Tape, Tensor, Var};
use crate::nn::{Activation, Dense};
use crate::rng::LatentNoise;

pub const LOG_SIGMA_MIN: f64 = -5.0;
pub const LOG_SIGMA_MAX: f64 = 2.0;

/// Diagonal Gaussian over the cognition latent; `mu` and `log_sigma` share a
/// shape of `[d]` or `[batch, d]`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianLatent<'t> {
    pub mu: Var<'t>,
    pub log_sigma: Var<'t>,
}

impl<'t> GaussianLatent<'t> {
    pub fn new(mu: Var<'t>, log_sigma: Var<'t>) -> Result<Self, AutodiffError> {
        if mu.shape() != log_sigma.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "gaussian_latent",
                left: mu.shape(),
                right: log_sigma.shape(),
            });
        }
        Ok(GaussianLatent { mu, log_sigma })
    }

    /// `N(0, I)` with the given shape, as constants.
    pub fn unit(tape: &'t Tape, shape: Vec<usize>) -> Self {
        let mu = tape.constant(Tensor::zeros(shape.clone()).expect("positive dims"));
        let log_sigma = tape.constant(Tensor::zeros(shape).expect("positive dims"));
        GaussianLatent { mu, log_sigma }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.mu.shape()
    }

    pub fn dim(&self) -> usize {
        *self.mu.shape().last().unwrap_or(&1)
    }

    pub fn detach(&self) -> Self {
        GaussianLatent {
            mu: self.mu.detach(),
            log_sigma: self.log_sigma.detach(),
        }
    }
}

/// Reparameterized draw `mu + exp(log_sigma) * epsilon`. `epsilon` is a
/// constant, so gradients reach only `mu` and `log_sigma`.
pub fn sample<'t>(latent: &GaussianLatent<'t>, epsilon: Tensor) -> Result<Var<'t>, AutodiffError> {
    let tape = latent.mu.tape();
    let eps = tape.constant(epsilon);
    let noise = latent.log_sigma.exp().mul(eps)?;
    latent.mu.add(noise)
}

/// Draws standard-normal noise shaped like `shape`, or zeros for the mean.
pub fn noise_tensor(shape: Vec<usize>, noise: &mut LatentNoise<'_>) -> Tensor {
    let n: usize = shape.iter().product();
    let data = match noise {
        LatentNoise::Sample(rng) => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        LatentNoise::Mean => vec![0.0; n],
    };
    Tensor::new(shape, data).expect("positive dims")
}

/// Per-row KL(p || q) summed over latent components, averaged over rows.
///
/// Uses `(sigma_p / sigma_q)^2 = exp(2 (log_sigma_p - log_sigma_q))`, which
/// makes KL(p || p) exactly zero.
pub fn kl_diag_gaussians<'t>(p: &GaussianLatent<'t>, q: &GaussianLatent<'t>) -> Result<Var<'t>, AutodiffError> {
    let shape = p.shape();
    if shape != q.shape() {
        return Err(AutodiffError::ShapeMismatch {
            op: "kl_diag_gaussians",
            left: shape,
            right: q.shape(),
        });
    }
    let log_ratio = q.log_sigma.sub(p.log_sigma)?;
    let var_ratio = p.log_sigma.sub(q.log_sigma)?.scale(2.0).exp();
    let inv_var_q = q.log_sigma.scale(-2.0).exp();
    let mean_term = p.mu.sub(q.mu)?.square().mul(inv_var_q)?;
    let per_component = log_ratio
        .add(var_ratio.add(mean_term)?.scale(0.5))?
        .add_scalar(-0.5);
    if shape.len() <= 1 {
        Ok(per_component.sum())
    } else {
        Ok(per_component
            .reduce(crate::autodiff::ReduceKind::Sum, Some(shape.len() - 1))?
            .mean())
    }
}

pub fn kl_to_unit_gaussian<'t>(p: &GaussianLatent<'t>) -> Result<Var<'t>, AutodiffError> {
    let unit = GaussianLatent::unit(p.mu.tape(), p.shape());
    kl_diag_gaussians(p, &unit)
}

/// Mean squared error over all components.
pub fn reconstruction_l2<'t>(target: Var<'t>, reconstruction: Var<'t>) -> Result<Var<'t>, AutodiffError> {
    Ok(reconstruction.sub(target)?.square().mean())
}

/// Which prior the latent is pulled toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdMode {
    /// Average KL against each neighbor's latent.
    Neighborhood,
    /// KL against a unit Gaussian shared by everyone.
    GlobalUnit,
}

/// Cognitive-dissonance loss for one agent.
///
/// `reconstructions` pairs each target with its reconstruction. In
/// neighborhood mode an agent without neighbors falls back to the unit prior.
/// With `stop_grad_neighbors` the neighbor latents are treated as constants.
pub fn cd_loss<'t>(
    reconstructions: &[(Var<'t>, Var<'t>)],
    own: &GaussianLatent<'t>,
    neighbors: &[GaussianLatent<'t>],
    mode: CdMode,
    stop_grad_neighbors: bool,
) -> Result<Var<'t>, AutodiffError> {
    let kl = match mode {
        CdMode::Neighborhood if !neighbors.is_empty() => {
            let terms = neighbors
                .iter()
                .map(|q| {
                    let q = if stop_grad_neighbors { q.detach() } else { *q };
                    kl_diag_gaussians(own, &q).map(|k| (k, 1.0 / neighbors.len() as f64))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Var::weighted_sum(&terms)?
        }
        CdMode::Neighborhood => {
            log::debug!("neighborhood dissonance requested for an isolated agent; using the unit prior");
            kl_to_unit_gaussian(own)?
        }
        CdMode::GlobalUnit => kl_to_unit_gaussian(own)?,
    };
    let mut total = kl;
    for &(target, recon) in reconstructions {
        total = total.add(reconstruction_l2(target, recon)?)?;
    }
    Ok(total)
}

/// Encoder/decoder pair around the cognition latent.
#[derive(Debug, Clone)]
pub struct CognitionHead {
    /// Features -> agent-specific cognition `A_i`.
    pub agent_branch: Dense,
    pub enc_mu: Dense,
    pub enc_log_sigma: Dense,
    pub dec_hidden: Dense,
    pub dec_activation: Activation,
    /// One output layer per reconstruction target slot.
    pub dec_outputs: Vec<Dense>,
}

impl CognitionHead {
    /// `agent_in`: width feeding the agent branch; `feature_in`: width feeding
    /// the latent encoder; `targets`: width of every reconstruction slot.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        agent_in: usize,
        feature_in: usize,
        latent_dim: usize,
        decoder_hidden: usize,
        dec_activation: Activation,
        targets: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        CognitionHead {
            agent_branch: Dense::new(store, &format!("{name}.agent"), agent_in, latent_dim, rng),
            enc_mu: Dense::new(store, &format!("{name}.mu"), feature_in, latent_dim, rng),
            enc_log_sigma: Dense::new(store, &format!("{name}.log_sigma"), feature_in, latent_dim, rng),
            dec_hidden: Dense::new(store, &format!("{name}.dec"), latent_dim, decoder_hidden, rng),
            dec_activation,
            dec_outputs: targets
                .iter()
                .enumerate()
                .map(|(k, &w)| Dense::new(store, &format!("{name}.dec_out{k}"), decoder_hidden, w, rng))
                .collect(),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.enc_mu.d_out
    }

    /// `A_i` and the latent from one feature matrix.
    pub fn encode<'t>(&self, p: &Binding<'t, '_>, features: Var<'t>) -> crate::Result<(Var<'t>, GaussianLatent<'t>)> {
        self.encode_with_shortcut(p, features, features)
    }

    /// `A_i` from `agent_features`, latent from `features`.
    pub fn encode_with_shortcut<'t>(
        &self,
        p: &Binding<'t, '_>,
        agent_features: Var<'t>,
        features: Var<'t>,
    ) -> crate::Result<(Var<'t>, GaussianLatent<'t>)> {
        check_width("cognition agent branch", &agent_features, self.agent_branch.d_in)?;
        check_width("cognition encoder", &features, self.enc_mu.d_in)?;
        let a = self.agent_branch.forward(p, agent_features)?;
        let mu = self.enc_mu.forward(p, features)?;
        let log_sigma = self
            .enc_log_sigma
            .forward(p, features)?
            .clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX);
        Ok((a, GaussianLatent { mu, log_sigma }))
    }

    /// Reconstructions for the requested target slots.
    pub fn reconstruct<'t>(&self, p: &Binding<'t, '_>, c_hat: Var<'t>, slots: &[usize]) -> crate::Result<Vec<Var<'t>>> {
        check_width("cognition decoder", &c_hat, self.dec_hidden.d_in)?;
        let hidden = self.dec_activation.apply(self.dec_hidden.forward(p, c_hat)?);
        slots
            .iter()
            .map(|&s| {
                let layer = self.dec_outputs.get(s).ok_or_else(|| crate::Error::Dimension {
                    context: "decoder slot".into(),
                    expected: self.dec_outputs.len(),
                    actual: s,
                })?;
                Ok(layer.forward(p, hidden)?)
            })
            .collect()
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = Vec::new();
        v.extend(self.agent_branch.params());
        v.extend(self.enc_mu.params());
        v.extend(self.enc_log_sigma.params());
        v.extend(self.dec_hidden.params());
        for d in &self.dec_outputs {
            v.extend(d.params());
        }
        v
    }
}

pub(crate) fn check_width(context: &str, x: &Var<'_>, expected: usize) -> crate::Result<()> {
    let actual = *x.shape().last().unwrap_or(&1);
    if actual != expected {
        return Err(crate::Error::Dimension {
            context: context.to_string(),
            expected,
            actual,
        });
    }
    Ok(())
}

/// Arithmetic mean of all latent-mean components: the scalar "cognition
/// value" tracked per agent.
pub fn cognition_value(latent: &GaussianLatent<'_>) -> f64 {
    let mu = latent.mu.to_vec();
    mu.iter().sum::<f64>() / mu.len() as f64
}
