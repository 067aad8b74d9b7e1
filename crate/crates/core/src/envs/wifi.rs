//! Synthetic wifi power configuration.
//!
//! Access points pick an integer transmit power in `[10, 30]`. Signal quality
//! at AP `i` grows logarithmically with its own power and is degraded by
//! interference from nearby APs:
//!
//! ```text
//! q_i = w_i ln p_i - lambda * sum_j kappa_ij p_j,   kappa_ij = max(0, 1 - dist_ij / cutoff)
//! ```
//!
//! where `w_i` scales with the AP's client load. The shared reward is the sum
//! of `q_i` rescaled by its attainable range into `[0, 1]`. A loud AP helps
//! its own clients and hurts its neighbors, so the best joint configuration
//! turns APs with many close neighbors down.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{read_file, ActionSpace, EnvError, JointAction, MultiAgentEnv, StepResult};
use crate::graph::AgentGraph;
use crate::json::SpannedDoc;

pub const MIN_POWER: i64 = 10;
pub const MAX_POWER: i64 = 30;
pub const N_POWER_LEVELS: usize = (MAX_POWER - MIN_POWER + 1) as usize;
pub const OBS_FIELDS: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessPoint {
    pub id: u32,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WifiTopology {
    pub aps: Vec<AccessPoint>,
    pub cutoff_radius: f64,
    pub channels: usize,
}

impl WifiTopology {
    pub fn from_file(path: &Path) -> Result<Self, EnvError> {
        let text = read_file(path)?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, EnvError> {
        let (topo, doc): (WifiTopology, _) = SpannedDoc::parse(text, origin)?;
        if let Some((pointer, msg)) = topo.validate() {
            return Err(doc.error_at(&pointer, msg).into());
        }
        Ok(topo)
    }

    /// `n` APs spaced `spacing` apart on the x axis.
    pub fn line(n: usize, spacing: f64, cutoff_radius: f64) -> Self {
        WifiTopology {
            aps: (0..n)
                .map(|k| AccessPoint {
                    id: k as u32,
                    x: k as f64 * spacing,
                    y: 0.0,
                })
                .collect(),
            cutoff_radius,
            channels: 1,
        }
    }

    pub fn validate(&self) -> Option<(String, String)> {
        if self.aps.is_empty() {
            return Some(("/aps".into(), "at least one access point is required".into()));
        }
        if !(self.cutoff_radius > 0.0 && self.cutoff_radius.is_finite()) {
            return Some(("/cutoff_radius".into(), "cutoff radius must be positive".into()));
        }
        if self.channels == 0 {
            return Some(("/channels".into(), "at least one channel is required".into()));
        }
        for (k, ap) in self.aps.iter().enumerate() {
            if !(ap.x.is_finite() && ap.y.is_finite()) {
                return Some((format!("/aps/{k}"), "coordinates must be finite".into()));
            }
            if self.aps[..k].iter().any(|other| other.id == ap.id) {
                return Some((format!("/aps/{k}/id"), format!("duplicate id {}", ap.id)));
            }
        }
        None
    }

    /// Interference coefficient, symmetric and in `[0, 1]`.
    pub fn kappa(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let (a, b) = (&self.aps[i], &self.aps[j]);
        let dist = (a.x - b.x).hypot(a.y - b.y);
        (1.0 - dist / self.cutoff_radius).max(0.0)
    }

    /// APs are adjacent iff they interfere.
    pub fn derive_neighborhoods(&self) -> AgentGraph {
        let n = self.aps.len();
        let mut g = AgentGraph::empty(n).expect("at least one AP");
        for i in 0..n {
            for j in i + 1..n {
                if self.kappa(i, j) > 0.0 {
                    g.add_edge(i, j).expect("distinct APs");
                }
            }
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WifiModel {
    pub signal_gain: f64,
    pub interference_weight: f64,
    pub load_mean: f64,
    /// Standard deviation of the per-step load shock; 0 keeps loads fixed.
    pub load_volatility: f64,
    pub load_reversion: f64,
}

impl Default for WifiModel {
    fn default() -> Self {
        WifiModel {
            signal_gain: 1.0,
            interference_weight: 0.125,
            load_mean: 1.0,
            load_volatility: 0.0,
            load_reversion: 0.1,
        }
    }
}

pub struct WifiEnv {
    topo: WifiTopology,
    model: WifiModel,
    graph: AgentGraph,
    kappa: Vec<Vec<f64>>,
    horizon: usize,
    rng: ChaCha8Rng,
    t: usize,
    powers: Vec<i64>,
    loads: Vec<f64>,
}

impl WifiEnv {
    pub fn new(topo: WifiTopology, model: WifiModel, horizon: usize, rng: ChaCha8Rng) -> Result<Self, EnvError> {
        if let Some((pointer, msg)) = topo.validate() {
            return Err(crate::json::AddressedError {
                origin: "topology".into(),
                line: 0,
                column: 0,
                message: format!("{pointer}: {msg}"),
            }
            .into());
        }
        let n = topo.aps.len();
        let kappa = (0..n).map(|i| (0..n).map(|j| topo.kappa(i, j)).collect()).collect();
        Ok(WifiEnv {
            graph: topo.derive_neighborhoods(),
            kappa,
            horizon: horizon.max(1),
            rng,
            t: 0,
            powers: vec![(MIN_POWER + MAX_POWER) / 2; n],
            loads: vec![model.load_mean; n],
            topo,
            model,
        })
    }

    pub fn topology(&self) -> &WifiTopology {
        &self.topo
    }

    pub fn loads(&self) -> &[f64] {
        &self.loads
    }

    /// Normalized reward of a joint power choice under the current loads.
    pub fn reward_for(&self, powers: &[i64]) -> Result<f64, EnvError> {
        let n = self.topo.aps.len();
        if powers.len() != n {
            return Err(EnvError::AgentCount {
                expected: n,
                actual: powers.len(),
            });
        }
        for (agent, &p) in powers.iter().enumerate() {
            if !(MIN_POWER..=MAX_POWER).contains(&p) {
                return Err(EnvError::PowerOutOfRange { agent, power: p });
            }
        }
        let lambda = self.model.interference_weight;
        let (lo_p, hi_p) = (MIN_POWER as f64, MAX_POWER as f64);
        let (mut total, mut lo, mut hi) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let w = self.model.signal_gain * self.loads[i];
            let k_i: f64 = self.kappa[i].iter().sum();
            let interference: f64 = (0..n).map(|j| self.kappa[i][j] * powers[j] as f64).sum();
            total += w * (powers[i] as f64).ln() - lambda * interference;
            lo += w * lo_p.ln() - lambda * hi_p * k_i;
            hi += w * hi_p.ln() - lambda * lo_p * k_i;
        }
        Ok(((total - lo) / (hi - lo)).clamp(0.0, 1.0))
    }

    /// Steps with raw powers in `[10, 30]`.
    pub fn step_powers(&mut self, powers: &[i64]) -> Result<StepResult, EnvError> {
        if self.t >= self.horizon {
            return Err(EnvError::EpisodeFinished);
        }
        let reward = self.reward_for(powers)?;
        self.powers = powers.to_vec();
        self.t += 1;
        self.evolve_loads();
        Ok(StepResult {
            observations: self.observe_all(),
            reward,
            terminal: self.t >= self.horizon,
        })
    }

    fn evolve_loads(&mut self) {
        if self.model.load_volatility <= 0.0 {
            return;
        }
        let mean = self.model.load_mean;
        for l in &mut self.loads {
            let shock: f64 = StandardNormal.sample(&mut self.rng);
            *l += self.model.load_reversion * (mean - *l) + self.model.load_volatility * shock;
            *l = l.clamp(0.2 * mean, 3.0 * mean);
        }
    }

    /// Nine telemetry-like fields derived from the last powers and loads:
    /// frequency, bandwidth, loss rate, band index, users, download volume,
    /// upload speed, download speed, latency. All roughly in `[0, 1]`.
    pub fn observe(&self, i: usize) -> Vec<f64> {
        let channel = i % self.topo.channels;
        let signal = self.powers[i] as f64 / MAX_POWER as f64;
        let interference: f64 = (0..self.powers.len())
            .map(|j| self.kappa[i][j] * self.powers[j] as f64 / MAX_POWER as f64)
            .sum();
        let throughput = (1.0 + signal / (interference + 0.1)).log2();
        vec![
            (2.412 + 0.005 * channel as f64) / 5.0,
            0.5,
            interference / (signal + interference),
            (channel + 1) as f64 / self.topo.channels as f64,
            self.loads[i] / self.model.load_mean.max(1e-9),
            self.loads[i] * throughput / 10.0,
            0.5 * throughput / 5.0,
            throughput / 5.0,
            1.0 / (1.0 + throughput),
        ]
    }

    fn observe_all(&self) -> Vec<Vec<f64>> {
        (0..self.topo.aps.len()).map(|i| self.observe(i)).collect()
    }

    /// Exhaustive search over all joint powers under the current loads.
    pub fn optimum(&self) -> (Vec<i64>, f64) {
        let n = self.topo.aps.len();
        let mut best = (vec![MIN_POWER; n], f64::NEG_INFINITY);
        let mut powers = vec![MIN_POWER; n];
        loop {
            let r = self.reward_for(&powers).expect("in range");
            if r > best.1 {
                best = (powers.clone(), r);
            }
            let mut k = 0;
            loop {
                if k == n {
                    return best;
                }
                powers[k] += 1;
                if powers[k] <= MAX_POWER {
                    break;
                }
                powers[k] = MIN_POWER;
                k += 1;
            }
        }
    }
}

impl MultiAgentEnv for WifiEnv {
    fn n_agents(&self) -> usize {
        self.topo.aps.len()
    }

    fn graph(&self) -> &AgentGraph {
        &self.graph
    }

    fn observation_dim(&self, _agent: usize) -> usize {
        OBS_FIELDS
    }

    fn action_space(&self, _agent: usize) -> ActionSpace {
        ActionSpace::Discrete(N_POWER_LEVELS)
    }

    fn reset(&mut self) -> Vec<Vec<f64>> {
        self.t = 0;
        self.powers.iter_mut().for_each(|p| *p = (MIN_POWER + MAX_POWER) / 2);
        self.observe_all()
    }

    fn step(&mut self, action: &JointAction) -> Result<StepResult, EnvError> {
        let JointAction::Discrete(idx) = action else {
            return Err(EnvError::WrongActionKind { expected: "discrete" });
        };
        let mut powers = Vec::with_capacity(idx.len());
        for (agent, &a) in idx.iter().enumerate() {
            if a >= N_POWER_LEVELS {
                return Err(EnvError::ActionOutOfRange {
                    agent,
                    action: a,
                    n_actions: N_POWER_LEVELS,
                });
            }
            powers.push(MIN_POWER + a as i64);
        }
        self.step_powers(&powers)
    }

    fn horizon(&self) -> usize {
        self.horizon
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn env(topo: WifiTopology) -> WifiEnv {
        WifiEnv::new(topo, WifiModel::default(), 10, stream(1, Stream::EnvDemand)).unwrap()
    }

    #[test]
    fn isolated_ap_reward_increases_with_power() {
        let e = env(WifiTopology::line(1, 1.0, 1.5));
        let rewards: Vec<f64> = (10..=30).map(|p| e.reward_for(&[p]).unwrap()).collect();
        assert!(rewards.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(rewards[0], 0.0);
        assert_eq!(rewards[20], 1.0);
    }

    #[test]
    fn swapping_symmetric_powers_is_symmetric() {
        let e = env(WifiTopology::line(2, 0.0, 1.0));
        assert_eq!(e.topology().kappa(0, 1), 1.0);
        for (a, b) in [(10, 30), (12, 17), (25, 11)] {
            assert_eq!(e.reward_for(&[a, b]).unwrap(), e.reward_for(&[b, a]).unwrap());
        }
    }

    #[test]
    fn out_of_range_power_is_an_error() {
        let mut e = env(WifiTopology::line(2, 1.0, 1.5));
        e.reset();
        assert!(matches!(e.step_powers(&[9, 20]), Err(EnvError::PowerOutOfRange { agent: 0, power: 9 })));
        assert!(matches!(e.step_powers(&[20, 31]), Err(EnvError::PowerOutOfRange { agent: 1, .. })));
        assert!(matches!(e.step(&JointAction::Discrete(vec![0, 21])), Err(EnvError::ActionOutOfRange { .. })));
    }

    #[test]
    fn line_fixture_optimum_turns_the_middle_down() {
        let e = env(WifiTopology::line(3, 1.0, 1.5));
        assert_eq!(e.graph().neighbors(1).unwrap(), vec![0, 2]);
        assert!(e.graph().neighbors(0).unwrap() == vec![1]);
        let (powers, best) = e.optimum();
        assert_eq!(powers, vec![24, 12, 24]);
        assert!(best > 0.0 && best <= 1.0);
    }

    #[test]
    fn distant_aps_are_isolated() {
        let e = env(WifiTopology::line(2, 5.0, 1.5));
        assert!(e.graph().neighbors(0).unwrap().is_empty());
    }

    #[test]
    fn rewards_stay_in_unit_interval() {
        let mut e = WifiEnv::new(
            WifiTopology::line(4, 0.7, 1.5),
            WifiModel {
                load_volatility: 0.3,
                ..WifiModel::default()
            },
            1000,
            stream(2, Stream::EnvDemand),
        )
        .unwrap();
        e.reset();
        for t in 0..200usize {
            let p = (10 + (t * 7) % 21) as i64;
            let r = e.step_powers(&[p, 30 - (p - 10), 20, p]).unwrap();
            assert!((0.0..=1.0).contains(&r.reward));
            assert_eq!(r.observations[0].len(), OBS_FIELDS);
        }
    }

    #[test]
    fn topology_file_validation() {
        let ok = r#"{"aps": [{"id": 1, "x": 0, "y": 0}, {"id": 2, "x": 1, "y": 0}], "cutoff_radius": 1.5, "channels": 12}"#;
        assert_eq!(WifiTopology::from_json(ok, "w.json").unwrap().aps.len(), 2);
        let dup = "{\"aps\": [{\"id\": 1, \"x\": 0, \"y\": 0},\n {\"id\": 1, \"x\": 1, \"y\": 0}], \"cutoff_radius\": 1.5, \"channels\": 12}";
        let EnvError::Schema(e) = WifiTopology::from_json(dup, "w.json").unwrap_err() else { panic!() };
        assert_eq!(e.line, 2);
    }
}
