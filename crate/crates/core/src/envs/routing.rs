//! Flow-level packet routing.
//!
//! Routers are the agents. Each router sources one or more commodities and
//! splits every commodity's demand over that commodity's candidate paths.
//! Link load is the sum of the flows crossing it and the shared reward is
//! `1 - MLU`, the maximum link utilization over the whole network.
//!
//! Router observation layout, in order:
//!
//! 1. demand of each own commodity, divided by its mean demand
//! 2. utilization history of each direct link, 10 steps, oldest first
//! 3. mean utilization of each direct link over the last control cycle
//! 4. the router's previous action (all its split fractions)
//!
//! Direct links are those with the router at either end, in link-id order.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{read_file, ActionSpace, EnvError, JointAction, MultiAgentEnv, StepResult};
use crate::graph::AgentGraph;
use crate::json::SpannedDoc;

pub const HISTORY_LEN: usize = 10;
pub const CONTROL_CYCLE: usize = 10;
const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub from: usize,
    pub to: usize,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Commodity {
    pub src: usize,
    pub dst: usize,
    /// Candidate paths as link-id sequences.
    pub paths: Vec<Vec<usize>>,
    /// Mean demand; falls back to the experiment's demand config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand: Option<f64>,
}

/// Routers are nodes `0..routers`, hosts (not agents) follow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingTopology {
    pub routers: usize,
    #[serde(default)]
    pub hosts: usize,
    pub links: Vec<Link>,
    pub commodities: Vec<Commodity>,
    /// Hand-written router adjacency; checked against the links when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_graph: Option<Vec<(usize, usize)>>,
}

impl RoutingTopology {
    pub fn from_file(path: &Path) -> Result<Self, EnvError> {
        let text = read_file(path)?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, EnvError> {
        let (topo, doc): (RoutingTopology, _) = SpannedDoc::parse(text, origin)?;
        if let Some((pointer, msg)) = topo.validate() {
            return Err(doc.error_at(&pointer, msg).into());
        }
        Ok(topo)
    }

    /// First violated rule as `(json pointer, message)`.
    pub fn validate(&self) -> Option<(String, String)> {
        let nodes = self.routers + self.hosts;
        if self.routers == 0 {
            return Some(("/routers".into(), "at least one router is required".into()));
        }
        for (k, l) in self.links.iter().enumerate() {
            if !(l.capacity > 0.0 && l.capacity.is_finite()) {
                return Some((format!("/links/{k}/capacity"), format!("capacity must be positive, got {}", l.capacity)));
            }
            if l.from >= nodes {
                return Some((format!("/links/{k}/from"), format!("node {} does not exist ({nodes} nodes)", l.from)));
            }
            if l.to >= nodes {
                return Some((format!("/links/{k}/to"), format!("node {} does not exist ({nodes} nodes)", l.to)));
            }
            if l.from == l.to {
                return Some((format!("/links/{k}"), "link from a node to itself".into()));
            }
        }
        for (c, com) in self.commodities.iter().enumerate() {
            if com.src >= self.routers {
                return Some((format!("/commodities/{c}/src"), format!("source {} is not a router", com.src)));
            }
            if com.dst >= nodes || com.dst == com.src {
                return Some((format!("/commodities/{c}/dst"), format!("invalid destination {}", com.dst)));
            }
            if let Some(d) = com.demand {
                if !(d >= 0.0 && d.is_finite()) {
                    return Some((format!("/commodities/{c}/demand"), "demand must be finite and nonnegative".into()));
                }
            }
            if com.paths.is_empty() {
                return Some((format!("/commodities/{c}/paths"), "at least one path is required".into()));
            }
            for (p, path) in com.paths.iter().enumerate() {
                if let Some(msg) = self.check_path(com, path) {
                    return Some((format!("/commodities/{c}/paths/{p}"), msg));
                }
            }
        }
        for r in 0..self.routers {
            if !self.commodities.iter().any(|c| c.src == r) {
                return Some(("/commodities".into(), format!("router {r} sources no commodity")));
            }
        }
        if let Some(edges) = &self.agent_graph {
            let derived = self.derive_graph_unchecked();
            match AgentGraph::from_edges(self.routers, edges) {
                Err(e) => return Some(("/agent_graph".into(), e.to_string())),
                Ok(g) if g != derived => {
                    return Some((
                        "/agent_graph".into(),
                        format!("declared adjacency {:?} differs from the links, which give {:?}", g.edges(), derived.edges()),
                    ))
                }
                Ok(_) => {}
            }
        }
        None
    }

    fn check_path(&self, com: &Commodity, path: &[usize]) -> Option<String> {
        if path.is_empty() {
            return Some("empty path".into());
        }
        let mut at = com.src;
        for &l in path {
            let Some(link) = self.links.get(l) else {
                return Some(format!("unknown link id {l}"));
            };
            if link.from != at {
                return Some(format!("link {l} starts at node {} but the path is at node {at}", link.from));
            }
            at = link.to;
        }
        (at != com.dst).then(|| format!("path ends at node {at}, not at destination {}", com.dst))
    }

    fn derive_graph_unchecked(&self) -> AgentGraph {
        let mut g = AgentGraph::empty(self.routers).expect("at least one router");
        for l in &self.links {
            if l.from < self.routers && l.to < self.routers {
                g.add_edge(l.from, l.to).expect("validated endpoints");
            }
        }
        g
    }

    /// Routers are adjacent iff a link joins them directly.
    pub fn derive_neighborhoods(&self) -> AgentGraph {
        self.derive_graph_unchecked()
    }

    /// Commodities sourced at `router`, in topology order.
    pub fn commodities_of(&self, router: usize) -> Vec<usize> {
        (0..self.commodities.len())
            .filter(|&c| self.commodities[c].src == router)
            .collect()
    }

    /// Links with `router` at either end, ascending.
    pub fn direct_links(&self, router: usize) -> Vec<usize> {
        (0..self.links.len())
            .filter(|&l| self.links[l].from == router || self.links[l].to == router)
            .collect()
    }
}

/// Bursty demand process. Each step a commodity with mean `m` requests
/// `m (1 + jitter U(-1, 1)) + K m (burst_factor - 1)` with `K ~ Poisson(burst_rate)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemandConfig {
    pub mean: f64,
    pub jitter: f64,
    pub burst_rate: f64,
    pub burst_factor: f64,
}

impl Default for DemandConfig {
    fn default() -> Self {
        DemandConfig {
            mean: 5.0,
            jitter: 0.2,
            burst_rate: 0.05,
            burst_factor: 2.0,
        }
    }
}

impl DemandConfig {
    pub fn constant(mean: f64) -> Self {
        DemandConfig {
            mean,
            jitter: 0.0,
            burst_rate: 0.0,
            burst_factor: 1.0,
        }
    }

    fn sample(&self, mean: f64, rng: &mut ChaCha8Rng) -> f64 {
        let mut d = mean;
        if self.jitter > 0.0 {
            d *= 1.0 + self.jitter * rng.random_range(-1.0..=1.0);
        }
        if self.burst_rate > 0.0 {
            let k: f64 = Poisson::new(self.burst_rate).expect("positive rate").sample(rng);
            d += k * mean * (self.burst_factor - 1.0);
        }
        d.max(0.0)
    }
}

/// Maximum of `load / capacity` over links.
pub fn mlu(loads: &[f64], capacities: &[f64]) -> Result<f64, EnvError> {
    if loads.len() != capacities.len() {
        return Err(EnvError::LengthMismatch(loads.len(), capacities.len()));
    }
    let mut worst = 0.0f64;
    for (l, (&load, &cap)) in loads.iter().zip(capacities).enumerate() {
        if !(cap > 0.0) {
            return Err(EnvError::NonPositiveCapacity { link: l, capacity: cap });
        }
        worst = worst.max(load / cap);
    }
    Ok(worst)
}

pub struct RoutingEnv {
    topo: RoutingTopology,
    demand_cfg: DemandConfig,
    graph: AgentGraph,
    horizon: usize,
    rng: ChaCha8Rng,
    capacities: Vec<f64>,
    own_commodities: Vec<Vec<usize>>,
    own_links: Vec<Vec<usize>>,
    segments: Vec<Vec<usize>>,
    // dynamic state
    t: usize,
    demands: Vec<f64>,
    history: Vec<[f64; HISTORY_LEN]>,
    cycle_sum: Vec<f64>,
    cycle_avg: Vec<f64>,
    last_actions: Vec<Vec<f64>>,
    last_loads: Vec<f64>,
    last_path_flows: Vec<Vec<f64>>,
    extra_load: Vec<f64>,
}

impl RoutingEnv {
    pub fn new(topo: RoutingTopology, demand_cfg: DemandConfig, horizon: usize, rng: ChaCha8Rng) -> Result<Self, EnvError> {
        if let Some((pointer, msg)) = topo.validate() {
            return Err(crate::json::AddressedError {
                origin: "topology".into(),
                line: 0,
                column: 0,
                message: format!("{pointer}: {msg}"),
            }
            .into());
        }
        let graph = topo.derive_neighborhoods();
        let own_commodities: Vec<_> = (0..topo.routers).map(|r| topo.commodities_of(r)).collect();
        let own_links = (0..topo.routers).map(|r| topo.direct_links(r)).collect();
        let segments: Vec<Vec<usize>> = own_commodities
            .iter()
            .map(|cs| cs.iter().map(|&c| topo.commodities[c].paths.len()).collect())
            .collect();
        let n_links = topo.links.len();
        let mut env = RoutingEnv {
            capacities: topo.links.iter().map(|l| l.capacity).collect(),
            demands: vec![0.0; topo.commodities.len()],
            last_path_flows: topo.commodities.iter().map(|c| vec![0.0; c.paths.len()]).collect(),
            last_actions: segments.iter().map(|s| uniform_split(s)).collect(),
            topo,
            demand_cfg,
            graph,
            horizon: horizon.max(1),
            rng,
            own_commodities,
            own_links,
            segments,
            t: 0,
            history: vec![[0.0; HISTORY_LEN]; n_links],
            cycle_sum: vec![0.0; n_links],
            cycle_avg: vec![0.0; n_links],
            last_loads: vec![0.0; n_links],
            extra_load: vec![0.0; n_links],
        };
        env.draw_demands();
        Ok(env)
    }

    pub fn topology(&self) -> &RoutingTopology {
        &self.topo
    }

    fn mean_demand(&self, c: usize) -> f64 {
        self.topo.commodities[c].demand.unwrap_or(self.demand_cfg.mean)
    }

    fn draw_demands(&mut self) {
        for c in 0..self.demands.len() {
            let m = self.mean_demand(c);
            self.demands[c] = self.demand_cfg.sample(m, &mut self.rng);
        }
    }

    /// Demands that the next step will route.
    pub fn current_demands(&self) -> &[f64] {
        &self.demands
    }

    pub fn last_link_loads(&self) -> &[f64] {
        &self.last_loads
    }

    /// Per commodity, per path flow of the last step.
    pub fn last_path_flows(&self) -> &[Vec<f64>] {
        &self.last_path_flows
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    /// Adds `delta` to a link's load on the next step only (test hook).
    pub fn perturb_link_load(&mut self, link: usize, delta: f64) {
        self.extra_load[link] += delta;
    }

    /// Split fractions per router as segments of its action vector.
    pub fn segments(&self, router: usize) -> &[usize] {
        &self.segments[router]
    }

    pub fn observe(&self, router: usize) -> Vec<f64> {
        let mut obs = Vec::with_capacity(self.observation_dim(router));
        for &c in &self.own_commodities[router] {
            let m = self.mean_demand(c);
            obs.push(if m > 0.0 { self.demands[c] / m } else { 0.0 });
        }
        // ring stores newest at index (t - 1) % LEN
        for &l in &self.own_links[router] {
            for k in 0..HISTORY_LEN {
                obs.push(self.history[l][(self.t + k) % HISTORY_LEN]);
            }
        }
        for &l in &self.own_links[router] {
            obs.push(self.cycle_avg[l]);
        }
        obs.extend_from_slice(&self.last_actions[router]);
        obs
    }

    fn observe_all(&self) -> Vec<Vec<f64>> {
        (0..self.topo.routers).map(|r| self.observe(r)).collect()
    }

    fn check_action(&self, router: usize, a: &[f64]) -> Result<(), EnvError> {
        let expected = self.segments[router].iter().sum();
        if a.len() != expected {
            return Err(EnvError::ActionLength {
                agent: router,
                expected,
                actual: a.len(),
            });
        }
        let mut start = 0;
        for (s, &len) in self.segments[router].iter().enumerate() {
            let seg = &a[start..start + len];
            if let Some(v) = seg.iter().find(|v| !v.is_finite() || **v < -SIMPLEX_TOL) {
                return Err(EnvError::InvalidSimplex {
                    agent: router,
                    segment: s,
                    detail: format!("component {v}"),
                });
            }
            let sum: f64 = seg.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(EnvError::InvalidSimplex {
                    agent: router,
                    segment: s,
                    detail: format!("sum {sum}"),
                });
            }
            start += len;
        }
        Ok(())
    }

    /// Routes the current demands with the given splits and returns
    /// `(link loads, mlu)` without advancing anything.
    pub fn route(&self, splits: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>, f64), EnvError> {
        if splits.len() != self.topo.routers {
            return Err(EnvError::AgentCount {
                expected: self.topo.routers,
                actual: splits.len(),
            });
        }
        let mut loads = self.extra_load.clone();
        let mut flows: Vec<Vec<f64>> = self.topo.commodities.iter().map(|c| vec![0.0; c.paths.len()]).collect();
        for (r, a) in splits.iter().enumerate() {
            self.check_action(r, a)?;
            let mut k = 0;
            for &c in &self.own_commodities[r] {
                for (p, path) in self.topo.commodities[c].paths.iter().enumerate() {
                    let f = self.demands[c] * a[k].max(0.0);
                    flows[c][p] = f;
                    for &l in path {
                        loads[l] += f;
                    }
                    k += 1;
                }
            }
        }
        let m = mlu(&loads, &self.capacities)?;
        Ok((loads, flows, m))
    }
}

fn uniform_split(segments: &[usize]) -> Vec<f64> {
    segments
        .iter()
        .flat_map(|&n| std::iter::repeat_n(1.0 / n as f64, n))
        .collect()
}

impl MultiAgentEnv for RoutingEnv {
    fn n_agents(&self) -> usize {
        self.topo.routers
    }

    fn graph(&self) -> &AgentGraph {
        &self.graph
    }

    fn observation_dim(&self, router: usize) -> usize {
        let links = self.own_links[router].len();
        self.own_commodities[router].len() + HISTORY_LEN * links + links + self.segments[router].iter().sum::<usize>()
    }

    fn action_space(&self, router: usize) -> ActionSpace {
        ActionSpace::Simplex(self.segments[router].clone())
    }

    fn reset(&mut self) -> Vec<Vec<f64>> {
        self.t = 0;
        for h in &mut self.history {
            *h = [0.0; HISTORY_LEN];
        }
        self.cycle_sum.iter_mut().for_each(|v| *v = 0.0);
        self.cycle_avg.iter_mut().for_each(|v| *v = 0.0);
        self.last_loads.iter_mut().for_each(|v| *v = 0.0);
        self.extra_load.iter_mut().for_each(|v| *v = 0.0);
        self.last_actions = self.segments.iter().map(|s| uniform_split(s)).collect();
        self.draw_demands();
        self.observe_all()
    }

    fn step(&mut self, action: &JointAction) -> Result<StepResult, EnvError> {
        if self.t >= self.horizon {
            return Err(EnvError::EpisodeFinished);
        }
        let JointAction::Continuous(splits) = action else {
            return Err(EnvError::WrongActionKind { expected: "continuous" });
        };
        let (loads, flows, m) = self.route(splits)?;
        for (l, &load) in loads.iter().enumerate() {
            let u = load / self.capacities[l];
            self.history[l][self.t % HISTORY_LEN] = u;
            self.cycle_sum[l] += u;
        }
        self.t += 1;
        if self.t % CONTROL_CYCLE == 0 {
            for l in 0..loads.len() {
                self.cycle_avg[l] = self.cycle_sum[l] / CONTROL_CYCLE as f64;
                self.cycle_sum[l] = 0.0;
            }
        }
        self.last_loads = loads;
        self.last_path_flows = flows;
        self.last_actions = splits.clone();
        self.extra_load.iter_mut().for_each(|v| *v = 0.0);
        self.draw_demands();
        Ok(StepResult {
            observations: self.observe_all(),
            reward: 1.0 - m,
            terminal: self.t >= self.horizon,
        })
    }

    fn horizon(&self) -> usize {
        self.horizon
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn two_path(cap: (f64, f64), demand: f64) -> RoutingTopology {
        // router 0 -> host 1 directly, or via host 2
        RoutingTopology {
            routers: 1,
            hosts: 2,
            links: vec![
                Link { from: 0, to: 1, capacity: cap.0 },
                Link { from: 0, to: 2, capacity: cap.1 },
                Link { from: 2, to: 1, capacity: 1e9 },
            ],
            commodities: vec![Commodity {
                src: 0,
                dst: 1,
                paths: vec![vec![0], vec![1, 2]],
                demand: Some(demand),
            }],
            agent_graph: None,
        }
    }

    fn env(topo: RoutingTopology) -> RoutingEnv {
        RoutingEnv::new(topo, DemandConfig::constant(1.0), 100, stream(3, Stream::EnvDemand)).unwrap()
    }

    fn act(v: &[f64]) -> JointAction {
        JointAction::Continuous(vec![v.to_vec()])
    }

    #[test]
    fn zero_demand_gives_full_reward() {
        let mut e = env(two_path((10.0, 10.0), 0.0));
        e.reset();
        assert_eq!(e.step(&act(&[0.5, 0.5])).unwrap().reward, 1.0);
    }

    #[test]
    fn saturated_bottleneck_gives_zero_reward() {
        let mut e = env(two_path((10.0, 10.0), 10.0));
        e.reset();
        assert_eq!(e.step(&act(&[1.0, 0.0])).unwrap().reward, 0.0);
    }

    #[test]
    fn balanced_split_hand_accounting() {
        let mut e = env(two_path((10.0, 10.0), 10.0));
        e.reset();
        let r = e.step(&act(&[0.5, 0.5])).unwrap();
        assert!((r.reward - 0.5).abs() < 1e-15);
        assert_eq!(&e.last_link_loads()[..2], &[5.0, 5.0]);
    }

    #[test]
    fn mlu_examples() {
        assert_eq!(mlu(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(mlu(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert!(mlu(&[1.0], &[0.0]).is_err());
        assert!(mlu(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn invalid_simplex_is_rejected() {
        let mut e = env(two_path((10.0, 10.0), 10.0));
        e.reset();
        assert!(matches!(e.step(&act(&[0.7, 0.7])), Err(EnvError::InvalidSimplex { .. })));
        assert!(matches!(e.step(&act(&[1.2, -0.2])), Err(EnvError::InvalidSimplex { .. })));
        assert!(matches!(e.step(&act(&[1.0])), Err(EnvError::ActionLength { .. })));
    }

    #[test]
    fn fresh_observation_contract() {
        let mut e = env(two_path((10.0, 10.0), 10.0));
        let obs = e.reset();
        // 1 commodity, 2 direct links, 2 path fractions
        assert_eq!(obs[0].len(), 1 + 10 * 2 + 2 + 2);
        assert_eq!(e.observation_dim(0), obs[0].len());
        assert_eq!(obs[0][0], 1.0);
        assert!(obs[0][1..23].iter().all(|&v| v == 0.0));
        assert_eq!(&obs[0][23..], &[0.5, 0.5]);
    }

    #[test]
    fn history_is_ordered_oldest_first() {
        let mut e = env(two_path((10.0, 10.0), 10.0));
        e.reset();
        e.step(&act(&[1.0, 0.0])).unwrap();
        let o = e.step(&act(&[0.5, 0.5])).unwrap().observations;
        // link 0 history: ..., 1.0, 0.5
        assert_eq!(&o[0][9..11], &[1.0, 0.5]);
        for _ in 0..8 {
            e.step(&act(&[0.5, 0.5])).unwrap();
        }
        let o = e.observe(0);
        // the control cycle closed after 10 steps
        assert!((o[21] - 0.55).abs() < 1e-12);
    }

    #[test]
    fn horizon_terminates() {
        let mut e = RoutingEnv::new(two_path((10.0, 10.0), 1.0), DemandConfig::constant(1.0), 2, stream(1, Stream::EnvDemand)).unwrap();
        e.reset();
        assert!(!e.step(&act(&[0.5, 0.5])).unwrap().terminal);
        assert!(e.step(&act(&[0.5, 0.5])).unwrap().terminal);
        assert!(matches!(e.step(&act(&[0.5, 0.5])), Err(EnvError::EpisodeFinished)));
    }

    #[test]
    fn line_topology_neighbors() {
        let text = r#"{"routers": 3, "hosts": 1,
          "links": [{"from": 0, "to": 1, "capacity": 5}, {"from": 1, "to": 2, "capacity": 5},
                    {"from": 0, "to": 3, "capacity": 5}, {"from": 1, "to": 3, "capacity": 5},
                    {"from": 2, "to": 3, "capacity": 5}],
          "commodities": [{"src": 0, "dst": 3, "paths": [[2]]}, {"src": 1, "dst": 3, "paths": [[3]]},
                          {"src": 2, "dst": 3, "paths": [[4]]}]}"#;
        let t = RoutingTopology::from_json(text, "line.json").unwrap();
        assert_eq!(t.derive_neighborhoods().neighbors(1).unwrap(), vec![0, 2]);
    }

    #[test]
    fn schema_errors_carry_lines() {
        let text = "{\"routers\": 1, \"hosts\": 1,\n \"links\": [{\"from\": 0, \"to\": 1,\n \"capacity\": 0}],\n \"commodities\": [{\"src\": 0, \"dst\": 1, \"paths\": [[0]]}]}";
        let err = RoutingTopology::from_json(text, "bad.json").unwrap_err();
        let EnvError::Schema(e) = err else { panic!() };
        assert_eq!(e.line, 3);
        assert!(e.message.contains("capacity"));

        let broken_path = r#"{"routers": 1, "hosts": 2, "links": [{"from": 0, "to": 1, "capacity": 1},
            {"from": 2, "to": 1, "capacity": 1}], "commodities": [{"src": 0, "dst": 1, "paths": [[1]]}]}"#;
        assert!(RoutingTopology::from_json(broken_path, "p.json").is_err());

        let typo = r#"{"routers": 1, "link": []}"#;
        assert!(RoutingTopology::from_json(typo, "t.json").is_err());
    }

    #[test]
    fn demands_replay_from_seed() {
        let topo = two_path((10.0, 10.0), 4.0);
        let cfg = DemandConfig::default();
        let run = |seed| {
            let mut e = RoutingEnv::new(topo.clone(), cfg.clone(), 50, stream(seed, Stream::EnvDemand)).unwrap();
            e.reset();
            (0..50)
                .map(|_| {
                    let d = e.current_demands()[0];
                    e.step(&act(&[0.5, 0.5])).unwrap();
                    d
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }
}
