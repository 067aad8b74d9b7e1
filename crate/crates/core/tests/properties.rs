use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ncc::autodiff::{ParamStore, Tape, Tensor, Var};
use ncc::checkpoint::{self, CheckpointMeta};
use ncc::cognition::{self, GaussianLatent};
use ncc::envs::routing::{DemandConfig, RoutingEnv, RoutingTopology};
use ncc::envs::wifi::{WifiEnv, WifiModel, WifiTopology, MAX_POWER, MIN_POWER};
use ncc::graph::{AgentGraph, GcnLayer};
use ncc::nccq::{decomposed_max, ReplayBuffer, Transition};
use ncc::nn::Activation;
use ncc::schedule::LinearDecay;

fn graph_strategy(max_n: usize) -> impl Strategy<Value = AgentGraph> {
    (1..=max_n).prop_flat_map(|n| {
        proptest::collection::vec(any::<bool>(), n * n).prop_map(move |bits| {
            let mut g = AgentGraph::empty(n).unwrap();
            for a in 0..n {
                for b in a + 1..n {
                    if bits[a * n + b] {
                        g.add_edge(a, b).unwrap();
                    }
                }
            }
            g
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weighted_sum_ignores_term_order(
        vals in proptest::collection::vec((-1e3f64..1e3, -10f64..10.0), 1..12),
        rot in 0usize..12,
    ) {
        let tape = Tape::new();
        let terms: Vec<(Var, f64)> = vals.iter().map(|&(v, c)| (tape.scalar(v), c)).collect();
        let mut rotated = terms.clone();
        rotated.rotate_left(rot % terms.len());
        rotated.reverse();
        let a = Var::weighted_sum(&terms).unwrap().item();
        let b = Var::weighted_sum(&rotated).unwrap().item();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn softmax_segments_are_distributions(
        segs in proptest::collection::vec(1usize..5, 1..4),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = segs.iter().sum();
        let data: Vec<f64> = (0..2 * n).map(|_| rand::Rng::random_range(&mut rng, -30.0..30.0)).collect();
        let tape = Tape::new();
        let out = tape.constant(Tensor::matrix(2, n, data).unwrap()).softmax_segments(&segs).unwrap().to_vec();
        for row in out.chunks(n) {
            let mut start = 0;
            for &len in &segs {
                let s: f64 = row[start..start + len].iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                prop_assert!(row[start..start + len].iter().all(|&p| p >= 0.0));
                start += len;
            }
        }
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_itself(
        mp in proptest::collection::vec(-3f64..3.0, 1..6),
        seed in any::<u64>(),
    ) {
        let d = mp.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |lo: f64, hi: f64| -> Vec<f64> { (0..d).map(|_| rand::Rng::random_range(&mut rng, lo..hi)).collect() };
        let (lp, mq, lq) = (draw(-2.0, 2.0), draw(-3.0, 3.0), draw(-2.0, 2.0));
        let tape = Tape::new();
        let lat = |m: &[f64], l: &[f64]| GaussianLatent::new(
            tape.constant(Tensor::vector(m.to_vec()).unwrap()),
            tape.constant(Tensor::vector(l.to_vec()).unwrap()),
        ).unwrap();
        let (p, q) = (lat(&mp, &lp), lat(&mq, &lq));
        prop_assert!(cognition::kl_diag_gaussians(&p, &q).unwrap().item() >= -1e-12);
        prop_assert_eq!(cognition::kl_diag_gaussians(&p, &p).unwrap().item(), 0.0);
    }

    #[test]
    fn gcn_is_permutation_equivariant(g in graph_strategy(7), seed in any::<u64>()) {
        let n = g.n_agents();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let layer = GcnLayer::new(&mut store, "g", 3, 2, Activation::Relu, &mut rng);
        let h: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect()).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.reverse();
        perm.rotate_left(seed as usize % n);
        let run = |g: &AgentGraph, h: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let tape = Tape::new();
            let p = tape.bind_frozen(&store);
            let x: Vec<Var> = h.iter().map(|r| tape.constant(Tensor::matrix(1, 3, r.clone()).unwrap())).collect();
            layer.forward(&p, g, &x).unwrap().iter().map(Var::to_vec).collect()
        };
        let out = run(&g, &h);
        let mut hp = vec![Vec::new(); n];
        for i in 0..n {
            hp[perm[i]] = h[i].clone();
        }
        let outp = run(&g.permuted(&perm).unwrap(), &hp);
        for i in 0..n {
            prop_assert_eq!(&outp[perm[i]], &out[i]);
        }
    }

    #[test]
    fn graphs_are_symmetric_and_loop_free(g in graph_strategy(8)) {
        for i in 0..g.n_agents() {
            prop_assert!(!g.is_adjacent(i, i));
            for j in g.neighbors(i).unwrap() {
                prop_assert!(g.is_adjacent(j, i));
            }
        }
        let rebuilt = AgentGraph::from_edges(g.n_agents(), &g.edges()).unwrap();
        prop_assert_eq!(rebuilt, g);
    }

    #[test]
    fn decomposed_max_bounds_every_joint_action(
        q in proptest::collection::vec(proptest::collection::vec(-5f64..5.0, 1..5), 1..4),
        pick in proptest::collection::vec(any::<usize>(), 4),
    ) {
        let rows: Vec<&[f64]> = q.iter().map(Vec::as_slice).collect();
        let best = decomposed_max(&rows);
        let any_joint: f64 = q.iter().zip(&pick).fold(0.0, |acc, (r, &k)| acc + r[k % r.len()]);
        prop_assert!(best >= any_joint);
    }

    #[test]
    fn replay_never_exceeds_capacity(cap in 1usize..20, pushes in 0usize..60, batch in 1usize..8) {
        let mut buf = ReplayBuffer::new(cap);
        for k in 0..pushes {
            buf.push(Transition { obs: vec![vec![k as f64]], actions: vec![0usize], reward: k as f64, next_obs: vec![vec![0.0]], terminal: false });
        }
        prop_assert_eq!(buf.len(), pushes.min(cap));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        match buf.sample(batch, &mut rng) {
            None => prop_assert!(buf.len() < batch),
            Some(s) => {
                prop_assert_eq!(s.len(), batch);
                // only the newest `cap` transitions survive
                prop_assert!(s.iter().all(|t| t.reward as usize + cap >= pushes));
            }
        }
    }

    #[test]
    fn checkpoints_round_trip(shapes in proptest::collection::vec((1usize..4, 1usize..4), 1..5), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut src = ParamStore::new();
        let mut dst = ParamStore::new();
        for (k, &(r, c)) in shapes.iter().enumerate() {
            let data: Vec<f64> = (0..r * c).map(|_| rand::Rng::random::<f64>(&mut rng) - 0.5).collect();
            src.add(format!("t{k}"), Tensor::matrix(r, c, data).unwrap());
            dst.add(format!("t{k}"), Tensor::zeros(vec![r, c]).unwrap());
        }
        let meta = CheckpointMeta { module: "nccq".into(), algorithm: "VDN".into(), seed, steps: 3 };
        let mut buf = Vec::new();
        checkpoint::write(&mut buf, &meta, &[("online", &src)]).unwrap();
        let got = checkpoint::read_into(&mut buf.as_slice(), "nccq", "VDN", &mut [("online", &mut dst)]).unwrap();
        prop_assert_eq!(got, meta);
        prop_assert_eq!(src.flat_values(), dst.flat_values());
    }

    #[test]
    fn linear_decay_stays_between_its_endpoints(start in 0f64..1.0, end in 0f64..1.0, fraction in 0f64..1.0, step in 0u64..2000, total in 0u64..1000) {
        let v = LinearDecay { start, end, fraction }.value(step, total);
        prop_assert!(v >= start.min(end) - 1e-12 && v <= start.max(end) + 1e-12);
    }

    #[test]
    fn wifi_reward_is_normalized(powers in proptest::collection::vec(MIN_POWER..=MAX_POWER, 3)) {
        let env = WifiEnv::new(WifiTopology::line(3, 1.0, 1.5), WifiModel::default(), 5, ChaCha8Rng::seed_from_u64(0)).unwrap();
        let r = env.reward_for(&powers).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert!(r <= env.optimum().1);
    }

    #[test]
    fn routing_conserves_flow(x0 in 0f64..1.0, x1 in 0f64..1.0, seed in any::<u64>()) {
        let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/topologies/routing_toy.json")).unwrap();
        let topo = RoutingTopology::from_json(&text, "toy").unwrap();
        let demand = DemandConfig { mean: 10.0, jitter: 0.5, burst_rate: 0.3, burst_factor: 2.0 };
        let env = RoutingEnv::new(topo, demand, 3, ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let splits = vec![vec![1.0 - x0, x0], vec![1.0 - x1, x1]];
        let (loads, flows, mlu) = env.route(&splits).unwrap();
        let d = env.current_demands();
        for c in 0..2 {
            prop_assert!((flows[c].iter().sum::<f64>() - d[c]).abs() < 1e-9 * (1.0 + d[c]));
        }
        // the shared link carries exactly both detours
        prop_assert!((loads[3] - (loads[1] + loads[2])).abs() < 1e-9 * (1.0 + loads[3]));
        prop_assert!(mlu >= 0.0);
    }
}
