//! Seeded training loops, metric files and evaluation.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::{self, CheckpointMeta};
use crate::envs::bandit::BanditEnv;
use crate::envs::routing::{RoutingEnv, RoutingTopology};
use crate::envs::wifi::{WifiEnv, WifiTopology};
use crate::envs::{JointAction, MultiAgentEnv};
use crate::harness::config::{EnvSpec, LoadedConfig};
use crate::harness::learner::Learner;
use crate::rng::{stream, Stream};

/// Overrides the output directory of `train`.
pub const OUT_DIR_ENV: &str = "NCC_OUT_DIR";

/// Fixed leading columns of the per-seed metrics CSV; `cognition_<i>`
/// columns follow, one per agent.
pub const METRIC_COLUMNS: [&str; 6] = [
    "episode",
    "mean_reward",
    "td_loss",
    "cd_loss",
    "mean_neighbor_kl",
    "eval_reward",
];

/// Columns of the aggregate CSV.
pub const AGGREGATE_COLUMNS: [&str; 12] = [
    "episode",
    "seeds",
    "mean_reward_mean",
    "mean_reward_std",
    "td_loss_mean",
    "td_loss_std",
    "cd_loss_mean",
    "cd_loss_std",
    "mean_neighbor_kl_mean",
    "mean_neighbor_kl_std",
    "eval_reward_mean",
    "eval_reward_std",
];

/// One row per episode per seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub episode: usize,
    pub mean_reward: f64,
    /// Means over the training steps of the episode; absent when none ran.
    pub td_loss: Option<f64>,
    pub cd_loss: Option<f64>,
    pub mean_neighbor_kl: Option<f64>,
    pub eval_reward: Option<f64>,
    pub cognition: Option<Vec<f64>>,
    /// Kept out of the metrics CSV so reruns stay byte-identical.
    #[serde(skip)]
    pub wall_clock: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub mean: f64,
    pub std: f64,
    pub episode_rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedFailure {
    pub step: Option<u64>,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
    pub train_steps: u64,
    pub final_eval: Option<EvalSummary>,
    pub failure: Option<SeedFailure>,
    pub checkpoint: Option<PathBuf>,
}

impl SeedRun {
    /// Mean episode reward over the last `window` episodes.
    pub fn final_mean_reward(&self, window: usize) -> Option<f64> {
        let k = self.records.len().min(window);
        (k > 0).then(|| self.records[self.records.len() - k..].iter().map(|r| r.mean_reward).sum::<f64>() / k as f64)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub name: String,
    pub algorithm: String,
    pub episodes: usize,
    pub seeds: Vec<SeedRun>,
}

impl RunReport {
    pub fn failed(&self) -> impl Iterator<Item = &SeedRun> {
        self.seeds.iter().filter(|s| s.failure.is_some())
    }
}

/// Fresh environment for one seed with the given random stream.
pub fn build_env(loaded: &LoadedConfig, seed: u64, which: Stream) -> crate::Result<Box<dyn MultiAgentEnv>> {
    Ok(match &loaded.cfg.env {
        EnvSpec::Routing { .. } => Box::new(build_routing_env(loaded, seed, which)?),
        EnvSpec::Wifi { topology, model, horizon } => {
            let topo = WifiTopology::from_file(&loaded.resolve(topology))?;
            Box::new(WifiEnv::new(topo, model.clone(), *horizon, stream(seed, which))?)
        }
        EnvSpec::Bandit {
            agents,
            actions,
            target,
            horizon,
        } => Box::new(BanditEnv::new(*agents, *actions, *target, *horizon)?),
    })
}

pub fn build_routing_env(loaded: &LoadedConfig, seed: u64, which: Stream) -> crate::Result<RoutingEnv> {
    let EnvSpec::Routing {
        topology,
        demand,
        horizon,
    } = &loaded.cfg.env
    else {
        return Err(crate::Error::Incompatible("not a routing configuration".into()));
    };
    let topo = RoutingTopology::from_file(&loaded.resolve(topology))?;
    Ok(RoutingEnv::new(topo, demand.clone(), *horizon, stream(seed, which))?)
}

/// Output directory: explicit argument, then the environment variable, then
/// the config, then `runs/<name>`.
pub fn resolve_out_dir(loaded: &LoadedConfig, explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|p| !p.is_empty()) {
        return PathBuf::from(p);
    }
    if let Some(p) = &loaded.cfg.output_dir {
        return loaded.resolve(p);
    }
    let name = if loaded.cfg.name.is_empty() {
        "experiment"
    } else {
        &loaded.cfg.name
    };
    PathBuf::from("runs").join(name)
}

fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// Greedy rollouts with latent means in a fresh environment seeded from the
/// evaluation stream, so repeated calls see the same trace.
pub fn evaluate(learner: &Learner, loaded: &LoadedConfig, seed: u64, episodes: usize) -> crate::Result<EvalSummary> {
    let mut env = build_env(loaded, seed, Stream::Evaluation)?;
    let mut rewards = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset();
        let (mut total, mut steps) = (0.0, 0usize);
        loop {
            let s = env.step(&learner.greedy(&obs)?)?;
            total += s.reward;
            steps += 1;
            obs = s.observations;
            if s.terminal {
                break;
            }
        }
        rewards.push(total / steps as f64);
    }
    Ok(EvalSummary {
        mean: rewards.iter().sum::<f64>() / rewards.len().max(1) as f64,
        std: if rewards.is_empty() { 0.0 } else { population_std(&rewards) },
        episode_rewards: rewards,
    })
}

/// Rebuilds the learner from `config`, loads `checkpoint` and evaluates it.
pub fn evaluate_checkpoint(checkpoint_path: &Path, loaded: &LoadedConfig, episodes: usize) -> crate::Result<EvalSummary> {
    let meta = checkpoint::read_meta(checkpoint_path)?;
    let env = build_env(loaded, meta.seed, Stream::Evaluation)?;
    let mut learner = Learner::build(loaded, env.as_ref(), meta.seed)?;
    let algo = loaded.cfg.algorithm;
    learner.load(checkpoint_path, algo.module(), algo.name())?;
    evaluate(&learner, loaded, meta.seed, episodes)
}

/// Expected reward of a policy that sends each commodity entirely down one
/// of its paths, chosen uniformly and independently, averaged over the
/// seeded demand trace of `episodes` episodes. Every joint choice is
/// enumerated at every step.
pub fn random_policy_expectation(env: &mut RoutingEnv, episodes: usize) -> crate::Result<f64> {
    let n = env.n_agents();
    let segments: Vec<Vec<usize>> = (0..n).map(|i| env.segments(i).to_vec()).collect();
    let choices: Vec<usize> = segments.iter().flatten().copied().collect();
    let combos: usize = choices.iter().product();
    if combos > 1_000_000 {
        return Err(crate::Error::Incompatible(format!("{combos} joint path choices are too many to enumerate")));
    }
    let (mut total, mut count) = (0.0, 0usize);
    for _ in 0..episodes {
        env.reset();
        loop {
            let mut pick = vec![0usize; choices.len()];
            let mut expected = 0.0;
            for _ in 0..combos {
                let mut k = 0;
                let splits: Vec<Vec<f64>> = segments
                    .iter()
                    .map(|seg| {
                        let mut v = Vec::new();
                        for &len in seg {
                            v.extend((0..len).map(|p| if p == pick[k] { 1.0 } else { 0.0 }));
                            k += 1;
                        }
                        v
                    })
                    .collect();
                expected += 1.0 - env.route(&splits)?.2;
                for (d, &c) in pick.iter_mut().zip(&choices) {
                    *d += 1;
                    if *d < c {
                        break;
                    }
                    *d = 0;
                }
            }
            total += expected / combos as f64;
            count += 1;
            let uniform: Vec<Vec<f64>> = segments
                .iter()
                .map(|seg| seg.iter().flat_map(|&len| vec![1.0 / len as f64; len]).collect())
                .collect();
            if env.step(&JointAction::Continuous(uniform))?.terminal {
                break;
            }
        }
    }
    Ok(total / count.max(1) as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn metrics_header(n_agents: usize) -> Vec<String> {
    METRIC_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((0..n_agents).map(|i| format!("cognition_{i}")))
        .collect()
}

fn metrics_row(r: &MetricsRecord, n_agents: usize) -> Vec<String> {
    let mut row = vec![
        r.episode.to_string(),
        r.mean_reward.to_string(),
        fmt_opt(r.td_loss),
        fmt_opt(r.cd_loss),
        fmt_opt(r.mean_neighbor_kl),
        fmt_opt(r.eval_reward),
    ];
    for i in 0..n_agents {
        row.push(fmt_opt(r.cognition.as_ref().map(|c| c[i])));
    }
    row
}

struct Sinks {
    metrics: csv::Writer<File>,
    timing: csv::Writer<File>,
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Io(std::io::Error::other(e))
}

#[derive(Default)]
struct EpisodeAcc {
    n: usize,
    td: f64,
    cd: f64,
    cd_n: usize,
    kl: f64,
    kl_n: usize,
    cognition: Vec<f64>,
}

impl EpisodeAcc {
    fn add(&mut self, m: &crate::nccq::TrainMetrics) {
        self.n += 1;
        self.td += m.td;
        if let Some(c) = m.cd {
            self.cd += c;
            self.cd_n += 1;
        }
        if let Some(k) = m.neighbor_kl {
            self.kl += k;
            self.kl_n += 1;
        }
        if let Some(c) = &m.cognition {
            if self.cognition.is_empty() {
                self.cognition = vec![0.0; c.len()];
            }
            for (a, b) in self.cognition.iter_mut().zip(c) {
                *a += b;
            }
        }
    }

    fn mean(total: f64, n: usize) -> Option<f64> {
        (n > 0).then(|| total / n as f64)
    }
}

/// Trains one seed. With `out` set, rows are appended to
/// `metrics_seed<seed>.csv` as episodes finish and a checkpoint is written at
/// the end. A numeric failure stops the seed; whatever was recorded before it
/// stays on disk.
pub fn train_seed(loaded: &LoadedConfig, seed: u64, out: Option<&Path>) -> SeedRun {
    let mut run = SeedRun {
        seed,
        records: Vec::new(),
        train_steps: 0,
        final_eval: None,
        failure: None,
        checkpoint: None,
    };
    if let Err(e) = train_seed_inner(loaded, seed, out, &mut run) {
        let step = match e {
            crate::Error::NumericFailure { step } => Some(step),
            _ => None,
        };
        log::warn!("seed {seed} aborted: {e}");
        run.failure = Some(SeedFailure {
            step,
            message: e.to_string(),
        });
    }
    run
}

fn train_seed_inner(loaded: &LoadedConfig, seed: u64, out: Option<&Path>, run: &mut SeedRun) -> crate::Result<()> {
    let cfg = &loaded.cfg;
    let mut env = build_env(loaded, seed, Stream::EnvDemand)?;
    let n_agents = env.n_agents();
    let mut learner = Learner::build(loaded, env.as_ref(), seed)?;
    let mut sinks = match out {
        Some(dir) => {
            let mut metrics = csv::Writer::from_path(dir.join(format!("metrics_seed{seed}.csv"))).map_err(csv_err)?;
            metrics.write_record(metrics_header(n_agents)).map_err(csv_err)?;
            metrics.flush()?;
            let mut timing = csv::Writer::from_path(dir.join(format!("timing_seed{seed}.csv"))).map_err(csv_err)?;
            timing.write_record(["episode", "wall_clock_seconds"]).map_err(csv_err)?;
            timing.flush()?;
            Some(Sinks { metrics, timing })
        }
        None => None,
    };
    let schedule = loaded.exploration();
    let total_steps = (cfg.episodes * env.horizon()) as u64;
    let warmup = loaded.warmup() as u64;
    let started = Instant::now();
    let mut global_step = 0u64;
    for episode in 0..cfg.episodes {
        let mut obs = env.reset();
        let mut acc = EpisodeAcc::default();
        let (mut reward_sum, mut steps) = (0.0, 0usize);
        loop {
            let action = learner.explore(&obs, schedule.value(global_step, total_steps))?;
            let s = env.step(&action)?;
            reward_sum += s.reward;
            steps += 1;
            global_step += 1;
            learner.remember(obs, action, s.reward, s.observations.clone(), s.terminal);
            if global_step >= warmup && global_step % cfg.train_every as u64 == 0 {
                if let Some(m) = learner.train()? {
                    acc.add(&m);
                }
            }
            obs = s.observations;
            if s.terminal {
                break;
            }
        }
        let eval_reward = if cfg.eval_every > 0 && (episode + 1) % cfg.eval_every == 0 {
            Some(evaluate(&learner, loaded, seed, cfg.eval_episodes)?.mean)
        } else {
            None
        };
        let record = MetricsRecord {
            episode,
            mean_reward: reward_sum / steps as f64,
            td_loss: EpisodeAcc::mean(acc.td, acc.n),
            cd_loss: EpisodeAcc::mean(acc.cd, acc.cd_n),
            mean_neighbor_kl: EpisodeAcc::mean(acc.kl, acc.kl_n),
            eval_reward,
            cognition: (!acc.cognition.is_empty()).then(|| acc.cognition.iter().map(|c| c / acc.n as f64).collect()),
            wall_clock: started.elapsed().as_secs_f64(),
        };
        if let Some(s) = sinks.as_mut() {
            s.metrics.write_record(metrics_row(&record, n_agents)).map_err(csv_err)?;
            s.metrics.flush()?;
            s.timing
                .write_record([episode.to_string(), record.wall_clock.to_string()])
                .map_err(csv_err)?;
            s.timing.flush()?;
        }
        run.records.push(record);
        run.train_steps = learner.steps();
    }
    if cfg.episodes > 0 {
        run.final_eval = Some(evaluate(&learner, loaded, seed, cfg.eval_episodes.max(1))?);
        if let Some(dir) = out {
            let path = dir.join(format!("checkpoint_seed{seed}.ckpt"));
            let meta = CheckpointMeta {
                module: cfg.algorithm.module().into(),
                algorithm: cfg.algorithm.name().into(),
                seed,
                steps: learner.steps(),
            };
            learner.save(&path, &meta)?;
            run.checkpoint = Some(path);
        }
    }
    Ok(())
}

/// Trains every configured seed in parallel and writes per-seed metrics,
/// checkpoints, the cross-seed aggregate and `summary.json` to `out`.
pub fn run_experiment(loaded: &LoadedConfig, out: &Path) -> crate::Result<RunReport> {
    std::fs::create_dir_all(out)?;
    let seeds: Vec<SeedRun> = loaded
        .cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            log::info!("seed {seed}: training {} for {} episodes", loaded.cfg.algorithm, loaded.cfg.episodes);
            train_seed(loaded, seed, Some(out))
        })
        .collect();
    let report = RunReport {
        name: loaded.cfg.name.clone(),
        algorithm: loaded.cfg.algorithm.name().into(),
        episodes: loaded.cfg.episodes,
        seeds,
    };
    write_aggregate(&report, &out.join("aggregate.csv"))?;
    let mut f = File::create(out.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut f, &summary_json(&report)).map_err(std::io::Error::other)?;
    f.write_all(b"\n")?;
    Ok(report)
}

fn summary_json(report: &RunReport) -> serde_json::Value {
    let seeds: Vec<_> = report
        .seeds
        .iter()
        .map(|s| {
            serde_json::json!({
                "seed": s.seed,
                "status": if s.failure.is_some() { "failed" } else { "ok" },
                "episodes_completed": s.records.len(),
                "train_steps": s.train_steps,
                "final_mean_reward_100": s.final_mean_reward(100),
                "final_eval": s.final_eval.as_ref().map(|e| serde_json::json!({"mean": e.mean, "std": e.std})),
                "failure": s.failure,
                "checkpoint": s.checkpoint.as_ref().and_then(|p| p.file_name()).map(|p| p.to_string_lossy()),
            })
        })
        .collect();
    serde_json::json!({
        "name": report.name,
        "algorithm": report.algorithm,
        "episodes": report.episodes,
        "seeds": seeds,
    })
}

/// Per-episode mean and population standard deviation across the seeds that
/// finished. Optional metrics use the seeds that reported them.
pub fn aggregate_rows(report: &RunReport) -> Vec<Vec<String>> {
    let ok: Vec<&SeedRun> = report.seeds.iter().filter(|s| s.failure.is_none()).collect();
    let episodes = ok.iter().map(|s| s.records.len()).min().unwrap_or(0);
    let stat = |xs: Vec<f64>| -> [String; 2] {
        if xs.is_empty() {
            return [String::new(), String::new()];
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        [mean.to_string(), population_std(&xs).to_string()]
    };
    (0..episodes)
        .map(|e| {
            let rec: Vec<&MetricsRecord> = ok.iter().map(|s| &s.records[e]).collect();
            let mut row = vec![e.to_string(), rec.len().to_string()];
            row.extend(stat(rec.iter().map(|r| r.mean_reward).collect()));
            row.extend(stat(rec.iter().filter_map(|r| r.td_loss).collect()));
            row.extend(stat(rec.iter().filter_map(|r| r.cd_loss).collect()));
            row.extend(stat(rec.iter().filter_map(|r| r.mean_neighbor_kl).collect()));
            row.extend(stat(rec.iter().filter_map(|r| r.eval_reward).collect()));
            row
        })
        .collect()
}

fn write_aggregate(report: &RunReport, path: &Path) -> crate::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(AGGREGATE_COLUMNS).map_err(csv_err)?;
    for row in aggregate_rows(report) {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
