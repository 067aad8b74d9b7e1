use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{CommandFactory, Parser, Subcommand};

use ncc::harness::{self, LoadedConfig};
use ncc::verify::{self, CheckReport};

#[derive(Parser)]
#[command(name = "ncc", version, about = "Neighborhood cognition consistent multi-agent RL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write metrics, checkpoints and aggregates.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed list of the config.
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Output directory; takes precedence over NCC_OUT_DIR and the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy rollouts of a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Finite-difference checks of every operation and composite loss.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
    /// KL, GCN and joint-max oracles.
    Oracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}\n");
    eprintln!("{}", Cli::command().render_usage());
    ExitCode::from(2)
}

fn load(path: &PathBuf) -> Result<LoadedConfig, ExitCode> {
    if !path.is_file() {
        return Err(usage_error(&format!("config file `{}` does not exist", path.display())));
    }
    LoadedConfig::from_file(path).map_err(|e| {
        eprintln!("{e}");
        ExitCode::FAILURE
    })
}

fn print_reports(reports: &[CheckReport], started: Instant) -> ExitCode {
    for r in reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed, {:.1}s", reports.len(), started.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run(cli: Cli) -> Result<ExitCode, ExitCode> {
    let fail = |e: ncc::Error| {
        eprintln!("error: {e}");
        ExitCode::FAILURE
    };
    match cli.command {
        Command::Train { config, seeds, out } => {
            let mut loaded = load(&config)?;
            if let Some(seeds) = seeds {
                loaded.cfg.seeds = seeds;
            }
            let dir = harness::resolve_out_dir(&loaded, out.as_deref());
            let report = harness::run_experiment(&loaded, &dir).map_err(fail)?;
            for s in &report.seeds {
                match (&s.failure, &s.final_eval) {
                    (Some(f), _) => println!("seed {}: failed: {}", s.seed, f.message),
                    (None, Some(e)) => println!("seed {}: eval {:.6} +- {:.6}", s.seed, e.mean, e.std),
                    (None, None) => println!("seed {}: no episodes", s.seed),
                }
            }
            println!("outputs in {}", dir.display());
            Ok(if report.seeds.iter().all(|s| s.failure.is_none()) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Eval {
            checkpoint,
            config,
            episodes,
        } => {
            let loaded = load(&config)?;
            if episodes == 0 {
                return Err(usage_error("--episodes must be at least 1"));
            }
            let s = harness::evaluate_checkpoint(&checkpoint, &loaded, episodes).map_err(fail)?;
            println!("mean_reward {:.9}", s.mean);
            println!("std {:.9}", s.std);
            println!("episodes {}", s.episode_rewards.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { seed, instances } => {
            let t = Instant::now();
            Ok(print_reports(&verify::gradcheck_suite(seed, instances).map_err(fail)?, t))
        }
        Command::Oracle { seed } => {
            let t = Instant::now();
            Ok(print_reports(&verify::oracle_suite(seed).map_err(fail)?, t))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help and version are not errors
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    run(cli).unwrap_or_else(|code| code)
}
