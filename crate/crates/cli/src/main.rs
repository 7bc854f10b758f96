use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cdc_core::config::{load_config, ExperimentConfig};
use cdc_core::harness::{
    compare_agents, evaluate_checkpoint, run_experiment, run_training, selftest::run_selftest, AgentKind, RunOptions,
};
use cdc_core::system::{generate_system, SystemManifest};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cdcdrl", version, about = "Anti-jamming power allocation trainer and simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate system manifests.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        /// System ids; defaults to the config's experiment.systems.
        #[arg(long = "system")]
        systems: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one agent on one system.
    Train {
        #[arg(long)]
        agent: AgentKind,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the first of experiment.systems.
        #[arg(long)]
        system: Option<u64>,
        /// Ignore an existing checkpoint and start over.
        #[arg(long)]
        fresh: bool,
        /// Stop (with a checkpoint) after this many episodes.
        #[arg(long)]
        max_episodes: Option<usize>,
        #[arg(long, short)]
        verbose: bool,
    },
    /// Evaluate a checkpoint with greedy episodes.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Aggregate finished runs under a directory; with --config, first run
    /// every missing job of the experiment.
    Compare {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated agents to run with --config.
        #[arg(long, value_delimiter = ',', default_value = "cdc,ddpg,maddpg,combined")]
        agents: Vec<AgentKind>,
    },
    /// Run the built-in sanity checks.
    Selftest,
}

fn config_from(path: Option<&PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen { config, systems, out } => {
            let config = config_from(config.as_ref())?;
            let ids = if systems.is_empty() { config.experiment.systems.clone() } else { systems };
            std::fs::create_dir_all(&out)?;
            for id in ids {
                let spec = generate_system(&config.system, id)?;
                let manifest = SystemManifest::new(&spec)?;
                let path = out.join(format!("system-{id}.json"));
                manifest.write(&path)?;
                println!("{} {}", path.display(), manifest.digest);
            }
        }
        Command::Train {
            agent,
            config,
            seed,
            out,
            system,
            fresh,
            max_episodes,
            verbose,
        } => {
            let config = config_from(config.as_ref())?;
            let Some(system) = system.or_else(|| config.experiment.systems.first().copied()) else {
                bail!("no system id given and experiment.systems is empty");
            };
            let opts = RunOptions {
                out_dir: out,
                resume: !fresh,
                episode_limit: max_episodes,
                evaluate: true,
                verbose,
            };
            let outcome = run_training(&config, agent, system, seed, &opts)?;
            let m = &outcome.manifest;
            println!(
                "{}: {}/{} episodes, converged at {}, {} budget violations",
                outcome.dir.display(),
                m.completed_episodes,
                m.total_episodes,
                m.convergence_episode.map_or("-".into(), |e| e.to_string()),
                m.budget_violations
            );
            if let Some(e) = &outcome.eval {
                println!("eval MSE {:.6} ± {:.6} over {} episodes", e.mean_cost, e.std_cost, e.episodes);
            }
        }
        Command::Eval { checkpoint, episodes } => {
            let summary = evaluate_checkpoint(&checkpoint, episodes)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Compare { out, config, agents } => {
            let rows = match config {
                Some(p) => run_experiment(&config_from(Some(&p))?, &out, &agents)?,
                None => compare_agents(&out)?,
            };
            println!("{:>8} {:>9} {:>5} {:>12} {:>12} {:>9} {:>10}", "system", "agent", "runs", "mean MSE", "std", "converged", "reduction");
            for r in rows {
                println!(
                    "{:>8} {:>9} {:>5} {:>12.4} {:>12.4} {:>9} {:>10}",
                    r.system_id.map_or("all".into(), |s| s.to_string()),
                    r.agent,
                    r.runs,
                    r.mean_mse,
                    r.std_mse,
                    r.converged_runs,
                    r.reduction_vs_best_benchmark.map_or(String::new(), |v| format!("{:.2}%", 100.0 * v))
                );
            }
        }
        Command::Selftest => {
            let checks = run_selftest()?;
            let mut ok = true;
            for c in &checks {
                println!("{} {:<22} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
