//! Experiment plumbing: checkpoints, training runs, evaluation,
//! convergence detection and cross-agent comparison.

pub mod checkpoint;
pub mod compare;
pub mod convergence;
pub mod evaluate;
pub mod runner;
pub mod selftest;

pub use compare::{compare_agents, run_experiment, summarize, RunSummary, SummaryRow};
pub use convergence::{detect_convergence, moving_average, normalized_std, nstd_series, Convergence};
pub use evaluate::{evaluate, EvalSummary};
pub use runner::{evaluate_checkpoint, run_dir, run_training, AgentKind, EpisodeRecord, RunManifest, RunOptions, RunOutcome};
