//! Aggregation of finished runs into per-system, per-agent statistics and
//! the relative MSE reduction of CDC against the best benchmark.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::evaluate::{sample_std, EvalSummary};
use super::runner::{read_records, run_training, AgentKind, RunManifest, RunOptions};
use crate::config::ExperimentConfig;
use crate::error::Result;

/// What one finished run contributes to a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub agent: AgentKind,
    pub system_id: u64,
    pub seed: u64,
    pub eval_mse: f64,
    pub convergence_episode: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    /// `None` for the pooled row over all systems.
    pub system_id: Option<u64>,
    pub agent: AgentKind,
    pub runs: usize,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub converged_runs: usize,
    /// `(best benchmark − CDC) / best benchmark` on mean MSE; CDC rows only.
    pub reduction_vs_best_benchmark: Option<f64>,
}

fn row(system_id: Option<u64>, agent: AgentKind, runs: &[&RunSummary]) -> SummaryRow {
    let values: Vec<f64> = runs.iter().map(|r| r.eval_mse).collect();
    SummaryRow {
        system_id,
        agent,
        runs: runs.len(),
        mean_mse: values.iter().sum::<f64>() / values.len() as f64,
        std_mse: sample_std(&values),
        converged_runs: runs.iter().filter(|r| r.convergence_episode.is_some()).count(),
        reduction_vs_best_benchmark: None,
    }
}

fn fill_reduction(rows: &mut [SummaryRow]) {
    let best = rows
        .iter()
        .filter(|r| r.agent.is_benchmark())
        .map(|r| r.mean_mse)
        .fold(f64::INFINITY, f64::min);
    if best.is_finite() {
        for r in rows.iter_mut().filter(|r| r.agent == AgentKind::Cdc) {
            r.reduction_vs_best_benchmark = Some((best - r.mean_mse) / best);
        }
    }
}

/// Per-system rows followed by pooled rows over every system.
pub fn summarize(runs: &[RunSummary]) -> Vec<SummaryRow> {
    let mut by_system: BTreeMap<u64, BTreeMap<AgentKind, Vec<&RunSummary>>> = BTreeMap::new();
    let mut pooled: BTreeMap<AgentKind, Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        by_system.entry(r.system_id).or_default().entry(r.agent).or_default().push(r);
        pooled.entry(r.agent).or_default().push(r);
    }
    let mut out = Vec::new();
    for (system, agents) in &by_system {
        let mut rows: Vec<SummaryRow> = agents.iter().map(|(a, rs)| row(Some(*system), *a, rs)).collect();
        fill_reduction(&mut rows);
        out.extend(rows);
    }
    let mut rows: Vec<SummaryRow> = pooled.iter().map(|(a, rs)| row(None, *a, rs)).collect();
    fill_reduction(&mut rows);
    out.extend(rows);
    out
}

/// Finished runs found under `out_dir`.
pub fn collect_runs(out_dir: &Path) -> Result<Vec<RunSummary>> {
    let mut runs = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(out_dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let dir = entry.path();
        let (manifest, eval) = (dir.join("run.json"), dir.join("eval.json"));
        if !manifest.exists() || !eval.exists() {
            continue;
        }
        let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(manifest)?)?;
        let e: EvalSummary = serde_json::from_str(&std::fs::read_to_string(eval)?)?;
        if !m.finished {
            continue;
        }
        runs.push(RunSummary {
            agent: m.agent,
            system_id: m.system_id,
            seed: m.seed,
            eval_mse: e.mean_cost,
            convergence_episode: m.convergence_episode,
        });
    }
    Ok(runs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CurvePoint {
    system_id: u64,
    agent: AgentKind,
    episode: usize,
    mean_cost: f64,
    runs: usize,
}

/// Writes `summary.csv` and `curves.csv` (per-episode training cost
/// averaged over seeds) into `out_dir` and returns the summary rows.
pub fn compare_agents(out_dir: &Path) -> Result<Vec<SummaryRow>> {
    let runs = collect_runs(out_dir)?;
    let rows = summarize(&runs);
    let mut w = csv::Writer::from_path(out_dir.join("summary.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;

    let mut curves: BTreeMap<(u64, AgentKind, usize), (f64, usize)> = BTreeMap::new();
    for r in &runs {
        let path = super::runner::run_dir(out_dir, r.agent, r.system_id, r.seed).join("metrics.csv");
        for rec in read_records(&path)? {
            let e = curves.entry((r.system_id, r.agent, rec.episode)).or_insert((0.0, 0));
            e.0 += rec.mean_cost;
            e.1 += 1;
        }
    }
    let mut w = csv::Writer::from_path(out_dir.join("curves.csv"))?;
    for ((system_id, agent, episode), (sum, n)) in curves {
        w.serialize(CurvePoint {
            system_id,
            agent,
            episode,
            mean_cost: sum / n as f64,
            runs: n,
        })?;
    }
    w.flush()?;
    Ok(rows)
}

/// Runs every (system, seed, agent) job of the config that has not finished
/// yet, in parallel, then compares.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path, agents: &[AgentKind]) -> Result<Vec<SummaryRow>> {
    std::fs::create_dir_all(out_dir)?;
    let jobs: Vec<(u64, u64, AgentKind)> = config
        .experiment
        .jobs()
        .into_iter()
        .flat_map(|(s, seed)| agents.iter().map(move |&a| (s, seed, a)))
        .collect();
    jobs.par_iter()
        .map(|&(system, seed, agent)| {
            let dir = super::runner::run_dir(out_dir, agent, system, seed);
            if dir.join("eval.json").exists() {
                return Ok(());
            }
            run_training(config, agent, system, seed, &RunOptions::new(out_dir)).map(|_| ())
        })
        .collect::<Result<Vec<_>>>()?;
    compare_agents(out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(agent: AgentKind, system_id: u64, seed: u64, mse: f64) -> RunSummary {
        RunSummary {
            agent,
            system_id,
            seed,
            eval_mse: mse,
            convergence_episode: Some(30),
        }
    }

    #[test]
    fn reduction_against_best_benchmark() {
        let runs = vec![
            run(AgentKind::Cdc, 0, 0, 8.0),
            run(AgentKind::Cdc, 0, 1, 10.0),
            run(AgentKind::Ddpg, 0, 0, 30.0),
            run(AgentKind::Maddpg, 0, 0, 10.0),
            run(AgentKind::Combined, 0, 0, 12.0),
        ];
        let rows = summarize(&runs);
        let cdc = rows.iter().find(|r| r.agent == AgentKind::Cdc && r.system_id == Some(0)).unwrap();
        assert_eq!(cdc.mean_mse, 9.0);
        assert!((cdc.std_mse - 2f64.sqrt()).abs() < 1e-15);
        assert!((cdc.reduction_vs_best_benchmark.unwrap() - 0.1).abs() < 1e-15);
        assert!(rows.iter().filter(|r| r.agent != AgentKind::Cdc).all(|r| r.reduction_vs_best_benchmark.is_none()));
        assert_eq!(rows.iter().filter(|r| r.system_id.is_none()).count(), 4);
    }
}
