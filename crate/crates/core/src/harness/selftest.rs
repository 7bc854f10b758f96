//! Quick end-to-end sanity checks, a few seconds in total.

use std::sync::Arc;

use rand::Rng as _;

use super::convergence::detect_convergence;
use crate::attack::{AttackerChain, AttackerProfile};
use crate::channel::{sample_transition_matrix, ChannelChain};
use crate::config::ExperimentConfig;
use crate::env::{ControlMode, Environment};
use crate::error::Result;
use crate::nn::{gradient_check, Head, Mlp};
use crate::noma::PowerAllocation;
use crate::rng::{substream, Substream};
use crate::system::generate_system;
use crate::training::{Algorithm, Trainer};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

pub fn run_selftest() -> Result<Vec<Check>> {
    let mut out = Vec::new();

    let sss = ExperimentConfig::sss();
    let spec = Arc::new(generate_system(&sss.system, 0)?);
    let mut env = Environment::new(spec.clone(), 1)?;
    let mut rng = substream(2, Substream::Exploration);
    let (n, m) = (spec.sensors(), spec.channels());
    for _ in 0..2000 {
        let p = PowerAllocation(ndarray::Array2::from_shape_simple_fn((n, m), || rng.random_range(0.0..20.0 / m as f64)));
        env.step(ControlMode::Collaborative, &p, &p)?;
    }
    let err = env.audit.max_covariance_rel_error;
    out.push(check("covariance recursion", err < 1e-9, format!("max relative error {err:.2e}")));

    let mut worst: f64 = 0.0;
    for (dims, head) in [
        (vec![12, 32, 32, 1], Head::Linear { outputs: 1 }),
        (vec![12, 32, 32, 12], Head::power(4, 2, 20.0)),
        (vec![3, 16, 16, 3], Head::power(1, 2, 20.0)),
    ] {
        let net = Mlp::new(&dims, head, 1.0, &mut rng)?;
        let x = ndarray::Array2::from_shape_simple_fn((4, dims[0]), || rng.random_range(0.0..1.0));
        worst = worst.max(gradient_check(&net, x.view(), 10, 1e-5, &mut rng)?.max_relative_error);
    }
    out.push(check("gradient check", worst < 1e-4, format!("max relative error {worst:.2e}")));

    let mut mini = ExperimentConfig::mini();
    mini.training.pretrain_central_episodes = 1;
    mini.training.pretrain_distributed_episodes = 1;
    mini.training.joint_episodes = 1;
    mini.training.steps_per_episode = 80;
    let mini_spec = Arc::new(generate_system(&mini.system, 0)?);
    let mut trainer = Trainer::new(mini.clone(), mini_spec, Algorithm::Cdc, 0)?;
    while !trainer.finished() {
        trainer.run_episode()?;
    }
    let v = trainer.audit.budget_violations;
    out.push(check("budget compliance", v == 0, format!("{v} violations in {} slots", trainer.audit.steps)));

    let t = sample_transition_matrix(4, &mut rng);
    let mut chain = ChannelChain::new(t.clone(), 0)?;
    let mut counts = vec![[0usize; 4]; 4];
    for _ in 0..100_000 {
        let from = chain.state;
        let to = chain.step(&mut rng);
        counts[from][to] += 1;
    }
    let dev = (0..4)
        .flat_map(|i| {
            let total: usize = counts[i].iter().sum();
            let t = &t;
            let row = counts[i];
            (0..4).map(move |j| (row[j] as f64 / total.max(1) as f64 - t.get(i, j)).abs())
        })
        .fold(0.0, f64::max);
    out.push(check("channel calibration", dev < 0.02, format!("max frequency deviation {dev:.4}")));

    let mut worst_frac: f64 = 0.0;
    for profile in [AttackerProfile::Balanced, AttackerProfile::Dynamic, AttackerProfile::Persistent] {
        let mut a = AttackerChain::stationary_start(profile.transition(), 1000.0, &mut rng)?;
        let steps = 100_000;
        let on = (0..steps).filter(|_| a.step(&mut rng) > 0.0).count();
        worst_frac = worst_frac.max((on as f64 / steps as f64 - 0.5).abs());
    }
    out.push(check("attack fraction", worst_frac < 0.01, format!("max deviation from 1/2 {worst_frac:.4}")));

    let series: Vec<f64> = (0..40).map(|i| 10.0 + (i % 2) as f64).collect();
    let c = detect_convergence(&series, 10, 0.05);
    out.push(check("convergence detector", c.episode == Some(20), format!("converged at {:?}", c.episode)));
    Ok(out)
}
