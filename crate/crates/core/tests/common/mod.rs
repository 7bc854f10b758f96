use cdc_core::config::ExperimentConfig;

/// A few short episodes on the mini system, small enough for debug builds.
pub fn tiny() -> ExperimentConfig {
    let mut c = ExperimentConfig::mini();
    let t = &mut c.training;
    t.pretrain_central_episodes = 2;
    t.pretrain_distributed_episodes = 2;
    t.joint_episodes = 3;
    t.steps_per_episode = 30;
    t.batch_size = 16;
    t.buffer_capacity = 500;
    t.critic_hidden = vec![16, 16];
    t.actor_hidden = vec![8, 8];
    let e = &mut c.experiment;
    e.systems = vec![1];
    e.seeds = vec![3];
    e.eval_episodes = 2;
    e.convergence_window = 2;
    e.checkpoint_every = 1;
    c
}
