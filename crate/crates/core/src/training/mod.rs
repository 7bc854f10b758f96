//! Centralized-distributed actor-critic training and the two benchmark
//! learners built from the same parts.

mod agent;
mod losses;
mod trainer;

pub use agent::{act_central, act_distributed, Algorithm, Bootstrap, DistributedActors, Learner, Policy};
pub use losses::{actor_loss, ActionSpace, critic_input, td_loss, td_targets, ActorLoss, Batch, TdLoss, Transition};
pub use trainer::{action_space, greedy_episode, EpisodeStats, EvalEpisode, Phase, Trainer};
