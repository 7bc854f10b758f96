mod common;

use std::sync::Arc;

use ndarray::Array2;
use proptest::prelude::*;

use cdc_core::config::{ExperimentConfig, TrainingConfig};
use cdc_core::rng::{substream, Substream};
use cdc_core::system::generate_system;
use cdc_core::training::{
    act_central, act_distributed, actor_loss, td_targets, ActionSpace, Algorithm, Batch, Learner, Phase, Trainer,
    Transition,
};

fn space() -> ActionSpace {
    ActionSpace {
        sensors: 3,
        channels: 2,
        budget: 20.0,
    }
}

fn learner(seed: u64) -> Learner {
    let cfg = TrainingConfig {
        critic_hidden: vec![8],
        actor_hidden: vec![6],
        final_layer_scale: 1.0,
        ..TrainingConfig::default()
    };
    Learner::new(Algorithm::Cdc, space(), &cfg, &mut substream(seed, Substream::Init)).unwrap()
}

#[test]
fn td_target_formula() {
    let y = td_targets(ndarray::array![1.0, 4.0].view(), ndarray::array![10.0, -2.0].view(), 0.9, 0.5);
    assert_eq!(y, ndarray::array![0.5 + 9.0, 2.0 - 1.8]);
}

#[test]
fn phase_schedule() {
    let t = ExperimentConfig::mini().training;
    assert_eq!(Phase::of(Algorithm::Cdc, 0, &t), Phase::PretrainCentral);
    assert_eq!(Phase::of(Algorithm::Cdc, 99, &t), Phase::PretrainCentral);
    assert_eq!(Phase::of(Algorithm::Cdc, 100, &t), Phase::PretrainDistributed);
    assert_eq!(Phase::of(Algorithm::Cdc, 149, &t), Phase::PretrainDistributed);
    assert_eq!(Phase::of(Algorithm::Cdc, 150, &t), Phase::Joint);
    assert_eq!(Phase::of(Algorithm::Ddpg, 0, &t), Phase::Ddpg);
    assert_eq!(Phase::of(Algorithm::Maddpg, 299, &t), Phase::Maddpg);
}

#[test]
fn replay_memory_across_stages() {
    let cfg = common::tiny();
    let spec = Arc::new(generate_system(&cfg.system, 1).unwrap());
    let mut t = Trainer::new(cfg.clone(), spec, Algorithm::Cdc, 3).unwrap();
    let steps = cfg.training.steps_per_episode;
    let mut lens = Vec::new();
    while !t.finished() {
        let s = t.run_episode().unwrap();
        lens.push(t.learner.buffer.len());
        match s.phase {
            Phase::PretrainDistributed => assert!(s.td_loss.is_none() && s.actor_loss.is_some()),
            _ => assert!(s.td_loss.is_some()),
        }
        if s.phase == Phase::PretrainCentral {
            assert_eq!(s.attack_fraction, 0.0);
        }
    }
    // The last slot of every episode has no successor and is dropped; the
    // collaborative stage starts from an empty memory.
    let per = steps - 1;
    assert_eq!(lens, vec![per, 2 * per, 3 * per, 4 * per, per, 2 * per, 3 * per]);
    let space = t.learner.space;
    for record in t.learner.buffer.iter_ordered() {
        let tr = Transition::decode(record, space).unwrap();
        assert_eq!(tr.encode(space).unwrap(), record);
        assert!(tr.action.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn pretraining_freezes_the_critic_and_central_actor() {
    let mut cfg = common::tiny();
    cfg.training.pretrain_central_episodes = 1;
    let spec = Arc::new(generate_system(&cfg.system, 1).unwrap());
    let mut t = Trainer::new(cfg, spec, Algorithm::Cdc, 3).unwrap();
    t.run_episode().unwrap();
    let before = t.learner.clone();
    let s = t.run_episode().unwrap();
    assert_eq!(s.phase, Phase::PretrainDistributed);
    assert_eq!(t.learner.critic, before.critic);
    assert_eq!(t.learner.critic_target, before.critic_target);
    assert_eq!(t.learner.central, before.central);
    assert_ne!(t.learner.distributed, before.distributed);
}

fn transition() -> impl Strategy<Value = Transition> {
    (
        prop::collection::vec(0.0f64..1.0, 9),
        prop::collection::vec(0.0f64..10.0, 6),
        prop::collection::vec(any::<bool>(), 3),
        0.0f64..1e6,
        prop::collection::vec(0.0f64..1.0, 9),
        prop::collection::vec(0.0f64..10.0, 6),
    )
        .prop_map(|(obs, action, beta, cost, next_obs, next_action)| Transition {
            obs,
            action,
            beta,
            cost,
            next_obs,
            next_action,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn records_round_trip(items in prop::collection::vec(transition(), 1..6)) {
        let records: Vec<Vec<f64>> = items.iter().map(|t| t.encode(space()).unwrap()).collect();
        for (t, r) in items.iter().zip(&records) {
            prop_assert_eq!(r.len(), space().record_width());
            prop_assert_eq!(&Transition::decode(r, space()).unwrap(), t);
        }
        let views: Vec<&[f64]> = records.iter().map(Vec::as_slice).collect();
        let from_records = Batch::from_records(&views, space()).unwrap();
        let from_items = Batch::from_transitions(&items.iter().collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(from_records, from_items);
    }

    #[test]
    fn noisy_actions_stay_within_budget(
        obs in prop::collection::vec(0.0f64..1.0, 9),
        noise in 0.0f64..50.0,
        seed in 0u64..1000,
    ) {
        let l = learner(seed);
        let mut rng = substream(seed, Substream::Exploration);
        let c = act_central(l.central_net().unwrap(), &obs, noise, &mut rng).unwrap();
        let d = act_distributed(l.distributed_actors().unwrap(), &obs, noise, &mut rng).unwrap();
        for p in [c, d] {
            prop_assert!(p.is_feasible(20.0 + 1e-9));
            prop_assert!(p.0.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn masking_routes_gradients_by_row(
        beta in prop::collection::vec(any::<bool>(), 12),
        obs in prop::collection::vec(0.0f64..1.0, 36),
    ) {
        let l = learner(7);
        let obs = Array2::from_shape_vec((4, 9), obs).unwrap();
        let beta = Array2::from_shape_vec((4, 3), beta).unwrap();
        let g = actor_loss(&l.critic, l.central_net(), l.distributed_actors(), obs.view(), beta.view(), space()).unwrap();
        let any_central = beta.iter().any(|&b| b);
        prop_assert_eq!(g.central.as_ref().unwrap().max_abs() == 0.0, !any_central);
        for n in 0..3 {
            let local_rows = beta.column(n).iter().any(|&b| !b);
            if !local_rows {
                prop_assert_eq!(g.distributed[n].max_abs(), 0.0);
            }
        }
    }

    #[test]
    fn objective_ignores_the_unselected_actor(
        beta in prop::collection::vec(any::<bool>(), 6),
        seed in 0u64..1000,
    ) {
        // Swapping in other local actors changes nothing when every row is
        // central, and likewise for the central actor.
        let l = learner(3);
        let other = learner(seed + 10);
        let mut swapped = l.clone();
        swapped.distributed = other.distributed.clone();
        let obs = Array2::from_shape_fn((2, 9), |(b, j)| ((b * 9 + j) as f64 * 0.37).fract());
        let beta = Array2::from_shape_vec((2, 3), beta).unwrap();
        let a = l.actor_objective(obs.view(), beta.view()).unwrap().value;
        let b = swapped.actor_objective(obs.view(), beta.view()).unwrap().value;
        if beta.iter().all(|&v| v) {
            prop_assert_eq!(a, b);
        }
        let mut swapped = l.clone();
        swapped.central = other.central.clone();
        let c = swapped.actor_objective(obs.view(), beta.view()).unwrap().value;
        if beta.iter().all(|&v| !v) {
            prop_assert_eq!(a, c);
        }
    }
}
