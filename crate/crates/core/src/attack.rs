//! Markov jammer on the broadcast control channel and the collaborative
//! action rule.

use std::fmt;
use std::str::FromStr;

use ndarray::Zip;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_row, stationary_distribution, TransitionMatrix};
use crate::error::{Error, Result};
use crate::noma::{finite_blocklength_error, LinkParams, PowerAllocation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackerProfile {
    Balanced,
    Dynamic,
    Persistent,
    /// Never attacks.
    None,
}

impl AttackerProfile {
    /// Rows/columns ordered `[silent, attacking]`.
    pub fn transition(self) -> TransitionMatrix {
        let rows = match self {
            AttackerProfile::Balanced => [[0.5, 0.5], [0.5, 0.5]],
            AttackerProfile::Dynamic => [[0.1, 0.9], [0.9, 0.1]],
            AttackerProfile::Persistent => [[0.9, 0.1], [0.1, 0.9]],
            AttackerProfile::None => [[1.0, 0.0], [1.0, 0.0]],
        };
        TransitionMatrix::from_rows(&rows.map(|r| r.to_vec())).expect("static profiles are stochastic")
    }

    pub fn name(self) -> &'static str {
        match self {
            AttackerProfile::Balanced => "balanced",
            AttackerProfile::Dynamic => "dynamic",
            AttackerProfile::Persistent => "persistent",
            AttackerProfile::None => "none",
        }
    }
}

impl fmt::Display for AttackerProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackerProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(AttackerProfile::Balanced),
            "dynamic" => Ok(AttackerProfile::Dynamic),
            "persistent" => Ok(AttackerProfile::Persistent),
            "none" => Ok(AttackerProfile::None),
            _ => Err(Error::Unknown {
                kind: "attacker profile",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackerChain {
    pub transition: TransitionMatrix,
    pub attacking: bool,
    pub budget: f64,
}

impl AttackerChain {
    pub fn new(transition: TransitionMatrix, attacking: bool, budget: f64) -> Result<Self> {
        if transition.size() != 2 {
            return Err(Error::Shape(format!(
                "attacker transition must be 2x2, got {0}x{0}",
                transition.size()
            )));
        }
        Ok(Self {
            transition,
            attacking,
            budget,
        })
    }

    pub fn stationary_start<R: Rng + ?Sized>(transition: TransitionMatrix, budget: f64, rng: &mut R) -> Result<Self> {
        let pi = stationary_distribution(&transition)?;
        let attacking = sample_row(&pi, rng) == 1;
        Self::new(transition, attacking, budget)
    }

    /// Jamming power in the current state.
    pub fn energy(&self) -> f64 {
        if self.attacking {
            self.budget
        } else {
            0.0
        }
    }

    /// Advances one slot and returns the energy expended in the new state.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        let row = self.transition.row(self.attacking as usize);
        self.attacking = sample_row(row, rng) == 1;
        self.energy()
    }
}

/// `g_d E_d / (g_a E_a + σ²)`
pub fn control_sinr(gd: f64, ga: f64, ed: f64, ea: f64, noise: f64) -> f64 {
    gd * ed / (ga * ea + noise)
}

/// Per-sensor control packet reception, one independent draw per sensor.
pub fn control_outcomes<R: Rng + ?Sized>(sinrs: &[f64], link: &LinkParams, rng: &mut R) -> Vec<bool> {
    sinrs
        .iter()
        .map(|&s| {
            let eps = finite_blocklength_error(s, link.blocklength, link.rate);
            rng.random::<f64>() < 1.0 - eps
        })
        .collect()
}

/// Row `n` from the centralized allocation when sensor `n` received the
/// control packet, otherwise from its own distributed allocation.
pub fn combine_actions(central: &PowerAllocation, distributed: &PowerAllocation, beta: &[bool]) -> Result<PowerAllocation> {
    if central.0.dim() != distributed.0.dim() || beta.len() != central.sensors() {
        return Err(Error::Shape(format!(
            "central {:?}, distributed {:?}, beta {}",
            central.0.dim(),
            distributed.0.dim(),
            beta.len()
        )));
    }
    let mut out = distributed.0.clone();
    Zip::from(out.rows_mut())
        .and(central.0.rows())
        .and(beta)
        .for_each(|mut o, c, &b| {
            if b {
                o.assign(&c);
            }
        });
    Ok(PowerAllocation(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Substream};
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn absorbing_silence() {
        let mut rng = substream(1, Substream::Attacker);
        let mut a = AttackerChain::new(TransitionMatrix::identity(2), false, 1000.0).unwrap();
        for _ in 0..10_000 {
            assert_eq!(a.step(&mut rng), 0.0);
        }
    }

    fn attack_fraction_and_switch_rate(profile: AttackerProfile, steps: usize) -> (f64, f64) {
        let mut rng = substream(2, Substream::Attacker);
        let mut a = AttackerChain::stationary_start(profile.transition(), 1000.0, &mut rng).unwrap();
        let (mut attacks, mut switches) = (0usize, 0usize);
        for _ in 0..steps {
            let before = a.attacking;
            if a.step(&mut rng) > 0.0 {
                attacks += 1;
            }
            if a.attacking != before {
                switches += 1;
            }
        }
        (attacks as f64 / steps as f64, switches as f64 / steps as f64)
    }

    #[test]
    fn table_profiles_attack_half_the_time() {
        for p in [AttackerProfile::Balanced, AttackerProfile::Dynamic, AttackerProfile::Persistent] {
            let pi = stationary_distribution(&p.transition()).unwrap();
            assert!((pi[1] - 0.5).abs() < 1e-12);
            let (frac, _) = attack_fraction_and_switch_rate(p, 1_000_000);
            assert!((frac - 0.5).abs() < 0.01, "{p}: {frac}");
        }
        let (_, switch) = attack_fraction_and_switch_rate(AttackerProfile::Dynamic, 1_000_000);
        assert!((switch - 0.9).abs() < 0.01);
    }

    #[test]
    fn control_sinr_examples() {
        assert_relative_eq!(control_sinr(0.3, 0.1, 200.0, 0.0, 0.01), 0.3 * 200.0 / 0.01);
        assert_relative_eq!(
            control_sinr(10f64.powf(-0.5), 1e-4, 200.0, 1000.0, 0.01),
            574.959_574_576_068_9,
            max_relative = 1e-12
        );
        assert_eq!(control_sinr(0.0, 0.1, 200.0, 1000.0, 0.01), 0.0);
    }

    #[test]
    fn control_sinr_monotone() {
        let mut prev = f64::INFINITY;
        for i in 0..100 {
            let s = control_sinr(0.01, 0.02, 200.0, i as f64 * 10.0, 0.01);
            assert!(s < prev);
            prev = s;
        }
        let mut prev = -1.0;
        for i in 0..100 {
            let s = control_sinr(0.01, 0.02, i as f64 * 10.0, 1000.0, 0.01);
            assert!(s > prev);
            prev = s;
        }
    }

    #[test]
    fn control_outcome_extremes() {
        let mut rng = substream(3, Substream::Control);
        let link = LinkParams::default();
        assert_eq!(control_outcomes(&[0.0; 4], &link, &mut rng), vec![false; 4]);
        let mut received = [0usize; 3];
        for _ in 0..100_000 {
            for (r, b) in received.iter_mut().zip(control_outcomes(&[1e6; 3], &link, &mut rng)) {
                *r += b as usize;
            }
        }
        assert!(received.iter().all(|&r| r as f64 / 1e5 > 1.0 - 1e-5));
        assert_eq!(control_outcomes(&[1e6, 0.0], &link, &mut rng), vec![true, false]);
    }

    #[test]
    fn combine_selects_rows() {
        let c = PowerAllocation(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let d = PowerAllocation(array![[7.0, 8.0], [9.0, 10.0], [11.0, 12.0]]);
        assert_eq!(combine_actions(&c, &d, &[true; 3]).unwrap(), c);
        assert_eq!(combine_actions(&c, &d, &[false; 3]).unwrap(), d);
        let mixed = combine_actions(&c, &d, &[true, false, true]).unwrap();
        assert_eq!(mixed.0, array![[1.0, 2.0], [9.0, 10.0], [5.0, 6.0]]);
        assert!(combine_actions(&c, &d, &[true]).is_err());
    }

    #[test]
    fn profile_names_round_trip() {
        for p in [AttackerProfile::Balanced, AttackerProfile::Dynamic, AttackerProfile::Persistent, AttackerProfile::None] {
            assert_eq!(p.name().parse::<AttackerProfile>().unwrap(), p);
        }
        assert!("sneaky".parse::<AttackerProfile>().is_err());
    }

    proptest! {
        #[test]
        fn combine_preserves_budget(
            c in proptest::collection::vec(0.0f64..10.0, 6),
            d in proptest::collection::vec(0.0f64..10.0, 6),
            beta in proptest::collection::vec(any::<bool>(), 3),
        ) {
            let c = PowerAllocation::from_flat(3, 2, &c).unwrap();
            let d = PowerAllocation::from_flat(3, 2, &d).unwrap();
            prop_assert!(combine_actions(&c, &d, &beta).unwrap().is_feasible(20.0));
        }
    }
}
