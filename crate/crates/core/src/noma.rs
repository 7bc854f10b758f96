//! NOMA uplink: combined SINR over subchannels, greedy SIC decoding and the
//! finite-blocklength packet error model.

use std::f64::consts::{LN_2, SQRT_2};

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Blocklength in channel uses.
    pub blocklength: u32,
    /// Bits per channel use.
    pub rate: f64,
    /// Receiver noise power.
    pub noise: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            blocklength: 200,
            rate: 2.0,
            noise: 0.01,
        }
    }
}

/// Standard normal upper tail.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Normal-approximation decoding error probability at blocklength `l` and
/// rate `r`.
pub fn finite_blocklength_error(sinr: f64, l: u32, r: f64) -> f64 {
    if !(sinr > 0.0) {
        return 1.0;
    }
    let l = l as f64;
    let log2e = 1.0 / LN_2;
    let capacity = sinr.ln_1p() * log2e;
    let dispersion = (1.0 - (1.0 + sinr).powi(-2)) * log2e * log2e;
    if dispersion <= 0.0 {
        return 1.0;
    }
    let x = (l * capacity - l * r + 0.5 * l.log2()) / (l * dispersion).sqrt();
    q_function(x).clamp(0.0, 1.0)
}

/// Transmit powers, one row per sensor and one column per subchannel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation(pub Array2<f64>);

impl PowerAllocation {
    pub fn zeros(sensors: usize, channels: usize) -> Self {
        Self(Array2::zeros((sensors, channels)))
    }

    pub fn from_flat(sensors: usize, channels: usize, flat: &[f64]) -> Result<Self> {
        Array2::from_shape_vec((sensors, channels), flat.to_vec())
            .map(Self)
            .map_err(|e| Error::Shape(e.to_string()))
    }

    pub fn sensors(&self) -> usize {
        self.0.nrows()
    }

    pub fn channels(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn row_total(&self, n: usize) -> f64 {
        self.0.row(n).sum()
    }

    /// Entrywise nonnegative and every row within `budget + 1e-9`.
    pub fn is_feasible(&self, budget: f64) -> bool {
        self.0.iter().all(|&p| p >= 0.0 && p.is_finite())
            && self.0.rows().into_iter().all(|r| r.sum() <= budget + 1e-9)
    }

    pub fn flat(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }
}

/// Combined SINR of each undecoded sensor: per-subchannel SINR against the
/// other undecoded sensors, summed over subchannels. Decoded sensors are
/// cancelled perfectly. Entries for sensors outside `undecoded` are zero.
pub fn irc_sinr(gains: ArrayView2<f64>, powers: ArrayView2<f64>, undecoded: &[usize], noise: f64) -> Vec<f64> {
    let (n_sensors, n_channels) = gains.dim();
    let mut received = vec![0.0; n_channels];
    for &j in undecoded {
        for m in 0..n_channels {
            received[m] += gains[(j, m)] * powers[(j, m)];
        }
    }
    let mut sinr = vec![0.0; n_sensors];
    for &n in undecoded {
        sinr[n] = (0..n_channels)
            .map(|m| {
                let own = gains[(n, m)] * powers[(n, m)];
                // Clamp guards against cancellation leaving a tiny negative interference.
                let interference = (received[m] - own).max(0.0);
                own / (interference + noise)
            })
            .sum();
    }
    sinr
}

/// Outcome of one uplink slot.
#[derive(Debug, Clone, PartialEq)]
pub struct UplinkOutcome {
    pub success: Vec<bool>,
    /// Sensors in the order the receiver attempted them.
    pub decode_order: Vec<usize>,
}

/// Successive decoding of the strongest remaining sensor (ties to the
/// lowest index), aborting all remaining sensors at the first failure.
/// Sensors with zero total power are never attempted.
pub fn run_uplink<R: Rng + ?Sized>(
    gains: ArrayView2<f64>,
    powers: &PowerAllocation,
    params: &LinkParams,
    rng: &mut R,
) -> Result<UplinkOutcome> {
    if gains.dim() != powers.0.dim() {
        return Err(Error::Shape(format!(
            "gains {:?} vs powers {:?}",
            gains.dim(),
            powers.0.dim()
        )));
    }
    let n = gains.nrows();
    let mut success = vec![false; n];
    let mut decode_order = Vec::with_capacity(n);
    let mut undecoded: Vec<usize> = (0..n).filter(|&i| powers.row_total(i) > 0.0).collect();
    while !undecoded.is_empty() {
        let sinr = irc_sinr(gains, powers.view(), &undecoded, params.noise);
        let (pos, &best) = undecoded
            .iter()
            .enumerate()
            .fold(None, |acc: Option<(usize, &usize)>, (p, s)| match acc {
                Some((_, b)) if sinr[*b] >= sinr[*s] => acc,
                _ => Some((p, s)),
            })
            .expect("undecoded is non-empty");
        decode_order.push(best);
        let eps = finite_blocklength_error(sinr[best], params.blocklength, params.rate);
        if rng.random::<f64>() < 1.0 - eps {
            success[best] = true;
            undecoded.remove(pos);
        } else {
            break;
        }
    }
    Ok(UplinkOutcome { success, decode_order })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Substream};
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn error_probability_examples() {
        assert_eq!(finite_blocklength_error(0.0, 200, 2.0), 1.0);
        assert!(finite_blocklength_error(1e6, 200, 2.0) < 1e-15);
        // 40-digit evaluation of the same formula.
        assert_relative_eq!(
            finite_blocklength_error(3.0, 200, 2.0),
            0.423_296_547_288_171_1,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            finite_blocklength_error(4.0, 200, 2.0),
            3.224_567_774_206_287e-4,
            max_relative = 1e-10
        );
    }

    #[test]
    fn error_probability_is_monotone() {
        let mut prev = 1.0;
        for i in 0..=1000 {
            let s = 1e4 * i as f64 / 1000.0;
            let e = finite_blocklength_error(s, 200, 2.0);
            assert!((0.0..=1.0).contains(&e));
            assert!(e <= prev, "not monotone at {s}");
            prev = e;
        }
        // Finer grid across the waterfall.
        let mut prev = 1.0;
        for i in 0..=10_000 {
            let e = finite_blocklength_error(i as f64 * 1e-3, 200, 2.0);
            assert!(e <= prev);
            prev = e;
        }
    }

    #[test]
    fn sinr_examples() {
        let g = array![[1.0]];
        let p = array![[5.0]];
        assert_relative_eq!(irc_sinr(g.view(), p.view(), &[0], 0.01)[0], 500.0);

        let g = array![[1.0, 1.0], [1.0, 1.0]];
        let p = array![[2.0, 0.0], [0.0, 3.0]];
        let s = irc_sinr(g.view(), p.view(), &[0, 1], 0.01);
        assert_relative_eq!(s[0], 200.0);
        assert_relative_eq!(s[1], 300.0);

        let g = array![[1.0], [1.0]];
        let p = array![[1.0], [1.0]];
        let s = irc_sinr(g.view(), p.view(), &[0, 1], 0.01);
        assert_relative_eq!(s[0], 1.0 / 1.01, max_relative = 1e-15);
        let s = irc_sinr(g.view(), p.view(), &[1], 0.01);
        assert_eq!(s[0], 0.0);
        assert_relative_eq!(s[1], 100.0, max_relative = 1e-15);
    }

    #[test]
    fn zero_power_means_no_delivery() {
        let mut rng = substream(1, Substream::Decode);
        let g = Array2::from_elem((3, 2), 0.3);
        let out = run_uplink(g.view(), &PowerAllocation::zeros(3, 2), &LinkParams::default(), &mut rng).unwrap();
        assert_eq!(out.success, vec![false; 3]);
        assert!(out.decode_order.is_empty());
    }

    #[test]
    fn lone_strong_sensor_always_delivers() {
        let mut rng = substream(2, Substream::Decode);
        let g = array![[1.0]];
        let p = PowerAllocation(array![[1e4]]);
        let params = LinkParams::default();
        let ok = (0..100_000)
            .filter(|_| run_uplink(g.view(), &p, &params, &mut rng).unwrap().success[0])
            .count();
        assert!(ok as f64 / 1e5 > 1.0 - 1e-6);
    }

    #[test]
    fn decode_order_by_sinr_then_index() {
        let mut rng = substream(3, Substream::Decode);
        let g = array![[1.0, 1.0], [1.0, 1.0]];
        let p = PowerAllocation(array![[1.0, 0.0], [0.0, 5.0]]);
        let out = run_uplink(g.view(), &p, &LinkParams::default(), &mut rng).unwrap();
        assert_eq!(out.success, vec![true, true]);
        assert_eq!(out.decode_order, vec![1, 0]);
        let p = PowerAllocation(array![[5.0, 0.0], [0.0, 5.0]]);
        let out = run_uplink(g.view(), &p, &LinkParams::default(), &mut rng).unwrap();
        assert_eq!(out.decode_order, vec![0, 1]);
    }

    #[test]
    fn failure_aborts_remaining_sensors() {
        // Two equal sensors on one channel: the first attempt has SINR ~1 and fails.
        let mut rng = substream(4, Substream::Decode);
        let g = array![[1.0], [1.0]];
        let p = PowerAllocation(array![[1.0], [1.0]]);
        let out = run_uplink(g.view(), &p, &LinkParams::default(), &mut rng).unwrap();
        assert_eq!(out.success, vec![false, false]);
        assert_eq!(out.decode_order, vec![0]);
    }

    #[test]
    fn replay_is_bit_identical() {
        let g = array![[0.02, 0.3], [0.1, 0.001], [0.3, 0.3]];
        let p = PowerAllocation(array![[1.0, 3.0], [10.0, 0.0], [0.2, 0.2]]);
        let run = |seed| {
            let mut rng = substream(seed, Substream::Decode);
            (0..200)
                .map(|_| run_uplink(g.view(), &p, &LinkParams::default(), &mut rng).unwrap().success)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn orthogonal_sensors_unaffected_by_neighbour_power() {
        // Disjoint subchannels; sensor 0 stays the first attempt (SINR 3.5) while
        // sensor 1 is boosted from SINR 1 to 3.
        let g = array![[0.1, 1e-4], [1e-4, 0.1]];
        let base = PowerAllocation(array![[0.35, 0.0], [0.0, 0.1]]);
        let boosted = PowerAllocation(array![[0.35, 0.0], [0.0, 0.3]]);
        let mut delivered = 0;
        for seed in 0..2000 {
            let a = run_uplink(g.view(), &base, &LinkParams::default(), &mut substream(seed, Substream::Decode)).unwrap();
            let b = run_uplink(g.view(), &boosted, &LinkParams::default(), &mut substream(seed, Substream::Decode)).unwrap();
            assert_eq!(a.decode_order[0], 0);
            assert_eq!(b.decode_order[0], 0);
            if a.success[0] {
                assert!(b.success[0]);
                delivered += 1;
            }
        }
        assert!(delivered > 0);
    }
}
