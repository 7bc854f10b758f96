//! Finite-state Markov block fading.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on explicit joint-chain size.
pub const MAX_JOINT_STATES: u128 = 1_000_000;

/// Quantized channel power gains, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainAlphabet {
    levels: Vec<f64>,
}

impl Default for GainAlphabet {
    /// `{10^-4, 10^-3.5, …, 10^-0.5}`
    fn default() -> Self {
        Self::log_spaced(8, -4.0, -0.5)
    }
}

impl GainAlphabet {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::config("gain_levels", "at least one level required"));
        }
        if levels.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(Error::config("gain_levels", "levels must be positive and finite"));
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("gain_levels", "levels must be strictly increasing"));
        }
        Ok(Self { levels })
    }

    /// `psi` levels evenly spaced in log10 between `10^min_exp` and `10^max_exp`.
    pub fn log_spaced(psi: usize, min_exp: f64, max_exp: f64) -> Self {
        let levels = if psi == 1 {
            vec![10f64.powf(max_exp)]
        } else {
            (0..psi)
                .map(|i| 10f64.powf(min_exp + (max_exp - min_exp) * i as f64 / (psi - 1) as f64))
                .collect()
        };
        Self { levels }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> f64 {
        self.levels[i]
    }

    /// log10 position of `g` within the alphabet range, mapped to `[0, 1]`.
    pub fn normalize(&self, g: f64) -> f64 {
        let lo = self.levels[0].log10();
        let hi = self.levels[self.levels.len() - 1].log10();
        if hi <= lo {
            return 0.0;
        }
        ((g.log10() - lo) / (hi - lo)).clamp(0.0, 1.0)
    }
}

/// Row-stochastic matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    size: usize,
    data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let size = rows.len();
        if size == 0 || rows.iter().any(|r| r.len() != size) {
            return Err(Error::Shape("transition matrix must be square and non-empty".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            let sum: f64 = r.iter().sum();
            if r.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Shape(format!("row {i} is not a probability vector (sum {sum})")));
            }
        }
        Ok(Self {
            size,
            data: rows.concat(),
        })
    }

    pub fn identity(size: usize) -> Self {
        let mut data = vec![0.0; size * size];
        for i in 0..size {
            data[i * size + i] = 1.0;
        }
        Self { size, data }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.size).map(|i| self.row(i).to_vec()).collect()
    }
}

/// I.i.d. `U(0,1)` entries, each row normalized to one.
pub fn sample_transition_matrix<R: Rng + ?Sized>(size: usize, rng: &mut R) -> TransitionMatrix {
    let mut data = Vec::with_capacity(size * size);
    for _ in 0..size {
        let row: Vec<f64> = (0..size).map(|_| rng.random::<f64>()).collect();
        let sum: f64 = row.iter().sum();
        data.extend(row.iter().map(|p| p / sum));
    }
    TransitionMatrix { size, data }
}

/// Inverse-CDF draw from a probability row.
pub fn sample_row<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // Rounding left u above the last partial sum: take the last reachable state.
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Left Perron vector by power iteration from the uniform distribution.
pub fn stationary_distribution(t: &TransitionMatrix) -> Result<Vec<f64>> {
    const MAX_ITER: usize = 1_000_000;
    let n = t.size();
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..MAX_ITER {
        next.iter_mut().for_each(|v| *v = 0.0);
        for (i, &w) in pi.iter().enumerate() {
            for (acc, &p) in next.iter_mut().zip(t.row(i)) {
                *acc += w * p;
            }
        }
        let sum: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= sum);
        let delta: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if delta < 1e-12 {
            return Ok(pi);
        }
    }
    Err(Error::StationaryNonConvergence(MAX_ITER))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelChain {
    pub transition: TransitionMatrix,
    pub state: usize,
}

impl ChannelChain {
    pub fn new(transition: TransitionMatrix, state: usize) -> Result<Self> {
        if state >= transition.size() {
            return Err(Error::IndexOutOfRange {
                index: state,
                limit: transition.size(),
            });
        }
        Ok(Self { transition, state })
    }

    /// Chain started from its stationary distribution.
    pub fn stationary_start<R: Rng + ?Sized>(transition: TransitionMatrix, rng: &mut R) -> Result<Self> {
        let pi = stationary_distribution(&transition)?;
        let state = sample_row(&pi, rng);
        Ok(Self { transition, state })
    }

    pub fn size(&self) -> usize {
        self.transition.size()
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        self.state = sample_row(self.transition.row(self.state), rng);
        self.state
    }
}

/// `psi^m`, refusing sizes above [`MAX_JOINT_STATES`].
pub fn joint_state_count(psi: usize, m: usize) -> Result<usize> {
    let states = (psi as u128).checked_pow(m as u32).unwrap_or(u128::MAX);
    if states > MAX_JOINT_STATES {
        return Err(Error::ChainTooLarge {
            states,
            limit: MAX_JOINT_STATES,
        });
    }
    Ok(states as usize)
}

/// Base-`psi` digits of a joint index, channel 0 least significant.
pub fn digits_of_state(index: usize, psi: usize, m: usize) -> Result<Vec<usize>> {
    let limit = joint_state_count(psi, m)?;
    if index >= limit {
        return Err(Error::IndexOutOfRange { index, limit });
    }
    let mut rest = index;
    Ok((0..m)
        .map(|_| {
            let d = rest % psi;
            rest /= psi;
            d
        })
        .collect())
}

pub fn state_of_digits(digits: &[usize], psi: usize) -> usize {
    digits.iter().rev().fold(0, |acc, &d| acc * psi + d)
}

pub fn gains_of_state(index: usize, alphabet: &GainAlphabet, m: usize) -> Result<Vec<f64>> {
    Ok(digits_of_state(index, alphabet.len(), m)?
        .into_iter()
        .map(|d| alphabet.level(d))
        .collect())
}

/// A sensor's M-channel uplink gain process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum UplinkChannel {
    /// One independent ψ-state chain per subchannel.
    Factorized(Vec<ChannelChain>),
    /// One ψ^M-state chain over the whole gain vector.
    Joint { chain: ChannelChain, psi: usize, m: usize },
}

impl UplinkChannel {
    pub fn channels(&self) -> usize {
        match self {
            UplinkChannel::Factorized(chains) => chains.len(),
            UplinkChannel::Joint { m, .. } => *m,
        }
    }

    /// Per-channel level indices.
    pub fn level_indices(&self) -> Vec<usize> {
        match self {
            UplinkChannel::Factorized(chains) => chains.iter().map(|c| c.state).collect(),
            UplinkChannel::Joint { chain, psi, m } => {
                digits_of_state(chain.state, *psi, *m).expect("joint state within range by construction")
            }
        }
    }

    pub fn gains(&self, alphabet: &GainAlphabet) -> Vec<f64> {
        self.level_indices().into_iter().map(|i| alphabet.level(i)).collect()
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        match self {
            UplinkChannel::Factorized(chains) => chains.iter_mut().for_each(|c| {
                c.step(rng);
            }),
            UplinkChannel::Joint { chain, .. } => {
                chain.step(rng);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Substream};
    use proptest::prelude::*;

    #[test]
    fn default_alphabet_matches_table() {
        let g = GainAlphabet::default();
        assert_eq!(g.len(), 8);
        for (i, &l) in g.levels().iter().enumerate() {
            let e = -4.0 + 0.5 * i as f64;
            assert!((l - 10f64.powf(e)).abs() < 1e-15);
        }
        assert!(GainAlphabet::new(vec![1.0, 1.0]).is_err());
        assert!(GainAlphabet::new(vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn transition_sampling() {
        let mut rng = substream(1, Substream::ChannelGen);
        assert_eq!(sample_transition_matrix(1, &mut rng).rows(), vec![vec![1.0]]);
        let t = sample_transition_matrix(8, &mut rng);
        for i in 0..8 {
            assert!((t.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(t.row(i).iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn stationary_matches_long_run_frequencies() {
        let mut rng = substream(2, Substream::ChannelGen);
        let t = sample_transition_matrix(4, &mut rng);
        let pi = stationary_distribution(&t).unwrap();
        let mut chain = ChannelChain::new(t, 0).unwrap();
        let mut visits = [0usize; 4];
        let steps = 1_000_000;
        for _ in 0..steps {
            visits[chain.step(&mut rng)] += 1;
        }
        for s in 0..4 {
            assert!((visits[s] as f64 / steps as f64 - pi[s]).abs() < 0.01);
        }
    }

    #[test]
    fn stationary_examples() {
        let half = TransitionMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let pi = stationary_distribution(&half).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-12);
        let sticky = TransitionMatrix::from_rows(&[vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
        let pi = stationary_distribution(&sticky).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-12 && (pi[1] - 0.5).abs() < 1e-12);
        let mut rng = substream(3, Substream::ChannelGen);
        let t = sample_transition_matrix(8, &mut rng);
        let pi = stationary_distribution(&t).unwrap();
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for j in 0..8 {
            let pj: f64 = (0..8).map(|i| pi[i] * t.get(i, j)).sum();
            assert!((pj - pi[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn identity_and_point_mass_chains() {
        let mut rng = substream(4, Substream::ChannelGen);
        let mut c = ChannelChain::new(TransitionMatrix::identity(5), 3).unwrap();
        for _ in 0..1000 {
            assert_eq!(c.step(&mut rng), 3);
        }
        let mut rows = vec![vec![0.0; 4]; 4];
        for r in rows.iter_mut() {
            r[1] = 1.0;
        }
        let mut c = ChannelChain::new(TransitionMatrix::from_rows(&rows).unwrap(), 0).unwrap();
        assert_eq!(c.step(&mut rng), 1);
        assert!(ChannelChain::new(TransitionMatrix::identity(2), 2).is_err());
    }

    #[test]
    fn empirical_rows_match_transition() {
        let mut rng = substream(5, Substream::ChannelGen);
        let t = sample_transition_matrix(8, &mut rng);
        let mut counts = vec![vec![0usize; 8]; 8];
        let mut chain = ChannelChain::new(t.clone(), 0).unwrap();
        for _ in 0..800_000 {
            let from = chain.state;
            let to = chain.step(&mut rng);
            counts[from][to] += 1;
        }
        for i in 0..8 {
            let n: usize = counts[i].iter().sum();
            assert!(n >= 50_000);
            for j in 0..8 {
                assert!((counts[i][j] as f64 / n as f64 - t.get(i, j)).abs() < 0.02);
            }
        }
    }

    #[test]
    fn digit_bijection_exhaustive() {
        let alphabet = GainAlphabet::default();
        for i in 0..512 {
            let d = digits_of_state(i, 8, 3).unwrap();
            assert_eq!(state_of_digits(&d, 8), i);
        }
        assert_eq!(gains_of_state(0, &alphabet, 3).unwrap(), vec![alphabet.level(0); 3]);
        assert_eq!(gains_of_state(511, &alphabet, 3).unwrap(), vec![alphabet.level(7); 3]);
        assert!(matches!(gains_of_state(512, &alphabet, 3), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(joint_state_count(8, 10), Err(Error::ChainTooLarge { .. })));
        assert_eq!(joint_state_count(8, 3).unwrap(), 512);
    }

    #[test]
    fn sensor_streams_are_independent() {
        let build = |seed_b: u64| {
            let mut gen = substream(0, Substream::ChannelGen);
            let mut chains: Vec<ChannelChain> = (0..2)
                .map(|_| ChannelChain::new(sample_transition_matrix(4, &mut gen), 0).unwrap())
                .collect();
            let mut ra = substream(100, Substream::Channels(0));
            let mut rb = substream(seed_b, Substream::Channels(1));
            let mut trace = Vec::new();
            for _ in 0..200 {
                trace.push(chains[0].step(&mut ra));
                chains[1].step(&mut rb);
            }
            trace
        };
        assert_eq!(build(1), build(2));
    }

    proptest! {
        #[test]
        fn normalized_gain_in_unit_interval(i in 0usize..8) {
            let g = GainAlphabet::default();
            let v = g.normalize(g.level(i));
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!((v - i as f64 / 7.0).abs() < 1e-12);
        }
    }
}
