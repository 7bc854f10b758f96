use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Raw affine output (the critic uses one output).
    Linear { outputs: usize },
    /// `groups` power vectors of `channels` entries each. Every group reads
    /// `1 + channels` raw values `[s, z_1..z_M]` and emits
    /// `sigmoid(s)·budget·softmax(z)`.
    Power { groups: usize, channels: usize, budget: f64 },
}

impl Head {
    pub fn power(groups: usize, channels: usize, budget: f64) -> Self {
        Head::Power {
            groups,
            channels,
            budget,
        }
    }

    pub fn raw_dim(&self) -> usize {
        match *self {
            Head::Linear { outputs } => outputs,
            Head::Power { groups, channels, .. } => groups * (1 + channels),
        }
    }

    pub fn output_dim(&self) -> usize {
        match *self {
            Head::Linear { outputs } => outputs,
            Head::Power { groups, channels, .. } => groups * channels,
        }
    }

    pub fn apply(&self, raw: ArrayView2<f64>) -> Array2<f64> {
        match *self {
            Head::Linear { .. } => raw.to_owned(),
            Head::Power {
                groups,
                channels,
                budget,
            } => {
                let mut out = Array2::zeros((raw.nrows(), groups * channels));
                for (r, row) in raw.rows().into_iter().enumerate() {
                    let row = row.to_vec();
                    for g in 0..groups {
                        let block = &row[g * (1 + channels)..(g + 1) * (1 + channels)];
                        let p = power_head(block[0], &block[1..], budget);
                        for (m, v) in p.into_iter().enumerate() {
                            out[(r, g * channels + m)] = v;
                        }
                    }
                }
                out
            }
        }
    }

    /// Maps a gradient on the head output back to the raw output.
    pub fn backward(&self, raw: ArrayView2<f64>, grad_out: ArrayView2<f64>) -> Result<Array2<f64>> {
        if raw.ncols() != self.raw_dim() || grad_out.ncols() != self.output_dim() || raw.nrows() != grad_out.nrows() {
            return Err(Error::Shape(format!(
                "head backward: raw {:?}, grad {:?}",
                raw.dim(),
                grad_out.dim()
            )));
        }
        match *self {
            Head::Linear { .. } => Ok(grad_out.to_owned()),
            Head::Power {
                groups,
                channels,
                budget,
            } => {
                let mut grad_raw = Array2::zeros(raw.raw_dim());
                for r in 0..raw.nrows() {
                    for g in 0..groups {
                        let base = g * (1 + channels);
                        let s = raw[(r, base)];
                        let z: Vec<f64> = (0..channels).map(|m| raw[(r, base + 1 + m)]).collect();
                        let shares = softmax(&z);
                        let sig = sigmoid(s);
                        let total = sig * budget;
                        let upstream: Vec<f64> = (0..channels).map(|m| grad_out[(r, g * channels + m)]).collect();
                        let weighted: f64 = upstream.iter().zip(&shares).map(|(u, p)| u * p).sum();
                        grad_raw[(r, base)] = weighted * sig * (1.0 - sig) * budget;
                        for m in 0..channels {
                            grad_raw[(r, base + 1 + m)] = total * shares[m] * (upstream[m] - weighted);
                        }
                    }
                }
                Ok(grad_raw)
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Power vector from the two heads: total power `sigmoid(s)·budget` split by
/// `softmax(z)`. Entries are nonnegative and sum to at most `budget`.
pub fn power_head(s: f64, z: &[f64], budget: f64) -> Vec<f64> {
    let total = sigmoid(s) * budget;
    softmax(z).into_iter().map(|p| total * p).collect()
}
