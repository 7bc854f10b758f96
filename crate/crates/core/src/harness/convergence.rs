//! Convergence of a per-episode cost curve by the normalized standard
//! deviation of its moving average.

use serde::{Deserialize, Serialize};

/// Trailing means; entry `i` averages `series[i + 1 - window ..= i]` and is
/// `None` while fewer than `window` values exist.
pub fn moving_average(series: &[f64], window: usize) -> Vec<Option<f64>> {
    assert!(window > 0, "window must be positive");
    (0..series.len())
        .map(|i| (i + 1 >= window).then(|| series[i + 1 - window..=i].iter().sum::<f64>() / window as f64))
        .collect()
}

/// Population standard deviation over absolute mean. A zero mean counts as
/// converged only when the spread is zero too.
pub fn normalized_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if mean == 0.0 {
        return if std == 0.0 { 0.0 } else { f64::INFINITY };
    }
    std / mean.abs()
}

/// N-std at every episode: at 1-based episode `e ≥ 2·window`, the
/// normalized spread of the last `window` moving-average values.
pub fn nstd_series(series: &[f64], window: usize) -> Vec<Option<f64>> {
    let ma = moving_average(series, window);
    (0..series.len())
        .map(|i| {
            let e = i + 1;
            if e < 2 * window {
                return None;
            }
            let tail: Vec<f64> = ma[e - window..e].iter().map(|v| v.expect("defined past one window")).collect();
            Some(normalized_std(&tail))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    /// First 1-based episode whose N-std fell below the threshold.
    pub episode: Option<usize>,
    pub nstd: Vec<Option<f64>>,
}

pub fn detect_convergence(series: &[f64], window: usize, threshold: f64) -> Convergence {
    let nstd = nstd_series(series, window);
    let episode = nstd.iter().position(|v| v.is_some_and(|v| v < threshold)).map(|i| i + 1);
    Convergence { episode, nstd }
}
