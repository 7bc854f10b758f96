//! Covariance-level remote estimation: steady-state local Kalman error,
//! age-of-information bookkeeping and the per-slot estimation cost.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

pub const DEFAULT_TAU_MAX: u32 = 50;
pub const DEFAULT_COST_CAP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

/// Linear plant observed by one smart sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessModel {
    pub a: Mat,
    pub c: Mat,
    /// Process noise covariance.
    pub omega: Mat,
    /// Measurement noise covariance.
    pub theta: Mat,
    /// Steady-state posterior error covariance of the local filter.
    pub p_bar: Mat,
}

impl ProcessModel {
    pub fn new(a: Mat, c: Mat, omega: Mat, theta: Mat, opts: RiccatiOptions) -> Result<Self> {
        let p_bar = steady_state_covariance(&a, &c, &omega, &theta, opts)?;
        Ok(Self {
            a,
            c,
            omega,
            theta,
            p_bar,
        })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// One posterior-form Riccati update; `p_bar` is a fixed point of it.
    pub fn riccati_posterior_update(&self, p: &Mat) -> Result<Mat> {
        let prior = lyapunov_step(p, &self.a, &self.omega)?;
        measurement_update(&prior, &self.c, &self.theta)
    }
}

fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

fn check_square(name: &str, m: &Mat, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::Shape(format!(
            "{name} is {}x{}, expected {n}x{n}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// `P - P Cᵀ (C P Cᵀ + Θ)⁻¹ C P`, symmetrized.
fn measurement_update(prior: &Mat, c: &Mat, theta: &Mat) -> Result<Mat> {
    let innovation = c * prior * c.transpose() + theta;
    let chol = innovation
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPsd {
            min_eigenvalue: innovation.symmetric_eigenvalues().min(),
        })?;
    let pc = prior * c.transpose();
    let gain_t = chol.solve(&pc.transpose());
    Ok(symmetrize(&(prior - &pc * gain_t)))
}

/// Solves the filtering Riccati recursion by fixed-point iteration on the
/// prior covariance (started at Ω) and returns the posterior covariance at
/// the fixed point.
///
/// Errors carry `sensor = 0`; callers that know the sensor index rewrite it.
pub fn steady_state_covariance(
    a: &Mat,
    c: &Mat,
    omega: &Mat,
    theta: &Mat,
    opts: RiccatiOptions,
) -> Result<Mat> {
    let n = a.nrows();
    check_square("A", a, n)?;
    check_square("Omega", omega, n)?;
    if c.ncols() != n {
        return Err(Error::Shape(format!("C has {} columns, state dim is {n}", c.ncols())));
    }
    check_square("Theta", theta, c.nrows())?;

    let mut prior = omega.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let post = measurement_update(&prior, c, theta)?;
        let next = symmetrize(&(a * &post * a.transpose() + omega));
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Riccati iterate".into()));
        }
        let min_eig = next.symmetric_eigenvalues().min();
        if min_eig < -opts.tol {
            return Err(Error::NotPsd {
                min_eigenvalue: min_eig,
            });
        }
        residual = (&next - &prior).norm() / next.norm().max(f64::MIN_POSITIVE);
        prior = next;
        if residual < opts.tol {
            return measurement_update(&prior, c, theta);
        }
    }
    Err(Error::RiccatiNonConvergence {
        sensor: 0,
        iterations: opts.max_iter,
        residual,
    })
}

/// `A P Aᵀ + Ω`, symmetrized.
pub fn lyapunov_step(p: &Mat, a: &Mat, omega: &Mat) -> Result<Mat> {
    let n = a.nrows();
    check_square("A", a, n)?;
    check_square("P", p, n)?;
    check_square("Omega", omega, n)?;
    Ok(symmetrize(&(a * p * a.transpose() + omega)))
}

/// AoI recursion, saturating at `tau_max`.
pub fn aoi_update(tau_prev: u32, success: bool, tau_max: u32) -> u32 {
    if success {
        0
    } else {
        tau_prev.saturating_add(1).min(tau_max)
    }
}

/// One Lyapunov step that holds once the trace reaches `cost_cap` (or the
/// next iterate would not be finite), so covariances never overflow.
pub fn lyapunov_step_saturating(p: &Mat, model: &ProcessModel, cost_cap: f64) -> Mat {
    if p.trace() >= cost_cap {
        return p.clone();
    }
    match lyapunov_step(p, &model.a, &model.omega) {
        Ok(next) if next.iter().all(|v| v.is_finite()) => next,
        _ => p.clone(),
    }
}

/// `h^tau(P̄)` with saturation at `cost_cap`.
pub fn error_covariance(tau: u32, model: &ProcessModel, cost_cap: f64) -> Mat {
    let mut p = model.p_bar.clone();
    for _ in 0..tau {
        p = lyapunov_step_saturating(&p, model, cost_cap);
    }
    p
}

/// Memoized `h^tau(P̄)` for `tau ∈ [0, tau_max]` of one sensor.
#[derive(Debug, Clone)]
pub struct CovarianceTable {
    covariances: Vec<Mat>,
    costs: Vec<f64>,
    cost_cap: f64,
}

impl CovarianceTable {
    pub fn new(model: &ProcessModel, tau_max: u32, cost_cap: f64) -> Self {
        let mut covariances = Vec::with_capacity(tau_max as usize + 1);
        covariances.push(model.p_bar.clone());
        for t in 1..=tau_max as usize {
            let next = lyapunov_step_saturating(&covariances[t - 1], model, cost_cap);
            covariances.push(next);
        }
        let costs = covariances.iter().map(|p| p.trace().min(cost_cap)).collect();
        Self {
            covariances,
            costs,
            cost_cap,
        }
    }

    pub fn tau_max(&self) -> u32 {
        (self.covariances.len() - 1) as u32
    }

    pub fn covariance(&self, tau: u32) -> &Mat {
        &self.covariances[(tau as usize).min(self.covariances.len() - 1)]
    }

    /// Capped `tr h^tau(P̄)`.
    pub fn cost(&self, tau: u32) -> f64 {
        self.costs[(tau as usize).min(self.costs.len() - 1)]
    }

    pub fn cost_cap(&self) -> f64 {
        self.cost_cap
    }
}

/// `Σ_n tr h^{τ_n}(P̄_n)`, each term capped at the table's cost cap.
pub fn step_cost(taus: &[u32], tables: &[CovarianceTable]) -> Result<f64> {
    if taus.len() != tables.len() {
        return Err(Error::Shape(format!(
            "{} AoI values for {} sensors",
            taus.len(),
            tables.len()
        )));
    }
    Ok(taus.iter().zip(tables).map(|(&t, table)| table.cost(t)).sum())
}

/// Remote-side state of one sensor, with the error covariance tracked
/// through the success/failure recursion rather than looked up.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorEstState {
    pub tau: u32,
    pub p: Mat,
}

impl SensorEstState {
    pub fn new(model: &ProcessModel) -> Self {
        Self {
            tau: 0,
            p: model.p_bar.clone(),
        }
    }

    pub fn advance(&mut self, success: bool, model: &ProcessModel, tau_max: u32, cost_cap: f64) {
        if success {
            self.p = model.p_bar.clone();
        } else if self.tau < tau_max {
            self.p = lyapunov_step_saturating(&self.p, model, cost_cap);
        }
        self.tau = aoi_update(self.tau, success, tau_max);
    }
}

pub fn spectral_radius(m: &Mat) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Random plant with `A = R·(ρ*/ρ(R))`, `R` i.i.d. standard normal and
/// `ρ* ~ U(radius_range)`; `C`, `Ω`, `Θ` are identities.
pub fn generate_process<R: Rng + ?Sized>(
    dim: usize,
    radius_range: (f64, f64),
    opts: RiccatiOptions,
    rng: &mut R,
) -> Result<ProcessModel> {
    if dim == 0 {
        return Err(Error::Shape("process dimension must be at least 1".into()));
    }
    let (lo, hi) = radius_range;
    let target = loop {
        let r = rng.random_range(lo..hi);
        if r > lo {
            break r;
        }
    };
    let a = loop {
        let r = Mat::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let rho = spectral_radius(&r);
        if rho > 1e-12 {
            break r * (target / rho);
        }
    };
    let eye = Mat::identity(dim, dim);
    ProcessModel::new(a, eye.clone(), eye.clone(), eye, opts)
}
