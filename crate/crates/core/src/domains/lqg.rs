//! Linear-Gaussian test problems with quadratic reward.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{DomainSpec, Scene};
use crate::belief::{Belief, GaussianBelief, Layout};
use crate::error::{Error, Result};
use crate::filter::{Dynamics, Observation};
use crate::linalg::{project_psd, psd_sqrt};
use crate::reward::QuadraticReward;

/// Row-major matrices; `a` is the one-step transition `s' = a·s + b·u + ε`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LqgParams {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    /// Process-noise covariance per step.
    pub process_cov: Vec<Vec<f64>>,
    pub observation_cov: Vec<Vec<f64>>,
    pub state_weight: Vec<Vec<f64>>,
    pub action_weight: Vec<Vec<f64>>,
    pub terminal_weight: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    pub initial_mean: Vec<f64>,
    pub initial_cov: Vec<Vec<f64>>,
    pub horizon: usize,
    pub timestep: f64,
}

/// Discrete linear dynamics expressed as an Euler drift.
#[derive(Debug, Clone)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub noise_root: DMatrix<f64>,
    pub timestep: f64,
}

impl Dynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn action_dim(&self) -> usize {
        self.b.ncols()
    }
    fn timestep(&self) -> f64 {
        self.timestep
    }
    fn drift(&self, s: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        (&self.a * s - s + &self.b * a) / self.timestep
    }
    fn noise_map(&self, _s: &DVector<f64>, _a: &DVector<f64>) -> DMatrix<f64> {
        &self.noise_root / self.timestep.sqrt()
    }
    fn drift_jacobian(&self, _s: &DVector<f64>, _a: &DVector<f64>) -> Option<DMatrix<f64>> {
        let n = self.a.nrows();
        Some((&self.a - DMatrix::identity(n, n)) / self.timestep)
    }
}

#[derive(Debug, Clone)]
pub struct LinearSensor {
    pub c: DMatrix<f64>,
    pub cov: DMatrix<f64>,
}

impl Observation for LinearSensor {
    fn obs_dim(&self) -> usize {
        self.c.nrows()
    }
    fn mean(&self, s: &DVector<f64>) -> DVector<f64> {
        &self.c * s
    }
    fn noise_cov(&self, _s: &DVector<f64>, _a: &DVector<f64>) -> DMatrix<f64> {
        self.cov.clone()
    }
    fn jacobian(&self, _s: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.c.clone())
    }
}

struct TargetDistance(DVector<f64>);

impl Scene for TargetDistance {
    fn terminal_error(&self, s: &DVector<f64>) -> f64 {
        (s - &self.0).norm()
    }
}

fn matrix(name: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidParameter(format!(
            "{name} must be {nrows}×{ncols}"
        )));
    }
    let m = DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]);
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(format!("{name} has non-finite entries")));
    }
    Ok(m)
}

fn vector(name: &str, v: &[f64], n: usize) -> Result<DVector<f64>> {
    if v.len() != n || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(format!("{name} must have {n} finite entries")));
    }
    Ok(DVector::from_column_slice(v))
}

fn symmetric_psd(name: &str, rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>> {
    let m = matrix(name, rows, n, n)?;
    if (&m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
        return Err(Error::InvalidParameter(format!("{name} must be symmetric")));
    }
    if (&m - project_psd(&m)).amax() > 1e-9 * (1.0 + m.amax()) {
        return Err(Error::InvalidParameter(format!("{name} must be positive semidefinite")));
    }
    Ok(m)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn make_lqg(params: &LqgParams) -> Result<DomainSpec> {
    let p = params;
    let n = p.a.len();
    let m = p.b.first().map_or(0, Vec::len);
    let k = p.c.len();
    if n == 0 || m == 0 || k == 0 {
        return Err(Error::InvalidParameter("empty system matrices".into()));
    }
    if !(p.timestep > 0.0 && p.timestep.is_finite()) {
        return Err(Error::InvalidParameter("timestep must be positive".into()));
    }
    let a = matrix("a", &p.a, n, n)?;
    let b = matrix("b", &p.b, n, m)?;
    let c = matrix("c", &p.c, k, n)?;
    let q = symmetric_psd("process_cov", &p.process_cov, n)?;
    let w = symmetric_psd("observation_cov", &p.observation_cov, k)?;
    if w.clone().cholesky().is_none() {
        return Err(Error::InvalidParameter("observation_cov must be positive definite".into()));
    }
    let reward = QuadraticReward {
        state_weight: symmetric_psd("state_weight", &p.state_weight, n)?,
        action_weight: symmetric_psd("action_weight", &p.action_weight, m)?,
        terminal_weight: symmetric_psd("terminal_weight", &p.terminal_weight, n)?,
        target: vector("target", &p.target, n)?,
    };
    let mean = vector("initial_mean", &p.initial_mean, n)?;
    let cov = symmetric_psd("initial_cov", &p.initial_cov, n)?;
    let spec = DomainSpec {
        name: "lqg".into(),
        dynamics: Arc::new(LinearDynamics {
            a,
            b,
            noise_root: psd_sqrt(&q),
            timestep: p.timestep,
        }),
        observation: Arc::new(LinearSensor { c, cov: w }),
        constraint: None,
        scene: Arc::new(TargetDistance(reward.target.clone())),
        reward: Arc::new(reward),
        horizon: p.horizon,
        initial_belief: Belief::Gaussian(GaussianBelief::new(mean, cov)?),
        layout: Layout::full(n),
        initial_actions: None,
    };
    spec.validate()?;
    Ok(spec)
}

impl LqgParams {
    /// Deterministic, mildly unstable and fully actuated-by-coupling system
    /// used as a reference problem.
    pub fn test_system(n: usize, m: usize) -> Self {
        let a = DMatrix::from_fn(n, n, |i, j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            delta + 0.05 * ((i + 2 * j) as f64).sin()
        });
        let b = DMatrix::from_fn(n, m, |i, j| {
            let base = if i % m.max(1) == j { 0.2 } else { 0.0 };
            base + 0.03 * ((i * m + j) as f64).cos()
        });
        let c = DMatrix::<f64>::identity(n, n);
        let eye = |k: usize, s: f64| rows(&(DMatrix::<f64>::identity(k, k) * s));
        Self {
            a: rows(&a),
            b: rows(&b),
            c: rows(&c),
            process_cov: eye(n, 0.01),
            observation_cov: eye(n, 0.1),
            state_weight: eye(n, 1.0),
            action_weight: eye(m, 0.1),
            terminal_weight: eye(n, 10.0),
            target: vec![0.0; n],
            initial_mean: (0..n).map(|i| 1.0 - 0.1 * i as f64).collect(),
            initial_cov: eye(n, 0.5),
            horizon: 20,
            timestep: 0.1,
        }
    }
}

impl Default for LqgParams {
    fn default() -> Self {
        Self::test_system(2, 1)
    }
}

/// [`LqgParams::test_system`] as a domain.
pub fn make_lqg_test(n: usize, m: usize) -> Result<DomainSpec> {
    make_lqg(&LqgParams::test_system(n, m))
}
