//! Extended Kalman filter: Euler propagation, Jacobians, the stochastic
//! correction used at execution time and the observation-marginalized update
//! used for planning.
//!
//! Observation Jacobians are `p × n` (rows index observations), so the gain
//! is `K = H w_sᵀ (w_s H w_sᵀ + W)⁻¹` and the posterior covariance is
//! `H − K w_s H`.

use nalgebra::{DMatrix, DVector};

use crate::belief::GaussianBelief;
use crate::error::{Error, Result};
use crate::linalg::{all_finite, all_finite_vec, check_dims, regularized_cholesky, symmetrize};
use crate::numdiff;

/// Stochastic dynamics `ds = f(s, a) dt + q(s, a) dξ` integrated with step `τ`.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn timestep(&self) -> f64;
    fn drift(&self, s: &DVector<f64>, a: &DVector<f64>) -> DVector<f64>;
    /// Diffusion matrix `q` (`n × k`); the per-step covariance is `τ q qᵀ`.
    fn noise_map(&self, s: &DVector<f64>, a: &DVector<f64>) -> DMatrix<f64>;

    /// Analytic `∂f/∂s`, if the model has one.
    fn drift_jacobian(&self, _s: &DVector<f64>, _a: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }

    fn process_cov(&self, s: &DVector<f64>, a: &DVector<f64>) -> DMatrix<f64> {
        let q = self.noise_map(s, a);
        (&q * q.transpose()) * self.timestep()
    }
}

/// Gaussian observations `z ~ N(w(s), W(s, a))`.
pub trait Observation: Send + Sync {
    fn obs_dim(&self) -> usize;
    fn mean(&self, s: &DVector<f64>) -> DVector<f64>;
    fn noise_cov(&self, s: &DVector<f64>, a: &DVector<f64>) -> DMatrix<f64>;

    /// Analytic `∂w/∂s` (`p × n`), if the model has one.
    fn jacobian(&self, _s: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

/// `F(s, a) = s + τ f(s, a)`.
pub fn euler_step(s: &DVector<f64>, a: &DVector<f64>, dynamics: &dyn Dynamics) -> Result<DVector<f64>> {
    let drift = dynamics.drift(s, a);
    if !all_finite_vec(&drift) {
        return Err(Error::NonFinite("drift"));
    }
    Ok(s + drift * dynamics.timestep())
}

/// `F_s = ∂F/∂s` at `(s, a)`.
pub fn dynamics_jacobian(s: &DVector<f64>, a: &DVector<f64>, dynamics: &dyn Dynamics) -> Result<DMatrix<f64>> {
    let n = s.len();
    let jac = match dynamics.drift_jacobian(s, a) {
        Some(fs) => DMatrix::identity(n, n) + fs * dynamics.timestep(),
        None => numdiff::jacobian(s, n, |x| euler_step(x, a, dynamics))?,
    };
    if !all_finite(&jac) {
        return Err(Error::NonFinite("dynamics jacobian"));
    }
    Ok(jac)
}

/// `w_s = ∂w/∂s` at `s`.
pub fn observation_jacobian(s: &DVector<f64>, observation: &dyn Observation) -> Result<DMatrix<f64>> {
    let jac = match observation.jacobian(s) {
        Some(ws) => ws,
        None => numdiff::jacobian::<Error, _>(s, observation.obs_dim(), |x| Ok(observation.mean(x)))?,
    };
    if !all_finite(&jac) {
        return Err(Error::NonFinite("observation jacobian"));
    }
    Ok(jac)
}

/// Both Jacobians at the same point.
pub fn jacobians(
    s: &DVector<f64>,
    a: &DVector<f64>,
    dynamics: &dyn Dynamics,
    observation: &dyn Observation,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    Ok((
        dynamics_jacobian(s, a, dynamics)?,
        observation_jacobian(s, observation)?,
    ))
}

/// Predicted mean and uncorrected covariance `H = F_s Σ F_sᵀ + Q`.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub fn ekf_predict(b: &GaussianBelief, a: &DVector<f64>, dynamics: &dyn Dynamics) -> Result<Prediction> {
    check_dims("state dimension", dynamics.state_dim(), b.dim())?;
    check_dims("action dimension", dynamics.action_dim(), a.len())?;
    let mean = euler_step(&b.mean, a, dynamics)?;
    let fs = dynamics_jacobian(&b.mean, a, dynamics)?;
    let h = symmetrize(&(&fs * &b.cov * fs.transpose() + dynamics.process_cov(&b.mean, a)));
    if !all_finite(&h) {
        return Err(Error::NonFinite("predicted covariance"));
    }
    let floor = -1e-8 * (1.0 + h.trace().abs());
    if h.diagonal().iter().any(|&d| d < floor) {
        return Err(Error::NotPsd("predicted covariance"));
    }
    Ok(Prediction { mean, cov: h })
}

/// Innovation statistics of a correction, kept for mixture reweighting.
#[derive(Debug, Clone)]
pub struct Innovation {
    /// Predicted observation `w(F(ŝ, a))`.
    pub expected: DVector<f64>,
    /// Innovation covariance `w_s H w_sᵀ + W`.
    pub cov: DMatrix<f64>,
}

impl Innovation {
    /// Gaussian log-density of `z` under the innovation distribution.
    pub fn log_likelihood(&self, z: &DVector<f64>) -> Result<f64> {
        let chol = regularized_cholesky(&self.cov)?;
        let r = z - &self.expected;
        let maha = r.dot(&chol.solve(&r));
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let p = r.len() as f64;
        Ok(-0.5 * (maha + log_det + p * (2.0 * std::f64::consts::PI).ln()))
    }
}

/// Measurement update of a prediction. `z = None` marginalizes the
/// observation (the innovation term is identically zero).
pub fn correct_prediction(
    pred: &Prediction,
    a: &DVector<f64>,
    z: Option<&DVector<f64>>,
    observation: &dyn Observation,
) -> Result<(GaussianBelief, Innovation)> {
    let p = observation.obs_dim();
    let ws = observation_jacobian(&pred.mean, observation)?;
    check_dims("observation jacobian rows", p, ws.nrows())?;
    let w_noise = observation.noise_cov(&pred.mean, a);
    check_dims("observation noise", p, w_noise.nrows())?;
    let ws_h = &ws * &pred.cov;
    let s = symmetrize(&(&ws_h * ws.transpose() + w_noise));
    let chol = regularized_cholesky(&s)?;
    // K = H w_sᵀ S⁻¹ = (S⁻¹ w_s H)ᵀ since H and S are symmetric.
    let gain = chol.solve(&ws_h).transpose();
    let expected = observation.mean(&pred.mean);
    let mean = match z {
        Some(z) => {
            check_dims("observation", p, z.len())?;
            &pred.mean + &gain * (z - &expected)
        }
        None => pred.mean.clone(),
    };
    let cov = symmetrize(&(&pred.cov - &gain * &ws_h));
    if !all_finite_vec(&mean) || !all_finite(&cov) {
        return Err(Error::NonFinite("corrected belief"));
    }
    Ok((GaussianBelief { mean, cov }, Innovation { expected, cov: s }))
}

/// Stochastic EKF update with an actual observation `z` of the next state.
pub fn ekf_correct(
    b: &GaussianBelief,
    a: &DVector<f64>,
    z: &DVector<f64>,
    dynamics: &dyn Dynamics,
    observation: &dyn Observation,
) -> Result<GaussianBelief> {
    let pred = ekf_predict(b, a, dynamics)?;
    correct_prediction(&pred, a, Some(z), observation).map(|(g, _)| g)
}

/// Deterministic belief update `{F(ŝ, a), Ψ(ŝ, Σ, a)}`.
pub fn marginalized_update(
    b: &GaussianBelief,
    a: &DVector<f64>,
    dynamics: &dyn Dynamics,
    observation: &dyn Observation,
) -> Result<GaussianBelief> {
    let pred = ekf_predict(b, a, dynamics)?;
    correct_prediction(&pred, a, None, observation).map(|(g, _)| g)
}
