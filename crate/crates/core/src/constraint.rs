//! Belief update under a single unilateral constraint `Γ(s) ≥ 0`.
//!
//! The belief is a two-Gaussian mixture (see [`ConstrainedBelief`]). One
//! update runs the marginalized EKF on each component, splits each
//! component across the linearized constraint with one-sided truncated
//! normal moments, pools the feasible halves into the new free component and
//! the infeasible halves into the new surface component, and flattens the
//! surface component onto the manifold.

use nalgebra::{DMatrix, DVector};

use crate::belief::{ConstrainedBelief, GaussianBelief};
use crate::error::{Error, Result};
use crate::filter::{self, Dynamics, Observation};
use crate::linalg::{check_dims, symmetrize};
use crate::numdiff;

/// Mass below which a truncation side is treated as empty.
pub const EMPTY_SIDE_MASS: f64 = 1e-12;
/// Mass below which truncated moments are not computable.
pub const MIN_COMPUTABLE_MASS: f64 = 1e-300;
const MIN_GRADIENT_NORM: f64 = 1e-8;

/// A scalar unilateral constraint; `distance(s) ≥ 0` is feasible.
pub trait Constraint: Send + Sync {
    fn distance(&self, s: &DVector<f64>) -> f64;

    /// Analytic `∂Γ/∂s`; finite differences are used when `None`.
    fn gradient(&self, _s: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }
}

pub fn constraint_gradient(s: &DVector<f64>, constraint: &dyn Constraint) -> Result<DVector<f64>> {
    let grad = match constraint.gradient(s) {
        Some(g) => g,
        None => {
            let jac = numdiff::jacobian::<Error, _>(s, 1, |x| {
                Ok(DVector::from_element(1, constraint.distance(x)))
            })?;
            jac.row(0).transpose()
        }
    };
    check_dims("constraint gradient", s.len(), grad.len())?;
    let norm = grad.norm();
    if !norm.is_finite() {
        return Err(Error::NonFinite("constraint gradient"));
    }
    if norm <= MIN_GRADIENT_NORM {
        return Err(Error::VanishingGradient(norm));
    }
    Ok(grad)
}

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Keep `x ≥ bound`.
    Above,
    /// Keep `x ≤ bound`.
    Below,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedMoments {
    pub mean: f64,
    pub var: f64,
    /// Probability of the kept side under the untruncated normal.
    pub mass: f64,
}

/// Mean, variance and mass of `N(mu, sigma²)` restricted to one side of `bound`.
pub fn truncated_moments_1d(mu: f64, sigma: f64, side: Side, bound: f64) -> Result<TruncatedMoments> {
    if !(sigma >= 0.0) || !mu.is_finite() || !sigma.is_finite() || bound.is_nan() {
        return Err(Error::InvalidParameter(format!(
            "truncation of N({mu}, {sigma}²) at {bound}"
        )));
    }
    if sigma == 0.0 {
        let kept = match side {
            Side::Above => mu >= bound,
            Side::Below => mu <= bound,
        };
        return Ok(TruncatedMoments {
            mean: mu,
            var: 0.0,
            mass: if kept { 1.0 } else { 0.0 },
        });
    }
    let x = (bound - mu) / sigma;
    let untouched = match side {
        Side::Above => x == f64::NEG_INFINITY,
        Side::Below => x == f64::INFINITY,
    };
    if untouched {
        return Ok(TruncatedMoments {
            mean: mu,
            var: sigma * sigma,
            mass: 1.0,
        });
    }
    // Reflect `Below` onto `Above` so one tail formula covers both.
    let (t, sign) = match side {
        Side::Above => (x, 1.0),
        Side::Below => (-x, -1.0),
    };
    let mass = normal_cdf(-t);
    if !(mass >= MIN_COMPUTABLE_MASS) {
        return Err(Error::EmptyTruncation);
    }
    let lambda = normal_pdf(t) / mass;
    let var = sigma * sigma * (1.0 + t * lambda - lambda * lambda).max(0.0);
    Ok(TruncatedMoments {
        mean: mu + sign * sigma * lambda,
        var,
        mass,
    })
}

/// Two-sided moments of `N(mu, sigma²)` on `[lower, upper]`, directly from
/// the interval formula. Kept as a cross-check for the one-sided routine.
pub fn truncated_moments_interval(mu: f64, sigma: f64, lower: f64, upper: f64) -> Result<TruncatedMoments> {
    if !(sigma > 0.0) || !(lower < upper) {
        return Err(Error::InvalidParameter("interval truncation".into()));
    }
    let l = (lower - mu) / sigma;
    let u = (upper - mu) / sigma;
    let (pl, pu) = (normal_pdf(l), normal_pdf(u));
    // x·φ(x) → 0 at ±∞, but ∞·0 is NaN.
    let lpl = if l.is_finite() { l * pl } else { 0.0 };
    let upu = if u.is_finite() { u * pu } else { 0.0 };
    let mass = normal_cdf(u) - normal_cdf(l);
    if !(mass >= MIN_COMPUTABLE_MASS) {
        return Err(Error::EmptyTruncation);
    }
    let r = (pl - pu) / mass;
    Ok(TruncatedMoments {
        mean: mu + sigma * r,
        var: sigma * sigma * (1.0 + (lpl - upu) / mass - r * r),
        mass,
    })
}

/// Orthogonal frame aligned with the linearized constraint at a point.
#[derive(Debug, Clone)]
pub struct ConstraintFrame {
    /// Rows are the new axes; row `k_axis` is the unit normal `J/|J|`.
    pub rotation: DMatrix<f64>,
    pub k_axis: usize,
    /// Signed distance of the linearization point from the linearized manifold.
    pub offset: f64,
    /// Normal coordinate of the linearized manifold in the rotated frame.
    pub bound: f64,
}

impl ConstraintFrame {
    pub fn normal(&self) -> DVector<f64> {
        self.rotation.row(self.k_axis).transpose()
    }
}

/// Householder frame whose `k`-th axis is the constraint normal at `point`,
/// with `k` the dominant component of the normal.
pub fn frame_at(point: &DVector<f64>, constraint: &dyn Constraint) -> Result<ConstraintFrame> {
    let n = point.len();
    let grad = constraint_gradient(point, constraint)?;
    let norm = grad.norm();
    let normal = &grad / norm;
    let k = normal.iamax();
    // Reflection swapping e_k and the normal: R = I − 2vvᵀ/vᵀv, v = normal − e_k.
    let mut v = normal.clone();
    let others: f64 = (0..n).filter(|&i| i != k).map(|i| normal[i] * normal[i]).sum();
    v[k] = if normal[k] > 0.0 {
        -others / (normal[k] + 1.0)
    } else {
        normal[k] - 1.0
    };
    let vtv = v.dot(&v);
    let rotation = if vtv == 0.0 {
        DMatrix::identity(n, n)
    } else {
        DMatrix::identity(n, n) - (&v * v.transpose()) * (2.0 / vtv)
    };
    let offset = constraint.distance(point) / norm;
    let bound = normal.dot(point) - offset;
    if !offset.is_finite() {
        return Err(Error::NonFinite("constraint value"));
    }
    Ok(ConstraintFrame {
        rotation,
        k_axis: k,
        offset,
        bound,
    })
}

/// Constraint frame at the belief mean.
pub fn constraint_frame(b: &GaussianBelief, constraint: &dyn Constraint) -> Result<ConstraintFrame> {
    frame_at(&b.mean, constraint)
}

#[derive(Debug, Clone)]
pub struct TruncationResult {
    /// Moments of the feasible part.
    pub upper: GaussianBelief,
    /// Moments of the infeasible part, before projection onto the manifold.
    pub lower: GaussianBelief,
    pub mass_upper: f64,
}

impl TruncationResult {
    pub fn mass_lower(&self) -> f64 {
        1.0 - self.mass_upper
    }
}

/// Splits a Gaussian across the constraint linearized at its mean.
///
/// Along the normal the one-sided truncated moments are exact; the other
/// directions follow through the Gaussian regression on the normal
/// coordinate, which gives the exact first two moments of a normal truncated
/// by one half-space. A side holding less than [`EMPTY_SIDE_MASS`] is
/// returned as the Gaussian conditioned on the boundary, with zero mass.
pub fn truncate_gaussian(b: &GaussianBelief, constraint: &dyn Constraint) -> Result<TruncationResult> {
    let frame = constraint_frame(b, constraint)?;
    let r = &frame.rotation;
    let k = frame.k_axis;
    let mean_y = r * &b.mean;
    let cov_y = symmetrize(&(r * &b.cov * r.transpose()));
    let var_k = cov_y[(k, k)].max(0.0);
    let sigma = var_k.sqrt();

    let conditioned = |target_mean: f64, target_var: f64| -> GaussianBelief {
        let (my, cy) = if var_k > 0.0 {
            let beta = cov_y.column(k) / var_k;
            let my = &mean_y + &beta * (target_mean - mean_y[k]);
            let cy = &cov_y + (&beta * beta.transpose()) * (target_var - var_k);
            (my, cy)
        } else {
            let mut my = mean_y.clone();
            my[k] = target_mean;
            let mut cy = cov_y.clone();
            cy.row_mut(k).fill(0.0);
            cy.column_mut(k).fill(0.0);
            cy[(k, k)] = target_var;
            (my, cy)
        };
        GaussianBelief {
            mean: r.transpose() * my,
            cov: symmetrize(&(r.transpose() * cy * r)),
        }
    };
    let boundary = || conditioned(frame.bound, 0.0);

    let side = |s: Side| -> Result<Option<TruncatedMoments>> {
        match truncated_moments_1d(mean_y[k], sigma, s, frame.bound) {
            Ok(m) if m.mass >= EMPTY_SIDE_MASS => Ok(Some(m)),
            Ok(_) | Err(Error::EmptyTruncation) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let up = side(Side::Above)?;
    let down = side(Side::Below)?;
    let (upper, lower, mass_upper) = match (up, down) {
        (Some(u), Some(l)) => (conditioned(u.mean, u.var), conditioned(l.mean, l.var), u.mass),
        (Some(_), None) => (b.clone(), boundary(), 1.0),
        (None, Some(_)) => (boundary(), b.clone(), 0.0),
        (None, None) => return Err(Error::EmptyTruncation),
    };
    Ok(TruncationResult {
        upper,
        lower,
        mass_upper,
    })
}

/// Moment-matched single Gaussian of `alpha·a + (1 − alpha)·b`.
pub fn reduce_pair(a: &GaussianBelief, b: &GaussianBelief, alpha: f64) -> Result<GaussianBelief> {
    check_dims("mixture component dimension", a.dim(), b.dim())?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "mixture weight {alpha} outside [0, 1]"
        )));
    }
    if alpha == 1.0 {
        return Ok(a.clone());
    }
    if alpha == 0.0 {
        return Ok(b.clone());
    }
    let d = &a.mean - &b.mean;
    Ok(GaussianBelief {
        mean: &a.mean * alpha + &b.mean * (1.0 - alpha),
        cov: symmetrize(
            &(&a.cov * alpha + &b.cov * (1.0 - alpha) + (&d * d.transpose()) * (alpha * (1.0 - alpha))),
        ),
    })
}

/// Moves the mean onto the constraint linearized at the mean and removes all
/// variance along the normal; tangential moments are unchanged.
pub fn project_to_manifold(b: &GaussianBelief, constraint: &dyn Constraint) -> Result<GaussianBelief> {
    let frame = constraint_frame(b, constraint)?;
    let r = &frame.rotation;
    let k = frame.k_axis;
    let mut mean_y = r * &b.mean;
    let mut cov_y = r * &b.cov * r.transpose();
    mean_y[k] = frame.bound;
    cov_y.row_mut(k).fill(0.0);
    cov_y.column_mut(k).fill(0.0);
    Ok(GaussianBelief {
        mean: r.transpose() * mean_y,
        cov: symmetrize(&(r.transpose() * cov_y * r)),
    })
}

/// Re-approximates a (possibly constraint-violating) two-component mixture
/// as free + surface components.
pub fn reapproximate(
    weight: f64,
    first: &GaussianBelief,
    second: &GaussianBelief,
    constraint: &dyn Constraint,
) -> Result<ConstrainedBelief> {
    let t1 = truncate_gaussian(first, constraint)?;
    let t2 = truncate_gaussian(second, constraint)?;
    let w_up = (weight * t1.mass_upper, (1.0 - weight) * t2.mass_upper);
    let w_low = (weight * t1.mass_lower(), (1.0 - weight) * t2.mass_lower());

    let pool = |w: (f64, f64), a: &GaussianBelief, b: &GaussianBelief| -> Result<GaussianBelief> {
        let total = w.0 + w.1;
        if total > 0.0 {
            reduce_pair(a, b, (w.0 / total).clamp(0.0, 1.0))
        } else if weight >= 0.5 {
            Ok(a.clone())
        } else {
            Ok(b.clone())
        }
    };
    let free = pool(w_up, &t1.upper, &t2.upper)?;
    let surface = project_to_manifold(&pool(w_low, &t1.lower, &t2.lower)?, constraint)?;
    let new_weight = (w_up.0 + w_up.1).clamp(0.0, 1.0);
    Ok(ConstrainedBelief {
        free,
        surface,
        weight: new_weight,
    })
}

/// Deterministic (observation-marginalized) update of a constrained belief.
pub fn constrained_update(
    cb: &ConstrainedBelief,
    a: &DVector<f64>,
    dynamics: &dyn Dynamics,
    observation: &dyn Observation,
    constraint: &dyn Constraint,
) -> Result<ConstrainedBelief> {
    let free = filter::marginalized_update(&cb.free, a, dynamics, observation)?;
    let surface = filter::marginalized_update(&cb.surface, a, dynamics, observation)?;
    reapproximate(cb.weight, &free, &surface, constraint)
}

/// Execution-time analogue of [`constrained_update`]: each component takes
/// the EKF correction with the received observation and the mixture weight
/// is reweighted by the components' innovation likelihoods.
pub fn constrained_correct(
    cb: &ConstrainedBelief,
    a: &DVector<f64>,
    z: &DVector<f64>,
    dynamics: &dyn Dynamics,
    observation: &dyn Observation,
    constraint: &dyn Constraint,
) -> Result<ConstrainedBelief> {
    let p1 = filter::ekf_predict(&cb.free, a, dynamics)?;
    let p2 = filter::ekf_predict(&cb.surface, a, dynamics)?;
    let (free, i1) = filter::correct_prediction(&p1, a, Some(z), observation)?;
    let (surface, i2) = filter::correct_prediction(&p2, a, Some(z), observation)?;
    let weight = if cb.weight <= 0.0 || cb.weight >= 1.0 {
        cb.weight
    } else {
        let l1 = cb.weight.ln() + i1.log_likelihood(z)?;
        let l2 = (1.0 - cb.weight).ln() + i2.log_likelihood(z)?;
        1.0 / (1.0 + (l2 - l1).exp())
    };
    reapproximate(weight, &free, &surface, constraint)
}

/// Inelastic contact: moves an infeasible state back onto `Γ = 0` along the
/// constraint gradient.
pub fn enforce_constraint(s: &DVector<f64>, constraint: &dyn Constraint) -> Result<DVector<f64>> {
    let mut x = s.clone();
    for _ in 0..20 {
        let gamma = constraint.distance(&x);
        if gamma >= 0.0 {
            return Ok(x);
        }
        let g = constraint_gradient(&x, constraint)?;
        x -= &g * (gamma / g.norm_squared());
    }
    let gamma = constraint.distance(&x);
    if gamma >= -1e-9 {
        Ok(x)
    } else {
        Err(Error::InvalidParameter(format!(
            "could not restore feasibility (Γ = {gamma})"
        )))
    }
}
