//! State rewards and their expectation under a belief.

use nalgebra::{DMatrix, DVector};

use crate::belief::{Belief, GaussianBelief};
use crate::error::{Error, Result};
use crate::linalg::psd_sqrt;

/// Time-dependent reward `Rⁱ(s, a)` with terminal reward `Rᴺ(s)`.
pub trait Reward: Send + Sync {
    fn running(&self, s: &DVector<f64>, a: &DVector<f64>, i: usize) -> f64;
    fn terminal(&self, s: &DVector<f64>) -> f64;

    /// `E_{s∼b}[Rⁱ(s, a)]`; sigma-point cubature unless overridden.
    fn expected_running(&self, b: &GaussianBelief, a: &DVector<f64>, i: usize) -> f64 {
        sigma_point_expectation(&b.mean, &b.cov, |s| self.running(s, a, i))
    }

    fn expected_terminal(&self, b: &GaussianBelief) -> f64 {
        sigma_point_expectation(&b.mean, &b.cov, |s| self.terminal(s))
    }
}

/// Symmetric `2n + 1` point cubature of `E[f(x)]` for `x ~ N(mean, cov)`.
///
/// Points sit at `mean ± √(n + κ)·Sⱼ` with `κ = max(0, 3 − n)`, so weights are
/// nonnegative and polynomials up to degree three are integrated exactly.
pub fn sigma_point_expectation<F>(mean: &DVector<f64>, cov: &DMatrix<f64>, mut f: F) -> f64
where
    F: FnMut(&DVector<f64>) -> f64,
{
    if cov.iter().all(|&c| c == 0.0) {
        return f(mean);
    }
    let n = mean.len();
    let kappa = 3.0_f64 - n as f64;
    let kappa = kappa.max(0.0);
    let lambda = n as f64 + kappa;
    let root = psd_sqrt(cov) * lambda.sqrt();
    let mut total = if kappa > 0.0 { kappa / lambda * f(mean) } else { 0.0 };
    let w = 0.5 / lambda;
    let mut probe = mean.clone();
    for j in 0..n {
        let col = root.column(j);
        if col.iter().all(|&c| c == 0.0) {
            total += 2.0 * w * f(mean);
            continue;
        }
        probe.copy_from(mean);
        probe += &col;
        total += w * f(&probe);
        probe.copy_from(mean);
        probe -= &col;
        total += w * f(&probe);
    }
    total
}

/// Expected running reward of a Gaussian or constrained belief.
pub fn belief_reward(b: &Belief, a: &DVector<f64>, reward: &dyn Reward, i: usize) -> Result<f64> {
    let r = match b {
        Belief::Gaussian(g) => reward.expected_running(g, a, i),
        Belief::Constrained(c) => {
            mixture(c.weight, || reward.expected_running(&c.free, a, i), || {
                reward.expected_running(&c.surface, a, i)
            })
        }
    };
    if r.is_finite() {
        Ok(r)
    } else {
        Err(Error::NonFinite("belief reward"))
    }
}

pub fn terminal_belief_reward(b: &Belief, reward: &dyn Reward) -> Result<f64> {
    let r = match b {
        Belief::Gaussian(g) => reward.expected_terminal(g),
        Belief::Constrained(c) => mixture(
            c.weight,
            || reward.expected_terminal(&c.free),
            || reward.expected_terminal(&c.surface),
        ),
    };
    if r.is_finite() {
        Ok(r)
    } else {
        Err(Error::NonFinite("terminal belief reward"))
    }
}

// Zero-weight components are skipped so a placeholder never leaks NaN.
fn mixture(weight: f64, free: impl FnOnce() -> f64, surface: impl FnOnce() -> f64) -> f64 {
    let mut r = 0.0;
    if weight > 0.0 {
        r += weight * free();
    }
    if weight < 1.0 {
        r += (1.0 - weight) * surface();
    }
    r
}

/// `R(s, a) = −(s − t)ᵀ Q (s − t) − aᵀ R a`, terminal `−(s − t)ᵀ Q_f (s − t)`.
///
/// Expectations are evaluated in closed form.
#[derive(Debug, Clone)]
pub struct QuadraticReward {
    pub state_weight: DMatrix<f64>,
    pub action_weight: DMatrix<f64>,
    pub terminal_weight: DMatrix<f64>,
    pub target: DVector<f64>,
}

impl QuadraticReward {
    fn quad(m: &DMatrix<f64>, d: &DVector<f64>) -> f64 {
        d.dot(&(m * d))
    }
}

impl Reward for QuadraticReward {
    fn running(&self, s: &DVector<f64>, a: &DVector<f64>, _i: usize) -> f64 {
        -Self::quad(&self.state_weight, &(s - &self.target)) - Self::quad(&self.action_weight, a)
    }

    fn terminal(&self, s: &DVector<f64>) -> f64 {
        -Self::quad(&self.terminal_weight, &(s - &self.target))
    }

    fn expected_running(&self, b: &GaussianBelief, a: &DVector<f64>, i: usize) -> f64 {
        self.running(&b.mean, a, i) - (&self.state_weight * &b.cov).trace()
    }

    fn expected_terminal(&self, b: &GaussianBelief) -> f64 {
        self.terminal(&b.mean) - (&self.terminal_weight * &b.cov).trace()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::ConstrainedBelief;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    struct NegSquare;

    impl Reward for NegSquare {
        fn running(&self, s: &DVector<f64>, _a: &DVector<f64>, _i: usize) -> f64 {
            -s.norm_squared()
        }
        fn terminal(&self, s: &DVector<f64>) -> f64 {
            3.0 * s[0] - s[1]
        }
    }

    fn none() -> DVector<f64> {
        DVector::zeros(0)
    }

    #[test]
    fn negative_square_matches_monte_carlo() {
        let b = GaussianBelief::isotropic(DVector::zeros(2), 1.0);
        let r = belief_reward(&b.clone().into(), &none(), &NegSquare, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            let y: f64 = StandardNormal.sample(&mut rng);
            let v = -(x * x + y * y);
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((r - mean).abs() < 3.0 * se, "{r} vs {mean} ± {se}");
        assert!((r + 2.0).abs() < 1e-12);
    }

    #[test]
    fn point_mass_and_linear_rewards() {
        let s = DVector::from_vec(vec![0.7, -0.2]);
        let point = GaussianBelief::point(s.clone());
        assert_eq!(
            belief_reward(&point.into(), &none(), &NegSquare, 0).unwrap(),
            NegSquare.running(&s, &none(), 0)
        );
        let wide = GaussianBelief::new(s.clone(), DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let t = terminal_belief_reward(&wide.into(), &NegSquare).unwrap();
        assert!((t - NegSquare.terminal(&s)).abs() < 1e-12);
    }

    #[test]
    fn quadratic_closed_form_agrees_with_cubature() {
        let q = QuadraticReward {
            state_weight: DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            action_weight: DMatrix::identity(1, 1) * 0.1,
            terminal_weight: DMatrix::identity(2, 2),
            target: DVector::from_vec(vec![1.0, -1.0]),
        };
        let b = GaussianBelief::new(
            DVector::from_vec(vec![0.2, 0.4]),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]),
        )
        .unwrap();
        let a = DVector::from_element(1, 0.5);
        let cub = sigma_point_expectation(&b.mean, &b.cov, |s| q.running(s, &a, 0));
        assert!((cub - q.expected_running(&b, &a, 0)).abs() < 1e-12);
    }

    #[test]
    fn mixture_weighting() {
        let free = GaussianBelief::point(DVector::from_vec(vec![1.0, 0.0]));
        let surface = GaussianBelief::point(DVector::from_vec(vec![0.0, 0.0]));
        let cb = ConstrainedBelief::new(free, surface, 0.25).unwrap();
        let r = belief_reward(&cb.into(), &none(), &NegSquare, 0).unwrap();
        assert!((r + 0.25).abs() < 1e-15);
    }
}
