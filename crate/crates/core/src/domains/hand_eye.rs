//! Two hands and a foveated eye in a planar scene.
//!
//! State layout (planar positions): eye, hand 1, hand 2, target, obstacles
//! 1–4. Actions are velocities of the eye and both hands. Every element is
//! observed, with noise that vanishes near the gaze point and grows with eye
//! speed.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use super::{DomainSpec, Scene};
use crate::belief::{Belief, GaussianBelief, Layout};
use crate::error::{Error, Result};
use crate::filter::{Dynamics, Observation};
use crate::reward::Reward;

pub const EYE: usize = 0;
pub const HANDS: [usize; 2] = [1, 2];
pub const TARGET: usize = 3;
pub const OBSTACLES: [usize; 4] = [4, 5, 6, 7];
pub const ELEMENTS: usize = 8;
const STATE_DIM: usize = 2 * ELEMENTS;
const ACTION_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct HandEyeParams {
    pub eye: [f64; 2],
    pub hands: [[f64; 2]; 2],
    pub target: [f64; 2],
    pub obstacles: [[f64; 2]; 4],
    pub hand_variance: f64,
    pub target_variance: f64,
    pub obstacle_variance: f64,
    /// Process-noise variance per step on each hand axis.
    pub hand_process_noise: f64,
    pub terminal_weight: f64,
    pub obstacle_weight: f64,
    pub obstacle_radius: f64,
    pub hand_action_weight: f64,
    pub eye_action_weight: f64,
    /// Fovea sizes, solved in order with warm starts.
    pub eta_schedule: Vec<f64>,
    pub horizon: usize,
    pub timestep: f64,
}

impl Default for HandEyeParams {
    fn default() -> Self {
        Self {
            eye: [0.0, 0.0],
            hands: [[-0.6, -0.6], [0.6, -0.6]],
            target: [0.0, 0.7],
            obstacles: [[-0.47, -0.17], [-0.14, 0.30], [0.38, -0.12], [0.21, 0.36]],
            hand_variance: 0.005,
            target_variance: 0.03,
            obstacle_variance: 0.03,
            hand_process_noise: 0.002,
            terminal_weight: 100.0,
            obstacle_weight: 10.0,
            obstacle_radius: 0.15,
            hand_action_weight: 0.05,
            eye_action_weight: 1e-4,
            eta_schedule: vec![10.0, 1.0, 0.3, 0.05],
            horizon: 40,
            timestep: 0.05,
        }
    }
}

impl HandEyeParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("hand_variance", self.hand_variance),
            ("target_variance", self.target_variance),
            ("obstacle_variance", self.obstacle_variance),
            ("hand_process_noise", self.hand_process_noise),
            ("terminal_weight", self.terminal_weight),
            ("obstacle_weight", self.obstacle_weight),
            ("hand_action_weight", self.hand_action_weight),
            ("eye_action_weight", self.eye_action_weight),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be nonnegative")));
            }
        }
        if !(self.obstacle_radius > 0.0 && self.timestep > 0.0) {
            return Err(Error::InvalidParameter(
                "obstacle_radius and timestep must be positive".into(),
            ));
        }
        if self.eta_schedule.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidParameter("fovea sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Observation-noise variance of one scene element.
pub fn foveal_noise(eye: &[f64], element: &[f64], eye_action: &[f64], eta: f64) -> f64 {
    let d2 = (eye[0] - element[0]).powi(2) + (eye[1] - element[1]).powi(2);
    let speed2 = eye_action[0].powi(2) + eye_action[1].powi(2);
    1.0 - (-d2 / (2.0 * eta)).exp() + 0.01 * speed2
}

fn pos(s: &DVector<f64>, element: usize) -> Vector2<f64> {
    Vector2::new(s[2 * element], s[2 * element + 1])
}

fn block(cov: &DMatrix<f64>, a: usize, b: usize) -> Matrix2<f64> {
    cov.fixed_view::<2, 2>(2 * a, 2 * b).into_owned()
}

#[derive(Debug, Clone)]
pub struct HandEyeDynamics {
    pub timestep: f64,
    pub hand_process_noise: f64,
}

impl Dynamics for HandEyeDynamics {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }
    fn action_dim(&self) -> usize {
        ACTION_DIM
    }
    fn timestep(&self) -> f64 {
        self.timestep
    }
    fn drift(&self, _s: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        let mut f = DVector::zeros(STATE_DIM);
        f.rows_mut(0, ACTION_DIM).copy_from(a);
        f
    }
    fn noise_map(&self, _s: &DVector<f64>, _a: &DVector<f64>) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(STATE_DIM, STATE_DIM);
        let sigma = (self.hand_process_noise / self.timestep).sqrt();
        for h in HANDS {
            q[(2 * h, 2 * h)] = sigma;
            q[(2 * h + 1, 2 * h + 1)] = sigma;
        }
        q
    }
    fn drift_jacobian(&self, _s: &DVector<f64>, _a: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(STATE_DIM, STATE_DIM))
    }
}

/// Full-state observation with foveal noise. The eye reads its own position
/// with unit noise, which is irrelevant since the eye position is known.
#[derive(Debug, Clone)]
pub struct FovealSensor {
    pub eta: f64,
}

impl Observation for FovealSensor {
    fn obs_dim(&self) -> usize {
        STATE_DIM
    }
    fn mean(&self, s: &DVector<f64>) -> DVector<f64> {
        s.clone()
    }
    fn noise_cov(&self, s: &DVector<f64>, a: &DVector<f64>) -> DMatrix<f64> {
        let eye = [s[0], s[1]];
        let a_e = [a[0], a[1]];
        let mut w = DVector::from_element(STATE_DIM, 1.0);
        for k in 1..ELEMENTS {
            let v = foveal_noise(&eye, &[s[2 * k], s[2 * k + 1]], &a_e, self.eta);
            w[2 * k] = v;
            w[2 * k + 1] = v;
        }
        DMatrix::from_diagonal(&w)
    }
    fn jacobian(&self, _s: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::identity(STATE_DIM, STATE_DIM))
    }
}

#[derive(Debug, Clone)]
pub struct HandEyeReward {
    pub terminal_weight: f64,
    pub obstacle_weight: f64,
    pub obstacle_radius: f64,
    pub hand_action_weight: f64,
    pub eye_action_weight: f64,
}

impl HandEyeReward {
    fn action_cost(&self, a: &DVector<f64>) -> f64 {
        self.eye_action_weight * a.rows(0, 2).norm_squared() + self.hand_action_weight * a.rows(2, 4).norm_squared()
    }

    /// `E[c·exp(−‖d‖²/2ρ²)]` for `d ~ N(mean, cov)`, in closed form.
    fn expected_bump(&self, mean: &Vector2<f64>, cov: &Matrix2<f64>) -> f64 {
        let r2 = self.obstacle_radius * self.obstacle_radius;
        let m = Matrix2::identity() * r2 + cov;
        let det = m.determinant();
        let Some(inv) = m.try_inverse() else {
            return 0.0;
        };
        self.obstacle_weight * (r2 / det.sqrt()) * (-0.5 * mean.dot(&(inv * mean))).exp()
    }
}

impl Reward for HandEyeReward {
    fn running(&self, s: &DVector<f64>, a: &DVector<f64>, _i: usize) -> f64 {
        let two_r2 = 2.0 * self.obstacle_radius * self.obstacle_radius;
        let mut penalty = 0.0;
        for h in HANDS {
            for l in OBSTACLES {
                penalty += (-(pos(s, h) - pos(s, l)).norm_squared() / two_r2).exp();
            }
        }
        -self.obstacle_weight * penalty - self.action_cost(a)
    }

    fn terminal(&self, s: &DVector<f64>) -> f64 {
        let t = pos(s, TARGET);
        -self.terminal_weight * HANDS.iter().map(|&h| (pos(s, h) - t).norm_squared()).sum::<f64>()
    }

    fn expected_running(&self, b: &GaussianBelief, a: &DVector<f64>, _i: usize) -> f64 {
        let mut penalty = 0.0;
        for h in HANDS {
            for l in OBSTACLES {
                let mean = pos(&b.mean, h) - pos(&b.mean, l);
                let cov = block(&b.cov, h, h) + block(&b.cov, l, l) - block(&b.cov, h, l) - block(&b.cov, l, h);
                penalty += self.expected_bump(&mean, &cov);
            }
        }
        -penalty - self.action_cost(a)
    }

    fn expected_terminal(&self, b: &GaussianBelief) -> f64 {
        let t = TARGET;
        let spread: f64 = HANDS
            .iter()
            .map(|&h| (block(&b.cov, h, h) + block(&b.cov, t, t) - block(&b.cov, h, t) - block(&b.cov, t, h)).trace())
            .sum();
        self.terminal(&b.mean) - self.terminal_weight * spread
    }
}

struct HandEyeScene;

impl Scene for HandEyeScene {
    fn terminal_error(&self, s: &DVector<f64>) -> f64 {
        let t = pos(s, TARGET);
        HANDS.iter().map(|&h| (pos(s, h) - t).norm()).fold(0.0, f64::max)
    }

    fn clearance(&self, s: &DVector<f64>) -> Option<f64> {
        HANDS
            .iter()
            .flat_map(|&h| OBSTACLES.iter().map(move |&l| (pos(s, h) - pos(s, l)).norm()))
            .reduce(f64::min)
    }

    fn shift_obstacles(&self, s: &DVector<f64>, shifts: &[[f64; 2]]) -> Result<DVector<f64>> {
        if shifts.len() != OBSTACLES.len() {
            return Err(Error::DimensionMismatch {
                context: "obstacle shifts",
                expected: OBSTACLES.len(),
                actual: shifts.len(),
            });
        }
        let mut out = s.clone();
        for (&l, d) in OBSTACLES.iter().zip(shifts) {
            out[2 * l] += d[0];
            out[2 * l + 1] += d[1];
        }
        Ok(out)
    }
}

/// One shared variance per uncertain element; the eye is known exactly.
pub fn hand_eye_layout() -> Layout {
    let groups = (1..ELEMENTS).map(|k| vec![2 * k, 2 * k + 1]).collect();
    Layout::grouped(STATE_DIM, groups).expect("groups are disjoint")
}

/// Builds the domain for fovea size `eta`.
pub fn make_hand_eye(params: &HandEyeParams, eta: f64) -> Result<DomainSpec> {
    params.validate()?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParameter("fovea size must be positive".into()));
    }
    let p = params;
    let mut mean = Vec::with_capacity(STATE_DIM);
    mean.extend(p.eye);
    mean.extend(p.hands.iter().flatten());
    mean.extend(p.target);
    mean.extend(p.obstacles.iter().flatten());
    let mut var = vec![0.0; STATE_DIM];
    let mut set = |k: usize, v: f64| {
        var[2 * k] = v;
        var[2 * k + 1] = v;
    };
    HANDS.iter().for_each(|&h| set(h, p.hand_variance));
    set(TARGET, p.target_variance);
    OBSTACLES.iter().for_each(|&l| set(l, p.obstacle_variance));
    let initial = GaussianBelief::new(
        DVector::from_vec(mean),
        DMatrix::from_diagonal(&DVector::from_vec(var)),
    )?;

    // Warm start: hands move straight to the target, the eye stays put.
    let steps = p.horizon.saturating_sub(1).max(1);
    let duration = steps as f64 * p.timestep;
    let mut straight = DVector::zeros(ACTION_DIM);
    for (j, hand) in p.hands.iter().enumerate() {
        straight[2 + 2 * j] = (p.target[0] - hand[0]) / duration;
        straight[3 + 2 * j] = (p.target[1] - hand[1]) / duration;
    }

    let spec = DomainSpec {
        name: "hand_eye".into(),
        dynamics: Arc::new(HandEyeDynamics {
            timestep: p.timestep,
            hand_process_noise: p.hand_process_noise,
        }),
        observation: Arc::new(FovealSensor { eta }),
        constraint: None,
        reward: Arc::new(HandEyeReward {
            terminal_weight: p.terminal_weight,
            obstacle_weight: p.obstacle_weight,
            obstacle_radius: p.obstacle_radius,
            hand_action_weight: p.hand_action_weight,
            eye_action_weight: p.eye_action_weight,
        }),
        scene: Arc::new(HandEyeScene),
        horizon: p.horizon,
        initial_belief: Belief::Gaussian(initial),
        layout: hand_eye_layout(),
        initial_actions: Some(vec![straight; steps]),
    };
    spec.validate()?;
    Ok(spec)
}
