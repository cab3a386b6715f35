//! Planar navigation in a closed room. Position is practically unobservable,
//! but the walls are a unilateral constraint: belief mass pushed into a wall
//! collapses onto it, which localizes the robot along the wall normal.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{DomainSpec, Scene};
use crate::belief::{Belief, ConstrainedBelief, GaussianBelief, Layout};
use crate::constraint::{self, Constraint};
use crate::error::{Error, Result};
use crate::filter::{Dynamics, Observation};
use crate::reward::{sigma_point_expectation, Reward};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PlanarNavParams {
    /// Room extent `[width, height]`; the room spans `[0, w] × [0, h]`.
    pub room: [f64; 2],
    /// Radius of the rounded room corners; 0 gives square corners.
    pub corner_radius: f64,
    pub start: [f64; 2],
    pub start_variance: f64,
    pub target: [f64; 2],
    pub obstacles: Vec<[f64; 2]>,
    pub obstacle_weight: f64,
    pub obstacle_radius: f64,
    pub terminal_weight: f64,
    pub action_weight: f64,
    /// Process-noise variance added per step on each axis.
    pub process_noise: f64,
    /// Observation-noise variance on each axis.
    pub observation_noise: f64,
    pub horizon: usize,
    pub timestep: f64,
}

impl Default for PlanarNavParams {
    fn default() -> Self {
        Self {
            room: [10.0, 10.0],
            corner_radius: 0.0,
            start: [2.0, 7.5],
            start_variance: 1.0,
            target: [6.0, 0.0],
            obstacles: vec![[3.3, 5.0], [4.6, 2.6]],
            obstacle_weight: 5.0,
            obstacle_radius: 0.6,
            terminal_weight: 10.0,
            action_weight: 0.05,
            process_noise: 0.01,
            observation_noise: 25.0,
            horizon: 40,
            timestep: 0.25,
        }
    }
}

/// Single integrator `ṡ = a` with isotropic diffusion.
#[derive(Debug, Clone)]
pub struct PlanarDynamics {
    pub timestep: f64,
    pub process_noise: f64,
}

impl Dynamics for PlanarDynamics {
    fn state_dim(&self) -> usize {
        2
    }
    fn action_dim(&self) -> usize {
        2
    }
    fn timestep(&self) -> f64 {
        self.timestep
    }
    fn drift(&self, _s: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        a.clone()
    }
    fn noise_map(&self, _s: &DVector<f64>, _a: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(2, 2) * (self.process_noise / self.timestep).sqrt()
    }
    fn drift_jacobian(&self, _s: &DVector<f64>, _a: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(2, 2))
    }
}

/// Direct position readings with constant noise.
#[derive(Debug, Clone)]
pub struct PositionSensor {
    pub variance: f64,
}

impl Observation for PositionSensor {
    fn obs_dim(&self) -> usize {
        2
    }
    fn mean(&self, s: &DVector<f64>) -> DVector<f64> {
        s.clone()
    }
    fn noise_cov(&self, _s: &DVector<f64>, _a: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(2, 2) * self.variance
    }
    fn jacobian(&self, _s: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::identity(2, 2))
    }
}

/// Signed distance to the walls of a (possibly rounded) rectangular room,
/// positive inside. Only the nearest wall segment is active.
#[derive(Debug, Clone)]
pub struct RoomWalls {
    pub width: f64,
    pub height: f64,
    pub corner_radius: f64,
}

impl RoomWalls {
    /// Exterior signed distance and its gradient.
    fn sdf(&self, s: &DVector<f64>) -> (f64, [f64; 2]) {
        let half = [0.5 * self.width, 0.5 * self.height];
        let r = self.corner_radius;
        let p = [s[0] - half[0], s[1] - half[1]];
        let sign = |v: f64| if v < 0.0 { -1.0 } else { 1.0 };
        let q = [p[0].abs() - half[0] + r, p[1].abs() - half[1] + r];
        if q[0] > 0.0 && q[1] > 0.0 {
            let len = q[0].hypot(q[1]);
            let g = [sign(p[0]) * q[0] / len, sign(p[1]) * q[1] / len];
            (len - r, g)
        } else if q[0] >= q[1] {
            (q[0] - r, [sign(p[0]), 0.0])
        } else {
            (q[1] - r, [0.0, sign(p[1])])
        }
    }
}

impl Constraint for RoomWalls {
    fn distance(&self, s: &DVector<f64>) -> f64 {
        -self.sdf(s).0
    }
    fn gradient(&self, s: &DVector<f64>) -> Option<DVector<f64>> {
        let g = self.sdf(s).1;
        Some(DVector::from_vec(vec![-g[0], -g[1]]))
    }
}

#[derive(Debug, Clone)]
pub struct PlanarReward {
    pub target: DVector<f64>,
    pub obstacles: Vec<DVector<f64>>,
    pub obstacle_weight: f64,
    pub obstacle_radius: f64,
    pub terminal_weight: f64,
    pub action_weight: f64,
}

impl PlanarReward {
    fn obstacle_penalty(&self, s: &DVector<f64>) -> f64 {
        let two_r2 = 2.0 * self.obstacle_radius * self.obstacle_radius;
        self.obstacles
            .iter()
            .map(|o| self.obstacle_weight * (-(s - o).norm_squared() / two_r2).exp())
            .sum()
    }
}

impl Reward for PlanarReward {
    fn running(&self, s: &DVector<f64>, a: &DVector<f64>, _i: usize) -> f64 {
        -self.obstacle_penalty(s) - self.action_weight * a.norm_squared()
    }

    fn terminal(&self, s: &DVector<f64>) -> f64 {
        -self.terminal_weight * (s - &self.target).norm_squared()
    }

    fn expected_running(&self, b: &GaussianBelief, a: &DVector<f64>, _i: usize) -> f64 {
        -sigma_point_expectation(&b.mean, &b.cov, |s| self.obstacle_penalty(s)) - self.action_weight * a.norm_squared()
    }

    fn expected_terminal(&self, b: &GaussianBelief) -> f64 {
        self.terminal(&b.mean) - self.terminal_weight * b.cov.trace()
    }
}

impl Scene for PlanarReward {
    fn terminal_error(&self, s: &DVector<f64>) -> f64 {
        (s - &self.target).norm()
    }

    fn clearance(&self, s: &DVector<f64>) -> Option<f64> {
        self.obstacles
            .iter()
            .map(|o| (s - o).norm())
            .reduce(f64::min)
    }
}

/// Builds the planar navigation domain.
pub fn make_planar_nav(params: &PlanarNavParams) -> Result<DomainSpec> {
    let p = params;
    let [w, h] = p.room;
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::InvalidParameter("room extent must be positive".into()));
    }
    if !(p.corner_radius >= 0.0 && 2.0 * p.corner_radius < w.min(h)) {
        return Err(Error::InvalidParameter(
            "corner radius must be in [0, min(width, height) / 2)".into(),
        ));
    }
    let positive = [
        ("start_variance", p.start_variance),
        ("obstacle_radius", p.obstacle_radius),
        ("process_noise", p.process_noise),
        ("observation_noise", p.observation_noise),
        ("timestep", p.timestep),
    ];
    for (name, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} must be positive")));
        }
    }
    let walls = RoomWalls {
        width: w,
        height: h,
        corner_radius: p.corner_radius,
    };
    let start = DVector::from_vec(p.start.to_vec());
    if walls.distance(&start) <= 0.0 {
        return Err(Error::InvalidParameter("start must lie inside the room".into()));
    }
    if walls.distance(&DVector::from_vec(p.target.to_vec())) < -1e-9 {
        return Err(Error::InvalidParameter("target must lie inside the room".into()));
    }
    let free = GaussianBelief::isotropic(start, p.start_variance);
    let surface = constraint::project_to_manifold(&free, &walls)?;
    let initial = ConstrainedBelief::new(free, surface, 1.0)?;

    let reward = Arc::new(PlanarReward {
        target: DVector::from_vec(p.target.to_vec()),
        obstacles: p.obstacles.iter().map(|o| DVector::from_vec(o.to_vec())).collect(),
        obstacle_weight: p.obstacle_weight,
        obstacle_radius: p.obstacle_radius,
        terminal_weight: p.terminal_weight,
        action_weight: p.action_weight,
    });
    let spec = DomainSpec {
        name: "planar_nav".into(),
        dynamics: Arc::new(PlanarDynamics {
            timestep: p.timestep,
            process_noise: p.process_noise,
        }),
        observation: Arc::new(PositionSensor {
            variance: p.observation_noise,
        }),
        constraint: Some(Arc::new(walls)),
        reward: reward.clone(),
        scene: reward,
        horizon: p.horizon,
        initial_belief: Belief::Constrained(initial),
        layout: Layout::full(2).with_constraint(),
        initial_actions: None,
    };
    spec.validate()?;
    Ok(spec)
}
