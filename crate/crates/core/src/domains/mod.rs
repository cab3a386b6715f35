//! Problem definitions: a [`DomainSpec`] bundles dynamics, sensing, the
//! optional contact constraint, rewards, horizon and initial belief.

use std::sync::Arc;

use nalgebra::DVector;

use crate::belief::{Belief, BeliefVector, Layout};
use crate::constraint::{self, Constraint};
use crate::ddp::Mdp;
use crate::error::{Error, Result};
use crate::filter::{self, Dynamics, Observation};
use crate::reward::{self, Reward};

pub mod hand_eye;
pub mod lqg;
pub mod planar;

pub use hand_eye::{make_hand_eye, HandEyeParams};
pub use lqg::{make_lqg, make_lqg_test, LqgParams};
pub use planar::{make_planar_nav, PlanarNavParams};

/// Task-level measurements of a true state, used to score rollouts.
pub trait Scene: Send + Sync {
    /// Distance from the goal at the final step.
    fn terminal_error(&self, s: &DVector<f64>) -> f64;

    /// Smallest distance between the agent and any obstacle, if the scene
    /// has obstacles.
    fn clearance(&self, _s: &DVector<f64>) -> Option<f64> {
        None
    }

    /// Displaces the obstacles of a true state (for perturbed-scene tests).
    fn shift_obstacles(&self, _s: &DVector<f64>, _shifts: &[[f64; 2]]) -> Result<DVector<f64>> {
        Err(Error::Unsupported("obstacles are not part of the state"))
    }
}

#[derive(Clone)]
pub struct DomainSpec {
    pub name: String,
    pub dynamics: Arc<dyn Dynamics>,
    pub observation: Arc<dyn Observation>,
    pub constraint: Option<Arc<dyn Constraint>>,
    pub reward: Arc<dyn Reward>,
    pub scene: Arc<dyn Scene>,
    /// Number of beliefs in a plan; there are `horizon − 1` actions.
    pub horizon: usize,
    pub initial_belief: Belief,
    pub layout: Layout,
    /// Heuristic warm start; zero actions when absent.
    pub initial_actions: Option<Vec<DVector<f64>>>,
}

impl std::fmt::Debug for DomainSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DomainSpec")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim())
            .field("action_dim", &self.action_dim())
            .field("obs_dim", &self.obs_dim())
            .field("horizon", &self.horizon)
            .field("belief_dim", &self.layout.len())
            .finish()
    }
}

impl DomainSpec {
    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.dynamics.action_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.observation.obs_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::InvalidParameter("horizon must be at least 2".into()));
        }
        if !(self.dynamics.timestep() > 0.0) {
            return Err(Error::InvalidParameter("timestep must be positive".into()));
        }
        if self.layout.dim != self.state_dim() || self.initial_belief.dim() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "domain state dimension",
                expected: self.state_dim(),
                actual: self.layout.dim,
            });
        }
        if self.layout.constrained != self.constraint.is_some() {
            return Err(Error::InvalidParameter(
                "constrained layout requires a constraint and vice versa".into(),
            ));
        }
        if let Some(acts) = &self.initial_actions {
            if acts.len() + 1 != self.horizon || acts.iter().any(|a| a.len() != self.action_dim()) {
                return Err(Error::InvalidParameter("initial action sequence shape".into()));
            }
        }
        Ok(())
    }

    /// Deterministic belief update used for planning.
    pub fn belief_step(&self, b: &Belief, a: &DVector<f64>) -> Result<Belief> {
        match (b, &self.constraint) {
            (Belief::Gaussian(g), None) => {
                filter::marginalized_update(g, a, self.dynamics.as_ref(), self.observation.as_ref()).map(Belief::from)
            }
            (Belief::Constrained(c), Some(cm)) => constraint::constrained_update(
                c,
                a,
                self.dynamics.as_ref(),
                self.observation.as_ref(),
                cm.as_ref(),
            )
            .map(Belief::from),
            _ => Err(Error::InvalidParameter(
                "belief kind does not match the domain".into(),
            )),
        }
    }

    /// Estimator update with a received observation.
    pub fn belief_correct(&self, b: &Belief, a: &DVector<f64>, z: &DVector<f64>) -> Result<Belief> {
        match (b, &self.constraint) {
            (Belief::Gaussian(g), None) => {
                filter::ekf_correct(g, a, z, self.dynamics.as_ref(), self.observation.as_ref()).map(Belief::from)
            }
            (Belief::Constrained(c), Some(cm)) => constraint::constrained_correct(
                c,
                a,
                z,
                self.dynamics.as_ref(),
                self.observation.as_ref(),
                cm.as_ref(),
            )
            .map(Belief::from),
            _ => Err(Error::InvalidParameter(
                "belief kind does not match the domain".into(),
            )),
        }
    }

    pub fn zero_actions(&self) -> Vec<DVector<f64>> {
        vec![DVector::zeros(self.action_dim()); self.horizon - 1]
    }

    pub fn default_actions(&self) -> Vec<DVector<f64>> {
        self.initial_actions.clone().unwrap_or_else(|| self.zero_actions())
    }

    /// Decodes a flat belief vector in this domain's layout.
    pub fn decode(&self, x: &BeliefVector) -> Result<Belief> {
        self.layout.devectorize(x.as_slice())
    }
}

/// A domain is a deterministic control problem over flat belief vectors.
impl Mdp for DomainSpec {
    fn state_dim(&self) -> usize {
        self.layout.len()
    }

    fn action_dim(&self) -> usize {
        self.action_dim()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn initial_state(&self) -> DVector<f64> {
        self.layout
            .vectorize(&self.initial_belief)
            .expect("initial belief matches the layout")
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, _i: usize) -> Result<DVector<f64>> {
        let b = self.decode(x)?;
        let next = self.belief_step(&b, u)?;
        self.layout.vectorize(&next)
    }

    fn reward(&self, x: &DVector<f64>, u: &DVector<f64>, i: usize) -> Result<f64> {
        reward::belief_reward(&self.decode(x)?, u, self.reward.as_ref(), i)
    }

    fn terminal_reward(&self, x: &DVector<f64>) -> Result<f64> {
        reward::terminal_belief_reward(&self.decode(x)?, self.reward.as_ref())
    }
}
