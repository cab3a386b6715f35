//! Local trajectory optimization for continuous POMDPs.
//!
//! Beliefs are Gaussians (or, with one unilateral constraint, a free/surface
//! Gaussian pair) propagated by an observation-marginalized EKF. That makes
//! the belief dynamics deterministic, so differential dynamic programming can
//! optimize them directly. The resulting time-varying linear feedback policy
//! is executed against sampled dynamics with an online estimator.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod belief;
pub mod constraint;
pub mod ddp;
pub mod domains;
pub mod error;
pub mod execution;
pub mod filter;
pub mod linalg;
pub mod numdiff;
pub mod reward;

pub use belief::{Belief, BeliefVector, ConstrainedBelief, CovarianceLayout, GaussianBelief, Layout};
pub use constraint::{Constraint, TruncationResult};
pub use ddp::{Mdp, SolveOptions, SolveReport, Trajectory};
pub use domains::DomainSpec;
pub use error::{Error, Result};
pub use execution::{LinearPolicy, RolloutOptions, RolloutRecord};
pub use filter::{Dynamics, Observation};
pub use reward::Reward;
