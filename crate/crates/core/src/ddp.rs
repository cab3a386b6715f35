//! Finite-horizon differential dynamic programming for reward maximization.
//!
//! The value recursion uses first-order dynamics expansions and second-order
//! reward expansions (the Gauss-Newton / iLQR form). Derivatives come from
//! [`Mdp`], which defaults to central finite differences.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, all_finite_vec, symmetrize};
use crate::numdiff;

/// Deterministic finite-horizon control problem over flat states.
///
/// A trajectory has `horizon()` states `x⁰ … xᴺ⁻¹` and `horizon() − 1`
/// actions. The objective is `Σᵢ reward(xⁱ, uⁱ, i) + terminal_reward(xᴺ⁻¹)`.
pub trait Mdp: Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn initial_state(&self) -> DVector<f64>;
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, i: usize) -> Result<DVector<f64>>;
    fn reward(&self, x: &DVector<f64>, u: &DVector<f64>, i: usize) -> Result<f64>;
    fn terminal_reward(&self, x: &DVector<f64>) -> Result<f64>;

    /// `(∂step/∂x, ∂step/∂u)`.
    fn dynamics_derivatives(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        i: usize,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.state_dim();
        let fx = numdiff::jacobian(x, n, |p| self.step(p, u, i))?;
        let fu = numdiff::jacobian(u, n, |p| self.step(x, p, i))?;
        Ok((fx, fu))
    }

    fn reward_derivatives(&self, x: &DVector<f64>, u: &DVector<f64>, i: usize) -> Result<RewardExpansion> {
        let n = self.state_dim();
        let m = self.action_dim();
        let z = DVector::from_iterator(n + m, x.iter().chain(u.iter()).cloned());
        let (g, h) = numdiff::gradient_hessian(&z, |p| {
            let xs = p.rows(0, n).into_owned();
            let us = p.rows(n, m).into_owned();
            self.reward(&xs, &us, i)
        })?;
        Ok(RewardExpansion::split(&g, &h, n))
    }

    fn terminal_derivatives(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        numdiff::gradient_hessian(x, |p| self.terminal_reward(p))
    }

    /// `∂²step_k/∂u²` for every output `k`.
    fn action_curvature(&self, x: &DVector<f64>, u: &DVector<f64>, i: usize) -> Result<Vec<DMatrix<f64>>> {
        numdiff::output_hessians(u, self.state_dim(), |p| self.step(x, p, i))
    }
}

/// Second-order expansion of the running reward at one time step.
#[derive(Debug, Clone)]
pub struct RewardExpansion {
    pub rx: DVector<f64>,
    pub ru: DVector<f64>,
    pub rxx: DMatrix<f64>,
    pub ruu: DMatrix<f64>,
    pub rux: DMatrix<f64>,
}

impl RewardExpansion {
    /// Splits the gradient and Hessian over the stacked `(x, u)` into blocks;
    /// `n` is the state dimension.
    pub fn split(g: &DVector<f64>, h: &DMatrix<f64>, n: usize) -> Self {
        let m = g.len() - n;
        Self {
            rx: g.rows(0, n).into_owned(),
            ru: g.rows(n, m).into_owned(),
            rxx: h.view((0, 0), (n, n)).into_owned(),
            ruu: h.view((n, n), (m, m)).into_owned(),
            rux: h.view((n, 0), (m, n)).into_owned(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepModel {
    pub fx: DMatrix<f64>,
    pub fu: DMatrix<f64>,
    pub reward: RewardExpansion,
    /// Optional `∂²f_k/∂u²` per output, contracted with the value gradient
    /// into `Q_uu`.
    pub fuu: Option<Vec<DMatrix<f64>>>,
}

/// Local models along a whole trajectory.
#[derive(Debug, Clone)]
pub struct Expansion {
    pub steps: Vec<StepModel>,
    pub terminal_grad: DVector<f64>,
    pub terminal_hess: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub actions: Vec<DVector<f64>>,
    /// Cumulative reward including the terminal term.
    pub total: f64,
}

/// Simulates the open-loop action sequence from the initial state.
pub fn rollout<M: Mdp + ?Sized>(mdp: &M, actions: &[DVector<f64>]) -> Result<Trajectory> {
    let horizon = mdp.horizon();
    if actions.len() + 1 != horizon {
        return Err(Error::DimensionMismatch {
            context: "action sequence length",
            expected: horizon.saturating_sub(1),
            actual: actions.len(),
        });
    }
    let mut states = Vec::with_capacity(horizon);
    let mut x = mdp.initial_state();
    let mut total = 0.0;
    for (i, u) in actions.iter().enumerate() {
        total += mdp.reward(&x, u, i)?;
        let next = mdp.step(&x, u, i)?;
        states.push(x);
        x = next;
    }
    total += mdp.terminal_reward(&x)?;
    states.push(x);
    if !total.is_finite() {
        return Err(Error::NonFinite("trajectory reward"));
    }
    Ok(Trajectory {
        states,
        actions: actions.to_vec(),
        total,
    })
}

/// Derivatives of dynamics and reward along `nominal`; time steps are
/// expanded in parallel.
pub fn linearize<M: Mdp + ?Sized>(mdp: &M, nominal: &Trajectory, action_curvature: bool) -> Result<Expansion> {
    let steps = (0..nominal.actions.len())
        .into_par_iter()
        .map(|i| {
            let x = &nominal.states[i];
            let u = &nominal.actions[i];
            let (fx, fu) = mdp.dynamics_derivatives(x, u, i)?;
            let reward = mdp.reward_derivatives(x, u, i)?;
            let fuu = if action_curvature {
                let fuu = mdp.action_curvature(x, u, i)?;
                if !fuu.iter().all(all_finite) {
                    return Err(Error::NonFinite("action curvature"));
                }
                Some(fuu)
            } else {
                None
            };
            let finite = all_finite(&fx)
                && all_finite(&fu)
                && all_finite_vec(&reward.rx)
                && all_finite_vec(&reward.ru)
                && all_finite(&reward.rxx)
                && all_finite(&reward.ruu)
                && all_finite(&reward.rux);
            if finite {
                Ok(StepModel { fx, fu, reward, fuu })
            } else {
                Err(Error::NonFinite("local model"))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let (terminal_grad, terminal_hess) = mdp.terminal_derivatives(nominal.states.last().expect("nonempty"))?;
    if !all_finite_vec(&terminal_grad) || !all_finite(&terminal_hess) {
        return Err(Error::NonFinite("terminal model"));
    }
    Ok(Expansion {
        steps,
        terminal_grad,
        terminal_hess,
    })
}

#[derive(Debug, Clone)]
pub struct BackwardPass {
    /// Feedback gains `Lⁱ` (`m × n`).
    pub gains: Vec<DMatrix<f64>>,
    /// Open-loop corrections `kⁱ`.
    pub feedforward: Vec<DVector<f64>>,
    /// Predicted improvement at step length `s` is `s·linear + s²·quadratic`.
    pub expected_linear: f64,
    pub expected_quadratic: f64,
    /// Gradient of the open-loop objective with respect to each action.
    pub action_gradient: Vec<DVector<f64>>,
}

impl BackwardPass {
    pub fn expected_improvement(&self, step_length: f64) -> f64 {
        step_length * self.expected_linear + step_length * step_length * self.expected_quadratic
    }
}

/// Quadratic value recursion over a precomputed expansion. `Q_uu − reg·I`
/// must be negative definite at every step.
pub fn backward_recursion(expansion: &Expansion, reg: f64) -> Result<BackwardPass> {
    let len = expansion.steps.len();
    let mut vx = expansion.terminal_grad.clone();
    let mut vxx = expansion.terminal_hess.clone();
    let mut adjoint = expansion.terminal_grad.clone();
    let mut gains = vec![DMatrix::zeros(0, 0); len];
    let mut feedforward = vec![DVector::zeros(0); len];
    let mut action_gradient = vec![DVector::zeros(0); len];
    let (mut lin, mut quad) = (0.0, 0.0);

    for i in (0..len).rev() {
        let StepModel { fx, fu, reward: r, fuu } = &expansion.steps[i];
        action_gradient[i] = &r.ru + fu.transpose() * &adjoint;
        adjoint = &r.rx + fx.transpose() * &adjoint;

        let qx = &r.rx + fx.transpose() * &vx;
        let qu = &r.ru + fu.transpose() * &vx;
        let vxx_fx = &vxx * fx;
        let vxx_fu = &vxx * fu;
        let qxx = &r.rxx + fx.transpose() * &vxx_fx;
        let mut quu = &r.ruu + fu.transpose() * &vxx_fu;
        if let Some(fuu) = fuu {
            for (k, h) in fuu.iter().enumerate() {
                quu += h * vx[k];
            }
        }
        let quu = symmetrize(&quu);
        let qux = &r.rux + fu.transpose() * &vxx_fx;

        let m = quu.nrows();
        let neg_reg = -(&quu) + DMatrix::identity(m, m) * reg;
        let chol = neg_reg
            .cholesky()
            .ok_or(Error::NotPsd("action Hessian is not negative definite"))?;
        let k = chol.solve(&qu);
        let l = chol.solve(&qux);

        lin += k.dot(&qu);
        quad += 0.5 * k.dot(&(&quu * &k));

        let lt = l.transpose();
        vx = &qx + &lt * (&quu * &k) + &lt * &qu + qux.transpose() * &k;
        vxx = symmetrize(&(&qxx + &lt * &quu * &l + &lt * &qux + qux.transpose() * &l));
        if !all_finite_vec(&vx) || !all_finite(&vxx) {
            return Err(Error::NonFinite("value function"));
        }
        gains[i] = l;
        feedforward[i] = k;
    }
    Ok(BackwardPass {
        gains,
        feedforward,
        expected_linear: lin,
        expected_quadratic: quad,
        action_gradient,
    })
}

/// Linearizes around `nominal` and runs the value recursion.
pub fn backward_pass<M: Mdp + ?Sized>(mdp: &M, nominal: &Trajectory, reg: f64) -> Result<BackwardPass> {
    backward_recursion(&linearize(mdp, nominal, false)?, reg)
}

/// Rolls out `uⁱ = ūⁱ + step_length·kⁱ + Lⁱ(xⁱ − x̄ⁱ)`.
pub fn forward_pass<M: Mdp + ?Sized>(
    mdp: &M,
    nominal: &Trajectory,
    gains: &[DMatrix<f64>],
    feedforward: &[DVector<f64>],
    step_length: f64,
) -> Result<Trajectory> {
    let len = nominal.actions.len();
    let mut states = Vec::with_capacity(len + 1);
    let mut actions = Vec::with_capacity(len);
    let mut x = nominal.states[0].clone();
    let mut total = 0.0;
    for i in 0..len {
        let u = &nominal.actions[i] + &feedforward[i] * step_length + &gains[i] * (&x - &nominal.states[i]);
        if !all_finite_vec(&u) {
            return Err(Error::NonFinite("forward pass action"));
        }
        total += mdp.reward(&x, &u, i)?;
        let next = mdp.step(&x, &u, i)?;
        if !all_finite_vec(&next) {
            return Err(Error::NonFinite("forward pass state"));
        }
        states.push(x);
        actions.push(u);
        x = next;
    }
    total += mdp.terminal_reward(&x)?;
    states.push(x);
    if !total.is_finite() {
        return Err(Error::NonFinite("forward pass reward"));
    }
    Ok(Trajectory {
        states,
        actions,
        total,
    })
}

/// Solver settings. Every field has a default.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SolveOptions {
    pub max_iterations: usize,
    /// Relative improvement below which an iteration counts as stalled.
    pub tolerance: f64,
    /// Consecutive stalled iterations that end the solve.
    pub stall_iterations: usize,
    pub reg_init: f64,
    pub reg_min: f64,
    pub reg_max: f64,
    pub reg_increase: f64,
    pub reg_decrease: f64,
    pub min_step_length: f64,
    /// Adds the second-order action term of the dynamics to `Q_uu`. Off by
    /// default (pure Gauss-Newton); helps when an action acts on the belief
    /// only through curvature, like a nearly free sensor.
    pub action_curvature: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-7,
            stall_iterations: 2,
            reg_init: 1e-6,
            reg_min: 1e-9,
            reg_max: 1e9,
            reg_increase: 10.0,
            reg_decrease: 2.0,
            min_step_length: 1e-4,
            action_curvature: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub nominal_beliefs: Vec<DVector<f64>>,
    pub nominal_actions: Vec<DVector<f64>>,
    pub gains: Vec<DMatrix<f64>>,
    pub feedforward: Vec<DVector<f64>>,
    /// Total reward after initialization and after every accepted iteration.
    pub cost_log: Vec<f64>,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub converged: bool,
    pub wall_time: f64,
}

impl SolveReport {
    pub fn objective(&self) -> f64 {
        *self.cost_log.last().expect("cost log is never empty")
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory {
            states: self.nominal_beliefs.clone(),
            actions: self.nominal_actions.clone(),
            total: self.objective(),
        }
    }
}

/// Maximizes the objective from `initial_actions` with backtracking line
/// search and adaptive regularization of `Q_uu`.
pub fn solve<M: Mdp + ?Sized>(mdp: &M, initial_actions: &[DVector<f64>], options: &SolveOptions) -> Result<SolveReport> {
    let start = Instant::now();
    let mut traj = rollout(mdp, initial_actions)?;
    let mut cost_log = vec![traj.total];
    let mut reg = options.reg_init.clamp(options.reg_min, options.reg_max);
    let mut stalled = 0usize;
    let mut accepted_steps = 0usize;
    let mut converged = false;
    let mut iterations = 0usize;
    let mut expansion = linearize(mdp, &traj, options.action_curvature);

    'outer: while iterations < options.max_iterations {
        iterations += 1;
        let model = match &expansion {
            Ok(e) => e,
            Err(_) => break,
        };
        let pass = loop {
            match backward_recursion(model, reg) {
                Ok(p) => break p,
                Err(_) => {
                    reg *= options.reg_increase;
                    if reg > options.reg_max {
                        break 'outer;
                    }
                }
            }
        };
        let scale = 1.0 + traj.total.abs();
        if pass.expected_linear.abs() <= options.tolerance * scale {
            converged = true;
            break;
        }

        let mut step = 1.0;
        let mut candidate = None;
        while step >= options.min_step_length {
            if let Ok(c) = forward_pass(mdp, &traj, &pass.gains, &pass.feedforward, step) {
                if c.total > traj.total {
                    candidate = Some(c);
                    break;
                }
            }
            step *= 0.5;
        }

        match candidate {
            Some(c) => {
                let relative = (c.total - traj.total) / scale;
                traj = c;
                cost_log.push(traj.total);
                accepted_steps += 1;
                reg = (reg / options.reg_decrease).max(options.reg_min);
                expansion = linearize(mdp, &traj, options.action_curvature);
                stalled = if relative < options.tolerance { stalled + 1 } else { 0 };
                if stalled >= options.stall_iterations {
                    converged = true;
                    break;
                }
            }
            None => {
                reg *= options.reg_increase;
                if reg > options.reg_max {
                    break;
                }
            }
        }
    }

    // Gains for execution come from a pass at the returned nominal.
    let model = expansion.ok();
    let len = traj.actions.len();
    let (gains, feedforward) = model
        .and_then(|m| {
            let mut r = options.reg_min;
            while r <= options.reg_max {
                if let Ok(p) = backward_recursion(&m, r) {
                    return Some((p.gains, p.feedforward));
                }
                r *= options.reg_increase;
            }
            None
        })
        .unwrap_or_else(|| {
            (
                vec![DMatrix::zeros(mdp.action_dim(), mdp.state_dim()); len],
                vec![DVector::zeros(mdp.action_dim()); len],
            )
        });

    Ok(SolveReport {
        nominal_beliefs: traj.states,
        nominal_actions: traj.actions,
        gains,
        feedforward,
        cost_log,
        iterations,
        accepted_steps,
        converged,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Solves a sequence of problems, warm-starting each from the previous
/// solution's actions.
pub fn continuation_solve<M, F>(
    family: F,
    schedule: &[f64],
    initial_actions: &[DVector<f64>],
    options: &SolveOptions,
) -> Result<Vec<SolveReport>>
where
    M: Mdp,
    F: Fn(f64) -> Result<M>,
{
    if schedule.is_empty() {
        return Err(Error::InvalidParameter("empty continuation schedule".into()));
    }
    let mut actions = initial_actions.to_vec();
    let mut reports = Vec::with_capacity(schedule.len());
    for &param in schedule {
        let mdp = family(param)?;
        let report = solve(&mdp, &actions, options)?;
        actions = report.nominal_actions.clone();
        reports.push(report);
    }
    Ok(reports)
}
