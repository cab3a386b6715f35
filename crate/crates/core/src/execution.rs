//! Closed-loop execution of a planned policy against sampled dynamics.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::belief::{Belief, BeliefVector, Layout};
use crate::constraint;
use crate::ddp::SolveReport;
use crate::domains::DomainSpec;
use crate::error::{Error, Result};
use crate::filter::euler_step;
use crate::linalg::{all_finite_vec, psd_sqrt};

const PROCESS_STREAM: u64 = 0;
const OBSERVATION_STREAM: u64 = 1;
const INITIAL_STREAM: u64 = 2;

/// Time-varying affine feedback `π(b̂, i) = āⁱ + Lⁱ(b̂ − b̄ⁱ)` around a
/// nominal belief trajectory. Time indices are zero-based.
#[derive(Debug, Clone)]
pub struct LinearPolicy {
    pub nominal_beliefs: Vec<BeliefVector>,
    pub nominal_actions: Vec<DVector<f64>>,
    pub gains: Vec<DMatrix<f64>>,
    pub layout: Layout,
}

impl LinearPolicy {
    pub fn new(
        nominal_beliefs: Vec<BeliefVector>,
        nominal_actions: Vec<DVector<f64>>,
        gains: Vec<DMatrix<f64>>,
        layout: Layout,
    ) -> Result<Self> {
        let n = nominal_beliefs.len();
        if n < 2 || nominal_actions.len() + 1 != n || gains.len() + 1 != n {
            return Err(Error::InvalidParameter(format!(
                "policy sequences must have lengths N, N−1, N−1 (got {}, {}, {})",
                n,
                nominal_actions.len(),
                gains.len()
            )));
        }
        let m = nominal_actions[0].len();
        for b in &nominal_beliefs {
            crate::linalg::check_dims("nominal belief length", layout.len(), b.len())?;
        }
        for (a, l) in nominal_actions.iter().zip(&gains) {
            crate::linalg::check_dims("nominal action length", m, a.len())?;
            if l.shape() != (m, layout.len()) {
                return Err(Error::DimensionMismatch {
                    context: "feedback gain shape",
                    expected: m * layout.len(),
                    actual: l.len(),
                });
            }
        }
        Ok(Self {
            nominal_beliefs,
            nominal_actions,
            gains,
            layout,
        })
    }

    pub fn from_report(report: &SolveReport, layout: Layout) -> Result<Self> {
        Self::new(
            report.nominal_beliefs.clone(),
            report.nominal_actions.clone(),
            report.gains.clone(),
            layout,
        )
    }

    /// Number of actions in the plan.
    pub fn steps(&self) -> usize {
        self.nominal_actions.len()
    }

    /// Feedback law in belief-vector coordinates.
    pub fn action_for_vector(&self, b: &BeliefVector, i: usize) -> Result<DVector<f64>> {
        if i >= self.steps() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.steps(),
            });
        }
        crate::linalg::check_dims("belief vector length", self.layout.len(), b.len())?;
        Ok(&self.nominal_actions[i] + &self.gains[i] * (b - &self.nominal_beliefs[i]))
    }

    pub fn policy_action(&self, b: &Belief, i: usize) -> Result<DVector<f64>> {
        let x = self.layout.vectorize(b)?;
        self.action_for_vector(&x, i)
    }
}

/// Noise multipliers (on standard deviations) for the simulated world. Zero
/// gives noiseless replay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOptions {
    pub process_noise_scale: f64,
    pub observation_noise_scale: f64,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            process_noise_scale: 1.0,
            observation_noise_scale: 1.0,
        }
    }
}

impl RolloutOptions {
    pub fn noiseless() -> Self {
        Self {
            process_noise_scale: 0.0,
            observation_noise_scale: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RolloutRecord {
    pub seed: u64,
    /// `s⁰ … sᴺ⁻¹`; shorter when the rollout failed.
    pub true_states: Vec<DVector<f64>>,
    /// `z¹ … zᴺ⁻¹`, each taken after the corresponding action.
    pub observations: Vec<DVector<f64>>,
    /// Estimator beliefs, aligned with `true_states`.
    pub beliefs: Vec<Belief>,
    pub actions: Vec<DVector<f64>>,
    /// Realized reward: running rewards plus the terminal reward.
    pub realized_reward: f64,
    /// Why the rollout stopped early, if it did.
    pub failure: Option<String>,
}

impl RolloutRecord {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.true_states.last().expect("a record holds the initial state")
    }
}

fn standard_normal(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws a true initial state from the domain's initial belief.
pub fn sample_initial_state(domain: &DomainSpec, seed: u64) -> Result<DVector<f64>> {
    let mut rng = stream(seed, INITIAL_STREAM);
    let (component, constrained) = match &domain.initial_belief {
        Belief::Gaussian(g) => (g.clone(), false),
        Belief::Constrained(c) => {
            let pick_free = rng.random::<f64>() < c.weight;
            (if pick_free { c.free.clone() } else { c.surface.clone() }, true)
        }
    };
    let eps = standard_normal(&mut rng, component.dim());
    let s = &component.mean + psd_sqrt(&component.cov) * eps;
    match (&domain.constraint, constrained) {
        (Some(c), true) => constraint::enforce_constraint(&s, c.as_ref()),
        _ => Ok(s),
    }
}

/// Runs the policy once from `true_init` with the estimator started at the
/// domain's initial belief. Identical seeds give identical records.
pub fn rollout(
    policy: &LinearPolicy,
    domain: &DomainSpec,
    true_init: &DVector<f64>,
    seed: u64,
    options: &RolloutOptions,
) -> Result<RolloutRecord> {
    crate::linalg::check_dims("true initial state", domain.state_dim(), true_init.len())?;
    if policy.steps() + 1 != domain.horizon {
        return Err(Error::InvalidParameter(
            "policy length does not match the domain horizon".into(),
        ));
    }
    let mut process_rng = stream(seed, PROCESS_STREAM);
    let mut observation_rng = stream(seed, OBSERVATION_STREAM);
    let dynamics = domain.dynamics.as_ref();
    let observation = domain.observation.as_ref();
    let reward = domain.reward.as_ref();
    let sqrt_tau = dynamics.timestep().sqrt();

    let mut record = RolloutRecord {
        seed,
        true_states: vec![true_init.clone()],
        observations: Vec::new(),
        beliefs: vec![domain.initial_belief.clone()],
        actions: Vec::new(),
        realized_reward: 0.0,
        failure: None,
    };
    let mut s = true_init.clone();
    let mut b = domain.initial_belief.clone();

    for i in 0..policy.steps() {
        let a = match policy.policy_action(&b, i) {
            Ok(a) if all_finite_vec(&a) => a,
            Ok(_) => return Ok(fail(record, "non-finite action")),
            Err(e) => return Ok(fail(record, &e.to_string())),
        };
        record.realized_reward += reward.running(&s, &a, i);

        let mut next = euler_step(&s, &a, dynamics)?;
        let q = dynamics.noise_map(&s, &a);
        let eps = standard_normal(&mut process_rng, q.ncols());
        if options.process_noise_scale != 0.0 {
            next += q * eps * (sqrt_tau * options.process_noise_scale);
        }
        if let Some(c) = &domain.constraint {
            next = constraint::enforce_constraint(&next, c.as_ref())?;
        }

        let mut z = observation.mean(&next);
        let w = observation.noise_cov(&next, &a);
        let eps = standard_normal(&mut observation_rng, z.len());
        if options.observation_noise_scale != 0.0 {
            z += psd_sqrt(&w) * eps * options.observation_noise_scale;
        }

        let updated = domain.belief_correct(&b, &a, &z);
        record.true_states.push(next.clone());
        record.observations.push(z);
        record.actions.push(a);
        s = next;
        match updated {
            Ok(nb) if belief_is_finite(&nb) => {
                record.beliefs.push(nb.clone());
                b = nb;
            }
            Ok(_) => return Ok(fail(record, "estimator diverged")),
            Err(e) => return Ok(fail(record, &format!("estimator failed: {e}"))),
        }
    }
    record.realized_reward += reward.terminal(&s);
    Ok(record)
}

fn belief_is_finite(b: &Belief) -> bool {
    let m = b.moments();
    all_finite_vec(&m.mean) && m.cov.iter().all(|x| x.is_finite())
}

fn fail(mut record: RolloutRecord, why: &str) -> RolloutRecord {
    record.realized_reward = f64::NAN;
    record.failure = Some(why.to_string());
    record
}

/// Independent rollouts, one per seed, each from a true state sampled from
/// the initial belief with the same seed. Runs in parallel; the result is
/// ordered like `seeds`.
pub fn rollout_many(
    policy: &LinearPolicy,
    domain: &DomainSpec,
    seeds: &[u64],
    options: &RolloutOptions,
) -> Result<Vec<RolloutRecord>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let init = sample_initial_state(domain, seed)?;
            rollout(policy, domain, &init, seed, options)
        })
        .collect()
}
