//! On-disk formats. Every JSON artifact carries `schema_version`.
//!
//! `trajectory.csv` columns: `t`, then one column per belief-vector slot in
//! layout order (see [`locpomdp::Layout::slot_names`]), then `action0 …`;
//! the action cells of the final row are empty.
//!
//! `rollout_aggregate.csv` columns: `seed, scene, realized_reward,
//! terminal_error, min_clearance, max_nominal_deviation, failed`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use locpomdp::{Belief, DomainSpec, LinearPolicy, RolloutRecord, SolveReport};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::SCHEMA_VERSION;
use crate::CliError;

pub const CONFIG_FILE: &str = "config.json";
pub const REPORT_FILE: &str = "solve_report.json";
pub const POLICY_FILE: &str = "policy.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const TIMING_FILE: &str = "timing.json";
pub const STAGES_DIR: &str = "stages";
pub const ROLLOUT_AGGREGATE_FILE: &str = "rollout_aggregate.csv";
pub const ROLLOUT_SUMMARY_FILE: &str = "rollout_summary.json";

pub fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_error(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

fn vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// One planned step in human-readable form.
#[derive(Debug, Serialize)]
pub struct StepSummary {
    pub t: usize,
    pub mean: Vec<f64>,
    pub cov_diag: Vec<f64>,
    /// Free-component weight, for constrained beliefs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action: Option<Vec<f64>>,
}

fn summarize_belief(b: &Belief) -> (Vec<f64>, Vec<f64>, Option<f64>) {
    let m = b.moments();
    (
        vec(&m.mean),
        m.cov.diagonal().iter().copied().collect(),
        b.as_constrained().map(|c| c.weight),
    )
}

pub fn plan_steps(domain: &DomainSpec, report: &SolveReport) -> Result<Vec<StepSummary>, CliError> {
    report
        .nominal_beliefs
        .iter()
        .enumerate()
        .map(|(t, x)| {
            let b = domain.decode(x).map_err(CliError::Solve)?;
            let (mean, cov_diag, weight) = summarize_belief(&b);
            Ok(StepSummary {
                t,
                mean,
                cov_diag,
                weight,
                action: report.nominal_actions.get(t).map(vec),
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct StageReport {
    pub schema_version: u32,
    pub domain: String,
    pub stage: usize,
    /// Continuation parameter of the stage (fovea size), if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parameter: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub objective: f64,
    pub cost_log: Vec<f64>,
    pub steps: Vec<StepSummary>,
}

impl StageReport {
    pub fn new(domain: &DomainSpec, stage: usize, parameter: f64, report: &SolveReport) -> Result<Self, CliError> {
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            domain: domain.name.clone(),
            stage,
            parameter: parameter.is_finite().then_some(parameter),
            converged: report.converged,
            iterations: report.iterations,
            accepted_steps: report.accepted_steps,
            objective: report.objective(),
            cost_log: report.cost_log.clone(),
            steps: plan_steps(domain, report)?,
        })
    }
}

#[derive(Debug, Serialize)]
pub struct StageOutline {
    pub stage: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parameter: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
}

/// The final plan plus an outline of every continuation stage.
#[derive(Debug, Serialize)]
pub struct SolveSummary {
    pub schema_version: u32,
    pub domain: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub belief_dim: usize,
    pub horizon: usize,
    /// Every stage converged.
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub stages: Vec<StageOutline>,
    /// Cost log of the final stage.
    pub cost_log: Vec<f64>,
    pub steps: Vec<StepSummary>,
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub schema_version: u32,
    pub wall_time: f64,
    pub stage_wall_times: Vec<f64>,
}

/// Everything needed to execute the plan.
#[derive(Debug, Serialize, Deserialize)]
pub struct PolicyFile {
    pub schema_version: u32,
    pub domain: String,
    pub nominal_beliefs: Vec<Vec<f64>>,
    pub nominal_actions: Vec<Vec<f64>>,
    /// Row-major `m × belief_dim` gain per step.
    pub gains: Vec<Vec<Vec<f64>>>,
}

impl PolicyFile {
    pub fn new(domain: &DomainSpec, report: &SolveReport) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            domain: domain.name.clone(),
            nominal_beliefs: report.nominal_beliefs.iter().map(vec).collect(),
            nominal_actions: report.nominal_actions.iter().map(vec).collect(),
            gains: report.gains.iter().map(rows).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!(
                "{}: no solve report to execute ({e}); run `solve` first",
                path.display()
            ))
        })?;
        let file: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "{}: schema_version {} is not supported",
                path.display(),
                file.schema_version
            )));
        }
        Ok(file)
    }

    pub fn into_policy(self, domain: &DomainSpec) -> Result<LinearPolicy, CliError> {
        if self.domain != domain.name {
            return Err(CliError::Config(format!(
                "policy was solved for domain {} but the config builds {}",
                self.domain, domain.name
            )));
        }
        let gains = self
            .gains
            .iter()
            .map(|g| {
                let r = g.len();
                let c = g.first().map_or(0, Vec::len);
                if g.iter().any(|row| row.len() != c) {
                    return Err(CliError::Config("policy gain rows have unequal lengths".into()));
                }
                Ok(DMatrix::from_fn(r, c, |i, j| g[i][j]))
            })
            .collect::<Result<Vec<_>, _>>()?;
        LinearPolicy::new(
            self.nominal_beliefs.into_iter().map(DVector::from_vec).collect(),
            self.nominal_actions.into_iter().map(DVector::from_vec).collect(),
            gains,
            domain.layout.clone(),
        )
        .map_err(|e| CliError::Config(format!("policy does not fit the configured domain: {e}")))
    }
}

pub fn trajectory_csv(domain: &DomainSpec, report: &SolveReport) -> String {
    let m = domain.action_dim();
    let mut out = String::from("t");
    for name in domain.layout.slot_names() {
        out.push(',');
        out.push_str(&name);
    }
    for k in 0..m {
        let _ = write!(out, ",action{k}");
    }
    out.push('\n');
    for (t, x) in report.nominal_beliefs.iter().enumerate() {
        let _ = write!(out, "{t}");
        for v in x.iter() {
            let _ = write!(out, ",{v}");
        }
        match report.nominal_actions.get(t) {
            Some(a) => a.iter().for_each(|v| {
                let _ = write!(out, ",{v}");
            }),
            None => out.push_str(&",".repeat(m)),
        }
        out.push('\n');
    }
    out
}

/// Scores of one rollout.
#[derive(Debug, Clone, Serialize)]
pub struct RolloutScores {
    pub seed: u64,
    pub scene: String,
    /// `null` when the rollout failed.
    pub realized_reward: Option<f64>,
    pub terminal_error: f64,
    /// Smallest agent–obstacle distance over the rollout; `null` without
    /// obstacles.
    pub min_clearance: Option<f64>,
    /// Largest deviation of the true state from the planned mean.
    pub max_nominal_deviation: f64,
    pub failed: bool,
}

impl RolloutScores {
    pub fn new(domain: &DomainSpec, policy: &LinearPolicy, scene: &str, rec: &RolloutRecord) -> Result<Self, CliError> {
        let clearance = rec
            .true_states
            .iter()
            .filter_map(|s| domain.scene.clearance(s))
            .reduce(f64::min);
        let mut deviation: f64 = 0.0;
        for (s, x) in rec.true_states.iter().zip(&policy.nominal_beliefs) {
            let planned = domain.decode(x).map_err(CliError::Solve)?.moments().mean;
            deviation = deviation.max((s - planned).amax());
        }
        Ok(Self {
            seed: rec.seed,
            scene: scene.to_string(),
            realized_reward: rec.realized_reward.is_finite().then_some(rec.realized_reward),
            terminal_error: domain.scene.terminal_error(rec.final_state()),
            min_clearance: clearance,
            max_nominal_deviation: deviation,
            failed: rec.failed(),
        })
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        format!(
            "{},{},{},{},{},{},{}\n",
            self.seed,
            self.scene,
            opt(self.realized_reward),
            self.terminal_error,
            opt(self.min_clearance),
            self.max_nominal_deviation,
            self.failed
        )
    }
}

pub const AGGREGATE_HEADER: &str =
    "seed,scene,realized_reward,terminal_error,min_clearance,max_nominal_deviation,failed\n";

#[derive(Debug, Serialize)]
pub struct RolloutFile {
    pub schema_version: u32,
    #[serde(flatten)]
    pub scores: RolloutScores,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub true_states: Vec<Vec<f64>>,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub belief_means: Vec<Vec<f64>>,
    pub belief_cov_diags: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub belief_weights: Option<Vec<f64>>,
}

impl RolloutFile {
    pub fn new(scores: RolloutScores, rec: &RolloutRecord) -> Self {
        let summaries: Vec<_> = rec.beliefs.iter().map(summarize_belief).collect();
        let weights: Option<Vec<f64>> = summaries.iter().map(|s| s.2).collect();
        Self {
            schema_version: SCHEMA_VERSION,
            scores,
            failure: rec.failure.clone(),
            true_states: rec.true_states.iter().map(vec).collect(),
            observations: rec.observations.iter().map(vec).collect(),
            actions: rec.actions.iter().map(vec).collect(),
            belief_means: summaries.iter().map(|s| s.0.clone()).collect(),
            belief_cov_diags: summaries.iter().map(|s| s.1.clone()).collect(),
            belief_weights: weights.filter(|w| !w.is_empty()),
        }
    }
}

/// Per-scene statistics over all seeds.
#[derive(Debug, Serialize)]
pub struct SceneSummary {
    pub rollouts: usize,
    pub failures: usize,
    pub median_realized_reward: Option<f64>,
    pub median_terminal_error: f64,
    pub median_min_clearance: Option<f64>,
    pub worst_min_clearance: Option<f64>,
    pub max_nominal_deviation: f64,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let k = values.len();
    Some(if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    })
}

impl SceneSummary {
    pub fn new(scores: &[RolloutScores]) -> Self {
        let mut rewards: Vec<f64> = scores.iter().filter_map(|s| s.realized_reward).collect();
        let mut errors: Vec<f64> = scores.iter().map(|s| s.terminal_error).collect();
        let mut clearances: Vec<f64> = scores.iter().filter_map(|s| s.min_clearance).collect();
        Self {
            rollouts: scores.len(),
            failures: scores.iter().filter(|s| s.failed).count(),
            median_realized_reward: median(&mut rewards),
            median_terminal_error: median(&mut errors).unwrap_or(f64::NAN),
            worst_min_clearance: clearances.iter().copied().reduce(f64::min),
            median_min_clearance: median(&mut clearances),
            max_nominal_deviation: scores.iter().map(|s| s.max_nominal_deviation).fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RolloutSummary {
    pub schema_version: u32,
    pub domain: String,
    pub nominal: SceneSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shifted: Option<SceneSummary>,
    /// Worst shifted-scene clearance over the median nominal-scene clearance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shifted_clearance_ratio: Option<f64>,
}
