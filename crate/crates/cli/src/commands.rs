use std::fs;
use std::path::PathBuf;

use locpomdp::execution::{self, sample_initial_state};
use locpomdp::{ddp, DomainSpec, LinearPolicy, RolloutOptions, RolloutRecord};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::artifacts::{self as art, PolicyFile, RolloutFile, RolloutScores, RolloutSummary, SceneSummary};
use crate::config::{InitialState, ObstacleShift, RunConfig, SCHEMA_VERSION};
use crate::CliError;

/// Command-line inputs shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    /// Overrides `rollout.first_seed`.
    pub seed: Option<u64>,
    /// Overrides `schedule`.
    pub stages: Option<Vec<f64>>,
    /// Value of the output-root environment variable.
    pub env_root: Option<PathBuf>,
}

impl Invocation {
    pub fn new(config: impl Into<PathBuf>) -> Self {
        Self {
            config: config.into(),
            ..Default::default()
        }
    }

    /// Effective configuration and output directory.
    pub fn resolve(&self) -> Result<(RunConfig, PathBuf), CliError> {
        let mut config = RunConfig::load(&self.config)?;
        if let Some(stages) = &self.stages {
            config = config.with_schedule(stages.clone())?;
        }
        if let Some(seed) = self.seed {
            config.rollout.first_seed = seed;
        }
        let out = config.output_dir(self.out.as_deref(), self.env_root.as_deref(), &self.config);
        Ok((config, out))
    }
}

/// Validates the configuration and builds every stage without solving.
pub fn check(inv: &Invocation) -> Result<String, CliError> {
    let (config, out) = inv.resolve()?;
    let domain = config.final_domain()?;
    Ok(format!(
        "{}: ok (domain {}, n={}, m={}, belief={}, horizon={}, stages={}, output {})",
        inv.config.display(),
        domain.name,
        domain.state_dim(),
        domain.action_dim(),
        domain.layout.len(),
        domain.horizon,
        config.schedule.len().max(1),
        out.display()
    ))
}

/// Solves every stage and writes the plan. Non-convergence is reported in
/// the artifacts, not as an error.
pub fn solve(inv: &Invocation) -> Result<String, CliError> {
    let (config, out) = inv.resolve()?;
    art::write_text(&out.join(art::CONFIG_FILE), &(config.to_json() + "\n"))?;

    let params = config.stage_parameters();
    let domains = params.iter().map(|&p| config.build(p)).collect::<Result<Vec<_>, _>>()?;
    let final_domain = domains.last().expect("at least one stage");
    let family = |p: f64| {
        let k = params.iter().position(|&q| q.to_bits() == p.to_bits()).expect("scheduled value");
        Ok(domains[k].clone())
    };
    let reports = ddp::continuation_solve(family, &params, &domains[0].default_actions(), &config.solver)
        .map_err(CliError::Solve)?;

    let stages_dir = out.join(art::STAGES_DIR);
    if stages_dir.exists() {
        fs::remove_dir_all(&stages_dir).map_err(|e| art::io_error(&stages_dir, e))?;
    }
    let mut outline = Vec::new();
    for (k, ((report, domain), &p)) in reports.iter().zip(&domains).zip(&params).enumerate() {
        let stage = art::StageReport::new(domain, k, p, report)?;
        art::write_json(&stages_dir.join(format!("stage_{k}.json")), &stage)?;
        outline.push(art::StageOutline {
            stage: k,
            parameter: stage.parameter,
            converged: report.converged,
            iterations: report.iterations,
            objective: report.objective(),
        });
    }

    let last = reports.last().expect("at least one stage");
    let summary = art::SolveSummary {
        schema_version: SCHEMA_VERSION,
        domain: final_domain.name.clone(),
        state_dim: final_domain.state_dim(),
        action_dim: final_domain.action_dim(),
        belief_dim: final_domain.layout.len(),
        horizon: final_domain.horizon,
        converged: reports.iter().all(|r| r.converged),
        iterations: reports.iter().map(|r| r.iterations).sum(),
        objective: last.objective(),
        stages: outline,
        cost_log: last.cost_log.clone(),
        steps: art::plan_steps(final_domain, last)?,
    };
    art::write_json(&out.join(art::REPORT_FILE), &summary)?;
    art::write_json(&out.join(art::POLICY_FILE), &PolicyFile::new(final_domain, last))?;
    art::write_text(&out.join(art::TRAJECTORY_FILE), &art::trajectory_csv(final_domain, last))?;
    let timing = art::Timing {
        schema_version: SCHEMA_VERSION,
        wall_time: reports.iter().map(|r| r.wall_time).sum(),
        stage_wall_times: reports.iter().map(|r| r.wall_time).collect(),
    };
    art::write_json(&out.join(art::TIMING_FILE), &timing)?;

    Ok(format!(
        "solved {} in {:.2} s: converged={} iterations={} objective={:.6} -> {}",
        summary.domain,
        timing.wall_time,
        summary.converged,
        summary.iterations,
        summary.objective,
        out.display()
    ))
}

/// One displacement of length `magnitude` per obstacle, in directions drawn
/// from `shift.seed + seed`.
pub fn obstacle_shifts(shift: &ObstacleShift, seed: u64, obstacles: usize) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(shift.seed.wrapping_add(seed));
    (0..obstacles)
        .map(|_| {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            [shift.magnitude * angle.cos(), shift.magnitude * angle.sin()]
        })
        .collect()
}

fn initial_state(config: &RunConfig, domain: &DomainSpec, seed: u64) -> Result<DVector<f64>, CliError> {
    match config.rollout.initial_state {
        InitialState::Mean => Ok(domain.initial_belief.moments().mean),
        InitialState::Sample => sample_initial_state(domain, seed).map_err(CliError::Solve),
    }
}

struct Scene<'a> {
    name: &'static str,
    dir: PathBuf,
    shift: Option<&'a ObstacleShift>,
}

fn run_scene(
    config: &RunConfig,
    domain: &DomainSpec,
    policy: &LinearPolicy,
    scene: &Scene,
    seeds: &[u64],
) -> Result<Vec<RolloutScores>, CliError> {
    if scene.dir.exists() {
        fs::remove_dir_all(&scene.dir).map_err(|e| art::io_error(&scene.dir, e))?;
    }
    let options = RolloutOptions {
        process_noise_scale: config.rollout.process_noise_scale,
        observation_noise_scale: config.rollout.observation_noise_scale,
    };
    let obstacles = config.obstacle_count();
    seeds
        .par_iter()
        .map(|&seed| {
            let mut init = initial_state(config, domain, seed)?;
            if let Some(shift) = scene.shift {
                init = domain
                    .scene
                    .shift_obstacles(&init, &obstacle_shifts(shift, seed, obstacles))
                    .map_err(CliError::Solve)?;
            }
            let rec: RolloutRecord =
                execution::rollout(policy, domain, &init, seed, &options).map_err(CliError::Solve)?;
            let scores = RolloutScores::new(domain, policy, scene.name, &rec)?;
            let file = RolloutFile::new(scores.clone(), &rec);
            art::write_json(&scene.dir.join(format!("seed_{seed:05}.json")), &file)?;
            Ok(scores)
        })
        .collect()
}

/// Executes the solved policy over the configured seeds; requires a prior
/// `solve` into the same output directory.
pub fn rollout(inv: &Invocation) -> Result<String, CliError> {
    let (config, out) = inv.resolve()?;
    let domain = config.final_domain()?;
    let policy = PolicyFile::load(&out.join(art::POLICY_FILE))?.into_policy(&domain)?;
    let r = &config.rollout;
    let seeds: Vec<u64> = (0..r.seeds as u64).map(|k| r.first_seed + k).collect();

    let mut scenes = vec![Scene {
        name: "nominal",
        dir: out.join("rollouts"),
        shift: None,
    }];
    if let Some(shift) = &r.obstacle_shift {
        scenes.push(Scene {
            name: "shifted",
            dir: out.join("rollouts_shifted"),
            shift: Some(shift),
        });
    } else {
        let stale = out.join("rollouts_shifted");
        if stale.exists() {
            fs::remove_dir_all(&stale).map_err(|e| art::io_error(&stale, e))?;
        }
    }

    let mut csv = String::from(art::AGGREGATE_HEADER);
    let mut per_scene = Vec::new();
    for scene in &scenes {
        let scores = run_scene(&config, &domain, &policy, scene, &seeds)?;
        scores.iter().for_each(|s| csv.push_str(&s.csv_row()));
        per_scene.push(SceneSummary::new(&scores));
    }
    art::write_text(&out.join(art::ROLLOUT_AGGREGATE_FILE), &csv)?;

    let nominal = per_scene.remove(0);
    let shifted = per_scene.pop();
    let ratio = match (&shifted, nominal.median_min_clearance) {
        (Some(s), Some(m)) if m > 0.0 => s.worst_min_clearance.map(|w| w / m),
        _ => None,
    };
    let line = format!(
        "{} rollouts of {}: {} failed, median terminal error {:.4}{} -> {}",
        seeds.len() * scenes.len(),
        domain.name,
        nominal.failures + shifted.as_ref().map_or(0, |s| s.failures),
        nominal.median_terminal_error,
        ratio.map_or_else(String::new, |x| format!(", shifted clearance ratio {x:.3}")),
        out.display()
    );
    let summary = RolloutSummary {
        schema_version: SCHEMA_VERSION,
        domain: domain.name.clone(),
        nominal,
        shifted,
        shifted_clearance_ratio: ratio,
    };
    art::write_json(&out.join(art::ROLLOUT_SUMMARY_FILE), &summary)?;
    Ok(line)
}
