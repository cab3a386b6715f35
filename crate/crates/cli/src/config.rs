//! Run configuration: JSON with a default for every omitted field.
//!
//! ```json
//! {
//!   "domain": { "hand_eye": { "horizon": 40 } },
//!   "solver": { "max_iterations": 300 },
//!   "schedule": [10, 1, 0.3, 0.05],
//!   "rollout": { "seeds": 20, "initial_state": "mean",
//!                "obstacle_shift": { "magnitude": 0.2 } },
//!   "output_dir": "out/hand_eye"
//! }
//! ```
//!
//! `domain` holds exactly one of `planar_nav`, `hand_eye` or `lqg` with that
//! domain's parameters. `solver` keys override the domain's default solver
//! options (hand-eye enables `action_curvature`). `schedule` is the fovea
//! continuation and only applies to `hand_eye`.

use std::path::{Path, PathBuf};

use locpomdp::domains::hand_eye::OBSTACLES;
use locpomdp::domains::{make_hand_eye, make_lqg, make_planar_nav, HandEyeParams, LqgParams, PlanarNavParams};
use locpomdp::{DomainSpec, SolveOptions};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    PlanarNav(PlanarNavParams),
    HandEye(HandEyeParams),
    Lqg(LqgParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// The mean of the initial belief.
    Mean,
    /// A draw from the initial belief, seeded per rollout.
    Sample,
}

/// Moves every obstacle by `magnitude` in a direction drawn per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObstacleShift {
    pub magnitude: f64,
    /// Base seed of the direction draws; rollout seed `k` uses `seed + k`.
    pub seed: u64,
}

impl Default for ObstacleShift {
    fn default() -> Self {
        Self {
            magnitude: 0.2,
            seed: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    pub seeds: usize,
    pub first_seed: u64,
    pub initial_state: InitialState,
    pub process_noise_scale: f64,
    pub observation_noise_scale: f64,
    /// When set, every seed runs in the nominal and in the shifted scene.
    pub obstacle_shift: Option<ObstacleShift>,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            seeds: 20,
            first_seed: 0,
            initial_state: InitialState::Sample,
            process_noise_scale: 1.0,
            observation_noise_scale: 1.0,
            obstacle_shift: None,
        }
    }
}

/// The file format. `solver` stays a raw object until the domain is known.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    schema_version: Option<u32>,
    domain: DomainConfig,
    #[serde(default)]
    solver: Map<String, Value>,
    #[serde(default)]
    schedule: Option<Vec<f64>>,
    #[serde(default)]
    rollout: RolloutConfig,
    #[serde(default)]
    output_dir: Option<PathBuf>,
}

/// Fully resolved configuration; this is what gets echoed next to the
/// outputs and it parses back to itself.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub domain: DomainConfig,
    pub solver: SolveOptions,
    /// Empty for domains without a continuation parameter.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub schedule: Vec<f64>,
    pub rollout: RolloutConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl DomainConfig {
    pub fn name(&self) -> &'static str {
        match self {
            Self::PlanarNav(_) => "planar_nav",
            Self::HandEye(_) => "hand_eye",
            Self::Lqg(_) => "lqg",
        }
    }

    pub fn default_solver(&self) -> SolveOptions {
        match self {
            // Eye actions reach the belief only through curvature.
            Self::HandEye(_) => SolveOptions {
                action_curvature: true,
                ..Default::default()
            },
            _ => SolveOptions::default(),
        }
    }
}

fn config_error(path: &Path, e: &serde_json::Error) -> CliError {
    CliError::Config(format!(
        "{}:{}:{}: {}",
        path.display(),
        e.line(),
        e.column(),
        e
    ))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    /// `origin` only labels diagnostics.
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| config_error(origin, &e))?;
        if let Some(v) = raw.schema_version {
            if v != SCHEMA_VERSION {
                return Err(CliError::Config(format!(
                    "{}: schema_version {v} is not supported (expected {SCHEMA_VERSION})",
                    origin.display()
                )));
            }
        }
        let mut solver = match serde_json::to_value(raw.domain.default_solver()) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("solver options serialize to an object"),
        };
        solver.extend(raw.solver);
        let solver: SolveOptions = serde_json::from_value(Value::Object(solver))
            .map_err(|e| CliError::Config(format!("{}: solver: {e}", origin.display())))?;
        let schedule = match (&raw.domain, raw.schedule) {
            (DomainConfig::HandEye(p), s) => s.unwrap_or_else(|| p.eta_schedule.clone()),
            (_, Some(s)) if !s.is_empty() => {
                return Err(CliError::Config(format!(
                    "{}: schedule: only the hand_eye domain has a continuation parameter",
                    origin.display()
                )))
            }
            _ => Vec::new(),
        };
        let config = Self {
            schema_version: SCHEMA_VERSION,
            domain: raw.domain,
            solver,
            schedule,
            rollout: raw.rollout,
            output_dir: raw.output_dir,
        };
        config.validate().map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", origin.display())),
            other => other,
        })?;
        Ok(config)
    }

    pub fn with_schedule(mut self, stages: Vec<f64>) -> Result<Self, CliError> {
        if !matches!(self.domain, DomainConfig::HandEye(_)) {
            return Err(CliError::Config(
                "--stages: only the hand_eye domain has a continuation parameter".into(),
            ));
        }
        self.schedule = stages;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if matches!(self.domain, DomainConfig::HandEye(_)) && self.schedule.is_empty() {
            return Err(CliError::Config("schedule: must not be empty".into()));
        }
        if let Some(bad) = self.schedule.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(CliError::Config(format!("schedule: value {bad} must be positive")));
        }
        let r = &self.rollout;
        for (name, v) in [
            ("rollout.process_noise_scale", r.process_noise_scale),
            ("rollout.observation_noise_scale", r.observation_noise_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!("{name}: must be finite and nonnegative")));
            }
        }
        if let Some(shift) = &r.obstacle_shift {
            if self.obstacle_count() == 0 {
                return Err(CliError::Config(format!(
                    "rollout.obstacle_shift: the {} domain has no movable obstacles",
                    self.domain.name()
                )));
            }
            if !(shift.magnitude >= 0.0 && shift.magnitude.is_finite()) {
                return Err(CliError::Config(
                    "rollout.obstacle_shift.magnitude: must be finite and nonnegative".into(),
                ));
            }
        }
        let s = &self.solver;
        if s.max_iterations == 0 || !(s.tolerance > 0.0) || !(s.reg_min > 0.0 && s.reg_min <= s.reg_max) {
            return Err(CliError::Config("solver: invalid iteration, tolerance or regularization bounds".into()));
        }
        // Building every stage validates the domain parameters.
        self.stage_parameters()
            .iter()
            .try_for_each(|&p| self.build(p).map(drop))
    }

    /// Obstacles that are part of the true state and can be shifted.
    pub fn obstacle_count(&self) -> usize {
        match self.domain {
            DomainConfig::HandEye(_) => OBSTACLES.len(),
            _ => 0,
        }
    }

    /// Continuation values, or a single placeholder for domains without one.
    pub fn stage_parameters(&self) -> Vec<f64> {
        if self.schedule.is_empty() {
            vec![f64::NAN]
        } else {
            self.schedule.clone()
        }
    }

    /// Domain for one stage; `param` is the fovea size for hand-eye.
    pub fn build(&self, param: f64) -> Result<DomainSpec, CliError> {
        let built = match &self.domain {
            DomainConfig::PlanarNav(p) => make_planar_nav(p),
            DomainConfig::HandEye(p) => make_hand_eye(p, param),
            DomainConfig::Lqg(p) => make_lqg(p),
        };
        built.map_err(|e| CliError::Config(format!("domain.{}: {e}", self.domain.name())))
    }

    /// Domain used for execution: the last stage.
    pub fn final_domain(&self) -> Result<DomainSpec, CliError> {
        self.build(*self.stage_parameters().last().expect("at least one stage"))
    }

    /// Output directory: `--out`, then `output_dir`, then
    /// `$LOCPOMDP_OUT/<config stem>`, then `locpomdp-out/<config stem>`.
    pub fn output_dir(&self, flag: Option<&Path>, env_root: Option<&Path>, config_path: &Path) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(p) = &self.output_dir {
            return p.clone();
        }
        let stem = config_path
            .file_stem()
            .map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
        env_root.unwrap_or_else(|| Path::new("locpomdp-out")).join(stem)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
