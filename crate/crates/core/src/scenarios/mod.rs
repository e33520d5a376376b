//! The four experiments as reproducible, file-configurable scenarios.
//!
//! A [`Scenario`] expands into one simulation per (case, γ[, P_ext]) and the
//! runs execute in parallel. Scenario files are TOML; any field left out
//! takes the built-in default for the scenario's `kind`:
//!
//! ```toml
//! name = "exp1"
//! kind = "step_response"   # contact_loss | external_interaction | constant_power
//!
//! [filter]
//! k_max = 1.0
//! gammas = [1.0, 2.0, 10.0, 50.0]
//! cases = ["agnostic", "off"]
//!
//! [sim]
//! duration = 6.5
//! ```

pub mod analysis;
pub mod checks;
pub mod experiments;

use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controllers::ImpedanceConfig;
use crate::dynamics::{end_effector_position, ModelFile, RobotModel};
use crate::error::ModelError;
use crate::filter::{FilterConfig, InputBox, InteractionMode};
use crate::simulator::{self, EstimateFidelity, Experiment, RunOutput, SimConfig, SimError};

use analysis::{detect_steady_state, fit_line, FitResult, SteadyState};
use experiments::{ConstantPower, ContactLoss, ExternalPush, StepResponse};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {message}")]
    Parse { context: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown scenario `{0}` (expected exp1..exp4 or a config file)")]
    Unknown(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("run `{label}`: {source}")]
    Sim {
        label: String,
        #[source]
        source: SimError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    StepResponse,
    ContactLoss,
    ExternalInteraction,
    ConstantPower,
}

/// Filter setting of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    Off,
    Agnostic,
    Aware,
}

impl Case {
    pub fn as_str(self) -> &'static str {
        match self {
            Case::Off => "off",
            Case::Agnostic => "agnostic",
            Case::Aware => "aware",
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Model file, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ModelFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt_control: f64,
    pub physics_substeps: usize,
    pub duration: f64,
    pub velocity_noise_std: f64,
    /// Rate-limiter bound per joint, rad/s²; empty disables the limiter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qddot_max: Option<Vec<f64>>,
    pub seed: u64,
    pub gravity_compensated: bool,
    pub estimate: EstimateFidelity,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub k_max: f64,
    pub gammas: Vec<f64>,
    pub cases: Vec<Case>,
    pub eps_v: f64,
    /// Symmetric bounds on the filtered input; omitted means unbounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub torque_box: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ImpedanceSection {
    /// N/m
    pub stiffness: f64,
    /// N·s/m
    pub damping: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StepSection {
    /// Setpoint displacement of the high level, m.
    pub offset: [f64; 2],
    pub first_edge: f64,
    pub period: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ContactSection {
    /// Setpoint lift above the anchored end-effector, m.
    pub lift: f64,
    pub string_length: f64,
    pub string_stiffness: f64,
    pub release_time: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PushSection {
    pub peak_force: f64,
    pub duration: f64,
    pub start: f64,
    pub direction: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PowerSection {
    /// Injected power values, W (multiplied by γ when `scale_with_gamma`).
    pub p_ext: Vec<f64>,
    pub scale_with_gamma: bool,
    /// m/s
    pub v_min: f64,
    /// Steady-state window, s.
    pub window: f64,
    /// Steady-state tolerance as a fraction of the injected power.
    pub tol_frac: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub kind: ScenarioKind,
    #[serde(default)]
    pub model: ModelSpec,
    pub initial_q: Vec<f64>,
    pub sim: SimSection,
    pub filter: FilterSection,
    pub impedance: ImpedanceSection,
    pub step: StepSection,
    pub contact: ContactSection,
    pub push: PushSection,
    pub power: PowerSection,
    /// Directory used to resolve relative paths.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

/// Joint-acceleration bound of the velocity rate limiter for the desk arm,
/// rad/s²; ten times the largest joint acceleration seen in the unfiltered
/// nominal runs.
pub const DESK_QDDOT_MAX: [f64; 3] = [800.0, 900.0, 3000.0];

impl Scenario {
    fn base(name: &str, kind: ScenarioKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
            model: ModelSpec::default(),
            initial_q: vec![-1.0, 1.6, 0.9],
            sim: SimSection {
                dt_control: 1e-3,
                physics_substeps: 10,
                duration: 3.0,
                velocity_noise_std: 0.0,
                qddot_max: Some(DESK_QDDOT_MAX.to_vec()),
                seed: 0,
                gravity_compensated: true,
                estimate: EstimateFidelity::Exact,
            },
            filter: FilterSection {
                k_max: 1.0,
                gammas: vec![1.0, 2.0, 10.0, 50.0],
                cases: vec![Case::Agnostic, Case::Off],
                eps_v: 1e-6,
                torque_box: None,
            },
            impedance: ImpedanceSection {
                stiffness: 200.0,
                damping: 6.0,
            },
            step: StepSection {
                offset: [0.0, 0.4],
                first_edge: 0.2,
                period: 4.0,
            },
            contact: ContactSection {
                lift: 0.25,
                string_length: 0.3,
                string_stiffness: 1e4,
                release_time: 0.2,
            },
            push: PushSection {
                peak_force: 12.0,
                duration: 0.5,
                start: 0.2,
                direction: [0.0, 1.0],
            },
            power: PowerSection {
                p_ext: vec![0.01, 0.015, 0.02, 0.025, 0.03],
                scale_with_gamma: true,
                v_min: 0.05,
                window: 0.5,
                tol_frac: 0.02,
            },
            base_dir: None,
        }
    }

    /// Cartesian step response (square-wave setpoint, 40 cm along y).
    pub fn step_response() -> Self {
        let mut s = Self::base("exp1", ScenarioKind::StepResponse);
        s.sim.duration = 6.2;
        s
    }

    /// Contact loss: string preloaded by lifting the setpoint 25 cm.
    pub fn contact_loss() -> Self {
        let mut s = Self::base("exp2", ScenarioKind::ContactLoss);
        s.sim.duration = 2.5;
        s
    }

    /// Pushed by a scripted hand force with the nominal controller off.
    pub fn external_interaction() -> Self {
        let mut s = Self::base("exp3", ScenarioKind::ExternalInteraction);
        s.filter.k_max = 0.3;
        s.filter.gammas = vec![50.0];
        s.filter.cases = vec![Case::Off, Case::Agnostic, Case::Aware];
        s.sim.duration = 1.5;
        s
    }

    /// Constant unmodelled power injection with `K_max = 0`.
    pub fn constant_power() -> Self {
        let mut s = Self::base("exp4", ScenarioKind::ConstantPower);
        s.filter.k_max = 0.0;
        s.filter.gammas = vec![5.0, 10.0, 20.0, 30.0, 40.0, 50.0];
        s.filter.cases = vec![Case::Agnostic];
        s.sim.duration = 2.0;
        s
    }

    pub fn defaults_for(kind: ScenarioKind) -> Self {
        match kind {
            ScenarioKind::StepResponse => Self::step_response(),
            ScenarioKind::ContactLoss => Self::contact_loss(),
            ScenarioKind::ExternalInteraction => Self::external_interaction(),
            ScenarioKind::ConstantPower => Self::constant_power(),
        }
    }

    /// `exp1`..`exp4` or a kind name.
    pub fn builtin(name: &str) -> Result<Self, ScenarioError> {
        match name {
            "exp1" | "step_response" => Ok(Self::step_response()),
            "exp2" | "contact_loss" => Ok(Self::contact_loss()),
            "exp3" | "external_interaction" => Ok(Self::external_interaction()),
            "exp4" | "constant_power" => Ok(Self::constant_power()),
            other => Err(ScenarioError::Unknown(other.to_string())),
        }
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut scenario = Self::from_toml_str(&text).map_err(|e| match e {
            ScenarioError::Parse { message, .. } => ScenarioError::Parse {
                context: path.display().to_string(),
                message,
            },
            other => other,
        })?;
        scenario.base_dir = path.parent().map(Path::to_path_buf);
        Ok(scenario)
    }

    /// Parses a scenario file, filling omitted fields from the defaults of
    /// its `kind` (or of its `name` when that is `exp1`..`exp4`).
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let parse_err = |message: String| ScenarioError::Parse {
            context: "scenario config".into(),
            message,
        };
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        let defaults = if let Some(kind) = table.get("kind") {
            let kind: ScenarioKind = kind
                .clone()
                .try_into()
                .map_err(|e: toml::de::Error| parse_err(format!("field `kind`: {e}")))?;
            Self::defaults_for(kind)
        } else if let Some(name) = table.get("name").and_then(|v| v.as_str()) {
            Self::builtin(name).map_err(|_| parse_err("missing field `kind`".into()))?
        } else {
            return Err(parse_err("missing field `kind`".into()));
        };
        let mut merged = toml::Table::try_from(&defaults).map_err(|e| parse_err(e.to_string()))?;
        merge(&mut merged, table);
        let scenario: Scenario = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Invalid(m.to_string()));
        if self.filter.gammas.is_empty() {
            return bad("filter.gammas must not be empty");
        }
        if self
            .filter
            .gammas
            .iter()
            .any(|g| !(g.is_finite() && *g > 0.0))
        {
            return bad("filter.gammas must be positive");
        }
        if self.filter.cases.is_empty() {
            return bad("filter.cases must not be empty");
        }
        if !(self.filter.k_max.is_finite() && self.filter.k_max >= 0.0) {
            return bad("filter.k_max must be >= 0");
        }
        if self.kind == ScenarioKind::ConstantPower {
            if self.power.p_ext.is_empty() {
                return bad("power.p_ext must not be empty");
            }
            if self.power.v_min <= 0.0 {
                return bad("power.v_min must be > 0");
            }
        }
        if self.kind == ScenarioKind::ExternalInteraction {
            let d = Vector2::from(self.push.direction);
            if d.norm() == 0.0 {
                return bad("push.direction must be non-zero");
            }
        }
        Ok(())
    }

    pub fn load_model(&self) -> Result<RobotModel, ScenarioError> {
        let model = match (&self.model.file, &self.model.params) {
            (Some(_), Some(_)) => {
                return Err(ScenarioError::Invalid(
                    "model: give either `file` or `params`, not both".into(),
                ))
            }
            (Some(file), None) => {
                let path = match &self.base_dir {
                    Some(dir) if file.is_relative() => dir.join(file),
                    _ => file.clone(),
                };
                RobotModel::from_toml_file(path)?
            }
            (None, Some(p)) => p.clone().into_model()?,
            (None, None) => RobotModel::desk_arm(),
        };
        if let Some(v) = self.sim.qddot_max.as_ref().filter(|v| !v.is_empty()) {
            if v.len() != model.n_links() || v.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
                return Err(ScenarioError::Invalid(format!(
                    "sim.qddot_max needs {} positive entries (or [] to disable the limiter)",
                    model.n_links()
                )));
            }
        }
        if self.initial_q.len() != model.n_links() {
            return Err(ScenarioError::Invalid(format!(
                "initial_q has {} entries, model has {} joints",
                self.initial_q.len(),
                model.n_links()
            )));
        }
        Ok(model)
    }

    pub fn sim_config(&self, case: Case, n: usize) -> SimConfig {
        let qddot_max = self
            .sim
            .qddot_max
            .as_ref()
            .filter(|v| !v.is_empty() && v.len() == n)
            .map(|v| DVector::from_column_slice(v));
        SimConfig {
            dt_control: self.sim.dt_control,
            physics_substeps: self.sim.physics_substeps,
            duration: self.sim.duration,
            velocity_noise_std: self.sim.velocity_noise_std,
            qddot_max,
            seed: self.sim.seed,
            gravity_compensated: self.sim.gravity_compensated,
            filter_enabled: case != Case::Off,
            estimate: self.sim.estimate,
        }
    }

    pub fn filter_config(&self, case: Case, gamma: f64) -> FilterConfig {
        FilterConfig {
            k_max: self.filter.k_max,
            gamma,
            mode: if case == Case::Aware {
                InteractionMode::Aware
            } else {
                InteractionMode::Agnostic
            },
            input_box: self
                .filter
                .torque_box
                .as_ref()
                .map(|l| InputBox::symmetric(&DVector::from_column_slice(l))),
            eps_v: self.filter.eps_v,
        }
    }

    /// One entry per simulation this scenario expands into.
    pub fn run_specs(&self) -> Vec<RunSpec> {
        let mut specs = Vec::new();
        for &case in &self.filter.cases {
            let gammas: Vec<f64> = if case == Case::Off {
                vec![self.filter.gammas[0]]
            } else {
                self.filter.gammas.clone()
            };
            for gamma in gammas {
                let label = if case == Case::Off {
                    format!("{}_off", self.name)
                } else {
                    format!("{}_{}_g{}", self.name, case.as_str(), gamma)
                };
                if self.kind == ScenarioKind::ConstantPower {
                    for &p in &self.power.p_ext {
                        let power = if self.power.scale_with_gamma {
                            p * gamma
                        } else {
                            p
                        };
                        specs.push(RunSpec {
                            label: format!("{label}_p{}", (power * 1e9).round() / 1e9),
                            case,
                            gamma,
                            p_ext: Some(power),
                        });
                    }
                } else {
                    specs.push(RunSpec {
                        label,
                        case,
                        gamma,
                        p_ext: None,
                    });
                }
            }
        }
        specs
    }

    fn impedance(&self, setpoint: Vector2<f64>) -> ImpedanceConfig {
        ImpedanceConfig::isotropic(self.impedance.stiffness, self.impedance.damping, setpoint)
    }

    pub fn build_experiment(
        &self,
        model: &RobotModel,
        spec: &RunSpec,
    ) -> Box<dyn Experiment + Send> {
        let q0 = DVector::from_column_slice(&self.initial_q);
        let x0 = end_effector_position(model, &q0);
        match self.kind {
            ScenarioKind::StepResponse => Box::new(StepResponse {
                initial_q: q0,
                impedance: self.impedance(x0),
                base: x0,
                step: Vector2::from(self.step.offset),
                first_edge: self.step.first_edge,
                period: self.step.period,
            }),
            ScenarioKind::ContactLoss => Box::new(ContactLoss::preloaded(
                model,
                q0,
                self.impedance.stiffness,
                self.impedance.damping,
                self.contact.lift,
                self.contact.string_length,
                self.contact.string_stiffness,
                self.contact.release_time,
            )),
            ScenarioKind::ExternalInteraction => Box::new(ExternalPush {
                initial_q: q0,
                peak_force: self.push.peak_force,
                duration: self.push.duration,
                start: self.push.start,
                direction: Vector2::from(self.push.direction).normalize(),
            }),
            ScenarioKind::ConstantPower => Box::new(ConstantPower {
                initial_q: q0,
                power: spec.p_ext.unwrap_or(0.0),
                v_min: self.power.v_min,
            }),
        }
    }

    /// Runs one expanded simulation.
    pub fn run_one(
        &self,
        model: &RobotModel,
        spec: &RunSpec,
    ) -> Result<ScenarioRun, ScenarioError> {
        let mut experiment = self.build_experiment(model, spec);
        let sim = self.sim_config(spec.case, model.n_links());
        let filter = self.filter_config(spec.case, spec.gamma);
        let output =
            simulator::run(model, &sim, &filter, experiment.as_mut()).map_err(|source| {
                ScenarioError::Sim {
                    label: spec.label.clone(),
                    source,
                }
            })?;
        Ok(ScenarioRun {
            spec: spec.clone(),
            output,
        })
    }

    /// Runs every expanded simulation in parallel, in `run_specs` order.
    pub fn run_all(&self, model: &RobotModel) -> Result<Vec<ScenarioRun>, ScenarioError> {
        self.validate()?;
        self.check_reachable(model)?;
        self.run_specs()
            .par_iter()
            .map(|spec| self.run_one(model, spec))
            .collect()
    }

    /// Rejects setpoints outside the arm's reach.
    pub fn check_reachable(&self, model: &RobotModel) -> Result<(), ScenarioError> {
        let q0 = DVector::from_column_slice(&self.initial_q);
        let x0 = end_effector_position(model, &q0);
        let target = match self.kind {
            ScenarioKind::StepResponse => x0 + Vector2::from(self.step.offset),
            ScenarioKind::ContactLoss => x0 + Vector2::new(0.0, self.contact.lift),
            _ => return Ok(()),
        };
        if target.norm() > model.reach() {
            return Err(ScenarioError::Invalid(format!(
                "setpoint ({:.3}, {:.3}) m is outside the workspace (reach {:.3} m)",
                target.x,
                target.y,
                model.reach()
            )));
        }
        Ok(())
    }

    /// Energy stored in the virtual spring when the string is released.
    pub fn stored_energy(&self, model: &RobotModel) -> Option<f64> {
        (self.kind == ScenarioKind::ContactLoss)
            .then_some(0.5 * self.impedance.stiffness * self.contact.lift * self.contact.lift)
            .filter(|_| model.n_links() > 0)
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub label: String,
    pub case: Case,
    pub gamma: f64,
    pub p_ext: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub spec: RunSpec,
    pub output: RunOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub gamma: f64,
    pub p_ext: f64,
    pub steady: Option<SteadyState>,
    /// Steady-state `K_e − K_max`, J.
    pub excess: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaFit {
    pub gamma: f64,
    pub fit: Option<FitResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerSweep {
    pub points: Vec<SweepPoint>,
    pub fits: Vec<GammaFit>,
}

/// Steady-state detection per run and a straight-line fit of `K_e − K_max`
/// against `P_ext` per γ. Runs without a steady state are excluded from the
/// fit with a warning.
pub fn analyze_power_sweep(scenario: &Scenario, runs: &[ScenarioRun]) -> PowerSweep {
    let mut points = Vec::new();
    for run in runs.iter().filter(|r| r.spec.case != Case::Off) {
        let Some(p) = run.spec.p_ext else { continue };
        let tol = scenario.power.tol_frac * p;
        let steady = detect_steady_state(&run.output.records, scenario.power.window, tol).ok();
        if steady.is_none() {
            log::warn!(
                "{}: no steady state within {} s",
                run.spec.label,
                scenario.sim.duration
            );
        }
        points.push(SweepPoint {
            gamma: run.spec.gamma,
            p_ext: p,
            steady,
            excess: steady.map(|s| s.k_ss - scenario.filter.k_max),
        });
    }
    let mut gammas: Vec<f64> = points.iter().map(|p| p.gamma).collect();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();
    let fits = gammas
        .into_iter()
        .map(|gamma| {
            let (x, y): (Vec<f64>, Vec<f64>) = points
                .iter()
                .filter(|p| p.gamma == gamma)
                .filter_map(|p| p.excess.map(|e| (p.p_ext, e)))
                .unzip();
            GammaFit {
                gamma,
                fit: fit_line(&x, &y).ok(),
            }
        })
        .collect();
    PowerSweep { points, fits }
}
