//! Kinetic-energy barrier `h = K_max − ½ q̇ᵀD(q)q̇` and the safety filter
//! built on it.
//!
//! With `α(h) = γh`, the filter enforces `Ψ(u) = ḣ(u) + γh ≥ 0`, which is a
//! single halfspace in `u`:
//!
//! ```text
//! aᵀu ≥ b,   a = −Bᵀq̇,   b = −q̇ᵀg(q) − γh  (+ q̇ᵀτ̂_ext when interaction-aware)
//! ```
//!
//! The correction `u_safe = u − u_nom` always points along `Bᵀq̇` with a
//! non-positive coefficient, so the power it injects, `q̇ᵀB u_safe`, is never
//! positive.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{gravity_vector, inertia_matrix, RobotModel, State};
use crate::error::FilterError;
use crate::qp::{self, QpProblem, QpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InteractionMode {
    /// Constraint ignores external torques.
    #[default]
    Agnostic,
    /// Constraint includes the external torque estimate.
    Aware,
}

impl std::str::FromStr for InteractionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "agnostic" => Ok(Self::Agnostic),
            "aware" => Ok(Self::Aware),
            other => Err(format!(
                "unknown mode `{other}` (expected agnostic or aware)"
            )),
        }
    }
}

/// Per-coordinate bounds on the filtered input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBox {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl InputBox {
    pub fn symmetric(limits: &DVector<f64>) -> Self {
        Self {
            lower: -limits,
            upper: limits.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    /// Kinetic energy limit, J.
    pub k_max: f64,
    /// Slope of the linear class-K function α(h) = γh, 1/s.
    pub gamma: f64,
    pub mode: InteractionMode,
    pub input_box: Option<InputBox>,
    /// Below this value of ‖Bᵀq̇‖ no constraint direction exists and the
    /// nominal input passes through.
    pub eps_v: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            k_max: 1.0,
            gamma: 10.0,
            mode: InteractionMode::Agnostic,
            input_box: None,
            eps_v: 1e-6,
        }
    }
}

impl FilterConfig {
    pub fn new(k_max: f64, gamma: f64) -> Self {
        Self {
            k_max,
            gamma,
            ..Self::default()
        }
    }

    pub fn with_mode(mut self, mode: InteractionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if !(self.k_max.is_finite() && self.k_max >= 0.0) {
            return Err(FilterError::Config(format!(
                "k_max must be >= 0, got {}",
                self.k_max
            )));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(FilterError::Config(format!(
                "gamma must be > 0, got {}",
                self.gamma
            )));
        }
        if !(self.eps_v.is_finite() && self.eps_v > 0.0) {
            return Err(FilterError::Config(format!(
                "eps_v must be > 0, got {}",
                self.eps_v
            )));
        }
        Ok(())
    }

    fn alpha(&self, h: f64) -> f64 {
        self.gamma * h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStatus {
    Ok,
    /// The box does not intersect the constraint; `u` is the box point that
    /// dissipates the most power.
    InfeasibleClipped,
    /// Ψ(u_nom) < 0 but ‖Bᵀq̇‖ ≤ eps_v; the nominal input was passed through.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    /// Commanded input.
    pub u: DVector<f64>,
    /// `u − u_nom`.
    pub u_safe: DVector<f64>,
    /// Barrier value, J.
    pub h: f64,
    /// Barrier rate at the commanded input, W.
    pub hdot: f64,
    /// Constraint margin Ψ at the nominal input, W.
    pub psi: f64,
    /// Power injected by the correction, `q̇ᵀB u_safe`, W.
    pub p_safe: f64,
    pub intervened: bool,
    pub status: FilterStatus,
}

/// `h = K_max − ½ q̇ᵀD(q)q̇`.
pub fn barrier(
    model: &RobotModel,
    state: &State,
    config: &FilterConfig,
) -> Result<f64, FilterError> {
    model.check_state(state)?;
    let d = inertia_matrix(model, &state.q);
    Ok(config.k_max - 0.5 * state.qdot.dot(&(d * &state.qdot)))
}

/// Agnostic: `ḣ = q̇ᵀg − q̇ᵀBu`. Aware: `ḣ = q̇ᵀ(g − Bu − τ̂_ext)`.
pub fn barrier_rate(
    model: &RobotModel,
    state: &State,
    u: &DVector<f64>,
    tau_ext_est: &DVector<f64>,
    config: &FilterConfig,
) -> Result<f64, FilterError> {
    model.check_state(state)?;
    model.check_vector(u)?;
    let g = gravity_vector(model, &state.q);
    rate_from_parts(model, state, &g, u, tau_ext_est, config)
}

fn rate_from_parts(
    model: &RobotModel,
    state: &State,
    g: &DVector<f64>,
    u: &DVector<f64>,
    tau_ext_est: &DVector<f64>,
    config: &FilterConfig,
) -> Result<f64, FilterError> {
    let qd = &state.qdot;
    let mut rate = qd.dot(g) - qd.dot(&(model.actuation() * u));
    if config.mode == InteractionMode::Aware {
        model.check_vector(tau_ext_est)?;
        rate -= qd.dot(tau_ext_est);
    }
    Ok(rate)
}

/// `Ψ = ḣ + γh`.
pub fn psi(
    model: &RobotModel,
    state: &State,
    u: &DVector<f64>,
    tau_ext_est: &DVector<f64>,
    config: &FilterConfig,
) -> Result<f64, FilterError> {
    let h = barrier(model, state, config)?;
    let hdot = barrier_rate(model, state, u, tau_ext_est, config)?;
    Ok(hdot + config.alpha(h))
}

/// Minimally invasive safety filter.
pub fn filter(
    model: &RobotModel,
    state: &State,
    u_nom: &DVector<f64>,
    tau_ext_est: &DVector<f64>,
    config: &FilterConfig,
) -> Result<FilterResult, FilterError> {
    config.validate()?;
    model.check_state(state)?;
    model.check_vector(u_nom)?;

    let d = inertia_matrix(model, &state.q);
    let g = gravity_vector(model, &state.q);
    let qd = &state.qdot;
    let h = config.k_max - 0.5 * qd.dot(&(d * qd));
    let hdot_nom = rate_from_parts(model, state, &g, u_nom, tau_ext_est, config)?;
    let psi_nom = hdot_nom + config.alpha(h);

    let passthrough = |status| FilterResult {
        u: u_nom.clone(),
        u_safe: DVector::zeros(u_nom.len()),
        h,
        hdot: hdot_nom,
        psi: psi_nom,
        p_safe: 0.0,
        intervened: false,
        status,
    };

    if psi_nom >= 0.0 {
        return Ok(passthrough(FilterStatus::Ok));
    }

    let direction = model.actuation().transpose() * qd;
    if direction.norm() <= config.eps_v {
        return Ok(passthrough(FilterStatus::Degenerate));
    }

    let a = -&direction;
    let mut b = -qd.dot(&g) - config.alpha(h);
    if config.mode == InteractionMode::Aware {
        b += qd.dot(tau_ext_est);
    }
    let mut problem = QpProblem::halfspace(u_nom.clone(), a, b);
    if let Some(bx) = &config.input_box {
        model.check_vector(&bx.lower)?;
        model.check_vector(&bx.upper)?;
        problem = problem.with_box(bx.lower.clone(), bx.upper.clone());
    }
    let solution = qp::solve(&problem)?;
    let status = match solution.status {
        QpStatus::Optimal => FilterStatus::Ok,
        QpStatus::Infeasible => FilterStatus::InfeasibleClipped,
    };
    let u = solution.u;
    let u_safe = &u - u_nom;
    let p_safe = direction.dot(&u_safe);
    let hdot = rate_from_parts(model, state, &g, &u, tau_ext_est, config)?;
    Ok(FilterResult {
        u,
        u_safe,
        h,
        hdot,
        psi: psi_nom,
        p_safe,
        intervened: true,
        status,
    })
}

/// Filter result for a run with the filter switched off: diagnostics are
/// evaluated, the nominal input is passed through untouched.
pub fn bypass(
    model: &RobotModel,
    state: &State,
    u_nom: &DVector<f64>,
    tau_ext_est: &DVector<f64>,
    config: &FilterConfig,
) -> Result<FilterResult, FilterError> {
    let h = barrier(model, state, config)?;
    let hdot = barrier_rate(model, state, u_nom, tau_ext_est, config)?;
    Ok(FilterResult {
        u: u_nom.clone(),
        u_safe: DVector::zeros(u_nom.len()),
        h,
        hdot,
        psi: hdot + config.alpha(h),
        p_safe: 0.0,
        intervened: false,
        status: FilterStatus::Ok,
    })
}
