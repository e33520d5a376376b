//! Fixed-step closed-loop simulation.
//!
//! Each control tick:
//! 1. the plant state is measured, the velocity optionally corrupted with
//!    white noise and passed through the acceleration rate limiter;
//! 2. the experiment supplies the nominal input, the unmodelled input that is
//!    added downstream of the filter, and the interaction torque; the
//!    estimate `τ̂_ext` handed to the filter is derived from the true external
//!    torque according to [`EstimateFidelity`];
//! 3. the safety filter runs once;
//! 4. the plant is integrated over `physics_substeps` RK4 steps with the
//!    commanded input held constant;
//! 5. one [`TraceRecord`] is appended.
//!
//! The work done by each power flow is integrated alongside the plant state,
//! so the energy balance of a run can be audited exactly up to the
//! integrator's truncation error.

use std::collections::VecDeque;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    end_effector_position, forward_dynamics, gravity_vector, kinetic_energy, RobotModel, State,
};
use crate::error::{FilterError, ModelError};
use crate::filter::{self, FilterConfig};
use crate::trace::TraceRecord;

/// How the external torque estimate handed to the filter relates to the
/// true external torque.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum EstimateFidelity {
    #[default]
    Exact,
    /// `τ̂ = factor · τ_ext`
    Scaled(f64),
    /// `τ̂` lags `τ_ext` by this many control ticks.
    Delayed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Control period, s.
    pub dt_control: f64,
    pub physics_substeps: usize,
    /// s
    pub duration: f64,
    /// Standard deviation of additive velocity noise, rad/s.
    pub velocity_noise_std: f64,
    /// Acceleration bound of the velocity rate limiter, rad/s². `None`
    /// disables the limiter.
    pub qddot_max: Option<DVector<f64>>,
    pub seed: u64,
    /// Gravity is cancelled by an ideal lower-level compensation; plant,
    /// controller and filter all see g(q) = 0.
    pub gravity_compensated: bool,
    pub filter_enabled: bool,
    pub estimate: EstimateFidelity,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt_control: 1e-3,
            physics_substeps: 10,
            duration: 1.0,
            velocity_noise_std: 0.0,
            qddot_max: None,
            seed: 0,
            gravity_compensated: false,
            filter_enabled: true,
            estimate: EstimateFidelity::Exact,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, n: usize) -> Result<(), SimError> {
        if !(self.dt_control.is_finite() && self.dt_control > 0.0) {
            return Err(SimError::Config("dt_control must be > 0".into()));
        }
        if self.physics_substeps == 0 {
            return Err(SimError::Config("physics_substeps must be >= 1".into()));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(SimError::Config("duration must be >= 0".into()));
        }
        if !(self.velocity_noise_std.is_finite() && self.velocity_noise_std >= 0.0) {
            return Err(SimError::Config("velocity_noise_std must be >= 0".into()));
        }
        if let Some(max) = &self.qddot_max {
            if max.len() != n || max.iter().any(|&m| m.is_nan() || m <= 0.0) {
                return Err(SimError::Config(format!(
                    "qddot_max must hold {n} positive entries"
                )));
            }
        }
        if let EstimateFidelity::Scaled(f) = self.estimate {
            if !f.is_finite() {
                return Err(SimError::Config("estimate scale must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn ticks(&self) -> usize {
        (self.duration / self.dt_control).round() as usize
    }
}

/// The closed loop around the plant: nominal controller plus environment.
pub trait Experiment {
    fn initial_state(&self, model: &RobotModel) -> State;

    /// Nominal input at a control tick, computed from the measured state.
    fn nominal_input(&mut self, t: f64, measured: &State, model: &RobotModel) -> DVector<f64>;

    /// Physical interaction torque (contacts, pushes); evaluated inside the
    /// integrator at every stage.
    fn interaction_torque(&self, _t: f64, _state: &State, model: &RobotModel) -> DVector<f64> {
        DVector::zeros(model.n_links())
    }

    /// Torque added downstream of the filter and held over the tick.
    fn unmodelled_input(&mut self, _t: f64, _measured: &State, model: &RobotModel) -> DVector<f64> {
        DVector::zeros(model.n_links())
    }

    /// Energy stored in the nominal controller's virtual spring, J.
    fn spring_energy(&self, _t: f64, _q: &DVector<f64>, _model: &RobotModel) -> f64 {
        0.0
    }
}

/// Work done on the plant over a run, J.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WorkTotals {
    /// ∫ q̇ᵀB u_nom dt
    pub nominal: f64,
    /// ∫ q̇ᵀB u_safe dt
    pub safety: f64,
    /// ∫ q̇ᵀτ_ext dt
    pub external: f64,
    /// ∫ −q̇ᵀg dt
    pub gravity: f64,
}

impl WorkTotals {
    pub fn total(&self) -> f64 {
        self.nominal + self.safety + self.external + self.gravity
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<TraceRecord>,
    pub initial_state: State,
    pub final_state: State,
    pub final_time: f64,
    pub work: WorkTotals,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyAudit {
    pub delta_kinetic: f64,
    pub work: f64,
    pub residual: f64,
    pub max_kinetic: f64,
}

impl RunOutput {
    /// Compares the change in kinetic energy with the integrated power flows.
    pub fn energy_audit(&self, model: &RobotModel) -> Result<EnergyAudit, ModelError> {
        let k0 = kinetic_energy(model, &self.initial_state)?;
        let k1 = kinetic_energy(model, &self.final_state)?;
        let max_kinetic = self.records.iter().map(|r| r.k_e).fold(k1, f64::max);
        let work = self.work.total();
        Ok(EnergyAudit {
            delta_kinetic: k1 - k0,
            work,
            residual: (k1 - k0 - work).abs(),
            max_kinetic,
        })
    }

    pub fn max_kinetic_energy(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.k_e)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("simulation diverged at tick {tick} (t = {time:.4} s)")]
    Diverged {
        tick: usize,
        time: f64,
        partial: Box<RunOutput>,
    },
}

/// Acceleration rate limiter on a velocity signal:
/// `prev + clamp(raw − prev, −dt·q̈_max, dt·q̈_max)` per joint; samples
/// within the bound pass through unchanged.
pub fn rate_limit_velocity(
    prev: &DVector<f64>,
    raw: &DVector<f64>,
    dt: f64,
    qddot_max: &DVector<f64>,
) -> DVector<f64> {
    DVector::from_fn(prev.len(), |i, _| {
        let step = dt * qddot_max[i];
        let delta = raw[i] - prev[i];
        if delta.abs() <= step {
            raw[i]
        } else {
            prev[i] + step.copysign(delta)
        }
    })
}

struct Held<'a> {
    u_nom: &'a DVector<f64>,
    u_safe: &'a DVector<f64>,
    u: &'a DVector<f64>,
    u_err: &'a DVector<f64>,
}

/// Packed integrator state: q, q̇ and the four work integrals.
fn derivative<E: Experiment + ?Sized>(
    plant: &RobotModel,
    experiment: &E,
    t: f64,
    y: &DVector<f64>,
    held: &Held<'_>,
) -> Result<DVector<f64>, ModelError> {
    let n = plant.n_links();
    let state = State::new(y.rows(0, n).into_owned(), y.rows(n, n).into_owned());
    let tau = experiment.interaction_torque(t, &state, plant) + held.u_err;
    let qdd = forward_dynamics(plant, &state, held.u, &tau)?;
    let bq = plant.actuation().transpose() * &state.qdot;
    let g = gravity_vector(plant, &state.q);
    let mut dy = DVector::zeros(2 * n + 4);
    dy.rows_mut(0, n).copy_from(&state.qdot);
    dy.rows_mut(n, n).copy_from(&qdd);
    dy[2 * n] = bq.dot(held.u_nom);
    dy[2 * n + 1] = bq.dot(held.u_safe);
    dy[2 * n + 2] = state.qdot.dot(&tau);
    dy[2 * n + 3] = -state.qdot.dot(&g);
    Ok(dy)
}

fn rk4_step<E: Experiment + ?Sized>(
    plant: &RobotModel,
    experiment: &E,
    t: f64,
    h: f64,
    y: &DVector<f64>,
    held: &Held<'_>,
) -> Result<DVector<f64>, ModelError> {
    let k1 = derivative(plant, experiment, t, y, held)?;
    let k2 = derivative(plant, experiment, t + 0.5 * h, &(y + &k1 * (0.5 * h)), held)?;
    let k3 = derivative(plant, experiment, t + 0.5 * h, &(y + &k2 * (0.5 * h)), held)?;
    let k4 = derivative(plant, experiment, t + h, &(y + &k3 * h), held)?;
    Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Runs one closed-loop simulation. Deterministic for a given seed.
pub fn run<E: Experiment + ?Sized>(
    model: &RobotModel,
    sim: &SimConfig,
    filter_config: &FilterConfig,
    experiment: &mut E,
) -> Result<RunOutput, SimError> {
    let n = model.n_links();
    sim.validate(n)?;
    filter_config.validate()?;
    let plant = if sim.gravity_compensated {
        model.without_gravity()
    } else {
        model.clone()
    };

    let initial_state = experiment.initial_state(&plant);
    plant.check_state(&initial_state)?;

    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let noise = if sim.velocity_noise_std > 0.0 {
        Some(Normal::new(0.0, sim.velocity_noise_std).expect("std checked above"))
    } else {
        None
    };

    let dt = sim.dt_control;
    let h = dt / sim.physics_substeps as f64;
    let ticks = sim.ticks();
    let zeros = DVector::zeros(n);

    let mut y = DVector::zeros(2 * n + 4);
    y.rows_mut(0, n).copy_from(&initial_state.q);
    y.rows_mut(n, n).copy_from(&initial_state.qdot);
    let mut state = initial_state.clone();
    let mut prev_velocity: Option<DVector<f64>> = None;
    let mut history: VecDeque<DVector<f64>> = VecDeque::new();
    let mut records = Vec::with_capacity(ticks);

    for tick in 0..ticks {
        let t = tick as f64 * dt;

        let mut measured_qdot = state.qdot.clone();
        if let Some(dist) = &noise {
            for v in measured_qdot.iter_mut() {
                *v += dist.sample(&mut rng);
            }
        }
        if let (Some(max), Some(prev)) = (&sim.qddot_max, &prev_velocity) {
            measured_qdot = rate_limit_velocity(prev, &measured_qdot, dt, max);
        }
        prev_velocity = Some(measured_qdot.clone());
        let measured = State::new(state.q.clone(), measured_qdot);

        let u_nom = experiment.nominal_input(t, &measured, &plant);
        let u_err = experiment.unmodelled_input(t, &measured, &plant);
        plant.check_vector(&u_nom)?;
        plant.check_vector(&u_err)?;
        let tau_true = experiment.interaction_torque(t, &state, &plant) + &u_err;
        let tau_est = match sim.estimate {
            EstimateFidelity::Exact => tau_true.clone(),
            EstimateFidelity::Scaled(f) => &tau_true * f,
            EstimateFidelity::Delayed(lag) => {
                history.push_back(tau_true.clone());
                if history.len() > lag + 1 {
                    history.pop_front();
                }
                if history.len() == lag + 1 {
                    history[0].clone()
                } else {
                    zeros.clone()
                }
            }
        };

        let result = if sim.filter_enabled {
            filter::filter(&plant, &measured, &u_nom, &tau_est, filter_config)?
        } else {
            filter::bypass(&plant, &measured, &u_nom, &tau_est, filter_config)?
        };

        let bq = plant.actuation().transpose() * &measured.qdot;
        records.push(TraceRecord {
            t,
            q: state.q.clone(),
            qdot: state.qdot.clone(),
            k_e: kinetic_energy(&plant, &state)?,
            h: result.h,
            psi: result.psi,
            u_nom: u_nom.clone(),
            u: result.u.clone(),
            u_safe: result.u_safe.clone(),
            p_nom: bq.dot(&u_nom),
            p_safe: result.p_safe,
            p_ext: measured.qdot.dot(&tau_true),
            e_spring: experiment.spring_energy(t, &state.q, &plant),
            ee: end_effector_position(&plant, &state.q),
            intervened: result.intervened,
        });

        let held = Held {
            u_nom: &u_nom,
            u_safe: &result.u_safe,
            u: &result.u,
            u_err: &u_err,
        };
        let mut blew_up = false;
        for sub in 0..sim.physics_substeps {
            let ts = t + sub as f64 * h;
            // A non-finite stage makes the inertia factorization fail.
            match rk4_step(&plant, &*experiment, ts, h, &y, &held) {
                Ok(next) => y = next,
                Err(_) => {
                    blew_up = true;
                    break;
                }
            }
        }
        state = State::new(y.rows(0, n).into_owned(), y.rows(n, n).into_owned());

        if blew_up || !y.iter().all(|v| v.is_finite()) {
            let work = work_from(&y, n);
            return Err(SimError::Diverged {
                tick,
                time: t,
                partial: Box::new(RunOutput {
                    records,
                    initial_state,
                    final_state: state,
                    final_time: t + dt,
                    work,
                }),
            });
        }
    }

    Ok(RunOutput {
        records,
        initial_state,
        final_state: state,
        final_time: ticks as f64 * dt,
        work: work_from(&y, n),
    })
}

fn work_from(y: &DVector<f64>, n: usize) -> WorkTotals {
    WorkTotals {
        nominal: y[2 * n],
        safety: y[2 * n + 1],
        external: y[2 * n + 2],
        gravity: y[2 * n + 3],
    }
}
