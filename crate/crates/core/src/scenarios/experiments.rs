//! Closed loops for the four experiments.

use nalgebra::{DVector, Vector2};

use crate::controllers::{impedance_torque, to_input, zero_controller, ImpedanceConfig};
use crate::dynamics::{end_effector_jacobian, end_effector_position, RobotModel, State};
use crate::simulator::Experiment;

/// Impedance controller tracking a square-wave setpoint along one axis.
#[derive(Debug, Clone)]
pub struct StepResponse {
    pub initial_q: DVector<f64>,
    pub impedance: ImpedanceConfig,
    /// Low level of the square wave (the initial end-effector position).
    pub base: Vector2<f64>,
    /// Displacement of the high level, m.
    pub step: Vector2<f64>,
    /// Time of the first rising edge, s.
    pub first_edge: f64,
    /// Full square-wave period, s.
    pub period: f64,
}

impl StepResponse {
    pub fn setpoint(&self, t: f64) -> Vector2<f64> {
        if t < self.first_edge {
            return self.base;
        }
        let half = 0.5 * self.period;
        let phase = ((t - self.first_edge) / half).floor() as i64;
        if phase % 2 == 0 {
            self.base + self.step
        } else {
            self.base
        }
    }

    fn config_at(&self, t: f64) -> ImpedanceConfig {
        ImpedanceConfig {
            setpoint: self.setpoint(t),
            ..self.impedance.clone()
        }
    }
}

impl Experiment for StepResponse {
    fn initial_state(&self, _model: &RobotModel) -> State {
        State::at_rest(self.initial_q.clone())
    }

    fn nominal_input(&mut self, t: f64, measured: &State, model: &RobotModel) -> DVector<f64> {
        impedance_torque(model, measured, &self.config_at(t))
    }

    fn spring_energy(&self, t: f64, q: &DVector<f64>, model: &RobotModel) -> f64 {
        self.config_at(t).spring_energy(model, q)
    }
}

/// A tension-only string from the end-effector to a fixed anchor, held
/// taut against the impedance controller and released at `release_time`.
#[derive(Debug, Clone)]
pub struct ContactLoss {
    pub initial_q: DVector<f64>,
    /// Setpoint lifted away from the anchor.
    pub impedance: ImpedanceConfig,
    pub anchor: Vector2<f64>,
    pub rest_length: f64,
    /// N/m
    pub string_stiffness: f64,
    pub release_time: f64,
}

impl ContactLoss {
    /// Places the anchor `length` below the initial end-effector position
    /// and pre-stretches the string so that the arm starts in equilibrium
    /// with the setpoint lifted by `lift`.
    #[allow(clippy::too_many_arguments)]
    pub fn preloaded(
        model: &RobotModel,
        initial_q: DVector<f64>,
        stiffness: f64,
        damping: f64,
        lift: f64,
        length: f64,
        string_stiffness: f64,
        release_time: f64,
    ) -> Self {
        let x0 = end_effector_position(model, &initial_q);
        let impedance =
            ImpedanceConfig::isotropic(stiffness, damping, x0 + Vector2::new(0.0, lift));
        let tension = stiffness * lift;
        Self {
            initial_q,
            impedance,
            anchor: x0 - Vector2::new(0.0, length),
            rest_length: length - tension / string_stiffness,
            string_stiffness,
            release_time,
        }
    }

    pub fn string_force(&self, t: f64, x: Vector2<f64>) -> Vector2<f64> {
        if t >= self.release_time {
            return Vector2::zeros();
        }
        let d = x - self.anchor;
        let dist = d.norm();
        if dist <= self.rest_length || dist == 0.0 {
            return Vector2::zeros();
        }
        -d * (self.string_stiffness * (dist - self.rest_length) / dist)
    }
}

impl Experiment for ContactLoss {
    fn initial_state(&self, _model: &RobotModel) -> State {
        State::at_rest(self.initial_q.clone())
    }

    fn nominal_input(&mut self, _t: f64, measured: &State, model: &RobotModel) -> DVector<f64> {
        impedance_torque(model, measured, &self.impedance)
    }

    fn interaction_torque(&self, t: f64, state: &State, model: &RobotModel) -> DVector<f64> {
        let x = end_effector_position(model, &state.q);
        end_effector_jacobian(model, &state.q).transpose() * self.string_force(t, x)
    }

    fn spring_energy(&self, _t: f64, q: &DVector<f64>, model: &RobotModel) -> f64 {
        self.impedance.spring_energy(model, q)
    }
}

/// Raised-cosine force bump applied at the end-effector with the nominal
/// controller disabled.
#[derive(Debug, Clone)]
pub struct ExternalPush {
    pub initial_q: DVector<f64>,
    /// N
    pub peak_force: f64,
    /// s
    pub duration: f64,
    pub start: f64,
    /// Unit direction of the force in the plane.
    pub direction: Vector2<f64>,
}

impl ExternalPush {
    pub fn force(&self, t: f64) -> Vector2<f64> {
        let s = t - self.start;
        if s <= 0.0 || s >= self.duration {
            return Vector2::zeros();
        }
        let shape = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * s / self.duration).cos());
        self.direction * (self.peak_force * shape)
    }
}

impl Experiment for ExternalPush {
    fn initial_state(&self, _model: &RobotModel) -> State {
        State::at_rest(self.initial_q.clone())
    }

    fn nominal_input(&mut self, _t: f64, _measured: &State, model: &RobotModel) -> DVector<f64> {
        zero_controller(model)
    }

    fn interaction_torque(&self, t: f64, state: &State, model: &RobotModel) -> DVector<f64> {
        end_effector_jacobian(model, &state.q).transpose() * self.force(t)
    }
}

/// Velocity-regulated virtual force along `y` delivering a constant power,
/// injected downstream of the filter.
#[derive(Debug, Clone)]
pub struct ConstantPower {
    pub initial_q: DVector<f64>,
    /// W
    pub power: f64,
    /// Below this end-effector y-speed the force saturates at `power / v_min`.
    pub v_min: f64,
}

impl ConstantPower {
    pub fn force_y(&self, vy: f64) -> f64 {
        if vy.abs() >= self.v_min {
            self.power / vy
        } else if vy < 0.0 {
            -self.power / self.v_min
        } else {
            self.power / self.v_min
        }
    }
}

impl Experiment for ConstantPower {
    fn initial_state(&self, _model: &RobotModel) -> State {
        State::at_rest(self.initial_q.clone())
    }

    fn nominal_input(&mut self, _t: f64, _measured: &State, model: &RobotModel) -> DVector<f64> {
        zero_controller(model)
    }

    fn unmodelled_input(&mut self, _t: f64, measured: &State, model: &RobotModel) -> DVector<f64> {
        let jac = end_effector_jacobian(model, &measured.q);
        let vy = (&jac * &measured.qdot)[1];
        let tau = jac.transpose() * Vector2::new(0.0, self.force_y(vy));
        to_input(model, tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn square_wave_setpoint() {
        let model = RobotModel::desk_arm();
        let q = DVector::from_vec(vec![-0.6, 1.4, 0.6]);
        let base = end_effector_position(&model, &q);
        let exp = StepResponse {
            initial_q: q,
            impedance: ImpedanceConfig::isotropic(200.0, 6.0, base),
            base,
            step: Vector2::new(0.0, 0.4),
            first_edge: 0.5,
            period: 4.0,
        };
        assert_eq!(exp.setpoint(0.0), base);
        assert_eq!(exp.setpoint(0.5), base + Vector2::new(0.0, 0.4));
        assert_eq!(exp.setpoint(2.49), base + Vector2::new(0.0, 0.4));
        assert_eq!(exp.setpoint(2.5), base);
        assert_eq!(exp.setpoint(4.5), base + Vector2::new(0.0, 0.4));
    }

    #[test]
    fn preloaded_string_balances_impedance() {
        let model = RobotModel::desk_arm().without_gravity();
        let q = DVector::from_vec(vec![-0.6, 1.4, 0.6]);
        let exp = ContactLoss::preloaded(&model, q.clone(), 200.0, 6.0, 0.25, 0.3, 1e4, 0.3);
        let x = end_effector_position(&model, &q);
        let f = exp.string_force(0.0, x);
        assert_abs_diff_eq!(f.y, -50.0, epsilon = 1e-9);
        let s = State::at_rest(q.clone());
        let mut e = exp.clone();
        let total = e.nominal_input(0.0, &s, &model) + e.interaction_torque(0.0, &s, &model);
        assert!(total.amax() < 1e-9);
        assert_abs_diff_eq!(exp.spring_energy(0.0, &q, &model), 6.25, epsilon = 1e-12);
        assert_eq!(exp.string_force(0.3, x), Vector2::zeros());
        // slack string pulls nothing
        assert_eq!(
            exp.string_force(0.0, exp.anchor + Vector2::new(0.0, 0.1)),
            Vector2::zeros()
        );
    }

    #[test]
    fn push_profile_is_raised_cosine() {
        let p = ExternalPush {
            initial_q: DVector::zeros(3),
            peak_force: 10.0,
            duration: 0.4,
            start: 0.1,
            direction: Vector2::new(0.0, 1.0),
        };
        assert_eq!(p.force(0.0), Vector2::zeros());
        assert_abs_diff_eq!(p.force(0.3).y, 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.force(0.2).y, 5.0, epsilon = 1e-12);
        assert_eq!(p.force(0.5), Vector2::zeros());
    }

    #[test]
    fn constant_power_force_law() {
        let cp = ConstantPower {
            initial_q: DVector::zeros(3),
            power: 2.0,
            v_min: 0.05,
        };
        assert_abs_diff_eq!(cp.force_y(0.5) * 0.5, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cp.force_y(-0.5) * -0.5, 2.0, epsilon = 1e-15);
        assert_eq!(cp.force_y(0.0), 40.0);
        assert_eq!(cp.force_y(-0.01), -40.0);
    }
}
