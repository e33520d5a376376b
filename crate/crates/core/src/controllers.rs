//! Nominal controllers feeding the safety filter.

use nalgebra::{DVector, Matrix2, Vector2};

use crate::dynamics::{
    end_effector_jacobian, end_effector_position, gravity_vector, RobotModel, State,
};

/// Cartesian impedance in the plane of the arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpedanceConfig {
    /// N/m
    pub stiffness: Matrix2<f64>,
    /// N·s/m
    pub damping: Matrix2<f64>,
    /// End-effector target, m.
    pub setpoint: Vector2<f64>,
    /// Add g(q) to the command (only meaningful when the plant is not
    /// already gravity compensated).
    pub compensate_gravity: bool,
}

impl ImpedanceConfig {
    pub fn isotropic(stiffness: f64, damping: f64, setpoint: Vector2<f64>) -> Self {
        Self {
            stiffness: Matrix2::identity() * stiffness,
            damping: Matrix2::identity() * damping,
            setpoint,
            compensate_gravity: false,
        }
    }

    /// Energy stored in the virtual spring, ½ eᵀK e with e = x_d − x_ee.
    pub fn spring_energy(&self, model: &RobotModel, q: &DVector<f64>) -> f64 {
        let err = self.setpoint - end_effector_position(model, q);
        0.5 * err.dot(&(self.stiffness * err))
    }

    /// Cartesian force K(x_d − x_ee) − D_d ẋ_ee.
    pub fn cartesian_force(&self, model: &RobotModel, state: &State) -> Vector2<f64> {
        let x = end_effector_position(model, &state.q);
        let xdot = end_effector_jacobian(model, &state.q) * &state.qdot;
        self.stiffness * (self.setpoint - x) - self.damping * xdot
    }
}

/// `u_nom = B⁻¹ (Jᵀ(K(x_d − x_ee) − D_d ẋ_ee) [+ g(q)])`.
pub fn impedance_torque(
    model: &RobotModel,
    state: &State,
    config: &ImpedanceConfig,
) -> DVector<f64> {
    let jac = end_effector_jacobian(model, &state.q);
    let force = config.cartesian_force(model, state);
    let mut tau = jac.transpose() * force;
    if config.compensate_gravity {
        tau += gravity_vector(model, &state.q);
    }
    to_input(model, tau)
}

pub fn zero_controller(model: &RobotModel) -> DVector<f64> {
    DVector::zeros(model.n_links())
}

/// Maps a desired joint torque to the actuation input, u = B⁻¹τ.
pub fn to_input(model: &RobotModel, tau: DVector<f64>) -> DVector<f64> {
    let b = model.actuation();
    if b.is_identity(0.0) {
        return tau;
    }
    b.clone()
        .lu()
        .solve(&tau)
        .expect("actuation matrix is full rank")
}
