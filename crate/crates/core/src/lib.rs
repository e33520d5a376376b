//! Kinetic-energy control barrier function safety filter for torque-controlled
//! manipulators, with a planar-arm simulator and the experiment harness used to
//! validate it.

pub mod controllers;
pub mod dynamics;
pub mod error;
pub mod filter;
pub mod qp;
pub mod scenarios;
pub mod simulator;
pub mod trace;
pub mod verify;

pub use dynamics::{Link, RobotModel, State};
pub use error::{FilterError, ModelError, QpError};
pub use filter::{FilterConfig, FilterResult, InteractionMode};
pub use simulator::{Experiment, RunOutput, SimConfig, SimError};
pub use trace::TraceRecord;
