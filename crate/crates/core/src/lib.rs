//! Virtual synchronous hydropower plant: plant model, linearization, model
//! predictive control, state estimation and closed-loop simulation.

pub mod config;
pub mod error;
pub mod estimation;
pub mod linearization;
pub mod mpc;
pub mod plant;
pub mod qp;
pub mod riccati;
pub mod sim;
pub mod summary;

pub use config::Config;
pub use error::{Result, VshpError};
pub use estimation::{EstimatorConfig, EstimatorState, KalmanModel};
pub use linearization::{LinearModel, StationaryPoint};
pub use mpc::{ControlDecision, MpcConfig};
pub use plant::{ControlInputs, PlantOutputs, PlantParams, PlantState};
pub use qp::{QpProblem, QpSettings, QpSolution, QpStatus};
pub use sim::{run_scenario, ScenarioSpec, SimTrace, TraceRow};
pub use summary::RunSummary;
