//! Trajectory-tracking nonlinear model predictive control for road vehicles.
//!
//! The crate is layered bottom-up:
//!
//! * [`vehicle`]: single-track (bicycle) dynamics with a linear tire model
//!   and an RK4 integrator, generic over [`autodiff::Real`].
//! * [`autodiff`]: forward-mode first and second derivatives.
//! * [`qp`]: primal active-set solver for sparse convex QPs.
//! * [`sqp`]: SQP outer loop with an L1 merit line search.
//! * [`ocp`]: multiple-shooting transcription of the tracking problem.
//! * [`planner`]: path localization, reference windows and the safe corridor.
//! * [`sim`]: deterministic closed-loop harness with a mismatched plant.
//! * [`scenario`]: scenario files, run orchestration, logs and summaries.

pub mod autodiff;
mod band;
pub mod ocp;
pub mod planner;
pub mod qp;
pub mod scenario;
pub mod sim;
pub mod sparse;
pub mod sqp;
pub mod vehicle;

pub use ocp::{OcpConfig, OcpNlp, ReferenceWindow};
pub use planner::{Corridor, GlobalPath, Obstacle};
pub use qp::{QpProblem, QpSolution, QpSolver};
pub use sqp::{Nlp, SolveStats, SqpSolver};
pub use vehicle::{ControlInput, VehicleParams, VehicleState};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid value for `{field}`: {message}")]
    Range { field: String, message: String },
    #[error("corridor is empty at stage {stage}: obstacle spans the whole lane")]
    CorridorEmpty { stage: usize },
    #[error("{0}")]
    Config(String),
    #[error("closed loop diverged at t = {time:.2} s: lateral error {error:.2} m")]
    Diverged { time: f64, error: f64 },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn range(field: &str, message: impl Into<String>) -> Self {
        Error::Range { field: field.to_string(), message: message.into() }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
