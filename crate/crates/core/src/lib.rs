//! Perception-aware trajectory planning and tracking for a camera-equipped
//! multirotor observing a static target.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod config;
pub mod dynamics;
pub mod geometry;
pub mod lq;
pub mod nmpc;
pub mod ocp;
pub mod perception;
pub mod sim;
pub mod trajectory;
pub mod trajopt;

pub use dynamics::{ControlInput, UavState, VehicleParams};
pub use geometry::{CameraExtrinsics, CameraIntrinsics, EulerAngles, GeometryError, Pose};
pub use trajectory::Trajectory;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("target point is out of view (depth below {depth_limit} m)")]
    OutOfView { depth_limit: f64 },
    #[error("infeasible start: {0}")]
    InfeasibleStart(String),
    #[error("target is not visible from the initial state")]
    TargetLostAtStart,
    #[error("planning failed: {0}")]
    PlanningFailure(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
