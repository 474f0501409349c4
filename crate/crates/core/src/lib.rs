//! Composite control-barrier-function safety filtering for a LiDAR-equipped
//! unicycle robot, with a deterministic closed-loop simulator.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cbf_composer;
pub mod cli;
pub mod environment;
pub mod error;
pub mod perception_barrier;
pub mod robot_model;
pub mod safety_filter;
pub mod sim_engine;
pub mod smooth_math;
pub mod verify;

pub use error::{Error, Result};
