//! Simulation side of the dogfight arena: point-mass aircraft, guided missiles,
//! the composite combat reward and the task environments built on top of them.

pub mod airframe;
pub mod arena;
pub mod error;
pub mod ordnance;
pub mod rewards;
pub mod snapshot;
pub mod vec3;

pub use error::{Result, SimError};
pub use vec3::{wrap_angle, Vec3};

/// Index of an aircraft inside an environment.
pub type AgentId = usize;
