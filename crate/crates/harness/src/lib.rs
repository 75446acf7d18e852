//! Experiment harness for the dogfight arena: configuration, training protocols,
//! greedy evaluation, metrics logging, checkpoints and trajectory export.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod policy;
pub mod training;
pub mod trajectory;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{Algorithm, ProtocolKind, RunConfig};
pub use error::{HarnessError, Result};
pub use eval::{evaluate, EvalResult};
pub use metrics::{read_metrics, MetricsRow, MetricsSchema, MetricsWriter};
pub use policy::Pilot;
pub use training::{run_training, train_seed, RunSummary, Trainer};
pub use trajectory::{export_trajectory, TrajectorySummary};
