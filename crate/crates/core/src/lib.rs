//! Deterministic, parallel neural-cellular-automata ecosystem.
//!
//! Organisms are CPPN genomes expanded through HyperNEAT into small dense
//! networks. Each step every occupied cell senses its rotation-ordered Moore
//! neighborhood, its network emits actuator values, and physics turns those
//! into energy/infrastructure flows, exploration, genome adoption and
//! evolution. All randomness is counter-based, so a run is a pure function
//! of its seed regardless of worker count.

pub mod config;
pub mod engine;
pub mod error;
pub mod hypernet;
pub mod metrics;
pub mod neuroevo;
pub mod physics;
pub mod rng;
pub mod snapshot;
pub mod substrate;

pub use engine::{Brush, BrushTool, Hook, RunReport, SimState, StepReport};
pub use error::{Error, Result};
pub use substrate::{ChannelSpec, Substrate};
pub use config::{load_config, ExperimentConfig};
pub use snapshot::{load_snapshot, save_snapshot};
