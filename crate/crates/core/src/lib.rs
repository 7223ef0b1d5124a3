//! Equi-energy sampling for multimodal targets.
//!
//! The sampler runs a ladder of tempered chains. Each chain either takes a
//! local Metropolis–Hastings step or jumps to a state archived by the chain
//! above it that lies in the same energy ring. Chain 0 targets the original
//! density; its output can be post-processed with plain ergodic averages or
//! with a partition-weighted estimator whose ring weights come from the
//! higher chains.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod gaussian;
pub mod kernels;
pub mod ladders;
pub mod output;
pub mod sampler;
pub mod targets;

pub use error::{Error, Result};
pub use kernels::{MoveRecord, MoveType, Proposal};
pub use ladders::{EnergyLadder, Ladders, Level, TemperatureLadder};
pub use sampler::{run_ee_sampler, ChainState, RingStore, RunOutput, SamplerConfig};
pub use targets::{GammaTarget, GaussianMixture, GaussianMixtureParams, ModeDescriptor, Target};
