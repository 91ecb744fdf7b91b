//! Group-entropy mirror descent on the probability simplex.
//!
//! Deformed logarithm/exponential link functions ([`links`]), the EG, GEG,
//! DMD and MMD steppers ([`updates`]), a matrix-free simplex-constrained QP
//! benchmark ([`scqp`]), optimality and recovery metrics ([`metrics`]),
//! curvature analysis ([`analysis`]) and the experiment harness
//! ([`experiment`], [`verify`]).

pub mod analysis;
pub mod error;
pub mod experiment;
mod lambert;
pub mod links;
pub mod metrics;
mod quadrature;
pub mod scqp;
pub mod updates;
pub mod verify;

pub use error::{Error, Result};
pub use experiment::{AggregateResult, RunConfig, SweepAxis};
pub use links::{Branch, ChainStep, LinkFamily, LinkFunction};
pub use metrics::{IterationTrace, StopReason, TraceHeader, TraceRow};
pub use scqp::{InstanceSpec, NoiseModel, ScqpInstance, SpectralOperator};
pub use updates::{Algorithm, SimplexVector, StepDiagnostics, UpdateConfig};
