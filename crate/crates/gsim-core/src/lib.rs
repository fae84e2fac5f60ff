//! Core engine for building, calibrating, and refining compositional
//! discrete-time simulators.
//!
//! The crate is organized around a small configuration language for
//! stochastic state-update rules ([`dsl`]), three hand-coded reference
//! environments with matching DSL twins ([`envs`]), distribution-distance
//! diagnostics ([`metrics`]), two likelihood-free calibration pathways
//! ([`gfo`] and [`sbi`]), and an iterative propose/calibrate/diagnose
//! refinement loop ([`refine`]) driven by a language-model gateway
//! ([`llm`]).

pub mod codec;
pub mod config_file;
pub mod dsl;
pub mod envs;
pub mod error;
pub mod experiments;
pub mod gfo;
pub mod llm;
pub mod metrics;
pub(crate) mod num;
pub mod refine;
pub mod rng;
pub mod sbi;
pub mod state;

pub use dsl::{parse_config, print_config, validate, Interpreter, ParameterVector, StructuralConfig};
pub use error::{CodecError, EvalError, ParseError, RngError, SchemaError, StepError};
pub use rng::RngStream;
pub use state::{
    Action, Dataset, ProjectionSpec, Record, Split, StateValue, SystemState, Trajectory,
};
