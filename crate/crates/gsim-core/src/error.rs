//! Error types shared across the crate.

use thiserror::Error;

/// Raw sampler layer rejected an argument.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RngError {
    #[error("binomial probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("negative trial count {0}")]
    NegativeTrials(i64),
    #[error("rate {0} must be finite and >= 0")]
    BadRate(f64),
    #[error("standard deviation {0} must be finite and >= 0")]
    BadStdev(f64),
    #[error("dispersion {0} must be finite and > 0")]
    BadDispersion(f64),
}

/// A state did not match the schema an operation expected.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("field `{field}` has kind {found}, expected {expected}")]
    KindMismatch {
        field: String,
        expected: String,
        found: String,
    },
    #[error("missing record attribute `{0}`")]
    MissingAttr(String),
}

/// Dataset text codec failure, pointing at the offending line.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("empty input: missing metadata record")]
    MissingHeader,
    #[error("not enough trajectories: requested {requested}, have {available}")]
    SplitTooLarge { requested: usize, available: usize },
    #[error("io error: {0}")]
    Io(String),
}

/// Configuration text could not be parsed.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}, col {col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

/// Expression evaluation failure (unbound name, bad context).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("unbound name `{0}`")]
    Unbound(String),
    #[error("`action` used but no action is bound")]
    ActionUnbound,
    #[error("attribute `{0}` read outside record scope")]
    AttrOutsideRecord(String),
    #[error("field `{0}` is not scalar")]
    NonScalarField(String),
}

/// A simulator step failed; carries the rule index for diagnostics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("rule {rule}: {source}")]
    Rule {
        rule: usize,
        #[source]
        source: EvalError,
    },
    #[error("rule {rule}: unknown bed type `{symbol}`")]
    UnknownBedType { rule: usize, symbol: String },
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<StepError>,
    },
    #[error("{0}")]
    Schema(#[from] SchemaError),
    #[error("action required by this configuration but absent")]
    MissingAction,
}

impl StepError {
    pub fn at_step(self, step: usize) -> StepError {
        StepError::AtStep {
            step,
            source: Box::new(self),
        }
    }
}
