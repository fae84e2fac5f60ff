//! Abstract syntax for structural simulator configurations.

use serde::{Deserialize, Serialize};

use crate::state::AttrKind;

/// A calibratable parameter with its uniform prior bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterDecl {
    pub name: String,
    pub default: f64,
    pub min: f64,
    pub max: f64,
}

/// Flat float vector aligned to a config's parameter declarations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> ParameterVector {
        ParameterVector { values }
    }

    /// Builds a vector from the declared defaults.
    pub fn defaults(decls: &[ParameterDecl]) -> ParameterVector {
        ParameterVector {
            values: decls.iter().map(|d| d.default).collect(),
        }
    }

    /// Clips every coordinate into its declared bounds.
    pub fn clipped(decls: &[ParameterDecl], values: Vec<f64>) -> ParameterVector {
        ParameterVector {
            values: values
                .into_iter()
                .zip(decls)
                .map(|(v, d)| v.clamp(d.min, d.max))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Declared kind of a state field.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldKind {
    Int,
    Float,
    Pipeline,
    Records(Vec<(String, AttrKind)>),
}

/// Initial value rule for a state field.
#[derive(Debug, Clone, PartialEq)]
pub enum InitRule {
    Number(f64),
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldDecl {
    pub name: String,
    pub kind: FieldKind,
    pub init: InitRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Pow,
    Min,
    Max,
    Clip,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Pow => "pow",
            Func::Min => "min",
            Func::Max => "max",
            Func::Clip => "clip",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Exp | Func::Log => 1,
            Func::Pow | Func::Min | Func::Max => 2,
            Func::Clip => 3,
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "pow" => Func::Pow,
            "min" => Func::Min,
            "max" => Func::Max,
            "clip" => Func::Clip,
            _ => return None,
        })
    }
}

/// Arithmetic expression. Bare identifiers resolve param-then-field-then-
/// attr when the configuration is compiled.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(f64),
    Ident(String),
    ActionRef,
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    pub fn lit(v: f64) -> Expr {
        Expr::Lit(v)
    }

    pub fn ident(name: &str) -> Expr {
        Expr::Ident(name.to_string())
    }
}

/// Stochastic (or degenerate) count draw. Evaluated probabilities are
/// clipped to `[0, 1]`; rates, means, and trial counts to `>= 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum CountSampler {
    Binomial { n: Expr, p: Expr },
    Poisson { rate: Expr },
    NegBinomial { mean: Expr, dispersion: Expr },
    Normal { mean: Expr, stdev: Expr, floor: i64 },
    Deterministic(Expr),
}

impl CountSampler {
    /// Whether drawing from this sampler can consume randomness.
    pub fn is_stochastic(&self) -> bool {
        !matches!(self, CountSampler::Deterministic(_))
    }
}

/// Attribute initializer inside a `RecordSpawn` rule.
#[derive(Debug, Clone, PartialEq)]
pub enum AttrInit {
    Expr(Expr),
    Sampler(CountSampler),
    Bool(bool),
    Sym(String),
}

/// One admission preference: try to place into `occupancy` while it is
/// strictly below `capacity`, labeling the record with `symbol`.
#[derive(Debug, Clone, PartialEq)]
pub struct GatePref {
    pub symbol: String,
    pub occupancy: String,
    pub capacity: Expr,
}

/// Capacity-gated admission. Exactly one occupancy field is incremented
/// per admitted record; rejected records are dropped and counted into
/// `overflow_field` when present.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityGate {
    pub bed_attr: String,
    pub overflow_field: Option<String>,
    pub prefs: Vec<GatePref>,
}

/// One state-update rule; rules run in declaration order against a working
/// copy of the state.
#[derive(Debug, Clone, PartialEq)]
pub enum UpdateRule {
    /// Move a sampled count from one field to another, capped at the source.
    CompartmentFlow {
        from: String,
        to: String,
        count: CountSampler,
    },
    /// Add or subtract a sampled count, floored at zero.
    Accumulate {
        field: String,
        delta: CountSampler,
        sign: i8,
    },
    /// Age the pipeline by one tick and deliver matured quantities.
    PipelineAdvance { pipeline: String, deliver_to: String },
    /// Append a quantity with a delay; quantities below one are skipped.
    PipelineAppend {
        pipeline: String,
        quantity: Expr,
        delay: Expr,
    },
    /// Serve backlog first, then sampled demand; unmet demand becomes
    /// backlog.
    QueueService {
        inventory: String,
        backlog: String,
        demand: CountSampler,
    },
    /// Decrement a timer attribute; remove records reaching zero and free
    /// their bed. Optionally increments an age attribute on survivors.
    RecordCountdown {
        records: String,
        timer_attr: String,
        age_attr: Option<String>,
        bed_attr: String,
        occupancy: Vec<(String, String)>,
    },
    /// Per-record Bernoulli removal with probability given by an attribute-
    /// scoped expression; removed records free their bed.
    RecordHazard {
        records: String,
        prob: Expr,
        bed_attr: String,
        occupancy: Vec<(String, String)>,
    },
    /// Spawn a sampled number of records, initializing attributes and
    /// admitting through a capacity gate.
    RecordSpawn {
        records: String,
        count: CountSampler,
        attrs: Vec<(String, AttrInit)>,
        gate: CapacityGate,
    },
    /// Overwrite a scalar field with an expression value.
    Assign { field: String, expr: Expr },
}

impl UpdateRule {
    pub fn kind_name(&self) -> &'static str {
        match self {
            UpdateRule::CompartmentFlow { .. } => "CompartmentFlow",
            UpdateRule::Accumulate { .. } => "Accumulate",
            UpdateRule::PipelineAdvance { .. } => "PipelineAdvance",
            UpdateRule::PipelineAppend { .. } => "PipelineAppend",
            UpdateRule::QueueService { .. } => "QueueService",
            UpdateRule::RecordCountdown { .. } => "RecordCountdown",
            UpdateRule::RecordHazard { .. } => "RecordHazard",
            UpdateRule::RecordSpawn { .. } => "RecordSpawn",
            UpdateRule::Assign { .. } => "Assign",
        }
    }
}

/// A parsed simulator configuration: parameter priors, state schema, and
/// ordered update rules.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralConfig {
    pub name: String,
    pub description: String,
    pub param_decls: Vec<ParameterDecl>,
    pub state_schema: Vec<FieldDecl>,
    pub rules: Vec<UpdateRule>,
}

impl StructuralConfig {
    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.param_decls.iter().position(|d| d.name == name)
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.state_schema.iter().position(|d| d.name == name)
    }

    pub fn param_names(&self) -> Vec<String> {
        self.param_decls.iter().map(|d| d.name.clone()).collect()
    }

    pub fn defaults(&self) -> ParameterVector {
        ParameterVector::defaults(&self.param_decls)
    }
}
