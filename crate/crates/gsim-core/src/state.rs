//! System states, trajectories, datasets, and observation projections.
//!
//! All types here are immutable value objects once constructed and are safe
//! to share across parallel workers.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{CodecError, SchemaError};
use crate::rng::derive_stream;

/// Kind of a record attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrKind {
    Int,
    Float,
    Bool,
    Sym,
}

impl fmt::Display for AttrKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AttrKind::Int => "int",
            AttrKind::Float => "float",
            AttrKind::Bool => "bool",
            AttrKind::Sym => "sym",
        };
        f.write_str(s)
    }
}

/// One record attribute value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrValue {
    Int(i64),
    Float(f64),
    Bool(bool),
    Sym(Arc<str>),
}

impl AttrValue {
    pub fn sym(s: &str) -> AttrValue {
        AttrValue::Sym(Arc::from(s))
    }

    /// Numeric view used by expression evaluation.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            AttrValue::Int(v) => Some(*v as f64),
            AttrValue::Float(v) => Some(*v),
            AttrValue::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            AttrValue::Sym(_) => None,
        }
    }

    pub fn kind(&self) -> AttrKind {
        match self {
            AttrValue::Int(_) => AttrKind::Int,
            AttrValue::Float(_) => AttrKind::Float,
            AttrValue::Bool(_) => AttrKind::Bool,
            AttrValue::Sym(_) => AttrKind::Sym,
        }
    }
}

/// Shared attribute layout for every record in one list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSchema {
    pub attrs: Vec<(String, AttrKind)>,
}

impl RecordSchema {
    pub fn new(attrs: Vec<(String, AttrKind)>) -> RecordSchema {
        RecordSchema { attrs }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attrs.iter().position(|(n, _)| n == name)
    }

    pub fn arity(&self) -> usize {
        self.attrs.len()
    }
}

/// An owned record row, aligned to a [`RecordSchema`].
pub type Record = Vec<AttrValue>;

/// A list of records sharing one schema, stored flat for cheap cloning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordList {
    pub(crate) schema: Arc<RecordSchema>,
    pub(crate) data: Vec<AttrValue>,
}

impl RecordList {
    pub fn empty(schema: Arc<RecordSchema>) -> RecordList {
        RecordList {
            schema,
            data: Vec::new(),
        }
    }

    pub fn schema(&self) -> &Arc<RecordSchema> {
        &self.schema
    }

    pub fn len(&self) -> usize {
        if self.schema.arity() == 0 {
            0
        } else {
            self.data.len() / self.schema.arity()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[AttrValue] {
        let w = self.schema.arity();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[AttrValue]> {
        let w = self.schema.arity().max(1);
        self.data.chunks(w)
    }

    /// Appends a row; panics if the row arity does not match the schema.
    pub fn push(&mut self, row: Record) {
        assert_eq!(row.len(), self.schema.arity(), "record arity mismatch");
        self.data.extend(row);
    }
}

/// Kind of a state field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Int,
    Float,
    Pipeline,
    Records(Arc<RecordSchema>),
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueKind::Int => f.write_str("int"),
            ValueKind::Float => f.write_str("float"),
            ValueKind::Pipeline => f.write_str("pipeline"),
            ValueKind::Records(_) => f.write_str("records"),
        }
    }
}

/// One in-transit quantity with its remaining delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineEntry {
    pub qty: u64,
    pub timer: u64,
}

/// One state field value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateValue {
    Int(i64),
    Float(f64),
    Pipeline(Vec<PipelineEntry>),
    Records(RecordList),
}

impl StateValue {
    pub fn kind(&self) -> ValueKind {
        match self {
            StateValue::Int(_) => ValueKind::Int,
            StateValue::Float(_) => ValueKind::Float,
            StateValue::Pipeline(_) => ValueKind::Pipeline,
            StateValue::Records(r) => ValueKind::Records(r.schema.clone()),
        }
    }

    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            StateValue::Int(v) => Some(*v as f64),
            StateValue::Float(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            StateValue::Int(v) => Some(*v),
            _ => None,
        }
    }
}

/// Ordered field layout of a system state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSchema {
    pub fields: Vec<(String, ValueKind)>,
}

impl StateSchema {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|(n, _)| n == name)
    }
}

/// A system state: an ordered map field name -> value, with field order
/// equal to the schema declaration order.
#[derive(Debug, Clone)]
pub struct SystemState {
    schema: Arc<StateSchema>,
    values: Vec<StateValue>,
}

impl PartialEq for SystemState {
    fn eq(&self, other: &Self) -> bool {
        self.schema.fields == other.schema.fields && self.values == other.values
    }
}

impl SystemState {
    pub fn build(fields: Vec<(&str, StateValue)>) -> SystemState {
        let schema = StateSchema {
            fields: fields
                .iter()
                .map(|(n, v)| (n.to_string(), v.kind()))
                .collect(),
        };
        SystemState {
            schema: Arc::new(schema),
            values: fields.into_iter().map(|(_, v)| v).collect(),
        }
    }

    pub fn from_parts(schema: Arc<StateSchema>, values: Vec<StateValue>) -> SystemState {
        debug_assert_eq!(schema.fields.len(), values.len());
        SystemState { schema, values }
    }

    pub fn schema(&self) -> &Arc<StateSchema> {
        &self.schema
    }

    pub fn values(&self) -> &[StateValue] {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<&StateValue> {
        self.schema.index_of(name).map(|i| &self.values[i])
    }

    pub fn field_names(&self) -> impl Iterator<Item = &str> {
        self.schema.fields.iter().map(|(n, _)| n.as_str())
    }
}

impl Serialize for SystemState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<(&str, &StateValue)> = self
            .schema
            .fields
            .iter()
            .map(|(n, _)| n.as_str())
            .zip(self.values.iter())
            .collect();
        pairs.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SystemState {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let pairs: Vec<(String, StateValue)> = Vec::deserialize(deserializer)?;
        let schema = StateSchema {
            fields: pairs.iter().map(|(n, v)| (n.clone(), v.kind())).collect(),
        };
        Ok(SystemState {
            schema: Arc::new(schema),
            values: pairs.into_iter().map(|(_, v)| v).collect(),
        })
    }
}

/// Exogenous control; absent for environments without actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action(pub Option<u32>);

impl Action {
    pub const NONE: Action = Action(None);

    pub fn some(v: u32) -> Action {
        Action(Some(v))
    }

    pub fn value(&self) -> Option<u32> {
        self.0
    }
}

/// An initial state plus a (action, next state) sequence of fixed horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub init: SystemState,
    pub steps: Vec<(Action, SystemState)>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// States after each step, i.e. `x_1 .. x_T`.
    pub fn next_states(&self) -> impl Iterator<Item = &SystemState> {
        self.steps.iter().map(|(_, s)| s)
    }

    /// Observation matrix over the step states, one row per step.
    pub fn observations(&self, projection: &ProjectionSpec) -> Result<Vec<Vec<f64>>, SchemaError> {
        self.next_states().map(|s| observe(s, projection)).collect()
    }
}

/// Train/val/test membership label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A collection of trajectories from one environment, with optional split
/// labels aligned to `trajectories`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub env_name: String,
    pub horizon: usize,
    pub projection: ProjectionSpec,
    pub trajectories: Vec<Trajectory>,
    pub splits: Vec<Option<Split>>,
}

impl Dataset {
    pub fn new(env_name: &str, horizon: usize, projection: ProjectionSpec) -> Dataset {
        Dataset {
            env_name: env_name.to_string(),
            horizon,
            projection,
            trajectories: Vec::new(),
            splits: Vec::new(),
        }
    }

    pub fn push(&mut self, trajectory: Trajectory) {
        self.trajectories.push(trajectory);
        self.splits.push(None);
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn by_split(&self, split: Split) -> Vec<&Trajectory> {
        self.trajectories
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == Some(split))
            .map(|(t, _)| t)
            .collect()
    }

    /// A new dataset containing only the trajectories of `split`, unlabeled.
    pub fn subset(&self, split: Split) -> Dataset {
        let mut out = Dataset::new(&self.env_name, self.horizon, self.projection.clone());
        for t in self.by_split(split) {
            out.push(t.clone());
        }
        out
    }
}

/// How one observation dimension is extracted from a state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extract {
    /// Read a scalar field directly.
    Scalar { field: String },
    /// Sum of quantities in a pipeline field.
    ListTotal { field: String },
    /// Count records, optionally only those whose attribute equals a value.
    RecordCount {
        field: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        predicate: Option<(String, AttrValue)>,
    },
}

/// Ordered list of named observation dimensions; maps any schema-conforming
/// state to a fixed-length float vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub dims: Vec<(String, Extract)>,
}

impl ProjectionSpec {
    pub fn arity(&self) -> usize {
        self.dims.len()
    }

    pub fn dim_names(&self) -> Vec<String> {
        self.dims.iter().map(|(n, _)| n.clone()).collect()
    }
}

/// Projects a state to its observation vector.
pub fn observe(state: &SystemState, projection: &ProjectionSpec) -> Result<Vec<f64>, SchemaError> {
    let mut out = Vec::with_capacity(projection.arity());
    for (_, extract) in &projection.dims {
        let v = match extract {
            Extract::Scalar { field } => {
                let sv = state
                    .get(field)
                    .ok_or_else(|| SchemaError::MissingField(field.clone()))?;
                sv.as_scalar().ok_or_else(|| SchemaError::KindMismatch {
                    field: field.clone(),
                    expected: "scalar".into(),
                    found: sv.kind().to_string(),
                })?
            }
            Extract::ListTotal { field } => {
                let sv = state
                    .get(field)
                    .ok_or_else(|| SchemaError::MissingField(field.clone()))?;
                match sv {
                    StateValue::Pipeline(entries) => {
                        entries.iter().map(|e| e.qty as f64).sum::<f64>()
                    }
                    other => {
                        return Err(SchemaError::KindMismatch {
                            field: field.clone(),
                            expected: "pipeline".into(),
                            found: other.kind().to_string(),
                        })
                    }
                }
            }
            Extract::RecordCount { field, predicate } => {
                let sv = state
                    .get(field)
                    .ok_or_else(|| SchemaError::MissingField(field.clone()))?;
                match sv {
                    StateValue::Records(list) => match predicate {
                        None => list.len() as f64,
                        Some((attr, expected)) => {
                            let idx = list
                                .schema
                                .index_of(attr)
                                .ok_or_else(|| SchemaError::MissingAttr(attr.clone()))?;
                            list.rows().filter(|r| &r[idx] == expected).count() as f64
                        }
                    },
                    other => {
                        return Err(SchemaError::KindMismatch {
                            field: field.clone(),
                            expected: "records".into(),
                            found: other.kind().to_string(),
                        })
                    }
                }
            }
        };
        out.push(v);
    }
    Ok(out)
}

/// Relabels a seed-determined permutation of the dataset into disjoint
/// train/val/test splits; remaining trajectories are unlabeled.
pub fn split_dataset(
    dataset: &Dataset,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<Dataset, CodecError> {
    let n = dataset.len();
    let requested = n_train + n_val + n_test;
    if requested > n {
        return Err(CodecError::SplitTooLarge {
            requested,
            available: n,
        });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut stream = derive_stream(seed, &[]);
    for i in (1..n).rev() {
        let j = stream.uniform_int(0, i as i64) as usize;
        perm.swap(i, j);
    }
    let mut out = dataset.clone();
    out.splits = vec![None; n];
    for (k, &idx) in perm.iter().enumerate() {
        out.splits[idx] = if k < n_train {
            Some(Split::Train)
        } else if k < n_train + n_val {
            Some(Split::Val)
        } else if k < requested {
            Some(Split::Test)
        } else {
            None
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sir_state(s: i64, i: i64, r: i64) -> SystemState {
        SystemState::build(vec![
            ("S", StateValue::Int(s)),
            ("I", StateValue::Int(i)),
            ("R", StateValue::Int(r)),
        ])
    }

    fn sir_projection() -> ProjectionSpec {
        ProjectionSpec {
            dims: vec![
                ("S".into(), Extract::Scalar { field: "S".into() }),
                ("I".into(), Extract::Scalar { field: "I".into() }),
                ("R".into(), Extract::Scalar { field: "R".into() }),
            ],
        }
    }

    #[test]
    fn observe_reads_scalar_fields() {
        let v = observe(&sir_state(990, 10, 0), &sir_projection()).unwrap();
        assert_eq!(v, vec![990.0, 10.0, 0.0]);
    }

    #[test]
    fn observe_sums_pipeline_and_counts_records() {
        let state = SystemState::build(vec![
            ("inventory", StateValue::Int(4)),
            (
                "pipeline",
                StateValue::Pipeline(vec![PipelineEntry { qty: 6, timer: 2 }]),
            ),
            ("backlog", StateValue::Int(0)),
            ("t", StateValue::Int(1)),
        ]);
        let proj = ProjectionSpec {
            dims: vec![
                (
                    "inventory".into(),
                    Extract::Scalar {
                        field: "inventory".into(),
                    },
                ),
                (
                    "backlog".into(),
                    Extract::Scalar {
                        field: "backlog".into(),
                    },
                ),
                (
                    "pipeline_total".into(),
                    Extract::ListTotal {
                        field: "pipeline".into(),
                    },
                ),
            ],
        };
        assert_eq!(observe(&state, &proj).unwrap(), vec![4.0, 0.0, 6.0]);
    }

    #[test]
    fn observe_missing_field_is_schema_error() {
        let proj = ProjectionSpec {
            dims: vec![("Q".into(), Extract::Scalar { field: "Q".into() })],
        };
        let err = observe(&sir_state(1, 2, 3), &proj).unwrap_err();
        assert_eq!(err, SchemaError::MissingField("Q".into()));
    }

    #[test]
    fn observe_empty_record_list_counts_zero() {
        let schema = Arc::new(RecordSchema::new(vec![(
            "is_alive".into(),
            AttrKind::Bool,
        )]));
        let state = SystemState::build(vec![
            ("icu_occupancy", StateValue::Int(0)),
            ("standard_occupancy", StateValue::Int(0)),
            ("patients", StateValue::Records(RecordList::empty(schema))),
        ]);
        let proj = ProjectionSpec {
            dims: vec![
                (
                    "icu_occupancy".into(),
                    Extract::Scalar {
                        field: "icu_occupancy".into(),
                    },
                ),
                (
                    "standard_occupancy".into(),
                    Extract::Scalar {
                        field: "standard_occupancy".into(),
                    },
                ),
                (
                    "alive_count".into(),
                    Extract::RecordCount {
                        field: "patients".into(),
                        predicate: Some(("is_alive".into(), AttrValue::Bool(true))),
                    },
                ),
            ],
        };
        assert_eq!(observe(&state, &proj).unwrap(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn pipeline_total_is_linear_in_appended_quantity() {
        let mut entries = vec![PipelineEntry { qty: 3, timer: 1 }];
        let proj = ProjectionSpec {
            dims: vec![(
                "pt".into(),
                Extract::ListTotal {
                    field: "pipeline".into(),
                },
            )],
        };
        let before = observe(
            &SystemState::build(vec![("pipeline", StateValue::Pipeline(entries.clone()))]),
            &proj,
        )
        .unwrap()[0];
        entries.push(PipelineEntry { qty: 9, timer: 4 });
        let after = observe(
            &SystemState::build(vec![("pipeline", StateValue::Pipeline(entries))]),
            &proj,
        )
        .unwrap()[0];
        assert_eq!(after - before, 9.0);
    }

    fn toy_dataset(n: usize) -> Dataset {
        let mut d = Dataset::new("sir", 1, sir_projection());
        for k in 0..n {
            d.push(Trajectory {
                init: sir_state(k as i64, 0, 0),
                steps: vec![(Action::NONE, sir_state(k as i64, 1, 0))],
            });
        }
        d
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let d = toy_dataset(300);
        let s = split_dataset(&d, 100, 100, 100, 7).unwrap();
        assert_eq!(s.by_split(Split::Train).len(), 100);
        assert_eq!(s.by_split(Split::Val).len(), 100);
        assert_eq!(s.by_split(Split::Test).len(), 100);
        assert!(s.splits.iter().all(|x| x.is_some()));
    }

    #[test]
    fn split_zero_request_leaves_all_unlabeled() {
        let d = toy_dataset(5);
        let s = split_dataset(&d, 0, 0, 0, 7).unwrap();
        assert!(s.splits.iter().all(|x| x.is_none()));
    }

    #[test]
    fn split_is_seed_deterministic() {
        let d = toy_dataset(50);
        let a = split_dataset(&d, 20, 10, 10, 42).unwrap();
        let b = split_dataset(&d, 20, 10, 10, 42).unwrap();
        assert_eq!(a.splits, b.splits);
        let c = split_dataset(&d, 20, 10, 10, 43).unwrap();
        assert_ne!(a.splits, c.splits);
    }

    #[test]
    fn split_too_large_errors() {
        let d = toy_dataset(5);
        assert!(matches!(
            split_dataset(&d, 4, 1, 1, 0),
            Err(CodecError::SplitTooLarge { .. })
        ));
    }
}
