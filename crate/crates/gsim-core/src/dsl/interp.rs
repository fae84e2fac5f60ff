//! Compiled execution of configurations: expression evaluation, single
//! steps, and rollouts.
//!
//! Stream protocol: a rollout derives `stream.child(t)` for step `t`, and a
//! step derives `step_stream.child(k)` for rule `k` when (and only when)
//! the rule can draw. Rules that cannot consume randomness skip the
//! derivation entirely, so adding deterministic rules never shifts other
//! rules' draws.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{EvalError, SchemaError, StepError};
use crate::rng::RngStream;
use crate::state::{
    Action, AttrKind, AttrValue, PipelineEntry, RecordList, RecordSchema, StateSchema, StateValue,
    SystemState, Trajectory, ValueKind,
};
use crate::state::{observe, ProjectionSpec};

use crate::num::{clip01, clip3, to_count, total_div, total_log, total_pow};

use super::ast::*;
use super::validate::{validate, ValidationReport};

/// A configuration failed validation and cannot be compiled.
#[derive(Debug, Clone)]
pub struct ConfigError(pub ValidationReport);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone)]
enum CExpr {
    Lit(f64),
    Param(u16),
    Field(u16),
    Attr(u16),
    Action,
    Neg(Box<CExpr>),
    Bin(BinOp, Box<CExpr>, Box<CExpr>),
    Call(Func, Vec<CExpr>),
}

#[derive(Debug, Clone)]
enum CSampler {
    Binomial { n: CExpr, p: CExpr },
    Poisson { rate: CExpr },
    NegBinomial { mean: CExpr, dispersion: CExpr },
    Normal { mean: CExpr, stdev: CExpr, floor: i64 },
    Deterministic(CExpr),
}

#[derive(Debug, Clone)]
enum CAttrInit {
    Expr(CExpr),
    Sampler(CSampler),
    Bool(bool),
    Sym(Arc<str>),
}

#[derive(Debug, Clone)]
struct CGate {
    bed_attr: usize,
    overflow_field: Option<usize>,
    prefs: Vec<(Arc<str>, usize, CExpr)>,
}

#[derive(Debug, Clone)]
enum CRule {
    CompartmentFlow {
        from: usize,
        to: usize,
        count: CSampler,
    },
    Accumulate {
        field: usize,
        delta: CSampler,
        sign: i8,
    },
    PipelineAdvance {
        pipeline: usize,
        deliver_to: usize,
    },
    PipelineAppend {
        pipeline: usize,
        quantity: CExpr,
        delay: CExpr,
    },
    QueueService {
        inventory: usize,
        backlog: usize,
        demand: CSampler,
    },
    RecordCountdown {
        records: usize,
        timer_attr: usize,
        age_attr: Option<usize>,
        bed_attr: usize,
        occupancy: Vec<(Arc<str>, usize)>,
    },
    RecordHazard {
        records: usize,
        prob: CExpr,
        bed_attr: usize,
        occupancy: Vec<(Arc<str>, usize)>,
    },
    RecordSpawn {
        records: usize,
        count: CSampler,
        attrs: Vec<(usize, AttrKind, CAttrInit)>,
        gate: CGate,
    },
    Assign {
        field: usize,
        is_int: bool,
        expr: CExpr,
    },
}

impl CRule {
    fn needs_rng(&self) -> bool {
        match self {
            CRule::CompartmentFlow { count, .. } => count.is_stochastic(),
            CRule::Accumulate { delta, .. } => delta.is_stochastic(),
            CRule::QueueService { demand, .. } => demand.is_stochastic(),
            CRule::RecordHazard { .. } => true,
            CRule::RecordSpawn { .. } => true,
            _ => false,
        }
    }
}

impl CSampler {
    fn is_stochastic(&self) -> bool {
        !matches!(self, CSampler::Deterministic(_))
    }
}

struct Ctx<'a> {
    params: &'a [f64],
    fields: &'a [StateValue],
    attrs: Option<&'a [AttrValue]>,
    action: Option<f64>,
}

impl CExpr {
    fn eval(&self, ctx: &Ctx<'_>) -> Result<f64, EvalError> {
        Ok(match self {
            CExpr::Lit(v) => *v,
            CExpr::Param(i) => ctx.params[*i as usize],
            CExpr::Field(i) => match &ctx.fields[*i as usize] {
                StateValue::Int(v) => *v as f64,
                StateValue::Float(v) => *v,
                _ => return Err(EvalError::NonScalarField(format!("#{i}"))),
            },
            CExpr::Attr(i) => {
                let attrs = ctx
                    .attrs
                    .ok_or_else(|| EvalError::AttrOutsideRecord(format!("#{i}")))?;
                attrs[*i as usize]
                    .as_f64()
                    .ok_or_else(|| EvalError::AttrOutsideRecord(format!("#{i}")))?
            }
            CExpr::Action => ctx.action.ok_or(EvalError::ActionUnbound)?,
            CExpr::Neg(e) => -e.eval(ctx)?,
            CExpr::Bin(op, l, r) => {
                let a = l.eval(ctx)?;
                let b = r.eval(ctx)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => total_div(a, b),
                }
            }
            CExpr::Call(func, args) => {
                let mut vals = [0.0f64; 3];
                for (i, a) in args.iter().enumerate() {
                    vals[i] = a.eval(ctx)?;
                }
                match func {
                    Func::Exp => vals[0].exp(),
                    Func::Log => total_log(vals[0]),
                    Func::Pow => total_pow(vals[0], vals[1]),
                    Func::Min => vals[0].min(vals[1]),
                    Func::Max => vals[0].max(vals[1]),
                    Func::Clip => clip3(vals[0], vals[1], vals[2]),
                }
            }
        })
    }
}

impl CSampler {
    /// Draws a count. Inputs are clipped per the total-function policy:
    /// probabilities to `[0, 1]`, rates and means to `>= 0`, dispersion
    /// away from zero.
    fn draw(&self, ctx: &Ctx<'_>, rng: Option<&mut RngStream>) -> Result<i64, EvalError> {
        match self {
            CSampler::Deterministic(e) => Ok(to_count(e.eval(ctx)?)),
            CSampler::Binomial { n, p } => {
                let n = n.eval(ctx)?;
                let p = p.eval(ctx)?;
                let rng = rng.expect("stochastic sampler needs a stream");
                Ok(crate::num::draw_binomial(rng, n, p))
            }
            CSampler::Poisson { rate } => {
                let rate = rate.eval(ctx)?;
                let rng = rng.expect("stochastic sampler needs a stream");
                Ok(crate::num::draw_poisson(rng, rate))
            }
            CSampler::NegBinomial { mean, dispersion } => {
                let mean = mean.eval(ctx)?;
                let disp = dispersion.eval(ctx)?;
                let rng = rng.expect("stochastic sampler needs a stream");
                Ok(crate::num::draw_neg_binomial(rng, mean, disp))
            }
            CSampler::Normal { mean, stdev, floor } => {
                let m = mean.eval(ctx)?;
                let s = stdev.eval(ctx)?;
                let rng = rng.expect("stochastic sampler needs a stream");
                Ok(crate::num::draw_normal_count(rng, m, s, *floor))
            }
        }
    }
}

/// Interpreter hooks for intervention experiments.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepHooks {
    /// Cap applied to the delivery target of `PipelineAdvance`; arriving
    /// units beyond the cap are discarded.
    pub inventory_cap: Option<i64>,
}

/// A validated, compiled configuration ready to step.
#[derive(Debug, Clone)]
pub struct Interpreter {
    config: StructuralConfig,
    schema: Arc<StateSchema>,
    rules: Vec<CRule>,
    bounds: Vec<(f64, f64)>,
    uses_action: bool,
}

impl Interpreter {
    /// Validates and compiles a configuration.
    pub fn new(config: &StructuralConfig) -> Result<Interpreter, ConfigError> {
        let report = validate(config);
        if !report.ok() {
            return Err(ConfigError(report));
        }
        let mut fields = Vec::new();
        for f in &config.state_schema {
            let kind = match &f.kind {
                FieldKind::Int => ValueKind::Int,
                FieldKind::Float => ValueKind::Float,
                FieldKind::Pipeline => ValueKind::Pipeline,
                FieldKind::Records(attrs) => ValueKind::Records(Arc::new(RecordSchema::new(
                    attrs.clone(),
                ))),
            };
            fields.push((f.name.clone(), kind));
        }
        let schema = Arc::new(StateSchema { fields });
        let compiler = Compiler { config, schema: &schema };
        let rules = config
            .rules
            .iter()
            .map(|r| compiler.rule(r))
            .collect::<Vec<_>>();
        Ok(Interpreter {
            config: config.clone(),
            schema,
            rules,
            bounds: config.param_decls.iter().map(|d| (d.min, d.max)).collect(),
            uses_action: super::validate::uses_action(config),
        })
    }

    pub fn config(&self) -> &StructuralConfig {
        &self.config
    }

    pub fn schema(&self) -> &Arc<StateSchema> {
        &self.schema
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn defaults(&self) -> ParameterVector {
        self.config.defaults()
    }

    pub fn uses_action(&self) -> bool {
        self.uses_action
    }

    /// The initial state declared by the schema's init rules.
    pub fn init_state(&self) -> SystemState {
        let values = self
            .config
            .state_schema
            .iter()
            .zip(&self.schema.fields)
            .map(|(decl, (_, kind))| match (&decl.init, kind) {
                (InitRule::Number(v), ValueKind::Int) => StateValue::Int(v.round() as i64),
                (InitRule::Number(v), ValueKind::Float) => StateValue::Float(*v),
                (_, ValueKind::Pipeline) => StateValue::Pipeline(Vec::new()),
                (_, ValueKind::Records(schema)) => {
                    StateValue::Records(RecordList::empty(schema.clone()))
                }
                (InitRule::Empty, k) => unreachable!("validated init for kind {k}"),
            })
            .collect();
        SystemState::from_parts(self.schema.clone(), values)
    }

    /// Re-seats a state onto this config's schema, matching fields by name.
    /// Fields the config does not declare are dropped.
    pub fn conform(&self, state: &SystemState) -> Result<SystemState, SchemaError> {
        if Arc::ptr_eq(state.schema(), &self.schema) || state.schema().fields == self.schema.fields
        {
            return Ok(state.clone());
        }
        let mut values = Vec::with_capacity(self.schema.fields.len());
        for (name, kind) in &self.schema.fields {
            let v = state
                .get(name)
                .ok_or_else(|| SchemaError::MissingField(name.clone()))?;
            let found = v.kind();
            let compatible = match (kind, &found) {
                (ValueKind::Int, ValueKind::Int) => true,
                (ValueKind::Float, ValueKind::Float) => true,
                (ValueKind::Float, ValueKind::Int) => true,
                (ValueKind::Pipeline, ValueKind::Pipeline) => true,
                (ValueKind::Records(a), ValueKind::Records(b)) => a.attrs == b.attrs,
                _ => false,
            };
            if !compatible {
                return Err(SchemaError::KindMismatch {
                    field: name.clone(),
                    expected: kind.to_string(),
                    found: found.to_string(),
                });
            }
            let v = match (kind, v) {
                (ValueKind::Float, StateValue::Int(x)) => StateValue::Float(*x as f64),
                _ => v.clone(),
            };
            values.push(v);
        }
        Ok(SystemState::from_parts(self.schema.clone(), values))
    }

    /// Applies all rules in declaration order against a working copy.
    pub fn step(
        &self,
        params: &[f64],
        state: &SystemState,
        action: Action,
        stream: &RngStream,
    ) -> Result<SystemState, StepError> {
        self.step_hooked(params, state, action, stream, &StepHooks::default())
    }

    pub fn step_hooked(
        &self,
        params: &[f64],
        state: &SystemState,
        action: Action,
        stream: &RngStream,
        hooks: &StepHooks,
    ) -> Result<SystemState, StepError> {
        let mut working: Vec<StateValue> = state.values().to_vec();
        let act = action.value().map(f64::from);
        if self.uses_action && act.is_none() {
            return Err(StepError::MissingAction);
        }
        for (k, rule) in self.rules.iter().enumerate() {
            let mut rs = if rule.needs_rng() {
                Some(stream.child(k as u32))
            } else {
                None
            };
            exec_rule(k, rule, &mut working, params, act, &mut rs, hooks)?;
        }
        Ok(SystemState::from_parts(self.schema.clone(), working))
    }

    /// Repeated stepping; `actions.len()` is the horizon. Step `t` draws
    /// from `stream.child(t)`.
    pub fn rollout(
        &self,
        params: &[f64],
        init: &SystemState,
        actions: &[Action],
        stream: &RngStream,
    ) -> Result<Trajectory, StepError> {
        let mut steps = Vec::with_capacity(actions.len());
        let mut current = init.clone();
        for (t, action) in actions.iter().enumerate() {
            let next = self
                .step(params, &current, *action, &stream.child(t as u32))
                .map_err(|e| e.at_step(t))?;
            steps.push((*action, next.clone()));
            current = next;
        }
        Ok(Trajectory {
            init: init.clone(),
            steps,
        })
    }

    /// Like [`Interpreter::rollout`] but projects every step state and
    /// discards the states, returning the `T x d` observation matrix.
    pub fn rollout_observed(
        &self,
        params: &[f64],
        init: &SystemState,
        actions: &[Action],
        projection: &ProjectionSpec,
        stream: &RngStream,
    ) -> Result<Vec<Vec<f64>>, StepError> {
        let mut rows = Vec::with_capacity(actions.len());
        let mut current = init.clone();
        for (t, action) in actions.iter().enumerate() {
            current = self
                .step(params, &current, *action, &stream.child(t as u32))
                .map_err(|e| e.at_step(t))?;
            rows.push(observe(&current, projection).map_err(StepError::Schema)?);
        }
        Ok(rows)
    }
}

struct Compiler<'a> {
    config: &'a StructuralConfig,
    schema: &'a Arc<StateSchema>,
}

impl Compiler<'_> {
    fn field(&self, name: &str) -> usize {
        self.config.field_index(name).expect("validated field")
    }

    fn record_schema(&self, field_idx: usize) -> &RecordSchema {
        match &self.schema.fields[field_idx].1 {
            ValueKind::Records(rs) => rs,
            _ => unreachable!("validated records field"),
        }
    }

    fn expr(&self, e: &Expr, record: Option<&RecordSchema>) -> CExpr {
        match e {
            Expr::Lit(v) => CExpr::Lit(*v),
            Expr::ActionRef => CExpr::Action,
            Expr::Ident(name) => {
                if let Some(i) = self.config.param_index(name) {
                    CExpr::Param(i as u16)
                } else if let Some(i) = self.config.field_index(name) {
                    CExpr::Field(i as u16)
                } else if let Some(rs) = record {
                    let i = rs.index_of(name).expect("validated attribute");
                    CExpr::Attr(i as u16)
                } else {
                    unreachable!("validated identifier `{name}`")
                }
            }
            Expr::Neg(x) => CExpr::Neg(Box::new(self.expr(x, record))),
            Expr::Bin(op, l, r) => CExpr::Bin(
                *op,
                Box::new(self.expr(l, record)),
                Box::new(self.expr(r, record)),
            ),
            Expr::Call(f, args) => {
                CExpr::Call(*f, args.iter().map(|a| self.expr(a, record)).collect())
            }
        }
    }

    fn sampler(&self, s: &CountSampler, record: Option<&RecordSchema>) -> CSampler {
        match s {
            CountSampler::Binomial { n, p } => CSampler::Binomial {
                n: self.expr(n, record),
                p: self.expr(p, record),
            },
            CountSampler::Poisson { rate } => CSampler::Poisson {
                rate: self.expr(rate, record),
            },
            CountSampler::NegBinomial { mean, dispersion } => CSampler::NegBinomial {
                mean: self.expr(mean, record),
                dispersion: self.expr(dispersion, record),
            },
            CountSampler::Normal { mean, stdev, floor } => CSampler::Normal {
                mean: self.expr(mean, record),
                stdev: self.expr(stdev, record),
                floor: *floor,
            },
            CountSampler::Deterministic(e) => CSampler::Deterministic(self.expr(e, record)),
        }
    }

    fn occupancy(&self, map: &[(String, String)]) -> Vec<(Arc<str>, usize)> {
        map.iter()
            .map(|(sym, field)| (Arc::from(sym.as_str()), self.field(field)))
            .collect()
    }

    fn rule(&self, rule: &UpdateRule) -> CRule {
        match rule {
            UpdateRule::CompartmentFlow { from, to, count } => CRule::CompartmentFlow {
                from: self.field(from),
                to: self.field(to),
                count: self.sampler(count, None),
            },
            UpdateRule::Accumulate { field, delta, sign } => CRule::Accumulate {
                field: self.field(field),
                delta: self.sampler(delta, None),
                sign: *sign,
            },
            UpdateRule::PipelineAdvance {
                pipeline,
                deliver_to,
            } => CRule::PipelineAdvance {
                pipeline: self.field(pipeline),
                deliver_to: self.field(deliver_to),
            },
            UpdateRule::PipelineAppend {
                pipeline,
                quantity,
                delay,
            } => CRule::PipelineAppend {
                pipeline: self.field(pipeline),
                quantity: self.expr(quantity, None),
                delay: self.expr(delay, None),
            },
            UpdateRule::QueueService {
                inventory,
                backlog,
                demand,
            } => CRule::QueueService {
                inventory: self.field(inventory),
                backlog: self.field(backlog),
                demand: self.sampler(demand, None),
            },
            UpdateRule::RecordCountdown {
                records,
                timer_attr,
                age_attr,
                bed_attr,
                occupancy,
            } => {
                let rec = self.field(records);
                let rs = self.record_schema(rec);
                CRule::RecordCountdown {
                    records: rec,
                    timer_attr: rs.index_of(timer_attr).expect("validated attr"),
                    age_attr: age_attr
                        .as_ref()
                        .map(|a| rs.index_of(a).expect("validated attr")),
                    bed_attr: rs.index_of(bed_attr).expect("validated attr"),
                    occupancy: self.occupancy(occupancy),
                }
            }
            UpdateRule::RecordHazard {
                records,
                prob,
                bed_attr,
                occupancy,
            } => {
                let rec = self.field(records);
                let rs = self.record_schema(rec).clone();
                CRule::RecordHazard {
                    records: rec,
                    prob: self.expr(prob, Some(&rs)),
                    bed_attr: rs.index_of(bed_attr).expect("validated attr"),
                    occupancy: self.occupancy(occupancy),
                }
            }
            UpdateRule::RecordSpawn {
                records,
                count,
                attrs,
                gate,
            } => {
                let rec = self.field(records);
                let rs = self.record_schema(rec).clone();
                let mut inits: Vec<(usize, AttrKind, CAttrInit)> = attrs
                    .iter()
                    .map(|(name, init)| {
                        let idx = rs.index_of(name).expect("validated attr");
                        let kind = rs.attrs[idx].1;
                        let compiled = match init {
                            AttrInit::Expr(e) => CAttrInit::Expr(self.expr(e, None)),
                            AttrInit::Sampler(s) => CAttrInit::Sampler(self.sampler(s, None)),
                            AttrInit::Bool(b) => CAttrInit::Bool(*b),
                            AttrInit::Sym(s) => CAttrInit::Sym(Arc::from(s.as_str())),
                        };
                        (idx, kind, compiled)
                    })
                    .collect();
                // Attribute draw order is declaration order.
                inits.sort_by_key(|(idx, _, _)| *idx);
                CRule::RecordSpawn {
                    records: rec,
                    count: self.sampler(count, None),
                    attrs: inits,
                    gate: CGate {
                        bed_attr: rs.index_of(&gate.bed_attr).expect("validated attr"),
                        overflow_field: gate.overflow_field.as_ref().map(|f| self.field(f)),
                        prefs: gate
                            .prefs
                            .iter()
                            .map(|p| {
                                (
                                    Arc::from(p.symbol.as_str()),
                                    self.field(&p.occupancy),
                                    self.expr(&p.capacity, None),
                                )
                            })
                            .collect(),
                    },
                }
            }
            UpdateRule::Assign { field, expr } => {
                let idx = self.field(field);
                CRule::Assign {
                    field: idx,
                    is_int: matches!(self.schema.fields[idx].1, ValueKind::Int),
                    expr: self.expr(expr, None),
                }
            }
        }
    }
}

fn int_of(v: &StateValue) -> i64 {
    match v {
        StateValue::Int(x) => *x,
        StateValue::Float(x) => *x as i64,
        _ => 0,
    }
}

fn take_records(working: &mut [StateValue], idx: usize) -> RecordList {
    match std::mem::replace(&mut working[idx], StateValue::Int(0)) {
        StateValue::Records(list) => list,
        other => {
            working[idx] = other;
            unreachable!("validated records field")
        }
    }
}

fn free_bed(
    rule: usize,
    working: &mut [StateValue],
    occupancy: &[(Arc<str>, usize)],
    bed: &AttrValue,
) -> Result<(), StepError> {
    let sym = match bed {
        AttrValue::Sym(s) => s,
        _ => unreachable!("validated bed attribute"),
    };
    for (name, field) in occupancy {
        if name == sym {
            let v = int_of(&working[*field]);
            working[*field] = StateValue::Int((v - 1).max(0));
            return Ok(());
        }
    }
    Err(StepError::UnknownBedType {
        rule,
        symbol: sym.to_string(),
    })
}

#[allow(clippy::too_many_arguments)]
fn exec_rule(
    k: usize,
    rule: &CRule,
    working: &mut Vec<StateValue>,
    params: &[f64],
    action: Option<f64>,
    rs: &mut Option<RngStream>,
    hooks: &StepHooks,
) -> Result<(), StepError> {
    let wrap = |e: EvalError| StepError::Rule { rule: k, source: e };
    match rule {
        CRule::CompartmentFlow { from, to, count } => {
            let drawn = {
                let ctx = Ctx {
                    params,
                    fields: working,
                    attrs: None,
                    action,
                };
                count.draw(&ctx, rs.as_mut()).map_err(wrap)?
            };
            let available = int_of(&working[*from]);
            let flow = drawn.min(available).max(0);
            working[*from] = StateValue::Int(available - flow);
            working[*to] = StateValue::Int(int_of(&working[*to]) + flow);
        }
        CRule::Accumulate { field, delta, sign } => {
            let drawn = {
                let ctx = Ctx {
                    params,
                    fields: working,
                    attrs: None,
                    action,
                };
                delta.draw(&ctx, rs.as_mut()).map_err(wrap)?
            };
            let v = int_of(&working[*field]) + i64::from(*sign) * drawn;
            working[*field] = StateValue::Int(v.max(0));
        }
        CRule::PipelineAdvance {
            pipeline,
            deliver_to,
        } => {
            let entries = match std::mem::replace(&mut working[*pipeline], StateValue::Int(0)) {
                StateValue::Pipeline(e) => e,
                _ => unreachable!("validated pipeline field"),
            };
            let mut delivered: i64 = 0;
            let mut kept = Vec::with_capacity(entries.len());
            for e in entries {
                if e.timer <= 1 {
                    delivered += e.qty as i64;
                } else {
                    kept.push(PipelineEntry {
                        qty: e.qty,
                        timer: e.timer - 1,
                    });
                }
            }
            working[*pipeline] = StateValue::Pipeline(kept);
            let mut inv = int_of(&working[*deliver_to]) + delivered;
            if let Some(cap) = hooks.inventory_cap {
                inv = inv.min(cap);
            }
            working[*deliver_to] = StateValue::Int(inv);
        }
        CRule::PipelineAppend {
            pipeline,
            quantity,
            delay,
        } => {
            let (qty, del) = {
                let ctx = Ctx {
                    params,
                    fields: working,
                    attrs: None,
                    action,
                };
                let qty = to_count(quantity.eval(&ctx).map_err(wrap)?);
                let d = delay.eval(&ctx).map_err(wrap)?;
                let d = if d.is_nan() { 1.0 } else { d.trunc() };
                (qty, d.clamp(1.0, 1.0e6) as u64)
            };
            if qty >= 1 {
                match &mut working[*pipeline] {
                    StateValue::Pipeline(entries) => entries.push(PipelineEntry {
                        qty: qty as u64,
                        timer: del,
                    }),
                    _ => unreachable!("validated pipeline field"),
                }
            }
        }
        CRule::QueueService {
            inventory,
            backlog,
            demand,
        } => {
            let drawn = {
                let ctx = Ctx {
                    params,
                    fields: working,
                    attrs: None,
                    action,
                };
                demand.draw(&ctx, rs.as_mut()).map_err(wrap)?
            };
            let mut inv = int_of(&working[*inventory]);
            let mut back = int_of(&working[*backlog]);
            let fill_back = inv.min(back);
            inv -= fill_back;
            back -= fill_back;
            let fill_demand = inv.min(drawn);
            inv -= fill_demand;
            back += drawn - fill_demand;
            working[*inventory] = StateValue::Int(inv);
            working[*backlog] = StateValue::Int(back);
        }
        CRule::RecordCountdown {
            records,
            timer_attr,
            age_attr,
            bed_attr,
            occupancy,
        } => {
            let list = take_records(working, *records);
            let width = list.schema().arity();
            let mut kept = RecordList::empty(list.schema().clone());
            kept.data.reserve(list.data.len());
            for row in list.data.chunks(width) {
                let timer = match &row[*timer_attr] {
                    AttrValue::Int(v) => *v - 1,
                    _ => unreachable!("validated timer attr"),
                };
                if timer <= 0 {
                    free_bed(k, working, occupancy, &row[*bed_attr])?;
                } else {
                    let start = kept.data.len();
                    kept.data.extend_from_slice(row);
                    kept.data[start + *timer_attr] = AttrValue::Int(timer);
                    if let Some(age) = age_attr {
                        if let AttrValue::Int(v) = &row[*age] {
                            kept.data[start + *age] = AttrValue::Int(v + 1);
                        }
                    }
                }
            }
            working[*records] = StateValue::Records(kept);
        }
        CRule::RecordHazard {
            records,
            prob,
            bed_attr,
            occupancy,
        } => {
            let rng = rs.as_mut().expect("hazard always draws");
            let list = take_records(working, *records);
            let width = list.schema().arity();
            let mut kept = RecordList::empty(list.schema().clone());
            kept.data.reserve(list.data.len());
            for row in list.data.chunks(width) {
                let p = {
                    let ctx = Ctx {
                        params,
                        fields: working,
                        attrs: Some(row),
                        action,
                    };
                    clip01(prob.eval(&ctx).map_err(wrap)?)
                };
                let u = rng.uniform01();
                if u < p {
                    free_bed(k, working, occupancy, &row[*bed_attr])?;
                } else {
                    kept.data.extend_from_slice(row);
                }
            }
            working[*records] = StateValue::Records(kept);
        }
        CRule::RecordSpawn {
            records,
            count,
            attrs,
            gate,
        } => {
            let rng = rs.as_mut().expect("spawn always draws");
            let n = {
                let ctx = Ctx {
                    params,
                    fields: working,
                    attrs: None,
                    action,
                };
                count.draw(&ctx, Some(&mut *rng)).map_err(wrap)?
            };
            let mut list = take_records(working, *records);
            let width = list.schema().arity();
            for _ in 0..n {
                let mut row: Vec<AttrValue> = vec![AttrValue::Int(0); width];
                for (idx, kind, init) in attrs {
                    let value = {
                        let ctx = Ctx {
                            params,
                            fields: working,
                            attrs: None,
                            action,
                        };
                        match init {
                            CAttrInit::Bool(b) => AttrValue::Bool(*b),
                            CAttrInit::Sym(s) => AttrValue::Sym(s.clone()),
                            CAttrInit::Expr(e) => {
                                let v = e.eval(&ctx).map_err(wrap)?;
                                match kind {
                                    AttrKind::Int => AttrValue::Int(to_count(v)),
                                    AttrKind::Float => AttrValue::Float(v),
                                    AttrKind::Bool => AttrValue::Bool(v != 0.0),
                                    AttrKind::Sym => unreachable!("validated attr init"),
                                }
                            }
                            CAttrInit::Sampler(s) => {
                                let v = s.draw(&ctx, Some(&mut *rng)).map_err(wrap)?;
                                match kind {
                                    AttrKind::Int => AttrValue::Int(v),
                                    AttrKind::Float => AttrValue::Float(v as f64),
                                    _ => unreachable!("validated attr init"),
                                }
                            }
                        }
                    };
                    row[*idx] = value;
                }
                let mut admitted = false;
                for (sym, occ_field, cap_expr) in &gate.prefs {
                    let cap = {
                        let ctx = Ctx {
                            params,
                            fields: working,
                            attrs: None,
                            action,
                        };
                        cap_expr.eval(&ctx).map_err(wrap)?
                    };
                    let occ = int_of(&working[*occ_field]);
                    if (occ as f64) < cap {
                        row[gate.bed_attr] = AttrValue::Sym(sym.clone());
                        working[*occ_field] = StateValue::Int(occ + 1);
                        list.data.extend(row);
                        admitted = true;
                        break;
                    }
                }
                if !admitted {
                    if let Some(of) = gate.overflow_field {
                        working[of] = StateValue::Int(int_of(&working[of]) + 1);
                    }
                }
            }
            working[*records] = StateValue::Records(list);
        }
        CRule::Assign {
            field,
            is_int,
            expr,
        } => {
            let v = {
                let ctx = Ctx {
                    params,
                    fields: working,
                    attrs: None,
                    action,
                };
                expr.eval(&ctx).map_err(wrap)?
            };
            working[*field] = if *is_int {
                StateValue::Int(to_count(v))
            } else {
                StateValue::Float(if v.is_finite() { v } else { 0.0 })
            };
        }
    }
    Ok(())
}

/// Name-based bindings for standalone expression evaluation.
#[derive(Debug, Default)]
pub struct Bindings {
    pub params: HashMap<String, f64>,
    pub fields: HashMap<String, f64>,
    pub attrs: Option<HashMap<String, f64>>,
    pub action: Option<f64>,
}

/// Evaluates a raw expression against name bindings, resolving identifiers
/// param-then-field-then-attr. Arithmetic follows the total-function policy
/// (`x/0 = 0`, `log(x <= 0)` is a large negative sentinel, `pow` with a
/// negative base and fractional exponent is 0).
pub fn eval_expr(expr: &Expr, bindings: &Bindings) -> Result<f64, EvalError> {
    Ok(match expr {
        Expr::Lit(v) => *v,
        Expr::ActionRef => bindings.action.ok_or(EvalError::ActionUnbound)?,
        Expr::Ident(name) => {
            if let Some(v) = bindings.params.get(name) {
                *v
            } else if let Some(v) = bindings.fields.get(name) {
                *v
            } else if let Some(v) = bindings.attrs.as_ref().and_then(|a| a.get(name)) {
                *v
            } else {
                return Err(EvalError::Unbound(name.clone()));
            }
        }
        Expr::Neg(e) => -eval_expr(e, bindings)?,
        Expr::Bin(op, l, r) => {
            let a = eval_expr(l, bindings)?;
            let b = eval_expr(r, bindings)?;
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => total_div(a, b),
            }
        }
        Expr::Call(func, args) => {
            let vals: Result<Vec<f64>, EvalError> =
                args.iter().map(|a| eval_expr(a, bindings)).collect();
            let vals = vals?;
            match func {
                Func::Exp => vals[0].exp(),
                Func::Log => total_log(vals[0]),
                Func::Pow => total_pow(vals[0], vals[1]),
                Func::Min => vals[0].min(vals[1]),
                Func::Max => vals[0].max(vals[1]),
                Func::Clip => clip3(vals[0], vals[1], vals[2]),
            }
        }
    })
}
