//! Reference environments: hand-coded ground-truth simulators, their DSL
//! twins, dataset generation, action policies, and intervention hooks.
//!
//! Hand-coded steps and the interpreter share the sampler layer and the
//! per-rule child-stream protocol, so a ground-truth config rolled out
//! through the interpreter reproduces the hand-coded trajectories
//! bit-exactly under matched streams.

mod hospital;
mod sir;
mod supply;

use std::fmt;

use crate::dsl::{Interpreter, ParameterDecl, ParameterVector, StructuralConfig};
use crate::error::StepError;
use crate::rng::{derive_stream, RngStream};
use crate::state::{
    observe, Action, Dataset, Extract, ProjectionSpec, StateValue, SystemState, Trajectory,
};

pub use hospital::HospitalSim;
pub use sir::SirSim;
pub use supply::SupplySim;

/// Stream lanes under one trajectory stream.
pub(crate) const INIT_LANE: u32 = 0;
pub(crate) const STEP_LANE: u32 = 1;
pub(crate) const POLICY_LANE: u32 = 2;

/// The three benchmark families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Sir,
    Supply,
    Hospital,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvKind::Sir => f.write_str("sir"),
            EnvKind::Supply => f.write_str("supply"),
            EnvKind::Hospital => f.write_str("hospital"),
        }
    }
}

/// One ground-truth parameter with its calibration prior bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvParam {
    pub name: String,
    pub value: f64,
    pub min: f64,
    pub max: f64,
}

fn p(name: &str, value: f64, min: f64, max: f64) -> EnvParam {
    EnvParam {
        name: name.to_string(),
        value,
        min,
        max,
    }
}

/// A named environment preset: ground-truth parameters, horizon, default
/// action policy, and observation projection.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub kind: EnvKind,
    pub params: Vec<EnvParam>,
    pub horizon: usize,
    pub policy: PolicySpec,
    pub projection: ProjectionSpec,
    /// Base warehouse capacity the supply `CapacityDelta` intervention
    /// extends; inactive without the intervention.
    pub supply_base_cap: i64,
}

impl EnvSpec {
    /// Looks up a preset: `sir`, `supply`, `hospital`, or `hospital-large`.
    pub fn preset(name: &str) -> Option<EnvSpec> {
        let scalar = |field: &str| {
            (
                field.to_string(),
                Extract::Scalar {
                    field: field.to_string(),
                },
            )
        };
        match name {
            "sir" => Some(EnvSpec {
                name: "sir".into(),
                kind: EnvKind::Sir,
                params: vec![p("beta", 0.5, 0.0, 2.0), p("gamma", 0.1, 0.0, 1.0)],
                horizon: 60,
                policy: PolicySpec::None,
                projection: ProjectionSpec {
                    dims: vec![scalar("S"), scalar("I"), scalar("R")],
                },
                supply_base_cap: 0,
            }),
            "supply" => Some(EnvSpec {
                name: "supply".into(),
                kind: EnvKind::Supply,
                params: vec![
                    p("demand_rate", 5.0, 0.0, 20.0),
                    p("hold_cost", 1.0, 0.0, 10.0),
                    p("back_cost", 2.0, 0.0, 10.0),
                    p("lead_time", 2.0, 1.0, 10.0),
                ],
                horizon: 60,
                policy: PolicySpec::UniformRandom { lo: 0, hi: 10 },
                projection: ProjectionSpec {
                    dims: vec![
                        scalar("inventory"),
                        scalar("backlog"),
                        (
                            "pipeline_total".into(),
                            Extract::ListTotal {
                                field: "pipeline".into(),
                            },
                        ),
                    ],
                },
                supply_base_cap: 20,
            }),
            "hospital" => Some(EnvSpec {
                name: "hospital".into(),
                kind: EnvKind::Hospital,
                params: hospital_params(1.0),
                horizon: 60,
                policy: PolicySpec::None,
                projection: hospital_projection(),
                supply_base_cap: 0,
            }),
            // Scaled-up instance used by the policy-grid experiment.
            "hospital-large" => Some(EnvSpec {
                name: "hospital-large".into(),
                kind: EnvKind::Hospital,
                params: hospital_params(100.0),
                horizon: 120,
                policy: PolicySpec::None,
                projection: hospital_projection(),
                supply_base_cap: 0,
            }),
            _ => None,
        }
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|q| q.name == name).map(|q| q.value)
    }

    pub fn param_values(&self) -> Vec<f64> {
        self.params.iter().map(|q| q.value).collect()
    }

    pub fn has_action(&self) -> bool {
        self.kind == EnvKind::Supply
    }

    /// Applies dotted-key overrides such as `hospital.arrival_rate_0`.
    /// Keys with a different prefix are ignored; an unknown parameter under
    /// this env's prefix is an error.
    pub fn apply_overrides(&mut self, overrides: &[(String, f64)]) -> Result<(), String> {
        let prefix = format!("{}.", self.name);
        for (key, value) in overrides {
            if let Some(rest) = key.strip_prefix(&prefix) {
                if rest == "horizon" {
                    self.horizon = *value as usize;
                    continue;
                }
                if rest == "base_cap" {
                    self.supply_base_cap = *value as i64;
                    continue;
                }
                match self.params.iter_mut().find(|q| q.name == rest) {
                    Some(q) => q.value = *value,
                    None => return Err(format!("unknown parameter key `{key}`")),
                }
            }
        }
        Ok(())
    }

    /// Initial state drawn from the env's init distribution.
    pub fn init_state(&self, stream: &mut RngStream) -> SystemState {
        match self.kind {
            EnvKind::Sir => {
                let s0 = stream.uniform_int(900, 1000);
                let i0 = stream.uniform_int(1, 20);
                sir::sir_state(s0, i0, 0)
            }
            EnvKind::Supply => supply::supply_state(20, Vec::new(), 0, 0),
            EnvKind::Hospital => hospital::empty_hospital_state(),
        }
    }
}

fn hospital_params(scale: f64) -> Vec<EnvParam> {
    vec![
        p("arrival_rate_0", 1.0 * scale, 0.0, 5.0 * scale),
        p("arrival_rate_1", 2.0 * scale, 0.0, 5.0 * scale),
        p("arrival_rate_2", 1.5 * scale, 0.0, 5.0 * scale),
        p("los_mean_0", 5.0, 1.0, 15.0),
        p("los_mean_1", 6.0, 1.0, 15.0),
        p("los_mean_2", 4.0, 1.0, 15.0),
        p("base_prob_0", 0.01, 0.0, 0.1),
        p("base_prob_1", 0.005, 0.0, 0.1),
        p("base_prob_2", 0.008, 0.0, 0.1),
        p("day_factor_0", 0.002, 0.0, 0.02),
        p("day_factor_1", 0.001, 0.0, 0.02),
        p("day_factor_2", 0.0015, 0.0, 0.02),
        p("icu_capacity", 5.0 * scale, 1.0, 50.0 * scale),
        p("standard_capacity", 20.0 * scale, 1.0, 100.0 * scale),
    ]
}

fn hospital_projection() -> ProjectionSpec {
    ProjectionSpec {
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
                    predicate: Some(("is_alive".into(), crate::state::AttrValue::Bool(true))),
                },
            ),
        ],
    }
}

/// Action policy used when generating data or running experiments.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    None,
    Constant(u32),
    UniformRandom { lo: u32, hi: u32 },
    /// Order-up-to policy on the inventory position
    /// (inventory + pipeline total - backlog).
    BaseStock { level: i64 },
}

impl PolicySpec {
    pub fn action(&self, state: &SystemState, stream: &mut RngStream) -> Action {
        match self {
            PolicySpec::None => Action::NONE,
            PolicySpec::Constant(k) => Action::some(*k),
            PolicySpec::UniformRandom { lo, hi } => {
                Action::some(stream.uniform_int(i64::from(*lo), i64::from(*hi)) as u32)
            }
            PolicySpec::BaseStock { level } => {
                let inv = state.get("inventory").and_then(StateValue::as_int).unwrap_or(0);
                let back = state.get("backlog").and_then(StateValue::as_int).unwrap_or(0);
                let pipe = match state.get("pipeline") {
                    Some(StateValue::Pipeline(entries)) => {
                        entries.iter().map(|e| e.qty as i64).sum()
                    }
                    _ => 0,
                };
                let position = inv + pipe - back;
                Action::some((*level - position).max(0).min(u32::MAX as i64) as u32)
            }
        }
    }
}

/// A system intervention applied to a simulator's mechanics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Intervention {
    /// Scale the infection rate by `alpha` during `[t_start, t_end)`.
    LockdownWindow {
        t_start: usize,
        t_end: usize,
        alpha: f64,
    },
    /// Replace the supply lead time.
    LeadTimeOverride { lead: u32 },
    /// Extra capacity: standard beds for the hospital, warehouse cap for
    /// the supply chain.
    CapacityDelta { delta: i64 },
    /// Scale all hospital arrival rates during `[t_start, t_end)`.
    ArrivalScale {
        factor: f64,
        t_start: usize,
        t_end: usize,
    },
}

/// One-step transition function; the common surface for hand-coded envs
/// and interpreted configs.
pub trait Transition: Send + Sync {
    fn step(
        &self,
        state: &SystemState,
        action: Action,
        t: usize,
        stream: &RngStream,
    ) -> Result<SystemState, StepError>;
}

/// Rolls a transition out for `actions.len()` steps; step `t` draws from
/// `stream.child(t)`.
pub fn rollout_transition(
    sim: &dyn Transition,
    init: &SystemState,
    actions: &[Action],
    stream: &RngStream,
) -> Result<Trajectory, StepError> {
    let mut steps = Vec::with_capacity(actions.len());
    let mut current = init.clone();
    for (t, action) in actions.iter().enumerate() {
        let next = sim
            .step(&current, *action, t, &stream.child(t as u32))
            .map_err(|e| e.at_step(t))?;
        steps.push((*action, next.clone()));
        current = next;
    }
    Ok(Trajectory {
        init: init.clone(),
        steps,
    })
}

/// Rollout that keeps only projected observations.
pub fn rollout_observed(
    sim: &dyn Transition,
    init: &SystemState,
    actions: &[Action],
    projection: &ProjectionSpec,
    stream: &RngStream,
) -> Result<Vec<Vec<f64>>, StepError> {
    let mut rows = Vec::with_capacity(actions.len());
    let mut current = init.clone();
    for (t, action) in actions.iter().enumerate() {
        current = sim
            .step(&current, *action, t, &stream.child(t as u32))
            .map_err(|e| e.at_step(t))?;
        rows.push(observe(&current, projection)?);
    }
    Ok(rows)
}

/// Rollout driven by a policy, used for dataset generation and
/// experiments. The policy draws from its own lane of `traj_stream`.
pub fn rollout_with_policy(
    sim: &dyn Transition,
    init: &SystemState,
    horizon: usize,
    policy: &PolicySpec,
    traj_stream: &RngStream,
) -> Result<Trajectory, StepError> {
    let step_lane = traj_stream.child(STEP_LANE);
    let mut policy_stream = traj_stream.child(POLICY_LANE);
    let mut steps = Vec::with_capacity(horizon);
    let mut current = init.clone();
    for t in 0..horizon {
        let action = policy.action(&current, &mut policy_stream);
        let next = sim
            .step(&current, action, t, &step_lane.child(t as u32))
            .map_err(|e| e.at_step(t))?;
        steps.push((action, next.clone()));
        current = next;
    }
    Ok(Trajectory {
        init: init.clone(),
        steps,
    })
}

/// Errors building a concrete simulator out of a model + intervention.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    UnknownParam(String),
    Unsupported(String),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::UnknownParam(name) => {
                write!(f, "intervention target parameter `{name}` not declared")
            }
            ModelError::Unsupported(what) => write!(f, "{what}"),
        }
    }
}

impl std::error::Error for ModelError {}

#[derive(Debug, Clone, Copy)]
enum ParamOp {
    Scale(usize, f64),
    Set(usize, f64),
    Shift(usize, f64),
}

/// An interpreted config acting as an environment simulator, with
/// optionally windowed parameter transforms implementing interventions.
pub struct DslTransition {
    interp: Interpreter,
    base: Vec<f64>,
    ops: Vec<(Option<(usize, usize)>, ParamOp)>,
    hooks: crate::dsl::StepHooks,
}

impl Transition for DslTransition {
    fn step(
        &self,
        state: &SystemState,
        action: Action,
        t: usize,
        stream: &RngStream,
    ) -> Result<SystemState, StepError> {
        let active: Vec<&ParamOp> = self
            .ops
            .iter()
            .filter(|(window, _)| match window {
                None => true,
                Some((t0, t1)) => t >= *t0 && t < *t1,
            })
            .map(|(_, op)| op)
            .collect();
        if active.is_empty() {
            self.interp
                .step_hooked(&self.base, state, action, stream, &self.hooks)
        } else {
            let mut params = self.base.clone();
            for op in active {
                match op {
                    ParamOp::Scale(i, f) => params[*i] *= f,
                    ParamOp::Set(i, v) => params[*i] = *v,
                    ParamOp::Shift(i, d) => params[*i] += d,
                }
            }
            self.interp
                .step_hooked(&params, state, action, stream, &self.hooks)
        }
    }
}

/// A simulator handle: either a hand-coded reference environment or a
/// calibrated configuration, bound to an environment spec.
pub enum Model {
    HandCoded {
        env: EnvSpec,
        params: Vec<f64>,
    },
    Dsl {
        env: EnvSpec,
        interp: Interpreter,
        params: ParameterVector,
    },
}

impl Model {
    /// The ground-truth simulator of a preset.
    pub fn hand_coded(env: &EnvSpec) -> Model {
        Model::HandCoded {
            env: env.clone(),
            params: env.param_values(),
        }
    }

    pub fn from_config(
        env: &EnvSpec,
        interp: Interpreter,
        params: ParameterVector,
    ) -> Model {
        Model::Dsl {
            env: env.clone(),
            interp,
            params,
        }
    }

    pub fn env(&self) -> &EnvSpec {
        match self {
            Model::HandCoded { env, .. } => env,
            Model::Dsl { env, .. } => env,
        }
    }

    /// Builds the steppable simulator, applying zero or more interventions.
    pub fn transition(&self, interventions: &[Intervention]) -> Result<Box<dyn Transition>, ModelError> {
        match self {
            Model::HandCoded { env, params } => hand_coded_transition(env, params, interventions),
            Model::Dsl {
                env,
                interp,
                params,
            } => {
                let mut ops = Vec::new();
                let mut hooks = crate::dsl::StepHooks::default();
                let find = |name: &str| {
                    interp
                        .config()
                        .param_index(name)
                        .ok_or_else(|| ModelError::UnknownParam(name.to_string()))
                };
                for intervention in interventions {
                    match intervention {
                        Intervention::LockdownWindow {
                            t_start,
                            t_end,
                            alpha,
                        } => match env.kind {
                            EnvKind::Sir => {
                                ops.push((
                                    Some((*t_start, *t_end)),
                                    ParamOp::Scale(find("beta")?, *alpha),
                                ));
                            }
                            EnvKind::Hospital => {
                                for rate in ["arrival_rate_0", "arrival_rate_1", "arrival_rate_2"] {
                                    ops.push((
                                        Some((*t_start, *t_end)),
                                        ParamOp::Scale(find(rate)?, *alpha),
                                    ));
                                }
                            }
                            EnvKind::Supply => {
                                return Err(ModelError::Unsupported(
                                    "lockdown has no supply-chain analogue".into(),
                                ))
                            }
                        },
                        Intervention::ArrivalScale {
                            factor,
                            t_start,
                            t_end,
                        } => {
                            for rate in ["arrival_rate_0", "arrival_rate_1", "arrival_rate_2"] {
                                ops.push((
                                    Some((*t_start, *t_end)),
                                    ParamOp::Scale(find(rate)?, *factor),
                                ));
                            }
                        }
                        Intervention::LeadTimeOverride { lead } => {
                            ops.push((None, ParamOp::Set(find("lead_time")?, f64::from(*lead))));
                        }
                        Intervention::CapacityDelta { delta } => match env.kind {
                            EnvKind::Hospital => {
                                ops.push((
                                    None,
                                    ParamOp::Shift(find("standard_capacity")?, *delta as f64),
                                ));
                            }
                            EnvKind::Supply => {
                                hooks.inventory_cap = Some(env.supply_base_cap + delta);
                            }
                            EnvKind::Sir => {
                                return Err(ModelError::Unsupported(
                                    "capacity delta has no SIR analogue".into(),
                                ))
                            }
                        },
                    }
                }
                Ok(Box::new(DslTransition {
                    interp: interp.clone(),
                    base: params.values.clone(),
                    ops,
                    hooks,
                }))
            }
        }
    }
}

fn hand_coded_transition(
    env: &EnvSpec,
    params: &[f64],
    interventions: &[Intervention],
) -> Result<Box<dyn Transition>, ModelError> {
    match env.kind {
        EnvKind::Sir => {
            let mut sim = SirSim {
                beta: params[0],
                gamma: params[1],
                lockdown: None,
            };
            for intervention in interventions {
                match intervention {
                    Intervention::LockdownWindow {
                        t_start,
                        t_end,
                        alpha,
                    } => sim.lockdown = Some((*t_start, *t_end, *alpha)),
                    other => {
                        return Err(ModelError::Unsupported(format!(
                            "{other:?} does not apply to the SIR environment"
                        )))
                    }
                }
            }
            Ok(Box::new(sim))
        }
        EnvKind::Supply => {
            let mut sim = SupplySim {
                demand_rate: params[0],
                lead_time: params[3],
                lead_override: None,
                inventory_cap: None,
            };
            for intervention in interventions {
                match intervention {
                    Intervention::LeadTimeOverride { lead } => sim.lead_override = Some(*lead),
                    Intervention::CapacityDelta { delta } => {
                        sim.inventory_cap = Some(env.supply_base_cap + delta)
                    }
                    other => {
                        return Err(ModelError::Unsupported(format!(
                            "{other:?} does not apply to the supply environment"
                        )))
                    }
                }
            }
            Ok(Box::new(sim))
        }
        EnvKind::Hospital => {
            let mut values: [f64; 14] = params
                .try_into()
                .map_err(|_| ModelError::Unsupported("hospital expects 14 parameters".into()))?;
            let mut arrival_scale = None;
            for intervention in interventions {
                match intervention {
                    Intervention::ArrivalScale {
                        factor,
                        t_start,
                        t_end,
                    } => arrival_scale = Some((*factor, *t_start, *t_end)),
                    Intervention::LockdownWindow {
                        t_start,
                        t_end,
                        alpha,
                    } => arrival_scale = Some((*alpha, *t_start, *t_end)),
                    Intervention::CapacityDelta { delta } => {
                        values[13] += *delta as f64;
                    }
                    other => {
                        return Err(ModelError::Unsupported(format!(
                            "{other:?} does not apply to the hospital environment"
                        )))
                    }
                }
            }
            Ok(Box::new(HospitalSim {
                params: values,
                arrival_scale,
            }))
        }
    }
}

/// Generates `n` trajectories of `horizon` steps under the env's ground
/// truth, one derived stream per trajectory.
pub fn generate_dataset(
    env: &EnvSpec,
    n: usize,
    horizon: usize,
    policy: &PolicySpec,
    seed: u64,
) -> Dataset {
    let sim = Model::hand_coded(env)
        .transition(&[])
        .expect("ground truth builds without interventions");
    let mut dataset = Dataset::new(&env.name, horizon, env.projection.clone());
    let root = derive_stream(seed, &[]);
    for i in 0..n {
        let traj_stream = root.child(i as u32);
        let init = env.init_state(&mut traj_stream.child(INIT_LANE));
        let traj = rollout_with_policy(sim.as_ref(), &init, horizon, policy, &traj_stream)
            .expect("ground truth rollout cannot fail");
        dataset.push(traj);
    }
    dataset
}

/// The ground-truth structure of an environment, expressed in the
/// configuration language with the env's parameter values as declared
/// defaults and its prior bounds.
pub fn gt_config(env: &EnvSpec) -> StructuralConfig {
    let text = match env.kind {
        EnvKind::Sir => sir::GT_SIR,
        EnvKind::Supply => supply::GT_SUPPLY,
        EnvKind::Hospital => hospital::GT_HOSPITAL,
    };
    let mut config = crate::dsl::parse_config(text).expect("bundled config parses");
    config.name = env.name.clone();
    assert_eq!(config.param_decls.len(), env.params.len());
    config.param_decls = env
        .params
        .iter()
        .zip(&config.param_decls)
        .map(|(q, d)| {
            debug_assert_eq!(q.name, d.name);
            ParameterDecl {
                name: q.name.clone(),
                default: q.value,
                min: q.min,
                max: q.max,
            }
        })
        .collect();
    config
}
