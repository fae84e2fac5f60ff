//! Intervention experiments: lockdown curves, the hospital policy grid,
//! the supply-chain cost heatmap, and out-of-distribution lead-time
//! sweeps. All tables are seed-reproducible and use matched rollout
//! streams across conditions.

use rayon::prelude::*;
use thiserror::Error;

use crate::envs::{
    rollout_with_policy, Intervention, Model, ModelError, PolicySpec, INIT_LANE,
};
use crate::rng::derive_stream;
use crate::state::StateValue;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("bad experiment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("simulation failed: {0}")]
    Sim(String),
}

impl From<crate::error::StepError> for ExperimentError {
    fn from(e: crate::error::StepError) -> Self {
        ExperimentError::Sim(e.to_string())
    }
}

fn csv_num(x: f64) -> String {
    format!("{x}")
}

/// Mean S/I/R curves per lockdown intensity, plus the no-lockdown
/// baseline.
#[derive(Debug, Clone)]
pub struct LockdownTable {
    /// `(alpha, t, mean_S, mean_I, mean_R)`; `alpha == None` is baseline.
    pub rows: Vec<(Option<f64>, usize, f64, f64, f64)>,
}

impl LockdownTable {
    pub const CSV_HEADER: &'static str = "alpha,t,mean_S,mean_I,mean_R";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for (alpha, t, s, i, r) in &self.rows {
            let a = match alpha {
                None => "none".to_string(),
                Some(v) => csv_num(*v),
            };
            out.push_str(&format!("{a},{t},{},{},{}\n", csv_num(*s), csv_num(*i), csv_num(*r)));
        }
        out
    }

    /// Peak of the mean infected curve for one condition.
    pub fn peak_infected(&self, alpha: Option<f64>) -> Option<(usize, f64)> {
        self.rows
            .iter()
            .filter(|(a, ..)| *a == alpha)
            .map(|(_, t, _, i, _)| (*t, *i))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Mean S/I/R trajectories under lockdown intensities; every intensity
/// (and the baseline) replays the same per-rollout streams, so an
/// identity intervention reproduces the baseline bit-exactly.
pub fn exp_lockdown_sir(
    model: &Model,
    alphas: &[f64],
    window: (usize, usize),
    mc: usize,
    seed: u64,
) -> Result<LockdownTable, ExperimentError> {
    let env = model.env();
    let horizon = env.horizon;
    if window.0 > window.1 || window.1 > horizon {
        return Err(ExperimentError::Config(format!(
            "lockdown window {window:?} outside horizon {horizon}"
        )));
    }
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(ExperimentError::Config(format!("alpha {a} outside [0, 1]")));
    }
    let mut conditions: Vec<(Option<f64>, Vec<Intervention>)> = vec![(None, Vec::new())];
    for &alpha in alphas {
        conditions.push((
            Some(alpha),
            vec![Intervention::LockdownWindow {
                t_start: window.0,
                t_end: window.1,
                alpha,
            }],
        ));
    }
    let root = derive_stream(seed, &[]);
    let mut rows = Vec::new();
    for (alpha, interventions) in conditions {
        let sim = model.transition(&interventions)?;
        let sums: Result<Vec<Vec<[f64; 3]>>, ExperimentError> = (0..mc)
            .into_par_iter()
            .map(|j| {
                let traj_stream = root.child(j as u32);
                let init = env.init_state(&mut traj_stream.child(INIT_LANE));
                let traj =
                    rollout_with_policy(sim.as_ref(), &init, horizon, &env.policy, &traj_stream)?;
                Ok(traj
                    .next_states()
                    .map(|s| {
                        [
                            s.get("S").and_then(StateValue::as_int).unwrap_or(0) as f64,
                            s.get("I").and_then(StateValue::as_int).unwrap_or(0) as f64,
                            s.get("R").and_then(StateValue::as_int).unwrap_or(0) as f64,
                        ]
                    })
                    .collect())
            })
            .collect();
        let sums = sums?;
        for t in 0..horizon {
            let mut acc = [0.0; 3];
            for rollout in &sums {
                for k in 0..3 {
                    acc[k] += rollout[t][k];
                }
            }
            rows.push((
                alpha,
                t + 1,
                acc[0] / mc as f64,
                acc[1] / mc as f64,
                acc[2] / mc as f64,
            ));
        }
    }
    Ok(LockdownTable { rows })
}

/// Grid of lockdown start days and extra standard beds with the cost
/// coefficients of the hospital policy search.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub taus: Vec<usize>,
    pub delta_bs: Vec<i64>,
    pub lockdown_duration: usize,
    pub lockdown_factor: f64,
    pub cost_per_bed: f64,
    pub cost_per_lockdown_day: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            taus: (0..20).map(|k| k * 5).collect(),
            delta_bs: (0..20).map(|k| k * 500).collect(),
            lockdown_duration: 20,
            lockdown_factor: 0.3,
            cost_per_bed: 10.0,
            cost_per_lockdown_day: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub tau: usize,
    pub delta_b: i64,
    pub mean_overflow: f64,
    pub mean_cost: f64,
}

#[derive(Debug, Clone)]
pub struct PolicyGrid {
    pub cells: Vec<GridCell>,
    pub argmin: GridCell,
}

impl PolicyGrid {
    pub const CSV_HEADER: &'static str = "tau,delta_b,mean_cost";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            out.push_str(&format!("{},{},{}\n", c.tau, c.delta_b, csv_num(c.mean_cost)));
        }
        out
    }

    pub fn cell(&self, tau: usize, delta_b: i64) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.tau == tau && c.delta_b == delta_b)
    }
}

/// Mean cost of one hospital policy:
/// cumulative overflow + cost_per_bed * delta_b + cost_per_lockdown_day *
/// duration, averaged over `mc` rollouts with matched streams.
pub fn hospital_policy_cost(
    model: &Model,
    grid: &GridSpec,
    tau: usize,
    delta_b: i64,
    mc: usize,
    seed: u64,
) -> Result<GridCell, ExperimentError> {
    let env = model.env();
    let horizon = env.horizon;
    let interventions = vec![
        Intervention::ArrivalScale {
            factor: grid.lockdown_factor,
            t_start: tau,
            t_end: tau + grid.lockdown_duration,
        },
        Intervention::CapacityDelta { delta: delta_b },
    ];
    let sim = model.transition(&interventions)?;
    let root = derive_stream(seed, &[]);
    let overflows: Result<Vec<f64>, ExperimentError> = (0..mc)
        .into_par_iter()
        .map(|j| {
            let traj_stream = root.child(j as u32);
            let init = env.init_state(&mut traj_stream.child(INIT_LANE));
            let traj =
                rollout_with_policy(sim.as_ref(), &init, horizon, &env.policy, &traj_stream)?;
            let last = traj.steps.last().map(|(_, s)| s).unwrap_or(&traj.init);
            Ok(last.get("overflow").and_then(StateValue::as_int).unwrap_or(0) as f64)
        })
        .collect();
    let overflows = overflows?;
    let mean_overflow = overflows.iter().sum::<f64>() / mc.max(1) as f64;
    let mean_cost = mean_overflow
        + grid.cost_per_bed * delta_b as f64
        + grid.cost_per_lockdown_day * grid.lockdown_duration as f64;
    Ok(GridCell {
        tau,
        delta_b,
        mean_overflow,
        mean_cost,
    })
}

/// Sweeps the (tau, delta_b) grid; the argmin breaks cost ties by smaller
/// delta_b, then smaller tau.
pub fn exp_policy_grid_hospital(
    model: &Model,
    grid: &GridSpec,
    mc: usize,
    seed: u64,
) -> Result<PolicyGrid, ExperimentError> {
    if grid.taus.is_empty() || grid.delta_bs.is_empty() {
        return Err(ExperimentError::Config("empty policy grid".into()));
    }
    let mut cells = Vec::with_capacity(grid.taus.len() * grid.delta_bs.len());
    for &tau in &grid.taus {
        for &delta_b in &grid.delta_bs {
            cells.push(hospital_policy_cost(model, grid, tau, delta_b, mc, seed)?);
        }
    }
    let argmin = *cells
        .iter()
        .min_by(|a, b| {
            a.mean_cost
                .total_cmp(&b.mean_cost)
                .then(a.delta_b.cmp(&b.delta_b))
                .then(a.tau.cmp(&b.tau))
        })
        .expect("nonempty grid");
    Ok(PolicyGrid { cells, argmin })
}

/// Capacity/lead-time sweep for the supply chain.
#[derive(Debug, Clone)]
pub struct HeatmapSpec {
    pub delta_cs: Vec<i64>,
    pub leads: Vec<u32>,
    /// Cost per unit of extra capacity.
    pub c_cap: f64,
}

impl Default for HeatmapSpec {
    fn default() -> Self {
        HeatmapSpec {
            delta_cs: (0..10).map(|k| k * 5).collect(),
            leads: (1..=6).collect(),
            c_cap: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Heatmap {
    /// `(delta_c, lead, mean_cost)`.
    pub cells: Vec<(i64, u32, f64)>,
}

impl Heatmap {
    pub const CSV_HEADER: &'static str = "delta_c,lead,mean_cost";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for (dc, lead, cost) in &self.cells {
            out.push_str(&format!("{dc},{lead},{}\n", csv_num(*cost)));
        }
        out
    }
}

/// Mean total cost per (extra capacity, lead time) cell: the holding and
/// backlog costs come from the env's own parameters, plus a linear
/// capacity charge.
pub fn exp_heatmap_supply(
    model: &Model,
    spec: &HeatmapSpec,
    mc: usize,
    seed: u64,
) -> Result<Heatmap, ExperimentError> {
    if spec.delta_cs.is_empty() || spec.leads.is_empty() {
        return Err(ExperimentError::Config("empty heatmap grid".into()));
    }
    if spec.leads.iter().any(|&l| l < 1) {
        return Err(ExperimentError::Config("lead times must be >= 1".into()));
    }
    let env = model.env();
    let c_hold = env.param("hold_cost").unwrap_or(0.0);
    let c_back = env.param("back_cost").unwrap_or(0.0);
    let horizon = env.horizon;
    let root = derive_stream(seed, &[]);
    let mut cells = Vec::new();
    for &delta_c in &spec.delta_cs {
        for &lead in &spec.leads {
            let sim = model.transition(&[
                Intervention::CapacityDelta { delta: delta_c },
                Intervention::LeadTimeOverride { lead },
            ])?;
            let costs: Result<Vec<f64>, ExperimentError> = (0..mc)
                .into_par_iter()
                .map(|j| {
                    let traj_stream = root.child(j as u32);
                    let init = env.init_state(&mut traj_stream.child(INIT_LANE));
                    let traj = rollout_with_policy(
                        sim.as_ref(),
                        &init,
                        horizon,
                        &env.policy,
                        &traj_stream,
                    )?;
                    let mut cost = 0.0;
                    for s in traj.next_states() {
                        let inv = s.get("inventory").and_then(StateValue::as_int).unwrap_or(0);
                        let back = s.get("backlog").and_then(StateValue::as_int).unwrap_or(0);
                        cost += c_hold * inv as f64 + c_back * back as f64;
                    }
                    Ok(cost)
                })
                .collect();
            let costs = costs?;
            let mean = costs.iter().sum::<f64>() / mc.max(1) as f64 + spec.c_cap * delta_c as f64;
            cells.push((delta_c, lead, mean));
        }
    }
    Ok(Heatmap { cells })
}

/// Matched backlog curves of a ground-truth and a candidate simulator
/// under lead-time overrides.
#[derive(Debug, Clone)]
pub struct LeadtimeTable {
    /// `(lead, t, gt_backlog_mean, candidate_backlog_mean)`.
    pub rows: Vec<(u32, usize, f64, f64)>,
}

impl LeadtimeTable {
    pub const CSV_HEADER: &'static str = "lead,t,gt_backlog_mean,candidate_backlog_mean";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for (lead, t, gt, cand) in &self.rows {
            out.push_str(&format!("{lead},{t},{},{}\n", csv_num(*gt), csv_num(*cand)));
        }
        out
    }

    pub fn curve(&self, lead: u32, gt_side: bool) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|(l, ..)| *l == lead)
            .map(|(_, _, g, c)| if gt_side { *g } else { *c })
            .collect()
    }
}

/// Per-rollout backlog matrices for one simulator under a lead override.
pub fn leadtime_backlogs(
    model: &Model,
    lead: u32,
    policy: &PolicySpec,
    mc: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, ExperimentError> {
    let env = model.env();
    let horizon = env.horizon;
    let sim = model.transition(&[Intervention::LeadTimeOverride { lead }])?;
    let root = derive_stream(seed, &[]);
    let rollouts: Result<Vec<Vec<f64>>, ExperimentError> = (0..mc)
        .into_par_iter()
        .map(|j| {
            let traj_stream = root.child(j as u32);
            let init = env.init_state(&mut traj_stream.child(INIT_LANE));
            let traj = rollout_with_policy(sim.as_ref(), &init, horizon, policy, &traj_stream)?;
            Ok(traj
                .next_states()
                .map(|s| s.get("backlog").and_then(StateValue::as_int).unwrap_or(0) as f64)
                .collect())
        })
        .collect();
    rollouts
}

/// Out-of-distribution lead-time sweep: matched mean backlog trajectories
/// of the ground truth and a candidate under each override.
pub fn exp_leadtime_ood(
    gt: &Model,
    candidate: &Model,
    leads: &[u32],
    policy: &PolicySpec,
    mc: usize,
    seed: u64,
) -> Result<LeadtimeTable, ExperimentError> {
    if leads.iter().any(|&l| l < 1) {
        return Err(ExperimentError::Config("lead times must be >= 1".into()));
    }
    let horizon = gt.env().horizon;
    let mut rows = Vec::new();
    for &lead in leads {
        let gt_rollouts = leadtime_backlogs(gt, lead, policy, mc, seed)?;
        let cand_rollouts = leadtime_backlogs(candidate, lead, policy, mc, seed.wrapping_add(1))?;
        for t in 0..horizon {
            let gt_mean = gt_rollouts.iter().map(|r| r[t]).sum::<f64>() / mc.max(1) as f64;
            let cand_mean = cand_rollouts.iter().map(|r| r[t]).sum::<f64>() / mc.max(1) as f64;
            rows.push((lead, t + 1, gt_mean, cand_mean));
        }
    }
    Ok(LeadtimeTable { rows })
}
