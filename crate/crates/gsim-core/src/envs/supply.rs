//! Hand-coded single-stage supply chain environment.

use crate::error::StepError;
use crate::num::draw_poisson;
use crate::rng::RngStream;
use crate::state::{Action, PipelineEntry, StateValue, SystemState};

use super::Transition;

const RULE_SERVICE: u32 = 1;

pub(crate) const GT_SUPPLY: &str = r#"
# Single-stage retailer: Poisson demand, delayed shipments, backlog service.
config supply {
  params {
    demand_rate = 5 in [0, 20];
    hold_cost = 1 in [0, 10];
    back_cost = 2 in [0, 10];
    lead_time = 2 in [1, 10];
  }
  state {
    inventory : int = 20;
    pipeline : pipeline = empty;
    backlog : int = 0;
    t : int = 0;
  }
  rules {
    PipelineAdvance(pipeline=pipeline, deliver_to=inventory);
    QueueService(inventory=inventory, backlog=backlog, demand=Poisson(demand_rate));
    PipelineAppend(pipeline=pipeline, quantity=action, delay=lead_time);
    Assign(field=t, expr=t + 1);
  }
}
"#;

pub(crate) fn supply_state(
    inventory: i64,
    pipeline: Vec<PipelineEntry>,
    backlog: i64,
    t: i64,
) -> SystemState {
    SystemState::build(vec![
        ("inventory", StateValue::Int(inventory)),
        ("pipeline", StateValue::Pipeline(pipeline)),
        ("backlog", StateValue::Int(backlog)),
        ("t", StateValue::Int(t)),
    ])
}

/// Ground-truth supply step: advance pipeline, serve backlog then demand,
/// place the order, tick the clock.
#[derive(Debug, Clone)]
pub struct SupplySim {
    pub demand_rate: f64,
    pub lead_time: f64,
    pub lead_override: Option<u32>,
    /// Warehouse cap; arriving units beyond it are discarded.
    pub inventory_cap: Option<i64>,
}

impl Transition for SupplySim {
    fn step(
        &self,
        state: &SystemState,
        action: Action,
        _t: usize,
        stream: &RngStream,
    ) -> Result<SystemState, StepError> {
        let mut inventory = state
            .get("inventory")
            .and_then(StateValue::as_int)
            .unwrap_or(0);
        let mut backlog = state.get("backlog").and_then(StateValue::as_int).unwrap_or(0);
        let t_field = state.get("t").and_then(StateValue::as_int).unwrap_or(0);
        let entries = match state.get("pipeline") {
            Some(StateValue::Pipeline(e)) => e.clone(),
            _ => Vec::new(),
        };

        // Rule 0: pipeline advance + delivery (capped when intervened).
        let mut pipeline = Vec::with_capacity(entries.len() + 1);
        let mut delivered = 0i64;
        for e in entries {
            if e.timer <= 1 {
                delivered += e.qty as i64;
            } else {
                pipeline.push(PipelineEntry {
                    qty: e.qty,
                    timer: e.timer - 1,
                });
            }
        }
        inventory += delivered;
        if let Some(cap) = self.inventory_cap {
            inventory = inventory.min(cap);
        }

        // Rule 1: serve backlog first, then sampled demand.
        let mut rs = stream.child(RULE_SERVICE);
        let demand = draw_poisson(&mut rs, self.demand_rate);
        let fill_back = inventory.min(backlog);
        inventory -= fill_back;
        backlog -= fill_back;
        let fill_demand = inventory.min(demand);
        inventory -= fill_demand;
        backlog += demand - fill_demand;

        // Rule 2: place the order.
        let qty = i64::from(action.value().ok_or(StepError::MissingAction)?);
        if qty >= 1 {
            let lead = match self.lead_override {
                Some(l) => f64::from(l),
                None => self.lead_time,
            };
            let lead = if lead.is_nan() { 1.0 } else { lead.trunc() };
            pipeline.push(PipelineEntry {
                qty: qty as u64,
                timer: lead.clamp(1.0, 1.0e6) as u64,
            });
        }

        // Rule 3: clock tick.
        Ok(supply_state(inventory, pipeline, backlog, t_field + 1))
    }
}
