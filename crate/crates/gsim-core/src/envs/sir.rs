//! Hand-coded stochastic SIR environment.

use crate::error::StepError;
use crate::num::{clip01, draw_binomial, total_div};
use crate::rng::RngStream;
use crate::state::{Action, StateValue, SystemState};

use super::Transition;

/// Rule stream indices, shared with the DSL twin.
const RULE_INFECTION: u32 = 0;
const RULE_RECOVERY: u32 = 1;

pub(crate) const GT_SIR: &str = r#"
# Discrete-time stochastic SIR with binomial transitions.
config sir {
  params {
    beta = 0.5 in [0, 2];
    gamma = 0.1 in [0, 1];
  }
  state {
    S : int = 990;
    I : int = 10;
    R : int = 0;
  }
  rules {
    CompartmentFlow(from=S, to=I, count=Binomial(S, 1 - exp(-(beta * I) / (S + I + R))));
    CompartmentFlow(from=I, to=R, count=Binomial(I, gamma));
  }
}
"#;

pub(crate) fn sir_state(s: i64, i: i64, r: i64) -> SystemState {
    SystemState::build(vec![
        ("S", StateValue::Int(s)),
        ("I", StateValue::Int(i)),
        ("R", StateValue::Int(r)),
    ])
}

/// Ground-truth SIR step. Rules run sequentially like the twin: the
/// infection flow first (probability from the pre-step state), then the
/// recovery flow over the updated infected pool.
#[derive(Debug, Clone)]
pub struct SirSim {
    pub beta: f64,
    pub gamma: f64,
    /// `(t_start, t_end, alpha)`: scales beta inside the window.
    pub lockdown: Option<(usize, usize, f64)>,
}

impl Transition for SirSim {
    fn step(
        &self,
        state: &SystemState,
        _action: Action,
        t: usize,
        stream: &RngStream,
    ) -> Result<SystemState, StepError> {
        let s = state.get("S").and_then(StateValue::as_int).unwrap_or(0);
        let i = state.get("I").and_then(StateValue::as_int).unwrap_or(0);
        let r = state.get("R").and_then(StateValue::as_int).unwrap_or(0);

        let beta_eff = match self.lockdown {
            Some((t0, t1, alpha)) if t >= t0 && t < t1 => self.beta * alpha,
            _ => self.beta,
        };

        // Infection probability: 1 - exp(-(beta * I) / N), with N = 0
        // collapsing to zero probability (the degenerate empty population).
        let p_infect = clip01(
            1.0 - total_div(-(beta_eff * i as f64), (s as f64 + i as f64) + r as f64).exp(),
        );
        let mut rs = stream.child(RULE_INFECTION);
        let new_infections = draw_binomial(&mut rs, s as f64, p_infect).min(s);

        let s_next = s - new_infections;
        let i_mid = i + new_infections;

        let mut rs = stream.child(RULE_RECOVERY);
        let new_recoveries = draw_binomial(&mut rs, i_mid as f64, clip01(self.gamma)).min(i_mid);

        Ok(sir_state(s_next, i_mid - new_recoveries, r + new_recoveries))
    }
}
