//! Hand-coded three-disease hospital bed environment.

use std::sync::Arc;

use crate::error::StepError;
use crate::num::{clip01, draw_normal_count, draw_poisson};
use crate::rng::RngStream;
use crate::state::{Action, AttrKind, AttrValue, RecordList, RecordSchema, StateValue, SystemState};

use super::Transition;

const RULE_HAZARD: u32 = 0;
const RULE_SPAWN_BASE: u32 = 2;

// Patient attribute layout, shared with the DSL twin's records declaration.
const ATTR_DISEASE: usize = 0;
const ATTR_BED: usize = 1;
const ATTR_LOS: usize = 2;
const ATTR_DAY: usize = 4;

pub(crate) const GT_HOSPITAL: &str = r#"
# Three-disease hospital: daily mortality, length-of-stay countdown, and
# Poisson arrivals admitted through capacity-gated bed preferences.
config hospital {
  params {
    arrival_rate_0 = 1 in [0, 5];
    arrival_rate_1 = 2 in [0, 5];
    arrival_rate_2 = 1.5 in [0, 5];
    los_mean_0 = 5 in [1, 15];
    los_mean_1 = 6 in [1, 15];
    los_mean_2 = 4 in [1, 15];
    base_prob_0 = 0.01 in [0, 0.1];
    base_prob_1 = 0.005 in [0, 0.1];
    base_prob_2 = 0.008 in [0, 0.1];
    day_factor_0 = 0.002 in [0, 0.02];
    day_factor_1 = 0.001 in [0, 0.02];
    day_factor_2 = 0.0015 in [0, 0.02];
    icu_capacity = 5 in [1, 50];
    standard_capacity = 20 in [1, 100];
  }
  state {
    day : int = 0;
    icu_occupancy : int = 0;
    standard_occupancy : int = 0;
    overflow : int = 0;
    patients : records(disease_id: int, bed_type: sym, los_remaining: int, is_alive: bool, day_in_hospital: int) = empty;
  }
  rules {
    RecordHazard(records=patients, bed=bed_type, occupancy={icu: icu_occupancy, standard: standard_occupancy}, prob=(base_prob_0 * ((disease_id - 1) * (disease_id - 2)) / 2 + base_prob_1 * (disease_id * (2 - disease_id)) + base_prob_2 * (disease_id * (disease_id - 1)) / 2) + (day_factor_0 * ((disease_id - 1) * (disease_id - 2)) / 2 + day_factor_1 * (disease_id * (2 - disease_id)) + day_factor_2 * (disease_id * (disease_id - 1)) / 2) * day_in_hospital);
    RecordCountdown(records=patients, timer=los_remaining, age=day_in_hospital, bed=bed_type, occupancy={icu: icu_occupancy, standard: standard_occupancy});
    RecordSpawn(records=patients, count=Poisson(arrival_rate_0), attrs={disease_id: 0, los_remaining: Normal(los_mean_0, 1, floor=1), is_alive: true, day_in_hospital: 1}, gate=Gate(bed=bed_type, overflow=overflow, try=[(icu, icu_occupancy, icu_capacity), (standard, standard_occupancy, standard_capacity)]));
    RecordSpawn(records=patients, count=Poisson(arrival_rate_1), attrs={disease_id: 1, los_remaining: Normal(los_mean_1, 1, floor=1), is_alive: true, day_in_hospital: 1}, gate=Gate(bed=bed_type, overflow=overflow, try=[(icu, icu_occupancy, icu_capacity), (standard, standard_occupancy, standard_capacity)]));
    RecordSpawn(records=patients, count=Poisson(arrival_rate_2), attrs={disease_id: 2, los_remaining: Normal(los_mean_2, 1, floor=1), is_alive: true, day_in_hospital: 1}, gate=Gate(bed=bed_type, overflow=overflow, try=[(standard, standard_occupancy, standard_capacity), (icu, icu_occupancy, icu_capacity)]));
    Assign(field=day, expr=day + 1);
  }
}
"#;

pub(crate) fn patient_schema() -> Arc<RecordSchema> {
    Arc::new(RecordSchema::new(vec![
        ("disease_id".into(), AttrKind::Int),
        ("bed_type".into(), AttrKind::Sym),
        ("los_remaining".into(), AttrKind::Int),
        ("is_alive".into(), AttrKind::Bool),
        ("day_in_hospital".into(), AttrKind::Int),
    ]))
}

pub(crate) fn empty_hospital_state() -> SystemState {
    SystemState::build(vec![
        ("day", StateValue::Int(0)),
        ("icu_occupancy", StateValue::Int(0)),
        ("standard_occupancy", StateValue::Int(0)),
        ("overflow", StateValue::Int(0)),
        (
            "patients",
            StateValue::Records(RecordList::empty(patient_schema())),
        ),
    ])
}

/// Ground-truth hospital step.
///
/// Parameter layout: arrival rates (3), LOS means (3), base mortality
/// probabilities (3), per-day mortality factors (3), ICU capacity,
/// standard capacity.
#[derive(Debug, Clone)]
pub struct HospitalSim {
    pub params: [f64; 14],
    /// `(factor, t_start, t_end)`: scales all arrival rates in the window.
    pub arrival_scale: Option<(f64, usize, usize)>,
}

impl HospitalSim {
    fn free_bed(icu: &mut i64, standard: &mut i64, bed: &AttrValue) {
        match bed {
            AttrValue::Sym(s) if &**s == "icu" => *icu = (*icu - 1).max(0),
            AttrValue::Sym(_) => *standard = (*standard - 1).max(0),
            _ => {}
        }
    }
}

impl Transition for HospitalSim {
    fn step(
        &self,
        state: &SystemState,
        _action: Action,
        t: usize,
        stream: &RngStream,
    ) -> Result<SystemState, StepError> {
        let q = &self.params;
        let (base_probs, day_factors) = (&q[6..9], &q[9..12]);
        let (icu_capacity, standard_capacity) = (q[12], q[13]);

        let day = state.get("day").and_then(StateValue::as_int).unwrap_or(0);
        let mut icu = state
            .get("icu_occupancy")
            .and_then(StateValue::as_int)
            .unwrap_or(0);
        let mut standard = state
            .get("standard_occupancy")
            .and_then(StateValue::as_int)
            .unwrap_or(0);
        let mut overflow = state
            .get("overflow")
            .and_then(StateValue::as_int)
            .unwrap_or(0);
        let patients = match state.get("patients") {
            Some(StateValue::Records(list)) => list,
            _ => return Err(crate::error::SchemaError::MissingField("patients".into()).into()),
        };
        let width = patients.schema().arity();

        // Rule 0: daily mortality hazard over the current patient list.
        let mut rs = stream.child(RULE_HAZARD);
        let mut survivors = RecordList::empty(patients.schema().clone());
        for row in patients.rows() {
            let d = match &row[ATTR_DISEASE] {
                AttrValue::Int(v) => *v as usize,
                _ => 0,
            };
            let day_in = match &row[ATTR_DAY] {
                AttrValue::Int(v) => *v as f64,
                _ => 1.0,
            };
            let p = clip01(base_probs[d.min(2)] + day_factors[d.min(2)] * day_in);
            let u = rs.uniform01();
            if u < p {
                Self::free_bed(&mut icu, &mut standard, &row[ATTR_BED]);
            } else {
                survivors.data.extend_from_slice(row);
            }
        }

        // Rule 1: length-of-stay countdown; discharge at zero.
        let mut remaining = RecordList::empty(survivors.schema().clone());
        for row in survivors.data.chunks(width) {
            let los = match &row[ATTR_LOS] {
                AttrValue::Int(v) => *v - 1,
                _ => 0,
            };
            if los <= 0 {
                Self::free_bed(&mut icu, &mut standard, &row[ATTR_BED]);
            } else {
                let start = remaining.data.len();
                remaining.data.extend_from_slice(row);
                remaining.data[start + ATTR_LOS] = AttrValue::Int(los);
                if let AttrValue::Int(v) = &row[ATTR_DAY] {
                    remaining.data[start + ATTR_DAY] = AttrValue::Int(v + 1);
                }
            }
        }
        let mut patients = remaining;

        // Rules 2-4: arrivals per disease; ICU-first for diseases 0/1,
        // standard-first for disease 2.
        let scale_on = matches!(self.arrival_scale, Some((_, t0, t1)) if t >= t0 && t < t1);
        for d in 0..3usize {
            let rate = if scale_on {
                q[d] * self.arrival_scale.unwrap().0
            } else {
                q[d]
            };
            let mut rs = stream.child(RULE_SPAWN_BASE + d as u32);
            let count = draw_poisson(&mut rs, rate);
            for _ in 0..count {
                let los = draw_normal_count(&mut rs, q[3 + d], 1.0, 1);
                let icu_first = d < 2;
                let admitted_bed = {
                    let try_icu = |icu: &mut i64| {
                        if (*icu as f64) < icu_capacity {
                            *icu += 1;
                            true
                        } else {
                            false
                        }
                    };
                    let try_std = |standard: &mut i64| {
                        if (*standard as f64) < standard_capacity {
                            *standard += 1;
                            true
                        } else {
                            false
                        }
                    };
                    if icu_first {
                        if try_icu(&mut icu) {
                            Some("icu")
                        } else if try_std(&mut standard) {
                            Some("standard")
                        } else {
                            None
                        }
                    } else if try_std(&mut standard) {
                        Some("standard")
                    } else if try_icu(&mut icu) {
                        Some("icu")
                    } else {
                        None
                    }
                };
                match admitted_bed {
                    Some(bed) => patients.push(vec![
                        AttrValue::Int(d as i64),
                        AttrValue::sym(bed),
                        AttrValue::Int(los),
                        AttrValue::Bool(true),
                        AttrValue::Int(1),
                    ]),
                    None => overflow += 1,
                }
            }
        }

        // Rule 5: next day.
        Ok(SystemState::build(vec![
            ("day", StateValue::Int(day + 1)),
            ("icu_occupancy", StateValue::Int(icu)),
            ("standard_occupancy", StateValue::Int(standard)),
            ("overflow", StateValue::Int(overflow)),
            ("patients", StateValue::Records(patients)),
        ]))
    }
}
