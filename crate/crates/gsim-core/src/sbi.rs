//! Likelihood-free Bayesian calibration via rejection sampling: prior
//! draws, budgeted simulation, an accepted posterior sample set, the
//! posterior-mean point estimate, and posterior-variance flags.

use rayon::prelude::*;
use thiserror::Error;

use crate::dsl::{Interpreter, ParameterVector};
use crate::rng::derive_stream;
use crate::state::{Dataset, ProjectionSpec, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SbiError {
    #[error("settings invalid: {0}")]
    BadSettings(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("need at least 2 posterior samples, have {0}")]
    InsufficientSamples(usize),
    #[error("simulation failed: {0}")]
    Sim(String),
}

#[derive(Debug, Clone)]
pub struct SbiSettings {
    /// Total prior draws simulated.
    pub budget: usize,
    /// Fraction of draws accepted, lowest distance first.
    pub accept_fraction: f64,
    pub parallel: bool,
}

impl Default for SbiSettings {
    fn default() -> Self {
        SbiSettings {
            budget: 1000,
            accept_fraction: 0.05,
            parallel: true,
        }
    }
}

impl SbiSettings {
    pub fn n_accept(&self) -> usize {
        (self.budget as f64 * self.accept_fraction).round() as usize
    }

    fn check(&self) -> Result<(), SbiError> {
        if !(0.0 < self.accept_fraction && self.accept_fraction <= 1.0) {
            return Err(SbiError::BadSettings(format!(
                "accept_fraction {} outside (0, 1]",
                self.accept_fraction
            )));
        }
        if self.n_accept() < 10 {
            return Err(SbiError::BadSettings(format!(
                "budget {} x accept_fraction {} accepts fewer than 10 draws",
                self.budget, self.accept_fraction
            )));
        }
        Ok(())
    }
}

/// Accepted parameter draws with their distances.
#[derive(Debug, Clone)]
pub struct PosteriorSamples {
    pub accepted: Vec<ParameterVector>,
    pub distances: Vec<f64>,
    pub threshold: f64,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.accepted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accepted.is_empty()
    }

    /// Unbiased per-coordinate sample variance.
    pub fn variances(&self) -> Result<Vec<f64>, SbiError> {
        let n = self.accepted.len();
        if n < 2 {
            return Err(SbiError::InsufficientSamples(n));
        }
        let d = self.accepted[0].len();
        let mut mean = vec![0.0; d];
        for s in &self.accepted {
            for j in 0..d {
                mean[j] += s.values[j];
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for s in &self.accepted {
            for j in 0..d {
                let e = s.values[j] - mean[j];
                var[j] += e * e;
            }
        }
        for v in &mut var {
            *v /= (n - 1) as f64;
        }
        Ok(var)
    }

    /// `param...,distance` CSV, one row per accepted sample.
    pub fn to_csv(&self, param_names: &[String]) -> String {
        let mut out = param_names.join(",");
        out.push_str(",distance\n");
        for (s, d) in self.accepted.iter().zip(&self.distances) {
            let row: Vec<String> = s.values.iter().map(|v| format!("{v}")).collect();
            out.push_str(&row.join(","));
            out.push_str(&format!(",{d}\n"));
        }
        out
    }
}

/// Per-parameter misspecification flags: variance above threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceFlags {
    pub flags: Vec<bool>,
    pub thresholds: Vec<f64>,
    pub variances: Vec<f64>,
}

impl VarianceFlags {
    pub fn any(&self) -> bool {
        self.flags.iter().any(|&f| f)
    }
}

/// Flags coordinates whose unbiased posterior sample variance exceeds the
/// threshold.
pub fn variance_flags(
    samples: &PosteriorSamples,
    thresholds: &[f64],
) -> Result<VarianceFlags, SbiError> {
    let variances = samples.variances()?;
    let flags = variances
        .iter()
        .zip(thresholds)
        .map(|(v, t)| v > t)
        .collect();
    Ok(VarianceFlags {
        flags,
        thresholds: thresholds.to_vec(),
        variances,
    })
}

/// Default variance thresholds: half the prior variance per coordinate
/// (the prior is uniform, so `(hi - lo)^2 / 12`).
pub fn default_variance_thresholds(bounds: &[(f64, f64)]) -> Vec<f64> {
    bounds
        .iter()
        .map(|(lo, hi)| 0.5 * (hi - lo) * (hi - lo) / 12.0)
        .collect()
}

/// Concatenates a trajectory's observation vectors over time, row-major;
/// the initial state is not included, so a horizon-0 trajectory flattens
/// to an empty vector.
pub fn flatten_rollout(
    trajectory: &Trajectory,
    projection: &ProjectionSpec,
) -> Result<Vec<f64>, crate::error::SchemaError> {
    let rows = trajectory.observations(projection)?;
    Ok(rows.into_iter().flatten().collect())
}

/// Rejection posterior: draw `budget` parameter vectors from the uniform
/// prior, pair each with a training trajectory round-robin, roll out from
/// that trajectory's initial state with its logged actions, and score by
/// standardized Euclidean distance between flattened observation vectors.
/// The lowest `accept_fraction` quantile is accepted (ties broken by draw
/// index) and the point estimate is the accepted mean clipped to bounds.
pub fn run_sbi(
    interp: &Interpreter,
    train: &Dataset,
    settings: &SbiSettings,
    seed: u64,
) -> Result<(PosteriorSamples, ParameterVector), SbiError> {
    settings.check()?;
    if train.is_empty() {
        return Err(SbiError::EmptyTrainingSet);
    }
    let projection = &train.projection;
    let bounds = interp.bounds().to_vec();
    let dim = bounds.len();
    let root = derive_stream(seed, &[]);
    let prior_lane = root.child(0);
    let sim_lane = root.child(1);

    // Standardization over the training set's flattened coordinates,
    // stdev floored at 1e-9.
    let flat_train: Vec<Vec<f64>> = train
        .trajectories
        .iter()
        .map(|t| flatten_rollout(t, projection).map_err(|e| SbiError::Sim(e.to_string())))
        .collect::<Result<_, _>>()?;
    let flat_len = flat_train.iter().map(Vec::len).max().unwrap_or(0);
    let mut mean = vec![0.0; flat_len];
    let mut count = vec![0usize; flat_len];
    for row in &flat_train {
        for (j, v) in row.iter().enumerate() {
            mean[j] += v;
            count[j] += 1;
        }
    }
    for (m, c) in mean.iter_mut().zip(&count) {
        if *c > 0 {
            *m /= *c as f64;
        }
    }
    let mut stdev = vec![0.0; flat_len];
    for row in &flat_train {
        for (j, v) in row.iter().enumerate() {
            let e = v - mean[j];
            stdev[j] += e * e;
        }
    }
    for (s, c) in stdev.iter_mut().zip(&count) {
        *s = if *c > 0 { (*s / *c as f64).sqrt() } else { 0.0 };
        if *s < 1e-9 {
            *s = 1e-9;
        }
    }

    let simulate_one = |i: usize| -> Result<(ParameterVector, f64), SbiError> {
        let mut prior_stream = prior_lane.child(i as u32);
        let draw: Vec<f64> = bounds
            .iter()
            .map(|(lo, hi)| lo + prior_stream.uniform01() * (hi - lo))
            .collect();
        let params = ParameterVector::new(draw);
        let traj = &train.trajectories[i % train.len()];
        let init = interp
            .conform(&traj.init)
            .map_err(|e| SbiError::Sim(e.to_string()))?;
        let actions: Vec<_> = traj.steps.iter().map(|(a, _)| *a).collect();
        let rows = interp
            .rollout_observed(
                params.as_slice(),
                &init,
                &actions,
                projection,
                &sim_lane.child(i as u32),
            )
            .map_err(|e| SbiError::Sim(e.to_string()))?;
        let simulated: Vec<f64> = rows.into_iter().flatten().collect();
        let observed = &flat_train[i % train.len()];
        let mut dist = 0.0;
        for (j, (s, o)) in simulated.iter().zip(observed).enumerate() {
            let e = (s - o) / stdev[j];
            dist += e * e;
        }
        Ok((params, dist.sqrt()))
    };

    let draws: Result<Vec<(ParameterVector, f64)>, SbiError> = if settings.parallel {
        (0..settings.budget).into_par_iter().map(simulate_one).collect()
    } else {
        (0..settings.budget).map(simulate_one).collect()
    };
    let draws = draws?;

    let mut order: Vec<usize> = (0..draws.len()).collect();
    order.sort_by(|&a, &b| draws[a].1.total_cmp(&draws[b].1).then(a.cmp(&b)));
    let n_accept = settings.n_accept().min(draws.len());
    let accepted_idx = &order[..n_accept];
    let accepted: Vec<ParameterVector> = accepted_idx.iter().map(|&i| draws[i].0.clone()).collect();
    let distances: Vec<f64> = accepted_idx.iter().map(|&i| draws[i].1).collect();
    let threshold = distances.last().copied().unwrap_or(0.0);

    let mut mean = vec![0.0; dim];
    for s in &accepted {
        for j in 0..dim {
            mean[j] += s.values[j];
        }
    }
    for m in &mut mean {
        *m /= n_accept as f64;
    }
    let point = ParameterVector::clipped(&interp.config().param_decls, mean);

    Ok((
        PosteriorSamples {
            accepted,
            distances,
            threshold,
        },
        point,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_config;
    use crate::envs::{generate_dataset, EnvSpec};
    use crate::state::{Action, Extract, StateValue, SystemState};

    fn toy_interp() -> Interpreter {
        let text = "config toy { params { mu = 0.5 in [0, 2]; } state { y : float = 0; }
                    rules { Assign(field=y, expr=mu); } }";
        Interpreter::new(&parse_config(text).unwrap()).unwrap()
    }

    fn toy_dataset(observed: f64, horizon: usize) -> Dataset {
        let proj = ProjectionSpec {
            dims: vec![("y".into(), Extract::Scalar { field: "y".into() })],
        };
        let mut d = Dataset::new("toy", horizon, proj);
        let state = |v: f64| SystemState::build(vec![("y", StateValue::Float(v))]);
        d.push(Trajectory {
            init: state(0.0),
            steps: (0..horizon).map(|_| (Action::NONE, state(observed))).collect(),
        });
        d
    }

    #[test]
    fn flatten_rollout_shapes() {
        let env = EnvSpec::preset("sir").unwrap();
        let data = generate_dataset(&env, 1, 2, &env.policy.clone(), 3);
        let flat = flatten_rollout(&data.trajectories[0], &data.projection).unwrap();
        assert_eq!(flat.len(), 2 * 3);
        // Element-wise agreement with per-step observation.
        let rows = data.trajectories[0].observations(&data.projection).unwrap();
        assert_eq!(flat[..3], rows[0][..]);
        assert_eq!(flat[3..], rows[1][..]);

        let empty = Trajectory {
            init: data.trajectories[0].init.clone(),
            steps: vec![],
        };
        assert!(flatten_rollout(&empty, &data.projection).unwrap().is_empty());
    }

    #[test]
    fn toy_posterior_concentrates_on_observation() {
        let interp = toy_interp();
        let data = toy_dataset(1.0, 5);
        let settings = SbiSettings::default();
        for seed in 0..5 {
            let (samples, point) = run_sbi(&interp, &data, &settings, seed).unwrap();
            assert_eq!(samples.len(), 50);
            assert!(
                point.values[0] > 0.97 && point.values[0] < 1.03,
                "seed {seed}: point {}",
                point.values[0]
            );
            // Acceptance is exactly the brute-force nearest set: every
            // accepted draw must be closer to 1.0 than the threshold
            // implies, and the threshold is the max accepted distance.
            let max_d = samples.distances.iter().cloned().fold(0.0, f64::max);
            assert_eq!(max_d, samples.threshold);
            // Posterior variance is far below half the prior variance.
            let tau = default_variance_thresholds(interp.bounds());
            let flags = variance_flags(&samples, &tau).unwrap();
            assert!(!flags.any(), "variance {:?}", flags.variances);
        }
    }

    #[test]
    fn accepted_set_matches_brute_force_quantile() {
        // With the deterministic toy model the distance is monotone in
        // |mu - observed|, so the accepted set must be the n_accept draws
        // nearest to the observation.
        let interp = toy_interp();
        let data = toy_dataset(1.0, 3);
        let settings = SbiSettings {
            budget: 400,
            accept_fraction: 0.1,
            parallel: false,
        };
        let (samples, _) = run_sbi(&interp, &data, &settings, 9).unwrap();
        // Reconstruct all prior draws with the same stream layout.
        let root = derive_stream(9, &[]);
        let prior_lane = root.child(0);
        let mut all: Vec<f64> = (0..settings.budget)
            .map(|i| {
                let mut s = prior_lane.child(i as u32);
                0.0 + s.uniform01() * 2.0
            })
            .collect();
        all.sort_by(|a, b| (a - 1.0).abs().total_cmp(&(b - 1.0).abs()));
        let mut expected: Vec<f64> = all[..40].to_vec();
        expected.sort_by(f64::total_cmp);
        let mut got: Vec<f64> = samples.accepted.iter().map(|p| p.values[0]).collect();
        got.sort_by(f64::total_cmp);
        assert_eq!(got.len(), expected.len());
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn accept_all_recovers_prior_mean() {
        let interp = toy_interp();
        let data = toy_dataset(1.0, 2);
        let settings = SbiSettings {
            budget: 1000,
            accept_fraction: 1.0,
            parallel: true,
        };
        let (_, point) = run_sbi(&interp, &data, &settings, 3).unwrap();
        // Prior Unif(0,2): mean 1, sd 0.577; MC error 3*sd/sqrt(n).
        let tol = 3.0 * (1.0 / 3.0f64).sqrt() / (1000.0f64).sqrt();
        assert!((point.values[0] - 1.0).abs() < tol, "{}", point.values[0]);
    }

    #[test]
    fn tightening_acceptance_never_raises_threshold() {
        let interp = toy_interp();
        let data = toy_dataset(1.0, 4);
        let loose = SbiSettings {
            budget: 500,
            accept_fraction: 0.2,
            parallel: true,
        };
        let tight = SbiSettings {
            budget: 500,
            accept_fraction: 0.05,
            parallel: true,
        };
        let (a, _) = run_sbi(&interp, &data, &loose, 4).unwrap();
        let (b, _) = run_sbi(&interp, &data, &tight, 4).unwrap();
        assert!(b.threshold <= a.threshold);
    }

    #[test]
    fn determinism_and_bounds() {
        let env = EnvSpec::preset("sir").unwrap();
        let config = crate::envs::gt_config(&env);
        let interp = Interpreter::new(&config).unwrap();
        let data = generate_dataset(&env, 5, 8, &env.policy.clone(), 2);
        let settings = SbiSettings {
            budget: 200,
            accept_fraction: 0.1,
            parallel: true,
        };
        let (sa, pa) = run_sbi(&interp, &data, &settings, 11).unwrap();
        let (sb, pb) = run_sbi(&interp, &data, &settings, 11).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(sa.distances, sb.distances);
        for (v, (lo, hi)) in pa.values.iter().zip(interp.bounds()) {
            assert!(v >= lo && v <= hi);
        }
    }

    #[test]
    fn variance_flag_edges() {
        let samples = PosteriorSamples {
            accepted: vec![
                ParameterVector::new(vec![1.0, 2.0]),
                ParameterVector::new(vec![1.0, 4.0]),
            ],
            distances: vec![0.0, 0.0],
            threshold: 0.0,
        };
        // Identical first coordinate: zero variance never flags.
        let f = variance_flags(&samples, &[0.5, 0.5]).unwrap();
        assert_eq!(f.flags, vec![false, true]);
        // Zero thresholds flag any spread.
        let f = variance_flags(&samples, &[0.0, 0.0]).unwrap();
        assert_eq!(f.flags, vec![false, true]);

        let single = PosteriorSamples {
            accepted: vec![ParameterVector::new(vec![1.0])],
            distances: vec![0.0],
            threshold: 0.0,
        };
        assert!(matches!(
            variance_flags(&single, &[0.1]),
            Err(SbiError::InsufficientSamples(1))
        ));
    }

    #[test]
    fn settings_validation() {
        let interp = toy_interp();
        let data = toy_dataset(1.0, 1);
        let bad = SbiSettings {
            budget: 50,
            accept_fraction: 0.05,
            parallel: false,
        };
        assert!(matches!(
            run_sbi(&interp, &data, &bad, 0),
            Err(SbiError::BadSettings(_))
        ));
    }
}
