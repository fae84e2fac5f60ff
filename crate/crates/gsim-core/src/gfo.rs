//! Genetic-algorithm parameter calibration: tournament selection,
//! simulated binary crossover, Gaussian mutation, Monte-Carlo fitness,
//! and warm starting.
//!
//! All variation operators work in per-coordinate normalized `[0, 1]`
//! space derived from the declared prior bounds; the mutation stdev is in
//! that space.

use rayon::prelude::*;

use crate::dsl::{Interpreter, ParameterVector};
use crate::rng::{derive_stream, RngStream};
use crate::state::Dataset;

/// Fitness assigned when a rollout fails or produces non-finite values.
pub const PENALTY_FITNESS: f64 = 1.0e12;

#[derive(Debug, Clone)]
pub struct GaSettings {
    pub population: usize,
    pub generations: usize,
    pub tournament_k: usize,
    pub crossover_rate: f64,
    pub sbx_eta: f64,
    /// Mutation stdev in normalized coordinate space.
    pub mutation_stdev: f64,
    /// Monte-Carlo rollouts per training trajectory per evaluation.
    pub mc_draws: usize,
    pub elitism: usize,
    /// Evaluate the population with the global thread pool.
    pub parallel: bool,
}

impl Default for GaSettings {
    fn default() -> Self {
        GaSettings {
            population: 200,
            generations: 10,
            tournament_k: 4,
            crossover_rate: 1.0,
            sbx_eta: 8.0,
            mutation_stdev: 0.03,
            mc_draws: 200,
            elitism: 1,
            parallel: true,
        }
    }
}

/// Best/mean fitness of one generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenStats {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
}

/// `generation,best,mean` CSV with header.
pub fn history_csv(history: &[GenStats]) -> String {
    let mut out = String::from("generation,best,mean\n");
    for h in history {
        out.push_str(&format!("{},{},{}\n", h.generation, h.best, h.mean));
    }
    out
}

/// Monte-Carlo fitness: for each training trajectory, roll out `mc_draws`
/// times from its initial state with its logged actions, average the
/// observation trajectories pointwise, and take the MSE against the
/// observed trajectory; the result is the mean over trajectories. Failures
/// are sanitized to [`PENALTY_FITNESS`].
pub fn fitness(
    interp: &Interpreter,
    params: &ParameterVector,
    train: &Dataset,
    mc_draws: usize,
    seed: u64,
) -> f64 {
    let mc = mc_draws.max(1);
    let root = derive_stream(seed, &[]);
    let projection = &train.projection;
    let d = projection.arity();
    if train.is_empty() || d == 0 {
        return PENALTY_FITNESS;
    }
    let mut total = 0.0;
    for (idx, traj) in train.trajectories.iter().enumerate() {
        let init = match interp.conform(&traj.init) {
            Ok(s) => s,
            Err(_) => return PENALTY_FITNESS,
        };
        let actions: Vec<_> = traj.steps.iter().map(|(a, _)| *a).collect();
        let horizon = actions.len();
        if horizon == 0 {
            continue;
        }
        let traj_stream = root.child(idx as u32);
        let mut acc = vec![0.0; horizon * d];
        for m in 0..mc {
            let rows = match interp.rollout_observed(
                params.as_slice(),
                &init,
                &actions,
                projection,
                &traj_stream.child(m as u32),
            ) {
                Ok(r) => r,
                Err(_) => return PENALTY_FITNESS,
            };
            for (t, row) in rows.iter().enumerate() {
                for j in 0..d {
                    acc[t * d + j] += row[j];
                }
            }
        }
        let observed = match traj.observations(projection) {
            Ok(o) => o,
            Err(_) => return PENALTY_FITNESS,
        };
        let mut sq = 0.0;
        for (t, row) in observed.iter().enumerate() {
            for j in 0..d {
                let e = acc[t * d + j] / mc as f64 - row[j];
                sq += e * e;
            }
        }
        total += sq / (horizon * d) as f64;
    }
    let value = total / train.len() as f64;
    if value.is_finite() {
        value
    } else {
        PENALTY_FITNESS
    }
}

/// Evaluates every candidate's fitness, serially or on the thread pool;
/// results are identical either way because each candidate's streams are
/// derived independently.
pub fn evaluate_population(
    interp: &Interpreter,
    population: &[ParameterVector],
    train: &Dataset,
    mc_draws: usize,
    seed: u64,
    parallel: bool,
) -> Vec<f64> {
    if parallel {
        population
            .par_iter()
            .map(|p| fitness(interp, p, train, mc_draws, seed))
            .collect()
    } else {
        population
            .iter()
            .map(|p| fitness(interp, p, train, mc_draws, seed))
            .collect()
    }
}

fn normalize(values: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    values
        .iter()
        .zip(bounds)
        .map(|(v, (lo, hi))| {
            if hi > lo {
                ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
            } else {
                0.5
            }
        })
        .collect()
}

fn denormalize(coords: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    coords
        .iter()
        .zip(bounds)
        .map(|(x, (lo, hi))| lo + x * (hi - lo))
        .collect()
}

fn sbx_normalized(a: &[f64], b: &[f64], eta: f64, rng: &mut RngStream) -> (Vec<f64>, Vec<f64>) {
    let mut c1 = Vec::with_capacity(a.len());
    let mut c2 = Vec::with_capacity(a.len());
    for (&x, &y) in a.iter().zip(b) {
        let u = rng.uniform01();
        let beta_q = if u <= 0.5 {
            (2.0 * u).powf(1.0 / (eta + 1.0))
        } else {
            (1.0 / (2.0 * (1.0 - u))).powf(1.0 / (eta + 1.0))
        };
        let v1 = 0.5 * ((1.0 + beta_q) * x + (1.0 - beta_q) * y);
        let v2 = 0.5 * ((1.0 - beta_q) * x + (1.0 + beta_q) * y);
        c1.push(v1.clamp(0.0, 1.0));
        c2.push(v2.clamp(0.0, 1.0));
    }
    (c1, c2)
}

/// Simulated binary crossover in normalized space, children clipped to the
/// declared bounds.
pub fn sbx_crossover(
    parent_a: &ParameterVector,
    parent_b: &ParameterVector,
    eta: f64,
    rng: &mut RngStream,
    bounds: &[(f64, f64)],
) -> (ParameterVector, ParameterVector) {
    let na = normalize(&parent_a.values, bounds);
    let nb = normalize(&parent_b.values, bounds);
    let (c1, c2) = sbx_normalized(&na, &nb, eta, rng);
    (
        ParameterVector::new(denormalize(&c1, bounds)),
        ParameterVector::new(denormalize(&c2, bounds)),
    )
}

fn mutate_normalized(coords: &mut [f64], stdev: f64, rng: &mut RngStream) {
    for x in coords.iter_mut() {
        let draw = rng.normal(0.0, stdev).expect("nonnegative stdev");
        *x = (*x + draw).clamp(0.0, 1.0);
    }
}

/// Per-coordinate Gaussian perturbation in normalized space, clipped back
/// into bounds.
pub fn gaussian_mutate(
    params: &ParameterVector,
    stdev: f64,
    bounds: &[(f64, f64)],
    rng: &mut RngStream,
) -> ParameterVector {
    let mut coords = normalize(&params.values, bounds);
    mutate_normalized(&mut coords, stdev, rng);
    ParameterVector::new(denormalize(&coords, bounds))
}

fn tournament(fitnesses: &[f64], k: usize, rng: &mut RngStream) -> usize {
    let n = fitnesses.len();
    let mut best = rng.uniform_int(0, n as i64 - 1) as usize;
    for _ in 1..k.max(1) {
        let c = rng.uniform_int(0, n as i64 - 1) as usize;
        if fitnesses[c] < fitnesses[best] {
            best = c;
        }
    }
    best
}

/// Runs the evolutionary calibration loop and returns the best parameters
/// with the per-generation fitness history (length `generations + 1`,
/// including the initial population).
///
/// The population is initialized uniformly inside the bounds; one slot is
/// replaced by the declared defaults and another by `warm_start` when
/// given. Fitness uses common random numbers: the same Monte-Carlo streams
/// for every individual in every generation, which makes the elitist
/// best-fitness trace nonincreasing.
pub fn calibrate_es(
    interp: &Interpreter,
    train: &Dataset,
    settings: &GaSettings,
    warm_start: Option<&ParameterVector>,
    seed: u64,
) -> (ParameterVector, Vec<GenStats>) {
    let bounds = interp.bounds().to_vec();
    let dim = bounds.len();
    let pop_size = settings.population.max(2);
    let root = derive_stream(seed, &[]);
    let fitness_seed = root.derive_seed(1);
    let mut init_stream = root.child(2);
    let mut var_stream = root.child(3);

    let mut population: Vec<Vec<f64>> = (0..pop_size)
        .map(|_| (0..dim).map(|_| init_stream.uniform01()).collect())
        .collect();
    if pop_size > 0 {
        population[0] = normalize(&interp.defaults().values, &bounds);
    }
    if let Some(w) = warm_start {
        if pop_size > 1 {
            population[1] = normalize(&w.values, &bounds);
        }
    }

    let mut history = Vec::with_capacity(settings.generations + 1);
    let mut best_params = ParameterVector::new(denormalize(&population[0], &bounds));
    let mut best_fitness = f64::INFINITY;

    for generation in 0..=settings.generations {
        let phenotypes: Vec<ParameterVector> = population
            .iter()
            .map(|c| ParameterVector::clipped(&interp.config().param_decls, denormalize(c, &bounds)))
            .collect();
        let fitnesses = evaluate_population(
            interp,
            &phenotypes,
            train,
            settings.mc_draws,
            fitness_seed,
            settings.parallel,
        );
        let mut order: Vec<usize> = (0..pop_size).collect();
        order.sort_by(|&a, &b| fitnesses[a].total_cmp(&fitnesses[b]).then(a.cmp(&b)));
        let gen_best = order[0];
        if fitnesses[gen_best] < best_fitness {
            best_fitness = fitnesses[gen_best];
            best_params = phenotypes[gen_best].clone();
        }
        history.push(GenStats {
            generation,
            best: fitnesses[gen_best],
            mean: fitnesses.iter().sum::<f64>() / pop_size as f64,
        });
        if generation == settings.generations {
            break;
        }

        let mut next: Vec<Vec<f64>> = order
            .iter()
            .take(settings.elitism.min(pop_size))
            .map(|&i| population[i].clone())
            .collect();
        while next.len() < pop_size {
            let pa = tournament(&fitnesses, settings.tournament_k, &mut var_stream);
            let pb = tournament(&fitnesses, settings.tournament_k, &mut var_stream);
            let (mut c1, mut c2) = if var_stream.uniform01() < settings.crossover_rate {
                sbx_normalized(
                    &population[pa],
                    &population[pb],
                    settings.sbx_eta,
                    &mut var_stream,
                )
            } else {
                (population[pa].clone(), population[pb].clone())
            };
            mutate_normalized(&mut c1, settings.mutation_stdev, &mut var_stream);
            mutate_normalized(&mut c2, settings.mutation_stdev, &mut var_stream);
            next.push(c1);
            if next.len() < pop_size {
                next.push(c2);
            }
        }
        population = next;
    }

    (best_params, history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_config;
    use crate::envs::{generate_dataset, gt_config, EnvSpec};

    fn toy_interp() -> Interpreter {
        // One parameter, deterministic output y = mu.
        let text = "config toy { params { mu = 1 in [0, 1]; } state { y : float = 0; }
                    rules { Assign(field=y, expr=mu); } }";
        Interpreter::new(&parse_config(text).unwrap()).unwrap()
    }

    #[test]
    fn deterministic_config_with_true_params_has_zero_fitness() {
        let env = EnvSpec::preset("sir").unwrap();
        let mut config = gt_config(&env);
        // Make both flows deterministic zero: identity dynamics.
        config.rules.clear();
        let interp = Interpreter::new(&config).unwrap();
        // Data of constant states has zero error under the empty-rule twin
        // only if the data is also constant; build it from the same config.
        let mut data = crate::state::Dataset::new("sir", 3, env.projection.clone());
        let init = interp.init_state();
        let stream = crate::rng::derive_stream(1, &[]);
        let traj = interp
            .rollout(
                config.defaults().as_slice(),
                &init,
                &[crate::state::Action::NONE; 3],
                &stream,
            )
            .unwrap();
        data.push(traj);
        let f = fitness(&interp, &config.defaults(), &data, 4, 9);
        assert_eq!(f, 0.0);
    }

    #[test]
    fn gt_params_beat_far_params_on_gt_data() {
        let env = EnvSpec::preset("sir").unwrap();
        let config = gt_config(&env);
        let interp = Interpreter::new(&config).unwrap();
        let data = generate_dataset(&env, 8, 15, &env.policy.clone(), 5);
        let mut wins = 0;
        for seed in 0..5 {
            let good = fitness(&interp, &config.defaults(), &data, 20, seed);
            let bad = fitness(
                &interp,
                &ParameterVector::new(vec![2.0, 1.0]),
                &data,
                20,
                seed,
            );
            if good < bad {
                wins += 1;
            }
        }
        assert!(wins >= 4, "{wins}/5");
    }

    #[test]
    fn more_mc_draws_reduce_fitness_variance() {
        let env = EnvSpec::preset("sir").unwrap();
        let config = gt_config(&env);
        let interp = Interpreter::new(&config).unwrap();
        let data = generate_dataset(&env, 4, 10, &env.policy.clone(), 11);
        let spread = |mc: usize| {
            let vals: Vec<f64> = (0..20)
                .map(|s| fitness(&interp, &config.defaults(), &data, mc, 100 + s))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64
        };
        assert!(spread(20) < spread(1), "averaging should reduce variance");
    }

    #[test]
    fn sbx_identities() {
        let bounds = vec![(0.0, 1.0), (0.0, 2.0)];
        let a = ParameterVector::new(vec![0.4, 1.2]);
        let mut rng = derive_stream(3, &[]);
        let (c1, c2) = sbx_crossover(&a, &a, 8.0, &mut rng, &bounds);
        assert_eq!(c1, a);
        assert_eq!(c2, a);

        // Mean preservation per coordinate at interior points.
        let b = ParameterVector::new(vec![0.6, 0.8]);
        for _ in 0..200 {
            let (c1, c2) = sbx_crossover(&a, &b, 8.0, &mut rng, &bounds);
            for j in 0..2 {
                let child_mean = 0.5 * (c1.values[j] + c2.values[j]);
                let parent_mean = 0.5 * (a.values[j] + b.values[j]);
                assert!((child_mean - parent_mean).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sbx_u_half_returns_parents() {
        // beta_q at u = 0.5 is exactly 1, so children equal parents.
        let (c1, c2) = {
            let a = [0.3];
            let b = [0.9];
            let eta = 8.0;
            let beta_q = (2.0f64 * 0.5).powf(1.0 / (eta + 1.0));
            (
                0.5 * ((1.0 + beta_q) * a[0] + (1.0 - beta_q) * b[0]),
                0.5 * ((1.0 - beta_q) * a[0] + (1.0 + beta_q) * b[0]),
            )
        };
        assert!((c1 - 0.3).abs() < 1e-15);
        assert!((c2 - 0.9).abs() < 1e-15);
    }

    #[test]
    fn mutation_identities_and_scale() {
        let bounds = vec![(0.0, 10.0)];
        let p = ParameterVector::new(vec![5.0]);
        let mut rng = derive_stream(4, &[]);
        assert_eq!(gaussian_mutate(&p, 0.0, &bounds, &mut rng), p);

        // Upper-bound coordinate stays at the bound for positive draws.
        let hi = ParameterVector::new(vec![10.0]);
        for _ in 0..100 {
            let m = gaussian_mutate(&hi, 0.2, &bounds, &mut rng);
            assert!(m.values[0] <= 10.0);
        }

        // Empirical stdev of the perturbation at an interior point is the
        // requested normalized stdev within 10%.
        let n = 10_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let m = gaussian_mutate(&p, 0.03, &bounds, &mut rng);
            let delta = (m.values[0] - 5.0) / 10.0;
            sum += delta;
            sumsq += delta * delta;
        }
        let var = sumsq / n as f64 - (sum / n as f64) * (sum / n as f64);
        let stdev = var.sqrt();
        assert!(
            (stdev - 0.03).abs() < 0.003,
            "empirical stdev {stdev} not within 10% of 0.03"
        );
    }

    #[test]
    fn surrogate_quadratic_recovers_optimum() {
        // Fitness |mu - 0.7|^2 realized through data: y = mu with observed
        // y = 0.7 makes the rollout MSE exactly (mu - 0.7)^2.
        let interp = toy_interp();
        let mut data = crate::state::Dataset::new(
            "toy",
            1,
            crate::state::ProjectionSpec {
                dims: vec![(
                    "y".into(),
                    crate::state::Extract::Scalar { field: "y".into() },
                )],
            },
        );
        data.push(crate::state::Trajectory {
            init: crate::state::SystemState::build(vec![(
                "y",
                crate::state::StateValue::Float(0.0),
            )]),
            steps: vec![(
                crate::state::Action::NONE,
                crate::state::SystemState::build(vec![(
                    "y",
                    crate::state::StateValue::Float(0.7),
                )]),
            )],
        });
        let settings = GaSettings {
            population: 40,
            generations: 10,
            mc_draws: 1,
            ..GaSettings::default()
        };
        let (best, history) = calibrate_es(&interp, &data, &settings, None, 12);
        assert!(
            (best.values[0] - 0.7).abs() <= 0.02,
            "best {} history {history:?}",
            best.values[0]
        );
    }

    #[test]
    fn zero_generations_returns_best_of_initial_population() {
        let interp = toy_interp();
        let data = {
            let mut d = crate::state::Dataset::new(
                "toy",
                1,
                crate::state::ProjectionSpec {
                    dims: vec![(
                        "y".into(),
                        crate::state::Extract::Scalar { field: "y".into() },
                    )],
                },
            );
            d.push(crate::state::Trajectory {
                init: crate::state::SystemState::build(vec![(
                    "y",
                    crate::state::StateValue::Float(0.0),
                )]),
                steps: vec![(
                    crate::state::Action::NONE,
                    crate::state::SystemState::build(vec![(
                        "y",
                        crate::state::StateValue::Float(0.7),
                    )]),
                )],
            });
            d
        };
        let settings = GaSettings {
            population: 10,
            generations: 0,
            mc_draws: 1,
            ..GaSettings::default()
        };
        let (_, history) = calibrate_es(&interp, &data, &settings, None, 5);
        assert_eq!(history.len(), 1);
        assert_eq!(history[0].generation, 0);
    }

    #[test]
    fn elitist_best_trace_is_nonincreasing_and_deterministic() {
        let env = EnvSpec::preset("sir").unwrap();
        let config = gt_config(&env);
        let interp = Interpreter::new(&config).unwrap();
        let data = generate_dataset(&env, 4, 8, &env.policy.clone(), 2);
        let settings = GaSettings {
            population: 16,
            generations: 5,
            mc_draws: 2,
            ..GaSettings::default()
        };
        let (best_a, hist_a) = calibrate_es(&interp, &data, &settings, None, 77);
        for w in hist_a.windows(2) {
            assert!(w[1].best <= w[0].best + 1e-12, "trace increased: {hist_a:?}");
        }
        let (best_b, hist_b) = calibrate_es(&interp, &data, &settings, None, 77);
        assert_eq!(best_a, best_b);
        assert_eq!(hist_a, hist_b);
        // All results inside bounds.
        for (v, (lo, hi)) in best_a.values.iter().zip(interp.bounds()) {
            assert!(v >= lo && v <= hi);
        }
    }

    #[test]
    fn warm_start_seeds_generation_zero() {
        let interp = toy_interp();
        let mut data = crate::state::Dataset::new(
            "toy",
            1,
            crate::state::ProjectionSpec {
                dims: vec![(
                    "y".into(),
                    crate::state::Extract::Scalar { field: "y".into() },
                )],
            },
        );
        data.push(crate::state::Trajectory {
            init: crate::state::SystemState::build(vec![(
                "y",
                crate::state::StateValue::Float(0.0),
            )]),
            steps: vec![(
                crate::state::Action::NONE,
                crate::state::SystemState::build(vec![(
                    "y",
                    crate::state::StateValue::Float(0.7),
                )]),
            )],
        });
        let settings = GaSettings {
            population: 8,
            generations: 3,
            mc_draws: 1,
            mutation_stdev: 0.3,
            ..GaSettings::default()
        };
        let warm = ParameterVector::new(vec![0.7]);
        let (_, history) = calibrate_es(&interp, &data, &settings, Some(&warm), 8);
        // Generation 0 already contains the optimum; elitism keeps it.
        assert!(history[0].best < 1e-20);
        for h in &history {
            assert!(h.best <= history[0].best + 1e-20);
        }
    }

    #[test]
    fn parallel_evaluation_matches_serial() {
        let env = EnvSpec::preset("sir").unwrap();
        let config = gt_config(&env);
        let interp = Interpreter::new(&config).unwrap();
        let data = generate_dataset(&env, 3, 6, &env.policy.clone(), 6);
        let pop: Vec<ParameterVector> = (0..12)
            .map(|i| ParameterVector::new(vec![0.1 * i as f64, 0.05 * i as f64]))
            .collect();
        let serial = evaluate_population(&interp, &pop, &data, 3, 42, false);
        let parallel = evaluate_population(&interp, &pop, &data, 3, 42, true);
        assert_eq!(serial, parallel);
    }
}
