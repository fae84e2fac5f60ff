//! Distribution distances, per-dimension errors, domain-violation counts,
//! structural-graph scores, and diagnostic reports.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::dsl::{DependencyGraph, Interpreter, ParameterVector};
use crate::envs::{EnvKind, EnvSpec, Transition};
use crate::error::StepError;
use crate::rng::{derive_stream, RngStream};
use crate::state::{observe, Dataset, StateValue, SystemState, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("sample sets have shapes {0}x{1} and {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("empty sample set")]
    Empty,
    #[error("bandwidth {0} must be positive")]
    BadBandwidth(f64),
    #[error("graphs have different node sets")]
    NodeSetMismatch,
    #[error("need at least {needed} samples, have {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("simulation failed: {0}")]
    Sim(String),
}

impl From<StepError> for MetricError {
    fn from(e: StepError) -> Self {
        MetricError::Sim(e.to_string())
    }
}

fn check_shape(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<(usize, usize), MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::Empty);
    }
    let d = a[0].len();
    if a.len() != b.len() || b[0].len() != d {
        return Err(MetricError::ShapeMismatch(a.len(), d, b.len(), b[0].len()));
    }
    Ok((a.len(), d))
}

/// Wasserstein-1 between two equal-size empirical sets: per dimension the
/// mean absolute difference of sorted columns, averaged across dimensions.
pub fn wasserstein1(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, MetricError> {
    let (n, d) = check_shape(a, b)?;
    if d == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut col_a = vec![0.0; n];
    let mut col_b = vec![0.0; n];
    for j in 0..d {
        for i in 0..n {
            col_a[i] = a[i][j];
            col_b[i] = b[i][j];
        }
        col_a.sort_by(|x, y| x.total_cmp(y));
        col_b.sort_by(|x, y| x.total_cmp(y));
        let sum: f64 = col_a.iter().zip(&col_b).map(|(x, y)| (x - y).abs()).sum();
        total += sum / n as f64;
    }
    Ok(total / d as f64)
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Median pairwise Euclidean distance over the pooled sample; 1.0 when the
/// pooled points are all identical.
pub fn median_heuristic_bandwidth(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let pooled: Vec<&Vec<f64>> = a.iter().chain(b.iter()).collect();
    let mut dists = Vec::new();
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|x, y| x.total_cmp(y));
    let median = dists[dists.len() / 2];
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

/// Bandwidth choice for the Gaussian kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    MedianHeuristic,
}

/// Biased (V-statistic) maximum mean discrepancy with the Gaussian kernel
/// `exp(-||x - y||^2 / (2 sigma^2))`, returned as its square root.
pub fn mmd_rbf(a: &[Vec<f64>], b: &[Vec<f64>], bandwidth: Bandwidth) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::Empty);
    }
    let sigma = match bandwidth {
        Bandwidth::Fixed(s) => {
            if s <= 0.0 || !s.is_finite() {
                return Err(MetricError::BadBandwidth(s));
            }
            s
        }
        Bandwidth::MedianHeuristic => median_heuristic_bandwidth(a, b),
    };
    let denom = 2.0 * sigma * sigma;
    let kernel_mean = |x: &[Vec<f64>], y: &[Vec<f64>]| -> f64 {
        let mut total = 0.0;
        for xi in x {
            for yj in y {
                total += (-sq_dist(xi, yj) / denom).exp();
            }
        }
        total / (x.len() * y.len()) as f64
    };
    let mmd_sq = kernel_mean(a, a) + kernel_mean(b, b) - 2.0 * kernel_mean(a, b);
    Ok(mmd_sq.max(0.0).sqrt())
}

/// Mean squared error per observation dimension across matched rows.
pub fn mse_per_dim(predicted: &[Vec<f64>], observed: &[Vec<f64>]) -> Result<Vec<f64>, MetricError> {
    let (n, d) = check_shape(predicted, observed)?;
    let mut out = vec![0.0; d];
    for (p, o) in predicted.iter().zip(observed) {
        for j in 0..d {
            let e = p[j] - o[j];
            out[j] += e * e;
        }
    }
    for v in &mut out {
        *v /= n as f64;
    }
    Ok(out)
}

/// Whether the two sides of a comparison share their sample streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamMode {
    /// Both simulators draw from identical derived streams.
    Matched,
    /// Each side draws from its own lane.
    Independent,
}

/// The next-state evaluation protocol: from each test trajectory's initial
/// state (with its logged first action), draw `n_samples` one-step samples
/// from both simulators, project them, take the Wasserstein-1 distance
/// between the two clouds, and average over initial states.
pub fn next_state_distance(
    sim_a: &dyn Transition,
    sim_b: &dyn Transition,
    test_set: &Dataset,
    n_samples: usize,
    seed: u64,
    mode: StreamMode,
) -> Result<f64, MetricError> {
    if test_set.is_empty() || n_samples == 0 {
        return Err(MetricError::Empty);
    }
    let root = derive_stream(seed, &[]);
    let lane_a = root.child(0);
    let lane_b = match mode {
        StreamMode::Matched => root.child(0),
        StreamMode::Independent => root.child(1),
    };
    let projection = &test_set.projection;
    let distances: Result<Vec<f64>, MetricError> = test_set
        .trajectories
        .par_iter()
        .enumerate()
        .map(|(idx, traj)| {
            let action = traj
                .steps
                .first()
                .map(|(a, _)| *a)
                .unwrap_or(crate::state::Action::NONE);
            let draw_cloud = |sim: &dyn Transition, lane: &RngStream| {
                let state_stream = lane.child(idx as u32);
                (0..n_samples)
                    .map(|i| {
                        let sample_stream = state_stream.child(i as u32).child(0);
                        let next = sim.step(&traj.init, action, 0, &sample_stream)?;
                        observe(&next, projection).map_err(StepError::Schema)
                    })
                    .collect::<Result<Vec<Vec<f64>>, StepError>>()
            };
            let cloud_a = draw_cloud(sim_a, &lane_a)?;
            let cloud_b = draw_cloud(sim_b, &lane_b)?;
            wasserstein1(&cloud_a, &cloud_b)
        })
        .collect();
    let distances = distances?;
    Ok(distances.iter().sum::<f64>() / distances.len() as f64)
}

/// Count of domain-rule breaches over a trajectory: negative counts,
/// occupancy above capacity, population-sum drift, and overflow-counter
/// decreases. Each offending check counts once per step.
pub fn domain_violations(trajectory: &Trajectory, env: &EnvSpec) -> usize {
    let mut violations = 0;
    let negative_counts = |s: &SystemState| -> usize {
        s.values()
            .iter()
            .filter(|v| matches!(v, StateValue::Int(x) if *x < 0))
            .count()
    };
    match env.kind {
        EnvKind::Sir => {
            let total = |s: &SystemState| {
                s.get("S").and_then(StateValue::as_int).unwrap_or(0)
                    + s.get("I").and_then(StateValue::as_int).unwrap_or(0)
                    + s.get("R").and_then(StateValue::as_int).unwrap_or(0)
            };
            let mut prev = total(&trajectory.init);
            for s in trajectory.next_states() {
                violations += negative_counts(s);
                let now = total(s);
                if now != prev {
                    violations += 1;
                }
                prev = now;
            }
        }
        EnvKind::Supply => {
            for s in trajectory.next_states() {
                violations += negative_counts(s);
            }
        }
        EnvKind::Hospital => {
            let icu_cap = env.param("icu_capacity").unwrap_or(f64::INFINITY);
            let std_cap = env.param("standard_capacity").unwrap_or(f64::INFINITY);
            let mut prev_overflow = 0;
            for s in trajectory.next_states() {
                violations += negative_counts(s);
                let icu = s
                    .get("icu_occupancy")
                    .and_then(StateValue::as_int)
                    .unwrap_or(0);
                let std_ = s
                    .get("standard_occupancy")
                    .and_then(StateValue::as_int)
                    .unwrap_or(0);
                if icu as f64 > icu_cap {
                    violations += 1;
                }
                if std_ as f64 > std_cap {
                    violations += 1;
                }
                let overflow = s.get("overflow").and_then(StateValue::as_int).unwrap_or(0);
                if overflow < prev_overflow {
                    violations += 1;
                }
                prev_overflow = overflow;
            }
        }
    }
    violations
}

/// Structural Hamming distance and directed-edge F1 between dependency
/// graphs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphScore {
    pub shd: usize,
    pub f1: f64,
}

/// SHD counts edge insertions, deletions, and reversals (a reversal is one
/// edit); F1 is percentage-scaled, with 100 for two empty graphs.
pub fn shd_f1(
    predicted: &DependencyGraph,
    truth: &DependencyGraph,
) -> Result<GraphScore, MetricError> {
    if predicted.nodes.len() != truth.nodes.len() {
        return Err(MetricError::NodeSetMismatch);
    }
    // Align by node name so consistent relabeling is harmless.
    let mut order: Vec<usize> = Vec::with_capacity(truth.nodes.len());
    for name in &truth.nodes {
        match predicted.nodes.iter().position(|n| n == name) {
            Some(i) => order.push(i),
            None => return Err(MetricError::NodeSetMismatch),
        }
    }
    let n = truth.nodes.len();
    let pred_edge = |i: usize, j: usize| predicted.edge(order[i], order[j]);
    let mut missing_or_extra = 0usize;
    let mut reversals = 0usize;
    let mut true_edges = 0usize;
    let mut pred_edges = 0usize;
    let mut hits = 0usize;
    for i in 0..n {
        for j in 0..n {
            let t = truth.edge(i, j);
            let p = pred_edge(i, j);
            true_edges += usize::from(t);
            pred_edges += usize::from(p);
            hits += usize::from(t && p);
            missing_or_extra += usize::from(t != p);
            if i < j {
                let reversed = (truth.edge(i, j) && !truth.edge(j, i) && !pred_edge(i, j) && pred_edge(j, i))
                    || (truth.edge(j, i) && !truth.edge(i, j) && !pred_edge(j, i) && pred_edge(i, j));
                reversals += usize::from(reversed);
            }
        }
    }
    let shd = missing_or_extra - reversals;
    let f1 = if true_edges == 0 && pred_edges == 0 {
        100.0
    } else if hits == 0 {
        0.0
    } else {
        let precision = hits as f64 / pred_edges as f64;
        let recall = hits as f64 / true_edges as f64;
        100.0 * 2.0 * precision * recall / (precision + recall)
    };
    Ok(GraphScore { shd, f1 })
}

/// Weights and knobs for assembling a diagnostic report.
#[derive(Debug, Clone)]
pub struct DiagnosticConfig {
    pub w_predictive: f64,
    pub w_mse: f64,
    pub w_mmd: f64,
    pub w_domain: f64,
    /// Monte-Carlo rollouts per validation trajectory.
    pub mc_draws: usize,
    /// Per-parameter posterior variance thresholds for calibration flags;
    /// when unset, half the prior variance is used.
    pub variance_tau: Option<Vec<f64>>,
    /// Independent trials for seed-averaged evaluations.
    pub trials: usize,
}

impl Default for DiagnosticConfig {
    fn default() -> Self {
        DiagnosticConfig {
            w_predictive: 1.0,
            w_mse: 0.0,
            w_mmd: 0.0,
            w_domain: 0.0,
            mc_draws: 100,
            variance_tau: None,
            trials: 5,
        }
    }
}

impl DiagnosticConfig {
    pub fn has_positive_weight(&self) -> bool {
        self.w_predictive > 0.0 || self.w_mse > 0.0 || self.w_mmd > 0.0 || self.w_domain > 0.0
    }
}

/// Validation diagnostics for one calibrated candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticReport {
    pub wasserstein: f64,
    pub mse_per_dim: Vec<(String, f64)>,
    pub mmd: f64,
    pub violations: usize,
    pub fitted: ParameterVector,
    pub param_names: Vec<String>,
    pub notes: String,
}

impl DiagnosticReport {
    /// Weighted aggregate score; with only the predictive weight positive
    /// this equals the Wasserstein component.
    pub fn aggregate(&self, config: &DiagnosticConfig) -> f64 {
        let mse_mean = if self.mse_per_dim.is_empty() {
            0.0
        } else {
            self.mse_per_dim.iter().map(|(_, v)| v).sum::<f64>() / self.mse_per_dim.len() as f64
        };
        config.w_predictive * self.wasserstein
            + config.w_mse * mse_mean
            + config.w_mmd * self.mmd
            + config.w_domain * self.violations as f64
    }

    /// Flat `key value` text block.
    pub fn to_kv_block(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "wass {}", self.wasserstein);
        for (name, v) in &self.mse_per_dim {
            let _ = writeln!(out, "mse.{name} {v}");
        }
        let _ = writeln!(out, "mmd {}", self.mmd);
        let _ = writeln!(out, "violations {}", self.violations);
        for (name, v) in self.param_names.iter().zip(&self.fitted.values) {
            let _ = writeln!(out, "param.{name} {v}");
        }
        out
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["wass".to_string()];
        cols.extend(self.mse_per_dim.iter().map(|(n, _)| format!("mse.{n}")));
        cols.push("mmd".into());
        cols.push("violations".into());
        cols.extend(self.param_names.iter().map(|n| format!("param.{n}")));
        cols.join(",")
    }

    pub fn to_csv_row(&self) -> String {
        let mut cols = vec![format!("{}", self.wasserstein)];
        cols.extend(self.mse_per_dim.iter().map(|(_, v)| format!("{v}")));
        cols.push(format!("{}", self.mmd));
        cols.push(format!("{}", self.violations));
        cols.extend(self.fitted.values.iter().map(|v| format!("{v}")));
        cols.join(",")
    }
}

/// Runs diagnostics for a calibrated candidate against a validation split:
/// Monte-Carlo mean rollouts against observed trajectories for
/// per-dimension MSE, pooled per-dimension Wasserstein-1 and MMD across
/// matched steps, and domain-violation counting on sampled rollouts.
pub fn diagnose(
    interp: &Interpreter,
    params: &ParameterVector,
    val_set: &Dataset,
    env: &EnvSpec,
    config: &DiagnosticConfig,
    seed: u64,
) -> Result<DiagnosticReport, MetricError> {
    if val_set.is_empty() {
        return Err(MetricError::Empty);
    }
    let mc = config.mc_draws.max(1);
    let root = derive_stream(seed, &[]);
    let projection = &val_set.projection;
    let dim_names = projection.dim_names();

    struct PerTraj {
        mean_obs: Vec<Vec<f64>>,
        observed: Vec<Vec<f64>>,
        violations: usize,
    }

    let per_traj: Result<Vec<PerTraj>, MetricError> = val_set
        .trajectories
        .par_iter()
        .enumerate()
        .map(|(idx, traj)| {
            let init = interp
                .conform(&traj.init)
                .map_err(|e| MetricError::Sim(e.to_string()))?;
            let actions: Vec<_> = traj.steps.iter().map(|(a, _)| *a).collect();
            let traj_stream = root.child(idx as u32);
            let horizon = actions.len();
            let d = projection.arity();
            let mut acc = vec![vec![0.0; d]; horizon];
            let mut violations = 0usize;
            for m in 0..mc {
                let stream = traj_stream.child(m as u32);
                if m == 0 {
                    // Violations are counted on one full sampled rollout.
                    let rolled = interp.rollout(params.as_slice(), &init, &actions, &stream)?;
                    violations = domain_violations(&rolled, env);
                    for (t, (_, s)) in rolled.steps.iter().enumerate() {
                        let row = observe(s, projection).map_err(StepError::Schema)?;
                        for j in 0..d {
                            acc[t][j] += row[j];
                        }
                    }
                } else {
                    let rows = interp.rollout_observed(
                        params.as_slice(),
                        &init,
                        &actions,
                        projection,
                        &stream,
                    )?;
                    for (t, row) in rows.iter().enumerate() {
                        for j in 0..d {
                            acc[t][j] += row[j];
                        }
                    }
                }
            }
            for row in &mut acc {
                for v in row.iter_mut() {
                    *v /= mc as f64;
                }
            }
            let observed = traj
                .observations(projection)
                .map_err(|e| MetricError::Sim(e.to_string()))?;
            Ok(PerTraj {
                mean_obs: acc,
                observed,
                violations,
            })
        })
        .collect();
    let per_traj = per_traj?;

    let mut pooled_pred: Vec<Vec<f64>> = Vec::new();
    let mut pooled_obs: Vec<Vec<f64>> = Vec::new();
    let mut violations = 0usize;
    for pt in &per_traj {
        pooled_pred.extend(pt.mean_obs.iter().cloned());
        pooled_obs.extend(pt.observed.iter().cloned());
        violations += pt.violations;
    }
    let wasserstein = wasserstein1(&pooled_pred, &pooled_obs)?;
    let mmd = mmd_rbf(&pooled_pred, &pooled_obs, Bandwidth::MedianHeuristic)?;
    let mse = mse_per_dim(&pooled_pred, &pooled_obs)?;

    Ok(DiagnosticReport {
        wasserstein,
        mse_per_dim: dim_names.into_iter().zip(mse).collect(),
        mmd,
        violations,
        fitted: params.clone(),
        param_names: interp.config().param_names(),
        notes: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_config;
    use crate::envs::{generate_dataset, gt_config, Model};

    fn rows(vals: &[&[f64]]) -> Vec<Vec<f64>> {
        vals.iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn w1_identity_and_shift() {
        let a = rows(&[&[0.0], &[1.0], &[2.0]]);
        assert_eq!(wasserstein1(&a, &a).unwrap(), 0.0);
        let b = rows(&[&[1.0], &[2.0], &[3.0]]);
        assert_eq!(wasserstein1(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn w1_two_dim_shift_mean() {
        // Oracle: per-dimension sorted difference, then mean across dims.
        let a = rows(&[&[0.0, 0.0], &[1.0, 1.0], &[2.0, 2.0]]);
        let b = rows(&[&[1.0, 3.0], &[2.0, 4.0], &[3.0, 5.0]]);
        assert_eq!(wasserstein1(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn w1_shape_mismatch() {
        let a = rows(&[&[0.0]]);
        let b = rows(&[&[0.0], &[1.0]]);
        assert!(matches!(
            wasserstein1(&a, &b),
            Err(MetricError::ShapeMismatch(..))
        ));
    }

    #[test]
    fn w1_metric_axioms_spot_check() {
        let mut s = derive_stream(5, &[]);
        for _ in 0..50 {
            let draw = |s: &mut RngStream| {
                (0..8)
                    .map(|_| vec![(s.uniform01() * 10.0).round()])
                    .collect::<Vec<_>>()
            };
            let x = draw(&mut s);
            let y = draw(&mut s);
            let z = draw(&mut s);
            let dxy = wasserstein1(&x, &y).unwrap();
            let dyx = wasserstein1(&y, &x).unwrap();
            assert!((dxy - dyx).abs() < 1e-12);
            assert!(dxy >= 0.0);
            let dxz = wasserstein1(&x, &z).unwrap();
            let dzy = wasserstein1(&z, &y).unwrap();
            assert!(dxy <= dxz + dzy + 1e-12, "triangle violated");
            // Equal multisets in any order have zero distance.
            let mut xr = x.clone();
            xr.reverse();
            assert!(wasserstein1(&x, &xr).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn mmd_identity_symmetry_and_known_value() {
        let a = rows(&[&[0.0], &[1.0]]);
        assert!(mmd_rbf(&a, &a, Bandwidth::MedianHeuristic).unwrap() < 1e-12);
        let x = rows(&[&[0.0]]);
        let y = rows(&[&[10.0]]);
        let got = mmd_rbf(&x, &y, Bandwidth::Fixed(1.0)).unwrap();
        let expected = (2.0 - 2.0 * (-50.0f64).exp()).sqrt();
        assert!((got - expected).abs() < 1e-9, "got {got}");
        let b = rows(&[&[3.0], &[4.0], &[7.0]]);
        let ab = mmd_rbf(&a, &b, Bandwidth::Fixed(2.0)).unwrap();
        let ba = mmd_rbf(&b, &a, Bandwidth::Fixed(2.0)).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(mmd_rbf(&a, &b, Bandwidth::Fixed(0.0)).is_err());
    }

    #[test]
    fn mse_per_dim_direct() {
        let p = rows(&[&[1.0, 2.0]]);
        let o = rows(&[&[1.0, 4.0]]);
        assert_eq!(mse_per_dim(&p, &o).unwrap(), vec![0.0, 4.0]);
        assert_eq!(mse_per_dim(&p, &p).unwrap(), vec![0.0, 0.0]);
        // Doubling each error quadruples each component.
        let o2 = rows(&[&[1.0, 6.0]]);
        assert_eq!(mse_per_dim(&p, &o2).unwrap(), vec![0.0, 16.0]);
    }

    #[test]
    fn shd_f1_examples() {
        let mk = |edges: &[(&str, &str)]| {
            let mut g = DependencyGraph::empty(vec!["A".into(), "B".into(), "C".into()]);
            for (s, d) in edges {
                let si = g.nodes.iter().position(|n| n == s).unwrap();
                let di = g.nodes.iter().position(|n| n == d).unwrap();
                g.set_edge(si, di);
            }
            g
        };
        let truth = mk(&[("A", "B"), ("B", "C")]);
        let same = shd_f1(&truth, &truth).unwrap();
        assert_eq!(same.shd, 0);
        assert_eq!(same.f1, 100.0);

        let extra = mk(&[("A", "B"), ("B", "C"), ("A", "C")]);
        let s = shd_f1(&extra, &truth).unwrap();
        assert_eq!(s.shd, 1);
        assert!((s.f1 - 80.0).abs() < 1e-12);

        let empty = mk(&[]);
        let s = shd_f1(&empty, &truth).unwrap();
        assert_eq!(s.shd, 2);
        assert_eq!(s.f1, 0.0);
        assert_eq!(shd_f1(&empty, &empty).unwrap().f1, 100.0);

        // One reversal is one edit.
        let rev = mk(&[("B", "A"), ("B", "C")]);
        assert_eq!(shd_f1(&rev, &truth).unwrap().shd, 1);
    }

    #[test]
    fn shd_f1_is_relabel_invariant() {
        let mut g1 = DependencyGraph::empty(vec!["A".into(), "B".into()]);
        g1.set_edge(0, 1);
        let mut g2 = DependencyGraph::empty(vec!["B".into(), "A".into()]);
        g2.set_edge(1, 0); // A -> B under the permuted labels
        let s = shd_f1(&g2, &g1).unwrap();
        assert_eq!(s.shd, 0);
        assert_eq!(s.f1, 100.0);
        let g3 = DependencyGraph::empty(vec!["A".into(), "X".into()]);
        assert!(shd_f1(&g3, &g1).is_err());
    }

    #[test]
    fn domain_violations_cases() {
        let env = EnvSpec::preset("supply").unwrap();
        let good = generate_dataset(&env, 1, 20, &env.policy.clone(), 3);
        assert_eq!(domain_violations(&good.trajectories[0], &env), 0);

        // Hand-built breach: negative inventory in one step.
        let bad_state = SystemState::build(vec![
            ("inventory", StateValue::Int(-1)),
            ("pipeline", StateValue::Pipeline(vec![])),
            ("backlog", StateValue::Int(0)),
            ("t", StateValue::Int(1)),
        ]);
        let traj = Trajectory {
            init: good.trajectories[0].init.clone(),
            steps: vec![(crate::state::Action::some(0), bad_state)],
        };
        assert_eq!(domain_violations(&traj, &env), 1);

        // Two breaches in one step count twice.
        let bad2 = SystemState::build(vec![
            ("inventory", StateValue::Int(-1)),
            ("pipeline", StateValue::Pipeline(vec![])),
            ("backlog", StateValue::Int(-2)),
            ("t", StateValue::Int(1)),
        ]);
        let traj2 = Trajectory {
            init: good.trajectories[0].init.clone(),
            steps: vec![(crate::state::Action::some(0), bad2)],
        };
        assert_eq!(domain_violations(&traj2, &env), 2);

        // SIR sum drift.
        let sir_env = EnvSpec::preset("sir").unwrap();
        let drift = Trajectory {
            init: SystemState::build(vec![
                ("S", StateValue::Int(10)),
                ("I", StateValue::Int(0)),
                ("R", StateValue::Int(0)),
            ]),
            steps: vec![(
                crate::state::Action::NONE,
                SystemState::build(vec![
                    ("S", StateValue::Int(9)),
                    ("I", StateValue::Int(0)),
                    ("R", StateValue::Int(0)),
                ]),
            )],
        };
        assert_eq!(domain_violations(&drift, &sir_env), 1);
    }

    #[test]
    fn nsd_matched_streams_give_zero() {
        let env = EnvSpec::preset("sir").unwrap();
        let sim = Model::hand_coded(&env).transition(&[]).unwrap();
        let data = generate_dataset(&env, 5, 3, &env.policy.clone(), 9);
        let d = next_state_distance(sim.as_ref(), sim.as_ref(), &data, 50, 1, StreamMode::Matched)
            .unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn nsd_constant_shift_is_shift_over_dims() {
        // sim_b = sim_a with +c on one observation dimension, matched
        // streams: the distance is exactly c / d.
        struct Shifted<'a> {
            inner: &'a dyn Transition,
        }
        impl Transition for Shifted<'_> {
            fn step(
                &self,
                state: &SystemState,
                action: crate::state::Action,
                t: usize,
                stream: &RngStream,
            ) -> Result<SystemState, StepError> {
                let next = self.inner.step(state, action, t, stream)?;
                let shifted: Vec<(&str, StateValue)> = next
                    .schema()
                    .fields
                    .iter()
                    .zip(next.values())
                    .map(|((name, _), v)| {
                        let v = if name == "I" {
                            StateValue::Int(v.as_int().unwrap() + 6)
                        } else {
                            v.clone()
                        };
                        (name.as_str(), v)
                    })
                    .collect();
                Ok(SystemState::build(shifted))
            }
        }
        let env = EnvSpec::preset("sir").unwrap();
        let sim = Model::hand_coded(&env).transition(&[]).unwrap();
        let shifted = Shifted { inner: sim.as_ref() };
        let data = generate_dataset(&env, 4, 2, &env.policy.clone(), 10);
        let d = next_state_distance(sim.as_ref(), &shifted, &data, 40, 2, StreamMode::Matched)
            .unwrap();
        assert!((d - 6.0 / 3.0).abs() < 1e-12, "got {d}");
    }

    #[test]
    fn diagnose_fills_report_and_degenerate_weights() {
        let env = EnvSpec::preset("sir").unwrap();
        let config = gt_config(&env);
        let interp = Interpreter::new(&config).unwrap();
        let data = generate_dataset(&env, 6, 10, &env.policy.clone(), 21);
        let diag_config = DiagnosticConfig {
            mc_draws: 20,
            ..DiagnosticConfig::default()
        };
        let report = diagnose(&interp, &config.defaults(), &data, &env, &diag_config, 7).unwrap();
        assert_eq!(report.mse_per_dim.len(), 3);
        assert_eq!(report.violations, 0);
        assert!(report.wasserstein >= 0.0);
        // All weights zero except predictive: aggregate == wasserstein.
        assert_eq!(report.aggregate(&diag_config), report.wasserstein);
        let kv = report.to_kv_block();
        assert!(kv.contains("wass "));
        assert!(kv.contains("mse.S "));
        assert!(kv.contains("param.beta "));
        assert_eq!(
            report.csv_header().split(',').count(),
            report.to_csv_row().split(',').count()
        );
    }

    #[test]
    fn diagnose_prefers_truth_over_far_params() {
        let env = EnvSpec::preset("sir").unwrap();
        let config = gt_config(&env);
        let interp = Interpreter::new(&config).unwrap();
        let data = generate_dataset(&env, 10, 20, &env.policy.clone(), 33);
        let diag_config = DiagnosticConfig {
            mc_draws: 30,
            ..DiagnosticConfig::default()
        };
        let mut wins = 0;
        for seed in 0..5 {
            let good =
                diagnose(&interp, &config.defaults(), &data, &env, &diag_config, seed).unwrap();
            let far = diagnose(
                &interp,
                &ParameterVector::new(vec![2.0, 1.0]),
                &data,
                &env,
                &diag_config,
                seed,
            )
            .unwrap();
            if good.wasserstein < far.wasserstein {
                wins += 1;
            }
        }
        assert!(wins >= 4, "truth won only {wins}/5 seeds");
    }

    #[test]
    fn diagnose_needs_schema_compatible_config() {
        let env = EnvSpec::preset("sir").unwrap();
        let text = "config bad { params { } state { X : int = 0; } rules { } }";
        let interp = Interpreter::new(&parse_config(text).unwrap()).unwrap();
        let data = generate_dataset(&env, 2, 4, &env.policy.clone(), 3);
        let err = diagnose(
            &interp,
            &ParameterVector::new(vec![]),
            &data,
            &env,
            &DiagnosticConfig::default(),
            1,
        )
        .unwrap_err();
        assert!(matches!(err, MetricError::Sim(_)));
    }
}
