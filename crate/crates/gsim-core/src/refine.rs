//! The iterative refinement loop: propose, calibrate, diagnose, feed
//! back, repeat; with history, best-candidate selection, ablation modes,
//! and early stopping.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dsl::{print_config, validate_for_env, Interpreter, ParameterVector};
use crate::envs::EnvSpec;
use crate::gfo::{calibrate_es, GaSettings};
use crate::llm::{
    build_prompt, extract_config, HistoryDigestEntry, PromptContext, ProposalProvider,
};
use crate::metrics::{diagnose, DiagnosticConfig, DiagnosticReport};
use crate::rng::derive_stream;
use crate::sbi::{run_sbi, SbiSettings};
use crate::state::Dataset;

/// Which calibration pathway runs inside each iteration.
#[derive(Debug, Clone)]
pub enum Calibrator {
    Es(GaSettings),
    Sbi(SbiSettings),
    None,
}

/// Loop ablation modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopMode {
    /// The feedback loop with calibration each iteration.
    Full,
    /// One proposal, declared defaults as parameters.
    ZeroShot,
    /// One proposal with calibration, no refinement.
    ZeroShotOptim,
}

#[derive(Debug, Clone)]
pub struct LoopSettings {
    pub max_iterations: usize,
    pub patience: usize,
    pub calibrator: Calibrator,
    pub mode: LoopMode,
    /// History entries rendered into prompts.
    pub top_k: usize,
    /// Corrective re-prompts allowed per iteration when a proposal cannot
    /// be parsed or validated.
    pub corrective_rounds: usize,
}

impl Default for LoopSettings {
    fn default() -> Self {
        LoopSettings {
            max_iterations: 5,
            patience: 3,
            calibrator: Calibrator::Es(GaSettings::default()),
            mode: LoopMode::Full,
            top_k: 2,
            corrective_rounds: 3,
        }
    }
}

/// One completed iteration.
#[derive(Debug, Clone)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub config_text: String,
    pub params: ParameterVector,
    pub report: DiagnosticReport,
    pub feedback: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopReason {
    Budget,
    EarlyStop,
    ProviderError(String),
}

impl StopReason {
    fn label(&self) -> String {
        match self {
            StopReason::Budget => "budget".into(),
            StopReason::EarlyStop => "early-stop".into(),
            StopReason::ProviderError(e) => format!("provider-error: {e}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoopResult {
    pub history: Vec<HistoryEntry>,
    pub stop: StopReason,
}

impl LoopResult {
    /// The entry with the lowest validation Wasserstein; earliest wins
    /// ties.
    pub fn best(&self) -> Option<&HistoryEntry> {
        self.history.iter().min_by(|a, b| {
            a.report
                .wasserstein
                .total_cmp(&b.report.wasserstein)
                .then(a.iteration.cmp(&b.iteration))
        })
    }
}

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("train or validation split is empty")]
    EmptySplit,
    #[error("io error: {0}")]
    Io(String),
}

/// The datasets and environment binding one loop runs against.
#[derive(Debug, Clone)]
pub struct LoopTask {
    pub env: EnvSpec,
    pub train: Dataset,
    pub val: Dataset,
}

fn sig3(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (2 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Renders the diagnostic feedback text for one entry: overall validation
/// Wasserstein (3 significant digits), every dimension's MSE by name, the
/// optimized parameters, and the violation count when nonzero.
pub fn synthesize_feedback(report: &DiagnosticReport) -> String {
    let mses: Vec<String> = report
        .mse_per_dim
        .iter()
        .map(|(name, v)| format!("{name} val MSE loss: {}", sig3(*v)))
        .collect();
    let params: Vec<String> = report
        .param_names
        .iter()
        .zip(&report.fitted.values)
        .map(|(n, v)| format!("{n}={v}"))
        .collect();
    let mut out = format!(
        "Val Wasserstein Loss: {} (Where the val MSE loss per dimension is {})\nOptimized parameters: {}\n",
        sig3(report.wasserstein),
        mses.join(", "),
        params.join(", ")
    );
    if report.violations > 0 {
        out.push_str(&format!("Domain violations: {}.\n", report.violations));
    }
    out
}

/// True iff the best-so-far score has not strictly improved over the last
/// `patience` completed iterations.
pub fn early_stop(scores: &[f64], patience: usize) -> bool {
    let n = scores.len();
    if patience == 0 || n < patience + 1 {
        return false;
    }
    let best_before = scores[..n - patience]
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let best_recent = scores[n - patience..]
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    best_recent >= best_before
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<(), LoopError> {
    fs::write(dir.join(name), content).map_err(|e| LoopError::Io(e.to_string()))
}

fn entry_files(entry: &HistoryEntry) -> Vec<(String, String)> {
    let tag = format!("iter_{:03}", entry.iteration);
    let mut params_csv = String::from("name,value\n");
    for (n, v) in entry.report.param_names.iter().zip(&entry.params.values) {
        params_csv.push_str(&format!("{n},{v}\n"));
    }
    vec![
        (format!("{tag}.config.txt"), entry.config_text.clone()),
        (format!("{tag}.params.csv"), params_csv),
        (
            format!("{tag}.diag.csv"),
            format!("{}\n{}\n", entry.report.csv_header(), entry.report.to_csv_row()),
        ),
        (format!("{tag}.feedback.txt"), entry.feedback.clone()),
    ]
}

fn write_entry(dir: &Path, entry: &HistoryEntry) -> Result<(), LoopError> {
    for (name, content) in entry_files(entry) {
        write_file(dir, &name, &content)?;
    }
    Ok(())
}

fn write_summary(dir: &Path, result: &LoopResult) -> Result<(), LoopError> {
    let mut summary = String::from("iteration,wass,mmd,violations\n");
    for e in &result.history {
        summary.push_str(&format!(
            "{},{},{},{}\n",
            e.iteration, e.report.wasserstein, e.report.mmd, e.report.violations
        ));
    }
    write_file(dir, "summary.csv", &summary)?;
    let best = result
        .best()
        .map(|e| e.iteration.to_string())
        .unwrap_or_else(|| "none".into());
    write_file(
        dir,
        "result.txt",
        &format!("stop_reason {}\nbest_iteration {}\n", result.stop.label(), best),
    )
}

/// Reloads completed iterations from a run directory, in order.
pub fn load_history(dir: &Path) -> Result<Vec<HistoryEntry>, LoopError> {
    let mut history = Vec::new();
    for g in 0.. {
        let tag = format!("iter_{g:03}");
        let config_path = dir.join(format!("{tag}.config.txt"));
        if !config_path.exists() {
            break;
        }
        let read = |name: String| -> Result<String, LoopError> {
            fs::read_to_string(dir.join(name)).map_err(|e| LoopError::Io(e.to_string()))
        };
        let config_text = read(format!("{tag}.config.txt"))?;
        let feedback = read(format!("{tag}.feedback.txt"))?;
        let diag = read(format!("{tag}.diag.csv"))?;
        let mut lines = diag.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
        let row: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
        let mut wasserstein = 0.0;
        let mut mmd = 0.0;
        let mut violations = 0;
        let mut mse_per_dim = Vec::new();
        let mut param_names = Vec::new();
        let mut values = Vec::new();
        for (key, value) in header.iter().zip(&row) {
            if *key == "wass" {
                wasserstein = value.parse().unwrap_or(0.0);
            } else if *key == "mmd" {
                mmd = value.parse().unwrap_or(0.0);
            } else if *key == "violations" {
                violations = value.parse().unwrap_or(0);
            } else if let Some(dim) = key.strip_prefix("mse.") {
                mse_per_dim.push((dim.to_string(), value.parse().unwrap_or(0.0)));
            } else if let Some(name) = key.strip_prefix("param.") {
                param_names.push(name.to_string());
                values.push(value.parse().unwrap_or(0.0));
            }
        }
        history.push(HistoryEntry {
            iteration: g,
            config_text,
            params: ParameterVector::new(values.clone()),
            report: DiagnosticReport {
                wasserstein,
                mse_per_dim,
                mmd,
                violations,
                fitted: ParameterVector::new(values),
                param_names,
                notes: String::new(),
            },
            feedback,
        });
    }
    Ok(history)
}

/// FNV-1a digest over the sorted (name, contents) pairs of a directory;
/// used to check byte-stable reproducibility of run directories.
pub fn run_dir_digest(dir: &Path) -> Result<u64, LoopError> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| LoopError::Io(e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    names.sort();
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut absorb = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for path in names {
        absorb(path.file_name().unwrap().to_string_lossy().as_bytes());
        absorb(&fs::read(&path).map_err(|e| LoopError::Io(e.to_string()))?);
    }
    Ok(hash)
}

/// Executes the refinement loop. Modes `ZeroShot` and `ZeroShotOptim` run
/// exactly one iteration (without and with calibration); `Full` runs up to
/// `max_iterations` with feedback and early stopping. When `run_dir` is
/// given, per-iteration artifacts are written there and completed
/// iterations found there are reused.
pub fn run_loop(
    task: &LoopTask,
    provider: &mut dyn ProposalProvider,
    settings: &LoopSettings,
    diag_config: &DiagnosticConfig,
    run_dir: Option<&Path>,
    seed: u64,
) -> Result<LoopResult, LoopError> {
    if task.train.is_empty() || task.val.is_empty() {
        return Err(LoopError::EmptySplit);
    }
    if let Some(dir) = run_dir {
        fs::create_dir_all(dir).map_err(|e| LoopError::Io(e.to_string()))?;
    }
    let total = match settings.mode {
        LoopMode::Full => settings.max_iterations.max(1),
        LoopMode::ZeroShot | LoopMode::ZeroShotOptim => 1,
    };
    let root = derive_stream(seed, &[]);
    let diag_seed = root.derive_seed(0xD1A6);

    let mut history: Vec<HistoryEntry> = match run_dir {
        Some(dir) => load_history(dir)?,
        None => Vec::new(),
    };
    let mut stop = StopReason::Budget;

    let mut g = history.len();
    while g < total {
        let digests: Vec<HistoryDigestEntry> = history
            .iter()
            .map(|e| HistoryDigestEntry {
                iteration: e.iteration,
                wasserstein: e.report.wasserstein,
                mse_per_dim: e.report.mse_per_dim.clone(),
                params: e
                    .report
                    .param_names
                    .iter()
                    .cloned()
                    .zip(e.params.values.iter().cloned())
                    .collect(),
                config_text: e.config_text.clone(),
            })
            .collect();
        let feedback = history.last().map(|e| e.feedback.clone()).unwrap_or_default();
        let prompt = build_prompt(&task.env, &digests, &feedback, settings.top_k, g, total);

        // Proposal with corrective re-prompts on unusable output.
        let mut attempt = 0;
        let mut last_error = String::new();
        let config = loop {
            let effective: PromptContext = if attempt == 0 {
                prompt.clone()
            } else {
                let mut p = prompt.clone();
                p.feedback = format!(
                    "{}\nYour previous response could not be used: {last_error}\nAnswer again with one complete, valid configuration in a fenced code block.",
                    p.feedback
                );
                p
            };
            let raw = match provider.propose(&effective) {
                Ok(raw) => raw,
                Err(e) => {
                    stop = StopReason::ProviderError(e.to_string());
                    let result = LoopResult { history, stop };
                    if let Some(dir) = run_dir {
                        write_summary(dir, &result)?;
                    }
                    return Ok(result);
                }
            };
            match extract_config(&raw).map_err(|e| e.to_string()).and_then(|c| {
                let report = validate_for_env(&c, task.env.has_action());
                if report.ok() {
                    Ok(c)
                } else {
                    Err(format!("validation failed: {report}"))
                }
            }) {
                Ok(config) => break config,
                Err(message) => {
                    if attempt >= settings.corrective_rounds {
                        stop = StopReason::ProviderError(format!(
                            "unusable proposal after {attempt} corrective rounds: {message}"
                        ));
                        let result = LoopResult { history, stop };
                        if let Some(dir) = run_dir {
                            write_summary(dir, &result)?;
                        }
                        return Ok(result);
                    }
                    last_error = message;
                    attempt += 1;
                }
            }
        };

        let interp = match Interpreter::new(&config) {
            Ok(i) => i,
            Err(e) => {
                stop = StopReason::ProviderError(e.to_string());
                break;
            }
        };
        let calib_seed = root.derive_seed(1000 + g as u32);
        let params = match (&settings.mode, &settings.calibrator) {
            (LoopMode::ZeroShot, _) | (_, Calibrator::None) => interp.defaults(),
            (_, Calibrator::Es(ga)) => {
                // Warm start from the best prior entry with matching
                // parameter declarations.
                let warm = best_matching_params(&history, &config.param_names());
                calibrate_es(&interp, &task.train, ga, warm.as_ref(), calib_seed).0
            }
            (_, Calibrator::Sbi(sbi)) => match run_sbi(&interp, &task.train, sbi, calib_seed) {
                Ok((_, point)) => point,
                Err(e) => {
                    stop = StopReason::ProviderError(e.to_string());
                    break;
                }
            },
        };

        let report = match diagnose(&interp, &params, &task.val, &task.env, diag_config, diag_seed)
        {
            Ok(r) => r,
            Err(e) => {
                stop = StopReason::ProviderError(e.to_string());
                break;
            }
        };
        let entry = HistoryEntry {
            iteration: g,
            config_text: print_config(&config),
            params,
            feedback: synthesize_feedback(&report),
            report,
        };
        if let Some(dir) = run_dir {
            write_entry(dir, &entry)?;
        }
        history.push(entry);
        g += 1;

        let scores: Vec<f64> = history.iter().map(|e| e.report.wasserstein).collect();
        if settings.mode == LoopMode::Full && early_stop(&scores, settings.patience) {
            stop = StopReason::EarlyStop;
            break;
        }
    }

    let result = LoopResult { history, stop };
    if let Some(dir) = run_dir {
        write_summary(dir, &result)?;
    }
    Ok(result)
}

fn best_matching_params(history: &[HistoryEntry], names: &[String]) -> Option<ParameterVector> {
    history
        .iter()
        .filter(|e| e.report.param_names == names)
        .min_by(|a, b| a.report.wasserstein.total_cmp(&b.report.wasserstein))
        .map(|e| e.params.clone())
}
