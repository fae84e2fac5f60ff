//! `gsim`: generate benchmark datasets, calibrate simulator configs,
//! drive the refinement loop, and run intervention experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use gsim_core::codec::{read_dataset_path, write_dataset_path};
use gsim_core::config_file::Overrides;
use gsim_core::dsl::{parse_config, Interpreter, ParameterVector};
use gsim_core::envs::{generate_dataset, gt_config, EnvSpec, Model, PolicySpec};
use gsim_core::experiments::{
    exp_heatmap_supply, exp_leadtime_ood, exp_lockdown_sir, exp_policy_grid_hospital, GridSpec,
    HeatmapSpec,
};
use gsim_core::gfo::{calibrate_es, history_csv, GaSettings};
use gsim_core::llm::{HttpProvider, ProposalProvider, ScriptedProvider};
use gsim_core::metrics::{diagnose, next_state_distance, DiagnosticConfig, StreamMode};
use gsim_core::refine::{run_loop, Calibrator, LoopMode, LoopSettings, LoopTask};
use gsim_core::sbi::{run_sbi, SbiSettings};
use gsim_core::state::{split_dataset, Dataset, Split};

#[derive(Parser)]
#[command(
    name = "gsim",
    about = "Compositional simulator synthesis, calibration, and intervention experiments",
    version
)]
struct Cli {
    /// Master seed for all stochastic work.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Flat dotted-key config file overriding defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel evaluation (default: all cores).
    #[arg(long, global = true)]
    parallel: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate trajectories from a ground-truth environment.
    GenData(GenDataArgs),
    /// Calibrate a configuration's parameters against a dataset.
    Calibrate(CalibrateArgs),
    /// Run the iterative propose/calibrate/diagnose refinement loop.
    Loop(LoopArgs),
    /// Diagnose a configuration against a dataset.
    Eval(EvalArgs),
    /// Intervention experiments producing CSV tables.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Args)]
struct GenDataArgs {
    /// Environment preset: sir, supply, hospital, hospital-large.
    #[arg(long)]
    env: String,
    /// Number of trajectories.
    #[arg(long)]
    n: usize,
    /// Steps per trajectory (default: the preset's horizon).
    #[arg(long)]
    horizon: Option<usize>,
    /// Label a train/val/test split, e.g. `100,100,100`.
    #[arg(long)]
    split: Option<String>,
    /// Output dataset file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Method {
    Es,
    Sbi,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Environment preset providing schema and projection.
    #[arg(long)]
    env: String,
    /// Training dataset (uses the train split when labeled).
    #[arg(long)]
    data: PathBuf,
    /// Configuration text to calibrate (default: the env's ground-truth
    /// structure).
    #[arg(long)]
    config_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Method::Es)]
    method: Method,
    /// Warm-start parameters (name,value CSV).
    #[arg(long)]
    warm_start: Option<PathBuf>,
    /// Output parameters CSV.
    #[arg(long)]
    out: PathBuf,
    /// Optional fitness-history CSV (ES) or posterior CSV (SBI).
    #[arg(long)]
    history_out: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ProviderKind {
    Scripted,
    Http,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Full,
    Zeroshot,
    ZeroshotOptim,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum CalibratorArg {
    Es,
    Sbi,
    None,
}

#[derive(Args)]
struct LoopArgs {
    #[arg(long)]
    env: String,
    /// Dataset with labeled train and val splits.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    provider: ProviderKind,
    /// Proposal file for the scripted provider (entries separated by ---).
    #[arg(long)]
    proposals: Option<PathBuf>,
    /// Model name for the http provider.
    #[arg(long, default_value = "gpt-4o")]
    model: String,
    #[arg(long, value_enum, default_value_t = ModeArg::Full)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = CalibratorArg::Es)]
    calibrator: CalibratorArg,
    #[arg(long, default_value_t = 5)]
    max_iterations: usize,
    #[arg(long, default_value_t = 3)]
    patience: usize,
    /// Run directory for per-iteration artifacts; resumable.
    #[arg(long)]
    run_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    env: String,
    #[arg(long)]
    data: PathBuf,
    /// Which labeled subset to evaluate against.
    #[arg(long, default_value = "all")]
    split: String,
    /// Candidate configuration (default: ground-truth structure).
    #[arg(long)]
    config_file: Option<PathBuf>,
    /// Parameters CSV (default: the config's declared defaults).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Monte-Carlo rollouts per trajectory.
    #[arg(long, default_value_t = 100)]
    mc: usize,
    /// Also run the next-state protocol against the ground truth with this
    /// many samples.
    #[arg(long)]
    nsd_samples: Option<usize>,
    /// Optional CSV output (header + one row).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Mean S/I/R curves under lockdown intensities.
    Lockdown(LockdownArgs),
    /// Hospital (tau, delta-B) policy-cost grid with its argmin.
    HospitalGrid(HospitalGridArgs),
    /// Supply-chain (delta-C, lead) cost heatmap.
    SupplyHeatmap(SupplyHeatmapArgs),
    /// Out-of-distribution lead-time backlog comparison.
    Leadtime(LeadtimeArgs),
}

#[derive(Args)]
struct LockdownArgs {
    #[arg(long, default_value = "sir")]
    env: String,
    #[arg(long, default_value = "0.05,0.1,0.15,0.3")]
    alphas: String,
    /// Lockdown window as `start:end`.
    #[arg(long, default_value = "10:30")]
    window: String,
    #[arg(long, default_value_t = 200)]
    mc: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HospitalGridArgs {
    #[arg(long, default_value = "hospital-large")]
    env: String,
    /// Candidate parameters CSV; absent means ground truth.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Comma list of lockdown start days (default 0,5,...,95).
    #[arg(long)]
    taus: Option<String>,
    /// Comma list of extra-bed counts (default 0,500,...,9500).
    #[arg(long)]
    delta_bs: Option<String>,
    #[arg(long, default_value_t = 20)]
    mc: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SupplyHeatmapArgs {
    #[arg(long, default_value = "supply")]
    env: String,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value = "0,5,10,15,20,25,30,35,40,45")]
    delta_cs: String,
    #[arg(long, default_value = "1,2,3,4,5,6")]
    leads: String,
    /// Cost per unit of extra capacity.
    #[arg(long, default_value_t = 0.1)]
    c_cap: f64,
    #[arg(long, default_value_t = 200)]
    mc: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LeadtimeArgs {
    #[arg(long, default_value = "supply")]
    env: String,
    /// Candidate parameters CSV; absent compares ground truth to itself.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value = "1,2,3,4,5,6")]
    leads: String,
    /// Base-stock order-up-to level driving both simulators.
    #[arg(long, default_value_t = 30)]
    level: i64,
    #[arg(long, default_value_t = 200)]
    mc: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| anyhow!("bad {what} entry `{s}`"))
        })
        .collect()
}

fn load_env(name: &str, overrides: &Option<Overrides>) -> Result<EnvSpec> {
    let mut env =
        EnvSpec::preset(name).ok_or_else(|| anyhow!("unknown environment preset `{name}`"))?;
    if let Some(o) = overrides {
        env.apply_overrides(&o.numeric_pairs()).map_err(|e| anyhow!(e))?;
    }
    Ok(env)
}

fn load_config_or_gt(env: &EnvSpec, path: &Option<PathBuf>) -> Result<gsim_core::StructuralConfig> {
    match path {
        None => Ok(gt_config(env)),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_config(&text).map_err(|e| anyhow!("parsing {}: {e}", p.display()))
        }
    }
}

fn load_params_csv(path: &Path, names: &[String]) -> Result<ParameterVector> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut named: Vec<(String, f64)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 && line.trim() == "name,value" {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (name, value) = line
            .split_once(',')
            .ok_or_else(|| anyhow!("{}: bad row `{line}`", path.display()))?;
        named.push((name.trim().to_string(), value.trim().parse()?));
    }
    let values = names
        .iter()
        .map(|n| {
            named
                .iter()
                .find(|(name, _)| name == n)
                .map(|(_, v)| *v)
                .ok_or_else(|| anyhow!("{}: missing parameter `{n}`", path.display()))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ParameterVector::new(values))
}

fn write_params_csv(path: &Path, names: &[String], params: &ParameterVector) -> Result<()> {
    let mut out = String::from("name,value\n");
    for (n, v) in names.iter().zip(&params.values) {
        out.push_str(&format!("{n},{v}\n"));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn subset_or_all(data: &Dataset, split: Split) -> Dataset {
    let sub = data.subset(split);
    if sub.is_empty() {
        data.clone()
    } else {
        sub
    }
}

fn candidate_model(env: &EnvSpec, params_path: &Option<PathBuf>) -> Result<Model> {
    match params_path {
        None => Ok(Model::hand_coded(env)),
        Some(path) => {
            let config = gt_config(env);
            let interp = Interpreter::new(&config).map_err(|e| anyhow!("{e}"))?;
            let params = load_params_csv(path, &config.param_names())?;
            Ok(Model::from_config(env, interp, params))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let overrides = match &cli.config {
        Some(path) => Some(Overrides::load(path).map_err(|e| anyhow!("{}: {e}", path.display()))?),
        None => None,
    };
    if let Some(workers) = cli.parallel {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build_global()
            .ok();
    }
    let seed = cli.seed;

    match cli.command {
        Command::GenData(args) => {
            let env = load_env(&args.env, &overrides)?;
            let horizon = args.horizon.unwrap_or(env.horizon);
            let mut data = generate_dataset(&env, args.n, horizon, &env.policy.clone(), seed);
            if let Some(split) = &args.split {
                let parts: Vec<usize> = parse_list(split, "split")?;
                if parts.len() != 3 {
                    bail!("--split wants three counts, e.g. 100,100,100");
                }
                data = split_dataset(&data, parts[0], parts[1], parts[2], seed)?;
            }
            write_dataset_path(&data, &args.out)?;
            println!(
                "wrote {} trajectories x {} steps to {}",
                data.len(),
                horizon,
                args.out.display()
            );
        }
        Command::Calibrate(args) => {
            let env = load_env(&args.env, &overrides)?;
            let data = read_dataset_path(&args.data)?;
            let train = subset_or_all(&data, Split::Train);
            let config = load_config_or_gt(&env, &args.config_file)?;
            let interp = Interpreter::new(&config).map_err(|e| anyhow!("{e}"))?;
            let names = config.param_names();
            match args.method {
                Method::Es => {
                    let mut settings = GaSettings::default();
                    if let Some(o) = &overrides {
                        o.apply_gfo(&mut settings);
                    }
                    let warm = match &args.warm_start {
                        Some(p) => Some(load_params_csv(p, &names)?),
                        None => None,
                    };
                    let (best, history) =
                        calibrate_es(&interp, &train, &settings, warm.as_ref(), seed);
                    write_params_csv(&args.out, &names, &best)?;
                    if let Some(path) = &args.history_out {
                        fs::write(path, history_csv(&history))?;
                    }
                    println!(
                        "calibrated {} parameters; best fitness {}",
                        names.len(),
                        history.last().map(|h| h.best).unwrap_or(f64::NAN)
                    );
                }
                Method::Sbi => {
                    let mut settings = SbiSettings::default();
                    if let Some(o) = &overrides {
                        o.apply_sbi(&mut settings);
                    }
                    let (samples, point) =
                        run_sbi(&interp, &train, &settings, seed).map_err(|e| anyhow!("{e}"))?;
                    write_params_csv(&args.out, &names, &point)?;
                    if let Some(path) = &args.history_out {
                        fs::write(path, samples.to_csv(&names))?;
                    }
                    println!(
                        "accepted {} posterior samples; threshold {}",
                        samples.len(),
                        samples.threshold
                    );
                }
            }
        }
        Command::Loop(args) => {
            let env = load_env(&args.env, &overrides)?;
            let data = read_dataset_path(&args.data)?;
            let train = data.subset(Split::Train);
            let val = data.subset(Split::Val);
            if train.is_empty() || val.is_empty() {
                bail!("the loop needs a dataset with labeled train and val splits");
            }
            let mut ga = GaSettings::default();
            let mut sbi = SbiSettings::default();
            if let Some(o) = &overrides {
                o.apply_gfo(&mut ga);
                o.apply_sbi(&mut sbi);
            }
            let mut settings = LoopSettings {
                max_iterations: args.max_iterations,
                patience: args.patience,
                calibrator: match args.calibrator {
                    CalibratorArg::Es => Calibrator::Es(ga),
                    CalibratorArg::Sbi => Calibrator::Sbi(sbi),
                    CalibratorArg::None => Calibrator::None,
                },
                mode: match args.mode {
                    ModeArg::Full => LoopMode::Full,
                    ModeArg::Zeroshot => LoopMode::ZeroShot,
                    ModeArg::ZeroshotOptim => LoopMode::ZeroShotOptim,
                },
                ..LoopSettings::default()
            };
            if let Some(o) = &overrides {
                o.apply_loop(&mut settings);
            }
            let mut provider: Box<dyn ProposalProvider> = match args.provider {
                ProviderKind::Scripted => {
                    let path = args
                        .proposals
                        .ok_or_else(|| anyhow!("--provider scripted needs --proposals"))?;
                    let text = fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    Box::new(ScriptedProvider::from_text(&text))
                }
                ProviderKind::Http => {
                    let base = overrides
                        .as_ref()
                        .and_then(|o| o.text("llm.base").map(str::to_string));
                    Box::new(
                        HttpProvider::new(base, &args.model, Duration::from_secs(120), 3)
                            .map_err(|e| anyhow!("{e}"))?,
                    )
                }
            };
            let diag = DiagnosticConfig::default();
            let task = LoopTask { env, train, val };
            let result = run_loop(
                &task,
                provider.as_mut(),
                &settings,
                &diag,
                Some(&args.run_dir),
                seed,
            )
            .map_err(|e| anyhow!("{e}"))?;
            match result.best() {
                Some(best) => println!(
                    "{} iterations; best iteration {} with val wasserstein {}",
                    result.history.len(),
                    best.iteration,
                    best.report.wasserstein
                ),
                None => bail!("loop produced no candidates: {:?}", result.stop),
            }
        }
        Command::Eval(args) => {
            let env = load_env(&args.env, &overrides)?;
            let data = read_dataset_path(&args.data)?;
            let subset = match args.split.as_str() {
                "train" => subset_or_all(&data, Split::Train),
                "val" => subset_or_all(&data, Split::Val),
                "test" => subset_or_all(&data, Split::Test),
                "all" => data.clone(),
                other => bail!("unknown split `{other}`"),
            };
            let config = load_config_or_gt(&env, &args.config_file)?;
            let interp = Interpreter::new(&config).map_err(|e| anyhow!("{e}"))?;
            let params = match &args.params {
                Some(p) => load_params_csv(p, &config.param_names())?,
                None => config.defaults(),
            };
            let diag_config = DiagnosticConfig {
                mc_draws: args.mc,
                ..DiagnosticConfig::default()
            };
            let report = diagnose(&interp, &params, &subset, &env, &diag_config, seed)
                .map_err(|e| anyhow!("{e}"))?;
            print!("{}", report.to_kv_block());
            if let Some(n) = args.nsd_samples {
                let gt = Model::hand_coded(&env).transition(&[]).map_err(|e| anyhow!("{e}"))?;
                let cand = Model::from_config(&env, interp.clone(), params.clone())
                    .transition(&[])
                    .map_err(|e| anyhow!("{e}"))?;
                let d = next_state_distance(
                    gt.as_ref(),
                    cand.as_ref(),
                    &subset,
                    n,
                    seed,
                    StreamMode::Independent,
                )
                .map_err(|e| anyhow!("{e}"))?;
                println!("next_state_distance {d}");
            }
            if let Some(out) = &args.out {
                fs::write(out, format!("{}\n{}\n", report.csv_header(), report.to_csv_row()))?;
            }
        }
        Command::Experiment(exp) => run_experiment(exp, seed, &overrides)?,
    }
    Ok(())
}

fn run_experiment(exp: ExperimentCommand, seed: u64, overrides: &Option<Overrides>) -> Result<()> {
    match exp {
        ExperimentCommand::Lockdown(args) => {
            let env = load_env(&args.env, overrides)?;
            let model = Model::hand_coded(&env);
            let alphas: Vec<f64> = parse_list(&args.alphas, "alphas")?;
            let (start, end) = args
                .window
                .split_once(':')
                .ok_or_else(|| anyhow!("--window wants start:end"))?;
            let table = exp_lockdown_sir(
                &model,
                &alphas,
                (start.parse()?, end.parse()?),
                args.mc,
                seed,
            )
            .map_err(|e| anyhow!("{e}"))?;
            fs::write(&args.out, table.to_csv())?;
            println!("wrote {} rows to {}", table.rows.len(), args.out.display());
        }
        ExperimentCommand::HospitalGrid(args) => {
            let env = load_env(&args.env, overrides)?;
            let model = candidate_model(&env, &args.params)?;
            let mut grid = GridSpec::default();
            if let Some(t) = &args.taus {
                grid.taus = parse_list(t, "taus")?;
            }
            if let Some(b) = &args.delta_bs {
                grid.delta_bs = parse_list(b, "delta_bs")?;
            }
            let result =
                exp_policy_grid_hospital(&model, &grid, args.mc, seed).map_err(|e| anyhow!("{e}"))?;
            fs::write(&args.out, result.to_csv())?;
            println!(
                "argmin tau={} delta_b={} cost={}",
                result.argmin.tau, result.argmin.delta_b, result.argmin.mean_cost
            );
        }
        ExperimentCommand::SupplyHeatmap(args) => {
            let env = load_env(&args.env, overrides)?;
            let model = candidate_model(&env, &args.params)?;
            let spec = HeatmapSpec {
                delta_cs: parse_list(&args.delta_cs, "delta_cs")?,
                leads: parse_list(&args.leads, "leads")?,
                c_cap: args.c_cap,
            };
            let heatmap =
                exp_heatmap_supply(&model, &spec, args.mc, seed).map_err(|e| anyhow!("{e}"))?;
            fs::write(&args.out, heatmap.to_csv())?;
            println!("wrote {} cells to {}", heatmap.cells.len(), args.out.display());
        }
        ExperimentCommand::Leadtime(args) => {
            let env = load_env(&args.env, overrides)?;
            let gt = Model::hand_coded(&env);
            let candidate = candidate_model(&env, &args.params)?;
            let leads: Vec<u32> = parse_list(&args.leads, "leads")?;
            let policy = PolicySpec::BaseStock { level: args.level };
            let table = exp_leadtime_ood(&gt, &candidate, &leads, &policy, args.mc, seed)
                .map_err(|e| anyhow!("{e}"))?;
            fs::write(&args.out, table.to_csv())?;
            println!("wrote {} rows to {}", table.rows.len(), args.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; anything else is a
            // usage error.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // User-facing problems (bad arguments, unreadable files,
            // invalid configs) exit 1; unexpected internal failures exit 2.
            let message = format!("{e:#}");
            eprintln!("error: {message}");
            let internal = message.contains("internal");
            ExitCode::from(if internal { 2 } else { 1 })
        }
    }
}
