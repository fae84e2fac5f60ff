//! End-to-end checks of the `gsim` binary: exit codes, file outputs, and
//! golden CSV headers.

use std::path::PathBuf;
use std::process::Command;

fn gsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gsim"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gsim-cli-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn help_exits_zero_everywhere() {
    for args in [
        vec!["--help"],
        vec!["gen-data", "--help"],
        vec!["calibrate", "--help"],
        vec!["loop", "--help"],
        vec!["eval", "--help"],
        vec!["experiment", "--help"],
        vec!["experiment", "lockdown", "--help"],
        vec!["experiment", "hospital-grid", "--help"],
        vec!["experiment", "supply-heatmap", "--help"],
        vec!["experiment", "leadtime", "--help"],
    ] {
        let out = gsim().args(&args).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{args:?}");
    }
}

#[test]
fn unknown_subcommand_and_flag_exit_one() {
    let out = gsim().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = gsim().args(["gen-data", "--not-a-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn user_errors_exit_one() {
    let out = gsim()
        .args(["gen-data", "--env", "nope", "--n", "1", "--out", "/tmp/x.jsonl"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("unknown environment"), "{stderr}");
}

#[test]
fn gen_data_writes_requested_trajectories() {
    let path = tmp("gen.jsonl");
    let out = gsim()
        .args([
            "gen-data",
            "--env",
            "sir",
            "--n",
            "300",
            "--horizon",
            "60",
            "--seed",
            "7",
            "--out",
            path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&path).unwrap();
    // Metadata line + one line per trajectory.
    assert_eq!(text.lines().count(), 301);
    // Determinism across runs.
    let path2 = tmp("gen2.jsonl");
    gsim()
        .args([
            "gen-data",
            "--env",
            "sir",
            "--n",
            "300",
            "--horizon",
            "60",
            "--seed",
            "7",
            "--out",
            path2.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(text, std::fs::read_to_string(&path2).unwrap());
}

#[test]
fn calibrate_eval_roundtrip_on_tiny_budget() {
    let data = tmp("cal.jsonl");
    gsim()
        .args([
            "gen-data", "--env", "sir", "--n", "8", "--horizon", "10", "--seed", "3",
            "--split", "6,2,0", "--out", data.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    let params = tmp("params.csv");
    let config = tmp("ga.conf");
    std::fs::write(&config, "[gfo]\npopulation = 12\ngenerations = 2\nmc_draws = 2\n").unwrap();
    let out = gsim()
        .args([
            "calibrate",
            "--env",
            "sir",
            "--data",
            data.to_str().unwrap(),
            "--out",
            params.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "5",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&params).unwrap();
    assert!(text.starts_with("name,value\nbeta,"), "{text}");

    let out = gsim()
        .args([
            "eval",
            "--env",
            "sir",
            "--data",
            data.to_str().unwrap(),
            "--split",
            "val",
            "--params",
            params.to_str().unwrap(),
            "--mc",
            "5",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("wass "), "{stdout}");
    assert!(stdout.contains("param.beta "), "{stdout}");
}

#[test]
fn experiment_csvs_have_stable_headers() {
    let lockdown = tmp("lockdown.csv");
    let out = gsim()
        .args([
            "experiment", "lockdown", "--mc", "3", "--out", lockdown.to_str().unwrap(),
            "--alphas", "0.3", "--window", "5:15", "--seed", "2",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&lockdown).unwrap();
    assert!(text.starts_with("alpha,t,mean_S,mean_I,mean_R\n"));

    let grid = tmp("grid.csv");
    let out = gsim()
        .args([
            "experiment", "hospital-grid", "--env", "hospital", "--mc", "2",
            "--taus", "0,10", "--delta-bs", "0,5", "--out", grid.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&grid).unwrap();
    assert!(text.starts_with("tau,delta_b,mean_cost\n"));
    assert_eq!(text.lines().count(), 5, "{text}");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("argmin tau="), "{stdout}");

    let heatmap = tmp("heatmap.csv");
    let out = gsim()
        .args([
            "experiment", "supply-heatmap", "--mc", "2", "--delta-cs", "0,5",
            "--leads", "1,2", "--out", heatmap.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&heatmap).unwrap();
    assert!(text.starts_with("delta_c,lead,mean_cost\n"));

    let leadtime = tmp("leadtime.csv");
    let out = gsim()
        .args([
            "experiment", "leadtime", "--mc", "2", "--leads", "1,2",
            "--out", leadtime.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&leadtime).unwrap();
    assert!(text.starts_with("lead,t,gt_backlog_mean,candidate_backlog_mean\n"));
}

#[test]
fn loop_with_scripted_provider_writes_run_dir() {
    let data = tmp("loop.jsonl");
    gsim()
        .args([
            "gen-data", "--env", "sir", "--n", "8", "--horizon", "8", "--seed", "3",
            "--split", "4,4,0", "--out", data.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    // Two canned ground-truth-shaped proposals.
    let proposals = tmp("proposals.txt");
    let config_a = "```\nconfig sir { params { beta = 1.5 in [0, 2]; gamma = 0.9 in [0, 1]; } state { S : int = 990; I : int = 10; R : int = 0; } rules { CompartmentFlow(from=S, to=I, count=Binomial(S, 1 - exp(-(beta * I) / (S + I + R)))); CompartmentFlow(from=I, to=R, count=Binomial(I, gamma)); } }\n```";
    let config_b = config_a.replace("beta = 1.5", "beta = 0.5").replace("gamma = 0.9", "gamma = 0.1");
    std::fs::write(&proposals, format!("{config_a}\n---\n{config_b}\n")).unwrap();
    let run_dir = tmp("run");
    let _ = std::fs::remove_dir_all(&run_dir);
    let out = gsim()
        .args([
            "loop",
            "--env",
            "sir",
            "--data",
            data.to_str().unwrap(),
            "--provider",
            "scripted",
            "--proposals",
            proposals.to_str().unwrap(),
            "--calibrator",
            "none",
            "--max-iterations",
            "2",
            "--run-dir",
            run_dir.to_str().unwrap(),
            "--seed",
            "11",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir.join("iter_000.config.txt").exists());
    assert!(run_dir.join("iter_001.diag.csv").exists());
    assert!(run_dir.join("summary.csv").exists());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("best iteration 1"), "{stdout}");
}
