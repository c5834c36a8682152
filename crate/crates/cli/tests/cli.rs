//! End-to-end tests driving the compiled binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use boed_cli::csvio::StrictCsv;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_boed");

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("BOED_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf-8 stderr")
}

fn exit(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn tiny_train_config(seed: u64, output_dir: &Path) -> String {
    format!(
        r#"
reward = "dense"
seed = {seed}
output_dir = "{}"

[model]
name = "linear_gaussian"

[trainer]
horizon = 2
total_budget = 512
parallel_envs = 8
initial_random_timesteps = 64
batch = 16
hidden = [8]
updates_per_timestep = 2
train_l = 3
replay_capacity = 4096
critic_batch = 4
critic_updates_per_timestep = 1
eval_every = 256
eval_rollouts = 8
eval_l = 15
"#,
        output_dir.display()
    )
}

/// Trains the shared fixture checkpoint once; later tests reuse it.
fn trained_fixture() -> &'static (TempDir, PathBuf, PathBuf) {
    static FIXTURE: OnceLock<(TempDir, PathBuf, PathBuf)> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = TempDir::new().expect("tempdir");
        let out_dir = dir.path().join("run");
        let config_path = dir.path().join("train.toml");
        std::fs::write(&config_path, tiny_train_config(5, &out_dir)).expect("write config");
        let out = run_in(dir.path(), &["train", config_path.to_str().unwrap()]);
        assert_eq!(exit(&out), 0, "fixture training failed: {}", stderr(&out));
        let checkpoint = out_dir.join("checkpoint.bin");
        assert!(checkpoint.is_file());
        (dir, config_path, checkpoint)
    })
}

fn strip_wall_clock(csv: &str) -> String {
    csv.lines()
        .map(|line| line.rsplit_once(',').map_or(line, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn training_smoke_run_writes_reproducible_metrics() {
    let dir = TempDir::new().unwrap();
    let mut csvs = Vec::new();
    for run in 0..2 {
        let out_dir = dir.path().join(format!("run{run}"));
        let config_path = dir.path().join(format!("cfg{run}.toml"));
        std::fs::write(&config_path, tiny_train_config(9, &out_dir)).unwrap();
        let out = run_in(dir.path(), &["train", config_path.to_str().unwrap()]);
        assert_eq!(exit(&out), 0, "train failed: {}", stderr(&out));
        assert!(stdout(&out).contains("checkpoint:"));
        let csv = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
        let parsed = StrictCsv::parse(&csv).unwrap();
        assert!(!parsed.rows.is_empty(), "metrics should have data rows");
        assert_eq!(parsed.header[0], "step");
        let ckpt =
            boed_core::checkpoint::Checkpoint::load(&out_dir.join("checkpoint.bin")).unwrap();
        assert_eq!(parsed.metadata["config_hash"], ckpt.hash);
        csvs.push(strip_wall_clock(&csv));
    }
    assert_eq!(csvs[0], csvs[1], "same seed must reproduce the metrics");
}

#[test]
fn an_out_of_range_gamma_exits_two_naming_the_key() {
    let dir = TempDir::new().unwrap();
    let config_path = dir.path().join("bad.toml");
    std::fs::write(
        &config_path,
        "[model]\nname = \"linear_gaussian\"\n[trainer]\ngamma = 1.5\n",
    )
    .unwrap();
    let out = run_in(dir.path(), &["train", config_path.to_str().unwrap()]);
    assert_eq!(exit(&out), 2);
    assert!(stderr(&out).contains("gamma"), "stderr: {}", stderr(&out));
}

#[test]
fn an_unknown_config_key_exits_two_by_name() {
    let dir = TempDir::new().unwrap();
    let config_path = dir.path().join("bad.toml");
    std::fs::write(
        &config_path,
        "typo_key = 1\n[model]\nname = \"linear_gaussian\"\n",
    )
    .unwrap();
    let out = run_in(dir.path(), &["train", config_path.to_str().unwrap()]);
    assert_eq!(exit(&out), 2);
    assert!(stderr(&out).contains("typo_key"), "stderr: {}", stderr(&out));
}

#[test]
fn random_policy_eval_emits_a_strict_json_report() {
    let dir = TempDir::new().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "eval",
            "--random-policy",
            "--model",
            "location_finding",
            "--bound",
            "spce",
            "--l",
            "15",
            "--rollouts",
            "16",
            "--horizon",
            "3",
            "--seed",
            "1",
        ],
    );
    assert_eq!(exit(&out), 0, "stderr: {}", stderr(&out));
    let text = std::fs::read_to_string(dir.path().join("eval_report.json")).unwrap();
    assert_eq!(stdout(&out).trim(), text.trim());
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    let obj = json.as_object().unwrap();
    let mut keys: Vec<_> = obj.keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(
        keys,
        [
            "bound",
            "checkpoint",
            "config_hash",
            "contrastives",
            "model",
            "rollouts",
            "std_error",
            "timestamp",
            "value"
        ]
    );
    assert_eq!(obj["bound"], "sPCE");
    assert_eq!(obj["checkpoint"], "random-policy");
    assert_eq!(obj["config_hash"], "");
    assert_eq!(obj["contrastives"], 15);
    assert_eq!(obj["rollouts"], 16);
    let value = obj["value"].as_f64().unwrap();
    assert!(value > 0.0 && value <= 16f64.ln(), "value {value}");
}

#[test]
fn the_upper_bound_sits_above_the_lower_bound() {
    let dir = TempDir::new().unwrap();
    let mut values = Vec::new();
    for bound in ["spce", "snmc"] {
        let out = run_in(
            dir.path(),
            &[
                "eval",
                "--random-policy",
                "--model",
                "linear_gaussian",
                "--bound",
                bound,
                "--l",
                "3",
                "--rollouts",
                "200",
                "--horizon",
                "2",
                "--seed",
                "4",
                "--out",
                &format!("{bound}.json"),
            ],
        );
        assert_eq!(exit(&out), 0, "stderr: {}", stderr(&out));
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(format!("{bound}.json"))).unwrap())
                .unwrap();
        values.push(json["value"].as_f64().unwrap());
    }
    assert!(
        values[1] >= values[0],
        "snmc {} should not fall below spce {} on shared rollouts",
        values[1],
        values[0]
    );
}

#[test]
fn a_single_contrastive_caps_the_bound_at_ln_two() {
    let dir = TempDir::new().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "eval",
            "--random-policy",
            "--model",
            "location_finding",
            "--l",
            "1",
            "--rollouts",
            "64",
            "--horizon",
            "2",
        ],
    );
    assert_eq!(exit(&out), 0, "stderr: {}", stderr(&out));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("eval_report.json")).unwrap())
            .unwrap();
    let value = json["value"].as_f64().unwrap();
    assert!(value <= 2f64.ln() + 1e-12, "value {value}");
}

#[test]
fn likelihood_bounds_refuse_likelihood_free_models() {
    let dir = TempDir::new().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "eval",
            "--random-policy",
            "--model",
            "cartpole",
            "--bound",
            "spce",
            "--l",
            "3",
            "--rollouts",
            "4",
        ],
    );
    assert_eq!(exit(&out), 2);
    let err = stderr(&out);
    assert!(
        err.contains("cartpole") && err.contains("log_likelihood"),
        "stderr: {err}"
    );
}

#[test]
fn eval_refuses_a_mismatched_config_unless_forced() {
    let (dir, config_path, checkpoint) = trained_fixture();
    let mismatched = dir.path().join("mismatched.toml");
    let text = std::fs::read_to_string(config_path).unwrap();
    std::fs::write(&mismatched, text.replace("seed = 5", "seed = 6")).unwrap();
    let base = [
        "eval",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--l",
        "3",
        "--rollouts",
        "8",
        "--config",
        mismatched.to_str().unwrap(),
    ];
    let out = run_in(dir.path(), &base);
    assert_eq!(exit(&out), 2);
    assert!(stderr(&out).contains("hash"), "stderr: {}", stderr(&out));

    let mut forced = base.to_vec();
    forced.push("--force");
    let out = run_in(dir.path(), &forced);
    assert_eq!(exit(&out), 0, "stderr: {}", stderr(&out));

    let matched: Vec<&str> = base
        .iter()
        .map(|s| {
            if *s == mismatched.to_str().unwrap() {
                config_path.to_str().unwrap()
            } else {
                *s
            }
        })
        .collect();
    let out = run_in(dir.path(), &matched);
    assert_eq!(exit(&out), 0, "stderr: {}", stderr(&out));
}

#[test]
fn posterior_weights_sum_to_one_over_the_grid() {
    let (dir, _, checkpoint) = trained_fixture();
    let csv_path = dir.path().join("post.csv");
    let out = run_in(
        dir.path(),
        &[
            "posterior",
            "--checkpoint",
            checkpoint.to_str().unwrap(),
            "--grid-size",
            "50",
            "--seed",
            "3",
            "--theta0",
            "-0.4",
            "--out",
            csv_path.to_str().unwrap(),
        ],
    );
    assert_eq!(exit(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("theta0: [-0.4000]"));
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let parsed = StrictCsv::parse(&csv).unwrap();
    let ckpt = boed_core::checkpoint::Checkpoint::load(checkpoint).unwrap();
    assert_eq!(parsed.metadata["config_hash"], ckpt.hash);
    assert_eq!(parsed.header, ["theta_0", "weight"]);
    assert_eq!(parsed.rows.len(), 50);
    let total: f64 = parsed
        .column("weight")
        .unwrap()
        .iter()
        .map(|w| w.parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-9, "weights sum to {total}");

    let out = run_in(
        dir.path(),
        &[
            "posterior",
            "--checkpoint",
            checkpoint.to_str().unwrap(),
            "--grid-size",
            "0",
        ],
    );
    assert_eq!(exit(&out), 2);
    assert!(stderr(&out).contains("grid-size"), "stderr: {}", stderr(&out));
}

#[test]
fn diag_passes_cleanly_and_catches_an_injected_fault() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &["diag", "--grad-check"]);
    assert_eq!(exit(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("ok   mlp:"), "stdout: {text}");
    assert!(!text.contains("FAIL"), "stdout: {text}");

    let out = run_in(dir.path(), &["diag", "--grad-check", "--inject-fault", "lstm"]);
    assert_eq!(exit(&out), 1);
    assert!(stdout(&out).contains("FAIL lstm:"), "stdout: {}", stdout(&out));
    assert!(stderr(&out).contains("lstm"), "stderr: {}", stderr(&out));

    let out = run_in(dir.path(), &["diag"]);
    assert_eq!(exit(&out), 2);
}

#[test]
fn simulate_writes_one_row_per_draw() {
    let dir = TempDir::new().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "simulate",
            "--model",
            "sir",
            "--horizon",
            "3",
            "--rollouts",
            "4",
        ],
    );
    assert_eq!(exit(&out), 0, "stderr: {}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("simulations.csv")).unwrap();
    let parsed = StrictCsv::parse(&csv).unwrap();
    assert_eq!(parsed.metadata["config_hash"], "-");
    assert_eq!(
        parsed.header,
        ["rollout", "step", "theta_0", "theta_1", "design_0", "obs_0"]
    );
    assert_eq!(parsed.rows.len(), 4 * 3);
    for row in &parsed.rows {
        for field in &row[2..] {
            let x: f64 = field.parse().unwrap();
            assert!(x.is_finite());
        }
    }
}

#[test]
fn the_thread_count_env_var_is_validated() {
    let dir = TempDir::new().unwrap();
    let args = [
        "eval",
        "--random-policy",
        "--model",
        "linear_gaussian",
        "--l",
        "3",
        "--rollouts",
        "4",
        "--horizon",
        "1",
    ];
    let out = Command::new(BIN)
        .args(args)
        .current_dir(dir.path())
        .env("BOED_THREADS", "abc")
        .output()
        .unwrap();
    assert_eq!(exit(&out), 2);
    assert!(
        stderr(&out).contains("BOED_THREADS"),
        "stderr: {}",
        stderr(&out)
    );

    let out = Command::new(BIN)
        .args(args)
        .current_dir(dir.path())
        .env("BOED_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(exit(&out), 0, "stderr: {}", stderr(&out));
}
