//! `boed`: train amortized experimental-design policies, estimate their
//! information bounds, inspect posteriors, and run the self-check suites.
//!
//! Exit codes: 0 success, 1 self-check property failure, 2 usage or
//! configuration error, 3 numeric abort during training.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use boed_core::checkpoint::{self, Checkpoint};
use boed_core::diag;
use boed_core::env::History;
use boed_core::error::CoreError;
use boed_core::estimators::{
    infonce_bound, posterior_estimate, snmc_bound, spce_bound, BoundKind,
};
use boed_core::models;
use boed_core::policy::{DesignPolicy, RandomPolicy};
use boed_core::trainer;

use boed_cli::config::RunConfig;
use boed_cli::report::EvalReport;

#[derive(Parser)]
#[command(
    name = "boed",
    version,
    about = "Amortized experimental-design policies: train, evaluate, inspect."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a design policy from a TOML run config.
    Train {
        /// Path to the run configuration.
        config: PathBuf,
    },
    /// Estimate an information bound for a trained or baseline policy.
    Eval(EvalArgs),
    /// Reweight prior samples by the trained critic after one rollout.
    Posterior(PosteriorArgs),
    /// Run the gradient and estimator self-check suites.
    Diag(DiagArgs),
    /// Dump raw simulator draws under a random policy.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long, conflicts_with = "random_policy")]
    checkpoint: Option<PathBuf>,
    /// Evaluate the uniform-random baseline policy instead of a checkpoint.
    #[arg(long, requires = "model")]
    random_policy: bool,
    /// Model name; required with --random-policy, cross-checked otherwise.
    #[arg(long)]
    model: Option<String>,
    /// Which bound to estimate.
    #[arg(long, default_value = "spce", value_parser = ["spce", "snmc", "infonce"])]
    bound: String,
    /// Contrastive samples per rollout.
    #[arg(long, default_value_t = 4095)]
    l: usize,
    /// Monte-Carlo rollouts.
    #[arg(long, default_value_t = 256)]
    rollouts: usize,
    /// Experiments per rollout; defaults to the checkpoint's horizon (10
    /// for the baseline policy).
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the JSON report.
    #[arg(long, default_value = "eval_report.json")]
    out: PathBuf,
    /// Run config to cross-check against the checkpoint's embedded hash.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Evaluate even if --config and the checkpoint disagree.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct PosteriorArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Ground-truth parameters, comma separated; sampled from the prior
    /// when omitted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta0: Option<Vec<f64>>,
    /// Seeds the rollout, the prior grid, and theta0 when it is sampled.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of prior samples to reweight.
    #[arg(long, default_value_t = 2000)]
    grid_size: usize,
    /// Where to write the weighted samples.
    #[arg(long, default_value = "posterior.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct DiagArgs {
    /// Compare every network loss gradient against finite differences.
    #[arg(long)]
    grad_check: bool,
    /// Check the estimator invariants on the conjugate model.
    #[arg(long)]
    invariants: bool,
    /// Corrupt the named layer's gradient first (grad-check fixture).
    #[arg(long, value_name = "LAYER")]
    inject_fault: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 4)]
    horizon: usize,
    #[arg(long, default_value_t = 8)]
    rollouts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "simulations.csv")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = check_threads_env() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let result = match &cli.command {
        Command::Train { config } => cmd_train(config),
        Command::Eval(args) => cmd_eval(args),
        Command::Posterior(args) => cmd_posterior(args),
        Command::Diag(args) => cmd_diag(args),
        Command::Simulate(args) => cmd_simulate(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

/// 2 for anything the user can fix (usage, config, bad files), 3 for a
/// numeric abort mid-computation.
fn exit_code_for(err: &CoreError) -> u8 {
    match err {
        CoreError::Numeric(_) => 3,
        _ => 2,
    }
}

/// The estimators read BOED_THREADS themselves; the CLI's job is only to
/// reject garbage loudly instead of silently running single-threaded.
fn check_threads_env() -> Result<(), String> {
    match std::env::var("BOED_THREADS") {
        Err(_) => Ok(()),
        Ok(s) => match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(()),
            _ => Err(format!("BOED_THREADS must be a positive integer, got '{s}'")),
        },
    }
}

fn cmd_train(path: &Path) -> Result<u8, CoreError> {
    let run = RunConfig::load(path)?;
    let model = models::build(&run.model.name)?;
    let outputs = trainer::train(
        model.as_ref(),
        &run.effective_trainer(),
        run.reward,
        Path::new(&run.output_dir),
    )?;
    println!(
        "trained {} for {} environment steps",
        run.model.name, outputs.env_steps
    );
    println!(
        "final {}: {:.4} +/- {:.4} nats",
        outputs.final_eval.kind, outputs.final_eval.value, outputs.final_eval.std_error
    );
    println!("metrics: {}", outputs.metrics_path.display());
    println!("checkpoint: {}", outputs.checkpoint_path.display());
    Ok(0)
}

fn parse_bound(name: &str) -> Result<BoundKind, CoreError> {
    match name {
        "spce" => Ok(BoundKind::Spce),
        "snmc" => Ok(BoundKind::Snmc),
        "infonce" => Ok(BoundKind::InfoNce),
        other => Err(CoreError::config(format!("unknown bound '{other}'"))),
    }
}

fn cmd_eval(args: &EvalArgs) -> Result<u8, CoreError> {
    let bound = parse_bound(&args.bound)?;
    let mut eval_rng = ChaCha12Rng::seed_from_u64(args.seed);
    let (estimate, model_name, checkpoint_label, hash) = if args.random_policy {
        let name = args
            .model
            .clone()
            .expect("clap enforces --model with --random-policy");
        let model = models::build(&name)?;
        let horizon = args.horizon.unwrap_or(10);
        let mut policy_rng = ChaCha12Rng::seed_from_u64(args.seed);
        policy_rng.set_stream(1);
        let mut policy = RandomPolicy::for_model(model.as_ref(), policy_rng);
        let estimate = match bound {
            BoundKind::Spce => spce_bound(
                model.as_ref(),
                &mut policy,
                horizon,
                args.l,
                args.rollouts,
                &mut eval_rng,
            )?,
            BoundKind::Snmc => snmc_bound(
                model.as_ref(),
                &mut policy,
                horizon,
                args.l,
                args.rollouts,
                &mut eval_rng,
            )?,
            BoundKind::InfoNce => {
                return Err(CoreError::config(
                    "the InfoNCE bound scores with a trained critic; \
                     evaluate a checkpoint instead of --random-policy",
                ))
            }
        };
        (estimate, name, "random-policy".to_string(), String::new())
    } else {
        let ckpt_path = args
            .checkpoint
            .as_ref()
            .ok_or_else(|| CoreError::config("pass --checkpoint or --random-policy"))?;
        let ckpt = Checkpoint::load(ckpt_path)?;
        if let Some(name) = &args.model {
            if name != &ckpt.meta.model {
                return Err(CoreError::config(format!(
                    "checkpoint is for model '{}', not '{}'",
                    ckpt.meta.model, name
                )));
            }
        }
        if let Some(config_path) = &args.config {
            let run = RunConfig::load(config_path)?;
            let expected = checkpoint::config_hash(&run.meta())?;
            if expected != ckpt.hash && !args.force {
                return Err(CoreError::config(format!(
                    "config hash {expected} does not match the checkpoint's {}; \
                     pass --force to evaluate anyway",
                    ckpt.hash
                )));
            }
        }
        let model = models::build(&ckpt.meta.model)?;
        let horizon = args.horizon.unwrap_or(ckpt.meta.trainer.horizon);
        let mut policy = ckpt.restore_policy(model.as_ref())?;
        let estimate = match bound {
            BoundKind::Spce => spce_bound(
                model.as_ref(),
                &mut policy,
                horizon,
                args.l,
                args.rollouts,
                &mut eval_rng,
            )?,
            BoundKind::Snmc => snmc_bound(
                model.as_ref(),
                &mut policy,
                horizon,
                args.l,
                args.rollouts,
                &mut eval_rng,
            )?,
            BoundKind::InfoNce => {
                let critic = ckpt.restore_critic(model.as_ref())?;
                infonce_bound(
                    model.as_ref(),
                    &mut policy,
                    &critic,
                    horizon,
                    args.l,
                    args.rollouts,
                    &mut eval_rng,
                )?
            }
        };
        (
            estimate,
            ckpt.meta.model.clone(),
            ckpt_path.display().to_string(),
            ckpt.hash.clone(),
        )
    };
    let report = EvalReport::new(&estimate, model_name, checkpoint_label, hash);
    let json = report.to_json()?;
    println!("{json}");
    std::fs::write(&args.out, json + "\n")?;
    Ok(0)
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:.4}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn cmd_posterior(args: &PosteriorArgs) -> Result<u8, CoreError> {
    if args.grid_size == 0 {
        return Err(CoreError::config("grid-size must be at least 1"));
    }
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let model = models::build(&ckpt.meta.model)?;
    let mut policy = ckpt.restore_policy(model.as_ref())?;
    let critic = ckpt.restore_critic(model.as_ref())?;
    let mut rng = ChaCha12Rng::seed_from_u64(args.seed);
    let theta0 = match &args.theta0 {
        Some(values) => {
            if values.len() != model.param_dim() {
                return Err(CoreError::config(format!(
                    "--theta0 has {} values; model '{}' has {} parameters",
                    values.len(),
                    ckpt.meta.model,
                    model.param_dim()
                )));
            }
            values.clone()
        }
        None => model.sample_theta(&mut rng),
    };

    let horizon = ckpt.meta.trainer.horizon;
    let mut latent = model.init_latent(&theta0, &mut rng);
    let mut history = History::new(horizon, model.design_dim(), model.obs_dim());
    for _ in 0..horizon {
        let design = policy.propose(&history)?;
        let obs = model.simulate(&theta0, &design, &mut latent, &mut rng)?;
        history.push(&design, &obs)?;
    }

    let mut grid_rng = ChaCha12Rng::seed_from_u64(args.seed);
    grid_rng.set_stream(1);
    let posterior = posterior_estimate(
        &history,
        &critic,
        model.as_ref(),
        args.grid_size,
        &mut grid_rng,
    )?;

    let dim = model.param_dim();
    let mut csv = format!("# config_hash: {}\n", ckpt.hash);
    for d in 0..dim {
        csv.push_str(&format!("theta_{d},"));
    }
    csv.push_str("weight\n");
    for (sample, w) in posterior.samples.iter().zip(&posterior.weights) {
        for x in sample {
            csv.push_str(&format!("{x},"));
        }
        csv.push_str(&format!("{w}\n"));
    }
    std::fs::write(&args.out, csv)?;

    println!("model: {}", ckpt.meta.model);
    println!("theta0: [{}]", join(&theta0));
    println!("weighted posterior mean: [{}]", join(&posterior.weighted_mean()));
    for d in 0..dim {
        let lo = posterior.weighted_quantile(d, 0.25);
        let hi = posterior.weighted_quantile(d, 0.75);
        println!("central 50% box, dim {d}: [{lo:.4}, {hi:.4}]");
    }
    println!("weighted samples: {}", args.out.display());
    Ok(0)
}

fn cmd_diag(args: &DiagArgs) -> Result<u8, CoreError> {
    if !args.grad_check && !args.invariants {
        return Err(CoreError::config(
            "pass --grad-check and/or --invariants",
        ));
    }
    let mut outcomes = Vec::new();
    if args.grad_check {
        outcomes.extend(diag::gradient_checks(args.inject_fault.as_deref())?);
    } else if args.inject_fault.is_some() {
        return Err(CoreError::config("--inject-fault needs --grad-check"));
    }
    if args.invariants {
        outcomes.extend(diag::invariant_checks()?);
    }
    let mut failed = Vec::new();
    for o in &outcomes {
        let tag = if o.passed { "ok  " } else { "FAIL" };
        println!("{tag} {}: {}", o.name, o.detail);
        if !o.passed {
            failed.push(o.name);
        }
    }
    if failed.is_empty() {
        println!("all {} checks passed", outcomes.len());
        Ok(0)
    } else {
        eprintln!("failed checks: {}", failed.join(", "));
        Ok(1)
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8, CoreError> {
    if args.horizon == 0 || args.rollouts == 0 {
        return Err(CoreError::config("horizon and rollouts must be at least 1"));
    }
    let model = models::build(&args.model)?;
    let mut rng = ChaCha12Rng::seed_from_u64(args.seed);
    let mut policy_rng = ChaCha12Rng::seed_from_u64(args.seed);
    policy_rng.set_stream(1);
    let mut policy = RandomPolicy::for_model(model.as_ref(), policy_rng);

    // Raw draws have no run config behind them; the slot still gets filled
    // so every artifact carries the field.
    let mut csv = String::from("# config_hash: -\nrollout,step");
    for d in 0..model.param_dim() {
        csv.push_str(&format!(",theta_{d}"));
    }
    for d in 0..model.design_dim() {
        csv.push_str(&format!(",design_{d}"));
    }
    for d in 0..model.obs_dim() {
        csv.push_str(&format!(",obs_{d}"));
    }
    csv.push('\n');

    for r in 0..args.rollouts {
        let theta = model.sample_theta(&mut rng);
        let mut latent = model.init_latent(&theta, &mut rng);
        let mut history = History::new(args.horizon, model.design_dim(), model.obs_dim());
        for t in 0..args.horizon {
            let design = policy.propose(&history)?;
            let obs = model.simulate(&theta, &design, &mut latent, &mut rng)?;
            history.push(&design, &obs)?;
            csv.push_str(&format!("{r},{t}"));
            for x in theta.iter().chain(&design).chain(&obs) {
                csv.push_str(&format!(",{x}"));
            }
            csv.push('\n');
        }
    }
    std::fs::write(&args.out, csv)?;
    println!(
        "wrote {} draws from '{}' to {}",
        args.rollouts * args.horizon,
        args.model,
        args.out.display()
    );
    Ok(0)
}
