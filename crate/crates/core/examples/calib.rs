//! Scratch calibration driver; not part of the library.

use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use boed_core::checkpoint::Checkpoint;
use boed_core::env::History;
use boed_core::estimators::{posterior_estimate, spce_bound};
use boed_core::models;
use boed_core::policy::{DesignPolicy, RandomPolicy};
use boed_core::trainer::{train, TrainerConfig};
use boed_core::Model;

fn out_dir(tag: &str) -> PathBuf {
    PathBuf::from("/tmp/calib").join(tag)
}

fn whiten_probe(name: &str, horizon: usize) {
    let model = models::build(name).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(77);
    let mut policy_rng = ChaCha12Rng::seed_from_u64(78);
    let mut policy = RandomPolicy::for_model(model.as_ref(), policy_rng.clone());
    let obs_dim = model.obs_dim();
    let mut sums = vec![0.0f64; obs_dim];
    let mut sqs = vec![0.0f64; obs_dim];
    let mut n = 0.0f64;
    let rollouts = 2000;
    for _ in 0..rollouts {
        let theta = model.sample_theta(&mut rng);
        let mut latent = model.init_latent(&theta, &mut rng);
        let mut history = History::new(horizon, model.design_dim(), obs_dim);
        for _ in 0..horizon {
            let design = policy.propose(&history).unwrap();
            let obs = model
                .simulate(&theta, &design, &mut latent, &mut rng)
                .unwrap();
            for (d, y) in obs.iter().enumerate() {
                sums[d] += y;
                sqs[d] += y * y;
            }
            n += 1.0;
            history.push(&design, &obs).unwrap();
        }
    }
    let _ = &mut policy_rng;
    let mean: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let std: Vec<f64> = sqs
        .iter()
        .zip(&mean)
        .map(|(sq, m)| (sq / n - m * m).sqrt())
        .collect();
    let frozen = model.obs_whitening();
    println!("{name}: MC obs mean {mean:?} std {std:?}");
    println!("{name}: frozen {:?}", frozen);
}

fn lf_run(reward: &str, budget: u64, seed: u64) {
    let t0 = Instant::now();
    let model = models::build("location_finding").unwrap();
    let mut config = TrainerConfig::for_model("location_finding");
    config.total_budget = budget;
    config.eval_every = 10_000;
    config.eval_l = 4095;
    config.eval_rollouts = 256;
    config.seed = seed;
    let kind = match reward {
        "dense" => boed_core::estimators::RewardKind::Dense,
        _ => boed_core::estimators::RewardKind::Sparse,
    };
    let out = out_dir(&format!("lf-{reward}-{budget}-{seed}"));
    let outputs = train(model.as_ref(), &config, kind, &out).unwrap();
    println!(
        "lf {reward} budget {budget} seed {seed}: final {:.4} +/- {:.4} in {:?}",
        outputs.final_eval.value,
        outputs.final_eval.std_error,
        t0.elapsed()
    );
    println!("metrics at {}", outputs.metrics_path.display());
    let csv = std::fs::read_to_string(&outputs.metrics_path).unwrap();
    for line in csv.lines() {
        println!("  {line}");
    }
    let mut eval_rng = ChaCha12Rng::seed_from_u64(500);
    let mut base_rng = ChaCha12Rng::seed_from_u64(501);
    let mut random = RandomPolicy::for_model(model.as_ref(), base_rng.clone());
    let baseline = spce_bound(
        model.as_ref(),
        &mut random,
        config.horizon,
        4095,
        256,
        &mut eval_rng,
    )
    .unwrap();
    let _ = &mut base_rng;
    println!(
        "random baseline {:.4} +/- {:.4}; margin {:.4}",
        baseline.value,
        baseline.std_error,
        outputs.final_eval.value - baseline.value
    );
}

fn posterior_box(tag: &str, budget: u64, theta0: &[f64], seed: u64) {
    let t0 = Instant::now();
    let model = models::build(tag).unwrap();
    let mut config = TrainerConfig::for_model(tag);
    config.total_budget = budget;
    config.eval_every = 20_000;
    config.seed = seed;
    let out = out_dir(&format!("{tag}-{budget}-{seed}"));
    let outputs = train(
        model.as_ref(),
        &config,
        boed_core::estimators::RewardKind::Dense,
        &out,
    )
    .unwrap();
    println!(
        "{tag} budget {budget}: final {:.4} +/- {:.4} in {:?}",
        outputs.final_eval.value,
        outputs.final_eval.std_error,
        t0.elapsed()
    );
    let ckpt = Checkpoint::load(&outputs.checkpoint_path).unwrap();
    let mut policy = ckpt.restore_policy(model.as_ref()).unwrap();
    let critic = ckpt.restore_critic(model.as_ref()).unwrap();
    let dim = model.param_dim();
    let mut hits = 0;
    for k in 0..10u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(9000 + k);
        let mut latent = model.init_latent(theta0, &mut rng);
        let mut history = History::new(config.horizon, model.design_dim(), model.obs_dim());
        for _ in 0..config.horizon {
            let design = policy.propose(&history).unwrap();
            let obs = model
                .simulate(theta0, &design, &mut latent, &mut rng)
                .unwrap();
            history.push(&design, &obs).unwrap();
        }
        let mut grid_rng = ChaCha12Rng::seed_from_u64(9100 + k);
        let post = posterior_estimate(&history, &critic, model.as_ref(), 2000, &mut grid_rng).unwrap();
        let mean = post.weighted_mean();
        let mut mean_in = true;
        let mut truth_in = true;
        let mut boxes = String::new();
        for d in 0..dim {
            let lo = post.weighted_quantile(d, 0.25);
            let hi = post.weighted_quantile(d, 0.75);
            mean_in &= lo <= mean[d] && mean[d] <= hi;
            truth_in &= lo <= theta0[d] && theta0[d] <= hi;
            boxes.push_str(&format!(" [{lo:.3},{hi:.3}]"));
        }
        let pass = mean_in && truth_in;
        hits += pass as u32;
        println!(
            "  seed {k}: mean {:?} boxes{boxes} mean_in {mean_in} truth_in {truth_in} -> {}",
            mean.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            if pass { "PASS" } else { "fail" }
        );
    }
    println!("{tag}: {hits}/10 conjunctive hits (theta0 {theta0:?})");
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    match args.get(1).map(String::as_str) {
        Some("whiten") => {
            whiten_probe("location_finding", 10);
            whiten_probe("sir", 8);
            whiten_probe("cartpole", 8);
        }
        Some("lf") => {
            let budget = args
                .get(2)
                .and_then(|s| s.parse().ok())
                .unwrap_or(120_000u64);
            lf_run("dense", budget, 42);
        }
        Some("lf-sparse") => {
            let budget = args
                .get(2)
                .and_then(|s| s.parse().ok())
                .unwrap_or(120_000u64);
            lf_run("sparse", budget, 42);
        }
        Some("sir") => {
            let budget = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(60_000u64);
            posterior_box("sir", budget, &[0.924, 0.073], 43);
        }
        Some("cartpole") => {
            let budget = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(60_000u64);
            posterior_box("cartpole", budget, &[0.037, 1.02], 44);
        }
        other => {
            eprintln!("unknown variant {other:?}");
        }
    }
}
