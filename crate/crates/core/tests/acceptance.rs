//! Release acceptance checklist. Each test prints one `ACCEPT Cn` verdict
//! line with the measured numbers behind it, then asserts the verdict.
//!
//! Run with `--nocapture` to see the verdict lines for passing criteria.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use boed_core::critic::CriticNet;
use boed_core::diag;
use boed_core::env::{self, History, ThetaBatch, TrajectoryState};
use boed_core::estimators::{
    dense_rewards, g_score, generate_rollouts, loglik_matrix, marginal_eig_decomposition_check,
    snmc_from_logliks, sparse_rewards, spce_from_logliks, Critic, OptimalCritic,
};
use boed_core::models::{self, LinearGaussian};
use boed_core::policy::{DesignPolicy, RandomPolicy};
use boed_core::trainer::{Td3, TrainerConfig};
use boed_core::Model;

const GRAD_TOLERANCE: f64 = 1e-4;
const TELESCOPE_TOLERANCE: f64 = 1e-9;
const CRITIC_MATCH_TOLERANCE: f64 = 1e-9;
const REPLAY_TOLERANCE: f64 = 1e-9;
const ANALYTIC_UNIT_EIG: f64 = 0.346_573_590_279_972_65; // 0.5 ln 2

fn verdict(criterion: &str, pass: bool, detail: &str) -> bool {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("ACCEPT {criterion}: {tag} ({detail})");
    pass
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn c01_gradient_suite() {
    let started = Instant::now();
    let outcomes = diag::gradient_checks(None).expect("gradient suite runs");
    let elapsed = started.elapsed();
    let all_pass = outcomes.iter().all(|o| o.passed);
    let within_time = elapsed.as_secs_f64() < 5.0;
    let detail = format!(
        "tolerance {GRAD_TOLERANCE:.0e}; {}; {:.2} s total",
        outcomes
            .iter()
            .map(|o| format!("{} {}", o.name, o.detail))
            .collect::<Vec<_>>()
            .join("; "),
        elapsed.as_secs_f64()
    );
    assert!(
        verdict("C1 gradient-suite", all_pass && within_time, &detail),
        "{detail}"
    );
}

#[test]
fn c02_reward_telescoping() {
    let mut worst_telescope = 0.0f64;
    let mut worst_total_gap = 0.0f64;
    let mut count = 0usize;
    for (model_name, seed) in [("location_finding", 1100u64), ("sir", 1200u64)] {
        let model = models::build(model_name).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut policy = RandomPolicy::for_model(model.as_ref(), ChaCha12Rng::seed_from_u64(seed + 1));
        for block in 0..5 {
            let mut critic_rng = ChaCha12Rng::seed_from_u64(seed + 10 + block);
            let critic = CriticNet::new(model.as_ref(), &mut critic_rng).unwrap();
            for _ in 0..100 {
                let mut state = env::reset(model.as_ref(), 5, 7, &mut rng).unwrap();
                let mut chain = vec![state.history.clone()];
                while !state.done {
                    let design = policy.propose(&state.history).unwrap();
                    env::step(&mut state, &design, model.as_ref(), &mut |_, _| Ok(0.0), &mut rng)
                        .unwrap();
                    chain.push(state.history.clone());
                }
                let dense = dense_rewards(&chain, &state.thetas, &critic).unwrap();
                let sparse = sparse_rewards(&chain, &state.thetas, &critic).unwrap();
                let final_g = g_score(chain.last().unwrap(), &state.thetas, &critic).unwrap();
                let dense_total: f64 = dense.iter().sum();
                let sparse_total: f64 = sparse.iter().sum();
                worst_telescope = worst_telescope.max((dense_total - final_g).abs());
                worst_total_gap = worst_total_gap.max((dense_total - sparse_total).abs());
                count += 1;
            }
        }
    }
    let pass = worst_telescope < TELESCOPE_TOLERANCE && worst_total_gap < TELESCOPE_TOLERANCE;
    let detail = format!(
        "{count} trajectories; max |sum dense - g(h_T)| {worst_telescope:.2e}; \
         max |dense - sparse| {worst_total_gap:.2e}; tolerance {TELESCOPE_TOLERANCE:.0e}"
    );
    assert!(verdict("C2 reward-telescoping", pass, &detail), "{detail}");
}

#[test]
fn c03_optimal_critic_equivalence() {
    let started = Instant::now();
    let model = models::build("location_finding").unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(1300);
    let mut policy = RandomPolicy::for_model(model.as_ref(), ChaCha12Rng::seed_from_u64(1301));
    let rollouts = generate_rollouts(model.as_ref(), &mut policy, 10, 255, 512, &mut rng).unwrap();
    let matrix = loglik_matrix(model.as_ref(), &rollouts, 1).unwrap();

    let plain = OptimalCritic::new(model.as_ref()).unwrap();
    let shifted = OptimalCritic::with_offset(
        model.as_ref(),
        Box::new(|h: &History| 0.25 * h.len() as f64 - 1.0),
    )
    .unwrap();

    let mut worst = 0.0f64;
    for (critic, _) in [(&plain, "zero"), (&shifted, "affine")] {
        for ((history, thetas), row) in rollouts.iter().zip(&matrix) {
            let nce = g_score(history, thetas, critic).unwrap();
            let reference = spce_from_logliks(row);
            worst = worst.max((nce - reference).abs());
        }
    }
    let elapsed = started.elapsed();
    let pass = worst < CRITIC_MATCH_TOLERANCE && elapsed.as_secs_f64() < 120.0;
    let detail = format!(
        "512 rollouts, two offsets; max per-rollout gap {worst:.2e}; \
         tolerance {CRITIC_MATCH_TOLERANCE:.0e}; {:.1} s",
        elapsed.as_secs_f64()
    );
    assert!(verdict("C3 optimal-critic", pass, &detail), "{detail}");
}

#[test]
fn c04_bound_sandwich() {
    let started = Instant::now();
    let model = LinearGaussian::standard();
    let l = 10_000usize;
    let outer = 10_000usize;
    let slack = (1.0 / l as f64).ln_1p();
    let mut rng = ChaCha12Rng::seed_from_u64(1400);
    let mut lows = Vec::with_capacity(outer);
    let mut highs = Vec::with_capacity(outer);
    let mut worst_violation = f64::NEG_INFINITY;
    for _ in 0..outer {
        let thetas = ThetaBatch::sample_prior(&model, l + 1, &mut rng).unwrap();
        let mut latent = model.init_latent(thetas.theta0(), &mut rng);
        let obs = model
            .simulate(thetas.theta0(), &[1.0], &mut latent, &mut rng)
            .unwrap();
        let mut history = History::new(1, 1, 1);
        history.push(&[1.0], &obs).unwrap();
        let row: Vec<f64> = (0..thetas.count())
            .map(|i| model.log_likelihood(thetas.row(i), &history).unwrap())
            .collect();
        let lo = spce_from_logliks(&row);
        let hi = snmc_from_logliks(&row);
        worst_violation = worst_violation.max(lo - hi - slack);
        lows.push(lo);
        highs.push(hi);
    }
    let (lo_mean, lo_se) = mean_and_se(&lows);
    let (hi_mean, hi_se) = mean_and_se(&highs);
    let elapsed = started.elapsed();
    let sandwich_ok = worst_violation <= 1e-12 && lo_mean <= hi_mean;
    let lo_ok = lo_mean >= 0.327 && lo_mean <= ANALYTIC_UNIT_EIG + 3.0 * lo_se;
    let hi_ok = hi_mean >= ANALYTIC_UNIT_EIG - 3.0 * hi_se && hi_mean <= 0.365;
    let pass = sandwich_ok && lo_ok && hi_ok && elapsed.as_secs_f64() < 300.0;
    let detail = format!(
        "lower {lo_mean:.4} +/- {lo_se:.4}, upper {hi_mean:.4} +/- {hi_se:.4}, \
         analytic {ANALYTIC_UNIT_EIG:.4}; per-rollout slack ln(1+1/L) respected \
         (max excess {worst_violation:.1e}); {:.0} s",
        elapsed.as_secs_f64()
    );
    assert!(verdict("C4 bound-sandwich", pass, &detail), "{detail}");
}

#[test]
fn c05_information_decomposition() {
    let model = LinearGaussian::standard();
    let mut rng = ChaCha12Rng::seed_from_u64(1500);
    let check = marginal_eig_decomposition_check(&model, &[1.0, 1.0], 10_000, 4096, &mut rng);
    let budget = 3.0 * check.diff_std_error;
    let pass = check.diff.abs() < budget;
    let marginal_sum: f64 = check.marginals.iter().map(|m| m.value).sum();
    let detail = format!(
        "total {:.4} +/- {:.4}; marginals sum {marginal_sum:.4}; paired gap {:.5} \
         vs 3 SE budget {budget:.5}",
        check.total.value, check.total.std_error, check.diff
    );
    assert!(verdict("C5 eig-decomposition", pass, &detail), "{detail}");
}

#[test]
fn c06_markov_and_observability() {
    let model = models::build("location_finding").unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(1600);
    let mut policy = RandomPolicy::for_model(model.as_ref(), ChaCha12Rng::seed_from_u64(1601));
    let optimal = OptimalCritic::new(model.as_ref()).unwrap();
    let mut reward = |h: &History, th: &ThetaBatch| g_score(h, th, &optimal);

    // Reference history: three steps of a five-step trajectory.
    let mut state = env::reset(model.as_ref(), 5, 7, &mut rng).unwrap();
    for _ in 0..3 {
        let design = policy.propose(&state.history).unwrap();
        env::step(&mut state, &design, model.as_ref(), &mut |_, _| Ok(0.0), &mut rng).unwrap();
    }
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = state
        .history
        .pairs()
        .map(|(d, o)| (d.to_vec(), o.to_vec()))
        .collect();

    let rebuild = |order: &[usize]| {
        let mut h = History::new(5, model.design_dim(), model.obs_dim());
        for &i in order {
            h.push(&pairs[i].0, &pairs[i].1).unwrap();
        }
        h
    };

    let probe = [0.3, -0.8];
    let mut outcomes = Vec::new();
    for history in [state.history.clone(), rebuild(&[0, 1, 2]), rebuild(&[2, 0, 1])] {
        let mut replay = TrajectoryState {
            history,
            thetas: state.thetas.clone(),
            latent: state.latent.clone(),
            done: false,
        };
        let mut step_rng = ChaCha12Rng::seed_from_u64(1700);
        let (r, _) = env::step(
            &mut replay,
            &probe,
            model.as_ref(),
            &mut reward,
            &mut step_rng,
        )
        .unwrap();
        let last = replay.history.len() - 1;
        outcomes.push((replay.history.obs_at(last).to_vec(), r));
    }
    let same_obs = outcomes[0].0 == outcomes[1].0 && outcomes[0].0 == outcomes[2].0;
    let same_reward = outcomes[0].1 == outcomes[1].1;
    let permuted_gap = (outcomes[0].1 - outcomes[2].1).abs();

    // A learned critic's pooling must not care about pair order either.
    let mut critic_rng = ChaCha12Rng::seed_from_u64(1610);
    let net = CriticNet::new(model.as_ref(), &mut critic_rng).unwrap();
    let net_gap = (net
        .score(&rebuild(&[0, 1, 2]), state.thetas.row(3))
        .unwrap()
        - net.score(&rebuild(&[2, 0, 1]), state.thetas.row(3)).unwrap())
    .abs();

    // Width audit: the policy sees exactly the history encoding and the
    // value nets see that plus a design; no input slot is left for theta.
    let config = TrainerConfig {
        hidden: vec![8],
        ..TrainerConfig::for_model("location_finding")
    };
    let mut td3_rng = ChaCha12Rng::seed_from_u64(1620);
    let td3 = Td3::new(model.as_ref(), &config, &mut td3_rng).unwrap();
    let encoding = History::encoding_width(config.horizon, model.design_dim(), model.obs_dim());
    let audit = encoding == config.horizon * (model.design_dim() + model.obs_dim()) + 1
        && td3.policy.input_dim() == encoding
        && td3.q.input_dim() == encoding + model.design_dim();

    let pass = same_obs
        && same_reward
        && permuted_gap < REPLAY_TOLERANCE
        && net_gap < REPLAY_TOLERANCE
        && audit;
    let detail = format!(
        "replayed step identical across construction orders (obs {same_obs}, reward \
         {same_reward}); permuted-prefix reward gap {permuted_gap:.1e}; pooled critic \
         gap {net_gap:.1e}; policy input {} = encoding {encoding}, value input {} = \
         encoding + design {}",
        td3.policy.input_dim(),
        td3.q.input_dim(),
        encoding + model.design_dim()
    );
    assert!(verdict("C6 markov-observability", pass, &detail), "{detail}");
}

#[test]
fn c07_dense_rewards_match_marginal_gains() {
    let started = Instant::now();
    let model = LinearGaussian::standard();
    let optimal = OptimalCritic::new(&model).unwrap();
    let l = 10_000usize;
    let outer = 10_000usize;
    let mut rng = ChaCha12Rng::seed_from_u64(1750);
    let mut per_step: [Vec<f64>; 2] = [Vec::with_capacity(outer), Vec::with_capacity(outer)];
    for _ in 0..outer {
        let thetas = ThetaBatch::sample_prior(&model, l + 1, &mut rng).unwrap();
        let mut latent = model.init_latent(thetas.theta0(), &mut rng);
        let mut history = History::new(2, 1, 1);
        let mut chain = vec![history.clone()];
        for _ in 0..2 {
            let obs = model
                .simulate(thetas.theta0(), &[1.0], &mut latent, &mut rng)
                .unwrap();
            history.push(&[1.0], &obs).unwrap();
            chain.push(history.clone());
        }
        let rewards = dense_rewards(&chain, &thetas, &optimal).unwrap();
        per_step[0].push(rewards[0]);
        per_step[1].push(rewards[1]);
    }
    let mut marg_rng = ChaCha12Rng::seed_from_u64(1751);
    let check = marginal_eig_decomposition_check(&model, &[1.0, 1.0], 10_000, 4096, &mut marg_rng);

    let mut pass = true;
    let mut parts = Vec::new();
    for t in 0..2 {
        let (dense_mean, dense_se) = mean_and_se(&per_step[t]);
        let marginal = &check.marginals[t];
        let budget = 3.0 * (dense_se.powi(2) + marginal.std_error.powi(2)).sqrt();
        let gap = (dense_mean - marginal.value).abs();
        pass &= gap < budget;
        parts.push(format!(
            "step {t}: dense {dense_mean:.4} vs marginal {:.4}, gap {gap:.4} < {budget:.4}",
            marginal.value
        ));
    }
    let elapsed = started.elapsed();
    let detail = format!("{}; {:.0} s", parts.join("; "), elapsed.as_secs_f64());
    assert!(verdict("C7 dense-vs-marginal", pass, &detail), "{detail}");
}
