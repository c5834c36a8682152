//! Self-check suites behind the diagnostic command.
//!
//! Two batteries: finite-difference gradient checks over every network
//! loss in the stack, and fast invariant checks of the estimators on the
//! conjugate model. Both return per-check outcomes so callers can print
//! one line each and fail loudly on regressions.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::critic::{CriticDims, CriticNet};
use crate::env::{History, ThetaBatch};
use crate::error::CoreError;
use crate::estimators::{
    dense_rewards, g_score, generate_rollouts, loglik_matrix, posterior_estimate,
    snmc_from_logliks, sparse_rewards, spce_from_logliks, Critic, OptimalCritic,
};
use crate::models;
use crate::policy::RandomPolicy;
use crate::replay::Transition;
use crate::trainer::{td3_targets, Td3, TrainerConfig};
use boed_nn::check::finite_diff_check;
use boed_nn::{Activation, AttentionPool, Graph64, Lstm, Mlp, MlpSpec, Param64};

/// Gradient checks pass below this relative error against central
/// differences.
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Central-difference step. Large enough that cancellation noise on
/// near-zero gradient coordinates stays under the metric's 1e-8 floor.
const FD_EPS: f64 = 1e-3;

/// The losses covered by [`gradient_checks`], in execution order.
pub const GRAD_CHECK_NAMES: [&str; 5] =
    ["mlp", "lstm", "attention_pool", "infonce_loss", "q_loss"];

/// One named check: what ran, what it measured, whether it passed.
pub struct CheckOutcome {
    pub name: &'static str,
    pub detail: String,
    pub passed: bool,
}

impl CheckOutcome {
    fn graded(name: &'static str, max_rel_err: f64) -> Self {
        CheckOutcome {
            name,
            detail: format!("max rel err {max_rel_err:.3e} (tolerance {GRAD_TOLERANCE:.0e})"),
            passed: max_rel_err < GRAD_TOLERANCE,
        }
    }

    fn bool(name: &'static str, passed: bool, detail: String) -> Self {
        CheckOutcome { name, detail, passed }
    }
}

fn clone_params(params: &[&Param64]) -> Vec<Param64> {
    params.iter().map(|p| (*p).clone()).collect()
}

fn copy_values(dst: &mut [&mut Param64], src: &[Param64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        d.value.copy_from_slice(&s.value);
    }
}

fn add_grads(dst: &mut [Param64], src: &[&Param64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        for (dg, &sg) in d.grad.iter_mut().zip(&s.grad) {
            *dg += sg;
        }
    }
}

/// Runs the five gradient checks. `fault` names a check whose collected
/// gradient is deliberately corrupted before comparison, so the plumbing
/// that reports failures can itself be exercised end to end.
pub fn gradient_checks(fault: Option<&str>) -> Result<Vec<CheckOutcome>, CoreError> {
    if let Some(name) = fault {
        if !GRAD_CHECK_NAMES.contains(&name) {
            return Err(CoreError::config(format!(
                "unknown fault target '{name}'; known layers: {}",
                GRAD_CHECK_NAMES.join(", ")
            )));
        }
    }
    let broken = |name: &str| fault == Some(name);
    let mut out = Vec::with_capacity(GRAD_CHECK_NAMES.len());
    out.push(check_mlp(broken("mlp"))?);
    out.push(check_lstm(broken("lstm"))?);
    out.push(check_attention(broken("attention_pool"))?);
    out.push(check_infonce(broken("infonce_loss"))?);
    out.push(check_q_loss(broken("q_loss"))?);
    Ok(out)
}

fn corrupt(params: &mut [Param64]) {
    params[0].grad[0] += 0.5;
}

fn check_mlp(fault: bool) -> Result<CheckOutcome, CoreError> {
    let mut rng = ChaCha12Rng::seed_from_u64(101);
    let net = Mlp::<f64>::new(
        &MlpSpec {
            input: 4,
            hidden: vec![6],
            output: 2,
            hidden_act: Activation::Relu,
            out_act: Activation::Tanh,
        },
        &mut rng,
    );
    let x = vec![0.3, -0.8, 1.2, 0.5, -0.4, 0.9, -1.1, 0.2, 0.7, -0.3, 0.1, 1.4];
    let mut params = clone_params(&net.params());
    let report = finite_diff_check(
        &mut params,
        |ps, want_grad| {
            let mut net = net.clone();
            copy_values(&mut net.params_mut(), ps);
            let mut g = Graph64::new();
            let v = net.bind(&mut g);
            let leaf = g.leaf_slice(3, 4, &x)?;
            let y = net.forward(&mut g, &v, leaf)?;
            let sq = g.square(y);
            let loss = g.mean_all(sq);
            g.backward(loss)?;
            if want_grad {
                net.collect_grads(&g, &v);
                add_grads(ps, &net.params());
                if fault {
                    corrupt(ps);
                }
            }
            Ok(g.scalar_value(loss))
        },
        FD_EPS,
    )?;
    Ok(CheckOutcome::graded("mlp", report.max_rel_err))
}

fn check_lstm(fault: bool) -> Result<CheckOutcome, CoreError> {
    let mut rng = ChaCha12Rng::seed_from_u64(102);
    let net = Lstm::<f64>::new(3, 5, &mut rng);
    let steps = [
        vec![0.4, -0.2, 0.9, -0.6, 0.3, 0.1],
        vec![-0.8, 0.5, 0.2, 0.7, -0.9, 0.6],
        vec![0.1, 1.1, -0.4, -0.2, 0.8, -0.5],
    ];
    let mut params = clone_params(&net.params());
    let report = finite_diff_check(
        &mut params,
        |ps, want_grad| {
            let mut net = net.clone();
            copy_values(&mut net.params_mut(), ps);
            let mut g = Graph64::new();
            let v = net.bind(&mut g);
            let xs = steps
                .iter()
                .map(|s| g.leaf_slice(2, 3, s))
                .collect::<Result<Vec<_>, _>>()?;
            let h = net.forward_sequence(&mut g, &v, &xs, 2)?;
            let sq = g.square(h);
            let loss = g.mean_all(sq);
            g.backward(loss)?;
            if want_grad {
                net.collect_grads(&g, &v);
                add_grads(ps, &net.params());
                if fault {
                    corrupt(ps);
                }
            }
            Ok(g.scalar_value(loss))
        },
        FD_EPS,
    )?;
    Ok(CheckOutcome::graded("lstm", report.max_rel_err))
}

fn check_attention(fault: bool) -> Result<CheckOutcome, CoreError> {
    let mut rng = ChaCha12Rng::seed_from_u64(103);
    let embed = Mlp::<f64>::new(&MlpSpec::relu(3, vec![6], 4), &mut rng);
    let head = Mlp::<f64>::new(&MlpSpec::relu(4, vec![4], 1), &mut rng);
    let pool = AttentionPool::new(embed, head).map_err(CoreError::Nn)?;
    let set = vec![
        0.3, -0.2, 1.1, 0.5, -0.7, 0.9, -0.1, 0.8, -1.2, 0.4, 0.6, -0.5,
    ];
    let mut params = clone_params(&pool.params());
    let report = finite_diff_check(
        &mut params,
        |ps, want_grad| {
            let mut pool = pool.clone();
            copy_values(&mut pool.params_mut(), ps);
            let mut g = Graph64::new();
            let v = pool.bind(&mut g);
            let leaf = g.leaf_slice(4, 3, &set)?;
            let pooled = pool.forward(&mut g, &v, Some(leaf))?;
            let sq = g.square(pooled);
            let loss = g.mean_all(sq);
            g.backward(loss)?;
            if want_grad {
                pool.collect_grads(&g, &v);
                add_grads(ps, &pool.params());
                if fault {
                    corrupt(ps);
                }
            }
            Ok(g.scalar_value(loss))
        },
        FD_EPS,
    )?;
    Ok(CheckOutcome::graded("attention_pool", report.max_rel_err))
}

fn check_infonce(fault: bool) -> Result<CheckOutcome, CoreError> {
    let model = models::build("linear_gaussian")?;
    // Seed picked so no relu pre-activation sits within the probe step of
    // its kink; the check is exact-gradient only away from those corners.
    let mut rng = ChaCha12Rng::seed_from_u64(105);
    let dims = CriticDims {
        embed: 3,
        theta_hidden: vec![5],
        pair_hidden: vec![4],
        head_hidden: vec![4],
    };
    let critic = CriticNet::with_dims(model.as_ref(), &dims, &mut rng)?;
    let mut policy = RandomPolicy::for_model(model.as_ref(), ChaCha12Rng::seed_from_u64(106));
    let batch = generate_rollouts(model.as_ref(), &mut policy, 2, 3, 3, &mut rng)?;
    let mut params = clone_params(&critic.params());
    let report = finite_diff_check(
        &mut params,
        |ps, want_grad| {
            let mut critic = critic.clone();
            copy_values(&mut critic.params_mut(), ps);
            let v = critic
                .infonce_loss_and_grad(&batch, want_grad)
                .map_err(|e| boed_nn::NnError::Contract(e.to_string()))?;
            if want_grad {
                add_grads(ps, &critic.params());
                if fault {
                    corrupt(ps);
                }
            }
            // The training objective is maximized; the checked loss is its
            // negation, matching the gradients the critic accumulates.
            Ok(-v)
        },
        FD_EPS,
    )?;
    Ok(CheckOutcome::graded("infonce_loss", report.max_rel_err))
}

fn check_q_loss(fault: bool) -> Result<CheckOutcome, CoreError> {
    let model = models::build("linear_gaussian")?;
    let config = TrainerConfig {
        horizon: 2,
        hidden: vec![5],
        batch: 2,
        policy_noise: 0.0,
        ..TrainerConfig::default()
    };
    let mut rng = ChaCha12Rng::seed_from_u64(106);
    let td3 = Td3::new(model.as_ref(), &config, &mut rng)?;
    let mut h = History::new(2, 1, 1);
    h.push(&[0.6], &[1.1])?;
    let ta = Transition::new(h.clone(), 0.25, false, 0);
    h.push(&[-0.4], &[0.3])?;
    let tb = Transition::new(h, -0.1, true, 0);
    let transitions = [&ta, &tb];
    // Targets depend only on the frozen target nets; fix them up front.
    let targets = td3_targets(&td3, &transitions, &config, &mut rng)?;
    let mut q_in = Vec::new();
    for t in &transitions {
        q_in.extend(t.encode_prev());
        q_in.extend_from_slice(t.design());
    }
    let width = q_in.len() / transitions.len();
    let mut params = clone_params(&td3.q.params());
    let report = finite_diff_check(
        &mut params,
        |ps, want_grad| {
            let mut q = td3.q.clone();
            copy_values(&mut q.params_mut(), ps);
            let mut g = Graph64::new();
            let x = g.leaf_slice(2, width, &q_in)?;
            let y = g.leaf(2, 1, targets.clone())?;
            let (v1, v2) = q.bind(&mut g);
            let q1 = q.forward_q1(&mut g, &v1, x)?;
            let q2 = q.forward_q2(&mut g, &v2, x)?;
            let d1 = g.sub(q1, y)?;
            let d2 = g.sub(q2, y)?;
            let s1 = g.square(d1);
            let s2 = g.square(d2);
            let m1 = g.mean_all(s1);
            let m2 = g.mean_all(s2);
            let loss = g.add(m1, m2)?;
            g.backward(loss)?;
            if want_grad {
                q.collect_grads(&g, &v1, &v2);
                add_grads(ps, &q.params());
                if fault {
                    corrupt(ps);
                }
            }
            Ok(g.scalar_value(loss))
        },
        FD_EPS,
    )?;
    Ok(CheckOutcome::graded("q_loss", report.max_rel_err))
}

struct ConstantCritic(f64);

impl Critic for ConstantCritic {
    fn score(&self, _: &History, _: &[f64]) -> Result<f64, CoreError> {
        Ok(self.0)
    }
}

/// Fast estimator invariants on the conjugate model: reward telescoping,
/// the lower/upper bound sandwich, optimal-critic equality, and posterior
/// weight normalization.
pub fn invariant_checks() -> Result<Vec<CheckOutcome>, CoreError> {
    let mut out = Vec::new();
    let lg = models::build("linear_gaussian")?;
    let mut rng = ChaCha12Rng::seed_from_u64(201);

    // Dense rewards telescope to g(h_T) and match the sparse total.
    {
        let mut policy = RandomPolicy::for_model(lg.as_ref(), ChaCha12Rng::seed_from_u64(202));
        let critic_rng = &mut ChaCha12Rng::seed_from_u64(203);
        let critic = CriticNet::new(lg.as_ref(), critic_rng)?;
        let rolls = generate_rollouts(lg.as_ref(), &mut policy, 4, 7, 100, &mut rng)?;
        let mut worst: f64 = 0.0;
        for (h, thetas) in &rolls {
            let chain: Vec<History> = (0..=h.len()).map(|t| h.prefix(t)).collect();
            let dense = dense_rewards(&chain, thetas, &critic)?;
            let sparse = sparse_rewards(&chain, thetas, &critic)?;
            let g_final = g_score(h, thetas, &critic)?;
            let dense_total: f64 = dense.iter().sum();
            let sparse_total: f64 = sparse.iter().sum();
            worst = worst
                .max((dense_total - g_final).abs())
                .max((sparse_total - g_final).abs());
        }
        out.push(CheckOutcome::bool(
            "reward_telescoping",
            worst < 1e-9,
            format!("worst |sum - g(h_T)| = {worst:.3e} over 100 trajectories"),
        ));
    }

    // Per-rollout sandwich: lower <= upper + ln(1 + 1/L), lower <= ln(L+1).
    {
        let mut policy = RandomPolicy::for_model(lg.as_ref(), ChaCha12Rng::seed_from_u64(204));
        let l = 63;
        let rolls = generate_rollouts(lg.as_ref(), &mut policy, 2, l, 400, &mut rng)?;
        let matrix = loglik_matrix(lg.as_ref(), &rolls, 1)?;
        let slack = (1.0 + 1.0 / l as f64).ln();
        let cap = ((l + 1) as f64).ln();
        let mut violation: f64 = f64::NEG_INFINITY;
        let mut cap_excess: f64 = f64::NEG_INFINITY;
        for row in &matrix {
            let lo = spce_from_logliks(row);
            let hi = snmc_from_logliks(row);
            violation = violation.max(lo - hi - slack);
            cap_excess = cap_excess.max(lo - cap);
        }
        out.push(CheckOutcome::bool(
            "bound_sandwich",
            violation <= 1e-12 && cap_excess <= 1e-12,
            format!(
                "max(lower - upper - slack) = {violation:.3e}, max(lower - cap) = {cap_excess:.3e}"
            ),
        ));
    }

    // With the exact likelihood as critic, the contrastive score equals the
    // lower-bound contrast on every shared rollout.
    {
        let lf = models::build("location_finding")?;
        let mut policy = RandomPolicy::for_model(lf.as_ref(), ChaCha12Rng::seed_from_u64(205));
        let rolls = generate_rollouts(lf.as_ref(), &mut policy, 3, 31, 64, &mut rng)?;
        let matrix = loglik_matrix(lf.as_ref(), &rolls, 1)?;
        let optimal = OptimalCritic::new(lf.as_ref())?;
        let mut worst: f64 = 0.0;
        for ((h, thetas), row) in rolls.iter().zip(&matrix) {
            let g = g_score(h, thetas, &optimal)?;
            worst = worst.max((g - spce_from_logliks(row)).abs());
        }
        out.push(CheckOutcome::bool(
            "optimal_critic_equality",
            worst < 1e-9,
            format!("worst |g - contrast| = {worst:.3e} over 64 rollouts"),
        ));
    }

    // Posterior weights: normalized always, uniform under a constant critic.
    {
        let mut policy = RandomPolicy::for_model(lg.as_ref(), ChaCha12Rng::seed_from_u64(206));
        let rolls = generate_rollouts(lg.as_ref(), &mut policy, 2, 1, 1, &mut rng)?;
        let (h, _) = &rolls[0];
        let flat = posterior_estimate(h, &ConstantCritic(3.5), lg.as_ref(), 128, &mut rng)?;
        let uniform_err = flat
            .weights
            .iter()
            .map(|w| (w - 1.0 / 128.0).abs())
            .fold(0.0f64, f64::max);
        let sharp = posterior_estimate(
            h,
            &OptimalCritic::new(lg.as_ref())?,
            lg.as_ref(),
            128,
            &mut rng,
        )?;
        let sum: f64 = sharp.weights.iter().sum();
        out.push(CheckOutcome::bool(
            "posterior_weights",
            uniform_err < 1e-12 && (sum - 1.0).abs() < 1e-9,
            format!(
                "constant-critic uniformity {uniform_err:.3e}, weight sum error {:.3e}",
                (sum - 1.0).abs()
            ),
        ));
    }

    // The empty history scores zero without consulting the critic.
    {
        let empty = History::new(4, 1, 1);
        let thetas = ThetaBatch::from_rows(&[vec![0.1], vec![-0.2]])?;
        let g = g_score(&empty, &thetas, &ConstantCritic(f64::NAN))?;
        out.push(CheckOutcome::bool(
            "empty_history_scores_zero",
            g == 0.0,
            format!("g(empty) = {g}"),
        ));
    }

    Ok(out)
}
