//! Contrastive information bounds, reward shaping, and the self-normalized
//! posterior estimator.
//!
//! Everything runs in log space with max-subtracted log-sum-exp; likelihood
//! products over long experiments underflow otherwise. Bound estimates carry
//! their Monte-Carlo standard error so callers can build tolerance tests.

use std::fmt;

use crate::env::{self, History, ThetaBatch};
use crate::error::CoreError;
use crate::model::{gaussian_logpdf, Model};
use crate::models::LinearGaussian;
use crate::policy::DesignPolicy;
use boed_nn::logsumexp;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Which contrastive bound a [`BoundEstimate`] reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundKind {
    #[serde(rename = "sPCE", alias = "spce")]
    Spce,
    #[serde(rename = "sNMC", alias = "snmc")]
    Snmc,
    #[serde(rename = "InfoNCE", alias = "infonce")]
    InfoNce,
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BoundKind::Spce => "sPCE",
            BoundKind::Snmc => "sNMC",
            BoundKind::InfoNce => "InfoNCE",
        };
        f.write_str(s)
    }
}

/// Monte-Carlo estimate of an information bound, in nats.
#[derive(Debug, Clone, Serialize)]
pub struct BoundEstimate {
    pub value: f64,
    pub std_error: f64,
    pub contrastives: usize,
    pub rollouts: usize,
    pub kind: BoundKind,
}

impl BoundEstimate {
    pub fn from_values(values: &[f64], contrastives: usize, kind: BoundKind) -> Self {
        let (value, std_error) = mean_and_std_error(values);
        BoundEstimate {
            value,
            std_error,
            contrastives,
            rollouts: values.len(),
            kind,
        }
    }
}

/// Reward shaping served to the policy learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Sparse,
    Dense,
}

/// Scores (history, parameter) pairs. Implemented by the learned critic and
/// by the likelihood-based optimal critic.
pub trait Critic {
    fn score(&self, history: &History, theta: &[f64]) -> Result<f64, CoreError>;

    /// Scores one history against every row of a parameter batch.
    fn score_batch(&self, history: &History, thetas: &ThetaBatch) -> Result<Vec<f64>, CoreError> {
        (0..thetas.count())
            .map(|i| self.score(history, thetas.row(i)))
            .collect()
    }
}

/// Contrastive score from raw critic outputs: `U_0` against the softmax
/// denominator over all `L + 1` scores.
pub fn g_from_scores(scores: &[f64]) -> Result<f64, CoreError> {
    if scores.len() < 2 {
        return Err(CoreError::contract(
            "a contrastive score needs the ground-truth row plus at least one negative",
        ));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(CoreError::numeric(format!(
            "critic score {i} of {} is {}",
            scores.len(),
            scores[i]
        )));
    }
    Ok(scores[0] - logsumexp(scores) + (scores.len() as f64).ln())
}

/// The information score `g(h, U; L)` of a history under a critic.
///
/// The empty history scores 0 by definition, without evaluating the critic.
pub fn g_score(
    history: &History,
    thetas: &ThetaBatch,
    critic: &dyn Critic,
) -> Result<f64, CoreError> {
    if history.is_empty() {
        return Ok(0.0);
    }
    let scores = critic.score_batch(history, thetas)?;
    if scores.len() != thetas.count() {
        return Err(CoreError::contract(format!(
            "critic returned {} scores for {} parameter rows",
            scores.len(),
            thetas.count()
        )));
    }
    g_from_scores(&scores)
}

/// A prefix chain `h_0..h_T`: starts empty, grows one pair per entry, and
/// every entry extends the previous one bit-for-bit.
fn validate_history_chain(chain: &[History]) -> Result<(), CoreError> {
    let first = chain
        .first()
        .ok_or_else(|| CoreError::contract("empty history chain"))?;
    if !first.is_empty() {
        return Err(CoreError::contract(
            "a reward chain must start at the empty history",
        ));
    }
    for (t, pair) in chain.windows(2).enumerate() {
        let (prev, next) = (&pair[0], &pair[1]);
        if next.design_dim() != prev.design_dim() || next.obs_dim() != prev.obs_dim() {
            return Err(CoreError::contract(format!(
                "history chain changes shape at step {}",
                t + 1
            )));
        }
        if next.len() != prev.len() + 1 {
            return Err(CoreError::contract(format!(
                "history chain must grow one pair per step, got {} then {}",
                prev.len(),
                next.len()
            )));
        }
        let kept = prev.len() * (prev.design_dim() + prev.obs_dim());
        if next.raw()[..kept] != prev.raw()[..kept] {
            return Err(CoreError::contract(format!(
                "history at step {} does not extend its predecessor",
                t + 1
            )));
        }
    }
    Ok(())
}

/// Per-step rewards `r_t = g(h_t) - g(h_{t-1})`; the sum telescopes to
/// `g(h_T)`.
pub fn dense_rewards(
    chain: &[History],
    thetas: &ThetaBatch,
    critic: &dyn Critic,
) -> Result<Vec<f64>, CoreError> {
    validate_history_chain(chain)?;
    let mut rewards = Vec::with_capacity(chain.len() - 1);
    let mut prev_g = 0.0;
    for h in &chain[1..] {
        let g = g_score(h, thetas, critic)?;
        rewards.push(g - prev_g);
        prev_g = g;
    }
    Ok(rewards)
}

/// Terminal-only rewards: zeros except the final entry `g(h_T)`.
pub fn sparse_rewards(
    chain: &[History],
    thetas: &ThetaBatch,
    critic: &dyn Critic,
) -> Result<Vec<f64>, CoreError> {
    validate_history_chain(chain)?;
    let steps = chain.len() - 1;
    if steps == 0 {
        return Ok(Vec::new());
    }
    let mut rewards = vec![0.0; steps];
    rewards[steps - 1] = g_score(chain.last().unwrap(), thetas, critic)?;
    Ok(rewards)
}

/// The critic that attains the InfoNCE optimum: the model log-likelihood
/// plus an arbitrary history-only offset, which cancels in the softmax.
pub struct OptimalCritic<'a> {
    model: &'a dyn Model,
    offset: Box<dyn Fn(&History) -> f64 + Send + Sync>,
}

impl<'a> OptimalCritic<'a> {
    pub fn new(model: &'a dyn Model) -> Result<Self, CoreError> {
        Self::with_offset(model, Box::new(|_| 0.0))
    }

    pub fn with_offset(
        model: &'a dyn Model,
        offset: Box<dyn Fn(&History) -> f64 + Send + Sync>,
    ) -> Result<Self, CoreError> {
        if !model.has_likelihood() {
            return Err(CoreError::Unsupported {
                model: model.name().to_string(),
                capability: "log_likelihood".to_string(),
            });
        }
        Ok(OptimalCritic { model, offset })
    }
}

impl Critic for OptimalCritic<'_> {
    fn score(&self, history: &History, theta: &[f64]) -> Result<f64, CoreError> {
        Ok(self.model.log_likelihood(theta, history)? + (self.offset)(history))
    }
}

/// Runs `rollouts` full experiments under `policy`, each with its own
/// ground truth and `l` contrastive prior draws.
pub fn generate_rollouts(
    model: &dyn Model,
    policy: &mut dyn DesignPolicy,
    horizon: usize,
    l: usize,
    rollouts: usize,
    rng: &mut dyn Rng,
) -> Result<Vec<(History, ThetaBatch)>, CoreError> {
    if horizon == 0 || rollouts == 0 {
        return Err(CoreError::contract(
            "rollout generation needs a positive horizon and rollout count",
        ));
    }
    let mut out = Vec::with_capacity(rollouts);
    for _ in 0..rollouts {
        let mut state = env::reset(model, horizon, l, rng)?;
        while !state.done {
            let design = policy.propose(&state.history)?;
            env::step(&mut state, &design, model, &mut |_, _| Ok(0.0), rng)?;
        }
        out.push((state.history, state.thetas));
    }
    Ok(out)
}

/// Worker-thread count for likelihood matrices, from `BOED_THREADS`.
///
/// Defaults to 1. Results are identical for every setting: the matrix rows
/// are split over threads but each row is a pure function of its rollout.
pub fn configured_threads() -> usize {
    std::env::var("BOED_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
        .min(64)
}

/// `matrix[i][l] = log p(h_i | theta_l)` for every rollout and parameter row.
pub fn loglik_matrix(
    model: &dyn Model,
    rollouts: &[(History, ThetaBatch)],
    threads: usize,
) -> Result<Vec<Vec<f64>>, CoreError> {
    let row = |(history, thetas): &(History, ThetaBatch)| -> Result<Vec<f64>, CoreError> {
        (0..thetas.count())
            .map(|i| model.log_likelihood(thetas.row(i), history))
            .collect()
    };
    if threads <= 1 || rollouts.len() < 2 {
        return rollouts.iter().map(row).collect();
    }
    let chunk = rollouts.len().div_ceil(threads.min(rollouts.len()));
    std::thread::scope(|scope| {
        let row = &row;
        let handles: Vec<_> = rollouts
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(row).collect::<Result<Vec<_>, _>>()))
            .collect();
        let mut rows = Vec::with_capacity(rollouts.len());
        for handle in handles {
            rows.extend(handle.join().expect("likelihood worker panicked")?);
        }
        Ok(rows)
    })
}

/// Lower-bound contrast of one rollout: the ground-truth log-likelihood
/// against the average over all `L + 1` rows.
pub fn spce_from_logliks(row: &[f64]) -> f64 {
    row[0] - logsumexp(row) + (row.len() as f64).ln()
}

/// Upper-bound contrast: the denominator averages only the `L` negatives.
///
/// Dropping the ground-truth term from the average can push a single
/// rollout's value below its lower-bound twin, but never by more than
/// `ln(1 + 1/L)`; in expectation the two sandwich the information gain.
pub fn snmc_from_logliks(row: &[f64]) -> f64 {
    row[0] - logsumexp(&row[1..]) + ((row.len() - 1) as f64).ln()
}

fn require_likelihood(model: &dyn Model) -> Result<(), CoreError> {
    if model.has_likelihood() {
        Ok(())
    } else {
        Err(CoreError::Unsupported {
            model: model.name().to_string(),
            capability: "log_likelihood".to_string(),
        })
    }
}

fn finite_values(values: Vec<f64>, what: &str) -> Result<Vec<f64>, CoreError> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(values),
        Some(i) => Err(CoreError::numeric(format!(
            "{what} produced a non-finite value at rollout {i}"
        ))),
    }
}

/// Sequential prior contrastive estimate: a lower bound on the total
/// information gain of the policy's experiments.
pub fn spce_bound(
    model: &dyn Model,
    policy: &mut dyn DesignPolicy,
    horizon: usize,
    l: usize,
    rollouts: usize,
    rng: &mut dyn Rng,
) -> Result<BoundEstimate, CoreError> {
    require_likelihood(model)?;
    let rolls = generate_rollouts(model, policy, horizon, l, rollouts, rng)?;
    let matrix = loglik_matrix(model, &rolls, configured_threads())?;
    let values: Vec<f64> = matrix.iter().map(|r| spce_from_logliks(r)).collect();
    let values = finite_values(values, "sPCE")?;
    Ok(BoundEstimate::from_values(&values, l, BoundKind::Spce))
}

/// Sequential nested Monte-Carlo estimate: the matching upper bound.
pub fn snmc_bound(
    model: &dyn Model,
    policy: &mut dyn DesignPolicy,
    horizon: usize,
    l: usize,
    rollouts: usize,
    rng: &mut dyn Rng,
) -> Result<BoundEstimate, CoreError> {
    require_likelihood(model)?;
    let rolls = generate_rollouts(model, policy, horizon, l, rollouts, rng)?;
    let matrix = loglik_matrix(model, &rolls, configured_threads())?;
    let values: Vec<f64> = matrix.iter().map(|r| snmc_from_logliks(r)).collect();
    let values = finite_values(values, "sNMC")?;
    Ok(BoundEstimate::from_values(&values, l, BoundKind::Snmc))
}

/// Critic-based lower bound: mean `g` score over fresh rollouts and fresh
/// contrastive batches. Works on likelihood-free models.
pub fn infonce_bound(
    model: &dyn Model,
    policy: &mut dyn DesignPolicy,
    critic: &dyn Critic,
    horizon: usize,
    l: usize,
    rollouts: usize,
    rng: &mut dyn Rng,
) -> Result<BoundEstimate, CoreError> {
    let rolls = generate_rollouts(model, policy, horizon, l, rollouts, rng)?;
    let values: Vec<f64> = rolls
        .iter()
        .map(|(h, thetas)| g_score(h, thetas, critic))
        .collect::<Result<_, _>>()?;
    Ok(BoundEstimate::from_values(&values, l, BoundKind::InfoNce))
}

/// A nested Monte-Carlo information-gain estimate.
#[derive(Debug, Clone, Copy)]
pub struct EigEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Total information gain versus the sum of per-step marginal gains.
#[derive(Debug, Clone)]
pub struct DecompositionCheck {
    pub total: EigEstimate,
    pub marginals: Vec<EigEstimate>,
    /// Mean over outer samples of (total - sum of marginals).
    pub diff: f64,
    /// Standard error of the paired difference.
    pub diff_std_error: f64,
}

/// Nested Monte-Carlo check that the total information gain of a fixed
/// design sequence equals the sum of the expected per-step gains.
///
/// Each estimate draws its own inner contrast batch (prior draws for the
/// total and the first step, conjugate-posterior draws afterwards). Sharing
/// one self-normalized batch across the steps would telescope algebraically
/// into the total estimator and make the check vacuous.
pub fn marginal_eig_decomposition_check(
    model: &LinearGaussian,
    designs: &[f64],
    outer: usize,
    inner: usize,
    rng: &mut dyn Rng,
) -> DecompositionCheck {
    assert!(!designs.is_empty() && outer >= 2 && inner >= 1);
    let prior_var = model.prior_var();
    let noise_var = model.noise_var();
    let prior_std = prior_var.sqrt();
    let noise_std = noise_var.sqrt();
    let steps = designs.len();
    let ln_inner = (inner as f64).ln();
    let draw = |rng: &mut dyn Rng| -> f64 { StandardNormal.sample(rng) };

    let mut totals = Vec::with_capacity(outer);
    let mut marginals = vec![Vec::with_capacity(outer); steps];
    let mut inner_scratch = vec![0.0f64; inner];

    for _ in 0..outer {
        let theta = prior_std * draw(rng);
        let ys: Vec<f64> = designs
            .iter()
            .map(|xi| theta * xi + noise_std * draw(rng))
            .collect();

        let joint = |th: f64| -> f64 {
            designs
                .iter()
                .zip(&ys)
                .map(|(xi, y)| gaussian_logpdf(*y, th * xi, noise_std))
                .sum()
        };
        for slot in inner_scratch.iter_mut() {
            *slot = joint(prior_std * draw(rng));
        }
        totals.push(joint(theta) - (logsumexp(&inner_scratch) - ln_inner));

        // Running conjugate posterior over the prefix before each step.
        let mut precision = 1.0 / prior_var;
        let mut weighted = 0.0;
        for (t, (xi, y)) in designs.iter().zip(&ys).enumerate() {
            let post_var = 1.0 / precision;
            let post_mean = weighted * post_var;
            let post_std = post_var.sqrt();
            for slot in inner_scratch.iter_mut() {
                let th = post_mean + post_std * draw(rng);
                *slot = gaussian_logpdf(*y, th * xi, noise_std);
            }
            let numerator = gaussian_logpdf(*y, theta * xi, noise_std);
            marginals[t].push(numerator - (logsumexp(&inner_scratch) - ln_inner));
            precision += xi * xi / noise_var;
            weighted += xi * y / noise_var;
        }
    }

    let diffs: Vec<f64> = (0..outer)
        .map(|i| totals[i] - marginals.iter().map(|m| m[i]).sum::<f64>())
        .collect();
    let (diff, diff_std_error) = mean_and_std_error(&diffs);
    let (tv, ts) = mean_and_std_error(&totals);
    DecompositionCheck {
        total: EigEstimate {
            value: tv,
            std_error: ts,
        },
        marginals: marginals
            .iter()
            .map(|m| {
                let (v, s) = mean_and_std_error(m);
                EigEstimate {
                    value: v,
                    std_error: s,
                }
            })
            .collect(),
        diff,
        diff_std_error,
    }
}

/// Prior samples reweighted by the critic: a self-normalized importance
/// estimate of the parameter posterior.
#[derive(Debug, Clone)]
pub struct PosteriorEstimate {
    pub samples: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl PosteriorEstimate {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn param_dim(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn weighted_mean(&self) -> Vec<f64> {
        let dim = self.param_dim();
        let mut mean = vec![0.0; dim];
        for (theta, w) in self.samples.iter().zip(&self.weights) {
            for (m, x) in mean.iter_mut().zip(theta) {
                *m += w * x;
            }
        }
        mean
    }

    /// Smallest sample value at which the cumulative weight reaches `q`.
    pub fn weighted_quantile(&self, dim: usize, q: f64) -> f64 {
        assert!((0.0..=1.0).contains(&q) && dim < self.param_dim());
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.samples[a][dim]
                .partial_cmp(&self.samples[b][dim])
                .unwrap()
        });
        let mut cum = 0.0;
        for &i in &order {
            cum += self.weights[i];
            if cum >= q {
                return self.samples[i][dim];
            }
        }
        self.samples[*order.last().unwrap()][dim]
    }

    /// Delta-method standard error of the weighted mean along `dim`.
    pub fn mean_std_error(&self, dim: usize) -> f64 {
        let mean = self.weighted_mean()[dim];
        self.samples
            .iter()
            .zip(&self.weights)
            .map(|(theta, w)| (w * (theta[dim] - mean)).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Draws a parameter grid from the prior and reweights it by the critic.
pub fn posterior_estimate(
    history: &History,
    critic: &dyn Critic,
    model: &dyn Model,
    grid_size: usize,
    rng: &mut dyn Rng,
) -> Result<PosteriorEstimate, CoreError> {
    if grid_size < 1 {
        return Err(CoreError::contract("posterior grid must not be empty"));
    }
    let samples: Vec<Vec<f64>> = (0..grid_size).map(|_| model.sample_theta(rng)).collect();
    let scores: Vec<f64> = samples
        .iter()
        .map(|theta| critic.score(history, theta))
        .collect::<Result<_, _>>()?;
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(CoreError::numeric(format!(
            "posterior weight {i} is NaN"
        )));
    }
    let lse = logsumexp(&scores);
    if !lse.is_finite() {
        return Err(CoreError::numeric(
            "all posterior weights underflowed; critic scores are degenerate",
        ));
    }
    let mut weights: Vec<f64> = scores.iter().map(|s| (s - lse).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    Ok(PosteriorEstimate { samples, weights })
}

fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    assert!(!values.is_empty());
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
