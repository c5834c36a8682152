//! TD3 training of the design policy over the experiment POMDP.
//!
//! The loop advances a synchronized batch of environments, scores every
//! completed trajectory with the slow-moving target critic to produce
//! dense or sparse rewards, pushes the resulting transitions into replay,
//! and interleaves TD3 updates of the policy and value networks with
//! contrastive updates of the critic on the freshest rollout batch.
//! Rewards and bootstrap targets never read the critic being trained.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::critic::{target_sync, train_critic_batch, CriticNet, TargetCritic};
use crate::env::{self, History, ThetaBatch, TrajectoryState};
use crate::error::CoreError;
use crate::estimators::{
    g_score, infonce_bound, spce_bound, BoundEstimate, Critic, RewardKind,
};
use crate::model::Model;
use crate::policy::{DesignPolicy, NeuralPolicy, TwinQ};
use crate::replay::{ReplayBuffer, Transition};
use boed_nn::{soft_update, Adam64, Graph64};

/// Hyperparameters for one training run. Noise fields are fractions of the
/// design-box halfwidth; the raw standard deviations are derived per model.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub horizon: usize,
    pub total_budget: u64,
    pub parallel_envs: usize,
    pub initial_random_timesteps: u64,
    pub lr: f64,
    pub batch: usize,
    pub hidden: Vec<usize>,
    pub updates_per_timestep: usize,
    pub policy_update_frequency: u64,
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub exploration_noise: f64,
    pub gamma: f64,
    pub tau: f64,
    pub train_l: usize,
    pub replay_capacity: usize,
    pub critic_lr: f64,
    pub critic_batch: usize,
    pub critic_updates_per_timestep: usize,
    pub eval_every: u64,
    pub eval_rollouts: usize,
    pub eval_l: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            horizon: 10,
            total_budget: 100_000,
            parallel_envs: 256,
            initial_random_timesteps: 10_000,
            lr: 3e-4,
            batch: 256,
            hidden: vec![256, 256],
            updates_per_timestep: 10,
            policy_update_frequency: 2,
            policy_noise: 0.2,
            noise_clip: 0.5,
            exploration_noise: 0.1,
            gamma: 0.99,
            tau: 0.005,
            train_l: 255,
            replay_capacity: 1_000_000,
            critic_lr: 3e-4,
            critic_batch: 16,
            critic_updates_per_timestep: 2,
            eval_every: 2_000,
            eval_rollouts: 256,
            eval_l: 4095,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    /// Defaults with the per-model update rate.
    pub fn for_model(name: &str) -> Self {
        let updates = match name {
            "sir" | "cartpole" => 8,
            _ => 10,
        };
        TrainerConfig {
            updates_per_timestep: updates,
            ..TrainerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        fn positive(value: f64, key: &str) -> Result<(), CoreError> {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(CoreError::config(format!("{key} must be positive, got {value}")))
            }
        }
        fn at_least_one(value: u64, key: &str) -> Result<(), CoreError> {
            if value >= 1 {
                Ok(())
            } else {
                Err(CoreError::config(format!("{key} must be at least 1, got {value}")))
            }
        }
        at_least_one(self.horizon as u64, "horizon")?;
        at_least_one(self.total_budget, "total_budget")?;
        at_least_one(self.parallel_envs as u64, "parallel_envs")?;
        at_least_one(self.batch as u64, "batch")?;
        at_least_one(self.updates_per_timestep as u64, "updates_per_timestep")?;
        at_least_one(self.policy_update_frequency, "policy_update_frequency")?;
        at_least_one(self.train_l as u64, "train_l")?;
        at_least_one(self.replay_capacity as u64, "replay_capacity")?;
        at_least_one(self.critic_batch as u64, "critic_batch")?;
        at_least_one(
            self.critic_updates_per_timestep as u64,
            "critic_updates_per_timestep",
        )?;
        at_least_one(self.eval_every, "eval_every")?;
        at_least_one(self.eval_rollouts as u64, "eval_rollouts")?;
        at_least_one(self.eval_l as u64, "eval_l")?;
        for (i, &h) in self.hidden.iter().enumerate() {
            at_least_one(h as u64, &format!("hidden[{i}]"))?;
        }
        positive(self.lr, "lr")?;
        positive(self.critic_lr, "critic_lr")?;
        positive(self.tau, "tau")?;
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(CoreError::config(format!(
                "gamma must be in (0, 1], got {}",
                self.gamma
            )));
        }
        for (value, key) in [
            (self.policy_noise, "policy_noise"),
            (self.noise_clip, "noise_clip"),
            (self.exploration_noise, "exploration_noise"),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(CoreError::config(format!(
                    "{key} must be finite and >= 0, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// Policy proposal plus exploration noise, clamped to the design box.
/// `noise` is a raw standard deviation shared by all design dimensions.
pub fn select_action(
    policy: &NeuralPolicy,
    history: &History,
    noise: f64,
    rng: &mut dyn Rng,
) -> Result<Vec<f64>, CoreError> {
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(CoreError::contract(format!(
            "exploration noise must be finite and >= 0, got {noise}"
        )));
    }
    let mut design = policy.infer_batch(&history.encode(), 1)?;
    if noise > 0.0 {
        let draw = |rng: &mut dyn Rng| -> f64 { StandardNormal.sample(rng) };
        for (x, &(lo, hi)) in design.iter_mut().zip(policy.bounds()) {
            *x = (*x + noise * draw(rng)).clamp(lo, hi);
        }
    }
    Ok(design)
}

/// The TD3 learner: policy, twin value nets, their slow targets, and the
/// optimizers over each.
pub struct Td3 {
    pub policy: NeuralPolicy,
    pub q: TwinQ,
    pub(crate) policy_target: NeuralPolicy,
    pub(crate) q_target: TwinQ,
    pub(crate) policy_opt: Adam64,
    pub(crate) q_opt: Adam64,
    bounds: Vec<(f64, f64)>,
    enc_width: usize,
}

impl Td3 {
    pub fn new(
        model: &dyn Model,
        config: &TrainerConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, CoreError> {
        config.validate()?;
        let policy = NeuralPolicy::new(model, config.horizon, &config.hidden, rng);
        let q = TwinQ::new(model, config.horizon, &config.hidden, rng);
        let policy_target = policy.clone();
        let q_target = q.clone();
        Ok(Td3 {
            policy,
            q,
            policy_target,
            q_target,
            policy_opt: Adam64::new(config.lr),
            q_opt: Adam64::new(config.lr),
            bounds: model.design_bounds().to_vec(),
            enc_width: History::encoding_width(config.horizon, model.design_dim(), model.obs_dim()),
        })
    }

    pub fn policy_target(&self) -> &NeuralPolicy {
        &self.policy_target
    }

    pub fn q_target(&self) -> &TwinQ {
        &self.q_target
    }

    pub(crate) fn policy_target_mut(&mut self) -> &mut NeuralPolicy {
        &mut self.policy_target
    }

    pub(crate) fn q_target_mut(&mut self) -> &mut TwinQ {
        &mut self.q_target
    }

    fn halfwidths(&self) -> Vec<f64> {
        self.bounds.iter().map(|&(lo, hi)| 0.5 * (hi - lo)).collect()
    }
}

/// Bootstrap targets `y = r + γ·(1−done)·min(Q₁', Q₂')(h', π'(h') + ε)`
/// for a sampled batch, with smoothing noise `ε` drawn per design entry in
/// transition-major order and clipped before the box clamp.
pub fn td3_targets(
    td3: &Td3,
    transitions: &[&Transition],
    config: &TrainerConfig,
    rng: &mut dyn Rng,
) -> Result<Vec<f64>, CoreError> {
    let rows = transitions.len();
    let d = td3.bounds.len();
    let halfwidths = td3.halfwidths();
    let mut next_enc = Vec::with_capacity(rows * td3.enc_width);
    for t in transitions {
        next_enc.extend(t.encode_next());
    }
    let mut next_action = td3.policy_target.infer_batch(&next_enc, rows)?;
    if config.policy_noise > 0.0 {
        let draw = |rng: &mut dyn Rng| -> f64 { StandardNormal.sample(rng) };
        for (k, a) in next_action.iter_mut().enumerate() {
            let half = halfwidths[k % d];
            let sigma = config.policy_noise * half;
            let clip = config.noise_clip * half;
            let eps = (sigma * draw(rng)).clamp(-clip, clip);
            let (lo, hi) = td3.bounds[k % d];
            *a = (*a + eps).clamp(lo, hi);
        }
    }
    let mut q_in = Vec::with_capacity(rows * (td3.enc_width + d));
    for (i, t) in transitions.iter().enumerate() {
        q_in.extend(t.encode_next());
        q_in.extend_from_slice(&next_action[i * d..(i + 1) * d]);
    }
    let q_min = td3.q_target.infer_min(&q_in, rows)?;
    Ok(transitions
        .iter()
        .zip(&q_min)
        .map(|(t, &q)| {
            let mask = if t.done() { 0.0 } else { 1.0 };
            t.reward() + config.gamma * mask * q
        })
        .collect())
}

/// One TD3 step: regress both value nets to the bootstrap targets, and on
/// even `step_index` also ascend the policy on Q₁ and soft-update the
/// policy/value targets. Draw order: batch indices first, then smoothing
/// noise. Returns `(q_loss, policy_loss)`; the policy loss is present only
/// on delayed-update steps.
pub fn td3_update(
    td3: &mut Td3,
    buffer: &ReplayBuffer,
    config: &TrainerConfig,
    step_index: u64,
    rng: &mut dyn Rng,
) -> Result<(f64, Option<f64>), CoreError> {
    if buffer.is_empty() {
        return Err(CoreError::contract("TD3 update with an empty replay buffer"));
    }
    let batch = buffer.sample(config.batch, rng)?;
    let rows = batch.len();
    let d = td3.bounds.len();
    let targets = td3_targets(td3, &batch, config, rng)?;

    let mut prev_enc = Vec::with_capacity(rows * td3.enc_width);
    let mut q_in = Vec::with_capacity(rows * (td3.enc_width + d));
    for t in &batch {
        let enc = t.encode_prev();
        q_in.extend_from_slice(&enc);
        q_in.extend_from_slice(t.design());
        prev_enc.extend(enc);
    }

    let q_loss = {
        let mut g = Graph64::new();
        let x = g.leaf_slice(rows, td3.enc_width + d, &q_in)?;
        let y = g.leaf(rows, 1, targets.clone())?;
        let (v1, v2) = td3.q.bind(&mut g);
        let q1 = td3.q.forward_q1(&mut g, &v1, x)?;
        let q2 = td3.q.forward_q2(&mut g, &v2, x)?;
        let d1 = g.sub(q1, y)?;
        let d2 = g.sub(q2, y)?;
        let s1 = g.square(d1);
        let s2 = g.square(d2);
        let m1 = g.mean_all(s1);
        let m2 = g.mean_all(s2);
        let loss = g.add(m1, m2)?;
        for p in td3.q.params_mut() {
            p.zero_grad();
        }
        g.backward(loss)?;
        td3.q.collect_grads(&g, &v1, &v2);
        td3.q_opt.step(&mut td3.q.params_mut())?;
        g.scalar_value(loss)
    };
    if !q_loss.is_finite() {
        return Err(CoreError::numeric(format!(
            "TD3 value loss is {q_loss} at update {step_index}"
        )));
    }

    let mut policy_loss = None;
    if step_index % config.policy_update_frequency == 0 {
        let loss = {
            let mut g = Graph64::new();
            let s = g.leaf_slice(rows, td3.enc_width, &prev_enc)?;
            let pv = td3.policy.bind(&mut g);
            let a = td3.policy.forward(&mut g, &pv, s)?;
            let x = g.concat_cols(&[s, a])?;
            let (v1, _v2) = td3.q.bind(&mut g);
            let q1 = td3.q.forward_q1(&mut g, &v1, x)?;
            let mean_q = g.mean_all(q1);
            let loss = g.scale(mean_q, -1.0);
            for p in td3.policy.params_mut() {
                p.zero_grad();
            }
            g.backward(loss)?;
            td3.policy.collect_grads(&g, &pv);
            td3.policy_opt.step(&mut td3.policy.params_mut())?;
            g.scalar_value(loss)
        };
        if !loss.is_finite() {
            return Err(CoreError::numeric(format!(
                "TD3 policy loss is {loss} at update {step_index}"
            )));
        }
        soft_update(
            &mut td3.policy_target.params_mut(),
            &td3.policy.params(),
            config.tau,
        )?;
        soft_update(&mut td3.q_target.params_mut(), &td3.q.params(), config.tau)?;
        policy_loss = Some(loss);
    }
    Ok((q_loss, policy_loss))
}

/// Noise-free policy evaluation: sPCE when no critic is given (the model
/// must then expose a likelihood), the critic bound otherwise.
pub fn evaluate_policy(
    policy: &mut dyn DesignPolicy,
    model: &dyn Model,
    critic: Option<&dyn Critic>,
    horizon: usize,
    l: usize,
    rollouts: usize,
    rng: &mut dyn Rng,
) -> Result<BoundEstimate, CoreError> {
    match critic {
        None => spce_bound(model, policy, horizon, l, rollouts, rng),
        Some(c) => infonce_bound(model, policy, c, horizon, l, rollouts, rng),
    }
}

/// One metrics CSV row; losses are means over the interval since the
/// previous row (NaN before the first update of a kind).
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub step: u64,
    pub q_loss: f64,
    pub policy_loss: f64,
    pub critic_loss: f64,
    pub eval_bound: f64,
    pub eval_stderr: f64,
    pub wall_clock: f64,
}

#[derive(Default)]
struct LossAccum {
    sum: f64,
    n: u64,
}

impl LossAccum {
    fn add(&mut self, x: f64) {
        self.sum += x;
        self.n += 1;
    }

    fn take_mean(&mut self) -> f64 {
        let mean = if self.n == 0 { f64::NAN } else { self.sum / self.n as f64 };
        *self = LossAccum::default();
        mean
    }
}

/// Training state: learner, critic pair, rollout environments, replay, and
/// logged metrics. [`train`] drives it end to end; tests drive it stepwise.
pub struct Trainer<'a> {
    pub(crate) model: &'a dyn Model,
    pub config: TrainerConfig,
    pub reward_kind: RewardKind,
    pub td3: Td3,
    pub critic: CriticNet,
    pub(crate) critic_opt: Adam64,
    pub target_critic: TargetCritic,
    pub(crate) buffer: ReplayBuffer,
    states: Vec<TrajectoryState>,
    last_rollouts: Vec<(History, ThetaBatch)>,
    /// `(trajectory id, g(h_T))` for the most recent completed batch,
    /// scored with the same target-critic snapshot as the stored rewards.
    pub(crate) last_completed_g: Vec<(u64, f64)>,
    pub(crate) rollout_rng: ChaCha12Rng,
    pub(crate) update_rng: ChaCha12Rng,
    pub(crate) env_steps: u64,
    pub(crate) td3_steps: u64,
    pub(crate) trajectory_counter: u64,
    pub(crate) eval_counter: u64,
    q_acc: LossAccum,
    policy_acc: LossAccum,
    critic_acc: LossAccum,
    metrics: Vec<MetricsRow>,
    started: Instant,
    exploration_sigma: f64,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: &'a dyn Model,
        config: TrainerConfig,
        reward_kind: RewardKind,
    ) -> Result<Self, CoreError> {
        config.validate()?;
        let mut init_rng = stream_rng(config.seed, 0);
        let td3 = Td3::new(model, &config, &mut init_rng)?;
        let critic = CriticNet::new(model, &mut init_rng)?;
        let target_critic = TargetCritic::new(&critic);
        let mut rollout_rng = stream_rng(config.seed, 1);
        let states = (0..config.parallel_envs)
            .map(|_| env::reset(model, config.horizon, config.train_l, &mut rollout_rng))
            .collect::<Result<Vec<_>, _>>()?;
        let halfwidth = {
            let (lo, hi) = model.design_bounds()[0];
            0.5 * (hi - lo)
        };
        Ok(Trainer {
            model,
            reward_kind,
            critic_opt: Adam64::new(config.critic_lr),
            target_critic,
            critic,
            td3,
            buffer: ReplayBuffer::new(config.replay_capacity),
            states,
            last_rollouts: Vec::new(),
            last_completed_g: Vec::new(),
            rollout_rng,
            update_rng: stream_rng(config.seed, 2),
            env_steps: 0,
            td3_steps: 0,
            trajectory_counter: 0,
            eval_counter: 0,
            q_acc: LossAccum::default(),
            policy_acc: LossAccum::default(),
            critic_acc: LossAccum::default(),
            metrics: Vec::new(),
            started: Instant::now(),
            exploration_sigma: config.exploration_noise * halfwidth,
            config,
        })
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn model_name(&self) -> &str {
        self.model.name()
    }

    pub fn metrics(&self) -> &[MetricsRow] {
        &self.metrics
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    /// Advances every environment one step and runs the due updates.
    pub fn vector_step(&mut self) -> Result<(), CoreError> {
        let explore = self.env_steps < self.config.initial_random_timesteps;
        let mut zero = |_: &History, _: &ThetaBatch| Ok(0.0);
        for state in &mut self.states {
            let design = if explore {
                self.model
                    .design_bounds()
                    .iter()
                    .map(|&(lo, hi)| self.rollout_rng.random_range(lo..hi))
                    .collect::<Vec<f64>>()
            } else {
                select_action(
                    &self.td3.policy,
                    &state.history,
                    self.exploration_sigma,
                    &mut self.rollout_rng,
                )?
            };
            env::step(state, &design, self.model, &mut zero, &mut self.rollout_rng)?;
        }
        self.env_steps += self.config.parallel_envs as u64;
        if self.states[0].done {
            self.finish_trajectories()?;
        }
        if self.env_steps >= self.config.initial_random_timesteps
            && self.buffer.len() >= self.config.batch
        {
            for _ in 0..self.config.updates_per_timestep {
                let (q_loss, policy_loss) = td3_update(
                    &mut self.td3,
                    &self.buffer,
                    &self.config,
                    self.td3_steps,
                    &mut self.update_rng,
                )?;
                self.td3_steps += 1;
                self.q_acc.add(q_loss);
                if let Some(p) = policy_loss {
                    self.policy_acc.add(p);
                }
            }
        }
        if !self.last_rollouts.is_empty() {
            for _ in 0..self.config.critic_updates_per_timestep {
                let minibatch: Vec<(History, ThetaBatch)> = (0..self.config.critic_batch)
                    .map(|_| {
                        let i = self.update_rng.random_range(0..self.last_rollouts.len());
                        self.last_rollouts[i].clone()
                    })
                    .collect();
                let objective =
                    train_critic_batch(&mut self.critic, &minibatch, &mut self.critic_opt)?;
                target_sync(&self.critic, &mut self.target_critic, self.config.tau)?;
                self.critic_acc.add(-objective);
            }
        }
        Ok(())
    }

    /// Scores every finished trajectory with the current target critic,
    /// stores its transitions, and resets the environments.
    fn finish_trajectories(&mut self) -> Result<(), CoreError> {
        self.last_completed_g.clear();
        let mut fresh = Vec::with_capacity(self.states.len());
        for state in &self.states {
            let history = &state.history;
            let thetas = &state.thetas;
            let steps = history.len();
            let prefix_g = self
                .target_critic
                .net()
                .prefix_g_scores(history, thetas)?;
            let rewards: Vec<f64> = match self.reward_kind {
                RewardKind::Dense => {
                    let mut prev = 0.0;
                    prefix_g
                        .iter()
                        .map(|&g| {
                            let r = g - prev;
                            prev = g;
                            r
                        })
                        .collect()
                }
                RewardKind::Sparse => {
                    let mut r = vec![0.0; steps];
                    r[steps - 1] = prefix_g[steps - 1];
                    r
                }
            };
            let total: f64 = rewards.iter().sum();
            let g_final = g_score(history, thetas, &self.target_critic)?;
            if (total - g_final).abs() >= 1e-6 {
                return Err(CoreError::numeric(format!(
                    "stored rewards sum to {total} but the trajectory's final \
                     contrastive score is {g_final}"
                )));
            }
            for t in 1..=steps {
                self.buffer.push(Transition::new(
                    history.prefix(t),
                    rewards[t - 1],
                    t == steps,
                    self.trajectory_counter,
                ));
            }
            self.last_completed_g.push((self.trajectory_counter, g_final));
            self.trajectory_counter += 1;
            fresh.push((history.clone(), thetas.clone()));
        }
        self.last_rollouts = fresh;
        for state in &mut self.states {
            *state = env::reset(
                self.model,
                self.config.horizon,
                self.config.train_l,
                &mut self.rollout_rng,
            )?;
        }
        Ok(())
    }

    /// Noise-free evaluation of the current policy on a fresh RNG stream:
    /// sPCE for likelihood models, the critic bound otherwise.
    pub fn evaluate(&mut self) -> Result<BoundEstimate, CoreError> {
        let mut rng = stream_rng(self.config.seed, 1000 + self.eval_counter);
        self.eval_counter += 1;
        let critic: Option<&dyn Critic> = if self.model.has_likelihood() {
            None
        } else {
            Some(&self.critic)
        };
        evaluate_policy(
            &mut self.td3.policy,
            self.model,
            critic,
            self.config.horizon,
            self.config.eval_l,
            self.config.eval_rollouts,
            &mut rng,
        )
    }

    fn eval_and_log(&mut self) -> Result<(), CoreError> {
        let estimate = self.evaluate()?;
        let row = MetricsRow {
            step: self.env_steps,
            q_loss: self.q_acc.take_mean(),
            policy_loss: self.policy_acc.take_mean(),
            critic_loss: self.critic_acc.take_mean(),
            eval_bound: estimate.value,
            eval_stderr: estimate.std_error,
            wall_clock: self.started.elapsed().as_secs_f64(),
        };
        self.metrics.push(row);
        Ok(())
    }

    /// Runs until the environment-step budget is spent, evaluating on the
    /// configured cadence and once more at the end.
    pub fn run(&mut self) -> Result<(), CoreError> {
        let mut evals_done = 0;
        while self.env_steps < self.config.total_budget {
            self.vector_step()?;
            let due = self.env_steps / self.config.eval_every;
            if due > evals_done {
                evals_done = due;
                self.eval_and_log()?;
            }
        }
        match self.metrics.last() {
            Some(row) if row.step == self.env_steps => {}
            _ => self.eval_and_log()?,
        }
        Ok(())
    }

    /// The metrics table as CSV text.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(
            "step,q-loss,policy-loss,critic-loss,eval-bound,eval-stderr,wall-clock\n",
        );
        for r in &self.metrics {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.step, r.q_loss, r.policy_loss, r.critic_loss, r.eval_bound, r.eval_stderr,
                r.wall_clock
            )
            .expect("writing to a string cannot fail");
        }
        out
    }

    /// Counters and current losses, for the abort snapshot.
    pub fn diagnostic_snapshot(&self, message: &str) -> serde_json::Value {
        serde_json::json!({
            "message": message,
            "env_steps": self.env_steps,
            "td3_steps": self.td3_steps,
            "trajectories": self.trajectory_counter,
            "last_metrics": self.metrics.last(),
            "config": &self.config,
        })
    }
}

/// Files produced by a completed training run.
pub struct TrainOutputs {
    pub final_eval: BoundEstimate,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub env_steps: u64,
}

/// Full training run: drives [`Trainer::run`], then writes the metrics CSV
/// and a checkpoint into `out_dir`. A numeric abort leaves a diagnostic
/// snapshot at `abort.json` instead.
pub fn train(
    model: &dyn Model,
    config: &TrainerConfig,
    reward_kind: RewardKind,
    out_dir: &Path,
) -> Result<TrainOutputs, CoreError> {
    std::fs::create_dir_all(out_dir)?;
    let mut trainer = Trainer::new(model, config.clone(), reward_kind)?;
    if let Err(err) = trainer.run() {
        if matches!(err, CoreError::Numeric(_)) {
            let snapshot = trainer.diagnostic_snapshot(&err.to_string());
            let path = out_dir.join("abort.json");
            std::fs::write(&path, serde_json::to_string_pretty(&snapshot)?)?;
        }
        return Err(err);
    }
    let meta = crate::checkpoint::CheckpointMeta {
        model: model.name().to_string(),
        reward: reward_kind,
        trainer: config.clone(),
    };
    let hash = crate::checkpoint::config_hash(&meta)?;
    let metrics_path = out_dir.join("metrics.csv");
    std::fs::write(
        &metrics_path,
        format!("# config_hash: {hash}\n{}", trainer.metrics_csv()),
    )?;
    let checkpoint_path = out_dir.join("checkpoint.bin");
    crate::checkpoint::Checkpoint::capture(&trainer).save(&checkpoint_path)?;
    let final_eval = trainer
        .metrics()
        .last()
        .map(|r| BoundEstimate {
            value: r.eval_bound,
            std_error: r.eval_stderr,
            contrastives: trainer.config.eval_l,
            rollouts: trainer.config.eval_rollouts,
            kind: if model.has_likelihood() {
                crate::estimators::BoundKind::Spce
            } else {
                crate::estimators::BoundKind::InfoNce
            },
        })
        .expect("run always logs at least one evaluation");
    Ok(TrainOutputs {
        final_eval,
        metrics_path,
        checkpoint_path,
        env_steps: trainer.env_steps,
    })
}
