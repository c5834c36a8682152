//! The learned critic, its slow-moving target copy, and the contrastive
//! training step.
//!
//! The critic scores a (history, parameter) pair as the inner product of
//! two encodings. Histories of conditionally-independent models are pooled
//! with softmax attention over per-pair embeddings, which makes the score
//! permutation-invariant in the pairs; other models use a recurrent encoder
//! that keeps order information. Rewards during policy training are always
//! computed from the target copy, so the trainer never reads the critic
//! that is being optimized.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::env::{History, ThetaBatch};
use crate::error::CoreError;
use crate::estimators::{g_from_scores, Critic, OptimalCritic};
use crate::model::Model;
use crate::policy::design_whitening;
use boed_nn::{
    soft_update, Adam64, AttentionPool64, AttentionPoolVars, Graph64, Lstm64, LstmVars, Mlp64,
    MlpSpec, MlpVars, NnError, Var,
};
use rand::Rng;

/// Layer widths for a [`CriticNet`]; the defaults are the trained size.
#[derive(Debug, Clone)]
pub struct CriticDims {
    pub embed: usize,
    pub theta_hidden: Vec<usize>,
    pub pair_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
}

impl Default for CriticDims {
    fn default() -> Self {
        CriticDims {
            embed: 32,
            theta_hidden: vec![64, 64],
            pair_hidden: vec![64],
            head_hidden: vec![32],
        }
    }
}

#[derive(Clone)]
enum HistoryEncoder {
    Pool(AttentionPool64),
    Seq { lstm: Lstm64, head: Mlp64 },
}

enum HistoryVars {
    Pool(AttentionPoolVars),
    Seq { lstm: LstmVars, head: MlpVars },
}

/// Bound graph leaves for one forward/backward pass of the critic.
pub struct CriticVars {
    history: HistoryVars,
    theta: MlpVars,
}

/// Separable critic: `score(h, theta) = <E_h(h), E_theta(theta)>`.
pub struct CriticNet {
    history: HistoryEncoder,
    theta: Mlp64,
    pair_scale: Vec<f64>,
    pair_shift: Vec<f64>,
    theta_scale: Vec<f64>,
    theta_shift: Vec<f64>,
    pair_dim: usize,
    embed_dim: usize,
    score_calls: AtomicU64,
}

impl Clone for CriticNet {
    fn clone(&self) -> Self {
        CriticNet {
            history: self.history.clone(),
            theta: self.theta.clone(),
            pair_scale: self.pair_scale.clone(),
            pair_shift: self.pair_shift.clone(),
            theta_scale: self.theta_scale.clone(),
            theta_shift: self.theta_shift.clone(),
            pair_dim: self.pair_dim,
            embed_dim: self.embed_dim,
            score_calls: AtomicU64::new(0),
        }
    }
}

impl CriticNet {
    pub fn new(model: &dyn Model, rng: &mut impl Rng) -> Result<Self, CoreError> {
        Self::with_dims(model, &CriticDims::default(), rng)
    }

    pub fn with_dims(
        model: &dyn Model,
        dims: &CriticDims,
        rng: &mut impl Rng,
    ) -> Result<Self, CoreError> {
        let pair_dim = model.design_dim() + model.obs_dim();
        let history = if model.conditionally_independent() {
            let embed = Mlp64::new(
                &MlpSpec::relu(pair_dim, dims.pair_hidden.clone(), dims.embed),
                rng,
            );
            let head = Mlp64::new(&MlpSpec::relu(dims.embed, dims.head_hidden.clone(), 1), rng);
            HistoryEncoder::Pool(AttentionPool64::new(embed, head)?)
        } else {
            let lstm = Lstm64::new(pair_dim, dims.embed, rng);
            let head = Mlp64::new(
                &MlpSpec::relu(dims.embed, dims.head_hidden.clone(), dims.embed),
                rng,
            );
            HistoryEncoder::Seq { lstm, head }
        };
        let theta = Mlp64::new(
            &MlpSpec::relu(model.param_dim(), dims.theta_hidden.clone(), dims.embed),
            rng,
        );
        let (mut pair_scale, mut pair_shift) = design_whitening(model);
        let (obs_scale, obs_shift) = model.obs_whitening().affine();
        pair_scale.extend(obs_scale);
        pair_shift.extend(obs_shift);
        let (theta_scale, theta_shift) = model.theta_whitening().affine();
        Ok(CriticNet {
            history,
            theta,
            pair_scale,
            pair_shift,
            theta_scale,
            theta_shift,
            pair_dim,
            embed_dim: dims.embed,
            score_calls: AtomicU64::new(0),
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    /// How many scoring entry points have run; used by call-audit tests.
    pub fn score_call_count(&self) -> u64 {
        self.score_calls.load(Ordering::Relaxed)
    }

    pub fn bind(&self, g: &mut Graph64) -> CriticVars {
        let history = match &self.history {
            HistoryEncoder::Pool(pool) => HistoryVars::Pool(pool.bind(g)),
            HistoryEncoder::Seq { lstm, head } => HistoryVars::Seq {
                lstm: lstm.bind(g),
                head: head.bind(g),
            },
        };
        CriticVars {
            history,
            theta: self.theta.bind(g),
        }
    }

    /// Whitened pair matrix `[len, design_dim + obs_dim]` of a history.
    fn pairs_leaf(&self, g: &mut Graph64, history: &History) -> Result<Var, NnError> {
        let mut data = Vec::with_capacity(history.len() * self.pair_dim);
        for (design, obs) in history.pairs() {
            data.extend_from_slice(design);
            data.extend_from_slice(obs);
        }
        let x = g.leaf(history.len(), self.pair_dim, data)?;
        g.affine_cols(x, &self.pair_scale, &self.pair_shift)
    }

    /// History encodings of every prefix `1..=len`, sharing per-pair
    /// embeddings (or recurrent states) across prefixes. One `1 x embed`
    /// row per prefix.
    fn prefix_embeddings(
        &self,
        g: &mut Graph64,
        vars: &CriticVars,
        history: &History,
    ) -> Result<Vec<Var>, NnError> {
        let x = self.pairs_leaf(g, history)?;
        match (&self.history, &vars.history) {
            (HistoryEncoder::Pool(pool), HistoryVars::Pool(pv)) => {
                let emb = pool.embed.forward(g, &pv.embed, x)?;
                let scores = pool.head.forward(g, &pv.head, emb)?;
                (1..=history.len())
                    .map(|k| {
                        let ek = g.slice_rows(emb, 0, k)?;
                        let sk = g.slice_rows(scores, 0, k)?;
                        AttentionPool64::pool_scored(g, ek, sk)
                    })
                    .collect()
            }
            (HistoryEncoder::Seq { lstm, head }, HistoryVars::Seq { lstm: lv, head: hv }) => {
                let steps: Vec<Var> = (0..history.len())
                    .map(|i| g.slice_rows(x, i, i + 1))
                    .collect::<Result<_, _>>()?;
                let states = lstm.forward_sequence_states(g, lv, &steps, 1)?;
                states
                    .into_iter()
                    .map(|h| head.forward(g, hv, h))
                    .collect()
            }
            _ => unreachable!("encoder and vars are built together"),
        }
    }

    fn full_embedding(
        &self,
        g: &mut Graph64,
        vars: &CriticVars,
        history: &History,
    ) -> Result<Var, NnError> {
        let x = self.pairs_leaf(g, history)?;
        match (&self.history, &vars.history) {
            (HistoryEncoder::Pool(pool), HistoryVars::Pool(pv)) => pool.forward(g, pv, Some(x)),
            (HistoryEncoder::Seq { lstm, head }, HistoryVars::Seq { lstm: lv, head: hv }) => {
                let steps: Vec<Var> = (0..history.len())
                    .map(|i| g.slice_rows(x, i, i + 1))
                    .collect::<Result<_, _>>()?;
                let h = lstm.forward_sequence(g, lv, &steps, 1)?;
                head.forward(g, hv, h)
            }
            _ => unreachable!("encoder and vars are built together"),
        }
    }

    /// Parameter encodings as an `[count, embed]` matrix.
    fn theta_embeddings(
        &self,
        g: &mut Graph64,
        vars: &CriticVars,
        rows: usize,
        flat: &[f64],
    ) -> Result<Var, NnError> {
        let x = g.leaf_slice(rows, self.theta.input_dim(), flat)?;
        let xw = g.affine_cols(x, &self.theta_scale, &self.theta_shift)?;
        self.theta.forward(g, &vars.theta, xw)
    }

    fn check_history(&self, history: &History) -> Result<(), CoreError> {
        if history.is_empty() {
            return Err(CoreError::contract(
                "the critic scores non-empty histories; the empty history is 0 by definition",
            ));
        }
        if history.design_dim() + history.obs_dim() != self.pair_dim {
            return Err(CoreError::contract(format!(
                "history pairs have width {}, critic expects {}",
                history.design_dim() + history.obs_dim(),
                self.pair_dim
            )));
        }
        Ok(())
    }

    /// History encoding `E_h(h)` as a plain vector.
    pub fn encode_history(&self, history: &History) -> Result<Vec<f64>, CoreError> {
        self.check_history(history)?;
        let mut g = Graph64::new();
        let vars = self.bind(&mut g);
        let e = self.full_embedding(&mut g, &vars, history)?;
        Ok(g.value(e).to_vec())
    }

    /// Parameter encoding `E_theta(theta)` as a plain vector.
    pub fn encode_theta(&self, theta: &[f64]) -> Result<Vec<f64>, CoreError> {
        let mut g = Graph64::new();
        let vars = self.bind(&mut g);
        let e = self.theta_embeddings(&mut g, &vars, 1, theta)?;
        Ok(g.value(e).to_vec())
    }

    /// `g(h_t)` for every prefix `t = 1..=len` of one history, computed in
    /// a single graph so all prefixes see identical embeddings.
    pub fn prefix_g_scores(
        &self,
        history: &History,
        thetas: &ThetaBatch,
    ) -> Result<Vec<f64>, CoreError> {
        self.check_history(history)?;
        self.score_calls.fetch_add(1, Ordering::Relaxed);
        let mut g = Graph64::new();
        let vars = self.bind(&mut g);
        let embs = self.prefix_embeddings(&mut g, &vars, history)?;
        let hm = g.concat_rows(&embs)?;
        let th = self.theta_embeddings(&mut g, &vars, thetas.count(), thetas.raw())?;
        let hmt = g.transpose(hm);
        let scores = g.matmul(th, hmt)?;
        let value = g.value(scores);
        let (rows, cols) = (thetas.count(), history.len());
        let mut out = Vec::with_capacity(cols);
        let mut column = vec![0.0; rows];
        for t in 0..cols {
            for r in 0..rows {
                column[r] = value[r * cols + t];
            }
            out.push(g_from_scores(&column)?);
        }
        Ok(out)
    }

    /// Contrastive objective over a trajectory minibatch: the mean `g`
    /// over every prefix of every trajectory. When `want_grad` is set,
    /// leaves the gradient of the negated objective in the parameters.
    pub fn infonce_loss_and_grad(
        &mut self,
        batch: &[(History, ThetaBatch)],
        want_grad: bool,
    ) -> Result<f64, CoreError> {
        if batch.len() < 2 {
            return Err(CoreError::contract(format!(
                "critic training needs at least 2 trajectories, got {}",
                batch.len()
            )));
        }
        for (h, _) in batch {
            self.check_history(h)?;
        }
        if want_grad {
            for p in self.params_mut() {
                p.zero_grad();
            }
        }
        let mut g = Graph64::new();
        let vars = self.bind(&mut g);
        let mut acc: Option<Var> = None;
        let mut prefixes = 0usize;
        for (h, thetas) in batch {
            let embs = self.prefix_embeddings(&mut g, &vars, h)?;
            let hm = g.concat_rows(&embs)?;
            let th = self.theta_embeddings(&mut g, &vars, thetas.count(), thetas.raw())?;
            let hmt = g.transpose(hm);
            let scores = g.matmul(th, hmt)?;
            let st = g.transpose(scores);
            let lse = g.logsumexp_rows(st);
            let num = g.slice_cols(st, 0, 1)?;
            let diff = g.sub(num, lse)?;
            let gs = g.add_const(diff, (thetas.count() as f64).ln());
            let total = g.sum_all(gs);
            acc = Some(match acc {
                None => total,
                Some(a) => g.add(a, total)?,
            });
            prefixes += h.len();
        }
        let mean_g = g.scale(acc.unwrap(), 1.0 / prefixes as f64);
        let value = g.scalar_value(mean_g);
        if !value.is_finite() {
            return Err(CoreError::numeric(format!(
                "critic objective is {value} over a {}-trajectory batch",
                batch.len()
            )));
        }
        if want_grad {
            let loss = g.scale(mean_g, -1.0);
            g.backward(loss)?;
            self.collect_grads(&g, &vars);
        }
        Ok(value)
    }

    pub fn collect_grads(&mut self, g: &Graph64, vars: &CriticVars) {
        match (&mut self.history, &vars.history) {
            (HistoryEncoder::Pool(pool), HistoryVars::Pool(pv)) => pool.collect_grads(g, pv),
            (HistoryEncoder::Seq { lstm, head }, HistoryVars::Seq { lstm: lv, head: hv }) => {
                lstm.collect_grads(g, lv);
                head.collect_grads(g, hv);
            }
            _ => unreachable!("encoder and vars are built together"),
        }
        self.theta.collect_grads(g, &vars.theta);
    }

    pub fn params(&self) -> Vec<&boed_nn::Param64> {
        let mut ps = match &self.history {
            HistoryEncoder::Pool(pool) => pool.params(),
            HistoryEncoder::Seq { lstm, head } => {
                let mut v = lstm.params();
                v.extend(head.params());
                v
            }
        };
        ps.extend(self.theta.params());
        ps
    }

    pub fn params_mut(&mut self) -> Vec<&mut boed_nn::Param64> {
        let mut ps = match &mut self.history {
            HistoryEncoder::Pool(pool) => pool.params_mut(),
            HistoryEncoder::Seq { lstm, head } => {
                let mut v = lstm.params_mut();
                v.extend(head.params_mut());
                v
            }
        };
        ps.extend(self.theta.params_mut());
        ps
    }
}

impl Critic for CriticNet {
    fn score(&self, history: &History, theta: &[f64]) -> Result<f64, CoreError> {
        self.check_history(history)?;
        self.score_calls.fetch_add(1, Ordering::Relaxed);
        let mut g = Graph64::new();
        let vars = self.bind(&mut g);
        let eh = self.full_embedding(&mut g, &vars, history)?;
        let et = self.theta_embeddings(&mut g, &vars, 1, theta)?;
        let ett = g.transpose(et);
        let s = g.matmul(eh, ett)?;
        Ok(g.scalar_value(s))
    }

    fn score_batch(&self, history: &History, thetas: &ThetaBatch) -> Result<Vec<f64>, CoreError> {
        self.check_history(history)?;
        self.score_calls.fetch_add(1, Ordering::Relaxed);
        let mut g = Graph64::new();
        let vars = self.bind(&mut g);
        let eh = self.full_embedding(&mut g, &vars, history)?;
        let et = self.theta_embeddings(&mut g, &vars, thetas.count(), thetas.raw())?;
        let eht = g.transpose(eh);
        let s = g.matmul(et, eht)?;
        Ok(g.value(s).to_vec())
    }
}

/// One ascent step on the contrastive objective over a trajectory
/// minibatch. Returns the objective value (the negated loss), which the
/// softmax structure caps at `ln(L + 1)`.
pub fn train_critic_batch(
    critic: &mut CriticNet,
    batch: &[(History, ThetaBatch)],
    opt: &mut Adam64,
) -> Result<f64, CoreError> {
    let mean_g = critic.infonce_loss_and_grad(batch, true)?;
    opt.step(&mut critic.params_mut())?;
    Ok(mean_g)
}

/// The analytically optimal critic: model log-likelihood plus any
/// history-only offset, which cancels in the contrastive softmax.
pub fn optimal_critic<'a>(
    model: &'a dyn Model,
    offset: Box<dyn Fn(&History) -> f64 + Send + Sync>,
) -> Result<OptimalCritic<'a>, CoreError> {
    OptimalCritic::with_offset(model, offset)
}

/// Slow-moving copy of a [`CriticNet`], updated only through
/// [`target_sync`]; the reward path scores against this copy.
pub struct TargetCritic(CriticNet);

impl TargetCritic {
    /// Starts as an exact copy of the critic.
    pub fn new(critic: &CriticNet) -> Self {
        TargetCritic(critic.clone())
    }

    pub fn net(&self) -> &CriticNet {
        &self.0
    }
}

impl Critic for TargetCritic {
    fn score(&self, history: &History, theta: &[f64]) -> Result<f64, CoreError> {
        self.0.score(history, theta)
    }

    fn score_batch(&self, history: &History, thetas: &ThetaBatch) -> Result<Vec<f64>, CoreError> {
        self.0.score_batch(history, thetas)
    }
}

/// `target <- (1 - tau) * target + tau * critic`, elementwise.
pub fn target_sync(
    critic: &CriticNet,
    target: &mut TargetCritic,
    tau: f64,
) -> Result<(), CoreError> {
    soft_update(&mut target.0.params_mut(), &critic.params(), tau)?;
    Ok(())
}
