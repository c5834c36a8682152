//! Trajectory state for the sequential-design decision process.
//!
//! A trajectory runs a fixed number of experiments `T`. Its observable part
//! is the [`History`] of (design, observation) pairs; the unobservable part
//! is a [`ThetaBatch`] of parameter draws (ground truth first) plus any
//! model latent. Policies and value networks only ever see the history,
//! through [`History::encode`].

use rand::Rng;

use crate::error::CoreError;
use crate::model::{clamp_design, Model, TrajectoryLatent};

/// Ordered (design, observation) pairs with a fixed capacity.
///
/// Storage is a single packed buffer so histories stay cheap to clone into
/// the replay buffer. Unfilled slots are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    design_dim: usize,
    obs_dim: usize,
    capacity: usize,
    len: usize,
    data: Vec<f64>,
}

impl History {
    pub fn new(capacity: usize, design_dim: usize, obs_dim: usize) -> Self {
        assert!(capacity > 0 && design_dim > 0 && obs_dim > 0);
        History {
            design_dim,
            obs_dim,
            capacity,
            len: 0,
            data: vec![0.0; capacity * (design_dim + obs_dim)],
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_full(&self) -> bool {
        self.len == self.capacity
    }

    pub fn design_dim(&self) -> usize {
        self.design_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn pair_width(&self) -> usize {
        self.design_dim + self.obs_dim
    }

    pub fn push(&mut self, design: &[f64], obs: &[f64]) -> Result<(), CoreError> {
        if self.is_full() {
            return Err(CoreError::contract("push into a full history"));
        }
        if design.len() != self.design_dim || obs.len() != self.obs_dim {
            return Err(CoreError::contract(format!(
                "pair dims ({}, {}) do not match history dims ({}, {})",
                design.len(),
                obs.len(),
                self.design_dim,
                self.obs_dim
            )));
        }
        let width = self.pair_width();
        let base = self.len * width;
        self.data[base..base + self.design_dim].copy_from_slice(design);
        self.data[base + self.design_dim..base + width].copy_from_slice(obs);
        self.len += 1;
        Ok(())
    }

    pub fn design_at(&self, i: usize) -> &[f64] {
        assert!(i < self.len);
        let base = i * self.pair_width();
        &self.data[base..base + self.design_dim]
    }

    pub fn obs_at(&self, i: usize) -> &[f64] {
        assert!(i < self.len);
        let base = i * self.pair_width() + self.design_dim;
        &self.data[base..base + self.obs_dim]
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        (0..self.len).map(|i| (self.design_at(i), self.obs_at(i)))
    }

    /// The history truncated to its first `len` pairs.
    pub fn prefix(&self, len: usize) -> History {
        assert!(len <= self.len);
        let mut out = History::new(self.capacity, self.design_dim, self.obs_dim);
        for i in 0..len {
            out.push(self.design_at(i), self.obs_at(i)).unwrap();
        }
        out
    }

    /// Flat vector of all pairs in order, zero-padded to capacity, with a
    /// trailing fill fraction `len/capacity`. The trailing feature keeps an
    /// empty slot distinguishable from a genuinely all-zero pair.
    pub fn encode(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&self.data);
        out.push(self.len as f64 / self.capacity as f64);
        out
    }

    /// Same layout as [`History::encode`] but as if only the first `len`
    /// pairs were present.
    pub fn encode_prefix(&self, len: usize) -> Vec<f64> {
        assert!(len <= self.len);
        let mut out = vec![0.0; self.encoded_len()];
        out[..len * self.pair_width()].copy_from_slice(&self.data[..len * self.pair_width()]);
        *out.last_mut().unwrap() = len as f64 / self.capacity as f64;
        out
    }

    pub fn encoded_len(&self) -> usize {
        Self::encoding_width(self.capacity, self.design_dim, self.obs_dim)
    }

    /// Encoded length of a buffer with the given shape, without an instance.
    pub fn encoding_width(capacity: usize, design_dim: usize, obs_dim: usize) -> usize {
        capacity * (design_dim + obs_dim) + 1
    }

    /// Raw packed pair buffer, including zero padding.
    pub fn raw(&self) -> &[f64] {
        &self.data
    }
}

/// Ground-truth parameters plus contrastive prior draws, fixed per trajectory.
///
/// Row 0 is the ground truth; rows 1..=L are the contrastive draws.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaBatch {
    param_dim: usize,
    data: Vec<f64>,
}

impl ThetaBatch {
    /// `count` independent prior draws (`count = L + 1`, so at least 2).
    pub fn sample_prior(
        model: &dyn Model,
        count: usize,
        rng: &mut dyn Rng,
    ) -> Result<Self, CoreError> {
        if count < 2 {
            return Err(CoreError::contract(format!(
                "a theta batch needs the ground truth plus at least one contrastive draw, got count {count}"
            )));
        }
        let param_dim = model.param_dim();
        let mut data = Vec::with_capacity(count * param_dim);
        for _ in 0..count {
            let theta = model.sample_theta(rng);
            debug_assert_eq!(theta.len(), param_dim);
            data.extend_from_slice(&theta);
        }
        Ok(ThetaBatch { param_dim, data })
    }

    /// Builds a batch from explicit rows; row 0 is the ground truth.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, CoreError> {
        if rows.len() < 2 {
            return Err(CoreError::contract("a theta batch needs at least 2 rows"));
        }
        let param_dim = rows[0].len();
        if rows.iter().any(|r| r.len() != param_dim) {
            return Err(CoreError::contract("ragged theta rows"));
        }
        let mut data = Vec::with_capacity(rows.len() * param_dim);
        for r in rows {
            data.extend_from_slice(r);
        }
        Ok(ThetaBatch { param_dim, data })
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.param_dim
    }

    /// Number of contrastive rows, `count - 1`.
    pub fn l(&self) -> usize {
        self.count() - 1
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        assert!(i < self.count());
        &self.data[i * self.param_dim..(i + 1) * self.param_dim]
    }

    pub fn theta0(&self) -> &[f64] {
        self.row(0)
    }

    /// All rows as one row-major matrix buffer.
    pub fn raw(&self) -> &[f64] {
        &self.data
    }
}

/// One trajectory in flight.
#[derive(Debug, Clone)]
pub struct TrajectoryState {
    pub history: History,
    pub thetas: ThetaBatch,
    pub latent: TrajectoryLatent,
    pub done: bool,
}

/// Empty history, fresh parameter batch of `l + 1` draws, fresh latent.
pub fn reset(
    model: &dyn Model,
    horizon: usize,
    l: usize,
    rng: &mut dyn Rng,
) -> Result<TrajectoryState, CoreError> {
    if l < 1 {
        return Err(CoreError::contract("need at least one contrastive sample"));
    }
    let thetas = ThetaBatch::sample_prior(model, l + 1, rng)?;
    let latent = model.init_latent(thetas.theta0(), rng);
    Ok(TrajectoryState {
        history: History::new(horizon, model.design_dim(), model.obs_dim()),
        thetas,
        latent,
        done: false,
    })
}

/// Simulates one experiment under the ground truth and appends it.
///
/// The reward is whatever `reward_fn` says about the post-step history;
/// dense/sparse bookkeeping lives with the caller.
pub fn step(
    state: &mut TrajectoryState,
    design: &[f64],
    model: &dyn Model,
    reward_fn: &mut dyn FnMut(&History, &ThetaBatch) -> Result<f64, CoreError>,
    rng: &mut dyn Rng,
) -> Result<(f64, bool), CoreError> {
    if state.done {
        return Err(CoreError::contract("step on a finished trajectory"));
    }
    let design = clamp_design(model.design_bounds(), design, model.clamp_counter())?;
    let theta0: Vec<f64> = state.thetas.theta0().to_vec();
    let obs = model.simulate(&theta0, &design, &mut state.latent, rng)?;
    state.history.push(&design, &obs)?;
    state.done = state.history.is_full();
    let reward = reward_fn(&state.history, &state.thetas)?;
    if !reward.is_finite() {
        return Err(CoreError::numeric(format!(
            "non-finite reward at step {}",
            state.history.len()
        )));
    }
    Ok((reward, state.done))
}
