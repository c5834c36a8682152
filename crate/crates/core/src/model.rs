//! Simulator interface shared by every model in the crate.
//!
//! A model is immutable after construction and carries no per-trajectory
//! state of its own; anything that must persist across experiments within
//! one trajectory (an epidemic path, a mechanical state) lives in a
//! [`TrajectoryLatent`] owned by the caller. This keeps `simulate`
//! reentrant: many trajectories can run concurrently against one model as
//! long as each brings its own latent and RNG.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::env::History;
use crate::error::CoreError;

/// Per-trajectory hidden state for models whose experiments are coupled.
///
/// Models with conditionally independent experiments use [`TrajectoryLatent::None`].
#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryLatent {
    None,
    /// Infected counts on the epidemic simulation grid, drawn once per trajectory.
    SirPath(Vec<f64>),
    /// Mechanical state (cart position, cart velocity, pole angle, pole rate).
    CartpoleState([f64; 4]),
}

/// Per-dimension location/scale used to normalize network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Whitening {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Whitening {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Self {
        assert_eq!(mean.len(), std.len());
        assert!(std.iter().all(|s| *s > 0.0));
        Whitening { mean, std }
    }

    /// Affine coefficients (scale, shift) such that `x * scale + shift` is whitened.
    pub fn affine(&self) -> (Vec<f64>, Vec<f64>) {
        let scale: Vec<f64> = self.std.iter().map(|s| 1.0 / s).collect();
        let shift: Vec<f64> = self
            .mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| -m / s)
            .collect();
        (scale, shift)
    }
}

/// A black-box implicit model: a sampler `y ~ p(y | theta, design, latent)`
/// plus static metadata, with an analytic log-density only where one exists.
pub trait Model: Send + Sync {
    /// Registry name, e.g. `"location_finding"`.
    fn name(&self) -> &str;

    /// Per-dimension `(min, max)` box for admissible designs.
    fn design_bounds(&self) -> &[(f64, f64)];

    fn design_dim(&self) -> usize {
        self.design_bounds().len()
    }

    fn obs_dim(&self) -> usize;

    fn param_dim(&self) -> usize;

    /// True when the observation law depends only on `(theta, design)`,
    /// i.e. experiments within a trajectory do not interact.
    fn conditionally_independent(&self) -> bool;

    /// One independent draw from the parameter prior.
    fn sample_theta(&self, rng: &mut dyn Rng) -> Vec<f64>;

    /// Fresh per-trajectory latent for a trajectory whose ground truth is `theta0`.
    fn init_latent(&self, _theta0: &[f64], _rng: &mut dyn Rng) -> TrajectoryLatent {
        TrajectoryLatent::None
    }

    /// One observation draw. `latent` must come from `init_latent` with the
    /// same `theta`; coupled models read and advance it.
    fn simulate(
        &self,
        theta: &[f64],
        design: &[f64],
        latent: &mut TrajectoryLatent,
        rng: &mut dyn Rng,
    ) -> Result<Vec<f64>, CoreError>;

    /// Whether [`Model::log_likelihood`] is available.
    fn has_likelihood(&self) -> bool {
        false
    }

    /// `sum_t log p(y_t | theta, design_t)` over the history, where analytic.
    /// An empty history is the empty product, 0.
    fn log_likelihood(&self, _theta: &[f64], _history: &History) -> Result<f64, CoreError> {
        Err(CoreError::Unsupported {
            model: self.name().to_string(),
            capability: "an analytic log-likelihood".to_string(),
        })
    }

    /// Counter bumped whenever a simulate call receives an out-of-bounds design.
    fn clamp_counter(&self) -> &AtomicU64;

    /// How many simulate calls so far received an out-of-bounds design.
    fn clamped_design_count(&self) -> u64 {
        self.clamp_counter().load(Ordering::Relaxed)
    }

    /// Prior location/scale of each parameter dimension.
    fn theta_whitening(&self) -> Whitening;

    /// Typical location/scale of each observation dimension under the prior
    /// predictive; used only to normalize network inputs.
    fn obs_whitening(&self) -> Whitening;
}

/// Clamps `design` into `bounds`, bumping `counter` once if anything moved.
/// Non-finite designs are rejected rather than clamped.
pub(crate) fn clamp_design(
    bounds: &[(f64, f64)],
    design: &[f64],
    counter: &AtomicU64,
) -> Result<Vec<f64>, CoreError> {
    if design.len() != bounds.len() {
        return Err(CoreError::contract(format!(
            "design has {} dims, model expects {}",
            design.len(),
            bounds.len()
        )));
    }
    if design.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::numeric("non-finite design".to_string()));
    }
    let mut moved = false;
    let out: Vec<f64> = design
        .iter()
        .zip(bounds)
        .map(|(&x, &(lo, hi))| {
            let c = x.clamp(lo, hi);
            if c != x {
                moved = true;
            }
            c
        })
        .collect();
    if moved {
        counter.fetch_add(1, Ordering::Relaxed);
    }
    Ok(out)
}

/// Log-density of `N(mean, std^2)` at `x`.
pub(crate) fn gaussian_logpdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}
