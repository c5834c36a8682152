//! Scalar linear-Gaussian model `y = theta * design + noise`.
//!
//! Everything about it is closed-form: likelihood, information gain of a
//! single experiment, and the conjugate posterior. That makes it the test
//! oracle for the contrastive estimators, which must bracket or recover its
//! analytic values.

use std::sync::atomic::AtomicU64;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::env::History;
use crate::error::CoreError;
use crate::model::{clamp_design, gaussian_logpdf, Model, TrajectoryLatent, Whitening};

#[derive(Debug)]
pub struct LinearGaussian {
    prior_var: f64,
    noise_var: f64,
    bounds: [(f64, f64); 1],
    clamped: AtomicU64,
}

impl LinearGaussian {
    pub fn new(prior_var: f64, noise_var: f64, design_max: f64) -> Result<Self, CoreError> {
        if prior_var <= 0.0 || noise_var <= 0.0 || design_max <= 0.0 {
            return Err(CoreError::config(
                "linear_gaussian variances and design bound must be positive".to_string(),
            ));
        }
        Ok(LinearGaussian {
            prior_var,
            noise_var,
            bounds: [(-design_max, design_max)],
            clamped: AtomicU64::new(0),
        })
    }

    /// Unit prior variance, unit noise variance, designs in [-3, 3].
    pub fn standard() -> Self {
        LinearGaussian::new(1.0, 1.0, 3.0).unwrap()
    }

    /// Information gain of a single experiment at `design`:
    /// `0.5 * ln(1 + design^2 * prior_var / noise_var)`.
    pub fn analytic_eig(&self, design: f64) -> f64 {
        0.5 * (1.0 + design * design * self.prior_var / self.noise_var).ln()
    }

    pub fn prior_var(&self) -> f64 {
        self.prior_var
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// Conjugate posterior `(mean, variance)` of theta given a history.
    pub fn posterior(&self, history: &History) -> (f64, f64) {
        let mut precision = 1.0 / self.prior_var;
        let mut weighted = 0.0;
        for (design, obs) in history.pairs() {
            precision += design[0] * design[0] / self.noise_var;
            weighted += design[0] * obs[0] / self.noise_var;
        }
        (weighted / precision, 1.0 / precision)
    }
}

impl Model for LinearGaussian {
    fn name(&self) -> &str {
        "linear_gaussian"
    }

    fn design_bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn conditionally_independent(&self) -> bool {
        true
    }

    fn sample_theta(&self, rng: &mut dyn Rng) -> Vec<f64> {
        let z: f64 = StandardNormal.sample(rng);
        vec![z * self.prior_var.sqrt()]
    }

    fn simulate(
        &self,
        theta: &[f64],
        design: &[f64],
        _latent: &mut TrajectoryLatent,
        rng: &mut dyn Rng,
    ) -> Result<Vec<f64>, CoreError> {
        let design = clamp_design(&self.bounds, design, &self.clamped)?;
        let z: f64 = StandardNormal.sample(rng);
        Ok(vec![theta[0] * design[0] + z * self.noise_var.sqrt()])
    }

    fn has_likelihood(&self) -> bool {
        true
    }

    fn log_likelihood(&self, theta: &[f64], history: &History) -> Result<f64, CoreError> {
        let std = self.noise_var.sqrt();
        Ok(history
            .pairs()
            .map(|(design, obs)| gaussian_logpdf(obs[0], theta[0] * design[0], std))
            .sum())
    }

    fn clamp_counter(&self) -> &AtomicU64 {
        &self.clamped
    }

    fn theta_whitening(&self) -> Whitening {
        Whitening::new(vec![0.0], vec![self.prior_var.sqrt()])
    }

    fn obs_whitening(&self) -> Whitening {
        // y = theta * design + noise with design up to the bound.
        let scale = (self.prior_var * self.bounds[0].1 * self.bounds[0].1 + self.noise_var).sqrt();
        Whitening::new(vec![0.0], vec![scale])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn single_point_log_likelihood_matches_standard_normal() {
        let model = LinearGaussian::standard();
        let mut h = History::new(1, 1, 1);
        h.push(&[1.0], &[0.0]).unwrap();
        let ll = model.log_likelihood(&[0.0], &h).unwrap();
        assert!((ll - (-0.9189385332046727)).abs() < 1e-12);
    }

    #[test]
    fn empty_history_log_likelihood_is_zero() {
        let model = LinearGaussian::standard();
        let h = History::new(3, 1, 1);
        assert_eq!(model.log_likelihood(&[0.7], &h).unwrap(), 0.0);
    }

    #[test]
    fn log_likelihood_is_additive_over_steps() {
        let model = LinearGaussian::standard();
        let mut h = History::new(2, 1, 1);
        h.push(&[1.5], &[0.3]).unwrap();
        h.push(&[-2.0], &[1.1]).unwrap();
        let both = model.log_likelihood(&[0.4], &h).unwrap();
        let first = model.log_likelihood(&[0.4], &h.prefix(1)).unwrap();
        let mut second_only = History::new(1, 1, 1);
        second_only.push(&[-2.0], &[1.1]).unwrap();
        let second = model.log_likelihood(&[0.4], &second_only).unwrap();
        assert!((both - (first + second)).abs() < 1e-12);
    }

    #[test]
    fn analytic_eig_reference_values() {
        let model = LinearGaussian::standard();
        assert_eq!(model.analytic_eig(0.0), 0.0);
        assert!((model.analytic_eig(1.0) - 0.34657359027997264).abs() < 1e-15);
        assert!((model.analytic_eig(3.0) - 1.1512925464970228).abs() < 1e-15);
    }

    #[test]
    fn posterior_matches_hand_computed_conjugate_update() {
        let model = LinearGaussian::standard();
        let mut h = History::new(2, 1, 1);
        h.push(&[1.0], &[2.0]).unwrap();
        h.push(&[2.0], &[2.0]).unwrap();
        // precision = 1 + 1 + 4 = 6, weighted sum = 2 + 4 = 6
        let (mean, var) = model.posterior(&h);
        assert!((mean - 1.0).abs() < 1e-15);
        assert!((var - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn prior_draws_have_expected_moments() {
        let model = LinearGaussian::new(4.0, 1.0, 3.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| model.sample_theta(&mut rng)[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        // std of the sample mean is 2/sqrt(n)
        assert!(mean.abs() < 3.0 * 2.0 / (n as f64).sqrt());
        assert!((var - 4.0).abs() < 0.15);
    }

    #[test]
    fn out_of_bounds_design_is_clamped_and_counted() {
        let model = LinearGaussian::standard();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut latent = TrajectoryLatent::None;
        model
            .simulate(&[100.0], &[50.0], &mut latent, &mut rng)
            .unwrap();
        assert_eq!(model.clamped_design_count(), 1);
        // Clamped to 3.0, so the mean is 300; noise cannot bridge that gap.
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let y = model
            .simulate(&[100.0], &[50.0], &mut latent, &mut rng)
            .unwrap();
        assert!((y[0] - 300.0).abs() < 10.0);
    }

    #[test]
    fn simulate_is_deterministic_under_seed() {
        let model = LinearGaussian::standard();
        let mut latent = TrajectoryLatent::None;
        let mut a = ChaCha12Rng::seed_from_u64(9);
        let mut b = ChaCha12Rng::seed_from_u64(9);
        let ya = model.simulate(&[0.5], &[2.0], &mut latent, &mut a).unwrap();
        let yb = model.simulate(&[0.5], &[2.0], &mut latent, &mut b).unwrap();
        assert_eq!(ya, yb);
    }
}
