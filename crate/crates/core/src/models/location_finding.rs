//! Source-localization model: hidden emitters in a box, noisy log-intensity
//! readings at probe locations.
//!
//! The total intensity at probe `design` is
//! `mu = background + sum_k signal_scale / (max_signal + ||theta_k - design||^2)`
//! and the observation is `log mu` plus Gaussian noise. Experiments are
//! conditionally independent given theta.

use std::sync::atomic::AtomicU64;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::env::History;
use crate::error::CoreError;
use crate::model::{clamp_design, gaussian_logpdf, Model, TrajectoryLatent, Whitening};

#[derive(Debug)]
pub struct LocationFinding {
    sources: usize,
    dim: usize,
    background: f64,
    max_signal: f64,
    signal_scale: f64,
    noise_std: f64,
    bounds: Vec<(f64, f64)>,
    clamped: AtomicU64,
}

impl LocationFinding {
    pub fn new(
        sources: usize,
        dim: usize,
        background: f64,
        max_signal: f64,
        signal_scale: f64,
        noise_std: f64,
        design_halfwidth: f64,
    ) -> Result<Self, CoreError> {
        if sources == 0 || dim == 0 {
            return Err(CoreError::config(
                "location_finding needs at least one source and one dimension".to_string(),
            ));
        }
        if background <= 0.0 || max_signal <= 0.0 || signal_scale <= 0.0 {
            return Err(CoreError::config(
                "location_finding intensity constants must be positive".to_string(),
            ));
        }
        if noise_std < 0.0 || design_halfwidth <= 0.0 {
            return Err(CoreError::config(
                "location_finding noise must be non-negative and bounds positive".to_string(),
            ));
        }
        Ok(LocationFinding {
            sources,
            dim,
            background,
            max_signal,
            signal_scale,
            noise_std,
            bounds: vec![(-design_halfwidth, design_halfwidth); dim],
            clamped: AtomicU64::new(0),
        })
    }

    /// Two sources in the plane, the configuration used throughout the tests.
    pub fn default_2d() -> Self {
        LocationFinding::new(2, 2, 0.1, 1e-4, 1.0, 0.5, 4.0).unwrap()
    }

    pub fn sources(&self) -> usize {
        self.sources
    }

    /// `ln` of the total intensity at `design` for source layout `theta`.
    pub fn log_total_intensity(&self, theta: &[f64], design: &[f64]) -> f64 {
        let mut mu = self.background;
        for k in 0..self.sources {
            let source = &theta[k * self.dim..(k + 1) * self.dim];
            let d2: f64 = source
                .iter()
                .zip(design)
                .map(|(s, x)| (s - x) * (s - x))
                .sum();
            mu += self.signal_scale / (self.max_signal + d2);
        }
        mu.ln()
    }
}

impl Model for LocationFinding {
    fn name(&self) -> &str {
        "location_finding"
    }

    fn design_bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn param_dim(&self) -> usize {
        self.sources * self.dim
    }

    fn conditionally_independent(&self) -> bool {
        true
    }

    fn sample_theta(&self, rng: &mut dyn Rng) -> Vec<f64> {
        (0..self.param_dim())
            .map(|_| StandardNormal.sample(rng))
            .collect()
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
        Ok(vec![
            self.log_total_intensity(theta, &design) + self.noise_std * z,
        ])
    }

    fn has_likelihood(&self) -> bool {
        true
    }

    fn log_likelihood(&self, theta: &[f64], history: &History) -> Result<f64, CoreError> {
        if self.noise_std == 0.0 {
            return Err(CoreError::numeric(
                "log-likelihood undefined for a noise-free observation model".to_string(),
            ));
        }
        Ok(history
            .pairs()
            .map(|(design, obs)| {
                gaussian_logpdf(obs[0], self.log_total_intensity(theta, design), self.noise_std)
            })
            .sum())
    }

    fn clamp_counter(&self) -> &AtomicU64 {
        &self.clamped
    }

    fn theta_whitening(&self) -> Whitening {
        Whitening::new(vec![0.0; self.param_dim()], vec![1.0; self.param_dim()])
    }

    fn obs_whitening(&self) -> Whitening {
        // Prior-predictive scale of the log-intensity under uniform probing,
        // rounded from a Monte-Carlo tabulation at the default constants.
        Whitening::new(vec![-0.9], vec![1.0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn noise_free_observation_is_the_closed_form_intensity() {
        // Both sources at distance d from the probe.
        let model = LocationFinding::new(2, 2, 0.1, 1e-4, 1.0, 0.0, 4.0).unwrap();
        let d = 1.5;
        let theta = [d, 0.0, -d, 0.0];
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut latent = TrajectoryLatent::None;
        let y = model
            .simulate(&theta, &[0.0, 0.0], &mut latent, &mut rng)
            .unwrap();
        let expected = (0.1 + 2.0 / (1e-4 + d * d)).ln();
        assert!((y[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn prior_is_standard_normal_per_coordinate() {
        let model = LocationFinding::default_2d();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let n = 100_000;
        let mut sum = [0.0; 4];
        let mut sumsq = [0.0; 4];
        for _ in 0..n {
            let theta = model.sample_theta(&mut rng);
            for (i, v) in theta.iter().enumerate() {
                sum[i] += v;
                sumsq[i] += v * v;
            }
        }
        for i in 0..4 {
            let mean = sum[i] / n as f64;
            let var = sumsq[i] / n as f64 - mean * mean;
            assert!(mean.abs() < 3.0 / (n as f64).sqrt());
            assert!((var - 1.0).abs() < 0.03);
        }
    }

    #[test]
    fn simulated_density_matches_log_likelihood() {
        let model = LocationFinding::default_2d();
        let theta = [1.0, 0.5, -0.5, -1.5];
        let design = [0.5, 0.5];
        let center = model.log_total_intensity(&theta, &design);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let mut latent = TrajectoryLatent::None;
        let n = 100_000;
        let width = 0.1;
        // Histogram frequency around three probe points vs the analytic density.
        let probes = [center, center - 0.5, center + 0.5];
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let y = model
                .simulate(&theta, &design, &mut latent, &mut rng)
                .unwrap()[0];
            for (c, p) in counts.iter_mut().zip(&probes) {
                if (y - p).abs() < width / 2.0 {
                    *c += 1;
                }
            }
        }
        for (count, p) in counts.iter().zip(&probes) {
            let mut h = History::new(1, 2, 1);
            h.push(&design, &[*p]).unwrap();
            let density = model.log_likelihood(&theta, &h).unwrap().exp();
            let freq = *count as f64 / n as f64 / width;
            let bin_prob = density * width;
            let se = (bin_prob * (1.0 - bin_prob) / n as f64).sqrt() / width;
            assert!(
                (freq - density).abs() < 4.0 * se + 0.005,
                "freq {freq} vs density {density}"
            );
        }
    }

    #[test]
    fn log_likelihood_sums_over_history() {
        let model = LocationFinding::default_2d();
        let theta = [0.3, -0.2, 1.0, 2.0];
        let mut h = History::new(2, 2, 1);
        h.push(&[1.0, -1.0], &[0.2]).unwrap();
        h.push(&[-2.0, 0.5], &[-1.4]).unwrap();
        let total = model.log_likelihood(&theta, &h).unwrap();
        let first = model.log_likelihood(&theta, &h.prefix(1)).unwrap();
        let mut second = History::new(1, 2, 1);
        second.push(&[-2.0, 0.5], &[-1.4]).unwrap();
        let second = model.log_likelihood(&theta, &second).unwrap();
        assert!((total - (first + second)).abs() < 1e-12);
    }

    #[test]
    fn intensity_is_positive_even_far_from_sources() {
        let model = LocationFinding::default_2d();
        // Far probe: intensity approaches the background, ln stays finite.
        let y = model.log_total_intensity(&[0.0, 0.0, 0.0, 0.0], &[4.0, 4.0]);
        assert!(y.is_finite());
        assert!(y > (0.1f64).ln() - 1e-12);
    }
}
