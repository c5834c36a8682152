//! Stochastic SIR epidemic observed through noisy infected counts.
//!
//! One latent epidemic path is drawn per trajectory by Euler-Maruyama on the
//! SIR diffusion approximation; every experiment then reads the path at a
//! chosen measurement time. Measurements therefore share the path, so
//! experiments are not conditionally independent given (beta, gamma).
//!
//! The infection and recovery noise terms reuse the same Wiener increments
//! in the susceptible and infected equations, which conserves the population
//! exactly; the recovered compartment is the remainder.

use std::sync::atomic::AtomicU64;

use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};

use crate::error::CoreError;
use crate::model::{clamp_design, Model, TrajectoryLatent, Whitening};

#[derive(Debug)]
pub struct Sir {
    population: f64,
    initial_infected: f64,
    dt: f64,
    horizon: f64,
    beta_log_mean: f64,
    beta_log_std: f64,
    gamma_log_mean: f64,
    gamma_log_std: f64,
    obs_noise_std: f64,
    bounds: [(f64, f64); 1],
    clamped: AtomicU64,
}

/// Susceptible and infected counts on the simulation grid. The recovered
/// compartment is `population - s - i` by construction.
#[derive(Debug, Clone)]
pub struct EpidemicPath {
    pub susceptible: Vec<f64>,
    pub infected: Vec<f64>,
}

impl Sir {
    pub fn new(
        population: f64,
        initial_infected: f64,
        dt: f64,
        horizon: f64,
        obs_noise_std: f64,
    ) -> Result<Self, CoreError> {
        if population <= 0.0 || dt <= 0.0 || horizon <= 0.0 {
            return Err(CoreError::config(
                "sir population, dt, and horizon must be positive".to_string(),
            ));
        }
        if !(0.0..=population).contains(&initial_infected) {
            return Err(CoreError::config(
                "sir initial infected count must lie within the population".to_string(),
            ));
        }
        if obs_noise_std < 0.0 {
            return Err(CoreError::config(
                "sir observation noise must be non-negative".to_string(),
            ));
        }
        Ok(Sir {
            population,
            initial_infected,
            dt,
            horizon,
            beta_log_mean: 0.5f64.ln(),
            beta_log_std: 0.5,
            gamma_log_mean: 0.1f64.ln(),
            gamma_log_std: 0.5,
            obs_noise_std,
            bounds: [(0.0, horizon)],
            clamped: AtomicU64::new(0),
        })
    }

    /// Population 500, two initially infected, grid step 0.1 over [0, 100].
    pub fn standard() -> Self {
        Sir::new(500.0, 2.0, 0.1, 100.0, 1.0).unwrap()
    }

    pub fn population(&self) -> f64 {
        self.population
    }

    fn grid_len(&self) -> usize {
        (self.horizon / self.dt).round() as usize + 1
    }

    /// Draws one epidemic path at rates `(beta, gamma)`.
    pub fn simulate_path(&self, beta: f64, gamma: f64, rng: &mut dyn Rng) -> EpidemicPath {
        let n = self.grid_len();
        let pop = self.population;
        let mut susceptible = Vec::with_capacity(n);
        let mut infected = Vec::with_capacity(n);
        let mut s = pop - self.initial_infected;
        let mut i = self.initial_infected;
        susceptible.push(s);
        infected.push(i);
        for _ in 1..n {
            let infection = beta * s * i / pop;
            let recovery = gamma * i;
            let z1: f64 = StandardNormal.sample(rng);
            let z2: f64 = StandardNormal.sample(rng);
            let d_inf = infection * self.dt + (infection * self.dt).sqrt() * z1;
            let d_rec = recovery * self.dt + (recovery * self.dt).sqrt() * z2;
            s = (s - d_inf).clamp(0.0, pop);
            i = (i + d_inf - d_rec).clamp(0.0, pop - s);
            susceptible.push(s);
            infected.push(i);
        }
        EpidemicPath {
            susceptible,
            infected,
        }
    }

    fn grid_index(&self, time: f64) -> usize {
        ((time / self.dt).round() as usize).min(self.grid_len() - 1)
    }
}

impl Model for Sir {
    fn name(&self) -> &str {
        "sir"
    }

    fn design_bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn param_dim(&self) -> usize {
        2
    }

    fn conditionally_independent(&self) -> bool {
        false
    }

    fn sample_theta(&self, rng: &mut dyn Rng) -> Vec<f64> {
        let beta = LogNormal::new(self.beta_log_mean, self.beta_log_std)
            .unwrap()
            .sample(rng);
        let gamma = LogNormal::new(self.gamma_log_mean, self.gamma_log_std)
            .unwrap()
            .sample(rng);
        vec![beta, gamma]
    }

    fn init_latent(&self, theta0: &[f64], rng: &mut dyn Rng) -> TrajectoryLatent {
        let path = self.simulate_path(theta0[0], theta0[1], rng);
        TrajectoryLatent::SirPath(path.infected)
    }

    fn simulate(
        &self,
        _theta: &[f64],
        design: &[f64],
        latent: &mut TrajectoryLatent,
        rng: &mut dyn Rng,
    ) -> Result<Vec<f64>, CoreError> {
        let design = clamp_design(&self.bounds, design, &self.clamped)?;
        let TrajectoryLatent::SirPath(infected) = latent else {
            return Err(CoreError::contract(
                "sir simulate needs the epidemic-path latent from init_latent",
            ));
        };
        let clean = infected[self.grid_index(design[0])];
        let z: f64 = StandardNormal.sample(rng);
        let y = (clean + self.obs_noise_std * z)
            .round()
            .clamp(0.0, self.population);
        Ok(vec![y])
    }

    fn clamp_counter(&self) -> &AtomicU64 {
        &self.clamped
    }

    fn theta_whitening(&self) -> Whitening {
        // Log-normal mean exp(mu + s^2/2) and std mean*sqrt(exp(s^2) - 1).
        let m = |mu: f64, s: f64| (mu + 0.5 * s * s).exp();
        let sd = |mu: f64, s: f64| m(mu, s) * ((s * s).exp() - 1.0).sqrt();
        Whitening::new(
            vec![
                m(self.beta_log_mean, self.beta_log_std),
                m(self.gamma_log_mean, self.gamma_log_std),
            ],
            vec![
                sd(self.beta_log_mean, self.beta_log_std),
                sd(self.gamma_log_mean, self.gamma_log_std),
            ],
        )
    }

    fn obs_whitening(&self) -> Whitening {
        // Prior-predictive infected-count scale over uniform measurement
        // times, rounded from a Monte-Carlo tabulation at the defaults.
        Whitening::new(vec![0.1 * self.population], vec![0.16 * self.population])
    }
}
