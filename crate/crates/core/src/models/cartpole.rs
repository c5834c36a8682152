//! Cart-pole probed by horizontal impulses.
//!
//! A pole hangs on a frictional revolute joint on a sliding cart. The
//! unknown parameters are the joint friction and the pole mass; each
//! experiment kicks the cart with an impulse and reads the state one step
//! duration later. The mechanical state carries over between experiments,
//! so experiments are not conditionally independent.
//!
//! Dynamics follow the standard rigid-rod cart-pole equations with a
//! viscous joint-friction torque, integrated by semi-implicit Euler.
//! The pole angle is measured from the upright position.

use std::sync::atomic::AtomicU64;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::CoreError;
use crate::model::{clamp_design, Model, TrajectoryLatent, Whitening};

const GRAVITY: f64 = 9.81;

#[derive(Debug)]
pub struct Cartpole {
    cart_mass: f64,
    pole_length: f64,
    step_duration: f64,
    substeps: usize,
    friction_max: f64,
    pole_mass_range: (f64, f64),
    initial_angle: f64,
    bounds: [(f64, f64); 1],
    clamped: AtomicU64,
}

impl Cartpole {
    pub fn new(
        cart_mass: f64,
        pole_length: f64,
        impulse_max: f64,
        initial_angle: f64,
    ) -> Result<Self, CoreError> {
        if cart_mass <= 0.0 || pole_length <= 0.0 || impulse_max <= 0.0 {
            return Err(CoreError::config(
                "cartpole masses, lengths, and impulse bound must be positive".to_string(),
            ));
        }
        Ok(Cartpole {
            cart_mass,
            pole_length,
            step_duration: 1.0 / 6.0,
            substeps: 60,
            friction_max: 0.2,
            pole_mass_range: (0.5, 1.5),
            initial_angle,
            bounds: [(-impulse_max, impulse_max)],
            clamped: AtomicU64::new(0),
        })
    }

    /// Unit cart mass, half-meter pole, impulses in [-3, 3] N s, pole
    /// starting 0.1 rad from upright.
    pub fn standard() -> Self {
        Cartpole::new(1.0, 0.5, 3.0, 0.1).unwrap()
    }

    /// Distance from the pivot to the pole's center of mass.
    fn com_offset(&self) -> f64 {
        self.pole_length / 2.0
    }

    fn accelerations(&self, friction: f64, pole_mass: f64, state: &[f64; 4]) -> (f64, f64) {
        let [_, _, phi, phi_dot] = *state;
        let l = self.com_offset();
        let total = self.cart_mass + pole_mass;
        let (sin, cos) = phi.sin_cos();
        let phi_acc = (GRAVITY * sin - cos * pole_mass * l * phi_dot * phi_dot * sin / total
            - friction * phi_dot / (pole_mass * l))
            / (l * (4.0 / 3.0 - pole_mass * cos * cos / total));
        let x_acc = pole_mass * l * (phi_dot * phi_dot * sin - phi_acc * cos) / total;
        (x_acc, phi_acc)
    }

    /// Advances the state by one step duration after an instantaneous
    /// impulse on the cart.
    pub fn advance(&self, friction: f64, pole_mass: f64, state: &mut [f64; 4], impulse: f64) {
        state[1] += impulse / (self.cart_mass + pole_mass);
        let dt = self.step_duration / self.substeps as f64;
        for _ in 0..self.substeps {
            let (x_acc, phi_acc) = self.accelerations(friction, pole_mass, state);
            state[1] += x_acc * dt;
            state[3] += phi_acc * dt;
            state[0] += state[1] * dt;
            state[2] += state[3] * dt;
        }
    }

    /// Total mechanical energy of a state, with potential zero at pivot height.
    pub fn mechanical_energy(&self, pole_mass: f64, state: &[f64; 4]) -> f64 {
        let [_, x_dot, phi, phi_dot] = *state;
        let l = self.com_offset();
        let total = self.cart_mass + pole_mass;
        0.5 * total * x_dot * x_dot
            + pole_mass * l * x_dot * phi_dot * phi.cos()
            + (2.0 / 3.0) * pole_mass * l * l * phi_dot * phi_dot
            + pole_mass * GRAVITY * l * phi.cos()
    }

    pub fn initial_state(&self) -> [f64; 4] {
        [0.0, 0.0, self.initial_angle, 0.0]
    }
}

impl Model for Cartpole {
    fn name(&self) -> &str {
        "cartpole"
    }

    fn design_bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    fn obs_dim(&self) -> usize {
        3
    }

    /// Parameters are (joint friction, pole mass).
    fn param_dim(&self) -> usize {
        2
    }

    fn conditionally_independent(&self) -> bool {
        false
    }

    fn sample_theta(&self, rng: &mut dyn Rng) -> Vec<f64> {
        let friction = Uniform::new(0.0, self.friction_max)
            .unwrap()
            .sample(rng);
        let mass = Uniform::new(self.pole_mass_range.0, self.pole_mass_range.1)
            .unwrap()
            .sample(rng);
        vec![friction, mass]
    }

    fn init_latent(&self, _theta0: &[f64], _rng: &mut dyn Rng) -> TrajectoryLatent {
        TrajectoryLatent::CartpoleState(self.initial_state())
    }

    fn simulate(
        &self,
        theta: &[f64],
        design: &[f64],
        latent: &mut TrajectoryLatent,
        _rng: &mut dyn Rng,
    ) -> Result<Vec<f64>, CoreError> {
        let design = clamp_design(&self.bounds, design, &self.clamped)?;
        let TrajectoryLatent::CartpoleState(state) = latent else {
            return Err(CoreError::contract(
                "cartpole simulate needs the mechanical-state latent from init_latent",
            ));
        };
        // Friction at exactly zero pole mass would blow up; the prior
        // keeps mass well away from zero.
        self.advance(theta[0], theta[1], state, design[0]);
        Ok(vec![state[0], state[1], state[2]])
    }

    fn clamp_counter(&self) -> &AtomicU64 {
        &self.clamped
    }

    fn theta_whitening(&self) -> Whitening {
        let u_std = |lo: f64, hi: f64| (hi - lo) / 12f64.sqrt();
        Whitening::new(
            vec![
                self.friction_max / 2.0,
                (self.pole_mass_range.0 + self.pole_mass_range.1) / 2.0,
            ],
            vec![
                u_std(0.0, self.friction_max),
                u_std(self.pole_mass_range.0, self.pole_mass_range.1),
            ],
        )
    }

    fn obs_whitening(&self) -> Whitening {
        // Typical ranges under random impulse probing, rounded from a
        // Monte-Carlo tabulation at the defaults.
        Whitening::new(vec![0.0, 0.0, 2.5], vec![1.25, 2.0, 1.75])
    }
}
