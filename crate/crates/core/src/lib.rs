//! Amortized experimental-design training and evaluation for simulator models.
//!
//! The crate is organized around a small set of layers:
//!
//! * [`model`]: the simulator interface and the four built-in models,
//! * [`env`]: trajectory state, fixed-capacity histories, and their flat encoding,
//! * [`replay`]: the transition buffer used by the off-policy learner,
//! * [`estimators`]: contrastive information bounds, rewards, and posterior weights,
//! * [`critic`]: the learned history/parameter scorer and its target copy,
//! * [`policy`]: design policies (neural, random, fixed) and the twin Q nets,
//! * [`trainer`]: the actor-critic training loop,
//! * [`config`], [`checkpoint`], [`report`]: run configuration and persistence.
//!
//! All numeric work is in `f64`.

pub mod checkpoint;
pub mod critic;
pub mod diag;
pub mod env;
pub mod error;
pub mod estimators;
pub mod model;
pub mod models;
pub mod policy;
pub mod replay;
pub mod trainer;

pub use error::CoreError;
pub use model::{Model, TrajectoryLatent};
