//! Reverse-mode automatic differentiation on a flat tape, plus the small
//! neural building blocks used by the rest of the workspace: dense layers,
//! an LSTM cell, attention sum-pooling, Adam, and Polyak averaging.
//!
//! The tape ([`Graph`]) is rebuilt per forward pass. Network parameters live
//! outside the tape as [`Param`] arrays; a pass binds them as leaf nodes,
//! `backward` fills per-node gradients, and the caller scatters leaf
//! gradients back into the owning [`Param`]s. This keeps networks plain
//! data (cloneable for target copies, trivially serialisable) at the cost
//! of one values copy per pass.
//!
//! All math is generic over the scalar type via [`Real`]; the crate root
//! exports `f64` aliases, which is what the rest of the workspace uses.

use std::fmt::{Debug, Display};

use num_traits::{Float, NumAssignOps};

pub mod check;
pub mod error;
pub mod graph;
pub mod layers;
pub mod opt;

pub use check::{finite_diff_check, FdReport};
pub use error::NnError;
pub use graph::{logsumexp, Graph, Var};
pub use layers::{
    Activation, AttentionPool, AttentionPoolVars, Linear, LinearVars, Lstm, LstmVars, Mlp,
    MlpSpec, MlpVars, Param,
};
pub use opt::{soft_update, Adam};

/// Scalar type the tape and layers are generic over.
pub trait Real: Float + NumAssignOps + Debug + Display + Default + Send + Sync + 'static {
    /// Lossy conversion from `f64`, for literals and hyperparameters.
    fn from_f64(x: f64) -> Self {
        Self::from(x).expect("f64 literal representable in scalar type")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type Graph64 = Graph<f64>;
pub type Param64 = Param<f64>;
pub type Linear64 = Linear<f64>;
pub type Mlp64 = Mlp<f64>;
pub type Lstm64 = Lstm<f64>;
pub type AttentionPool64 = AttentionPool<f64>;
pub type Adam64 = Adam<f64>;
