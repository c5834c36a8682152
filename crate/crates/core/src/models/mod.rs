//! Built-in models and their registry.

mod cartpole;
mod linear_gaussian;
mod location_finding;
mod sir;

pub use cartpole::Cartpole;
pub use linear_gaussian::LinearGaussian;
pub use location_finding::LocationFinding;
pub use sir::Sir;

use crate::error::CoreError;
use crate::model::Model;

/// Names accepted by [`build`].
pub const MODEL_NAMES: [&str; 4] = ["location_finding", "sir", "cartpole", "linear_gaussian"];

/// Constructs a model by registry name with default parameters.
pub fn build(name: &str) -> Result<Box<dyn Model>, CoreError> {
    match name {
        "location_finding" => Ok(Box::new(LocationFinding::default_2d())),
        "sir" => Ok(Box::new(Sir::standard())),
        "cartpole" => Ok(Box::new(Cartpole::standard())),
        "linear_gaussian" => Ok(Box::new(LinearGaussian::standard())),
        other => Err(CoreError::config(format!(
            "unknown model '{other}', expected one of {MODEL_NAMES:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_builds_every_listed_model() {
        for name in MODEL_NAMES {
            let model = build(name).unwrap();
            assert_eq!(model.name(), name);
            assert!(model.design_dim() > 0);
            assert!(model.param_dim() > 0);
            assert!(model
                .design_bounds()
                .iter()
                .all(|(lo, hi)| lo.is_finite() && hi.is_finite() && lo < hi));
        }
        assert!(build("unknown").is_err());
    }
}
