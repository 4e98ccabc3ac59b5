//! Spatial placement models.
//!
//! Two stages of "where will the corrected object end up":
//! * [`mlp`]: a small regression network mapping correction-onset
//!   observations (grasp point, grasp velocity) to a predicted release
//!   point.
//! * [`gmm`]: a Gaussian mixture over release residuals (release point
//!   minus goal center), fitted with EM and model-selected by BIC.

pub mod gmm;
pub mod mlp;

pub use gmm::{fit_gmm, GmmDensity, GmmModel, GmmOptions, GmmReport};
pub use mlp::{train_placement, MlpConfig, MlpModel, MlpParams, PlacementPair};
