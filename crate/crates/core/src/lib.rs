//! Multi-camera people localization on a discretized ground plane.
//!
//! The crate estimates a probabilistic occupancy map (POM): a per-cell
//! probability of presence, inferred from per-camera observation fields by
//! natural-gradient mean-field updates on a grid CRF whose potentials are
//!
//! * a unary term pooled over cameras from per-location presence scores,
//! * a short-range pairwise repulsion on the grid,
//! * an occlusion-aware high-order term that ties each image pixel to the
//!   depth-ordered list of grid locations projecting onto it.
//!
//! Supporting subsystems: a synthetic scene simulator with a generative
//! occlusion model ([`scene`]), discriminative observation fields and their
//! binary file format ([`field`]), exact potential evaluation ([`potentials`]),
//! the mean-field solver plus an exact enumeration reference ([`inference`]),
//! mixture/scale/EM training ([`training`]), detection metrics ([`metrics`])
//! and min-cost-flow temporal linking ([`tracking`]).
//!
//! All probability/energy math is generic over the floating scalar via
//! [`Real`]; the aliases at the crate root fix the double-precision pipeline
//! used by the command-line tools.

pub mod field;
pub mod geometry;
pub mod inference;
pub mod metrics;
pub mod potentials;
pub mod sat;
pub mod scalar;
pub mod scene;
pub mod tracking;
pub mod training;

mod error;

pub use error::{Error, Result};
pub use scalar::Real;

/// Occupancy map (per-cell probabilities) of the double-precision pipeline.
pub type Pom = Vec<f64>;

/// Double-precision aliases for the generic pipeline types.
pub type ObservationField64 = field::ObservationField<f64>;
pub type GaussianModeBank64 = field::GaussianModeBank<f64>;
pub type PotentialBundle64 = potentials::PotentialBundle<f64>;
pub type UnaryScores64 = potentials::UnaryScores<f64>;
pub type InferenceConfig64 = inference::InferenceConfig<f64>;
pub type OcclusionParams64 = scene::OcclusionParams<f64>;
pub type EmConfig64 = training::EmConfig<f64>;
pub type DetectionSet64 = metrics::DetectionSet<f64>;
