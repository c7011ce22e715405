//! Fair Bayesian data selection.
//!
//! Per-group posteriors over classifier parameters and per-sample selection weights are
//! represented by SVGD particles and pulled towards a shared central distribution
//! (Wasserstein, MMD or f-divergence barycenter). All numerics are generic over
//! [`Scalar`]; the aliases below fix the scalar type.

pub mod central;
pub mod data;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod particles;
pub mod posterior;
pub mod rng;
pub mod runner;
pub mod scalar;
pub mod svgd;
pub mod theory;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Dataset = data::Dataset<f64>;
pub type MetaSet = data::MetaSet<f64>;
pub type LabeledExample = data::LabeledExample<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type Particle = particles::Particle<f64>;
pub type ParticleSet = particles::ParticleSet<f64>;
pub type Experiment = runner::Experiment<f64>;
pub type RunState = runner::RunState<f64>;

/// Single-precision variants.
pub mod f32 {
    pub type Dataset = crate::data::Dataset<f32>;
    pub type MetaSet = crate::data::MetaSet<f32>;
    pub type LabeledExample = crate::data::LabeledExample<f32>;
    pub type ModelParams = crate::model::ModelParams<f32>;
    pub type Particle = crate::particles::Particle<f32>;
    pub type ParticleSet = crate::particles::ParticleSet<f32>;
    pub type Experiment = crate::runner::Experiment<f32>;
    pub type RunState = crate::runner::RunState<f32>;
}
