//! Feature-distribution geometry for long-tailed classification.
//!
//! The crate estimates per-class covariance eigen-geometries, compares them,
//! provides the distribution theory of inner products between random unit
//! vectors, and implements feature uncertainty representation: tail-class
//! features are translated along the eigenvectors of their most similar head
//! class. A small MLP and a three-phase training pipeline tie the pieces
//! together on synthetic long-tailed data.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the common instantiations.

pub mod dataio;
pub mod error;
pub mod fur;
pub mod geometry;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod randvec;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type SymMatrix64 = linalg::SymMatrix<f64>;
pub type SymMatrix32 = linalg::SymMatrix<f32>;
pub type EigenDecomposition64 = linalg::EigenDecomposition<f64>;
pub type EigenDecomposition32 = linalg::EigenDecomposition<f32>;
pub type FeatureSet64 = dataio::FeatureSet<f64>;
pub type FeatureSet32 = dataio::FeatureSet<f32>;
pub type GeometryBasis64 = geometry::GeometryBasis<f64>;
pub type GeometryBasis32 = geometry::GeometryBasis<f32>;
pub type AlignmentMatrix64 = geometry::AlignmentMatrix<f64>;
pub type AugmentedBatch64 = fur::AugmentedBatch<f64>;
pub type AugmentedBatch32 = fur::AugmentedBatch<f32>;
pub type HeadDonors64 = fur::HeadDonors<f64>;
pub type Model64 = model::Model<f64>;
pub type Model32 = model::Model<f32>;
pub type Sgd64 = model::Sgd<f64>;
pub type RunOutput64 = pipeline::RunOutput<f64>;
