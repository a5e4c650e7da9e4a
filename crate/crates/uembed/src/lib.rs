//! Probabilistic embeddings at desk scale.
//!
//! Each input maps to a diagonal-Gaussian posterior (mean from global average
//! pooling, variance from a second-order head) and every class owns a
//! trainable diagonal-Gaussian prior. The crate provides the tensor engine
//! the models are built on, the distribution and Gaussian-mixture losses,
//! prior-derived soft labels, two-stage training, retrieval metrics with the
//! same-identity same-camera exclusion, seeded corruption protocols, and a 2D
//! projection pipeline for inspecting the learned distributions.

pub mod corrupt;
pub mod data;
pub mod eval;
pub mod gaussian;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod pipeline;
pub mod project;
pub mod rng;
pub mod sigma;
pub mod tensor;
pub mod train;
