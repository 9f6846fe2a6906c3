//! Core building blocks for self-supervised water segmentation on multiband
//! rasters.
//!
//! The crate is organized around a small reverse-mode autodiff engine
//! ([`tensor`]) that powers three networks: an image-to-image SWIR synthesis
//! GAN ([`swir`]), a run-time pseudo-label refiner ([`refiner`]) and an
//! encoder-decoder segmentor ([`segmentation`]). Classical water indices
//! ([`indices`]), exact Euclidean distance maps ([`distmap`]), confusion-matrix
//! metrics ([`metrics`]) and a deterministic synthetic scene generator
//! ([`synth`]) make the whole pipeline runnable and verifiable on one CPU core
//! without any satellite data.

pub mod distmap;
pub mod error;
pub mod gradcheck;
pub mod indices;
pub mod mask;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod refiner;
pub mod seeds;
pub mod segmentation;
pub mod swir;
pub mod synth;
pub mod tensor;

pub use error::{CoreError, Result};
pub use tensor::Tensor;
