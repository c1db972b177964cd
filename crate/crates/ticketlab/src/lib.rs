//! Desk-scale lottery-ticket experiments for adversarially trained
//! generative models.
//!
//! The crate bundles a tiny reverse-mode autodiff engine, MLP
//! generator/discriminator definitions with scaled normalization and
//! spectral normalization, unstructured and channel pruning, the
//! iterative-magnitude-pruning ticket pipelines (with rewinding, random
//! baselines, KD regularization and cross-dataset transfer), exact
//! Fréchet-distance scoring on 2-D synthetic data, and a deterministic
//! experiment runner with resumable on-disk archives.

pub mod channel;
pub mod datasets;
pub mod exp;
pub mod metrics;
pub mod models;
pub mod pruning;
pub mod rng;
pub mod tensor;
pub mod tickets;

pub use tensor::Tensor;
