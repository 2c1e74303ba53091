//! Unsupervised latent-space conditioning for generative adversarial networks.
//!
//! Features from an intermediate layer of an extractor network replace class
//! labels as the conditioning signal. Training batches pair every anchor
//! image with its nearest and farthest neighbour in feature space, and a
//! discriminator that judges *pairs* of images learns to tell consistent
//! pairs from inconsistent ones.
//!
//! Modules, bottom-up:
//!
//! - [`numerics`]: tensors, reverse-mode gradients, layers, Adam, spectral norm.
//! - [`data`]: IDX parsing, synthetic glyph datasets, label-noise injection.
//! - [`latent`]: feature extraction, L1 distances, neighbour purity, PCA export.
//! - [`sampler`]: nearest/farthest triplet batches.
//! - [`gan`]: generator, coupled discriminator, loss terms.
//! - [`training`]: the training loop, checkpoints, the ablation harness.
//! - [`eval`]: oracle classifier, conditional accuracy, Fréchet distance,
//!   Inception Score, robustness sweep, border-effect report, curve export.

pub mod data;
pub mod error;
pub mod eval;
pub mod gan;
pub mod latent;
pub mod numerics;
pub mod sampler;
pub mod training;

pub use error::{Error, Result};
