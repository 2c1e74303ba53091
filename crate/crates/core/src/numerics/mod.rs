//! Differentiable numeric backbone.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod linalg;
pub mod rng;
pub mod spectral;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use graph::{Gradients, Graph, Var};
pub use layers::{Layer, Network, WeightMode};
pub use spectral::{spectral_normalize, SpectralState};
pub use tensor::{ParamStore, Tensor};
