//! Generator, discriminators and the adversarial loss terms.

mod loss;
mod models;

pub use loss::{
    combine_terms, loss_adv, loss_diff, loss_discriminator, loss_generator, loss_minimax, loss_same, mean_log,
    mean_log_complement, LossTerms, LossWeights, PROB_FLOOR,
};
pub use models::{Discriminator, DiscriminatorKind, DiscriminatorSpec, Generator, GeneratorSpec};
