use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gan::{DiscriminatorSpec, GeneratorSpec, LossWeights};
use crate::numerics::AdamConfig;
use crate::sampler::Neighborhood;

/// Which loss terms the discriminator is trained with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Prototype {
    /// Unconditional single-image minimax game.
    Baseline,
    /// Adversarial pairs only.
    A,
    /// Adversarial and same-class pairs.
    B,
    /// Adversarial and different-class pairs.
    C,
    /// All three pair types.
    Full,
}

impl Prototype {
    pub const ALL: [Prototype; 5] = [Self::Baseline, Self::A, Self::B, Self::C, Self::Full];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::A => "A",
            Self::B => "B",
            Self::C => "C",
            Self::Full => "full",
        }
    }

    /// Coupled-loss weights for this prototype; `None` for the minimax baseline.
    pub fn weights(&self, base: LossWeights) -> Option<LossWeights> {
        let (same, diff) = match self {
            Self::Baseline => return None,
            Self::A => (false, false),
            Self::B => (true, false),
            Self::C => (false, true),
            Self::Full => (base.use_same, base.use_diff),
        };
        Some(LossWeights {
            use_adv: base.use_adv || !matches!(self, Self::Full),
            use_same: same,
            use_diff: diff,
            ..base
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub n_iter: usize,
    /// The discriminator is updated on iterations divisible by `n`.
    pub n: usize,
    /// Update the generator every `n`-th iteration and the discriminator every iteration instead.
    pub swap_roles: bool,
    pub batch_size: usize,
    pub prototype: Prototype,
    pub weights: LossWeights,
    pub neighborhood: Neighborhood,
    pub seed: u64,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub generator_adam: AdamConfig,
    pub discriminator_adam: AdamConfig,
    /// Power-iteration rounds per discriminator update.
    pub power_iters: usize,
    /// Iterations between history snapshots; the final iteration is always recorded.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_iter: 3000,
            n: 1,
            swap_roles: false,
            batch_size: 32,
            prototype: Prototype::Full,
            weights: LossWeights::default(),
            neighborhood: Neighborhood::Batch,
            seed: 0,
            generator: GeneratorSpec::default(),
            discriminator: DiscriminatorSpec::default(),
            generator_adam: AdamConfig::default(),
            discriminator_adam: AdamConfig::default(),
            power_iters: 1,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.n_iter == 0 {
            return bad("n_iter must be at least 1");
        }
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        for adam in [&self.generator_adam, &self.discriminator_adam] {
            if !(adam.lr > 0.0 && adam.lr.is_finite())
                || !(0.0..1.0).contains(&adam.beta1)
                || !(0.0..1.0).contains(&adam.beta2)
            {
                return bad("adam needs lr > 0 and betas in [0, 1)");
            }
        }
        if let Some(w) = self.prototype.weights(self.weights) {
            w.validate()?;
        }
        Ok(())
    }

    /// Whether the generator / discriminator is updated on iteration `i` (0-based).
    pub fn schedule(&self, i: usize) -> (bool, bool) {
        let every_nth = i.is_multiple_of(self.n);
        if self.swap_roles {
            (every_nth, true)
        } else {
            (true, every_nth)
        }
    }
}
