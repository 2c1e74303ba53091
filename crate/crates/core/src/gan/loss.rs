//! Loss terms. Probabilities are clamped to `[PROB_FLOOR, 1 − PROB_FLOOR]`
//! before every logarithm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gan::Discriminator;
use crate::numerics::{Graph, Var};

pub const PROB_FLOOR: f32 = 1e-7;

/// `mean log p`.
pub fn mean_log(g: &mut Graph, p: Var) -> Result<Var> {
    let l = g.log_clamped(p, PROB_FLOOR, 1.0 - PROB_FLOOR)?;
    g.mean(l)
}

/// `mean log(1 − p)`.
pub fn mean_log_complement(g: &mut Graph, p: Var) -> Result<Var> {
    let q = g.scale_shift(p, -1.0, 1.0)?;
    let l = g.log_clamped(q, PROB_FLOOR, 1.0 - PROB_FLOOR)?;
    g.mean(l)
}

fn finite(g: &Graph, v: Var, what: &str) -> Result<Var> {
    g.try_value(v)?.check_finite(what)?;
    Ok(v)
}

/// `mean log(1 − D([real_correct, fake]))`.
pub fn loss_adv(g: &mut Graph, d: &Discriminator, real_correct: Var, fake: Var, trainable: bool) -> Result<Var> {
    let p = d.forward(g, real_correct, Some(fake), trainable)?;
    let l = mean_log_complement(g, p)?;
    finite(g, l, "adversarial loss")
}

/// `mean log D([a, b])` for two real images of the same presumed class.
pub fn loss_same(g: &mut Graph, d: &Discriminator, a: Var, b: Var, trainable: bool) -> Result<Var> {
    let p = d.forward(g, a, Some(b), trainable)?;
    let l = mean_log(g, p)?;
    finite(g, l, "same-pair loss")
}

/// `mean log(1 − D([real_correct, real_wrong]))`.
pub fn loss_diff(g: &mut Graph, d: &Discriminator, real_correct: Var, real_wrong: Var, trainable: bool) -> Result<Var> {
    let p = d.forward(g, real_correct, Some(real_wrong), trainable)?;
    let l = mean_log_complement(g, p)?;
    finite(g, l, "different-pair loss")
}

/// Non-saturating generator loss `−mean log D([real_correct, fake])`.
pub fn loss_generator(g: &mut Graph, d: &Discriminator, real_correct: Var, fake: Var) -> Result<Var> {
    let p = d.forward(g, real_correct, Some(fake), false)?;
    let l = mean_log(g, p)?;
    let l = g.scale_shift(l, -1.0, 0.0)?;
    finite(g, l, "generator loss")
}

/// Single-image game: returns `(mean log D(real) + mean log(1 − D(fake)), −mean log D(fake))`.
/// Each side is recorded with its own weights trainable and the other's frozen,
/// so build them on separate graphs when both are differentiated.
pub fn loss_minimax(
    g: &mut Graph,
    d: &Discriminator,
    real: Var,
    fake: Var,
    train_discriminator: bool,
) -> Result<(Var, Var)> {
    let p_real = d.forward(g, real, None, train_discriminator)?;
    let p_fake = d.forward(g, fake, None, train_discriminator)?;
    let a = mean_log(g, p_real)?;
    let b = mean_log_complement(g, p_fake)?;
    let disc = g.add(a, b)?;
    let gen = mean_log(g, p_fake)?;
    let gen = g.scale_shift(gen, -1.0, 0.0)?;
    Ok((
        finite(g, disc, "minimax discriminator loss")?,
        finite(g, gen, "minimax generator loss")?,
    ))
}

/// Coefficients of the coupled objective and which terms are active.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub adv: f32,
    pub same: f32,
    pub diff: f32,
    pub use_adv: bool,
    pub use_same: bool,
    pub use_diff: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            adv: 1.0,
            same: 1.0,
            diff: 1.0,
            use_adv: true,
            use_same: true,
            use_diff: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("adv", self.adv), ("same", self.same), ("diff", self.diff)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "loss weight {name} = {v} must be non-negative"
                )));
            }
        }
        let active = [
            (self.use_adv, self.adv),
            (self.use_same, self.same),
            (self.use_diff, self.diff),
        ];
        if !active.iter().any(|&(on, w)| on && w > 0.0) {
            return Err(Error::InvalidArgument("every loss term is disabled".into()));
        }
        Ok(())
    }

    /// Active terms with their coefficient, in (adv, same, diff) order.
    pub fn active(&self) -> [Option<f32>; 3] {
        [
            (self.use_adv && self.adv > 0.0).then_some(self.adv),
            (self.use_same && self.same > 0.0).then_some(self.same),
            (self.use_diff && self.diff > 0.0).then_some(self.diff),
        ]
    }
}

/// Individual term values (absent when disabled).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerms<T> {
    pub adv: Option<T>,
    pub same: Option<T>,
    pub diff: Option<T>,
}

impl<T> Default for LossTerms<T> {
    fn default() -> Self {
        Self {
            adv: None,
            same: None,
            diff: None,
        }
    }
}

/// `Σ λ·term` over the enabled terms; the discriminator ascends this.
pub fn loss_discriminator(g: &mut Graph, weights: &LossWeights, terms: &LossTerms<Var>) -> Result<Var> {
    weights.validate()?;
    let mut total: Option<Var> = None;
    for (w, term, name) in [
        (weights.active()[0], terms.adv, "adv"),
        (weights.active()[1], terms.same, "same"),
        (weights.active()[2], terms.diff, "diff"),
    ] {
        let Some(w) = w else { continue };
        let t = term.ok_or_else(|| Error::InvalidArgument(format!("enabled term {name} not supplied")))?;
        let scaled = g.scale_shift(t, w, 0.0)?;
        total = Some(match total {
            Some(acc) => g.add(acc, scaled)?,
            None => scaled,
        });
    }
    total.ok_or_else(|| Error::InvalidArgument("every loss term is disabled".into()))
}

/// Scalar form of [`loss_discriminator`].
pub fn combine_terms(weights: &LossWeights, terms: &LossTerms<f64>) -> Result<f64> {
    weights.validate()?;
    let mut total = 0.0;
    for (w, t) in weights.active().into_iter().zip([terms.adv, terms.same, terms.diff]) {
        if let Some(w) = w {
            total += w as f64 * t.ok_or_else(|| Error::InvalidArgument("enabled term not supplied".into()))?;
        }
    }
    Ok(total)
}
