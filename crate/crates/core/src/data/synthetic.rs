//! Seeded glyph datasets: one fixed binary pattern per class, overlaid with
//! shared clutter patterns and per-pixel noise.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::rng::{derived, seeded};
use crate::numerics::Tensor;

/// Glyphs and clutter patterns are fixed per image size, independent of the seed.
const PATTERN_SEED: u64 = 0x6c79_7068;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub image_side: usize,
    /// Half-width of the uniform per-pixel noise.
    pub noise: f32,
    /// Intensity of the class-independent clutter pattern added to each image.
    pub clutter: f32,
    /// Number of distinct clutter patterns.
    pub clutter_patterns: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            per_class: 250,
            image_side: 8,
            noise: 0.15,
            clutter: 0.0,
            clutter_patterns: 4,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument("synthetic data needs at least 2 classes".into()));
        }
        if self.image_side < 4 {
            return Err(Error::InvalidArgument("synthetic image side must be at least 4".into()));
        }
        if self.per_class == 0 {
            return Err(Error::InvalidArgument("per_class must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.noise) || !(0.0..=1.0).contains(&self.clutter) {
            return Err(Error::InvalidArgument("noise and clutter must lie in [0, 1]".into()));
        }
        if self.clutter > 0.0 && self.clutter_patterns == 0 {
            return Err(Error::InvalidArgument("clutter needs at least one pattern".into()));
        }
        Ok(())
    }
}

/// Default-noise dataset with the given shape; see [`make_synthetic_with`].
pub fn make_synthetic(num_classes: usize, per_class: usize, image_side: usize, seed: u64) -> Result<Dataset> {
    make_synthetic_with(&SyntheticSpec {
        num_classes,
        per_class,
        image_side,
        seed,
        ..SyntheticSpec::default()
    })
}

/// Random binary masks with pairwise Hamming distance at least a quarter of the pixels.
fn distinct_masks(count: usize, pixels: usize, tag: &str) -> Vec<Vec<bool>> {
    let mut rng = derived(PATTERN_SEED, &format!("{tag}-{pixels}"));
    let mut masks: Vec<Vec<bool>> = Vec::with_capacity(count);
    while masks.len() < count {
        let m: Vec<bool> = (0..pixels).map(|_| rng.random_bool(0.5)).collect();
        let far = masks
            .iter()
            .all(|o| o.iter().zip(&m).filter(|(a, b)| a != b).count() * 4 >= pixels);
        if far {
            masks.push(m);
        }
    }
    masks
}

/// Sample `i` has class `i mod num_classes`. Pixel value is
/// `0.2 + 0.6·glyph + clutter·(pattern − ½) + U(−noise, noise)`, clamped to `[0, 1]`.
pub fn make_synthetic_with(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let pixels = spec.image_side * spec.image_side;
    let glyphs = distinct_masks(spec.num_classes, pixels, "glyph");
    let clutter = if spec.clutter > 0.0 {
        distinct_masks(spec.clutter_patterns, pixels, "clutter")
    } else {
        Vec::new()
    };
    let n = spec.num_classes * spec.per_class;
    let mut rng = seeded(spec.seed);
    let mut data = Vec::with_capacity(n * pixels);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % spec.num_classes;
        let pattern = (!clutter.is_empty()).then(|| &clutter[rng.random_range(0..clutter.len())]);
        for p in 0..pixels {
            let mut v = 0.2 + if glyphs[class][p] { 0.6 } else { 0.0 };
            if let Some(mask) = pattern {
                v += spec.clutter * if mask[p] { 0.5 } else { -0.5 };
            }
            if spec.noise > 0.0 {
                v += rng.random_range(-spec.noise..=spec.noise);
            }
            data.push(v.clamp(0.0, 1.0));
        }
        labels.push(class);
    }
    let side = spec.image_side;
    Dataset::new(
        format!("synthetic-{}x{side}", spec.num_classes),
        Tensor::new([n, 1, side, side], data)?,
        labels,
        spec.num_classes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_counts() {
        let d = make_synthetic(4, 10, 8, 1).unwrap();
        assert_eq!(d.len(), 40);
        for c in 0..4 {
            assert_eq!(d.labels().iter().filter(|&&l| l == c).count(), 10);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(
            make_synthetic(4, 10, 8, 1).unwrap(),
            make_synthetic(4, 10, 8, 1).unwrap()
        );
        assert_ne!(
            make_synthetic(4, 10, 8, 1).unwrap(),
            make_synthetic(4, 10, 8, 2).unwrap()
        );
    }

    #[test]
    fn zero_noise_gives_identical_class_members() {
        let spec = SyntheticSpec {
            per_class: 5,
            noise: 0.0,
            ..SyntheticSpec::default()
        };
        let d = make_synthetic_with(&spec).unwrap();
        for i in 4..d.len() {
            assert_eq!(d.images().row(i), d.images().row(i % 4));
        }
        assert_ne!(d.images().row(0), d.images().row(1));
    }

    #[test]
    fn clutter_varies_within_class() {
        let spec = SyntheticSpec {
            per_class: 20,
            noise: 0.0,
            clutter: 0.5,
            ..SyntheticSpec::default()
        };
        let d = make_synthetic_with(&spec).unwrap();
        let distinct = (0..d.len())
            .filter(|i| i % 4 == 0)
            .any(|i| d.images().row(i) != d.images().row(0));
        assert!(distinct);
    }

    #[test]
    fn preconditions() {
        assert!(make_synthetic(1, 10, 8, 0).is_err());
        assert!(make_synthetic(4, 10, 3, 0).is_err());
    }
}
