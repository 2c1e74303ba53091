use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::rng::seeded;

/// Fraction of labels to corrupt and the seed that picks them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub fraction: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::InvalidArgument(format!(
                "noise fraction {fraction} outside [0, 1]"
            )));
        }
        Ok(Self { fraction, seed })
    }

    /// Number of labels replaced in a dataset of `n` samples.
    pub fn count(&self, n: usize) -> usize {
        (self.fraction * n as f64).round() as usize
    }
}

/// Replaces exactly `round(p·N)` labels, sampled without replacement, with a
/// uniformly drawn label different from the original. Images are untouched.
pub fn inject_label_noise(dataset: &Dataset, spec: NoiseSpec) -> Result<Dataset> {
    let spec = NoiseSpec::new(spec.fraction, spec.seed)?;
    let n = dataset.len();
    let k = spec.count(n);
    let classes = dataset.num_classes();
    if k > 0 && classes < 2 {
        return Err(Error::InvalidArgument("label noise needs at least two classes".into()));
    }
    let mut rng = seeded(spec.seed);
    let mut labels = dataset.labels().to_vec();
    for i in sample(&mut rng, n, k) {
        let offset = rng.random_range(1..classes);
        labels[i] = (labels[i] + offset) % classes;
    }
    dataset.with_labels(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn dataset(n: usize) -> Dataset {
        Dataset::new("n", Tensor::zeros([n, 1, 1, 1]), (0..n).map(|i| i % 4).collect(), 4).unwrap()
    }

    fn changed(a: &Dataset, b: &Dataset) -> usize {
        a.labels().iter().zip(b.labels()).filter(|(x, y)| x != y).count()
    }

    #[test]
    fn zero_fraction_is_identity() {
        let d = dataset(30);
        assert_eq!(inject_label_noise(&d, NoiseSpec::new(0.0, 1).unwrap()).unwrap(), d);
    }

    #[test]
    fn full_fraction_changes_every_label() {
        let d = dataset(40);
        let noisy = inject_label_noise(&d, NoiseSpec::new(1.0, 2).unwrap()).unwrap();
        assert_eq!(changed(&d, &noisy), 40);
        assert_eq!(noisy.images(), d.images());
    }

    #[test]
    fn half_of_one_hundred_is_fifty() {
        let d = dataset(100);
        let noisy = inject_label_noise(&d, NoiseSpec::new(0.5, 3).unwrap()).unwrap();
        assert_eq!(changed(&d, &noisy), 50);
    }

    #[test]
    fn fraction_out_of_range_rejected() {
        assert!(NoiseSpec::new(1.5, 0).is_err());
        assert!(NoiseSpec::new(-0.1, 0).is_err());
    }
}
