use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::latent::classifier::{train_classifier, Classifier, ClassifierConfig, EVAL_CHUNK, TRUNK_DEPTH};
use crate::numerics::rng::derived;
use crate::numerics::{Graph, Tensor, WeightMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    pub classifier: ClassifierConfig,
    /// Number of classifier layers run before the activation is read out.
    pub tap: usize,
    /// Average-pooling window applied to the tapped feature map (1 = none).
    pub pool: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            classifier: ClassifierConfig::default(),
            tap: TRUNK_DEPTH,
            pool: 1,
        }
    }
}

/// Network whose intermediate activation serves as the conditioning code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub classifier: Classifier,
    pub tap: usize,
    pub pool: usize,
    /// Held-out accuracy of the underlying classifier, when it was trained.
    pub accuracy: Option<f64>,
}

impl FeatureExtractor {
    pub fn new(classifier: Classifier, tap: usize, pool: usize) -> Result<Self> {
        let layers = classifier.network.layers.len();
        if tap == 0 || tap > layers {
            return Err(Error::InvalidArgument(format!("tap layer {tap} outside 1..={layers}")));
        }
        if pool == 0 {
            return Err(Error::InvalidArgument("pool window must be positive".into()));
        }
        let ex = Self {
            classifier,
            tap,
            pool,
            accuracy: None,
        };
        ex.tap_shape()?;
        Ok(ex)
    }

    /// Seeded network with no training.
    pub fn untrained(image_shape: &[usize], num_classes: usize, cfg: &ExtractorConfig) -> Result<Self> {
        let clf = Classifier::init(image_shape, num_classes, &cfg.classifier)?;
        Self::new(clf, cfg.tap, cfg.pool)
    }

    pub fn image_shape(&self) -> &[usize] {
        &self.classifier.network.input_shape
    }

    fn tap_shape(&self) -> Result<Vec<usize>> {
        let shape = self.classifier.network.shapes()?.swap_remove(self.tap);
        if self.pool == 1 {
            return Ok(shape);
        }
        match shape[..] {
            [c, h, w] if h % self.pool == 0 && w % self.pool == 0 => Ok(vec![c, h / self.pool, w / self.pool]),
            _ => Err(Error::InvalidArgument(format!(
                "cannot pool tap activation {shape:?} by {}",
                self.pool
            ))),
        }
    }

    /// Length of one feature vector.
    pub fn feature_dim(&self) -> usize {
        self.tap_shape().expect("validated at construction").iter().product()
    }

    /// Row `i` is the flattened tap activation of image `i`.
    pub fn extract(&self, images: &Tensor) -> Result<Tensor> {
        let shape = images.shape();
        if shape.len() != 4 || shape[1..] != self.image_shape()[..] {
            let mut expected = vec![shape.first().copied().unwrap_or(0)];
            expected.extend(self.image_shape());
            return Err(Error::shape("feature extractor input", &expected, shape));
        }
        let n = shape[0];
        let dim = self.feature_dim();
        let mut out = Vec::with_capacity(n * dim);
        for start in (0..n).step_by(EVAL_CHUNK) {
            let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
            let mut g = Graph::new();
            let x = g.input(images.select_rows(&idx)?);
            let acts = self.classifier.network.forward_until(
                &mut g,
                &self.classifier.params,
                x,
                &mut WeightMode::Frozen,
                self.tap,
            )?;
            let mut h = *acts.last().unwrap();
            if self.pool > 1 {
                h = g.avg_pool(h, self.pool)?;
            }
            out.extend_from_slice(g.value(h).data());
        }
        let t = Tensor::new([n, dim], out)?;
        t.check_finite("extracted features")?;
        Ok(t)
    }
}

/// Extracted feature rows, optionally carrying labels for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub features: Tensor,
    pub labels: Option<Vec<usize>>,
}

impl FeatureSet {
    pub fn new(features: Tensor, labels: Option<Vec<usize>>) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::shape("feature set [N, F]", &[1, 1], features.shape()));
        }
        features.check_finite("feature set")?;
        if let Some(l) = &labels {
            if l.len() != features.shape()[0] {
                return Err(Error::InvalidArgument(format!(
                    "{} feature rows but {} labels",
                    features.shape()[0],
                    l.len()
                )));
            }
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    /// Standard-normal features that ignore the images entirely.
    pub fn random(labels: &[usize], dim: usize, seed: u64) -> Result<Self> {
        let mut rng = derived(seed, "random-features");
        let data = (0..labels.len() * dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self::new(Tensor::new([labels.len(), dim], data)?, Some(labels.to_vec()))
    }

    /// One-hot class codes: a perfectly clustered space.
    pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Self> {
        let mut data = vec![0.0; labels.len() * num_classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= num_classes {
                return Err(Error::InvalidArgument(format!("label {l} ≥ {num_classes}")));
            }
            data[i * num_classes + l] = 1.0;
        }
        Self::new(Tensor::new([labels.len(), num_classes], data)?, Some(labels.to_vec()))
    }
}

/// Features of every image in `dataset`, labelled for evaluation.
pub fn extract_features(extractor: &FeatureExtractor, dataset: &Dataset) -> Result<FeatureSet> {
    FeatureSet::new(extractor.extract(dataset.images())?, Some(dataset.labels().to_vec()))
}

/// Trains the classifier on `dataset` and wraps it as an extractor tapping `cfg.tap`.
/// Zero epochs return the seeded initial network.
pub fn train_extractor(dataset: &Dataset, cfg: &ExtractorConfig) -> Result<FeatureExtractor> {
    let (clf, accuracy) = train_classifier(dataset, &cfg.classifier)?;
    let mut ex = FeatureExtractor::new(clf, cfg.tap, cfg.pool)?;
    ex.accuracy = Some(accuracy);
    Ok(ex)
}
