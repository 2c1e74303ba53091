//! Small convolutional classifier, shared by the feature extractor and the
//! evaluation oracle.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::rng::derived;
use crate::numerics::{adam_step, AdamConfig, AdamState, Graph, Layer, Network, ParamStore, Tensor, WeightMode};

/// Rows per forward pass when only predictions are needed.
pub(crate) const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    /// Channels of both convolution layers.
    pub width: usize,
    /// Width of the penultimate dense layer.
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
    /// Held-out accuracy required, if any; checked after training.
    pub min_accuracy: Option<f64>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            width: 8,
            hidden: 32,
            epochs: 8,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            min_accuracy: None,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "classifier width, hidden and batch_size must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument("classifier lr must be positive".into()));
        }
        Ok(())
    }
}

/// Layer index after which the convolutional trunk ends (the default feature tap).
pub const TRUNK_DEPTH: usize = 4;
/// Layer index after which the penultimate embedding is available.
pub const EMBEDDING_DEPTH: usize = 7;

/// conv3×3 → leaky → conv3×3/2 → leaky → flatten → dense → leaky → dense (logits).
pub fn classifier_network(image_shape: &[usize], num_classes: usize, width: usize, hidden: usize) -> Result<Network> {
    let [c, h, w] = image_shape else {
        return Err(Error::shape("classifier input [C, H, W]", &[1, 1, 1], image_shape));
    };
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    Network::new(
        "clf",
        image_shape.to_vec(),
        vec![
            Layer::Conv2d {
                in_channels: *c,
                out_channels: width,
                kernel: 3,
                stride: 1,
                pad: 1,
            },
            Layer::LeakyRelu { slope: 0.2 },
            Layer::Conv2d {
                in_channels: width,
                out_channels: width,
                kernel: 3,
                stride: 2,
                pad: 1,
            },
            Layer::LeakyRelu { slope: 0.2 },
            Layer::Flatten,
            Layer::Affine {
                inputs: width * oh * ow,
                outputs: hidden,
            },
            Layer::LeakyRelu { slope: 0.2 },
            Layer::Affine {
                inputs: hidden,
                outputs: num_classes,
            },
        ],
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub network: Network,
    pub params: ParamStore,
    pub num_classes: usize,
}

impl Classifier {
    pub fn init(image_shape: &[usize], num_classes: usize, cfg: &ClassifierConfig) -> Result<Self> {
        cfg.validate()?;
        let network = classifier_network(image_shape, num_classes, cfg.width, cfg.hidden)?;
        let params = network.init(&mut derived(cfg.seed, "classifier-init"))?;
        Ok(Self {
            network,
            params,
            num_classes,
        })
    }

    /// Activation after `depth` layers, flattened to `[N, ·]`, computed in fixed-size chunks.
    pub fn activations(&self, images: &Tensor, depth: usize) -> Result<Tensor> {
        let n = images.shape()[0];
        let mut parts = Vec::new();
        for start in (0..n).step_by(EVAL_CHUNK) {
            let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
            let mut g = Graph::new();
            let x = g.input(images.select_rows(&idx)?);
            let acts = self
                .network
                .forward_until(&mut g, &self.params, x, &mut WeightMode::Frozen, depth)?;
            let out = g.value(*acts.last().unwrap());
            let width = out.numel() / idx.len();
            parts.push(out.clone().reshape([idx.len(), width])?);
        }
        Tensor::stack_rows(&parts.iter().collect::<Vec<_>>())
    }

    pub fn logits(&self, images: &Tensor) -> Result<Tensor> {
        self.activations(images, self.network.layers.len())
    }

    /// Row-wise softmax of the logits.
    pub fn probabilities(&self, images: &Tensor) -> Result<Tensor> {
        let mut t = self.logits(images)?;
        let k = self.num_classes;
        for row in t.data_mut().chunks_mut(k) {
            crate::numerics::graph::softmax_in_place(row);
        }
        Ok(t)
    }

    pub fn predict(&self, images: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(images)?;
        Ok(logits.data().chunks(self.num_classes).map(argmax).collect())
    }

    pub fn accuracy(&self, dataset: &Dataset) -> Result<f64> {
        let pred = self.predict(dataset.images())?;
        let hits = pred.iter().zip(dataset.labels()).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / dataset.len() as f64)
    }

    /// Minibatch cross-entropy training with Adam; reshuffles every epoch.
    pub fn fit(&mut self, train: &Dataset, cfg: &ClassifierConfig) -> Result<()> {
        cfg.validate()?;
        if train.num_classes() > self.num_classes {
            return Err(Error::InvalidArgument(format!(
                "dataset has {} classes, classifier {}",
                train.num_classes(),
                self.num_classes
            )));
        }
        let adam = AdamConfig {
            lr: cfg.lr,
            beta1: 0.9,
            beta2: 0.999,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&self.params, adam);
        let mut rng = derived(cfg.seed, "classifier-shuffle");
        let mut order: Vec<usize> = (0..train.len()).collect();
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0f64;
            for batch in order.chunks(cfg.batch_size) {
                let mut g = Graph::new();
                let x = g.input(train.images().select_rows(batch)?);
                let labels: Vec<usize> = batch.iter().map(|&i| train.labels()[i]).collect();
                let acts = self
                    .network
                    .forward(&mut g, &self.params, x, &mut WeightMode::Trainable)?;
                let loss = g.softmax_cross_entropy(*acts.last().unwrap(), &labels)?;
                total += g.value(loss).item()? as f64 * batch.len() as f64;
                let grads = g.backward(loss)?.for_params(&self.params);
                adam_step(&mut self.params, &grads, &mut state)?;
            }
            log::debug!("classifier epoch {epoch}: loss {:.4}", total / train.len() as f64);
        }
        Ok(())
    }
}

pub(crate) fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Trains on a 5:1 split of `dataset`; returns the classifier and its held-out accuracy.
/// Fails with [`Error::NonConvergence`] if `cfg.min_accuracy` is not met.
pub fn train_classifier(dataset: &Dataset, cfg: &ClassifierConfig) -> Result<(Classifier, f64)> {
    let (train, test) = dataset.split(cfg.seed)?;
    let mut clf = Classifier::init(&dataset.image_shape(), dataset.num_classes(), cfg)?;
    clf.fit(&train, cfg)?;
    let accuracy = clf.accuracy(&test)?;
    if let Some(required) = cfg.min_accuracy {
        if accuracy < required {
            return Err(Error::NonConvergence { accuracy, required });
        }
    }
    Ok((clf, accuracy))
}
