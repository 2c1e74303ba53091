use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{hex, Dataset};
use crate::error::{Error, Result};
use crate::eval::metrics::{frechet_distance, gaussian_stats, inception_score};
use crate::gan::Generator;
use crate::latent::{argmax, train_classifier, Classifier, ClassifierConfig, EMBEDDING_DEPTH};
use crate::numerics::rng::{seeded, SeededRng};
use crate::numerics::Tensor;
use crate::training::{Evaluator, SnapshotMetrics};

pub const DEFAULT_ORACLE_FLOOR: f64 = 0.95;
pub const DEFAULT_EVAL_SAMPLES: usize = 2048;

/// Classifier trained on real data, used to judge generated images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleClassifier {
    pub classifier: Classifier,
    pub test_accuracy: f64,
    pub floor: f64,
}

impl OracleClassifier {
    /// Trains on a 5:1 split of `dataset` and refuses to return an oracle below `floor`.
    pub fn train(dataset: &Dataset, cfg: &ClassifierConfig, floor: f64) -> Result<Self> {
        let cfg = ClassifierConfig {
            min_accuracy: None,
            ..cfg.clone()
        };
        let (classifier, test_accuracy) = train_classifier(dataset, &cfg)?;
        let oracle = Self {
            classifier,
            test_accuracy,
            floor,
        };
        oracle.check()?;
        Ok(oracle)
    }

    pub fn check(&self) -> Result<()> {
        if self.test_accuracy < self.floor {
            return Err(Error::OracleBelowFloor {
                accuracy: self.test_accuracy,
                floor: self.floor,
            });
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes
    }

    /// Penultimate-layer embedding used for Fréchet distances.
    pub fn embed(&self, images: &Tensor) -> Result<Tensor> {
        self.classifier.activations(images, EMBEDDING_DEPTH)
    }

    pub fn probabilities(&self, images: &Tensor) -> Result<Tensor> {
        self.classifier.probabilities(images)
    }

    pub fn predict(&self, images: &Tensor) -> Result<Vec<usize>> {
        self.classifier.predict(images)
    }
}

/// Anything that turns conditioning codes (and their source images) into images.
pub trait ConditionalSource {
    fn render(&self, codes: &Tensor, sources: &Tensor, rng: &mut SeededRng) -> Result<Tensor>;
}

impl ConditionalSource for Generator {
    fn render(&self, codes: &Tensor, _sources: &Tensor, rng: &mut SeededRng) -> Result<Tensor> {
        let b = codes.shape()[0];
        let z = (0..b * self.noise_dim)
            .map(|_| rng.sample::<f32, _>(StandardNormal))
            .collect();
        self.generate(&Tensor::new([b, self.noise_dim], z)?, codes)
    }
}

/// Returns each code's source image unchanged: the accuracy ceiling.
pub struct PassThrough;

impl ConditionalSource for PassThrough {
    fn render(&self, _codes: &Tensor, sources: &Tensor, _rng: &mut SeededRng) -> Result<Tensor> {
        Ok(sources.clone())
    }
}

/// Outcome of conditioning on sampled real images.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalOutcome {
    /// Dataset index of each code's source image.
    pub sources: Vec<usize>,
    /// Whether the oracle assigned the generated image to its source's class.
    pub success: Vec<bool>,
    pub generated: Tensor,
}

impl ConditionalOutcome {
    pub fn accuracy(&self) -> f64 {
        self.success.iter().filter(|&&s| s).count() as f64 / self.success.len() as f64
    }
}

const RENDER_CHUNK: usize = 256;

/// Seeded source order: shuffled passes over the dataset until `n` are drawn.
fn source_order(len: usize, n: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut perm: Vec<usize> = (0..len).collect();
        perm.shuffle(rng);
        out.extend(perm.into_iter().take(n - out.len()));
    }
    out
}

/// Generates one image per sampled source code and checks the oracle's verdict
/// against the source label. `features` row `i` is the code of dataset image `i`.
pub fn conditional_outcome(
    source: &dyn ConditionalSource,
    features: &Tensor,
    oracle: &OracleClassifier,
    dataset: &Dataset,
    num_samples: usize,
    seed: u64,
) -> Result<ConditionalOutcome> {
    oracle.check()?;
    if num_samples == 0 {
        return Err(Error::InvalidArgument("num_samples must be positive".into()));
    }
    if features.shape().first() != Some(&dataset.len()) {
        return Err(Error::shape(
            "conditioning features",
            &[dataset.len()],
            features.shape(),
        ));
    }
    let mut rng = seeded(seed);
    let sources = source_order(dataset.len(), num_samples, &mut rng);
    let mut parts = Vec::new();
    for chunk in sources.chunks(RENDER_CHUNK) {
        let codes = features.select_rows(chunk)?;
        let real = dataset.images().select_rows(chunk)?;
        parts.push(source.render(&codes, &real, &mut rng)?);
    }
    let generated = Tensor::stack_rows(&parts.iter().collect::<Vec<_>>())?;
    let predicted = oracle.predict(&generated)?;
    let success = predicted
        .iter()
        .zip(&sources)
        .map(|(&p, &s)| p == dataset.labels()[s])
        .collect();
    Ok(ConditionalOutcome {
        sources,
        success,
        generated,
    })
}

/// Fraction of generated images the oracle assigns to their code's class.
pub fn conditional_accuracy(
    source: &dyn ConditionalSource,
    features: &Tensor,
    oracle: &OracleClassifier,
    dataset: &Dataset,
    num_samples: usize,
    seed: u64,
) -> Result<f64> {
    Ok(conditional_outcome(source, features, oracle, dataset, num_samples, seed)?.accuracy())
}

/// Accuracy, Fréchet distance and Inception Score of one generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub frechet: f64,
    pub inception: f64,
    pub samples: usize,
    pub fingerprint: String,
}

impl MetricReport {
    /// One `key=value` per line.
    pub fn to_kv(&self) -> String {
        format!(
            "accuracy={}\nfrechet={}\ninception={}\nsamples={}\nfingerprint={}\n",
            self.accuracy, self.frechet, self.inception, self.samples, self.fingerprint
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("malformed report line {line:?}")))?;
            map.insert(k.trim(), v.trim());
        }
        let get = |k: &str| {
            map.get(k)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("report lacks {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("report field {k} is not a number")))
        };
        Ok(Self {
            accuracy: num("accuracy")?,
            frechet: num("frechet")?,
            inception: num("inception")?,
            samples: get("samples")?
                .parse()
                .map_err(|_| Error::InvalidArgument("report field samples is not an integer".into()))?,
            fingerprint: get("fingerprint")?.to_string(),
        })
    }
}

/// Full metric report for `source` conditioned on `dataset`.
pub fn evaluate(
    source: &dyn ConditionalSource,
    features: &Tensor,
    oracle: &OracleClassifier,
    dataset: &Dataset,
    num_samples: usize,
    seed: u64,
    fingerprint: &str,
) -> Result<MetricReport> {
    let outcome = conditional_outcome(source, features, oracle, dataset, num_samples, seed)?;
    let real = dataset.images().select_rows(&outcome.sources)?;
    let (m1, s1) = gaussian_stats(&oracle.embed(&real)?)?;
    let (m2, s2) = gaussian_stats(&oracle.embed(&outcome.generated)?)?;
    Ok(MetricReport {
        accuracy: outcome.accuracy(),
        frechet: frechet_distance(&m1, &s1, &m2, &s2)?,
        inception: inception_score(&oracle.probabilities(&outcome.generated)?)?,
        samples: num_samples,
        fingerprint: fingerprint.to_string(),
    })
}

/// SHA-256 of any serialisable configuration.
pub fn config_fingerprint<T: Serialize>(config: &T) -> Result<String> {
    use sha2::{Digest, Sha256};
    Ok(hex(&Sha256::digest(serde_json::to_vec(config)?)))
}

/// Snapshot evaluator: the same sources and noise at every snapshot, so curves
/// compare like with like.
pub struct GanEvaluator<'a> {
    oracle: &'a OracleClassifier,
    dataset: &'a Dataset,
    features: &'a Tensor,
    samples: usize,
    seed: u64,
    real_stats: (Vec<f64>, Vec<f64>),
}

impl<'a> GanEvaluator<'a> {
    pub fn new(
        oracle: &'a OracleClassifier,
        dataset: &'a Dataset,
        features: &'a Tensor,
        samples: usize,
        seed: u64,
    ) -> Result<Self> {
        oracle.check()?;
        let sources = source_order(dataset.len(), samples, &mut seeded(seed));
        let real = dataset.images().select_rows(&sources)?;
        let real_stats = gaussian_stats(&oracle.embed(&real)?)?;
        Ok(Self {
            oracle,
            dataset,
            features,
            samples,
            seed,
            real_stats,
        })
    }
}

impl Evaluator for GanEvaluator<'_> {
    fn evaluate(&mut self, generator: &Generator) -> Result<SnapshotMetrics> {
        let outcome = conditional_outcome(
            generator,
            self.features,
            self.oracle,
            self.dataset,
            self.samples,
            self.seed,
        )?;
        let (m, s) = gaussian_stats(&self.oracle.embed(&outcome.generated)?)?;
        Ok(SnapshotMetrics {
            frechet: Some(frechet_distance(&self.real_stats.0, &self.real_stats.1, &m, &s)?),
            accuracy: Some(outcome.accuracy()),
        })
    }
}

/// Predicted class of each row of logits or probabilities.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let c = t.shape()[1];
    t.data().chunks(c).map(argmax).collect()
}
