use serde::{Deserialize, Serialize};

use crate::data::{inject_label_noise, Dataset, NoiseSpec};
use crate::error::{Error, Result};
use crate::eval::oracle::{conditional_accuracy, OracleClassifier};
use crate::latent::{train_extractor, ExtractorConfig};
use crate::training::{eval_seed, train, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub extractor: ExtractorConfig,
    pub train: TrainConfig,
    pub noise_seed: u64,
    pub eval_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub noise: f64,
    pub accuracy: Option<f64>,
    /// Held-out accuracy of the extractor against the noisy labels it was trained on.
    pub extractor_accuracy: Option<f64>,
    pub error: Option<String>,
}

/// For each noise level: corrupt the labels, train a fresh extractor on them,
/// train the GAN on its codes, and measure conditional accuracy against the
/// clean labels. Failures are recorded per level.
pub fn robustness_sweep(
    levels: &[f64],
    dataset: &Dataset,
    oracle: &OracleClassifier,
    cfg: &SweepConfig,
) -> Result<Vec<SweepPoint>> {
    if levels.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidArgument("noise levels must lie in [0, 1]".into()));
    }
    if levels.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("noise levels must be ascending".into()));
    }
    oracle.check()?;
    let mut ext_cfg = cfg.extractor.clone();
    ext_cfg.classifier.min_accuracy = None;
    Ok(levels
        .iter()
        .map(|&p| {
            let run = || -> Result<(f64, Option<f64>)> {
                let noisy = inject_label_noise(dataset, NoiseSpec::new(p, cfg.noise_seed)?)?;
                let extractor = train_extractor(&noisy, &ext_cfg)?;
                let state = train(&cfg.train, &dataset.images_only(), &extractor, None)?;
                let features = extractor.extract(dataset.images())?;
                let acc = conditional_accuracy(
                    &state.generator,
                    &features,
                    oracle,
                    dataset,
                    cfg.eval_samples,
                    eval_seed(&cfg.train),
                )?;
                Ok((acc, extractor.accuracy))
            };
            match run() {
                Ok((acc, ext)) => {
                    log::info!("noise {p}: accuracy {acc:.4}");
                    SweepPoint {
                        noise: p,
                        accuracy: Some(acc),
                        extractor_accuracy: ext,
                        error: None,
                    }
                }
                Err(e) => {
                    log::warn!("noise {p} failed: {e}");
                    SweepPoint {
                        noise: p,
                        accuracy: None,
                        extractor_accuracy: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect())
}
