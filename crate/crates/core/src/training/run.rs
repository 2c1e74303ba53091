use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::ImageSet;
use crate::error::{Error, Result};
use crate::gan::{
    loss_adv, loss_diff, loss_discriminator, loss_generator, loss_minimax, loss_same, Discriminator, DiscriminatorKind,
    Generator, LossTerms,
};
use crate::latent::FeatureExtractor;
use crate::numerics::rng::{derive_seed, derived, SeededRng};
use crate::numerics::{adam_step, AdamState, Graph, Tensor};
use crate::sampler::{sample_triplets, TripletBatch};
use crate::training::{Prototype, RunHistory, Snapshot, TrainConfig};

/// Metrics computed on the generator at snapshot time.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SnapshotMetrics {
    pub frechet: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Scores a generator at snapshot time. Implementations may hold labels; the
/// training loop itself only ever handles images and features.
pub trait Evaluator {
    fn evaluate(&mut self, generator: &Generator) -> Result<SnapshotMetrics>;
}

/// Everything needed to continue a run bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    /// Completed iterations.
    pub iteration: usize,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub generator_opt: AdamState,
    pub discriminator_opt: AdamState,
    pub rng: SeededRng,
    pub history: RunHistory,
    pub last_terms: LastLosses,
}

/// Most recent value of each loss, carried into snapshots.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LastLosses {
    pub adv: Option<f64>,
    pub same: Option<f64>,
    pub diff: Option<f64>,
    pub gen: Option<f64>,
}

fn noise(rng: &mut SeededRng, rows: usize, dim: usize) -> Result<Tensor> {
    let data = (0..rows * dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    Tensor::new([rows, dim], data)
}

impl TrainState {
    /// Fresh models for images of `image_shape` conditioned on `feature_dim`-long codes.
    pub fn new(config: TrainConfig, image_shape: &[usize], feature_dim: usize) -> Result<Self> {
        config.validate()?;
        let kind = match config.prototype {
            Prototype::Baseline => DiscriminatorKind::Single,
            _ => DiscriminatorKind::Coupled,
        };
        let mut init = derived(config.seed, "generator-init");
        let generator = match config.prototype {
            // the unconditional game: codes are supplied but ignored
            Prototype::Baseline => Generator::unconditional(&config.generator, feature_dim, image_shape, &mut init)?,
            _ => Generator::new(&config.generator, feature_dim, image_shape, &mut init)?,
        };
        let discriminator = Discriminator::new(
            kind,
            &config.discriminator,
            image_shape,
            &mut derived(config.seed, "discriminator-init"),
        )?;
        Ok(Self {
            generator_opt: AdamState::new(&generator.params, config.generator_adam),
            discriminator_opt: AdamState::new(&discriminator.params, config.discriminator_adam),
            rng: derived(config.seed, "train"),
            generator,
            discriminator,
            history: RunHistory::default(),
            last_terms: LastLosses::default(),
            config,
            iteration: 0,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.config.n_iter
    }

    /// Runs iterations until `until` (capped at `n_iter`) have completed.
    /// `features` row `i` must be the code of image `i`.
    pub fn run(
        &mut self,
        images: &ImageSet,
        features: &Tensor,
        until: usize,
        mut evaluator: Option<&mut dyn Evaluator>,
    ) -> Result<()> {
        if images.image_shape() != self.generator.image_shape() {
            return Err(Error::shape(
                "training images",
                &self.generator.image_shape(),
                &images.image_shape(),
            ));
        }
        if features.shape() != [images.len(), self.generator.feature_dim] {
            return Err(Error::shape(
                "training features",
                &[images.len(), self.generator.feature_dim],
                features.shape(),
            ));
        }
        let start = Instant::now();
        let until = until.min(self.config.n_iter);
        while self.iteration < until {
            let i = self.iteration;
            self.step(images, features, i)?;
            self.iteration += 1;
            let done = self.iteration;
            if done.is_multiple_of(self.config.eval_every) || done == self.config.n_iter {
                let metrics = match evaluator.as_deref_mut() {
                    Some(e) => e.evaluate(&self.generator)?,
                    None => SnapshotMetrics::default(),
                };
                let t = self.last_terms;
                self.history.push(Snapshot {
                    iter: done,
                    loss_adv: t.adv,
                    loss_same: t.same,
                    loss_diff: t.diff,
                    loss_gen: t.gen,
                    frechet: metrics.frechet,
                    accuracy: metrics.accuracy,
                    elapsed_ms: Some(start.elapsed().as_millis() as u64),
                })?;
                log::info!(
                    "iter {done}: gen {:.4} frechet {:?} accuracy {:?}",
                    t.gen.unwrap_or(f64::NAN),
                    metrics.frechet,
                    metrics.accuracy
                );
            }
        }
        Ok(())
    }

    fn step(&mut self, images: &ImageSet, features: &Tensor, i: usize) -> Result<()> {
        let b = self.config.batch_size;
        let batch = sample_triplets(images, features, b, self.config.neighborhood, &mut self.rng)?;
        let z = noise(&mut self.rng, b, self.generator.noise_dim)?;
        let (update_g, update_d) = self.config.schedule(i);
        if update_g {
            self.generator_step(&batch, &z)
                .map_err(|e| Error::Graph(format!("generator update at iteration {i}: {e}")))?;
            self.history.generator_updates += 1;
        }
        if update_d {
            self.discriminator_step(&batch, &z)
                .map_err(|e| Error::Graph(format!("discriminator update at iteration {i}: {e}")))?;
            self.history.discriminator_updates += 1;
        }
        Ok(())
    }

    fn generator_step(&mut self, batch: &TripletBatch, z: &Tensor) -> Result<()> {
        let mut g = Graph::new();
        let fake = self.generator.forward(&mut g, z, &batch.codes, true)?;
        let loss = if self.config.prototype == Prototype::Baseline {
            let real = g.input(batch.anchors.clone());
            loss_minimax(&mut g, &self.discriminator, real, fake, false)?.1
        } else {
            let anchor = g.input(batch.anchors.clone());
            loss_generator(&mut g, &self.discriminator, anchor, fake)?
        };
        self.last_terms.gen = Some(g.value(loss).item()? as f64);
        let grads = g.backward(loss)?.for_params(&self.generator.params);
        adam_step(&mut self.generator.params, &grads, &mut self.generator_opt)
    }

    fn discriminator_step(&mut self, batch: &TripletBatch, z: &Tensor) -> Result<()> {
        self.discriminator.advance_power_iteration(self.config.power_iters)?;
        let fake_images = self.generator.generate(z, &batch.codes)?;
        let mut g = Graph::new();
        let anchor = g.input(batch.anchors.clone());
        let fake = g.input(fake_images);
        let d = &self.discriminator;
        let objective = match self.config.prototype.weights(self.config.weights) {
            None => {
                let (disc, _) = loss_minimax(&mut g, d, anchor, fake, true)?;
                self.last_terms.adv = Some(g.value(disc).item()? as f64);
                disc
            }
            Some(weights) => {
                let [wa, ws, wd] = weights.active();
                let mut terms = LossTerms::default();
                if wa.is_some() {
                    terms.adv = Some(loss_adv(&mut g, d, anchor, fake, true)?);
                }
                if ws.is_some() {
                    let pos = g.input(batch.positives.clone());
                    terms.same = Some(loss_same(&mut g, d, anchor, pos, true)?);
                }
                if wd.is_some() {
                    let neg = g.input(batch.negatives.clone());
                    terms.diff = Some(loss_diff(&mut g, d, anchor, neg, true)?);
                }
                let value =
                    |v: Option<_>| -> Result<Option<f64>> { v.map(|v| g.value(v).item().map(f64::from)).transpose() };
                self.last_terms.adv = value(terms.adv)?;
                self.last_terms.same = value(terms.same)?;
                self.last_terms.diff = value(terms.diff)?;
                loss_discriminator(&mut g, &weights, &terms)?
            }
        };
        // ascent on the objective
        let loss = g.scale_shift(objective, -1.0, 0.0)?;
        let grads = g.backward(loss)?.for_params(&self.discriminator.params);
        adam_step(&mut self.discriminator.params, &grads, &mut self.discriminator_opt)
    }
}

/// Trains from scratch; codes come from `extractor` applied to every image once.
pub fn train(
    config: &TrainConfig,
    images: &ImageSet,
    extractor: &FeatureExtractor,
    evaluator: Option<&mut dyn Evaluator>,
) -> Result<TrainState> {
    let features = extractor.extract(images.images())?;
    let mut state = TrainState::new(config.clone(), &images.image_shape(), extractor.feature_dim())?;
    state.run(images, &features, config.n_iter, evaluator)?;
    Ok(state)
}

/// Seed used for evaluation draws of a run, independent of its training stream.
pub fn eval_seed(config: &TrainConfig) -> u64 {
    derive_seed(config.seed, "eval")
}
