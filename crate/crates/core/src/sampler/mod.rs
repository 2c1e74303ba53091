//! Triplet batches: each sampled anchor is paired with its nearest and
//! farthest neighbour in feature space.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ImageSet;
use crate::error::{Error, Result};
use crate::latent::{by_distance, pairwise_l1, DistanceMatrix, FeatureExtractor};
use crate::numerics::rng::seeded;
use crate::numerics::Tensor;

/// Where neighbours are searched for.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Neighborhood {
    /// Within the sampled batch only.
    #[default]
    Batch,
    /// Across the whole dataset.
    Global,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletBatch {
    pub anchors: Tensor,
    pub positives: Tensor,
    pub negatives: Tensor,
    /// Feature rows of the anchors, `[B, F]`.
    pub codes: Tensor,
    /// Dataset indices of anchors, positives and negatives.
    pub anchor_indices: Vec<usize>,
    pub positive_indices: Vec<usize>,
    pub negative_indices: Vec<usize>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.anchor_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor_indices.is_empty()
    }
}

/// For every row, the nearest and the farthest other row (ties to the lower index).
pub fn nearest_and_farthest(dist: &DistanceMatrix) -> (Vec<usize>, Vec<usize>) {
    let n = dist.len();
    (0..n)
        .map(|i| {
            let others = || (0..n).filter(move |&j| j != i).map(|j| (dist.get(i, j), j));
            let near = others().min_by(by_distance).expect("n ≥ 2").1;
            // farthest: largest distance, lowest index among equals
            let far = others()
                .min_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)))
                .expect("n ≥ 2")
                .1;
            (near, far)
        })
        .unzip()
}

/// Draws `b` distinct images and builds triplets from precomputed `features`
/// (row `i` belongs to image `i`).
pub fn sample_triplets<R: Rng + ?Sized>(
    images: &ImageSet,
    features: &Tensor,
    b: usize,
    neighborhood: Neighborhood,
    rng: &mut R,
) -> Result<TripletBatch> {
    let n = images.len();
    if b < 2 {
        return Err(Error::InvalidArgument(format!("batch size {b} below 2")));
    }
    if b > n {
        return Err(Error::InvalidArgument(format!("batch size {b} exceeds {n} images")));
    }
    if features.shape().len() != 2 || features.shape()[0] != n {
        return Err(Error::shape("triplet features", &[n, 1], features.shape()));
    }
    let anchor_indices = sample(rng, n, b).into_vec();
    let (positive_indices, negative_indices): (Vec<usize>, Vec<usize>) = match neighborhood {
        Neighborhood::Batch => {
            let codes = features.select_rows(&anchor_indices)?;
            let (near, far) = nearest_and_farthest(&pairwise_l1(&codes)?);
            (
                near.iter().map(|&p| anchor_indices[p]).collect(),
                far.iter().map(|&p| anchor_indices[p]).collect(),
            )
        }
        Neighborhood::Global => anchor_indices.iter().map(|&i| global_pair(features, i)).unzip(),
    };
    let all = images.images();
    Ok(TripletBatch {
        anchors: all.select_rows(&anchor_indices)?,
        positives: all.select_rows(&positive_indices)?,
        negatives: all.select_rows(&negative_indices)?,
        codes: features.select_rows(&anchor_indices)?,
        anchor_indices,
        positive_indices,
        negative_indices,
    })
}

fn global_pair(features: &Tensor, i: usize) -> (usize, usize) {
    let n = features.shape()[0];
    let others = || {
        (0..n)
            .filter(move |&j| j != i)
            .map(move |j| (crate::latent::l1(features.row(i), features.row(j)), j))
    };
    let near = others().min_by(by_distance).expect("n ≥ 2").1;
    let far = others()
        .min_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)))
        .expect("n ≥ 2")
        .1;
    (near, far)
}

/// Seeded batch-local triplets, extracting features for the whole image set.
pub fn build_batch(images: &ImageSet, extractor: &FeatureExtractor, b: usize, seed: u64) -> Result<TripletBatch> {
    let features = extractor.extract(images.images())?;
    sample_triplets(images, &features, b, Neighborhood::Batch, &mut seeded(seed))
}
