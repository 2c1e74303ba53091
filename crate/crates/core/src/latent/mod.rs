//! Feature extraction and latent-space structure.

mod classifier;
mod distance;
mod embedding;
mod extractor;

pub(crate) use classifier::argmax;
pub use classifier::{
    classifier_network, train_classifier, Classifier, ClassifierConfig, EMBEDDING_DEPTH, TRUNK_DEPTH,
};
pub(crate) use distance::by_distance;
pub use distance::{l1, neighbor_purity, pairwise_l1, DistanceMatrix};
pub use embedding::{export_embedding, Embedding, EmbeddingRow};
pub use extractor::{extract_features, train_extractor, ExtractorConfig, FeatureExtractor, FeatureSet};
