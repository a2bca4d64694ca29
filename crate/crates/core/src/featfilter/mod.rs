//! Centroid-distance filtering of synthetic images in a real-trained
//! classifier's feature space.

pub mod features;
pub mod filter;
pub mod pca;

pub use features::{
    centroids_from_stacks, compute_centroids, extract_features, feature_distance, unit_normalize, CentroidScorer,
    ClassCentroid, FeatureMap, FeatureStack,
};
pub use filter::{
    first_by_index, quota, quotas, rank_and_filter, read_scores, score_images, score_pool, write_scores,
    ScoredCandidate,
};
pub use pca::{project_features, Pca};
