//! Deep UCSL: contrastive subgroup discovery.
//!
//! Trains a mixture of classifying experts together with a clustering head
//! under an Expectation-Maximization loop, so that subgroups of the disease
//! class are discovered from disease-specific variability while variability
//! shared with healthy controls is discarded.
//!
//! The crate is organized as:
//! - [`nn`]: the dense encoder and the two heads, with hand-derived gradients
//! - [`clustering`]: K-means++, Sinkhorn-Knopp balancing, the SK-regularized
//!   soft K-means, soft-to-hard interpolation, pseudo-label assembly
//! - [`reident`]: bijective subgroup re-identification between epochs
//! - [`em`]: the EM training driver, losses, and the BCE+K-means baseline
//! - [`metrics`]: mixture-of-experts inference and balanced accuracies
//! - [`data`]: synthetic benchmark generation, CSV/checkpoint formats, PCA

pub mod clustering;
pub mod data;
pub mod em;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod reident;

mod seeds;
#[cfg(test)]
mod testutil;

pub use clustering::{
    assemble_pseudo_labels, interpolate_soft_hard, kmeanspp_init, sinkhorn_knopp, soft_assign,
    soft_kmeans_sk, Centroids, PseudoLabelMatrix, SkConfig,
};
pub use data::{
    fit_pca, gen_synthetic, load_checkpoint, load_dataset, rotation_matrix, save_checkpoint,
    save_dataset, simplex_vertices, Checkpoint, LabeledDataset, MixMode, PcaProjection,
    SynthConfig,
};
pub use em::{
    e_step, elbo_lower_bound, equidistance_ratio, init_state, m_step, train,
    train_baseline_bce_kmeans, EmState, EpochRecord, Optimizer, TrainConfig, TrainHistory,
    TrainMode, TrainOutput,
};
pub use error::{Result, UcslError};
pub use loss::{clustering_loss, moe_loss, LossWeights};
pub use metrics::{
    align_labels, class_bacc, compute_metrics, overall_bacc, predict, predict_with, subgroup_bacc,
    ClassifierSource, ConfusionCounts, MetricsReport, PredictionBatch, SubgroupSource,
};
pub use nn::{
    backward, cluster_probs, encode, expert_probs, grad_check, init_params, total_loss,
    Activation, DenseLayer, Gradients, ModelConfig, ModelParams,
};
pub use reident::{centroid_similarity, reidentify, Permutation};
