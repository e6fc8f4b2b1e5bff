//! Classification of Gaussian-splat point clouds.
//!
//! The crate covers the whole path from a splat checkpoint on disk to class
//! probabilities and embeddings:
//!
//! - [`gs_ply`]: binary PLY I/O and activation of stored coefficients
//! - [`geometry`]: canonical framing, feature modes and ellipsoid descriptors
//! - [`sampling`]: farthest point sampling to a fixed point budget
//! - [`autodiff`]: tensors, reverse-mode gradients, Adam and checkpoints
//! - [`classifier`]: shared-MLP point classifier with max pooling
//! - [`datasets`]: directory manifests, splits and a synthetic benchmark
//! - [`evaluation`]: accuracy, probability matrices and mode comparisons
//! - [`embedding`]: PCA and exact t-SNE
//! - [`pipeline`]: from normalized clouds to sampled feature matrices
//! - [`plot`]: SVG scatter plots and heatmaps

pub mod autodiff;
pub mod classifier;
pub mod datasets;
pub mod embedding;
pub mod evaluation;
pub mod geometry;
pub mod gs_ply;
pub mod pipeline;
pub mod plot;
pub mod quat;
pub mod rng;
pub mod sampling;
