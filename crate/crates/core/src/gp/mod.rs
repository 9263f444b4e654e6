//! Sparse variational multitask Gaussian-process classifier.

pub mod adam;
pub mod checkpoint;
pub mod kernel;
pub mod kmeans;
pub mod model;
pub mod quadrature;
pub mod train;

pub use adam::Adam;
pub use kernel::rbf;
pub use kmeans::kmeans_pp;
pub use model::{kl_gaussians, Batch, ElboParts, FeatureLayout, GpPredictor, Marginals, ModelGrad, SvgpcModel, TaskParams};
pub use quadrature::{expected_log_bernoulli, expected_sigmoid, GaussHermite};
pub use train::{init_model, sweep_grids, sweep_threshold, train, History, SweepResult, TrainConfig, THRESHOLD_GRID, validation_masks};
