//! Masked mineral-occurrence modelling toolkit.
//!
//! The crate is organised around the life cycle of a context window: point
//! records are rasterised into fixed-size tiles ([`ingest`]), synthetic records
//! can stand in for restricted survey data ([`synth`]), tiles are ablated with
//! mineral- or spatial-kind masks ([`masking`]), a model infills the masked
//! cells, and [`metrics`] scores the result on the masked region only. The
//! built-in learner is the sparse variational multitask Gaussian-process
//! classifier in [`gp`].

pub mod error;
pub mod gp;
pub mod grid;
pub mod ingest;
pub mod masking;
pub mod metrics;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{
    dedup_stream, pixel_hash, window_pixel_coords, ContextWindow, Deduplicator, GeoPoint, Mineral,
    PixelKey, Raster, Region, WindowSpec, NUM_MINERALS,
};
pub use masking::{apply_mask, masked_fraction, sample_mask, Mask, MaskKind};
pub use metrics::{EvalReport, InfillModel, PredictionGrid};
pub use synth::rng::SplitMix64;
