//! Point-record ingestion, rasterisation, dataset sampling and persistence.

pub mod build;
pub mod container;
pub mod dataset;
pub mod raster;
pub mod records;

pub use build::{build_dataset, BuildParams, DedupStats, SplitRule};
pub use container::{ContainerError, DType, Tensor, TensorData};
pub use dataset::{
    Dataset, DatasetEntry, DatasetHeader, DatasetManifest, MaskSet, PredictionSet, WindowDescriptor,
};
pub use raster::{
    rasterize, sample_windows, split_ood, split_random, viz_grid, LatticeCell, RecordIndex, Split,
};
pub use records::{parse_records, write_records, MalformedLine, OccurrenceRecord, ParsedRecords};
