//! Image datasets, the procedural toy dataset and run configuration.

pub mod config;
mod dataset;
pub mod toy;

pub use config::{load_config, parse_config, RunConfig, ServiceConfig};
pub use dataset::{load_dataset, Dataset, DatasetSpec, EpochSampler};
pub use toy::{generate_toy_dataset, read_manifest, Archetype, ManifestRecord, ToyDatasetConfig, ToyObject};
