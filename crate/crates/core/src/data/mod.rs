//! Datasets, the IDX loader, stratified subsets and run configuration.

mod config;
mod dataset;
mod idx;
mod subset;

pub use config::{apply_overrides, emit, parse_config, parse_config_str, DataConfig, EvalConfig, ModelConfig, RunConfig, TheoryConfig};
pub use dataset::Dataset;
pub use idx::{encode_idx, load_idx, parse_idx, IMAGES_MAGIC, LABELS_MAGIC};
pub use subset::subset;
