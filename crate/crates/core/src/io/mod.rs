//! File formats: netpbm images and masks, checkpoints, run configuration,
//! metrics CSV and dataset directories.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod netpbm;
pub mod report;

pub use config::RunConfig;
pub use report::{append_metrics, read_metrics, MetricsRow};
