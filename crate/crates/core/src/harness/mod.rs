//! Configuration, datasets, logging and experiment orchestration.

pub mod config;
pub mod data;
pub mod log;
pub mod run;
pub mod sweep;

pub use config::{load_config, parse_config, RunConfig};
pub use data::{load_idx_subset, make_synthetic_dataset, Splits, SyntheticSpec};
pub use log::{EpochLogRecord, LogLine, SummaryRow};
pub use run::{exit_code, run, RunArtifacts};
pub use sweep::{alpha_gamma_grid, sweep, MeanStd, SweepPoint, SweepTable};
