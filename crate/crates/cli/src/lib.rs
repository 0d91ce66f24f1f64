//! File formats, experiment orchestration and the `mponet` command-line tool
//! built on `mponet-core`.

pub mod archive;
pub mod config;
pub mod error;
pub mod experiment;
pub mod idx;

pub use archive::{ArchiveInfo, ModelArchive};
pub use config::ExperimentConfig;
pub use error::{CliError, Result};
