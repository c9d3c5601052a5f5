//! Pipeline orchestration for the `diffmn` command: configuration,
//! dataset and checkpoint files, staged training, generation, evaluation
//! and reports.

pub mod checkpoint;
pub mod config;
pub mod io;
pub mod pipeline;
pub mod report;

pub use checkpoint::Checkpoint;
pub use config::{DatasetKind, GenerateMode, PipelineConfig};
pub use pipeline::Stage;
