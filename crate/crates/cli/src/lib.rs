//! Run orchestration for the `probe` command: configuration, validation and
//! execution of layer-wise analyses across models.

pub mod config;
pub mod run;
pub mod validate;

pub use config::{Analysis, RunConfig};
pub use run::{run, RunSummary};
pub use validate::{validate, Diagnostic, Severity};
