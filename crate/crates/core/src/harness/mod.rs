//! Experiment runner: config files, training loop, metrics files and run
//! comparison.

mod config;
mod metrics;
mod run;

use std::path::PathBuf;

use thiserror::Error;

use crate::data::DataError;
use crate::diagnostics::DiagnosticsError;
use crate::nn::NnError;
use crate::optim::OptimError;

pub use config::{scaled_lr, ConfigError, DatasetSpec, LrScaling, RunConfig, ScheduleSpec, VarianceSpec};
pub use metrics::{
    compare_runs, format_summary_table, parse_metrics_csv, summarize, write_metrics_csv, MetricRow, RunSummary,
    METRICS_HEADER,
};
pub use run::{
    prepare, run_experiment, run_variance, schedule_table, steps_per_epoch, train, write_schedule_csv, DivergenceEvent,
    Prepared, RunFiles, RunOutput, RunSchedule, Schedule,
};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}{source}", .path.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default())]
    Config {
        path: Option<PathBuf>,
        source: ConfigError,
    },
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {message}", .path.display())]
    BadMetrics { path: PathBuf, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
}

impl HarnessError {
    pub(crate) fn invalid(message: String) -> Self {
        HarnessError::Config {
            path: None,
            source: ConfigError {
                problems: vec![message],
            },
        }
    }

    /// Process exit code for this error; divergence is not an error and is
    /// mapped by the caller.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } => EXIT_CONFIG,
            HarnessError::Io { .. } | HarnessError::BadMetrics { .. } => EXIT_IO,
            HarnessError::Data(DataError::InvalidParams(_) | DataError::BadBatchSize { .. }) => EXIT_CONFIG,
            HarnessError::Data(_) => EXIT_IO,
            HarnessError::Diagnostics(DiagnosticsError::Io(_)) => EXIT_IO,
            HarnessError::Nn(_) | HarnessError::Optim(_) | HarnessError::Diagnostics(_) => 1,
        }
    }
}
