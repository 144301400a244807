//! File formats, run configuration and the commands behind the binary.

mod commands;
mod config;
mod csv;
mod ply;
mod pmg;
mod tum;

pub use commands::{
    cmd_align, cmd_convert, cmd_eval_depth, cmd_eval_pose, cmd_mask, cmd_synth, depth_report_text,
    edge_file_stem, frame_file_name, AlignSummary, MaskSummary, PoseReport, SceneDirectory,
    SynthSummary,
};
pub use config::{align_mode_name, parse_align_mode, RunConfig, SceneConfig, ScenePreset};
pub use csv::{grid_from_csv, grid_to_csv, loss_trace_csv};
pub use ply::{parse_ply, ply_bytes, read_ply, write_ply, ColoredPoint};
pub use pmg::GridContainer;
pub use tum::{
    format_tum, parse_tum, read_trajectory, read_tum, records_to_trajectory, trajectory_to_records,
    write_tum, TumRecord,
};

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::evalkit::EvalError;
use crate::geom::GeomError;
use crate::graph::GraphError;
use crate::optim::OptimError;
use crate::oracle::OracleError;
use crate::pairwise::PairwiseError;

fn located(path: &Option<PathBuf>) -> String {
    path.as_ref().map_or(String::new(), |p| format!("{}: ", p.display()))
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}{message}", located(path))]
    Format { path: Option<PathBuf>, message: String },
    #[error("line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("{}: {source}", path.display())]
    InFile { path: PathBuf, source: Box<CliError> },
    #[error("{0}")]
    Usage(String),
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Pairwise(#[from] PairwiseError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("optimization aborted: {0}")]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl CliError {
    pub(crate) fn format(message: impl Into<String>) -> Self {
        CliError::Format {
            path: None,
            message: message.into(),
        }
    }

    /// Attaches the offending file to an error raised while decoding it.
    pub(crate) fn at(self, path: &Path) -> Self {
        match self {
            CliError::Format { path: None, message } => CliError::Format {
                path: Some(path.to_path_buf()),
                message,
            },
            e @ (CliError::Io { .. } | CliError::Format { .. } | CliError::InFile { .. }) => e,
            e => CliError::InFile {
                path: path.to_path_buf(),
                source: Box::new(e),
            },
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(io_err(path))
}

pub(crate) fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

/// Writes `bytes`, creating parent directories as needed.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}
