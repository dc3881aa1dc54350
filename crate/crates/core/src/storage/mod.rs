//! Persistence: JSON-lines demo files, binary checkpoints, CSV reports.

mod checkpoint;
mod demos;
mod report;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CKPT_MAGIC};
pub use demos::{decode_demo, encode_demo, read_demos, write_demos, DemoRecord, DEMO_FORMAT};
pub use report::{ablation_csv, report_csv, scored_csv, write_ablation, write_config_echo, write_report, write_scored};

use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum StorageError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("demo {demo_id} fails replay verification")]
    Replay { demo_id: String },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("bad checkpoint format: {0}")]
    BadFormat(String),
    #[error("tensor shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("inconsistent report: {0}")]
    Report(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StorageError + '_ {
    move |source| StorageError::Io {
        path: path.to_path_buf(),
        source,
    }
}
