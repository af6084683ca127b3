use std::path::PathBuf;

use crate::latent_search::LossBreakdown;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mask has no known cells, grille capacity would be zero")]
    EmptyCapacity,

    #[error("message of {message} bits exceeds grille capacity of {capacity} bits")]
    CapacityExceeded { message: usize, capacity: usize },

    #[error("key is not paired with this mask: {0}")]
    KeyPairing(String),

    #[error("invalid key: {0}")]
    InvalidKey(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("toy cipher key lies on the X axis")]
    DegenerateKey,

    #[error("ciphertext point coincides with the key, line is undefined")]
    UndefinedLine,

    #[error("line through ciphertext and key is parallel to the X axis")]
    NoIntersection,

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    TrainingDiverged {
        epoch: usize,
        last_checkpoint: Option<Box<crate::generator::Checkpoint>>,
    },

    #[error("latent search diverged at iteration {iteration}: non-finite loss")]
    SearchDiverged {
        iteration: usize,
        trace: Vec<LossBreakdown>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("unsupported stego output format {0:?}: only lossless PNG is written")]
    LossyFormat(PathBuf),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Machine-readable code used by the command line front end as process
    /// exit status.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::CapacityExceeded { .. } | Error::EmptyCapacity => 10,
            Error::KeyPairing(_) => 11,
            Error::TrainingDiverged { .. } | Error::SearchDiverged { .. } => 12,
            Error::Io { .. } | Error::Image { .. } | Error::LossyFormat(_) => 13,
            Error::Parse { .. } | Error::InvalidKey(_) => 14,
            _ => 1,
        }
    }
}

/// Convert a serde_json error (line/column based) into a byte offset error.
pub(crate) fn json_parse_error(input: &str, err: &serde_json::Error) -> Error {
    let line = err.line().max(1);
    let column = err.column();
    let offset = input
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum::<usize>()
        + column.saturating_sub(1);
    Error::Parse {
        offset: offset.min(input.len()),
        message: err.to_string(),
    }
}
