//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("dataset too short: {0}")]
    ShortDataset(String),

    #[error("empty sequence")]
    Empty,

    #[error("channel {0} is constant, scaler would not be invertible")]
    ConstantChannel(usize),

    #[error("FIT undefined: reference sequence is constant")]
    ConstantReference,

    #[error("reservoir draw degenerate: internal matrix identically zero after one redraw")]
    DegenerateReservoir,

    #[error("least-squares solve failed: {0}")]
    Solve(String),

    #[error("plant state singular: liquid level must stay positive, got {0} cm")]
    SingularState(f64),

    #[error("charge balance has no root in [0, 14] for x1 = {x1:e}, x2 = {x2:e}")]
    PhOutOfRange { x1: f64, x2: f64 },

    #[error("campaign aborted: {failed}/{total} instances failed, above the {limit_percent}% limit")]
    CampaignAborted {
        failed: usize,
        total: usize,
        limit_percent: f64,
    },

    #[error("test seed streams overlap the campaign streams of base seed {base_seed}")]
    SeedOverlap { base_seed: u64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error on {path}: {message}")]
    Csv { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
