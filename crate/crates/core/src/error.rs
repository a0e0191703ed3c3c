use std::fmt;

use thiserror::Error;

/// Which side of the paired data an object belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Block {
    /// The `X` side; its directions form the matrix `B`.
    #[serde(rename = "B")]
    B,
    /// The `Y` side; its directions form the matrix `Gamma`.
    #[serde(rename = "Gamma")]
    Gamma,
}

impl Block {
    pub fn as_str(self) -> &'static str {
        match self {
            Block::B => "B",
            Block::Gamma => "Gamma",
        }
    }

    pub fn parse(s: &str) -> Option<Block> {
        match s {
            "B" | "b" | "X" | "x" => Some(Block::B),
            "Gamma" | "gamma" | "G" | "Y" | "y" => Some(Block::Gamma),
            _ => None,
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum CcaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("rank deficiency in {block}: numerical rank {rank} < {cols} columns")]
    RankDeficient { block: String, rank: usize, cols: usize },

    #[error("covariance matrix {name} is not positive definite (minimum eigenvalue {min_eigenvalue:e})")]
    SingularCovariance { name: String, min_eigenvalue: f64 },

    #[error("covariance matrix is not positive semi-definite (eigenvalue {eigenvalue:e} below tolerance)")]
    InvalidCovariance { eigenvalue: f64 },

    #[error("degenerate variable: column {column} has non-positive standard deviation")]
    DegenerateVariable { column: usize },

    #[error("degenerate direction: column {column} has zero norm")]
    DegenerateDirection { column: usize },

    #[error("resample slot {slot} stayed rank deficient after {redraws} redraws")]
    ResampleExhausted { slot: usize, redraws: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("construction error: {0}")]
    Construction(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CcaError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(CcaError::InvalidInput(msg.into()))
}
