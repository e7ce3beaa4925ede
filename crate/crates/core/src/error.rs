use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("box dimensions must be positive (length {length}, width {width})")]
    InvalidBox { length: f64, width: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("could not place agent {agent} without collision after {attempts} attempts")]
    SpawnFailed { agent: usize, attempts: usize },

    #[error("frames out of order: {got} after {previous}")]
    FrameOrder { previous: usize, got: usize },

    #[error("subject {subject} has no state at frame {frame}")]
    MissingSubject { subject: u64, frame: usize },

    #[error("subject {subject} history has a gap at frame {frame}")]
    HistoryGap { subject: u64, frame: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("loss is not a scalar (length {0})")]
    NonScalarLoss(usize),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("scene too short: {frames} frames, need {needed}")]
    SceneTooShort { frames: usize, needed: usize },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
