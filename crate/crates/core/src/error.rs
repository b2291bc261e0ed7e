use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("every pixel carries the ignore label; nothing to supervise")]
    EmptySupervision,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("input of {got}x{got_w} is too small, image discriminator needs at least {min}x{min}")]
    InputTooSmall {
        got: usize,
        got_w: usize,
        min: usize,
    },

    #[error("expected a 3-channel image, got {0} channels")]
    NotRgb(usize),

    #[error("city `{city}` has {available} images, {requested} requested")]
    NotEnoughImages {
        city: String,
        available: usize,
        requested: usize,
    },

    #[error("image `{0}` has no city metadata")]
    MissingCity(String),

    #[error("no score for retained source sample `{0}`")]
    MissingScore(String),

    #[error("source selection is empty; adversarial phase is over")]
    SelectionExhausted,

    #[error("infeasible toy spec: {0}")]
    InfeasibleSpec(String),

    #[error("label file {path}: {reason}")]
    BadLabel { path: PathBuf, reason: String },

    #[error("no label matches image stem `{0}`")]
    UnmatchedStem(String),

    #[error("prediction contains the ignore label {0}")]
    IgnoreInPrediction(u8),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("unknown {what} `{got}`; expected one of: {valid}")]
    UnknownVariant {
        what: &'static str,
        got: String,
        valid: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("training invariant violated: {0}")]
    InvariantViolated(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures that happen while optimizing rather than while
    /// validating inputs.
    pub fn is_training_failure(&self) -> bool {
        matches!(
            self,
            Error::Diverged(_) | Error::InvariantViolated(_) | Error::SelectionExhausted
        )
    }

    /// True for errors caused by bad input data rather than configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::EmptySupervision
                | Error::NotEnoughImages { .. }
                | Error::MissingCity(_)
                | Error::BadLabel { .. }
                | Error::UnmatchedStem(_)
                | Error::EmptyDataset(_)
                | Error::Io { .. }
                | Error::Image { .. }
                | Error::NotRgb(_)
        )
    }
}
