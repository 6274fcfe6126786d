//! Error types shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, FdinError>;

/// Errors produced by the data pipeline, the network, and the harnesses.
///
/// `Config` covers anything a user can fix by editing the run configuration
/// (the CLI maps it to exit code 1); everything else is a runtime failure
/// (exit code 2).
#[derive(Debug, Error)]
pub enum FdinError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing directory: {}", .0.display())]
    MissingDirectory(PathBuf),

    #[error("frame/mask count mismatch in {dir}: {frames} frames vs {masks} masks")]
    CountMismatch {
        dir: String,
        frames: usize,
        masks: usize,
    },

    #[error("resolution mismatch: {context} (expected {expected_h}x{expected_w}, got {got_h}x{got_w})")]
    ResolutionMismatch {
        context: String,
        expected_h: usize,
        expected_w: usize,
        got_h: usize,
        got_w: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("cannot decode {}: {reason}", path.display())]
    Decode { path: PathBuf, reason: String },

    #[error("clip shorter than window: clip has {t} frames, window needs {t_c}")]
    ClipTooShort { t: usize, t_c: usize },

    #[error("codec failure on frame {frame}: {reason}")]
    Codec { frame: usize, reason: String },

    #[error("synthesis rejected {attempts} candidate geometries for clip {clip}; relax the size bounds")]
    SynthRejection { clip: usize, attempts: usize },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl FdinError {
    /// Attach a human-readable context to an IO error.
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        FdinError::Io {
            context: context.into(),
            source,
        }
    }

    /// True when the error is a configuration/validation problem rather than
    /// a runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            FdinError::Config(_) | FdinError::MissingDirectory(_)
        )
    }
}
