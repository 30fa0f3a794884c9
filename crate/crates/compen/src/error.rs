use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("png error at {path}: {source}")]
    Png {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("no FOV detected: mask is empty after thresholding and morphology")]
    NoFov,
    #[error("operation on an empty mask")]
    EmptyMask,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("surface image missing: {0}")]
    SurfaceMissing(PathBuf),
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("size inconsistency in {file}: got {got_w}x{got_h}, expected {want_w}x{want_h}")]
    SizeMismatch {
        file: PathBuf,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("train/test pair count mismatch under {0}")]
    PairMismatch(PathBuf),
    #[error("invalid metadata in {path}: {reason}")]
    BadMetadata { path: PathBuf, reason: String },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite at iteration {iteration}; last checkpoint at iteration {last_checkpoint}")]
    NonFiniteLoss {
        iteration: usize,
        last_checkpoint: usize,
    },
    #[error("empty training set")]
    EmptyDataset,
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad checkpoint {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("checkpoint {path} is missing parameter {name}")]
    MissingParam { path: PathBuf, name: String },
    #[error("parameter {name} has shape {got:?}, expected {want:?}")]
    ShapeMismatch {
        name: String,
        got: Vec<usize>,
        want: Vec<usize>,
    },
}
