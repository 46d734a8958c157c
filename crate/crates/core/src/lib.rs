//! Hybrid omnidirectional-distance/radiance-field surface reconstruction.
//!
//! The library trains a small neural field on posed RGB-D images, renders
//! color and depth by distance-weighted volume rendering, and ships an
//! analytic oracle for generating synthetic datasets and verifying the
//! geometry end to end.
//!
//! Module map:
//! - [`autodiff`]: reverse-mode scalar tape and the adaptive-moment optimizer
//! - [`field`]: positional encoding and the hybrid distance/color MLP
//! - [`rays`]: pinhole camera model, stratified and importance sampling
//! - [`render`]: truncation-weighted volume rendering and mesh extraction
//! - [`loss`] / [`trainer`]: the training objective and loop
//! - [`oracle`]: closed-form scenes, synthetic RGB-D, bias demonstrations
//! - [`metrics`]: PSNR and depth-map accuracy metrics
//! - [`io`]: dataset, checkpoint, image, and mesh formats
//! - [`cli`]: command-line entry points

pub mod autodiff;
pub mod cli;
pub mod field;
pub mod image;
pub mod io;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod oracle;
pub mod rays;
pub mod render;
pub mod scenes;
pub mod trainer;

use thiserror::Error;

/// Crate-wide error type. Variants map onto process exit codes: usage
/// errors exit 1, data/format errors exit 2, numerical failures exit 3.
#[derive(Error, Debug)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("not a checkpoint: bad magic bytes")]
    NotACheckpoint,

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Data(_)
            | Error::Io(_)
            | Error::NotACheckpoint
            | Error::UnsupportedVersion(_)
            | Error::CorruptCheckpoint(_) => 2,
            Error::Numerical(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
