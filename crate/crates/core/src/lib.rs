//! Unsupervised fusion of a low-resolution hyperspectral image with a
//! high-resolution multispectral image by a model-inspired autoencoder.
//!
//! The crate contains a small reverse-mode autodiff engine, the observation
//! model (blur, decimation, spectral response), the autoencoder and its
//! training loop, blind estimation of the degradation operators, quality
//! metrics and file formats.

pub mod array;
pub mod autodiff;
pub mod blind;
pub mod cube;
pub mod degradation;
pub mod error;
pub mod interp;
pub mod io;
mod kernels;
pub mod metrics;
pub mod miae;
pub mod selfcheck;
pub mod synthetic;

pub use array::DenseArray;
pub use blind::{estimate_degradation, BlindConfig, BlindOutput};
pub use cube::HyperCube;
pub use degradation::{BlurKernel, SimConfig, SrfMatrix};
pub use error::{Error, Result};
pub use interp::Interpolation;
pub use metrics::MetricsReport;
pub use miae::{train, FusionInputs, LossRecord, MiaeConfig, TrainOutput};
