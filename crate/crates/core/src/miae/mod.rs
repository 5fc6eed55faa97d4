//! The model-inspired autoencoder: a per-pixel encoder unrolled from gradient
//! descent on a pixel-wise fusion model, a clamped NMF decoder, and the
//! patch-based unsupervised training loop.

mod config;
mod network;
mod params;
mod patches;
mod train;

pub use config::{lr_schedule, MiaeConfig};
pub use network::{decode, encode};
pub use params::{init_params, BoundLayer, BoundParams, DenseLayer, LayerInfo, MiaeParams};
pub use patches::{make_patch_plan, PatchPlan};
pub use train::{
    boundary_ring, gather_batch, infer, infer_latent, patch_loss, reconstruction_loss, train,
    train_with_observer, FusionInputs, LossRecord, PatchBatch, TapedDegradation, TrainOutput,
};
pub(crate) use train::{kernel_array, srf_array};
