//! Normalizing flow over complex noise vectors.
//!
//! The noise is squeezed to an `M×2` real array and pushed through `K`
//! steps of actnorm, an invertible 1×1 conv over the real/imaginary channels
//! and two affine couplings (lower half from upper, then upper from lower)
//! into a diagonal Gaussian latent. The log-likelihood is the latent
//! log-density plus the sum of the per-layer log-determinants.

mod checkpoint;
mod infer;
mod nll;
mod params;
mod train;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, TrainingMetadata,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use infer::{
    actnorm_log_det, conv_log_det, flow_logprob, initialize_actnorm, layers, squeeze, squeeze_into, unsqueeze,
    FlowEvaluator, FlowTrace, Scratch,
};
pub use nll::{batch_tensor, build_nll};
pub use params::{Coupling, Dense, FlowConfig, FlowParams, FlowStep, Mlp};
pub use train::{mean_nll, train, train_flat, TrainOptions, TrainingLog, MIN_CONV_DET};
