//! Watermark training: losses, the two-optimiser training loop, pretraining
//! of the generator and decoder, and the ablation harnesses.

mod config;
mod harness;
mod losses;
mod pretrain;
mod system;
mod train;

use gseal_grad::{write_checkpoint, Parameter};
use sha2::{Digest, Sha256};

pub use config::{init_name, DecodeTarget, GeneratorTrainConfig, HiddenTrainConfig, TrainConfig};
pub use harness::*;
pub use losses::{log_to_csv, loss_consistency, loss_msg, total_loss, LossBreakdown};
pub use pretrain::{
    background_psnr, codec_accuracy, codec_images, pretrain_generator, pretrain_hidden, reconstruction_psnr,
    MIN_CODEC_IMAGES,
};
pub use system::{batch_views, decoder_input, render_views, EvalSummary, SceneEval, SealSystem};
pub use train::{loss_gradients, sample_cameras, site_params_mut, train_seal, SealFrozen};

/// Hex SHA-256 of the checkpoint serialisation of `params`.
pub fn params_digest(params: &[&Parameter]) -> String {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params).expect("writing to memory cannot fail");
    Sha256::digest(&buf).iter().map(|b| format!("{b:02x}")).collect()
}
