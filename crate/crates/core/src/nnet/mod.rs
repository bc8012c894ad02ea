//! Denoiser and deblurrer networks, their loss, gradients and training.

mod checkpoint;
mod gradcheck;
mod layers;
mod loss;
mod train;
mod unet;

pub use checkpoint::{check_arch, decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, NET_MAGIC};
pub use gradcheck::{check_gradients, GradCheck};
pub use layers::Tensor;
pub use loss::{
    backward, hessian_penalty, hessian_penalty_grad, loss, loss_from_outputs, output_grads, LossConfig, LossTerms,
};
pub use train::{apply, history_csv, restore_image, train, train_with_progress, Adam, EpochRecord, TrainConfig, TrainOutcome};
pub use unet::{forward, init_params, net_backward, net_forward, ArchConfig, ConvSpec, NetworkParams, Trace, LAYERS};
