//! Identity-enhanced residual image denoising.
//!
//! A fully convolutional denoiser built from chained identity-mapping
//! modules. Each module runs a stack of pre-activated (ReLU → dilated 3×3
//! convolution) pairs, subtracts the first pair's output from the end of the
//! chain and adds the result back onto its input. A final convolution maps the
//! features back to image channels.
//!
//! Everything is implemented from scratch on a small dense [`Tensor`] type:
//! convolution forward/adjoint kernels, reverse-mode differentiation of the
//! whole network, Adam, patch sampling with synthetic Gaussian noise, PSNR/SSIM
//! and an eight-way geometric self-ensemble.

pub mod activation;
pub mod checkpoint;
pub mod conv;
pub mod data;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use conv::{conv2d_backward, conv2d_forward, he_init, receptive_field, ConvLayerSpec, ConvParams};
pub use error::{Error, Result};
pub use network::{ierd_backward, ierd_forward, ierd_predict, num_params, LayerId, NetworkConfig, ParamStore};
pub use optim::{adam_step, lr_at, AdamConfig, AdamState};
pub use tensor::{Float, Shape, Tensor};
pub use train::{mse_loss, train_loop, train_step, TrainConfig};
