//! Downstream tasks: resampling, compression simulation, metrics, losses and training.

pub mod bicubic;
pub mod dataset;
pub mod jpeg;
pub mod losses;
pub mod metrics;
pub mod train;

pub use bicubic::{bicubic_downscale, bicubic_resize, bicubic_upscale, Resize};
pub use jpeg::{jpeg_simulate, jpeg_simulate_var, quant_table, JpegSimConfig, RoundingMode};
pub use metrics::{mse, psnr, ssim};
pub use dataset::{DatasetKind, ToyDataset};
pub use losses::{
    denoise_forward, loss_compression, loss_denoising, loss_rescaling, DenoiseLossWeights, LossValues, RescaleLossWeights,
    RestorationHead,
};
pub use train::{train, validation_psnr, LogRow, Task, TrainConfig, TrainLog};
