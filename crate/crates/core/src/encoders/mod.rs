//! Per-patch encoders (reconstructive and contrastive) and the pixel decoder.

pub mod augment;
pub mod checkpoint;
pub mod decoder;
pub mod mlp;
pub mod patch;

pub use augment::{augmented_image, augmented_patch, AugmentConfig};
pub use checkpoint::{load_decoder, load_encoder, save_decoder, save_encoder};
pub use decoder::{
    decoder_error, pixel_mse, pixel_variance, train_feature_decoder, train_pixel_decoder, DecoderConfig, PixelDecoder,
};
pub use mlp::{Activation, Mlp};
pub use patch::{
    augmentation_agreement, train_discriminative, train_reconstructive, untrained_discriminative, AgreementReport,
    EncoderConfig, Level, Objective, PatchEncoder,
};
