pub mod ar_model;
pub mod data;
pub mod encoders;
pub mod error;
pub mod experiments;
pub mod format;
pub mod latent_lab;
pub mod metrics;
pub mod numerics;
pub mod par;
pub mod stability;
pub mod tokenizer;

pub use error::{Error, Result};
