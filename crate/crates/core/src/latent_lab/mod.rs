//! Linear latent-space laboratory on small vector datasets.

pub mod contrastive;
pub mod linear;
pub mod toy2d;

pub use contrastive::{
    infonce_bound_check, infonce_loss, train_infonce_linear, BoundCheck, InfoNceConfig, InfoNceEncoder,
    PositiveKind,
};
pub use linear::{
    fit_lda, fit_pca, rotated_gaussian, train_linear_autoencoder, verify_pca_equivalence, AutoencoderConfig, LdaModel, LinearAutoencoder,
    PcaModel, PcaEquivalenceReport,
};
pub use toy2d::{
    fit_projections, make_two_gaussians, noise_robust_accuracy, AccuracyCurve, AccuracyRow, LabeledPoints,
    ProjectionSet, Projector, TwoGaussianSpec, DEFAULT_NOISE_SIGMAS,
};
