//! Causal token transformer: training, sampling, probing, stage-2 translation
//! and prefix completion.

pub mod checkpoint;
pub mod config;
pub mod generate;
pub mod model;
pub mod prefix;
pub mod probe;
pub mod sample;
pub mod stage2;
pub mod train;

pub use checkpoint::{ar_from_bytes, ar_to_bytes, load_ar, save_ar};
pub use config::{ArConfig, ArOptimizer, VocabLayout};
pub use generate::{complete_grid, generate_grid, leading_token, sample_tokens};
pub use model::{ArModel, KvCache};
pub use prefix::{
    latent_objective_report, prefix_completion_eval, LatentObjectiveReport, Pipeline, PrefixConfig, PrefixMean,
    PrefixReport, PrefixRow, DEFAULT_PREFIX_FRACS,
};
pub use probe::{
    layer_features, linear_probe, probe_features, probe_split, softmax_classifier_accuracy, ClassifierConfig,
    ProbeConfig, ProbePooling, ProbeReport,
};
pub use sample::{sample_next, truncated_distribution, SamplerConfig};
pub use stage2::{stage2_example, stage2_examples, stage2_vocab, teacher_forced_accuracy, train_stage2, translate};
pub use train::{evaluate_nll, loss_gradients, sequence_examples, train_ar, write_train_log, ArExample, TrainLogRow};
