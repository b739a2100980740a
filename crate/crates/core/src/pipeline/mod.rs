//! End-to-end orchestration: synthetic corpus generation, per-grain
//! featurization, dual-model training, tuning, prediction and scoring.

pub mod bundle;
pub mod commands;
pub mod config;
pub mod featurize;
pub mod synth;

pub use bundle::{GrainModel, Learner, ModelBundle, Provenance, BUNDLE_FORMAT_VERSION};
pub use commands::{
    cmd_featurize, cmd_gen, cmd_predict, cmd_score, cmd_train, cmd_tune, featurize_events, load_corpus,
    read_featurized, read_key_file, score_predictions, train_models, train_pipeline, tune_models, Featurized,
};
pub use config::{FeatureBlock, FeatureRecipe, LearnerConfig, LearnerKind, PipelineConfig};
pub use featurize::Featurizer;
pub use synth::{generate_corpus, SyntheticSpec};
