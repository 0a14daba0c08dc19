//! Voice-indistinguishability: metric differential privacy for speaker
//! embeddings.
//!
//! A voiceprint is released by replacing it with a record drawn from a
//! public voiceprint database, with probability decaying exponentially in
//! the angular distance to the original. This crate provides the data
//! model, the metric, the mechanism, feature-level and model-level release
//! pipelines, and auditors for the privacy bounds and utility trade-off.

pub mod audit;
pub mod embedding;
pub mod error;
pub mod mechanism;
pub mod metric;
pub mod population;
pub mod release;
pub mod rng;
pub mod text;

pub use embedding::{
    load_database, load_database_auto, normalize, parse_voiceprint, UtteranceRecord, Voiceprint,
    VoiceprintDatabase, DEFAULT_DIM,
};
pub use error::{Error, Result};
pub use mechanism::{build_distribution, perturb, sample, PerturbationDistribution, PrivacyBudget};
pub use metric::{angular_distance, cosine_similarity, distance_matrix, DistanceMatrix};
pub use rng::{SeededRng, DEFAULT_SEED};
pub use release::{
    build_release_model, release_database, release_feature_level, release_model_level, PassthroughSynthesizer,
    ProtectedUtterance, ReleaseModel, ReleaseOptions, ReleasedDatabase, Synthesizer,
};
pub use audit::{
    bayes_bound_check, mse, reidentification_attack, run_experiment_grid, verify_voice_ind, AttackResult, AuditReport,
    BayesReport, ExperimentRow,
};
pub use population::{generate_population, PopulationSpec};
