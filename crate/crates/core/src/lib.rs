//! Weekly listening-pattern signals, multivariate sparse dictionary learning
//! and activity-prediction evaluation for music streaming logs.
//!
//! The pipeline runs `ingest` -> `signals` -> `dictionary` -> `evaluate`;
//! `synth` produces seeded logs with planted weekly archetypes for testing.

pub mod dictionary;
pub mod error;
pub mod evaluate;
pub mod ingest;
pub mod io;
pub mod seed;
pub mod signals;
pub mod synth;

pub use dictionary::{
    embed, learn, learn_matrix, sparse_code, CoderSettings, Dictionary, LearnConfig, LearnOutput, SparseCoder,
};
pub use error::{PaceError, Result};
pub use evaluate::{
    evaluate_all, roc_auc, split_users, train_logreg, Activity, ActivityLabels, EvalConfig, EvalReport, Split,
    Variant,
};
pub use ingest::{FavoritesRecord, StreamEvent, StudyPeriod, UserProfile};
pub use io::{MatrixFormat, UserMatrix};
pub use signals::{SignalSet, UserSignal, CHANNELS, SIGNAL_LEN, SLOTS};
pub use synth::SynthConfig;
