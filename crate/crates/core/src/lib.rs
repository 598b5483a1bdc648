//! Speaker-subspace nulling for synthetic-speech detection.
//!
//! Utterance embeddings from a frozen speech encoder are pooled and
//! normalized, the dominant directions of inter-speaker variation are
//! estimated from per-speaker centroids, and that subspace is projected out
//! before a logistic-regression head separates bona fide from spoofed speech.
//!
//! ```text
//! frames -> pool + L2 normalize -> null speaker subspace -> σ(wᵀz̃ + b)
//! ```
//!
//! [`synth`] plants speaker / artifact / context structure in synthetic
//! embeddings so the whole pipeline can be exercised without audio.

pub mod classifier;
pub mod commands;
pub mod error;
pub mod experiment;
pub mod features;
pub mod metrics;
pub mod model_file;
pub mod pipeline;
pub mod store;
pub mod subspace;
pub mod synth;

pub use classifier::{LinearClassifier, TrainConfig};
pub use error::{Result, SnapError};
pub use metrics::{EvalReport, ScoredSet};
pub use model_file::Model;
pub use store::{Label, LabeledEmbeddingSet, UtteranceRecord};
pub use subspace::{CentroidTable, SpeakerSubspace};
pub use synth::{GroundTruth, SynthConfig};
