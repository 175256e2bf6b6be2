//! Feature-space age progression for face embeddings.
//!
//! * [`store`]: longitudinal embedding datasets, file formats, evaluation splits
//! * [`interp`]: cohort means and attribute-vector interpolation
//! * [`model`]: the linear encoder/decoder aging model and its training
//! * [`eval`]: scoring, identification and verification metrics, heatmaps
//! * [`synth`]: seeded synthetic data with a known aging law

pub mod eval;
pub mod interp;
pub mod linalg;
pub mod model;
pub mod store;
pub mod synth;
pub mod vector;

pub use eval::{evaluate, score_matrix, AgingDirection, EvalError, EvalReport, ScoreMatrix};
pub use model::{init_model, train, AgeProgressionModel, LayerSpec, ModelError, TrainConfig};
pub use store::{EmbeddingRecord, Format, GalleryProbeSplit, LongitudinalDataset, StoreError};
pub use synth::{generate, GroundTruth, SyntheticConfig};
