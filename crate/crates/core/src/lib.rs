//! Pool-based active learning with multiple question kinds.
//!
//! Besides the usual "which class is x?" question, the learner may ask
//! whether every point of a small group belongs to a class (`All`) or
//! whether at least one does (`Any`). Each kind carries a cost; the engine
//! picks the kind and question point with the best entropy per unit of cost.

pub mod acquisition;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod exploration;
pub mod model;
pub mod questions;
pub mod sweep;
pub mod theory;
pub mod train;

pub use data::{load_csv, make_blobs, BlobSpec, CsvOptions, Dataset};
pub use engine::{run_active_learning, Engine, EngineConfig, RunOutcome, Strategy};
pub use error::{Error, Result};
pub use model::{ModelFamily, ScoreModel};
pub use questions::{KnowledgeBase, QuestionFamily, QuestionKind, QuestionPoint};
