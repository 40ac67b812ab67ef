//! Feature-level drift analysis for sparse binary linear classifiers, and a
//! linear SVM trainer that bounds the weights of the least stable features.
//!
//! The pipeline: [`trainer::train_svm`] fits a baseline,
//! [`drift::t_stability`] ranks features by how much their drift pulls the
//! score of the analyzed class, [`trainer::train_svm_cb`] retrains with the
//! most unstable weights clipped, and [`eval`] measures per-slot decay over
//! a held-out future period. [`synth`] generates data with planted drift.

pub mod cli;
pub mod dataset;
pub mod drift;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod model;
pub mod synth;
pub mod trainer;

pub use dataset::{Dataset, FeatureDictionary, Label, SparseSample};
pub use drift::{t_stability, DriftConfig, DriftReport, SlotMode};
pub use error::{Error, Result};
pub use eval::{partial_auc, temporal_split, EvalReport, SplitSpec};
pub use model::LinearModel;
pub use trainer::{train_svm, train_svm_cb, CbConfig, Schedule, TrainConfig};
