//! Fair classification by train-then-mask.
//!
//! A model is fitted on every feature, including the sensitive ones. At
//! prediction time the sensitive columns are pinned to a reference value and
//! a score offset `tau` is chosen for accuracy on validation data. For
//! models whose score is monotone in a non-sensitive linear part, this
//! removes explicit discrimination and preserves the within-group ranking
//! of the unconstrained model.
//!
//! The crate also carries the comparison baselines, the accuracy /
//! admittance / group and latent discrimination / kNN consistency metrics,
//! and the tabular data pipeline that feeds them.

pub mod baselines;
pub mod data;
pub mod dataset;
pub mod error;
pub mod fairness;
pub mod metrics;
pub mod model;
pub mod models;
pub mod report;
pub mod schema;

pub use dataset::{split_dataset, Dataset, Split};
pub use error::{Error, Result};
pub use fairness::{mask, select_tau, tau_sweep, train_then_mask, TauGrid, TauSweepResult};
pub use model::{Family, MaskSpec, ScoreModel};
pub use models::{FamilySpec, MlpArchitecture, TrainConfig};
pub use report::{evaluate, FairnessReport};
pub use schema::DatasetSchema;
