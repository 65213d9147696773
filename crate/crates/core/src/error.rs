use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected width {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid split fractions: {0}")]
    InvalidFractions(String),

    #[error("empty split part: {part} would receive 0 of {n} rows")]
    EmptySplitPart { part: &'static str, n: usize },

    #[error("invalid training config: {0}")]
    Config(String),

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("training data contains a single label ({label}); enable degenerate mode to fit it")]
    SingleLabel { label: u8 },

    #[error("mask index {index} out of range for width {width}")]
    MaskIndex { index: usize, width: usize },

    #[error("mask spec does not match dataset: {0}")]
    MaskMismatch(String),

    #[error("invalid tau grid: {0}")]
    TauGrid(String),

    #[error("empty validation set")]
    EmptyValidation,

    #[error("group discrimination undefined: {0}")]
    GroupUndefined(String),

    #[error("no within-group pairs")]
    NoWithinGroupPairs,

    #[error("k = {k} must be smaller than n = {n}")]
    KTooLarge { k: usize, n: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("massaging requires exactly one sensitive column, found {0}")]
    MassageSensitiveCount(usize),

    #[error("massaging needs {needed} flippable rows in the {group} group, only {available} available (shortfall {})", needed - available)]
    MassageShortfall {
        group: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("omit-sensitive needs at least one non-sensitive column")]
    NoNonSensitiveColumns,

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("unparseable numeric value `{value}` in column `{column}` (row {row})")]
    ParseNumeric {
        column: String,
        row: usize,
        value: String,
    },

    #[error("empty file: {0}")]
    EmptyFile(PathBuf),

    #[error("unseen level `{level}` in categorical column `{column}`")]
    UnseenLevel { column: String, level: String },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
