// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while loading, running or reporting.
#[non_exhaustive]
#[derive(Debug, Error)]
pub enum Error {
    /// A [`ModelConfig`](crate::ModelConfig) violates one of its invariants.
    #[error("invalid model config: {0}")]
    Config(String),

    /// A tensor required by the config is absent from the manifest.
    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    /// The manifest lists a tensor the architecture does not use.
    #[error("unexpected tensor `{0}`")]
    ExtraTensor(String),

    /// A tensor's shape or byte extent disagrees with the config.
    #[error("shape mismatch for tensor `{name}`: {reason}")]
    ShapeMismatch { name: String, reason: String },

    /// A tensor holds a NaN or infinity.
    #[error("tensor `{name}` has a non-finite value at element {index}")]
    NonFinite { name: String, index: usize },

    /// Vocabulary ids are not dense in `[0, V)`.
    #[error("vocabulary gap: no token string for id {id}")]
    VocabGap { id: usize },

    /// Two ids share a token string.
    #[error("duplicate vocabulary token {token:?} (ids {first} and {second})")]
    VocabDuplicate {
        token: String,
        first: usize,
        second: usize,
    },

    /// Vocabulary length disagrees with `vocab_size`.
    #[error("vocabulary has {found} entries but config.vocab_size is {expected}")]
    VocabSize { expected: usize, found: usize },

    /// A token sequence exceeds the model context.
    #[error("sequence of {len} tokens exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },

    /// A sequence that must contain tokens was empty.
    #[error("empty token sequence: {0}")]
    EmptySequence(String),

    /// An intervention does not fit the sequence or the model.
    #[error("invalid intervention: {0}")]
    Intervention(String),

    /// A vector has the wrong width.
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// Objects produced by different bundles were mixed.
    #[error("bundle mismatch: expected {expected}, found {found}")]
    BundleMismatch { expected: String, found: String },

    /// An index (layer, position, grid cell) lies outside its valid range.
    #[error("out of range: {0}")]
    OutOfRange(String),

    /// A set that must be non-empty was empty.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Noise never pushed the answer probability below the threshold.
    #[error(
        "insufficient corruption: p_corrupted stayed >= {threshold_ratio} * p_clean \
         after {attempts} attempts (last sigma {last_sigma})"
    )]
    InsufficientCorruption {
        attempts: usize,
        last_sigma: f64,
        threshold_ratio: f64,
    },

    /// A word reached aggregation without a part-of-speech tag.
    #[error("word {word:?} has no POS annotation")]
    MissingPos { word: String },

    /// A dataset, lexicon or annotation file failed validation.
    #[error("invalid dataset: {0}")]
    Dataset(String),

    /// A report failed validation.
    #[error("invalid report: {0}")]
    Report(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Self::Json {
            context: context.into(),
            source,
        }
    }

    /// `true` for errors caused by malformed or inconsistent inputs, as
    /// opposed to failures while running an instrument.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Self::Io { .. } | Self::InsufficientCorruption { .. }
        )
    }

    /// Short stable identifier for machine-readable error records.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::MissingTensor(_) => "missing_tensor",
            Self::ExtraTensor(_) => "extra_tensor",
            Self::ShapeMismatch { .. } => "shape_mismatch",
            Self::NonFinite { .. } => "non_finite",
            Self::VocabGap { .. } => "vocab_gap",
            Self::VocabDuplicate { .. } => "vocab_duplicate",
            Self::VocabSize { .. } => "vocab_size",
            Self::SequenceTooLong { .. } => "sequence_too_long",
            Self::EmptySequence(_) => "empty_sequence",
            Self::Intervention(_) => "intervention",
            Self::DimensionMismatch { .. } => "dimension_mismatch",
            Self::BundleMismatch { .. } => "bundle_mismatch",
            Self::OutOfRange(_) => "out_of_range",
            Self::EmptyInput(_) => "empty_input",
            Self::InsufficientCorruption { .. } => "insufficient_corruption",
            Self::MissingPos { .. } => "missing_pos",
            Self::Dataset(_) => "dataset",
            Self::Report(_) => "report",
            Self::Io { .. } => "io",
            Self::Json { .. } => "json",
        }
    }
}
