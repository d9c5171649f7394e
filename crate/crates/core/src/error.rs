use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TextError {
    #[error("prompt contains no tokens")]
    EmptyPrompt,
    #[error("grammar error at token {position} ({word:?}): {reason}")]
    Grammar {
        position: usize,
        word: String,
        reason: String,
    },
    #[error("invalid lexicon: {0}")]
    Lexicon(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttentionError {
    #[error("non-finite attention score at flat index {0}")]
    NonFiniteInput(usize),
    #[error("token {token} out of range for {len} tokens")]
    TokenOutOfRange { token: usize, len: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("reference distribution has zero mass at cell {0}")]
    ZeroSupport(usize),
    #[error("object group has no member tokens")]
    EmptyGroup,
    #[error("invalid attention map: {0}")]
    InvalidMap(String),
}

/// Which loss component could not be formed for the given prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degenerate {
    /// Divergence needs at least two objects.
    TooFewObjects,
    /// Outside loss needs at least one outside token.
    EmptyOutsideSet,
    /// Outside loss needs at least one object token.
    EmptyObjectSet,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("degenerate loss component: {0:?}")]
    Degenerate(Degenerate),
    #[error("no attention map for token {0}")]
    MissingMap(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("component supports overlap at cell {0}")]
    OverlappingSupports(usize),
    #[error("component supports leave cell {0} uncovered")]
    UncoveredCell(usize),
    #[error("exponents must sum to 1, got {0}")]
    ExponentSumViolation(f64),
    #[error(transparent)]
    Attention(#[from] AttentionError),
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid model dimensions: {0}")]
    InvalidDims(String),
    #[error("token list is empty")]
    EmptyTokenList,
    #[error("noise schedule exhausted at t = 0")]
    ScheduleExhausted,
    #[error("invalid guidance configuration: {0}")]
    InvalidConfig(String),
    #[error("latent became non-finite at step {0}")]
    NonFiniteLatent(usize),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("bundle failed validation: {0}")]
    Invalid(String),
    #[error(transparent)]
    Attention(#[from] AttentionError),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid sweep spec: {0}")]
    InvalidSpec(String),
    #[error("unknown report format {0:?} (expected json, csv or markdown)")]
    UnknownFormat(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Loss(#[from] LossError),
}
