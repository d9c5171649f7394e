#![cfg_attr(test, allow(clippy::excessive_precision))]

//! Attention-prior guidance for text-conditioned cross-attention.
//!
//! The crate is organized bottom-up:
//!
//! - [`text`]: prompt tokenization and modifier/noun object groups.
//! - [`attention`]: attention maps as spatial distributions and KL machinery.
//! - [`bundle`]: on-disk interchange format for per-token attention maps.
//! - [`losses`]: divergence, similarity, outside and PAC-Bayes terms.
//! - [`engine`]: a small differentiable denoiser and the guided sampler.
//! - [`eval`]: diagnostic scores, ablation sweeps and reports.

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        assert!((a - b).abs() <= $tol, "{a} vs {b} (tol {})", $tol);
    }};
}

pub mod attention;
pub mod bundle;
pub mod engine;
pub mod error;
pub mod eval;
pub mod losses;
pub mod text;

pub use attention::{AttentionMap, AttentionSet, RawAttention};
pub use engine::{GuidanceConfig, GuidanceTrace, LatentState, ModelDims, ToyModel};
pub use error::{AttentionError, BundleError, Degenerate, EngineError, EvalError, LossError, TextError};
pub use eval::{DiagnosticScores, SweepReport, SweepSpec};
pub use losses::{LossBreakdown, LossWeights, PacConfig};
pub use text::{ObjectGroup, ParsedPrompt, Role, Token, WordLexicon};
