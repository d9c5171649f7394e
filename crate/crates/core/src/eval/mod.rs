//! Diagnostic scores, hyperparameter sweeps and their reports.
//!
//! The scores are unsigned magnitudes of the loss components, so they can be
//! compared across runs regardless of the configured loss weights.

mod report;
mod sweep;

use serde::{Deserialize, Serialize};

use crate::attention::{kl_to_uniform, AttentionSet};
use crate::error::LossError;
use crate::losses::{divergence_loss, object_maps, outside_loss, similarity_loss_terms};
use crate::text::ParsedPrompt;

pub use report::{emit_report, ReportFormat, CSV_COLUMNS};
pub use sweep::{
    default_prompts, run_sweep, Stat, SweepAxis, SweepCell, SweepReport, SweepSpec, ValueSummary,
    DEFAULT_SEEDS,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticScores {
    /// Mean pairwise symmetric KL between combined object maps.
    pub separation: f64,
    /// Mean modifier/noun symmetric KL over every pair in the prompt.
    pub binding: f64,
    /// Mean over object tokens of the largest symmetric KL to an outside token.
    pub outside_leak: f64,
    /// Mean KL to uniform over combined object maps.
    pub uniformity: f64,
}

/// Scores for a set of smoothed maps. Components that cannot be formed for
/// the prompt (too few objects, no pairs, no outside tokens) score 0.
pub fn score(set: &AttentionSet, parsed: &ParsedPrompt) -> Result<DiagnosticScores, LossError> {
    let objects = object_maps(parsed, set)?;
    let separation = if objects.len() < 2 {
        0.0
    } else {
        -divergence_loss(&objects)?
    };
    let pair_terms = similarity_loss_terms(parsed, set)?;
    let binding = if pair_terms.is_empty() {
        0.0
    } else {
        pair_terms.iter().sum::<f64>() / pair_terms.len() as f64
    };
    let outside_leak = if parsed.outside.is_empty() || parsed.object_tokens().is_empty() {
        0.0
    } else {
        -outside_loss(parsed, set)?
    };
    let uniformity = if objects.is_empty() {
        0.0
    } else {
        objects.iter().map(kl_to_uniform).sum::<f64>() / objects.len() as f64
    };
    Ok(DiagnosticScores {
        separation,
        binding,
        outside_leak,
        uniformity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{smooth, sym_kl, AttentionMap, DEFAULT_SMOOTHING};
    use crate::text::{parse, WordLexicon};

    fn set_of(maps: Vec<Vec<f64>>, h: usize, w: usize) -> AttentionSet {
        AttentionSet::new(
            maps.into_iter()
                .enumerate()
                .map(|(i, m)| smooth(&AttentionMap::from_weights(h, w, i, m).unwrap(), DEFAULT_SMOOTHING))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_maps_score_zero() {
        let parsed = parse("a red frog and a blue crown", &WordLexicon::builtin()).unwrap();
        let m = vec![0.1, 0.2, 0.3, 0.4];
        let set = set_of(vec![m; parsed.tokens.len()], 2, 2);
        let s = score(&set, &parsed).unwrap();
        assert!(s.separation.abs() < 1e-15);
        assert!(s.binding.abs() < 1e-15);
        assert!(s.outside_leak.abs() < 1e-15);
        assert!(s.uniformity > 0.0);
    }

    #[test]
    fn uniform_maps_have_zero_uniformity() {
        let parsed = parse("a frog and a crown", &WordLexicon::builtin()).unwrap();
        let set = set_of(vec![vec![1.0; 9]; parsed.tokens.len()], 3, 3);
        let s = score(&set, &parsed).unwrap();
        assert!(s.uniformity.abs() < 1e-15);
        assert_eq!(s.binding, 0.0);
    }

    #[test]
    fn one_hot_objects_separate() {
        let parsed = parse("frog and crown", &WordLexicon::builtin()).unwrap();
        let cells = 4;
        let one_hot = |c: usize| (0..cells).map(|j| if j == c { 1.0 } else { 0.0 }).collect();
        let set = set_of(vec![one_hot(0), vec![1.0; cells], one_hot(3)], 2, 2);
        let s = score(&set, &parsed).unwrap();

        // independent evaluation of the smoothed one-hot pair
        let eps = DEFAULT_SMOOTHING;
        let hi = (1.0 + eps) / (1.0 + eps * cells as f64);
        let lo = eps / (1.0 + eps * cells as f64);
        let expected = (hi - lo) * (hi / lo).ln();
        assert_close!(s.separation, expected, 1e-9);
        assert!(s.separation > 20.0);
        assert_close!(s.separation, -divergence_loss(&object_maps(&parsed, &set).unwrap()).unwrap(), 1e-12);
    }

    #[test]
    fn binding_pools_pairs_across_groups() {
        let parsed = parse("a red frog and a blue big crown", &WordLexicon::builtin()).unwrap();
        let n = parsed.tokens.len();
        let set = set_of(
            (0..n).map(|i| vec![1.0 + i as f64, 2.0, 3.0, (i * i) as f64 + 0.5]).collect(),
            2,
            2,
        );
        let mut terms = Vec::new();
        for g in &parsed.groups {
            for &(m, k) in &g.pairs {
                terms.push(sym_kl(set.get(m).unwrap(), set.get(k).unwrap()).unwrap());
            }
        }
        assert_eq!(terms.len(), 3);
        let s = score(&set, &parsed).unwrap();
        assert_close!(s.binding, terms.iter().sum::<f64>() / 3.0, 1e-15);
    }
}
