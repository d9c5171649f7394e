//! Attention maps as probability distributions over the spatial grid.
//!
//! Raw cross-attention scores have shape `(heads, H*W, tokens)`. Softmax runs
//! over the token axis; [`aggregate`] then pulls a single token's column,
//! averages heads and renormalizes over space, so every [`AttentionMap`] is a
//! proper distribution. All divergences are in nats.

use serde::{Deserialize, Serialize};

use crate::error::AttentionError;
use crate::text::ObjectGroup;

/// Default additive smoothing applied before any KL evaluation.
pub const DEFAULT_SMOOTHING: f64 = 1e-10;

/// Allowed deviation of a map's total mass from 1.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Non-negative spatial distribution for one prompt token, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    height: usize,
    width: usize,
    token_index: usize,
    weights: Vec<f64>,
}

impl AttentionMap {
    /// Wraps weights that already form a distribution.
    pub fn new(
        height: usize,
        width: usize,
        token_index: usize,
        weights: Vec<f64>,
    ) -> Result<Self, AttentionError> {
        check_shape(height, width, weights.len())?;
        let mut total = 0.0;
        for (j, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(AttentionError::InvalidMap(format!(
                    "cell {j} has weight {w}"
                )));
            }
            total += w;
        }
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(AttentionError::InvalidMap(format!(
                "mass {total} differs from 1"
            )));
        }
        Ok(Self {
            height,
            width,
            token_index,
            weights,
        })
    }

    /// Renormalizes arbitrary non-negative weights into a distribution.
    pub fn from_weights(
        height: usize,
        width: usize,
        token_index: usize,
        mut weights: Vec<f64>,
    ) -> Result<Self, AttentionError> {
        check_shape(height, width, weights.len())?;
        if let Some(j) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(AttentionError::InvalidMap(format!(
                "cell {j} has weight {}",
                weights[j]
            )));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(AttentionError::InvalidMap(format!(
                "cannot renormalize mass {total}"
            )));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self {
            height,
            width,
            token_index,
            weights,
        })
    }

    pub fn uniform(height: usize, width: usize, token_index: usize) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            token_index,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of spatial cells |Ω|.
    pub fn cells(&self) -> usize {
        self.weights.len()
    }

    pub fn token_index(&self) -> usize {
        self.token_index
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn with_token_index(mut self, token_index: usize) -> Self {
        self.token_index = token_index;
        self
    }

    pub fn same_grid(&self, other: &AttentionMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (j, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = j;
            }
        }
        best
    }
}

fn check_shape(height: usize, width: usize, len: usize) -> Result<(), AttentionError> {
    if height == 0 || width == 0 {
        return Err(AttentionError::DimensionMismatch(format!(
            "empty grid {height}x{width}"
        )));
    }
    if height * width != len {
        return Err(AttentionError::DimensionMismatch(format!(
            "{len} weights for a {height}x{width} grid"
        )));
    }
    Ok(())
}

/// Cross-attention scores laid out as `[head][spatial][token]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAttention {
    pub heads: usize,
    pub height: usize,
    pub width: usize,
    pub tokens: usize,
    /// Feature dimension m behind the 1/sqrt(m) scaling.
    pub feature_dim: usize,
    pub scores: Vec<f64>,
}

impl RawAttention {
    pub fn new(
        heads: usize,
        height: usize,
        width: usize,
        tokens: usize,
        feature_dim: usize,
        scores: Vec<f64>,
    ) -> Result<Self, AttentionError> {
        if scores.len() != heads * height * width * tokens {
            return Err(AttentionError::DimensionMismatch(format!(
                "{} scores for shape ({heads}, {}, {tokens})",
                scores.len(),
                height * width
            )));
        }
        Ok(Self {
            heads,
            height,
            width,
            tokens,
            feature_dim,
            scores,
        })
    }

    pub fn spatial(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn offset(&self, head: usize, cell: usize, token: usize) -> usize {
        (head * self.spatial() + cell) * self.tokens + token
    }

    pub fn get(&self, head: usize, cell: usize, token: usize) -> f64 {
        self.scores[self.offset(head, cell, token)]
    }

    /// One `(head, cell)` row over the token axis.
    pub fn row(&self, head: usize, cell: usize) -> &[f64] {
        let start = self.offset(head, cell, 0);
        &self.scores[start..start + self.tokens]
    }
}

/// Softmax over the token axis of every `(head, cell)` row.
pub fn softmax_scores(raw: &RawAttention) -> Result<RawAttention, AttentionError> {
    if let Some(i) = raw.scores.iter().position(|s| !s.is_finite()) {
        return Err(AttentionError::NonFiniteInput(i));
    }
    let mut out = raw.clone();
    if raw.tokens == 0 {
        return Ok(out);
    }
    for row in out.scores.chunks_exact_mut(raw.tokens) {
        softmax_in_place(row);
    }
    Ok(out)
}

/// Max-subtracted softmax of a single row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Head-averaged, spatially renormalized map for one token.
pub fn aggregate(raw: &RawAttention, token: usize) -> Result<AttentionMap, AttentionError> {
    if token >= raw.tokens {
        return Err(AttentionError::TokenOutOfRange {
            token,
            len: raw.tokens,
        });
    }
    let cells = raw.spatial();
    let mut weights = vec![0.0; cells];
    for head in 0..raw.heads {
        for (cell, w) in weights.iter_mut().enumerate() {
            *w += raw.get(head, cell, token);
        }
    }
    let heads = raw.heads as f64;
    weights.iter_mut().for_each(|w| *w /= heads);
    AttentionMap::from_weights(raw.height, raw.width, token, weights)
}

/// `(A + eps) / (1 + eps * |Ω|)`: strictly positive, still sums to one.
pub fn smooth(map: &AttentionMap, epsilon: f64) -> AttentionMap {
    let denom = 1.0 + epsilon * map.cells() as f64;
    AttentionMap {
        height: map.height,
        width: map.width,
        token_index: map.token_index,
        weights: map.weights.iter().map(|w| (w + epsilon) / denom).collect(),
    }
}

fn check_pair(p: &AttentionMap, q: &AttentionMap) -> Result<(), AttentionError> {
    if !p.same_grid(q) {
        return Err(AttentionError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            p.height, p.width, q.height, q.width
        )));
    }
    Ok(())
}

/// KL(p || q) in nats.
pub fn kl(p: &AttentionMap, q: &AttentionMap) -> Result<f64, AttentionError> {
    check_pair(p, q)?;
    let mut total = 0.0;
    for (j, (&pj, &qj)) in p.weights.iter().zip(&q.weights).enumerate() {
        if pj == 0.0 {
            continue;
        }
        if qj <= 0.0 {
            return Err(AttentionError::ZeroSupport(j));
        }
        total += pj * (pj / qj).ln();
    }
    Ok(total)
}

/// Symmetric KL, `0.5 * (KL(p||q) + KL(q||p))`.
pub fn sym_kl(p: &AttentionMap, q: &AttentionMap) -> Result<f64, AttentionError> {
    let forward = kl(p, q)?;
    let backward = kl(q, p)?;
    Ok(0.5 * (forward + backward))
}

/// KL(p || U) = ln|Ω| - H(p).
pub fn kl_to_uniform(p: &AttentionMap) -> f64 {
    let neg_entropy: f64 = p
        .weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| w * w.ln())
        .sum();
    (p.cells() as f64).ln() + neg_entropy
}

/// Per-token maps of one prompt on a shared grid, indexed by token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSet {
    height: usize,
    width: usize,
    maps: Vec<AttentionMap>,
}

impl AttentionSet {
    /// Maps must be ordered by token index and share one grid.
    pub fn new(maps: Vec<AttentionMap>) -> Result<Self, AttentionError> {
        let first = maps
            .first()
            .ok_or_else(|| AttentionError::DimensionMismatch("no maps".into()))?;
        let (height, width) = (first.height, first.width);
        for (i, m) in maps.iter().enumerate() {
            if m.height != height || m.width != width {
                return Err(AttentionError::DimensionMismatch(format!(
                    "token {i} has grid {}x{}, expected {height}x{width}",
                    m.height, m.width
                )));
            }
            if m.token_index != i {
                return Err(AttentionError::InvalidMap(format!(
                    "map at position {i} belongs to token {}",
                    m.token_index
                )));
            }
        }
        Ok(Self {
            height,
            width,
            maps,
        })
    }

    /// Aggregates every token column of normalized scores.
    pub fn from_scores(normalized: &RawAttention) -> Result<Self, AttentionError> {
        let maps = (0..normalized.tokens)
            .map(|t| aggregate(normalized, t))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(maps)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn get(&self, token: usize) -> Option<&AttentionMap> {
        self.maps.get(token)
    }

    pub fn maps(&self) -> &[AttentionMap] {
        &self.maps
    }

    pub fn smoothed(&self, epsilon: f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            maps: self.maps.iter().map(|m| smooth(m, epsilon)).collect(),
        }
    }
}

/// Renormalized mean of the group's modifier and noun maps.
pub fn combine_object(
    set: &AttentionSet,
    group: &ObjectGroup,
) -> Result<AttentionMap, AttentionError> {
    let members = group.members();
    if members.is_empty() {
        return Err(AttentionError::EmptyGroup);
    }
    let mut weights = vec![0.0; set.height * set.width];
    for &t in &members {
        let map = set.get(t).ok_or(AttentionError::TokenOutOfRange {
            token: t,
            len: set.len(),
        })?;
        for (w, &v) in weights.iter_mut().zip(&map.weights) {
            *w += v;
        }
    }
    let k = members.len() as f64;
    weights.iter_mut().for_each(|w| *w /= k);
    let token = group.noun_indices.first().copied().unwrap_or(members[0]);
    AttentionMap::from_weights(set.height, set.width, token, weights)
}
