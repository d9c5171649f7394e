//! Divergence, similarity, outside and PAC-Bayes loss terms over attention
//! distributions, their weighted total, and the structured factorized
//! distribution used to motivate the regularizer.
//!
//! Every function expects smoothed maps (strictly positive cells). Losses are
//! in nats, except the PAC term which is a square root of nats.

use serde::{Deserialize, Serialize};

use crate::attention::{combine_object, kl_to_uniform, sym_kl, AttentionMap, AttentionSet};
use crate::error::{Degenerate, LossError};
use crate::text::ParsedPrompt;

/// Signed weights of the four loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_div: f64,
    pub lambda_sim: f64,
    pub lambda_out: f64,
    pub lambda_pac: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_div: -1.25,
            lambda_sim: 2.0,
            lambda_out: 0.15,
            lambda_pac: -0.15,
        }
    }
}

impl LossWeights {
    pub const ZERO: Self = Self {
        lambda_div: 0.0,
        lambda_sim: 0.0,
        lambda_out: 0.0,
        lambda_pac: 0.0,
    };

    pub fn new(lambda_div: f64, lambda_sim: f64, lambda_out: f64, lambda_pac: f64) -> Self {
        Self {
            lambda_div,
            lambda_sim,
            lambda_out,
            lambda_pac,
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let all = [
            self.lambda_div,
            self.lambda_sim,
            self.lambda_out,
            self.lambda_pac,
        ];
        if all.iter().all(|w| w.is_finite()) {
            Ok(())
        } else {
            Err(LossError::InvalidConfig(format!("non-finite weight in {all:?}")))
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }
}

/// How the KL-to-uniform term inside the PAC regularizer is aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum KlAggregate {
    /// Mean of KL(A_obj || U) over combined object maps.
    #[default]
    Mean,
    /// Exponent-weighted class sums: combined object maps, modifier/noun
    /// token maps of groups with pairs, and outside token maps.
    Decomposed { alpha: f64, beta: f64, gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacConfig {
    pub n_samples: u64,
    pub delta: f64,
    #[serde(default)]
    pub aggregate: KlAggregate,
}

impl Default for PacConfig {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            delta: 0.15,
            aggregate: KlAggregate::Mean,
        }
    }
}

impl PacConfig {
    pub fn new(n_samples: u64, delta: f64) -> Self {
        Self {
            n_samples,
            delta,
            aggregate: KlAggregate::Mean,
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if self.n_samples == 0 {
            return Err(LossError::InvalidConfig("n_samples must be >= 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(LossError::InvalidConfig(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if let KlAggregate::Decomposed { alpha, beta, gamma } = self.aggregate {
            Exponents::new(alpha, beta, gamma)?;
        }
        Ok(())
    }

    /// `ln(2 sqrt(N) / delta)`.
    pub fn confidence_term(&self) -> f64 {
        (2.0 * (self.n_samples as f64).sqrt() / self.delta).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Div,
    Sim,
    Out,
}

/// One pairwise symmetric-KL term. For `Div` the indices are object
/// positions; otherwise they are token indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairContribution {
    pub component: Component,
    pub first: usize,
    pub second: usize,
    pub sym_kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub div: f64,
    pub sim: f64,
    pub out: f64,
    pub pac: f64,
    pub total: f64,
    pub flags: Vec<Degenerate>,
    pub per_pair: Vec<PairContribution>,
}

pub fn object_maps(parsed: &ParsedPrompt, set: &AttentionSet) -> Result<Vec<AttentionMap>, LossError> {
    parsed
        .groups
        .iter()
        .map(|g| combine_object(set, g).map_err(LossError::from))
        .collect()
}

fn token_map(set: &AttentionSet, token: usize) -> Result<&AttentionMap, LossError> {
    set.get(token).ok_or(LossError::MissingMap(token))
}

/// Negated mean symmetric KL over unordered object pairs.
pub fn divergence_loss(object_maps: &[AttentionMap]) -> Result<f64, LossError> {
    let n = object_maps.len();
    if n < 2 {
        return Err(LossError::Degenerate(Degenerate::TooFewObjects));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += sym_kl(&object_maps[i], &object_maps[j])?;
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(-total / pairs)
}

/// Modifier/noun symmetric KL of every pair, in group then pair order.
pub fn similarity_loss_terms(parsed: &ParsedPrompt, set: &AttentionSet) -> Result<Vec<f64>, LossError> {
    let mut terms = Vec::new();
    for group in &parsed.groups {
        for &(m, n) in &group.pairs {
            terms.push(sym_kl(token_map(set, m)?, token_map(set, n)?)?);
        }
    }
    Ok(terms)
}

/// Sum over groups of the mean modifier/noun symmetric KL.
pub fn similarity_loss(parsed: &ParsedPrompt, set: &AttentionSet) -> Result<f64, LossError> {
    let mut total = 0.0;
    for group in &parsed.groups {
        if group.pairs.is_empty() {
            continue;
        }
        let mut acc = 0.0;
        for &(m, n) in &group.pairs {
            acc += sym_kl(token_map(set, m)?, token_map(set, n)?)?;
        }
        total += acc / group.pairs.len() as f64;
    }
    Ok(total)
}

/// Outside token with the largest symmetric KL to `map`; ties go to the
/// lowest token index.
fn max_outside(
    map: &AttentionMap,
    outside: &[usize],
    set: &AttentionSet,
) -> Result<(usize, f64), LossError> {
    let mut sorted = outside.to_vec();
    sorted.sort_unstable();
    let mut best: Option<(usize, f64)> = None;
    for &o in &sorted {
        let d = sym_kl(map, token_map(set, o)?)?;
        if best.is_none_or(|(_, b)| d > b) {
            best = Some((o, d));
        }
    }
    best.ok_or(LossError::Degenerate(Degenerate::EmptyOutsideSet))
}

/// Negated mean over object tokens of the hard max symmetric KL to any
/// outside token.
pub fn outside_loss(parsed: &ParsedPrompt, set: &AttentionSet) -> Result<f64, LossError> {
    if parsed.outside.is_empty() {
        return Err(LossError::Degenerate(Degenerate::EmptyOutsideSet));
    }
    let objects = parsed.object_tokens();
    if objects.is_empty() {
        return Err(LossError::Degenerate(Degenerate::EmptyObjectSet));
    }
    let mut total = 0.0;
    for &i in &objects {
        total += max_outside(token_map(set, i)?, &parsed.outside, set)?.1;
    }
    Ok(-total / objects.len() as f64)
}

/// `-sqrt((D + ln(2 sqrt(N) / delta)) / (2N))` for a given aggregate KL `D`.
pub fn pac_regularizer_from_kl(kl_to_prior: f64, cfg: &PacConfig) -> f64 {
    let n = cfg.n_samples as f64;
    -((kl_to_prior + cfg.confidence_term()) / (2.0 * n)).sqrt()
}

/// PAC regularizer with `D` the mean KL-to-uniform of the object maps.
pub fn pac_regularizer(object_maps: &[AttentionMap], cfg: &PacConfig) -> Result<f64, LossError> {
    cfg.validate()?;
    if object_maps.is_empty() {
        return Err(LossError::Degenerate(Degenerate::EmptyObjectSet));
    }
    let d = object_maps.iter().map(kl_to_uniform).sum::<f64>() / object_maps.len() as f64;
    Ok(pac_regularizer_from_kl(d, cfg))
}

/// PAC-Bayes upper bound on expected risk.
pub fn pac_bayes_bound(empirical_risk: f64, kl_qp: f64, cfg: &PacConfig) -> Result<f64, LossError> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&empirical_risk) {
        return Err(LossError::InvalidConfig(format!(
            "empirical risk must lie in [0, 1], got {empirical_risk}"
        )));
    }
    if !kl_qp.is_finite() || kl_qp < 0.0 {
        return Err(LossError::InvalidConfig(format!(
            "KL(Q||P) must be finite and >= 0, got {kl_qp}"
        )));
    }
    Ok(empirical_risk - pac_regularizer_from_kl(kl_qp, cfg))
}

/// Weighted total of the four terms. Degenerate terms contribute 0 and are
/// listed in `flags`.
pub fn total_loss(
    parsed: &ParsedPrompt,
    set: &AttentionSet,
    weights: &LossWeights,
    cfg: &PacConfig,
) -> Result<LossBreakdown, LossError> {
    evaluate(parsed, set, weights, cfg, false).map(|(b, _)| b)
}

/// [`total_loss`] plus its gradient with respect to every cell of every
/// token map in `set`, treating cells as independent variables.
pub fn total_loss_with_grad(
    parsed: &ParsedPrompt,
    set: &AttentionSet,
    weights: &LossWeights,
    cfg: &PacConfig,
) -> Result<(LossBreakdown, Vec<Vec<f64>>), LossError> {
    evaluate(parsed, set, weights, cfg, true)
        .map(|(b, g)| (b, g.expect("gradient requested")))
}

fn add_sym_kl_grad(p: &AttentionMap, q: &AttentionMap, scale: f64, gp: &mut [f64], gq: &mut [f64]) {
    for (j, (&pj, &qj)) in p.weights().iter().zip(q.weights()).enumerate() {
        let log_ratio = (pj / qj).ln();
        gp[j] += scale * 0.5 * (log_ratio + 1.0 - qj / pj);
        gq[j] += scale * 0.5 * (-log_ratio + 1.0 - pj / qj);
    }
}

fn add_kl_uniform_grad(p: &AttentionMap, scale: f64, g: &mut [f64]) {
    for (gj, &pj) in g.iter_mut().zip(p.weights()) {
        *gj += scale * (pj.ln() + 1.0);
    }
}

/// Two disjoint mutable rows of a gradient table.
fn two_rows(rows: &mut [Vec<f64>], a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = rows.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = rows.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

/// Per-token gradients with respect to the map weights.
type MapGradients = Vec<Vec<f64>>;

fn evaluate(
    parsed: &ParsedPrompt,
    set: &AttentionSet,
    weights: &LossWeights,
    cfg: &PacConfig,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<MapGradients>), LossError> {
    weights.validate()?;
    cfg.validate()?;
    let cells = set.height() * set.width();
    let objects = object_maps(parsed, set)?;
    let mut flags = Vec::new();
    let mut per_pair = Vec::new();
    let mut obj_grad = vec![vec![0.0; cells]; objects.len()];
    let mut tok_grad = vec![vec![0.0; cells]; set.len()];

    // divergence
    let n_obj = objects.len();
    let div = if n_obj < 2 {
        flags.push(Degenerate::TooFewObjects);
        0.0
    } else {
        let pairs = (n_obj * (n_obj - 1) / 2) as f64;
        let mut acc = 0.0;
        for i in 0..n_obj {
            for j in i + 1..n_obj {
                let d = sym_kl(&objects[i], &objects[j])?;
                acc += d;
                per_pair.push(PairContribution {
                    component: Component::Div,
                    first: i,
                    second: j,
                    sym_kl: d,
                });
                if want_grad {
                    let (gi, gj) = two_rows(&mut obj_grad, i, j);
                    add_sym_kl_grad(
                        &objects[i],
                        &objects[j],
                        -weights.lambda_div / pairs,
                        gi,
                        gj,
                    );
                }
            }
        }
        -acc / pairs
    };

    // similarity
    let mut sim = 0.0;
    for group in &parsed.groups {
        if group.pairs.is_empty() {
            continue;
        }
        let k = group.pairs.len() as f64;
        let mut acc = 0.0;
        for &(m, n) in &group.pairs {
            let (pm, pn) = (token_map(set, m)?, token_map(set, n)?);
            let d = sym_kl(pm, pn)?;
            acc += d;
            per_pair.push(PairContribution {
                component: Component::Sim,
                first: m,
                second: n,
                sym_kl: d,
            });
            if want_grad && m != n {
                let (gm, gn) = two_rows(&mut tok_grad, m, n);
                add_sym_kl_grad(pm, pn, weights.lambda_sim / k, gm, gn);
            }
        }
        sim += acc / k;
    }

    // outside
    let object_tokens = parsed.object_tokens();
    let out = if parsed.outside.is_empty() {
        flags.push(Degenerate::EmptyOutsideSet);
        0.0
    } else if object_tokens.is_empty() {
        flags.push(Degenerate::EmptyObjectSet);
        0.0
    } else {
        let s = object_tokens.len() as f64;
        let mut acc = 0.0;
        for &i in &object_tokens {
            let pi = token_map(set, i)?;
            let (o, d) = max_outside(pi, &parsed.outside, set)?;
            acc += d;
            per_pair.push(PairContribution {
                component: Component::Out,
                first: i,
                second: o,
                sym_kl: d,
            });
            if want_grad && i != o {
                let po = token_map(set, o)?;
                let (gi, go) = two_rows(&mut tok_grad, i, o);
                add_sym_kl_grad(pi, po, -weights.lambda_out / s, gi, go);
            }
        }
        -acc / s
    };

    // PAC regularizer
    let (pac, d_kl) = if n_obj == 0 {
        flags.push(Degenerate::EmptyObjectSet);
        (0.0, None)
    } else {
        let d = match cfg.aggregate {
            KlAggregate::Mean => {
                objects.iter().map(kl_to_uniform).sum::<f64>() / n_obj as f64
            }
            KlAggregate::Decomposed { alpha, beta, gamma } => {
                let (pair_tokens, outside) = decomposed_classes(parsed);
                let mut d = 0.0;
                for m in &objects {
                    d += alpha * kl_to_uniform(m);
                }
                for &t in &pair_tokens {
                    d += beta * kl_to_uniform(token_map(set, t)?);
                }
                for &t in &outside {
                    d += gamma * kl_to_uniform(token_map(set, t)?);
                }
                d
            }
        };
        (pac_regularizer_from_kl(d, cfg), Some(d))
    };
    if want_grad {
        if let Some(d) = d_kl {
            let n = cfg.n_samples as f64;
            let root = ((d + cfg.confidence_term()) / (2.0 * n)).sqrt();
            // d(-sqrt((D + c) / 2N)) / dD
            let dpac_dd = -1.0 / (4.0 * n * root);
            let scale = weights.lambda_pac * dpac_dd;
            match cfg.aggregate {
                KlAggregate::Mean => {
                    for (m, g) in objects.iter().zip(obj_grad.iter_mut()) {
                        add_kl_uniform_grad(m, scale / n_obj as f64, g);
                    }
                }
                KlAggregate::Decomposed { alpha, beta, gamma } => {
                    for (m, g) in objects.iter().zip(obj_grad.iter_mut()) {
                        add_kl_uniform_grad(m, scale * alpha, g);
                    }
                    let (pair_tokens, outside) = decomposed_classes(parsed);
                    for &t in &pair_tokens {
                        add_kl_uniform_grad(token_map(set, t)?, scale * beta, &mut tok_grad[t]);
                    }
                    for &t in &outside {
                        add_kl_uniform_grad(token_map(set, t)?, scale * gamma, &mut tok_grad[t]);
                    }
                }
            }
        }
    }

    let total = weights.lambda_div * div
        + weights.lambda_sim * sim
        + weights.lambda_out * out
        + weights.lambda_pac * pac;

    let grads = if want_grad {
        // combined map = a / sum(a), a = mean of member maps
        for ((group, obj), g_obj) in parsed.groups.iter().zip(&objects).zip(&obj_grad) {
            let members = group.members();
            let raw_mass: f64 = members
                .iter()
                .map(|&t| token_map(set, t).map(|m| m.weights().iter().sum::<f64>()))
                .sum::<Result<f64, _>>()?
                / members.len() as f64;
            let dot: f64 = g_obj.iter().zip(obj.weights()).map(|(g, a)| g * a).sum();
            let k = members.len() as f64;
            for &t in &members {
                for (gt, &go) in tok_grad[t].iter_mut().zip(g_obj) {
                    *gt += (go - dot) / raw_mass / k;
                }
            }
        }
        Some(tok_grad)
    } else {
        None
    };

    Ok((
        LossBreakdown {
            div,
            sim,
            out,
            pac,
            total,
            flags,
            per_pair,
        },
        grads,
    ))
}

/// Token classes for [`KlAggregate::Decomposed`]: members of groups that have
/// modifier/noun pairs, and outside tokens.
fn decomposed_classes(parsed: &ParsedPrompt) -> (Vec<usize>, Vec<usize>) {
    let mut pair_tokens: Vec<usize> = parsed
        .groups
        .iter()
        .filter(|g| !g.pairs.is_empty())
        .flat_map(|g| g.members())
        .collect();
    pair_tokens.sort_unstable();
    pair_tokens.dedup();
    let mut outside = parsed.outside.clone();
    outside.sort_unstable();
    outside.dedup();
    (pair_tokens, outside)
}

/// Which exponent governs a region of the structured distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentClass {
    Divergence,
    Similarity,
    Outside,
}

/// Exponents of the three component classes; they must sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Exponents {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, LossError> {
        let sum = alpha + beta + gamma;
        if !sum.is_finite() || (sum - 1.0).abs() > 1e-9 {
            return Err(LossError::ExponentSumViolation(sum));
        }
        Ok(Self { alpha, beta, gamma })
    }

    pub fn of(&self, class: ComponentClass) -> f64 {
        match class {
            ComponentClass::Divergence => self.alpha,
            ComponentClass::Similarity => self.beta,
            ComponentClass::Outside => self.gamma,
        }
    }
}

/// A distribution living on a subset Ω_i of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionComponent {
    pub class: ComponentClass,
    /// Grid cells of the support, in the order of `probs`.
    pub support: Vec<usize>,
    pub probs: Vec<f64>,
}

impl RegionComponent {
    pub fn new(class: ComponentClass, support: Vec<usize>, probs: Vec<f64>) -> Result<Self, LossError> {
        if support.len() != probs.len() || support.is_empty() {
            return Err(LossError::InvalidConfig(format!(
                "support of {} cells with {} probabilities",
                support.len(),
                probs.len()
            )));
        }
        let mass: f64 = probs.iter().sum();
        if probs.iter().any(|p| !p.is_finite() || *p <= 0.0) || (mass - 1.0).abs() > 1e-9 {
            return Err(LossError::InvalidConfig(format!(
                "component probabilities must be positive and sum to 1 (sum {mass})"
            )));
        }
        Ok(Self {
            class,
            support,
            probs,
        })
    }

    /// KL to the uniform distribution on the component's own support.
    pub fn kl_to_uniform(&self) -> f64 {
        let neg_entropy: f64 = self.probs.iter().map(|p| p * p.ln()).sum();
        (self.support.len() as f64).ln() + neg_entropy
    }

    fn prob_at(&self, cell: usize) -> Option<f64> {
        self.support
            .iter()
            .position(|&c| c == cell)
            .map(|i| self.probs[i])
    }
}

/// Checks that supports are pairwise disjoint and cover `0..cells`.
pub fn check_supports(components: &[RegionComponent], cells: usize) -> Result<(), LossError> {
    let mut owner = vec![false; cells];
    for comp in components {
        for &c in &comp.support {
            if c >= cells {
                return Err(LossError::InvalidConfig(format!(
                    "support cell {c} outside grid of {cells} cells"
                )));
            }
            if owner[c] {
                return Err(LossError::OverlappingSupports(c));
            }
            owner[c] = true;
        }
    }
    match owner.iter().position(|o| !o) {
        Some(c) => Err(LossError::UncoveredCell(c)),
        None => Ok(()),
    }
}

/// Unnormalized log-density `log A(l) + log Z` of the structured
/// distribution: each component containing `cell` contributes its exponent
/// times `ln A_m(cell)`.
pub fn factorized_log_prob(
    components: &[RegionComponent],
    exponents: &Exponents,
    cells: usize,
    cell: usize,
) -> Result<f64, LossError> {
    Exponents::new(exponents.alpha, exponents.beta, exponents.gamma)?;
    check_supports(components, cells)?;
    Ok(components
        .iter()
        .filter_map(|c| c.prob_at(cell).map(|p| exponents.of(c.class) * p.ln()))
        .sum())
}

/// `ln Z` of the structured distribution, by summation over cells.
pub fn factorized_log_normalizer(
    components: &[RegionComponent],
    exponents: &Exponents,
    cells: usize,
) -> Result<f64, LossError> {
    let mut z = 0.0;
    for l in 0..cells {
        z += factorized_log_prob(components, exponents, cells, l)?.exp();
    }
    Ok(z.ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposedKl {
    /// alpha * S_div + beta * S_sim + gamma * S_out.
    pub weighted_sum: f64,
    /// Unweighted per-class sums of KL-to-uniform: divergence, similarity, outside.
    pub class_sums: [f64; 3],
}

/// Exponent-weighted sum of per-component KL-to-uniform.
pub fn decomposed_kl(
    components: &[RegionComponent],
    exponents: &Exponents,
    cells: usize,
) -> Result<DecomposedKl, LossError> {
    Exponents::new(exponents.alpha, exponents.beta, exponents.gamma)?;
    check_supports(components, cells)?;
    let mut class_sums = [0.0; 3];
    for c in components {
        let slot = match c.class {
            ComponentClass::Divergence => 0,
            ComponentClass::Similarity => 1,
            ComponentClass::Outside => 2,
        };
        class_sums[slot] += c.kl_to_uniform();
    }
    let weighted_sum = exponents.alpha * class_sums[0]
        + exponents.beta * class_sums[1]
        + exponents.gamma * class_sums[2];
    Ok(DecomposedKl {
        weighted_sum,
        class_sums,
    })
}

/// Whether minimizing the weighted total pushes each term the way its name
/// suggests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Push {
    Encourages,
    Discourages,
    Inactive,
}

fn push_from(coefficient: f64) -> Push {
    if coefficient > 0.0 {
        Push::Encourages
    } else if coefficient < 0.0 {
        Push::Discourages
    } else {
        Push::Inactive
    }
}

/// Effect of gradient descent on the total loss for each goal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionReport {
    /// Larger pairwise symmetric KL between objects.
    pub object_separation: Push,
    /// Smaller modifier/noun symmetric KL.
    pub attribute_binding: Push,
    /// Larger symmetric KL between object tokens and outside tokens.
    pub outside_separation: Push,
    /// Larger KL from object maps to uniform.
    pub away_from_uniform: Push,
}

impl DirectionReport {
    pub fn all_encourage(&self) -> bool {
        [
            self.object_separation,
            self.attribute_binding,
            self.outside_separation,
            self.away_from_uniform,
        ]
        .iter()
        .all(|p| *p == Push::Encourages)
    }
}

/// Reads the signs of the configured weights against the sign conventions
/// of each term. Descent on `lambda * L` increases a quantity `q` when the
/// weight on `q` inside `lambda * L` is negative.
pub fn direction_check(weights: &LossWeights) -> DirectionReport {
    DirectionReport {
        // L_div = -mean symKL
        object_separation: push_from(weights.lambda_div),
        // L_sim = +symKL
        attribute_binding: push_from(weights.lambda_sim),
        // L_out = -mean max symKL
        outside_separation: push_from(weights.lambda_out),
        // R_PAC = -sqrt(D + c), decreasing in D
        away_from_uniform: push_from(weights.lambda_pac),
    }
}

/// The given weights with every sign flipped to the encouraging direction.
pub fn separation_encouraging(weights: &LossWeights) -> LossWeights {
    LossWeights {
        lambda_div: weights.lambda_div.abs(),
        lambda_sim: weights.lambda_sim.abs(),
        lambda_out: weights.lambda_out.abs(),
        lambda_pac: weights.lambda_pac.abs(),
    }
}
