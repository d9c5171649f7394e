//! A single cross-attention block standing in for the denoiser.
//!
//! Queries come from the latent channels of every spatial cell, keys and
//! values from per-token embeddings. The block is small enough that the
//! gradient of any attention-map loss with respect to the latent can be
//! written out by hand.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::{softmax_in_place, AttentionMap, AttentionSet, RawAttention};
use crate::error::EngineError;
use crate::losses::{total_loss, total_loss_with_grad, LossBreakdown, LossWeights, PacConfig};
use crate::text::ParsedPrompt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Query/key feature dimension m.
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub heads: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            channels: 4,
            feature_dim: 8,
            embed_dim: 8,
            heads: 2,
        }
    }
}

impl ModelDims {
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn latent_len(&self) -> usize {
        self.cells() * self.channels
    }

    fn validate(&self) -> Result<(), EngineError> {
        let fields = [
            ("height", self.height),
            ("width", self.width),
            ("channels", self.channels),
            ("feature_dim", self.feature_dim),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(EngineError::InvalidDims(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (rows as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| { let x: f64 = StandardNormal.sample(rng); scale * x })
            .collect::<Vec<f64>>();
        Self { rows, cols, data }
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `x * self` for a row vector `x` of length `rows`.
    fn left_mul(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &xr) in x.iter().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xr * w;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    dims: ModelDims,
    seed: u64,
    /// Per head, channels -> feature_dim.
    w_q: Vec<Matrix>,
    /// Per head, embed_dim -> feature_dim.
    w_k: Vec<Matrix>,
    /// embed_dim -> channels.
    w_v: Matrix,
    /// channels -> channels.
    w_res: Matrix,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Hex SHA-256 prefix of a slice of `f64`s.
pub fn checksum(values: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_le_bytes());
    }
    hasher
        .finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Everything the backward pass needs from one forward evaluation.
struct Forward {
    keys: Vec<Vec<f64>>,
    probs: RawAttention,
    /// Head-averaged column mass per token before spatial renormalization.
    masses: Vec<f64>,
    maps: AttentionSet,
}

impl ToyModel {
    pub fn new(dims: ModelDims, seed: u64) -> Result<Self, EngineError> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w_q = (0..dims.heads)
            .map(|_| Matrix::random(dims.channels, dims.feature_dim, &mut rng))
            .collect();
        let w_k = (0..dims.heads)
            .map(|_| Matrix::random(dims.embed_dim, dims.feature_dim, &mut rng))
            .collect();
        let w_v = Matrix::random(dims.embed_dim, dims.channels, &mut rng);
        let w_res = Matrix::random(dims.channels, dims.channels, &mut rng);
        Ok(Self {
            dims,
            seed,
            w_q,
            w_k,
            w_v,
            w_res,
        })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of entries in the query projection of one head.
    pub fn query_projection_len(&self) -> usize {
        self.w_q[0].data.len()
    }

    /// Zeroes the residual path, leaving only the attention read-out.
    pub fn without_residual(mut self) -> Self {
        self.w_res.data.iter_mut().for_each(|w| *w = 0.0);
        self
    }

    pub fn checksum(&self) -> String {
        let mut all = Vec::new();
        for m in self.w_q.iter().chain(&self.w_k) {
            all.extend_from_slice(&m.data);
        }
        all.extend_from_slice(&self.w_v.data);
        all.extend_from_slice(&self.w_res.data);
        checksum(&all)
    }

    /// Deterministic embedding derived from the token text and model seed.
    pub fn embed(&self, text: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(text.as_bytes()));
        (0..self.dims.embed_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }

    fn check_inputs(&self, z: &[f64], tokens: &[String]) -> Result<(), EngineError> {
        if tokens.is_empty() {
            return Err(EngineError::EmptyTokenList);
        }
        if z.len() != self.dims.latent_len() {
            return Err(EngineError::InvalidDims(format!(
                "latent has {} values, model expects {}",
                z.len(),
                self.dims.latent_len()
            )));
        }
        Ok(())
    }

    /// Keys per head: `[head][token * feature_dim + i]`.
    fn keys(&self, tokens: &[String]) -> Vec<Vec<f64>> {
        let m = self.dims.feature_dim;
        let embeddings: Vec<Vec<f64>> = tokens.iter().map(|t| self.embed(t)).collect();
        self.w_k
            .iter()
            .map(|wk| {
                let mut k = vec![0.0; tokens.len() * m];
                for (s, e) in embeddings.iter().enumerate() {
                    wk.left_mul(e, &mut k[s * m..(s + 1) * m]);
                }
                k
            })
            .collect()
    }

    fn scores_with_keys(&self, z: &[f64], keys: &[Vec<f64>], n_tokens: usize) -> RawAttention {
        let d = &self.dims;
        let scale = 1.0 / (d.feature_dim as f64).sqrt();
        let mut scores = vec![0.0; d.heads * d.cells() * n_tokens];
        let mut q = vec![0.0; d.feature_dim];
        for (h, (w_q, keys)) in self.w_q.iter().zip(keys).enumerate() {
            for p in 0..d.cells() {
                w_q.left_mul(&z[p * d.channels..(p + 1) * d.channels], &mut q);
                let base = (h * d.cells() + p) * n_tokens;
                for s in 0..n_tokens {
                    let k = &keys[s * d.feature_dim..(s + 1) * d.feature_dim];
                    scores[base + s] = scale * q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        RawAttention {
            heads: d.heads,
            height: d.height,
            width: d.width,
            tokens: n_tokens,
            feature_dim: d.feature_dim,
            scores,
        }
    }

    /// Unnormalized `Q K^T / sqrt(m)` and its softmax over tokens.
    pub fn cross_attention(
        &self,
        z: &[f64],
        tokens: &[String],
    ) -> Result<(RawAttention, RawAttention), EngineError> {
        self.check_inputs(z, tokens)?;
        let raw = self.scores_with_keys(z, &self.keys(tokens), tokens.len());
        let normalized = crate::attention::softmax_scores(&raw)?;
        Ok((raw, normalized))
    }

    /// Noise estimate `z W_res + mean_h(softmax) (E W_v)` and the normalized
    /// attention it used. The toy block ignores the timestep.
    pub fn predict_noise(
        &self,
        z: &[f64],
        _t: usize,
        tokens: &[String],
    ) -> Result<(Vec<f64>, RawAttention), EngineError> {
        let (_, probs) = self.cross_attention(z, tokens)?;
        let d = &self.dims;
        let n = tokens.len();
        let values: Vec<Vec<f64>> = tokens
            .iter()
            .map(|t| {
                let mut v = vec![0.0; d.channels];
                self.w_v.left_mul(&self.embed(t), &mut v);
                v
            })
            .collect();
        let mut eps = vec![0.0; z.len()];
        let mut mix = vec![0.0; n];
        for p in 0..d.cells() {
            let out = &mut eps[p * d.channels..(p + 1) * d.channels];
            self.w_res.left_mul(&z[p * d.channels..(p + 1) * d.channels], out);
            mix.iter_mut().for_each(|w| *w = 0.0);
            for h in 0..d.heads {
                for (s, w) in mix.iter_mut().enumerate() {
                    *w += probs.get(h, p, s) / d.heads as f64;
                }
            }
            for (s, &w) in mix.iter().enumerate() {
                for (o, &v) in out.iter_mut().zip(&values[s]) {
                    *o += w * v;
                }
            }
        }
        Ok((eps, probs))
    }

    fn forward(&self, z: &[f64], tokens: &[String], epsilon: f64) -> Result<Forward, EngineError> {
        self.check_inputs(z, tokens)?;
        let keys = self.keys(tokens);
        let mut probs = self.scores_with_keys(z, &keys, tokens.len());
        if let Some(i) = probs.scores.iter().position(|s| !s.is_finite()) {
            return Err(crate::error::AttentionError::NonFiniteInput(i).into());
        }
        for row in probs.scores.chunks_exact_mut(tokens.len()) {
            softmax_in_place(row);
        }
        let d = &self.dims;
        let mut masses = Vec::with_capacity(tokens.len());
        let mut maps = Vec::with_capacity(tokens.len());
        for s in 0..tokens.len() {
            let mut col = vec![0.0; d.cells()];
            for h in 0..d.heads {
                for (p, c) in col.iter_mut().enumerate() {
                    *c += probs.get(h, p, s);
                }
            }
            col.iter_mut().for_each(|c| *c /= d.heads as f64);
            masses.push(col.iter().sum());
            let map = AttentionMap::from_weights(d.height, d.width, s, col)?;
            maps.push(crate::attention::smooth(&map, epsilon));
        }
        Ok(Forward {
            keys,
            probs,
            masses,
            maps: AttentionSet::new(maps)?,
        })
    }

    /// Smoothed per-token maps induced by latent `z`.
    pub fn attention_maps(
        &self,
        z: &[f64],
        tokens: &[String],
        epsilon: f64,
    ) -> Result<AttentionSet, EngineError> {
        Ok(self.forward(z, tokens, epsilon)?.maps)
    }

    /// Total loss on the maps induced by `z`.
    pub fn loss(
        &self,
        z: &[f64],
        tokens: &[String],
        parsed: &ParsedPrompt,
        weights: &LossWeights,
        pac: &PacConfig,
        epsilon: f64,
    ) -> Result<LossBreakdown, EngineError> {
        let fwd = self.forward(z, tokens, epsilon)?;
        Ok(total_loss(parsed, &fwd.maps, weights, pac)?)
    }

    /// Total loss, smoothed maps, and the exact gradient of the total with
    /// respect to every latent scalar.
    pub fn loss_and_grad(
        &self,
        z: &[f64],
        tokens: &[String],
        parsed: &ParsedPrompt,
        weights: &LossWeights,
        pac: &PacConfig,
        epsilon: f64,
    ) -> Result<(LossBreakdown, AttentionSet, Vec<f64>), EngineError> {
        let fwd = self.forward(z, tokens, epsilon)?;
        let (breakdown, map_grads) = total_loss_with_grad(parsed, &fwd.maps, weights, pac)?;
        let grad = self.backward(&fwd, &map_grads, epsilon);
        Ok((breakdown, fwd.maps, grad))
    }

    fn backward(&self, fwd: &Forward, map_grads: &[Vec<f64>], epsilon: f64) -> Vec<f64> {
        let d = &self.dims;
        let n = map_grads.len();
        let cells = d.cells();
        let smooth_scale = 1.0 / (1.0 + epsilon * cells as f64);

        // through smoothing and spatial renormalization: d loss / d column
        let mut col_grad = vec![0.0; n * cells];
        for s in 0..n {
            // unsmoothed normalized map A = (Â (1 + eps |Ω|) - eps)
            let smoothed = fwd.maps.maps()[s].weights();
            let g = &map_grads[s];
            let dot: f64 = g
                .iter()
                .zip(smoothed)
                .map(|(gj, &aj)| gj * smooth_scale * (aj / smooth_scale - epsilon))
                .sum();
            for p in 0..cells {
                col_grad[s * cells + p] = (g[p] * smooth_scale - dot) / fwd.masses[s];
            }
        }

        let scale = 1.0 / (d.feature_dim as f64).sqrt();
        let mut grad = vec![0.0; d.latent_len()];
        let mut d_scores = vec![0.0; n];
        let mut d_q = vec![0.0; d.feature_dim];
        for h in 0..d.heads {
            let keys = &fwd.keys[h];
            for p in 0..cells {
                let probs = fwd.probs.row(h, p);
                // through head averaging and the token softmax
                let mut dot = 0.0;
                for s in 0..n {
                    let dp = col_grad[s * cells + p] / d.heads as f64;
                    d_scores[s] = dp;
                    dot += dp * probs[s];
                }
                for s in 0..n {
                    d_scores[s] = probs[s] * (d_scores[s] - dot);
                }
                // through Q K^T / sqrt(m)
                d_q.iter_mut().for_each(|v| *v = 0.0);
                for s in 0..n {
                    let k = &keys[s * d.feature_dim..(s + 1) * d.feature_dim];
                    for (dq, &kv) in d_q.iter_mut().zip(k) {
                        *dq += d_scores[s] * kv * scale;
                    }
                }
                // through Q = z_p W_q
                let wq = &self.w_q[h];
                let gz = &mut grad[p * d.channels..(p + 1) * d.channels];
                for (c, g) in gz.iter_mut().enumerate() {
                    *g += (0..d.feature_dim).map(|i| wq.at(c, i) * d_q[i]).sum::<f64>();
                }
            }
        }
        grad
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn init_is_deterministic() {
        let a = ToyModel::new(ModelDims::default(), 3).unwrap();
        let b = ToyModel::new(ModelDims::default(), 3).unwrap();
        let c = ToyModel::new(ModelDims::default(), 4).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
        assert_eq!(a.embed("frog"), b.embed("frog"));
        assert_ne!(a.embed("frog"), a.embed("crown"));
    }

    #[test]
    fn init_shapes_and_errors() {
        let model = ToyModel::new(ModelDims::default(), 0).unwrap();
        assert_eq!(model.query_projection_len(), 4 * 8);
        let bad = ModelDims {
            feature_dim: 0,
            ..ModelDims::default()
        };
        assert!(matches!(ToyModel::new(bad, 0), Err(EngineError::InvalidDims(_))));
    }

    #[test]
    fn zero_latent_gives_uniform_attention() {
        let model = ToyModel::new(ModelDims::default(), 1).unwrap();
        let z = vec![0.0; model.dims().latent_len()];
        let tokens = toks(&["a", "frog", "and", "a", "crown"]);
        let (raw, probs) = model.cross_attention(&z, &tokens).unwrap();
        assert_eq!(raw.scores.len(), 2 * 256 * 5);
        assert!(raw.scores.iter().all(|&s| s == 0.0));
        assert!(probs.scores.iter().all(|&p| (p - 0.2).abs() < 1e-15));
        assert!(matches!(
            model.cross_attention(&z, &[]),
            Err(EngineError::EmptyTokenList)
        ));
    }

    #[test]
    fn scores_scale_linearly_with_latent() {
        let model = ToyModel::new(ModelDims::default(), 2).unwrap();
        let z: Vec<f64> = (0..model.dims().latent_len()).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let z3: Vec<f64> = z.iter().map(|v| 3.0 * v).collect();
        let tokens = toks(&["a", "frog"]);
        let (raw, _) = model.cross_attention(&z, &tokens).unwrap();
        let (raw3, _) = model.cross_attention(&z3, &tokens).unwrap();
        for (a, b) in raw.scores.iter().zip(&raw3.scores) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_prediction_with_zero_latent_and_residual() {
        let model = ToyModel::new(ModelDims::default(), 5).unwrap().without_residual();
        let z = vec![0.0; model.dims().latent_len()];
        let tokens = toks(&["frog", "crown"]);
        let (eps, _) = model.predict_noise(&z, 10, &tokens).unwrap();
        assert_eq!(eps.len(), z.len());
        // uniform token mixture of value vectors, identical in every cell
        let mut expected = vec![0.0; 4];
        for t in &tokens {
            let mut v = vec![0.0; 4];
            model.w_v.left_mul(&model.embed(t), &mut v);
            for (e, x) in expected.iter_mut().zip(v) {
                *e += 0.5 * x;
            }
        }
        for cell in eps.chunks_exact(4) {
            for (a, b) in cell.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn noise_prediction_is_continuous() {
        let model = ToyModel::new(ModelDims::default(), 6).unwrap();
        let z: Vec<f64> = (0..model.dims().latent_len()).map(|i| ((i * 13 % 7) as f64 - 3.0) / 3.0).collect();
        let mut dz: Vec<f64> = (0..z.len()).map(|i| ((i % 5) as f64) - 2.0).collect();
        let norm = dz.iter().map(|v| v * v).sum::<f64>().sqrt();
        dz.iter_mut().for_each(|v| *v *= 1e-6 / norm);
        let z2: Vec<f64> = z.iter().zip(&dz).map(|(a, b)| a + b).collect();
        let tokens = toks(&["a", "red", "frog"]);
        let (e1, _) = model.predict_noise(&z, 1, &tokens).unwrap();
        let (e2, _) = model.predict_noise(&z2, 1, &tokens).unwrap();
        let diff = e1.iter().zip(&e2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(diff > 0.0 && diff < 1e-5, "{diff}");
    }

    #[test]
    fn zero_weights_give_zero_gradient() {
        let model = ToyModel::new(ModelDims::default(), 8).unwrap();
        let parsed = crate::text::parse("a frog and a purple crown", &crate::text::WordLexicon::builtin()).unwrap();
        let tokens: Vec<String> = parsed.tokens.iter().map(|t| t.text.clone()).collect();
        let z: Vec<f64> = (0..model.dims().latent_len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let (_, _, g) = model
            .loss_and_grad(&z, &tokens, &parsed, &LossWeights::ZERO, &PacConfig::default(), 1e-10)
            .unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }
}
