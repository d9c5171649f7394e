//! The guided denoising loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{checksum, ToyModel};
use super::schedule::NoiseSchedule;
use crate::attention::{AttentionSet, DEFAULT_SMOOTHING};
use crate::error::EngineError;
use crate::eval::score;
use crate::losses::{LossBreakdown, LossWeights, PacConfig};
use crate::text::ParsedPrompt;

pub const DEFAULT_STEP_SIZE: f64 = 20.0;
pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_INTERVENTION_STEPS: usize = 25;
pub const DEFAULT_GRAD_CLIP: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub step_size: f64,
    pub steps: usize,
    /// Latent updates are applied on step indices `i < intervention_steps`.
    pub intervention_steps: usize,
    pub weights: LossWeights,
    pub pac: PacConfig,
    pub smoothing: f64,
    pub seed: u64,
    /// Decay the step size linearly from `step_size` to 0 over the run.
    pub step_decay: bool,
    /// Maximum L2 norm of the applied gradient.
    pub grad_clip: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            step_size: DEFAULT_STEP_SIZE,
            steps: DEFAULT_STEPS,
            intervention_steps: DEFAULT_INTERVENTION_STEPS,
            weights: LossWeights::default(),
            pac: PacConfig::default(),
            smoothing: DEFAULT_SMOOTHING,
            seed: 0,
            step_decay: false,
            grad_clip: DEFAULT_GRAD_CLIP,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::InvalidConfig(m));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.intervention_steps > self.steps {
            return bad(format!(
                "intervention steps {} exceed total steps {}",
                self.intervention_steps, self.steps
            ));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return bad(format!("step size must be finite and >= 0, got {}", self.step_size));
        }
        if !(self.smoothing > 0.0 && self.smoothing.is_finite()) {
            return bad(format!("smoothing must be positive, got {}", self.smoothing));
        }
        if self.grad_clip.is_nan() || self.grad_clip <= 0.0 {
            return bad(format!("gradient clip must be positive, got {}", self.grad_clip));
        }
        self.weights.validate()?;
        self.pac.validate()?;
        Ok(())
    }

    /// Step size used at step index `i`.
    pub fn step_size_at(&self, i: usize) -> f64 {
        if self.step_decay {
            self.step_size * (1.0 - i as f64 / self.steps as f64)
        } else {
            self.step_size
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub z: Vec<f64>,
    pub t: usize,
    pub schedule: NoiseSchedule,
}

impl LatentState {
    /// `z_T` drawn from a standard Gaussian seeded by `seed`.
    pub fn initial(len: usize, schedule: NoiseSchedule, seed: u64) -> Self {
        let z = gaussian(len, seed, 0);
        let t = schedule.steps();
        Self { z, t, schedule }
    }

    pub fn checksum(&self) -> String {
        checksum(&self.z)
    }
}

/// Standard normal draws from stream `stream` of a seeded generator.
fn gaussian(len: usize, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub step: usize,
    pub loss: LossBreakdown,
    pub grad_norm: f64,
    /// Whether the latent update was applied on this step.
    pub guided: bool,
    pub separation: f64,
    pub binding: f64,
    /// Checksum of the latent after this step.
    pub latent_checksum: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GuidanceTrace {
    pub records: Vec<StepRecord>,
}

impl GuidanceTrace {
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("trace record serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(s: &str) -> Result<Self, serde_json::Error> {
        let records = s
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { records })
    }
}

/// One denoising step from `state.t` to `state.t - 1`, guided when `i < K`.
pub fn guidance_step(
    model: &ToyModel,
    state: &LatentState,
    tokens: &[String],
    parsed: &ParsedPrompt,
    cfg: &GuidanceConfig,
    i: usize,
) -> Result<(LatentState, StepRecord), EngineError> {
    if state.t == 0 {
        return Err(EngineError::ScheduleExhausted);
    }
    let (eps, _) = model.predict_noise(&state.z, state.t, tokens)?;
    let (loss, maps, grad) =
        model.loss_and_grad(&state.z, tokens, parsed, &cfg.weights, &cfg.pac, cfg.smoothing)?;
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let scores = score(&maps, parsed)?;

    let alpha = cfg.step_size_at(i);
    let guided = i < cfg.intervention_steps && alpha > 0.0;
    let mut z = state.z.clone();
    if guided && grad_norm > 0.0 {
        let scale = alpha * (cfg.grad_clip / grad_norm).min(1.0);
        for (zi, gi) in z.iter_mut().zip(&grad) {
            *zi -= scale * gi;
        }
    }

    let noise = gaussian(z.len(), cfg.seed, state.t as u64);
    let next = state.schedule.step(&z, &eps, state.t, &noise)?;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(EngineError::NonFiniteLatent(i));
    }
    let next = LatentState {
        z: next,
        t: state.t - 1,
        schedule: state.schedule.clone(),
    };
    let record = StepRecord {
        t: state.t,
        step: i,
        loss,
        grad_norm,
        guided,
        separation: scores.separation,
        binding: scores.binding,
        latent_checksum: next.checksum(),
    };
    Ok((next, record))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub state: LatentState,
    pub trace: GuidanceTrace,
    /// Unsmoothed per-token maps induced by the final latent.
    pub maps: AttentionSet,
}

/// Runs the full `T -> 0` trajectory.
pub fn sample(
    model: &ToyModel,
    parsed: &ParsedPrompt,
    cfg: &GuidanceConfig,
) -> Result<SampleOutput, EngineError> {
    cfg.validate()?;
    let tokens: Vec<String> = parsed.tokens.iter().map(|t| t.text.clone()).collect();
    let schedule = NoiseSchedule::linear(cfg.steps)?;
    let mut state = LatentState::initial(model.dims().latent_len(), schedule, cfg.seed);
    let mut trace = GuidanceTrace::default();
    for i in 0..cfg.steps {
        let (next, record) = guidance_step(model, &state, &tokens, parsed, cfg, i)?;
        trace.records.push(record);
        state = next;
    }
    let maps = model.attention_maps(&state.z, &tokens, 0.0)?;
    Ok(SampleOutput { state, trace, maps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::ModelDims;
    use crate::text::{parse, WordLexicon};

    fn small() -> (ToyModel, ParsedPrompt) {
        let dims = ModelDims {
            height: 8,
            width: 8,
            channels: 2,
            ..ModelDims::default()
        };
        let model = ToyModel::new(dims, 11).unwrap();
        let parsed = parse("a red frog and a blue crown", &WordLexicon::builtin()).unwrap();
        (model, parsed)
    }

    fn cfg(steps: usize, k: usize, alpha: f64) -> GuidanceConfig {
        GuidanceConfig {
            steps,
            intervention_steps: k,
            step_size: alpha,
            seed: 5,
            ..GuidanceConfig::default()
        }
    }

    #[test]
    fn defaults() {
        let c = GuidanceConfig::default();
        assert_eq!((c.step_size, c.steps, c.intervention_steps), (20.0, 50, 25));
        assert_eq!(c.pac.delta, 0.15);
        c.validate().unwrap();
        assert!(cfg(5, 6, 1.0).validate().is_err());
        assert!(cfg(0, 0, 1.0).validate().is_err());
        assert!(cfg(5, 2, -1.0).validate().is_err());
    }

    #[test]
    fn config_json_fills_defaults() {
        let c: GuidanceConfig = serde_json::from_str(r#"{"seed": 9}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.steps, 50);
        assert!(serde_json::from_str::<GuidanceConfig>(r#"{"sed": 9}"#).is_err());
    }

    #[test]
    fn decay_reaches_zero_at_end() {
        let c = GuidanceConfig {
            step_decay: true,
            steps: 10,
            ..GuidanceConfig::default()
        };
        assert_eq!(c.step_size_at(0), 20.0);
        assert_close!(c.step_size_at(5), 10.0, 1e-12);
        assert_eq!(cfg(10, 5, 3.0).step_size_at(9), 3.0);
    }

    #[test]
    fn trace_shape() {
        let (model, parsed) = small();
        let out = sample(&model, &parsed, &cfg(6, 3, 1.0)).unwrap();
        assert_eq!(out.state.t, 0);
        let ts: Vec<usize> = out.trace.records.iter().map(|r| r.t).collect();
        assert_eq!(ts, vec![6, 5, 4, 3, 2, 1]);
        let guided: Vec<bool> = out.trace.records.iter().map(|r| r.guided).collect();
        assert_eq!(guided, vec![true, true, true, false, false, false]);
        assert_eq!(out.maps.len(), parsed.tokens.len());
        let back = GuidanceTrace::from_jsonl(&out.trace.to_jsonl()).unwrap();
        assert_eq!(back, out.trace);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let (model, parsed) = small();
        let a = sample(&model, &parsed, &cfg(5, 2, 2.0)).unwrap();
        let b = sample(&model, &parsed, &cfg(5, 2, 2.0)).unwrap();
        assert_eq!(a.trace, b.trace);
        let mut other = cfg(5, 2, 2.0);
        other.seed = 6;
        let c = sample(&model, &parsed, &other).unwrap();
        assert_ne!(a.state.checksum(), c.state.checksum());
    }

    #[test]
    fn zero_horizon_matches_zero_step_size() {
        let (model, parsed) = small();
        let a = sample(&model, &parsed, &cfg(6, 0, 20.0)).unwrap();
        let b = sample(&model, &parsed, &cfg(6, 6, 0.0)).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.state.z, b.state.z);
    }

    #[test]
    fn guidance_changes_trajectory() {
        let (model, parsed) = small();
        let a = sample(&model, &parsed, &cfg(4, 0, 20.0)).unwrap();
        let b = sample(&model, &parsed, &cfg(4, 2, 20.0)).unwrap();
        assert_eq!(a.trace.records[0].loss, b.trace.records[0].loss);
        assert_ne!(a.trace.records[0].latent_checksum, b.trace.records[0].latent_checksum);
    }

    #[test]
    fn single_unguided_step() {
        let (model, parsed) = small();
        let out = sample(&model, &parsed, &cfg(1, 0, 20.0)).unwrap();
        assert_eq!(out.trace.records.len(), 1);
        assert!(!out.trace.records[0].guided);
    }

    #[test]
    fn exhausted_state_is_rejected() {
        let (model, parsed) = small();
        let tokens: Vec<String> = parsed.tokens.iter().map(|t| t.text.clone()).collect();
        let state = LatentState {
            z: vec![0.0; model.dims().latent_len()],
            t: 0,
            schedule: NoiseSchedule::linear(3).unwrap(),
        };
        assert!(matches!(
            guidance_step(&model, &state, &tokens, &parsed, &cfg(3, 1, 1.0), 0),
            Err(EngineError::ScheduleExhausted)
        ));
    }
}
