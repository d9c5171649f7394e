use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{score, DiagnosticScores};
use crate::engine::{sample, GuidanceConfig, ModelDims, ToyModel};
use crate::error::{EngineError, EvalError};
use crate::losses::{total_loss, LossBreakdown};
use crate::text::{parse, WordLexicon};

pub const DEFAULT_SEEDS: [u64; 4] = [0, 1, 2, 3];

/// Ten prompts spanning animal/animal, animal/object and object/object pairs.
pub fn default_prompts() -> Vec<String> {
    [
        "a frog and a monkey",
        "a cat and a rabbit",
        "a lion and an elephant",
        "a dog and a red ball",
        "a turtle and a yellow bowl",
        "a monkey and a golden crown",
        "a bear and a blue backpack",
        "a red apple and a green bench",
        "a purple crown and a blue suitcase",
        "a wooden chair and a glass vase",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "delta")]
    Delta,
    #[serde(rename = "intervention_K", alias = "intervention_k")]
    InterventionK,
    #[serde(rename = "step_size")]
    StepSize,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Delta => "delta",
            SweepAxis::InterventionK => "intervention_K",
            SweepAxis::StepSize => "step_size",
        }
    }
}

fn default_prompt_list() -> Vec<String> {
    default_prompts()
}

fn default_seed_list() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    #[serde(default)]
    pub base: GuidanceConfig,
    #[serde(default = "default_prompt_list")]
    pub prompts: Vec<String>,
    #[serde(default = "default_seed_list")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub model: ModelDims,
    #[serde(default)]
    pub model_seed: u64,
}

impl SweepSpec {
    pub fn new(axis: SweepAxis, values: Vec<f64>) -> Self {
        Self {
            axis,
            values,
            base: GuidanceConfig::default(),
            prompts: default_prompts(),
            seeds: DEFAULT_SEEDS.to_vec(),
            model: ModelDims::default(),
            model_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::InvalidSpec(m.to_string()));
        if self.values.is_empty() {
            return bad("values must be nonempty");
        }
        if self.prompts.is_empty() {
            return bad("prompts must be nonempty");
        }
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty");
        }
        for &v in &self.values {
            self.config_for(v, 0)
                .validate()
                .map_err(|e| EvalError::InvalidSpec(format!("value {v}: {e}")))?;
            if self.axis == SweepAxis::InterventionK && (v < 0.0 || v.fract() != 0.0) {
                return Err(EvalError::InvalidSpec(format!(
                    "intervention_K values must be non-negative integers, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Base configuration with the swept axis set to `value`.
    pub fn config_for(&self, value: f64, seed: u64) -> GuidanceConfig {
        let mut cfg = self.base.clone();
        cfg.seed = seed;
        match self.axis {
            SweepAxis::Delta => cfg.pac.delta = value,
            SweepAxis::InterventionK => cfg.intervention_steps = value as usize,
            SweepAxis::StepSize => cfg.step_size = value,
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub value: f64,
    pub prompt: String,
    pub seed: u64,
    /// `None` on success, otherwise the failure message.
    pub error: Option<String>,
    pub scores: Option<DiagnosticScores>,
    pub loss: Option<LossBreakdown>,
}

impl SweepCell {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for fewer than two values.
    pub sd: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self { mean, sd })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSummary {
    pub value: f64,
    pub completed: usize,
    pub failed: usize,
    pub separation: Option<Stat>,
    pub binding: Option<Stat>,
    pub outside_leak: Option<Stat>,
    pub uniformity: Option<Stat>,
    pub total: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub cells: Vec<SweepCell>,
    pub summary: Vec<ValueSummary>,
}

impl SweepReport {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| !c.ok()).count()
    }

    /// Builds the per-value summary from `cells`, keeping `values` order.
    pub fn from_cells(axis: SweepAxis, values: &[f64], cells: Vec<SweepCell>) -> Self {
        let summary = values
            .iter()
            .map(|&value| {
                let mine: Vec<&SweepCell> = cells.iter().filter(|c| c.value == value).collect();
                let done: Vec<(&DiagnosticScores, &LossBreakdown)> = mine
                    .iter()
                    .filter_map(|c| Some((c.scores.as_ref()?, c.loss.as_ref()?)))
                    .collect();
                let stat = |f: &dyn Fn(&DiagnosticScores, &LossBreakdown) -> f64| {
                    Stat::of(&done.iter().map(|(s, l)| f(s, l)).collect::<Vec<_>>())
                };
                ValueSummary {
                    value,
                    completed: done.len(),
                    failed: mine.len() - done.len(),
                    separation: stat(&|s, _| s.separation),
                    binding: stat(&|s, _| s.binding),
                    outside_leak: stat(&|s, _| s.outside_leak),
                    uniformity: stat(&|s, _| s.uniformity),
                    total: stat(&|_, l| l.total),
                }
            })
            .collect();
        Self {
            axis,
            cells,
            summary,
        }
    }
}

fn run_cell(
    model: &ToyModel,
    lexicon: &WordLexicon,
    spec: &SweepSpec,
    value: f64,
    prompt: &str,
    seed: u64,
) -> Result<(DiagnosticScores, LossBreakdown), EngineError> {
    let parsed = parse(prompt, lexicon)?;
    let cfg = spec.config_for(value, seed);
    let out = sample(model, &parsed, &cfg)?;
    let maps = out.maps.smoothed(cfg.smoothing);
    let scores = score(&maps, &parsed)?;
    let loss = total_loss(&parsed, &maps, &cfg.weights, &cfg.pac)?;
    Ok((scores, loss))
}

/// Runs every (value, prompt, seed) cell. Cells execute in parallel; a cell
/// failure is recorded and the sweep continues.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepReport, EvalError> {
    spec.validate()?;
    let model = ToyModel::new(spec.model, spec.model_seed)?;
    let lexicon = WordLexicon::builtin();
    let jobs: Vec<(f64, &String, u64)> = spec
        .values
        .iter()
        .flat_map(|&v| {
            spec.prompts
                .iter()
                .flat_map(move |p| spec.seeds.iter().map(move |&s| (v, p, s)))
        })
        .collect();
    let cells = jobs
        .into_par_iter()
        .map(|(value, prompt, seed)| {
            let result = run_cell(&model, &lexicon, spec, value, prompt, seed);
            let (error, scores, loss) = match result {
                Ok((s, l)) => (None, Some(s), Some(l)),
                Err(e) => (Some(e.to_string()), None, None),
            };
            SweepCell {
                value,
                prompt: prompt.clone(),
                seed,
                error,
                scores,
                loss,
            }
        })
        .collect();
    Ok(SweepReport::from_cells(spec.axis, &spec.values, cells))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(axis: SweepAxis, values: Vec<f64>) -> SweepSpec {
        let mut spec = SweepSpec::new(axis, values);
        spec.model = ModelDims {
            height: 4,
            width: 4,
            channels: 2,
            ..ModelDims::default()
        };
        spec.base.steps = 4;
        spec.base.intervention_steps = 2;
        spec.prompts = vec!["a red frog and a crown".into(), "a cat and".into()];
        spec.seeds = vec![1, 2];
        spec
    }

    #[test]
    fn default_prompts_parse() {
        let lex = WordLexicon::builtin();
        let prompts = default_prompts();
        assert_eq!(prompts.len(), 10);
        for p in prompts {
            let parsed = parse(&p, &lex).unwrap();
            assert_eq!(parsed.groups.len(), 2, "{p}");
        }
    }

    #[test]
    fn validation() {
        assert!(tiny(SweepAxis::Delta, vec![]).validate().is_err());
        assert!(tiny(SweepAxis::Delta, vec![1.5]).validate().is_err());
        assert!(tiny(SweepAxis::InterventionK, vec![5.0]).validate().is_err());
        assert!(tiny(SweepAxis::InterventionK, vec![1.5]).validate().is_err());
        assert!(tiny(SweepAxis::StepSize, vec![-1.0]).validate().is_err());
        tiny(SweepAxis::InterventionK, vec![0.0, 2.0, 4.0]).validate().unwrap();
    }

    #[test]
    fn axis_json_names() {
        let spec: SweepSpec =
            serde_json::from_str(r#"{"axis": "intervention_K", "values": [0, 25, 50]}"#).unwrap();
        assert_eq!(spec.axis, SweepAxis::InterventionK);
        assert_eq!(spec.prompts.len(), 10);
        assert_eq!(spec.seeds, vec![0, 1, 2, 3]);
        assert_eq!(spec.config_for(25.0, 3).intervention_steps, 25);
    }

    #[test]
    fn failures_are_recorded_per_cell() {
        let report = run_sweep(&tiny(SweepAxis::StepSize, vec![0.0, 5.0])).unwrap();
        assert_eq!(report.cells.len(), 8);
        assert_eq!(report.failed_cells(), 4);
        assert!(report.cells.iter().filter(|c| !c.ok()).all(|c| c.prompt == "a cat and"));
        for s in &report.summary {
            assert_eq!((s.completed, s.failed), (2, 2));
        }
    }

    #[test]
    fn zero_horizon_matches_unguided() {
        let mut spec = tiny(SweepAxis::InterventionK, vec![0.0]);
        spec.prompts.truncate(1);
        let k0 = run_sweep(&spec).unwrap();
        let mut unguided = tiny(SweepAxis::StepSize, vec![0.0]);
        unguided.prompts.truncate(1);
        let a0 = run_sweep(&unguided).unwrap();
        for (a, b) in k0.cells.iter().zip(&a0.cells) {
            assert_eq!(a.scores, b.scores);
            assert_eq!(a.loss, b.loss);
        }
    }

    #[test]
    fn stat_basics() {
        assert_eq!(Stat::of(&[]), None);
        assert_eq!(Stat::of(&[2.0]), Some(Stat { mean: 2.0, sd: 0.0 }));
        let s = Stat::of(&[1.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_close!(s.sd, 2f64.sqrt(), 1e-15);
    }
}
