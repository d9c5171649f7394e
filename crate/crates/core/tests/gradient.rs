//! Analytic latent gradient against central finite differences.

use pacattn::engine::{ModelDims, ToyModel};
use pacattn::losses::{KlAggregate, LossWeights, PacConfig};
use pacattn::text::{parse, ParsedPrompt, WordLexicon};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const FLOOR: f64 = 1e-8;
const TOLERANCE: f64 = 1e-4;

const PROMPTS: &[&str] = &[
    "a red frog and a blue crown",
    "a cat and a dog",
    "a spotted dog, a yellow bowl",
    "the big brown bear and a ball",
    "a frog and a monkey and a bird",
    "a purple wooden chair and a vase",
    "green apple and red cake",
    "a small fluffy cat",
];

struct Instance {
    model: ToyModel,
    z: Vec<f64>,
    tokens: Vec<String>,
    parsed: ParsedPrompt,
    weights: LossWeights,
    pac: PacConfig,
}

fn instance(i: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
    let dims = ModelDims {
        height: 8,
        width: 8,
        channels: 2,
        ..ModelDims::default()
    };
    let model = ToyModel::new(dims, rng.random()).unwrap();
    let z = (0..dims.latent_len()).map(|_| rng.random_range(-2.0..2.0)).collect();
    let parsed = parse(PROMPTS[i as usize % PROMPTS.len()], &WordLexicon::builtin()).unwrap();
    assert!(parsed.tokens.len() <= 8);
    let tokens = parsed.tokens.iter().map(|t| t.text.clone()).collect();
    let weights = if i.is_multiple_of(2) {
        LossWeights::default()
    } else {
        LossWeights::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        )
    };
    let mut pac = PacConfig::default();
    if i % 5 == 4 {
        pac.aggregate = KlAggregate::Decomposed {
            alpha: 0.5,
            beta: 0.3,
            gamma: 0.2,
        };
    }
    Instance {
        model,
        z,
        tokens,
        parsed,
        weights,
        pac,
    }
}

fn max_relative_error(inst: &Instance, epsilon: f64) -> f64 {
    let (_, _, grad) = inst
        .model
        .loss_and_grad(&inst.z, &inst.tokens, &inst.parsed, &inst.weights, &inst.pac, epsilon)
        .unwrap();
    let loss = |z: &[f64]| {
        inst.model
            .loss(z, &inst.tokens, &inst.parsed, &inst.weights, &inst.pac, epsilon)
            .unwrap()
            .total
    };
    let mut worst = 0.0f64;
    let mut z = inst.z.clone();
    for k in 0..z.len() {
        let orig = z[k];
        z[k] = orig + H;
        let up = loss(&z);
        z[k] = orig - H;
        let down = loss(&z);
        z[k] = orig;
        let numeric = (up - down) / (2.0 * H);
        let scale = grad[k].abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max((grad[k] - numeric).abs() / scale);
    }
    worst
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    for i in 0..20 {
        let inst = instance(i);
        let err = max_relative_error(&inst, 1e-10);
        assert!(err < TOLERANCE, "instance {i}: max relative error {err:e}");
    }
}

#[test]
fn gradient_is_exact_with_heavier_smoothing() {
    let inst = instance(3);
    let err = max_relative_error(&inst, 1e-3);
    assert!(err < TOLERANCE, "max relative error {err:e}");
}

#[test]
fn gradient_is_deterministic() {
    let inst = instance(0);
    let run = || {
        inst.model
            .loss_and_grad(&inst.z, &inst.tokens, &inst.parsed, &inst.weights, &inst.pac, 1e-10)
            .unwrap()
            .2
    };
    assert_eq!(run(), run());
}

/// With separation-encouraging signs, a small enough step along the negative
/// gradient never increases the loss.
#[test]
fn small_steps_descend() {
    for i in 0..5 {
        let mut inst = instance(i);
        inst.weights = pacattn::losses::separation_encouraging(&LossWeights::default());
        let (before, _, grad) = inst
            .model
            .loss_and_grad(&inst.z, &inst.tokens, &inst.parsed, &inst.weights, &inst.pac, 1e-10)
            .unwrap();
        let mut alpha = 1.0;
        let mut descended = false;
        for _ in 0..30 {
            let z: Vec<f64> = inst.z.iter().zip(&grad).map(|(z, g)| z - alpha * g).collect();
            let after = inst
                .model
                .loss(&z, &inst.tokens, &inst.parsed, &inst.weights, &inst.pac, 1e-10)
                .unwrap();
            if after.total <= before.total {
                descended = true;
                break;
            }
            alpha *= 0.5;
        }
        assert!(descended, "instance {i}: no descending step found");
    }
}
