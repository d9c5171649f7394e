use pacattn::attention::{
    aggregate, kl, kl_to_uniform, smooth, softmax_scores, sym_kl, AttentionMap, AttentionSet,
    RawAttention, DEFAULT_SMOOTHING,
};
use pacattn::eval::score;
use pacattn::losses::{
    divergence_loss, object_maps, outside_loss, pac_regularizer_from_kl, similarity_loss,
    total_loss, LossWeights, PacConfig,
};
use pacattn::text::{parse, validate, ParsedPrompt, WordLexicon};
use proptest::prelude::*;

const CELLS: usize = 9;

fn smoothed_map(token: usize) -> impl Strategy<Value = AttentionMap> {
    prop::collection::vec(0.0f64..1.0, CELLS)
        .prop_filter("positive mass", |w| w.iter().sum::<f64>() > 1e-6)
        .prop_map(move |w| {
            smooth(&AttentionMap::from_weights(3, 3, token, w).unwrap(), DEFAULT_SMOOTHING)
        })
}

fn set_for(n: usize) -> impl Strategy<Value = AttentionSet> {
    (0..n)
        .map(smoothed_map)
        .collect::<Vec<_>>()
        .prop_map(|maps| AttentionSet::new(maps).unwrap())
}

fn prompt() -> ParsedPrompt {
    parse("a red frog and a blue big crown", &WordLexicon::builtin()).unwrap()
}

fn permute_cells(set: &AttentionSet, perm: &[usize]) -> AttentionSet {
    let maps = set
        .maps()
        .iter()
        .map(|m| {
            let w = perm.iter().map(|&j| m.weights()[j]).collect();
            AttentionMap::new(3, 3, m.token_index(), w).unwrap()
        })
        .collect();
    AttentionSet::new(maps).unwrap()
}

fn words() -> impl Strategy<Value = String> {
    let mods = prop::sample::select(vec!["red", "blue", "wooden", "spotted", "small"]);
    let nouns = prop::sample::select(vec!["frog", "cat", "crown", "bowl", "apple", "dog"]);
    let phrase = (
        prop::option::of(prop::sample::select(vec!["a", "the", "one"])),
        prop::collection::vec(mods, 0..3),
        nouns,
    )
        .prop_map(|(d, m, n)| {
            let mut w: Vec<&str> = d.into_iter().collect();
            w.extend(m);
            w.push(n);
            w.join(" ")
        });
    prop::collection::vec(phrase, 1..4).prop_map(|p| p.join(" and "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn kl_axioms(p in smoothed_map(0), q in smoothed_map(1)) {
        prop_assert!(kl(&p, &q).unwrap() >= -1e-12);
        prop_assert!(kl(&p, &p).unwrap().abs() <= 1e-12);
        prop_assert_eq!(sym_kl(&p, &q).unwrap(), sym_kl(&q, &p).unwrap());
    }

    #[test]
    fn kl_to_uniform_is_bounded(p in smoothed_map(0)) {
        let d = kl_to_uniform(&p);
        prop_assert!(d >= -1e-12 && d <= (CELLS as f64).ln() + 1e-12);
    }

    #[test]
    fn smoothing_keeps_distribution_and_argmax(w in prop::collection::vec(0.0f64..1.0, CELLS), eps in 1e-12f64..1e-2) {
        prop_assume!(w.iter().sum::<f64>() > 1e-6);
        let m = AttentionMap::from_weights(3, 3, 0, w).unwrap();
        let s = smooth(&m, eps);
        prop_assert!((s.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(s.weights().iter().all(|&v| v > 0.0));
        prop_assert_eq!(s.argmax(), m.argmax());
    }

    #[test]
    fn softmax_is_shift_invariant_and_normalized(
        scores in prop::collection::vec(-10.0f64..10.0, 2 * CELLS * 3),
        shift in -50.0f64..50.0,
    ) {
        let raw = RawAttention::new(2, 3, 3, 3, 4, scores.clone()).unwrap();
        let shifted = RawAttention::new(2, 3, 3, 3, 4, scores.iter().map(|s| s + shift).collect()).unwrap();
        let a = softmax_scores(&raw).unwrap();
        let b = softmax_scores(&shifted).unwrap();
        for (x, y) in a.scores.iter().zip(&b.scores) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        for row in a.scores.chunks(3) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregation_ignores_head_order(scores in prop::collection::vec(-5.0f64..5.0, 2 * CELLS * 3)) {
        let probs = softmax_scores(&RawAttention::new(2, 3, 3, 3, 4, scores.clone()).unwrap()).unwrap();
        let half = CELLS * 3;
        let swapped: Vec<f64> = probs.scores[half..].iter().chain(&probs.scores[..half]).cloned().collect();
        let swapped = RawAttention::new(2, 3, 3, 3, 4, swapped).unwrap();
        for t in 0..3 {
            let a = aggregate(&probs, t).unwrap();
            let b = aggregate(&swapped, t).unwrap();
            for (x, y) in a.weights().iter().zip(b.weights()) {
                prop_assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn loss_signs_and_total(set in set_for(8)) {
        let parsed = prompt();
        let objects = object_maps(&parsed, &set).unwrap();
        prop_assert!(divergence_loss(&objects).unwrap() <= 0.0);
        prop_assert!(similarity_loss(&parsed, &set).unwrap() >= 0.0);
        prop_assert!(outside_loss(&parsed, &set).unwrap() <= 0.0);
        let w = LossWeights::default();
        let b = total_loss(&parsed, &set, &w, &PacConfig::default()).unwrap();
        prop_assert!(b.pac < 0.0);
        let manual = w.lambda_div * b.div + w.lambda_sim * b.sim + w.lambda_out * b.out + w.lambda_pac * b.pac;
        prop_assert!((b.total - manual).abs() < 1e-12);
    }

    #[test]
    fn losses_ignore_cell_labels(set in set_for(8), perm in Just((0..CELLS).collect::<Vec<_>>()).prop_shuffle()) {
        let parsed = prompt();
        let cfg = PacConfig::default();
        let a = total_loss(&parsed, &set, &LossWeights::default(), &cfg).unwrap();
        let b = total_loss(&parsed, &permute_cells(&set, &perm), &LossWeights::default(), &cfg).unwrap();
        prop_assert!((a.div - b.div).abs() < 1e-12);
        prop_assert!((a.sim - b.sim).abs() < 1e-12);
        prop_assert!((a.out - b.out).abs() < 1e-12);
        prop_assert!((a.pac - b.pac).abs() < 1e-12);
    }

    #[test]
    fn divergence_ignores_object_order(maps in prop::collection::vec(smoothed_map(0), 2..6), seed in any::<u64>()) {
        let mut shuffled = maps.clone();
        let k = (seed as usize) % maps.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let a = divergence_loss(&maps).unwrap();
        let b = divergence_loss(&shuffled).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn outside_ignores_set_order(set in set_for(8)) {
        let mut parsed = prompt();
        let a = outside_loss(&parsed, &set).unwrap();
        parsed.outside.reverse();
        let b = outside_loss(&parsed, &set).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn scores_are_in_range(set in set_for(8)) {
        let s = score(&set, &prompt()).unwrap();
        prop_assert!(s.separation >= 0.0 && s.binding >= 0.0 && s.outside_leak >= 0.0);
        prop_assert!(s.uniformity >= -1e-12 && s.uniformity <= (CELLS as f64).ln() + 1e-12);
    }

    #[test]
    fn pac_regularizer_is_monotone(d in 0.0f64..5.0, n in 1u64..100_000, delta in 0.01f64..0.99) {
        let cfg = PacConfig::new(n, delta);
        let r = pac_regularizer_from_kl(d, &cfg);
        prop_assert!(r < 0.0);
        prop_assert!(pac_regularizer_from_kl(d + 0.5, &cfg) < r);
        prop_assert!(pac_regularizer_from_kl(d, &PacConfig::new(2 * n, delta)) > r);
    }

    #[test]
    fn parse_is_deterministic_valid_and_round_trips(p in words()) {
        let lex = WordLexicon::builtin();
        let a = parse(&p, &lex).unwrap();
        let b = parse(&p, &lex).unwrap();
        prop_assert_eq!(a.to_json(), b.to_json());
        prop_assert!(validate(&a).is_empty());
        prop_assert_eq!(ParsedPrompt::from_json(&a.to_json()).unwrap(), a);
    }
}
