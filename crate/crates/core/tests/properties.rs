//! Property tests for the module invariants.

use std::collections::BTreeMap;

use clap::Parser;
use metaphor_detect::cli::{execute, Cli};
use metaphor_detect::corpus::{
    compute_stats, parse_split, serialize_split, Label, Sample, SplitFormat,
};
use metaphor_detect::detector::{BatchInputs, Detector, DetectorConfig, Fusion, Params};
use metaphor_detect::distill::{batch_objective, kd_loss, temperature_softmax, DistillConfig};
use metaphor_detect::encoder::{
    argmax, Encoder, EncoderOptions, StubDescription, StubEncoder, BOS, EOS, MASK, UNK,
};
use metaphor_detect::harness::compute_metrics;
use metaphor_detect::prompting::build_prompt;
use ndarray::Array2;
use proptest::prelude::*;

fn word() -> impl Strategy<Value = String> {
    "[a-z]{1,7}"
}

fn sample(id: usize) -> impl Strategy<Value = Sample> {
    (
        prop::collection::vec(word(), 1..12),
        any::<prop::sample::Index>(),
        any::<bool>(),
        "[A-Z]{1,5}",
    )
        .prop_map(move |(tokens, t, metaphor, pos)| {
            let t = t.index(tokens.len());
            let label = if metaphor {
                Label::Metaphor
            } else {
                Label::Literal
            };
            Sample::new(format!("s{id}"), tokens, t, pos, label).unwrap()
        })
}

fn samples() -> impl Strategy<Value = Vec<Sample>> {
    (1usize..20).prop_flat_map(|n| (0..n).map(sample).collect::<Vec<_>>())
}

/// Stub over a small fixed vocabulary: whole words plus word pieces.
fn stub(mask_logits: Option<Vec<f64>>) -> StubEncoder {
    let mut vocab: Vec<String> = [BOS, EOS, MASK, UNK]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for w in [
        "a", "b", "c", "ab", "##a", "##b", "##c", "##ab", "bridge", "gap",
    ] {
        vocab.push(w.to_string());
    }
    let mut desc = StubDescription::generated(Vec::<String>::new(), 6, 9);
    desc.vocab = vocab;
    desc.mask_logits = mask_logits;
    desc.options = EncoderOptions::default();
    StubEncoder::from_description(desc).unwrap()
}

fn pieces() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[abc]{1,4}", 1..8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_files_round_trip(s in samples(), jsonl in any::<bool>()) {
        let fmt = if jsonl { SplitFormat::Jsonl } else { SplitFormat::Tsv };
        let text = serialize_split(&s, fmt);
        let parsed = parse_split(&text, fmt).unwrap();
        prop_assert!(parsed.diagnostics.is_empty());
        prop_assert_eq!(&parsed.samples, &s);
        prop_assert_eq!(serialize_split(&parsed.samples, fmt), text);
    }

    #[test]
    fn stats_ignore_order(s in samples(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = s.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(compute_stats(&s).unwrap(), compute_stats(&shuffled).unwrap());
    }

    #[test]
    fn prompts_are_pure(s in sample(0)) {
        prop_assert_eq!(build_prompt(&s), build_prompt(&s.clone()));
        prop_assert_eq!(build_prompt(&s).mask_count(), 1);
    }

    #[test]
    fn mask_distribution_normalized_and_argmax_consistent(
        words in pieces(),
        t in any::<prop::sample::Index>(),
        bias in prop::collection::vec(prop_oneof![Just(0.0), Just(1.5), -3.0..3.0f64], 14),
    ) {
        let enc = stub(Some(bias));
        let s = Sample::new("p", words.clone(), t.index(words.len()), "X", Label::Literal).unwrap();
        let pred = enc.predict_mask(&s.id, &build_prompt(&s)).unwrap();
        prop_assert!((pred.distribution.sum() - 1.0).abs() < 1e-5);
        let best = argmax(pred.distribution.view());
        prop_assert_eq!(pred.predicted_id, best);
        // ties resolve to the lowest id
        let top = pred.distribution[best];
        prop_assert!(pred.distribution.iter().take(best).all(|&p| p < top));
        prop_assert_eq!(pred.context_meaning_vector, enc.embedding(best).to_owned());
    }

    #[test]
    fn target_span_covers_exactly_its_pieces(words in pieces(), t in any::<prop::sample::Index>()) {
        let enc = stub(None);
        let t = t.index(words.len());
        let e = enc.encode_sentence("x", &words, t).unwrap();
        prop_assert_eq!(e.target_span.len(), enc.subword_ids(&words[t]).len());
        for (pos, w) in e.word_ids.iter().enumerate() {
            prop_assert_eq!(e.target_span.contains(&pos), *w == Some(t));
        }
    }

    #[test]
    fn eval_forward_is_bitwise_deterministic(seed in any::<u64>(), n in 1usize..6, prompt in any::<bool>(), sum in any::<bool>()) {
        let cfg = DetectorConfig {
            hidden_dim: 5,
            use_prompt_mip: prompt,
            fusion: if sum { Fusion::Sum } else { Fusion::Concat },
            ..Default::default()
        };
        let d = Detector::new(cfg, seed).unwrap();
        let m = |k: u64| Array2::from_shape_fn((n, 5), |(i, j)| ((seed ^ k) as f64 + (i * 5 + j) as f64).sin());
        let inputs = BatchInputs { target: m(1), sentence: m(2), context_meaning: m(3), literal: m(4) };
        let a = d.forward(&inputs, None, None).unwrap().logits;
        let b = d.clone().forward(&inputs, None, None).unwrap().logits;
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn prompt_flag_keeps_parameter_shapes(h in 1usize..9, sum in any::<bool>()) {
        let fusion = if sum { Fusion::Sum } else { Fusion::Concat };
        let on = DetectorConfig { hidden_dim: h, use_prompt_mip: true, fusion, ..Default::default() };
        let off = DetectorConfig { use_prompt_mip: false, ..on };
        prop_assert_eq!(Params::zeros(&on).shapes(), Params::zeros(&off).shapes());
    }

    #[test]
    fn kd_is_nonnegative_and_zero_on_equal_distributions(
        s in prop::array::uniform2(-20.0..20.0f64),
        t in prop::array::uniform2(-20.0..20.0f64),
        shift in -5.0..5.0f64,
        tau in 0.2..10.0f64,
    ) {
        prop_assert!(kd_loss(&s, &t, tau).unwrap() >= 0.0);
        // a constant shift leaves the softmax unchanged
        let shifted = [s[0] + shift, s[1] + shift];
        prop_assert!(kd_loss(&s, &shifted, tau).unwrap() < 1e-12);
    }

    #[test]
    fn softening_never_lowers_entropy(t in prop::array::uniform2(-15.0..15.0f64), tau in 1.0..20.0f64) {
        let h = |p: Vec<f64>| -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>();
        let base = h(temperature_softmax(&t, 1.0).unwrap());
        prop_assert!(h(temperature_softmax(&t, tau).unwrap()) >= base - 1e-12);
    }

    #[test]
    fn teacher_logits_are_left_alone(
        rows in prop::collection::vec((prop::array::uniform2(-5.0..5.0f64), prop::array::uniform2(-5.0..5.0f64), any::<bool>()), 1..8),
        alpha in 0.0..=1.0f64,
        tau in 0.5..5.0f64,
    ) {
        let n = rows.len();
        let student = Array2::from_shape_fn((n, 2), |(i, c)| rows[i].0[c]);
        let teacher = Array2::from_shape_fn((n, 2), |(i, c)| rows[i].1[c]);
        let before = teacher.clone();
        let labels: Vec<Label> = rows.iter().map(|r| if r.2 { Label::Metaphor } else { Label::Literal }).collect();
        let (_, grad) = batch_objective(student.view(), &labels, Some(teacher.view()), &DistillConfig { alpha, tau, enabled: true }).unwrap();
        prop_assert_eq!(grad.dim(), student.dim());
        prop_assert_eq!(teacher, before);
    }

    #[test]
    fn metric_invariants(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
        let to = |b: bool| if b { Label::Metaphor } else { Label::Literal };
        let pred: Vec<Label> = pairs.iter().map(|p| to(p.0)).collect();
        let gold: Vec<Label> = pairs.iter().map(|p| to(p.1)).collect();
        let m = compute_metrics(&pred, &gold).unwrap();
        let c = m.confusion;
        prop_assert_eq!(c.total(), pairs.len());
        prop_assert!((m.accuracy - (c.tp + c.tn) as f64 / c.total() as f64).abs() < 1e-15);
        let expected_f1 = if m.precision + m.recall > 0.0 { 2.0 * m.precision * m.recall / (m.precision + m.recall) } else { 0.0 };
        prop_assert!((m.f1 - expected_f1).abs() < 1e-15);
        for v in [m.accuracy, m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn invalid_config_always_fails_the_same_way(alpha in prop_oneof![1.0001..5.0f64, -5.0..-0.0001f64]) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, format!("[data]\nmanifest = \"m.toml\"\ntrain = \"a\"\n[distill]\nalpha = {alpha}\n")).unwrap();
        let cli = Cli::try_parse_from(["metaphor", "train", "--config", cfg.to_str().unwrap()]).unwrap();
        let first = execute(&cli).unwrap_err();
        let second = execute(&cli).unwrap_err();
        prop_assert_eq!(first.exit_code(), 2);
        prop_assert_eq!(first.to_string(), second.to_string());
        prop_assert!(first.to_string().contains("alpha must lie in [0, 1]"));
    }
}

#[test]
fn tau_squared_keeps_kd_gradient_scale_bounded() {
    let student = Array2::from_shape_vec((1, 2), vec![0.3, -1.2]).unwrap();
    let teacher = Array2::from_shape_vec((1, 2), vec![-2.0, 2.5]).unwrap();
    let norms: BTreeMap<u32, f64> = [1u32, 2, 4, 8]
        .into_iter()
        .map(|tau| {
            let cfg = DistillConfig {
                alpha: 0.0,
                tau: tau as f64,
                enabled: true,
            };
            let (_, g) = batch_objective(
                student.view(),
                &[Label::Literal],
                Some(teacher.view()),
                &cfg,
            )
            .unwrap();
            (tau, g.iter().map(|v| v * v).sum::<f64>().sqrt())
        })
        .collect();
    let max = norms.values().cloned().fold(f64::MIN, f64::max);
    let min = norms.values().cloned().fold(f64::MAX, f64::min);
    // sigmoid has slope at most 1/4, so tau * |sigma(a / tau) - sigma(b / tau)| <= |a - b| / 4
    let gap = ((0.3 - -1.2) - (-2.0 - 2.5_f64)).abs();
    let bound = std::f64::consts::SQRT_2 * gap / 4.0;
    assert!(
        max <= bound + 1e-12 && min >= 0.5 * max,
        "{norms:?} vs {bound}"
    );
}
