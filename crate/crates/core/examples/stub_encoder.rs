//! Runs the deterministic stub encoder over one sample and shows the four
//! vectors the detector consumes.
//!
//! Pass a stub description JSON as the first argument to use it instead of
//! the generated one.

use std::env;
use std::path::Path;

use metaphor_detect::corpus::{Label, Sample};
use metaphor_detect::encoder::{Encoder, StubDescription, StubEncoder};
use metaphor_detect::prompting::build_prompt;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn main() {
    let sample = Sample::from_sentence(
        "demo",
        "We must bridge the gap between employees and management.",
        2,
        "VERB",
        Label::Metaphor,
    )
    .unwrap();
    let encoder = match env::args().nth(1) {
        Some(path) => StubEncoder::load(Path::new(&path)).unwrap(),
        None => {
            let mut words = sample.tokens.clone();
            words.extend(["connect", "close", "span"].map(String::from));
            StubEncoder::from_description(StubDescription::generated(words, 32, 7)).unwrap()
        }
    };
    println!(
        "encoder {} (width {}, {} entries)",
        encoder.name(),
        encoder.dim(),
        encoder.vocab().len()
    );

    let prediction = encoder
        .predict_mask(&sample.id, &build_prompt(&sample))
        .unwrap();
    let mut top: Vec<(usize, f64)> = prediction
        .distribution
        .iter()
        .copied()
        .enumerate()
        .collect();
    top.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("top predictions for the masked slot:");
    for (id, p) in top.iter().take(5) {
        println!("  {:<14} {p:.4}", encoder.vocab()[*id]);
    }

    let out = encoder.featurize(&sample).unwrap();
    println!(
        "predicted `{}` with p = {:.4}",
        out.predicted_token, out.predicted_prob
    );
    for (name, v) in [
        ("target in context", &out.target_vector),
        ("sentence", &out.sentence_vector),
        ("context meaning", &out.context_meaning_vector),
        ("literal", &out.literal_vector),
    ] {
        println!("  {name:<18} |v| = {:.4}", norm(v));
    }
}
