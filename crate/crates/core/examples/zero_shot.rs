//! Trains on one corpus and evaluates, without further training, on a
//! disjoint corpus drawn from a different sentence distribution.

use metaphor_detect::detector::DetectorConfig;
use metaphor_detect::distill::DistillConfig;
use metaphor_detect::harness::{evaluate, train, FeatureSet, TrainConfig};
use metaphor_detect::toy::{ToyConfig, ToyWorld};

fn main() {
    let mut world = ToyWorld::new(ToyConfig {
        seed: 21,
        ..Default::default()
    });
    let source = world.split("source", 200, 0.25);
    let dev = world.split("source-dev", 60, 0.25);
    // longer sentences and a balanced label mix
    world.config.sentence_len = 10..=16;
    let target = world.split("target", 120, 0.45);
    let encoder = world.encoder();

    let train_set = FeatureSet::build(&encoder, source).unwrap();
    let dev_set = FeatureSet::build(&encoder, dev).unwrap();
    let foreign = FeatureSet::build(&encoder, target).unwrap();
    let detector = DetectorConfig {
        hidden_dim: world.config.dim,
        ..Default::default()
    };
    let config = TrainConfig {
        learning_rate: 3e-3,
        epochs: 10,
        batch_size: 16,
        n_runs: 1,
        ..Default::default()
    };
    let out = train(
        &train_set,
        Some(&dev_set),
        &detector,
        &DistillConfig::disabled(),
        None,
        &config,
    )
    .unwrap();

    for (name, set) in [("in-domain dev", &dev_set), ("zero-shot target", &foreign)] {
        let [a, p, r, f] = evaluate(&out.detector, set).unwrap().percentages();
        println!("{name:<17} acc {a:5.1}  P {p:5.1}  R {r:5.1}  F1 {f:5.1}");
    }
}
