//! Trains the detector on a synthetic corpus with distillation from a
//! label-derived teacher and prints the per-epoch dev trace.

use metaphor_detect::detector::DetectorConfig;
use metaphor_detect::distill::{DistillConfig, LabelTeacher, Teacher, TeacherLogitCache};
use metaphor_detect::harness::{evaluate, train, FeatureSet, TrainConfig};
use metaphor_detect::toy::{ToyConfig, ToyWorld};

fn main() {
    let mut world = ToyWorld::new(ToyConfig {
        seed: 3,
        ..Default::default()
    });
    let train_samples = world.split("train", 240, 0.3);
    let dev_samples = world.split("dev", 80, 0.3);
    let test_samples = world.split("test", 80, 0.3);
    let encoder = world.encoder();
    let train_set = FeatureSet::build(&encoder, train_samples).unwrap();
    let dev = FeatureSet::build(&encoder, dev_samples).unwrap();
    let test = FeatureSet::build(&encoder, test_samples).unwrap();

    let teacher = LabelTeacher { margin: 4.0 };
    let cache = TeacherLogitCache::from_entries(
        teacher.id(),
        train_set
            .samples
            .iter()
            .map(|s| (s.id.clone(), teacher.logits(s).unwrap()))
            .collect(),
    )
    .unwrap();

    let detector = DetectorConfig {
        hidden_dim: world.config.dim,
        ..Default::default()
    };
    let config = TrainConfig {
        learning_rate: 3e-3,
        epochs: 15,
        batch_size: 16,
        n_runs: 1,
        ..TrainConfig::vua_verb()
    };
    let outcome = train(
        &train_set,
        Some(&dev),
        &detector,
        &DistillConfig::default(),
        Some(&cache),
        &config,
    )
    .unwrap();

    println!("epoch  loss     train acc  dev acc  dev F1");
    for r in &outcome.report.per_epoch {
        println!(
            "{:>5}  {:.5}  {:>9.3}  {:>7.3}  {:>6.3}",
            r.epoch, r.train_loss, r.train_accuracy, r.accuracy, r.f1
        );
    }
    let m = evaluate(&outcome.detector, &test).unwrap();
    let [a, p, r, f] = m.percentages();
    println!(
        "kept epoch {} ({} steps); test acc {a:.1} P {p:.1} R {r:.1} F1 {f:.1}",
        outcome.best_epoch, outcome.steps
    );
}
