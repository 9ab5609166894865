//! Epochs needed to reach dev F1 >= 0.5 with and without distillation on a
//! corpus with 10% metaphors.

use metaphor_detect::detector::DetectorConfig;
use metaphor_detect::distill::{DistillConfig, LabelTeacher, Teacher, TeacherLogitCache};
use metaphor_detect::harness::{train, FeatureSet, TrainConfig};
use metaphor_detect::toy::{ToyConfig, ToyWorld};

fn main() {
    let detector = DetectorConfig {
        hidden_dim: 16,
        ..Default::default()
    };
    let teacher = LabelTeacher { margin: 2.0 };
    let kd = DistillConfig {
        alpha: 0.5,
        tau: 2.0,
        enabled: true,
    };
    println!("seed  KD  no-KD  (first epoch with dev F1 >= 0.5)");
    for seed in 0..5u64 {
        let mut world = ToyWorld::new(ToyConfig {
            seed: 100 + seed,
            ..Default::default()
        });
        let tr = world.split_exact("train", 200, 20);
        let dv = world.split_exact("dev", 100, 10);
        let encoder = world.encoder();
        let train_set = FeatureSet::build(&encoder, tr).unwrap();
        let dev = FeatureSet::build(&encoder, dv).unwrap();
        let cache = TeacherLogitCache::from_entries(
            teacher.id(),
            train_set
                .samples
                .iter()
                .map(|s| (s.id.clone(), teacher.logits(s).unwrap()))
                .collect(),
        )
        .unwrap();
        let config = TrainConfig {
            learning_rate: 1e-3,
            warmup: false,
            epochs: 40,
            batch_size: 16,
            n_runs: 1,
            seed,
            ..Default::default()
        };
        let first = |d: &DistillConfig| {
            let out = train(&train_set, Some(&dev), &detector, d, Some(&cache), &config).unwrap();
            out.report
                .per_epoch
                .iter()
                .find(|r| r.f1 >= 0.5)
                .map(|r| r.epoch.to_string())
                .unwrap_or("-".into())
        };
        println!(
            "{seed:>4}  {:>2}  {:>5}",
            first(&kd),
            first(&DistillConfig::disabled())
        );
    }
}
