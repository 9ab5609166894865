//! The four ablation variants trained with identical hyperparameters.

use metaphor_detect::detector::DetectorConfig;
use metaphor_detect::distill::{DistillConfig, LabelTeacher, Teacher, TeacherLogitCache};
use metaphor_detect::harness::experiments::ExperimentData;
use metaphor_detect::harness::{run_ablation, AblationVariant, FeatureSet, TrainConfig};
use metaphor_detect::toy::{ToyConfig, ToyWorld};

fn main() {
    let mut world = ToyWorld::new(ToyConfig {
        seed: 9,
        ..Default::default()
    });
    let tr = world.split("train", 200, 0.3);
    let dv = world.split("dev", 60, 0.3);
    let te = world.split("test", 60, 0.3);
    let encoder = world.encoder();
    let train_set = FeatureSet::build(&encoder, tr).unwrap();
    let dev = FeatureSet::build(&encoder, dv).unwrap();
    let test = FeatureSet::build(&encoder, te).unwrap();
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

    let data = ExperimentData {
        train: &train_set,
        dev: Some(&dev),
        test: Some(&test),
        teacher: Some(&cache),
    };
    let detector = DetectorConfig {
        hidden_dim: world.config.dim,
        ..Default::default()
    };
    let config = TrainConfig {
        learning_rate: 3e-3,
        epochs: 10,
        batch_size: 16,
        n_runs: 3,
        ..Default::default()
    };
    let rows = run_ablation(
        &AblationVariant::ALL,
        data,
        &detector,
        &DistillConfig::default(),
        &config,
    )
    .unwrap();

    println!(
        "{:<15} {:>6} {:>4} {:>6} {:>6} {:>6} {:>6}",
        "variant", "prompt", "KD", "acc", "P", "R", "F1"
    );
    for r in rows {
        let [a, p, rc, f] = r.metrics.percentages();
        println!(
            "{:<15} {:>6} {:>4} {a:>6.1} {p:>6.1} {rc:>6.1} {f:>6.1}",
            r.variant.name(),
            r.use_prompt_mip,
            r.distill_enabled
        );
    }
}
