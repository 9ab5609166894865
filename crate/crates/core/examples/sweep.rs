//! Grid over the distillation weight and temperature, one training per
//! cell, printed as an alpha x tau table of dev F1.

use metaphor_detect::detector::DetectorConfig;
use metaphor_detect::distill::{LabelTeacher, Teacher, TeacherLogitCache};
use metaphor_detect::harness::experiments::ExperimentData;
use metaphor_detect::harness::{run_sweep, FeatureSet, SweepGrid, TrainConfig};
use metaphor_detect::toy::{ToyConfig, ToyWorld};

fn main() {
    let mut world = ToyWorld::new(ToyConfig {
        seed: 5,
        ..Default::default()
    });
    let train_samples = world.split("train", 160, 0.2);
    let dev_samples = world.split("dev", 60, 0.2);
    let encoder = world.encoder();
    let train_set = FeatureSet::build(&encoder, train_samples).unwrap();
    let dev = FeatureSet::build(&encoder, dev_samples).unwrap();
    let teacher = LabelTeacher { margin: 3.0 };
    let cache = TeacherLogitCache::from_entries(
        teacher.id(),
        train_set
            .samples
            .iter()
            .map(|s| (s.id.clone(), teacher.logits(s).unwrap()))
            .collect(),
    )
    .unwrap();

    let grid = SweepGrid::default();
    let data = ExperimentData {
        train: &train_set,
        dev: Some(&dev),
        test: None,
        teacher: Some(&cache),
    };
    let detector = DetectorConfig {
        hidden_dim: world.config.dim,
        ..Default::default()
    };
    let config = TrainConfig {
        learning_rate: 1e-3,
        warmup: true,
        epochs: 6,
        batch_size: 16,
        n_runs: 2,
        ..Default::default()
    };
    let cells = run_sweep(&grid, data, &detector, &config).unwrap();

    print!("alpha\\tau");
    for t in &grid.taus {
        print!("{t:>8}");
    }
    println!();
    for (i, a) in grid.alphas.iter().enumerate() {
        print!("{a:>9}");
        for c in &cells[i * grid.taus.len()..(i + 1) * grid.taus.len()] {
            match &c.metrics {
                Some(m) => print!("{:>8.1}", 100.0 * m.f1),
                None => print!("{:>8}", "err"),
            }
        }
        println!();
    }
}
