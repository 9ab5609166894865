//! k-fold cross-validation for a corpus without a dev split, using the
//! fixed learning-rate preset.

use metaphor_detect::detector::DetectorConfig;
use metaphor_detect::distill::DistillConfig;
use metaphor_detect::harness::{cross_validate, FeatureSet, TrainConfig};
use metaphor_detect::toy::{ToyConfig, ToyWorld};

fn main() {
    let mut world = ToyWorld::new(ToyConfig {
        seed: 17,
        sentence_len: 5..=10,
        ..Default::default()
    });
    let samples = world.split("moh", 160, 0.49);
    let set = FeatureSet::build(&world.encoder(), samples).unwrap();
    let detector = DetectorConfig {
        hidden_dim: world.config.dim,
        ..Default::default()
    };
    let config = TrainConfig {
        learning_rate: 3e-3,
        batch_size: 16,
        n_runs: 1,
        ..TrainConfig::moh_x()
    };
    let cv = cross_validate(
        &set,
        10,
        &detector,
        &DistillConfig::disabled(),
        None,
        &config,
    )
    .unwrap();
    println!("{}", cv.protocol);
    for (i, m) in cv.folds.iter().enumerate() {
        println!("fold {i:>2}: acc {:.3}  F1 {:.3}", m.accuracy, m.f1);
    }
    let [a, p, r, f] = cv.mean.percentages();
    println!("mean: acc {a:.1}  P {p:.1}  R {r:.1}  F1 {f:.1}");
}
