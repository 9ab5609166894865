//! Trains a teacher detector, caches its logits for the student corpus as
//! JSONL, reloads the cache and distills a student from it.

use metaphor_detect::detector::DetectorConfig;
use metaphor_detect::distill::{cache_teacher_logits, DistillConfig, TeacherLogitCache};
use metaphor_detect::harness::{evaluate, train, DetectorTeacher, FeatureSet, TrainConfig};
use metaphor_detect::toy::{ToyConfig, ToyWorld};

fn main() {
    let mut world = ToyWorld::new(ToyConfig {
        seed: 13,
        ..Default::default()
    });
    let teacher_data = world.split("teacher", 200, 0.3);
    let student_data = world.split("student", 120, 0.3);
    let dev_data = world.split("dev", 60, 0.3);
    let encoder = world.encoder();
    let detector = DetectorConfig {
        hidden_dim: world.config.dim,
        ..Default::default()
    };
    let config = TrainConfig {
        learning_rate: 3e-3,
        epochs: 12,
        batch_size: 16,
        n_runs: 1,
        ..Default::default()
    };

    let teacher_set = FeatureSet::build(&encoder, teacher_data).unwrap();
    let dev = FeatureSet::build(&encoder, dev_data).unwrap();
    let trained = train(
        &teacher_set,
        Some(&dev),
        &detector,
        &DistillConfig::disabled(),
        None,
        &config,
    )
    .unwrap();
    println!("teacher dev F1 {:.1}", 100.0 * trained.report.f1);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("teacher.jsonl");
    let teacher = DetectorTeacher {
        name: "toy-teacher".into(),
        detector: trained.detector,
        encoder: &encoder,
    };
    cache_teacher_logits(&teacher, &student_data, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    println!("cache header: {}", text.lines().next().unwrap());

    let cache = TeacherLogitCache::load(&path).unwrap();
    let student_set = FeatureSet::build(&encoder, student_data).unwrap();
    for (name, distill) in [
        ("student, no KD", DistillConfig::disabled()),
        ("student, KD", DistillConfig::default()),
    ] {
        let out = train(
            &student_set,
            Some(&dev),
            &detector,
            &distill,
            Some(&cache),
            &config,
        )
        .unwrap();
        let m = evaluate(&out.detector, &dev).unwrap();
        println!("{name:<15} dev F1 {:.1}", 100.0 * m.f1);
    }
}
