//! Training, evaluation and experiment orchestration.

pub mod experiments;
pub mod metrics;
pub mod optim;
pub mod report;

use std::path::PathBuf;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Label, Sample};
use crate::detector::{BatchInputs, Detector, DetectorConfig, DetectorError, DropoutMasks};
use crate::distill::{batch_objective, DistillConfig, DistillError, Teacher, TeacherLogitCache};
use crate::encoder::{Encoder, EncoderError, EncoderOutputs};

pub use experiments::{
    cross_validate, run_ablation, run_sweep, AblationRow, AblationVariant, CrossValidation,
    SweepCell, SweepGrid,
};
pub use metrics::{compute_metrics, f1_from_pr, EpochRecord, MetricsReport};
pub use optim::{AdamW, AdamWConfig, Schedule};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}; batch ids: {}", .ids.join(", "))]
    NonFinite {
        epoch: usize,
        step: usize,
        loss: f64,
        ids: Vec<String>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup: bool,
    /// Share of all optimizer steps spent warming up.
    pub warmup_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub n_runs: usize,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::vua_all()
    }
}

impl TrainConfig {
    pub fn vua_all() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            warmup: true,
            warmup_fraction: 0.1,
            epochs: 10,
            batch_size: 64,
            seed: 42,
            n_runs: 5,
            optimizer: AdamWConfig::default(),
        }
    }

    pub fn vua_verb() -> Self {
        TrainConfig {
            epochs: 6,
            ..Self::vua_all()
        }
    }

    pub fn moh_x() -> Self {
        TrainConfig {
            warmup: false,
            epochs: 15,
            ..Self::vua_all()
        }
    }

    /// Preset by dataset name (`vua_all`, `vua_verb`, `moh_x`).
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "vua_all" => Some(Self::vua_all()),
            "vua_verb" => Some(Self::vua_verb()),
            "moh_x" => Some(Self::moh_x()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.n_runs == 0 {
            return bad("n_runs must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad(format!(
                "warmup_fraction must lie in [0, 1], got {}",
                self.warmup_fraction
            ));
        }
        if self.optimizer.weight_decay < 0.0 {
            return bad("optimizer.weight_decay must be non-negative".into());
        }
        Ok(())
    }
}

/// Samples with their encoder outputs, index-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub samples: Vec<Sample>,
    pub outputs: Vec<EncoderOutputs>,
}

impl FeatureSet {
    /// Runs the encoder over every sample, in parallel, keeping sample order.
    pub fn build(encoder: &dyn Encoder, samples: Vec<Sample>) -> Result<Self, HarnessError> {
        let outputs = samples
            .par_iter()
            .map(|s| encoder.featurize(s))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FeatureSet { samples, outputs })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.outputs.first().map(|o| o.target_vector.len())
    }

    pub fn batch(&self, rows: &[usize]) -> BatchInputs {
        let outs: Vec<&EncoderOutputs> = rows.iter().map(|&i| &self.outputs[i]).collect();
        BatchInputs::from_outputs(&outs)
    }

    pub fn all(&self) -> BatchInputs {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn subset(&self, rows: &[usize]) -> FeatureSet {
        FeatureSet {
            samples: rows.iter().map(|&i| self.samples[i].clone()).collect(),
            outputs: rows.iter().map(|&i| self.outputs[i].clone()).collect(),
        }
    }
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Detector from the selected epoch.
    pub detector: Detector,
    /// One-based epoch the detector was taken from.
    pub best_epoch: usize,
    /// Metrics of the selected detector on the dev split, or on the training
    /// split when there is none. Carries the per-epoch trace.
    pub report: MetricsReport,
    pub steps: usize,
}

fn labels_of(indices: &[usize]) -> Vec<Label> {
    indices
        .iter()
        .map(|&i| Label::from_index(i).expect("binary prediction"))
        .collect()
}

pub fn predict(detector: &Detector, set: &FeatureSet) -> Result<Vec<Label>, HarnessError> {
    if set.is_empty() {
        return Err(HarnessError::Argument(
            "cannot predict on an empty split".into(),
        ));
    }
    if let Some(d) = set.dim() {
        detector.config.check_encoder_dim(d)?;
    }
    Ok(labels_of(&detector.predict(&set.all())?))
}

/// Scores `detector` on `set` without touching its parameters.
pub fn evaluate(detector: &Detector, set: &FeatureSet) -> Result<MetricsReport, HarnessError> {
    compute_metrics(&predict(detector, set)?, &set.labels())
}

/// Trains one detector. With a dev split the checkpoint with the best dev F1
/// is kept (earliest epoch on ties); without one the final epoch is kept.
pub fn train(
    train_set: &FeatureSet,
    dev_set: Option<&FeatureSet>,
    detector_config: &DetectorConfig,
    distill: &DistillConfig,
    teacher: Option<&TeacherLogitCache>,
    config: &TrainConfig,
) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    detector_config.validate()?;
    if train_set.is_empty() {
        return Err(HarnessError::Argument("training split is empty".into()));
    }
    let dim = train_set.dim().expect("non-empty");
    detector_config.check_encoder_dim(dim)?;
    if let Some(dev) = dev_set {
        if let Some(d) = dev.dim() {
            detector_config.check_encoder_dim(d)?;
        }
    }
    let teacher_logits = if distill.enabled {
        distill.validate()?;
        let cache = teacher.ok_or_else(|| {
            HarnessError::Distill(DistillError::Argument(
                "distillation is enabled but no teacher cache was given".into(),
            ))
        })?;
        cache.require(&train_set.samples)?;
        let refs: Vec<&Sample> = train_set.samples.iter().collect();
        Some(cache.matrix(&refs)?)
    } else {
        None
    };

    let mut detector = Detector::new(*detector_config, config.seed)?;
    let mut optimizer = AdamW::new(config.optimizer, &detector.params);
    let batches_per_epoch = train_set.len().div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.epochs;
    let schedule = if config.warmup {
        Schedule::warmup(total_steps, config.warmup_fraction)
    } else {
        Schedule::Constant
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let labels = train_set.labels();
    let mut best: Option<(f64, usize, Detector, MetricsReport)> = None;
    let mut trace = Vec::with_capacity(config.epochs);
    let mut step = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for rows in order.chunks(config.batch_size) {
            let inputs = train_set.batch(rows);
            let masks = (detector_config.dropout_rate > 0.0).then(|| {
                DropoutMasks::sample(&mut rng, rows.len(), dim, detector_config.dropout_rate)
            });
            let cache = detector.forward(&inputs, masks.as_ref(), None)?;
            let batch_labels: Vec<Label> = rows.iter().map(|&i| labels[i]).collect();
            let t_rows = teacher_logits
                .as_ref()
                .map(|t| Array2::from_shape_fn((rows.len(), 2), |(r, c)| t[[rows[r], c]]));
            let objective = batch_objective(
                cache.logits.view(),
                &batch_labels,
                t_rows.as_ref().map(|t| t.view()),
                distill,
            );
            let (loss, grad) = match objective {
                Ok(v) if v.0.l_total.is_finite() => v,
                Ok((bundle, _)) => {
                    return Err(non_finite(epoch, step, bundle.l_total, train_set, rows))
                }
                Err(DistillError::Argument(_)) if cache.logits.iter().any(|v| !v.is_finite()) => {
                    return Err(non_finite(epoch, step, f64::NAN, train_set, rows))
                }
                Err(e) => return Err(e.into()),
            };
            loss_sum += loss.l_total * rows.len() as f64;
            let grads = detector.backward(&cache, grad.view());
            optimizer.step(
                &mut detector.params,
                &grads,
                config.learning_rate * schedule.factor(step),
            );
            step += 1;
        }
        let train_metrics = evaluate(&detector, train_set)?;
        let selection = match dev_set {
            Some(dev) => evaluate(&detector, dev)?,
            None => train_metrics.clone(),
        };
        log::debug!(
            "epoch {epoch}: loss {:.5} train acc {:.4} selection f1 {:.4}",
            loss_sum / train_set.len() as f64,
            train_metrics.accuracy,
            selection.f1
        );
        trace.push(EpochRecord {
            epoch,
            accuracy: selection.accuracy,
            f1: selection.f1,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: train_metrics.accuracy,
        });
        let better = match (&best, dev_set) {
            (None, _) => true,
            (Some((f1, ..)), Some(_)) => selection.f1 > *f1,
            (Some(_), None) => true,
        };
        if better {
            best = Some((selection.f1, epoch, detector.clone(), selection));
        }
    }
    let (_, best_epoch, detector, mut report) = best.expect("at least one epoch");
    report.per_epoch = trace;
    Ok(TrainOutcome {
        detector,
        best_epoch,
        report,
        steps: step,
    })
}

fn non_finite(
    epoch: usize,
    step: usize,
    loss: f64,
    set: &FeatureSet,
    rows: &[usize],
) -> HarnessError {
    HarnessError::NonFinite {
        epoch,
        step,
        loss,
        ids: rows.iter().map(|&i| set.samples[i].id.clone()).collect(),
    }
}

/// One run of a multi-run experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub selection: MetricsReport,
    pub test: Option<MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub runs: Vec<RunRecord>,
    /// Mean over runs of the test metrics, or of the selection metrics when
    /// there is no test split.
    pub mean: MetricsReport,
    /// Detector of the first run.
    pub detector: Detector,
}

/// `n_runs` independent trainings with seeds `seed, seed + 1, ...`, each
/// optionally scored on `test_set`, and their mean.
pub fn train_runs(
    train_set: &FeatureSet,
    dev_set: Option<&FeatureSet>,
    test_set: Option<&FeatureSet>,
    detector_config: &DetectorConfig,
    distill: &DistillConfig,
    teacher: Option<&TeacherLogitCache>,
    config: &TrainConfig,
) -> Result<ExperimentResult, HarnessError> {
    config.validate()?;
    let mut runs = Vec::with_capacity(config.n_runs);
    let mut first = None;
    for run in 0..config.n_runs {
        let seed = config.seed.wrapping_add(run as u64);
        let cfg = TrainConfig { seed, ..*config };
        let outcome = train(train_set, dev_set, detector_config, distill, teacher, &cfg)?;
        let test = test_set
            .map(|t| evaluate(&outcome.detector, t))
            .transpose()?;
        runs.push(RunRecord {
            run,
            seed,
            best_epoch: outcome.best_epoch,
            selection: outcome.report,
            test,
        });
        first.get_or_insert(outcome.detector);
    }
    let headline: Vec<MetricsReport> = runs
        .iter()
        .map(|r| r.test.clone().unwrap_or_else(|| r.selection.clone()))
        .collect();
    Ok(ExperimentResult {
        mean: MetricsReport::mean(&headline),
        runs,
        detector: first.expect("n_runs > 0"),
    })
}

/// Teacher that runs a trained detector over encoder features.
pub struct DetectorTeacher<'a> {
    pub name: String,
    pub detector: Detector,
    pub encoder: &'a dyn Encoder,
}

impl Teacher for DetectorTeacher<'_> {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn logits(&self, sample: &Sample) -> Option<[f64; 2]> {
        let out = self.encoder.featurize(sample).ok()?;
        self.detector.forward_one(&out).ok().map(|o| o.logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::LabelTeacher;
    use crate::toy::{ToyConfig, ToyWorld};

    fn toy(n: usize, rate: f64) -> (FeatureSet, FeatureSet) {
        let mut world = ToyWorld::new(ToyConfig::default());
        let tr = world.split("tr", n, rate);
        let dv = world.split("dv", n / 2, rate);
        let enc = world.encoder();
        (
            FeatureSet::build(&enc, tr).unwrap(),
            FeatureSet::build(&enc, dv).unwrap(),
        )
    }

    fn quick() -> (DetectorConfig, TrainConfig) {
        let det = DetectorConfig {
            hidden_dim: 16,
            ..Default::default()
        };
        let tc = TrainConfig {
            learning_rate: 1e-2,
            epochs: 5,
            batch_size: 8,
            n_runs: 1,
            ..TrainConfig::vua_all()
        };
        (det, tc)
    }

    #[test]
    fn presets_follow_dataset_settings() {
        let all = TrainConfig::vua_all();
        assert_eq!(
            (
                all.learning_rate,
                all.warmup,
                all.epochs,
                all.batch_size,
                all.n_runs
            ),
            (1e-5, true, 10, 64, 5)
        );
        assert_eq!(TrainConfig::vua_verb().epochs, 6);
        let moh = TrainConfig::moh_x();
        assert_eq!((moh.warmup, moh.epochs), (false, 15));
    }

    #[test]
    fn fixed_seed_gives_identical_traces() {
        let (tr, dv) = toy(40, 0.4);
        let (det, tc) = quick();
        let a = train(&tr, Some(&dv), &det, &DistillConfig::disabled(), None, &tc).unwrap();
        let b = train(&tr, Some(&dv), &det, &DistillConfig::disabled(), None, &tc).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.detector, b.detector);
        assert_eq!(a.report.per_epoch.len(), 5);
    }

    #[test]
    fn missing_teacher_fails_before_training() {
        let (tr, _) = toy(10, 0.5);
        let (det, tc) = quick();
        let partial =
            TeacherLogitCache::from_entries("t", vec![(tr.samples[0].id.clone(), [0.0, 0.0])])
                .unwrap();
        let err = train(
            &tr,
            None,
            &det,
            &DistillConfig::default(),
            Some(&partial),
            &tc,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            HarnessError::Distill(DistillError::MissingTeacherLogits { .. })
        ));
        assert!(train(&tr, None, &det, &DistillConfig::default(), None, &tc).is_err());
    }

    #[test]
    fn nan_inputs_abort_with_ids() {
        let (mut tr, _) = toy(8, 0.5);
        tr.outputs[3].sentence_vector[0] = f64::NAN;
        let (det, tc) = quick();
        match train(&tr, None, &det, &DistillConfig::disabled(), None, &tc) {
            Err(HarnessError::NonFinite { ids, .. }) => assert!(ids.contains(&tr.samples[3].id)),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn alpha_zero_mimics_teacher() {
        let (tr, _) = toy(48, 0.5);
        // teacher disagrees with the gold label on every sample
        let flipped = crate::distill::FnTeacher::new("flip", |s: &Sample| {
            LabelTeacher { margin: 20.0 }.logits(s).map(|[a, b]| [b, a])
        });
        let cache = TeacherLogitCache::from_entries(
            flipped.id(),
            tr.samples
                .iter()
                .map(|s| (s.id.clone(), flipped.logits(s).unwrap()))
                .collect(),
        )
        .unwrap();
        let (det, mut tc) = quick();
        tc.epochs = 40;
        let kd = DistillConfig {
            alpha: 0.0,
            tau: 1.0,
            enabled: true,
        };
        let out = train(&tr, None, &det, &kd, Some(&cache), &tc).unwrap();
        let pred = predict(&out.detector, &tr).unwrap();
        let teacher_pred: Vec<Label> = tr
            .samples
            .iter()
            .map(|s| {
                let [a, b] = cache.get(&s.id).unwrap();
                if b > a {
                    Label::Metaphor
                } else {
                    Label::Literal
                }
            })
            .collect();
        assert_eq!(pred, teacher_pred);
    }

    #[test]
    fn runs_are_averaged() {
        let (tr, dv) = toy(30, 0.4);
        let (det, mut tc) = quick();
        tc.n_runs = 3;
        let res = train_runs(
            &tr,
            Some(&dv),
            Some(&dv),
            &det,
            &DistillConfig::disabled(),
            None,
            &tc,
        )
        .unwrap();
        assert_eq!(res.runs.len(), 3);
        assert_eq!(res.runs[2].seed, tc.seed + 2);
        let mean_f1 = res
            .runs
            .iter()
            .map(|r| r.test.as_ref().unwrap().f1)
            .sum::<f64>()
            / 3.0;
        assert!((res.mean.f1 - mean_f1).abs() < 1e-12);
    }

    #[test]
    fn evaluation_rejects_wrong_width() {
        let (tr, _) = toy(8, 0.5);
        let det = Detector::new(
            DetectorConfig {
                hidden_dim: 4,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        assert!(matches!(
            evaluate(&det, &tr),
            Err(HarnessError::Detector(_))
        ));
    }
}
