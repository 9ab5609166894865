//! Hyperparameter sweep, ablation table and k-fold cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_runs, FeatureSet, HarnessError, MetricsReport, TrainConfig};
use crate::detector::DetectorConfig;
use crate::distill::{DistillConfig, TeacherLogitCache};

/// Shared inputs of every cell or variant.
#[derive(Clone, Copy)]
pub struct ExperimentData<'a> {
    pub train: &'a FeatureSet,
    pub dev: Option<&'a FeatureSet>,
    pub test: Option<&'a FeatureSet>,
    pub teacher: Option<&'a TeacherLogitCache>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub alphas: Vec<f64>,
    pub taus: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            alphas: vec![0.3, 0.4, 0.5, 0.6, 0.7],
            taus: vec![1.0, 2.0, 3.0, 4.0, 5.0],
        }
    }
}

impl SweepGrid {
    /// Row-major cross product, alpha outermost.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.alphas
            .iter()
            .flat_map(|&a| self.taus.iter().map(move |&t| (a, t)))
            .collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.alphas.is_empty() || self.taus.is_empty() {
            return Err(HarnessError::Config(
                "sweep grid needs at least one alpha and one tau".into(),
            ));
        }
        if self.alphas.iter().chain(&self.taus).any(|v| !v.is_finite()) {
            return Err(HarnessError::Config(
                "sweep grid values must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// One sweep cell; `error` is set and metrics are absent when the cell failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub alpha: f64,
    pub tau: f64,
    pub n_runs: usize,
    pub metrics: Option<MetricsReport>,
    pub error: Option<String>,
}

/// Trains every (alpha, tau) cell with distillation on. Cells run in
/// parallel with isolated state and come back in grid order; a failing cell
/// is recorded and the others continue.
pub fn run_sweep(
    grid: &SweepGrid,
    data: ExperimentData<'_>,
    detector: &DetectorConfig,
    train: &TrainConfig,
) -> Result<Vec<SweepCell>, HarnessError> {
    grid.validate()?;
    let cells = grid.cells();
    Ok(cells
        .par_iter()
        .map(|&(alpha, tau)| {
            let distill = DistillConfig {
                alpha,
                tau,
                enabled: true,
            };
            let result = distill
                .validate()
                .map_err(HarnessError::from)
                .and_then(|_| {
                    train_runs(
                        data.train,
                        data.dev,
                        data.test,
                        detector,
                        &distill,
                        data.teacher,
                        train,
                    )
                });
            match result {
                Ok(r) => SweepCell {
                    alpha,
                    tau,
                    n_runs: train.n_runs,
                    metrics: Some(r.mean),
                    error: None,
                },
                Err(e) => {
                    log::warn!("sweep cell alpha={alpha} tau={tau} failed: {e}");
                    SweepCell {
                        alpha,
                        tau,
                        n_runs: train.n_runs,
                        metrics: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationVariant {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "-prompt")]
    NoPrompt,
    #[serde(rename = "-KD")]
    NoKd,
    #[serde(rename = "-(prompt&&KD)")]
    NoPromptNoKd,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [
        AblationVariant::NoPrompt,
        AblationVariant::NoKd,
        AblationVariant::NoPromptNoKd,
        AblationVariant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoPrompt => "-prompt",
            AblationVariant::NoKd => "-KD",
            AblationVariant::NoPromptNoKd => "-(prompt&&KD)",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    pub fn use_prompt_mip(self) -> bool {
        matches!(self, AblationVariant::Full | AblationVariant::NoKd)
    }

    pub fn distill_enabled(self) -> bool {
        matches!(self, AblationVariant::Full | AblationVariant::NoPrompt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub use_prompt_mip: bool,
    pub distill_enabled: bool,
    pub alpha: f64,
    pub tau: f64,
    pub metrics: MetricsReport,
}

/// Trains each variant with identical hyperparameters, only the two flags
/// differ.
pub fn run_ablation(
    variants: &[AblationVariant],
    data: ExperimentData<'_>,
    detector: &DetectorConfig,
    distill: &DistillConfig,
    train: &TrainConfig,
) -> Result<Vec<AblationRow>, HarnessError> {
    variants
        .iter()
        .map(|&variant| {
            let det = DetectorConfig {
                use_prompt_mip: variant.use_prompt_mip(),
                ..*detector
            };
            let dist = DistillConfig {
                enabled: variant.distill_enabled(),
                ..*distill
            };
            let r = train_runs(
                data.train,
                data.dev,
                data.test,
                &det,
                &dist,
                data.teacher,
                train,
            )?;
            Ok(AblationRow {
                variant,
                use_prompt_mip: det.use_prompt_mip,
                distill_enabled: dist.enabled,
                alpha: dist.alpha,
                tau: dist.tau,
                metrics: r.mean,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub k: usize,
    pub protocol: String,
    pub folds: Vec<MetricsReport>,
    pub mean: MetricsReport,
}

/// k-fold cross-validation for corpora without a dev split. Each fold trains
/// on the other folds for the full epoch budget (final epoch kept) and is
/// scored on the held-out fold; the folds are averaged.
pub fn cross_validate(
    set: &FeatureSet,
    k: usize,
    detector: &DetectorConfig,
    distill: &DistillConfig,
    teacher: Option<&TeacherLogitCache>,
    train: &TrainConfig,
) -> Result<CrossValidation, HarnessError> {
    if k < 2 || k > set.len() {
        return Err(HarnessError::Argument(format!(
            "cannot split {} samples into {k} folds",
            set.len()
        )));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(train.seed));
    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let mut held = Vec::new();
        let mut rest = Vec::new();
        for (pos, &i) in order.iter().enumerate() {
            if pos % k == fold {
                held.push(i)
            } else {
                rest.push(i)
            }
        }
        let test = set.subset(&held);
        let tr = set.subset(&rest);
        let r = train_runs(&tr, None, Some(&test), detector, distill, teacher, train)?;
        folds.push(r.mean);
    }
    Ok(CrossValidation {
        k,
        protocol: format!("{k}-fold cross-validation, final epoch per fold"),
        mean: MetricsReport::mean(&folds),
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::{LabelTeacher, Teacher};
    use crate::harness::train_runs;
    use crate::toy::{ToyConfig, ToyWorld};

    struct Fixture {
        train: FeatureSet,
        dev: FeatureSet,
        cache: TeacherLogitCache,
    }

    fn fixture() -> Fixture {
        let mut world = ToyWorld::new(ToyConfig::default());
        let tr = world.split("tr", 24, 0.4);
        let dv = world.split("dv", 12, 0.4);
        let enc = world.encoder();
        let t = LabelTeacher { margin: 4.0 };
        let cache = TeacherLogitCache::from_entries(
            t.id(),
            tr.iter()
                .map(|s| (s.id.clone(), t.logits(s).unwrap()))
                .collect(),
        )
        .unwrap();
        Fixture {
            train: FeatureSet::build(&enc, tr).unwrap(),
            dev: FeatureSet::build(&enc, dv).unwrap(),
            cache,
        }
    }

    fn configs() -> (DetectorConfig, TrainConfig) {
        (
            DetectorConfig {
                hidden_dim: 16,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: 1e-2,
                epochs: 3,
                batch_size: 8,
                n_runs: 1,
                ..Default::default()
            },
        )
    }

    #[test]
    fn default_grid_has_25_cells() {
        let g = SweepGrid::default();
        assert_eq!(g.cells().len(), 25);
        assert_eq!(g.cells()[0], (0.3, 1.0));
        assert_eq!(g.cells()[24], (0.7, 5.0));
    }

    #[test]
    fn single_cell_equals_plain_run() {
        let f = fixture();
        let (det, tc) = configs();
        let data = ExperimentData {
            train: &f.train,
            dev: Some(&f.dev),
            test: Some(&f.dev),
            teacher: Some(&f.cache),
        };
        let grid = SweepGrid {
            alphas: vec![0.5],
            taus: vec![2.0],
        };
        let cells = run_sweep(&grid, data, &det, &tc).unwrap();
        let plain = train_runs(
            &f.train,
            Some(&f.dev),
            Some(&f.dev),
            &det,
            &DistillConfig {
                alpha: 0.5,
                tau: 2.0,
                enabled: true,
            },
            Some(&f.cache),
            &tc,
        )
        .unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].metrics.as_ref().unwrap(), &plain.mean);
    }

    #[test]
    fn failing_cells_are_recorded() {
        let f = fixture();
        let (det, tc) = configs();
        let data = ExperimentData {
            train: &f.train,
            dev: Some(&f.dev),
            test: None,
            teacher: Some(&f.cache),
        };
        let grid = SweepGrid {
            alphas: vec![0.5, 1.5],
            taus: vec![1.0, 3.0],
        };
        let cells = run_sweep(&grid, data, &det, &tc).unwrap();
        assert_eq!(cells.len(), 4);
        assert!(cells[..2]
            .iter()
            .all(|c| c.metrics.is_some() && c.error.is_none()));
        assert!(cells[2..]
            .iter()
            .all(|c| c.metrics.is_none() && c.error.as_deref().unwrap().contains("alpha")));
    }

    #[test]
    fn ablation_rows_carry_flags() {
        let f = fixture();
        let (det, tc) = configs();
        let data = ExperimentData {
            train: &f.train,
            dev: Some(&f.dev),
            test: None,
            teacher: Some(&f.cache),
        };
        let rows = run_ablation(
            &AblationVariant::ALL,
            data,
            &det,
            &DistillConfig::default(),
            &tc,
        )
        .unwrap();
        let flags: Vec<_> = rows
            .iter()
            .map(|r| (r.variant.name(), r.use_prompt_mip, r.distill_enabled))
            .collect();
        assert_eq!(
            flags,
            [
                ("-prompt", false, true),
                ("-KD", true, false),
                ("-(prompt&&KD)", false, false),
                ("full", true, true)
            ]
        );
        assert_eq!(AblationVariant::parse("-KD"), Some(AblationVariant::NoKd));
    }

    #[test]
    fn cross_validation_covers_every_sample_once() {
        let f = fixture();
        let (det, tc) = configs();
        let cv = cross_validate(&f.train, 4, &det, &DistillConfig::disabled(), None, &tc).unwrap();
        assert_eq!(cv.folds.len(), 4);
        let scored: usize = cv.folds.iter().map(|m| m.confusion.total()).sum();
        assert_eq!(scored, f.train.len());
        assert!(cross_validate(&f.train, 1, &det, &DistillConfig::disabled(), None, &tc).is_err());
    }
}
