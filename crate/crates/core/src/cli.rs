//! Command-line surface: configuration loading, the six commands and their
//! artifacts.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on invalid
//! configuration or arguments.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::corpus::{compute_stats, reference_stats, Sample, SplitManifest, SplitRole};
use crate::detector::{Checkpoint, DetectorConfig, DetectorError};
use crate::distill::{
    cache_teacher_logits, DistillConfig, DistillError, LabelTeacher, Teacher, TeacherLogitCache,
};
use crate::encoder::{
    Encoder, EncoderOptions, EncoderSpec, StubDescription, StubEncoder, DEFAULT_HIDDEN_DIM,
};
use crate::harness::experiments::ExperimentData;
use crate::harness::{
    cross_validate, evaluate, report, run_ablation, run_sweep, train_runs, AblationVariant,
    DetectorTeacher, FeatureSet, HarnessError, SweepGrid, TrainConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) => CliError::Config(e.to_string()),
            HarnessError::Distill(DistillError::Config(_)) => CliError::Config(e.to_string()),
            HarnessError::Detector(DetectorError::Config(_)) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "metaphor",
    version,
    about = "Train and evaluate token-level metaphor detectors"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a detector and write checkpoint, metrics and per-epoch trace.
    Train(CommonArgs),
    /// Score a checkpoint on a split.
    Eval(EvalArgs),
    /// Train over the alpha x tau grid.
    Sweep(CommonArgs),
    /// Train the ablation variants with identical hyperparameters.
    Ablate(CommonArgs),
    /// Compute and store teacher logits for the training split.
    CacheTeacher(CommonArgs),
    /// Print corpus statistics for every split in the manifest.
    Stats(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, overrides `output_dir`.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Feed the in-context target vector to the MIP branch.
    #[arg(long)]
    pub no_prompt: bool,
    /// Disable distillation.
    #[arg(long)]
    pub no_kd: bool,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Split name from the manifest; defaults to `data.test`.
    #[arg(long)]
    pub split: Option<String>,
    /// Mark the report as a transfer evaluation on a foreign corpus.
    #[arg(long)]
    pub zero_shot: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub manifest: PathBuf,
    #[serde(default)]
    pub train: Option<String>,
    #[serde(default)]
    pub dev: Option<String>,
    #[serde(default)]
    pub test: Option<String>,
    /// Cross-validation folds for corpora without a dev split.
    #[serde(default)]
    pub cv_folds: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    /// `builtin` or `stub:<path>`.
    pub name: String,
    pub dim: usize,
    pub seed: u64,
    pub options: EncoderOptions,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            name: "builtin".into(),
            dim: DEFAULT_HIDDEN_DIM,
            seed: 0,
            options: EncoderOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherKind {
    /// Gold labels turned into logits with a fixed margin.
    #[default]
    Label,
    /// A cache file written earlier.
    File,
    /// A trained detector checkpoint.
    Checkpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherSection {
    pub kind: TeacherKind,
    pub margin: f64,
    /// Cache file, read by `file` teachers and written by `cache-teacher`.
    pub cache: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for TeacherSection {
    fn default() -> Self {
        TeacherSection {
            kind: TeacherKind::Label,
            margin: 4.0,
            cache: None,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub variants: Vec<String>,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            variants: AblationVariant::ALL
                .iter()
                .map(|v| v.name().to_owned())
                .collect(),
        }
    }
}

/// Resolved run configuration as persisted next to every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub data: DataSection,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub distill: DistillConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub teacher: TeacherSection,
    #[serde(default)]
    pub sweep: SweepGrid,
    #[serde(default)]
    pub ablate: AblateSection,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl RunConfig {
    /// Parses the TOML text. A `preset` key in `[train]` (`vua_all`,
    /// `vua_verb`, `moh_x`) supplies defaults for the keys not given.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut doc: toml::Table = toml::from_str(text).map_err(config_err)?;
        if let Some(toml::Value::Table(train)) = doc.get_mut("train") {
            if let Some(preset) = train.remove("preset") {
                let name = preset
                    .as_str()
                    .ok_or_else(|| config_err("train.preset must be a string"))?;
                let base = TrainConfig::preset(name)
                    .ok_or_else(|| config_err(format!("train.preset: unknown preset `{name}`")))?;
                let mut merged = toml::Table::try_from(base).map_err(config_err)?;
                merged.extend(std::mem::take(train));
                *train = merged;
            }
        }
        toml::Value::Table(doc).try_into().map_err(config_err)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut cfg =
            Self::parse(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn apply_overrides(&mut self, args: &CommonArgs) {
        if let Some(seed) = args.seed {
            self.train.seed = seed;
        }
        // flags are relative to the working directory, config paths to the config file
        if let Some(out) = &args.output {
            self.output_dir = std::path::absolute(out).unwrap_or_else(|_| out.clone());
        }
        if args.no_prompt {
            self.detector.use_prompt_mip = false;
        }
        if args.no_kd {
            self.distill.enabled = false;
        }
        if let Some(a) = args.alpha {
            self.distill.alpha = a;
        }
        if let Some(t) = args.tau {
            self.distill.tau = t;
        }
    }

    /// Field-level validation of every section.
    pub fn validate(&self) -> Result<(), CliError> {
        self.detector
            .validate()
            .map_err(|e| config_err(format!("[detector] {e}")))?;
        self.distill
            .validate()
            .map_err(|e| config_err(format!("[distill] {e}")))?;
        self.train
            .validate()
            .map_err(|e| config_err(format!("[train] {e}")))?;
        EncoderSpec::parse(&self.encoder.name, self.encoder.dim, self.encoder.seed)
            .map_err(|e| config_err(format!("[encoder] {e}")))?;
        if self.teacher.margin <= 0.0 || !self.teacher.margin.is_finite() {
            return Err(config_err(format!(
                "[teacher] margin must be positive, got {}",
                self.teacher.margin
            )));
        }
        if let Some(k) = self.data.cv_folds {
            if k < 2 {
                return Err(config_err(format!(
                    "[data] cv_folds must be at least 2, got {k}"
                )));
            }
        }
        for v in &self.ablate.variants {
            if AblationVariant::parse(v).is_none() {
                return Err(config_err(format!("[ablate] unknown variant `{v}`")));
            }
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_owned()
        } else {
            self.base_dir.join(p)
        }
    }

    fn output(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    fn provenance(&self, extra: serde_json::Value) -> serde_json::Value {
        let mut p = serde_json::json!({
            "config": self,
            "seed": self.train.seed,
        });
        if let (Some(obj), serde_json::Value::Object(more)) = (p.as_object_mut(), extra) {
            obj.extend(more);
        }
        p
    }
}

/// Loaded corpora of one run, by role.
struct Corpora {
    manifest: SplitManifest,
    train: Option<Vec<Sample>>,
    dev: Option<Vec<Sample>>,
    test: Option<Vec<Sample>>,
}

fn load_split(
    manifest: &SplitManifest,
    name: &str,
    for_training: bool,
) -> Result<Vec<Sample>, CliError> {
    let resolved = manifest.resolve(name).map_err(config_err)?;
    if for_training && resolved.role == SplitRole::TestOnly {
        return Err(config_err(format!("split `{name}` is evaluation-only")));
    }
    let loaded = crate::corpus::load_split(&resolved.path, resolved.format).map_err(runtime_err)?;
    for d in &loaded.diagnostics {
        log::warn!("{name}: {d}");
    }
    if loaded.samples.is_empty() {
        return Err(runtime_err(format!("split `{name}` has no usable samples")));
    }
    Ok(loaded.samples)
}

fn load_corpora(cfg: &RunConfig, need_train: bool) -> Result<Corpora, CliError> {
    let manifest = SplitManifest::load(&cfg.resolve(&cfg.data.manifest)).map_err(config_err)?;
    let get = |name: &Option<String>, training: bool| {
        name.as_deref()
            .map(|n| load_split(&manifest, n, training))
            .transpose()
    };
    let train = get(&cfg.data.train, true)?;
    if need_train && train.is_none() {
        return Err(config_err(
            "[data] train split is required for this command",
        ));
    }
    Ok(Corpora {
        dev: get(&cfg.data.dev, true)?,
        test: get(&cfg.data.test, false)?,
        train,
        manifest,
    })
}

/// The encoder and, for the builtin kind, the description to persist.
fn build_encoder(
    cfg: &RunConfig,
    words: &[&Sample],
) -> Result<(StubEncoder, StubDescription), CliError> {
    let spec = EncoderSpec::parse(&cfg.encoder.name, cfg.encoder.dim, cfg.encoder.seed)
        .map_err(config_err)?;
    let desc = match spec {
        EncoderSpec::Builtin { dim, seed } => {
            let mut d =
                StubDescription::generated(words.iter().flat_map(|s| s.tokens.iter()), dim, seed);
            d.options = cfg.encoder.options;
            d
        }
        EncoderSpec::Stub(path) => {
            let path = EncoderSpec::resolve_path(&path, Some(&cfg.base_dir));
            StubDescription::load(&path).map_err(config_err)?
        }
    };
    let enc = StubEncoder::from_description(desc.clone()).map_err(config_err)?;
    Ok((enc, desc))
}

fn featurize(
    enc: &dyn Encoder,
    samples: Option<Vec<Sample>>,
) -> Result<Option<FeatureSet>, CliError> {
    samples
        .map(|s| FeatureSet::build(enc, s))
        .transpose()
        .map_err(CliError::from)
}

fn teacher_for(
    cfg: &RunConfig,
    encoder: &dyn Encoder,
    samples: &[Sample],
) -> Result<TeacherLogitCache, CliError> {
    let t = &cfg.teacher;
    match t.kind {
        TeacherKind::File => {
            let path = t
                .cache
                .as_ref()
                .ok_or_else(|| config_err("[teacher] kind = \"file\" needs `cache`"))?;
            let path = cfg.resolve(path);
            if !path.exists() {
                return Err(config_err(format!(
                    "[teacher] cache {} does not exist",
                    path.display()
                )));
            }
            TeacherLogitCache::load(&path).map_err(runtime_err)
        }
        TeacherKind::Label => {
            let teacher = LabelTeacher { margin: t.margin };
            in_memory_cache(&teacher, samples)
        }
        TeacherKind::Checkpoint => {
            let path = t
                .checkpoint
                .as_ref()
                .ok_or_else(|| config_err("[teacher] kind = \"checkpoint\" needs `checkpoint`"))?;
            let path = cfg.resolve(path);
            let detector = Checkpoint::load(&path)
                .and_then(Checkpoint::into_detector)
                .map_err(config_err)?;
            detector
                .config
                .check_encoder_dim(encoder.dim())
                .map_err(config_err)?;
            let teacher = DetectorTeacher {
                name: format!("checkpoint:{}", path.display()),
                detector,
                encoder,
            };
            in_memory_cache(&teacher, samples)
        }
    }
}

fn in_memory_cache(
    teacher: &dyn Teacher,
    samples: &[Sample],
) -> Result<TeacherLogitCache, CliError> {
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let l = teacher.logits(s).ok_or_else(|| {
            runtime_err(format!(
                "teacher `{}` gave no logits for {}",
                teacher.id(),
                s.id
            ))
        })?;
        entries.push((s.id.clone(), l));
    }
    TeacherLogitCache::from_entries(teacher.id(), entries).map_err(runtime_err)
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| config_err(format!("output directory {}: {e}", dir.display())))
}

/// Everything a training-type command needs.
struct Prepared {
    encoder: StubEncoder,
    description: StubDescription,
    train: FeatureSet,
    dev: Option<FeatureSet>,
    test: Option<FeatureSet>,
    teacher: Option<TeacherLogitCache>,
}

fn prepare(cfg: &RunConfig, need_teacher: bool) -> Result<Prepared, CliError> {
    let corpora = load_corpora(cfg, true)?;
    let all: Vec<&Sample> = [&corpora.train, &corpora.dev, &corpora.test]
        .into_iter()
        .flatten()
        .flatten()
        .collect();
    let (encoder, description) = build_encoder(cfg, &all)?;
    cfg.detector
        .check_encoder_dim(encoder.dim())
        .map_err(|e| config_err(format!("[detector] {e}")))?;
    let train_samples = corpora.train.expect("checked in load_corpora");
    let teacher = if need_teacher {
        Some(teacher_for(cfg, &encoder, &train_samples)?)
    } else {
        None
    };
    Ok(Prepared {
        train: featurize(&encoder, Some(train_samples))?.expect("present"),
        dev: featurize(&encoder, corpora.dev)?,
        test: featurize(&encoder, corpora.test)?,
        teacher,
        encoder,
        description,
    })
}

fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.output();
    ensure_dir(&out)?;
    let p = prepare(cfg, cfg.distill.enabled)?;
    let result = train_runs(
        &p.train,
        p.dev.as_ref(),
        p.test.as_ref(),
        &cfg.detector,
        &cfg.distill,
        p.teacher.as_ref(),
        &cfg.train,
    )?;
    let cv = match (cfg.data.cv_folds, &p.dev) {
        (Some(k), None) => Some(cross_validate(
            &p.train,
            k,
            &cfg.detector,
            &cfg.distill,
            p.teacher.as_ref(),
            &cfg.train,
        )?),
        _ => None,
    };
    let encoder_file = out.join("encoder.json");
    p.description.save(&encoder_file).map_err(runtime_err)?;
    let provenance = cfg.provenance(serde_json::json!({
        "encoder": p.encoder.name(),
        "encoder_description": "encoder.json",
        "teacher": p.teacher.as_ref().map(|t| t.teacher().to_owned()),
    }));
    result
        .detector
        .to_checkpoint(provenance.clone())
        .save(&out.join("checkpoint.json"))
        .map_err(runtime_err)?;
    let mut trace = Vec::new();
    for r in &result.runs {
        trace.extend(r.selection.per_epoch.iter().map(|e| {
            let mut v = serde_json::to_value(e).expect("record serializes");
            v["run_id"] = serde_json::json!(format!("run{}", r.run));
            v["seed"] = serde_json::json!(r.seed);
            v
        }));
    }
    report::write_jsonl(&out.join("epochs.jsonl"), &trace)?;
    let headline_split = if p.test.is_some() {
        "test"
    } else if p.dev.is_some() {
        "dev"
    } else {
        "train"
    };
    report::write_json(
        &out.join("metrics.json"),
        &serde_json::json!({
            "mean": result.mean,
            "headline_split": headline_split,
            "runs": result.runs,
            "cross_validation": cv,
            "provenance": provenance,
        }),
    )?;
    let [a, pr, r, f] = result.mean.percentages();
    println!(
        "{headline_split}: acc {a:.2}  P {pr:.2}  R {r:.2}  F1 {f:.2}  ({} run(s))",
        result.runs.len()
    );
    if let Some(cv) = cv {
        let [a, pr, r, f] = cv.mean.percentages();
        println!(
            "{}: acc {a:.2}  P {pr:.2}  R {r:.2}  F1 {f:.2}",
            cv.protocol
        );
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, args: &EvalArgs) -> Result<(), CliError> {
    if !args.checkpoint.exists() {
        return Err(config_err(format!(
            "checkpoint {} does not exist",
            args.checkpoint.display()
        )));
    }
    let checkpoint = Checkpoint::load(&args.checkpoint).map_err(config_err)?;
    let trained_with = checkpoint.provenance.get("config").cloned();
    let detector = checkpoint.into_detector().map_err(config_err)?;
    let split = args
        .split
        .clone()
        .or_else(|| cfg.data.test.clone())
        .ok_or_else(|| config_err("no split given: pass --split or set data.test"))?;
    let manifest = SplitManifest::load(&cfg.resolve(&cfg.data.manifest)).map_err(config_err)?;
    let samples = load_split(&manifest, &split, false)?;

    let sibling = args.checkpoint.with_file_name("encoder.json");
    let encoder = match EncoderSpec::parse(&cfg.encoder.name, cfg.encoder.dim, cfg.encoder.seed)
        .map_err(config_err)?
    {
        EncoderSpec::Builtin { .. } if sibling.exists() => {
            StubEncoder::load(&sibling).map_err(config_err)?
        }
        _ => {
            let refs: Vec<&Sample> = samples.iter().collect();
            build_encoder(cfg, &refs)?.0
        }
    };
    detector
        .config
        .check_encoder_dim(encoder.dim())
        .map_err(|e| config_err(format!("checkpoint incompatible with encoder: {e}")))?;
    let set = FeatureSet::build(&encoder, samples)?;
    let metrics = evaluate(&detector, &set)?;
    let out = cfg.output();
    ensure_dir(&out)?;
    let file = out.join(format!("eval-{split}.json"));
    report::write_json(
        &file,
        &serde_json::json!({
            "split": split,
            "checkpoint": args.checkpoint,
            "zero_shot": args.zero_shot,
            "metrics": metrics,
            "provenance": cfg.provenance(serde_json::json!({ "trained_with": trained_with })),
        }),
    )?;
    let [a, p, r, f] = metrics.percentages();
    let tag = if args.zero_shot { " (zero-shot)" } else { "" };
    println!("{split}{tag}: acc {a:.2}  P {p:.2}  R {r:.2}  F1 {f:.2}");
    Ok(())
}

fn run_id(cfg: &RunConfig) -> String {
    format!("seed{}", cfg.train.seed)
}

fn cmd_sweep(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.sweep
        .validate()
        .map_err(|e| config_err(format!("[sweep] {e}")))?;
    let out = cfg.output();
    ensure_dir(&out)?;
    let p = prepare(cfg, true)?;
    let data = ExperimentData {
        train: &p.train,
        dev: p.dev.as_ref(),
        test: p.test.as_ref(),
        teacher: p.teacher.as_ref(),
    };
    let cells = run_sweep(&cfg.sweep, data, &cfg.detector, &cfg.train)?;
    report::write_sweep(&out, &run_id(cfg), &cells)?;
    report::write_json(
        &out.join("sweep-provenance.json"),
        &cfg.provenance(serde_json::json!({})),
    )?;
    println!("{:>6} {:>6} {:>8} {:>8}", "alpha", "tau", "acc", "f1");
    for c in &cells {
        match &c.metrics {
            Some(m) => println!(
                "{:>6} {:>6} {:>8.2} {:>8.2}",
                c.alpha,
                c.tau,
                100.0 * m.accuracy,
                100.0 * m.f1
            ),
            None => println!(
                "{:>6} {:>6}   failed: {}",
                c.alpha,
                c.tau,
                c.error.as_deref().unwrap_or("")
            ),
        }
    }
    if cells.iter().all(|c| c.metrics.is_none()) {
        return Err(runtime_err("every sweep cell failed"));
    }
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig) -> Result<(), CliError> {
    let variants: Vec<AblationVariant> = cfg
        .ablate
        .variants
        .iter()
        .map(|v| AblationVariant::parse(v).expect("validated"))
        .collect();
    let out = cfg.output();
    ensure_dir(&out)?;
    let needs_kd = variants.iter().any(|v| v.distill_enabled());
    let p = prepare(cfg, needs_kd)?;
    let data = ExperimentData {
        train: &p.train,
        dev: p.dev.as_ref(),
        test: p.test.as_ref(),
        teacher: p.teacher.as_ref(),
    };
    let rows = run_ablation(&variants, data, &cfg.detector, &cfg.distill, &cfg.train)?;
    report::write_ablation(&out, &run_id(cfg), &rows)?;
    report::write_json(
        &out.join("ablation-provenance.json"),
        &cfg.provenance(serde_json::json!({})),
    )?;
    println!(
        "{:<16} {:>7} {:>7} {:>7} {:>7}",
        "variant", "acc", "P", "R", "F1"
    );
    for r in &rows {
        let [a, p, rc, f] = r.metrics.percentages();
        println!(
            "{:<16} {a:>7.2} {p:>7.2} {rc:>7.2} {f:>7.2}",
            r.variant.name()
        );
    }
    Ok(())
}

fn cmd_cache_teacher(cfg: &RunConfig) -> Result<(), CliError> {
    let corpora = load_corpora(cfg, true)?;
    let samples: Vec<Sample> = [corpora.train, corpora.dev]
        .into_iter()
        .flatten()
        .flatten()
        .collect();
    let path = match &cfg.teacher.cache {
        Some(p) => cfg.resolve(p),
        None => cfg.output().join("teacher.jsonl"),
    };
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let cache = match cfg.teacher.kind {
        TeacherKind::Label => cache_teacher_logits(
            &LabelTeacher {
                margin: cfg.teacher.margin,
            },
            &samples,
            &path,
        ),
        TeacherKind::Checkpoint => {
            let refs: Vec<&Sample> = samples.iter().collect();
            let (encoder, _) = build_encoder(cfg, &refs)?;
            let ckpt =
                cfg.teacher.checkpoint.as_ref().ok_or_else(|| {
                    config_err("[teacher] kind = \"checkpoint\" needs `checkpoint`")
                })?;
            let detector = Checkpoint::load(&cfg.resolve(ckpt))
                .and_then(Checkpoint::into_detector)
                .map_err(config_err)?;
            let teacher = DetectorTeacher {
                name: format!("checkpoint:{}", ckpt.display()),
                detector,
                encoder: &encoder,
            };
            cache_teacher_logits(&teacher, &samples, &path)
        }
        TeacherKind::File => {
            return Err(config_err(
                "[teacher] kind = \"file\" cannot produce a cache",
            ))
        }
    }
    .map_err(runtime_err)?;
    let reloaded = TeacherLogitCache::load(&path).map_err(runtime_err)?;
    if reloaded != cache {
        return Err(runtime_err(format!(
            "{} did not round-trip",
            path.display()
        )));
    }
    println!(
        "cached {} logit pairs from `{}` in {}",
        cache.len(),
        cache.teacher(),
        path.display()
    );
    Ok(())
}

fn cmd_stats(cfg: &RunConfig) -> Result<(), CliError> {
    let corpora = load_corpora(cfg, false)?;
    let mut rows = Vec::new();
    println!(
        "{:<18} {:>9} {:>8} {:>9} {:>7}  reference",
        "split", "targets", "%M", "sentences", "len"
    );
    let names: BTreeSet<&String> = corpora.manifest.splits.keys().collect();
    for name in names {
        let samples = load_split(&corpora.manifest, name, false)?;
        let stats = compute_stats(&samples).map_err(runtime_err)?;
        let check = reference_stats(name).map(|r| {
            if r.matches(&stats) {
                "match"
            } else {
                "MISMATCH"
            }
        });
        println!(
            "{name:<18} {:>9} {:>8.2} {:>9} {:>7.1}  {}",
            stats.n_targets,
            stats.pct_metaphor,
            stats.n_sentences,
            stats.avg_len,
            check.unwrap_or("-")
        );
        rows.push(serde_json::json!({ "split": name, "stats": stats, "reference": check }));
    }
    let out = cfg.output();
    ensure_dir(&out)?;
    report::write_json(&out.join("stats.json"), &rows).map_err(CliError::from)
}

fn load_config(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.apply_overrides(args);
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train(a) => cmd_train(&load_config(a)?),
        Command::Eval(a) => cmd_eval(&load_config(&a.common)?, a),
        Command::Sweep(a) => cmd_sweep(&load_config(a)?),
        Command::Ablate(a) => cmd_ablate(&load_config(a)?),
        Command::CacheTeacher(a) => cmd_cache_teacher(&load_config(a)?),
        Command::Stats(a) => cmd_stats(&load_config(a)?),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
