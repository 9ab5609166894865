//! Dataset ingestion for metaphor detection splits.
//!
//! One record per target word: a sentence carrying `k` annotated targets
//! appears as `k` records. Tokens are the dataset's whitespace tokenization;
//! sub-word splitting belongs to the encoder.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Column order of the canonical TSV format.
pub const TSV_HEADER: [&str; 5] = ["id", "sentence", "target_index", "pos", "label"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: invalid `{field}`: {reason}")]
    Malformed {
        line: usize,
        field: &'static str,
        reason: String,
    },
    #[error("split is empty")]
    EmptySplit,
    #[error("unknown split format `{0}` (expected tsv or jsonl)")]
    UnknownFormat(String),
    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("sample {id}: {reason}")]
    InvalidSample { id: String, reason: String },
}

/// Binary gold label. `Metaphor` is the positive class everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Literal,
    Metaphor,
}

impl Label {
    pub fn as_index(self) -> usize {
        match self {
            Label::Literal => 0,
            Label::Metaphor => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        match index {
            0 => Some(Label::Literal),
            1 => Some(Label::Metaphor),
            _ => None,
        }
    }
}

impl From<Label> for u8 {
    fn from(label: Label) -> u8 {
        label.as_index() as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Label::from_index(value as usize)
            .ok_or_else(|| format!("label must be 0 or 1, got {value}"))
    }
}

/// One labeled detection instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub tokens: Vec<String>,
    pub target_index: usize,
    pub pos_tag: String,
    pub label: Label,
}

impl Sample {
    /// Builds a sample, checking the target index against the token list.
    pub fn new(
        id: impl Into<String>,
        tokens: Vec<String>,
        target_index: usize,
        pos_tag: impl Into<String>,
        label: Label,
    ) -> Result<Self, CorpusError> {
        let sample = Sample {
            id: id.into(),
            tokens,
            target_index,
            pos_tag: pos_tag.into(),
            label,
        };
        sample.validate()?;
        Ok(sample)
    }

    /// Convenience constructor from a whitespace-tokenized sentence.
    pub fn from_sentence(
        id: impl Into<String>,
        sentence: &str,
        target_index: usize,
        pos_tag: impl Into<String>,
        label: Label,
    ) -> Result<Self, CorpusError> {
        Self::new(id, tokenize(sentence), target_index, pos_tag, label)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.tokens.is_empty() {
            return Err(CorpusError::InvalidSample {
                id: self.id.clone(),
                reason: "sentence has no tokens".into(),
            });
        }
        if self.target_index >= self.tokens.len() {
            return Err(CorpusError::InvalidSample {
                id: self.id.clone(),
                reason: format!(
                    "target_index {} out of range for {} tokens",
                    self.target_index,
                    self.tokens.len()
                ),
            });
        }
        Ok(())
    }

    pub fn target_word(&self) -> &str {
        &self.tokens[self.target_index]
    }

    pub fn sentence(&self) -> String {
        self.tokens.join(" ")
    }
}

pub fn tokenize(sentence: &str) -> Vec<String> {
    sentence.split_whitespace().map(str::to_owned).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitFormat {
    Tsv,
    Jsonl,
}

impl SplitFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Result<Self, CorpusError> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("txt") => Ok(SplitFormat::Tsv),
            Some("jsonl") | Some("json") => Ok(SplitFormat::Jsonl),
            other => Err(CorpusError::UnknownFormat(other.unwrap_or("").to_owned())),
        }
    }
}

impl std::str::FromStr for SplitFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(SplitFormat::Tsv),
            "jsonl" => Ok(SplitFormat::Jsonl),
            other => Err(CorpusError::UnknownFormat(other.to_owned())),
        }
    }
}

/// A record rejected during loading because its target index was out of range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub id: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {} ({}): {}", self.line, self.id, self.message)
    }
}

/// Samples of a split in file order, plus the records that were rejected.
#[derive(Debug, Clone, Default)]
pub struct LoadedSplit {
    pub samples: Vec<Sample>,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonRecord {
    id: String,
    sentence: String,
    target_index: serde_json::Value,
    pos: String,
    label: serde_json::Value,
}

pub fn load_split(path: &Path, format: SplitFormat) -> Result<LoadedSplit, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_split(&text, format)
}

/// Parses split text. Malformed records abort with the line and field;
/// out-of-range target indices are skipped and reported in `diagnostics`.
pub fn parse_split(text: &str, format: SplitFormat) -> Result<LoadedSplit, CorpusError> {
    let mut out = LoadedSplit::default();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record = match format {
            SplitFormat::Tsv => {
                if line == 1 && raw.split('\t').next() == Some("id") {
                    continue;
                }
                parse_tsv_record(raw, line)?
            }
            SplitFormat::Jsonl => parse_json_record(raw, line)?,
        };
        let RawRecord {
            id,
            tokens,
            target_index,
            pos_tag,
            label,
        } = record;
        if tokens.is_empty() {
            return Err(CorpusError::Malformed {
                line,
                field: "sentence",
                reason: "empty sentence".into(),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(CorpusError::Malformed {
                line,
                field: "id",
                reason: format!("duplicate id `{id}`"),
            });
        }
        if target_index >= tokens.len() {
            out.diagnostics.push(Diagnostic {
                line,
                id,
                message: format!(
                    "target_index {target_index} out of range for {} tokens",
                    tokens.len()
                ),
            });
            continue;
        }
        out.samples.push(Sample {
            id,
            tokens,
            target_index,
            pos_tag,
            label,
        });
    }
    Ok(out)
}

struct RawRecord {
    id: String,
    tokens: Vec<String>,
    target_index: usize,
    pos_tag: String,
    label: Label,
}

fn parse_label(text: &str, line: usize) -> Result<Label, CorpusError> {
    match text.trim() {
        "0" => Ok(Label::Literal),
        "1" => Ok(Label::Metaphor),
        other => Err(CorpusError::Malformed {
            line,
            field: "label",
            reason: format!("expected 0 or 1, got `{other}`"),
        }),
    }
}

fn parse_tsv_record(raw: &str, line: usize) -> Result<RawRecord, CorpusError> {
    let cols: Vec<&str> = raw.split('\t').collect();
    if cols.len() != TSV_HEADER.len() {
        let field = TSV_HEADER.get(cols.len()).copied().unwrap_or("label");
        return Err(CorpusError::Malformed {
            line,
            field,
            reason: format!(
                "expected {} tab-separated columns, got {}",
                TSV_HEADER.len(),
                cols.len()
            ),
        });
    }
    let id = cols[0].trim();
    if id.is_empty() {
        return Err(CorpusError::Malformed {
            line,
            field: "id",
            reason: "empty id".into(),
        });
    }
    let target_index = cols[2]
        .trim()
        .parse::<usize>()
        .map_err(|e| CorpusError::Malformed {
            line,
            field: "target_index",
            reason: format!("`{}`: {e}", cols[2]),
        })?;
    Ok(RawRecord {
        id: id.to_owned(),
        tokens: tokenize(cols[1]),
        target_index,
        pos_tag: cols[3].trim().to_owned(),
        label: parse_label(cols[4], line)?,
    })
}

fn parse_json_record(raw: &str, line: usize) -> Result<RawRecord, CorpusError> {
    let rec: JsonRecord = serde_json::from_str(raw).map_err(|e| CorpusError::Malformed {
        line,
        field: json_error_field(&e),
        reason: e.to_string(),
    })?;
    let target_index = match &rec.target_index {
        serde_json::Value::Number(n) => n.as_u64().map(|v| v as usize),
        serde_json::Value::Array(_) => {
            return Err(CorpusError::Malformed {
                line,
                field: "target_index",
                reason: "multi-token target spans are unsupported".into(),
            })
        }
        _ => None,
    }
    .ok_or_else(|| CorpusError::Malformed {
        line,
        field: "target_index",
        reason: format!("expected a non-negative integer, got {}", rec.target_index),
    })?;
    let label = match &rec.label {
        serde_json::Value::Number(n) => parse_label(&n.to_string(), line)?,
        serde_json::Value::String(s) => parse_label(s, line)?,
        other => {
            return Err(CorpusError::Malformed {
                line,
                field: "label",
                reason: format!("expected 0 or 1, got {other}"),
            })
        }
    };
    Ok(RawRecord {
        id: rec.id,
        tokens: tokenize(&rec.sentence),
        target_index,
        pos_tag: rec.pos,
        label,
    })
}

fn json_error_field(err: &serde_json::Error) -> &'static str {
    let msg = err.to_string();
    for field in TSV_HEADER {
        if msg.contains(&format!("`{field}`")) {
            return field;
        }
    }
    "record"
}

/// Serializes samples back into the canonical text format.
pub fn serialize_split(samples: &[Sample], format: SplitFormat) -> String {
    let mut out = String::new();
    match format {
        SplitFormat::Tsv => {
            out.push_str(&TSV_HEADER.join("\t"));
            out.push('\n');
            for s in samples {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\n",
                    s.id,
                    s.sentence(),
                    s.target_index,
                    s.pos_tag,
                    s.label.as_index()
                ));
            }
        }
        SplitFormat::Jsonl => {
            for s in samples {
                let rec = JsonRecord {
                    id: s.id.clone(),
                    sentence: s.sentence(),
                    target_index: s.target_index.into(),
                    pos: s.pos_tag.clone(),
                    label: s.label.as_index().into(),
                };
                out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
                out.push('\n');
            }
        }
    }
    out
}

pub fn write_split(
    path: &Path,
    samples: &[Sample],
    format: SplitFormat,
) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.to_owned(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io)?;
    file.write_all(serialize_split(samples, format).as_bytes())
        .map_err(io)
}

/// Per-split counts in the layout of the usual dataset statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub n_targets: usize,
    pub pct_metaphor: f64,
    pub n_sentences: usize,
    pub avg_len: f64,
}

/// Sentences are identified by their token sequence, so the result does not
/// depend on sample order.
pub fn compute_stats(samples: &[Sample]) -> Result<SplitStats, CorpusError> {
    if samples.is_empty() {
        return Err(CorpusError::EmptySplit);
    }
    let positives = samples
        .iter()
        .filter(|s| s.label == Label::Metaphor)
        .count();
    let sentences: HashSet<&[String]> = samples.iter().map(|s| s.tokens.as_slice()).collect();
    let total_len: usize = sentences.iter().map(|t| t.len()).sum();
    Ok(SplitStats {
        n_targets: samples.len(),
        pct_metaphor: 100.0 * positives as f64 / samples.len() as f64,
        n_sentences: sentences.len(),
        avg_len: total_len as f64 / sentences.len() as f64,
    })
}

/// Published statistics of the standard benchmark splits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceStats {
    pub name: &'static str,
    pub n_targets: usize,
    pub pct_metaphor: f64,
    pub n_sentences: usize,
    pub avg_len: f64,
}

pub const REFERENCE_STATS: [ReferenceStats; 8] = [
    ReferenceStats {
        name: "vua_all_train",
        n_targets: 116_622,
        pct_metaphor: 11.19,
        n_sentences: 6_323,
        avg_len: 18.4,
    },
    ReferenceStats {
        name: "vua_all_dev",
        n_targets: 38_628,
        pct_metaphor: 11.62,
        n_sentences: 1_550,
        avg_len: 24.9,
    },
    ReferenceStats {
        name: "vua_all_test",
        n_targets: 50_175,
        pct_metaphor: 12.44,
        n_sentences: 2_694,
        avg_len: 18.6,
    },
    ReferenceStats {
        name: "vua_verb_train",
        n_targets: 15_516,
        pct_metaphor: 27.90,
        n_sentences: 7_479,
        avg_len: 20.2,
    },
    ReferenceStats {
        name: "vua_verb_dev",
        n_targets: 1_724,
        pct_metaphor: 26.91,
        n_sentences: 1_541,
        avg_len: 25.0,
    },
    ReferenceStats {
        name: "vua_verb_test",
        n_targets: 5_783,
        pct_metaphor: 29.98,
        n_sentences: 2_694,
        avg_len: 18.6,
    },
    ReferenceStats {
        name: "moh_x",
        n_targets: 647,
        pct_metaphor: 48.69,
        n_sentences: 647,
        avg_len: 8.0,
    },
    ReferenceStats {
        name: "trofi",
        n_targets: 3_737,
        pct_metaphor: 43.54,
        n_sentences: 3_737,
        avg_len: 28.3,
    },
];

pub fn reference_stats(name: &str) -> Option<&'static ReferenceStats> {
    REFERENCE_STATS.iter().find(|r| r.name == name)
}

impl ReferenceStats {
    /// Percentages are compared within 0.01, average length within 0.1.
    pub fn matches(&self, stats: &SplitStats) -> bool {
        self.n_targets == stats.n_targets
            && self.n_sentences == stats.n_sentences
            && (self.pct_metaphor - stats.pct_metaphor).abs() <= 0.01 + 1e-9
            && (self.avg_len - stats.avg_len).abs() <= 0.1 + 1e-9
    }
}

/// What a split may be used for. TroFi-style splits are evaluation only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    #[default]
    Any,
    TestOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ManifestEntry {
    Path(PathBuf),
    Detailed {
        path: PathBuf,
        #[serde(default)]
        format: Option<SplitFormat>,
        #[serde(default)]
        role: SplitRole,
    },
}

/// Maps split names to files. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub splits: BTreeMap<String, ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSplit {
    pub name: String,
    pub path: PathBuf,
    pub format: SplitFormat,
    pub role: SplitRole,
}

impl SplitManifest {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut manifest: SplitManifest =
            toml::from_str(&text).map_err(|e| CorpusError::Manifest {
                path: path.to_owned(),
                reason: e.to_string(),
            })?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn resolve(&self, name: &str) -> Result<ResolvedSplit, CorpusError> {
        let entry = self.splits.get(name).ok_or_else(|| CorpusError::Manifest {
            path: self.base_dir.clone(),
            reason: format!(
                "no split named `{name}` (available: {})",
                self.splits.keys().cloned().collect::<Vec<_>>().join(", ")
            ),
        })?;
        let (path, format, role) = match entry {
            ManifestEntry::Path(p) => (p.clone(), None, SplitRole::Any),
            ManifestEntry::Detailed { path, format, role } => (path.clone(), *format, *role),
        };
        let path = if path.is_absolute() {
            path
        } else {
            self.base_dir.join(path)
        };
        let format = match format {
            Some(f) => f,
            None => SplitFormat::from_path(&path)?,
        };
        Ok(ResolvedSplit {
            name: name.to_owned(),
            path,
            format,
            role,
        })
    }

    pub fn load_named(&self, name: &str) -> Result<(ResolvedSplit, LoadedSplit), CorpusError> {
        let resolved = self.resolve(name)?;
        let loaded = load_split(&resolved.path, resolved.format)?;
        Ok((resolved, loaded))
    }
}
