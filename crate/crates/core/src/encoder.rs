//! Masked-language-model encoder interface.
//!
//! The detector only needs four vectors per sample: the in-context target
//! vector, a sentence vector, the embedding of the word predicted at the mask
//! slot of the prompted input, and the target word encoded on its own. The
//! [`Encoder`] trait exposes exactly that; [`StubEncoder`] is a deterministic,
//! weight-file-free implementation built from a small JSON description.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Sample;
use crate::prompting::{build_prompt, PromptedInput};

pub const DEFAULT_HIDDEN_DIM: usize = 768;
pub const DEFAULT_MAX_LEN: usize = 512;
/// Environment variable naming the directory relative encoder paths resolve against.
pub const ENCODER_CACHE_ENV: &str = "METAPHOR_ENCODER_CACHE";

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const MASK: &str = "<mask>";
pub const UNK: &str = "<unk>";
const CONTINUATION: &str = "##";

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("sample {id}: {len} sub-words exceed the encoder limit of {max}")]
    Truncation { id: String, len: usize, max: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("target index {index} out of range for {len} tokens")]
    TargetIndex { index: usize, len: usize },
    #[error("stub encoder description: {0}")]
    Description(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown encoder `{0}` (expected `builtin` or `stub:<path>`)")]
    UnknownEncoder(String),
}

/// Where the sentence vector is read from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentencePooling {
    #[default]
    StartMarker,
    MeanTokens,
}

/// What stands in for the contextual meaning of the masked target.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMeaning {
    /// Input-embedding row of the highest-probability vocabulary entry.
    #[default]
    PredictedEmbedding,
    /// Contextual hidden state at the mask slot.
    MaskHidden,
}

/// How the literal vector of the target word is produced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiteralMode {
    /// The bare word as its own sequence, contextual vectors mean-pooled.
    #[default]
    Isolated,
    /// Mean of the raw input embeddings of its sub-words.
    Static,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderOptions {
    pub sentence_pooling: SentencePooling,
    pub context_meaning: ContextMeaning,
    pub literal: LiteralMode,
}

/// Plain sentence encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEncoding {
    /// One row per sub-word position, markers included.
    pub token_vectors: Array2<f64>,
    pub sentence_vector: Array1<f64>,
    /// Mean over the sub-word span of the target word.
    pub target_vector: Array1<f64>,
    pub target_span: Range<usize>,
    /// Word index of every sub-word position (`None` for markers).
    pub word_ids: Vec<Option<usize>>,
}

/// Result of running the prompted input through the masked-LM head.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPrediction {
    pub distribution: Array1<f64>,
    pub predicted_id: usize,
    pub predicted_token: String,
    pub context_meaning_vector: Array1<f64>,
    /// Words dropped from the left and right context to fit the length limit.
    pub trimmed: (usize, usize),
}

/// Everything the detector consumes for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderOutputs {
    pub target_vector: Vec<f64>,
    pub sentence_vector: Vec<f64>,
    pub context_meaning_vector: Vec<f64>,
    pub literal_vector: Vec<f64>,
    pub predicted_token: String,
    pub predicted_prob: f64,
}

pub trait Encoder: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn encode_sentence(
        &self,
        sample_id: &str,
        tokens: &[String],
        target_index: usize,
    ) -> Result<SentenceEncoding, EncoderError>;

    fn predict_mask(
        &self,
        sample_id: &str,
        prompted: &PromptedInput,
    ) -> Result<MaskPrediction, EncoderError>;

    fn encode_literal(&self, target_word: &str) -> Result<Array1<f64>, EncoderError>;

    /// Runs both branches' encoder passes for one sample.
    fn featurize(&self, sample: &Sample) -> Result<EncoderOutputs, EncoderError> {
        let enc = self.encode_sentence(&sample.id, &sample.tokens, sample.target_index)?;
        let pred = self.predict_mask(&sample.id, &build_prompt(sample))?;
        let literal = self.encode_literal(sample.target_word())?;
        Ok(EncoderOutputs {
            target_vector: enc.target_vector.to_vec(),
            sentence_vector: enc.sentence_vector.to_vec(),
            predicted_prob: pred.distribution[pred.predicted_id],
            context_meaning_vector: pred.context_meaning_vector.to_vec(),
            literal_vector: literal.to_vec(),
            predicted_token: pred.predicted_token,
        })
    }
}

/// Softmax with max subtraction. Exposed for the masked-LM head.
pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// JSON description of a stub encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StubDescription {
    #[serde(default = "default_stub_name")]
    pub name: String,
    pub vocab: Vec<String>,
    /// One row per vocabulary entry. When absent, rows are drawn from
    /// `generate`.
    #[serde(default)]
    pub embeddings: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub generate: Option<GenerateSpec>,
    /// Fixed bias of the masked-LM head, one entry per vocabulary id.
    #[serde(default)]
    pub mask_logits: Option<Vec<f64>>,
    /// Scale of the bag-of-context term added to the mask logits.
    #[serde(default)]
    pub context_weight: f64,
    /// Per masked sentence (`before [MASK] after`) logits that replace the
    /// computed ones.
    #[serde(default)]
    pub mask_overrides: BTreeMap<String, Vec<f64>>,
    /// Weight of the sequence mean mixed into every contextual vector.
    #[serde(default = "default_context_mix")]
    pub context_mix: f64,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default)]
    pub options: EncoderOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerateSpec {
    pub dim: usize,
    pub seed: u64,
}

fn default_stub_name() -> String {
    "stub".into()
}

fn default_context_mix() -> f64 {
    0.5
}

fn default_max_len() -> usize {
    DEFAULT_MAX_LEN
}

impl StubDescription {
    /// Vocabulary of the four markers followed by `words` (deduplicated,
    /// sorted) with Gaussian embeddings of the given width.
    pub fn generated<I, S>(words: I, dim: usize, seed: u64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab: Vec<String> = [BOS, EOS, MASK, UNK]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let specials: BTreeSet<String> = vocab.iter().cloned().collect();
        let words: BTreeSet<String> = words
            .into_iter()
            .map(|w| w.as_ref().to_owned())
            .filter(|w| !specials.contains(w))
            .collect();
        vocab.extend(words);
        StubDescription {
            name: format!("builtin-{dim}"),
            vocab,
            embeddings: None,
            generate: Some(GenerateSpec { dim, seed }),
            mask_logits: None,
            context_weight: 1.0,
            mask_overrides: BTreeMap::new(),
            context_mix: default_context_mix(),
            max_len: DEFAULT_MAX_LEN,
            options: EncoderOptions::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        let text = fs::read_to_string(path).map_err(|source| EncoderError::Io {
            path: path.to_owned(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| EncoderError::Description(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        let text = serde_json::to_string_pretty(self).expect("description serializes");
        fs::write(path, text).map_err(|source| EncoderError::Io {
            path: path.to_owned(),
            source,
        })
    }
}

/// Deterministic encoder with a word-piece vocabulary and fixed weights.
///
/// Contextual vectors are `e_i + mix * mean(e)` over the whole sequence, the
/// masked-LM head scores vocabulary entries by a fixed bias plus
/// `context_weight * <e_v, mean context embedding>`.
#[derive(Debug, Clone)]
pub struct StubEncoder {
    name: String,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    embeddings: Array2<f64>,
    mask_bias: Array1<f64>,
    context_weight: f64,
    mask_overrides: BTreeMap<String, Array1<f64>>,
    context_mix: f64,
    max_len: usize,
    options: EncoderOptions,
    bos: usize,
    eos: usize,
    mask: usize,
    unk: usize,
}

impl StubEncoder {
    pub fn from_description(desc: StubDescription) -> Result<Self, EncoderError> {
        let bad = |m: String| EncoderError::Description(m);
        if desc.vocab.is_empty() {
            return Err(bad("empty vocabulary".into()));
        }
        let mut index = HashMap::with_capacity(desc.vocab.len());
        for (i, w) in desc.vocab.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(bad(format!("duplicate vocabulary entry `{w}`")));
            }
        }
        let special = |s: &str| {
            index
                .get(s)
                .copied()
                .ok_or_else(|| bad(format!("vocabulary lacks `{s}`")))
        };
        let (bos, eos, mask, unk) = (special(BOS)?, special(EOS)?, special(MASK)?, special(UNK)?);
        let v = desc.vocab.len();
        let embeddings = match (&desc.embeddings, desc.generate) {
            (Some(rows), _) => {
                if rows.len() != v {
                    return Err(bad(format!(
                        "{} embedding rows for {v} vocabulary entries",
                        rows.len()
                    )));
                }
                let dim = rows[0].len();
                if dim == 0 || rows.iter().any(|r| r.len() != dim) {
                    return Err(bad("embedding rows must share one non-zero width".into()));
                }
                Array2::from_shape_vec((v, dim), rows.concat()).expect("shape checked")
            }
            (None, Some(GenerateSpec { dim, seed })) => {
                if dim == 0 {
                    return Err(bad("generated dimension must be positive".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid normal");
                Array2::from_shape_simple_fn((v, dim), || normal.sample(&mut rng))
            }
            (None, None) => {
                return Err(bad("either `embeddings` or `generate` is required".into()))
            }
        };
        if embeddings.iter().any(|x| !x.is_finite()) {
            return Err(bad("non-finite embedding value".into()));
        }
        let mask_bias = match desc.mask_logits {
            Some(l) if l.len() != v => {
                return Err(bad(format!(
                    "{} mask logits for {v} vocabulary entries",
                    l.len()
                )))
            }
            Some(l) => Array1::from(l),
            None => Array1::zeros(v),
        };
        let mut mask_overrides = BTreeMap::new();
        for (k, l) in desc.mask_overrides {
            if l.len() != v {
                return Err(bad(format!(
                    "override `{k}` has {} logits for {v} entries",
                    l.len()
                )));
            }
            mask_overrides.insert(k, Array1::from(l));
        }
        if desc.max_len < 3 {
            return Err(bad(
                "max_len must leave room for the sequence markers".into()
            ));
        }
        Ok(StubEncoder {
            name: desc.name,
            vocab: desc.vocab,
            index,
            embeddings,
            mask_bias,
            context_weight: desc.context_weight,
            mask_overrides,
            context_mix: desc.context_mix,
            max_len: desc.max_len,
            options: desc.options,
            bos,
            eos,
            mask,
            unk,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        Self::from_description(StubDescription::load(path)?)
    }

    pub fn with_options(mut self, options: EncoderOptions) -> Self {
        self.options = options;
        self
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn token_id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn embedding(&self, id: usize) -> ArrayView1<'_, f64> {
        self.embeddings.row(id)
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Greedy longest-match word-piece split. Unknown words become one
    /// `<unk>` piece.
    pub fn subword_ids(&self, word: &str) -> Vec<usize> {
        if let Some(&id) = self.index.get(word) {
            return vec![id];
        }
        let mut out = Vec::new();
        let mut rest = word;
        let mut first = true;
        while !rest.is_empty() {
            let mut found = None;
            let mut ends: Vec<usize> = rest.char_indices().map(|(i, _)| i).skip(1).collect();
            ends.push(rest.len());
            for &end in ends.iter().rev() {
                let piece = &rest[..end];
                let key = if first {
                    piece.to_owned()
                } else {
                    format!("{CONTINUATION}{piece}")
                };
                if let Some(&id) = self.index.get(&key) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    out.push(id);
                    rest = &rest[end..];
                    first = false;
                }
                None => return vec![self.unk],
            }
        }
        out
    }

    fn contextualize(&self, ids: &[usize]) -> Array2<f64> {
        let mut rows = self.embeddings.select(Axis(0), ids);
        let mean = rows.mean_axis(Axis(0)).expect("non-empty sequence");
        let mix = &mean * self.context_mix;
        for mut row in rows.rows_mut() {
            row += &mix;
        }
        rows
    }

    /// `<s> words... </s>` with the word index of every position.
    fn sequence(&self, words: &[String]) -> (Vec<usize>, Vec<Option<usize>>) {
        let mut ids = vec![self.bos];
        let mut word_ids = vec![None];
        for (w, word) in words.iter().enumerate() {
            for id in self.subword_ids(word) {
                ids.push(id);
                word_ids.push(Some(w));
            }
        }
        ids.push(self.eos);
        word_ids.push(None);
        (ids, word_ids)
    }

    fn pooled(&self, states: &Array2<f64>, span: Range<usize>) -> Array1<f64> {
        states
            .slice(ndarray::s![span, ..])
            .mean_axis(Axis(0))
            .expect("non-empty span")
    }

    fn prompt_sequence(&self, prompted: &PromptedInput) -> (Vec<usize>, usize) {
        let mut ids = vec![self.bos];
        let push_words = |ids: &mut Vec<usize>, words: &[String]| {
            for w in words {
                ids.extend(self.subword_ids(w));
            }
        };
        push_words(&mut ids, prompted.arg1());
        push_words(&mut ids, prompted.before());
        let mask_at = ids.len();
        ids.push(self.mask);
        push_words(&mut ids, prompted.after());
        push_words(&mut ids, prompted.arg2());
        ids.push(self.eos);
        (ids, mask_at)
    }

    fn subword_len(&self, words: &[String]) -> usize {
        words.iter().map(|w| self.subword_ids(w).len()).sum()
    }

    /// Trims the longer context side first until the prompted sequence fits.
    fn fit_prompt(
        &self,
        sample_id: &str,
        prompted: &PromptedInput,
    ) -> Result<(PromptedInput, (usize, usize)), EncoderError> {
        let fixed = 3 + self.subword_len(prompted.arg1()) + self.subword_len(prompted.arg2());
        let before: Vec<usize> = prompted
            .before()
            .iter()
            .map(|w| self.subword_ids(w).len())
            .collect();
        let after: Vec<usize> = prompted
            .after()
            .iter()
            .map(|w| self.subword_ids(w).len())
            .collect();
        let total = fixed + before.iter().sum::<usize>() + after.iter().sum::<usize>();
        if total <= self.max_len {
            return Ok((prompted.clone(), (0, 0)));
        }
        if fixed > self.max_len {
            return Err(EncoderError::Truncation {
                id: sample_id.to_owned(),
                len: total,
                max: self.max_len,
            });
        }
        let (mut lo, mut hi) = (0usize, after.len());
        let mut before_len: usize = before.iter().sum();
        let mut after_len: usize = after.iter().sum();
        while fixed + before_len + after_len > self.max_len {
            let left_words = before.len() - lo;
            let right_words = hi;
            if left_words >= right_words && left_words > 0 {
                before_len -= before[lo];
                lo += 1;
            } else {
                hi -= 1;
                after_len -= after[hi];
            }
        }
        let trimmed = (lo, after.len() - hi);
        Ok((prompted.trim_context(trimmed.0, trimmed.1), trimmed))
    }

    fn mask_logits(&self, prompted: &PromptedInput, ids: &[usize], mask_at: usize) -> Array1<f64> {
        if let Some(l) = self.mask_overrides.get(&prompted.masked_sentence()) {
            return l.clone();
        }
        if self.context_weight == 0.0 {
            return self.mask_bias.clone();
        }
        let context: Vec<usize> = ids[1..ids.len() - 1]
            .iter()
            .enumerate()
            .filter(|&(i, _)| i + 1 != mask_at)
            .map(|(_, &id)| id)
            .collect();
        let ctx = self
            .embeddings
            .select(Axis(0), &context)
            .mean_axis(Axis(0))
            .unwrap_or_else(|| Array1::zeros(self.dim()));
        &self.mask_bias + &(self.embeddings.dot(&ctx) * self.context_weight)
    }
}

impl Encoder for StubEncoder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    fn encode_sentence(
        &self,
        sample_id: &str,
        tokens: &[String],
        target_index: usize,
    ) -> Result<SentenceEncoding, EncoderError> {
        if tokens.is_empty() {
            return Err(EncoderError::Argument("empty token sequence".into()));
        }
        if target_index >= tokens.len() {
            return Err(EncoderError::TargetIndex {
                index: target_index,
                len: tokens.len(),
            });
        }
        let (ids, word_ids) = self.sequence(tokens);
        if ids.len() > self.max_len {
            return Err(EncoderError::Truncation {
                id: sample_id.to_owned(),
                len: ids.len(),
                max: self.max_len,
            });
        }
        let states = self.contextualize(&ids);
        let start = word_ids
            .iter()
            .position(|w| *w == Some(target_index))
            .expect("every word has a piece");
        let end = start
            + word_ids[start..]
                .iter()
                .take_while(|w| **w == Some(target_index))
                .count();
        let sentence_vector = match self.options.sentence_pooling {
            SentencePooling::StartMarker => states.row(0).to_owned(),
            SentencePooling::MeanTokens => self.pooled(&states, 1..ids.len() - 1),
        };
        Ok(SentenceEncoding {
            target_vector: self.pooled(&states, start..end),
            sentence_vector,
            token_vectors: states,
            target_span: start..end,
            word_ids,
        })
    }

    fn predict_mask(
        &self,
        sample_id: &str,
        prompted: &PromptedInput,
    ) -> Result<MaskPrediction, EncoderError> {
        prompted
            .check()
            .map_err(|e| EncoderError::Argument(e.to_string()))?;
        let (fitted, trimmed) = self.fit_prompt(sample_id, prompted)?;
        let (ids, mask_at) = self.prompt_sequence(&fitted);
        let logits = self.mask_logits(prompted, &ids, mask_at);
        let distribution = softmax(logits.view());
        let predicted_id = argmax(distribution.view());
        let context_meaning_vector = match self.options.context_meaning {
            ContextMeaning::PredictedEmbedding => self.embeddings.row(predicted_id).to_owned(),
            ContextMeaning::MaskHidden => self.contextualize(&ids).row(mask_at).to_owned(),
        };
        Ok(MaskPrediction {
            predicted_token: self.vocab[predicted_id].clone(),
            distribution,
            predicted_id,
            context_meaning_vector,
            trimmed,
        })
    }

    fn encode_literal(&self, target_word: &str) -> Result<Array1<f64>, EncoderError> {
        if target_word.is_empty() {
            return Err(EncoderError::Argument("empty target word".into()));
        }
        let pieces = self.subword_ids(target_word);
        Ok(match self.options.literal {
            LiteralMode::Isolated => {
                let mut ids = vec![self.bos];
                ids.extend(&pieces);
                ids.push(self.eos);
                let states = self.contextualize(&ids);
                self.pooled(&states, 1..ids.len() - 1)
            }
            LiteralMode::Static => self
                .embeddings
                .select(Axis(0), &pieces)
                .mean_axis(Axis(0))
                .expect("at least one piece"),
        })
    }
}

/// Encoder selector as written in configuration files: `builtin` or
/// `stub:<path>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EncoderSpec {
    /// Generated stub over the corpus vocabulary.
    Builtin {
        dim: usize,
        seed: u64,
    },
    Stub(PathBuf),
}

impl EncoderSpec {
    pub fn parse(name: &str, dim: usize, seed: u64) -> Result<Self, EncoderError> {
        if name == "builtin" {
            Ok(EncoderSpec::Builtin { dim, seed })
        } else if let Some(path) = name.strip_prefix("stub:") {
            Ok(EncoderSpec::Stub(PathBuf::from(path)))
        } else {
            Err(EncoderError::UnknownEncoder(name.to_owned()))
        }
    }

    /// Relative stub paths are tried as given, then under `base`, then under
    /// the encoder cache directory.
    pub fn resolve_path(path: &Path, base: Option<&Path>) -> PathBuf {
        if path.is_absolute() || path.exists() {
            return path.to_owned();
        }
        if let Some(b) = base {
            let p = b.join(path);
            if p.exists() {
                return p;
            }
        }
        if let Some(dir) = std::env::var_os(ENCODER_CACHE_ENV) {
            let p = Path::new(&dir).join(path);
            if p.exists() {
                return p;
            }
        }
        path.to_owned()
    }
}
