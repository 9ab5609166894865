//! Synthetic corpora with a matching stub encoder.
//!
//! Every toy sample is a random sentence over a filler vocabulary with one
//! target word. The stub encoder's masked-LM head is pinned per masked
//! sentence: for literal samples it predicts the target word itself, for
//! metaphors it predicts a word from a separate "figurative" pool whose
//! embeddings share an offset direction. The label is therefore visible to
//! the prompt-driven MIP branch but not to the in-context target vector, which
//! makes the two MIP input sources diverge by construction.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{write_split, Label, Sample, SplitFormat};
use crate::encoder::{EncoderOptions, StubDescription, StubEncoder, BOS, EOS, MASK, UNK};
use crate::prompting::build_prompt;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub dim: usize,
    pub n_fillers: usize,
    pub n_targets: usize,
    pub n_figurative: usize,
    pub sentence_len: std::ops::RangeInclusive<usize>,
    /// Length of the shared offset added to figurative embeddings.
    pub signal: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            dim: 16,
            n_fillers: 60,
            n_targets: 12,
            n_figurative: 12,
            sentence_len: 4..=9,
            signal: 1.5,
            seed: 0,
        }
    }
}

/// Vocabulary, embeddings and mask predictions shared by all toy splits.
#[derive(Debug, Clone)]
pub struct ToyWorld {
    pub config: ToyConfig,
    fillers: Vec<String>,
    targets: Vec<String>,
    figurative: Vec<String>,
    vocab: Vec<String>,
    embeddings: Vec<Vec<f64>>,
    overrides: BTreeMap<String, Vec<f64>>,
    seen: HashSet<String>,
    rng: ChaCha8Rng,
    next_id: usize,
}

impl ToyWorld {
    pub fn new(config: ToyConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let words =
            |prefix: &str, n: usize| (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>();
        let fillers = words("f", config.n_fillers);
        let targets = words("t", config.n_targets);
        let figurative = words("m", config.n_figurative);
        let mut vocab: Vec<String> = [BOS, EOS, MASK, UNK]
            .iter()
            .map(|s| s.to_string())
            .collect();
        vocab.extend(fillers.iter().cloned());
        vocab.extend(targets.iter().cloned());
        vocab.extend(figurative.iter().cloned());

        let normal = Normal::new(0.0, 1.0 / (config.dim as f64).sqrt()).expect("valid normal");
        let mut direction: Vec<f64> = (0..config.dim).map(|_| normal.sample(&mut rng)).collect();
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        direction.iter_mut().for_each(|v| *v /= norm);
        let embeddings = vocab
            .iter()
            .map(|w| {
                let mut row: Vec<f64> = (0..config.dim).map(|_| normal.sample(&mut rng)).collect();
                if w.starts_with('m') {
                    row.iter_mut()
                        .zip(&direction)
                        .for_each(|(r, d)| *r += config.signal * d);
                }
                row
            })
            .collect();
        ToyWorld {
            config,
            fillers,
            targets,
            figurative,
            vocab,
            embeddings,
            overrides: BTreeMap::new(),
            seen: HashSet::new(),
            rng,
            next_id: 0,
        }
    }

    fn one_hot_logits(&self, word: &str) -> Vec<f64> {
        self.vocab
            .iter()
            .map(|w| if w == word { 8.0 } else { 0.0 })
            .collect()
    }

    /// Draws `n` fresh samples, each metaphorical with probability
    /// `positive_rate`. Sample ids are unique across calls.
    pub fn split(&mut self, prefix: &str, n: usize, positive_rate: f64) -> Vec<Sample> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let len = self.rng.random_range(self.config.sentence_len.clone());
            let target_index = self.rng.random_range(0..len);
            let mut tokens: Vec<String> = (0..len)
                .map(|_| self.fillers.choose(&mut self.rng).expect("fillers").clone())
                .collect();
            tokens[target_index] = self.targets.choose(&mut self.rng).expect("targets").clone();
            let label = if self.rng.random::<f64>() < positive_rate {
                Label::Metaphor
            } else {
                Label::Literal
            };
            let sample = Sample::new(
                format!("{prefix}-{}", self.next_id),
                tokens,
                target_index,
                "VERB",
                label,
            )
            .expect("toy sample is valid");
            let key = build_prompt(&sample).masked_sentence();
            if !self.seen.insert(key.clone()) {
                continue;
            }
            self.next_id += 1;
            let predicted = match label {
                Label::Literal => sample.target_word().to_owned(),
                Label::Metaphor => self
                    .figurative
                    .choose(&mut self.rng)
                    .expect("figurative")
                    .clone(),
            };
            self.overrides.insert(key, self.one_hot_logits(&predicted));
            out.push(sample);
        }
        out
    }

    /// Exactly `positives` metaphors among `n` samples, in shuffled order.
    pub fn split_exact(&mut self, prefix: &str, n: usize, positives: usize) -> Vec<Sample> {
        use rand::seq::SliceRandom;
        let mut pos = self.split(prefix, 0, 0.0);
        while pos.len() < positives {
            pos.extend(self.split(prefix, 1, 1.0));
        }
        while pos.len() < n {
            pos.extend(self.split(prefix, 1, 0.0));
        }
        pos.shuffle(&mut self.rng);
        pos
    }

    pub fn description(&self) -> StubDescription {
        StubDescription {
            name: format!("toy-{}-{}", self.config.dim, self.config.seed),
            vocab: self.vocab.clone(),
            embeddings: Some(self.embeddings.clone()),
            generate: None,
            mask_logits: None,
            context_weight: 0.0,
            mask_overrides: self.overrides.clone(),
            context_mix: 0.5,
            max_len: 512,
            options: EncoderOptions::default(),
        }
    }

    pub fn encoder(&self) -> StubEncoder {
        StubEncoder::from_description(self.description()).expect("toy description is valid")
    }

    /// Writes each split as TSV, a `manifest.toml` naming them and the stub
    /// encoder as `encoder.json` into `dir`. Returns the manifest path.
    pub fn write_corpus(
        &self,
        dir: &Path,
        splits: &[(&str, &[Sample])],
    ) -> std::io::Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let mut manifest = String::from("[splits]\n");
        for (name, samples) in splits {
            let file = format!("{name}.tsv");
            write_split(&dir.join(&file), samples, SplitFormat::Tsv)
                .map_err(std::io::Error::other)?;
            manifest.push_str(&format!("{name} = \"{file}\"\n"));
        }
        let path = dir.join("manifest.toml");
        fs::write(&path, manifest)?;
        self.description()
            .save(&dir.join("encoder.json"))
            .map_err(std::io::Error::other)?;
        Ok(path)
    }
}
