//! Prompt template for the masked-target MIP input.
//!
//! The sentence is split around the target word, the target is replaced by a
//! mask slot, and two fixed carrier phrases naming the target word are put in
//! front of and behind it:
//!
//! ```text
//! ARG1 ++ tokens[..t] ++ [MASK] ++ tokens[t+1..] ++ ARG2
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Sample;

/// Placeholder replaced by the literal target word.
pub const TARGET_SLOT: &str = "{target}";
pub const ARG1_TEMPLATE: &str =
    "The blank word could be {target} or something more appropriate word.";
pub const ARG2_TEMPLATE: &str = "The blank word could be {target}.";
/// Surface form of the mask slot in rendered templates.
pub const MASK_TEXT: &str = "[MASK]";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("malformed prompt: {0}")]
    Structure(String),
}

/// One segment of the flattened template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "tokens", rename_all = "snake_case")]
pub enum Piece {
    Arg1(Vec<String>),
    Before(Vec<String>),
    Mask,
    After(Vec<String>),
    Arg2(Vec<String>),
}

impl Piece {
    pub fn tokens(&self) -> &[String] {
        match self {
            Piece::Arg1(t) | Piece::Before(t) | Piece::After(t) | Piece::Arg2(t) => t,
            Piece::Mask => &[],
        }
    }

    /// Number of flattened token slots, counting the mask as one.
    pub fn width(&self) -> usize {
        match self {
            Piece::Mask => 1,
            other => other.tokens().len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptedInput {
    pub pieces: Vec<Piece>,
    pub mask_position: usize,
    /// Flattened positions where the literal target word sits inside the two
    /// carrier phrases.
    pub tar_positions: [usize; 2],
    pub target_word: String,
}

fn render_arg(template: &str, target: &str) -> Vec<String> {
    template
        .split(' ')
        .map(|w| w.replace(TARGET_SLOT, target))
        .collect()
}

/// The template word holding the target slot, rendered for `target`.
fn slot_word(template: &str, target: &str) -> String {
    render_arg(template, target).swap_remove(slot_offset(template))
}

fn slot_offset(template: &str) -> usize {
    template
        .split(' ')
        .position(|w| w.contains(TARGET_SLOT))
        .expect("template carries a target slot")
}

pub fn build_prompt(sample: &Sample) -> PromptedInput {
    let t = sample.target_index;
    let target = sample.target_word();
    let arg1 = render_arg(ARG1_TEMPLATE, target);
    let before = sample.tokens[..t].to_vec();
    let after = sample.tokens[t + 1..].to_vec();
    let arg2 = render_arg(ARG2_TEMPLATE, target);

    let mask_position = arg1.len() + before.len();
    let arg2_start = mask_position + 1 + after.len();
    let tar_positions = [
        slot_offset(ARG1_TEMPLATE),
        arg2_start + slot_offset(ARG2_TEMPLATE),
    ];
    PromptedInput {
        pieces: vec![
            Piece::Arg1(arg1),
            Piece::Before(before),
            Piece::Mask,
            Piece::After(after),
            Piece::Arg2(arg2),
        ],
        mask_position,
        tar_positions,
        target_word: target.to_owned(),
    }
}

impl PromptedInput {
    fn piece(&self, index: usize) -> &Piece {
        &self.pieces[index]
    }

    pub fn arg1(&self) -> &[String] {
        self.piece(0).tokens()
    }

    pub fn before(&self) -> &[String] {
        self.piece(1).tokens()
    }

    pub fn after(&self) -> &[String] {
        self.piece(3).tokens()
    }

    pub fn arg2(&self) -> &[String] {
        self.piece(4).tokens()
    }

    /// Flattened tokens with `None` at the mask slot.
    pub fn flatten(&self) -> Vec<Option<&str>> {
        let mut out = Vec::with_capacity(self.len());
        for piece in &self.pieces {
            match piece {
                Piece::Mask => out.push(None),
                other => out.extend(other.tokens().iter().map(|t| Some(t.as_str()))),
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.pieces.iter().map(Piece::width).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mask_count(&self) -> usize {
        self.pieces
            .iter()
            .filter(|p| matches!(p, Piece::Mask))
            .count()
    }

    /// The masked sentence without carrier phrases, e.g. `We must [MASK] the gap`.
    pub fn masked_sentence(&self) -> String {
        let mut words: Vec<&str> = self.before().iter().map(String::as_str).collect();
        words.push(MASK_TEXT);
        words.extend(self.after().iter().map(String::as_str));
        words.join(" ")
    }

    pub fn render(&self) -> String {
        self.flatten()
            .into_iter()
            .map(|t| t.unwrap_or(MASK_TEXT))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Checks the structural invariants: five pieces in template order,
    /// exactly one mask, and consistent bookkeeping positions.
    pub fn check(&self) -> Result<(), PromptError> {
        let order_ok = matches!(
            self.pieces.as_slice(),
            [
                Piece::Arg1(_),
                Piece::Before(_),
                Piece::Mask,
                Piece::After(_),
                Piece::Arg2(_)
            ]
        );
        if !order_ok {
            return Err(PromptError::Structure(
                "expected pieces [arg1, before, mask, after, arg2]".into(),
            ));
        }
        if self.mask_count() != 1 {
            return Err(PromptError::Structure(format!(
                "{} mask slots",
                self.mask_count()
            )));
        }
        let mask_at = self.arg1().len() + self.before().len();
        if self.mask_position != mask_at {
            return Err(PromptError::Structure(format!(
                "mask_position {} but mask sits at {mask_at}",
                self.mask_position
            )));
        }
        let flat = self.flatten();
        for (&pos, template) in self
            .tar_positions
            .iter()
            .zip([ARG1_TEMPLATE, ARG2_TEMPLATE])
        {
            let expected = slot_word(template, &self.target_word);
            if flat.get(pos).copied().flatten() != Some(expected.as_str()) {
                return Err(PromptError::Structure(format!(
                    "target position {pos} does not hold `{}`",
                    self.target_word
                )));
            }
        }
        Ok(())
    }

    /// Drops `n_before` tokens from the far end of the left context and
    /// `n_after` from the far end of the right context.
    pub fn trim_context(&self, n_before: usize, n_after: usize) -> PromptedInput {
        let before = self.before();
        let after = self.after();
        let before = before[n_before.min(before.len())..].to_vec();
        let after = after[..after.len() - n_after.min(after.len())].to_vec();
        let mask_position = self.arg1().len() + before.len();
        let tar_positions = [
            self.tar_positions[0],
            mask_position + 1 + after.len() + slot_offset(ARG2_TEMPLATE),
        ];
        PromptedInput {
            pieces: vec![
                self.pieces[0].clone(),
                Piece::Before(before),
                Piece::Mask,
                Piece::After(after),
                self.pieces[4].clone(),
            ],
            mask_position,
            tar_positions,
            target_word: self.target_word.clone(),
        }
    }
}

impl fmt::Display for PromptedInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Recovers the sentence with `filler` written into the mask slot.
pub fn strip_prompt(prompted: &PromptedInput, filler: &str) -> Result<Vec<String>, PromptError> {
    prompted.check()?;
    let mut tokens = prompted.before().to_vec();
    tokens.push(filler.to_owned());
    tokens.extend_from_slice(prompted.after());
    Ok(tokens)
}
