//! Token-level metaphor detection.
//!
//! A target word is classified as metaphorical or literal by two branches
//! sharing one encoder: an SPV branch that contrasts the target with its
//! sentence, and a MIP branch that contrasts the word a masked language model
//! predicts for the target slot (under a fixed prompt template) with the
//! target's literal meaning. Training blends ground-truth cross entropy with a
//! temperature-scaled KL term against cached teacher logits.

pub mod cli;
pub mod corpus;
pub mod detector;
pub mod distill;
pub mod encoder;
pub mod harness;
pub mod prompting;
pub mod toy;
