//! Cloze prompt construction: the seven hypernym patterns and the assembly
//! of model input from a sample's context plus an instantiated pattern.

use crate::corpus::{tokenize, Sample, Vocabulary, BLANK, MEND, MSTART};
use crate::error::{Error, Result};

/// Pattern templates in fixed id order. `<M>` is replaced by the mention's
/// tokens; `<BLANK>` becomes the blank special token.
pub const PATTERN_TEMPLATES: [&str; 7] = [
    "<M> is a <BLANK>",
    "<BLANK> such as <M>",
    "<M> is one of <BLANK>",
    "<BLANK> especially <M>",
    "<M> refers to <BLANK>",
    "<BLANK>, including <M>",
    "<M> is a member of <BLANK>",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pattern {
    pub id: usize,
    pub template: &'static str,
}

/// All seven patterns in id order.
pub fn patterns() -> Vec<Pattern> {
    PATTERN_TEMPLATES
        .iter()
        .enumerate()
        .map(|(id, template)| Pattern { id, template })
        .collect()
}

/// Model input for one sample: the context with the mention wrapped in
/// marker specials, followed by the instantiated pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptedInput {
    pub tokens: Vec<u32>,
    pub pattern_id: usize,
}

fn char_to_byte(text: &str, char_pos: usize) -> usize {
    text.char_indices()
        .nth(char_pos)
        .map(|(b, _)| b)
        .unwrap_or(text.len())
}

/// Builds the prompted input for `sample` under pattern `pattern_id`.
/// The context contributes its tokens with the mention span wrapped in
/// MSTART/MEND; the pattern contributes its words with `<M>` re-expanded to
/// the mention tokens and `<BLANK>` mapped to the blank special.
pub fn build(sample: &Sample, pattern_id: usize, vocab: &Vocabulary) -> Result<PromptedInput> {
    if pattern_id >= PATTERN_TEMPLATES.len() {
        return Err(Error::Config(format!(
            "pattern id {pattern_id} out of range 0..{}",
            PATTERN_TEMPLATES.len()
        )));
    }
    let (start, end) = sample.mention_span;
    let b_start = char_to_byte(&sample.text, start);
    let b_end = char_to_byte(&sample.text, end);
    let mut tokens = Vec::new();
    tokens.extend(tokenize(&sample.text[..b_start], vocab));
    tokens.push(MSTART);
    tokens.extend(tokenize(&sample.text[b_start..b_end], vocab));
    tokens.push(MEND);
    tokens.extend(tokenize(&sample.text[b_end..], vocab));

    let template = PATTERN_TEMPLATES[pattern_id];
    let mut rest = template;
    while !rest.is_empty() {
        if let Some(stripped) = rest.strip_prefix("<M>") {
            tokens.extend(tokenize(&sample.mention, vocab));
            rest = stripped;
        } else if let Some(stripped) = rest.strip_prefix("<BLANK>") {
            tokens.push(BLANK);
            rest = stripped;
        } else {
            let next = rest.find('<').unwrap_or(rest.len());
            tokens.extend(tokenize(&rest[..next], vocab));
            rest = &rest[next..];
        }
    }
    Ok(PromptedInput { tokens, pattern_id })
}
