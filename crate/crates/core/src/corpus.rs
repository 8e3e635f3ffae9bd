//! Corpus handling: dataset records, tokenization, vocabulary construction,
//! flattening into per-type training units, and a deterministic synthetic
//! corpus generator.
//!
//! A dataset is JSON Lines, one record per line with keys `text`, `mention`,
//! `span` (`[start, end)` character offsets into `text`), `types` (non-empty
//! list of type phrases) and `source` (`"auto"` or `"human"`). Unknown keys
//! are ignored. Ingestion normalizes phrases (lowercase, whitespace collapse)
//! and rejects malformed records with the offending line number.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const BLANK: u32 = 3;
pub const MSTART: u32 = 4;
pub const MEND: u32 = 5;
pub const UNK: u32 = 6;

/// Reserved token ids `0..7`; text tokenization never produces these.
pub const NUM_SPECIALS: usize = 7;

pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = [
    "<pad>", "<bos>", "<eos>", "<blank>", "<mstart>", "<mend>", "<unk>",
];

/// Where a record's type annotations came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Auto,
    Human,
}

/// One dataset record: a text with one marked mention and its type phrases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub text: String,
    pub mention: String,
    /// `[start, end)` character offsets of the mention in `text`.
    #[serde(rename = "span")]
    pub mention_span: (usize, usize),
    pub types: Vec<String>,
    pub source: Source,
}

/// Curriculum subset of a training unit: `A` = auto-sourced one-word types,
/// `B` = auto-sourced multi-word types, `C` = human-sourced types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subset {
    A,
    B,
    C,
}

/// One (instance, type) pair: the unit selection and weighting operate on.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainUnit {
    /// Index of the owning sample in corpus order.
    pub sample_id: usize,
    /// Index into the owning sample's `types`.
    pub type_index: usize,
    /// Token ids of the type phrase, without the end-of-sequence token.
    pub type_tokens: Vec<u32>,
    pub subset: Subset,
    /// Whitespace-token count of the type phrase as annotated.
    pub type_length: usize,
}

/// Token-id mapping with the seven reserved specials at ids `0..7`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from non-special tokens, in the given order,
    /// prepending the reserved specials.
    pub fn from_tokens(non_special: Vec<String>) -> Vocabulary {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(non_special);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    /// All tokens in id order (specials first).
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_SPECIALS
    }
}

/// Lowercases and splits text into alphanumeric runs; every other
/// non-whitespace character becomes its own single-character token.
pub fn split_tokens(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    let mut run = String::new();
    for ch in lower.chars() {
        if ch.is_alphanumeric() {
            run.push(ch);
        } else {
            if !run.is_empty() {
                out.push(std::mem::take(&mut run));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !run.is_empty() {
        out.push(run);
    }
    out
}

/// Tokenizes text against a vocabulary; out-of-vocabulary tokens map to UNK.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<u32> {
    split_tokens(text)
        .iter()
        .map(|t| vocab.id_or_unk(t))
        .collect()
}

/// Lowercase, collapse runs of whitespace to single spaces, trim.
pub fn normalize_phrase(phrase: &str) -> String {
    phrase
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Builds a vocabulary over every token whose corpus frequency (counted over
/// sample texts and type phrases) is at least `min_freq`, ordered by
/// descending frequency then ascending token.
pub fn build_vocab(samples: &[Sample], min_freq: usize) -> Vocabulary {
    let mut freq: HashMap<String, usize> = HashMap::new();
    for s in samples {
        for t in split_tokens(&s.text) {
            *freq.entry(t).or_insert(0) += 1;
        }
        for ty in &s.types {
            for t in split_tokens(ty) {
                *freq.entry(t).or_insert(0) += 1;
            }
        }
    }
    let mut entries: Vec<(String, usize)> = freq.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let kept = entries
        .into_iter()
        .filter(|(_, f)| *f >= min_freq)
        .map(|(t, _)| t)
        .collect();
    Vocabulary::from_tokens(kept)
}

fn char_len(text: &str) -> usize {
    text.chars().count()
}

fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end - start).collect()
}

fn validate_sample(mut s: Sample, line: usize) -> Result<Sample> {
    let fail = |message: String| Error::Ingest { line, message };
    s.text = s.text.to_lowercase();
    s.mention = normalize_phrase(&s.mention);
    if s.mention.is_empty() {
        return Err(fail("mention is empty".to_string()));
    }
    let (start, end) = s.mention_span;
    let len = char_len(&s.text);
    if start >= end || end > len {
        return Err(fail(format!(
            "span [{start}, {end}) out of bounds for text of {len} chars"
        )));
    }
    let spanned = normalize_phrase(&char_slice(&s.text, start, end));
    if spanned != s.mention {
        return Err(fail(format!(
            "span text {spanned:?} does not match mention {:?}",
            s.mention
        )));
    }
    let mut types = Vec::new();
    for raw in &s.types {
        let ty = normalize_phrase(raw);
        if ty.is_empty() {
            return Err(fail("empty type phrase".to_string()));
        }
        if !types.contains(&ty) {
            types.push(ty);
        }
    }
    if types.is_empty() {
        return Err(fail("record has no types".to_string()));
    }
    s.types = types;
    Ok(s)
}

/// Reads and validates a JSON Lines dataset. Blank lines are skipped; any
/// malformed record fails with its 1-based line number.
pub fn ingest<R: BufRead>(reader: R) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: Sample = serde_json::from_str(&line).map_err(|e| Error::Ingest {
            line: line_no,
            message: e.to_string(),
        })?;
        samples.push(validate_sample(raw, line_no)?);
    }
    Ok(samples)
}

/// Writes samples as JSON Lines; the inverse of [`ingest`] on normalized data.
pub fn serialize<W: Write>(samples: &[Sample], mut writer: W) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut writer, s)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Whitespace-token count of a normalized type phrase.
pub fn type_word_count(ty: &str) -> usize {
    ty.split_whitespace().count()
}

/// Longest type-token sequence kept at flattening, so the training target
/// (type tokens plus the end token) fits the model's maximum target length.
pub const MAX_TYPE_TOKENS: usize = 7;

/// Flattens samples into one unit per (instance, type) pair. Human-sourced
/// units go to subset C; auto-sourced units split on type length (one word
/// to A, longer to B).
pub fn flatten(samples: &[Sample], vocab: &Vocabulary) -> Vec<TrainUnit> {
    let mut units = Vec::new();
    for (sample_id, s) in samples.iter().enumerate() {
        for (type_index, ty) in s.types.iter().enumerate() {
            let type_length = type_word_count(ty);
            let mut type_tokens = tokenize(ty, vocab);
            type_tokens.truncate(MAX_TYPE_TOKENS);
            let subset = match (s.source, type_length) {
                (Source::Human, _) => Subset::C,
                (Source::Auto, 1) => Subset::A,
                (Source::Auto, _) => Subset::B,
            };
            units.push(TrainUnit {
                sample_id,
                type_index,
                type_tokens,
                subset,
                type_length,
            });
        }
    }
    units
}

struct SynthClass {
    names: [&'static str; 4],
    prefix: &'static str,
    suffix: &'static str,
    one_word: &'static str,
    two_word: &'static str,
    three_word: &'static str,
}

const SYNTH_CLASSES: [SynthClass; 6] = [
    SynthClass {
        names: ["pragmo", "lavex", "sudsia", "brightco"],
        prefix: "in the early 1980s ",
        suffix: " tried to launch a concentrated detergent under its own brand in europe",
        one_word: "company",
        two_word: "detergent company",
        three_word: "large detergent company",
    },
    SynthClass {
        names: ["norvia", "svealand", "fjordia", "nordheim"],
        prefix: "",
        suffix: " is a land of deep fjords where the northern lights appear every winter",
        one_word: "nation",
        two_word: "nordic country",
        three_word: "cold nordic country",
    },
    SynthClass {
        names: ["portvik", "havenby", "marstrand", "kaivopuri"],
        prefix: "ships from many nations dock at ",
        suffix: " because its harbour stays open all year",
        one_word: "city",
        two_word: "port city",
        three_word: "busy port city",
    },
    SynthClass {
        names: ["finback", "greyfin", "bluecrest", "seawhisk"],
        prefix: "the ",
        suffix: " swims along the coast and surfaces to breathe near fishing boats",
        one_word: "animal",
        two_word: "marine mammal",
        three_word: "large marine mammal",
    },
    SynthClass {
        names: ["sunpome", "citrella", "dulcema", "tangora"],
        prefix: "farmers harvest the sweet ",
        suffix: " from orchards on the warm southern slopes",
        one_word: "fruit",
        two_word: "citrus fruit",
        three_word: "sweet citrus fruit",
    },
    SynthClass {
        names: ["kastball", "ringspel", "snowkamp", "icerace"],
        prefix: "teams from six towns meet on frozen lakes to play ",
        suffix: " every february",
        one_word: "sport",
        two_word: "team sport",
        three_word: "winter team sport",
    },
];

/// Generates a deterministic synthetic corpus of templated texts whose
/// context tokens identify each entity's true types. `length_mix` is the
/// probability that an auto-sourced type slot draws a multi-word type;
/// human-sourced samples draw multi-word types with probability
/// `(1 + length_mix) / 2`. `human_frac` of samples are marked human.
pub fn synth_corpus(
    seed: u64,
    n_samples: usize,
    length_mix: f64,
    human_frac: f64,
) -> Result<Vec<Sample>> {
    if !(0.0..=1.0).contains(&length_mix) {
        return Err(Error::Config(format!(
            "length_mix must be in [0, 1], got {length_mix}"
        )));
    }
    if !(0.0..=1.0).contains(&human_frac) {
        return Err(Error::Config(format!(
            "human_frac must be in [0, 1], got {human_frac}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let class = &SYNTH_CLASSES[rng.gen_range(0..SYNTH_CLASSES.len())];
        let name = class.names[rng.gen_range(0..class.names.len())];
        let human = rng.gen_bool(human_frac);
        let p_multi = if human {
            (1.0 + length_mix) / 2.0
        } else {
            length_mix
        };
        let slots = 1 + rng.gen_range(0..2usize);
        let mut types = Vec::new();
        for _ in 0..slots {
            let ty = if rng.gen_bool(p_multi) {
                if rng.gen_bool(0.5) {
                    class.three_word
                } else {
                    class.two_word
                }
            } else {
                class.one_word
            };
            let ty = ty.to_string();
            if !types.contains(&ty) {
                types.push(ty);
            }
        }
        let start = char_len(class.prefix);
        let end = start + char_len(name);
        samples.push(Sample {
            text: format!("{}{}{}", class.prefix, name, class.suffix),
            mention: name.to_string(),
            mention_span: (start, end),
            types,
            source: if human { Source::Human } else { Source::Auto },
        });
    }
    Ok(samples)
}
