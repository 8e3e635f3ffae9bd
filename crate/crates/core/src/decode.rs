//! Beam-search type generation with confidence scoring and threshold
//! reservation.
//!
//! Hearst-prompted inputs are decoded into type phrases. The beam explores
//! content tokens only (specials other than the end token are masked out of
//! the candidate set, and the distribution renormalized over what remains).
//! Every hypothesis is scored as ended by the end token, so all scores are
//! comparable across lengths; the length bound only stops extension. Each
//! explored hypothesis contributes its completion to the candidate pool as
//! soon as it is created, before width pruning, so the returned top
//! candidates are drawn from every hypothesis the search touched, not just
//! survivors.

use serde::{Deserialize, Serialize};

use crate::corpus::{Sample, Vocabulary, BOS, EOS, NUM_SPECIALS};
use crate::error::{Error, Result};
use crate::model::{encode, step, ModelParams};
use crate::prompt::{build, PromptedInput};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// Beam width: live hypotheses kept per depth and candidates returned.
    pub beam: usize,
    /// Confidence threshold for reservation; strict inequality applies.
    pub tau: f64,
    /// Hypotheses reaching this many tokens complete without an end token.
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> DecodeConfig {
        DecodeConfig {
            beam: 8,
            tau: 0.5,
            max_len: 8,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::Config("beam size must be positive".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max length must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) || self.tau.is_nan() {
            return Err(Error::Config(format!(
                "tau must lie in [0, 1], got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// One decoded type phrase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypePrediction {
    /// Content token ids, never empty, without the end token.
    pub tokens: Vec<u32>,
    /// Tokens joined with single spaces; already normalized.
    pub surface: String,
    /// Total log probability of the hypothesis as completed.
    pub log_prob: f64,
    /// `exp(log_prob / (|tokens| + 1))`: the geometric mean per decoding
    /// step, counting the end token's step.
    pub confidence: f64,
}

/// Log distribution over the allowed next tokens (content ids and the end
/// token), renormalized after masking; disallowed ids get `-inf`.
fn masked_log_dist(logits: &[f64]) -> Vec<f64> {
    let allowed = |id: usize| id == EOS as usize || id >= NUM_SPECIALS;
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| allowed(*i))
        .map(|(_, &l)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let norm: f64 = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| allowed(*i))
        .map(|(_, &l)| (l - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    logits
        .iter()
        .enumerate()
        .map(|(i, &l)| if allowed(i) { l - norm } else { f64::NEG_INFINITY })
        .collect()
}

struct Beam {
    tokens: Vec<u32>,
    log_prob: f64,
    /// Decoder state after consuming the last token of `tokens`.
    h: Vec<f64>,
    /// Masked log distribution for the next token, cached at creation.
    dist: Vec<f64>,
}

fn by_score_then_tokens(a: &(Vec<u32>, f64), b: &(Vec<u32>, f64)) -> std::cmp::Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then_with(|| a.0.cmp(&b.0))
}

/// Length-bounded beam search from the start token. Hypotheses end at the
/// end token, no later than `max_len` tokens; the result is the `beam`
/// highest total-log-prob completions among all explored hypotheses, ties
/// broken by ascending token-id sequence.
pub fn beam_search(
    input: &PromptedInput,
    params: &ModelParams,
    vocab: &Vocabulary,
    cfg: &DecodeConfig,
) -> Result<Vec<TypePrediction>> {
    cfg.validate()?;
    if vocab.size() != params.vocab_size {
        return Err(Error::Shape(format!(
            "vocabulary has {} entries but the model expects {}",
            vocab.size(),
            params.vocab_size
        )));
    }
    let content: Vec<u32> = (NUM_SPECIALS as u32..params.vocab_size as u32).collect();
    if content.is_empty() {
        return Err(Error::Decode("vocabulary has no content tokens".into()));
    }
    let ctx = encode(&input.tokens, params)?;
    let h0 = vec![0.0; params.dim];
    let (h1, logits1) = step(&ctx, BOS, &h0, params);
    let root = Beam {
        tokens: Vec::new(),
        log_prob: 0.0,
        h: h1,
        dist: masked_log_dist(&logits1),
    };

    let mut live = vec![root];
    let mut completed: Vec<(Vec<u32>, f64)> = Vec::new();
    for depth in 1..=cfg.max_len {
        let mut next: Vec<Beam> = Vec::new();
        for beam in &live {
            for &t in &content {
                let lp = beam.log_prob + beam.dist[t as usize];
                let mut tokens = beam.tokens.clone();
                tokens.push(t);
                let (h, logits) = step(&ctx, t, &beam.h, params);
                let dist = masked_log_dist(&logits);
                completed.push((tokens.clone(), lp + dist[EOS as usize]));
                if depth < cfg.max_len {
                    next.push(Beam {
                        tokens,
                        log_prob: lp,
                        h,
                        dist,
                    });
                }
            }
        }
        next.sort_by(|a, b| {
            b.log_prob
                .partial_cmp(&a.log_prob)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.tokens.cmp(&b.tokens))
        });
        next.truncate(cfg.beam);
        live = next;
        if live.is_empty() {
            break;
        }
    }

    completed.sort_by(by_score_then_tokens);
    completed.truncate(cfg.beam);
    Ok(completed
        .into_iter()
        .map(|(tokens, log_prob)| {
            let surface = tokens
                .iter()
                .map(|&t| vocab.token(t))
                .collect::<Vec<_>>()
                .join(" ");
            let confidence = (log_prob / (tokens.len() + 1) as f64).exp();
            TypePrediction {
                tokens,
                surface,
                log_prob,
                confidence,
            }
        })
        .collect())
}

/// Keeps candidates with confidence strictly above `tau`, preserving order
/// and dropping repeats of an already-kept surface form.
pub fn reserve(candidates: &[TypePrediction], tau: f64) -> Vec<TypePrediction> {
    let mut seen: Vec<&str> = Vec::new();
    let mut kept = Vec::new();
    for c in candidates {
        if c.confidence > tau && !seen.contains(&c.surface.as_str()) {
            seen.push(&c.surface);
            kept.push(c.clone());
        }
    }
    kept
}

/// Full generation pipeline for one sample: prompt, beam search, reserve.
pub fn generate(
    sample: &Sample,
    params: &ModelParams,
    vocab: &Vocabulary,
    pattern_id: usize,
    cfg: &DecodeConfig,
) -> Result<Vec<TypePrediction>> {
    let input = build(sample, pattern_id, vocab)?;
    let candidates = beam_search(&input, params, vocab, cfg)?;
    Ok(reserve(&candidates, cfg.tau))
}
