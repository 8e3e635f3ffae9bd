//! Evaluation suite: correct-type counts, strict macro precision, relative
//! recall and F1 across systems, new-type counts, length statistics, and the
//! loss-by-type-length training probe.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::normalize_phrase;
use crate::curriculum::{batch_rng, unit_raw_losses, PreparedUnit};
use crate::error::{Error, Result};
use crate::model::{gradient, init_params, Tensors};
use crate::optim::{adam_step, AdamConfig, AdamState};

/// One evaluated sample: its predictions, gold types, and the subset of
/// predictions judged correct. All phrases are normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: usize,
    pub predicted: Vec<String>,
    pub golden: Vec<String>,
    pub correct: Vec<String>,
}

/// Full per-system evaluation report. `r_recall` and `r_f1` appear only
/// after a cross-system comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Total correct predicted types.
    pub ct: usize,
    /// Strict macro precision over records with at least one prediction.
    pub precision: f64,
    /// False when no record had predictions, making precision vacuous.
    pub precision_defined: bool,
    pub r_recall: Option<f64>,
    pub r_f1: Option<f64>,
    /// Distinct correct types outside the predefined type set.
    pub ma_new: usize,
    /// Correct types outside each sample's gold set, summed.
    pub mi_new: usize,
    /// `mi_new / ct`, 0 when nothing is correct.
    pub r_new: f64,
    /// Mean word length over all predictions.
    pub len_avg: f64,
}

/// Marks each prediction correct iff it exactly matches a gold type or the
/// allowed-types oracle lists it for this sample.
pub fn judge(
    sample_id: usize,
    predicted: &[String],
    golden: &[String],
    allowed: Option<&HashSet<(usize, String)>>,
) -> Vec<String> {
    predicted
        .iter()
        .filter(|p| {
            golden.contains(p)
                || allowed.is_some_and(|a| a.contains(&(sample_id, (*p).clone())))
        })
        .cloned()
        .collect()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AllowedEntry {
    sample_id: usize,
    #[serde(rename = "type")]
    type_phrase: String,
}

/// Reads an allowed-types oracle: JSON Lines of `{"sample_id": N, "type":
/// "phrase"}`. Phrases are normalized on load.
pub fn load_allowed<R: BufRead>(reader: R) -> Result<HashSet<(usize, String)>> {
    let mut out = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: AllowedEntry = serde_json::from_str(&line).map_err(|e| Error::Ingest {
            line: i + 1,
            message: e.to_string(),
        })?;
        let phrase = normalize_phrase(&entry.type_phrase);
        if phrase.is_empty() {
            return Err(Error::Ingest {
                line: i + 1,
                message: "allowed type normalizes to nothing".into(),
            });
        }
        out.insert((entry.sample_id, phrase));
    }
    Ok(out)
}

fn word_count(phrase: &str) -> usize {
    phrase.split_whitespace().count()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoreMetrics {
    pub ct: usize,
    pub precision: f64,
    pub precision_defined: bool,
    pub len_avg: f64,
}

/// Correct-type count, strict macro precision, and mean prediction length.
/// Records without predictions are excluded from the precision average; when
/// every record is excluded, precision reports 0 with the flag cleared.
pub fn core_metrics(records: &[EvalRecord]) -> CoreMetrics {
    let ct = records.iter().map(|r| r.correct.len()).sum();
    let mut ratio_sum = 0.0;
    let mut with_predictions = 0usize;
    let mut word_sum = 0usize;
    let mut predictions = 0usize;
    for r in records {
        if !r.predicted.is_empty() {
            with_predictions += 1;
            ratio_sum += r.correct.len() as f64 / r.predicted.len() as f64;
        }
        for p in &r.predicted {
            word_sum += word_count(p);
            predictions += 1;
        }
    }
    CoreMetrics {
        ct,
        precision: if with_predictions == 0 {
            0.0
        } else {
            ratio_sum / with_predictions as f64
        },
        precision_defined: with_predictions > 0,
        len_avg: if predictions == 0 {
            0.0
        } else {
            word_sum as f64 / predictions as f64
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeMetrics {
    pub r_recall: f64,
    pub r_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeReport {
    /// Per-sample union of every system's correct types, summed.
    pub cts: usize,
    pub per_system: Vec<RelativeMetrics>,
}

pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Relative recall and F1 for two or more systems evaluated on the same
/// samples: each system's correct count over the pooled per-sample union.
pub fn relative(systems: &[&[EvalRecord]]) -> Result<RelativeReport> {
    if systems.len() < 2 {
        return Err(Error::Metrics(
            "relative metrics need at least two systems".into(),
        ));
    }
    let mut by_id: Vec<HashMap<usize, &EvalRecord>> = Vec::with_capacity(systems.len());
    for records in systems {
        let mut map = HashMap::with_capacity(records.len());
        for r in *records {
            if map.insert(r.sample_id, r).is_some() {
                return Err(Error::Metrics(format!(
                    "duplicate sample id {} within one system",
                    r.sample_id
                )));
            }
        }
        by_id.push(map);
    }
    let ids: BTreeSet<usize> = by_id[0].keys().copied().collect();
    for (i, map) in by_id.iter().enumerate().skip(1) {
        let other: BTreeSet<usize> = map.keys().copied().collect();
        if other != ids {
            return Err(Error::Metrics(format!(
                "system {} covers different sample ids than system 0",
                i
            )));
        }
    }
    let mut cts = 0usize;
    for &id in &ids {
        let mut union: HashSet<&str> = HashSet::new();
        for map in &by_id {
            for c in &map[&id].correct {
                union.insert(c);
            }
        }
        cts += union.len();
    }
    let per_system = systems
        .iter()
        .map(|records| {
            let core = core_metrics(records);
            let r_recall = if cts == 0 {
                0.0
            } else {
                core.ct as f64 / cts as f64
            };
            RelativeMetrics {
                r_recall,
                r_f1: harmonic_mean(core.precision, r_recall),
            }
        })
        .collect();
    Ok(RelativeReport { cts, per_system })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewTypeMetrics {
    pub ma_new: usize,
    pub mi_new: usize,
    pub r_new: f64,
}

/// Counts correct types beyond the predefined type set (distinct, corpus
/// wide) and beyond each sample's gold set (summed), plus their ratio to the
/// correct-type count.
pub fn new_type_metrics(
    records: &[EvalRecord],
    predefined: &HashSet<String>,
) -> NewTypeMetrics {
    let distinct_correct: BTreeSet<&str> =
        records.iter().flat_map(|r| r.correct.iter()).map(String::as_str).collect();
    let ma_new = distinct_correct
        .iter()
        .filter(|t| !predefined.contains(**t))
        .count();
    let mut mi_new = 0usize;
    let mut ct = 0usize;
    for r in records {
        ct += r.correct.len();
        mi_new += r.correct.iter().filter(|c| !r.golden.contains(c)).count();
    }
    NewTypeMetrics {
        ma_new,
        mi_new,
        r_new: if ct == 0 { 0.0 } else { mi_new as f64 / ct as f64 },
    }
}

/// Assembles the single-system report (no relative fields).
pub fn report(records: &[EvalRecord], predefined: &HashSet<String>) -> MetricsReport {
    let core = core_metrics(records);
    let nt = new_type_metrics(records, predefined);
    MetricsReport {
        ct: core.ct,
        precision: core.precision,
        precision_defined: core.precision_defined,
        r_recall: None,
        r_f1: None,
        ma_new: nt.ma_new,
        mi_new: nt.mi_new,
        r_new: nt.r_new,
        len_avg: core.len_avg,
    }
}

/// Fractions of predictions with one word and with two or more, over all
/// predictions; both zero when there are none.
pub fn length_distribution<'a, I>(predictions: I) -> (f64, f64)
where
    I: IntoIterator<Item = &'a str>,
{
    let mut one = 0usize;
    let mut multi = 0usize;
    for p in predictions {
        if word_count(p) >= 2 {
            multi += 1;
        } else {
            one += 1;
        }
    }
    let total = one + multi;
    if total == 0 {
        (0.0, 0.0)
    } else {
        (one as f64 / total as f64, multi as f64 / total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Units drawn per arm.
    pub units: usize,
    pub dim: usize,
    pub inner_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub threads: usize,
}

impl Default for ProbeConfig {
    fn default() -> ProbeConfig {
        ProbeConfig {
            units: 100,
            dim: 32,
            inner_steps: 40,
            batch_size: 16,
            seed: 42,
            adam: AdamConfig::default(),
            threads: 1,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.units == 0 {
            return Err(Error::Config("probe needs a positive unit count".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("probe dimension must be positive".into()));
        }
        if self.inner_steps == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "probe steps and batch size must be positive".into(),
            ));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    /// Mean per-unit loss over the arm after each optimizer step.
    pub trajectory: Vec<f64>,
    pub final_mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Arm trained on one-word types.
    pub short: ArmReport,
    /// Arm trained on multi-word types.
    pub long: ArmReport,
}

/// Trains a fresh model for one epoch on the given units and records the
/// arm's mean loss after every step.
pub fn probe_arm(
    units: &[PreparedUnit],
    vocab_size: usize,
    cfg: &ProbeConfig,
) -> Result<ArmReport> {
    cfg.validate()?;
    if units.is_empty() {
        return Err(Error::Empty("probe arm has no units".into()));
    }
    let mut params = init_params(vocab_size, cfg.dim, cfg.seed)?;
    let mut adam = AdamState::new(vocab_size, cfg.dim);
    let mut rng = batch_rng(cfg.seed);
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;
    let mut trajectory = Vec::with_capacity(cfg.inner_steps);
    for _ in 0..cfg.inner_steps {
        if cursor >= order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let batch = &order[cursor..end];
        cursor = end;
        let inv = 1.0 / batch.len() as f64;
        let mut acc = Tensors::zeros(vocab_size, cfg.dim);
        for &i in batch {
            let (_, g) = gradient(&units[i].input, &units[i].target, &params)?;
            acc.add_scaled(&g, inv);
        }
        adam_step(&mut params, &acc, &mut adam, &cfg.adam)?;
        let losses = unit_raw_losses(units, &params, cfg.threads)?;
        trajectory.push(losses.iter().sum::<f64>() / losses.len() as f64);
    }
    Ok(ArmReport {
        final_mean_loss: *trajectory.last().unwrap(),
        trajectory,
    })
}

/// Compares training difficulty by type length: draws equal-size unit
/// subsets with one-word and multi-word targets, trains a fresh model one
/// epoch on each, and reports both loss trajectories.
pub fn difficulty_probe(
    prepared: &[PreparedUnit],
    vocab_size: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    cfg.validate()?;
    let mut short_idx: Vec<usize> = (0..prepared.len())
        .filter(|&i| prepared[i].type_length == 1)
        .collect();
    let mut long_idx: Vec<usize> = (0..prepared.len())
        .filter(|&i| prepared[i].type_length >= 2)
        .collect();
    if short_idx.len() < cfg.units || long_idx.len() < cfg.units {
        return Err(Error::Metrics(format!(
            "insufficient units for the probe: need {} per arm, have {} one-word and {} multi-word",
            cfg.units,
            short_idx.len(),
            long_idx.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    short_idx.shuffle(&mut rng);
    long_idx.shuffle(&mut rng);
    let pick = |idx: &[usize]| -> Vec<PreparedUnit> {
        idx[..cfg.units].iter().map(|&i| prepared[i].clone()).collect()
    };
    Ok(ProbeReport {
        short: probe_arm(&pick(&short_idx), vocab_size, cfg)?,
        long: probe_arm(&pick(&long_idx), vocab_size, cfg)?,
    })
}
