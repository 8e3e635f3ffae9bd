//! Curriculum training: prior-knowledge weights, self-paced unit selection,
//! the age schedule, and the three training strategies (uniform fine-tuning,
//! staged curriculum, and self-paced selection with optional weighting).
//!
//! The self-paced loop alternates: select units whose weighted loss is below
//! the age `lambda`, run `inner_steps` Adam steps on mini-batches of the
//! selection (frozen within the epoch), re-select with the updated model for
//! the log, then grow the age by the factor `mu`.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Sample, Subset, TrainUnit, Vocabulary, EOS};
use crate::error::{Error, Result};
use crate::model::{gradient, sequence_loss, ModelParams, Tensors};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::prompt::build;

/// Training strategies selectable from the CLI and config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Uniform shuffled mini-batch training over all units.
    Ft,
    /// Staged curriculum: one-word auto units, then all auto units, then all.
    Pcl,
    /// Self-paced selection without prior-knowledge weighting.
    Spl,
    /// Self-paced selection with prior-knowledge weighting.
    SplPk,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Ft => "ft",
            Strategy::Pcl => "pcl",
            Strategy::Spl => "spl",
            Strategy::SplPk => "spl-pk",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Strategy> {
        match s {
            "ft" => Ok(Strategy::Ft),
            "pcl" => Ok(Strategy::Pcl),
            "spl" => Ok(Strategy::Spl),
            "spl-pk" => Ok(Strategy::SplPk),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?}; expected ft, pcl, spl, or spl-pk"
            ))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub strategy: Strategy,
    /// Initial age; units with weighted loss below it are selected.
    pub lambda0: f64,
    /// Age growth factor per epoch; must exceed 1.
    pub mu: f64,
    pub epochs: usize,
    /// Adam steps per epoch.
    pub inner_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Overrides the default equal three-way split of `epochs` for the
    /// staged curriculum: each stage runs exactly this many epochs.
    pub pcl_stage_epochs: Option<usize>,
    pub adam: AdamConfig,
    /// Worker threads for loss sweeps; results merge in unit order, so the
    /// output is identical at any thread count.
    pub threads: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.mu <= 1.0 {
            return Err(Error::Config(format!(
                "mu must exceed 1, got {}",
                self.mu
            )));
        }
        if self.lambda0 <= 0.0 || !self.lambda0.is_finite() {
            return Err(Error::Config(format!(
                "lambda0 must be positive and finite, got {}",
                self.lambda0
            )));
        }
        if self.inner_steps == 0 {
            return Err(Error::Config("inner_steps must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be positive".into()));
        }
        if self.pcl_stage_epochs == Some(0) {
            return Err(Error::Config("pcl_stage_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Subset coefficient: 1 for A (auto, one-word), 2 for B (auto, multi-word),
/// 3 for C (human).
pub fn gamma(subset: Subset) -> f64 {
    match subset {
        Subset::A => 1.0,
        Subset::B => 2.0,
        Subset::C => 3.0,
    }
}

/// Prior-knowledge weight: type length times the subset coefficient.
pub fn sample_weight(subset: Subset, type_length: usize) -> f64 {
    type_length as f64 * gamma(subset)
}

pub fn unit_weight(unit: &TrainUnit) -> f64 {
    sample_weight(unit.subset, unit.type_length)
}

/// Applies the prior-knowledge weight under `spl-pk`; all other strategies
/// train on the raw loss.
pub fn weighted_loss(raw_loss: f64, weight: f64, strategy: Strategy) -> f64 {
    match strategy {
        Strategy::SplPk => raw_loss * weight,
        _ => raw_loss,
    }
}

/// Binary selection: a unit is in iff its loss is strictly below the age.
pub fn select_v(losses: &[f64], lambda: f64) -> Vec<bool> {
    losses.iter().map(|&l| l < lambda).collect()
}

/// Self-paced regularizer `g(v; lambda) = -lambda * sum(v)`.
pub fn regularizer(v: &[bool], lambda: f64) -> f64 {
    -lambda * v.iter().filter(|&&b| b).count() as f64
}

/// Selection objective `E = sum_i v_i * loss_i + g(v; lambda)` over
/// already-weighted losses.
pub fn objective(weighted_losses: &[f64], v: &[bool], lambda: f64) -> f64 {
    assert_eq!(weighted_losses.len(), v.len());
    let selected: f64 = weighted_losses
        .iter()
        .zip(v)
        .filter(|(_, &b)| b)
        .map(|(l, _)| l)
        .sum();
    selected + regularizer(v, lambda)
}

/// Age state of a self-paced run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplState {
    pub lambda: f64,
    pub epoch: u64,
}

/// Grows the age geometrically and advances the epoch counter, keeping
/// `lambda = lambda0 * mu^epoch` exact.
pub fn advance_age(state: &mut SplState, mu: f64) {
    debug_assert!(mu > 1.0);
    state.lambda *= mu;
    state.epoch += 1;
}

/// Consecutive age doublings allowed while the selection stays empty.
pub const MAX_AGE_DOUBLINGS: usize = 60;

/// One training unit with its prompt input and decoder target precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedUnit {
    pub sample_id: usize,
    pub type_index: usize,
    pub input: Vec<u32>,
    /// Type tokens followed by the end-of-sequence token.
    pub target: Vec<u32>,
    pub subset: Subset,
    pub type_length: usize,
}

impl PreparedUnit {
    pub fn weight(&self) -> f64 {
        sample_weight(self.subset, self.type_length)
    }
}

/// Builds prompted inputs (one per sample, shared across its units) and
/// decoder targets for every unit.
pub fn prepare_units(
    samples: &[Sample],
    units: &[TrainUnit],
    vocab: &Vocabulary,
    pattern_id: usize,
) -> Result<Vec<PreparedUnit>> {
    let mut prompts: Vec<Option<Vec<u32>>> = vec![None; samples.len()];
    let mut prepared = Vec::with_capacity(units.len());
    for u in units {
        if prompts[u.sample_id].is_none() {
            prompts[u.sample_id] = Some(build(&samples[u.sample_id], pattern_id, vocab)?.tokens);
        }
        let input = prompts[u.sample_id].clone().unwrap();
        let mut target = u.type_tokens.clone();
        target.push(EOS);
        prepared.push(PreparedUnit {
            sample_id: u.sample_id,
            type_index: u.type_index,
            input,
            target,
            subset: u.subset,
            type_length: u.type_length,
        });
    }
    Ok(prepared)
}

/// Raw per-unit losses under the current parameters, in unit order. With
/// `threads > 1` the sweep is chunked across scoped threads and merged in
/// order, so results do not depend on the thread count.
pub fn unit_raw_losses(
    prepared: &[PreparedUnit],
    params: &ModelParams,
    threads: usize,
) -> Result<Vec<f64>> {
    let eval =
        |u: &PreparedUnit| -> Result<f64> { sequence_loss(&u.input, &u.target, params) };
    if threads <= 1 || prepared.len() < 2 * threads {
        return prepared.iter().map(eval).collect();
    }
    let chunk_size = prepared.len().div_ceil(threads);
    let chunks: Vec<&[PreparedUnit]> = prepared.chunks(chunk_size).collect();
    let results: Vec<Result<Vec<f64>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|chunk| scope.spawn(move || chunk.iter().map(eval).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut out = Vec::with_capacity(prepared.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

fn effective_weights(prepared: &[PreparedUnit], strategy: Strategy) -> Vec<f64> {
    prepared
        .iter()
        .map(|u| match strategy {
            Strategy::SplPk => u.weight(),
            _ => 1.0,
        })
        .collect()
}

fn weighted_unit_losses(
    prepared: &[PreparedUnit],
    weights: &[f64],
    params: &ModelParams,
    threads: usize,
) -> Result<Vec<f64>> {
    let raw = unit_raw_losses(prepared, params, threads)?;
    Ok(raw.iter().zip(weights).map(|(l, w)| l * w).collect())
}

/// One per-epoch log record. `lambda` is present only for self-paced runs.
/// `mean_selected_loss` averages the (strategy-weighted) loss over the units
/// counted by `inclusion_ratio`, measured after the epoch's updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u64,
    pub lambda: Option<f64>,
    pub inclusion_ratio: f64,
    pub mean_selected_loss: f64,
}

/// A finished training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    /// Per unit: the logged epoch at which it first entered the trained
    /// selection, if it ever did.
    pub first_inclusion: Vec<Option<u64>>,
    pub warnings: Vec<String>,
}

/// Seed offset separating the batching stream from parameter initialization.
const BATCH_STREAM: u64 = 0x9e3779b97f4a7c15;

pub(crate) fn batch_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ BATCH_STREAM)
}

/// Runs `inner_steps` Adam steps over shuffled mini-batches of the selected
/// units. Each step descends the mean of the weighted per-unit losses in the
/// batch; the order reshuffles whenever a pass over the selection completes.
pub(crate) fn run_epoch(
    prepared: &[PreparedUnit],
    weights: &[f64],
    selected: &[usize],
    params: &mut ModelParams,
    adam: &mut AdamState,
    adam_cfg: &AdamConfig,
    inner_steps: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    debug_assert!(!selected.is_empty());
    let mut order = selected.to_vec();
    order.shuffle(rng);
    let mut cursor = 0usize;
    for _ in 0..inner_steps {
        if cursor >= order.len() {
            order.shuffle(rng);
            cursor = 0;
        }
        let end = (cursor + batch_size).min(order.len());
        let batch = &order[cursor..end];
        cursor = end;
        let inv = 1.0 / batch.len() as f64;
        let mut acc = Tensors::zeros(params.vocab_size, params.dim);
        for &i in batch {
            let u = &prepared[i];
            let (_, g) = gradient(&u.input, &u.target, params)?;
            acc.add_scaled(&g, weights[i] * inv);
        }
        adam_step(params, &acc, adam, adam_cfg)?;
    }
    Ok(())
}

fn require_units(prepared: &[PreparedUnit]) -> Result<()> {
    if prepared.is_empty() {
        return Err(Error::Empty("no training units".into()));
    }
    Ok(())
}

fn mean_over(losses: &[f64], mask: &[bool]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (l, &m) in losses.iter().zip(mask) {
        if m {
            sum += l;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Uniform fine-tuning: every epoch shuffles all units and runs the inner
/// steps with weight 1. With zero epochs the initial parameters are returned.
pub fn train_ft(
    prepared: &[PreparedUnit],
    init: ModelParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    require_units(prepared)?;
    cfg.validate()?;
    let n = prepared.len();
    let weights = vec![1.0; n];
    let all: Vec<usize> = (0..n).collect();
    let all_mask = vec![true; n];
    let mut params = init;
    let mut adam = AdamState::new(params.vocab_size, params.dim);
    let mut rng = batch_rng(cfg.seed);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs as u64 {
        run_epoch(
            prepared,
            &weights,
            &all,
            &mut params,
            &mut adam,
            &cfg.adam,
            cfg.inner_steps,
            cfg.batch_size,
            &mut rng,
        )?;
        let losses = unit_raw_losses(prepared, &params, cfg.threads)?;
        log.push(EpochLog {
            epoch,
            lambda: None,
            inclusion_ratio: 1.0,
            mean_selected_loss: mean_over(&losses, &all_mask),
        });
    }
    let first = if cfg.epochs > 0 { Some(0) } else { None };
    Ok(TrainOutcome {
        params,
        log,
        first_inclusion: vec![first; n],
        warnings: Vec::new(),
    })
}

/// Staged curriculum: stage 1 trains on subset-A units, stage 2 on A and B,
/// stage 3 on everything, with (near-)equal stage lengths. Empty stages are
/// skipped with a warning.
pub fn train_pcl(
    prepared: &[PreparedUnit],
    init: ModelParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    require_units(prepared)?;
    cfg.validate()?;
    let n = prepared.len();
    let weights = vec![1.0; n];
    let stage_sets: [Vec<usize>; 3] = [
        (0..n).filter(|&i| prepared[i].subset == Subset::A).collect(),
        (0..n)
            .filter(|&i| prepared[i].subset != Subset::C)
            .collect(),
        (0..n).collect(),
    ];
    let stage_lens: [usize; 3] = match cfg.pcl_stage_epochs {
        Some(k) => [k, k, k],
        None => {
            let third = cfg.epochs / 3;
            [third, third, cfg.epochs - 2 * third]
        }
    };
    let mut params = init;
    let mut adam = AdamState::new(params.vocab_size, params.dim);
    let mut rng = batch_rng(cfg.seed);
    let mut log = Vec::new();
    let mut warnings = Vec::new();
    let mut first_inclusion: Vec<Option<u64>> = vec![None; n];
    let mut epoch = 0u64;
    for (stage, selected) in stage_sets.iter().enumerate() {
        if selected.is_empty() {
            warnings.push(format!("stage {} has no units; skipped", stage + 1));
            epoch += stage_lens[stage] as u64;
            continue;
        }
        if stage_lens[stage] > 0 {
            for &i in selected {
                first_inclusion[i].get_or_insert(epoch);
            }
        }
        let mut mask = vec![false; n];
        for &i in selected {
            mask[i] = true;
        }
        for _ in 0..stage_lens[stage] {
            run_epoch(
                prepared,
                &weights,
                selected,
                &mut params,
                &mut adam,
                &cfg.adam,
                cfg.inner_steps,
                cfg.batch_size,
                &mut rng,
            )?;
            let losses = unit_raw_losses(prepared, &params, cfg.threads)?;
            log.push(EpochLog {
                epoch,
                lambda: None,
                inclusion_ratio: selected.len() as f64 / n as f64,
                mean_selected_loss: mean_over(&losses, &mask),
            });
            epoch += 1;
        }
    }
    Ok(TrainOutcome {
        params,
        log,
        first_inclusion,
        warnings,
    })
}

/// Self-paced training. Each epoch selects units whose weighted loss is
/// strictly below the age, trains the inner steps on that frozen selection,
/// re-selects with the updated model for the log, then grows the age. An
/// empty selection fast-forwards the age (and epoch counter, keeping the
/// geometric schedule exact) up to [`MAX_AGE_DOUBLINGS`] times.
pub fn train_spl(
    prepared: &[PreparedUnit],
    init: ModelParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    require_units(prepared)?;
    cfg.validate()?;
    let n = prepared.len();
    let weights = effective_weights(prepared, cfg.strategy);
    let mut params = init;
    let mut adam = AdamState::new(params.vocab_size, params.dim);
    let mut rng = batch_rng(cfg.seed);
    let mut state = SplState {
        lambda: cfg.lambda0,
        epoch: 0,
    };
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut warnings = Vec::new();
    let mut first_inclusion: Vec<Option<u64>> = vec![None; n];
    let mut losses = weighted_unit_losses(prepared, &weights, &params, cfg.threads)?;
    for _ in 0..cfg.epochs {
        let mut v = select_v(&losses, state.lambda);
        let mut doublings = 0usize;
        while !v.iter().any(|&b| b) {
            if doublings == MAX_AGE_DOUBLINGS {
                return Err(Error::Train(format!(
                    "no unit selected after {MAX_AGE_DOUBLINGS} age doublings \
                     (lambda reached {})",
                    state.lambda
                )));
            }
            advance_age(&mut state, cfg.mu);
            doublings += 1;
            v = select_v(&losses, state.lambda);
        }
        if doublings > 0 {
            warnings.push(format!(
                "empty selection; age fast-forwarded {doublings} doublings to lambda {}",
                state.lambda
            ));
        }
        let selected: Vec<usize> = (0..n).filter(|&i| v[i]).collect();
        for &i in &selected {
            first_inclusion[i].get_or_insert(state.epoch);
        }
        run_epoch(
            prepared,
            &weights,
            &selected,
            &mut params,
            &mut adam,
            &cfg.adam,
            cfg.inner_steps,
            cfg.batch_size,
            &mut rng,
        )?;
        losses = weighted_unit_losses(prepared, &weights, &params, cfg.threads)?;
        let v_end = select_v(&losses, state.lambda);
        let included = v_end.iter().filter(|&&b| b).count();
        log.push(EpochLog {
            epoch: state.epoch,
            lambda: Some(state.lambda),
            inclusion_ratio: included as f64 / n as f64,
            mean_selected_loss: mean_over(&losses, &v_end),
        });
        advance_age(&mut state, cfg.mu);
    }
    Ok(TrainOutcome {
        params,
        log,
        first_inclusion,
        warnings,
    })
}

/// Dispatches on the configured strategy.
pub fn train(
    prepared: &[PreparedUnit],
    init: ModelParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    match cfg.strategy {
        Strategy::Ft => train_ft(prepared, init, cfg),
        Strategy::Pcl => train_pcl(prepared, init, cfg),
        Strategy::Spl | Strategy::SplPk => train_spl(prepared, init, cfg),
    }
}
