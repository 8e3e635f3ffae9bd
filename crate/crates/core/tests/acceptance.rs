//! Acceptance suite: one test per toolkit contract. Every check runs against
//! an oracle implemented independently in this file (exhaustive enumeration,
//! central finite differences, hand-stepped optimizer traces, brute-force
//! metric recounts) with tolerances pinned next to each assertion. Each test
//! prints a PASS line with its measured figures; run with `--nocapture` to
//! see them.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gentype::corpus::{
    build_vocab, flatten, synth_corpus, Sample, Subset, Vocabulary, EOS, NUM_SPECIALS,
};
use gentype::curriculum::{
    prepare_units, select_v, train, PreparedUnit, Strategy, TrainConfig,
};
use gentype::decode::{beam_search, generate, DecodeConfig};
use gentype::metrics::{
    difficulty_probe, harmonic_mean, length_distribution, relative, report, EvalRecord,
    ProbeConfig,
};
use gentype::model::{
    encode, gradient, init_params, sequence_loss, step, ModelParams, Tensors,
};
use gentype::optim::{adam_step, AdamConfig, AdamState};
use gentype::prompt::PromptedInput;

/// The corpus every seeded experiment below runs on; identical to what
/// `gentype --seed 42 synth --size 500` writes at default fractions.
fn bundled_corpus() -> Vec<Sample> {
    synth_corpus(42, 500, 0.5, 0.15).unwrap()
}

fn prepared_corpus(samples: &[Sample]) -> (Vocabulary, Vec<PreparedUnit>) {
    let vocab = build_vocab(samples, 1);
    let units = flatten(samples, &vocab);
    let prepared = prepare_units(samples, &units, &vocab, 0).unwrap();
    (vocab, prepared)
}

fn train_config(strategy: Strategy, lr: f64) -> TrainConfig {
    TrainConfig {
        strategy,
        lambda0: 0.5,
        mu: 2.0,
        epochs: 12,
        inner_steps: 40,
        batch_size: 16,
        seed: 42,
        pcl_stage_epochs: None,
        adam: AdamConfig {
            lr,
            ..AdamConfig::default()
        },
        threads: 1,
    }
}

#[test]
fn selection_rule_matches_threshold_and_exhaustive_minimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);

    // Elementwise contract on random pairs: in iff loss is strictly below
    // the age.
    let pairs = 10_000;
    for _ in 0..pairs {
        let loss = rng.gen_range(0.0..10.0);
        let lambda = rng.gen_range(0.0..10.0);
        assert_eq!(select_v(&[loss], lambda)[0], loss < lambda);
    }

    // The selected vector must minimize E(v) = sum_i v_i loss_i - lambda
    // sum_i v_i over all 2^n assignments; the fold below is the oracle.
    let objective = |losses: &[f64], v: &[bool], lambda: f64| -> f64 {
        let mut e = 0.0;
        for (l, &keep) in losses.iter().zip(v) {
            if keep {
                e += l - lambda;
            }
        }
        e
    };
    let vectors = 64;
    for round in 0..vectors {
        let n = 1 + round % 12;
        let losses: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
        let lambda = rng.gen_range(0.0..3.0);
        let chosen = select_v(&losses, lambda);
        let e_chosen = objective(&losses, &chosen, lambda);
        let mut e_best = f64::INFINITY;
        for mask in 0u32..1 << n {
            let v: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            e_best = e_best.min(objective(&losses, &v, lambda));
        }
        assert_eq!(
            e_chosen, e_best,
            "selection is not a minimizer for losses {losses:?}, age {lambda}"
        );
    }
    println!("PASS selection rule: {pairs} threshold pairs, {vectors} exhaustive vectors");
}

/// Central finite difference of the sequence loss in every coordinate.
fn fd_gradient(input: &[u32], target: &[u32], p: &ModelParams, h: f64) -> Tensors {
    let mut g = Tensors::zeros(p.vocab_size, p.dim);
    let mut probe = p.clone();
    for b in 0..7 {
        let len = probe.t.blocks()[b].1.len();
        for i in 0..len {
            probe.t.blocks_mut()[b].1[i] += h;
            let up = sequence_loss(input, target, &probe).unwrap();
            probe.t.blocks_mut()[b].1[i] -= 2.0 * h;
            let down = sequence_loss(input, target, &probe).unwrap();
            probe.t.blocks_mut()[b].1[i] += h;
            g.blocks_mut()[b].1[i] = (up - down) / (2.0 * h);
        }
    }
    g
}

fn l2(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn analytic_gradients_match_central_finite_differences() {
    const STEP: f64 = 1e-4;
    const MAX_REL_ERR: f64 = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let configs = 100;
    let mut worst: f64 = 0.0;
    for round in 0..configs {
        let vocab = rng.gen_range(NUM_SPECIALS + 1..=20);
        let dim = rng.gen_range(1..=8);
        let p = init_params(vocab, dim, 1000 + round).unwrap();
        let input: Vec<u32> = (0..rng.gen_range(1..=5))
            .map(|_| rng.gen_range(0..vocab as u32))
            .collect();
        let mut target: Vec<u32> = (0..rng.gen_range(1..=4))
            .map(|_| rng.gen_range(NUM_SPECIALS as u32..vocab as u32))
            .collect();
        if rng.gen_bool(0.5) {
            *target.last_mut().unwrap() = EOS;
        }
        let (_, analytic) = gradient(&input, &target, &p).unwrap();
        let numeric = fd_gradient(&input, &target, &p, STEP);
        for ((name, a), (_, n)) in analytic.blocks().into_iter().zip(numeric.blocks()) {
            let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
            let rel = l2(&diff) / l2(n).max(1e-12);
            assert!(
                rel < MAX_REL_ERR,
                "block {name} relative error {rel:.2e} on config {round}"
            );
            worst = worst.max(rel);
        }
    }
    println!("PASS gradient check: {configs} configs, worst block error {worst:.2e}");
}

#[test]
fn zero_params_sequence_loss_is_ln_vocab() {
    const TOL: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let configs = 50;
    for _ in 0..configs {
        let vocab = rng.gen_range(NUM_SPECIALS + 1..=40);
        let dim = rng.gen_range(1..=16);
        let p = ModelParams {
            vocab_size: vocab,
            dim,
            t: Tensors::zeros(vocab, dim),
        };
        let input: Vec<u32> = (0..rng.gen_range(1..=6))
            .map(|_| rng.gen_range(0..vocab as u32))
            .collect();
        let target: Vec<u32> = (0..rng.gen_range(1..=5))
            .map(|_| rng.gen_range(0..vocab as u32))
            .collect();
        let loss = sequence_loss(&input, &target, &p).unwrap();
        let expect = (vocab as f64).ln();
        assert!(
            (loss - expect).abs() < TOL,
            "loss {loss} differs from ln({vocab}) = {expect}"
        );
    }
    println!("PASS uniform-model loss: {configs} configs within 1e-9 of ln|V|");
}

/// Masked next-token log distribution, recomputed here from raw logits with
/// the standard stabilized log-sum-exp over the end token and content ids.
fn oracle_masked(logits: &[f64]) -> Vec<f64> {
    let allowed = |id: usize| id == EOS as usize || id >= NUM_SPECIALS;
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| allowed(*i))
        .map(|(_, &l)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let norm = logits
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

/// Scores every content-token sequence up to `max_len`, each closed with the
/// end token, by walking the decoder exhaustively.
fn oracle_enumerate(
    ctx: &[f64],
    p: &ModelParams,
    tokens: &mut Vec<u32>,
    lp: f64,
    h: &[f64],
    dist: &[f64],
    max_len: usize,
    out: &mut Vec<(Vec<u32>, f64)>,
) {
    for t in NUM_SPECIALS as u32..p.vocab_size as u32 {
        let lp_t = lp + dist[t as usize];
        let (h_t, logits_t) = step(ctx, t, h, p);
        let dist_t = oracle_masked(&logits_t);
        tokens.push(t);
        out.push((tokens.clone(), lp_t + dist_t[EOS as usize]));
        if tokens.len() < max_len {
            oracle_enumerate(ctx, p, tokens, lp_t, &h_t, &dist_t, max_len, out);
        }
        tokens.pop();
    }
}

fn oracle_top_k(p: &ModelParams, input: &[u32], max_len: usize, k: usize) -> Vec<(Vec<u32>, f64)> {
    let ctx = encode(input, p).unwrap();
    let h0 = vec![0.0; p.dim];
    let (h1, logits1) = step(&ctx, gentype::corpus::BOS, &h0, p);
    let dist1 = oracle_masked(&logits1);
    let mut all = Vec::new();
    oracle_enumerate(&ctx, p, &mut Vec::new(), 0.0, &h1, &dist1, max_len, &mut all);
    all.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| a.0.cmp(&b.0))
    });
    all.truncate(k);
    all
}

#[test]
fn beam_search_equals_exhaustive_enumeration_top_k() {
    let content = 6;
    let vocab_size = NUM_SPECIALS + content;
    let max_len = 3;
    let vocab = Vocabulary::from_tokens(
        (0..content).map(|i| format!("w{i}")).collect(),
    );
    let sequences = content + content * content + content * content * content;

    let mut checked = 0;
    for seed in 0..10u64 {
        let p = init_params(vocab_size, 4, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(404 + seed);
        let input: Vec<u32> = (0..3)
            .map(|_| rng.gen_range(NUM_SPECIALS as u32..vocab_size as u32))
            .collect();
        let prompted = PromptedInput {
            tokens: input.clone(),
            pattern_id: 0,
        };
        for beam_width in [8usize, 300] {
            let cfg = DecodeConfig {
                beam: beam_width,
                tau: 0.5,
                max_len,
            };
            let got = beam_search(&prompted, &p, &vocab, &cfg).unwrap();
            let want = oracle_top_k(&p, &input, max_len, beam_width.min(sequences));
            assert_eq!(got.len(), want.len());
            for (g, (tokens, score)) in got.iter().zip(&want) {
                assert_eq!(&g.tokens, tokens, "seed {seed} beam {beam_width}");
                assert_eq!(g.log_prob, *score, "seed {seed} beam {beam_width}");
                assert_eq!(
                    g.confidence,
                    (g.log_prob / (g.tokens.len() + 1) as f64).exp()
                );
            }
            checked += 1;
        }
    }

    // All-zero parameters tie every sequence of one length class; the lexical
    // tie break must then agree with the oracle's.
    let p = ModelParams {
        vocab_size,
        dim: 4,
        t: Tensors::zeros(vocab_size, 4),
    };
    let prompted = PromptedInput {
        tokens: vec![NUM_SPECIALS as u32, NUM_SPECIALS as u32 + 1],
        pattern_id: 0,
    };
    let cfg = DecodeConfig {
        beam: 8,
        tau: 0.5,
        max_len,
    };
    let got = beam_search(&prompted, &p, &vocab, &cfg).unwrap();
    let want = oracle_top_k(&p, &prompted.tokens, max_len, 8);
    let got_pairs: Vec<(Vec<u32>, f64)> =
        got.iter().map(|g| (g.tokens.clone(), g.log_prob)).collect();
    assert_eq!(got_pairs, want);
    checked += 1;

    println!(
        "PASS beam versus enumeration: {checked} runs over {sequences} closed sequences each"
    );
}

#[test]
fn adam_matches_hand_stepped_trace_and_first_step_closed_form() {
    const TOL: f64 = 1e-12;
    let cfg = AdamConfig {
        lr: 0.1,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };

    // Quadratic f(x) = x^2 / 2 from x = 1, so the gradient is x itself. The
    // trace below steps the update rule by hand.
    let mut x_hand = 1.0f64;
    let mut m = 0.0f64;
    let mut v = 0.0f64;
    let mut hand = Vec::new();
    for t in 1..=3 {
        let g = x_hand;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let m_hat = m / (1.0 - 0.9f64.powi(t));
        let v_hat = v / (1.0 - 0.999f64.powi(t));
        x_hand -= 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        hand.push(x_hand);
    }

    let vocab = 8;
    let mut p = ModelParams {
        vocab_size: vocab,
        dim: 1,
        t: Tensors::zeros(vocab, 1),
    };
    p.t.b_o[0] = 1.0;
    let mut state = AdamState::new(vocab, 1);
    for expect in &hand {
        let mut g = Tensors::zeros(vocab, 1);
        g.b_o[0] = p.t.b_o[0];
        adam_step(&mut p, &g, &mut state, &cfg).unwrap();
        assert!(
            (p.t.b_o[0] - expect).abs() < TOL,
            "trace diverged: {} versus {expect}",
            p.t.b_o[0]
        );
    }

    // First step with fresh moments collapses to -lr * g / (|g| + eps).
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let first_steps = 10;
    for _ in 0..first_steps {
        let gval: f64 = rng.gen_range(-5.0..5.0);
        if gval == 0.0 {
            continue;
        }
        let mut p = ModelParams {
            vocab_size: vocab,
            dim: 1,
            t: Tensors::zeros(vocab, 1),
        };
        let mut state = AdamState::new(vocab, 1);
        let mut g = Tensors::zeros(vocab, 1);
        g.b_o[0] = gval;
        adam_step(&mut p, &g, &mut state, &cfg).unwrap();
        let expect = -cfg.lr * gval / (gval.abs() + cfg.eps);
        assert!((p.t.b_o[0] - expect).abs() < TOL);
    }
    println!("PASS optimizer: 3-step hand trace and {first_steps} closed-form first steps");
}

#[test]
fn relative_f1_matches_harmonic_arithmetic() {
    // Reference figures: precision 82.30 and relative recall 79.62 must
    // combine to an F1 of 80.94, within a hundredth of a percentage point.
    let f1 = harmonic_mean(0.8230, 0.7962);
    assert!(
        (f1 * 100.0 - 80.94).abs() < 0.01,
        "harmonic mean gave {:.4}",
        f1 * 100.0
    );

    // The same combination rule must be what relative() applies to its own
    // exact-rational precision and recall.
    let rec = |sample_id: usize, predicted: &[&str], correct: &[&str]| EvalRecord {
        sample_id,
        predicted: predicted.iter().map(|s| s.to_string()).collect(),
        golden: predicted.iter().map(|s| s.to_string()).collect(),
        correct: correct.iter().map(|s| s.to_string()).collect(),
    };
    let sys_a = [
        rec(0, &["a"], &["a"]),
        rec(1, &["b"], &["b"]),
        rec(2, &["c"], &["c"]),
        rec(3, &["x", "y"], &["x"]),
    ];
    let sys_b = [
        rec(0, &["a"], &["a"]),
        rec(1, &["q"], &[]),
        rec(2, &["c", "d"], &["c", "d"]),
        rec(3, &["q"], &[]),
    ];
    let rel = relative(&[&sys_a, &sys_b]).unwrap();
    // Unions per sample: {a}, {b}, {c, d}, {x} give five pooled types.
    assert_eq!(rel.cts, 5);
    let precision = (1.0 + 1.0 + 1.0 + 0.5) / 4.0;
    let r_recall = 4.0 / 5.0;
    assert_eq!(rel.per_system[0].r_recall, r_recall);
    assert_eq!(
        rel.per_system[0].r_f1,
        2.0 * precision * r_recall / (precision + r_recall)
    );
    println!(
        "PASS relative F1 arithmetic: {:.4} from (82.30, 79.62); exact-rational pair agrees",
        f1 * 100.0
    );
}

#[test]
fn age_schedule_doubles_lambda_and_inclusion_reaches_full() {
    let samples = bundled_corpus();
    let (vocab, prepared) = prepared_corpus(&samples);
    let cfg = train_config(Strategy::SplPk, 1e-3);
    let init = init_params(vocab.size(), 32, cfg.seed).unwrap();
    let outcome = train(&prepared, init, &cfg).unwrap();

    assert_eq!(outcome.log.len(), cfg.epochs);
    for entry in &outcome.log {
        let expect = 0.5 * 2f64.powi(entry.epoch as i32);
        assert_eq!(
            entry.lambda,
            Some(expect),
            "age at logged epoch {} is not lambda0 * mu^epoch",
            entry.epoch
        );
    }
    for pair in outcome.log.windows(2) {
        assert!(
            pair[1].inclusion_ratio >= pair[0].inclusion_ratio,
            "inclusion ratio fell between epochs {} and {}",
            pair[0].epoch,
            pair[1].epoch
        );
    }
    let last = outcome.log.last().unwrap();
    assert_eq!(last.inclusion_ratio, 1.0);
    println!(
        "PASS age schedule: {} epochs, lambda exact, inclusion {:.3} -> 1.0",
        cfg.epochs, outcome.log[0].inclusion_ratio
    );
}

#[test]
fn prior_knowledge_orders_first_inclusion_and_plain_spl_equals_ft() {
    let samples = bundled_corpus();
    let (vocab, prepared) = prepared_corpus(&samples);

    // Weighted selection must admit the easy auto one-word units first and
    // the human units last, on average.
    let cfg = train_config(Strategy::SplPk, 1e-3);
    let init = init_params(vocab.size(), 32, cfg.seed).unwrap();
    let outcome = train(&prepared, init.clone(), &cfg).unwrap();
    let mean_first = |subset: Subset| -> f64 {
        let epochs: Vec<u64> = prepared
            .iter()
            .zip(&outcome.first_inclusion)
            .filter(|(u, _)| u.subset == subset)
            .map(|(_, f)| f.expect("every unit is eventually included"))
            .collect();
        assert!(!epochs.is_empty());
        epochs.iter().sum::<u64>() as f64 / epochs.len() as f64
    };
    let (a, b, c) = (mean_first(Subset::A), mean_first(Subset::B), mean_first(Subset::C));
    assert!(a <= b && b <= c, "first-inclusion means out of order: {a} {b} {c}");

    // Without prior knowledge and with an age that admits everything from
    // the start, self-paced training must reproduce plain fine-tuning bit
    // for bit, batches included.
    let ft_cfg = train_config(Strategy::Ft, 1e-3);
    let mut spl_cfg = train_config(Strategy::Spl, 1e-3);
    spl_cfg.lambda0 = 1e12;
    let ft = train(&prepared, init.clone(), &ft_cfg).unwrap();
    let spl = train(&prepared, init, &spl_cfg).unwrap();
    assert_eq!(ft.params.t.to_flat(), spl.params.t.to_flat());
    assert_eq!(ft.log.len(), spl.log.len());
    for (fe, se) in ft.log.iter().zip(&spl.log) {
        assert_eq!(fe.inclusion_ratio, 1.0);
        assert_eq!(se.inclusion_ratio, 1.0);
        assert_eq!(fe.mean_selected_loss, se.mean_selected_loss);
    }
    println!(
        "PASS prior-knowledge ordering: means A {a:.2} <= B {b:.2} <= C {c:.2}; plain spl == ft bitwise"
    );
}

fn generation_lengths(
    params: &gentype::model::ModelParams,
    vocab: &Vocabulary,
    samples: &[Sample],
) -> (usize, f64, f64) {
    let cfg = DecodeConfig::default();
    let mut surfaces: Vec<String> = Vec::new();
    for sample in samples {
        for p in generate(sample, params, vocab, 0, &cfg).unwrap() {
            surfaces.push(p.surface);
        }
    }
    let (_, multi) = length_distribution(surfaces.iter().map(String::as_str));
    let words: usize = surfaces
        .iter()
        .map(|s| s.split_whitespace().count())
        .sum();
    let len_avg = if surfaces.is_empty() {
        0.0
    } else {
        words as f64 / surfaces.len() as f64
    };
    (surfaces.len(), multi, len_avg)
}

#[test]
fn prior_knowledge_training_lengthens_generated_types() {
    let samples = bundled_corpus();
    let (vocab, prepared) = prepared_corpus(&samples);
    let init = init_params(vocab.size(), 32, 42).unwrap();

    let ft = train(&prepared, init.clone(), &train_config(Strategy::Ft, 5e-3)).unwrap();
    let pk = train(&prepared, init, &train_config(Strategy::SplPk, 5e-3)).unwrap();

    let (ft_n, ft_multi, ft_len) = generation_lengths(&ft.params, &vocab, &samples);
    let (pk_n, pk_multi, pk_len) = generation_lengths(&pk.params, &vocab, &samples);
    assert!(ft_n > 0, "baseline reserved no predictions");
    assert!(pk_n > 0, "weighted run reserved no predictions");
    assert!(
        pk_multi >= ft_multi,
        "multi-word ratio fell: {pk_multi:.3} < {ft_multi:.3}"
    );
    assert!(pk_len >= ft_len, "mean length fell: {pk_len:.3} < {ft_len:.3}");
    println!(
        "PASS granularity: multi-word ratio {ft_multi:.3} -> {pk_multi:.3}, mean length {ft_len:.3} -> {pk_len:.3}"
    );
}

#[test]
fn multi_word_types_probe_harder_than_single_word() {
    let samples = bundled_corpus();
    let (vocab, prepared) = prepared_corpus(&samples);
    let cfg = ProbeConfig {
        units: 100,
        dim: 32,
        inner_steps: 300,
        batch_size: 16,
        seed: 42,
        adam: AdamConfig {
            lr: 5e-3,
            ..AdamConfig::default()
        },
        threads: 1,
    };
    let probe = difficulty_probe(&prepared, vocab.size(), &cfg).unwrap();
    assert_eq!(probe.short.trajectory.len(), cfg.inner_steps);
    assert_eq!(probe.long.trajectory.len(), cfg.inner_steps);
    assert!(probe.short.final_mean_loss < probe.short.trajectory[0]);
    assert!(probe.long.final_mean_loss < probe.long.trajectory[0]);
    assert!(
        probe.long.final_mean_loss > probe.short.final_mean_loss,
        "multi-word arm converged lower: {} versus {}",
        probe.long.final_mean_loss,
        probe.short.final_mean_loss
    );
    println!(
        "PASS difficulty probe: one-word {:.4} < multi-word {:.4} after {} steps",
        probe.short.final_mean_loss, probe.long.final_mean_loss, cfg.inner_steps
    );
}

fn random_records(rng: &mut ChaCha8Rng, n: usize) -> Vec<EvalRecord> {
    let pool = [
        "company",
        "port city",
        "busy port city",
        "nation",
        "fruit",
        "cold nordic country",
        "sport",
        "animal",
    ];
    (0..n)
        .map(|sample_id| {
            let predicted: Vec<String> = (0..rng.gen_range(0..=3))
                .map(|_| pool[rng.gen_range(0..pool.len())].to_string())
                .collect();
            let golden: Vec<String> = (0..rng.gen_range(0..=2))
                .map(|_| pool[rng.gen_range(0..pool.len())].to_string())
                .collect();
            let correct: Vec<String> = predicted
                .iter()
                .filter(|_| rng.gen_bool(0.6))
                .cloned()
                .collect();
            EvalRecord {
                sample_id,
                predicted,
                golden,
                correct,
            }
        })
        .collect()
}

struct Recount {
    ct: usize,
    precision: f64,
    ma_new: usize,
    mi_new: usize,
    r_new: f64,
    len_avg: f64,
}

/// Scans the records with plain loops, mirroring the metric definitions.
fn recount(records: &[EvalRecord], predefined: &HashSet<String>) -> Recount {
    let mut ct = 0;
    let mut ratio_sum = 0.0;
    let mut with_predictions = 0;
    let mut words = 0;
    let mut predictions = 0;
    let mut mi_new = 0;
    let mut distinct: BTreeSet<&str> = BTreeSet::new();
    for r in records {
        ct += r.correct.len();
        if !r.predicted.is_empty() {
            with_predictions += 1;
            ratio_sum += r.correct.len() as f64 / r.predicted.len() as f64;
        }
        for p in &r.predicted {
            words += p.split_whitespace().count();
            predictions += 1;
        }
        for c in &r.correct {
            distinct.insert(c);
            if !r.golden.contains(c) {
                mi_new += 1;
            }
        }
    }
    Recount {
        ct,
        precision: if with_predictions == 0 {
            0.0
        } else {
            ratio_sum / with_predictions as f64
        },
        ma_new: distinct.iter().filter(|t| !predefined.contains(**t)).count(),
        mi_new,
        r_new: if ct == 0 { 0.0 } else { mi_new as f64 / ct as f64 },
        len_avg: if predictions == 0 {
            0.0
        } else {
            words as f64 / predictions as f64
        },
    }
}

fn recount_cts(systems: &[&[EvalRecord]]) -> usize {
    let ids: BTreeSet<usize> = systems[0].iter().map(|r| r.sample_id).collect();
    let mut cts = 0;
    for id in ids {
        let mut union: BTreeSet<&str> = BTreeSet::new();
        for records in systems {
            let r = records.iter().find(|r| r.sample_id == id).unwrap();
            for c in &r.correct {
                union.insert(c);
            }
        }
        cts += union.len();
    }
    cts
}

#[test]
fn metrics_match_brute_force_recount_on_random_sets() {
    let predefined: HashSet<String> =
        ["company", "nation", "sport"].iter().map(|s| s.to_string()).collect();
    let sets = 12;
    for seed in 0..sets {
        let mut rng = ChaCha8Rng::seed_from_u64(606 + seed);
        let n = rng.gen_range(5..=20);
        let sys_a = random_records(&mut rng, n);
        let sys_b = random_records(&mut rng, n);

        let got = report(&sys_a, &predefined);
        let want = recount(&sys_a, &predefined);
        assert_eq!(got.ct, want.ct);
        assert_eq!(got.precision, want.precision);
        assert_eq!(got.ma_new, want.ma_new);
        assert_eq!(got.mi_new, want.mi_new);
        assert_eq!(got.r_new, want.r_new);
        assert_eq!(got.len_avg, want.len_avg);

        let rel = relative(&[&sys_a, &sys_b]).unwrap();
        let cts = recount_cts(&[&sys_a, &sys_b]);
        assert_eq!(rel.cts, cts);
        for (records, metrics) in [&sys_a, &sys_b].iter().zip(&rel.per_system) {
            let own = recount(records, &predefined);
            let r_recall = if cts == 0 {
                0.0
            } else {
                own.ct as f64 / cts as f64
            };
            assert_eq!(metrics.r_recall, r_recall);
            let f1 = if own.precision + r_recall == 0.0 {
                0.0
            } else {
                2.0 * own.precision * r_recall / (own.precision + r_recall)
            };
            assert_eq!(metrics.r_f1, f1);
        }
    }
    println!("PASS metrics recount: {sets} randomized record sets, exact equality");
}

fn gentype(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_gentype"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("failed to spawn the binary");
    assert!(
        out.status.success(),
        "gentype {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

#[test]
fn cli_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let synth_a = ["--seed", "7", "synth", "--out", "c1.jsonl", "--size", "120"];
    let synth_b = ["--seed", "7", "synth", "--out", "c2.jsonl", "--size", "120"];
    let out1 = gentype(dir, &synth_a);
    let out2 = gentype(dir, &synth_a);
    assert_eq!(out1, out2, "synth stdout drifted between runs");
    gentype(dir, &synth_b);
    assert_eq!(
        fs::read(dir.join("c1.jsonl")).unwrap(),
        fs::read(dir.join("c2.jsonl")).unwrap(),
        "synthetic corpora differ across runs"
    );

    let train_args = [
        "--seed", "7", "train", "--corpus", "c1.jsonl", "--strategy", "spl-pk",
        "--out-dir", "out", "--epochs", "6", "--inner-steps", "30", "--dim", "16",
        "--lr", "0.005",
    ];
    let artifacts = ["manifest.json", "checkpoint.json", "train_log.jsonl"];
    let stdout_a = gentype(dir, &train_args);
    let snapshot: Vec<Vec<u8>> = artifacts
        .iter()
        .map(|f| fs::read(dir.join("out").join(f)).unwrap())
        .collect();
    fs::remove_dir_all(dir.join("out")).unwrap();
    let stdout_b = gentype(dir, &train_args);
    assert_eq!(stdout_a, stdout_b, "train stdout drifted between runs");
    for (f, before) in artifacts.iter().zip(&snapshot) {
        let after = fs::read(dir.join("out").join(f)).unwrap();
        assert_eq!(&after, before, "{f} drifted between runs");
    }

    let eval = |report: &str| -> Vec<u8> {
        gentype(
            dir,
            &[
                "--seed", "7", "evaluate", "--model", "out/checkpoint.json",
                "--corpus", "c1.jsonl", "--out", report,
            ],
        )
    };
    let ev1 = eval("r1.json");
    let ev2 = eval("r2.json");
    assert_eq!(ev1, ev2, "evaluate stdout drifted between runs");
    assert_eq!(
        fs::read(dir.join("r1.json")).unwrap(),
        fs::read(dir.join("r2.json")).unwrap(),
        "evaluation reports differ across runs"
    );

    let gen_args = [
        "generate", "--model", "out/checkpoint.json", "--text",
        "ships from many nations dock at portvik because its harbour stays open all year",
        "--mention", "portvik",
    ];
    assert_eq!(gentype(dir, &gen_args), gentype(dir, &gen_args));

    let cmp_args = ["compare", "--reports", "r1.json", "r2.json"];
    assert_eq!(gentype(dir, &cmp_args), gentype(dir, &cmp_args));

    let probe_args = [
        "--seed", "7", "diagnose", "difficulty", "--corpus", "c1.jsonl",
        "--probe-units", "40", "--inner-steps", "30",
    ];
    assert_eq!(gentype(dir, &probe_args), gentype(dir, &probe_args));

    println!("PASS determinism: synth, train, evaluate, generate, compare, diagnose byte-identical");
}
