//! Command-line surface: synth, ingest, partition, train, generate,
//! evaluate, compare, diagnose. Exit codes: 0 success, 1 runtime error,
//! 2 usage error. All outputs are deterministic given the seed.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use gentype::checkpoint;
use gentype::config::AppConfig;
use gentype::corpus::{self, Sample, Source, Subset, Vocabulary};
use gentype::curriculum::{self, PreparedUnit, Strategy, TrainOutcome};
use gentype::decode;
use gentype::error::{Error, Result};
use gentype::manifest::RunManifest;
use gentype::metrics::{self, EvalRecord, MetricsReport, ProbeConfig};
use gentype::model::{init_params, ModelParams};

#[derive(Parser)]
#[command(
    name = "gentype",
    version,
    about = "Generative entity typing with curriculum training"
)]
struct Cli {
    /// Flat key=value config file applied before command-line overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for loss sweeps; 1 keeps every output byte-identical.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args)]
struct TrainOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    inner_steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    pattern: Option<usize>,
    #[arg(long)]
    pcl_stage_epochs: Option<usize>,
    #[arg(long)]
    min_freq: Option<usize>,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut AppConfig) {
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.inner_steps {
            cfg.train.inner_steps = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.train.adam.lr = v;
        }
        if let Some(v) = self.lambda0 {
            cfg.train.lambda0 = v;
        }
        if let Some(v) = self.mu {
            cfg.train.mu = v;
        }
        if let Some(v) = self.dim {
            cfg.dim = v;
        }
        if let Some(v) = self.pattern {
            cfg.pattern = v;
        }
        if let Some(v) = self.pcl_stage_epochs {
            cfg.train.pcl_stage_epochs = Some(v);
        }
        if let Some(v) = self.min_freq {
            cfg.min_freq = v;
        }
    }
}

#[derive(Args)]
struct DecodeOverrides {
    #[arg(long)]
    pattern: Option<usize>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    max_len: Option<usize>,
}

impl DecodeOverrides {
    fn apply(&self, cfg: &mut AppConfig) {
        if let Some(v) = self.pattern {
            cfg.pattern = v;
        }
        if let Some(v) = self.beam {
            cfg.decode.beam = v;
        }
        if let Some(v) = self.tau {
            cfg.decode.tau = v;
        }
        if let Some(v) = self.max_len {
            cfg.decode.max_len = v;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Writes a deterministic synthetic corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Number of samples.
        #[arg(long)]
        size: usize,
        /// Fraction of multi-word type material, in [0, 1].
        #[arg(long, default_value_t = 0.5)]
        length_mix: f64,
        /// Fraction of human-annotated samples, in [0, 1].
        #[arg(long, default_value_t = 0.15)]
        human_frac: f64,
    },
    /// Validates a corpus and optionally writes its normalized form.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reports unit counts per curriculum subset.
    Partition {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        min_freq: Option<usize>,
    },
    /// Trains a model and writes manifest, checkpoint, and epoch log.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_parser = parse_strategy)]
        strategy: Strategy,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Generates type phrases for one mention in one text.
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        text: String,
        /// Mention surface; its first occurrence in the text is used.
        #[arg(long)]
        mention: String,
        #[command(flatten)]
        overrides: DecodeOverrides,
    },
    /// Evaluates a model over a gold corpus.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Allowed-types oracle: JSON Lines of {"sample_id": N, "type": "..."}.
        #[arg(long)]
        allowed: Option<PathBuf>,
        /// Predefined type set: one phrase per line.
        #[arg(long)]
        predefined: Option<PathBuf>,
        /// Report destination; stdout gets the metrics either way.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: DecodeOverrides,
    },
    /// Adds relative recall and F1 across two or more evaluation reports.
    Compare {
        #[arg(long, num_args = 2.., required = true)]
        reports: Vec<PathBuf>,
    },
    /// Diagnostic reports.
    Diagnose {
        #[command(subcommand)]
        mode: DiagnoseMode,
    },
}

#[derive(Subcommand)]
enum DiagnoseMode {
    /// Compares converged loss on one-word vs multi-word training units.
    Difficulty {
        #[arg(long)]
        corpus: PathBuf,
        /// Units per arm.
        #[arg(long, default_value_t = 100)]
        probe_units: usize,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Trains and reports per-epoch inclusion plus first-inclusion epochs.
    Inclusion {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_parser = parse_strategy)]
        strategy: Strategy,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Prediction length distribution of evaluation reports.
    Lengths {
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn resolve_config(cli: &Cli) -> Result<AppConfig> {
    let mut cfg = match &cli.config {
        Some(path) => AppConfig::from_file(path)?,
        None => AppConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.train.threads = threads;
    }
    Ok(cfg)
}

fn read_corpus(path: &Path) -> Result<Vec<Sample>> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    corpus::ingest(BufReader::new(file))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

struct PreparedCorpus {
    vocab: Vocabulary,
    prepared: Vec<PreparedUnit>,
}

fn prepare_corpus(path: &Path, cfg: &AppConfig) -> Result<PreparedCorpus> {
    let samples = read_corpus(path)?;
    let vocab = corpus::build_vocab(&samples, cfg.min_freq);
    let units = corpus::flatten(&samples, &vocab);
    let prepared = curriculum::prepare_units(&samples, &units, &vocab, cfg.pattern)?;
    Ok(PreparedCorpus { vocab, prepared })
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve_config(&cli)?;
    match cli.command {
        Command::Synth {
            out,
            size,
            length_mix,
            human_frac,
        } => cmd_synth(&cfg, &out, size, length_mix, human_frac),
        Command::Ingest { corpus, out } => cmd_ingest(&corpus, out.as_deref()),
        Command::Partition { corpus, min_freq } => {
            if let Some(v) = min_freq {
                cfg.min_freq = v;
            }
            cmd_partition(&cfg, &corpus)
        }
        Command::Train {
            corpus,
            strategy,
            out_dir,
            overrides,
        } => {
            overrides.apply(&mut cfg);
            cfg.train.strategy = strategy;
            cfg.validate()?;
            cmd_train(&cfg, &corpus, &out_dir)
        }
        Command::Generate {
            model,
            text,
            mention,
            overrides,
        } => {
            overrides.apply(&mut cfg);
            cfg.decode.validate()?;
            cmd_generate(&cfg, &model, &text, &mention)
        }
        Command::Evaluate {
            model,
            corpus,
            allowed,
            predefined,
            out,
            overrides,
        } => {
            overrides.apply(&mut cfg);
            cfg.decode.validate()?;
            cmd_evaluate(
                &cfg,
                &model,
                &corpus,
                allowed.as_deref(),
                predefined.as_deref(),
                out.as_deref(),
            )
        }
        Command::Compare { reports } => cmd_compare(&reports),
        Command::Diagnose { mode } => match mode {
            DiagnoseMode::Difficulty {
                corpus,
                probe_units,
                overrides,
            } => {
                overrides.apply(&mut cfg);
                cmd_diagnose_difficulty(&cfg, &corpus, probe_units)
            }
            DiagnoseMode::Inclusion {
                corpus,
                strategy,
                overrides,
            } => {
                overrides.apply(&mut cfg);
                cfg.train.strategy = strategy;
                cfg.validate()?;
                cmd_diagnose_inclusion(&cfg, &corpus)
            }
            DiagnoseMode::Lengths { reports } => cmd_diagnose_lengths(&reports),
        },
    }
}

fn cmd_synth(
    cfg: &AppConfig,
    out: &Path,
    size: usize,
    length_mix: f64,
    human_frac: f64,
) -> Result<()> {
    let samples = corpus::synth_corpus(cfg.train.seed, size, length_mix, human_frac)?;
    let file = File::create(out).map_err(|e| Error::file(out, e))?;
    corpus::serialize(&samples, BufWriter::new(file))?;
    print_json(&serde_json::json!({
        "path": out.display().to_string(),
        "samples": samples.len(),
        "seed": cfg.train.seed,
    }))
}

fn cmd_ingest(path: &Path, out: Option<&Path>) -> Result<()> {
    let samples = read_corpus(path)?;
    if let Some(out) = out {
        let file = File::create(out).map_err(|e| Error::file(out, e))?;
        corpus::serialize(&samples, BufWriter::new(file))?;
    }
    let human = samples.iter().filter(|s| s.source == Source::Human).count();
    print_json(&serde_json::json!({
        "samples": samples.len(),
        "auto": samples.len() - human,
        "human": human,
    }))
}

fn cmd_partition(cfg: &AppConfig, path: &Path) -> Result<()> {
    let samples = read_corpus(path)?;
    let vocab = corpus::build_vocab(&samples, cfg.min_freq);
    let units = corpus::flatten(&samples, &vocab);
    let count = |s: Subset| units.iter().filter(|u| u.subset == s).count();
    print_json(&serde_json::json!({
        "samples": samples.len(),
        "vocab": vocab.size(),
        "units": units.len(),
        "a": count(Subset::A),
        "b": count(Subset::B),
        "c": count(Subset::C),
    }))
}

fn train_summary(outcome: &TrainOutcome) -> serde_json::Value {
    serde_json::json!({
        "epochs": outcome.log.len(),
        "final_inclusion_ratio": outcome.log.last().map(|e| e.inclusion_ratio),
        "final_mean_selected_loss": outcome.log.last().map(|e| e.mean_selected_loss),
        "warnings": outcome.warnings,
    })
}

fn cmd_train(cfg: &AppConfig, corpus_path: &Path, out_dir: &Path) -> Result<()> {
    let pc = prepare_corpus(corpus_path, cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
    let manifest = RunManifest::new(
        "train",
        cfg.train.strategy.as_str(),
        corpus_path,
        cfg,
        &["checkpoint.json", "train_log.jsonl"],
    )?;
    manifest.write(&out_dir.join("manifest.json"))?;
    let init = init_params(pc.vocab.size(), cfg.dim, cfg.train.seed)?;
    let outcome = curriculum::train(&pc.prepared, init, &cfg.train)?;
    checkpoint::save_path(&out_dir.join("checkpoint.json"), &outcome.params, &pc.vocab)?;
    let log_path = out_dir.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| Error::file(&log_path, e))?);
    for entry in &outcome.log {
        serde_json::to_writer(&mut log, entry)?;
        log.write_all(b"\n")?;
    }
    log.flush()?;
    let mut summary = train_summary(&outcome);
    summary["out_dir"] = serde_json::json!(out_dir.display().to_string());
    summary["units"] = serde_json::json!(pc.prepared.len());
    print_json(&summary)
}

fn mention_sample(text: &str, mention: &str) -> Result<Sample> {
    let byte_start = text.find(mention).ok_or_else(|| {
        Error::Decode(format!("mention {mention:?} does not occur in the text"))
    })?;
    let char_start = text[..byte_start].chars().count();
    let char_end = char_start + mention.chars().count();
    Ok(Sample {
        text: text.to_string(),
        mention: mention.to_string(),
        mention_span: (char_start, char_end),
        types: Vec::new(),
        source: Source::Auto,
    })
}

fn cmd_generate(cfg: &AppConfig, model: &Path, text: &str, mention: &str) -> Result<()> {
    let (params, vocab) = checkpoint::load_path(model)?;
    let sample = mention_sample(text, mention)?;
    let preds = decode::generate(&sample, &params, &vocab, cfg.pattern, &cfg.decode)?;
    let out: Vec<serde_json::Value> = preds
        .iter()
        .map(|p| {
            serde_json::json!({
                "type": p.surface,
                "confidence": p.confidence,
            })
        })
        .collect();
    print_json(&out)
}

fn load_predefined(path: &Path) -> Result<HashSet<String>> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut set = HashSet::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        set.insert(corpus::normalize_phrase(trimmed));
    }
    Ok(set)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct EvalOutput {
    metrics: MetricsReport,
    records: Vec<EvalRecord>,
}

fn evaluate_corpus(
    cfg: &AppConfig,
    params: &ModelParams,
    vocab: &Vocabulary,
    samples: &[Sample],
    allowed: Option<&HashSet<(usize, String)>>,
    predefined: &HashSet<String>,
) -> Result<EvalOutput> {
    let mut records = Vec::with_capacity(samples.len());
    for (sample_id, sample) in samples.iter().enumerate() {
        let preds = decode::generate(sample, params, vocab, cfg.pattern, &cfg.decode)?;
        let predicted: Vec<String> = preds.into_iter().map(|p| p.surface).collect();
        let correct = metrics::judge(sample_id, &predicted, &sample.types, allowed);
        records.push(EvalRecord {
            sample_id,
            predicted,
            golden: sample.types.clone(),
            correct,
        });
    }
    Ok(EvalOutput {
        metrics: metrics::report(&records, predefined),
        records,
    })
}

fn cmd_evaluate(
    cfg: &AppConfig,
    model: &Path,
    corpus_path: &Path,
    allowed: Option<&Path>,
    predefined: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let (params, vocab) = checkpoint::load_path(model)?;
    let samples = read_corpus(corpus_path)?;
    let allowed_set = match allowed {
        Some(path) => {
            let file = File::open(path).map_err(|e| Error::file(path, e))?;
            Some(metrics::load_allowed(BufReader::new(file))?)
        }
        None => None,
    };
    let predefined_set = match predefined {
        Some(path) => load_predefined(path)?,
        None => HashSet::new(),
    };
    let output = evaluate_corpus(
        cfg,
        &params,
        &vocab,
        &samples,
        allowed_set.as_ref(),
        &predefined_set,
    )?;
    if let Some(out) = out {
        let mut text = serde_json::to_string_pretty(&output)?;
        text.push('\n');
        fs::write(out, text).map_err(|e| Error::file(out, e))?;
    }
    print_json(&output.metrics)
}

fn cmd_compare(reports: &[PathBuf]) -> Result<()> {
    let mut outputs = Vec::with_capacity(reports.len());
    for path in reports {
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        let output: EvalOutput = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Metrics(format!("{}: {e}", path.display())))?;
        for r in &output.records {
            if !r.correct.iter().all(|c| r.predicted.contains(c)) {
                return Err(Error::Metrics(format!(
                    "{}: sample {} lists correct types that were never predicted",
                    path.display(),
                    r.sample_id
                )));
            }
        }
        outputs.push(output);
    }
    let record_sets: Vec<&[EvalRecord]> =
        outputs.iter().map(|o| o.records.as_slice()).collect();
    let rel = metrics::relative(&record_sets)?;
    let rows: Vec<serde_json::Value> = reports
        .iter()
        .zip(&outputs)
        .zip(&rel.per_system)
        .map(|((path, output), r)| {
            serde_json::json!({
                "report": path.display().to_string(),
                "ct": output.metrics.ct,
                "precision": output.metrics.precision,
                "r_recall": r.r_recall,
                "r_f1": r.r_f1,
            })
        })
        .collect();
    print_json(&serde_json::json!({
        "cts": rel.cts,
        "systems": rows,
    }))
}

fn cmd_diagnose_difficulty(cfg: &AppConfig, corpus_path: &Path, probe_units: usize) -> Result<()> {
    let pc = prepare_corpus(corpus_path, cfg)?;
    let probe_cfg = ProbeConfig {
        units: probe_units,
        dim: cfg.dim,
        inner_steps: cfg.train.inner_steps,
        batch_size: cfg.train.batch_size,
        seed: cfg.train.seed,
        adam: cfg.train.adam,
        threads: cfg.train.threads,
    };
    let report = metrics::difficulty_probe(&pc.prepared, pc.vocab.size(), &probe_cfg)?;
    print_json(&report)
}

fn cmd_diagnose_inclusion(cfg: &AppConfig, corpus_path: &Path) -> Result<()> {
    let pc = prepare_corpus(corpus_path, cfg)?;
    let init = init_params(pc.vocab.size(), cfg.dim, cfg.train.seed)?;
    let outcome = curriculum::train(&pc.prepared, init, &cfg.train)?;
    let mean_first = |subset: Subset| -> Option<f64> {
        let epochs: Vec<u64> = pc
            .prepared
            .iter()
            .zip(&outcome.first_inclusion)
            .filter(|(u, f)| u.subset == subset && f.is_some())
            .map(|(_, f)| f.unwrap())
            .collect();
        if epochs.is_empty() {
            None
        } else {
            Some(epochs.iter().sum::<u64>() as f64 / epochs.len() as f64)
        }
    };
    let never = outcome.first_inclusion.iter().filter(|f| f.is_none()).count();
    print_json(&serde_json::json!({
        "strategy": cfg.train.strategy.as_str(),
        "log": outcome.log,
        "mean_first_inclusion_epoch": {
            "a": mean_first(Subset::A),
            "b": mean_first(Subset::B),
            "c": mean_first(Subset::C),
        },
        "never_included": never,
        "warnings": outcome.warnings,
    }))
}

fn cmd_diagnose_lengths(reports: &[PathBuf]) -> Result<()> {
    let mut rows = Vec::with_capacity(reports.len());
    for path in reports {
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        let output: EvalOutput = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Metrics(format!("{}: {e}", path.display())))?;
        let all: Vec<&str> = output
            .records
            .iter()
            .flat_map(|r| r.predicted.iter())
            .map(String::as_str)
            .collect();
        let (one, multi) = metrics::length_distribution(all.iter().copied());
        rows.push(serde_json::json!({
            "report": path.display().to_string(),
            "predictions": all.len(),
            "one_word_ratio": one,
            "multi_word_ratio": multi,
            "len_avg": output.metrics.len_avg,
        }));
    }
    print_json(&rows)
}
