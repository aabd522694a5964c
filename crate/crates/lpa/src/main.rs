//! Command-line surface: price configurations, run experiments, and
//! self-verify, all from compiled-in presets or plain-text config files.
//!
//! Exit codes: 0 on success, 1 when a verification check fails, 2 for
//! usage or configuration problems, 3 when training aborts at runtime.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use lpa::accounting::{
    allocate_surplus, attention_flops_for, count_params, AllocationStrategy,
};
use lpa::error::{Error, Result};
use lpa::expconfig::ExperimentConfig;
use lpa::model::{build_model, load_checkpoint, peek_config, Model, PlacementSpec};
use lpa::presets;
use lpa::scalar::{Precision, Scalar};
use lpa::training::{
    bench_eval, evaluate_ppl, load_corpus, run_seeds, train, ByteTokenizer, Corpus, SENTINEL,
};
use lpa::verify::{all_passed, run_suite, Suite};

#[derive(Parser)]
#[command(
    name = "lpa",
    version,
    about = "Desk-scale laboratory for transformers with low-dimensional projected attention"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Price a configuration: parameter totals per component, the dense
    /// twin's total, and the delta between them.
    Count {
        /// Config file to price (alternative to --preset).
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Compiled-in preset name to price (see `count --preset help`).
        #[arg(long, value_name = "NAME")]
        preset: Option<String>,
        /// Human-readable table, or one JSON object on one line.
        #[arg(long, default_value = "table", value_parser = ["table", "records"])]
        format: String,
    },
    /// Attention-projection FLOPs for a preset at a sequence length,
    /// alongside its dense twin and the resulting ratio.
    Flops {
        #[arg(long, value_name = "NAME")]
        preset: String,
        #[arg(long, value_name = "L")]
        seq_len: usize,
    },
    /// Train a model described by a config file; writes metrics and a
    /// resumable checkpoint into --out.
    Train {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Seed for initialization and batch order.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (created if missing).
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a byte corpus; prints {nll, ppl, tokens}.
    Eval {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Plain bytes to evaluate on (used whole, as one held-out stream).
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
    },
    /// Train one fresh model per seed and report mean±std test perplexity.
    Seeds {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Comma-separated seed list, e.g. 1,2,3.
        #[arg(long, value_name = "A,B,C")]
        seeds: String,
    },
    /// Run self-check suites; one JSON outcome line per check, exit 0
    /// only if every check passes.
    Verify {
        #[arg(
            long,
            default_value = "all",
            value_parser = ["grad", "jacobian", "equivalence", "accounting", "all"]
        )]
        suite: String,
    },
    /// Grow one knob of a preset until its parameter total reaches a
    /// target, then print the resulting config file.
    Allocate {
        #[arg(long, value_name = "NAME")]
        preset: String,
        #[arg(long, value_name = "N")]
        target_params: u64,
        #[arg(long, value_parser = ["attn_dim", "ffn_dim", "layer_num"])]
        strategy: String,
    },
    /// Median forward-pass wall time plus counted FLOPs for a preset and
    /// its dense twin.
    Bench {
        #[arg(long, value_name = "NAME")]
        preset: String,
        #[arg(long, value_name = "L", default_value_t = 256)]
        seq_len: usize,
        /// Timed passes behind the median (after three warmups).
        #[arg(long, default_value_t = 10)]
        repeats: usize,
    },
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Count {
            config,
            preset,
            format,
        } => cmd_count(config.as_deref(), preset.as_deref(), &format),
        Command::Flops { preset, seq_len } => cmd_flops(&preset, seq_len),
        Command::Train { config, seed, out } => {
            let cfg = load_config_file(&config)?;
            match cfg.model.precision {
                Precision::F32 => cmd_train::<f32>(&cfg, seed, &out),
                Precision::F64 => cmd_train::<f64>(&cfg, seed, &out),
            }
        }
        Command::Eval { checkpoint, data } => {
            match peek_config(&checkpoint)?.precision {
                Precision::F32 => cmd_eval::<f32>(&checkpoint, &data),
                Precision::F64 => cmd_eval::<f64>(&checkpoint, &data),
            }
        }
        Command::Seeds { config, seeds } => {
            let cfg = load_config_file(&config)?;
            let seeds = parse_seed_list(&seeds)?;
            match cfg.model.precision {
                Precision::F32 => cmd_seeds::<f32>(&cfg, &seeds),
                Precision::F64 => cmd_seeds::<f64>(&cfg, &seeds),
            }
        }
        Command::Verify { suite } => cmd_verify(&suite),
        Command::Allocate {
            preset,
            target_params,
            strategy,
        } => cmd_allocate(&preset, target_params, &strategy),
        Command::Bench {
            preset,
            seq_len,
            repeats,
        } => {
            let cfg = preset_config(&preset)?;
            match cfg.model.precision {
                Precision::F32 => cmd_bench::<f32>(&cfg, seq_len, repeats),
                Precision::F64 => cmd_bench::<f64>(&cfg, seq_len, repeats),
            }
        }
    }
}

fn load_config_file(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read config {}: {e}", path.display())))?;
    let cfg = ExperimentConfig::parse(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

fn preset_config(name: &str) -> Result<ExperimentConfig> {
    presets::lookup(name).ok_or_else(|| {
        Error::Config(format!(
            "unknown preset {name:?}; available: {}",
            presets::names().join(", ")
        ))
    })
}

fn resolve_config(config: Option<&Path>, preset: Option<&str>) -> Result<ExperimentConfig> {
    match (config, preset) {
        (Some(path), None) => load_config_file(path),
        (None, Some(name)) => preset_config(name),
        _ => Err(Error::Config(
            "give exactly one of --config or --preset".into(),
        )),
    }
}

fn require_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    let path = cfg.data.corpus.as_ref().ok_or_else(|| {
        Error::Config("no corpus: set [data] corpus=<path> in the config".into())
    })?;
    load_corpus(path, cfg.data.split_fractions)
}

fn parse_seed_list(text: &str) -> Result<Vec<u64>> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("bad seed {part:?} in --seeds list")))
        })
        .collect()
}

fn cmd_count(config: Option<&Path>, preset: Option<&str>, format: &str) -> Result<i32> {
    let cfg = resolve_config(config, preset)?;
    let report = count_params(&cfg.model);
    match format {
        "records" => println!("{}", report.to_record()),
        _ => print!("{}", report.render_table()),
    }
    Ok(0)
}

fn cmd_flops(preset: &str, seq_len: usize) -> Result<i32> {
    if seq_len == 0 {
        return Err(Error::Config("--seq-len must be positive".into()));
    }
    let cfg = preset_config(preset)?;
    let per_sequence = attention_flops_for(&cfg.model, seq_len);
    let mut dense_model = cfg.model.clone();
    dense_model.placement = PlacementSpec::dense();
    let dense_per_sequence = attention_flops_for(&dense_model, seq_len);
    let record = serde_json::json!({
        "preset": preset,
        "seq_len": seq_len,
        "attention_flops_per_sequence": per_sequence,
        "attention_flops_per_token": per_sequence / seq_len as u64,
        "dense_flops_per_sequence": dense_per_sequence,
        "ratio_vs_dense": per_sequence as f64 / dense_per_sequence as f64,
    });
    println!("{record}");
    Ok(0)
}

fn cmd_train<T: Scalar>(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<i32> {
    let corpus = require_corpus(cfg)?;
    std::fs::create_dir_all(out)?;
    let model: Model<T> = build_model(&cfg.model, seed)?;
    let outcome = train(&model, &corpus, &cfg.train, Some(out))?;
    let checkpoint = outcome
        .checkpoint_path
        .as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default();
    println!(
        "{}",
        serde_json::json!({
            "steps": outcome.records.len(),
            "initial_loss": outcome.initial_loss,
            "final_loss": outcome.final_loss,
            "checkpoint": checkpoint,
        })
    );
    Ok(0)
}

fn cmd_eval<T: Scalar>(checkpoint: &Path, data: &Path) -> Result<i32> {
    let (model, _state): (Model<T>, _) = load_checkpoint(checkpoint)?;
    let bytes = std::fs::read(data)
        .map_err(|e| Error::Data(format!("cannot read data {}: {e}", data.display())))?;
    let mut tokens = ByteTokenizer.tokenize(&bytes);
    tokens.push(SENTINEL);
    let report = evaluate_ppl(&model, &tokens, model.config().max_seq_len)?;
    println!(
        "{}",
        serde_json::json!({
            "nll": report.nll,
            "ppl": report.ppl,
            "tokens": report.tokens,
        })
    );
    Ok(0)
}

fn cmd_seeds<T: Scalar>(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<i32> {
    let corpus = require_corpus(cfg)?;
    let report = run_seeds::<T>(&cfg.model, &cfg.train, &corpus, seeds, None)?;
    for run in &report.runs {
        println!("{}", serde_json::to_string(run).expect("run serializes"));
    }
    println!("{}", report.summary_line());
    Ok(0)
}

fn cmd_verify(suite: &str) -> Result<i32> {
    let suite = Suite::parse(suite)
        .ok_or_else(|| Error::Config(format!("unknown verification suite {suite:?}")))?;
    let outcomes = run_suite(suite);
    for outcome in &outcomes {
        println!("{}", outcome.render_line());
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    eprintln!("{passed}/{} checks passed", outcomes.len());
    Ok(if all_passed(&outcomes) { 0 } else { 1 })
}

fn cmd_allocate(preset: &str, target_params: u64, strategy: &str) -> Result<i32> {
    let strategy = AllocationStrategy::parse(strategy)
        .ok_or_else(|| Error::Config(format!("unknown allocation strategy {strategy:?}")))?;
    let mut cfg = preset_config(preset)?;
    let allocation = allocate_surplus(&cfg.model, target_params, strategy)?;
    eprintln!(
        "achieved {} of target {target_params} (growth quantum {})",
        allocation.achieved_total, allocation.quantum
    );
    cfg.model = allocation.config;
    print!("{}", cfg.render());
    Ok(0)
}

fn cmd_bench<T: Scalar>(cfg: &ExperimentConfig, seq_len: usize, repeats: usize) -> Result<i32> {
    let mut variants = vec![("dense", {
        let mut dense = cfg.model.clone();
        dense.placement = PlacementSpec::dense();
        dense
    })];
    if cfg.model.placement != PlacementSpec::dense() {
        variants.push((cfg.model.placement.mode.as_str(), cfg.model.clone()));
    }
    for (label, model_cfg) in variants {
        let model: Model<T> = build_model(&model_cfg, 0)?;
        let report = bench_eval(&model, seq_len, repeats)?;
        println!(
            "{}",
            serde_json::json!({
                "placement": label,
                "seq_len": seq_len,
                "median_wall_ms": report.median_wall_ms,
                "weight_macs": report.weight_macs,
                "activation_macs": report.activation_macs,
                "weighted_flops": report.weighted_flops,
                "repeats": report.repeats,
                "low_confidence": report.low_confidence,
            })
        );
    }
    Ok(0)
}
