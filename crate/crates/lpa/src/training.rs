//! Byte-level data pipeline, optimizer, schedule, training loop,
//! perplexity evaluation, the multi-seed runner, and a forward-pass
//! micro-benchmark.
//!
//! Everything is deterministic for a fixed seed, precision, and kernel
//! thread count, with one deliberate exception: the `wall_ms_per_step`
//! field of a metrics record is a measurement, not a contract.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_model, save_checkpoint, Model, ModelConfig, TrainState};
use crate::scalar::{Precision, Scalar};
use crate::tensor::Tensor;

/// Token id marking a document boundary (one past the last byte value).
pub const SENTINEL: usize = 256;

/// Identity byte tokenizer: token ids 0–255 are the byte values and
/// [`SENTINEL`] terminates a document.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    pub fn vocab_size(&self) -> usize {
        257
    }

    pub fn tokenize(&self, bytes: &[u8]) -> Vec<usize> {
        bytes.iter().map(|&b| b as usize).collect()
    }

    /// Map token ids back to bytes. Sentinels are dropped (they carry
    /// no byte); ids past the vocabulary are rejected.
    pub fn detokenize(&self, tokens: &[usize]) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(tokens.len());
        for &t in tokens {
            if t < SENTINEL {
                out.push(t as u8);
            } else if t > SENTINEL {
                return Err(Error::Data(format!(
                    "token id {t} outside the byte vocabulary"
                )));
            }
        }
        Ok(out)
    }
}

/// Contiguous token splits of one corpus file. Each split ends with a
/// sentinel, marking it as a self-contained document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl Corpus {
    /// Split a byte buffer contiguously by the given fractions (no
    /// shuffling, so re-reading the same file reproduces the splits).
    pub fn from_bytes(bytes: &[u8], fractions: (f64, f64, f64)) -> Result<Corpus> {
        if bytes.is_empty() {
            return Err(Error::Data("empty corpus".to_string()));
        }
        let (a, b, c) = fractions;
        if !(a > 0.0 && b >= 0.0 && c >= 0.0) || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::Data(format!(
                "split fractions ({a}, {b}, {c}) must be non-negative and sum to 1"
            )));
        }
        let n = bytes.len();
        let n_train = (n as f64 * a).floor() as usize;
        let n_valid = (n as f64 * b).floor() as usize;
        let tok = ByteTokenizer;
        let take = |range: std::ops::Range<usize>| {
            let mut split = tok.tokenize(&bytes[range]);
            split.push(SENTINEL);
            split
        };
        Ok(Corpus {
            train: take(0..n_train),
            valid: take(n_train..n_train + n_valid),
            test: take(n_train + n_valid..n),
        })
    }
}

/// Read a corpus file and split it.
pub fn load_corpus(path: &Path, fractions: (f64, f64, f64)) -> Result<Corpus> {
    let bytes = std::fs::read(path)?;
    Corpus::from_bytes(&bytes, fractions)
}

/// Everything the training loop needs besides the model and data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Fraction of `total_steps` spent in linear warmup.
    pub warmup_fraction: f64,
    /// Final learning rate as a fraction of the peak.
    pub final_lr_fraction: f64,
    /// Sequences per optimizer step.
    pub batch_size: usize,
    pub seq_len: usize,
    pub total_steps: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Global-norm clip threshold; 0 disables clipping.
    pub grad_clip_norm: f64,
    pub seed: u64,
    /// Evaluate (and checkpoint) every this many steps; 0 means only at
    /// the end.
    pub eval_interval: u64,
    pub precision: Precision,
}

impl TrainConfig {
    /// Standard pre-training defaults around the four knobs that vary
    /// between runs.
    pub fn new(learning_rate: f64, batch_size: usize, seq_len: usize, total_steps: u64) -> Self {
        TrainConfig {
            learning_rate,
            warmup_fraction: 0.01,
            final_lr_fraction: 0.1,
            batch_size,
            seq_len,
            total_steps,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            grad_clip_norm: 1.0,
            seed: 0,
            eval_interval: 100,
            precision: Precision::F32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad("warmup_fraction must lie strictly between 0 and 1");
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return bad("final_lr_fraction must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.seq_len == 0 || self.total_steps == 0 {
            return bad("batch_size, seq_len, and total_steps must be positive");
        }
        if self.learning_rate < 0.0 || self.grad_clip_norm < 0.0 || self.weight_decay < 0.0 {
            return bad("learning_rate, grad_clip_norm, and weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Learning rate at `step ∈ [0, total_steps]`: linear warmup from 0 to
/// the peak over `warmup_fraction·total_steps` steps, then cosine decay
/// to `final_lr_fraction·peak`.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    let peak = cfg.learning_rate;
    let total = cfg.total_steps;
    let warmup = ((total as f64 * cfg.warmup_fraction).round() as u64).clamp(1, total);
    if step <= warmup {
        return peak * step as f64 / warmup as f64;
    }
    let span = (total - warmup) as f64;
    let progress = (step.min(total) - warmup) as f64 / span;
    let floor = cfg.final_lr_fraction;
    peak * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// One line of the metrics stream. Field order is the serialized key
/// order; the eval fields appear only on evaluation steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub train_loss: f64,
    pub learning_rate: f64,
    pub tokens_seen: u64,
    pub wall_ms_per_step: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eval_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eval_ppl: Option<f64>,
}

impl MetricsRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Square root of the summed squared gradients across parameters,
/// accumulated in f64. Missing gradients count as zero.
pub fn global_grad_norm<T: Scalar>(params: &[(String, Tensor<T>)]) -> f64 {
    let mut sum = 0.0;
    for (_, p) in params {
        if let Some(g) = p.grad() {
            for v in g {
                let v = v.to_f64();
                sum += v * v;
            }
        }
    }
    sum.sqrt()
}

/// Scale every gradient so the global norm is at most `max_norm`.
/// Returns the pre-clip norm and whether clipping fired. `max_norm = 0`
/// disables clipping.
pub fn clip_gradient_norm<T: Scalar>(
    params: &[(String, Tensor<T>)],
    max_norm: f64,
) -> (f64, bool) {
    let norm = global_grad_norm(params);
    if max_norm <= 0.0 || norm <= max_norm {
        return (norm, false);
    }
    let factor = T::from_f64(max_norm / norm);
    for (_, p) in params {
        p.scale_grad(factor);
    }
    (norm, true)
}

struct Slot<T: Scalar> {
    name: String,
    param: Tensor<T>,
    m: Vec<T>,
    v: Vec<T>,
}

/// Adam with decoupled weight decay. Moment buffers live here; the
/// parameters themselves are shared handles into the model.
pub struct AdamW<T: Scalar> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step_count: u64,
    slots: Vec<Slot<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: Vec<(String, Tensor<T>)>, cfg: &TrainConfig) -> Self {
        let slots = params
            .into_iter()
            .map(|(name, param)| {
                let n = param.numel();
                Slot {
                    name,
                    param,
                    m: vec![T::zero(); n],
                    v: vec![T::zero(); n],
                }
            })
            .collect();
        AdamW {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            step_count: 0,
            slots,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Apply one update from the gradients currently stored on the
    /// parameters. Weight decay is decoupled: parameters shrink by
    /// `1 − lr·wd` before the Adam step; the moment estimates are
    /// bias-corrected by the running step count. A parameter with no
    /// gradient decays its moments toward zero instead of updating.
    pub fn step(&mut self, lr: f64) {
        self.step_count += 1;
        let bias1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bias2 = 1.0 - self.beta2.powi(self.step_count as i32);
        for slot in &mut self.slots {
            let grad = slot.param.grad();
            let grad_at = |i: usize| -> f64 {
                grad.as_ref().map_or(0.0, |g| g[i].to_f64())
            };
            let mut values = slot.param.to_vec();
            let decay = 1.0 - lr * self.weight_decay;
            for (i, value) in values.iter_mut().enumerate() {
                let g = grad_at(i);
                let m = self.beta1 * slot.m[i].to_f64() + (1.0 - self.beta1) * g;
                let v = self.beta2 * slot.v[i].to_f64() + (1.0 - self.beta2) * g * g;
                slot.m[i] = T::from_f64(m);
                slot.v[i] = T::from_f64(v);
                let m_hat = m / bias1;
                let v_hat = v / bias2;
                let mut x = value.to_f64();
                if self.weight_decay > 0.0 {
                    x *= decay;
                }
                x -= lr * m_hat / (v_hat.sqrt() + self.eps);
                *value = T::from_f64(x);
            }
            slot.param
                .set_values(values)
                .expect("update preserves the shape");
        }
    }

    /// Moment buffers in slot order, for checkpointing.
    pub fn moments(&self) -> Vec<(String, Vec<T>, Vec<T>)> {
        self.slots
            .iter()
            .map(|s| (s.name.clone(), s.m.clone(), s.v.clone()))
            .collect()
    }

    /// Restore moment buffers (inverse of [`AdamW::moments`]).
    pub fn restore(&mut self, step_count: u64, moments: &[(String, Vec<T>, Vec<T>)]) -> Result<()> {
        if moments.len() != self.slots.len() {
            return Err(Error::Config(format!(
                "optimizer state has {} parameters, model has {}",
                moments.len(),
                self.slots.len()
            )));
        }
        for (slot, (name, m, v)) in self.slots.iter_mut().zip(moments) {
            if &slot.name != name || m.len() != slot.m.len() || v.len() != slot.v.len() {
                return Err(Error::Config(format!(
                    "optimizer state mismatch at parameter {name}"
                )));
            }
            slot.m = m.clone();
            slot.v = v.clone();
        }
        self.step_count = step_count;
        Ok(())
    }
}

/// Sequential non-overlapping windows over a token stream, wrapping to
/// the start when the tail is too short for one more window.
struct WindowSampler<'a> {
    tokens: &'a [usize],
    cursor: usize,
}

impl<'a> WindowSampler<'a> {
    fn new(tokens: &'a [usize], window: usize, cursor: usize) -> Result<Self> {
        if tokens.len() < window {
            return Err(Error::Data(format!(
                "split of {} tokens is shorter than one {window}-token window",
                tokens.len()
            )));
        }
        Ok(WindowSampler {
            tokens,
            cursor: cursor % tokens.len(),
        })
    }

    fn next_window(&mut self, window: usize) -> &'a [usize] {
        if self.cursor + window > self.tokens.len() {
            self.cursor = 0;
        }
        let out = &self.tokens[self.cursor..self.cursor + window];
        self.cursor += window;
        out
    }
}

/// What a finished run hands back: the full metrics stream plus the
/// first and last train losses for quick stability checks.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<MetricsRecord>,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Where the final checkpoint was written, when an output directory
    /// was given.
    pub checkpoint_path: Option<PathBuf>,
}

/// File names used inside a run's output directory.
pub const METRICS_FILE: &str = "run.metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// Run next-token training for `cfg.total_steps` optimizer steps.
///
/// The model is updated in place through its parameter handles. Batches
/// are consecutive non-overlapping windows of the train split in file
/// order. When `out_dir` is given, a metrics line is appended per step
/// and a checkpoint (with optimizer state) is written at every
/// evaluation and at the end. A non-finite loss or gradient aborts with
/// a training error naming the step.
pub fn train<T: Scalar>(
    model: &Model<T>,
    corpus: &Corpus,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.precision != T::PRECISION {
        return Err(Error::Config(format!(
            "train config asks for {} but the model stores {}",
            cfg.precision.as_str(),
            T::PRECISION.as_str()
        )));
    }
    if cfg.seq_len > model.config().max_seq_len {
        return Err(Error::Config(format!(
            "seq_len {} exceeds the model's max_seq_len {}",
            cfg.seq_len,
            model.config().max_seq_len
        )));
    }

    let window = cfg.seq_len + 1;
    let mut sampler = WindowSampler::new(&corpus.train, window, 0)?;
    let params = model.named_params();
    let mut opt = AdamW::new(params.clone(), cfg);

    let mut metrics_file = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(std::io::BufWriter::new(std::fs::File::create(
                dir.join(METRICS_FILE),
            )?))
        }
        None => None,
    };
    let checkpoint_path = out_dir.map(|d| d.join(CHECKPOINT_FILE));

    let mut records: Vec<MetricsRecord> = Vec::with_capacity(cfg.total_steps as usize);
    let mut tokens_seen: u64 = 0;

    for step in 1..=cfg.total_steps {
        let started = Instant::now();
        let batch: Vec<Vec<usize>> = (0..cfg.batch_size)
            .map(|_| sampler.next_window(window).to_vec())
            .collect();

        model.zero_grads();
        let loss = model.lm_loss(&batch)?;
        let loss_value = loss.item().to_f64();
        if !loss_value.is_finite() {
            return Err(Error::Train {
                step,
                reason: format!("non-finite loss {loss_value}"),
            });
        }
        loss.backward()?;

        let (grad_norm, _) = clip_gradient_norm(&params, cfg.grad_clip_norm);
        if !grad_norm.is_finite() {
            return Err(Error::Train {
                step,
                reason: format!("non-finite gradient norm {grad_norm}"),
            });
        }

        let lr = lr_at(step, cfg);
        opt.step(lr);
        tokens_seen += (cfg.batch_size * cfg.seq_len) as u64;

        let evaluating = cfg.eval_interval > 0
            && step % cfg.eval_interval == 0
            && corpus.valid.len() >= 2;
        let (eval_loss, eval_ppl) = if evaluating {
            let eval = evaluate_ppl(model, &corpus.valid, cfg.seq_len)?;
            (Some(eval.nll), Some(eval.ppl))
        } else {
            (None, None)
        };

        let record = MetricsRecord {
            step,
            train_loss: loss_value,
            learning_rate: lr,
            tokens_seen,
            wall_ms_per_step: started.elapsed().as_secs_f64() * 1e3,
            eval_loss,
            eval_ppl,
        };
        if let Some(file) = metrics_file.as_mut() {
            writeln!(file, "{}", record.to_json_line())?;
        }
        records.push(record);

        if let Some(path) = checkpoint_path.as_deref() {
            if evaluating || step == cfg.total_steps {
                let state = TrainState {
                    step,
                    seed: cfg.seed,
                    cursor: sampler.cursor as u64,
                    moments: opt.moments(),
                };
                save_checkpoint(model, Some(&state), path)?;
            }
        }
    }
    if let Some(file) = metrics_file.as_mut() {
        file.flush()?;
    }

    Ok(TrainOutcome {
        initial_loss: records.first().map(|r| r.train_loss).unwrap_or(f64::NAN),
        final_loss: records.last().map(|r| r.train_loss).unwrap_or(f64::NAN),
        records,
        checkpoint_path,
    })
}

/// Mean next-token negative log-likelihood and its exponential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub nll: f64,
    pub ppl: f64,
    /// Number of predicted tokens behind the mean.
    pub tokens: u64,
}

/// Evaluate mean NLL over non-overlapping windows of `seq_len + 1`
/// tokens (a shorter final window is kept if it still has a target).
pub fn evaluate_ppl<T: Scalar>(
    model: &Model<T>,
    tokens: &[usize],
    seq_len: usize,
) -> Result<EvalReport> {
    if tokens.len() < 2 {
        return Err(Error::Data(format!(
            "evaluation stream has {} tokens; need at least 2",
            tokens.len()
        )));
    }
    if seq_len == 0 || seq_len > model.config().max_seq_len {
        return Err(Error::Config(format!(
            "evaluation seq_len {seq_len} outside 1..={}",
            model.config().max_seq_len
        )));
    }
    let window = seq_len + 1;
    let mut total_nll = 0.0;
    let mut total_tokens = 0u64;
    let mut start = 0;
    while start + 2 <= tokens.len() {
        let end = (start + window).min(tokens.len());
        let slice = tokens[start..end].to_vec();
        let predicted = (slice.len() - 1) as u64;
        let loss = model.lm_loss(&[slice])?.item().to_f64();
        total_nll += loss * predicted as f64;
        total_tokens += predicted;
        start = end;
    }
    let nll = total_nll / total_tokens as f64;
    Ok(EvalReport {
        nll,
        ppl: nll.exp(),
        tokens: total_tokens,
    })
}

/// One seed's result inside a [`SeedsReport`].
#[derive(Debug, Clone, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub final_train_loss: f64,
    pub test_nll: f64,
    pub test_ppl: f64,
}

/// Sample mean and standard deviation of test perplexity across seeds.
#[derive(Debug, Clone, Serialize)]
pub struct SeedsReport {
    pub mean_ppl: f64,
    pub std_ppl: f64,
    pub runs: Vec<SeedRun>,
    /// True when only one seed ran, making the deviation meaningless.
    pub single_seed: bool,
}

impl SeedsReport {
    /// The `mean ± std` presentation, two decimals.
    pub fn summary_line(&self) -> String {
        let seeds: Vec<String> = self.runs.iter().map(|r| r.seed.to_string()).collect();
        let caveat = if self.single_seed { " (single seed)" } else { "" };
        format!(
            "ppl {:.2}±{:.2} over seeds [{}]{caveat}",
            self.mean_ppl,
            self.std_ppl,
            seeds.join(", ")
        )
    }
}

/// Train one fresh model per seed and aggregate test perplexity.
/// Per-seed outputs land in `out_dir/seed-<n>/` when a directory is
/// given.
pub fn run_seeds<T: Scalar>(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    corpus: &Corpus,
    seeds: &[u64],
    out_dir: Option<&Path>,
) -> Result<SeedsReport> {
    if seeds.is_empty() {
        return Err(Error::Config("seed list is empty".to_string()));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let model = build_model::<T>(model_cfg, seed)?;
        let mut cfg = train_cfg.clone();
        cfg.seed = seed;
        let seed_dir = out_dir.map(|d| d.join(format!("seed-{seed}")));
        let outcome = train(&model, corpus, &cfg, seed_dir.as_deref())?;
        let eval = evaluate_ppl(&model, &corpus.test, cfg.seq_len)?;
        runs.push(SeedRun {
            seed,
            final_train_loss: outcome.final_loss,
            test_nll: eval.nll,
            test_ppl: eval.ppl,
        });
    }
    let n = runs.len() as f64;
    let mean_ppl = runs.iter().map(|r| r.test_ppl).sum::<f64>() / n;
    let std_ppl = if runs.len() > 1 {
        let ss: f64 = runs.iter().map(|r| (r.test_ppl - mean_ppl).powi(2)).sum();
        (ss / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let single_seed = runs.len() == 1;
    Ok(SeedsReport {
        mean_ppl,
        std_ppl,
        runs,
        single_seed,
    })
}

/// Timing and counted work for repeated forward passes.
#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub median_wall_ms: f64,
    /// Multiply-accumulates in parameter matmuls, one forward pass.
    pub weight_macs: u64,
    /// Multiply-accumulates in score/value products, one forward pass.
    pub activation_macs: u64,
    /// `2·weight + activation`, the convention of the closed forms.
    pub weighted_flops: u64,
    pub repeats: usize,
    /// True when a single repeat makes the median a lone sample.
    pub low_confidence: bool,
}

/// Median wall time of `repeats` forward passes over a fixed
/// pseudo-random token sequence, after three warmups; the counted FLOPs
/// come from an instrumented warmup pass.
pub fn bench_eval<T: Scalar>(model: &Model<T>, seq_len: usize, repeats: usize) -> Result<BenchReport> {
    if repeats == 0 {
        return Err(Error::Config("bench repeats must be positive".to_string()));
    }
    if seq_len == 0 || seq_len > model.config().max_seq_len {
        return Err(Error::Config(format!(
            "bench seq_len {seq_len} outside 1..={}",
            model.config().max_seq_len
        )));
    }
    let vocab = model.config().vocab_size;
    let mut state = 0x00c0_ffee_u64;
    let tokens: Vec<usize> = (0..seq_len)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 33) as usize) % vocab
        })
        .collect();

    model.forward_tokens(&tokens)?;
    model.forward_tokens(&tokens)?;
    let (warmup, counted) = crate::tensor::flops::measure(|| model.forward_tokens(&tokens));
    warmup?;

    let mut times_ms: Vec<f64> = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let started = Instant::now();
        model.forward_tokens(&tokens)?;
        times_ms.push(started.elapsed().as_secs_f64() * 1e3);
    }
    times_ms.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let median_wall_ms = if times_ms.len() % 2 == 1 {
        times_ms[times_ms.len() / 2]
    } else {
        let hi = times_ms.len() / 2;
        (times_ms[hi - 1] + times_ms[hi]) / 2.0
    };

    Ok(BenchReport {
        median_wall_ms,
        weight_macs: counted.weight_macs,
        activation_macs: counted.activation_macs,
        weighted_flops: counted.weighted_flops(),
        repeats,
        low_confidence: repeats == 1,
    })
}
