//! Plain-text experiment configuration files.
//!
//! The format is line-oriented `key=value` pairs under four section
//! headers — `[model]`, `[placement]`, `[train]`, `[data]` — whose keys
//! mirror the fields of [`ModelConfig`], [`crate::model::PlacementSpec`],
//! [`TrainConfig`], and [`DataConfig`] one-to-one. `#` starts a comment
//! and blank lines are ignored. An optional `preset=<name>` line before
//! the first section expands a compiled-in preset first; the file's own
//! pairs then override it. Files without a preset line start from the
//! `desk` baseline. Unknown sections, unknown keys, and duplicate keys
//! are rejected by name, and `parse(render(c)) == c` for every config.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::layers::{BlockOrder, FfnKind, NormKind};
use crate::model::{AttnSubset, ModelConfig, PlacementMode, PositionKind};
use crate::scalar::Precision;
use crate::training::TrainConfig;

/// Where the corpus lives and how it is split.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// Path to the raw byte corpus; unset for presets, required by the
    /// training commands.
    pub corpus: Option<PathBuf>,
    /// Train/valid/test fractions, summing to 1.
    pub split_fractions: (f64, f64, f64),
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            corpus: None,
            split_fractions: (0.8, 0.1, 0.1),
        }
    }
}

/// One complete experiment: architecture, training recipe, and data.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.model.precision != self.train.precision {
            return Err(Error::Config(format!(
                "model precision {} disagrees with train precision {}",
                self.model.precision.as_str(),
                self.train.precision.as_str()
            )));
        }
        if self.train.seq_len > self.model.max_seq_len {
            return Err(Error::Config(format!(
                "train seq_len {} exceeds model max_seq_len {}",
                self.train.seq_len, self.model.max_seq_len
            )));
        }
        let (a, b, c) = self.data.split_fractions;
        if !(a > 0.0 && b >= 0.0 && c >= 0.0) || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split_fractions ({a}, {b}, {c}) must be non-negative and sum to 1"
            )));
        }
        Ok(())
    }

    /// Canonical rendering: every key of every section, in declaration
    /// order. The output parses back to an equal config.
    pub fn render(&self) -> String {
        let m = &self.model;
        let p = &m.placement;
        let t = &self.train;
        let mut out = String::new();
        out.push_str("[model]\n");
        out.push_str(&format!("vocab_size={}\n", m.vocab_size));
        out.push_str(&format!("d_model={}\n", m.d_model));
        out.push_str(&format!("head_count={}\n", m.head_count));
        out.push_str(&format!("ffn_dim={}\n", m.ffn_dim));
        out.push_str(&format!("layer_count={}\n", m.layer_count));
        out.push_str(&format!("max_seq_len={}\n", m.max_seq_len));
        out.push_str(&format!("norm={}\n", m.norm.as_str()));
        out.push_str(&format!("order={}\n", m.order.as_str()));
        out.push_str(&format!("ffn_variant={}\n", m.ffn_variant.as_str()));
        out.push_str(&format!("attn_inner_dim={}\n", m.attn_inner_dim));
        out.push_str(&format!("position={}\n", m.position.as_str()));
        out.push_str(&format!("tie_embeddings={}\n", m.tie_embeddings));
        out.push_str(&format!("precision={}\n", m.precision.as_str()));
        out.push_str("\n[placement]\n");
        out.push_str(&format!("mode={}\n", p.mode.as_str()));
        out.push_str(&format!("attn_sublayers={}\n", p.attn_sublayers.as_string()));
        out.push_str(&format!("rank={}\n", p.rank));
        out.push_str("\n[train]\n");
        out.push_str(&format!("learning_rate={}\n", t.learning_rate));
        out.push_str(&format!("warmup_fraction={}\n", t.warmup_fraction));
        out.push_str(&format!("final_lr_fraction={}\n", t.final_lr_fraction));
        out.push_str(&format!("batch_size={}\n", t.batch_size));
        out.push_str(&format!("seq_len={}\n", t.seq_len));
        out.push_str(&format!("total_steps={}\n", t.total_steps));
        out.push_str(&format!("adam_beta1={}\n", t.adam_beta1));
        out.push_str(&format!("adam_beta2={}\n", t.adam_beta2));
        out.push_str(&format!("adam_eps={}\n", t.adam_eps));
        out.push_str(&format!("weight_decay={}\n", t.weight_decay));
        out.push_str(&format!("grad_clip_norm={}\n", t.grad_clip_norm));
        out.push_str(&format!("seed={}\n", t.seed));
        out.push_str(&format!("eval_interval={}\n", t.eval_interval));
        out.push_str(&format!("precision={}\n", t.precision.as_str()));
        out.push_str("\n[data]\n");
        if let Some(path) = &self.data.corpus {
            out.push_str(&format!("corpus={}\n", path.display()));
        }
        let (a, b, c) = self.data.split_fractions;
        out.push_str(&format!("split_fractions={a},{b},{c}\n"));
        out
    }

    /// Parse a config file; see the module docs for the grammar.
    pub fn parse(text: &str) -> Result<Self> {
        let mut section: Option<&str> = None;
        let mut config: Option<ExperimentConfig> = None;
        let mut seen: std::collections::HashSet<String> = std::collections::HashSet::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fail = |msg: String| -> Error {
                Error::Config(format!("line {}: {msg}", lineno + 1))
            };

            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                match name {
                    "model" | "placement" | "train" | "data" => {}
                    other => return Err(fail(format!("unknown section [{other}]"))),
                }
                section = Some(match name {
                    "model" => "model",
                    "placement" => "placement",
                    "train" => "train",
                    _ => "data",
                });
                continue;
            }

            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| fail(format!("expected key=value, got {line:?}")))?;

            match section {
                None => {
                    if key != "preset" {
                        return Err(fail(format!(
                            "key {key:?} before any section (only preset= may appear here)"
                        )));
                    }
                    if config.is_some() {
                        return Err(fail("preset= must be the first directive".to_string()));
                    }
                    config = Some(crate::presets::lookup(value).ok_or_else(|| {
                        fail(format!("unknown preset {value:?}"))
                    })?);
                }
                Some(section) => {
                    let scoped = format!("{section}.{key}");
                    if !seen.insert(scoped.clone()) {
                        return Err(fail(format!("duplicate key {scoped}")));
                    }
                    let target = config.get_or_insert_with(default_base);
                    apply(target, section, key, value)
                        .map_err(|msg| fail(format!("{scoped}: {msg}")))?;
                }
            }
        }
        Ok(config.unwrap_or_else(default_base))
    }
}

/// The baseline a preset-less file overrides: the `desk` preset.
fn default_base() -> ExperimentConfig {
    crate::presets::lookup("desk").expect("desk preset exists")
}

fn apply(cfg: &mut ExperimentConfig, section: &str, key: &str, value: &str) -> Result<(), String> {
    fn num<T: std::str::FromStr>(value: &str) -> Result<T, String> {
        value
            .parse::<T>()
            .map_err(|_| format!("cannot parse {value:?}"))
    }
    match section {
        "model" => {
            let m = &mut cfg.model;
            match key {
                "vocab_size" => m.vocab_size = num(value)?,
                "d_model" => {
                    // Keep the attention width in lockstep unless the
                    // file overrides it explicitly later.
                    let d = num(value)?;
                    if m.attn_inner_dim == m.d_model {
                        m.attn_inner_dim = d;
                    }
                    m.d_model = d;
                }
                "head_count" => m.head_count = num(value)?,
                "ffn_dim" => m.ffn_dim = num(value)?,
                "layer_count" => m.layer_count = num(value)?,
                "max_seq_len" => m.max_seq_len = num(value)?,
                "norm" => {
                    m.norm = NormKind::parse(value)
                        .ok_or_else(|| format!("unknown norm {value:?}"))?
                }
                "order" => {
                    m.order = BlockOrder::parse(value)
                        .ok_or_else(|| format!("unknown order {value:?}"))?
                }
                "ffn_variant" => {
                    m.ffn_variant = FfnKind::parse(value)
                        .ok_or_else(|| format!("unknown ffn_variant {value:?}"))?
                }
                "attn_inner_dim" => m.attn_inner_dim = num(value)?,
                "position" => {
                    m.position = PositionKind::parse(value)
                        .ok_or_else(|| format!("unknown position {value:?}"))?
                }
                "tie_embeddings" => m.tie_embeddings = num(value)?,
                "precision" => {
                    m.precision = Precision::parse(value)
                        .ok_or_else(|| format!("unknown precision {value:?}"))?
                }
                other => return Err(format!("unknown key {other:?}")),
            }
        }
        "placement" => {
            let p = &mut cfg.model.placement;
            match key {
                "mode" => {
                    p.mode = PlacementMode::parse(value)
                        .ok_or_else(|| format!("unknown mode {value:?}"))?
                }
                "attn_sublayers" => {
                    p.attn_sublayers = AttnSubset::parse(value)
                        .ok_or_else(|| format!("unknown sublayer set {value:?}"))?
                }
                "rank" => p.rank = num(value)?,
                other => return Err(format!("unknown key {other:?}")),
            }
        }
        "train" => {
            let t = &mut cfg.train;
            match key {
                "learning_rate" => t.learning_rate = num(value)?,
                "warmup_fraction" => t.warmup_fraction = num(value)?,
                "final_lr_fraction" => t.final_lr_fraction = num(value)?,
                "batch_size" => t.batch_size = num(value)?,
                "seq_len" => t.seq_len = num(value)?,
                "total_steps" => t.total_steps = num(value)?,
                "adam_beta1" => t.adam_beta1 = num(value)?,
                "adam_beta2" => t.adam_beta2 = num(value)?,
                "adam_eps" => t.adam_eps = num(value)?,
                "weight_decay" => t.weight_decay = num(value)?,
                "grad_clip_norm" => t.grad_clip_norm = num(value)?,
                "seed" => t.seed = num(value)?,
                "eval_interval" => t.eval_interval = num(value)?,
                "precision" => {
                    t.precision = Precision::parse(value)
                        .ok_or_else(|| format!("unknown precision {value:?}"))?
                }
                other => return Err(format!("unknown key {other:?}")),
            }
        }
        "data" => match key {
            "corpus" => cfg.data.corpus = Some(PathBuf::from(value)),
            "split_fractions" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(format!("expected three fractions, got {value:?}"));
                }
                cfg.data.split_fractions = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
            }
            other => return Err(format!("unknown key {other:?}")),
        },
        _ => unreachable!("sections are validated at the header"),
    }
    Ok(())
}
