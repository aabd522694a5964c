//! Binary checkpoint serialization.
//!
//! Layout: 8 magic bytes `LPACKPT` + version digit; a 4-byte
//! little-endian length-prefixed UTF-8 config record (canonical sorted
//! `key=value` lines); a 4-byte tensor count; per tensor a length-prefixed
//! name, a 1-byte rank, rank 4-byte dims, then raw little-endian values
//! in row-major order at the config's precision; finally an 8-byte 64-bit
//! FNV-1a checksum over all preceding bytes (stored little-endian).
//!
//! Optional training state rides inside the same container: extra
//! `trainstate.*` lines in the config record and two extra tensors
//! (`opt.m.<name>`, `opt.v.<name>`) per parameter after the model
//! tensors.

use std::collections::BTreeMap;
use std::path::Path;

use super::{build_model, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 7] = b"LPACKPT";
const VERSION: u8 = b'1';

/// Optimizer and loop state needed to resume a run exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T: Scalar> {
    /// Completed optimizer steps (also the moment-correction counter).
    pub step: u64,
    /// Seed the run was started with.
    pub seed: u64,
    /// Token offset of the next training window in the train split.
    pub cursor: u64,
    /// Per-parameter first and second moment buffers, in model walk
    /// order: `(parameter name, m, v)`.
    pub moments: Vec<(String, Vec<T>, Vec<T>)>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 14695981039346656037;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(1099511628211);
    }
    hash
}

fn push_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v)
        .map_err(|_| Error::Format(format!("length {v} exceeds the 32-bit field")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Write `model` (and optional training state) to `path`.
pub fn save_checkpoint<T: Scalar>(
    model: &Model<T>,
    state: Option<&TrainState<T>>,
    path: &Path,
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);

    let mut record = model.config().to_record();
    if let Some(s) = state {
        let mut lines: Vec<String> = record.lines().map(str::to_owned).collect();
        lines.push(format!("trainstate.cursor={}", s.cursor));
        lines.push(format!("trainstate.seed={}", s.seed));
        lines.push(format!("trainstate.step={}", s.step));
        lines.sort();
        record = lines.join("\n");
        record.push('\n');
    }
    push_u32(&mut buf, record.len())?;
    buf.extend_from_slice(record.as_bytes());

    let mut tensors: Vec<(String, Vec<T>, Vec<usize>)> = model
        .named_params()
        .into_iter()
        .map(|(name, t)| {
            let shape = t.shape().to_vec();
            (name, t.to_vec(), shape)
        })
        .collect();
    if let Some(s) = state {
        for (name, m, v) in &s.moments {
            let param = model
                .named_params()
                .into_iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| {
                    Error::Format(format!("training state names unknown parameter {name}"))
                })?;
            let shape = param.1.shape().to_vec();
            tensors.push((format!("opt.m.{name}"), m.clone(), shape.clone()));
            tensors.push((format!("opt.v.{name}"), v.clone(), shape));
        }
    }

    push_u32(&mut buf, tensors.len())?;
    for (name, values, shape) in &tensors {
        push_u32(&mut buf, name.len())?;
        buf.extend_from_slice(name.as_bytes());
        buf.push(u8::try_from(shape.len()).expect("rank fits a byte"));
        for &d in shape {
            push_u32(&mut buf, d)?;
        }
        for &v in values {
            v.write_le(&mut buf);
        }
    }

    let checksum = fnv1a(&buf);
    buf.extend_from_slice(&checksum.to_le_bytes());
    std::fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!("truncated checkpoint: {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

fn parse_trainstate_scalars(record: &str) -> Result<Option<(u64, u64, u64)>> {
    let mut step = None;
    let mut seed = None;
    let mut cursor = None;
    for line in record.lines() {
        if let Some((key, value)) = line.split_once('=') {
            let slot = match key {
                "trainstate.step" => &mut step,
                "trainstate.seed" => &mut seed,
                "trainstate.cursor" => &mut cursor,
                _ => continue,
            };
            *slot = Some(value.parse::<u64>().map_err(|_| {
                Error::Format(format!("bad value {value:?} for {key}"))
            })?);
        }
    }
    match (step, seed, cursor) {
        (None, None, None) => Ok(None),
        (Some(st), Some(se), Some(cu)) => Ok(Some((st, se, cu))),
        _ => Err(Error::Format(
            "training state keys incomplete in config record".into(),
        )),
    }
}

/// Read just the embedded config of a checkpoint (integrity-checked).
pub fn peek_config(path: &Path) -> Result<ModelConfig> {
    let (record, _) = read_validated(path)?.1;
    ModelConfig::from_record(&record)
}

/// Verify framing and checksum; return the raw payload, the config
/// record, and a reader positioned at the tensor count.
fn read_validated(path: &Path) -> Result<(Vec<u8>, (String, usize))> {
    let buf = std::fs::read(path)?;
    if buf.len() < MAGIC.len() + 1 + 4 + 8 {
        return Err(Error::Format("file too short for a checkpoint".into()));
    }
    if &buf[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = buf[MAGIC.len()];
    if version != VERSION {
        return Err(Error::Version(version as char));
    }
    let body_len = buf.len() - 8;
    let stored = u64::from_le_bytes(buf[body_len..].try_into().expect("eight bytes"));
    if fnv1a(&buf[..body_len]) != stored {
        return Err(Error::Format("checksum mismatch".into()));
    }
    let mut r = Reader {
        buf: &buf[..body_len],
        pos: MAGIC.len() + 1,
    };
    let record_len = r.u32("config record length")?;
    let record_bytes = r.take(record_len, "config record")?;
    let record = std::str::from_utf8(record_bytes)
        .map_err(|_| Error::Format("config record is not UTF-8".into()))?
        .to_owned();
    let tensor_start = r.pos;
    Ok((buf, (record, tensor_start)))
}

/// Load a model (and training state, if present) from `path`. The file's
/// precision must match the element type `T`.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(Model<T>, Option<TrainState<T>>)> {
    let (buf, (record, tensor_start)) = read_validated(path)?;
    let config = ModelConfig::from_record(&record)?;
    if config.precision != T::PRECISION {
        return Err(Error::Config(format!(
            "checkpoint precision {} does not match element type {}",
            config.precision,
            T::PRECISION
        )));
    }
    let state_scalars = parse_trainstate_scalars(&record)?;

    let body_len = buf.len() - 8;
    let mut r = Reader {
        buf: &buf[..body_len],
        pos: tensor_start,
    };
    let count = r.u32("tensor count")?;
    let width = T::PRECISION.byte_width();
    let mut loaded: BTreeMap<String, (Vec<T>, Vec<usize>)> = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32("tensor name length")?;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_owned();
        let rank = r.u8("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("tensor dim")?);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * width, "tensor values")?;
        let values: Vec<T> = raw.chunks_exact(width).map(T::read_le).collect();
        if loaded.insert(name.clone(), (values, shape)).is_some() {
            return Err(Error::Format(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != body_len {
        return Err(Error::Format(format!(
            "{} unexpected bytes after the last tensor",
            body_len - r.pos
        )));
    }

    let model = build_model::<T>(&config, 0)?;
    let mut take = |name: &str, expect: &Tensor<T>| -> Result<Vec<T>> {
        let (values, shape) = loaded
            .remove(name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
        if shape != expect.shape() {
            return Err(Error::Format(format!(
                "tensor {name}: stored shape {:?} does not match model shape {:?}",
                shape,
                expect.shape()
            )));
        }
        Ok(values)
    };
    let params = model.named_params();
    for (name, tensor) in &params {
        let values = take(name, tensor)?;
        tensor.set_values(values)?;
    }

    let state = match state_scalars {
        None => None,
        Some((step, seed, cursor)) => {
            let mut moments = Vec::with_capacity(params.len());
            for (name, tensor) in &params {
                let m = take(&format!("opt.m.{name}"), tensor)?;
                let v = take(&format!("opt.v.{name}"), tensor)?;
                moments.push((name.clone(), m, v));
            }
            Some(TrainState {
                step,
                seed,
                cursor,
                moments,
            })
        }
    };
    if let Some(name) = loaded.keys().next() {
        return Err(Error::Format(format!("unexpected tensor {name}")));
    }
    Ok((model, state))
}
