//! Forward operations and the recorded graph edges.
//!
//! Every op computes its result eagerly, then (if any operand is tracked)
//! stores an [`Op`] edge holding the operand handles plus whatever small
//! per-row caches the reverse pass needs. Matrix products report their
//! multiply-accumulate count to the cost counter; elementwise and
//! normalization work is not metered, matching the convention that model
//! cost is carried by its matrix products.

use super::flops;
use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Normalizer variance floor, shared by both norm flavors.
pub(crate) const NORM_EPS: f64 = 1e-5;

/// Graph edge: the operation that produced a tensor, with its operands.
pub enum Op<T: Scalar> {
    /// `a [m,k] · b [k,n]`.
    MatMul { a: Tensor<T>, b: Tensor<T> },
    /// `a [m,k] · b^T` with `b [n,k]`.
    MatMulNT { a: Tensor<T>, b: Tensor<T> },
    Add { a: Tensor<T>, b: Tensor<T> },
    Mul { a: Tensor<T>, b: Tensor<T> },
    Scale { a: Tensor<T>, c: T },
    Relu { a: Tensor<T> },
    Silu { a: Tensor<T> },
    LayerNorm {
        x: Tensor<T>,
        gain: Tensor<T>,
        bias: Tensor<T>,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    RmsNorm {
        x: Tensor<T>,
        gain: Tensor<T>,
        inv_rms: Vec<T>,
    },
    /// Row-wise softmax over a square score matrix with entries above the
    /// diagonal masked to exactly zero.
    CausalSoftmax { a: Tensor<T> },
    /// Mean negative log-likelihood of `targets` under row-wise softmax.
    CrossEntropy {
        logits: Tensor<T>,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    GatherRows { table: Tensor<T>, ids: Vec<usize> },
    NarrowRows { a: Tensor<T>, start: usize },
    NarrowCols { a: Tensor<T>, start: usize },
    ConcatRows { parts: Vec<Tensor<T>> },
    ConcatCols { parts: Vec<Tensor<T>> },
    /// Position-dependent pairwise rotation of feature pairs.
    Rope { a: Tensor<T>, base: f64 },
    SumAll { a: Tensor<T> },
}

impl<T: Scalar> Op<T> {
    pub(crate) fn parents(&self) -> Vec<Tensor<T>> {
        match self {
            Op::MatMul { a, b } | Op::MatMulNT { a, b } => vec![a.clone(), b.clone()],
            Op::Add { a, b } | Op::Mul { a, b } => vec![a.clone(), b.clone()],
            Op::Scale { a, .. }
            | Op::Relu { a }
            | Op::Silu { a }
            | Op::CausalSoftmax { a }
            | Op::NarrowRows { a, .. }
            | Op::NarrowCols { a, .. }
            | Op::Rope { a, .. }
            | Op::SumAll { a } => vec![a.clone()],
            Op::LayerNorm { x, gain, bias, .. } => vec![x.clone(), gain.clone(), bias.clone()],
            Op::RmsNorm { x, gain, .. } => vec![x.clone(), gain.clone()],
            Op::CrossEntropy { logits, .. } => vec![logits.clone()],
            Op::GatherRows { table, .. } => vec![table.clone()],
            Op::ConcatRows { parts } | Op::ConcatCols { parts } => parts.clone(),
        }
    }
}

fn need_rank2<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<()> {
    if t.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![],
        });
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    fn tracked(&self) -> bool {
        self.inner.requires_grad
    }

    fn result(&self, values: Vec<T>, shape: Vec<usize>, tracked: bool, op: Op<T>) -> Tensor<T> {
        if tracked {
            Tensor::make(values, shape, true, false, Some(op))
        } else {
            Tensor::make(values, shape, false, false, None)
        }
    }

    /// `self · rhs` for `self [m,k]`, `rhs [k,n]`.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        need_rank2(self, "matmul")?;
        need_rank2(rhs, "matmul")?;
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (rhs.rows(), rhs.cols());
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        flops::record_matmul((m * k * n) as u64, self.is_param() || rhs.is_param());
        let mut out = vec![T::zero(); m * n];
        kernels::mm_nn(&self.values(), &rhs.values(), m, k, n, &mut out);
        Ok(self.result(
            out,
            vec![m, n],
            self.tracked() || rhs.tracked(),
            Op::MatMul {
                a: self.clone(),
                b: rhs.clone(),
            },
        ))
    }

    /// `self · rhs^T` for `self [m,k]`, `rhs [n,k]`.
    pub fn matmul_nt(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        need_rank2(self, "matmul_nt")?;
        need_rank2(rhs, "matmul_nt")?;
        let (m, k) = (self.rows(), self.cols());
        let (n, k2) = (rhs.rows(), rhs.cols());
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        flops::record_matmul((m * k * n) as u64, self.is_param() || rhs.is_param());
        let mut out = vec![T::zero(); m * n];
        kernels::mm_nt(&self.values(), &rhs.values(), m, k, n, &mut out);
        Ok(self.result(
            out,
            vec![m, n],
            self.tracked() || rhs.tracked(),
            Op::MatMulNT {
                a: self.clone(),
                b: rhs.clone(),
            },
        ))
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != rhs.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let a = self.values();
        let b = rhs.values();
        let out: Vec<T> = a.iter().zip(b.iter()).map(|(&x, &y)| x + y).collect();
        drop(a);
        drop(b);
        Ok(self.result(
            out,
            self.shape().to_vec(),
            self.tracked() || rhs.tracked(),
            Op::Add {
                a: self.clone(),
                b: rhs.clone(),
            },
        ))
    }

    /// Elementwise product.
    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != rhs.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let a = self.values();
        let b = rhs.values();
        let out: Vec<T> = a.iter().zip(b.iter()).map(|(&x, &y)| x * y).collect();
        drop(a);
        drop(b);
        Ok(self.result(
            out,
            self.shape().to_vec(),
            self.tracked() || rhs.tracked(),
            Op::Mul {
                a: self.clone(),
                b: rhs.clone(),
            },
        ))
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        let out: Vec<T> = self.values().iter().map(|&x| x * c).collect();
        self.result(
            out,
            self.shape().to_vec(),
            self.tracked(),
            Op::Scale {
                a: self.clone(),
                c,
            },
        )
    }

    pub fn relu(&self) -> Tensor<T> {
        let z = T::zero();
        let out: Vec<T> = self
            .values()
            .iter()
            .map(|&x| if x > z { x } else { z })
            .collect();
        self.result(
            out,
            self.shape().to_vec(),
            self.tracked(),
            Op::Relu { a: self.clone() },
        )
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&self) -> Tensor<T> {
        let out: Vec<T> = self
            .values()
            .iter()
            .map(|&x| {
                let s = 1.0 / (1.0 + (-x.to_f64()).exp());
                x * T::from_f64(s)
            })
            .collect();
        self.result(
            out,
            self.shape().to_vec(),
            self.tracked(),
            Op::Silu { a: self.clone() },
        )
    }

    /// Per-row standardization (subtract mean, divide by std) followed by
    /// learned gain and bias: `gain * (x - mean) / std + bias`.
    pub fn layer_norm(&self, gain: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
        need_rank2(self, "layer_norm")?;
        let (m, d) = (self.rows(), self.cols());
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape().to_vec(),
                rhs: gain.shape().to_vec(),
            });
        }
        let x = self.values();
        let g = gain.values();
        let b = bias.values();
        let mut out = vec![T::zero(); m * d];
        let mut means = Vec::with_capacity(m);
        let mut inv_stds = Vec::with_capacity(m);
        for i in 0..m {
            let row = &x[i * d..(i + 1) * d];
            let mean = row.iter().fold(0.0, |s, &v| s + v.to_f64()) / d as f64;
            let var = row
                .iter()
                .fold(0.0, |s, &v| s + (v.to_f64() - mean).powi(2))
                / d as f64;
            let inv_std = 1.0 / (var + NORM_EPS).sqrt();
            means.push(T::from_f64(mean));
            inv_stds.push(T::from_f64(inv_std));
            for j in 0..d {
                let xhat = (x[i * d + j].to_f64() - mean) * inv_std;
                out[i * d + j] = T::from_f64(xhat) * g[j] + b[j];
            }
        }
        drop(x);
        drop(g);
        drop(b);
        Ok(self.result(
            out,
            vec![m, d],
            self.tracked() || gain.tracked() || bias.tracked(),
            Op::LayerNorm {
                x: self.clone(),
                gain: gain.clone(),
                bias: bias.clone(),
                mean: means,
                inv_std: inv_stds,
            },
        ))
    }

    /// Per-row root-mean-square rescaling with learned gain (no centering,
    /// no bias): `gain * x / rms(x)`.
    pub fn rms_norm(&self, gain: &Tensor<T>) -> Result<Tensor<T>> {
        need_rank2(self, "rms_norm")?;
        let (m, d) = (self.rows(), self.cols());
        if gain.shape() != [d] {
            return Err(Error::ShapeMismatch {
                op: "rms_norm",
                lhs: self.shape().to_vec(),
                rhs: gain.shape().to_vec(),
            });
        }
        let x = self.values();
        let g = gain.values();
        let mut out = vec![T::zero(); m * d];
        let mut inv_rms_all = Vec::with_capacity(m);
        for i in 0..m {
            let row = &x[i * d..(i + 1) * d];
            let ms = row.iter().fold(0.0, |s, &v| s + v.to_f64() * v.to_f64()) / d as f64;
            let inv_rms = 1.0 / (ms + NORM_EPS).sqrt();
            inv_rms_all.push(T::from_f64(inv_rms));
            for j in 0..d {
                out[i * d + j] = T::from_f64(x[i * d + j].to_f64() * inv_rms) * g[j];
            }
        }
        drop(x);
        drop(g);
        Ok(self.result(
            out,
            vec![m, d],
            self.tracked() || gain.tracked(),
            Op::RmsNorm {
                x: self.clone(),
                gain: gain.clone(),
                inv_rms: inv_rms_all,
            },
        ))
    }

    /// Row-wise softmax over a square score matrix where row `i` may only
    /// attend to columns `0..=i`; later columns come out exactly zero.
    pub fn causal_softmax(&self) -> Result<Tensor<T>> {
        need_rank2(self, "causal_softmax")?;
        let (m, n) = (self.rows(), self.cols());
        if m != n {
            return Err(Error::ShapeMismatch {
                op: "causal_softmax",
                lhs: self.shape().to_vec(),
                rhs: self.shape().to_vec(),
            });
        }
        let x = self.values();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &x[i * n..i * n + i + 1];
            let max = row
                .iter()
                .fold(f64::NEG_INFINITY, |acc, &v| acc.max(v.to_f64()));
            let mut denom = 0.0;
            for &v in row {
                denom += (v.to_f64() - max).exp();
            }
            for (j, &v) in row.iter().enumerate() {
                out[i * n + j] = T::from_f64((v.to_f64() - max).exp() / denom);
            }
        }
        drop(x);
        Ok(self.result(
            out,
            vec![m, n],
            self.tracked(),
            Op::CausalSoftmax { a: self.clone() },
        ))
    }

    /// Mean negative log-likelihood of `targets` under a row-wise softmax
    /// of `self [n, vocab]`. Returns a scalar.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<Tensor<T>> {
        need_rank2(self, "cross_entropy")?;
        let (n, v) = (self.rows(), self.cols());
        if targets.len() != n {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                lhs: self.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if n == 0 {
            return Err(Error::EmptyInput("cross_entropy over zero rows"));
        }
        for &t in targets {
            if t >= v {
                return Err(Error::IndexOutOfRange { index: t, bound: v });
            }
        }
        let x = self.values();
        let mut probs = vec![T::zero(); n * v];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &x[i * v..(i + 1) * v];
            let max = row
                .iter()
                .fold(f64::NEG_INFINITY, |acc, &q| acc.max(q.to_f64()));
            let mut denom = 0.0;
            for &q in row {
                denom += (q.to_f64() - max).exp();
            }
            let lse = max + denom.ln();
            loss += lse - row[targets[i]].to_f64();
            for j in 0..v {
                probs[i * v + j] = T::from_f64((row[j].to_f64() - lse).exp());
            }
        }
        drop(x);
        let mean = loss / n as f64;
        Ok(self.result(
            vec![T::from_f64(mean)],
            vec![1],
            self.tracked(),
            Op::CrossEntropy {
                logits: self.clone(),
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Select rows of an embedding table by index; repeats allowed.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Tensor<T>> {
        need_rank2(self, "gather_rows")?;
        let (rows, cols) = (self.rows(), self.cols());
        for &id in ids {
            if id >= rows {
                return Err(Error::IndexOutOfRange {
                    index: id,
                    bound: rows,
                });
            }
        }
        let x = self.values();
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            out.extend_from_slice(&x[id * cols..(id + 1) * cols]);
        }
        drop(x);
        Ok(self.result(
            out,
            vec![ids.len(), cols],
            self.tracked(),
            Op::GatherRows {
                table: self.clone(),
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn narrow_rows(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        need_rank2(self, "narrow_rows")?;
        let (m, n) = (self.rows(), self.cols());
        if start + len > m {
            return Err(Error::IndexOutOfRange {
                index: start + len,
                bound: m,
            });
        }
        let x = self.values();
        let out = x[start * n..(start + len) * n].to_vec();
        drop(x);
        Ok(self.result(
            out,
            vec![len, n],
            self.tracked(),
            Op::NarrowRows {
                a: self.clone(),
                start,
            },
        ))
    }

    pub fn narrow_cols(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        need_rank2(self, "narrow_cols")?;
        let (m, n) = (self.rows(), self.cols());
        if start + len > n {
            return Err(Error::IndexOutOfRange {
                index: start + len,
                bound: n,
            });
        }
        let x = self.values();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&x[i * n + start..i * n + start + len]);
        }
        drop(x);
        Ok(self.result(
            out,
            vec![m, len],
            self.tracked(),
            Op::NarrowCols {
                a: self.clone(),
                start,
            },
        ))
    }

    /// Stack rank-2 tensors vertically; all must share a column count.
    pub fn concat_rows(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat_rows of no tensors"));
        }
        let n = parts[0].cols();
        let mut m = 0;
        for p in parts {
            need_rank2(p, "concat_rows")?;
            if p.cols() != n {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: parts[0].shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            m += p.rows();
        }
        let mut out = Vec::with_capacity(m * n);
        for p in parts {
            out.extend_from_slice(&p.values());
        }
        let tracked = parts.iter().any(|p| p.tracked());
        Ok(parts[0].result(
            out,
            vec![m, n],
            tracked,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Stack rank-2 tensors side by side; all must share a row count.
    pub fn concat_cols(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat_cols of no tensors"));
        }
        let m = parts[0].rows();
        let mut n = 0;
        for p in parts {
            need_rank2(p, "concat_cols")?;
            if p.rows() != m {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: parts[0].shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            n += p.cols();
        }
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for p in parts {
                let w = p.cols();
                out.extend_from_slice(&p.values()[i * w..(i + 1) * w]);
            }
        }
        let tracked = parts.iter().any(|p| p.tracked());
        Ok(parts[0].result(
            out,
            vec![m, n],
            tracked,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Rotate adjacent feature pairs of row `p` by angles
    /// `p * base^(-2i/width)`, encoding absolute position by rotation.
    pub fn rope(&self, base: f64) -> Result<Tensor<T>> {
        need_rank2(self, "rope")?;
        let (m, d) = (self.rows(), self.cols());
        if d % 2 != 0 {
            return Err(Error::Config(format!(
                "rotary features need an even width, got {d}"
            )));
        }
        let x = self.values();
        let mut out = vec![T::zero(); m * d];
        for p in 0..m {
            for i in 0..d / 2 {
                let theta = p as f64 * base.powf(-(2.0 * i as f64) / d as f64);
                let (sin, cos) = theta.sin_cos();
                let x0 = x[p * d + 2 * i].to_f64();
                let x1 = x[p * d + 2 * i + 1].to_f64();
                out[p * d + 2 * i] = T::from_f64(x0 * cos - x1 * sin);
                out[p * d + 2 * i + 1] = T::from_f64(x0 * sin + x1 * cos);
            }
        }
        drop(x);
        Ok(self.result(
            out,
            vec![m, d],
            self.tracked(),
            Op::Rope {
                a: self.clone(),
                base,
            },
        ))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum_all(&self) -> Tensor<T> {
        let s = self.values().iter().fold(0.0, |acc, &v| acc + v.to_f64());
        self.result(
            vec![T::from_f64(s)],
            vec![1],
            self.tracked(),
            Op::SumAll { a: self.clone() },
        )
    }
}
