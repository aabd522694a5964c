//! Reverse-mode sweep: topological ordering and per-op gradient rules.

use std::collections::HashSet;

use super::kernels;
use super::ops::Op;
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Post-order over the tracked subgraph reachable from `root`: every
/// tensor appears after all tensors computed from it, so the reversed
/// list is a valid processing order for the backward sweep.
fn post_order<T: Scalar>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut order = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Tensor<T>, bool)> = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !visited.insert(node.id()) {
            continue;
        }
        stack.push((node.clone(), true));
        if let Some(op) = &node.inner.op {
            for p in op.parents() {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p, false));
                }
            }
        }
    }
    order
}

/// Add `body`'s contribution into `t`'s gradient, allocating zeros first
/// if this is the first contribution.
fn accumulate<T: Scalar>(t: &Tensor<T>, body: impl FnOnce(&mut [T])) {
    if !t.requires_grad() {
        return;
    }
    let mut slot = t.inner.grad.borrow_mut();
    let g = slot.get_or_insert_with(|| vec![T::zero(); t.numel()]);
    body(g);
}

impl<T: Scalar> Tensor<T> {
    /// Propagate d(self)/d(leaf) into every tracked ancestor's gradient
    /// buffer. `self` must be a scalar. Interior gradients are consumed as
    /// the sweep passes through them, so only leaves (parameters and
    /// inputs) retain gradients afterwards, and repeated calls accumulate
    /// there; use [`Tensor::zero_grad`] between independent passes.
    pub fn backward(&self) -> Result<()> {
        if self.shape() != [1] {
            return Err(Error::NonScalarRoot(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        accumulate(self, |g| g[0] += T::one());
        let order = post_order(self);
        for node in order.iter().rev() {
            let Some(op) = &node.inner.op else { continue };
            let g = match node.inner.grad.borrow_mut().take() {
                Some(g) => g,
                None => continue,
            };
            propagate(node, op, &g);
        }
        Ok(())
    }
}

fn propagate<T: Scalar>(node: &Tensor<T>, op: &Op<T>, g: &[T]) {
    match op {
        Op::MatMul { a, b } => {
            let (m, k) = (a.rows(), a.cols());
            let n = b.cols();
            accumulate(a, |ga| kernels::mm_nt(g, &b.values(), m, n, k, ga));
            accumulate(b, |gb| kernels::mm_tn(&a.values(), g, k, m, n, gb));
        }
        Op::MatMulNT { a, b } => {
            let (m, k) = (a.rows(), a.cols());
            let n = b.rows();
            accumulate(a, |ga| kernels::mm_nn(g, &b.values(), m, n, k, ga));
            accumulate(b, |gb| kernels::mm_tn(g, &a.values(), n, m, k, gb));
        }
        Op::Add { a, b } => {
            accumulate(a, |ga| {
                for (o, &gi) in ga.iter_mut().zip(g) {
                    *o += gi;
                }
            });
            accumulate(b, |gb| {
                for (o, &gi) in gb.iter_mut().zip(g) {
                    *o += gi;
                }
            });
        }
        Op::Mul { a, b } => {
            accumulate(a, |ga| {
                let bv = b.values();
                for i in 0..ga.len() {
                    ga[i] += g[i] * bv[i];
                }
            });
            accumulate(b, |gb| {
                let av = a.values();
                for i in 0..gb.len() {
                    gb[i] += g[i] * av[i];
                }
            });
        }
        Op::Scale { a, c } => {
            accumulate(a, |ga| {
                for (o, &gi) in ga.iter_mut().zip(g) {
                    *o += gi * *c;
                }
            });
        }
        Op::Relu { a } => {
            accumulate(a, |ga| {
                let av = a.values();
                let z = T::zero();
                for i in 0..ga.len() {
                    if av[i] > z {
                        ga[i] += g[i];
                    }
                }
            });
        }
        Op::Silu { a } => {
            accumulate(a, |ga| {
                let av = a.values();
                for i in 0..ga.len() {
                    let x = av[i].to_f64();
                    let s = 1.0 / (1.0 + (-x).exp());
                    let d = s * (1.0 + x * (1.0 - s));
                    ga[i] += g[i] * T::from_f64(d);
                }
            });
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            mean,
            inv_std,
        } => {
            let (m, d) = (x.rows(), x.cols());
            let xv = x.values();
            let gv = gain.values();
            accumulate(bias, |gb| {
                for i in 0..m {
                    for j in 0..d {
                        gb[j] += g[i * d + j];
                    }
                }
            });
            accumulate(gain, |gg| {
                for i in 0..m {
                    let (mu, is) = (mean[i].to_f64(), inv_std[i].to_f64());
                    for j in 0..d {
                        let xhat = (xv[i * d + j].to_f64() - mu) * is;
                        gg[j] += g[i * d + j] * T::from_f64(xhat);
                    }
                }
            });
            accumulate(x, |gx| {
                for i in 0..m {
                    let (mu, is) = (mean[i].to_f64(), inv_std[i].to_f64());
                    let mut sum_gh = 0.0;
                    let mut sum_gh_xhat = 0.0;
                    for j in 0..d {
                        let xhat = (xv[i * d + j].to_f64() - mu) * is;
                        let gh = g[i * d + j].to_f64() * gv[j].to_f64();
                        sum_gh += gh;
                        sum_gh_xhat += gh * xhat;
                    }
                    let (mg, mgx) = (sum_gh / d as f64, sum_gh_xhat / d as f64);
                    for j in 0..d {
                        let xhat = (xv[i * d + j].to_f64() - mu) * is;
                        let gh = g[i * d + j].to_f64() * gv[j].to_f64();
                        gx[i * d + j] += T::from_f64(is * (gh - mg - xhat * mgx));
                    }
                }
            });
        }
        Op::RmsNorm { x, gain, inv_rms } => {
            let (m, d) = (x.rows(), x.cols());
            let xv = x.values();
            let gv = gain.values();
            accumulate(gain, |gg| {
                for i in 0..m {
                    let ir = inv_rms[i].to_f64();
                    for j in 0..d {
                        let xhat = xv[i * d + j].to_f64() * ir;
                        gg[j] += g[i * d + j] * T::from_f64(xhat);
                    }
                }
            });
            accumulate(x, |gx| {
                for i in 0..m {
                    let ir = inv_rms[i].to_f64();
                    let mut sum_gh_xhat = 0.0;
                    for j in 0..d {
                        let xhat = xv[i * d + j].to_f64() * ir;
                        let gh = g[i * d + j].to_f64() * gv[j].to_f64();
                        sum_gh_xhat += gh * xhat;
                    }
                    let mgx = sum_gh_xhat / d as f64;
                    for j in 0..d {
                        let xhat = xv[i * d + j].to_f64() * ir;
                        let gh = g[i * d + j].to_f64() * gv[j].to_f64();
                        gx[i * d + j] += T::from_f64(ir * (gh - xhat * mgx));
                    }
                }
            });
        }
        Op::CausalSoftmax { a } => {
            let n = node.cols();
            let wv = node.values();
            accumulate(a, |ga| {
                for i in 0..node.rows() {
                    let mut dot = 0.0;
                    for j in 0..=i.min(n - 1) {
                        dot += g[i * n + j].to_f64() * wv[i * n + j].to_f64();
                    }
                    for j in 0..=i.min(n - 1) {
                        let w = wv[i * n + j].to_f64();
                        ga[i * n + j] += T::from_f64(w * (g[i * n + j].to_f64() - dot));
                    }
                }
            });
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
        } => {
            let (n, v) = (logits.rows(), logits.cols());
            let scale = g[0].to_f64() / n as f64;
            accumulate(logits, |gl| {
                for i in 0..n {
                    for j in 0..v {
                        let indicator = if targets[i] == j { 1.0 } else { 0.0 };
                        gl[i * v + j] +=
                            T::from_f64((probs[i * v + j].to_f64() - indicator) * scale);
                    }
                }
            });
        }
        Op::GatherRows { table, ids } => {
            let cols = table.cols();
            accumulate(table, |gt| {
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..cols {
                        gt[id * cols + j] += g[r * cols + j];
                    }
                }
            });
        }
        Op::NarrowRows { a, start } => {
            let n = a.cols();
            accumulate(a, |ga| {
                for (i, &gi) in g.iter().enumerate() {
                    ga[start * n + i] += gi;
                }
            });
        }
        Op::NarrowCols { a, start } => {
            let n = a.cols();
            let len = node.cols();
            accumulate(a, |ga| {
                for i in 0..node.rows() {
                    for j in 0..len {
                        ga[i * n + start + j] += g[i * len + j];
                    }
                }
            });
        }
        Op::ConcatRows { parts } => {
            let n = node.cols();
            let mut row = 0;
            for p in parts {
                let rows = p.rows();
                accumulate(p, |gp| {
                    gp.iter_mut()
                        .zip(&g[row * n..(row + rows) * n])
                        .for_each(|(o, &gi)| *o += gi);
                });
                row += rows;
            }
        }
        Op::ConcatCols { parts } => {
            let total = node.cols();
            let m = node.rows();
            let mut col = 0;
            for p in parts {
                let w = p.cols();
                accumulate(p, |gp| {
                    for i in 0..m {
                        for j in 0..w {
                            gp[i * w + j] += g[i * total + col + j];
                        }
                    }
                });
                col += w;
            }
        }
        Op::Rope { a, base } => {
            let (m, d) = (a.rows(), a.cols());
            accumulate(a, |ga| {
                for p in 0..m {
                    for i in 0..d / 2 {
                        let theta = p as f64 * base.powf(-(2.0 * i as f64) / d as f64);
                        let (sin, cos) = theta.sin_cos();
                        let g0 = g[p * d + 2 * i].to_f64();
                        let g1 = g[p * d + 2 * i + 1].to_f64();
                        ga[p * d + 2 * i] += T::from_f64(g0 * cos + g1 * sin);
                        ga[p * d + 2 * i + 1] += T::from_f64(-g0 * sin + g1 * cos);
                    }
                }
            });
        }
        Op::SumAll { a } => {
            accumulate(a, |ga| {
                for o in ga.iter_mut() {
                    *o += g[0];
                }
            });
        }
    }
}
