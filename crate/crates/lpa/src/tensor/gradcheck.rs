//! Analytic-vs-numeric gradient comparison.
//!
//! The closure rebuilds the scalar loss from the leaves' *current* values
//! on every call, so probing a coordinate and re-running it yields the
//! finite-difference quotient for that coordinate.

use super::Tensor;
use crate::error::Result;
use crate::scalar::Scalar;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Relative error between an analytic and a numeric derivative.
///
/// Differences below 1e-8 are reported as zero: a central difference of
/// an O(1)-to-O(100) loss in f64 carries roundoff of roughly
/// `eps * |loss| / step`, so smaller discrepancies are indistinguishable
/// from noise (a genuine formula error on a coordinate scales with the
/// gradient itself and still surfaces). The denominator floor keeps
/// near-zero pairs from dividing by zero.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= 1e-8 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn central_difference<T: Scalar>(
    leaf: &Tensor<T>,
    idx: usize,
    f: &mut dyn FnMut() -> Result<Tensor<T>>,
    step: f64,
) -> Result<f64> {
    let orig = leaf.value_at(idx);
    leaf.set_value_at(idx, orig + step);
    let up = f()?.item().to_f64();
    leaf.set_value_at(idx, orig - step);
    let down = f()?.item().to_f64();
    leaf.set_value_at(idx, orig);
    Ok((up - down) / (2.0 * step))
}

/// Check every coordinate of every leaf against a central difference and
/// return the worst relative error seen.
pub fn grad_check<T: Scalar>(
    leaves: &[Tensor<T>],
    f: &mut dyn FnMut() -> Result<Tensor<T>>,
    step: f64,
) -> Result<f64> {
    for leaf in leaves {
        leaf.zero_grad();
    }
    let loss = f()?;
    loss.backward()?;
    let grads: Vec<Vec<T>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| vec![T::zero(); l.numel()]))
        .collect();
    let mut worst = 0.0f64;
    for (leaf, grad) in leaves.iter().zip(&grads) {
        for (idx, analytic) in grad.iter().enumerate() {
            let numeric = central_difference(leaf, idx, f, step)?;
            worst = worst.max(rel_err((*analytic).to_f64(), numeric));
        }
    }
    Ok(worst)
}

/// Like [`grad_check`] but over named leaves, probing at most
/// `max_per_leaf` evenly spaced coordinates of each, reporting the worst
/// relative error per name. Suited to whole-model spot checks where full
/// coverage would be too slow.
pub fn params_grad_check<T: Scalar>(
    leaves: &[(String, Tensor<T>)],
    f: &mut dyn FnMut() -> Result<Tensor<T>>,
    step: f64,
    max_per_leaf: usize,
) -> Result<Vec<(String, f64)>> {
    for (_, leaf) in leaves {
        leaf.zero_grad();
    }
    let loss = f()?;
    loss.backward()?;
    let mut report = Vec::with_capacity(leaves.len());
    for (name, leaf) in leaves {
        let grad = leaf.grad().unwrap_or_else(|| vec![T::zero(); leaf.numel()]);
        let n = leaf.numel();
        let probes = max_per_leaf.max(1).min(n);
        let mut worst = 0.0f64;
        for p in 0..probes {
            let idx = p * n / probes;
            let numeric = central_difference(leaf, idx, f, step)?;
            worst = worst.max(rel_err(grad[idx].to_f64(), numeric));
        }
        report.push((name.clone(), worst));
    }
    Ok(report)
}
