//! Ignore masks and the q schedule.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// ⌈fraction·n⌉, robust to the last-bit error of the product.
pub(crate) fn ceil_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let c = (x - 1e-9 * x.abs().max(1.0)).ceil().max(0.0) as usize;
    c.min(n)
}

/// Valid mask for one image: the ⌈q%·n⌉ most uncertain pixels are masked.
/// Among equal uncertainties the later row-major index is masked first.
pub fn build_ignore_mask(uncertainty: &[f64], q_percent: f64) -> Result<Vec<bool>> {
    if !(0.0..100.0).contains(&q_percent) {
        return Err(Error::invalid(format!("q = {q_percent} outside [0, 100)")));
    }
    let n = uncertainty.len();
    let count = ceil_count(q_percent / 100.0, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| uncertainty[b].total_cmp(&uncertainty[a]).then(b.cmp(&a)));
    let mut valid = vec![true; n];
    for &i in &order[..count] {
        valid[i] = false;
    }
    Ok(valid)
}

/// Linear anneal from `q_start` at epoch 0 to `q_end` at `anneal_epochs`,
/// constant afterwards.
pub fn anneal_q(epoch: usize, q_start: f64, q_end: f64, anneal_epochs: usize) -> f64 {
    if anneal_epochs == 0 || epoch >= anneal_epochs {
        return q_end;
    }
    let t = epoch as f64 / anneal_epochs as f64;
    q_start + (q_end - q_start) * t
}

/// Indices sorted by ascending value, earlier index first among ties.
pub(crate) fn ascending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| match values[a].total_cmp(&values[b]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    order
}
