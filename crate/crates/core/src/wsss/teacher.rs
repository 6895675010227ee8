//! EMA teacher and uncertainty-gated relabeling.

use super::schedule::{ascending, ceil_count};
use crate::error::{Error, Result};
use crate::labels::{LabelMap, PseudoLabel, IGNORE};
use crate::params::ParamStore;

/// Shadow parameters blended toward the student after every step.
#[derive(Clone, Debug)]
pub struct Teacher {
    pub params: ParamStore,
    pub updates: u64,
}

impl Teacher {
    pub fn new(student: &ParamStore) -> Self {
        Teacher {
            params: student.clone(),
            updates: 0,
        }
    }

    pub fn update(&mut self, student: &ParamStore, tau: f64) -> Result<()> {
        ema_update(&mut self.params, student, tau)?;
        self.updates += 1;
        Ok(())
    }
}

/// θ_T ← τ·θ_T + (1−τ)·θ_S for every parameter.
pub fn ema_update(teacher: &mut ParamStore, student: &ParamStore, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("EMA tau {tau} outside [0, 1]")));
    }
    teacher.check_same_manifest(student)?;
    for ((_, t), (_, s)) in teacher.iter_mut().zip(student.iter()) {
        for (a, &b) in t.value.data_mut().iter_mut().zip(s.value.data()) {
            *a = tau * *a + (1.0 - tau) * b;
        }
    }
    Ok(())
}

/// Pseudo-labels from teacher probabilities `probs` (K×H×W, row-major per
/// class) and per-pixel uncertainty `u`.
///
/// The ⌈keep·HW⌉ least uncertain pixels keep their argmax class (lowest
/// class on ties, earlier pixel first among equal uncertainties); the rest
/// become IGNORE. The full argmax map is attached as the structure map, so
/// boundary targets still see every class interface.
pub fn relabel(
    probs: &[f64],
    u: &[f64],
    k: usize,
    h: usize,
    w: usize,
    keep: f64,
) -> Result<PseudoLabel> {
    let hw = h * w;
    if probs.len() != k * hw || u.len() != hw {
        return Err(Error::shape(format!(
            "relabel inputs: {} probabilities and {} uncertainties for K={k}, {h}×{w}",
            probs.len(),
            u.len()
        )));
    }
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::invalid(format!(
            "keep fraction {keep} outside (0, 1]"
        )));
    }
    if k == 0 || k > IGNORE as usize {
        return Err(Error::invalid(format!("class count {k} unsupported")));
    }
    let count = ceil_count(keep, hw);
    let argmax: Vec<u8> = (0..hw)
        .map(|i| {
            let mut best = 0;
            for c in 1..k {
                if probs[c * hw + i] > probs[best * hw + i] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    let mut labels = vec![IGNORE; hw];
    let mut valid = vec![false; hw];
    for &i in &ascending(u)[..count] {
        labels[i] = argmax[i];
        valid[i] = true;
    }
    PseudoLabel::new(LabelMap::new(h, w, labels)?, valid, u.to_vec())?
        .with_structure(LabelMap::new(h, w, argmax)?)
}
