//! AdamW with decoupled weight decay, warm-up and cosine decay.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::params::{Group, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    /// Multiplier applied to encoder parameters.
    pub encoder_scale: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 6e-5,
            encoder_scale: 0.1,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Learning-rate multiplier: linear warm-up over `warmup` steps, then a
/// half-cosine from 1 to 0 over the remaining steps.
pub fn lr_factor(step: usize, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        return (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup);
    if span == 0 {
        return 1.0;
    }
    let t = ((step - warmup) as f64 / span as f64).min(1.0);
    0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Scale all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut IndexMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[derive(Clone, Debug)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: IndexMap<String, Vec<f64>>,
    v: IndexMap<String, Vec<f64>>,
    step: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, params: &ParamStore) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(n, p)| (n.to_string(), vec![0.0; p.value.numel()]))
                .collect()
        };
        AdamW {
            cfg,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update with learning-rate multiplier `factor`. Parameters without
    /// a gradient entry are left untouched.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &IndexMap<String, Tensor>,
        factor: f64,
    ) -> Result<()> {
        self.step += 1;
        let c = self.cfg;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            if g.shape() != p.value.shape() {
                return Err(Error::shape(format!(
                    "gradient for {name} has the wrong shape"
                )));
            }
            let lr = c.lr
                * factor
                * match p.role.group {
                    Group::Encoder => c.encoder_scale,
                    Group::Decoder => 1.0,
                };
            let decay = if p.role.decays() { c.weight_decay } else { 0.0 };
            let m = self
                .m
                .get_mut(name)
                .ok_or_else(|| Error::invalid(format!("no state for {name}")))?;
            let v = self
                .v
                .get_mut(name)
                .ok_or_else(|| Error::invalid(format!("no state for {name}")))?;
            for (((x, &gi), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *x -= lr * (mhat / (vhat.sqrt() + c.eps) + decay * *x);
            }
        }
        Ok(())
    }
}
