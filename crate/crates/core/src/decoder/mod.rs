//! Segmentation head over a four-level feature pyramid.
//!
//! Each level is projected to a common width and brought to the resolution
//! of the finest level, fused per pixel, then decoded into class logits, a
//! per-class variance, an edge map and gated-refined logits.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::params::{Bindings, Group, Kind, ParamStore, Role};
use crate::tensor::{Graph, Tensor, Var};

/// Floor added to the softplus variance.
pub const VARIANCE_EPS: f64 = 1e-6;
/// Gate bias at initialisation: sigmoid(−2.1972) ≈ 0.1.
pub const GATE_BIAS_INIT: f64 = -2.1972;
/// Epsilon of the projection layer norm.
pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fusion {
    /// Per-pixel softmax over scale scores.
    Dynamic,
    /// Static concatenation followed by a 1×1 conv and relu.
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// One fusion pass.
    Plain,
    /// A first pass yields U_ale, which shifts the scores of a second fusion.
    UncertaintyModulated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeTap {
    /// Projected finest-level stream E1.
    Finest,
    /// Fused feature F.
    Fused,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    pub in_channels: [usize; 4],
    /// Common projection width E.
    pub width: usize,
    /// Number of classes K.
    pub classes: usize,
    pub fusion: Fusion,
    pub use_norm: bool,
    /// Variance head (and with it the uncertainty-weighted losses).
    pub variance: bool,
    /// Gated residual refiner; requires the variance head.
    pub refiner: bool,
    pub boundary: bool,
    pub edge_tap: EdgeTap,
    pub edge_hidden: usize,
    pub mode: Mode,
    /// Score modulation strength α ≥ 0.
    pub alpha: f64,
    /// Optional per-scale reliabilities r_i: scores become s_i·(1 − α·U·r_i)
    /// instead of s_i − α·U.
    pub reliability: Option<[f64; 4]>,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            in_channels: [8, 16, 24, 32],
            width: 32,
            classes: 4,
            fusion: Fusion::Dynamic,
            use_norm: true,
            variance: true,
            refiner: true,
            boundary: true,
            edge_tap: EdgeTap::Finest,
            edge_hidden: 8,
            mode: Mode::UncertaintyModulated,
            alpha: 1.0,
            reliability: None,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.classes < 2 || self.in_channels.contains(&0) {
            return Err(Error::invalid("decoder widths must be positive and K ≥ 2"));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::invalid(format!(
                "alpha must be ≥ 0, got {}",
                self.alpha
            )));
        }
        if self.refiner && !self.variance {
            return Err(Error::invalid("the refiner needs the variance head"));
        }
        if self.mode == Mode::UncertaintyModulated && !self.variance {
            return Err(Error::invalid(
                "uncertainty-modulated fusion needs the variance head",
            ));
        }
        if self.mode == Mode::UncertaintyModulated && self.fusion != Fusion::Dynamic {
            return Err(Error::invalid(
                "uncertainty-modulated fusion needs dynamic fusion",
            ));
        }
        if self.boundary && self.edge_hidden == 0 {
            return Err(Error::invalid("edge head hidden width must be positive"));
        }
        Ok(())
    }
}

/// Graph handles for one decoder evaluation.
#[derive(Clone, Debug)]
pub struct DecoderOutputs {
    /// Projected streams E1..E4 at the finest resolution.
    pub projected: Vec<Var>,
    pub fused: Var,
    /// Fusion weights, N×4×h×w; absent for static fusion.
    pub weights: Option<Var>,
    pub logits: Var,
    /// Refined logits; equal to `logits` when the refiner is off.
    pub refined: Var,
    pub sigma2: Option<Var>,
    pub u_ale: Option<Var>,
    pub gate: Option<Var>,
    pub delta: Option<Var>,
    pub edge: Option<Var>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Stop gradients through the probability input of the refiner.
    pub detach_probs: bool,
}

fn role(kind: Kind) -> Role {
    Role::new(Group::Decoder, kind)
}

/// Register a conv's kernel and bias. `gain` scales a fan-in normal init; 0
/// gives a zero kernel.
pub(crate) fn add_conv(
    store: &mut ParamStore,
    name: &str,
    group: Group,
    shape: [usize; 4],
    gain: f64,
    bias: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
    let kernel = if gain == 0.0 {
        Tensor::zeros(&shape)
    } else {
        let normal = Normal::new(0.0, (gain / fan_in).sqrt()).expect("positive std");
        Tensor::from_fn(&shape, |_| normal.sample(rng))
    };
    store.insert(&format!("{name}.w"), kernel, Role::new(group, Kind::Kernel))?;
    store.insert(
        &format!("{name}.b"),
        Tensor::full(&[shape[0]], bias),
        Role::new(group, Kind::Bias),
    )?;
    Ok(())
}

/// Apply the conv registered under `name`; padding keeps the spatial size
/// (divided by the stride).
pub(crate) fn apply_conv(
    g: &mut Graph,
    b: &Bindings,
    name: &str,
    x: Var,
    stride: usize,
) -> Result<Var> {
    let w = b.get(&format!("{name}.w"))?;
    let bias = b.get(&format!("{name}.b"))?;
    let k = g.shape(w)[2];
    g.conv2d(x, w, Some(bias), stride, k / 2)
}

#[derive(Clone, Debug)]
pub struct Decoder {
    cfg: DecoderConfig,
}

impl Decoder {
    pub fn new(cfg: DecoderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Decoder { cfg })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    /// Register all decoder parameters with their initial values.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        let c = &self.cfg;
        let (e, k) = (c.width, c.classes);
        let dec = Group::Decoder;
        for (i, &cin) in c.in_channels.iter().enumerate() {
            let p = format!("dec.proj{}", i + 1);
            add_conv(store, &p, dec, [e, cin, 1, 1], 2.0, 0.0, rng)?;
            if c.use_norm {
                store.insert(
                    &format!("{p}.gain"),
                    Tensor::full(&[e], 1.0),
                    role(Kind::NormGain),
                )?;
                store.insert(
                    &format!("{p}.shift"),
                    Tensor::zeros(&[e]),
                    role(Kind::NormShift),
                )?;
            }
        }
        match c.fusion {
            Fusion::Dynamic => {
                for i in 1..=4 {
                    add_conv(
                        store,
                        &format!("dec.score{i}"),
                        dec,
                        [1, e, 1, 1],
                        0.0,
                        0.0,
                        rng,
                    )?;
                }
            }
            Fusion::Concat => add_conv(store, "dec.fuse", dec, [e, 4 * e, 1, 1], 2.0, 0.0, rng)?,
        }
        add_conv(store, "dec.seg", dec, [k, e, 1, 1], 1.0, 0.0, rng)?;
        if c.variance {
            add_conv(store, "dec.var", dec, [k, e, 1, 1], 0.1, 0.0, rng)?;
        }
        if c.refiner {
            add_conv(
                store,
                "dec.refine1",
                dec,
                [e, e + k + 1, 3, 3],
                2.0,
                0.0,
                rng,
            )?;
            add_conv(store, "dec.refine2", dec, [k, e, 1, 1], 0.0, 0.0, rng)?;
            add_conv(
                store,
                "dec.gate",
                dec,
                [1, e + 1, 1, 1],
                0.1,
                GATE_BIAS_INIT,
                rng,
            )?;
        }
        if c.boundary {
            add_conv(
                store,
                "dec.edge1",
                dec,
                [c.edge_hidden, e, 3, 3],
                2.0,
                0.0,
                rng,
            )?;
            add_conv(
                store,
                "dec.edge2",
                dec,
                [1, c.edge_hidden, 1, 1],
                1.0,
                0.0,
                rng,
            )?;
        }
        Ok(())
    }

    /// Check that the four levels share N and sit at strides 1, 2, 4, 8
    /// relative to the finest one.
    fn check_pyramid(&self, g: &Graph, pyramid: &[Var; 4]) -> Result<(usize, usize, usize)> {
        let s0 = g.shape(pyramid[0]).to_vec();
        if s0.len() != 4 {
            return Err(Error::shape(format!("pyramid level 1 has shape {s0:?}")));
        }
        let (n, h, w) = (s0[0], s0[2], s0[3]);
        for (i, v) in pyramid.iter().enumerate() {
            let s = g.shape(*v);
            let f = 1 << i;
            let ok = s.len() == 4
                && s[0] == n
                && s[1] == self.cfg.in_channels[i]
                && s[2] * f == h
                && s[3] * f == w;
            if !ok {
                return Err(Error::shape(format!(
                    "pyramid level {} has shape {s:?}, expected [{n}, {}, {}, {}]",
                    i + 1,
                    self.cfg.in_channels[i],
                    h / f,
                    w / f
                )));
            }
        }
        Ok((n, h, w))
    }

    /// E_i = Up(relu(norm(conv1×1(C_i)))).
    pub fn project_and_upsample(
        &self,
        g: &mut Graph,
        b: &Bindings,
        pyramid: &[Var; 4],
    ) -> Result<Vec<Var>> {
        let (_, h, w) = self.check_pyramid(g, pyramid)?;
        let mut out = Vec::with_capacity(4);
        for (i, &c) in pyramid.iter().enumerate() {
            let p = format!("dec.proj{}", i + 1);
            let mut x = apply_conv(g, b, &p, c, 1)?;
            if self.cfg.use_norm {
                let gain = b.get(&format!("{p}.gain"))?;
                let shift = b.get(&format!("{p}.shift"))?;
                x = g.layer_norm(x, gain, shift, NORM_EPS)?;
            }
            x = g.relu(x)?;
            if i > 0 {
                x = g.upsample_bilinear(x, h, w)?;
            }
            out.push(x);
        }
        Ok(out)
    }

    /// Per-scale scores s_i = score_i(E_i), each N×1×h×w.
    pub fn scores(&self, g: &mut Graph, b: &Bindings, projected: &[Var]) -> Result<Vec<Var>> {
        projected
            .iter()
            .enumerate()
            .map(|(i, &e)| apply_conv(g, b, &format!("dec.score{}", i + 1), e, 1))
            .collect()
    }

    /// Dynamic fusion: scores, optional modulation by `u_down`, softmax over
    /// scales, weighted sum.
    pub fn dmf_fuse(
        &self,
        g: &mut Graph,
        b: &Bindings,
        projected: &[Var],
        u_down: Option<Var>,
    ) -> Result<(Var, Var)> {
        let mut scores = self.scores(g, b, projected)?;
        if let Some(u) = u_down {
            let expect = g.shape(scores[0]).to_vec();
            if g.shape(u) != expect.as_slice() {
                return Err(Error::shape(format!(
                    "modulation map has shape {:?}, expected {expect:?}",
                    g.shape(u)
                )));
            }
            let alpha = self.cfg.alpha;
            for (i, s) in scores.iter_mut().enumerate() {
                *s = match self.cfg.reliability {
                    None => {
                        let shift = g.scale(u, alpha);
                        g.sub(*s, shift)?
                    }
                    Some(r) => {
                        let t = g.scale(u, -alpha * r[i]);
                        let factor = g.add_scalar(t, 1.0);
                        g.mul(*s, factor)?
                    }
                };
            }
        }
        fuse_from_scores(g, projected, &scores)
    }

    /// Static baseline: relu(conv1×1(cat(E_1..E_4))).
    pub fn concat_fuse(&self, g: &mut Graph, b: &Bindings, projected: &[Var]) -> Result<Var> {
        let cat = g.concat(projected, 1)?;
        let x = apply_conv(g, b, "dec.fuse", cat, 1)?;
        g.relu(x)
    }

    pub fn seg_head(&self, g: &mut Graph, b: &Bindings, fused: Var) -> Result<Var> {
        apply_conv(g, b, "dec.seg", fused, 1)
    }

    /// σ² = softplus(var(F)) + ε and its channel mean U_ale.
    pub fn variance_branch(&self, g: &mut Graph, b: &Bindings, fused: Var) -> Result<(Var, Var)> {
        let raw = apply_conv(g, b, "dec.var", fused, 1)?;
        variance_from_raw(g, raw)
    }

    /// Z* = Z + G⊙Δ with Δ = φ(cat(F, P, U_ale)) and G = σ(ψ(cat(F, U_ale))).
    pub fn ugr_refine(
        &self,
        g: &mut Graph,
        b: &Bindings,
        fused: Var,
        logits: Var,
        u_ale: Var,
        detach_probs: bool,
    ) -> Result<(Var, Var, Var)> {
        let mut probs = g.softmax(logits, 1)?;
        if detach_probs {
            probs = g.detach(probs);
        }
        let r = g.concat(&[fused, probs, u_ale], 1)?;
        let hidden = apply_conv(g, b, "dec.refine1", r, 1)?;
        let hidden = g.relu(hidden)?;
        let delta = apply_conv(g, b, "dec.refine2", hidden, 1)?;
        let gate_in = g.concat(&[fused, u_ale], 1)?;
        let gate_logit = apply_conv(g, b, "dec.gate", gate_in, 1)?;
        let gate = g.sigmoid(gate_logit)?;
        let refined = gated_residual(g, logits, gate, delta)?;
        Ok((refined, gate, delta))
    }

    /// Edge logits: 1×1(relu(3×3(tap))).
    pub fn boundary_branch(&self, g: &mut Graph, b: &Bindings, tap: Var) -> Result<Var> {
        let h = apply_conv(g, b, "dec.edge1", tap, 1)?;
        let h = g.relu(h)?;
        apply_conv(g, b, "dec.edge2", h, 1)
    }

    fn fuse(
        &self,
        g: &mut Graph,
        b: &Bindings,
        projected: &[Var],
        u_down: Option<Var>,
    ) -> Result<(Var, Option<Var>)> {
        match self.cfg.fusion {
            Fusion::Dynamic => {
                let (f, w) = self.dmf_fuse(g, b, projected, u_down)?;
                Ok((f, Some(w)))
            }
            Fusion::Concat => Ok((self.concat_fuse(g, b, projected)?, None)),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        b: &Bindings,
        pyramid: &[Var; 4],
        opts: ForwardOptions,
    ) -> Result<DecoderOutputs> {
        let projected = self.project_and_upsample(g, b, pyramid)?;
        let (mut fused, mut weights) = self.fuse(g, b, &projected, None)?;
        let mut variance = if self.cfg.variance {
            Some(self.variance_branch(g, b, fused)?)
        } else {
            None
        };
        if self.cfg.mode == Mode::UncertaintyModulated {
            let (_, u) = variance.expect("validated: modulation needs the variance head");
            let (f2, w2) = self.fuse(g, b, &projected, Some(u))?;
            fused = f2;
            weights = w2;
            variance = Some(self.variance_branch(g, b, fused)?);
        }
        let logits = self.seg_head(g, b, fused)?;
        let (mut refined, mut gate, mut delta) = (logits, None, None);
        if self.cfg.refiner {
            let (_, u) = variance.expect("validated: refiner needs the variance head");
            let (r, gt, d) = self.ugr_refine(g, b, fused, logits, u, opts.detach_probs)?;
            refined = r;
            gate = Some(gt);
            delta = Some(d);
        }
        let edge = if self.cfg.boundary {
            let tap = match self.cfg.edge_tap {
                EdgeTap::Finest => projected[0],
                EdgeTap::Fused => fused,
            };
            Some(self.boundary_branch(g, b, tap)?)
        } else {
            None
        };
        Ok(DecoderOutputs {
            projected,
            fused,
            weights,
            logits,
            refined,
            sigma2: variance.map(|v| v.0),
            u_ale: variance.map(|v| v.1),
            gate,
            delta,
            edge,
        })
    }
}

/// Softmax over per-scale scores and the weighted sum of the streams.
/// Returns (F, w) with w stacked along the channel axis.
pub fn fuse_from_scores(g: &mut Graph, projected: &[Var], scores: &[Var]) -> Result<(Var, Var)> {
    if projected.len() != scores.len() || projected.is_empty() {
        return Err(Error::invalid("need one score map per stream"));
    }
    let stacked = g.concat(scores, 1)?;
    let weights = g.softmax(stacked, 1)?;
    let width = g.shape(projected[0])[1];
    let mut fused: Option<Var> = None;
    for (i, &e) in projected.iter().enumerate() {
        let wi = g.slice(weights, 1, i, 1)?;
        let wi = g.expand(wi, 1, width)?;
        let term = g.mul(wi, e)?;
        fused = Some(match fused {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    Ok((fused.expect("non-empty"), weights))
}

/// σ² = softplus(raw) + ε and U_ale = mean over channels of σ².
pub fn variance_from_raw(g: &mut Graph, raw: Var) -> Result<(Var, Var)> {
    let sp = g.softplus(raw)?;
    let sigma2 = g.add_scalar(sp, VARIANCE_EPS);
    let u_ale = g.mean_axis(sigma2, 1)?;
    Ok((sigma2, u_ale))
}

/// Z + G⊙Δ with the single-channel gate broadcast over classes.
pub fn gated_residual(g: &mut Graph, logits: Var, gate: Var, delta: Var) -> Result<Var> {
    let k = g.shape(logits)[1];
    let gk = g.expand(gate, 1, k)?;
    let corr = g.mul(gk, delta)?;
    g.add(logits, corr)
}
