//! Training objectives over full-resolution maps.
//!
//! All reductions are means over the pixels that contribute. Pixels outside
//! the valid mask enter every masked sum multiplied by an exact zero.

use crate::decoder::DecoderOutputs;
use crate::distance;
use crate::error::{Error, Result};
use crate::labels::{chebyshev_dilate, LabelMap, PseudoLabel};
use crate::tensor::{kernels, Graph, Tensor, Var};

/// Dice smoothing constant, added to numerator and denominator.
pub const DICE_SMOOTH: f64 = 1.0;
/// Boundary band width in pixels.
pub const BAND_WIDTH: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub dice: f64,
    pub het: f64,
    pub bnd: f64,
    pub sdf: f64,
    /// Mixing weight of the aleatoric map against entropy.
    pub alpha: f64,
    /// Sharpness of w = exp(−β·U).
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            dice: 1.0,
            het: 0.5,
            bnd: 0.5,
            sdf: 0.1,
            alpha: 0.5,
            beta: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.dice, self.het, self.bnd, self.sdf, self.beta];
        if all.iter().any(|v| !(*v >= 0.0)) || !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(
                "loss coefficients must be ≥ 0 and alpha in [0, 1]",
            ));
        }
        Ok(())
    }
}

/// Per-term values of one loss evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    pub dice: f64,
    pub het: f64,
    pub bnd: f64,
    pub sdf: f64,
    pub mean_w: f64,
    pub valid_fraction: f64,
}

impl LossBreakdown {
    pub fn all_finite(&self) -> bool {
        [self.total, self.ce, self.dice, self.het, self.bnd, self.sdf]
            .iter()
            .all(|v| v.is_finite())
    }
}

impl std::fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "total={} ce={} dice={} het={} bnd={} sdf={} mean_w={} valid_fraction={}",
            self.total,
            self.ce,
            self.dice,
            self.het,
            self.bnd,
            self.sdf,
            self.mean_w,
            self.valid_fraction
        )
    }
}

/// Label-derived inputs for a batch, computed once per step.
#[derive(Clone, Debug)]
pub struct Targets {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    /// Class per pixel, `None` where M = 0.
    pub classes: Vec<Option<usize>>,
    /// Valid mask as 0/1, N×1×H×W.
    pub valid: Tensor,
    /// Boundary band as 0/1, N×1×H×W.
    pub band: Tensor,
    /// |φ| per pixel, N×1×H×W; zero for images without any boundary.
    pub sdf: Tensor,
}

impl Targets {
    pub fn new(batch: &[PseudoLabel]) -> Result<Self> {
        let first = batch.first().ok_or_else(|| Error::invalid("empty batch"))?;
        let (h, w) = (first.labels.height(), first.labels.width());
        let n = batch.len();
        let mut classes = Vec::with_capacity(n * h * w);
        let mut valid = Vec::with_capacity(n * h * w);
        let mut band = Vec::with_capacity(n * h * w);
        let mut sdf = Vec::with_capacity(n * h * w);
        for p in batch {
            if p.labels.height() != h || p.labels.width() != w {
                return Err(Error::shape("pseudo-labels in a batch differ in size"));
            }
            let t = p.targets();
            valid.extend(t.iter().map(|c| if c.is_some() { 1.0 } else { 0.0 }));
            classes.extend(t);
            band.extend(
                boundary_band(p.structure(), BAND_WIDTH)
                    .iter()
                    .map(|&b| b as u8 as f64),
            );
            match unsigned_distance(p.structure()) {
                Some(d) => sdf.extend(d),
                None => sdf.extend(std::iter::repeat_n(0.0, h * w)),
            }
        }
        let shape = [n, 1, h, w];
        Ok(Targets {
            n,
            h,
            w,
            classes,
            valid: Tensor::new(&shape, valid)?,
            band: Tensor::new(&shape, band)?,
            sdf: Tensor::new(&shape, sdf)?,
        })
    }

    pub fn valid_count(&self) -> usize {
        self.classes.iter().filter(|c| c.is_some()).count()
    }

    fn check_classes(&self, k: usize) -> Result<()> {
        match self.classes.iter().flatten().find(|&&c| c >= k) {
            Some(c) => Err(Error::invalid(format!(
                "label {c} out of range for {k} classes"
            ))),
            None => Ok(()),
        }
    }

    fn check_map(&self, g: &Graph, v: Var, what: &str) -> Result<usize> {
        let s = g.shape(v);
        if s.len() != 4 || s[0] != self.n || s[2] != self.h || s[3] != self.w {
            return Err(Error::shape(format!(
                "{what} has shape {s:?}, labels are {}×{}×{}",
                self.n, self.h, self.w
            )));
        }
        Ok(s[1])
    }
}

fn warn_empty(what: &str) {
    log::warn!("{what}: no valid pixels, contributing 0");
}

/// Sum over the two spatial axes, giving N×C×1×1.
fn spatial_sum(g: &mut Graph, x: Var) -> Result<Var> {
    let s = g.sum_axis(x, 3)?;
    g.sum_axis(s, 2)
}

/// Mean over valid pixels of w·(−log softmax(logits)[Ŷ]).
pub fn masked_ce(g: &mut Graph, logits_up: Var, t: &Targets, w: &Tensor) -> Result<Var> {
    let k = t.check_map(g, logits_up, "logits")?;
    t.check_classes(k)?;
    let count = t.valid_count();
    if count == 0 {
        warn_empty("cross-entropy");
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let ls = g.log_softmax(logits_up, 1)?;
    let picked = g.pick(ls, &t.classes)?;
    let wm = weight_mask(w, &t.valid)?;
    let weighted = g.mul_const(picked, &wm)?;
    let s = g.sum(weighted);
    Ok(g.scale(s, -1.0 / count as f64))
}

/// w⊙M, rejecting a weight map of the wrong shape.
fn weight_mask(w: &Tensor, valid: &Tensor) -> Result<Tensor> {
    if w.shape() != valid.shape() {
        return Err(Error::shape(format!(
            "weight map {:?} does not match mask {:?}",
            w.shape(),
            valid.shape()
        )));
    }
    Tensor::new(
        w.shape(),
        w.data()
            .iter()
            .zip(valid.data())
            .map(|(a, m)| a * m)
            .collect(),
    )
}

/// Per-image soft Dice loss 1 − (2Σ q·p·y + s)/(Σ q·(p + y) + s) for one
/// channel `p` (N×1×H×W) against a 0/1 target, with per-pixel weights `q`.
/// Returns an N×1×1×1 map.
fn dice_per_image(g: &mut Graph, p: Var, target: &Tensor, q: &Tensor, smooth: f64) -> Result<Var> {
    let n = target.shape()[0];
    let qy = Tensor::new(
        q.shape(),
        q.data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| a * b)
            .collect(),
    )?;
    let inter = g.mul_const(p, &qy)?;
    let inter = spatial_sum(g, inter)?;
    let pq = g.mul_const(p, q)?;
    let psum = spatial_sum(g, pq)?;
    let per = q.numel() / n;
    let ysum: Vec<f64> = (0..n)
        .map(|i| qy.data()[i * per..(i + 1) * per].iter().sum::<f64>() + smooth)
        .collect();
    let ysum = g.constant(Tensor::new(&[n, 1, 1, 1], ysum)?);
    let num = g.scale(inter, 2.0);
    let num = g.add_scalar(num, smooth);
    let den = g.add(psum, ysum)?;
    let ratio = g.div(num, den)?;
    let neg = g.neg(ratio)?;
    Ok(g.add_scalar(neg, 1.0))
}

/// Soft multi-class Dice on softmax(logits), averaged over the classes present
/// in each image's valid region and then over images with valid pixels.
pub fn masked_dice(g: &mut Graph, logits_up: Var, t: &Targets, w: &Tensor) -> Result<Var> {
    let k = t.check_map(g, logits_up, "logits")?;
    t.check_classes(k)?;
    let hw = t.h * t.w;
    let wm = weight_mask(w, &t.valid)?;
    // present[i][c]: class c has a valid pixel in image i.
    let mut present = vec![vec![false; k]; t.n];
    for (p, c) in t.classes.iter().enumerate() {
        if let Some(c) = c {
            present[p / hw][*c] = true;
        }
    }
    let images: Vec<usize> = (0..t.n)
        .filter(|&i| present[i].iter().any(|&b| b))
        .collect();
    if images.is_empty() {
        warn_empty("dice");
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let probs = g.softmax(logits_up, 1)?;
    let mut total: Option<Var> = None;
    for c in 0..k {
        if !(0..t.n).any(|i| present[i][c]) {
            continue;
        }
        let target = Tensor::new(
            &[t.n, 1, t.h, t.w],
            t.classes
                .iter()
                .map(|&v| (v == Some(c)) as u8 as f64)
                .collect(),
        )?;
        let pc = g.slice(probs, 1, c, 1)?;
        let d = dice_per_image(g, pc, &target, &wm, DICE_SMOOTH)?;
        let coef: Vec<f64> = (0..t.n)
            .map(|i| {
                if present[i][c] {
                    1.0 / present[i].iter().filter(|&&b| b).count() as f64
                } else {
                    0.0
                }
            })
            .collect();
        let d = g.mul_const(d, &Tensor::new(&[t.n, 1, 1, 1], coef)?)?;
        let s = g.sum(d);
        total = Some(match total {
            None => s,
            Some(acc) => g.add(acc, s)?,
        });
    }
    let total = total.expect("some class is present");
    Ok(g.scale(total, 1.0 / images.len() as f64))
}

/// Mean over valid pixels of CE/(2σ²) + ½·ln σ², with a scalar σ² per pixel.
pub fn heteroscedastic_loss(
    g: &mut Graph,
    logits_up: Var,
    t: &Targets,
    sigma2_up: Var,
) -> Result<Var> {
    let k = t.check_map(g, logits_up, "logits")?;
    t.check_classes(k)?;
    if t.check_map(g, sigma2_up, "variance")? != 1 {
        return Err(Error::shape("variance map must have one channel"));
    }
    if let Some(v) = g.value(sigma2_up).data().iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("variance must be positive, got {v}")));
    }
    let count = t.valid_count();
    if count == 0 {
        warn_empty("heteroscedastic");
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let ls = g.log_softmax(logits_up, 1)?;
    let nll = g.pick(ls, &t.classes)?;
    let ce = g.neg(nll)?;
    let two_s = g.scale(sigma2_up, 2.0);
    let fit = g.div(ce, two_s)?;
    let log_s = g.log(sigma2_up)?;
    let reg = g.scale(log_s, 0.5);
    let per_pixel = g.add(fit, reg)?;
    let masked = g.mul_const(per_pixel, &t.valid)?;
    let s = g.sum(masked);
    Ok(g.scale(s, 1.0 / count as f64))
}

/// Pixels within Chebyshev distance < `width` of a label interface.
pub fn boundary_band(labels: &LabelMap, width: usize) -> Vec<bool> {
    chebyshev_dilate(
        &labels.boundary_seeds(),
        labels.height(),
        labels.width(),
        width,
    )
}

/// Euclidean distance to the nearest label-interface pixel, or `None` when
/// the map has no interface.
pub fn unsigned_distance(labels: &LabelMap) -> Option<Vec<f64>> {
    let seeds = labels.boundary_seeds();
    if !seeds.iter().any(|&b| b) {
        return None;
    }
    Some(distance::edt(&seeds, labels.height(), labels.width()))
}

/// Pixel-mean BCE plus binary soft Dice of sigmoid(edge) against the band.
/// With `pixel_weights`, the BCE term is weighted per pixel.
pub fn boundary_loss(
    g: &mut Graph,
    edge_up: Var,
    band: &Tensor,
    pixel_weights: Option<&Tensor>,
) -> Result<Var> {
    let s = g.shape(edge_up).to_vec();
    if s.len() != 4 || s[1] != 1 || band.shape() != s.as_slice() {
        return Err(Error::shape(format!(
            "edge map {s:?} does not match band {:?}",
            band.shape()
        )));
    }
    let n = s[0];
    let sp = g.softplus(edge_up)?;
    let xb = g.mul_const(edge_up, band)?;
    let mut bce = g.sub(sp, xb)?;
    if let Some(w) = pixel_weights {
        bce = g.mul_const(bce, w)?;
    }
    let bce = g.sum(bce);
    let bce = g.scale(bce, 1.0 / band.numel() as f64);
    let p = g.sigmoid(edge_up)?;
    let ones = Tensor::full(band.shape(), 1.0);
    let dice = dice_per_image(g, p, band, &ones, DICE_SMOOTH)?;
    let dice = g.sum(dice);
    let dice = g.scale(dice, 1.0 / n as f64);
    g.add(bce, dice)
}

/// (1/HW)·Σ ‖∇P‖₁·|φ| with forward differences, averaged over images.
pub fn sdf_loss(g: &mut Graph, probs_up: Var, sdf: &Tensor) -> Result<Var> {
    let s = g.shape(probs_up).to_vec();
    if s.len() != 4 || sdf.shape() != [s[0], 1, s[2], s[3]] {
        return Err(Error::shape(format!(
            "probability map {s:?} does not match distance map {:?}",
            sdf.shape()
        )));
    }
    let dy = g.diff(probs_up, 2)?;
    let dx = g.diff(probs_up, 3)?;
    let ay = g.abs(dy)?;
    let ax = g.abs(dx)?;
    let grad = g.add(ay, ax)?;
    let grad = g.sum_axis(grad, 1)?;
    let weighted = g.mul_const(grad, sdf)?;
    let total = g.sum(weighted);
    Ok(g.scale(total, 1.0 / (s[0] * s[2] * s[3]) as f64))
}

/// Uncertainty maps at full resolution.
#[derive(Clone, Debug)]
pub struct UncertaintyMaps {
    pub ale: Tensor,
    pub ent: Tensor,
    pub mixed: Tensor,
    pub weights: Tensor,
}

/// Per-image min–max normalisation of an N×1×H×W map; near-constant images
/// become all zeros.
pub fn minmax_per_image(x: &Tensor) -> Result<Tensor> {
    let (n, _, _, _) = x.dims4()?;
    let per = x.numel() / n.max(1);
    let mut out = Vec::with_capacity(x.numel());
    for img in x.data().chunks(per.max(1)) {
        let lo = img.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = img.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        if range <= 1e-12 * hi.abs().max(1.0) {
            out.extend(std::iter::repeat_n(0.0, img.len()));
        } else {
            out.extend(img.iter().map(|v| (v - lo) / range));
        }
    }
    Tensor::new(x.shape(), out)
}

/// Shannon entropy of softmax over channels, N×1×H×W.
pub fn entropy(logits: &Tensor) -> Result<Tensor> {
    let (n, k, h, w) = logits.dims4()?;
    let p = kernels::softmax(logits, 1)?;
    let hw = h * w;
    let mut out = vec![0.0; n * hw];
    for i in 0..n {
        for c in 0..k {
            for j in 0..hw {
                let v = p.data()[(i * k + c) * hw + j];
                if v > 0.0 {
                    out[i * hw + j] -= v * v.ln();
                }
            }
        }
    }
    Tensor::new(&[n, 1, h, w], out)
}

/// U = α·norm(Up(U_ale)) + (1−α)·norm(entropy(Z*↑)) and w = exp(−β·U).
pub fn mix_uncertainty(
    u_ale: &Tensor,
    refined_up: &Tensor,
    alpha: f64,
    beta: f64,
) -> Result<UncertaintyMaps> {
    let (_, _, h, w) = refined_up.dims4()?;
    let ale = minmax_per_image(&kernels::upsample_bilinear(u_ale, h, w)?)?;
    let ent = minmax_per_image(&entropy(refined_up)?)?;
    if ale.shape() != ent.shape() {
        return Err(Error::shape("aleatoric and entropy maps differ in shape"));
    }
    let mixed = Tensor::new(
        ale.shape(),
        ale.data()
            .iter()
            .zip(ent.data())
            .map(|(a, e)| alpha * a + (1.0 - alpha) * e)
            .collect(),
    )?;
    let weights = Tensor::new(
        mixed.shape(),
        mixed.data().iter().map(|u| (-beta * u).exp()).collect(),
    )?;
    Ok(UncertaintyMaps {
        ale,
        ent,
        mixed,
        weights,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LossOptions {
    /// Apply the uncertainty weights to the per-pixel boundary BCE as well.
    pub weight_boundary: bool,
}

/// Graph handles of the loss terms. Absent terms are `None`.
#[derive(Clone, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub ce: Var,
    pub dice: Var,
    pub het: Option<Var>,
    pub bnd: Option<Var>,
    pub sdf: Option<Var>,
}

/// Full objective with a caller-supplied weight map (held constant).
pub fn total_loss_with_weights(
    g: &mut Graph,
    out: &DecoderOutputs,
    t: &Targets,
    lw: &LossWeights,
    w: &Tensor,
    opts: LossOptions,
) -> Result<(LossTerms, LossBreakdown)> {
    lw.validate()?;
    let (h, wd) = (t.h, t.w);
    let refined_up = g.upsample_bilinear(out.refined, h, wd)?;
    let ce = masked_ce(g, refined_up, t, w)?;
    let dice = masked_dice(g, refined_up, t, w)?;
    let scaled = g.scale(dice, lw.dice);
    let mut total = g.add(ce, scaled)?;

    let het = match out.u_ale {
        Some(u) => {
            let logits_up = g.upsample_bilinear(out.logits, h, wd)?;
            let s2 = g.upsample_bilinear(u, h, wd)?;
            let het = heteroscedastic_loss(g, logits_up, t, s2)?;
            let scaled = g.scale(het, lw.het);
            total = g.add(total, scaled)?;
            Some(het)
        }
        None => None,
    };
    let (bnd, sdf) = match out.edge {
        Some(e) => {
            let e_up = g.upsample_bilinear(e, h, wd)?;
            let weights = opts.weight_boundary.then_some(w);
            let bnd = boundary_loss(g, e_up, &t.band, weights)?;
            let probs = g.softmax(refined_up, 1)?;
            let sdf = sdf_loss(g, probs, &t.sdf)?;
            let sb = g.scale(bnd, lw.bnd);
            let ss = g.scale(sdf, lw.sdf);
            total = g.add(total, sb)?;
            total = g.add(total, ss)?;
            (Some(bnd), Some(sdf))
        }
        None => (None, None),
    };

    let count = t.valid_count();
    let mean_w = if count == 0 {
        0.0
    } else {
        w.data()
            .iter()
            .zip(t.valid.data())
            .map(|(a, m)| a * m)
            .sum::<f64>()
            / count as f64
    };
    let val = |v: Option<Var>| v.map_or(0.0, |v| g.value(v).data()[0]);
    let breakdown = LossBreakdown {
        total: val(Some(total)),
        ce: val(Some(ce)),
        dice: val(Some(dice)),
        het: val(het),
        bnd: val(bnd),
        sdf: val(sdf),
        mean_w,
        valid_fraction: count as f64 / t.classes.len() as f64,
    };
    Ok((
        LossTerms {
            total,
            ce,
            dice,
            het,
            bnd,
            sdf,
        },
        breakdown,
    ))
}

/// Uncertainty weights for a decoder evaluation: exp(−β·U) when a variance
/// head exists, ones otherwise.
pub fn pixel_weights(
    g: &Graph,
    out: &DecoderOutputs,
    t: &Targets,
    lw: &LossWeights,
) -> Result<Tensor> {
    match out.u_ale {
        Some(u) => {
            let refined_up = kernels::upsample_bilinear(g.value(out.refined), t.h, t.w)?;
            Ok(mix_uncertainty(g.value(u), &refined_up, lw.alpha, lw.beta)?.weights)
        }
        None => Ok(Tensor::full(&[t.n, 1, t.h, t.w], 1.0)),
    }
}

/// Full objective: L_seg + λ_het·L_het + λ_bnd·L_bnd + λ_sdf·L_sdf with
/// uncertainty weights computed from the current outputs.
pub fn total_loss(
    g: &mut Graph,
    out: &DecoderOutputs,
    t: &Targets,
    lw: &LossWeights,
    opts: LossOptions,
) -> Result<(LossTerms, LossBreakdown)> {
    let w = pixel_weights(g, out, t, lw)?;
    total_loss_with_weights(g, out, t, lw, &w, opts)
}
