//! Seed corruption: turns exact ground truth into a plausible weak label.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::distance::edt;
use crate::error::{Error, Result};
use crate::labels::{LabelMap, PseudoLabel};
use crate::losses::unsigned_distance;
use crate::wsss::build_ignore_mask;

/// Side of the square a component must contain to count as thick.
const THICK_SIDE: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct CorruptionSpec {
    /// Under-coverage radius, in pixels.
    pub erode_px: usize,
    /// Leakage radius, in pixels.
    pub dilate_px: usize,
    /// Passes of a 3×3 majority filter.
    pub blob_smooth_iters: usize,
    /// Probability of deleting a structure thinner than four pixels.
    pub drop_thin_prob: f64,
    /// Per-pixel probability of a random wrong label.
    pub flip_prob: f64,
    /// Standard deviation of the noise added to the seed uncertainty.
    pub uncertainty_noise: f64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec {
            erode_px: 2,
            dilate_px: 2,
            blob_smooth_iters: 2,
            drop_thin_prob: 0.5,
            flip_prob: 0.02,
            uncertainty_noise: 0.05,
        }
    }
}

impl CorruptionSpec {
    /// A spec that changes nothing.
    pub fn none() -> Self {
        CorruptionSpec {
            erode_px: 0,
            dilate_px: 0,
            blob_smooth_iters: 0,
            drop_thin_prob: 0.0,
            flip_prob: 0.0,
            uncertainty_noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = [self.drop_thin_prob, self.flip_prob];
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(
                "corruption probabilities must lie in [0, 1]",
            ));
        }
        if !(self.uncertainty_noise >= 0.0) {
            return Err(Error::invalid("uncertainty_noise must be ≥ 0"));
        }
        Ok(())
    }
}

/// A 4-connected region of one foreground class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    pub class: u8,
    /// Row-major pixel indices, ascending.
    pub pixels: Vec<usize>,
}

/// Foreground components (class ≠ 0 and not IGNORE), ordered by first pixel.
pub fn components(map: &LabelMap) -> Vec<Component> {
    let (h, w) = (map.height(), map.width());
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        let class = map.data()[start];
        if seen[start] || class == 0 || class == crate::labels::IGNORE {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            pixels.push(i);
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if !seen[j] && map.data()[j] == class {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
        pixels.sort_unstable();
        out.push(Component { class, pixels });
    }
    out
}

/// True when no 4×4 square fits inside the component.
pub fn is_thin(c: &Component, h: usize, w: usize) -> bool {
    let mut mask = vec![false; h * w];
    for &i in &c.pixels {
        mask[i] = true;
    }
    for &i in &c.pixels {
        let (y, x) = (i / w, i % w);
        if y + THICK_SIDE > h || x + THICK_SIDE > w {
            continue;
        }
        let full = (0..THICK_SIDE).all(|dy| (0..THICK_SIDE).all(|dx| mask[(y + dy) * w + x + dx]));
        if full {
            return false;
        }
    }
    true
}

/// One pass of a 3×3 majority filter: a pixel takes the label held by at
/// least five of the (in-image) window pixels, else keeps its own.
pub fn majority_smooth(map: &LabelMap) -> LabelMap {
    let (h, w) = (map.height(), map.width());
    LabelMap::from_fn(h, w, |y, x| {
        let mut counts = [0u8; 256];
        for ny in y.saturating_sub(1)..(y + 2).min(h) {
            for nx in x.saturating_sub(1)..(x + 2).min(w) {
                counts[map.get(ny, nx) as usize] += 1;
            }
        }
        let (best, n) = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(c, &n)| (c as u8, n))
            .unwrap_or((map.get(y, x), 0));
        if n >= 5 {
            best
        } else {
            map.get(y, x)
        }
    })
}

/// Corrupt a ground-truth map into seed labels.
///
/// Thin structures are dropped first, then each remaining object is eroded or
/// dilated (chosen at random when both radii are nonzero), then the map is
/// smoothed and finally pixels are flipped to random wrong classes.
pub fn corrupt_labels(
    gt: &LabelMap,
    spec: &CorruptionSpec,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LabelMap> {
    spec.validate()?;
    gt.check_classes(k)?;
    let (h, w) = (gt.height(), gt.width());
    let mut out = gt.clone();
    for c in components(gt) {
        if is_thin(&c, h, w) && rng.gen_bool(spec.drop_thin_prob) {
            for &i in &c.pixels {
                out.data_mut()[i] = 0;
            }
            continue;
        }
        let erode = match (spec.erode_px, spec.dilate_px) {
            (0, 0) => continue,
            (_, 0) => true,
            (0, _) => false,
            _ => rng.gen_bool(0.5),
        };
        let mut mask = vec![false; h * w];
        for &i in &c.pixels {
            mask[i] = true;
        }
        if erode {
            let outside: Vec<bool> = mask.iter().map(|&b| !b).collect();
            let d = edt(&outside, h, w);
            for &i in &c.pixels {
                if d[i] <= spec.erode_px as f64 {
                    out.data_mut()[i] = 0;
                }
            }
        } else {
            let d = edt(&mask, h, w);
            for (i, &di) in d.iter().enumerate() {
                if di > 0.0 && di <= spec.dilate_px as f64 && out.data()[i] == 0 {
                    out.data_mut()[i] = c.class;
                }
            }
        }
    }
    for _ in 0..spec.blob_smooth_iters {
        out = majority_smooth(&out);
    }
    if spec.flip_prob > 0.0 && k > 1 {
        for v in out.data_mut() {
            if rng.gen_bool(spec.flip_prob) {
                *v = ((*v as usize + 1 + rng.gen_range(0..k - 1)) % k) as u8;
            }
        }
    }
    Ok(out)
}

/// Seed confidence proxy: 1/(1+d) with d the distance to the nearest label
/// interface, plus Gaussian noise, clamped to [0, 1].
pub fn seed_uncertainty(seed: &LabelMap, noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = unsigned_distance(seed).unwrap_or_else(|| vec![f64::INFINITY; seed.len()]);
    d.into_iter()
        .map(|d| {
            let n: f64 = if noise > 0.0 {
                noise * Distribution::<f64>::sample(&StandardNormal, rng)
            } else {
                0.0
            };
            (1.0 / (1.0 + d) + n).clamp(0.0, 1.0)
        })
        .collect()
}

/// Seed labels, their uncertainty, and the ignore mask at `q_percent`.
pub fn corrupt_to_seed(
    gt: &LabelMap,
    spec: &CorruptionSpec,
    k: usize,
    q_percent: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PseudoLabel> {
    let labels = corrupt_labels(gt, spec, k, rng)?;
    let unc = seed_uncertainty(&labels, spec.uncertainty_noise, rng);
    let valid = build_ignore_mask(&unc, q_percent)?;
    PseudoLabel::new(labels, valid, unc)
}
