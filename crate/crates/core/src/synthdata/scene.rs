//! Procedural multi-class scenes with exact ground truth.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::encoder::STRIDE;
use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::tensor::Tensor;

const PLACEMENT_TRIES: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Disk,
    Rectangle,
    Ring,
    Bar,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Disk,
        ShapeKind::Rectangle,
        ShapeKind::Ring,
        ShapeKind::Bar,
    ];

    /// Foreground class for this kind given `k` classes (class 0 is background).
    pub fn class(self, k: usize) -> u8 {
        let i = ShapeKind::ALL.iter().position(|&s| s == self).unwrap_or(0);
        (1 + i % (k - 1)) as u8
    }
}

/// A placed shape. Coordinates are in pixels, centres at half-integers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Disk {
        cy: f64,
        cx: f64,
        r: f64,
    },
    Rectangle {
        y0: usize,
        x0: usize,
        h: usize,
        w: usize,
    },
    Ring {
        cy: f64,
        cx: f64,
        outer: f64,
        inner: f64,
    },
    /// Axis-aligned bar `thickness` pixels wide.
    Bar {
        y0: usize,
        x0: usize,
        len: usize,
        thickness: usize,
        vertical: bool,
    },
}

impl Shape {
    pub fn kind(&self) -> ShapeKind {
        match self {
            Shape::Disk { .. } => ShapeKind::Disk,
            Shape::Rectangle { .. } => ShapeKind::Rectangle,
            Shape::Ring { .. } => ShapeKind::Ring,
            Shape::Bar { .. } => ShapeKind::Bar,
        }
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
        match *self {
            Shape::Disk { cy, cx, r } => (py - cy).powi(2) + (px - cx).powi(2) <= r * r,
            Shape::Rectangle { y0, x0, h, w } => {
                (y0..y0 + h).contains(&y) && (x0..x0 + w).contains(&x)
            }
            Shape::Ring {
                cy,
                cx,
                outer,
                inner,
            } => {
                let d2 = (py - cy).powi(2) + (px - cx).powi(2);
                d2 <= outer * outer && d2 > inner * inner
            }
            Shape::Bar {
                y0,
                x0,
                len,
                thickness,
                vertical,
            } => {
                let (hh, ww) = if vertical {
                    (len, thickness)
                } else {
                    (thickness, len)
                };
                (y0..y0 + hh).contains(&y) && (x0..x0 + ww).contains(&x)
            }
        }
    }

    /// Pixel mask of this shape on an `h×w` canvas.
    pub fn rasterize(&self, h: usize, w: usize) -> Vec<bool> {
        (0..h * w).map(|i| self.contains(i / w, i % w)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub seed: u64,
    /// Standard deviation of the per-pixel colour noise.
    pub noise: f64,
    /// Maximum per-image shift of each class colour.
    pub color_jitter: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            height: 64,
            width: 64,
            classes: 4,
            min_shapes: 2,
            max_shapes: 4,
            seed: 0,
            noise: 0.08,
            color_jitter: 0.08,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0
            || self.width == 0
            || !self.height.is_multiple_of(STRIDE)
            || !self.width.is_multiple_of(STRIDE)
        {
            return Err(Error::invalid(format!(
                "canvas {}×{} must be a nonzero multiple of {STRIDE}",
                self.height, self.width
            )));
        }
        if !(2..=254).contains(&self.classes) {
            return Err(Error::invalid("classes must be in 2..=254"));
        }
        if self.min_shapes > self.max_shapes {
            return Err(Error::invalid("min_shapes exceeds max_shapes"));
        }
        if !(self.noise >= 0.0) || !(self.color_jitter >= 0.0) {
            return Err(Error::invalid("noise and color_jitter must be ≥ 0"));
        }
        Ok(())
    }
}

/// One rendered scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// 3×H×W, values roughly centred on zero.
    pub image: Tensor,
    pub gt: LabelMap,
    pub shapes: Vec<Shape>,
}

/// Base colour per class, cycled for large K.
fn palette(class: usize) -> [f64; 3] {
    const BASE: [[f64; 3]; 6] = [
        [0.20, 0.20, 0.22],
        [0.90, 0.35, 0.20],
        [0.25, 0.80, 0.30],
        [0.25, 0.35, 0.90],
        [0.85, 0.80, 0.20],
        [0.75, 0.25, 0.80],
    ];
    BASE[class % BASE.len()]
}

fn sample_shape(kind: ShapeKind, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Option<Shape> {
    let (hf, wf) = (h as f64, w as f64);
    match kind {
        ShapeKind::Disk => {
            let r = rng.gen_range(5.0..(hf.min(wf) / 4.0).max(5.5));
            if 2.0 * r + 2.0 > hf.min(wf) {
                return None;
            }
            let cy = rng.gen_range(r + 1.0..=hf - r - 1.0);
            let cx = rng.gen_range(r + 1.0..=wf - r - 1.0);
            Some(Shape::Disk { cy, cx, r })
        }
        ShapeKind::Ring => {
            let outer = rng.gen_range(8.0..(hf.min(wf) / 4.0).max(8.5));
            let inner = outer - rng.gen_range(4.0..6.0);
            if 2.0 * outer + 2.0 > hf.min(wf) {
                return None;
            }
            let cy = rng.gen_range(outer + 1.0..=hf - outer - 1.0);
            let cx = rng.gen_range(outer + 1.0..=wf - outer - 1.0);
            Some(Shape::Ring {
                cy,
                cx,
                outer,
                inner,
            })
        }
        ShapeKind::Rectangle => {
            let rh = rng.gen_range(8..=(h / 3).max(8));
            let rw = rng.gen_range(8..=(w / 3).max(8));
            if rh + 2 > h || rw + 2 > w {
                return None;
            }
            Some(Shape::Rectangle {
                y0: rng.gen_range(1..=h - rh - 1),
                x0: rng.gen_range(1..=w - rw - 1),
                h: rh,
                w: rw,
            })
        }
        ShapeKind::Bar => {
            let vertical = rng.gen_bool(0.5);
            let side = if vertical { h } else { w };
            let across = if vertical { w } else { h };
            let thickness = rng.gen_range(1..=3);
            let len = rng.gen_range((side / 4).max(4)..=(side * 3 / 4).max(4));
            if len + 2 > side || thickness + 2 > across {
                return None;
            }
            let along = rng.gen_range(1..=side - len - 1);
            let off = rng.gen_range(1..=across - thickness - 1);
            let (y0, x0) = if vertical { (along, off) } else { (off, along) };
            Some(Shape::Bar {
                y0,
                x0,
                len,
                thickness,
                vertical,
            })
        }
    }
}

/// Paint shapes in order onto a background label map.
pub fn paint(shapes: &[Shape], h: usize, w: usize, k: usize) -> LabelMap {
    let mut gt = LabelMap::filled(h, w, 0);
    for s in shapes {
        let c = s.kind().class(k);
        for (i, inside) in s.rasterize(h, w).into_iter().enumerate() {
            if inside {
                gt.data_mut()[i] = c;
            }
        }
    }
    gt
}

/// Render an image for a ground-truth map: per-class colour with per-image
/// jitter plus Gaussian pixel noise.
pub fn render(gt: &LabelMap, spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let (h, w) = (gt.height(), gt.width());
    let colors: Vec<[f64; 3]> = (0..spec.classes)
        .map(|c| {
            let base = palette(c);
            let mut out = [0.0; 3];
            for (o, b) in out.iter_mut().zip(base) {
                *o = b + spec.color_jitter * rng.gen_range(-1.0..=1.0);
            }
            out
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::invalid(e.to_string()))?;
    let mut data = vec![0.0; 3 * h * w];
    for i in 0..h * w {
        let class = gt.data()[i] as usize;
        let color = colors.get(class).copied().unwrap_or(palette(class));
        for ch in 0..3 {
            data[ch * h * w + i] = color[ch] - 0.5 + noise.sample(rng);
        }
    }
    Tensor::new(&[3, h, w], data)
}

/// Generator seeded for scene `index` of the run seeded with `seed`.
pub fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Deterministic scene for `(spec.seed, index)`. Shapes never overlap and stay
/// one pixel clear of the border; a shape that cannot be placed is skipped.
pub fn generate_scene(spec: &SceneSpec, index: u64) -> Result<Scene> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = scene_rng(spec.seed, index);
    let count = rng.gen_range(spec.min_shapes..=spec.max_shapes);
    let mut occupied = vec![false; h * w];
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = ShapeKind::ALL[rng.gen_range(0..ShapeKind::ALL.len())];
        let mut placed = false;
        for _ in 0..PLACEMENT_TRIES {
            let Some(shape) = sample_shape(kind, h, w, &mut rng) else {
                break;
            };
            let mask = shape.rasterize(h, w);
            // Require a one-pixel gap so shapes of one class stay separate.
            let grown = crate::labels::chebyshev_dilate(&mask, h, w, 2);
            if grown.iter().zip(&occupied).any(|(&a, &b)| a && b) {
                continue;
            }
            for (o, m) in occupied.iter_mut().zip(mask) {
                *o |= m;
            }
            shapes.push(shape);
            placed = true;
            break;
        }
        if !placed {
            log::debug!("scene {index}: could not place a {kind:?}, skipping");
        }
    }
    let gt = paint(&shapes, h, w, spec.classes);
    let image = render(&gt, spec, &mut rng)?;
    Ok(Scene { image, gt, shapes })
}
