//! Integer label maps, valid masks and boundary sets.

use crate::error::{Error, Result};

/// Label value excluded from losses and metrics.
pub const IGNORE: u8 = 255;

/// Row-major `H×W` map of class indices, with [`IGNORE`] for unlabelled pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height.checked_mul(width) != Some(data.len()) {
            return Err(Error::shape(format!(
                "{height}×{width} label map needs {} values, got {}",
                height.saturating_mul(width),
                data.len()
            )));
        }
        Ok(LabelMap {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        LabelMap {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        LabelMap {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Reject any non-IGNORE value ≥ `k`.
    pub fn check_classes(&self, k: usize) -> Result<()> {
        match self.data.iter().find(|&&v| v != IGNORE && v as usize >= k) {
            Some(v) => Err(Error::invalid(format!(
                "label {v} out of range for {k} classes"
            ))),
            None => Ok(()),
        }
    }

    /// Class per pixel, `None` for IGNORE.
    pub fn classes(&self) -> Vec<Option<usize>> {
        self.data
            .iter()
            .map(|&v| (v != IGNORE).then_some(v as usize))
            .collect()
    }

    pub fn same_size(&self, other: &LabelMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn hflip(&self) -> LabelMap {
        LabelMap::from_fn(self.height, self.width, |y, x| {
            self.get(y, self.width - 1 - x)
        })
    }

    pub fn transpose(&self) -> LabelMap {
        LabelMap::from_fn(self.width, self.height, |y, x| self.get(x, y))
    }

    /// Binary mask of pixels equal to `class`.
    pub fn mask_of(&self, class: u8) -> Vec<bool> {
        self.data.iter().map(|&v| v == class).collect()
    }

    /// Pixels whose label differs from a 4-neighbour, both non-IGNORE.
    pub fn boundary_seeds(&self) -> Vec<bool> {
        let (h, w) = (self.height, self.width);
        let mut out = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                let v = self.get(y, x);
                if v == IGNORE {
                    continue;
                }
                let differs = |ny: usize, nx: usize| {
                    let n = self.get(ny, nx);
                    n != IGNORE && n != v
                };
                out[y * w + x] = (y > 0 && differs(y - 1, x))
                    || (y + 1 < h && differs(y + 1, x))
                    || (x > 0 && differs(y, x - 1))
                    || (x + 1 < w && differs(y, x + 1));
            }
        }
        out
    }
}

/// Pixels within Chebyshev distance `< band` of any set pixel.
pub fn chebyshev_dilate(mask: &[bool], h: usize, w: usize, band: usize) -> Vec<bool> {
    if band == 0 {
        return vec![false; h * w];
    }
    let r = band - 1;
    // Separable: a square structuring element is a row pass then a column pass.
    let mut rows = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if mask[y * w + x] {
                for nx in x.saturating_sub(r)..(x + r + 1).min(w) {
                    rows[y * w + nx] = true;
                }
            }
        }
    }
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if rows[y * w + x] {
                for ny in y.saturating_sub(r)..(y + r + 1).min(h) {
                    out[ny * w + x] = true;
                }
            }
        }
    }
    out
}

/// Training targets for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabel {
    pub labels: LabelMap,
    /// Valid mask M; false wherever `labels` is IGNORE.
    pub valid: Vec<bool>,
    /// Per-pixel uncertainty used for top-q% filtering.
    pub seed_uncertainty: Vec<f64>,
    /// Dense map that the boundary band and distance transform come from
    /// when `labels` has IGNORE holes; `labels` itself when `None`.
    pub structure: Option<LabelMap>,
}

impl PseudoLabel {
    pub fn new(labels: LabelMap, valid: Vec<bool>, seed_uncertainty: Vec<f64>) -> Result<Self> {
        if valid.len() != labels.len() || seed_uncertainty.len() != labels.len() {
            return Err(Error::shape("pseudo-label components differ in size"));
        }
        if labels
            .data()
            .iter()
            .zip(&valid)
            .any(|(&l, &m)| l == IGNORE && m)
        {
            return Err(Error::invalid("valid mask set on an IGNORE pixel"));
        }
        Ok(PseudoLabel {
            labels,
            valid,
            seed_uncertainty,
            structure: None,
        })
    }

    /// Attach a dense structure map of the same size.
    pub fn with_structure(mut self, map: LabelMap) -> Result<Self> {
        if map.height() != self.labels.height() || map.width() != self.labels.width() {
            return Err(Error::shape(
                "structure map differs in size from the labels",
            ));
        }
        self.structure = Some(map);
        Ok(self)
    }

    /// The map boundary targets are derived from.
    pub fn structure(&self) -> &LabelMap {
        self.structure.as_ref().unwrap_or(&self.labels)
    }

    /// Class per pixel for valid pixels, `None` elsewhere.
    pub fn targets(&self) -> Vec<Option<usize>> {
        self.labels
            .data()
            .iter()
            .zip(&self.valid)
            .map(|(&l, &m)| (m && l != IGNORE).then_some(l as usize))
            .collect()
    }

    pub fn valid_count(&self) -> usize {
        self.targets().iter().filter(|t| t.is_some()).count()
    }

    pub fn hflip(&self) -> PseudoLabel {
        let (h, w) = (self.labels.height(), self.labels.width());
        let flip = |y: usize, x: usize| y * w + (w - 1 - x);
        let mut valid = vec![false; h * w];
        let mut unc = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                valid[y * w + x] = self.valid[flip(y, x)];
                unc[y * w + x] = self.seed_uncertainty[flip(y, x)];
            }
        }
        PseudoLabel {
            labels: self.labels.hflip(),
            valid,
            seed_uncertainty: unc,
            structure: self.structure.as_ref().map(LabelMap::hflip),
        }
    }
}
