//! Mask-quality metrics: mIoU, Boundary-F1, ECE and structural scores.

mod evaluate;
mod structure;

pub use evaluate::{evaluate, EvalOptions, EvalReport, ImageRow, MetricValues};
pub use structure::{
    compactness, edge_regularity, structural_scores, tv_smoothness, StructuralScores,
    CURVATURE_THRESHOLD,
};

use crate::error::{Error, Result};
use crate::labels::{chebyshev_dilate, LabelMap, IGNORE};

/// Band half-width, in pixels, used by Boundary-F1.
pub const BOUNDARY_BAND: usize = 2;
pub const ECE_BINS: usize = 10;

/// K×K counts, rows ground truth and columns prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Count every pixel whose ground truth is not IGNORE.
    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if !pred.same_size(gt) {
            return Err(Error::shape(format!(
                "prediction is {}×{}, ground truth {}×{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        gt.check_classes(self.k)?;
        for (&p, &t) in pred.data().iter().zip(gt.data()) {
            if t == IGNORE {
                continue;
            }
            if p as usize >= self.k {
                return Err(Error::invalid(format!(
                    "predicted label {p} out of range for {} classes",
                    self.k
                )));
            }
            self.counts[t as usize * self.k + p as usize] += 1;
        }
        Ok(())
    }

    /// IoU per class; `None` for classes absent from both maps.
    pub fn iou(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|c| {
                let tp = self.get(c, c);
                let fn_: u64 = (0..self.k).map(|p| self.get(c, p)).sum::<u64>() - tp;
                let fp: u64 = (0..self.k).map(|t| self.get(t, c)).sum::<u64>() - tp;
                let union = tp + fp + fn_;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    pub fn miou(&self) -> Miou {
        let per_class = self.iou();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let mean =
            (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
        Miou { per_class, mean }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Miou {
    pub per_class: Vec<Option<f64>>,
    /// Mean over classes present in either map; `None` when nothing is evaluated.
    pub mean: Option<f64>,
}

pub fn miou(pred: &LabelMap, gt: &LabelMap, k: usize) -> Result<Miou> {
    let mut cm = ConfusionMatrix::new(k);
    cm.add(pred, gt)?;
    Ok(cm.miou())
}

/// F1 of class-agnostic boundary pixels, matched within Chebyshev distance
/// `< band`. Both sets empty gives 1, exactly one empty gives 0.
pub fn boundary_f1(pred: &LabelMap, gt: &LabelMap, band: usize) -> Result<f64> {
    if !pred.same_size(gt) {
        return Err(Error::shape("boundary F1 of maps with different sizes"));
    }
    let (h, w) = (gt.height(), gt.width());
    let pb = pred.boundary_seeds();
    let gb = gt.boundary_seeds();
    let (np, ng) = (count(&pb), count(&gb));
    match (np, ng) {
        (0, 0) => return Ok(1.0),
        (0, _) | (_, 0) => return Ok(0.0),
        _ => {}
    }
    let near_gt = chebyshev_dilate(&gb, h, w, band);
    let near_pred = chebyshev_dilate(&pb, h, w, band);
    let hit_p = pb.iter().zip(&near_gt).filter(|(a, b)| **a && **b).count();
    let hit_g = gb
        .iter()
        .zip(&near_pred)
        .filter(|(a, b)| **a && **b)
        .count();
    let precision = hit_p as f64 / np as f64;
    let recall = hit_g as f64 / ng as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

fn count(mask: &[bool]) -> usize {
    mask.iter().filter(|&&b| b).count()
}

/// Expected calibration error over equal-width confidence bins.
pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    if confidences.len() != correct.len() {
        return Err(Error::shape(
            "confidences and correctness flags differ in length",
        ));
    }
    if bins == 0 {
        return Err(Error::invalid("ECE needs at least one bin"));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::Domain(format!("confidence {c} outside [0, 1]")));
    }
    if confidences.is_empty() {
        return Ok(0.0);
    }
    let mut n = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    let mut acc = vec![0.0; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = ((c * bins as f64).floor() as usize).min(bins - 1);
        n[b] += 1;
        conf[b] += c;
        acc[b] += ok as u8 as f64;
    }
    let total = confidences.len() as f64;
    Ok((0..bins)
        .filter(|&b| n[b] > 0)
        .map(|b| {
            let nb = n[b] as f64;
            nb / total * (acc[b] / nb - conf[b] / nb).abs()
        })
        .sum())
}
