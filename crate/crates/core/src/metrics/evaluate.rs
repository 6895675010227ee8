//! Directory-level evaluation and CSV reporting.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{boundary_f1, ece, miou, structural_scores, BOUNDARY_BAND, ECE_BINS};
use crate::error::{Error, Result};
use crate::io::{ctsr, pgm};
use crate::labels::{LabelMap, IGNORE};

/// Scores of one prediction against its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricValues {
    pub miou: Option<f64>,
    pub per_class: Vec<Option<f64>>,
    pub boundary_f1: f64,
    pub ece: Option<f64>,
    pub tv_smooth: f64,
    pub compactness: f64,
    pub edge_regularity: f64,
}

impl MetricValues {
    /// Score one map. `confidence`, when given, holds the max-softmax value
    /// per pixel and enables ECE over pixels with a ground-truth label.
    pub fn compute(
        pred: &LabelMap,
        gt: &LabelMap,
        k: usize,
        confidence: Option<&[f64]>,
    ) -> Result<Self> {
        let m = miou(pred, gt, k)?;
        let bf1 = boundary_f1(pred, gt, BOUNDARY_BAND)?;
        let ece = match confidence {
            Some(conf) => {
                if conf.len() != gt.len() {
                    return Err(Error::shape(format!(
                        "confidence map has {} values for {} pixels",
                        conf.len(),
                        gt.len()
                    )));
                }
                let (mut c, mut ok) = (Vec::new(), Vec::new());
                for ((&p, &t), &v) in pred.data().iter().zip(gt.data()).zip(conf) {
                    if t != IGNORE {
                        c.push(v);
                        ok.push(p == t);
                    }
                }
                Some(ece(&c, &ok, ECE_BINS)?)
            }
            None => None,
        };
        let s = structural_scores(pred, k);
        Ok(MetricValues {
            miou: m.mean,
            per_class: m.per_class,
            boundary_f1: bf1,
            ece,
            tv_smooth: s.tv_smooth,
            compactness: s.compactness,
            edge_regularity: s.edge_regularity,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRow {
    pub name: String,
    pub result: std::result::Result<MetricValues, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub classes: usize,
    pub rows: Vec<ImageRow>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl EvalReport {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn error_count(&self) -> usize {
        self.rows.iter().filter(|r| r.result.is_err()).count()
    }

    fn ok(&self) -> impl Iterator<Item = &MetricValues> + Clone {
        self.rows.iter().filter_map(|r| r.result.as_ref().ok())
    }

    /// Mean of the per-image values over successfully scored images.
    pub fn aggregate(&self) -> Option<MetricValues> {
        let ok = self.ok();
        ok.clone().next()?;
        Some(MetricValues {
            miou: mean(ok.clone().map(|m| m.miou)),
            per_class: (0..self.classes)
                .map(|c| mean(ok.clone().map(|m| m.per_class.get(c).copied().flatten())))
                .collect(),
            boundary_f1: mean(ok.clone().map(|m| Some(m.boundary_f1))).unwrap_or(0.0),
            ece: mean(ok.clone().map(|m| m.ece)),
            tv_smooth: mean(ok.clone().map(|m| Some(m.tv_smooth))).unwrap_or(0.0),
            compactness: mean(ok.clone().map(|m| Some(m.compactness))).unwrap_or(0.0),
            edge_regularity: mean(ok.map(|m| Some(m.edge_regularity))).unwrap_or(0.0),
        })
    }

    /// Fixed-order CSV: one row per image, then a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("image,miou,boundary_f1,ece,tv_smooth,compactness,edge_regularity");
        for c in 0..self.classes {
            let _ = write!(out, ",iou_{c}");
        }
        out.push_str(",error\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let values = |out: &mut String, name: &str, m: &MetricValues| {
            let _ = write!(
                out,
                "{name},{},{:.6},{},{:.6},{:.6},{:.6}",
                opt(m.miou),
                m.boundary_f1,
                opt(m.ece),
                m.tv_smooth,
                m.compactness,
                m.edge_regularity
            );
            for c in 0..self.classes {
                let _ = write!(out, ",{}", opt(m.per_class.get(c).copied().flatten()));
            }
        };
        for r in &self.rows {
            match &r.result {
                Ok(m) => {
                    values(&mut out, &r.name, m);
                    out.push_str(",\n");
                }
                Err(e) => {
                    out.push_str(&r.name);
                    out.push_str(&",".repeat(6 + self.classes));
                    let _ = writeln!(out, ",{}", e.replace([',', '\n'], ";"));
                }
            }
        }
        if let Some(agg) = self.aggregate() {
            values(&mut out, "mean", &agg);
            out.push_str(",\n");
        }
        out
    }
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// Directory of CTSR max-softmax maps named like the masks, `.ctsr` suffix.
    pub confidence_dir: Option<PathBuf>,
}

fn pgm_names(dir: &Path) -> Result<BTreeSet<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = BTreeSet::new();
    for e in entries {
        let e = e.map_err(|e| Error::io(dir, e))?;
        let name = e.file_name().to_string_lossy().into_owned();
        if name.ends_with(".pgm") {
            names.insert(name);
        }
    }
    Ok(names)
}

fn score_pair(
    pred_dir: &Path,
    gt_dir: &Path,
    name: &str,
    k: usize,
    opts: &EvalOptions,
) -> Result<MetricValues> {
    let gt = pgm::read(&gt_dir.join(name))?;
    let pred = pgm::read(&pred_dir.join(name))?;
    let conf = match &opts.confidence_dir {
        Some(dir) => {
            let stem = name.trim_end_matches(".pgm");
            Some(ctsr::read(&dir.join(format!("{stem}.ctsr")))?.into_data())
        }
        None => None,
    };
    MetricValues::compute(&pred, &gt, k, conf.as_deref())
}

/// Score every `.pgm` mask of `gt_dir` against the same-named file of
/// `pred_dir`, in file-name order. Files present on only one side, and pairs
/// that fail to load or score, become error rows.
pub fn evaluate(
    pred_dir: &Path,
    gt_dir: &Path,
    k: usize,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let gt_names = pgm_names(gt_dir)?;
    let pred_names = pgm_names(pred_dir)?;
    let rows = gt_names
        .union(&pred_names)
        .map(|name| {
            let result = if !gt_names.contains(name) {
                Err("no ground truth for this prediction".to_string())
            } else if !pred_names.contains(name) {
                Err("prediction missing".to_string())
            } else {
                score_pair(pred_dir, gt_dir, name, k, opts).map_err(|e| e.to_string())
            };
            ImageRow {
                name: name.clone(),
                result,
            }
        })
        .collect();
    Ok(EvalReport { classes: k, rows })
}
