//! The weakly supervised training loop.

use std::fmt::Write as _;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::infer::{predict, stack_images};
use super::optim::{clip_grad_norm, lr_factor, AdamW};
use super::schedule::{anneal_q, build_ignore_mask};
use super::teacher::{relabel, Teacher};
use crate::decoder::ForwardOptions;
use crate::error::{Error, Result};
use crate::labels::{LabelMap, PseudoLabel, IGNORE};
use crate::losses::{pixel_weights, total_loss_with_weights, LossBreakdown, Targets};
use crate::metrics::ConfusionMatrix;
use crate::model::Model;
use crate::params::ParamStore;
use crate::synthdata::dataset::Dataset;
use crate::tensor::{Graph, Tensor};

const SHUFFLE_SALT: u64 = 0x7a11_5eed_0000_0001;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr_factor: f64,
    pub grad_norm: f64,
    pub loss: LossBreakdown,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub q: f64,
    pub relabeled: bool,
    pub detached: bool,
    pub weighted: bool,
    pub mean_total: f64,
    pub valid_fraction: f64,
    /// mIoU of the current pseudo-labels against ground truth on valid pixels.
    pub pseudo_miou: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub teacher: Option<ParamStore>,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

/// mIoU of pseudo-labels against ground truth, counting valid pixels only.
pub fn pseudo_label_miou(
    labels: &[PseudoLabel],
    gts: &[&LabelMap],
    k: usize,
) -> Result<Option<f64>> {
    let mut cm = ConfusionMatrix::new(k);
    for (p, gt) in labels.iter().zip(gts) {
        let masked = LabelMap::new(
            gt.height(),
            gt.width(),
            gt.data()
                .iter()
                .zip(&p.valid)
                .map(|(&g, &v)| if v { g } else { IGNORE })
                .collect(),
        )?;
        let pred = LabelMap::new(
            gt.height(),
            gt.width(),
            p.labels
                .data()
                .iter()
                .map(|&c| if c == IGNORE { 0 } else { c })
                .collect(),
        )?;
        cm.add(&pred, &masked)?;
    }
    Ok(cm.miou().mean)
}

fn seed_labels(data: &Dataset, q: f64) -> Result<Vec<PseudoLabel>> {
    data.samples
        .iter()
        .map(|s| {
            let valid = build_ignore_mask(&s.uncertainty, q)?;
            PseudoLabel::new(s.seed.clone(), valid, s.uncertainty.clone())
        })
        .collect()
}

fn hflip_image(t: &Tensor) -> Result<Tensor> {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let src = t.data();
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        for y in 0..h {
            let row = (ch * h + y) * w;
            for x in 0..w {
                out[row + x] = src[row + w - 1 - x];
            }
        }
    }
    Tensor::new(s, out)
}

/// Regenerate pseudo-labels from teacher predictions.
fn relabel_all(
    model: &Model,
    teacher: &ParamStore,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<PseudoLabel>> {
    let images: Vec<&Tensor> = data.samples.iter().map(|s| &s.image).collect();
    let preds = predict(model, teacher, &images, &cfg.loss)?;
    let (h, w) = (data.spec.scene.height, data.spec.scene.width);
    preds
        .iter()
        .map(|p| {
            relabel(
                &p.probs,
                &p.uncertainty,
                model.classes(),
                h,
                w,
                cfg.keep_fraction,
            )
        })
        .collect()
}

/// Gradients of every parameter from one graph, zero where unreached.
fn collect_grads(
    g: &Graph,
    b: &crate::params::Bindings,
    params: &ParamStore,
) -> Result<IndexMap<String, Tensor>> {
    let mut out = IndexMap::new();
    for (name, v) in b.iter() {
        let grad = match g.grad(v) {
            Some(t) => t,
            None => Tensor::zeros(params.get(name)?.shape()),
        };
        out.insert(name.to_string(), grad);
    }
    Ok(out)
}

/// Run the loop of `cfg` on `data`, returning the student, the teacher and
/// the logs. A fixed seed gives bit-identical results.
pub fn train(cfg: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let k = data.spec.scene.classes;
    let model = Model::new(cfg.model_config(k)?)?;
    let mut params = model.init(cfg.seed)?;
    train_from(cfg, data, &model, &mut params).map(|(teacher, steps, epochs)| TrainOutcome {
        params,
        teacher,
        steps,
        epochs,
    })
}

type Logs = (Option<ParamStore>, Vec<StepRecord>, Vec<EpochRecord>);

fn train_from(
    cfg: &TrainConfig,
    data: &Dataset,
    model: &Model,
    params: &mut ParamStore,
) -> Result<Logs> {
    let n = data.samples.len();
    let k = model.classes();
    let gts: Vec<&LabelMap> = data.samples.iter().map(|s| &s.gt).collect();
    let mut teacher = cfg.components.ema.then(|| Teacher::new(params));
    let mut opt = AdamW::new(cfg.optimizer(), params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let warmup = steps_per_epoch * cfg.warmup_epochs;
    let mut labels: Option<Vec<PseudoLabel>> = None;
    let mut steps = Vec::with_capacity(total_steps);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        let q = anneal_q(epoch, cfg.q_start, cfg.q_end, cfg.q_anneal_epochs);
        let mut relabeled = false;
        if let Some(t) = &teacher {
            if cfg.relabels_at(epoch) {
                labels = Some(relabel_all(model, &t.params, data, cfg)?);
                relabeled = true;
                log::info!("epoch {epoch}: relabeled {n} images from the teacher");
            }
        }
        let current = match &labels {
            Some(l) => l.clone(),
            None => seed_labels(data, q)?,
        };
        let detached = epoch < cfg.detach_epochs;
        let weighted = cfg.components.ugr && epoch >= cfg.weighting_start_epoch;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut sum_total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut images = Vec::with_capacity(chunk.len());
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let flip = cfg.hflip && rng.gen_bool(0.5);
                if flip {
                    images.push(hflip_image(&data.samples[i].image)?);
                    batch.push(current[i].hflip());
                } else {
                    images.push(data.samples[i].image.clone());
                    batch.push(current[i].clone());
                }
            }
            let refs: Vec<&Tensor> = images.iter().collect();
            let x = stack_images(&refs)?;
            let targets = Targets::new(&batch)?;

            let mut g = Graph::new();
            let b = params.bind(&mut g, true);
            let xv = g.constant(x);
            let out = model.forward(
                &mut g,
                &b,
                xv,
                ForwardOptions {
                    detach_probs: detached,
                },
            )?;
            let w = if weighted {
                pixel_weights(&g, &out, &targets, &cfg.loss)?
            } else {
                Tensor::full(&[targets.n, 1, targets.h, targets.w], 1.0)
            };
            let (terms, breakdown) =
                total_loss_with_weights(&mut g, &out, &targets, &cfg.loss, &w, cfg.loss_options())?;
            if !breakdown.all_finite() {
                return Err(Error::NonFinite {
                    step,
                    breakdown: breakdown.to_string(),
                });
            }
            g.backward(terms.total)?;
            let mut grads = collect_grads(&g, &b, params)?;
            let grad_norm = clip_grad_norm(&mut grads, cfg.grad_clip);
            if !grad_norm.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    breakdown: format!("{breakdown} grad_norm={grad_norm}"),
                });
            }
            let factor = lr_factor(step, warmup, total_steps);
            opt.step(params, &grads, factor)?;
            if let Some(t) = &mut teacher {
                t.update(params, cfg.ema_tau)?;
            }
            sum_total += breakdown.total;
            steps.push(StepRecord {
                step,
                epoch,
                lr_factor: factor,
                grad_norm,
                loss: breakdown,
            });
            step += 1;
        }
        let valid = current.iter().map(|p| p.valid_count()).sum::<usize>() as f64
            / current.iter().map(|p| p.valid.len()).sum::<usize>().max(1) as f64;
        let record = EpochRecord {
            epoch,
            q,
            relabeled,
            detached,
            weighted,
            mean_total: sum_total / steps_per_epoch.max(1) as f64,
            valid_fraction: valid,
            pseudo_miou: pseudo_label_miou(&current, &gts, k)?,
        };
        log::info!(
            "epoch {epoch}: loss {:.4}, pseudo-label mIoU {:?}",
            record.mean_total,
            record.pseudo_miou
        );
        epochs.push(record);
    }
    Ok((teacher.map(|t| t.params), steps, epochs))
}

/// Per-step loss CSV.
pub fn steps_csv(steps: &[StepRecord]) -> String {
    let mut out =
        String::from("step,L_total,L_ce,L_dice,L_het,L_bnd,L_sdf,mean_w,valid_fraction\n");
    for s in steps {
        let l = &s.loss;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.step, l.total, l.ce, l.dice, l.het, l.bnd, l.sdf, l.mean_w, l.valid_fraction
        );
    }
    out
}

/// Per-epoch summary CSV.
pub fn epochs_csv(epochs: &[EpochRecord]) -> String {
    let mut out =
        String::from("epoch,q,relabeled,detached,weighted,mean_total,valid_fraction,pseudo_miou\n");
    for e in epochs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            e.epoch,
            e.q,
            e.relabeled,
            e.detached,
            e.weighted,
            e.mean_total,
            e.valid_fraction,
            e.pseudo_miou.map(|v| v.to_string()).unwrap_or_default()
        );
    }
    out
}
