//! Single-scale, single-pass inference on refined logits.

use rayon::prelude::*;

use crate::decoder::ForwardOptions;
use crate::error::Result;
use crate::labels::LabelMap;
use crate::losses::{entropy, minmax_per_image, mix_uncertainty, LossWeights};
use crate::model::Model;
use crate::params::ParamStore;
use crate::tensor::{kernels, Graph, Tensor};

/// Images per inference graph. Fixed so results never depend on how the
/// caller groups images.
pub const INFER_BATCH: usize = 8;

/// Per-image outputs at input resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub labels: LabelMap,
    /// Softmax probabilities, K×H×W.
    pub probs: Vec<f64>,
    /// Max-softmax confidence per pixel.
    pub confidence: Vec<f64>,
    /// Mixed, per-image normalised uncertainty per pixel; entropy alone when
    /// the model has no variance head.
    pub uncertainty: Vec<f64>,
}

/// Stack 3×H×W images into N×3×H×W.
pub fn stack_images(images: &[&Tensor]) -> Result<Tensor> {
    Tensor::stack(images)
}

fn predict_batch(
    model: &Model,
    params: &ParamStore,
    images: &[&Tensor],
    lw: &LossWeights,
) -> Result<Vec<Prediction>> {
    let x = stack_images(images)?;
    let (n, _, h, w) = x.dims4()?;
    let mut g = Graph::new();
    let b = params.bind(&mut g, false);
    let xv = g.constant(x);
    let out = model.forward(&mut g, &b, xv, ForwardOptions::default())?;
    let refined_up = kernels::upsample_bilinear(g.value(out.refined), h, w)?;
    let probs = kernels::softmax(&refined_up, 1)?;
    let unc = match out.u_ale {
        Some(u) => mix_uncertainty(g.value(u), &refined_up, lw.alpha, lw.beta)?.mixed,
        None => minmax_per_image(&entropy(&refined_up)?)?,
    };
    let k = model.classes();
    let hw = h * w;
    let mut preds = Vec::with_capacity(n);
    for i in 0..n {
        let p = &probs.data()[i * k * hw..(i + 1) * k * hw];
        let mut labels = vec![0u8; hw];
        let mut conf = vec![0.0; hw];
        for j in 0..hw {
            let mut best = 0;
            for c in 1..k {
                if p[c * hw + j] > p[best * hw + j] {
                    best = c;
                }
            }
            labels[j] = best as u8;
            conf[j] = p[best * hw + j];
        }
        preds.push(Prediction {
            labels: LabelMap::new(h, w, labels)?,
            probs: p.to_vec(),
            confidence: conf,
            uncertainty: unc.data()[i * hw..(i + 1) * hw].to_vec(),
        });
    }
    Ok(preds)
}

/// Predict every image, in order. Batches run on the rayon pool.
pub fn predict(
    model: &Model,
    params: &ParamStore,
    images: &[&Tensor],
    lw: &LossWeights,
) -> Result<Vec<Prediction>> {
    let chunks: Vec<Vec<Prediction>> = images
        .par_chunks(INFER_BATCH)
        .map(|chunk| predict_batch(model, params, chunk, lw))
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}
