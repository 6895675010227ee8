//! Registry of finite-difference checks covering every differentiable
//! primitive, every loss term, and the decoder and encoder end to end.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decoder::{Decoder, DecoderConfig, EdgeTap, ForwardOptions, Mode};
use crate::error::Result;
use crate::labels::{LabelMap, PseudoLabel, IGNORE};
use crate::losses::{self, LossOptions, LossWeights, Targets};
use crate::model::{Model, ModelConfig};
use crate::params::{Bindings, ParamStore};
use crate::synthdata::encoder::EncoderConfig;
use crate::tensor::gradcheck::{check_gradient, GradReport, GradSuite};
use crate::tensor::{Graph, Tensor, Unary, Var};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(shape: &[usize], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| r.gen_range(lo..hi))
}

/// Values with magnitude in [0.1, 1] and random sign, clear of kinks at 0.
fn off_zero(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = r.gen_range(0.1..1.0);
        if r.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Reduce a map to a scalar with fixed random coefficients so that every
/// output coordinate carries a distinct weight.
fn project(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let mut r = rng(seed);
    let coef = uniform(g.shape(x), 0.5, 1.5, &mut r);
    let y = g.mul_const(x, &coef)?;
    Ok(g.sum(y))
}

fn unary_suite(kind: Unary, name: &str) -> Result<GradReport> {
    let mut r = rng(11);
    let x = match kind {
        Unary::Log => uniform(&[2, 3, 4], 0.5, 2.0, &mut r),
        _ => off_zero(&[2, 3, 4], &mut r),
    };
    check_gradient(name, &[x], |g, v| {
        let y = g.unary(v[0], kind)?;
        project(g, y, 1)
    })
}

fn binary_suite(name: &str, op: fn(&mut Graph, Var, Var) -> Result<Var>) -> Result<GradReport> {
    let mut r = rng(12);
    let a = off_zero(&[3, 5], &mut r);
    let b = off_zero(&[3, 5], &mut r);
    check_gradient(name, &[a, b], |g, v| {
        let y = op(g, v[0], v[1])?;
        project(g, y, 2)
    })
}

fn conv_suite(name: &str, k: usize, stride: usize) -> Result<GradReport> {
    let mut r = rng(13 + k as u64 + stride as u64);
    let x = uniform(&[2, 3, 6, 6], -1.0, 1.0, &mut r);
    let w = uniform(&[4, 3, k, k], -1.0, 1.0, &mut r);
    let b = uniform(&[4], -1.0, 1.0, &mut r);
    check_gradient(name, &[x, w, b], |g, v| {
        let y = g.conv2d(v[0], v[1], Some(v[2]), stride, k / 2)?;
        project(g, y, 3)
    })
}

fn structural_suites() -> Vec<GradSuite> {
    vec![
        GradSuite {
            name: "upsample_bilinear",
            run: || {
                let x = uniform(&[2, 2, 3, 2], -1.0, 1.0, &mut rng(14));
                check_gradient("upsample_bilinear", &[x], |g, v| {
                    let y = g.upsample_bilinear(v[0], 7, 8)?;
                    project(g, y, 4)
                })
            },
        },
        GradSuite {
            name: "layer_norm",
            run: || {
                let mut r = rng(15);
                let x = uniform(&[2, 3, 3, 3], -1.0, 1.0, &mut r);
                let gain = uniform(&[3], 0.5, 1.5, &mut r);
                let shift = uniform(&[3], -0.5, 0.5, &mut r);
                check_gradient("layer_norm", &[x, gain, shift], |g, v| {
                    let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
                    project(g, y, 5)
                })
            },
        },
        GradSuite {
            name: "softmax",
            run: || {
                let x = uniform(&[2, 4, 3], -2.0, 2.0, &mut rng(16));
                check_gradient("softmax", &[x], |g, v| {
                    let y = g.softmax(v[0], 1)?;
                    project(g, y, 6)
                })
            },
        },
        GradSuite {
            name: "log_softmax",
            run: || {
                let x = uniform(&[2, 4, 3], -2.0, 2.0, &mut rng(17));
                check_gradient("log_softmax", &[x], |g, v| {
                    let y = g.log_softmax(v[0], 2)?;
                    project(g, y, 7)
                })
            },
        },
        GradSuite {
            name: "scale_and_shift",
            run: || {
                let x = uniform(&[5], -1.0, 1.0, &mut rng(18));
                check_gradient("scale_and_shift", &[x], |g, v| {
                    let y = g.scale(v[0], -1.7);
                    let y = g.add_scalar(y, 0.3);
                    project(g, y, 8)
                })
            },
        },
        GradSuite {
            name: "concat_slice_expand",
            run: || {
                let mut r = rng(19);
                let a = uniform(&[2, 1, 2, 3], -1.0, 1.0, &mut r);
                let b = uniform(&[2, 2, 2, 3], -1.0, 1.0, &mut r);
                check_gradient("concat_slice_expand", &[a, b], |g, v| {
                    let e = g.expand(v[0], 1, 3)?;
                    let c = g.concat(&[e, v[1]], 1)?;
                    let s = g.slice(c, 1, 1, 3)?;
                    project(g, s, 9)
                })
            },
        },
        GradSuite {
            name: "sum_axis",
            run: || {
                let x = uniform(&[2, 3, 4], -1.0, 1.0, &mut rng(20));
                check_gradient("sum_axis", &[x], |g, v| {
                    let y = g.sum_axis(v[0], 1)?;
                    project(g, y, 10)
                })
            },
        },
        GradSuite {
            name: "pick",
            run: || {
                let x = uniform(&[2, 3, 2, 2], -1.0, 1.0, &mut rng(21));
                let labels = [
                    Some(0),
                    Some(2),
                    None,
                    Some(1),
                    Some(1),
                    None,
                    Some(0),
                    Some(2),
                ];
                check_gradient("pick", &[x], |g, v| {
                    let y = g.pick(v[0], &labels)?;
                    project(g, y, 11)
                })
            },
        },
        GradSuite {
            name: "diff",
            run: || {
                let x = uniform(&[1, 2, 4, 5], -1.0, 1.0, &mut rng(22));
                check_gradient("diff", &[x], |g, v| {
                    let a = g.diff(v[0], 2)?;
                    let b = g.diff(v[0], 3)?;
                    let s = g.add(a, b)?;
                    project(g, s, 12)
                })
            },
        },
    ]
}

/// Random labels with a block structure, some IGNORE and some masked.
pub fn micro_labels(n: usize, h: usize, w: usize, k: usize, seed: u64) -> Vec<PseudoLabel> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let split_y = r.gen_range(1..h);
            let split_x = r.gen_range(1..w);
            let labels = LabelMap::from_fn(h, w, |y, x| {
                if r.gen_bool(0.05) {
                    IGNORE
                } else {
                    (((y >= split_y) as usize + 2 * (x >= split_x) as usize) % k) as u8
                }
            });
            let valid = labels
                .data()
                .iter()
                .map(|&l| l != IGNORE && r.gen_bool(0.85))
                .collect();
            PseudoLabel::new(labels, valid, vec![0.0; h * w]).expect("consistent")
        })
        .collect()
}

fn loss_suites() -> Vec<GradSuite> {
    vec![
        GradSuite {
            name: "masked_ce",
            run: || {
                let mut r = rng(30);
                let t = Targets::new(&micro_labels(2, 3, 3, 3, 31))?;
                let z = uniform(&[2, 3, 3, 3], -2.0, 2.0, &mut r);
                let w = uniform(&[2, 1, 3, 3], 0.2, 1.0, &mut r);
                check_gradient("masked_ce", &[z], |g, v| losses::masked_ce(g, v[0], &t, &w))
            },
        },
        GradSuite {
            name: "masked_dice",
            run: || {
                let mut r = rng(32);
                let t = Targets::new(&micro_labels(2, 5, 5, 3, 33))?;
                let z = uniform(&[2, 3, 5, 5], -2.0, 2.0, &mut r);
                let w = uniform(&[2, 1, 5, 5], 0.2, 1.0, &mut r);
                check_gradient("masked_dice", &[z], |g, v| {
                    losses::masked_dice(g, v[0], &t, &w)
                })
            },
        },
        GradSuite {
            name: "heteroscedastic",
            run: || {
                let mut r = rng(34);
                let t = Targets::new(&micro_labels(2, 4, 4, 3, 35))?;
                let z = uniform(&[2, 3, 4, 4], -2.0, 2.0, &mut r);
                let s2 = uniform(&[2, 1, 4, 4], 0.3, 2.0, &mut r);
                check_gradient("heteroscedastic", &[z, s2], |g, v| {
                    losses::heteroscedastic_loss(g, v[0], &t, v[1])
                })
            },
        },
        GradSuite {
            name: "boundary_loss",
            run: || {
                let mut r = rng(36);
                let t = Targets::new(&micro_labels(2, 6, 6, 3, 37))?;
                let e = uniform(&[2, 1, 6, 6], -2.0, 2.0, &mut r);
                check_gradient("boundary_loss", &[e], |g, v| {
                    losses::boundary_loss(g, v[0], &t.band, None)
                })
            },
        },
        GradSuite {
            name: "sdf_loss",
            run: || {
                // The distance map is a constant of the loss; random weights
                // stand in for it so that no two signed terms cancel exactly,
                // which would leave finite differences with rounding noise only.
                let mut r = rng(38);
                let p = uniform(&[2, 3, 6, 6], 0.0, 1.0, &mut r);
                let phi = uniform(&[2, 1, 6, 6], 0.5, 2.0, &mut r);
                check_gradient("sdf_loss", &[p], |g, v| losses::sdf_loss(g, v[0], &phi))
            },
        },
    ]
}

/// Micro decoder with every parameter drawn at random so that no path is
/// switched off by a zero initialisation.
pub fn micro_decoder_config() -> DecoderConfig {
    DecoderConfig {
        in_channels: [2, 3, 4, 5],
        width: 4,
        classes: 3,
        edge_hidden: 2,
        edge_tap: EdgeTap::Finest,
        mode: Mode::UncertaintyModulated,
        alpha: 0.7,
        ..DecoderConfig::default()
    }
}

pub fn randomized_params(dec: &Decoder, seed: u64) -> Result<ParamStore> {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    dec.init_params(&mut store, &mut r)?;
    for (_, p) in store.iter_mut() {
        p.value = uniform(p.value.shape(), -0.6, 0.6, &mut r);
    }
    Ok(store)
}

fn micro_pyramid(cfg: &DecoderConfig, n: usize, side: usize, seed: u64) -> Vec<Tensor> {
    let mut r = rng(seed);
    (0..4)
        .map(|i| {
            uniform(
                &[n, cfg.in_channels[i], side >> i, side >> i],
                -1.0,
                1.0,
                &mut r,
            )
        })
        .collect()
}

/// Inputs: parameters followed by the four pyramid levels.
fn decoder_check(
    name: &str,
    dec: &Decoder,
    store: &ParamStore,
    pyramid: Vec<Tensor>,
    reduce: &dyn Fn(&mut Graph, &crate::decoder::DecoderOutputs) -> Result<Var>,
) -> Result<GradReport> {
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    let mut inputs: Vec<Tensor> = store.iter().map(|(_, p)| p.value.clone()).collect();
    let np = inputs.len();
    inputs.extend(pyramid);
    check_gradient(name, &inputs, |g, v| {
        let b = Bindings::from_vars(names.iter().map(|s| s.as_str()), &v[..np])?;
        let pyr = [v[np], v[np + 1], v[np + 2], v[np + 3]];
        let out = dec.forward(g, &b, &pyr, ForwardOptions::default())?;
        reduce(g, &out)
    })
}

fn model_suites() -> Vec<GradSuite> {
    vec![
        GradSuite {
            name: "decoder_sum_refined",
            run: || {
                let cfg = micro_decoder_config();
                let dec = Decoder::new(cfg.clone())?;
                let store = randomized_params(&dec, 40)?;
                decoder_check(
                    "decoder_sum_refined",
                    &dec,
                    &store,
                    micro_pyramid(&cfg, 1, 8, 41),
                    &|g, out| Ok(g.sum(out.refined)),
                )
            },
        },
        GradSuite {
            name: "decoder_reliability_variant",
            run: || {
                let cfg = DecoderConfig {
                    reliability: Some([1.0, 0.6, 0.3, 0.1]),
                    edge_tap: EdgeTap::Fused,
                    ..micro_decoder_config()
                };
                let dec = Decoder::new(cfg.clone())?;
                let store = randomized_params(&dec, 42)?;
                decoder_check(
                    "decoder_reliability_variant",
                    &dec,
                    &store,
                    micro_pyramid(&cfg, 1, 8, 43),
                    &|g, out| {
                        let a = project(g, out.refined, 44)?;
                        let b = project(g, out.edge.expect("boundary head on"), 45)?;
                        g.add(a, b)
                    },
                )
            },
        },
        GradSuite {
            name: "total_loss",
            run: || {
                let cfg = micro_decoder_config();
                let dec = Decoder::new(cfg.clone())?;
                let store = randomized_params(&dec, 46)?;
                let t = Targets::new(&micro_labels(2, 32, 32, cfg.classes, 47))?;
                let lw = LossWeights::default();
                // Weights are taken from a reference evaluation and held fixed.
                let w = {
                    let mut g = Graph::new();
                    let b = store.bind(&mut g, false);
                    let pyr: Vec<Var> = micro_pyramid(&cfg, 2, 8, 48)
                        .into_iter()
                        .map(|p| g.constant(p))
                        .collect();
                    let out = dec.forward(
                        &mut g,
                        &b,
                        &[pyr[0], pyr[1], pyr[2], pyr[3]],
                        ForwardOptions::default(),
                    )?;
                    losses::pixel_weights(&g, &out, &t, &lw)?
                };
                decoder_check(
                    "total_loss",
                    &dec,
                    &store,
                    micro_pyramid(&cfg, 2, 8, 48),
                    &|g, out| {
                        let (terms, _) = losses::total_loss_with_weights(
                            g,
                            out,
                            &t,
                            &lw,
                            &w,
                            LossOptions::default(),
                        )?;
                        Ok(terms.total)
                    },
                )
            },
        },
        GradSuite {
            name: "encoder_decoder",
            run: || {
                let cfg = ModelConfig {
                    encoder: EncoderConfig {
                        in_channels: 3,
                        stem: 2,
                        channels: [2, 3, 4, 5],
                    },
                    decoder: micro_decoder_config(),
                };
                let model = Model::new(cfg)?;
                let mut r = rng(50);
                let store = model.init(51)?;
                let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
                let mut inputs: Vec<Tensor> = store
                    .iter()
                    .map(|(_, p)| uniform(p.value.shape(), -0.6, 0.6, &mut r))
                    .collect();
                let np = inputs.len();
                inputs.push(uniform(&[1, 3, 32, 32], 0.0, 1.0, &mut r));
                check_gradient("encoder_decoder", &inputs, |g, v| {
                    let b = Bindings::from_vars(names.iter().map(|s| s.as_str()), &v[..np])?;
                    let out = model.forward(g, &b, v[np], ForwardOptions::default())?;
                    project(g, out.refined, 52)
                })
            },
        },
    ]
}

/// Every registered gradient check, primitives first.
pub fn registry() -> Vec<GradSuite> {
    let mut suites = vec![
        GradSuite {
            name: "conv2d_3x3",
            run: || conv_suite("conv2d_3x3", 3, 1),
        },
        GradSuite {
            name: "conv2d_3x3_stride2",
            run: || conv_suite("conv2d_3x3_stride2", 3, 2),
        },
        GradSuite {
            name: "conv2d_1x1",
            run: || conv_suite("conv2d_1x1", 1, 1),
        },
        GradSuite {
            name: "softplus",
            run: || unary_suite(Unary::Softplus, "softplus"),
        },
        GradSuite {
            name: "sigmoid",
            run: || unary_suite(Unary::Sigmoid, "sigmoid"),
        },
        GradSuite {
            name: "exp",
            run: || unary_suite(Unary::Exp, "exp"),
        },
        GradSuite {
            name: "log",
            run: || unary_suite(Unary::Log, "log"),
        },
        GradSuite {
            name: "relu",
            run: || unary_suite(Unary::Relu, "relu"),
        },
        GradSuite {
            name: "neg",
            run: || unary_suite(Unary::Neg, "neg"),
        },
        GradSuite {
            name: "abs",
            run: || unary_suite(Unary::Abs, "abs"),
        },
        GradSuite {
            name: "add",
            run: || binary_suite("add", Graph::add),
        },
        GradSuite {
            name: "sub",
            run: || binary_suite("sub", Graph::sub),
        },
        GradSuite {
            name: "mul",
            run: || binary_suite("mul", Graph::mul),
        },
        GradSuite {
            name: "div",
            run: || binary_suite("div", Graph::div),
        },
    ];
    suites.extend(structural_suites());
    suites.extend(loss_suites());
    suites.extend(model_suites());
    suites
}

/// Deliberately wrong gradient: the second factor of x⊙x is detached, so
/// backward reports x where the true derivative is 2x.
pub fn broken_suite() -> GradSuite {
    GradSuite {
        name: "broken_square",
        run: || {
            let x = off_zero(&[4], &mut rng(60));
            check_gradient("broken_square", &[x], |g, v| {
                let d = g.detach(v[0]);
                let y = g.mul(v[0], d)?;
                Ok(g.sum(y))
            })
        },
    }
}
