//! Ablation presets and the train-then-evaluate harness.

use std::fmt;
use std::str::FromStr;

use super::config::{Components, TrainConfig};
use super::infer::{predict, Prediction};
use super::train::{train, TrainOutcome};
use crate::error::{Error, Result};
use crate::metrics::{EvalReport, ImageRow, MetricValues};
use crate::model::Model;
use crate::params::ParamStore;
use crate::synthdata::dataset::{generate, Dataset, DatasetSpec};
use crate::tensor::Tensor;

/// Named component sets of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    /// Static fusion baseline, nothing else.
    A0,
    /// Dynamic fusion only.
    A1,
    /// Everything except uncertainty-modulated fusion and the EMA teacher.
    A4,
    /// Everything.
    A6,
    /// Everything except the uncertainty branch (and with it modulated fusion).
    U0,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::A0, Preset::A1, Preset::A4, Preset::A6, Preset::U0];

    pub fn components(self) -> Components {
        let all = Components::ALL;
        match self {
            Preset::A0 => Components::NONE,
            Preset::A1 => Components {
                dmf: true,
                ..Components::NONE
            },
            Preset::A4 => Components {
                udmf: false,
                ema: false,
                ..all
            },
            Preset::A6 => all,
            Preset::U0 => Components {
                ugr: false,
                udmf: false,
                ..all
            },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown preset {s:?}")))
    }
}

/// Predictions of `params` under `cfg` for every sample of `data`, after
/// checking the parameters fit the configured model.
pub fn predict_dataset(
    cfg: &TrainConfig,
    params: &ParamStore,
    data: &Dataset,
) -> Result<Vec<Prediction>> {
    let model = Model::new(cfg.model_config(data.spec.scene.classes)?)?;
    model.init(0)?.check_same_manifest(params)?;
    let images: Vec<&Tensor> = data.samples.iter().map(|s| &s.image).collect();
    predict(&model, params, &images, &cfg.loss)
}

/// Score predictions against the samples they were made for. Rows are named
/// by sample index, as in the dataset layout.
pub fn score_predictions(preds: &[Prediction], data: &Dataset) -> Result<EvalReport> {
    if preds.len() != data.samples.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} samples",
            preds.len(),
            data.samples.len()
        )));
    }
    let k = data.spec.scene.classes;
    let rows = preds
        .iter()
        .zip(&data.samples)
        .enumerate()
        .map(|(i, (p, s))| {
            Ok(ImageRow {
                name: format!("{i:05}.pgm"),
                result: Ok(MetricValues::compute(
                    &p.labels,
                    &s.gt,
                    k,
                    Some(&p.confidence),
                )?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { classes: k, rows })
}

/// Score predictions of `params` on every sample of `eval`.
pub fn evaluate_params(
    cfg: &TrainConfig,
    params: &ParamStore,
    eval: &Dataset,
) -> Result<EvalReport> {
    score_predictions(&predict_dataset(cfg, params, eval)?, eval)
}

/// Aggregate scores of one trained configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunScores {
    pub miou: f64,
    pub boundary_f1: f64,
    pub ece: f64,
}

impl RunScores {
    pub fn from_report(r: &EvalReport) -> Result<Self> {
        let agg = r
            .aggregate()
            .ok_or_else(|| Error::invalid("evaluation produced no rows"))?;
        Ok(RunScores {
            miou: agg.miou.unwrap_or(0.0),
            boundary_f1: agg.boundary_f1,
            ece: agg.ece.unwrap_or(0.0),
        })
    }
}

/// Train `cfg` on `train_set` and score it on `eval_set`.
pub fn run(
    cfg: &TrainConfig,
    train_set: &Dataset,
    eval_set: &Dataset,
) -> Result<(TrainOutcome, RunScores)> {
    let outcome = train(cfg, train_set)?;
    let report = evaluate_params(cfg, &outcome.params, eval_set)?;
    let scores = RunScores::from_report(&report)?;
    Ok((outcome, scores))
}

/// Train and eval scene counts of the desk benchmark.
pub const BENCH_TRAIN: usize = 500;
pub const BENCH_EVAL: usize = 100;
/// Generator seeds of the benchmark's train and eval splits.
pub const BENCH_TRAIN_SEED: u64 = 1;
pub const BENCH_EVAL_SEED: u64 = 2;
/// Initialisation seeds averaged per preset.
pub const BENCH_SEEDS: [u64; 3] = [0, 1, 2];

/// The frozen train and eval splits: 64×64 scenes, four classes, default
/// seed corruption.
pub fn benchmark_datasets() -> Result<(Dataset, Dataset)> {
    let split = |count, seed| {
        let mut spec = DatasetSpec {
            count,
            ..DatasetSpec::default()
        };
        spec.scene.seed = seed;
        generate(&spec)
    };
    Ok((
        split(BENCH_TRAIN, BENCH_TRAIN_SEED)?,
        split(BENCH_EVAL, BENCH_EVAL_SEED)?,
    ))
}

/// Training recipe shared by every preset of the benchmark.
///
/// The encoder is trained from scratch, so it runs at the full learning rate,
/// and the schedule is compressed to a few thousand steps: a larger step
/// size, an EMA horizon of about a hundred steps, and relabeling from epoch
/// 10 on.
pub fn benchmark_config(preset: Preset, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 16,
        lr: 2e-3,
        lr_encoder_scale: 1.0,
        ema_tau: 0.99,
        relabel_start_epoch: 10,
        relabel_period: 3,
        seed,
        components: preset.components(),
        ..TrainConfig::default()
    }
}

/// Scores of one preset over several initialisation seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct PresetScores {
    pub preset: Preset,
    pub runs: Vec<(u64, RunScores)>,
}

impl PresetScores {
    pub fn mean(&self) -> RunScores {
        let n = self.runs.len().max(1) as f64;
        let sum = |f: fn(&RunScores) -> f64| self.runs.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
        RunScores {
            miou: sum(|r| r.miou),
            boundary_f1: sum(|r| r.boundary_f1),
            ece: sum(|r| r.ece),
        }
    }
}

/// Run every preset over `seeds` with [`benchmark_config`], reporting each
/// finished run to `progress`.
pub fn run_benchmark(
    presets: &[Preset],
    seeds: &[u64],
    train_set: &Dataset,
    eval_set: &Dataset,
    mut progress: impl FnMut(Preset, u64, &RunScores),
) -> Result<Vec<PresetScores>> {
    presets
        .iter()
        .map(|&preset| {
            let mut runs = Vec::with_capacity(seeds.len());
            for &seed in seeds {
                let (_, scores) = run(&benchmark_config(preset, seed), train_set, eval_set)?;
                progress(preset, seed, &scores);
                runs.push((seed, scores));
            }
            Ok(PresetScores { preset, runs })
        })
        .collect()
}

/// One directional comparison of the ablation table.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Waterfall and calibration comparisons over preset means: mIoU and
/// boundary F1 non-decreasing along A0, A1, A4, A6; an A6 − A0 mIoU gain of
/// at least `min_gain`; A6 boundary F1 above A0; A6 ECE at most U0's.
pub fn waterfall_checks(results: &[PresetScores], min_gain: f64) -> Result<Vec<Check>> {
    let get = |p: Preset| {
        results
            .iter()
            .find(|r| r.preset == p)
            .map(PresetScores::mean)
            .ok_or_else(|| Error::invalid(format!("benchmark has no {p} results")))
    };
    let chain = [Preset::A0, Preset::A1, Preset::A4, Preset::A6];
    let means = chain.iter().map(|&p| get(p)).collect::<Result<Vec<_>>>()?;
    let ordered = |f: fn(&RunScores) -> f64| means.windows(2).all(|w| f(&w[0]) <= f(&w[1]));
    let list = |f: fn(&RunScores) -> f64| {
        chain
            .iter()
            .zip(&means)
            .map(|(p, m)| format!("{p}={:.4}", f(m)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let (a0, a6) = (&means[0], &means[3]);
    let u0 = get(Preset::U0)?;
    Ok(vec![
        Check {
            name: "miou A0 <= A1 <= A4 <= A6".into(),
            passed: ordered(|r| r.miou),
            detail: list(|r| r.miou),
        },
        Check {
            name: "boundary F1 A0 <= A1 <= A4 <= A6".into(),
            passed: ordered(|r| r.boundary_f1),
            detail: list(|r| r.boundary_f1),
        },
        Check {
            name: format!("miou gain A6 - A0 >= {min_gain}"),
            passed: a6.miou - a0.miou >= min_gain,
            detail: format!("gain {:.4}", a6.miou - a0.miou),
        },
        Check {
            name: "boundary F1 A6 > A0".into(),
            passed: a6.boundary_f1 > a0.boundary_f1,
            detail: format!("A6={:.4} A0={:.4}", a6.boundary_f1, a0.boundary_f1),
        },
        Check {
            name: "ECE A6 <= U0".into(),
            passed: a6.ece <= u0.ece,
            detail: format!("A6={:.4} U0={:.4}", a6.ece, u0.ece),
        },
    ])
}
