use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::Context;
use crispdec::io::{ctsr, kv, pgm};
use crispdec::metrics::{evaluate, EvalOptions};
use crispdec::synthdata::dataset::{self, generate, DatasetSpec};
use crispdec::tensor::gradcheck::{run_suites, TOLERANCE};
use crispdec::wsss::experiment::{
    benchmark_datasets, predict_dataset, run_benchmark, score_predictions, waterfall_checks, Preset,
};
use crispdec::wsss::train::{epochs_csv, steps_csv};
use crispdec::wsss::{train as train_loop, Checkpoint, Components, TrainConfig};
use crispdec::{gradsuite, Tensor};

use crate::cli::{BenchArgs, EvalArgs, GenArgs, GradcheckArgs, MetricsArgs, TrainArgs};
use crate::error::CliError;
use crate::manifest::RunManifest;

type Result<T> = std::result::Result<T, CliError>;

/// Treat any library error as a data error, whatever its kind.
fn data<T>(r: crispdec::Result<T>, what: impl FnOnce() -> String) -> Result<T> {
    r.map_err(|e| CliError::Data(anyhow::Error::new(e).context(what())))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::Data)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(CliError::Data)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(CliError::Data)
}

fn is_nonempty_dir(path: &Path) -> bool {
    fs::read_dir(path)
        .map(|mut d| d.next().is_some())
        .unwrap_or(false)
}

/// Refuse to write into a non-empty directory unless forced; when forced,
/// clear it first so no stale files survive.
fn prepare_out(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !path.is_dir() {
        return Err(CliError::Usage(format!(
            "{} exists and is not a directory",
            path.display()
        )));
    }
    if is_nonempty_dir(path) {
        if !force {
            return Err(CliError::Usage(format!(
                "{} is not empty (use --force to replace it)",
                path.display()
            )));
        }
        fs::remove_dir_all(path)
            .with_context(|| format!("clearing {}", path.display()))
            .map_err(CliError::Data)?;
    }
    create_dir(path)
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, text.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .context("writing to standard output")
                .map_err(CliError::Data)
        }
    }
}

pub fn gen(a: GenArgs) -> Result<()> {
    let mut spec = DatasetSpec {
        count: a.count,
        ..DatasetSpec::default()
    };
    spec.scene.seed = a.seed;
    spec.scene.height = a.height;
    spec.scene.width = a.width;
    spec.scene.classes = a.classes;
    match &a.config {
        Some(path) => spec.apply_text(&read_text(path)?)?,
        None => spec.validate()?,
    }
    prepare_out(&a.out, a.force)?;
    let data_set = generate(&spec)?;
    let hash = data(dataset::export(&a.out, &data_set), || {
        format!("writing {}", a.out.display())
    })?;

    let k = spec.scene.classes;
    let mut gt_counts = vec![0usize; k];
    let mut agree = 0usize;
    let mut pixels = 0usize;
    for s in &data_set.samples {
        for (&g, &p) in s.gt.data().iter().zip(s.seed.data()) {
            gt_counts[g as usize] += 1;
            agree += usize::from(g == p);
            pixels += 1;
        }
    }
    println!("scenes: {}", data_set.samples.len());
    if pixels > 0 {
        let freq: Vec<String> = gt_counts
            .iter()
            .map(|&c| format!("{:.4}", c as f64 / pixels as f64))
            .collect();
        println!("class frequencies: {}", freq.join(" "));
        println!("seed pixel accuracy: {:.4}", agree as f64 / pixels as f64);
    }
    println!("dataset hash: {hash}");
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(p) = &a.preset {
        cfg.components = p.parse::<Preset>()?.components();
    }
    let c = cfg.components;
    cfg.components = Components {
        dmf: c.dmf && !a.no_dmf,
        ugr: c.ugr && !a.no_ugr,
        refiner: c.refiner && !a.no_refiner,
        bnd: c.bnd && !a.no_bnd,
        udmf: c.udmf && !a.no_udmf,
        ema: c.ema && !a.no_ema,
    };
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(path) = &a.config {
        cfg.apply_text(&read_text(path)?)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let (cfg, data_dir, expected_hash) = match &a.replay {
        Some(path) => {
            let m = RunManifest::parse(&read_text(path)?)
                .with_context(|| format!("parsing {}", path.display()))
                .map_err(CliError::Data)?;
            (m.config, m.data_dir, Some(m.dataset_hash))
        }
        None => {
            let dir = a
                .data
                .clone()
                .ok_or_else(|| CliError::Usage("--data is required".into()))?;
            (train_config(&a)?, dir, None)
        }
    };
    let hash = data(dataset::dataset_hash(&data_dir), || {
        format!("reading {}", data_dir.display())
    })?;
    if let Some(expected) = expected_hash {
        if expected != hash {
            return Err(CliError::Data(anyhow::anyhow!(
                "dataset hash {hash} differs from the recorded {expected}"
            )));
        }
    }
    let data_set = data(dataset::load(&data_dir), || {
        format!("loading {}", data_dir.display())
    })?;
    prepare_out(&a.out, a.force)?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        data_dir: data_dir.clone(),
        dataset_hash: hash,
        dataset_seed: data_set.spec.scene.seed,
        checkpoint: a.out.join("checkpoint"),
        teacher: cfg.components.ema.then(|| a.out.join("teacher")),
        steps_csv: a.out.join("steps.csv"),
        epochs_csv: a.out.join("epochs.csv"),
        config: cfg.clone(),
    };
    manifest.write(&a.out).map_err(CliError::Data)?;
    log::info!(
        "training {} epochs on {} images",
        cfg.epochs,
        data_set.samples.len()
    );

    let outcome = train_loop(&cfg, &data_set)?;
    let classes = data_set.spec.scene.classes;
    let save = |params, dir: &Path| {
        data(
            Checkpoint {
                config: cfg.clone(),
                classes,
                params,
            }
            .save(dir),
            || format!("writing {}", dir.display()),
        )
    };
    save(outcome.params, &manifest.checkpoint)?;
    if let (Some(t), Some(dir)) = (outcome.teacher, &manifest.teacher) {
        save(t, dir)?;
    }
    write_file(&manifest.steps_csv, steps_csv(&outcome.steps).as_bytes())?;
    write_file(&manifest.epochs_csv, epochs_csv(&outcome.epochs).as_bytes())?;
    if let Some(last) = outcome.epochs.last() {
        println!(
            "epoch {}: loss {:.4}, pseudo-label mIoU {}",
            last.epoch,
            last.mean_total,
            last.pseudo_miou
                .map_or("n/a".to_string(), |v| format!("{v:.4}"))
        );
    }
    println!("checkpoint: {}", manifest.checkpoint.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let ck = data(Checkpoint::load(&a.checkpoint), || {
        format!("loading {}", a.checkpoint.display())
    })?;
    let data_set = data(dataset::load(&a.data), || {
        format!("loading {}", a.data.display())
    })?;
    let (k, h, w) = (
        data_set.spec.scene.classes,
        data_set.spec.scene.height,
        data_set.spec.scene.width,
    );
    if k != ck.classes {
        return Err(CliError::Data(anyhow::anyhow!(
            "checkpoint was trained for {} classes, dataset has {k}",
            ck.classes
        )));
    }
    let preds = data(predict_dataset(&ck.config, &ck.params, &data_set), || {
        "predicting".into()
    })?;
    let report = data(score_predictions(&preds, &data_set), || "scoring".into())?;
    if let Some(dir) = &a.predictions {
        create_dir(dir)?;
        for (row, p) in report.rows.iter().zip(&preds) {
            let path = dir.join(&row.name);
            data(pgm::write(&path, &p.labels), || {
                format!("writing {}", path.display())
            })?;
        }
    }
    if let Some(dir) = &a.dump_confidence {
        create_dir(dir)?;
        for (row, p) in report.rows.iter().zip(&preds) {
            for (suffix, values) in [("", &p.confidence), (".u", &p.uncertainty)] {
                let stem = row.name.trim_end_matches(".pgm");
                let path = dir.join(format!("{stem}{suffix}.ctsr"));
                let t = data(Tensor::new(&[h, w], values.clone()), || {
                    "shaping a map".into()
                })?;
                data(ctsr::write(&path, &t), || {
                    format!("writing {}", path.display())
                })?;
            }
        }
    }
    write_or_print(a.out.as_deref(), &report.to_csv())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let mut suites = gradsuite::registry();
    if a.include_broken {
        suites.push(gradsuite::broken_suite());
    }
    let reports = run_suites(&suites).map_err(|e| CliError::Check(e.to_string()))?;
    let mut failed = Vec::new();
    for r in &reports {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{status:4} {:<28} worst rel. err {:.3e} ({} coords)",
            r.name, r.worst, r.coordinates
        );
        if !r.passed() {
            failed.push(r.name.clone());
        }
    }
    let worst = reports.iter().map(|r| r.worst).fold(0.0, f64::max);
    println!(
        "{} suites, worst rel. err {worst:.3e}, tolerance {TOLERANCE:e}",
        reports.len()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "gradient check failed: {}",
            failed.join(", ")
        )))
    }
}

pub fn metrics(a: MetricsArgs) -> Result<()> {
    let opts = EvalOptions {
        confidence_dir: a.confidence.clone(),
    };
    let report = data(evaluate(&a.pred, &a.gt, a.classes, &opts), || {
        "evaluating masks".into()
    })?;
    write_or_print(a.out.as_deref(), &report.to_csv())?;
    if report.error_count() > 0 {
        log::warn!("{} image(s) could not be scored", report.error_count());
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(what: &str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad {what} {v:?}")))
        })
        .collect()
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let presets: Vec<Preset> = a
        .presets
        .split(',')
        .map(|p| p.trim().parse::<Preset>())
        .collect::<crispdec::Result<_>>()?;
    let seeds: Vec<u64> = parse_list("seed", &a.seeds)?;
    let (train_set, eval_set) = benchmark_datasets()?;
    let results = run_benchmark(&presets, &seeds, &train_set, &eval_set, |p, s, r| {
        println!(
            "{p} seed {s}: miou {:.4} boundary_f1 {:.4} ece {:.4}",
            r.miou, r.boundary_f1, r.ece
        );
    })?;
    let mut pairs = Vec::new();
    for r in &results {
        let m = r.mean();
        println!(
            "{} mean: miou {:.4} boundary_f1 {:.4} ece {:.4}",
            r.preset, m.miou, m.boundary_f1, m.ece
        );
        for (s, run) in &r.runs {
            pairs.push((format!("{}.seed{s}.miou", r.preset), run.miou.to_string()));
            pairs.push((
                format!("{}.seed{s}.boundary_f1", r.preset),
                run.boundary_f1.to_string(),
            ));
            pairs.push((format!("{}.seed{s}.ece", r.preset), run.ece.to_string()));
        }
        pairs.push((format!("{}.miou", r.preset), m.miou.to_string()));
        pairs.push((
            format!("{}.boundary_f1", r.preset),
            m.boundary_f1.to_string(),
        ));
        pairs.push((format!("{}.ece", r.preset), m.ece.to_string()));
    }
    if let Some(out) = &a.out {
        write_file(
            out,
            kv::render(pairs.iter().map(|(k, v)| (k.as_str(), v.clone()))).as_bytes(),
        )?;
    }
    let all = presets.len() == Preset::ALL.len() && Preset::ALL.iter().all(|p| presets.contains(p));
    if !all {
        return Ok(());
    }
    let checks = waterfall_checks(&results, a.min_gain)?;
    for c in &checks {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "benchmark checks failed: {}",
            failed.join("; ")
        )))
    }
}
