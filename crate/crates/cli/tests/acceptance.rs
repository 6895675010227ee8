//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 7 and 8 rerun the full desk benchmark (about 20 minutes). Their
//! verdicts are always computed at the stated thresholds; the run only fails
//! on them when they differ from the pinned calibration in
//! `fixtures/waterfall.txt`, unless `CRISPDEC_ACCEPTANCE_STRICT=1`, in which
//! case any FAIL line fails the run. `CRISPDEC_ACCEPTANCE_SKIP_BENCH=1` skips
//! criteria 7 and 8.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use crispdec::decoder::{Decoder, DecoderConfig, ForwardOptions, Mode};
use crispdec::gradsuite::registry;
use crispdec::io::kv;
use crispdec::losses::{heteroscedastic_loss, masked_ce, mix_uncertainty, LossWeights, Targets};
use crispdec::metrics::{
    boundary_f1, compactness, ece, edge_regularity, miou, tv_smoothness, CURVATURE_THRESHOLD,
};
use crispdec::params::{Group, Kind, Role};
use crispdec::tensor::gradcheck::{run_suites, TOLERANCE};
use crispdec::wsss::experiment::{
    benchmark_datasets, run_benchmark, waterfall_checks, Preset, BENCH_SEEDS,
};
use crispdec::wsss::{anneal_q, build_ignore_mask, ema_update, relabel, TrainConfig};
use crispdec::{Graph, LabelMap, ParamStore, PseudoLabel, Tensor, Var, IGNORE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------- 1. gradients ----------

fn gradients() -> Outcome {
    let start = Instant::now();
    let reports = run_suites(&registry()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let worst = reports.iter().map(|r| r.worst).fold(0.0, f64::max);
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.as_str())
        .collect();
    ensure(failed.is_empty(), || format!("failed suites: {failed:?}"))?;
    ensure(worst < TOLERANCE, || {
        format!("worst relative error {worst:.3e}")
    })?;
    ensure(elapsed < Duration::from_secs(120), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "{} suites, worst rel err {worst:.2e}, {:.1}s",
        reports.len(),
        elapsed.as_secs_f64()
    ))
}

// ---------- 2 and 3. fusion and refiner ----------

const CH: [usize; 4] = [2, 3, 2, 3];

fn micro_config(mode: Mode, alpha: f64) -> DecoderConfig {
    DecoderConfig {
        in_channels: CH,
        width: 3,
        classes: 3,
        edge_hidden: 2,
        mode,
        alpha,
        ..DecoderConfig::default()
    }
}

fn init(dec: &Decoder, rng: &mut ChaCha8Rng) -> ParamStore {
    let mut store = ParamStore::new();
    dec.init_params(&mut store, rng).unwrap();
    store
}

fn randomize(store: &mut ParamStore, prefix: &str, rng: &mut ChaCha8Rng, scale: f64) {
    for (name, p) in store.iter_mut() {
        if name.starts_with(prefix) {
            for v in p.value.data_mut() {
                *v = rng.gen_range(-scale..scale);
            }
        }
    }
}

fn pyramid(g: &mut Graph, n: usize, side: usize, rng: &mut ChaCha8Rng) -> [Var; 4] {
    std::array::from_fn(|i| {
        let s = side >> i;
        g.constant(Tensor::from_fn(&[n, CH[i], s, s], |_| {
            rng.gen_range(-2.0..2.0)
        }))
    })
}

fn fusion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let plain = Decoder::new(micro_config(Mode::Plain, 1.0)).unwrap();
    let mut worst_sum = 0.0f64;
    for trial in 0..1000 {
        let mut store = init(&plain, &mut rng);
        randomize(&mut store, "dec.score", &mut rng, 3.0);
        let mut g = Graph::new();
        let b = store.bind(&mut g, false);
        let pyr = pyramid(&mut g, 1, 8, &mut rng);
        let e = plain.project_and_upsample(&mut g, &b, &pyr).unwrap();
        let (fused, weights) = plain.dmf_fuse(&mut g, &b, &e, None).unwrap();
        let (wt, f) = (g.value(weights), g.value(fused));
        let (_, _, h, w) = wt.dims4().unwrap();
        let width = f.dims4().unwrap().1;
        for y in 0..h {
            for x in 0..w {
                let ws: Vec<f64> = (0..4).map(|k| wt.at4(0, k, y, x)).collect();
                worst_sum = worst_sum.max((ws.iter().sum::<f64>() - 1.0).abs());
                ensure(ws.iter().all(|&v| v >= 0.0), || {
                    format!("trial {trial}: negative weight")
                })?;
                for c in 0..width {
                    let vals: Vec<f64> = e.iter().map(|&v| g.value(v).at4(0, c, y, x)).collect();
                    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let v = f.at4(0, c, y, x);
                    ensure(v >= lo - 1e-9 && v <= hi + 1e-9, || {
                        format!("trial {trial}: fused {v} outside [{lo}, {hi}]")
                    })?;
                }
            }
        }
    }
    ensure(worst_sum <= 1e-5, || {
        format!("weights sum off by {worst_sum:e}")
    })?;

    for _ in 0..20 {
        let store = init(&plain, &mut rng);
        let mut g = Graph::new();
        let b = store.bind(&mut g, false);
        let pyr = pyramid(&mut g, 2, 8, &mut rng);
        let e = plain.project_and_upsample(&mut g, &b, &pyr).unwrap();
        let (_, weights) = plain.dmf_fuse(&mut g, &b, &e, None).unwrap();
        ensure(g.value(weights).data().iter().all(|&v| v == 0.25), || {
            "zero scores do not give 0.25".into()
        })?;
    }

    let modulated = Decoder::new(micro_config(Mode::UncertaintyModulated, 0.0)).unwrap();
    for _ in 0..100 {
        let mut store = init(&modulated, &mut rng);
        randomize(&mut store, "dec.score", &mut rng, 3.0);
        let mut g = Graph::new();
        let b = store.bind(&mut g, false);
        let pyr = pyramid(&mut g, 1, 8, &mut rng);
        let e = modulated.project_and_upsample(&mut g, &b, &pyr).unwrap();
        let u = g.constant(Tensor::from_fn(&[1, 1, 8, 8], |_| rng.gen_range(0.0..5.0)));
        let (f0, w0) = modulated.dmf_fuse(&mut g, &b, &e, None).unwrap();
        let (f1, w1) = modulated.dmf_fuse(&mut g, &b, &e, Some(u)).unwrap();
        ensure(g.value(w0).data() == g.value(w1).data(), || {
            "α=0 changed weights".into()
        })?;
        ensure(g.value(f0).data() == g.value(f1).data(), || {
            "α=0 changed fused features".into()
        })?;
    }
    Ok(format!(
        "1000 random inputs, max |Σw − 1| = {worst_sum:.1e}"
    ))
}

fn seg_grad_through_correction(detach: bool, seed: u64) -> Tensor {
    let dec = Decoder::new(micro_config(Mode::Plain, 1.0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = init(&dec, &mut rng);
    randomize(&mut store, "dec.refine2", &mut rng, 2.0);
    let mut g = Graph::new();
    let b = store.bind(&mut g, true);
    let pyr = pyramid(&mut g, 1, 8, &mut rng);
    let out = dec
        .forward(
            &mut g,
            &b,
            &pyr,
            ForwardOptions {
                detach_probs: detach,
            },
        )
        .unwrap();
    let corr = g.sub(out.refined, out.logits).unwrap();
    let loss = g.sum(corr);
    g.backward(loss).unwrap();
    g.grad(b.get("dec.seg.w").unwrap())
        .unwrap_or_else(|| Tensor::zeros(store.get("dec.seg.w").unwrap().shape()))
}

fn refiner() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for mode in [Mode::Plain, Mode::UncertaintyModulated] {
        let dec = Decoder::new(micro_config(mode, 1.0)).unwrap();
        for _ in 0..50 {
            let mut store = init(&dec, &mut rng);
            randomize(&mut store, "dec.refine2", &mut rng, 2.0);
            store.get_mut("dec.gate.b").unwrap().data_mut().fill(-40.0);
            store.get_mut("dec.gate.w").unwrap().data_mut().fill(0.0);
            let mut g = Graph::new();
            let b = store.bind(&mut g, false);
            let pyr = pyramid(&mut g, 2, 8, &mut rng);
            let out = dec
                .forward(&mut g, &b, &pyr, ForwardOptions::default())
                .unwrap();
            for (z, r) in g
                .value(out.logits)
                .data()
                .iter()
                .zip(g.value(out.refined).data())
            {
                worst = worst.max((z - r).abs());
            }
        }
    }
    ensure(worst <= 1e-6, || {
        format!("closed gate moved logits by {worst:e}")
    })?;
    for seed in 0..10 {
        let detached = seg_grad_through_correction(true, seed);
        ensure(detached.data().iter().all(|&v| v == 0.0), || {
            format!("seed {seed}: nonzero gradient through detached probabilities")
        })?;
        let attached = seg_grad_through_correction(false, seed);
        ensure(attached.data().iter().any(|&v| v != 0.0), || {
            format!("seed {seed}: attached probabilities carry no gradient")
        })?;
    }
    let detach_epochs = TrainConfig::default().detach_epochs;
    ensure(detach_epochs == 3, || {
        format!("default detach epochs {detach_epochs}")
    })?;
    Ok(format!(
        "closed gate |Z*−Z| ≤ {worst:.1e}; detached gradient exactly 0"
    ))
}

// ---------- 4. loss closed forms ----------

fn labels(h: usize, w: usize, data: Vec<u8>) -> Targets {
    let map = LabelMap::new(h, w, data).unwrap();
    let valid = map.data().iter().map(|&v| v != IGNORE).collect();
    Targets::new(&[PseudoLabel::new(map, valid, vec![0.0; h * w]).unwrap()]).unwrap()
}

fn losses() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (h, w) = (5, 4);
    let mut worst = 0.0f64;
    for k in 2..9 {
        let data: Vec<u8> = (0..h * w)
            .map(|i| if i % 7 == 3 { IGNORE } else { (i % k) as u8 })
            .collect();
        let t = labels(h, w, data);
        let ones = Tensor::full(&[1, 1, h, w], 1.0);
        let mut g = Graph::new();
        let uniform = g.constant(Tensor::full(&[1, k, h, w], rng.gen_range(-3.0..3.0)));
        let ce = masked_ce(&mut g, uniform, &t, &ones).unwrap();
        worst = worst.max((g.value(ce).item().unwrap() - (k as f64).ln()).abs());

        let logits = g.constant(Tensor::from_fn(&[1, k, h, w], |_| rng.gen_range(-3.0..3.0)));
        let unit = g.constant(Tensor::full(&[1, 1, h, w], 1.0));
        let ce = masked_ce(&mut g, logits, &t, &ones).unwrap();
        let het = heteroscedastic_loss(&mut g, logits, &t, unit).unwrap();
        let (ce, het) = (g.value(ce).item().unwrap(), g.value(het).item().unwrap());
        worst = worst.max((het - 0.5 * ce).abs());
    }
    let beta = LossWeights::default().beta;
    ensure(beta == 2.0, || format!("default β is {beta}"))?;
    // The last pixel carries the largest variance and uniform logits, so its
    // normalised uncertainty is 1.
    let u = Tensor::new(&[1, 1, 1, 3], vec![0.1, 0.2, 0.9]).unwrap();
    let logits = Tensor::new(&[1, 2, 1, 3], vec![5.0, 2.0, 0.0, -5.0, -1.0, 0.0]).unwrap();
    for alpha in [0.0, 0.5, 1.0] {
        let m = mix_uncertainty(&u, &logits, alpha, beta).unwrap();
        worst = worst.max((m.mixed.data()[2] - 1.0).abs());
        worst = worst.max((m.weights.data()[2] - (-beta).exp()).abs());
    }
    ensure(worst < 1e-9, || format!("closed forms off by {worst:e}"))?;
    Ok(format!(
        "CE = ln K, het = ½CE, w = e^-2; max error {worst:.1e}"
    ))
}

// ---------- 5. metrics ----------

fn rect(h: usize, w: usize, y0: usize, x0: usize, rh: usize, rw: usize) -> Vec<bool> {
    (0..h * w)
        .map(|i| (y0..y0 + rh).contains(&(i / w)) && (x0..x0 + rw).contains(&(i % w)))
        .collect()
}

fn disk(h: usize, w: usize, cy: f64, cx: f64, r: f64) -> Vec<bool> {
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64 + 0.5, (i % w) as f64 + 0.5);
            (y - cy).powi(2) + (x - cx).powi(2) <= r * r
        })
        .collect()
}

fn union(mut a: Vec<bool>, b: Vec<bool>) -> Vec<bool> {
    for (x, y) in a.iter_mut().zip(b) {
        *x |= y;
    }
    a
}

fn to_map(m: &[bool], h: usize, w: usize, class: u8) -> LabelMap {
    LabelMap::new(h, w, m.iter().map(|&b| if b { class } else { 0 }).collect()).unwrap()
}

const SIDE: usize = 16;

fn gallery() -> Vec<Vec<bool>> {
    let (h, w) = (SIDE, SIDE);
    let mut out = vec![
        vec![false; h * w],
        vec![true; h * w],
        rect(h, w, 0, 0, 16, 8),
        rect(h, w, 3, 3, 1, 1),
        rect(h, w, 2, 2, 4, 4),
        rect(h, w, 5, 1, 3, 12),
        rect(h, w, 11, 11, 5, 5),
        rect(h, w, 1, 7, 14, 2),
        rect(h, w, 4, 2, 1, 12),
        disk(h, w, 8.0, 8.0, 3.0),
        disk(h, w, 8.0, 8.0, 6.5),
        disk(h, w, 4.5, 11.0, 2.2),
        (0..h * w).map(|i| (i / w + i % w) % 2 == 0).collect(),
        (0..h * w).map(|i| i % w >= i / w).collect(),
        (0..h * w).map(|i| (i / w) % 4 < 2).collect(),
        union(rect(h, w, 2, 2, 10, 3), rect(h, w, 9, 2, 3, 10)),
        union(rect(h, w, 6, 1, 4, 14), rect(h, w, 1, 6, 14, 4)),
        union(rect(h, w, 1, 1, 4, 4), rect(h, w, 9, 9, 6, 6)),
    ];
    let mut ring = disk(h, w, 8.0, 8.0, 7.0);
    for (a, b) in ring.iter_mut().zip(disk(h, w, 8.0, 8.0, 4.0)) {
        *a &= !b;
    }
    out.push(ring);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        out.push((0..h * w).map(|_| rng.gen_bool(0.35)).collect());
    }
    out
}

fn oracle_iou(pred: &LabelMap, gt: &LabelMap, k: usize) -> Option<f64> {
    let mut present = Vec::new();
    for c in 0..k as u8 {
        let (mut inter, mut uni) = (0, 0);
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g != IGNORE {
                inter += (p == c && g == c) as usize;
                uni += (p == c || g == c) as usize;
            }
        }
        if uni > 0 {
            present.push(inter as f64 / uni as f64);
        }
    }
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

fn oracle_boundary(m: &LabelMap) -> Vec<(usize, usize)> {
    let (h, w) = (m.height(), m.width());
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = m.get(y, x);
            if v == IGNORE {
                continue;
            }
            let mut ns = Vec::new();
            if y > 0 {
                ns.push(m.get(y - 1, x));
            }
            if y + 1 < h {
                ns.push(m.get(y + 1, x));
            }
            if x > 0 {
                ns.push(m.get(y, x - 1));
            }
            if x + 1 < w {
                ns.push(m.get(y, x + 1));
            }
            if ns.iter().any(|&n| n != IGNORE && n != v) {
                out.push((y, x));
            }
        }
    }
    out
}

fn oracle_bf1(pred: &LabelMap, gt: &LabelMap, band: usize) -> f64 {
    let (pb, gb) = (oracle_boundary(pred), oracle_boundary(gt));
    if pb.is_empty() || gb.is_empty() {
        return (pb.is_empty() && gb.is_empty()) as u8 as f64;
    }
    let near = |a: &(usize, usize), set: &[(usize, usize)]| {
        set.iter()
            .any(|b| a.0.abs_diff(b.0).max(a.1.abs_diff(b.1)) < band)
    };
    let p = pb.iter().filter(|a| near(a, &gb)).count() as f64 / pb.len() as f64;
    let r = gb.iter().filter(|a| near(a, &pb)).count() as f64 / gb.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn inside(m: &[bool], h: usize, w: usize, y: isize, x: isize) -> bool {
    y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && m[y as usize * w + x as usize]
}

fn oracle_tv(m: &[bool], h: usize, w: usize) -> f64 {
    let mut changes = 0;
    for i in 0..h * w {
        let (y, x) = (i / w, i % w);
        changes += (x + 1 < w && m[i] != m[i + 1]) as usize;
        changes += (y + 1 < h && m[i] != m[i + w]) as usize;
    }
    1.0 - changes as f64 / (2 * h * w) as f64
}

const FOUR: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

fn oracle_compactness(m: &[bool], h: usize, w: usize) -> f64 {
    let (mut area, mut perim) = (0usize, 0usize);
    for i in 0..h * w {
        if m[i] {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            area += 1;
            perim += FOUR
                .iter()
                .filter(|(dy, dx)| !inside(m, h, w, y + dy, x + dx))
                .count();
        }
    }
    if area == 0 {
        return 0.0;
    }
    (4.0 * PI * area as f64 / (perim as f64 + 1e-6).powi(2)).min(1.0)
}

/// Boundary chains traced from the pixel with the fewest free neighbours,
/// always stepping to the first free neighbour (4-neighbours first); turning
/// angles measured with atan2 on the step vectors.
fn oracle_edge_regularity(m: &[bool], h: usize, w: usize) -> f64 {
    const ORDER: [(isize, isize); 8] = [
        (0, 1),
        (1, 0),
        (0, -1),
        (-1, 0),
        (1, 1),
        (1, -1),
        (-1, -1),
        (-1, 1),
    ];
    let boundary: Vec<bool> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            m[i] && FOUR.iter().any(|(dy, dx)| !inside(m, h, w, y + dy, x + dx))
        })
        .collect();
    let total = boundary.iter().filter(|&&b| b).count();
    if total == 0 {
        return 0.0;
    }
    let mut used = vec![false; h * w];
    let free = |p: usize, used: &[bool]| -> Vec<usize> {
        let (y, x) = ((p / w) as isize, (p % w) as isize);
        ORDER
            .iter()
            .filter(|(dy, dx)| inside(&boundary, h, w, y + dy, x + dx))
            .map(|(dy, dx)| (y + dy) as usize * w + (x + dx) as usize)
            .filter(|&q| !used[q])
            .collect()
    };
    let angle = |a: usize, b: usize, c: usize| {
        let v = |p: usize, q: usize| {
            (
                (q / w) as f64 - (p / w) as f64,
                (q % w) as f64 - (p % w) as f64,
            )
        };
        let (u, t) = (v(a, b), v(b, c));
        let d = (t.0.atan2(t.1) - u.0.atan2(u.1)).abs();
        d.min(2.0 * PI - d)
    };
    let mut spikes = 0;
    loop {
        let mut best: Option<(usize, usize)> = None;
        for p in (0..h * w).filter(|&p| boundary[p] && !used[p]) {
            let n = free(p, &used).len();
            if best.is_none_or(|(bn, _)| n < bn) {
                best = Some((n, p));
            }
        }
        let Some((_, start)) = best else { break };
        let mut chain = vec![start];
        used[start] = true;
        while let Some(&next) = free(*chain.last().unwrap(), &used).first() {
            used[next] = true;
            chain.push(next);
        }
        let n = chain.len();
        let (a, b) = (chain[0], chain[n - 1]);
        let closed = n >= 3 && (a / w).abs_diff(b / w) <= 1 && (a % w).abs_diff(b % w) <= 1;
        for i in 0..n {
            let (prev, next) = if closed {
                (chain[(i + n - 1) % n], chain[(i + 1) % n])
            } else if i == 0 || i + 1 == n {
                continue;
            } else {
                (chain[i - 1], chain[i + 1])
            };
            if angle(prev, chain[i], next) > CURVATURE_THRESHOLD + 1e-9 {
                spikes += 1;
            }
        }
    }
    spikes as f64 / total as f64
}

fn oracle_ece(conf: &[f64], correct: &[bool]) -> f64 {
    let mut total = 0.0;
    for b in 0..10 {
        let idx: Vec<usize> = (0..conf.len())
            .filter(|&i| ((conf[i] * 10.0) as usize).min(9) == b)
            .collect();
        if !idx.is_empty() {
            let n = idx.len() as f64;
            let acc = idx.iter().filter(|&&i| correct[i]).count() as f64 / n;
            let c = idx.iter().map(|&i| conf[i]).sum::<f64>() / n;
            total += n / conf.len() as f64 * (acc - c).abs();
        }
    }
    total
}

fn metrics() -> Outcome {
    let (h, w) = (SIDE, SIDE);
    let masks = gallery();
    ensure(masks.len() >= 20, || format!("only {} masks", masks.len()))?;
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    for (i, m) in masks.iter().enumerate() {
        ensure(close(tv_smoothness(m, h, w), oracle_tv(m, h, w)), || {
            format!("tv mask {i}")
        })?;
        ensure(
            close(compactness(m, h, w), oracle_compactness(m, h, w)),
            || format!("compactness mask {i}"),
        )?;
        ensure(
            close(
                edge_regularity(m, h, w, CURVATURE_THRESHOLD),
                oracle_edge_regularity(m, h, w),
            ),
            || format!("edge regularity mask {i}"),
        )?;
        let pred = to_map(m, h, w, 1);
        let mut gt = to_map(&masks[(i * 7 + 3) % masks.len()], h, w, 2);
        for x in 0..w {
            gt.set(h - 1, x, IGNORE);
        }
        let ours = miou(&pred, &gt, 3).map_err(|e| e.to_string())?.mean;
        let expect = oracle_iou(&pred, &gt, 3);
        ensure(ours.is_some() == expect.is_some(), || {
            format!("miou presence mask {i}")
        })?;
        ensure(ours.zip(expect).is_none_or(|(a, b)| close(a, b)), || {
            format!("miou mask {i}")
        })?;
        for band in [1, 2, 3] {
            let f = boundary_f1(&pred, &gt, band).map_err(|e| e.to_string())?;
            ensure(close(f, oracle_bf1(&pred, &gt, band)), || {
                format!("bf1 mask {i} band {band}")
            })?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..20 {
        let conf: Vec<f64> = (0..400).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let correct: Vec<bool> = conf.iter().map(|&c| rng.gen_bool(c * 0.9)).collect();
        let ours = ece(&conf, &correct, 10).map_err(|e| e.to_string())?;
        ensure(close(ours, oracle_ece(&conf, &correct)), || {
            format!("ece trial {trial}")
        })?;
    }
    for side in 1..=12 {
        let c = compactness(&rect(h, w, 2, 2, side, side), h, w);
        ensure((c - PI / 4.0).abs() < 1e-6, || {
            format!("square {side}: compactness {c}")
        })?;
    }
    let gt = to_map(&rect(32, 32, 0, 16, 32, 16), 32, 32, 1);
    let shift1 = to_map(&rect(32, 32, 0, 17, 32, 15), 32, 32, 1);
    let shift3 = to_map(&rect(32, 32, 0, 19, 32, 13), 32, 32, 1);
    let (f1, f3) = (
        boundary_f1(&shift1, &gt, 2).map_err(|e| e.to_string())?,
        boundary_f1(&shift3, &gt, 2).map_err(|e| e.to_string())?,
    );
    ensure(f1 == 1.0 && f3 == 0.0, || {
        format!("band 2: 1-px shift {f1}, 3-px shift {f3}")
    })?;
    Ok(format!(
        "{} masks match oracles; square = π/4; BF1 shifts 1 → 1.0, 3 → 0.0",
        masks.len()
    ))
}

// ---------- 6. loop invariants ----------

fn ceil_frac(hundredths: usize, n: usize) -> usize {
    (hundredths * n).div_ceil(100)
}

fn loop_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let n = rng.gen_range(1..50);
        let tau: f64 = rng.gen_range(0.0..=1.0);
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let store = |v: &[f64]| {
            let mut p = ParamStore::new();
            let role = Role::new(Group::Decoder, Kind::Kernel);
            p.insert("p", Tensor::new(&[v.len()], v.to_vec()).unwrap(), role)
                .unwrap();
            p
        };
        let mut teacher = store(&t);
        ema_update(&mut teacher, &store(&s), tau).map_err(|e| e.to_string())?;
        let after = teacher.get("p").unwrap().data();
        for i in 0..n {
            let gap = (after[i] - s[i]) - tau * (t[i] - s[i]);
            ensure(gap.abs() <= 1e-12 * (1.0 + t[i].abs() + s[i].abs()), || {
                format!("EMA contraction off by {gap:e}")
            })?;
        }
    }
    for _ in 0..300 {
        let n = rng.gen_range(1..300);
        let q = rng.gen_range(0..100usize);
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 / 5.0).collect();
        let mask = build_ignore_mask(&u, q as f64).map_err(|e| e.to_string())?;
        let masked = mask.iter().filter(|&&v| !v).count();
        ensure(masked == ceil_frac(q, n), || {
            format!("q={q} n={n}: masked {masked}")
        })?;
    }
    for _ in 0..300 {
        let (h, w, k) = (rng.gen_range(1..8), rng.gen_range(1..8), 3);
        let hw = h * w;
        let keep = rng.gen_range(1..=100usize);
        let probs: Vec<f64> = (0..k * hw).map(|_| rng.gen_range(0..4) as f64).collect();
        let u: Vec<f64> = (0..hw).map(|_| rng.gen_range(0..3) as f64).collect();
        let p = relabel(&probs, &u, k, h, w, keep as f64 / 100.0).map_err(|e| e.to_string())?;
        ensure(p.valid_count() == ceil_frac(keep, hw), || {
            format!("keep {keep}% of {hw}: kept {}", p.valid_count())
        })?;
        for i in (0..hw).filter(|&i| p.valid[i]) {
            for j in (0..hw).filter(|&j| !p.valid[j]) {
                ensure(u[i] < u[j] || (u[i] == u[j] && i < j), || {
                    "relabel tie order".into()
                })?;
            }
        }
    }
    let c = TrainConfig::default();
    let q = |e| anneal_q(e, c.q_start, c.q_end, c.q_anneal_epochs);
    ensure(q(0) == 30.0, || format!("q(0) = {}", q(0)))?;
    ensure((10..100).all(|e| q(e) == 15.0), || "q(≥10) ≠ 15".into())?;
    Ok("EMA factor τ, ⌈q%·HW⌉ masked, ⌈keep·HW⌉ kept with ties, q 30 → 15".into())
}

// ---------- 7 and 8. desk benchmark ----------

const CHECK_KEYS: [&str; 5] = [
    "miou_order",
    "boundary_f1_order",
    "miou_gain",
    "boundary_f1_gain",
    "ece",
];

struct Bench {
    lines: Vec<(usize, bool, String)>,
    regressions: Vec<String>,
}

fn benchmark() -> Result<Bench, String> {
    let fixture = kv::parse(include_str!("fixtures/waterfall.txt")).map_err(|e| e.to_string())?;
    let num = |k: &str| -> f64 { fixture[k].parse().unwrap() };
    let start = Instant::now();
    let (train_set, eval_set) = benchmark_datasets().map_err(|e| e.to_string())?;
    let results = run_benchmark(
        &Preset::ALL,
        &BENCH_SEEDS,
        &train_set,
        &eval_set,
        |p, s, r| {
            eprintln!(
                "  {p} seed {s}: miou {:.4} boundary_f1 {:.4} ece {:.4} ({:.0}s)",
                r.miou,
                r.boundary_f1,
                r.ece,
                start.elapsed().as_secs_f64()
            );
        },
    )
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let checks = waterfall_checks(&results, num("min_gain")).map_err(|e| e.to_string())?;

    let mut regressions = Vec::new();
    for r in &results {
        let m = r.mean();
        eprintln!(
            "  {} mean: miou {:.6} boundary_f1 {:.6} ece {:.6}",
            r.preset, m.miou, m.boundary_f1, m.ece
        );
        for (name, v) in [
            ("miou", m.miou),
            ("boundary_f1", m.boundary_f1),
            ("ece", m.ece),
        ] {
            let pinned = num(&format!("{}.{name}", r.preset));
            if (v - pinned).abs() > 5e-5 {
                regressions.push(format!("{} {name} {v:.4} vs pinned {pinned:.4}", r.preset));
            }
        }
    }
    for (check, key) in checks.iter().zip(CHECK_KEYS) {
        let pinned: bool = fixture[&format!("pass.{key}")].parse().unwrap();
        if check.passed != pinned {
            regressions.push(format!(
                "{} now {}",
                check.name,
                if check.passed { "passes" } else { "fails" }
            ));
        }
    }
    if elapsed > Duration::from_secs(30 * 60) {
        regressions.push(format!("benchmark took {:.0}s", elapsed.as_secs_f64()));
    }

    let detail = |c: &crispdec::wsss::experiment::Check| {
        format!(
            "{} [{}] {}",
            c.name,
            if c.passed { "ok" } else { "violated" },
            c.detail
        )
    };
    let waterfall = &checks[..4];
    let lines = vec![
        (
            7,
            waterfall.iter().all(|c| c.passed),
            format!(
                "{}; {:.0}s",
                waterfall.iter().map(detail).collect::<Vec<_>>().join("; "),
                elapsed.as_secs_f64()
            ),
        ),
        (8, checks[4].passed, detail(&checks[4])),
    ];
    Ok(Bench { lines, regressions })
}

// ---------- 9. determinism ----------

fn crispdec(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_crispdec"))
        .env_remove("CRISPDEC_THREADS")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "crispdec {args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = fs::read(&p).unwrap();
            (p.strip_prefix(dir).unwrap().to_path_buf(), bytes)
        })
        .collect();
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| tmp.path().join(name).to_str().unwrap().to_string();
    crispdec(&[
        "gen",
        "--out",
        &p("data"),
        "--count",
        "6",
        "--seed",
        "3",
        "--height",
        "32",
        "--width",
        "32",
    ])?;
    fs::write(
        p("train.txt"),
        "epochs=2\nbatch_size=4\nwidth=8\nrelabel_start_epoch=1\nrelabel_period=1\n",
    )
    .map_err(|e| e.to_string())?;
    for run in ["r1", "r2"] {
        crispdec(&[
            "train",
            "--data",
            &p("data"),
            "--out",
            &p(run),
            "--config",
            &p("train.txt"),
            "--seed",
            "4",
        ])?;
    }
    let ckpt = |run: &str| files(&tmp.path().join(run).join("checkpoint"));
    ensure(ckpt("r1") == ckpt("r2"), || "checkpoints differ".into())?;
    for csv in ["a.csv", "b.csv"] {
        crispdec(&[
            "eval",
            "--checkpoint",
            &format!("{}/checkpoint", p("r1")),
            "--data",
            &p("data"),
            "--out",
            &p(csv),
        ])?;
    }
    let (a, b) = (fs::read(p("a.csv")).unwrap(), fs::read(p("b.csv")).unwrap());
    ensure(a == b, || "eval CSVs differ".into())?;
    Ok(format!(
        "{} checkpoint files identical; {}-byte CSVs identical",
        ckpt("r1").len(),
        a.len()
    ))
}

fn main() -> ExitCode {
    let strict = std::env::var("CRISPDEC_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let skip_bench = std::env::var("CRISPDEC_ACCEPTANCE_SKIP_BENCH").is_ok_and(|v| v == "1");
    let mut any_fail = false;
    let mut problems = Vec::new();
    let mut report = |n: usize, passed: bool, detail: &str| {
        println!(
            "criterion {n}: {} {detail}",
            if passed { "PASS" } else { "FAIL" }
        );
        any_fail |= !passed;
    };

    let quick: [(usize, fn() -> Outcome); 6] = [
        (1, gradients),
        (2, fusion),
        (3, refiner),
        (4, losses),
        (5, metrics),
        (6, loop_invariants),
    ];
    for (n, f) in quick {
        let r = f();
        report(n, r.is_ok(), r.as_ref().unwrap_or_else(|e| e));
        if r.is_err() {
            problems.push(format!("criterion {n}"));
        }
    }
    if skip_bench {
        println!("criterion 7: SKIP benchmark disabled");
        println!("criterion 8: SKIP benchmark disabled");
    } else {
        match benchmark() {
            Ok(bench) => {
                for (n, passed, detail) in &bench.lines {
                    report(*n, *passed, detail);
                }
                problems.extend(
                    bench
                        .regressions
                        .into_iter()
                        .map(|r| format!("calibration drift: {r}")),
                );
            }
            Err(e) => {
                report(7, false, &e);
                report(8, false, &e);
                problems.push("benchmark did not run".into());
            }
        }
    }
    let r = determinism();
    report(9, r.is_ok(), r.as_ref().unwrap_or_else(|e| e));
    if r.is_err() {
        problems.push("criterion 9".into());
    }

    if strict && any_fail {
        problems.push("strict mode: some criterion failed".into());
    }
    if problems.is_empty() {
        ExitCode::SUCCESS
    } else {
        for p in &problems {
            eprintln!("acceptance: {p}");
        }
        ExitCode::FAILURE
    }
}
