use std::f64::consts::PI;

use crispdec::io::{ctsr, pgm};
use crispdec::metrics::{
    boundary_f1, compactness, ece, edge_regularity, evaluate, miou, tv_smoothness, EvalOptions,
    MetricValues, CURVATURE_THRESHOLD,
};
use crispdec::tensor::Tensor;
use crispdec::{LabelMap, IGNORE};
use proptest::prelude::*;

// ---------- brute-force oracles ----------

fn oracle_iou(pred: &LabelMap, gt: &LabelMap, k: usize) -> (Vec<Option<f64>>, Option<f64>) {
    let mut per = Vec::new();
    for c in 0..k as u8 {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g == IGNORE {
                continue;
            }
            match (p == c, g == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        per.push((tp + fp + fn_ > 0).then(|| tp as f64 / (tp + fp + fn_) as f64));
    }
    let present: Vec<f64> = per.iter().flatten().copied().collect();
    let mean = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    (per, mean)
}

fn oracle_boundary(m: &LabelMap) -> Vec<(usize, usize)> {
    let (h, w) = (m.height() as isize, m.width() as isize);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = m.get(y as usize, x as usize);
            if v == IGNORE {
                continue;
            }
            let differs = [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dy, dx)| {
                let (ny, nx) = (y + dy, x + dx);
                ny >= 0 && nx >= 0 && ny < h && nx < w && {
                    let n = m.get(ny as usize, nx as usize);
                    n != IGNORE && n != v
                }
            });
            if differs {
                out.push((y as usize, x as usize));
            }
        }
    }
    out
}

fn oracle_bf1(pred: &LabelMap, gt: &LabelMap, band: usize) -> f64 {
    let (pb, gb) = (oracle_boundary(pred), oracle_boundary(gt));
    match (pb.is_empty(), gb.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
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

fn oracle_tv(m: &[bool], h: usize, w: usize) -> f64 {
    let mut t = 0;
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w && m[y * w + x] != m[y * w + x + 1] {
                t += 1;
            }
            if y + 1 < h && m[y * w + x] != m[(y + 1) * w + x] {
                t += 1;
            }
        }
    }
    1.0 - t as f64 / (2 * h * w) as f64
}

fn oracle_compactness(m: &[bool], h: usize, w: usize) -> f64 {
    let at = |y: isize, x: isize| {
        y >= 0 && x >= 0 && y < h as isize && x < w as isize && m[y as usize * w + x as usize]
    };
    let (mut area, mut perim) = (0usize, 0usize);
    for y in 0..h as isize {
        for x in 0..w as isize {
            if at(y, x) {
                area += 1;
                perim += [(-1, 0), (1, 0), (0, -1), (0, 1)]
                    .iter()
                    .filter(|(dy, dx)| !at(y + dy, x + dx))
                    .count();
            }
        }
    }
    if area == 0 {
        return 0.0;
    }
    (4.0 * PI * area as f64 / (perim as f64 + 1e-6).powi(2)).min(1.0)
}

fn oracle_ece(conf: &[f64], correct: &[bool], bins: usize) -> f64 {
    let n = conf.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        let idx: Vec<usize> = (0..conf.len())
            .filter(|&i| ((conf[i] * bins as f64).floor() as usize).min(bins - 1) == b)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let nb = idx.len() as f64;
        let acc = idx.iter().filter(|&&i| correct[i]).count() as f64 / nb;
        let c = idx.iter().map(|&i| conf[i]).sum::<f64>() / nb;
        total += nb / n * (acc - c).abs();
    }
    total
}

// ---------- hand-built masks ----------

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

fn to_map(m: &[bool], h: usize, w: usize, class: u8) -> LabelMap {
    LabelMap::new(h, w, m.iter().map(|&b| if b { class } else { 0 }).collect()).unwrap()
}

/// Twenty-four binary masks on a 16×16 canvas.
fn gallery() -> Vec<Vec<bool>> {
    let (h, w) = (16, 16);
    let mut out = vec![
        vec![false; h * w],
        vec![true; h * w],
        rect(h, w, 0, 0, 16, 8),
        rect(h, w, 0, 0, 8, 16),
        rect(h, w, 3, 3, 1, 1),
        rect(h, w, 2, 2, 4, 4),
        rect(h, w, 5, 1, 3, 12),
        rect(h, w, 0, 0, 5, 5),
        rect(h, w, 11, 11, 5, 5),
        rect(h, w, 1, 7, 14, 2),
        disk(h, w, 8.0, 8.0, 3.0),
        disk(h, w, 8.0, 8.0, 6.5),
        disk(h, w, 4.5, 11.0, 2.2),
        (0..h * w).map(|i| (i / w + i % w) % 2 == 0).collect(),
        (0..h * w).map(|i| i % w >= i / w).collect(),
        (0..h * w).map(|i| (i / w) % 4 < 2).collect(),
        (0..h * w).map(|i| (i % w) % 3 == 0).collect(),
    ];
    let mut l = rect(h, w, 2, 2, 10, 3);
    for (a, b) in l.iter_mut().zip(rect(h, w, 9, 2, 3, 10)) {
        *a |= b;
    }
    out.push(l);
    let mut cross = rect(h, w, 6, 1, 4, 14);
    for (a, b) in cross.iter_mut().zip(rect(h, w, 1, 6, 14, 4)) {
        *a |= b;
    }
    out.push(cross);
    let mut ring = disk(h, w, 8.0, 8.0, 7.0);
    for (a, b) in ring.iter_mut().zip(disk(h, w, 8.0, 8.0, 4.0)) {
        *a &= !b;
    }
    out.push(ring);
    let mut two = rect(h, w, 1, 1, 4, 4);
    for (a, b) in two.iter_mut().zip(rect(h, w, 9, 9, 6, 6)) {
        *a |= b;
    }
    out.push(two);
    // Deterministic pseudo-random masks.
    for seed in [7u64, 19, 23] {
        let mut s = seed;
        out.push(
            (0..h * w)
                .map(|_| {
                    s = s
                        .wrapping_mul(6364136223846793005)
                        .wrapping_add(1442695040888963407);
                    (s >> 33) % 3 == 0
                })
                .collect(),
        );
    }
    out
}

#[test]
fn gallery_has_at_least_twenty_masks() {
    assert!(gallery().len() >= 20);
}

#[test]
fn tv_and_compactness_match_oracles_on_gallery() {
    for (i, m) in gallery().iter().enumerate() {
        assert!(
            (tv_smoothness(m, 16, 16) - oracle_tv(m, 16, 16)).abs() < 1e-12,
            "tv mask {i}"
        );
        assert!(
            (compactness(m, 16, 16) - oracle_compactness(m, 16, 16)).abs() < 1e-12,
            "compactness mask {i}"
        );
    }
}

#[test]
fn miou_and_bf1_match_oracles_on_gallery_pairs() {
    let g = gallery();
    for (i, a) in g.iter().enumerate() {
        let b = &g[(i * 7 + 3) % g.len()];
        let pred = to_map(a, 16, 16, 1);
        let mut gt = to_map(b, 16, 16, 2);
        // Exercise IGNORE handling on one row.
        for x in 0..16 {
            gt.set(15, x, IGNORE);
        }
        let ours = miou(&pred, &gt, 3).unwrap();
        let (per, mean) = oracle_iou(&pred, &gt, 3);
        assert_eq!(ours.per_class.len(), 3);
        for (o, p) in ours.per_class.iter().zip(&per) {
            match (o, p) {
                (Some(x), Some(y)) => assert!((x - y).abs() < 1e-12, "pair {i}"),
                (None, None) => {}
                _ => panic!("pair {i}: presence differs"),
            }
        }
        assert_eq!(ours.mean.is_some(), mean.is_some());
        if let (Some(x), Some(y)) = (ours.mean, mean) {
            assert!((x - y).abs() < 1e-12);
        }
        for band in [1, 2, 3] {
            let f = boundary_f1(&pred, &gt, band).unwrap();
            assert!(
                (f - oracle_bf1(&pred, &gt, band)).abs() < 1e-12,
                "pair {i} band {band}"
            );
        }
    }
}

#[test]
fn ece_matches_oracle() {
    let mut s = 11u64;
    let mut next = || {
        s = s
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64
    };
    let conf: Vec<f64> = (0..500).map(|_| next()).collect();
    let correct: Vec<bool> = conf.iter().map(|&c| next() < c * 0.9).collect();
    let ours = ece(&conf, &correct, 10).unwrap();
    assert!((ours - oracle_ece(&conf, &correct, 10)).abs() < 1e-12);
}

// ---------- closed forms ----------

#[test]
fn identical_maps_score_one() {
    let m = to_map(&disk(16, 16, 8.0, 8.0, 5.0), 16, 16, 1);
    assert_eq!(miou(&m, &m, 2).unwrap().mean, Some(1.0));
    assert_eq!(boundary_f1(&m, &m, 2).unwrap(), 1.0);
}

#[test]
fn half_shifted_foreground_iou_is_one_third() {
    // gt foreground: columns 8..16; pred foreground shifted by half its width.
    let gt = to_map(&rect(16, 16, 0, 8, 16, 8), 16, 16, 1);
    let pred = to_map(&rect(16, 16, 0, 4, 16, 8), 16, 16, 1);
    let r = miou(&pred, &gt, 2).unwrap();
    assert!((r.per_class[1].unwrap() - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn absent_class_excluded_from_mean() {
    let gt = to_map(&rect(8, 8, 0, 0, 8, 4), 8, 8, 1);
    let r = miou(&gt, &gt, 4).unwrap();
    assert_eq!(r.per_class[2], None);
    assert_eq!(r.per_class[3], None);
    assert_eq!(r.mean, Some(1.0));
}

#[test]
fn class_out_of_range_rejected() {
    let gt = to_map(&rect(8, 8, 0, 0, 8, 4), 8, 8, 3);
    assert!(miou(&gt, &gt, 2).is_err());
}

#[test]
fn boundary_f1_band_behavior() {
    let (h, w) = (32, 32);
    let gt = to_map(&rect(h, w, 0, 16, h, 16), h, w, 1);
    let shift1 = to_map(&rect(h, w, 0, 17, h, 15), h, w, 1);
    let shift3 = to_map(&rect(h, w, 0, 19, h, 13), h, w, 1);
    assert_eq!(boundary_f1(&shift1, &gt, 2).unwrap(), 1.0);
    assert_eq!(boundary_f1(&shift3, &gt, 2).unwrap(), 0.0);
}

#[test]
fn boundary_f1_empty_cases() {
    let empty = LabelMap::filled(8, 8, 0);
    let split = to_map(&rect(8, 8, 0, 0, 8, 4), 8, 8, 1);
    assert_eq!(boundary_f1(&empty, &empty, 2).unwrap(), 1.0);
    assert_eq!(boundary_f1(&split, &empty, 2).unwrap(), 0.0);
    assert_eq!(boundary_f1(&empty, &split, 2).unwrap(), 0.0);
}

#[test]
fn ece_closed_forms() {
    assert_eq!(ece(&[1.0; 10], &[true; 10], 10).unwrap(), 0.0);
    let correct: Vec<bool> = (0..10).map(|i| i < 8).collect();
    assert!(ece(&[0.8; 10], &correct, 10).unwrap().abs() < 1e-12);
    let mut conf = vec![0.9; 10];
    conf.extend(vec![0.6; 10]);
    let mut ok: Vec<bool> = (0..10).map(|i| i < 5).collect();
    ok.extend((0..10).map(|i| i < 6));
    assert!((ece(&conf, &ok, 10).unwrap() - 0.2).abs() < 1e-12);
}

#[test]
fn tv_closed_forms() {
    assert_eq!(tv_smoothness(&[true; 64], 8, 8), 1.0);
    let board: Vec<bool> = (0..64).map(|i| (i / 8 + i % 8) % 2 == 0).collect();
    assert_eq!(tv_smoothness(&board, 8, 8), 1.0 - 112.0 / 128.0);
    assert_eq!(tv_smoothness(&rect(8, 8, 4, 4, 1, 1), 8, 8), 0.96875);
}

#[test]
fn square_compactness_is_quarter_pi() {
    for s in 1..=12 {
        let m = rect(16, 16, 2, 2, s.min(13), s.min(13));
        let c = compactness(&m, 16, 16);
        // The only deviation from π/4 is the 1e-6 perimeter guard.
        assert!((c - PI / 4.0).abs() < 1e-6, "side {s}: {c}");
    }
    assert!((compactness(&[true], 1, 1) - PI / 4.0).abs() < 1e-6);
}

#[test]
fn rasterized_disk_compactness_matches_edge_count() {
    let (h, w) = (48, 48);
    let m = disk(h, w, 24.0, 24.0, 20.0);
    let c = compactness(&m, h, w);
    assert!((c - oracle_compactness(&m, h, w)).abs() < 1e-12);
    // Exposed-edge perimeters of digital disks approach 8r, so the score sits
    // near π²/16 rather than 1.
    assert!((c - PI * PI / 16.0).abs() < 0.01, "{c}");
}

#[test]
fn edge_regularity_square_has_four_spikes() {
    for s in 3..=10 {
        let m = rect(16, 16, 3, 2, s, s);
        let er = edge_regularity(&m, 16, 16, CURVATURE_THRESHOLD);
        assert!((er - 4.0 / (4 * s - 4) as f64).abs() < 1e-12, "side {s}");
    }
}

#[test]
fn edge_regularity_rectangle_has_four_spikes() {
    let m = rect(16, 16, 2, 1, 5, 12);
    let boundary = 2 * 12 + 2 * (5 - 2);
    let er = edge_regularity(&m, 16, 16, CURVATURE_THRESHOLD);
    assert!((er - 4.0 / boundary as f64).abs() < 1e-12);
}

#[test]
fn edge_regularity_straight_line_is_zero() {
    let m = rect(8, 16, 4, 2, 1, 12);
    assert_eq!(edge_regularity(&m, 8, 16, CURVATURE_THRESHOLD), 0.0);
}

#[test]
fn edge_regularity_empty_is_zero() {
    assert_eq!(
        edge_regularity(&[false; 16], 4, 4, CURVATURE_THRESHOLD),
        0.0
    );
}

#[test]
fn edge_regularity_staircase_flags_steps() {
    // One-pixel staircase of right, down, diagonal moves: only the right→down
    // corner of each step turns by more than 45°.
    let n = 12;
    let mut m = vec![false; n * n];
    for i in 0..n / 2 {
        m[(2 * i) * n + 2 * i] = true;
        if 2 * i + 1 < n {
            m[(2 * i) * n + 2 * i + 1] = true;
            m[(2 * i + 1) * n + 2 * i + 1] = true;
        }
    }
    let er = edge_regularity(&m, n, n, CURVATURE_THRESHOLD);
    let pixels = m.iter().filter(|&&b| b).count();
    assert_eq!(pixels, 3 * n / 2);
    assert!((er - (n / 2) as f64 / pixels as f64).abs() < 1e-12, "{er}");
}

// ---------- directory evaluation ----------

fn write_maps(dir: &std::path::Path, maps: &[(&str, &LabelMap)]) {
    for (name, m) in maps {
        pgm::write(&dir.join(name), m).unwrap();
    }
}

#[test]
fn evaluate_same_dir_is_perfect_with_blank_ece() {
    let dir = tempfile::tempdir().unwrap();
    let a = to_map(&disk(32, 32, 12.0, 14.0, 7.0), 32, 32, 1);
    let b = to_map(&rect(32, 32, 4, 4, 10, 20), 32, 32, 2);
    write_maps(dir.path(), &[("a.pgm", &a), ("b.pgm", &b)]);
    let r = evaluate(dir.path(), dir.path(), 3, &EvalOptions::default()).unwrap();
    assert_eq!(r.rows.len(), 2);
    let agg = r.aggregate().unwrap();
    assert_eq!(agg.miou, Some(1.0));
    assert_eq!(agg.boundary_f1, 1.0);
    assert_eq!(agg.ece, None);
    let csv = r.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "image,miou,boundary_f1,ece,tv_smooth,compactness,edge_regularity,iou_0,iou_1,iou_2,error"
    );
    assert!(lines[1].starts_with("a.pgm,1.000000,1.000000,,"));
    assert!(lines[3].starts_with("mean,"));
}

#[test]
fn evaluate_empty_dirs_gives_empty_report() {
    let p = tempfile::tempdir().unwrap();
    let g = tempfile::tempdir().unwrap();
    let r = evaluate(p.path(), g.path(), 2, &EvalOptions::default()).unwrap();
    assert!(r.is_empty());
    assert!(r.aggregate().is_none());
}

#[test]
fn evaluate_aggregate_is_mean_of_rows() {
    let p = tempfile::tempdir().unwrap();
    let g = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let (h, w) = (32, 32);
    let gts = [
        to_map(&rect(h, w, 0, 16, h, 16), h, w, 1),
        to_map(&disk(h, w, 16.0, 16.0, 9.0), h, w, 2),
        to_map(&rect(h, w, 8, 4, 6, 20), h, w, 1),
    ];
    let preds = [
        to_map(&rect(h, w, 0, 17, h, 15), h, w, 1),
        to_map(&disk(h, w, 15.0, 16.5, 8.0), h, w, 2),
        to_map(&rect(h, w, 9, 4, 6, 18), h, w, 2),
    ];
    let mut expected = Vec::new();
    for (i, (gt, pred)) in gts.iter().zip(&preds).enumerate() {
        let name = format!("{i}.pgm");
        write_maps(g.path(), &[(&name, gt)]);
        write_maps(p.path(), &[(&name, pred)]);
        let conf: Vec<f64> = (0..h * w)
            .map(|j| 0.5 + 0.5 * ((j * (i + 3)) % 97) as f64 / 97.0)
            .collect();
        ctsr::write(
            &c.path().join(format!("{i}.ctsr")),
            &Tensor::new(&[h, w], conf.clone()).unwrap(),
        )
        .unwrap();
        let conf32: Vec<f64> = conf.iter().map(|&v| v as f32 as f64).collect();
        let correct: Vec<bool> = pred
            .data()
            .iter()
            .zip(gt.data())
            .map(|(a, b)| a == b)
            .collect();
        expected.push((
            oracle_iou(pred, gt, 3).1.unwrap(),
            oracle_bf1(pred, gt, 2),
            oracle_ece(&conf32, &correct, 10),
        ));
    }
    let opts = EvalOptions {
        confidence_dir: Some(c.path().to_path_buf()),
    };
    let r = evaluate(p.path(), g.path(), 3, &opts).unwrap();
    assert_eq!(r.error_count(), 0);
    for (row, e) in r.rows.iter().zip(&expected) {
        let m: &MetricValues = row.result.as_ref().unwrap();
        assert!((m.miou.unwrap() - e.0).abs() < 1e-12);
        assert!((m.boundary_f1 - e.1).abs() < 1e-12);
        assert!((m.ece.unwrap() - e.2).abs() < 1e-12);
    }
    let agg = r.aggregate().unwrap();
    let mean = |f: fn(&(f64, f64, f64)) -> f64| expected.iter().map(f).sum::<f64>() / 3.0;
    assert!((agg.miou.unwrap() - mean(|e| e.0)).abs() < 1e-12);
    assert!((agg.boundary_f1 - mean(|e| e.1)).abs() < 1e-12);
    assert!((agg.ece.unwrap() - mean(|e| e.2)).abs() < 1e-12);
}

#[test]
fn evaluate_records_errors_and_continues() {
    let p = tempfile::tempdir().unwrap();
    let g = tempfile::tempdir().unwrap();
    let ok = to_map(&rect(8, 8, 0, 0, 8, 4), 8, 8, 1);
    let small = LabelMap::filled(4, 4, 0);
    write_maps(g.path(), &[("a.pgm", &ok), ("b.pgm", &ok), ("c.pgm", &ok)]);
    write_maps(
        p.path(),
        &[("a.pgm", &ok), ("b.pgm", &small), ("d.pgm", &ok)],
    );
    let r = evaluate(p.path(), g.path(), 2, &EvalOptions::default()).unwrap();
    let names: Vec<&str> = r.rows.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["a.pgm", "b.pgm", "c.pgm", "d.pgm"]);
    assert_eq!(r.error_count(), 3);
    assert!(r.rows[0].result.is_ok());
    assert_eq!(r.aggregate().unwrap().miou, Some(1.0));
}

// ---------- properties ----------

fn arb_map(h: usize, w: usize, k: u8) -> impl Strategy<Value = LabelMap> {
    proptest::collection::vec(0..k, h * w).prop_map(move |d| LabelMap::new(h, w, d).unwrap())
}

proptest! {
    #[test]
    fn metrics_lie_in_unit_interval(pred in arb_map(8, 8, 3), gt in arb_map(8, 8, 3),
                                    conf in proptest::collection::vec(0.0f64..=1.0, 64)) {
        let m = MetricValues::compute(&pred, &gt, 3, Some(&conf)).unwrap();
        for v in [m.miou.unwrap(), m.boundary_f1, m.ece.unwrap(), m.tv_smooth, m.compactness, m.edge_regularity] {
            prop_assert!((0.0..=1.0).contains(&v), "{v}");
        }
    }

    #[test]
    fn flip_invariance(pred in arb_map(6, 9, 3), gt in arb_map(6, 9, 3)) {
        let a = miou(&pred, &gt, 3).unwrap().mean.unwrap();
        let b = miou(&pred.hflip(), &gt.hflip(), 3).unwrap().mean.unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        let a = boundary_f1(&pred, &gt, 2).unwrap();
        let b = boundary_f1(&pred.hflip(), &gt.hflip(), 2).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn boundary_f1_is_symmetric(pred in arb_map(7, 7, 3), gt in arb_map(7, 7, 3)) {
        prop_assert_eq!(boundary_f1(&pred, &gt, 2).unwrap(), boundary_f1(&gt, &pred, 2).unwrap());
    }

    #[test]
    fn tv_drops_when_interior_pixel_flips(fill in any::<bool>(), y in 1usize..7, x in 1usize..7) {
        let mut m = vec![fill; 64];
        let before = tv_smoothness(&m, 8, 8);
        m[y * 8 + x] = !fill;
        prop_assert!(tv_smoothness(&m, 8, 8) < before);
    }
}
