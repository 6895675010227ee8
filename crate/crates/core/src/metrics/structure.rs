//! Structural scores of binary masks: total-variation smoothness,
//! isoperimetric compactness and boundary curvature spikes.

use std::f64::consts::PI;

use crate::labels::LabelMap;

/// Turning angle above which a boundary pixel counts as a curvature spike.
pub const CURVATURE_THRESHOLD: f64 = PI / 4.0;
const COMPACTNESS_EPS: f64 = 1e-6;

/// 1 − (horizontal + vertical label changes) / (2·H·W).
pub fn tv_smoothness(mask: &[bool], h: usize, w: usize) -> f64 {
    assert_eq!(mask.len(), h * w, "mask size");
    if h * w == 0 {
        return 1.0;
    }
    let mut changes = 0usize;
    for y in 0..h {
        for x in 0..w {
            let v = mask[y * w + x];
            if x + 1 < w && mask[y * w + x + 1] != v {
                changes += 1;
            }
            if y + 1 < h && mask[(y + 1) * w + x] != v {
                changes += 1;
            }
        }
    }
    (1.0 - changes as f64 / (2 * h * w) as f64).clamp(0.0, 1.0)
}

/// Foreground pixel sides facing background or the image border.
fn exposed_edges(mask: &[bool], h: usize, w: usize) -> usize {
    let fg = |y: isize, x: isize| {
        y >= 0
            && x >= 0
            && (y as usize) < h
            && (x as usize) < w
            && mask[y as usize * w + x as usize]
    };
    let mut edges = 0;
    for y in 0..h as isize {
        for x in 0..w as isize {
            if fg(y, x) {
                edges += [(-1, 0), (1, 0), (0, -1), (0, 1)]
                    .iter()
                    .filter(|(dy, dx)| !fg(y + dy, x + dx))
                    .count();
            }
        }
    }
    edges
}

/// 4π·area / (perimeter + ε)², perimeter counted in exposed pixel sides,
/// clamped to [0, 1]. An empty mask scores 0.
pub fn compactness(mask: &[bool], h: usize, w: usize) -> f64 {
    assert_eq!(mask.len(), h * w, "mask size");
    let area = mask.iter().filter(|&&b| b).count();
    if area == 0 {
        return 0.0;
    }
    let p = exposed_edges(mask, h, w) as f64 + COMPACTNESS_EPS;
    (4.0 * PI * area as f64 / (p * p)).clamp(0.0, 1.0)
}

/// Foreground pixels with a 4-neighbour that is background or off-image.
fn boundary_pixels(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            let exposed = y == 0
                || x == 0
                || y + 1 == h
                || x + 1 == w
                || !mask[(y - 1) * w + x]
                || !mask[(y + 1) * w + x]
                || !mask[y * w + x - 1]
                || !mask[y * w + x + 1];
            out[y * w + x] = exposed;
        }
    }
    out
}

/// Neighbour offsets, 4-neighbours first, each group in a fixed order.
const STEPS: [(isize, isize); 8] = [
    (0, 1),
    (1, 0),
    (0, -1),
    (-1, 0),
    (1, 1),
    (1, -1),
    (-1, -1),
    (-1, 1),
];

/// Direction index in 45° steps, counter-clockwise from +x.
fn direction(dy: isize, dx: isize) -> i32 {
    match (dy, dx) {
        (0, 1) => 0,
        (-1, 1) => 1,
        (-1, 0) => 2,
        (-1, -1) => 3,
        (0, -1) => 4,
        (1, -1) => 5,
        (1, 0) => 6,
        (1, 1) => 7,
        _ => unreachable!("non-adjacent chain step"),
    }
}

/// Absolute turning angle between two successive chain steps.
fn turn(a: (usize, usize), b: (usize, usize), c: (usize, usize)) -> f64 {
    let d1 = direction(b.0 as isize - a.0 as isize, b.1 as isize - a.1 as isize);
    let d2 = direction(c.0 as isize - b.0 as isize, c.1 as isize - b.1 as isize);
    let diff = (d1 - d2).rem_euclid(8);
    diff.min(8 - diff) as f64 * PI / 4.0
}

/// Split the boundary pixels into 8-connected chains. Each chain starts at the
/// unvisited pixel with the fewest unvisited neighbours (ties in row-major
/// order) and always steps to an unvisited neighbour, 4-neighbours first.
fn trace_chains(boundary: &[bool], h: usize, w: usize) -> Vec<Vec<(usize, usize)>> {
    let mut visited = vec![false; h * w];
    let neighbours = |y: usize, x: usize, visited: &[bool]| {
        STEPS
            .iter()
            .filter_map(move |&(dy, dx)| {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || ny as usize >= h || nx as usize >= w {
                    return None;
                }
                let i = ny as usize * w + nx as usize;
                (boundary[i] && !visited[i]).then_some((ny as usize, nx as usize))
            })
            .collect::<Vec<_>>()
    };
    let mut chains = Vec::new();
    loop {
        let start = (0..h * w)
            .filter(|&i| boundary[i] && !visited[i])
            .min_by_key(|&i| (neighbours(i / w, i % w, &visited).len(), i));
        let Some(start) = start else { break };
        let mut chain = vec![(start / w, start % w)];
        visited[start] = true;
        let mut cur = chain[0];
        while let Some(&next) = neighbours(cur.0, cur.1, &visited).first() {
            visited[next.0 * w + next.1] = true;
            chain.push(next);
            cur = next;
        }
        chains.push(chain);
    }
    chains
}

fn adjacent(a: (usize, usize), b: (usize, usize)) -> bool {
    a != b && a.0.abs_diff(b.0) <= 1 && a.1.abs_diff(b.1) <= 1
}

/// Fraction of boundary pixels whose turning angle exceeds `threshold`.
/// Chains whose ends touch are treated as closed; open-chain endpoints have
/// no turn. An empty boundary scores 0.
pub fn edge_regularity(mask: &[bool], h: usize, w: usize, threshold: f64) -> f64 {
    assert_eq!(mask.len(), h * w, "mask size");
    let boundary = boundary_pixels(mask, h, w);
    let total = boundary.iter().filter(|&&b| b).count();
    if total == 0 {
        return 0.0;
    }
    let mut spikes = 0usize;
    for chain in trace_chains(&boundary, h, w) {
        let n = chain.len();
        let closed = n >= 3 && adjacent(chain[0], chain[n - 1]);
        for i in 0..n {
            let (prev, next) = if closed {
                (chain[(i + n - 1) % n], chain[(i + 1) % n])
            } else if i == 0 || i + 1 == n {
                continue;
            } else {
                (chain[i - 1], chain[i + 1])
            };
            if turn(prev, chain[i], next) > threshold + 1e-12 {
                spikes += 1;
            }
        }
    }
    spikes as f64 / total as f64
}

/// Area-weighted structural scores over the foreground classes of a label map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StructuralScores {
    pub tv_smooth: f64,
    pub compactness: f64,
    pub edge_regularity: f64,
}

/// Scores of each foreground class's binary mask (classes 1..K−1), averaged
/// with weights proportional to class area. Without foreground the map is
/// perfectly smooth and has no shape: (1, 0, 0).
pub fn structural_scores(map: &LabelMap, k: usize) -> StructuralScores {
    let (h, w) = (map.height(), map.width());
    let mut acc = (0.0, 0.0, 0.0);
    let mut area_total = 0usize;
    for c in 1..k.min(255) {
        let mask = map.mask_of(c as u8);
        let area = mask.iter().filter(|&&b| b).count();
        if area == 0 {
            continue;
        }
        let a = area as f64;
        acc.0 += a * tv_smoothness(&mask, h, w);
        acc.1 += a * compactness(&mask, h, w);
        acc.2 += a * edge_regularity(&mask, h, w, CURVATURE_THRESHOLD);
        area_total += area;
    }
    if area_total == 0 {
        return StructuralScores {
            tv_smooth: 1.0,
            compactness: 0.0,
            edge_regularity: 0.0,
        };
    }
    let t = area_total as f64;
    StructuralScores {
        tv_smooth: acc.0 / t,
        compactness: acc.1 / t,
        edge_regularity: acc.2 / t,
    }
}
