//! Exact Euclidean distance transform by two separable lower-envelope passes.

/// Squared distance along one line to the nearest feature, given `f` with 0
/// at features and infinity elsewhere.
fn envelope_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    // Skip leading positions with infinite cost so parabola intersections
    // never involve inf − inf.
    let mut first = None;
    for (q, &fq) in f.iter().enumerate() {
        if fq.is_finite() {
            first = Some(q);
            break;
        }
    }
    let Some(first) = first else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    v[0] = first;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s =
                ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                // k == 0 cannot reach here: z[0] is −∞.
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every pixel to the nearest `true` pixel of
/// an `h×w` mask; infinity everywhere when the mask is empty.
pub fn squared_edt(mask: &[bool], h: usize, w: usize) -> Vec<f64> {
    assert_eq!(mask.len(), h * w, "mask size");
    let n = h.max(w);
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    let mut line = vec![0.0; n];
    let mut res = vec![0.0; n];
    let mut grid: Vec<f64> = mask
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    for x in 0..w {
        for y in 0..h {
            line[y] = grid[y * w + x];
        }
        envelope_1d(&line[..h], &mut res[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = res[y];
        }
    }
    for y in 0..h {
        line[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        envelope_1d(&line[..w], &mut res[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&res[..w]);
    }
    grid
}

/// Euclidean distance to the nearest `true` pixel; infinity when none exist.
pub fn edt(mask: &[bool], h: usize, w: usize) -> Vec<f64> {
    squared_edt(mask, h, w).into_iter().map(f64::sqrt).collect()
}
