//! Forward and backward kernels for the primitive operations.
//!
//! These work on plain [`Tensor`]s so they can be used outside a graph (for
//! inference-only helpers and the uncertainty maps). The graph in
//! `graph.rs` records which kernel produced each node and calls the matching
//! backward kernel.

use super::{split_axis, Tensor};
use crate::error::{Error, Result};

/// `ln(1 + e^x)` without overflow for large `x`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Geometry of a 2-D convolution, validated once per call.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (n, cin, h, w) = match *input {
            [n, c, h, w] => (n, c, h, w),
            _ => {
                return Err(Error::shape(format!(
                    "conv2d input must be 4-D, got {input:?}"
                )))
            }
        };
        let (cout, kcin, kh, kw) = match *kernel {
            [o, i, kh, kw] => (o, i, kh, kw),
            _ => {
                return Err(Error::shape(format!(
                    "conv2d kernel must be 4-D, got {kernel:?}"
                )))
            }
        };
        if kcin != cin {
            return Err(Error::shape(format!(
                "conv2d channel mismatch: input has {cin}, kernel expects {kcin}"
            )));
        }
        if kh != kw || !(kh == 1 || kh == 3) {
            return Err(Error::shape(format!(
                "conv2d supports 1×1 and 3×3 kernels, got {kh}×{kw}"
            )));
        }
        if pad != kh / 2 {
            return Err(Error::invalid(format!(
                "conv2d padding {pad} does not preserve size for a {kh}×{kh} kernel"
            )));
        }
        if !(stride == 1 || stride == 2) {
            return Err(Error::invalid(format!(
                "conv2d stride {stride} unsupported"
            )));
        }
        if h == 0 || w == 0 {
            return Err(Error::shape("conv2d on empty spatial extent"));
        }
        if stride == 2 && (h % 2 != 0 || w % 2 != 0) {
            return Err(Error::shape(format!(
                "stride-2 conv2d needs even spatial extents, got {h}×{w}"
            )));
        }
        Ok(ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            k: kh,
            stride,
            pad,
            ho: h / stride,
            wo: w / stride,
        })
    }

    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }
}

/// Unfold image `n` into a `(cin·k·k) × (ho·wo)` patch matrix.
fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let (k, s, p) = (g.k as isize, g.stride as isize, g.pad as isize);
    let npix = g.out_pixels();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * g.k * g.k) + (ky * k + kx) as usize;
                let dst = &mut col[row * npix..(row + 1) * npix];
                for oy in 0..g.ho {
                    let iy = oy as isize * s + ky - p;
                    let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let srow = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = ox as isize * s + kx - p;
                        *d = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            srow[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Fold a patch-matrix gradient back into image `n`'s input gradient.
fn col2im(col: &[f64], g: &ConvGeom, gx: &mut [f64]) {
    let (k, s, p) = (g.k as isize, g.stride as isize, g.pad as isize);
    let npix = g.out_pixels();
    for ci in 0..g.cin {
        let plane = &mut gx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * g.k * g.k) + (ky * k + kx) as usize;
                let src = &col[row * npix..(row + 1) * npix];
                for oy in 0..g.ho {
                    let iy = oy as isize * s + ky - p;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let prow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = ox as isize * s + kx - p;
                        if ix >= 0 && ix < g.w as isize {
                            prow[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `c (m×n) = alpha·op(a)·op(b) + beta·c`, with `a` as `m×k`
/// (or `k×m` when `ta`) and `b` as `k×n` (or `n×k` when `tb`).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices are at least as long as the strided extents above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Cross-correlation with zero padding.
pub fn conv2d_forward(
    x: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let g = ConvGeom::new(x.shape(), kernel.shape(), stride, pad)?;
    if let Some(b) = bias {
        if b.shape() != [g.cout] {
            return Err(Error::shape(format!(
                "conv2d bias must have shape [{}], got {:?}",
                g.cout,
                b.shape()
            )));
        }
    }
    let npix = g.out_pixels();
    let in_per = g.cin * g.h * g.w;
    let mut out = vec![0.0; g.n * g.cout * npix];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; g.col_rows() * npix]
    };
    for n in 0..g.n {
        let xin = &x.data()[n * in_per..(n + 1) * in_per];
        let dst = &mut out[n * g.cout * npix..(n + 1) * g.cout * npix];
        if let Some(b) = bias {
            for (co, bv) in b.data().iter().enumerate() {
                dst[co * npix..(co + 1) * npix].fill(*bv);
            }
        }
        let patches: &[f64] = if g.is_pointwise() {
            xin
        } else {
            im2col(xin, &g, &mut col);
            &col
        };
        gemm(
            g.cout,
            g.col_rows(),
            npix,
            kernel.data(),
            false,
            patches,
            false,
            1.0,
            dst,
        );
    }
    Tensor::new(&[g.n, g.cout, g.ho, g.wo], out)
}

/// Gradients of a convolution with respect to input, kernel and bias.
pub fn conv2d_backward(
    x: &Tensor,
    kernel: &Tensor,
    stride: usize,
    pad: usize,
    gout: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let g = ConvGeom::new(x.shape(), kernel.shape(), stride, pad)?;
    let npix = g.out_pixels();
    let in_per = g.cin * g.h * g.w;
    let rows = g.col_rows();
    let mut gx = vec![0.0; x.numel()];
    let mut gw = vec![0.0; kernel.numel()];
    let mut gb = vec![0.0; g.cout];
    let mut col = vec![0.0; rows * npix];
    for n in 0..g.n {
        let xin = &x.data()[n * in_per..(n + 1) * in_per];
        let go = &gout[n * g.cout * npix..(n + 1) * g.cout * npix];
        for (co, b) in gb.iter_mut().enumerate() {
            *b += go[co * npix..(co + 1) * npix].iter().sum::<f64>();
        }
        // kernel gradient: go (cout × npix) · colᵀ (npix × rows)
        if g.is_pointwise() {
            gemm(g.cout, npix, rows, go, false, xin, true, 1.0, &mut gw);
        } else {
            im2col(xin, &g, &mut col);
            gemm(g.cout, npix, rows, go, false, &col, true, 1.0, &mut gw);
        }
        // input gradient: kernelᵀ (rows × cout) · go (cout × npix)
        let gxn = &mut gx[n * in_per..(n + 1) * in_per];
        if g.is_pointwise() {
            gemm(rows, g.cout, npix, kernel.data(), true, go, false, 0.0, gxn);
        } else {
            gemm(
                rows,
                g.cout,
                npix,
                kernel.data(),
                true,
                go,
                false,
                0.0,
                &mut col,
            );
            col2im(&col, &g, gxn);
        }
    }
    Ok((gx, gw, gb))
}

/// Source taps for one output coordinate of a half-pixel-centred resize.
#[derive(Clone, Copy, Debug)]
struct Tap {
    i0: usize,
    i1: usize,
    w0: f64,
    w1: f64,
}

fn taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let frac = pos - i0 as f64;
            Tap {
                i0,
                i1,
                w0: 1.0 - frac,
                w1: frac,
            }
        })
        .collect()
}

fn check_upsample(shape: &[usize], th: usize, tw: usize) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = match *shape {
        [n, c, h, w] => (n, c, h, w),
        _ => {
            return Err(Error::shape(format!(
                "upsample input must be 4-D, got {shape:?}"
            )))
        }
    };
    if h == 0 || w == 0 || th == 0 || tw == 0 {
        return Err(Error::shape("upsample with zero-sized spatial extent"));
    }
    if th < h || tw < w {
        return Err(Error::invalid(format!(
            "upsample target {th}×{tw} smaller than input {h}×{w}"
        )));
    }
    Ok((n, c, h, w))
}

/// Bilinear resize with half-pixel centres (`align_corners = false`).
pub fn upsample_bilinear(x: &Tensor, th: usize, tw: usize) -> Result<Tensor> {
    let (n, c, h, w) = check_upsample(x.shape(), th, tw)?;
    if th == h && tw == w {
        return Ok(x.clone());
    }
    let ty = taps(h, th);
    let tx = taps(w, tw);
    let mut out = vec![0.0; n * c * th * tw];
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * th * tw..(p + 1) * th * tw];
        for (oy, ry) in ty.iter().enumerate() {
            let r0 = &src[ry.i0 * w..(ry.i0 + 1) * w];
            let r1 = &src[ry.i1 * w..(ry.i1 + 1) * w];
            for (ox, rx) in tx.iter().enumerate() {
                let top = rx.w0 * r0[rx.i0] + rx.w1 * r0[rx.i1];
                let bot = rx.w0 * r1[rx.i0] + rx.w1 * r1[rx.i1];
                dst[oy * tw + ox] = ry.w0 * top + ry.w1 * bot;
            }
        }
    }
    Tensor::new(&[n, c, th, tw], out)
}

pub fn upsample_bilinear_backward(
    in_shape: &[usize],
    th: usize,
    tw: usize,
    gout: &[f64],
) -> Result<Vec<f64>> {
    let (n, c, h, w) = check_upsample(in_shape, th, tw)?;
    if th == h && tw == w {
        return Ok(gout.to_vec());
    }
    let ty = taps(h, th);
    let tx = taps(w, tw);
    let mut gx = vec![0.0; n * c * h * w];
    for p in 0..n * c {
        let go = &gout[p * th * tw..(p + 1) * th * tw];
        let dst = &mut gx[p * h * w..(p + 1) * h * w];
        for (oy, ry) in ty.iter().enumerate() {
            for (ox, rx) in tx.iter().enumerate() {
                let gv = go[oy * tw + ox];
                dst[ry.i0 * w + rx.i0] += ry.w0 * rx.w0 * gv;
                dst[ry.i0 * w + rx.i1] += ry.w0 * rx.w1 * gv;
                dst[ry.i1 * w + rx.i0] += ry.w1 * rx.w0 * gv;
                dst[ry.i1 * w + rx.i1] += ry.w1 * rx.w1 * gv;
            }
        }
    }
    Ok(gx)
}

/// Saved statistics of a layer normalization, one entry per image.
#[derive(Clone, Debug)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub rstd: Vec<f64>,
}

/// Normalize each image over all of its C×H×W values, then apply a
/// per-channel scale and shift.
pub fn layer_norm(
    x: &Tensor,
    gain: &Tensor,
    shift: &Tensor,
    eps: f64,
) -> Result<(Tensor, NormStats)> {
    let (n, c, h, w) = x.dims4()?;
    if gain.shape() != [c] || shift.shape() != [c] {
        return Err(Error::shape(format!(
            "layer norm affine parameters must have shape [{c}]"
        )));
    }
    let per = c * h * w;
    let hw = h * w;
    let mut out = vec![0.0; x.numel()];
    let mut stats = NormStats {
        mean: Vec::with_capacity(n),
        rstd: Vec::with_capacity(n),
    };
    for i in 0..n {
        let xs = &x.data()[i * per..(i + 1) * per];
        let mean = xs.iter().sum::<f64>() / per as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        let os = &mut out[i * per..(i + 1) * per];
        for ch in 0..c {
            let (gv, sv) = (gain.data()[ch], shift.data()[ch]);
            for j in ch * hw..(ch + 1) * hw {
                os[j] = gv * (xs[j] - mean) * rstd + sv;
            }
        }
        stats.mean.push(mean);
        stats.rstd.push(rstd);
    }
    Ok((Tensor::new(x.shape(), out)?, stats))
}

pub fn layer_norm_backward(
    x: &Tensor,
    gain: &Tensor,
    stats: &NormStats,
    gout: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (n, c, h, w) = x.dims4()?;
    let per = c * h * w;
    let hw = h * w;
    let mut gx = vec![0.0; x.numel()];
    let mut ggain = vec![0.0; c];
    let mut gshift = vec![0.0; c];
    let mut xhat = vec![0.0; per];
    let mut gxhat = vec![0.0; per];
    for i in 0..n {
        let xs = &x.data()[i * per..(i + 1) * per];
        let go = &gout[i * per..(i + 1) * per];
        let (mean, rstd) = (stats.mean[i], stats.rstd[i]);
        for ch in 0..c {
            for j in ch * hw..(ch + 1) * hw {
                xhat[j] = (xs[j] - mean) * rstd;
                gxhat[j] = go[j] * gain.data()[ch];
                ggain[ch] += go[j] * xhat[j];
                gshift[ch] += go[j];
            }
        }
        let m1 = gxhat.iter().sum::<f64>() / per as f64;
        let m2 = gxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / per as f64;
        let gs = &mut gx[i * per..(i + 1) * per];
        for j in 0..per {
            gs[j] = rstd * (gxhat[j] - m1 - xhat[j] * m2);
        }
    }
    Ok((gx, ggain, gshift))
}

/// Numerically stable softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = split_axis(x.shape(), axis)?;
    let mut out = vec![0.0; x.numel()];
    let src = x.data();
    for o in 0..outer {
        let base = o * len * inner;
        for i in 0..inner {
            let idx = |a: usize| base + a * inner + i;
            let max = (0..len)
                .map(|a| src[idx(a)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for a in 0..len {
                let e = (src[idx(a)] - max).exp();
                out[idx(a)] = e;
                sum += e;
            }
            for a in 0..len {
                out[idx(a)] /= sum;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

pub fn log_softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = split_axis(x.shape(), axis)?;
    let mut out = vec![0.0; x.numel()];
    let src = x.data();
    for o in 0..outer {
        let base = o * len * inner;
        for i in 0..inner {
            let idx = |a: usize| base + a * inner + i;
            let max = (0..len)
                .map(|a| src[idx(a)])
                .fold(f64::NEG_INFINITY, f64::max);
            let lse = max
                + (0..len)
                    .map(|a| (src[idx(a)] - max).exp())
                    .sum::<f64>()
                    .ln();
            for a in 0..len {
                out[idx(a)] = src[idx(a)] - lse;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent scalar bilinear sampler with half-pixel centres.
    fn bilinear_ref(img: &[Vec<f64>], oy: usize, ox: usize, th: usize, tw: usize) -> f64 {
        let (h, w) = (img.len(), img[0].len());
        let sy = ((oy as f64 + 0.5) * h as f64 / th as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let sx = ((ox as f64 + 0.5) * w as f64 / tw as f64 - 0.5).clamp(0.0, (w - 1) as f64);
        let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
        let top = img[y0][x0] * (1.0 - fx) + img[y0][x1] * fx;
        let bot = img[y1][x0] * (1.0 - fx) + img[y1][x1] * fx;
        top * (1.0 - fy) + bot * fy
    }

    #[test]
    fn upsample_constant_stays_constant() {
        let x = Tensor::full(&[1, 2, 3, 5], 3.0);
        let y = upsample_bilinear(&x, 12, 20).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn upsample_single_pixel_broadcasts() {
        let x = Tensor::full(&[1, 1, 1, 1], 1.75);
        let y = upsample_bilinear(&x, 4, 4).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert!(y.data().iter().all(|&v| v == 1.75));
    }

    #[test]
    fn upsample_2x2_matches_scalar_oracle() {
        let img = vec![vec![0.0, 1.0], vec![2.0, 3.0]];
        let x = Tensor::new(&[1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = upsample_bilinear(&x, 4, 4).unwrap();
        for oy in 0..4 {
            for ox in 0..4 {
                let expect = bilinear_ref(&img, oy, ox, 4, 4);
                assert!((y.at4(0, 0, oy, ox) - expect).abs() < 1e-15);
            }
        }
        // frozen from the oracle: first row is 0, .25, .75, 1
        assert_eq!(&y.data()[0..4], &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn upsample_rejects_empty_and_shrinking() {
        assert!(upsample_bilinear(&Tensor::zeros(&[1, 1, 0, 2]), 4, 4).is_err());
        assert!(upsample_bilinear(&Tensor::zeros(&[1, 1, 4, 4]), 2, 2).is_err());
    }

    fn conv_ref(x: &Tensor, k: &Tensor, b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
        let (n, cin, h, w) = x.dims4().unwrap();
        let (cout, _, kk, _) = k.dims4().unwrap();
        let (ho, wo) = (h / stride, w / stride);
        let mut out = vec![0.0; n * cout * ho * wo];
        for i in 0..n {
            for o in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b[o];
                        for c in 0..cin {
                            for ky in 0..kk {
                                for kx in 0..kk {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w
                                    {
                                        acc += x.at4(i, c, iy as usize, ix as usize)
                                            * k.at4(o, c, ky, kx);
                                    }
                                }
                            }
                        }
                        out[((i * cout + o) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn lcg(seed: u64) -> impl FnMut(usize) -> f64 {
        let mut s = seed;
        move |_| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
    }

    #[test]
    fn conv_matches_nested_loop_reference() {
        let x = Tensor::from_fn(&[2, 3, 5, 5], lcg(1));
        let k = Tensor::from_fn(&[4, 3, 3, 3], lcg(2));
        let b = Tensor::from_fn(&[4], lcg(3));
        let y = conv2d_forward(&x, &k, Some(&b), 1, 1).unwrap();
        let r = conv_ref(&x, &k, b.data(), 1, 1);
        for (a, e) in y.data().iter().zip(&r) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn strided_conv_matches_reference() {
        let x = Tensor::from_fn(&[1, 2, 6, 8], lcg(4));
        let k = Tensor::from_fn(&[3, 2, 3, 3], lcg(5));
        let y = conv2d_forward(&x, &k, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3, 4]);
        let r = conv_ref(&x, &k, &[0.0; 3], 2, 1);
        for (a, e) in y.data().iter().zip(&r) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_pointwise_conv() {
        let x = Tensor::from_fn(&[1, 3, 4, 4], lcg(6));
        let k = Tensor::from_fn(&[3, 3, 1, 1], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
        let y = conv2d_forward(&x, &k, None, 1, 0).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn impulse_through_ones_kernel_gives_plateau() {
        let mut x = Tensor::zeros(&[1, 1, 7, 7]);
        x.data_mut()[3 * 7 + 3] = 1.0;
        let k = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d_forward(&x, &k, None, 1, 1).unwrap();
        for yy in 0..7 {
            for xx in 0..7 {
                let inside = (2..=4).contains(&yy) && (2..=4).contains(&xx);
                assert_eq!(y.at4(0, 0, yy, xx), if inside { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn conv_rejects_bad_geometry() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 3, 3, 3]), None, 1, 1).is_err());
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 2, 5, 5]), None, 1, 2).is_err());
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 2, 3, 3]), None, 1, 0).is_err());
    }

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(50.0) - 50.0).abs() < 1e-9);
        assert!(softplus(-50.0) > 0.0);
        assert!(softplus(1000.0).is_finite());
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn softmax_closed_forms() {
        let x = Tensor::new(&[2], vec![0.0, 2f64.ln()]).unwrap();
        let y = softmax(&x, 0).unwrap();
        assert!((y.data()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((y.data()[1] - 2.0 / 3.0).abs() < 1e-15);
        let u = softmax(&Tensor::full(&[1, 4, 2, 2], 7.0), 1).unwrap();
        assert!(u.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let x = Tensor::from_fn(&[7], lcg(9));
        let y = softmax(&x, 0).unwrap();
        let z: f64 = x.data().iter().map(|v| v.exp()).sum();
        for (a, v) in y.data().iter().zip(x.data()) {
            assert!((a - v.exp() / z).abs() < 1e-12);
        }
    }
}
