//! Forward kernels and their analytic backward passes.
//!
//! Batched kernels process images independently (in parallel when the
//! rayon pool has more than one thread); reductions across the batch are
//! always summed in batch order so results do not depend on thread count.

use rayon::prelude::*;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Geometry of a 2-d convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kh) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kw) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.out_height() * self.out_width()
    }
}

fn conv_geometry<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, ConvGeometry)> {
    let (n, c, h, w) = input.dims4("conv2d")?;
    let (f, kc, kh, kw) = kernel.dims4("conv2d")?;
    if kc != c {
        return Err(Error::shape("conv2d", input.shape(), kernel.shape()));
    }
    if [n, c, h, w, f].contains(&0) {
        return Err(Error::InvalidArgument("conv2d extents must be positive".into()));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "conv2d kernel extents must be odd, got {kh}x{kw}"
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
    }
    let (ph, pw) = (h + 2 * padding, w + 2 * padding);
    if ph < kh || pw < kw || (ph - kh) % stride != 0 || (pw - kw) % stride != 0 {
        return Err(Error::shape("conv2d", input.shape(), kernel.shape()));
    }
    Ok((
        n,
        f,
        ConvGeometry {
            channels: c,
            height: h,
            width: w,
            kh,
            kw,
            stride,
            padding,
        },
    ))
}

/// Range of output columns `ox` whose input column `ox*stride + kx - pad`
/// falls inside `[0, width)`.
fn valid_cols(g: &ConvGeometry, kx: usize, ow: usize) -> (usize, usize) {
    let s = g.stride;
    let lo = g.padding.saturating_sub(kx).div_ceil(s);
    let hi = if g.width + g.padding > kx {
        (g.width + g.padding - kx).div_ceil(s).min(ow)
    } else {
        0
    };
    (lo.min(hi), hi)
}

fn im2col<T: Scalar>(image: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let p = oh * ow;
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(g, kx, ow);
                for oy in 0..oh {
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    let iy = oy * g.stride + ky;
                    if iy < g.padding || iy - g.padding >= g.height {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[(iy - g.padding) * g.width..(iy - g.padding + 1) * g.width];
                    out_row[..lo].fill(T::zero());
                    out_row[hi..].fill(T::zero());
                    let start = lo * g.stride + kx - g.padding;
                    if g.stride == 1 {
                        out_row[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for (j, o) in out_row[lo..hi].iter_mut().enumerate() {
                            *o = src[start + j * g.stride];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, image: &mut [T]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let p = oh * ow;
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(g, kx, ow);
                for oy in 0..oh {
                    let iy = oy * g.stride + ky;
                    if iy < g.padding || iy - g.padding >= g.height {
                        continue;
                    }
                    let dst = &mut plane[(iy - g.padding) * g.width..(iy - g.padding + 1) * g.width];
                    let start = lo * g.stride + kx - g.padding;
                    let srow = &src[oy * ow + lo..oy * ow + hi];
                    if g.stride == 1 {
                        for (d, &v) in dst[start..start + (hi - lo)].iter_mut().zip(srow) {
                            *d += v;
                        }
                    } else {
                        for (j, &v) in srow.iter().enumerate() {
                            dst[start + j * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Padded copy of one image for the shifted-GEMM path.
///
/// Each channel occupies `hp*wp + kw - 1` elements so that the wide output
/// (which includes `wp - ow` junk columns per row) never reads past its
/// channel.
struct Padded {
    wp: usize,
    channel_stride: usize,
}

impl Padded {
    fn new(g: &ConvGeometry) -> Self {
        let hp = g.height + 2 * g.padding;
        let wp = g.width + 2 * g.padding;
        Self {
            wp,
            channel_stride: hp * wp + g.kw - 1,
        }
    }

    fn len(&self, channels: usize) -> usize {
        channels * self.channel_stride
    }

    fn fill<T: Scalar>(&self, image: &[T], g: &ConvGeometry, buf: &mut [T]) {
        for c in 0..g.channels {
            let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
            let dst = &mut buf[c * self.channel_stride..(c + 1) * self.channel_stride];
            for y in 0..g.height {
                let row = (y + g.padding) * self.wp + g.padding;
                dst[row..row + g.width].copy_from_slice(&plane[y * g.width..(y + 1) * g.width]);
            }
        }
    }

    fn wide_len(&self, g: &ConvGeometry) -> usize {
        g.out_height() * self.wp
    }
}

/// Stride-1 convolution of one image as one GEMM per kernel tap.
fn conv_shifted<T: Scalar>(image: &[T], kernel: &[T], f: usize, g: &ConvGeometry, out: &mut [T]) {
    let pad = Padded::new(g);
    let mut buf = vec![T::zero(); pad.len(g.channels)];
    pad.fill(image, g, &mut buf);
    let n = pad.wide_len(g);
    let taps = g.kh * g.kw;
    let k = g.channels;
    let mut wide = vec![T::zero(); f * n];
    for tap in 0..taps {
        let off = (tap / g.kw) * pad.wp + tap % g.kw;
        let beta = if tap == 0 { T::zero() } else { T::one() };
        T::gemm(f, k, n, &kernel[tap..], (k * taps, taps), &buf[off..], (pad.channel_stride, 1), beta, &mut wide, (n, 1));
    }
    let (oh, ow) = (g.out_height(), g.out_width());
    for fi in 0..f {
        for oy in 0..oh {
            let src = &wide[fi * n + oy * pad.wp..fi * n + oy * pad.wp + ow];
            for (o, &v) in out[(fi * oh + oy) * ow..(fi * oh + oy + 1) * ow].iter_mut().zip(src) {
                *o += v;
            }
        }
    }
}

/// Backward of [`conv_shifted`] for one image; accumulates into `dx`.
fn conv_shifted_backward<T: Scalar>(
    image: &[T],
    kernel: &[T],
    gout: &[T],
    f: usize,
    g: &ConvGeometry,
    dx: &mut [T],
    dk: &mut [T],
) {
    let pad = Padded::new(g);
    let mut buf = vec![T::zero(); pad.len(g.channels)];
    pad.fill(image, g, &mut buf);
    let n = pad.wide_len(g);
    let (oh, ow) = (g.out_height(), g.out_width());
    let mut wide = vec![T::zero(); f * n];
    for fi in 0..f {
        for oy in 0..oh {
            wide[fi * n + oy * pad.wp..fi * n + oy * pad.wp + ow]
                .copy_from_slice(&gout[(fi * oh + oy) * ow..(fi * oh + oy + 1) * ow]);
        }
    }
    let taps = g.kh * g.kw;
    let k = g.channels;
    let mut dbuf = vec![T::zero(); pad.len(g.channels)];
    for tap in 0..taps {
        let off = (tap / g.kw) * pad.wp + tap % g.kw;
        T::gemm(f, n, k, &wide, (n, 1), &buf[off..], (1, pad.channel_stride), T::zero(), &mut dk[tap..], (k * taps, taps));
        T::gemm(k, f, n, &kernel[tap..], (taps, k * taps), &wide, (n, 1), T::one(), &mut dbuf[off..], (pad.channel_stride, 1));
    }
    for c in 0..g.channels {
        let src = &dbuf[c * pad.channel_stride..(c + 1) * pad.channel_stride];
        for y in 0..g.height {
            let row = (y + g.padding) * pad.wp + g.padding;
            dx[(c * g.height + y) * g.width..(c * g.height + y + 1) * g.width]
                .copy_from_slice(&src[row..row + g.width]);
        }
    }
}

/// 2-d cross-correlation: `[N,C,H,W] * [F,C,kh,kw] + [F] -> [N,F,H',W']`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (n, f, g) = conv_geometry(input, kernel, stride, padding)?;
    if bias.shape() != [f] {
        return Err(Error::shape("conv2d bias", kernel.shape(), bias.shape()));
    }
    let (oh, ow) = (g.out_height(), g.out_width());
    let p = g.out_pixels();
    let k = g.patch_len();
    let in_len = g.channels * g.height * g.width;
    let mut out = vec![T::zero(); n * f * p];
    let pointwise = g.kh == 1 && g.kw == 1 && stride == 1 && padding == 0;
    out.par_chunks_mut(f * p).enumerate().for_each(|(i, dst)| {
        let image = &input.data()[i * in_len..(i + 1) * in_len];
        for (fi, plane) in dst.chunks_mut(p).enumerate() {
            plane.fill(bias.data()[fi]);
        }
        if pointwise {
            T::gemm(f, k, p, kernel.data(), (k, 1), image, (p, 1), T::one(), dst, (p, 1));
        } else if stride == 1 {
            conv_shifted(image, kernel.data(), f, &g, dst);
        } else {
            let mut cols = vec![T::zero(); k * p];
            im2col(image, &g, &mut cols);
            T::gemm(f, k, p, kernel.data(), (k, 1), &cols, (p, 1), T::one(), dst, (p, 1));
        }
    });
    Tensor::new(&[n, f, oh, ow], out)
}

/// Gradients of a convolution with respect to its three inputs.
#[derive(Clone, Debug)]
pub struct Conv2dGrads<T> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Conv2dGrads<T>> {
    let (n, f, g) = conv_geometry(input, kernel, stride, padding)?;
    let p = g.out_pixels();
    let k = g.patch_len();
    if grad_out.shape() != [n, f, g.out_height(), g.out_width()] {
        return Err(Error::shape("conv2d_backward", input.shape(), grad_out.shape()));
    }
    let in_len = g.channels * g.height * g.width;
    let pointwise = g.kh == 1 && g.kw == 1 && stride == 1 && padding == 0;
    let mut d_input = vec![T::zero(); input.len()];
    let per_image: Vec<(Vec<T>, Vec<T>)> = d_input
        .par_chunks_mut(in_len)
        .enumerate()
        .map(|(i, dx)| {
            let image = &input.data()[i * in_len..(i + 1) * in_len];
            let gout = &grad_out.data()[i * f * p..(i + 1) * f * p];
            let mut dk = vec![T::zero(); f * k];
            let db: Vec<T> = gout.chunks(p).map(|c| c.iter().copied().sum()).collect();
            if pointwise {
                T::gemm(f, p, k, gout, (p, 1), image, (1, p), T::zero(), &mut dk, (k, 1));
                T::gemm(k, f, p, kernel.data(), (1, k), gout, (p, 1), T::zero(), dx, (p, 1));
            } else if stride == 1 {
                conv_shifted_backward(image, kernel.data(), gout, f, &g, dx, &mut dk);
            } else {
                let mut cols = vec![T::zero(); k * p];
                im2col(image, &g, &mut cols);
                T::gemm(f, p, k, gout, (p, 1), &cols, (1, p), T::zero(), &mut dk, (k, 1));
                T::gemm(k, f, p, kernel.data(), (1, k), gout, (p, 1), T::zero(), &mut cols, (p, 1));
                col2im(&cols, &g, dx);
            }
            (dk, db)
        })
        .collect();
    let mut d_kernel = vec![T::zero(); f * k];
    let mut d_bias = vec![T::zero(); f];
    for (dk, db) in &per_image {
        for (a, &b) in d_kernel.iter_mut().zip(dk) {
            *a += b;
        }
        for (a, &b) in d_bias.iter_mut().zip(db) {
            *a += b;
        }
    }
    Ok(Conv2dGrads {
        input: Tensor::new(input.shape(), d_input)?,
        kernel: Tensor::new(kernel.shape(), d_kernel)?,
        bias: Tensor::new(&[f], d_bias)?,
    })
}

#[inline(always)]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).fast_exp())
}

pub fn silu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v * sigmoid(v))
}

pub fn silu_backward<T: Scalar>(x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != grad.shape() {
        return Err(Error::shape("silu_backward", x.shape(), grad.shape()));
    }
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| {
            let s = sigmoid(v);
            g * s * (T::one() + v * (T::one() - s))
        })
        .collect();
    Tensor::new(x.shape(), data)
}

/// 2x2 mean pooling with stride 2.
pub fn avgpool2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("avgpool2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "avgpool2 needs even spatial extents, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64_lossy(0.25);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.data().chunks(h * w) {
        for oy in 0..oh {
            let r0 = &plane[2 * oy * w..(2 * oy + 1) * w];
            let r1 = &plane[(2 * oy + 1) * w..(2 * oy + 2) * w];
            for ox in 0..ow {
                out.push((r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]) * quarter);
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out)
}

pub fn avgpool2_backward<T: Scalar>(grad: &Tensor<T>) -> Result<Tensor<T>> {
    let up = upsample2_nearest(grad)?;
    Ok(up.map(|g| g * T::from_f64_lossy(0.25)))
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2_nearest<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("upsample2_nearest")?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); n * c * oh * ow];
    for (src, dst) in x.data().chunks(h * w).zip(out.chunks_mut(oh * ow)) {
        for oy in 0..oh {
            let s = &src[(oy / 2) * w..(oy / 2 + 1) * w];
            for (ox, d) in dst[oy * ow..(oy + 1) * ow].iter_mut().enumerate() {
                *d = s[ox / 2];
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out)
}

/// Adjoint of [`upsample2_nearest`]: sums each 2x2 block.
pub fn upsample2_backward<T: Scalar>(grad: &Tensor<T>) -> Result<Tensor<T>> {
    let pooled = avgpool2(grad)?;
    Ok(pooled.map(|g| g * T::from_f64_lossy(4.0)))
}

/// Affine map `x W + b` for `x: [N,D]`, `W: [D,E]`, `b: [E]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d, e) = linear_dims(x, w, b)?;
    let mut out: Vec<T> = (0..n).flat_map(|_| b.data().iter().copied()).collect();
    T::gemm(n, d, e, x.data(), (d, 1), w.data(), (e, 1), T::one(), &mut out, (e, 1));
    Tensor::new(&[n, e], out)
}

fn linear_dims<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(usize, usize, usize)> {
    match (x.shape(), w.shape(), b.shape()) {
        (&[n, d], &[d2, e], &[e2]) if d == d2 && e == e2 => Ok((n, d, e)),
        _ => Err(Error::shape("linear", x.shape(), w.shape())),
    }
}

/// Returns `(dx, dW, db)`.
pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, d) = match x.shape() {
        &[n, d] => (n, d),
        s => return Err(Error::shape("linear_backward", s, w.shape())),
    };
    let e = w.shape().get(1).copied().unwrap_or(0);
    if w.shape() != [d, e] || grad.shape() != [n, e] {
        return Err(Error::shape("linear_backward", w.shape(), grad.shape()));
    }
    let mut dx = vec![T::zero(); n * d];
    T::gemm(n, e, d, grad.data(), (e, 1), w.data(), (1, e), T::zero(), &mut dx, (d, 1));
    let mut dw = vec![T::zero(); d * e];
    T::gemm(d, n, e, x.data(), (1, d), grad.data(), (e, 1), T::zero(), &mut dw, (e, 1));
    let mut db = vec![T::zero(); e];
    for row in grad.data().chunks(e) {
        for (a, &g) in db.iter_mut().zip(row) {
            *a += g;
        }
    }
    Ok((
        Tensor::new(&[n, d], dx)?,
        Tensor::new(&[d, e], dw)?,
        Tensor::new(&[e], db)?,
    ))
}

/// Per-(sample, group) statistics saved by [`group_norm`].
#[derive(Clone, Debug)]
pub struct GroupNormStats {
    pub groups: usize,
    pub mean: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub fn group_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    groups: usize,
    eps: f64,
) -> Result<(Tensor<T>, GroupNormStats)> {
    let (n, c, h, w) = x.dims4("group_norm")?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::InvalidArgument(format!(
            "group_norm: {c} channels not divisible into {groups} groups"
        )));
    }
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape("group_norm", x.shape(), gamma.shape()));
    }
    let cg = c / groups;
    let len = cg * h * w;
    let mut mean = Vec::with_capacity(n * groups);
    let mut rstd = Vec::with_capacity(n * groups);
    let mut out = vec![T::zero(); x.len()];
    for (gi, (src, dst)) in x.data().chunks(len).zip(out.chunks_mut(len)).enumerate() {
        let m = src.iter().map(|v| v.as_f64()).sum::<f64>() / len as f64;
        let var = src.iter().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>() / len as f64;
        let r = 1.0 / (var + eps).sqrt();
        let c0 = (gi % groups) * cg;
        for (ci, (s, d)) in src.chunks(h * w).zip(dst.chunks_mut(h * w)).enumerate() {
            let scale = gamma.data()[c0 + ci].as_f64() * r;
            let shift = beta.data()[c0 + ci].as_f64() - m * scale;
            let (scale, shift) = (T::from_f64_lossy(scale), T::from_f64_lossy(shift));
            for (o, &v) in d.iter_mut().zip(s) {
                *o = v * scale + shift;
            }
        }
        mean.push(m);
        rstd.push(r);
    }
    Ok((Tensor::new(x.shape(), out)?, GroupNormStats { groups, mean, rstd }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn group_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    stats: &GroupNormStats,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (_, c, h, w) = x.dims4("group_norm_backward")?;
    if grad.shape() != x.shape() {
        return Err(Error::shape("group_norm_backward", x.shape(), grad.shape()));
    }
    let groups = stats.groups;
    let cg = c / groups;
    let hw = h * w;
    let len = cg * hw;
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for (gi, ((src, gr), dst)) in x
        .data()
        .chunks(len)
        .zip(grad.data().chunks(len))
        .zip(dx.chunks_mut(len))
        .enumerate()
    {
        let (m, r) = (stats.mean[gi], stats.rstd[gi]);
        let c0 = (gi % groups) * cg;
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for ci in 0..cg {
            let gm = gamma.data()[c0 + ci].as_f64();
            let (mut dg, mut db) = (0.0, 0.0);
            for j in ci * hw..(ci + 1) * hw {
                let xhat = (src[j].as_f64() - m) * r;
                let g = gr[j].as_f64();
                dg += g * xhat;
                db += g;
                sum_dxhat += g * gm;
                sum_dxhat_xhat += g * gm * xhat;
            }
            dgamma[c0 + ci] += dg;
            dbeta[c0 + ci] += db;
        }
        let inv = 1.0 / len as f64;
        for ci in 0..cg {
            let gm = gamma.data()[c0 + ci].as_f64();
            for j in ci * hw..(ci + 1) * hw {
                let xhat = (src[j].as_f64() - m) * r;
                let dxhat = gr[j].as_f64() * gm;
                dst[j] = T::from_f64_lossy(
                    r * (dxhat - inv * sum_dxhat - xhat * inv * sum_dxhat_xhat),
                );
            }
        }
    }
    let to_t = |v: Vec<f64>| Tensor::new(&[c], v.into_iter().map(T::from_f64_lossy).collect());
    Ok((Tensor::new(x.shape(), dx)?, to_t(dgamma)?, to_t(dbeta)?))
}

/// Concatenates two `[N,*,H,W]` tensors along channels.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, ca, h, w) = a.dims4("concat_channels")?;
    let (nb, cb, hb, wb) = b.dims4("concat_channels")?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::shape("concat_channels", a.shape(), b.shape()));
    }
    let (la, lb) = (ca * h * w, cb * h * w);
    let mut out = Vec::with_capacity(a.len() + b.len());
    for i in 0..n {
        out.extend_from_slice(&a.data()[i * la..(i + 1) * la]);
        out.extend_from_slice(&b.data()[i * lb..(i + 1) * lb]);
    }
    Tensor::new(&[n, ca + cb, h, w], out)
}

/// Splits a channel-concatenated gradient back into its two parts.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, first: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = x.dims4("split_channels")?;
    if first > c {
        return Err(Error::shape("split_channels", x.shape(), &[first]));
    }
    let (la, lb) = (first * h * w, (c - first) * h * w);
    let mut a = Vec::with_capacity(n * la);
    let mut b = Vec::with_capacity(n * lb);
    for chunk in x.data().chunks(la + lb) {
        a.extend_from_slice(&chunk[..la]);
        b.extend_from_slice(&chunk[la..]);
    }
    Ok((
        Tensor::new(&[n, first, h, w], a)?,
        Tensor::new(&[n, c - first, h, w], b)?,
    ))
}

/// Adds a per-sample, per-channel offset `[N,C]` to `[N,C,H,W]`.
pub fn add_channel_bias<T: Scalar>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("add_channel_bias")?;
    if bias.shape() != [n, c] {
        return Err(Error::shape("add_channel_bias", x.shape(), bias.shape()));
    }
    let mut out = x.clone();
    for (plane, &b) in out.data_mut().chunks_mut(h * w).zip(bias.data()) {
        for v in plane {
            *v += b;
        }
    }
    Ok(out)
}

/// Gradient of [`add_channel_bias`] with respect to the bias.
pub fn channel_bias_backward<T: Scalar>(grad: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = grad.dims4("channel_bias_backward")?;
    let data = grad.data().chunks(h * w).map(|p| p.iter().copied().sum()).collect();
    Tensor::new(&[n, c], data)
}

/// Mean pixel-wise cross-entropy and its gradient with respect to the logits.
///
/// `target` holds `N*H*W` class indices in row-major order.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    target: &[u8],
) -> Result<(f64, Tensor<T>)> {
    let (n, c, h, w) = logits.dims4("softmax_cross_entropy")?;
    let hw = h * w;
    if target.len() != n * hw {
        return Err(Error::shape("softmax_cross_entropy", logits.shape(), &[target.len()]));
    }
    if let Some((i, &t)) = target.iter().enumerate().find(|(_, &t)| t as usize >= c) {
        return Err(Error::InvalidArgument(format!(
            "class index {t} at pixel {i} out of range for {c} classes"
        )));
    }
    let count = (n * hw) as f64;
    let mut grad = vec![T::zero(); logits.len()];
    let mut loss = 0.0;
    let mut probs = vec![0.0f64; c];
    for i in 0..n {
        let base = i * c * hw;
        for p in 0..hw {
            let logit = |k: usize| logits.data()[base + k * hw + p].as_f64();
            let max = (0..c).map(logit).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (k, pr) in probs.iter_mut().enumerate() {
                *pr = (logit(k) - max).exp();
                z += *pr;
            }
            let t = target[i * hw + p] as usize;
            loss += z.ln() - (logit(t) - max);
            for (k, pr) in probs.iter().enumerate() {
                let onehot = if k == t { 1.0 } else { 0.0 };
                grad[base + k * hw + p] = T::from_f64_lossy((pr / z - onehot) / count);
            }
        }
    }
    Ok((loss / count, Tensor::new(logits.shape(), grad)?))
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("mse_loss", pred.shape(), target.shape()));
    }
    let count = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p.as_f64() - t.as_f64();
            loss += d * d;
            T::from_f64_lossy(2.0 * d / count)
        })
        .collect();
    Ok((loss / count, Tensor::new(pred.shape(), grad)?))
}
