//! Raw NHWC kernels behind the differentiable ops.
//!
//! Convolutions lower to im2col + gemm over fixed row chunks. Chunk
//! boundaries never depend on the thread count, and cross-chunk sums are
//! reduced in chunk order, so results are bit-identical with and without
//! the `parallel` feature.

use crate::parallel;
use crate::tensor::Element;

/// Output rows handled by one gemm call.
pub(crate) const ROW_CHUNK: usize = 1024;

/// Geometry of a 2-d convolution from an `h×w×ci` input to `oh×ow×co`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub ci: usize,
    pub kh: usize,
    pub kw: usize,
    pub co: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.kh * self.kw * self.ci
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
    }

    fn in_len(&self) -> usize {
        self.h * self.w * self.ci
    }

    fn out_rows(&self) -> usize {
        self.oh * self.ow
    }

    /// Input coordinate hit by output `o` and kernel tap `k`, if inside.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        let p = (o * stride + k) as isize - pad as isize;
        (p >= 0 && (p as usize) < extent).then_some(p as usize)
    }
}

/// Fills `cols` with the patches of output rows `r0..r0 + rows` of one sample.
fn im2col<T: Element>(x: &[T], g: &ConvGeom, r0: usize, rows: usize, cols: &mut [T]) {
    let k = g.k();
    for r in 0..rows {
        let (oy, ox) = ((r0 + r) / g.ow, (r0 + r) % g.ow);
        let row = &mut cols[r * k..(r + 1) * k];
        for ky in 0..g.kh {
            let iy = ConvGeom::src(oy, ky, g.stride, g.pad_top, g.h);
            for kx in 0..g.kw {
                let dst = &mut row[(ky * g.kw + kx) * g.ci..(ky * g.kw + kx + 1) * g.ci];
                match (iy, ConvGeom::src(ox, kx, g.stride, g.pad_left, g.w)) {
                    (Some(iy), Some(ix)) => {
                        let s = (iy * g.w + ix) * g.ci;
                        dst.copy_from_slice(&x[s..s + g.ci]);
                    }
                    _ => dst.fill(T::zero()),
                }
            }
        }
    }
}

/// Scatter-adds patch gradients back onto one sample's input gradient.
fn col2im<T: Element>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let k = g.k();
    for r in 0..g.out_rows() {
        let (oy, ox) = (r / g.ow, r % g.ow);
        let row = &cols[r * k..(r + 1) * k];
        for ky in 0..g.kh {
            let Some(iy) = ConvGeom::src(oy, ky, g.stride, g.pad_top, g.h) else {
                continue;
            };
            for kx in 0..g.kw {
                let Some(ix) = ConvGeom::src(ox, kx, g.stride, g.pad_left, g.w) else {
                    continue;
                };
                let s = (iy * g.w + ix) * g.ci;
                let src = &row[(ky * g.kw + kx) * g.ci..(ky * g.kw + kx + 1) * g.ci];
                for (d, &v) in dx[s..s + g.ci].iter_mut().zip(src) {
                    *d = *d + v;
                }
            }
        }
    }
}

/// `y = conv(x, w) + bias` with `w` laid out as `(kh, kw, ci, co)`.
pub(crate) fn conv_forward<T: Element>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let (k, rows) = (g.k(), g.out_rows());
    let mut y = vec![T::zero(); g.n * rows * g.co];
    for n in 0..g.n {
        let xn = &x[n * g.in_len()..(n + 1) * g.in_len()];
        let yn = &mut y[n * rows * g.co..(n + 1) * rows * g.co];
        parallel::for_each_chunk_mut(yn, ROW_CHUNK * g.co, |ci, out| {
            let r0 = ci * ROW_CHUNK;
            let m = out.len() / g.co;
            if g.is_pointwise() {
                T::gemm(m, k, g.co, &xn[r0 * k..], k as isize, 1, w, g.co as isize, 1, out, g.co as isize);
            } else {
                let mut cols = vec![T::zero(); m * k];
                im2col(xn, g, r0, m, &mut cols);
                T::gemm(m, k, g.co, &cols, k as isize, 1, w, g.co as isize, 1, out, g.co as isize);
            }
            if let Some(b) = bias {
                for row in out.chunks_mut(g.co) {
                    for (v, &bv) in row.iter_mut().zip(b) {
                        *v = *v + bv;
                    }
                }
            }
        });
    }
    y
}

/// Gradient of `conv_forward` with respect to its input.
pub(crate) fn conv_backward_data<T: Element>(dy: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let (k, rows) = (g.k(), g.out_rows());
    let mut dx = vec![T::zero(); g.n * g.in_len()];
    let mut dcols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * k] };
    for n in 0..g.n {
        let dyn_ = &dy[n * rows * g.co..(n + 1) * rows * g.co];
        let dxn = &mut dx[n * g.in_len()..(n + 1) * g.in_len()];
        // dcols = dy · wᵀ, where w viewed as k×co.
        let target: &mut [T] = if g.is_pointwise() { dxn } else { &mut dcols };
        parallel::for_each_chunk_mut(target, ROW_CHUNK * k, |ci, out| {
            let r0 = ci * ROW_CHUNK;
            let m = out.len() / k;
            T::gemm(m, g.co, k, &dyn_[r0 * g.co..], g.co as isize, 1, w, 1, g.co as isize, out, k as isize);
        });
        if !g.is_pointwise() {
            col2im(&dcols, g, &mut dx[n * g.in_len()..(n + 1) * g.in_len()]);
        }
    }
    dx
}

/// Gradient of `conv_forward` with respect to the `(kh, kw, ci, co)` weight.
pub(crate) fn conv_backward_filter<T: Element>(x: &[T], dy: &[T], g: &ConvGeom) -> Vec<T> {
    let (k, rows) = (g.k(), g.out_rows());
    let chunks_per_sample = rows.div_ceil(ROW_CHUNK);
    let partials = parallel::map_indexed(g.n * chunks_per_sample, |job| {
        let (n, ci) = (job / chunks_per_sample, job % chunks_per_sample);
        let r0 = ci * ROW_CHUNK;
        let m = ROW_CHUNK.min(rows - r0);
        let xn = &x[n * g.in_len()..(n + 1) * g.in_len()];
        let dyc = &dy[(n * rows + r0) * g.co..(n * rows + r0 + m) * g.co];
        let mut part = vec![T::zero(); k * g.co];
        if g.is_pointwise() {
            T::gemm(k, m, g.co, &xn[r0 * k..], 1, k as isize, dyc, g.co as isize, 1, &mut part, g.co as isize);
        } else {
            let mut cols = vec![T::zero(); m * k];
            im2col(xn, g, r0, m, &mut cols);
            T::gemm(k, m, g.co, &cols, 1, k as isize, dyc, g.co as isize, 1, &mut part, g.co as isize);
        }
        part
    });
    let mut dw = vec![T::zero(); k * g.co];
    for part in partials {
        for (d, p) in dw.iter_mut().zip(part) {
            *d = *d + p;
        }
    }
    dw
}

/// Per-channel sum over all rows of an `rows×c` buffer.
pub(crate) fn channel_sum<T: Element>(dy: &[T], c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c];
    for row in dy.chunks(c) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
    out
}

/// Max pooling; returns the output and the flat input index of each maximum.
pub(crate) fn maxpool_forward<T: Element>(
    x: &[T],
    [n, h, w, c]: [usize; 4],
    window: usize,
    stride: usize,
) -> (Vec<T>, Vec<usize>, [usize; 2]) {
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut y = Vec::with_capacity(n * oh * ow * c);
    let mut arg = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = T::neg_infinity();
                    let mut best_i = usize::MAX;
                    // Row-major scan with strict `>` keeps the first maximum.
                    for ky in 0..window {
                        for kx in 0..window {
                            let i = ((b * h + oy * stride + ky) * w + ox * stride + kx) * c + ch;
                            if best_i == usize::MAX || x[i] > best {
                                best = x[i];
                                best_i = i;
                            }
                        }
                    }
                    y.push(best);
                    arg.push(best_i);
                }
            }
        }
    }
    (y, arg, [oh, ow])
}

#[derive(Clone, Copy)]
struct Lerp {
    i0: usize,
    i1: usize,
    t: f64,
}

/// Half-pixel-centre source taps for resizing `inp` samples to `out`.
fn lerp_taps(inp: usize, out: usize) -> Vec<Lerp> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            Lerp { i0, i1, t: src - i0 as f64 }
        })
        .collect()
}

pub(crate) fn bilinear_forward<T: Element>(x: &[T], [n, h, w, c]: [usize; 4], oh: usize, ow: usize) -> Vec<T> {
    let ty = lerp_taps(h, oh);
    let tx = lerp_taps(w, ow);
    let mut y = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for ly in &ty {
            let (wy0, wy1) = (T::c(1.0 - ly.t), T::c(ly.t));
            for lx in &tx {
                let (wx0, wx1) = (T::c(1.0 - lx.t), T::c(lx.t));
                let at = |yy: usize, xx: usize| ((b * h + yy) * w + xx) * c;
                let (p00, p01, p10, p11) = (at(ly.i0, lx.i0), at(ly.i0, lx.i1), at(ly.i1, lx.i0), at(ly.i1, lx.i1));
                for ch in 0..c {
                    let top = x[p00 + ch] * wx0 + x[p01 + ch] * wx1;
                    let bot = x[p10 + ch] * wx0 + x[p11 + ch] * wx1;
                    y.push(top * wy0 + bot * wy1);
                }
            }
        }
    }
    y
}

pub(crate) fn bilinear_backward<T: Element>(dy: &[T], [n, h, w, c]: [usize; 4], oh: usize, ow: usize) -> Vec<T> {
    let ty = lerp_taps(h, oh);
    let tx = lerp_taps(w, ow);
    let mut dx = vec![T::zero(); n * h * w * c];
    let mut it = dy.iter();
    for b in 0..n {
        for ly in &ty {
            let (wy0, wy1) = (T::c(1.0 - ly.t), T::c(ly.t));
            for lx in &tx {
                let (wx0, wx1) = (T::c(1.0 - lx.t), T::c(lx.t));
                let at = |yy: usize, xx: usize| ((b * h + yy) * w + xx) * c;
                let taps = [
                    (at(ly.i0, lx.i0), wy0 * wx0),
                    (at(ly.i0, lx.i1), wy0 * wx1),
                    (at(ly.i1, lx.i0), wy1 * wx0),
                    (at(ly.i1, lx.i1), wy1 * wx1),
                ];
                for ch in 0..c {
                    let g = *it.next().unwrap();
                    for &(p, wt) in &taps {
                        dx[p + ch] = dx[p + ch] + g * wt;
                    }
                }
            }
        }
    }
    dx
}
