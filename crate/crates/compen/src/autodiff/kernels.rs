//! Raw numeric kernels shared by the autodiff ops and the simulator.
//!
//! Convolutions run as im2col plus a broadcast-saxpy matrix multiply; the
//! inner loops are independent-lane FMAs over contiguous rows, which the
//! compiler vectorizes. Every output element is produced by a single task
//! with a fixed sequential reduction order, so results are bitwise
//! identical for any thread count.

use rayon::prelude::*;

use super::tensor::Scalar;

/// Output spatial size of a strided convolution (floor semantics).
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    assert!(
        input + 2 * padding >= kernel,
        "kernel {} larger than padded input {}",
        kernel,
        input + 2 * padding
    );
    (input + 2 * padding - kernel) / stride + 1
}

/// Output spatial size of a transposed convolution.
pub fn conv_transpose_out_dim(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> usize {
    (input - 1) * stride + kernel + output_padding - 2 * padding
}

#[derive(Clone, Copy)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

#[derive(Clone, Copy)]
pub struct ConvTGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

/// Relation between a position lattice and an image: position (py, px)
/// with kernel offset (ky, kx) touches image pixel
/// (py*stride + ky - pad, px*stride + kx - pad).
#[derive(Clone, Copy)]
struct ColGeom {
    ch: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    pos_h: usize,
    pos_w: usize,
    img_h: usize,
    img_w: usize,
}

impl ColGeom {
    /// Valid position range [lo, hi) for kernel offset k along one axis.
    #[inline]
    fn valid(&self, k: usize, img_dim: usize, pos_dim: usize) -> (usize, usize) {
        let lo = if k >= self.pad {
            0
        } else {
            (self.pad - k).div_ceil(self.stride)
        };
        let hi_num = img_dim + self.pad;
        let hi = if hi_num > k {
            ((hi_num - 1 - k) / self.stride + 1).min(pos_dim)
        } else {
            0
        };
        (lo.min(pos_dim), hi)
    }
}

/// Gathers image patches: cols[(c,ky,kx), (py,px)] = img[c, mapped pixel]
/// (zero outside).
fn im2col<E: Scalar>(img: &[E], g: ColGeom, cols: &mut [E]) {
    let pos = g.pos_h * g.pos_w;
    debug_assert_eq!(cols.len(), g.ch * g.kh * g.kw * pos);
    debug_assert_eq!(img.len(), g.ch * g.img_h * g.img_w);
    let mut row = 0usize;
    for c in 0..g.ch {
        let plane = &img[c * g.img_h * g.img_w..(c + 1) * g.img_h * g.img_w];
        for ky in 0..g.kh {
            let (py_lo, py_hi) = g.valid(ky, g.img_h, g.pos_h);
            for kx in 0..g.kw {
                let (px_lo, px_hi) = g.valid(kx, g.img_w, g.pos_w);
                let dst = &mut cols[row * pos..(row + 1) * pos];
                dst.fill(E::ZERO);
                if px_hi > px_lo {
                    for py in py_lo..py_hi {
                        let iy = py * g.stride + ky - g.pad;
                        let src_row = &plane[iy * g.img_w..(iy + 1) * g.img_w];
                        let drow = &mut dst[py * g.pos_w..(py + 1) * g.pos_w];
                        if g.stride == 1 {
                            let ix0 = px_lo + kx - g.pad;
                            drow[px_lo..px_hi]
                                .copy_from_slice(&src_row[ix0..ix0 + (px_hi - px_lo)]);
                        } else {
                            for px in px_lo..px_hi {
                                drow[px] = src_row[px * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Transposed layout: cols_t[(py,px), (c,ky,kx)].
fn im2col_t<E: Scalar>(img: &[E], g: ColGeom, cols_t: &mut [E]) {
    let kk = g.kh * g.kw;
    let rowlen = g.ch * kk;
    debug_assert_eq!(cols_t.len(), g.pos_h * g.pos_w * rowlen);
    cols_t.fill(E::ZERO);
    for c in 0..g.ch {
        let plane = &img[c * g.img_h * g.img_w..(c + 1) * g.img_h * g.img_w];
        for ky in 0..g.kh {
            let (py_lo, py_hi) = g.valid(ky, g.img_h, g.pos_h);
            for kx in 0..g.kw {
                let (px_lo, px_hi) = g.valid(kx, g.img_w, g.pos_w);
                let col = c * kk + ky * g.kw + kx;
                for py in py_lo..py_hi {
                    let iy = py * g.stride + ky - g.pad;
                    let src_row = &plane[iy * g.img_w..(iy + 1) * g.img_w];
                    for px in px_lo..px_hi {
                        cols_t[(py * g.pos_w + px) * rowlen + col] =
                            src_row[px * g.stride + kx - g.pad];
                    }
                }
            }
        }
    }
}

/// Scatter-adds patch columns back into the image (adjoint of `im2col`).
fn col2im<E: Scalar>(cols: &[E], g: ColGeom, img: &mut [E]) {
    let pos = g.pos_h * g.pos_w;
    let mut row = 0usize;
    for c in 0..g.ch {
        let plane = &mut img[c * g.img_h * g.img_w..(c + 1) * g.img_h * g.img_w];
        for ky in 0..g.kh {
            let (py_lo, py_hi) = g.valid(ky, g.img_h, g.pos_h);
            for kx in 0..g.kw {
                let (px_lo, px_hi) = g.valid(kx, g.img_w, g.pos_w);
                let src = &cols[row * pos..(row + 1) * pos];
                if px_hi > px_lo {
                    for py in py_lo..py_hi {
                        let iy = py * g.stride + ky - g.pad;
                        let drow = &mut plane[iy * g.img_w..(iy + 1) * g.img_w];
                        let srow = &src[py * g.pos_w..(py + 1) * g.pos_w];
                        if g.stride == 1 {
                            let ix0 = px_lo + kx - g.pad;
                            for (d, s) in drow[ix0..ix0 + (px_hi - px_lo)]
                                .iter_mut()
                                .zip(srow[px_lo..px_hi].iter())
                            {
                                *d += *s;
                            }
                        } else {
                            for px in px_lo..px_hi {
                                drow[px * g.stride + kx - g.pad] += srow[px];
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// c[M,N] = a[M,K] * b[K,N] (+ c when `accumulate`), row-major;
/// broadcast-saxpy over contiguous rows. Parallel over output rows when
/// requested; the per-row reduction order is fixed either way.
fn gemm<E: Scalar>(
    a: &[E],
    b: &[E],
    c: &mut [E],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
    parallel: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let row = |(i, c_row): (usize, &mut [E])| {
        if !accumulate {
            c_row.fill(E::ZERO);
        }
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == E::ZERO {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row.iter()) {
                *cv = bv.mul_add(av, *cv);
            }
        }
    };
    if parallel {
        c.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        c.chunks_mut(n).enumerate().for_each(row);
    }
}

fn transpose<E: Scalar>(a: &[E], rows: usize, cols: usize) -> Vec<E> {
    let mut t = vec![E::ZERO; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

/// Cross-correlation forward: x[n,cin,h,w] * wgt[cout,cin,kh,kw] ->
/// out[n,cout,oh,ow].
pub fn conv2d_fwd<E: Scalar>(
    x: &[E],
    wgt: &[E],
    bias: Option<&[E]>,
    g: ConvGeom,
    out: &mut [E],
) {
    let cg = ColGeom {
        ch: g.cin,
        kh: g.kh,
        kw: g.kw,
        stride: g.stride,
        pad: g.padding,
        pos_h: g.oh,
        pos_w: g.ow,
        img_h: g.h,
        img_w: g.w,
    };
    let kk = g.cin * g.kh * g.kw;
    let pos = g.oh * g.ow;
    let in_sz = g.cin * g.h * g.w;
    let out_sz = g.cout * pos;
    let single = g.n == 1;
    out.par_chunks_mut(out_sz)
        .zip(x.par_chunks(in_sz))
        .for_each(|(o, xb)| {
            let mut cols = vec![E::ZERO; kk * pos];
            im2col(xb, cg, &mut cols);
            gemm(wgt, &cols, o, g.cout, kk, pos, false, single);
            if let Some(bias) = bias {
                for (co, chunk) in o.chunks_mut(pos).enumerate() {
                    let bv = bias[co];
                    if bv != E::ZERO {
                        for v in chunk {
                            *v += bv;
                        }
                    }
                }
            }
        });
}

/// Gradient of conv2d w.r.t. its input.
pub fn conv2d_grad_input<E: Scalar>(gy: &[E], wgt: &[E], g: ConvGeom, gx: &mut [E]) {
    let cg = ColGeom {
        ch: g.cin,
        kh: g.kh,
        kw: g.kw,
        stride: g.stride,
        pad: g.padding,
        pos_h: g.oh,
        pos_w: g.ow,
        img_h: g.h,
        img_w: g.w,
    };
    let kk = g.cin * g.kh * g.kw;
    let pos = g.oh * g.ow;
    let in_sz = g.cin * g.h * g.w;
    let out_sz = g.cout * pos;
    let wt = transpose(wgt, g.cout, kk); // [kk, cout]
    let single = g.n == 1;
    gx.par_chunks_mut(in_sz)
        .zip(gy.par_chunks(out_sz))
        .for_each(|(gxp, gyb)| {
            let mut cols = vec![E::ZERO; kk * pos];
            gemm(&wt, gyb, &mut cols, kk, g.cout, pos, false, single);
            gxp.fill(E::ZERO);
            col2im(&cols, cg, gxp);
        });
}

/// Gradient of conv2d w.r.t. the weight (accumulated over the batch in a
/// fixed order).
pub fn conv2d_grad_weight<E: Scalar>(x: &[E], gy: &[E], g: ConvGeom, gw: &mut [E]) {
    let cg = ColGeom {
        ch: g.cin,
        kh: g.kh,
        kw: g.kw,
        stride: g.stride,
        pad: g.padding,
        pos_h: g.oh,
        pos_w: g.ow,
        img_h: g.h,
        img_w: g.w,
    };
    let kk = g.cin * g.kh * g.kw;
    let pos = g.oh * g.ow;
    let in_sz = g.cin * g.h * g.w;
    let out_sz = g.cout * pos;
    let mut cols_t = vec![E::ZERO; pos * kk];
    for b in 0..g.n {
        im2col_t(&x[b * in_sz..(b + 1) * in_sz], cg, &mut cols_t);
        gemm(
            &gy[b * out_sz..(b + 1) * out_sz],
            &cols_t,
            gw,
            g.cout,
            pos,
            kk,
            true,
            true,
        );
    }
}

/// Sums gy over batch and spatial dims, one entry per output channel.
pub fn conv2d_grad_bias<E: Scalar>(gy: &[E], n: usize, cout: usize, plane: usize, gb: &mut [E]) {
    for co in 0..cout {
        let mut acc = E::ZERO;
        for b in 0..n {
            for v in &gy[(b * cout + co) * plane..(b * cout + co + 1) * plane] {
                acc += *v;
            }
        }
        gb[co] += acc;
    }
}

fn convt_colgeom(g: ConvTGeom) -> ColGeom {
    ColGeom {
        ch: g.cout,
        kh: g.kh,
        kw: g.kw,
        stride: g.stride,
        pad: g.padding,
        pos_h: g.h,
        pos_w: g.w,
        img_h: g.oh,
        img_w: g.ow,
    }
}

/// Transposed convolution forward; weight layout [cin,cout,kh,kw].
pub fn convt2d_fwd<E: Scalar>(
    x: &[E],
    wgt: &[E],
    bias: Option<&[E]>,
    g: ConvTGeom,
    out: &mut [E],
) {
    let cg = convt_colgeom(g);
    let kk = g.cout * g.kh * g.kw;
    let posn = g.h * g.w;
    let in_sz = g.cin * posn;
    let out_sz = g.cout * g.oh * g.ow;
    let wt = transpose(wgt, g.cin, kk); // [kk, cin]
    let single = g.n == 1;
    out.par_chunks_mut(out_sz)
        .zip(x.par_chunks(in_sz))
        .for_each(|(o, xb)| {
            let mut cols = vec![E::ZERO; kk * posn];
            gemm(&wt, xb, &mut cols, kk, g.cin, posn, false, single);
            match bias {
                Some(bias) => {
                    for (co, chunk) in o.chunks_mut(g.oh * g.ow).enumerate() {
                        chunk.fill(bias[co]);
                    }
                }
                None => o.fill(E::ZERO),
            }
            col2im(&cols, cg, o);
        });
}

/// Gradient of convt2d w.r.t. its input (gather; adjoint of the scatter).
pub fn convt2d_grad_input<E: Scalar>(gy: &[E], wgt: &[E], g: ConvTGeom, gx: &mut [E]) {
    let cg = convt_colgeom(g);
    let kk = g.cout * g.kh * g.kw;
    let posn = g.h * g.w;
    let in_sz = g.cin * posn;
    let out_sz = g.cout * g.oh * g.ow;
    let single = g.n == 1;
    gx.par_chunks_mut(in_sz)
        .zip(gy.par_chunks(out_sz))
        .for_each(|(gxp, gyb)| {
            let mut cols = vec![E::ZERO; kk * posn];
            im2col(gyb, cg, &mut cols);
            gemm(wgt, &cols, gxp, g.cin, kk, posn, false, single);
        });
}

/// Gradient of convt2d w.r.t. the weight.
pub fn convt2d_grad_weight<E: Scalar>(x: &[E], gy: &[E], g: ConvTGeom, gw: &mut [E]) {
    let cg = convt_colgeom(g);
    let kk = g.cout * g.kh * g.kw;
    let posn = g.h * g.w;
    let in_sz = g.cin * posn;
    let out_sz = g.cout * g.oh * g.ow;
    let mut cols_t = vec![E::ZERO; posn * kk];
    for b in 0..g.n {
        im2col_t(&gy[b * out_sz..(b + 1) * out_sz], cg, &mut cols_t);
        gemm(
            &x[b * in_sz..(b + 1) * in_sz],
            &cols_t,
            gw,
            g.cin,
            posn,
            kk,
            true,
            true,
        );
    }
}

/// Pixel coordinates are snapped to integers when within this distance, so
/// that a lattice grid reproduces its input bitwise.
const SNAP: f64 = 1e-5;

#[derive(Clone, Copy)]
pub struct SampleTap {
    pub x0: i64,
    pub y0: i64,
    pub fx: f64,
    pub fy: f64,
}

/// Converts one normalized grid coordinate pair to a bilinear tap.
/// (-1,-1) is the center of the top-left pixel, (+1,+1) the center of the
/// bottom-right pixel; out-of-range taps read as zero.
#[inline]
pub fn tap_for(gx: f64, gy: f64, h: usize, w: usize) -> SampleTap {
    let sanitize = |v: f64| if v.is_finite() { v.clamp(-1e9, 1e9) } else { 1e9 };
    let px = sanitize((gx + 1.0) * 0.5 * (w as f64 - 1.0));
    let py = sanitize((gy + 1.0) * 0.5 * (h as f64 - 1.0));
    let mut x0 = px.floor();
    let mut fx = px - x0;
    if fx < SNAP {
        fx = 0.0;
    } else if fx > 1.0 - SNAP {
        x0 += 1.0;
        fx = 0.0;
    }
    let mut y0 = py.floor();
    let mut fy = py - y0;
    if fy < SNAP {
        fy = 0.0;
    } else if fy > 1.0 - SNAP {
        y0 += 1.0;
        fy = 0.0;
    }
    SampleTap {
        x0: x0 as i64,
        y0: y0 as i64,
        fx,
        fy,
    }
}

#[inline]
fn read_at<E: Scalar>(plane: &[E], h: usize, w: usize, y: i64, x: i64) -> E {
    if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
        E::ZERO
    } else {
        plane[y as usize * w + x as usize]
    }
}

/// Precomputes taps for a whole grid ([gh*gw*2] normalized coords).
pub fn grid_taps<E: Scalar>(grid: &[E], gh: usize, gw: usize, h: usize, w: usize) -> Vec<SampleTap> {
    (0..gh * gw)
        .map(|i| tap_for(grid[2 * i].to_f64(), grid[2 * i + 1].to_f64(), h, w))
        .collect()
}

/// Bilinear sampling of x[n,c,h,w] at the taps (one tap set shared by the
/// batch or one per batch element).
pub fn grid_sample_fwd<E: Scalar>(
    x: &[E],
    _n: usize,
    c: usize,
    h: usize,
    w: usize,
    taps: &[Vec<SampleTap>],
    gh: usize,
    gw: usize,
    out: &mut [E],
) {
    let plane_in = h * w;
    let plane_out = gh * gw;
    out.par_chunks_mut(plane_out).enumerate().for_each(|(idx, o)| {
        let b = idx / c;
        let ch = idx % c;
        let taps = &taps[if taps.len() == 1 { 0 } else { b }];
        let xp = &x[(b * c + ch) * plane_in..(b * c + ch + 1) * plane_in];
        for (ov, t) in o.iter_mut().zip(taps.iter()) {
            let v00 = read_at(xp, h, w, t.y0, t.x0).to_f64();
            let v01 = read_at(xp, h, w, t.y0, t.x0 + 1).to_f64();
            let v10 = read_at(xp, h, w, t.y0 + 1, t.x0).to_f64();
            let v11 = read_at(xp, h, w, t.y0 + 1, t.x0 + 1).to_f64();
            let top = v00 + (v01 - v00) * t.fx;
            let bot = v10 + (v11 - v10) * t.fx;
            *ov = E::from_f64(top + (bot - top) * t.fy);
        }
    });
}

#[inline]
fn add_at<E: Scalar>(plane: &mut [E], h: usize, w: usize, y: i64, x: i64, v: E) {
    if y >= 0 && x >= 0 && y < h as i64 && x < w as i64 {
        plane[y as usize * w + x as usize] += v;
    }
}

/// Gradient of grid sampling w.r.t. the input image. Scatter is confined
/// to the (n,c)-plane owned by each task.
pub fn grid_sample_grad_input<E: Scalar>(
    gy: &[E],
    _n: usize,
    c: usize,
    h: usize,
    w: usize,
    taps: &[Vec<SampleTap>],
    gh: usize,
    gw: usize,
    gx: &mut [E],
) {
    let plane_in = h * w;
    let plane_out = gh * gw;
    gx.par_chunks_mut(plane_in).enumerate().for_each(|(idx, gxp)| {
        let b = idx / c;
        let ch = idx % c;
        let taps = &taps[if taps.len() == 1 { 0 } else { b }];
        gxp.fill(E::ZERO);
        let gyp = &gy[(b * c + ch) * plane_out..(b * c + ch + 1) * plane_out];
        for (gv, t) in gyp.iter().zip(taps.iter()) {
            let g = gv.to_f64();
            add_at(gxp, h, w, t.y0, t.x0, E::from_f64(g * (1.0 - t.fx) * (1.0 - t.fy)));
            add_at(gxp, h, w, t.y0, t.x0 + 1, E::from_f64(g * t.fx * (1.0 - t.fy)));
            add_at(gxp, h, w, t.y0 + 1, t.x0, E::from_f64(g * (1.0 - t.fx) * t.fy));
            add_at(gxp, h, w, t.y0 + 1, t.x0 + 1, E::from_f64(g * t.fx * t.fy));
        }
    });
}

/// Gradient of grid sampling w.r.t. the normalized grid coordinates.
/// Sequential: the grid buffer is shared across batch and channels.
#[allow(clippy::too_many_arguments)]
pub fn grid_sample_grad_grid<E: Scalar>(
    x: &[E],
    gy: &[E],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    taps: &[Vec<SampleTap>],
    gh: usize,
    gw: usize,
    grid_batch: usize,
    ggrid: &mut [E],
) {
    let plane_in = h * w;
    let plane_out = gh * gw;
    let sx = 0.5 * (w as f64 - 1.0);
    let sy = 0.5 * (h as f64 - 1.0);
    for b in 0..n {
        let taps_b = &taps[if grid_batch == 1 { 0 } else { b }];
        let gg = if grid_batch == 1 {
            &mut ggrid[..plane_out * 2]
        } else {
            &mut ggrid[b * plane_out * 2..(b + 1) * plane_out * 2]
        };
        for ch in 0..c {
            let xp = &x[(b * c + ch) * plane_in..(b * c + ch + 1) * plane_in];
            let gyp = &gy[(b * c + ch) * plane_out..(b * c + ch + 1) * plane_out];
            for (i, (gv, t)) in gyp.iter().zip(taps_b.iter()).enumerate() {
                let g = gv.to_f64();
                if g == 0.0 {
                    continue;
                }
                let v00 = read_at(xp, h, w, t.y0, t.x0).to_f64();
                let v01 = read_at(xp, h, w, t.y0, t.x0 + 1).to_f64();
                let v10 = read_at(xp, h, w, t.y0 + 1, t.x0).to_f64();
                let v11 = read_at(xp, h, w, t.y0 + 1, t.x0 + 1).to_f64();
                let dpx = (v01 - v00) * (1.0 - t.fy) + (v11 - v10) * t.fy;
                let dpy = (v10 - v00) * (1.0 - t.fx) + (v11 - v01) * t.fx;
                gg[2 * i] += E::from_f64(g * dpx * sx);
                gg[2 * i + 1] += E::from_f64(g * dpy * sy);
            }
        }
    }
}
