use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use super::kernels as k;
use super::tensor::{Scalar, Tensor};

fn assert_same_shape<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>, op: &str) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

impl<E: Scalar> Tensor<E> {
    pub fn relu(&self) -> Tensor<E> {
        let data = self
            .data()
            .iter()
            .map(|&v| if v > E::ZERO { v } else { E::ZERO })
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g, parents, sink| {
                let p = &parents[0];
                if p.requires_grad() {
                    let x = p.data();
                    let gx: Vec<E> = g
                        .iter()
                        .zip(x.iter())
                        .map(|(&gv, &xv)| if xv > E::ZERO { gv } else { E::ZERO })
                        .collect();
                    drop(x);
                    sink.add(p, &gx);
                }
            }),
        )
    }

    /// Clamp to [0,1]. The gradient passes through strictly inside (0,1)
    /// and is zero outside.
    pub fn clamp01(&self) -> Tensor<E> {
        let data = self
            .data()
            .iter()
            .map(|&v| v.maxs(E::ZERO).mins(E::ONE))
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g, parents, sink| {
                let p = &parents[0];
                if p.requires_grad() {
                    let x = p.data();
                    let gx: Vec<E> = g
                        .iter()
                        .zip(x.iter())
                        .map(|(&gv, &xv)| {
                            if xv > E::ZERO && xv < E::ONE {
                                gv
                            } else {
                                E::ZERO
                            }
                        })
                        .collect();
                    drop(x);
                    sink.add(p, &gx);
                }
            }),
        )
    }

    pub fn abs(&self) -> Tensor<E> {
        let data = self.data().iter().map(|v| v.abs()).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g, parents, sink| {
                let p = &parents[0];
                if p.requires_grad() {
                    let x = p.data();
                    let gx: Vec<E> = g
                        .iter()
                        .zip(x.iter())
                        .map(|(&gv, &xv)| {
                            if xv > E::ZERO {
                                gv
                            } else if xv < E::ZERO {
                                -gv
                            } else {
                                E::ZERO
                            }
                        })
                        .collect();
                    drop(x);
                    sink.add(p, &gx);
                }
            }),
        )
    }

    pub fn add(&self, rhs: &Tensor<E>) -> Tensor<E> {
        assert_same_shape(self, rhs, "add");
        let data = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(&a, &b)| a + b)
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(|g, parents, sink| {
                if parents[0].requires_grad() {
                    sink.add(&parents[0], g);
                }
                if parents[1].requires_grad() {
                    sink.add(&parents[1], g);
                }
            }),
        )
    }

    /// Elementwise difference. The right operand may have batch size 1
    /// while the left is batched; its gradient then sums over the batch.
    pub fn sub(&self, rhs: &Tensor<E>) -> Tensor<E> {
        let broadcast = self.shape() != rhs.shape();
        if broadcast {
            assert!(
                !rhs.shape().is_empty()
                    && rhs.shape()[0] == 1
                    && self.shape()[1..] == rhs.shape()[1..],
                "sub: shape mismatch {:?} vs {:?} (only batch-1 broadcast of rhs is supported)",
                self.shape(),
                rhs.shape()
            );
        }
        let chunk = rhs.numel();
        let data: Vec<E> = {
            let a = self.data();
            let b = rhs.data();
            a.iter()
                .enumerate()
                .map(|(i, &av)| av - b[i % chunk])
                .collect()
        };
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, parents, sink| {
                if parents[0].requires_grad() {
                    sink.add(&parents[0], g);
                }
                if parents[1].requires_grad() {
                    let mut gb = vec![E::ZERO; chunk];
                    for (i, &gv) in g.iter().enumerate() {
                        gb[i % chunk] -= gv;
                    }
                    sink.add(&parents[1], &gb);
                }
            }),
        )
    }

    pub fn mul(&self, rhs: &Tensor<E>) -> Tensor<E> {
        assert_same_shape(self, rhs, "mul");
        let data = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(&a, &b)| a * b)
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(|g, parents, sink| {
                if parents[0].requires_grad() {
                    let b = parents[1].data();
                    let ga: Vec<E> = g.iter().zip(b.iter()).map(|(&gv, &bv)| gv * bv).collect();
                    drop(b);
                    sink.add(&parents[0], &ga);
                }
                if parents[1].requires_grad() {
                    let a = parents[0].data();
                    let gb: Vec<E> = g.iter().zip(a.iter()).map(|(&gv, &av)| gv * av).collect();
                    drop(a);
                    sink.add(&parents[1], &gb);
                }
            }),
        )
    }

    pub fn div(&self, rhs: &Tensor<E>) -> Tensor<E> {
        assert_same_shape(self, rhs, "div");
        let data = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(&a, &b)| a / b)
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(|g, parents, sink| {
                if parents[0].requires_grad() {
                    let b = parents[1].data();
                    let ga: Vec<E> = g.iter().zip(b.iter()).map(|(&gv, &bv)| gv / bv).collect();
                    drop(b);
                    sink.add(&parents[0], &ga);
                }
                if parents[1].requires_grad() {
                    let a = parents[0].data();
                    let b = parents[1].data();
                    let gb: Vec<E> = g
                        .iter()
                        .zip(a.iter().zip(b.iter()))
                        .map(|(&gv, (&av, &bv))| -gv * av / (bv * bv))
                        .collect();
                    drop(a);
                    drop(b);
                    sink.add(&parents[1], &gb);
                }
            }),
        )
    }

    pub fn mul_scalar(&self, s: E) -> Tensor<E> {
        let data = self.data().iter().map(|&v| v * s).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, parents, sink| {
                if parents[0].requires_grad() {
                    let gx: Vec<E> = g.iter().map(|&gv| gv * s).collect();
                    sink.add(&parents[0], &gx);
                }
            }),
        )
    }

    pub fn add_scalar(&self, s: E) -> Tensor<E> {
        let data = self.data().iter().map(|&v| v + s).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g, parents, sink| {
                if parents[0].requires_grad() {
                    sink.add(&parents[0], g);
                }
            }),
        )
    }

    /// Mean over all elements, as a scalar tensor.
    pub fn mean(&self) -> Tensor<E> {
        let n = self.numel();
        let mut acc = 0.0f64;
        for v in self.data().iter() {
            acc += v.to_f64();
        }
        let m = E::from_f64(acc / n as f64);
        Tensor::from_op(
            vec![1],
            vec![m],
            vec![self.clone()],
            Box::new(move |g, parents, sink| {
                if parents[0].requires_grad() {
                    let gv = E::from_f64(g[0].to_f64() / n as f64);
                    let gx = vec![gv; n];
                    sink.add(&parents[0], &gx);
                }
            }),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor<E> {
        assert_eq!(
            self.numel(),
            shape.iter().product::<usize>(),
            "reshape: cannot view {:?} as {:?}",
            self.shape(),
            shape
        );
        let data = self.data().clone();
        Tensor::from_op(
            shape.to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g, parents, sink| {
                if parents[0].requires_grad() {
                    sink.add(&parents[0], g);
                }
            }),
        )
    }
}

/// Stacks same-shaped [1,...] tensors along the batch axis.
pub fn concat_batch<E: Scalar>(parts: &[Tensor<E>]) -> Tensor<E> {
    assert!(!parts.is_empty(), "concat_batch: empty input");
    let base = parts[0].shape().to_vec();
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.numel()).sum());
    let mut batch = 0usize;
    for p in parts {
        assert_eq!(p.shape()[1..], base[1..], "concat_batch: mismatched shapes");
        batch += p.shape()[0];
        data.extend_from_slice(&p.data());
    }
    let mut shape = base;
    shape[0] = batch;
    let chunk: usize = shape[1..].iter().product();
    let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[0] * chunk).collect();
    Tensor::from_op(
        shape,
        data,
        parts.to_vec(),
        Box::new(move |g, parents, sink| {
            let mut off = 0usize;
            for (p, &sz) in parents.iter().zip(sizes.iter()) {
                if p.requires_grad() {
                    sink.add(p, &g[off..off + sz]);
                }
                off += sz;
            }
        }),
    )
}

/// 2-D cross-correlation. `x` is [N,Cin,H,W], `weight` [Cout,Cin,kh,kw],
/// `bias` [Cout]. Differentiable w.r.t. all three.
pub fn conv2d<E: Scalar>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    stride: usize,
    padding: usize,
) -> Tensor<E> {
    assert_eq!(x.shape().len(), 4, "conv2d: input must be 4-D, got {:?}", x.shape());
    assert_eq!(weight.shape().len(), 4, "conv2d: weight must be 4-D, got {:?}", weight.shape());
    let (n, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, wcin, kh, kw) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    assert_eq!(
        cin, wcin,
        "conv2d: input channel axis {} does not match weight channel axis {}",
        cin, wcin
    );
    if let Some(b) = bias {
        assert_eq!(
            b.shape(),
            &[cout],
            "conv2d: bias axis {:?} does not match output channels {}",
            b.shape(),
            cout
        );
    }
    let oh = k::conv_out_dim(h, kh, stride, padding);
    let ow = k::conv_out_dim(w, kw, stride, padding);
    let geom = k::ConvGeom {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        stride,
        padding,
        oh,
        ow,
    };
    let mut out = vec![E::ZERO; n * cout * oh * ow];
    k::conv2d_fwd(&x.data(), &weight.data(), bias.map(|b| b.data().clone()).as_deref(), geom, &mut out);
    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Tensor::from_op(
        vec![n, cout, oh, ow],
        out,
        parents,
        Box::new(move |g, parents, sink| {
            let x = &parents[0];
            let wgt = &parents[1];
            if x.requires_grad() {
                let mut gx = vec![E::ZERO; n * cin * h * w];
                k::conv2d_grad_input(g, &wgt.data(), geom, &mut gx);
                sink.add(x, &gx);
            }
            if wgt.requires_grad() {
                let mut gw = vec![E::ZERO; cout * cin * kh * kw];
                k::conv2d_grad_weight(&x.data(), g, geom, &mut gw);
                sink.add(wgt, &gw);
            }
            if parents.len() > 2 && parents[2].requires_grad() {
                let mut gb = vec![E::ZERO; cout];
                k::conv2d_grad_bias(g, n, cout, oh * ow, &mut gb);
                sink.add(&parents[2], &gb);
            }
        }),
    )
}

/// Transposed 2-D convolution (adjoint of `conv2d` for matching geometry).
/// `weight` is [Cin,Cout,kh,kw]; `output_padding` grows the output by the
/// given amount on the bottom/right, as needed for exact 2x upsampling
/// with odd kernels.
pub fn conv_transpose2d<E: Scalar>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Tensor<E> {
    assert_eq!(x.shape().len(), 4, "conv_transpose2d: input must be 4-D");
    assert_eq!(weight.shape().len(), 4, "conv_transpose2d: weight must be 4-D");
    let (n, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (wcin, cout, kh, kw) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    assert_eq!(
        cin, wcin,
        "conv_transpose2d: input channel axis {} does not match weight channel axis {}",
        cin, wcin
    );
    assert!(output_padding < stride.max(1) + kh, "conv_transpose2d: output_padding too large");
    if let Some(b) = bias {
        assert_eq!(b.shape(), &[cout], "conv_transpose2d: bias shape {:?}", b.shape());
    }
    let oh = k::conv_transpose_out_dim(h, kh, stride, padding, output_padding);
    let ow = k::conv_transpose_out_dim(w, kw, stride, padding, output_padding);
    let geom = k::ConvTGeom {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        stride,
        padding,
        oh,
        ow,
    };
    let mut out = vec![E::ZERO; n * cout * oh * ow];
    k::convt2d_fwd(&x.data(), &weight.data(), bias.map(|b| b.data().clone()).as_deref(), geom, &mut out);
    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Tensor::from_op(
        vec![n, cout, oh, ow],
        out,
        parents,
        Box::new(move |g, parents, sink| {
            let x = &parents[0];
            let wgt = &parents[1];
            if x.requires_grad() {
                let mut gx = vec![E::ZERO; n * cin * h * w];
                k::convt2d_grad_input(g, &wgt.data(), geom, &mut gx);
                sink.add(x, &gx);
            }
            if wgt.requires_grad() {
                let mut gw = vec![E::ZERO; cin * cout * kh * kw];
                k::convt2d_grad_weight(&x.data(), g, geom, &mut gw);
                sink.add(wgt, &gw);
            }
            if parents.len() > 2 && parents[2].requires_grad() {
                let mut gb = vec![E::ZERO; cout];
                k::conv2d_grad_bias(g, n, cout, oh * ow, &mut gb);
                sink.add(&parents[2], &gb);
            }
        }),
    )
}

/// Bilinear sampling of `x` [N,C,H,W] at normalized grid coordinates.
/// The grid is [H',W',2] (shared by the batch) or [N,H',W',2]; coordinate
/// pairs are (x,y) with (-1,-1) at the center of the top-left pixel.
/// Out-of-range coordinates read as zero. Differentiable w.r.t. both
/// input and grid.
pub fn grid_sample<E: Scalar>(x: &Tensor<E>, grid: &Tensor<E>) -> Tensor<E> {
    assert_eq!(x.shape().len(), 4, "grid_sample: input must be 4-D, got {:?}", x.shape());
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (gn, gh, gw) = match grid.shape() {
        [gh, gw, 2] => (1usize, *gh, *gw),
        [gn, gh, gw, 2] => {
            assert!(
                *gn == 1 || *gn == n,
                "grid_sample: grid batch {} incompatible with input batch {}",
                gn,
                n
            );
            (*gn, *gh, *gw)
        }
        other => panic!("grid_sample: grid must be [H,W,2] or [N,H,W,2], got {:?}", other),
    };
    let taps: Vec<Vec<k::SampleTap>> = {
        let gd = grid.data();
        (0..gn)
            .map(|b| k::grid_taps(&gd[b * gh * gw * 2..(b + 1) * gh * gw * 2], gh, gw, h, w))
            .collect()
    };
    let mut out = vec![E::ZERO; n * c * gh * gw];
    k::grid_sample_fwd(&x.data(), n, c, h, w, &taps, gh, gw, &mut out);
    let taps = Arc::new(taps);
    let taps_bw = Arc::clone(&taps);
    Tensor::from_op(
        vec![n, c, gh, gw],
        out,
        vec![x.clone(), grid.clone()],
        Box::new(move |g, parents, sink| {
            let x = &parents[0];
            let grid = &parents[1];
            if x.requires_grad() {
                let mut gx = vec![E::ZERO; n * c * h * w];
                k::grid_sample_grad_input(g, n, c, h, w, &taps_bw, gh, gw, &mut gx);
                sink.add(x, &gx);
            }
            if grid.requires_grad() {
                let mut gg = vec![E::ZERO; grid.numel()];
                k::grid_sample_grad_grid(
                    &x.data(),
                    g,
                    n,
                    c,
                    h,
                    w,
                    &taps_bw,
                    gh,
                    gw,
                    gn,
                    &mut gg,
                );
                sink.add(grid, &gg);
            }
        }),
    )
}

/// Normalized lattice coordinate of index `j` out of `n` samples.
#[inline]
pub(crate) fn lattice_coord(j: usize, n: usize) -> f64 {
    2.0 * j as f64 / (n as f64 - 1.0) - 1.0
}

/// Regular lattice spanning [-1,1]^2, shape [H,W,2].
pub fn identity_grid<E: Scalar>(h: usize, w: usize) -> Tensor<E> {
    assert!(h >= 2 && w >= 2, "identity_grid: size must be at least 2x2");
    let mut data = Vec::with_capacity(h * w * 2);
    for y in 0..h {
        let v = lattice_coord(y, h);
        for x in 0..w {
            data.push(E::from_f64(lattice_coord(x, w)));
            data.push(E::from_f64(v));
        }
    }
    Tensor::new(&[h, w, 2], data)
}

/// Sampling grid of a 2x3 affine map over the identity lattice:
/// (x_src, y_src) = theta . (u, v, 1). Differentiable w.r.t. theta.
pub fn affine_grid<E: Scalar>(theta: &Tensor<E>, h: usize, w: usize) -> Tensor<E> {
    assert_eq!(theta.shape(), &[2, 3], "affine_grid: theta must be [2,3]");
    assert!(h >= 2 && w >= 2, "affine_grid: size must be at least 2x2");
    let t: Vec<f64> = theta.data().iter().map(|v| v.to_f64()).collect();
    let mut data = Vec::with_capacity(h * w * 2);
    for y in 0..h {
        let v = lattice_coord(y, h);
        for x in 0..w {
            let u = lattice_coord(x, w);
            data.push(E::from_f64(t[0] * u + t[1] * v + t[2]));
            data.push(E::from_f64(t[3] * u + t[4] * v + t[5]));
        }
    }
    Tensor::from_op(
        vec![h, w, 2],
        data,
        vec![theta.clone()],
        Box::new(move |g, parents, sink| {
            let p = &parents[0];
            if !p.requires_grad() {
                return;
            }
            let mut gt = [0.0f64; 6];
            let mut i = 0;
            for y in 0..h {
                let v = lattice_coord(y, h);
                for x in 0..w {
                    let u = lattice_coord(x, w);
                    let gx = g[i].to_f64();
                    let gy = g[i + 1].to_f64();
                    i += 2;
                    gt[0] += gx * u;
                    gt[1] += gx * v;
                    gt[2] += gx;
                    gt[3] += gy * u;
                    gt[4] += gy * v;
                    gt[5] += gy;
                }
            }
            let gt: Vec<E> = gt.iter().map(|&v| E::from_f64(v)).collect();
            sink.add(p, &gt);
        }),
    )
}

/// Number of thin plate spline control points (6x6 lattice).
pub const TPS_CONTROL_POINTS: usize = 36;
/// Radial weights plus the three affine coefficients, per output dimension.
pub const TPS_PARAMS_PER_DIM: usize = TPS_CONTROL_POINTS + 3;

/// The 6x6 control lattice, uniform and inclusive over [-1,1]^2,
/// row-major (y outer, x inner).
pub fn tps_control_points() -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(TPS_CONTROL_POINTS);
    for iy in 0..6 {
        for ix in 0..6 {
            pts.push((lattice_coord(ix, 6), lattice_coord(iy, 6)));
        }
    }
    pts
}

/// Thin plate spline radial kernel U(r) = r^2 log(r^2) expressed on the
/// squared distance, with U(0) = 0.
#[inline]
pub fn tps_kernel(r2: f64) -> f64 {
    if r2 == 0.0 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

fn tps_basis_cache() -> &'static Mutex<HashMap<(usize, usize), Arc<Vec<f64>>>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Vec<f64>>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Per-lattice-point basis row [U_1..U_36, 1, u, v].
fn tps_basis(h: usize, w: usize) -> Arc<Vec<f64>> {
    let mut cache = tps_basis_cache().lock().unwrap();
    if let Some(b) = cache.get(&(h, w)) {
        return Arc::clone(b);
    }
    let pts = tps_control_points();
    let mut basis = Vec::with_capacity(h * w * TPS_PARAMS_PER_DIM);
    for y in 0..h {
        let v = lattice_coord(y, h);
        for x in 0..w {
            let u = lattice_coord(x, w);
            for &(cx, cy) in &pts {
                let dx = u - cx;
                let dy = v - cy;
                basis.push(tps_kernel(dx * dx + dy * dy));
            }
            basis.push(1.0);
            basis.push(u);
            basis.push(v);
        }
    }
    let arc = Arc::new(basis);
    cache.insert((h, w), Arc::clone(&arc));
    arc
}

/// Thin plate spline sampling grid. `theta` is [2,39]: per output
/// dimension 36 radial weights followed by the affine coefficients
/// (constant, u, v). Differentiable w.r.t. theta.
pub fn tps_grid<E: Scalar>(theta: &Tensor<E>, h: usize, w: usize) -> Tensor<E> {
    assert_eq!(
        theta.shape(),
        &[2, TPS_PARAMS_PER_DIM],
        "tps_grid: theta must be [2,{}]",
        TPS_PARAMS_PER_DIM
    );
    let basis = tps_basis(h, w);
    let t: Vec<f64> = theta.data().iter().map(|v| v.to_f64()).collect();
    let np = TPS_PARAMS_PER_DIM;
    let mut data = Vec::with_capacity(h * w * 2);
    for i in 0..h * w {
        let row = &basis[i * np..(i + 1) * np];
        let mut gx = 0.0;
        let mut gy = 0.0;
        for (j, &b) in row.iter().enumerate() {
            gx += t[j] * b;
            gy += t[np + j] * b;
        }
        data.push(E::from_f64(gx));
        data.push(E::from_f64(gy));
    }
    let basis_bw = Arc::clone(&basis);
    Tensor::from_op(
        vec![h, w, 2],
        data,
        vec![theta.clone()],
        Box::new(move |g, parents, sink| {
            let p = &parents[0];
            if !p.requires_grad() {
                return;
            }
            let mut gt = vec![0.0f64; 2 * np];
            for i in 0..h * w {
                let row = &basis_bw[i * np..(i + 1) * np];
                let ggx = g[2 * i].to_f64();
                let ggy = g[2 * i + 1].to_f64();
                for (j, &b) in row.iter().enumerate() {
                    gt[j] += ggx * b;
                    gt[np + j] += ggy * b;
                }
            }
            let gt: Vec<E> = gt.iter().map(|&v| E::from_f64(v)).collect();
            sink.add(p, &gt);
        }),
    )
}

/// [H,W,2] grid -> [1,2,H,W] image view (copy).
pub fn grid_to_image<E: Scalar>(grid: &Tensor<E>) -> Tensor<E> {
    let (h, w) = match grid.shape() {
        [h, w, 2] => (*h, *w),
        other => panic!("grid_to_image: expected [H,W,2], got {:?}", other),
    };
    let src = grid.data();
    let mut data = vec![E::ZERO; 2 * h * w];
    for i in 0..h * w {
        data[i] = src[2 * i];
        data[h * w + i] = src[2 * i + 1];
    }
    drop(src);
    Tensor::from_op(
        vec![1, 2, h, w],
        data,
        vec![grid.clone()],
        Box::new(move |g, parents, sink| {
            let p = &parents[0];
            if p.requires_grad() {
                let mut gg = vec![E::ZERO; 2 * h * w];
                for i in 0..h * w {
                    gg[2 * i] = g[i];
                    gg[2 * i + 1] = g[h * w + i];
                }
                sink.add(p, &gg);
            }
        }),
    )
}

/// [1,2,H,W] image -> [H,W,2] grid (copy).
pub fn grid_from_image<E: Scalar>(img: &Tensor<E>) -> Tensor<E> {
    let (h, w) = match img.shape() {
        [1, 2, h, w] => (*h, *w),
        other => panic!("grid_from_image: expected [1,2,H,W], got {:?}", other),
    };
    let src = img.data();
    let mut data = vec![E::ZERO; h * w * 2];
    for i in 0..h * w {
        data[2 * i] = src[i];
        data[2 * i + 1] = src[h * w + i];
    }
    drop(src);
    Tensor::from_op(
        vec![h, w, 2],
        data,
        vec![img.clone()],
        Box::new(move |g, parents, sink| {
            let p = &parents[0];
            if p.requires_grad() {
                let mut gg = vec![E::ZERO; 2 * h * w];
                for i in 0..h * w {
                    gg[i] = g[2 * i];
                    gg[h * w + i] = g[2 * i + 1];
                }
                sink.add(p, &gg);
            }
        }),
    )
}

/// Composes two sampling grids by treating the coarse grid as a 2-channel
/// image and bilinearly sampling it at the fine grid's coordinates.
/// Differentiable through both grids.
pub fn compose_grids<E: Scalar>(coarse: &Tensor<E>, fine: &Tensor<E>) -> Tensor<E> {
    assert_eq!(coarse.shape(), fine.shape(), "compose_grids: size mismatch");
    let img = grid_to_image(coarse);
    let sampled = grid_sample(&img, fine);
    grid_from_image(&sampled)
}
