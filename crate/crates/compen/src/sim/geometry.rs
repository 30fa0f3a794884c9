//! Ground-truth camera-to-projector geometry: a homography composed with
//! a smooth thin plate spline displacement, analytically evaluable in the
//! forward direction and Newton-invertible.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{tps_kernel, Tensor};

/// Gaussian elimination with partial pivoting.
pub(crate) fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        assert!(a[col][col].abs() > 1e-12, "singular system");
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}

/// 3x3 homography acting on normalized 2-D points.
#[derive(Clone, Copy, Debug)]
pub struct Homography(pub [[f64; 3]; 3]);

impl Homography {
    pub const IDENTITY: Homography =
        Homography([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        let wq = m[2][0] * x + m[2][1] * y + m[2][2];
        (
            (m[0][0] * x + m[0][1] * y + m[0][2]) / wq,
            (m[1][0] * x + m[1][1] * y + m[1][2]) / wq,
        )
    }

    pub fn inverse(&self) -> Homography {
        let m = &self.0;
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        assert!(det.abs() > 1e-12, "singular homography");
        let adj = [
            [
                m[1][1] * m[2][2] - m[1][2] * m[2][1],
                m[0][2] * m[2][1] - m[0][1] * m[2][2],
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
            ],
            [
                m[1][2] * m[2][0] - m[1][0] * m[2][2],
                m[0][0] * m[2][2] - m[0][2] * m[2][0],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
            ],
            [
                m[1][0] * m[2][1] - m[1][1] * m[2][0],
                m[0][1] * m[2][0] - m[0][0] * m[2][1],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ],
        ];
        let mut out = [[0.0; 3]; 3];
        for (i, row) in adj.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                out[i][j] = v / det;
            }
        }
        Homography(out)
    }

    /// Homography mapping each `src` point to the matching `dst` point
    /// (four correspondences, direct linear transform with h22 = 1).
    pub fn from_correspondences(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> Homography {
        let mut a = vec![vec![0.0f64; 8]; 8];
        let mut b = vec![0.0f64; 8];
        for k in 0..4 {
            let (x, y) = src[k];
            let (u, v) = dst[k];
            a[2 * k] = vec![x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y];
            b[2 * k] = u;
            a[2 * k + 1] = vec![0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y];
            b[2 * k + 1] = v;
        }
        let h = solve_dense(&mut a, &mut b);
        Homography([
            [h[0], h[1], h[2]],
            [h[3], h[4], h[5]],
            [h[6], h[7], 1.0],
        ])
    }
}

/// Scalar thin plate spline surface over [-1,1]^2 fit through a coarse
/// control lattice; used as a smooth displacement field.
#[derive(Clone, Debug)]
pub struct TpsField {
    pts: Vec<(f64, f64)>,
    w: Vec<f64>,
    affine: [f64; 3],
}

impl TpsField {
    /// Interpolates `values` at a `n x n` uniform control lattice over
    /// [-1,1]^2 with the usual side conditions.
    pub fn fit(n: usize, values: &[f64]) -> TpsField {
        let mut pts = Vec::with_capacity(n * n);
        for iy in 0..n {
            for ix in 0..n {
                pts.push((
                    2.0 * ix as f64 / (n as f64 - 1.0) - 1.0,
                    2.0 * iy as f64 / (n as f64 - 1.0) - 1.0,
                ));
            }
        }
        let m = pts.len();
        assert_eq!(values.len(), m);
        let dim = m + 3;
        let mut a = vec![vec![0.0f64; dim]; dim];
        let mut b = vec![0.0f64; dim];
        for i in 0..m {
            for j in 0..m {
                let dx = pts[i].0 - pts[j].0;
                let dy = pts[i].1 - pts[j].1;
                a[i][j] = tps_kernel(dx * dx + dy * dy);
            }
            a[i][m] = 1.0;
            a[i][m + 1] = pts[i].0;
            a[i][m + 2] = pts[i].1;
            a[m][i] = 1.0;
            a[m + 1][i] = pts[i].0;
            a[m + 2][i] = pts[i].1;
            b[i] = values[i];
        }
        let sol = solve_dense(&mut a, &mut b);
        TpsField {
            pts,
            w: sol[..m].to_vec(),
            affine: [sol[m], sol[m + 1], sol[m + 2]],
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let mut acc = self.affine[0] + self.affine[1] * x + self.affine[2] * y;
        for (&(px, py), &w) in self.pts.iter().zip(self.w.iter()) {
            let dx = x - px;
            let dy = y - py;
            acc += w * tps_kernel(dx * dx + dy * dy);
        }
        acc
    }
}

/// The full camera-to-projector map.
#[derive(Clone, Debug)]
pub struct GeomMap {
    pub h: Homography,
    h_inv: Homography,
    pub disp_x: Option<TpsField>,
    pub disp_y: Option<TpsField>,
}

impl GeomMap {
    pub fn identity() -> GeomMap {
        GeomMap {
            h: Homography::IDENTITY,
            h_inv: Homography::IDENTITY,
            disp_x: None,
            disp_y: None,
        }
    }

    pub fn new(h: Homography, disp_x: Option<TpsField>, disp_y: Option<TpsField>) -> GeomMap {
        GeomMap {
            h_inv: h.inverse(),
            h,
            disp_x,
            disp_y,
        }
    }

    pub fn is_pure_homography(&self) -> bool {
        self.disp_x.is_none() && self.disp_y.is_none()
    }

    /// Camera normalized coords -> projector normalized coords.
    pub fn eval(&self, cx: f64, cy: f64) -> (f64, f64) {
        let (mut px, mut py) = self.h.apply(cx, cy);
        if let Some(d) = &self.disp_x {
            px += d.eval(cx, cy);
        }
        if let Some(d) = &self.disp_y {
            py += d.eval(cx, cy);
        }
        (px, py)
    }

    /// Projector coords -> camera coords by Newton iteration, seeded by
    /// the inverse homography. Displacements are small and smooth, so a
    /// few steps reach far below sampling precision.
    pub fn eval_inverse(&self, px: f64, py: f64) -> (f64, f64) {
        let (mut cx, mut cy) = self.h_inv.apply(px, py);
        if self.is_pure_homography() {
            return (cx, cy);
        }
        const EPS: f64 = 1e-6;
        for _ in 0..8 {
            let (fx, fy) = self.eval(cx, cy);
            let rx = fx - px;
            let ry = fy - py;
            if rx.abs() < 1e-10 && ry.abs() < 1e-10 {
                break;
            }
            let (fx1, fy1) = self.eval(cx + EPS, cy);
            let (fx2, fy2) = self.eval(cx, cy + EPS);
            let j00 = (fx1 - fx) / EPS;
            let j10 = (fy1 - fy) / EPS;
            let j01 = (fx2 - fx) / EPS;
            let j11 = (fy2 - fy) / EPS;
            let det = j00 * j11 - j01 * j10;
            if det.abs() < 1e-9 {
                break;
            }
            cx -= (rx * j11 - ry * j01) / det;
            cy -= (ry * j00 - rx * j10) / det;
        }
        (cx, cy)
    }

    /// Sampling grid of projector coordinates over the camera lattice,
    /// [H,W,2], consumable by the bilinear sampler.
    pub fn camera_grid(&self, h: usize, w: usize) -> Tensor<f32> {
        let mut data = Vec::with_capacity(h * w * 2);
        for y in 0..h {
            let cy = 2.0 * y as f64 / (h as f64 - 1.0) - 1.0;
            for x in 0..w {
                let cx = 2.0 * x as f64 / (w as f64 - 1.0) - 1.0;
                let (px, py) = self.eval(cx, cy);
                data.push(px as f32);
                data.push(py as f32);
            }
        }
        Tensor::new(&[h, w, 2], data)
    }

    /// Smallest Jacobian determinant of the map over the camera lattice
    /// (positive everywhere means no folds).
    pub fn min_jacobian_det(&self, h: usize, w: usize) -> f64 {
        const EPS: f64 = 1e-5;
        let mut min_det = f64::INFINITY;
        for y in 0..h {
            let cy = 2.0 * y as f64 / (h as f64 - 1.0) - 1.0;
            for x in 0..w {
                let cx = 2.0 * x as f64 / (w as f64 - 1.0) - 1.0;
                let (fx, fy) = self.eval(cx, cy);
                let (fx1, fy1) = self.eval(cx + EPS, cy);
                let (fx2, fy2) = self.eval(cx, cy + EPS);
                let det = ((fx1 - fx) / EPS) * ((fy2 - fy) / EPS)
                    - ((fx2 - fx) / EPS) * ((fy1 - fy) / EPS);
                min_det = min_det.min(det);
            }
        }
        min_det
    }
}

/// Random convex FOV quadrilateral: one corner per quadrant with component
/// magnitudes in the 60-90% band of the camera frame, plus a small shift.
pub fn random_fov_quad(rng: &mut ChaCha8Rng, strength: f64) -> [(f64, f64); 4] {
    let mut r = |sign_x: f64, sign_y: f64| {
        let rx = rng.gen_range(0.6..0.9);
        let ry = rng.gen_range(0.6..0.9);
        (sign_x * rx, sign_y * ry)
    };
    let mut quad = [r(-1.0, -1.0), r(1.0, -1.0), r(1.0, 1.0), r(-1.0, 1.0)];
    let shift_x = strength * rng.gen_range(-0.05..0.05);
    let shift_y = strength * rng.gen_range(-0.05..0.05);
    for p in &mut quad {
        p.0 += shift_x;
        p.1 += shift_y;
    }
    quad
}
