use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::gradcheck::{check_gradients, FD_MAX_REL_ERR};
use crate::autodiff::{backward, identity_grid, tps_control_points, tps_kernel};

/// Dense Gaussian elimination with partial pivoting (test-side oracle
/// helper, independent of the library code).
fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Vec<f64> {
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

/// Solves the standard thin plate spline interpolation system mapping the
/// control lattice to the given targets, one output dimension at a time.
/// Returns theta rows [w_0..w_35, a0, a_u, a_v].
fn solve_tps_for_targets(targets: &[(f64, f64)]) -> Vec<f64> {
    let pts = tps_control_points();
    let n = pts.len();
    let dim = n + 3;
    let mut theta = Vec::new();
    for want_y in [false, true] {
        let mut a = vec![vec![0.0f64; dim]; dim];
        let mut b = vec![0.0f64; dim];
        for i in 0..n {
            for j in 0..n {
                let dx = pts[i].0 - pts[j].0;
                let dy = pts[i].1 - pts[j].1;
                a[i][j] = tps_kernel(dx * dx + dy * dy);
            }
            a[i][n] = 1.0;
            a[i][n + 1] = pts[i].0;
            a[i][n + 2] = pts[i].1;
            a[n][i] = 1.0;
            a[n + 1][i] = pts[i].0;
            a[n + 2][i] = pts[i].1;
            b[i] = if want_y { targets[i].1 } else { targets[i].0 };
        }
        theta.extend(solve_dense(&mut a, &mut b));
    }
    theta
}

/// 26-point lattice contains the 6x6 control lattice at indices 0,5,..,25.
const ORACLE_GRID: usize = 26;

fn control_lattice_indices() -> Vec<(usize, usize)> {
    let mut at = Vec::new();
    for iy in 0..6 {
        for ix in 0..6 {
            at.push((iy * 5, ix * 5));
        }
    }
    at
}

#[test]
fn affine_grid_identity_matches_lattice() {
    let theta = Tensor::<f32>::new(&[2, 3], identity_affine());
    let g = affine_grid(&theta, 8, 12);
    assert_eq!(g.values(), identity_grid::<f32>(8, 12).values());
}

#[test]
fn affine_grid_scale_halves_coordinates() {
    let theta = Tensor::<f64>::new(&[2, 3], vec![0.5, 0.0, 0.0, 0.0, 0.5, 0.0]);
    let g = affine_grid(&theta, 5, 5);
    let id = identity_grid::<f64>(5, 5);
    for (a, b) in g.values().iter().zip(id.values().iter()) {
        assert!((a - 0.5 * b).abs() < 1e-12);
    }
}

#[test]
fn affine_grid_translation_shifts_x() {
    let theta = Tensor::<f64>::new(&[2, 3], vec![1.0, 0.0, 0.2, 0.0, 1.0, 0.0]);
    let g = affine_grid(&theta, 4, 4);
    let id = identity_grid::<f64>(4, 4);
    for i in 0..g.numel() / 2 {
        assert!((g.values()[2 * i] - (id.values()[2 * i] + 0.2)).abs() < 1e-12);
        assert_eq!(g.values()[2 * i + 1], id.values()[2 * i + 1]);
    }
}

#[test]
fn tps_identity_parameters_give_identity_grid() {
    let theta = Tensor::<f32>::new(&[2, TPS_PARAMS_PER_DIM], identity_tps());
    let g = tps_grid(&theta, 9, 7);
    let id = identity_grid::<f32>(9, 7);
    for (a, b) in g.values().iter().zip(id.values().iter()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn tps_interpolates_solved_control_targets() {
    let pts = tps_control_points();
    let mut r = ChaCha8Rng::seed_from_u64(21);
    let targets: Vec<(f64, f64)> = pts
        .iter()
        .map(|&(x, y)| (x + r.gen_range(-0.08..0.08), y + r.gen_range(-0.08..0.08)))
        .collect();
    let theta = solve_tps_for_targets(&targets);
    let theta = Tensor::<f64>::new(
        &[2, TPS_PARAMS_PER_DIM],
        theta.iter().copied().collect(),
    );
    let g = tps_grid(&theta, ORACLE_GRID, ORACLE_GRID);
    let gv = g.values();
    for (k, &(iy, ix)) in control_lattice_indices().iter().enumerate() {
        let i = (iy * ORACLE_GRID + ix) * 2;
        assert!(
            (gv[i] - targets[k].0).abs() < 1e-5 && (gv[i + 1] - targets[k].1).abs() < 1e-5,
            "control point {k}: got ({}, {}), want {:?}",
            gv[i],
            gv[i + 1],
            targets[k]
        );
    }
}

#[test]
fn tps_single_displaced_point_decays_smoothly() {
    let pts = tps_control_points();
    let mut targets: Vec<(f64, f64)> = pts.clone();
    targets[14] = (pts[14].0 + 0.1, pts[14].1); // interior point pushed in x
    let theta = solve_tps_for_targets(&targets);
    let theta = Tensor::<f64>::new(&[2, TPS_PARAMS_PER_DIM], theta);
    let g = tps_grid(&theta, ORACLE_GRID, ORACLE_GRID);
    let gv = g.values();
    let idx = control_lattice_indices();
    for (k, &(iy, ix)) in idx.iter().enumerate() {
        let i = (iy * ORACLE_GRID + ix) * 2;
        let dx = gv[i] - pts[k].0;
        if k == 14 {
            assert!((dx - 0.1).abs() < 1e-5, "displaced point moved {dx}");
        } else {
            assert!(dx.abs() < 1e-5, "control {k} should be fixed, moved {dx}");
        }
    }
    // displacement between the pushed point and its neighbor is smooth and
    // in between
    let (cy, cx) = idx[14];
    let mid = ((cy * ORACLE_GRID) + cx + 2) * 2;
    let dmid = gv[mid] - identity_grid::<f64>(ORACLE_GRID, ORACLE_GRID).values()[mid];
    assert!(dmid > 0.01 && dmid < 0.1, "mid displacement {dmid}");
}

#[test]
fn compose_with_identity_fine_grid_returns_coarse() {
    let theta = Tensor::<f32>::new(&[2, 3], vec![0.8, 0.1, -0.05, -0.02, 0.9, 0.1]);
    let coarse = affine_grid(&theta, 12, 16);
    let fine = identity_grid::<f32>(12, 16);
    let out = compose_grids(&coarse, &fine);
    assert_eq!(out.values(), coarse.values());
}

#[test]
fn compose_is_exact_on_affine_grids() {
    let theta = Tensor::<f64>::new(&[2, 3], vec![0.7, 0.05, 0.1, -0.03, 0.8, -0.06]);
    let coarse = affine_grid(&theta, 16, 16);
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let fine_data: Vec<f64> = (0..16 * 16 * 2).map(|_| r.gen_range(-0.95..0.95)).collect();
    let fine = Tensor::new(&[16, 16, 2], fine_data.clone());
    let out = compose_grids(&coarse, &fine);
    let t = theta.values();
    for i in 0..16 * 16 {
        let (u, v) = (fine_data[2 * i], fine_data[2 * i + 1]);
        let ex = t[0] * u + t[1] * v + t[2];
        let ey = t[3] * u + t[4] * v + t[5];
        assert!((out.values()[2 * i] - ex).abs() < 1e-5);
        assert!((out.values()[2 * i + 1] - ey).abs() < 1e-5);
    }
}

#[test]
fn refine_zeroed_is_exact_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = RefineNet::<f32>::zeroed(&mut rng);
    let theta = Tensor::new(&[2, 3], vec![0.9f32, 0.0, 0.05, 0.0, 0.85, -0.1]);
    let grid = affine_grid(&theta, 16, 16);
    let out = net.refine(&grid);
    assert_eq!(out.values(), grid.values());
}

#[test]
fn refine_fresh_init_stays_within_displacement_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let net = RefineNet::<f32>::small_init(&mut rng);
    let grid = identity_grid::<f32>(32, 32);
    let out = net.refine(&grid);
    let max_disp = out
        .values()
        .iter()
        .zip(grid.values().iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(max_disp < 1e-2, "init displacement {max_disp}");
}

#[test]
#[should_panic(expected = "not divisible by 4")]
fn refine_rejects_bad_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = RefineNet::<f32>::zeroed(&mut rng);
    net.refine(&identity_grid::<f32>(10, 12));
}

#[test]
fn refine_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let net = RefineNet::<f64>::small_init(&mut rng);
    let grid = identity_grid::<f64>(8, 8);
    let inputs = vec![
        net.c1.weight.tensor.clone(),
        net.c2.weight.tensor.clone(),
        net.t1.weight.tensor.clone(),
        net.t2.weight.tensor.clone(),
        net.t2.bias.tensor.clone(),
    ];
    let mut r2 = ChaCha8Rng::seed_from_u64(9);
    let coords: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| (0..6).map(|_| r2.gen_range(0..t.numel())).collect())
        .collect();
    let rep = check_gradients(|_| net.refine(&grid).mean(), &inputs, &coords);
    assert!(rep.max_rel_err < FD_MAX_REL_ERR, "rel err {}", rep.max_rel_err);
}

#[test]
fn identity_stack_is_bitwise_identity_warp() {
    let net = WarpNet::<f32>::identity(16, 16, 1);
    let mut r = ChaCha8Rng::seed_from_u64(10);
    let img = Tensor::new(
        &[1, 3, 16, 16],
        (0..3 * 256).map(|_| r.gen_range(0.0f32..1.0)).collect(),
    );
    let grid = net.forward_grid();
    assert_eq!(grid.values(), identity_grid::<f32>(16, 16).values());
    let out = net.warp(&img);
    assert_eq!(out.values(), img.values());
}

#[test]
fn composed_warp_matches_sequential_triple_sampling_in_affine_case() {
    // With an identity spline and zero refinement both formulations reduce
    // to a single sampling of the affine grid.
    let mut net = WarpNet::<f32>::identity(16, 16, 2);
    net.affine
        .load(&[0.85f32, 0.02, 0.05, -0.03, 0.9, -0.04]);
    // smooth gradient image
    let mut img_data = Vec::new();
    for y in 0..16 {
        for x in 0..16 {
            img_data.push(0.2 + 0.04 * x as f32 + 0.01 * y as f32);
        }
    }
    let img = Tensor::new(&[1, 1, 16, 16], img_data);
    let composed = net.warp(&img);

    // sequential: phi(phi(phi(img; aff); tps); refined(tps))
    let ga = net.affine_grid();
    let gt = tps_grid(&net.tps.tensor, 16, 16);
    let gr = net.refine.refine(&gt);
    let step1 = grid_sample(&img, &ga);
    let step2 = grid_sample(&step1, &gt);
    let step3 = grid_sample(&step2, &gr);
    assert_eq!(composed.values(), step3.values());
}

#[test]
fn init_from_fov_full_frame_gives_identity_affine() {
    let fov = Mask::filled(32, 48, true);
    let net = WarpNet::<f32>::init_from_fov(&fov, 16, 16, 3).unwrap();
    let th = net.affine.tensor.values();
    assert_eq!(&th[..], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
}

#[test]
fn init_from_fov_centered_rect_gives_half_scale() {
    let (h, w) = (64, 64);
    let mut fov = Mask::filled(h, w, false);
    for y in 16..48 {
        for x in 16..48 {
            fov.set(y, x, true);
        }
    }
    let net = WarpNet::<f64>::init_from_fov(&fov, 16, 16, 4).unwrap();
    let th = net.affine.tensor.values();
    // analytic bounding-rect fit for pixels 16..=47 of 64
    let nx = |p: f64| 2.0 * p / 63.0 - 1.0;
    let sx = 0.5 * (nx(47.0) - nx(16.0));
    let cx = 0.5 * (nx(47.0) + nx(16.0));
    assert!((th[0] - sx).abs() < 1e-12 && (th[2] - cx).abs() < 1e-12);
    assert!((th[0] - 0.5).abs() < 0.02, "scale {} not near 0.5", th[0]);
}

#[test]
fn init_from_fov_warp_stays_close_to_pure_affine() {
    let (h, w) = (48, 64);
    let mut fov = Mask::filled(h, w, false);
    for y in 6..42 {
        for x in 10..58 {
            fov.set(y, x, true);
        }
    }
    let net = WarpNet::<f32>::init_from_fov(&fov, 16, 16, 5).unwrap();
    // smooth textured image, as sampling images are
    let mut img_data = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let p = (x as f32 / w as f32 + 0.3 * c as f32) * std::f32::consts::TAU;
                let q = (y as f32 / h as f32) * std::f32::consts::TAU;
                img_data.push(0.5 + 0.25 * p.sin() + 0.2 * q.cos() * p.cos());
            }
        }
    }
    let img = Tensor::new(&[1, 3, h, w], img_data);
    let full = net.warp(&img);
    let affine_only = grid_sample(&img, &net.affine_grid());
    let mad: f32 = full
        .values()
        .iter()
        .zip(affine_only.values().iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f32>()
        / full.numel() as f32;
    assert!(mad <= 1.5 / 255.0, "init deviates from affine by MAD {mad}");
}

#[test]
fn gradients_reach_all_parameter_groups() {
    let mut net = WarpNet::<f32>::init_from_fov(&Mask::filled(24, 24, true), 16, 16, 6).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(12);
    let img = Tensor::new(
        &[1, 3, 24, 24],
        (0..3 * 24 * 24).map(|_| r.gen_range(0.0f32..1.0)).collect(),
    );
    let loss = net.warp(&img).mean();
    backward(&loss);
    for p in net.parameters_mut() {
        let g = p.tensor.grad().expect("gradient missing");
        assert!(
            g.iter().any(|&v| v != 0.0),
            "parameter {} received a null gradient",
            p.name
        );
    }
}

#[test]
fn baked_grid_equals_staged_forward() {
    let net = WarpNet::<f32>::init_from_fov(&Mask::filled(20, 20, true), 16, 16, 7).unwrap();
    let baked = crate::autodiff::no_grad(|| net.forward_grid());
    let staged = net.forward_grid();
    assert_eq!(baked.values(), staged.values());
}

#[test]
fn grid_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let theta = Tensor::<f32>::new(&[2, 3], vec![0.9, 0.1, 0.0, -0.1, 0.8, 0.05]);
    let grid = affine_grid(&theta, 8, 6);
    let path = dir.path().join("w.grid");
    save_grid(&path, &grid).unwrap();
    let back = load_grid(&path).unwrap();
    assert_eq!(back.shape(), grid.shape());
    assert_eq!(back.values(), grid.values());
    let meta = std::fs::metadata(&path).unwrap();
    assert_eq!(meta.len(), 8 + 8 * 6 * 2 * 4);
}
