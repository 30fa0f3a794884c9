use super::*;
use crate::imaging::fov_mask;

fn ideal_spec() -> SetupSpec {
    SetupSpec {
        planar: false,
        cam_size: (64, 64),
        prj_size: (64, 64),
        photometric_difficulty: 0.0,
        geometric_difficulty: 0.0,
    }
}

#[test]
fn same_seed_gives_bitwise_identical_setups() {
    let spec = SetupSpec {
        cam_size: (48, 64),
        prj_size: (32, 32),
        ..Default::default()
    };
    let a = gen_setup(7, &spec);
    let b = gen_setup(7, &spec);
    assert_eq!(a.reflectance, b.reflectance);
    assert_eq!(a.color_mix, b.color_mix);
    assert_eq!(a.ambient, b.ambient);
    assert_eq!(a.gamma, b.gamma);
    assert_eq!(a.cam_grid.values(), b.cam_grid.values());
    let img = sampling_images(3, 1, (32, 32)).pop().unwrap();
    let ca = a.render_capture(&img, 5).unwrap();
    let cb = b.render_capture(&img, 5).unwrap();
    assert_eq!(ca, cb);

    let c = gen_setup(8, &spec);
    assert_ne!(a.cam_grid.values(), c.cam_grid.values());
}

#[test]
fn planar_setups_use_a_pure_homography() {
    let spec = SetupSpec {
        planar: true,
        cam_size: (40, 40),
        prj_size: (32, 32),
        ..Default::default()
    };
    let s = gen_setup(9, &spec);
    assert!(s.geom.is_pure_homography());

    let np = gen_setup(9, &SetupSpec { planar: false, ..spec });
    assert!(!np.geom.is_pure_homography());
}

#[test]
fn zero_difficulty_is_the_ideal_setup() {
    let s = gen_setup(11, &ideal_spec());
    assert!(s.reflectance.data().iter().all(|&v| v == 1.0));
    assert_eq!(s.color_mix, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    assert_eq!(s.ambient, [0.0; 3]);
    assert_eq!(s.gamma, 1.0);
    assert_eq!(s.noise_sigma, 0.0);
    assert!(s.geom.is_pure_homography());
}

#[test]
fn ideal_setup_renders_identity() {
    let s = gen_setup(12, &ideal_spec());
    let img = sampling_images(4, 1, (64, 64)).pop().unwrap();
    let cap = s.render_capture(&img, 0).unwrap();
    assert_eq!(cap, img);
}

#[test]
fn black_projector_shows_ambient_times_reflectance() {
    let spec = SetupSpec {
        cam_size: (40, 48),
        prj_size: (32, 32),
        photometric_difficulty: 0.7,
        geometric_difficulty: 0.5,
        planar: false,
    };
    let mut s = gen_setup(13, &spec);
    s.noise_sigma = 0.0;
    let black = ImageRGB::zeros(32, 32);
    let cap = s.render_capture(&black, 0).unwrap();
    for i in 0..40 * 48 {
        for c in 0..3 {
            let want =
                (s.reflectance.data()[3 * i + c] as f64 * s.ambient[c]).clamp(0.0, 1.0) as f32;
            let got = cap.data()[3 * i + c];
            assert!((got - want).abs() < 1e-6, "pixel {i} ch {c}: {got} vs {want}");
        }
    }
}

#[test]
fn gray_projection_on_half_reflectance_halves_values() {
    let spec = SetupSpec {
        cam_size: (32, 32),
        prj_size: (32, 32),
        photometric_difficulty: 0.0,
        geometric_difficulty: 0.0,
        planar: true,
    };
    let mut s = gen_setup(14, &spec);
    s.reflectance = ImageRGB::filled(32, 32, [0.5; 3]);
    let x0 = textures::gray_probe(32, 32);
    let cap = s.render_capture(&x0, 0).unwrap();
    for v in cap.data() {
        assert!((v - 0.5 * 128.0 / 255.0).abs() < 1e-6);
    }
}

#[test]
fn analytic_compensation_inverts_the_ideal_chain() {
    let s = gen_setup(15, &ideal_spec());
    let desired = sampling_images(5, 1, (64, 64)).pop().unwrap();
    let (x, infeasible) = s.analytic_compensation(&desired).unwrap();
    assert!(infeasible.is_empty());
    let max = x
        .data()
        .iter()
        .zip(desired.data().iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(max < 1e-6, "identity compensation off by {max}");
}

#[test]
fn analytic_compensation_divides_by_reflectance() {
    let spec = SetupSpec {
        cam_size: (32, 32),
        prj_size: (32, 32),
        photometric_difficulty: 0.0,
        geometric_difficulty: 0.0,
        planar: true,
    };
    let mut s = gen_setup(16, &spec);
    s.reflectance = ImageRGB::filled(32, 32, [0.5; 3]);
    let want_ok = ImageRGB::filled(32, 32, [0.4; 3]);
    let (x, infeasible) = s.analytic_compensation(&want_ok).unwrap();
    assert!(infeasible.is_empty());
    assert!(x.data().iter().all(|v| (v - 0.8).abs() < 1e-6));

    // desired 0.9 would need projector value 1.8: gamut clipped
    let want_bad = ImageRGB::filled(32, 32, [0.9; 3]);
    let (clipped, infeasible) = s.analytic_compensation(&want_bad).unwrap();
    assert!(infeasible.count() == 32 * 32);
    assert!(clipped.data().iter().all(|&v| v == 1.0));
}

#[test]
fn compensation_round_trip_is_consistent_inside_fov() {
    // smooth reflectance and desired image keep the resampling error of
    // the two-way warp small; noise off
    let spec = SetupSpec {
        cam_size: (72, 96),
        prj_size: (64, 64),
        photometric_difficulty: 0.6,
        geometric_difficulty: 0.6,
        planar: false,
    };
    let mut s = gen_setup(17, &spec);
    s.noise_sigma = 0.0;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(19);
    // smooth reflectance: the oracle's regime excludes hard surface edges
    let mut rho = textures::smooth_texture(&mut rng, 72, 96);
    for v in rho.data_mut() {
        *v = 1.0 - 0.5 * *v;
    }
    s.reflectance = rho;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(18);
    let mut smooth = textures::smooth_texture(&mut rng, 72, 96);
    // keep the request inside the achievable gamut
    for v in smooth.data_mut() {
        *v = 0.15 + 0.35 * *v;
    }
    let (x, infeasible) = s.analytic_compensation(&smooth).unwrap();
    let cap = s.render_capture(&x, 0).unwrap();
    let fov = s.fov_ground_truth();
    let mut max = 0.0f32;
    let margin = 2usize;
    let (h, w) = (72usize, 96usize);
    for y in 0..h {
        for x_ in 0..w {
            // skip the FOV rim where the zero-padded warp interpolates
            // against black
            let interior = (y.saturating_sub(margin)..=(y + margin).min(h - 1)).all(|yy| {
                (x_.saturating_sub(margin)..=(x_ + margin).min(w - 1))
                    .all(|xx| fov.get(yy, xx))
            });
            if !interior || infeasible_near(&infeasible, &s, y, x_) {
                continue;
            }
            for c in 0..3 {
                let d = (cap.data()[(y * w + x_) * 3 + c] - smooth.data()[(y * w + x_) * 3 + c])
                    .abs();
                max = max.max(d);
            }
        }
    }
    assert!(max <= 2.0 / 255.0, "round trip error {max}");
}

/// True when the projector pixel nearest to this camera position was
/// gamut-clipped.
fn infeasible_near(infeasible: &Mask, s: &SyntheticSetup, y: usize, x: usize) -> bool {
    let (ch, cw) = s.spec.cam_size;
    let cx = 2.0 * x as f64 / (cw as f64 - 1.0) - 1.0;
    let cy = 2.0 * y as f64 / (ch as f64 - 1.0) - 1.0;
    let (px, py) = s.geom.eval(cx, cy);
    let (ph, pw) = s.spec.prj_size;
    let ix = ((px + 1.0) * 0.5 * (pw as f64 - 1.0)).round() as isize;
    let iy = ((py + 1.0) * 0.5 * (ph as f64 - 1.0)).round() as isize;
    for dy in -1..=1isize {
        for dx in -1..=1isize {
            let yy = iy + dy;
            let xx = ix + dx;
            if yy >= 0 && xx >= 0 && (yy as usize) < ph && (xx as usize) < pw
                && infeasible.get(yy as usize, xx as usize)
            {
                return true;
            }
        }
    }
    false
}

#[test]
fn geometry_has_no_folds() {
    for seed in [20, 21, 22] {
        let s = gen_setup(seed, &SetupSpec::default());
        let det = s.geom.min_jacobian_det(24, 32);
        assert!(det > 0.0, "seed {seed}: jacobian determinant {det}");
    }
}

#[test]
fn fov_mask_matches_ground_truth_quad() {
    let spec = SetupSpec {
        cam_size: (90, 120),
        prj_size: (64, 64),
        photometric_difficulty: 0.6,
        geometric_difficulty: 0.8,
        planar: false,
    };
    let s = gen_setup(23, &spec);
    let surface = s
        .render_capture(&textures::gray_probe(64, 64), 0)
        .unwrap();
    let detected = fov_mask(&surface).unwrap();
    let truth = s.fov_ground_truth();
    let iou = detected.iou(&truth);
    assert!(iou >= 0.95, "FOV IoU {iou}");
}

#[test]
fn export_round_trips_identical_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SetupSpec {
        cam_size: (48, 64),
        prj_size: (32, 32),
        ..Default::default()
    };
    let setup = gen_setup(24, &spec);
    let train = sampling_images(25, 8, (32, 32));
    let test = sampling_images(26, 4, (32, 32));
    let ds = export_dataset(&setup, &train, &test, dir.path()).unwrap();
    assert_eq!(ds.train.len(), 8);
    assert_eq!(ds.test.len(), 4);

    // loading back reproduces the quantized pixel data exactly
    let surface = ImageRGB::load(dir.path().join("cam/surface.png")).unwrap();
    assert_eq!(surface, ds.surface.quantized());
    let cam0 = ImageRGB::load(dir.path().join("cam/train/0000.png")).unwrap();
    assert_eq!(cam0, ds.train[0].0.quantized());
    let prj3 = ImageRGB::load(dir.path().join("prj/test/0003.png")).unwrap();
    assert_eq!(prj3, ds.test[3].1.quantized());

    let meta: SetupMeta =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("setup.json")).unwrap())
            .unwrap();
    assert_eq!(meta.seed, 24);
    assert_eq!(meta, ds.meta);
}

#[test]
fn child_seed_rule_is_stable() {
    assert_eq!(child_seed(3, 0), 3 * 1_000_003);
    assert_eq!(child_seed(3, 5), 3 * 1_000_003 + 5);
    assert_ne!(child_seed(1, 2), child_seed(2, 1));
}
