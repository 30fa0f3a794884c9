use super::*;
use crate::autodiff::backward;
use crate::imaging::fov_mask;
use crate::loss::LossKind;
use crate::sim::{gen_setup, render_dataset, sampling_images, SetupSpec};

fn tiny_spec() -> SetupSpec {
    SetupSpec {
        planar: false,
        cam_size: (72, 88),
        prj_size: (64, 64),
        photometric_difficulty: 0.6,
        geometric_difficulty: 0.6,
    }
}

fn tiny_dataset(seed: u64, n_train: usize, n_test: usize) -> crate::sim::SetupDataset {
    let setup = gen_setup(seed, &tiny_spec());
    let train = sampling_images(seed + 1, n_train, (64, 64));
    let test = sampling_images(seed + 2, n_test, (64, 64));
    render_dataset(&setup, &train, &test).unwrap()
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        iterations: 6,
        batch: 3,
        canonical: (64, 64),
        checkpoint_every: 0,
        ..TrainConfig::default()
    }
}

#[test]
fn forward_train_with_empty_fov_ignores_camera_content() {
    let ds = tiny_dataset(40, 2, 1);
    let fov = fov_mask(&ds.surface).unwrap();
    let model = CompensationModel::init(&fov, (64, 64), 1).unwrap();
    let dead = crate::imaging::Mask::filled(72, 88, false);
    let a = forward_train(&model, &ds.train[0].0, &ds.surface, &dead);
    let b = forward_train(&model, &ds.train[1].0, &ds.surface, &dead);
    assert_eq!(a.values(), b.values());
}

#[test]
fn one_backward_reaches_all_four_parameter_groups() {
    let ds = tiny_dataset(41, 1, 1);
    let fov = fov_mask(&ds.surface).unwrap();
    let mut model = CompensationModel::init(&fov, (64, 64), 2).unwrap();
    let pred = forward_train(&model, &ds.train[0].0, &ds.surface, &fov);
    let target = ds.train[0].1.to_tensor::<f32>();
    let l = crate::loss::loss(&pred, &target, LossKind::L1Ssim);
    backward(&l);
    let named = ["warp.affine", "warp.tps", "warp.refine.c1.weight", "photo.e1.weight"];
    for p in model.parameters_mut() {
        if named.contains(&p.name.as_str()) {
            let g = p.tensor.grad().expect("missing grad");
            assert!(
                g.iter().any(|&v| v != 0.0),
                "null gradient on {}",
                p.name
            );
        }
    }
}

#[test]
fn zero_iterations_returns_initialized_model() {
    let ds = tiny_dataset(42, 2, 1);
    let cfg = TrainConfig {
        iterations: 0,
        ..tiny_config()
    };
    let out = train(&ds, 2, &cfg, None, |_, _| {}).unwrap();
    assert!(out.curve.is_empty());
    let fov = fov_mask(&ds.surface).unwrap();
    let fresh = CompensationModel::init(&fov, (64, 64), cfg.seed).unwrap();
    for ((_, a), (_, b)) in out.model.named_tensors().iter().zip(fresh.named_tensors().iter()) {
        assert_eq!(a.values(), b.values());
    }
}

#[test]
fn same_seed_trains_to_identical_loss() {
    let ds = tiny_dataset(43, 3, 1);
    let cfg = tiny_config();
    let a = train(&ds, 3, &cfg, None, |_, _| {}).unwrap();
    let b = train(&ds, 3, &cfg, None, |_, _| {}).unwrap();
    let la = a.curve.last().unwrap().loss;
    let lb = b.curve.last().unwrap().loss;
    assert!(
        (la - lb).abs() < 1e-6,
        "determinism violated: {la} vs {lb}"
    );
}

#[test]
fn diverging_loss_aborts_with_checkpoint_marker() {
    let ds = tiny_dataset(44, 2, 1);
    let cfg = TrainConfig {
        iterations: 30,
        lr: 1e18,
        checkpoint_every: 4,
        ..tiny_config()
    };
    match train(&ds, 2, &cfg, None, |_, _| {}) {
        Err(crate::error::TrainError::NonFiniteLoss { iteration, .. }) => {
            assert!(iteration < 30);
        }
        other => panic!("expected divergence, got {:?}", other.is_ok()),
    }
}

#[test]
fn lr_decays_exactly_at_the_configured_iteration() {
    let ds = tiny_dataset(45, 2, 1);
    let cfg = TrainConfig {
        iterations: 8,
        lr_decay_at: 5,
        ..tiny_config()
    };
    let out = train(&ds, 2, &cfg, None, |_, _| {}).unwrap();
    for r in &out.curve {
        let want = if r.iteration >= 5 { cfg.lr * cfg.lr_decay_factor } else { cfg.lr };
        assert_eq!(r.lr, want, "iteration {}", r.iteration);
    }
}

#[test]
fn warmup_switches_loss_kind_exactly_once() {
    let ds = tiny_dataset(46, 2, 1);
    let cfg = TrainConfig {
        iterations: 6,
        l1_warmup_iterations: 3,
        loss_kind: LossKind::L1Ssim,
        ..tiny_config()
    };
    let out = train(&ds, 2, &cfg, None, |_, _| {}).unwrap();
    let kinds: Vec<LossKind> = out.curve.iter().map(|r| r.kind).collect();
    let switches = kinds.windows(2).filter(|w| w[0] != w[1]).count();
    assert_eq!(switches, 1);
    assert_eq!(kinds[2], LossKind::L1);
    assert_eq!(kinds[3], LossKind::L1Ssim);
}

#[test]
fn checkpoint_cadence_and_final() {
    let ds = tiny_dataset(47, 2, 1);
    let cfg = TrainConfig {
        iterations: 5,
        checkpoint_every: 2,
        ..tiny_config()
    };
    let mut seen = Vec::new();
    train(&ds, 2, &cfg, None, |i, _| seen.push(i)).unwrap();
    assert_eq!(seen, vec![2, 4, 5]);
}

#[test]
fn model_checkpoint_round_trips_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(48, 2, 1);
    let out = train(&ds, 2, &tiny_config(), None, |_, _| {}).unwrap();
    let path = dir.path().join("model.ckpt");
    out.model.save(&path).unwrap();
    let back = CompensationModel::load(&path).unwrap();
    assert_eq!(back.canonical_size(), (64, 64));
    for ((na, a), (nb, b)) in out
        .model
        .named_tensors()
        .iter()
        .zip(back.named_tensors().iter())
    {
        assert_eq!(na, nb);
        assert_eq!(a.values(), b.values(), "mismatch in {na}");
    }
}

#[test]
fn baked_model_reproduces_full_forward() {
    let ds = tiny_dataset(49, 3, 2);
    let out = train(&ds, 3, &tiny_config(), None, |_, _| {}).unwrap();
    let baked = simplify(&out.model, &ds.surface, &out.fov, (64, 64)).unwrap();
    for (cam, _) in ds.test.iter() {
        let full = forward_train(&out.model, cam, &ds.surface, &out.fov);
        let quick = baked.forward_capture(cam, &out.fov);
        let max = full
            .values()
            .iter()
            .zip(quick.values().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max < 1e-5, "baked differs from full by {max}");
    }
}

#[test]
fn full_frame_fov_gives_identity_displayable_affine() {
    let fov = crate::imaging::Mask::filled(64, 64, true);
    let model = CompensationModel::init(&fov, (64, 64), 3).unwrap();
    let surface = crate::imaging::ImageRGB::filled(64, 64, [0.5; 3]);
    // zero the refinement so the warp is the exact affine identity
    let mut model = model;
    for p in model.warp.refine.parameters_mut() {
        let n = p.tensor.numel();
        p.load(&vec![0.0; n]);
    }
    model.warp.tps.load(&crate::warp::identity_tps::<f32>());
    let baked = simplify(&model, &surface, &fov, (64, 64)).unwrap();
    let a = baked.displayable_affine;
    assert!((a[0][0] - 1.0).abs() < 1e-6 && a[0][2].abs() < 1e-6);
    assert!((a[1][1] - 1.0).abs() < 1e-6 && a[1][2].abs() < 1e-6);

    // identity A: the fitted desired image equals the input
    let z = sampling_images(50, 1, (64, 64)).pop().unwrap();
    let fit = baked.fit_desired(&z);
    let max = fit
        .data()
        .iter()
        .zip(z.data().iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(max == 0.0, "identity fit changed the image by {max}");
}

#[test]
fn displayable_affine_matches_analytic_rescale() {
    // half-frame centered square FOV: A should scale by 1/s around the
    // center
    let mut fov = crate::imaging::Mask::filled(64, 64, false);
    for y in 16..48 {
        for x in 16..48 {
            fov.set(y, x, true);
        }
    }
    let mut model = CompensationModel::init(&crate::imaging::Mask::filled(64, 64, true), (64, 64), 4).unwrap();
    for p in model.warp.refine.parameters_mut() {
        let n = p.tensor.numel();
        p.load(&vec![0.0; n]);
    }
    model.warp.tps.load(&crate::warp::identity_tps::<f32>());
    model.warp.affine.load(&crate::warp::identity_affine::<f32>());
    let surface = crate::imaging::ImageRGB::filled(64, 64, [0.5; 3]);
    let baked = simplify(&model, &surface, &fov, (64, 64)).unwrap();
    let a = baked.displayable_affine;
    let nx = |p: f64| 2.0 * p / 63.0 - 1.0;
    let s = 0.5 * (nx(47.0) - nx(16.0));
    assert!((a[0][0] as f64 - 1.0 / s).abs() < 1e-5, "scale {} vs {}", a[0][0], 1.0 / s);
}

#[test]
fn baked_bundle_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(51, 2, 1);
    let out = train(&ds, 2, &tiny_config(), None, |_, _| {}).unwrap();
    let baked = simplify(&out.model, &ds.surface, &out.fov, (64, 64)).unwrap();
    let stem = dir.path().join("demo");
    baked.save(&stem).unwrap();
    assert!(stem.with_extension("grid").exists());
    assert!(stem.with_extension("ckpt").exists());
    assert!(stem.with_extension("json").exists());
    let back = BakedModel::load(&stem).unwrap();
    assert_eq!(back.grid.values(), baked.grid.values());
    assert_eq!(back.displayable_affine, baked.displayable_affine);
    assert_eq!(back.fov_canonical, baked.fov_canonical);

    let z = sampling_images(52, 1, (64, 64)).pop().unwrap();
    assert_eq!(back.infer_compensation(&z), baked.infer_compensation(&z));
}

#[test]
fn inference_on_black_is_bitwise_reproducible() {
    let ds = tiny_dataset(53, 2, 1);
    let out = train(&ds, 2, &tiny_config(), None, |_, _| {}).unwrap();
    let baked = simplify(&out.model, &ds.surface, &out.fov, (64, 64)).unwrap();
    let black = crate::imaging::ImageRGB::zeros(64, 64);
    let a = baked.infer_compensation(&black);
    let b = baked.infer_compensation(&black);
    assert_eq!(a, b);
}

#[test]
fn pretrain_zero_iterations_returns_pre_init_weights() {
    let spec = SetupSpec {
        planar: true,
        cam_size: (64, 64),
        prj_size: (64, 64),
        photometric_difficulty: 0.5,
        geometric_difficulty: 0.0,
    };
    let setup = gen_setup(54, &spec);
    let imgs = sampling_images(55, 4, (64, 64));
    let ds = render_dataset(&setup, &imgs, &imgs[..1].to_vec()).unwrap();
    let cfg = PretrainConfig {
        iterations: 0,
        pre_init_iterations: 2,
        pre_init_images: 2,
        canonical: (64, 64),
        ..Default::default()
    };
    let (named, curve) = pretrain(&[ds], &cfg).unwrap();
    assert!(curve.is_empty());

    // reproduce the pre-init path directly: weights must match
    let mut reference = crate::photo::PhotoNet::<f32>::new(cfg.seed.wrapping_add(11));
    let imgs = sampling_images(cfg.seed.wrapping_add(13), 2, (64, 64));
    crate::photo::pre_init(&mut reference, &imgs, 2, cfg.batch, cfg.seed).unwrap();
    for (name, shape, data) in &named {
        let t = reference
            .named_tensors()
            .into_iter()
            .find(|(n, _)| n == name)
            .unwrap()
            .1;
        assert_eq!(shape, t.shape());
        assert_eq!(*data, t.values(), "weight {name} differs");
    }
}
