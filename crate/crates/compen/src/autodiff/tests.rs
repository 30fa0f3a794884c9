use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_all_gradients, FD_MAX_REL_ERR};
use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_tensor<E: Scalar>(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<E> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| E::from_f64(r.gen_range(-1.0..1.0))).collect();
    Tensor::new(shape, data)
}

#[test]
fn conv2d_all_ones_counts_taps() {
    let x = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
    let w = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
    let y = conv2d(&x, &w, None, 1, 1);
    assert_eq!(y.shape(), &[1, 1, 3, 3]);
    let v = y.values();
    assert_eq!(v[4], 9.0); // center: full 3x3 neighborhood
    assert_eq!(v[0], 4.0); // corner: 2x2 neighborhood
    assert_eq!(v[1], 6.0); // edge
}

#[test]
fn conv2d_identity_kernel() {
    let mut r = rng(1);
    let x = rand_tensor::<f32>(&mut r, &[2, 1, 5, 4]);
    let mut w = vec![0.0f32; 9];
    w[4] = 1.0;
    let w = Tensor::new(&[1, 1, 3, 3], w);
    let y = conv2d(&x, &w, None, 1, 1);
    assert_eq!(y.values(), x.values());
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    let mut r = rng(2);
    let x = rand_tensor::<f64>(&mut r, &[1, 2, 4, 4]).set_requires_grad();
    let w = rand_tensor::<f64>(&mut r, &[3, 2, 3, 3]).set_requires_grad();
    let b = rand_tensor::<f64>(&mut r, &[3]).set_requires_grad();
    let rep = check_all_gradients(
        |inp| conv2d(&inp[0], &inp[1], Some(&inp[2]), 2, 1).mean(),
        &[x, w, b],
    );
    assert!(
        rep.max_rel_err < FD_MAX_REL_ERR,
        "max rel err {}",
        rep.max_rel_err
    );
}

#[test]
fn conv_transpose2d_output_shape() {
    let x = Tensor::<f32>::full(&[1, 1, 4, 4], 1.0);
    let w = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
    let y = conv_transpose2d(&x, &w, None, 2, 1, 0);
    assert_eq!(y.shape(), &[1, 1, 7, 7]);
}

#[test]
fn conv_transpose2d_is_adjoint_of_conv2d() {
    let mut r = rng(3);
    for &(h, w, kh, s, p) in &[(5usize, 5usize, 3usize, 2usize, 1usize), (6, 4, 3, 1, 1), (4, 4, 2, 2, 0)] {
        let x = rand_tensor::<f64>(&mut r, &[1, 2, h, w]);
        let wgt = rand_tensor::<f64>(&mut r, &[3, 2, kh, kh]);
        let y_shape_h = (h + 2 * p - kh) / s + 1;
        let y_shape_w = (w + 2 * p - kh) / s + 1;
        let y = rand_tensor::<f64>(&mut r, &[1, 3, y_shape_h, y_shape_w]);
        let cx = conv2d(&x, &wgt, None, s, p);
        // weight [cout,cin,kh,kw] read as conv-transpose [cin_t,cout_t,kh,kw]
        let ty = conv_transpose2d(&y, &wgt, None, s, p, h - ((y_shape_h - 1) * s + kh - 2 * p));
        assert_eq!(ty.shape()[2], h);
        let lhs: f64 = cx
            .values()
            .iter()
            .zip(y.values().iter())
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = x
            .values()
            .iter()
            .zip(ty.values().iter())
            .map(|(a, b)| a * b)
            .sum();
        assert!(
            (lhs - rhs).abs() < 1e-6,
            "adjoint identity violated: {lhs} vs {rhs} (h={h},k={kh},s={s},p={p})"
        );
    }
}

#[test]
fn conv_transpose2d_gradients_match_finite_differences() {
    let mut r = rng(4);
    let x = rand_tensor::<f64>(&mut r, &[1, 2, 3, 3]).set_requires_grad();
    let w = rand_tensor::<f64>(&mut r, &[2, 3, 3, 3]).set_requires_grad();
    let b = rand_tensor::<f64>(&mut r, &[3]).set_requires_grad();
    let rep = check_all_gradients(
        |inp| conv_transpose2d(&inp[0], &inp[1], Some(&inp[2]), 2, 1, 1).mean(),
        &[x, w, b],
    );
    assert!(
        rep.max_rel_err < FD_MAX_REL_ERR,
        "max rel err {}",
        rep.max_rel_err
    );
}

#[test]
fn grid_sample_identity_grid_is_exact_identity() {
    let mut r = rng(5);
    let x32 = rand_tensor::<f32>(&mut r, &[2, 3, 7, 9]);
    let g32 = identity_grid::<f32>(7, 9);
    assert_eq!(grid_sample(&x32, &g32).values(), x32.values());

    let x64 = rand_tensor::<f64>(&mut r, &[1, 2, 12, 5]);
    let g64 = identity_grid::<f64>(12, 5);
    assert_eq!(grid_sample(&x64, &g64).values(), x64.values());
}

#[test]
fn grid_sample_corner_pin() {
    let mut r = rng(6);
    let x = rand_tensor::<f32>(&mut r, &[1, 2, 4, 4]);
    let g = Tensor::<f32>::full(&[3, 3, 2], -1.0);
    let y = grid_sample(&x, &g);
    let xv = x.values();
    for c in 0..2 {
        for i in 0..9 {
            assert_eq!(y.values()[c * 9 + i], xv[c * 16]);
        }
    }
}

#[test]
fn grid_sample_exact_on_affine_fields() {
    // channel value = a + b*u + c*v in normalized coordinates
    let (h, w) = (9, 11);
    let (a, b, c) = (0.3f64, 0.45f64, -0.2f64);
    let mut data = Vec::new();
    for y in 0..h {
        let v = 2.0 * y as f64 / (h as f64 - 1.0) - 1.0;
        for x in 0..w {
            let u = 2.0 * x as f64 / (w as f64 - 1.0) - 1.0;
            data.push(a + b * u + c * v);
        }
    }
    let img = Tensor::<f64>::new(&[1, 1, h, w], data);
    let mut r = rng(7);
    let mut gdata = Vec::new();
    let mut expect = Vec::new();
    for _ in 0..40 {
        let u = r.gen_range(-0.99..0.99);
        let v = r.gen_range(-0.99..0.99);
        gdata.push(u);
        gdata.push(v);
        expect.push(a + b * u + c * v);
    }
    let grid = Tensor::<f64>::new(&[5, 8, 2], gdata);
    let out = grid_sample(&img, &grid);
    for (o, e) in out.values().iter().zip(expect.iter()) {
        assert!((o - e).abs() < 1e-5, "bilinear not exact on affine field: {o} vs {e}");
    }
}

#[test]
fn grid_sample_gradients_match_finite_differences() {
    let mut r = rng(8);
    let x = rand_tensor::<f64>(&mut r, &[1, 2, 6, 6]).set_requires_grad();
    // keep taps away from cell boundaries so central differences stay on
    // one bilinear patch
    let mut gdata = Vec::new();
    for _ in 0..2 * 4 * 4 {
        let cell: f64 = r.gen_range(-2i32..2) as f64;
        gdata.push((cell + r.gen_range(0.25..0.75)) / 2.5);
    }
    let g = Tensor::<f64>::new(&[4, 4, 2], gdata).set_requires_grad();
    let rep = check_all_gradients(|inp| grid_sample(&inp[0], &inp[1]).mean(), &[x, g]);
    assert!(
        rep.max_rel_err < FD_MAX_REL_ERR,
        "max rel err {}",
        rep.max_rel_err
    );
}

#[test]
fn elementwise_relu_and_clamp() {
    let x = Tensor::<f32>::new(&[3], vec![-2.0, 3.0, 1.5]).set_requires_grad();
    let y = x.relu();
    assert_eq!(y.values(), vec![0.0, 3.0, 1.5]);

    let c = x.clamp01();
    assert_eq!(c.values(), vec![0.0, 1.0, 1.0]);
    let loss = c.mean();
    backward(&loss);
    let g = x.grad().unwrap();
    assert_eq!(g, vec![0.0, 0.0, 0.0]); // all outside (0,1)

    let x2 = Tensor::<f32>::new(&[2], vec![0.5, 1.5]).set_requires_grad();
    let loss2 = x2.clamp01().mean();
    backward(&loss2);
    let g2 = x2.grad().unwrap();
    assert_eq!(g2, vec![0.5, 0.0]); // pass-through inside, zero at saturation
}

#[test]
fn mean_of_ones_and_gradient() {
    let x = Tensor::<f64>::full(&[2, 3], 1.0).set_requires_grad();
    let m = x.mean();
    assert_eq!(m.item(), 1.0);
    backward(&m);
    for g in x.grad().unwrap() {
        assert!((g - 1.0 / 6.0).abs() < 1e-15);
    }
}

#[test]
fn backward_through_product() {
    let w = Tensor::<f64>::scalar(2.0).set_requires_grad();
    let x = Tensor::<f64>::scalar(3.0);
    let loss = w.mul(&x).mean();
    backward(&loss);
    assert_eq!(w.grad().unwrap(), vec![3.0]);
    assert!(x.grad().is_none());
}

#[test]
fn backward_detached_loss_leaves_grads_untouched() {
    let w = Tensor::<f64>::scalar(2.0).set_requires_grad();
    let a = Tensor::<f64>::scalar(1.0);
    let b = Tensor::<f64>::scalar(5.0);
    let loss = a.mul(&b).mean();
    backward(&loss);
    assert!(w.grad().is_none());
}

#[test]
fn backward_accumulates_until_cleared() {
    let w = Tensor::<f64>::scalar(2.0).set_requires_grad();
    let x = Tensor::<f64>::scalar(3.0);
    let loss = w.mul(&x).mean();
    backward(&loss);
    backward(&loss);
    assert_eq!(w.grad().unwrap(), vec![6.0]);
    w.zero_grad();
    backward(&loss);
    assert_eq!(w.grad().unwrap(), vec![3.0]);
}

#[test]
#[should_panic(expected = "scalar")]
fn backward_rejects_non_scalar() {
    let x = Tensor::<f32>::full(&[2], 1.0).set_requires_grad();
    let y = x.relu();
    backward(&y);
}

#[test]
fn backward_is_deterministic() {
    let mut r = rng(9);
    let x = rand_tensor::<f32>(&mut r, &[2, 3, 8, 8]).set_requires_grad();
    let w = rand_tensor::<f32>(&mut r, &[4, 3, 3, 3]).set_requires_grad();
    let run = || {
        x.zero_grad();
        w.zero_grad();
        let loss = conv2d(&x, &w, None, 1, 1).relu().mean();
        backward(&loss);
        (x.grad().unwrap(), w.grad().unwrap())
    };
    let (gx1, gw1) = run();
    let (gx2, gw2) = run();
    assert_eq!(gx1, gx2);
    assert_eq!(gw1, gw2);
}

#[test]
fn no_grad_suppresses_graph() {
    let w = Tensor::<f32>::scalar(2.0).set_requires_grad();
    let y = no_grad(|| w.mul_scalar(3.0));
    assert!(!y.requires_grad());
}

#[test]
fn sub_broadcasts_rhs_over_batch() {
    let a = Tensor::<f64>::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).set_requires_grad();
    let b = Tensor::<f64>::new(&[1, 2], vec![0.5, 1.0]).set_requires_grad();
    let d = a.sub(&b);
    assert_eq!(d.values(), vec![0.5, 1.0, 2.5, 3.0]);
    backward(&d.mean());
    assert_eq!(b.grad().unwrap(), vec![-0.5, -0.5]);
    assert_eq!(a.grad().unwrap(), vec![0.25; 4]);
}

#[test]
fn elementwise_gradients_match_finite_differences() {
    let mut r = rng(10);
    let a = rand_tensor::<f64>(&mut r, &[2, 3]).set_requires_grad();
    let b = rand_tensor::<f64>(&mut r, &[2, 3])
        .values()
        .iter()
        .map(|v| v + 3.0) // keep divisor away from zero
        .collect::<Vec<_>>();
    let b = Tensor::new(&[2, 3], b).set_requires_grad();
    let rep = check_all_gradients(
        |inp| {
            let s = inp[0].mul(&inp[1]).add(&inp[0]).div(&inp[1]);
            s.abs().mul_scalar(0.7).add_scalar(0.1).mean()
        },
        &[a, b],
    );
    assert!(
        rep.max_rel_err < FD_MAX_REL_ERR,
        "max rel err {}",
        rep.max_rel_err
    );
}

#[test]
fn concat_batch_splits_gradient() {
    let a = Tensor::<f64>::full(&[1, 2], 1.0).set_requires_grad();
    let b = Tensor::<f64>::full(&[1, 2], 2.0).set_requires_grad();
    let c = concat_batch(&[a.clone(), b.clone()]);
    assert_eq!(c.shape(), &[2, 2]);
    backward(&c.mean());
    assert_eq!(a.grad().unwrap(), vec![0.25, 0.25]);
    assert_eq!(b.grad().unwrap(), vec![0.25, 0.25]);
}
