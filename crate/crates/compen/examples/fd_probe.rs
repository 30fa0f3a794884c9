use std::time::Instant;
use compen::bench::evaluate_with_fov;
use compen::pipeline::{train, TrainConfig};
use compen::sim::{gen_setup, render_dataset, sampling_images, SetupSpec};

fn main() {
    let spec = SetupSpec {
        planar: false,
        cam_size: (180, 240),
        prj_size: (128, 128),
        photometric_difficulty: 0.8,
        geometric_difficulty: 0.8,
    };
    let setup = gen_setup(100, &spec);
    let train_imgs = sampling_images(101, 48, (128, 128));
    let test_imgs = sampling_images(102, 8, (128, 128));
    let ds = render_dataset(&setup, &train_imgs, &test_imgs).unwrap();

    for iters in [100usize, 400, 1000] {
        let cfg = TrainConfig {
            iterations: iters,
            batch: 8,
            canonical: (128, 128),
            checkpoint_every: 0,
            seed: 7,
            ..TrainConfig::default()
        };
        let t0 = Instant::now();
        let out = train(&ds, 48, &cfg, None, |_, _| {}).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        let e = evaluate_with_fov(&out.model, &ds, &out.fov, 48, "pilot");
        println!(
            "iters {iters}: {dt:.1}s ({:.2} s/iter)  psnr {:.2} (base {:.2}, +{:.2})  ssim {:.3} (base {:.3}, +{:.3})  loss {:.4}",
            dt / iters as f64,
            e.psnr, e.uncompensated_psnr, e.psnr - e.uncompensated_psnr,
            e.ssim, e.uncompensated_ssim, e.ssim - e.uncompensated_ssim,
            out.curve.last().unwrap().loss
        );
    }
}
