//! PSNR, RMSE and SSIM between images in [0,1], computed at f64.

use super::ImageRGB;

/// Identical images report this instead of an infinite ratio.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn mse(a: &ImageRGB, b: &ImageRGB) -> f64 {
    assert_eq!(
        (a.height(), a.width()),
        (b.height(), b.width()),
        "metric: shape mismatch {}x{} vs {}x{}",
        a.height(),
        a.width(),
        b.height(),
        b.width()
    );
    let mut acc = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data().iter()) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    acc / a.data().len() as f64
}

/// Peak signal-to-noise ratio in decibels, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageRGB, b: &ImageRGB) -> f64 {
    let m = mse(a, b);
    if m == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB)
    }
}

/// Root mean square of the per-pixel RGB difference vector norm, i.e.
/// sqrt(3 * MSE). Below the PSNR cap the two metrics satisfy
/// rmse = sqrt(3) * 10^(-psnr/20) identically.
pub fn rmse(a: &ImageRGB, b: &ImageRGB) -> f64 {
    (3.0 * mse(a, b)).sqrt()
}

/// Normalized 11x11 Gaussian window with sigma 1.5.
pub fn gaussian_window_11() -> [f64; 121] {
    let sigma = 1.5f64;
    let mut g1 = [0.0f64; 11];
    let mut sum = 0.0;
    for (i, v) in g1.iter_mut().enumerate() {
        let d = i as f64 - 5.0;
        *v = (-d * d / (2.0 * sigma * sigma)).exp();
        sum += *v;
    }
    for v in &mut g1 {
        *v /= sum;
    }
    let mut w = [0.0f64; 121];
    for y in 0..11 {
        for x in 0..11 {
            w[y * 11 + x] = g1[y] * g1[x];
        }
    }
    w
}

/// Mean structural similarity over all fully-valid 11x11 windows, computed
/// per channel and averaged. Symmetric in its arguments; equals 1.0 for
/// identical images.
pub fn ssim(a: &ImageRGB, b: &ImageRGB) -> f64 {
    assert_eq!(
        (a.height(), a.width()),
        (b.height(), b.width()),
        "ssim: shape mismatch"
    );
    let (h, w) = (a.height(), a.width());
    assert!(
        h >= 11 && w >= 11,
        "ssim: image {}x{} smaller than the 11x11 window",
        h,
        w
    );
    let win = gaussian_window_11();
    let oh = h - 10;
    let ow = w - 10;
    let mut acc = 0.0f64;
    for ch in 0..3 {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut mu_x = 0.0f64;
                let mut mu_y = 0.0f64;
                let mut xx = 0.0f64;
                let mut yy = 0.0f64;
                let mut xy = 0.0f64;
                for ky in 0..11 {
                    for kx in 0..11 {
                        let wv = win[ky * 11 + kx];
                        let i = ((oy + ky) * w + ox + kx) * 3 + ch;
                        let xv = a.data()[i] as f64;
                        let yv = b.data()[i] as f64;
                        mu_x += wv * xv;
                        mu_y += wv * yv;
                        xx += wv * (xv * xv);
                        yy += wv * (yv * yv);
                        // grouped so that swapping the images is bitwise
                        // symmetric
                        xy += wv * (xv * yv);
                    }
                }
                let var_x = xx - mu_x * mu_x;
                let var_y = yy - mu_y * mu_y;
                let cov = xy - mu_x * mu_y;
                let num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2);
                let den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2);
                acc += num / den;
            }
        }
    }
    acc / (3 * oh * ow) as f64
}
