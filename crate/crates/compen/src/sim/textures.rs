//! Procedural texture families used for sampling images and surface
//! reflectance: multi-octave value noise, stripes, checkerboards and
//! blotches.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::imaging::ImageRGB;

fn rand_color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [
        rng.gen_range(0.05..0.95),
        rng.gen_range(0.05..0.95),
        rng.gen_range(0.05..0.95),
    ]
}

fn lerp3(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn smoothstep(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

/// Single octave of value noise with the given cell size.
fn noise_octave(rng: &mut ChaCha8Rng, h: usize, w: usize, cell: usize) -> Vec<f32> {
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let lattice: Vec<f32> = (0..gh * gw).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        let fy = y as f32 / cell as f32;
        let iy = fy as usize;
        let ty = smoothstep(fy - iy as f32);
        for x in 0..w {
            let fx = x as f32 / cell as f32;
            let ix = fx as usize;
            let tx = smoothstep(fx - ix as f32);
            let v00 = lattice[iy * gw + ix];
            let v01 = lattice[iy * gw + ix + 1];
            let v10 = lattice[(iy + 1) * gw + ix];
            let v11 = lattice[(iy + 1) * gw + ix + 1];
            let top = v00 + (v01 - v00) * tx;
            let bot = v10 + (v11 - v10) * tx;
            out[y * w + x] = top + (bot - top) * ty;
        }
    }
    out
}

/// Multi-octave value noise mapped between two random colors.
pub fn value_noise(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageRGB {
    let c0 = rand_color(rng);
    let c1 = rand_color(rng);
    let base_cell = rng.gen_range(3..6) * (h.min(w) / 16).max(2);
    let mut acc = vec![0.0f32; h * w];
    let mut amp = 1.0f32;
    let mut total = 0.0f32;
    let mut cell = base_cell;
    for _ in 0..3 {
        let oct = noise_octave(rng, h, w, cell.max(2));
        for (a, o) in acc.iter_mut().zip(oct.iter()) {
            *a += amp * o;
        }
        total += amp;
        amp *= 0.5;
        cell = (cell / 2).max(2);
    }
    let mut img = ImageRGB::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let t = acc[y * w + x] / total;
            img.set_pixel(y, x, lerp3(c0, c1, t));
        }
    }
    img
}

/// Sinusoidal color stripes with random orientation and frequency.
pub fn stripes(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageRGB {
    let c0 = rand_color(rng);
    let c1 = rand_color(rng);
    let theta: f32 = rng.gen_range(0.0..std::f32::consts::PI);
    let freq: f32 = rng.gen_range(2.0..10.0);
    let phase: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let (s, c) = theta.sin_cos();
    let mut img = ImageRGB::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let u = x as f32 / w as f32;
            let v = y as f32 / h as f32;
            let t = 0.5 + 0.5 * (std::f32::consts::TAU * freq * (u * c + v * s) + phase).sin();
            img.set_pixel(y, x, lerp3(c0, c1, t));
        }
    }
    img
}

/// Two-color checkerboard with random cell size and offset.
pub fn checker(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageRGB {
    let c0 = rand_color(rng);
    let c1 = rand_color(rng);
    let cell = rng.gen_range(2..7) * (h.min(w) / 32).max(2);
    let ox = rng.gen_range(0..cell);
    let oy = rng.gen_range(0..cell);
    let mut img = ImageRGB::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let k = ((x + ox) / cell + (y + oy) / cell) % 2;
            img.set_pixel(y, x, if k == 0 { c0 } else { c1 });
        }
    }
    img
}

/// Soft Gaussian blobs over a background color.
pub fn blotches(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageRGB {
    let bg = rand_color(rng);
    let mut img = ImageRGB::filled(h, w, bg);
    let count = rng.gen_range(6..14);
    for _ in 0..count {
        let color = rand_color(rng);
        let cx = rng.gen_range(0.0..w as f32);
        let cy = rng.gen_range(0.0..h as f32);
        let r = rng.gen_range(0.06..0.22) * h.min(w) as f32;
        for y in 0..h {
            for x in 0..w {
                let d2 = (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2);
                let alpha = (-d2 / (2.0 * r * r)).exp();
                if alpha > 1e-3 {
                    let p = img.pixel(y, x);
                    img.set_pixel(y, x, lerp3(p, color, alpha));
                }
            }
        }
    }
    img
}

/// One texture from a rotating family choice.
pub fn texture(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageRGB {
    match rng.gen_range(0..4) {
        0 => value_noise(rng, h, w),
        1 => stripes(rng, h, w),
        2 => checker(rng, h, w),
        _ => blotches(rng, h, w),
    }
}

/// Smooth low-frequency texture (value noise only); used where bilinear
/// resampling error must stay small.
pub fn smooth_texture(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageRGB {
    value_noise(rng, h, w)
}

/// The plain gray probe image projected to capture the surface.
pub fn gray_probe(h: usize, w: usize) -> ImageRGB {
    ImageRGB::filled(h, w, [128.0 / 255.0; 3])
}
