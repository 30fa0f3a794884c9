//! Procedural projector-camera-surface simulator: renders what the camera
//! would capture for a given projector input, generates whole benchmark
//! setups, and provides the closed-form compensation oracle for the
//! diffuse invertible case.

pub mod geometry;
pub mod textures;

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{grid_sample, no_grad, Tensor};
use crate::error::DataError;
use crate::imaging::{ImageRGB, Mask};
use geometry::{random_fov_quad, GeomMap, Homography, TpsField};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("color mixing matrix is singular")]
    SingularColorMix,
    #[error("projector image is {got_w}x{got_h}, setup expects {want_w}x{want_h}")]
    SizeMismatch {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
}

/// Generation knobs for one synthetic setup.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct SetupSpec {
    pub planar: bool,
    /// camera frame (h, w)
    pub cam_size: (usize, usize),
    /// projector frame (h, w)
    pub prj_size: (usize, usize),
    /// 0 = white diffuse surface, identity color transfer, no ambient,
    /// gamma 1, no noise; 1 = full declared ranges
    pub photometric_difficulty: f64,
    /// 0 = identity geometry; otherwise scales the spline displacement
    pub geometric_difficulty: f64,
}

impl Default for SetupSpec {
    fn default() -> Self {
        SetupSpec {
            planar: false,
            cam_size: (180, 240),
            prj_size: (128, 128),
            photometric_difficulty: 0.8,
            geometric_difficulty: 0.8,
        }
    }
}

/// Ground-truth simulator parameters for one projector-camera setup.
pub struct SyntheticSetup {
    pub spec: SetupSpec,
    pub seed: u64,
    pub geom: GeomMap,
    /// camera-sized RGB reflectance in [0.1, 1]
    pub reflectance: ImageRGB,
    /// projector color mixing matrix, near identity
    pub color_mix: [[f64; 3]; 3],
    /// global lighting reaching the surface, per channel
    pub ambient: [f64; 3],
    /// projector response exponent
    pub gamma: f64,
    pub noise_sigma: f64,
    cam_grid: Tensor<f32>,
    prj_grid: Tensor<f32>,
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(salt)
        .wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// Child seed for setup `index` under a master seed.
pub fn child_seed(master: u64, index: u64) -> u64 {
    master.wrapping_mul(1_000_003).wrapping_add(index)
}

/// Deterministically generates one setup from a seed and knobs.
pub fn gen_setup(seed: u64, spec: &SetupSpec) -> SyntheticSetup {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 1));

    let g = spec.geometric_difficulty;
    let geom = if g == 0.0 {
        GeomMap::identity()
    } else {
        let quad = random_fov_quad(&mut rng, g);
        let prj_corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
        let h = Homography::from_correspondences(&quad, &prj_corners);
        if spec.planar {
            GeomMap::new(h, None, None)
        } else {
            let amp = 0.04 * g;
            let n = 4;
            let vx: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-amp..amp)).collect();
            let vy: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-amp..amp)).collect();
            GeomMap::new(h, Some(TpsField::fit(n, &vx)), Some(TpsField::fit(n, &vy)))
        }
    };

    let d = spec.photometric_difficulty;
    let (ch, cw) = spec.cam_size;
    let reflectance = if d == 0.0 {
        ImageRGB::filled(ch, cw, [1.0; 3])
    } else {
        let tex = textures::texture(&mut rng, ch, cw);
        let mut r = ImageRGB::zeros(ch, cw);
        for (dst, src) in r.data_mut().iter_mut().zip(tex.data().iter()) {
            *dst = 1.0 - 0.9 * d as f32 * src;
        }
        r
    };
    let mut color_mix = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            color_mix[i][j] = if i == j {
                1.0 - d * rng.gen_range(0.03..0.12)
            } else {
                d * rng.gen_range(0.005..0.05)
            };
        }
    }
    let ambient = [
        d * rng.gen_range(0.02..0.12),
        d * rng.gen_range(0.02..0.12),
        d * rng.gen_range(0.02..0.12),
    ];
    let gamma = 1.0 + d * rng.gen_range(0.5..1.5);
    let noise_sigma = d * rng.gen_range(0.002..0.008);

    let cam_grid = geom.camera_grid(ch, cw);
    let (ph, pw) = spec.prj_size;
    let mut prj_grid_data = Vec::with_capacity(ph * pw * 2);
    for y in 0..ph {
        let py = 2.0 * y as f64 / (ph as f64 - 1.0) - 1.0;
        for x in 0..pw {
            let px = 2.0 * x as f64 / (pw as f64 - 1.0) - 1.0;
            let (cx, cy) = geom.eval_inverse(px, py);
            prj_grid_data.push(cx as f32);
            prj_grid_data.push(cy as f32);
        }
    }
    let prj_grid = Tensor::new(&[ph, pw, 2], prj_grid_data);

    SyntheticSetup {
        spec: *spec,
        seed,
        geom,
        reflectance,
        color_mix,
        ambient,
        gamma,
        noise_sigma,
        cam_grid,
        prj_grid,
    }
}

impl SyntheticSetup {
    /// Camera pixels actually illuminated by the projector.
    pub fn fov_ground_truth(&self) -> Mask {
        let (h, w) = self.spec.cam_size;
        let mut data = Vec::with_capacity(h * w);
        let gv = self.cam_grid.values();
        for i in 0..h * w {
            let px = gv[2 * i];
            let py = gv[2 * i + 1];
            data.push((-1.0..=1.0).contains(&px) && (-1.0..=1.0).contains(&py));
        }
        Mask::new(h, w, data)
    }

    /// What the camera captures when `prj` is projected. `noise_salt`
    /// decorrelates the sensor noise between images of one dataset while
    /// keeping everything a pure function of (seed, salt, input).
    pub fn render_capture(&self, prj: &ImageRGB, noise_salt: u64) -> Result<ImageRGB, SimError> {
        let (ph, pw) = self.spec.prj_size;
        if (prj.height(), prj.width()) != (ph, pw) {
            return Err(SimError::SizeMismatch {
                got_w: prj.width(),
                got_h: prj.height(),
                want_w: pw,
                want_h: ph,
            });
        }
        // projector-side radiance: V . (prj ^ gamma)
        let mut radiance = ImageRGB::zeros(ph, pw);
        for i in 0..ph * pw {
            let p = [
                (prj.data()[3 * i] as f64).powf(self.gamma),
                (prj.data()[3 * i + 1] as f64).powf(self.gamma),
                (prj.data()[3 * i + 2] as f64).powf(self.gamma),
            ];
            for c in 0..3 {
                radiance.data_mut()[3 * i + c] = (self.color_mix[c][0] * p[0]
                    + self.color_mix[c][1] * p[1]
                    + self.color_mix[c][2] * p[2]) as f32;
            }
        }
        // pull into the camera frame; outside the FOV the projector
        // contributes nothing
        let rad_t = radiance.to_tensor::<f32>();
        let cam_rad = no_grad(|| grid_sample(&rad_t, &self.cam_grid));
        let (chh, cww) = self.spec.cam_size;
        let hw = chh * cww;
        let rv = cam_rad.values();
        let mut out = ImageRGB::zeros(chh, cww);
        let mut noise_rng = {
            use rand::SeedableRng;
            ChaCha8Rng::seed_from_u64(mix_seed(self.seed, 0x4E01_5E00 ^ noise_salt))
        };
        let normal = Normal::new(0.0f64, 1.0).unwrap();
        for i in 0..hw {
            for c in 0..3 {
                let lit = rv[c * hw + i] as f64 + self.ambient[c];
                let mut v = self.reflectance.data()[3 * i + c] as f64 * lit;
                if self.noise_sigma > 0.0 {
                    v += self.noise_sigma * normal.sample(&mut noise_rng);
                }
                out.data_mut()[3 * i + c] = (v as f32).clamp(0.0, 1.0);
            }
        }
        Ok(out)
    }

    /// Closed-form compensation for the diffuse invertible case (noise
    /// ignored): the projector image whose capture best matches `desired`,
    /// plus the mask of projector pixels that would need values outside
    /// [0,1] (gamut clipped).
    pub fn analytic_compensation(
        &self,
        desired: &ImageRGB,
    ) -> Result<(ImageRGB, Mask), SimError> {
        let (ch, cw) = self.spec.cam_size;
        assert_eq!(
            (desired.height(), desired.width()),
            (ch, cw),
            "analytic_compensation: desired image must be camera-sized"
        );
        let vinv = invert3(&self.color_mix).ok_or(SimError::SingularColorMix)?;
        let (ph, pw) = self.spec.prj_size;
        // desired and reflectance sampled at each projector pixel's
        // camera-frame position
        let des_t = desired.to_tensor::<f32>();
        let ref_t = self.reflectance.to_tensor::<f32>();
        let des_p = no_grad(|| grid_sample(&des_t, &self.prj_grid));
        let ref_p = no_grad(|| grid_sample(&ref_t, &self.prj_grid));
        let hw = ph * pw;
        let dv = des_p.values();
        let rv = ref_p.values();
        let mut out = ImageRGB::zeros(ph, pw);
        let mut infeasible = Mask::filled(ph, pw, false);
        for i in 0..hw {
            let mut need = [0.0f64; 3];
            for c in 0..3 {
                let rho = rv[c * hw + i] as f64;
                if rho <= 1e-4 {
                    infeasible.set(i / pw, i % pw, true);
                    continue;
                }
                need[c] = dv[c * hw + i] as f64 / rho - self.ambient[c];
            }
            let mut bad = false;
            for c in 0..3 {
                let u = vinv[c][0] * need[0] + vinv[c][1] * need[1] + vinv[c][2] * need[2];
                let x = if u <= 0.0 {
                    if u < -1e-6 {
                        bad = true;
                    }
                    0.0
                } else {
                    u.powf(1.0 / self.gamma)
                };
                if x > 1.0 {
                    bad = true;
                }
                out.data_mut()[3 * i + c] = (x as f32).clamp(0.0, 1.0);
            }
            if bad {
                infeasible.set(i / pw, i % pw, true);
            }
        }
        Ok((out, infeasible))
    }
}

fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-9 {
        return None;
    }
    let inv = [
        [
            (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det,
        ],
        [
            (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det,
        ],
        [
            (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det,
        ],
    ];
    Some(inv)
}

/// One projector-camera setup's data: surface capture plus paired
/// sampling images.
pub struct SetupDataset {
    pub surface: ImageRGB,
    /// (camera capture, projector input) pairs
    pub train: Vec<(ImageRGB, ImageRGB)>,
    pub test: Vec<(ImageRGB, ImageRGB)>,
    pub meta: SetupMeta,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SetupMeta {
    pub version: u32,
    pub seed: u64,
    pub planar: bool,
    /// (h, w)
    pub cam_size: (usize, usize),
    pub prj_size: (usize, usize),
    pub photometric_difficulty: f64,
    pub geometric_difficulty: f64,
}

pub const DATASET_VERSION: u32 = 1;

impl SetupMeta {
    pub fn of(setup: &SyntheticSetup) -> SetupMeta {
        SetupMeta {
            version: DATASET_VERSION,
            seed: setup.seed,
            planar: setup.spec.planar,
            cam_size: setup.spec.cam_size,
            prj_size: setup.spec.prj_size,
            photometric_difficulty: setup.spec.photometric_difficulty,
            geometric_difficulty: setup.spec.geometric_difficulty,
        }
    }

    pub fn spec(&self) -> SetupSpec {
        SetupSpec {
            planar: self.planar,
            cam_size: self.cam_size,
            prj_size: self.prj_size,
            photometric_difficulty: self.photometric_difficulty,
            geometric_difficulty: self.geometric_difficulty,
        }
    }
}

/// Projector sampling images (procedural textures) at the given size.
pub fn sampling_images(seed: u64, count: usize, size: (usize, usize)) -> Vec<ImageRGB> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x7E37));
    (0..count)
        .map(|_| textures::texture(&mut rng, size.0, size.1))
        .collect()
}

/// Renders a full in-memory dataset for the setup.
pub fn render_dataset(
    setup: &SyntheticSetup,
    train_imgs: &[ImageRGB],
    test_imgs: &[ImageRGB],
) -> Result<SetupDataset, SimError> {
    let (ph, pw) = setup.spec.prj_size;
    let surface = setup.render_capture(&textures::gray_probe(ph, pw), 0)?;
    let mut train = Vec::with_capacity(train_imgs.len());
    for (i, img) in train_imgs.iter().enumerate() {
        train.push((setup.render_capture(img, 1000 + i as u64)?, img.clone()));
    }
    let mut test = Vec::with_capacity(test_imgs.len());
    for (i, img) in test_imgs.iter().enumerate() {
        test.push((setup.render_capture(img, 2_000_000 + i as u64)?, img.clone()));
    }
    Ok(SetupDataset {
        surface,
        train,
        test,
        meta: SetupMeta::of(setup),
    })
}

/// Writes the benchmark directory layout:
/// `cam/surface.png`, `cam/{train,test}/%04d.png`,
/// `prj/{train,test}/%04d.png` and `setup.json`.
pub fn export_dataset(
    setup: &SyntheticSetup,
    train_imgs: &[ImageRGB],
    test_imgs: &[ImageRGB],
    out_dir: impl AsRef<Path>,
) -> Result<SetupDataset, DataError> {
    let out = out_dir.as_ref();
    let ds = render_dataset(setup, train_imgs, test_imgs).map_err(|e| DataError::BadMetadata {
        path: out.to_path_buf(),
        reason: e.to_string(),
    })?;
    ds.surface.save(out.join("cam/surface.png"))?;
    for (i, (cam, prj)) in ds.train.iter().enumerate() {
        cam.save(out.join(format!("cam/train/{i:04}.png")))?;
        prj.save(out.join(format!("prj/train/{i:04}.png")))?;
    }
    for (i, (cam, prj)) in ds.test.iter().enumerate() {
        cam.save(out.join(format!("cam/test/{i:04}.png")))?;
        prj.save(out.join(format!("prj/test/{i:04}.png")))?;
    }
    let meta_path = out.join("setup.json");
    let json = serde_json::to_string_pretty(&ds.meta).expect("meta serializes");
    std::fs::write(&meta_path, json).map_err(|source| DataError::Io {
        path: meta_path,
        source,
    })?;
    Ok(ds)
}

#[cfg(test)]
mod tests;
