//! Geometric correction: a cascaded affine + thin plate spline warp with a
//! learned grid refinement, producing one sampling grid so the image is
//! interpolated exactly once.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    affine_grid, compose_grids, grid_from_image, grid_sample, grid_to_image, tps_grid, Parameter,
    Scalar, Tensor, TPS_PARAMS_PER_DIM,
};
use crate::error::{CheckpointError, ImagingError};
use crate::imaging::{bounding_rect, Mask};
use crate::nn::{Conv2d, ConvTranspose2d};

/// Scale of the random initialization for the spline weights and the
/// refinement network.
pub const INIT_SCALE: f64 = 1e-4;

/// Identity affine parameters as a flat [2,3] row-major buffer.
pub fn identity_affine<E: Scalar>() -> Vec<E> {
    [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]
        .iter()
        .map(|&v| E::from_f64(v))
        .collect()
}

/// Thin plate spline parameters whose induced map is the identity:
/// zero radial weights, affine part (0, 1, 0) for x and (0, 0, 1) for y.
pub fn identity_tps<E: Scalar>() -> Vec<E> {
    let mut t = vec![E::ZERO; 2 * TPS_PARAMS_PER_DIM];
    t[TPS_PARAMS_PER_DIM - 2] = E::ONE; // x dim: coefficient of u
    t[2 * TPS_PARAMS_PER_DIM - 1] = E::ONE; // y dim: coefficient of v
    t
}

/// Grid refinement network: a small strided encoder-decoder on the
/// 2-channel grid with a residual connection, so zero weights give the
/// identity refinement.
pub struct RefineNet<E: Scalar> {
    pub c1: Conv2d<E>,
    pub c2: Conv2d<E>,
    pub t1: ConvTranspose2d<E>,
    pub t2: ConvTranspose2d<E>,
}

impl<E: Scalar> RefineNet<E> {
    pub fn small_init(rng: &mut ChaCha8Rng) -> Self {
        RefineNet {
            c1: Conv2d::small("warp.refine.c1", rng, 2, 16, 3, 2, 1, INIT_SCALE),
            c2: Conv2d::small("warp.refine.c2", rng, 16, 32, 3, 2, 1, INIT_SCALE),
            t1: ConvTranspose2d::small("warp.refine.t1", rng, 32, 16, 3, 2, 1, 1, INIT_SCALE),
            t2: ConvTranspose2d::small("warp.refine.t2", rng, 16, 2, 3, 2, 1, 1, INIT_SCALE),
        }
    }

    pub fn zeroed(rng: &mut ChaCha8Rng) -> Self {
        let mut net = Self::small_init(rng);
        net.c1.zero();
        net.c2.zero();
        net.t1.zero();
        net.t2.zero();
        net
    }

    /// Adds a learned displacement to the grid. Requires H and W divisible
    /// by 4 (two stride-2 stages down and up).
    pub fn refine(&self, grid: &Tensor<E>) -> Tensor<E> {
        let (h, w) = match grid.shape() {
            [h, w, 2] => (*h, *w),
            other => panic!("refine_grid: expected [H,W,2], got {:?}", other),
        };
        assert!(
            h % 4 == 0 && w % 4 == 0,
            "refine_grid: size {}x{} not divisible by 4",
            h,
            w
        );
        let img = grid_to_image(grid);
        let x = self.c1.forward(&img).relu();
        let x = self.c2.forward(&x).relu();
        let x = self.t1.forward(&x).relu();
        let x = self.t2.forward(&x);
        grid_from_image(&img.add(&x))
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<E>> {
        vec![
            &mut self.c1.weight,
            &mut self.c1.bias,
            &mut self.c2.weight,
            &mut self.c2.bias,
            &mut self.t1.weight,
            &mut self.t1.bias,
            &mut self.t2.weight,
            &mut self.t2.bias,
        ]
    }
}

/// The geometric correction subnet: learnable affine and spline grids,
/// composed in coordinate space and refined, then applied to images with a
/// single bilinear sampling.
pub struct WarpNet<E: Scalar> {
    pub affine: Parameter<E>,
    pub tps: Parameter<E>,
    pub refine: RefineNet<E>,
    h: usize,
    w: usize,
}

impl<E: Scalar> WarpNet<E> {
    /// Identity warp with a zeroed refinement network; useful as a neutral
    /// starting point and in tests.
    pub fn identity(h: usize, w: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        WarpNet {
            affine: Parameter::new("warp.affine", &[2, 3], identity_affine()),
            tps: Parameter::new("warp.tps", &[2, TPS_PARAMS_PER_DIM], identity_tps()),
            refine: RefineNet::zeroed(&mut rng),
            h,
            w,
        }
    }

    /// Task-specific initialization: the affine maps the output frame onto
    /// the FOV mask's bounding rectangle in normalized camera coordinates;
    /// spline weights and the refinement net start at the 1e-4 scale.
    pub fn init_from_fov(
        fov: &Mask,
        out_h: usize,
        out_w: usize,
        seed: u64,
    ) -> Result<Self, ImagingError> {
        let theta: Vec<E> = fov_fit_affine(fov)?
            .iter()
            .map(|&v| E::from_f64(v))
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tps = identity_tps::<E>();
        for (i, v) in crate::nn::uniform_init::<E>(&mut rng, 2 * TPS_PARAMS_PER_DIM, INIT_SCALE)
            .into_iter()
            .enumerate()
        {
            // perturb only the radial weights; the affine part stays identity
            let k = i % TPS_PARAMS_PER_DIM;
            if k < TPS_PARAMS_PER_DIM - 3 {
                tps[i] += v;
            }
        }
        Ok(WarpNet {
            affine: Parameter::new("warp.affine", &[2, 3], theta),
            tps: Parameter::new("warp.tps", &[2, TPS_PARAMS_PER_DIM], tps),
            refine: RefineNet::small_init(&mut rng),
            h: out_h,
            w: out_w,
        })
    }

    pub fn out_size(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    /// The affine-only grid (coarsest stage).
    pub fn affine_grid(&self) -> Tensor<E> {
        affine_grid(&self.affine.tensor, self.h, self.w)
    }

    /// The full composed and refined sampling grid.
    pub fn forward_grid(&self) -> Tensor<E> {
        let ga = affine_grid(&self.affine.tensor, self.h, self.w);
        let gt = tps_grid(&self.tps.tensor, self.h, self.w);
        let composed = compose_grids(&ga, &gt);
        self.refine.refine(&composed)
    }

    /// Warps an image through the current grid with one bilinear sampling.
    pub fn warp(&self, img: &Tensor<E>) -> Tensor<E> {
        grid_sample(img, &self.forward_grid())
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<E>> {
        let mut ps = vec![&mut self.affine, &mut self.tps];
        ps.extend(self.refine.parameters_mut());
        ps
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor<E>)> {
        let mut out = vec![
            (self.affine.name.clone(), self.affine.tensor.clone()),
            (self.tps.name.clone(), self.tps.tensor.clone()),
        ];
        for p in [
            (&self.refine.c1.weight, &self.refine.c1.bias),
            (&self.refine.c2.weight, &self.refine.c2.bias),
        ] {
            out.push((p.0.name.clone(), p.0.tensor.clone()));
            out.push((p.1.name.clone(), p.1.tensor.clone()));
        }
        for p in [
            (&self.refine.t1.weight, &self.refine.t1.bias),
            (&self.refine.t2.weight, &self.refine.t2.bias),
        ] {
            out.push((p.0.name.clone(), p.0.tensor.clone()));
            out.push((p.1.name.clone(), p.1.tensor.clone()));
        }
        out
    }
}

/// The 2x3 affine that stretches the FOV mask's bounding rectangle to
/// fill the output frame, in normalized coordinates (row-major
/// [sx, 0, cx, 0, sy, cy]).
pub fn fov_fit_affine(fov: &Mask) -> Result<[f64; 6], ImagingError> {
    let rect = bounding_rect(fov)?;
    let (ch, cw) = (fov.height(), fov.width());
    let nx = |px: usize| 2.0 * px as f64 / (cw as f64 - 1.0) - 1.0;
    let ny = |py: usize| 2.0 * py as f64 / (ch as f64 - 1.0) - 1.0;
    let (x0, x1) = (nx(rect.x), nx(rect.x + rect.w - 1));
    let (y0, y1) = (ny(rect.y), ny(rect.y + rect.h - 1));
    let sx = 0.5 * (x1 - x0);
    let cx = 0.5 * (x0 + x1);
    let sy = 0.5 * (y1 - y0);
    let cy = 0.5 * (y0 + y1);
    Ok([sx, 0.0, cx, 0.0, sy, cy])
}

/// Writes a sampling grid as a little-endian binary blob: u32 H, u32 W,
/// then H*W*2 f32 coordinates in (x, y) pair order, row-major.
pub fn save_grid(path: impl AsRef<Path>, grid: &Tensor<f32>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let (h, w) = match grid.shape() {
        [h, w, 2] => (*h, *w),
        other => panic!("save_grid: expected [H,W,2], got {:?}", other),
    };
    let mut buf = Vec::with_capacity(8 + grid.numel() * 4);
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    for v in grid.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(&buf).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<Tensor<f32>, CheckpointError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    if bytes.len() < 8 {
        return Err(CheckpointError::Format {
            path: path.to_path_buf(),
            reason: "missing header".into(),
        });
    }
    let h = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let need = 8 + h * w * 2 * 4;
    if bytes.len() != need {
        return Err(CheckpointError::Format {
            path: path.to_path_buf(),
            reason: format!("expected {} bytes for {}x{}, got {}", need, h, w, bytes.len()),
        });
    }
    let data: Vec<f32> = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor::new(&[h, w, 2], data))
}

#[cfg(test)]
mod tests;
