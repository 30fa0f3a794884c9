//! Full compensation model: geometric correction composed with the
//! photometric network, end-to-end training, network simplification
//! (baking) and compensation inference with the displayable area.

mod train;

pub use train::{pretrain, train, PretrainConfig, TrainConfig, TrainOutcome, TrainRecord};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::{affine_grid, grid_sample, no_grad, Parameter, Tensor};
use crate::checkpoint::{self, NamedTensors};
use crate::error::{CheckpointError, ImagingError};
use crate::imaging::{max_inscribed_rect, ImageRGB, Mask};
use crate::photo::{PhotoNet, SkipEnable, SurfaceBiases};
use crate::warp::{load_grid, save_grid, WarpNet};

/// The trainable compensation model: warp parameters plus the photometric
/// network operating in the canonical frame.
pub struct CompensationModel {
    pub warp: WarpNet<f32>,
    pub photo: PhotoNet<f32>,
}

impl CompensationModel {
    /// Task-specific initialization from the FOV mask.
    pub fn init(
        fov: &Mask,
        canonical: (usize, usize),
        seed: u64,
    ) -> Result<CompensationModel, ImagingError> {
        Ok(CompensationModel {
            warp: WarpNet::init_from_fov(fov, canonical.0, canonical.1, seed)?,
            photo: PhotoNet::new(seed.wrapping_add(1)),
        })
    }

    pub fn canonical_size(&self) -> (usize, usize) {
        self.warp.out_size()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<f32>> {
        let mut ps = self.warp.parameters_mut();
        ps.extend(self.photo.parameters_mut());
        ps
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out = self.warp.named_tensors();
        out.extend(self.photo.named_tensors());
        out
    }

    pub fn to_named(&self) -> NamedTensors {
        let mut out: NamedTensors = self
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec(), t.values()))
            .collect();
        let (h, w) = self.canonical_size();
        out.push((
            "meta.canonical_size".into(),
            vec![2],
            vec![h as f32, w as f32],
        ));
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        checkpoint::save_named(path, &self.to_named())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<CompensationModel, CheckpointError> {
        let path = path.as_ref();
        let entries = checkpoint::load_named(path)?;
        let meta = checkpoint::find(&entries, "meta.canonical_size", path)?;
        let canonical = (meta.2[0] as usize, meta.2[1] as usize);
        let mut model = CompensationModel {
            warp: WarpNet::identity(canonical.0, canonical.1, 0),
            photo: PhotoNet::new(0),
        };
        model.load_named(&entries, path)?;
        Ok(model)
    }

    pub fn load_named(
        &mut self,
        entries: &NamedTensors,
        path: &Path,
    ) -> Result<(), CheckpointError> {
        for p in self.parameters_mut() {
            let e = checkpoint::find(entries, &p.name, path)?;
            if e.1 != p.tensor.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name: p.name.clone(),
                    got: e.1.clone(),
                    want: p.tensor.shape().to_vec(),
                });
            }
            p.load(&e.2);
        }
        Ok(())
    }
}

/// Training-time forward: both camera-side images are FOV-masked, warped
/// to the canonical frame by the shared grid, and photometrically
/// compensated. Returns the inferred projector image batch.
pub fn forward_train(
    model: &CompensationModel,
    cam: &ImageRGB,
    surface: &ImageRGB,
    fov: &Mask,
) -> Tensor<f32> {
    let x = cam.masked(fov).to_tensor::<f32>();
    let s = surface.masked(fov).to_tensor::<f32>();
    let grid = model.warp.forward_grid();
    let xc = grid_sample(&x, &grid);
    let sc = grid_sample(&s, &grid);
    model.photo.forward(&xc, &sc, SkipEnable::ALL)
}

/// Inference-ready form: one baked sampling grid, fixed surface biases,
/// the photometric backbone and the displayable-area affine.
pub struct BakedModel {
    pub grid: Tensor<f32>,
    pub biases: SurfaceBiases<f32>,
    pub photo: PhotoNet<f32>,
    /// 2x3 affine mapping canonical-frame normalized coordinates into the
    /// desired image, fitting it to the displayable rectangle
    pub displayable_affine: [[f32; 3]; 2],
    pub fov_canonical: Mask,
    pub canonical: (usize, usize),
    pub prj_size: (usize, usize),
}

/// JSON sidecar stored next to the baked grid and weights.
#[derive(Serialize, Deserialize)]
pub struct BakedSidecar {
    pub displayable_affine: [[f32; 3]; 2],
    pub canonical_size: (usize, usize),
    pub prj_size: (usize, usize),
    pub fov_mask_path: String,
}

/// Bakes the trained model for inference: evaluates the warp once into a
/// grid, caches the surface-branch features, and derives the optimal
/// displayable area from the FOV mask warped into the canonical frame.
pub fn simplify(
    model: &CompensationModel,
    surface: &ImageRGB,
    fov: &Mask,
    prj_size: (usize, usize),
) -> Result<BakedModel, ImagingError> {
    let canonical = model.canonical_size();
    let grid = no_grad(|| model.warp.forward_grid());
    let s = surface.masked(fov).to_tensor::<f32>();
    let sc = no_grad(|| grid_sample(&s, &grid));
    let biases = model.photo.bake_surface(&sc);

    let mask_t = fov.to_tensor::<f32>();
    let mc = no_grad(|| grid_sample(&mask_t, &grid));
    let mv = mc.values();
    let fov_canonical = Mask::new(
        canonical.0,
        canonical.1,
        mv.iter().map(|&v| v > 0.5).collect(),
    );
    if fov_canonical.is_empty() {
        return Err(ImagingError::EmptyMask);
    }
    let aspect = prj_size.1 as f64 / prj_size.0 as f64;
    let rect = max_inscribed_rect(&fov_canonical, aspect)?;
    let nx = |px: usize| 2.0 * px as f64 / (canonical.1 as f64 - 1.0) - 1.0;
    let ny = |py: usize| 2.0 * py as f64 / (canonical.0 as f64 - 1.0) - 1.0;
    let (x0, x1) = (nx(rect.x), nx(rect.x + rect.w - 1));
    let (y0, y1) = (ny(rect.y), ny(rect.y + rect.h - 1));
    let sx = 0.5 * (x1 - x0);
    let cx = 0.5 * (x0 + x1);
    let sy = 0.5 * (y1 - y0);
    let cy = 0.5 * (y0 + y1);
    // inverse of the rect fit: canonical coords inside the rectangle map
    // onto the full desired image; outside they fall out of range and
    // sample zero
    let displayable_affine = [
        [(1.0 / sx) as f32, 0.0, (-cx / sx) as f32],
        [0.0, (1.0 / sy) as f32, (-cy / sy) as f32],
    ];

    // clone of the photometric backbone for the baked artifact
    let mut photo = PhotoNet::new(0);
    let named: NamedTensors = model
        .photo
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec(), t.values()))
        .collect();
    for p in photo.parameters_mut() {
        let e = named.iter().find(|(n, _, _)| *n == p.name).expect("same net");
        p.load(&e.2);
    }

    Ok(BakedModel {
        grid,
        biases,
        photo,
        displayable_affine,
        fov_canonical,
        canonical,
        prj_size,
    })
}

impl BakedModel {
    /// The compensation path of the baked model for a camera-side image
    /// (the counterpart of [`forward_train`] used for equivalence checks
    /// and evaluation).
    pub fn forward_capture(&self, cam: &ImageRGB, fov: &Mask) -> Tensor<f32> {
        let x = cam.masked(fov).to_tensor::<f32>();
        no_grad(|| {
            let xc = grid_sample(&x, &self.grid);
            self.photo
                .forward_with_features(&xc, &self.biases, SkipEnable::ALL)
        })
    }

    /// Infers the projector compensation image for a desired viewer-
    /// perceived image: fit into the displayable area, geometric warp via
    /// the baked grid was already folded into training, photometric
    /// compensation with baked biases, output at projector resolution.
    pub fn infer_compensation(&self, desired: &ImageRGB) -> ImageRGB {
        no_grad(|| {
            let z = desired.to_tensor::<f32>();
            let a = Tensor::<f32>::new(
                &[2, 3],
                self.displayable_affine.iter().flatten().copied().collect(),
            );
            let fit_grid = affine_grid(&a, self.canonical.0, self.canonical.1);
            let z_fit = grid_sample(&z, &fit_grid);
            let pred = self
                .photo
                .forward_with_features(&z_fit, &self.biases, SkipEnable::ALL);
            let img = ImageRGB::from_tensor(&pred);
            img.resize(self.prj_size.0, self.prj_size.1)
        })
    }

    /// The optimal desired image z' = phi(z; A) in the canonical frame.
    pub fn fit_desired(&self, desired: &ImageRGB) -> ImageRGB {
        no_grad(|| {
            let z = desired.to_tensor::<f32>();
            let a = Tensor::<f32>::new(
                &[2, 3],
                self.displayable_affine.iter().flatten().copied().collect(),
            );
            let fit_grid = affine_grid(&a, self.canonical.0, self.canonical.1);
            ImageRGB::from_tensor(&grid_sample(&z, &fit_grid))
        })
    }

    /// Writes `<stem>.grid`, `<stem>.ckpt`, `<stem>.json` and
    /// `<stem>_fov.png`.
    pub fn save(&self, stem: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let stem = stem.as_ref();
        save_grid(stem.with_extension("grid"), &self.grid)?;
        let mut entries: NamedTensors = self
            .photo
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec(), t.values()))
            .collect();
        for (name, t) in [
            ("baked.surface_f1", &self.biases.f1),
            ("baked.surface_f2", &self.biases.f2),
            ("baked.surface_f3", &self.biases.f3),
        ] {
            entries.push((name.into(), t.shape().to_vec(), t.values()));
        }
        checkpoint::save_named(stem.with_extension("ckpt"), &entries)?;
        let fov_name = format!(
            "{}_fov.png",
            stem.file_name().map(|s| s.to_string_lossy()).unwrap_or_default()
        );
        let fov_path = stem.with_file_name(&fov_name);
        self.fov_canonical
            .save(&fov_path)
            .map_err(|e| CheckpointError::Format {
                path: fov_path.clone(),
                reason: e.to_string(),
            })?;
        let sidecar = BakedSidecar {
            displayable_affine: self.displayable_affine,
            canonical_size: self.canonical,
            prj_size: self.prj_size,
            fov_mask_path: fov_name,
        };
        let json_path = stem.with_extension("json");
        std::fs::write(
            &json_path,
            serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
        )
        .map_err(|source| CheckpointError::Io {
            path: json_path,
            source,
        })
    }

    pub fn load(stem: impl AsRef<Path>) -> Result<BakedModel, CheckpointError> {
        let stem = stem.as_ref();
        let grid = load_grid(stem.with_extension("grid"))?;
        let json_path: PathBuf = stem.with_extension("json");
        let sidecar: BakedSidecar = serde_json::from_str(
            &std::fs::read_to_string(&json_path).map_err(|source| CheckpointError::Io {
                path: json_path.clone(),
                source,
            })?,
        )
        .map_err(|e| CheckpointError::Format {
            path: json_path.clone(),
            reason: e.to_string(),
        })?;
        let ckpt_path = stem.with_extension("ckpt");
        let entries = checkpoint::load_named(&ckpt_path)?;
        let mut photo = PhotoNet::new(0);
        for p in photo.parameters_mut() {
            let e = checkpoint::find(&entries, &p.name, &ckpt_path)?;
            p.load(&e.2);
        }
        let bias = |name: &str| -> Result<Tensor<f32>, CheckpointError> {
            let e = checkpoint::find(&entries, name, &ckpt_path)?;
            Ok(Tensor::new(&e.1, e.2.clone()))
        };
        let fov_path = stem.with_file_name(&sidecar.fov_mask_path);
        let fov_canonical = Mask::load(&fov_path).map_err(|e| CheckpointError::Format {
            path: fov_path,
            reason: e.to_string(),
        })?;
        Ok(BakedModel {
            grid,
            biases: SurfaceBiases {
                f1: bias("baked.surface_f1")?,
                f2: bias("baked.surface_f2")?,
                f3: bias("baked.surface_f3")?,
            },
            photo,
            displayable_affine: sidecar.displayable_affine,
            fov_canonical,
            canonical: sidecar.canonical_size,
            prj_size: sidecar.prj_size,
        })
    }
}

#[cfg(test)]
mod tests;
