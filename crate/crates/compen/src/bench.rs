//! Benchmark harness: dataset loading, the surrogate evaluation protocol
//! (no physical projection of model outputs) and aggregate reporting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{affine_grid, grid_sample, no_grad, Tensor};
use crate::error::DataError;
use crate::imaging::{fov_mask, psnr, rmse, ssim, ImageRGB, Mask};
use crate::pipeline::{forward_train, CompensationModel};
use crate::sim::{SetupDataset, SetupMeta};
use crate::warp::fov_fit_affine;

/// Loads one setup directory in the benchmark layout, validating sizes.
pub fn load_setup(dir: impl AsRef<Path>) -> Result<SetupDataset, DataError> {
    let dir = dir.as_ref();
    let meta_path = dir.join("setup.json");
    let meta: SetupMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path).map_err(
        |source| DataError::Io {
            path: meta_path.clone(),
            source,
        },
    )?)
    .map_err(|e| DataError::BadMetadata {
        path: meta_path.clone(),
        reason: e.to_string(),
    })?;

    let surface_path = dir.join("cam/surface.png");
    if !surface_path.exists() {
        return Err(DataError::SurfaceMissing(surface_path));
    }
    let surface = ImageRGB::load(&surface_path)?;
    let cam_size = (surface.height(), surface.width());

    let check = |img: &ImageRGB, want: (usize, usize), file: &Path| -> Result<(), DataError> {
        if (img.height(), img.width()) != want {
            return Err(DataError::SizeMismatch {
                file: file.to_path_buf(),
                got_w: img.width(),
                got_h: img.height(),
                want_w: want.1,
                want_h: want.0,
            });
        }
        Ok(())
    };

    let mut prj_size: Option<(usize, usize)> = None;
    let mut load_split = |split: &str| -> Result<Vec<(ImageRGB, ImageRGB)>, DataError> {
        let cam_dir = dir.join("cam").join(split);
        let mut names: Vec<String> = std::fs::read_dir(&cam_dir)
            .map_err(|source| DataError::Io {
                path: cam_dir.clone(),
                source,
            })?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| n.ends_with(".png"))
            .collect();
        names.sort();
        let mut pairs = Vec::with_capacity(names.len());
        for name in &names {
            let cam_path = cam_dir.join(name);
            let prj_path = dir.join("prj").join(split).join(name);
            if !prj_path.exists() {
                return Err(DataError::MissingFile(prj_path));
            }
            let cam = ImageRGB::load(&cam_path)?;
            check(&cam, cam_size, &cam_path)?;
            let prj = ImageRGB::load(&prj_path)?;
            let want = *prj_size.get_or_insert((prj.height(), prj.width()));
            check(&prj, want, &prj_path)?;
            pairs.push((cam, prj));
        }
        Ok(pairs)
    };

    let train = load_split("train")?;
    let test = load_split("test")?;
    if train.is_empty() {
        return Err(DataError::PairMismatch(dir.to_path_buf()));
    }
    Ok(SetupDataset {
        surface,
        train,
        test,
        meta,
    })
}

/// Per-setup evaluation results, averaged over the test pairs, with the
/// uncompensated baseline alongside.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EvalEntry {
    pub setup_id: String,
    pub n_train_used: usize,
    pub psnr: f64,
    pub rmse: f64,
    pub ssim: f64,
    pub uncompensated_psnr: f64,
    pub uncompensated_rmse: f64,
    pub uncompensated_ssim: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Aggregate {
    pub psnr: f64,
    pub rmse: f64,
    pub ssim: f64,
    pub uncompensated_psnr: f64,
    pub uncompensated_rmse: f64,
    pub uncompensated_ssim: f64,
}

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub version: u32,
    pub entries: Vec<EvalEntry>,
    pub aggregate: Aggregate,
}

/// Surrogate protocol with an explicit FOV mask: each test capture is
/// compensated by the model and scored against the matching projector
/// input in the canonical frame; the baseline scores the FOV-masked,
/// bounding-rect-warped capture instead.
pub fn evaluate_with_fov(
    model: &CompensationModel,
    dataset: &SetupDataset,
    fov: &Mask,
    n_train_used: usize,
    setup_id: &str,
) -> EvalEntry {
    assert!(!dataset.test.is_empty(), "evaluate: empty test set");
    let canonical = model.canonical_size();
    let theta = fov_fit_affine(fov).expect("non-empty fov");
    let base_grid = no_grad(|| {
        affine_grid(
            &Tensor::<f32>::new(&[2, 3], theta.iter().map(|&v| v as f32).collect()),
            canonical.0,
            canonical.1,
        )
    });
    let mut acc = [0.0f64; 6];
    for (cam, prj) in &dataset.test {
        let target = prj.resize(canonical.0, canonical.1);
        let pred = no_grad(|| forward_train(model, cam, &dataset.surface, fov));
        let pred_img = ImageRGB::from_tensor(&pred);
        acc[0] += psnr(&pred_img, &target);
        acc[1] += rmse(&pred_img, &target);
        acc[2] += ssim(&pred_img, &target);

        let masked = cam.masked(fov).to_tensor::<f32>();
        let base = no_grad(|| grid_sample(&masked, &base_grid));
        let base_img = ImageRGB::from_tensor(&base);
        acc[3] += psnr(&base_img, &target);
        acc[4] += rmse(&base_img, &target);
        acc[5] += ssim(&base_img, &target);
    }
    let m = dataset.test.len() as f64;
    EvalEntry {
        setup_id: setup_id.to_string(),
        n_train_used,
        psnr: acc[0] / m,
        rmse: acc[1] / m,
        ssim: acc[2] / m,
        uncompensated_psnr: acc[3] / m,
        uncompensated_rmse: acc[4] / m,
        uncompensated_ssim: acc[5] / m,
    }
}

/// Surrogate protocol, detecting the FOV from the surface image.
pub fn evaluate(
    model: &CompensationModel,
    dataset: &SetupDataset,
    n_train_used: usize,
    setup_id: &str,
) -> Result<EvalEntry, DataError> {
    let fov = fov_mask(&dataset.surface).map_err(DataError::Imaging)?;
    Ok(evaluate_with_fov(model, dataset, &fov, n_train_used, setup_id))
}

/// Assembles entries into a report; the aggregate is the unweighted mean
/// over setups.
pub fn report(entries: Vec<EvalEntry>) -> EvalReport {
    assert!(!entries.is_empty(), "report: no entries");
    let n = entries.len() as f64;
    let mean = |f: fn(&EvalEntry) -> f64| entries.iter().map(f).sum::<f64>() / n;
    let aggregate = Aggregate {
        psnr: mean(|e| e.psnr),
        rmse: mean(|e| e.rmse),
        ssim: mean(|e| e.ssim),
        uncompensated_psnr: mean(|e| e.uncompensated_psnr),
        uncompensated_rmse: mean(|e| e.uncompensated_rmse),
        uncompensated_ssim: mean(|e| e.uncompensated_ssim),
    };
    EvalReport {
        version: REPORT_VERSION,
        entries,
        aggregate,
    }
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Table in the benchmark's column layout, one row per setup plus the
    /// aggregate.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str(
            "| Setup | #Train | PSNR | RMSE | SSIM | Unc. PSNR | Unc. RMSE | Unc. SSIM |\n",
        );
        out.push_str("|---|---|---|---|---|---|---|---|\n");
        for e in &self.entries {
            out.push_str(&format!(
                "| {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
                e.setup_id,
                e.n_train_used,
                e.psnr,
                e.rmse,
                e.ssim,
                e.uncompensated_psnr,
                e.uncompensated_rmse,
                e.uncompensated_ssim
            ));
        }
        let a = &self.aggregate;
        out.push_str(&format!(
            "| mean | - | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
            a.psnr, a.rmse, a.ssim, a.uncompensated_psnr, a.uncompensated_rmse, a.uncompensated_ssim
        ));
        out
    }
}

/// Structural check of a report JSON document.
pub fn validate_report_json(text: &str) -> Result<(), String> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let obj = value.as_object().ok_or("report must be an object")?;
    let version = obj
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or("missing integer field: version")?;
    if version != REPORT_VERSION as u64 {
        return Err(format!("unsupported report version {version}"));
    }
    let entries = obj
        .get("entries")
        .and_then(|v| v.as_array())
        .ok_or("missing array field: entries")?;
    let metric_fields = [
        "psnr",
        "rmse",
        "ssim",
        "uncompensated_psnr",
        "uncompensated_rmse",
        "uncompensated_ssim",
    ];
    for (i, e) in entries.iter().enumerate() {
        let eo = e.as_object().ok_or(format!("entry {i} must be an object"))?;
        eo.get("setup_id")
            .and_then(|v| v.as_str())
            .ok_or(format!("entry {i}: missing string field setup_id"))?;
        eo.get("n_train_used")
            .and_then(|v| v.as_u64())
            .ok_or(format!("entry {i}: missing integer field n_train_used"))?;
        for f in metric_fields {
            eo.get(f)
                .and_then(|v| v.as_f64())
                .ok_or(format!("entry {i}: missing numeric field {f}"))?;
        }
    }
    let agg = obj
        .get("aggregate")
        .and_then(|v| v.as_object())
        .ok_or("missing object field: aggregate")?;
    for f in metric_fields {
        agg.get(f)
            .and_then(|v| v.as_f64())
            .ok_or(format!("aggregate: missing numeric field {f}"))?;
    }
    Ok(())
}
