//! Image containers, 8-bit PNG I/O, quality metrics and the FOV-mask
//! geometry toolkit.

mod mask;
mod metrics;

pub use mask::{bounding_rect, fov_mask, largest_component, max_inscribed_rect, morph_close, morph_open, otsu_threshold};
pub use metrics::{gaussian_window_11, psnr, rmse, ssim, PSNR_CAP_DB, SSIM_C1, SSIM_C2};

use std::path::Path;

use crate::autodiff::{Scalar, Tensor};
use crate::error::ImagingError;

/// RGB image with interleaved f32 values in [0,1]. Stored-sRGB values are
/// used directly; no linearization is performed.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRGB {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl ImageRGB {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), h * w * 3, "ImageRGB: bad data length");
        ImageRGB { h, w, data }
    }

    pub fn filled(h: usize, w: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(h * w * 3);
        for _ in 0..h * w {
            data.extend_from_slice(&rgb);
        }
        ImageRGB { h, w, data }
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        ImageRGB {
            h,
            w,
            data: vec![0.0; h * w * 3],
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.w + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.w + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Rec.601 luma.
    pub fn luma(&self) -> Vec<f32> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Quantizes to the 8-bit grid, as a PNG round-trip would.
    pub fn quantized(&self) -> ImageRGB {
        let data = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
            .collect();
        ImageRGB {
            h: self.h,
            w: self.w,
            data,
        }
    }

    /// Planar [1,3,H,W] tensor.
    pub fn to_tensor<E: Scalar>(&self) -> Tensor<E> {
        let hw = self.h * self.w;
        let mut out = vec![E::ZERO; 3 * hw];
        for i in 0..hw {
            out[i] = E::from_f32(self.data[3 * i]);
            out[hw + i] = E::from_f32(self.data[3 * i + 1]);
            out[2 * hw + i] = E::from_f32(self.data[3 * i + 2]);
        }
        Tensor::new(&[1, 3, self.h, self.w], out)
    }

    /// From a planar [1,3,H,W] (or [3,H,W]) tensor, clamped to [0,1].
    pub fn from_tensor<E: Scalar>(t: &Tensor<E>) -> ImageRGB {
        let (h, w) = match t.shape() {
            [1, 3, h, w] => (*h, *w),
            [3, h, w] => (*h, *w),
            other => panic!("from_tensor: expected [1,3,H,W], got {:?}", other),
        };
        let hw = h * w;
        let v = t.values();
        let mut data = vec![0.0f32; hw * 3];
        for i in 0..hw {
            data[3 * i] = v[i].to_f32().clamp(0.0, 1.0);
            data[3 * i + 1] = v[hw + i].to_f32().clamp(0.0, 1.0);
            data[3 * i + 2] = v[2 * hw + i].to_f32().clamp(0.0, 1.0);
        }
        ImageRGB { h, w, data }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ImageRGB, ImagingError> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|source| ImagingError::Png {
                path: path.to_path_buf(),
                source,
            })?
            .into_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = img.into_raw().iter().map(|&b| b as f32 / 255.0).collect();
        Ok(ImageRGB { h, w, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImagingError> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|source| ImagingError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        }
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let buf: image::RgbImage =
            image::ImageBuffer::from_raw(self.w as u32, self.h as u32, bytes).unwrap();
        buf.save(path).map_err(|source| ImagingError::Png {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Bilinear resample to a new size (align-corners lattice).
    pub fn resize(&self, h: usize, w: usize) -> ImageRGB {
        if h == self.h && w == self.w {
            return self.clone();
        }
        let t = self.to_tensor::<f32>();
        let grid = crate::autodiff::identity_grid::<f32>(h, w);
        let out = crate::autodiff::no_grad(|| crate::autodiff::grid_sample(&t, &grid));
        ImageRGB::from_tensor(&out)
    }

    /// Elementwise product with a mask (true keeps the pixel).
    pub fn masked(&self, mask: &Mask) -> ImageRGB {
        assert_eq!((self.h, self.w), (mask.h, mask.w), "masked: size mismatch");
        let mut out = self.clone();
        for (i, keep) in mask.data.iter().enumerate() {
            if !keep {
                out.data[3 * i] = 0.0;
                out.data[3 * i + 1] = 0.0;
                out.data[3 * i + 2] = 0.0;
            }
        }
        out
    }
}

/// Binary per-pixel mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(h: usize, w: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), h * w, "Mask: bad data length");
        Mask { h, w, data }
    }

    pub fn filled(h: usize, w: usize, value: bool) -> Self {
        Mask {
            h,
            w,
            data: vec![value; h * w],
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.w + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| !v)
    }

    pub fn iou(&self, other: &Mask) -> f64 {
        assert_eq!((self.h, self.w), (other.h, other.w));
        let mut inter = 0usize;
        let mut union = 0usize;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            if *a && *b {
                inter += 1;
            }
            if *a || *b {
                union += 1;
            }
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Mask as a single-channel [1,1,H,W] tensor of 0/1 values.
    pub fn to_tensor<E: Scalar>(&self) -> Tensor<E> {
        let data = self
            .data
            .iter()
            .map(|&b| if b { E::ONE } else { E::ZERO })
            .collect();
        Tensor::new(&[1, 1, self.h, self.w], data)
    }

    /// Stored as a 0/255 single-channel PNG.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImagingError> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|source| ImagingError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        }
        let bytes: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        let buf: image::GrayImage =
            image::ImageBuffer::from_raw(self.w as u32, self.h as u32, bytes).unwrap();
        buf.save(path).map_err(|source| ImagingError::Png {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Mask, ImagingError> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|source| ImagingError::Png {
                path: path.to_path_buf(),
                source,
            })?
            .into_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = img.into_raw().iter().map(|&b| b >= 128).collect();
        Ok(Mask { h, w, data })
    }
}

/// Axis-aligned pixel rectangle (top-left corner plus extent).
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.w * self.h
    }
}
