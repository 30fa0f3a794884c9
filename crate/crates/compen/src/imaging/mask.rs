//! Otsu thresholding, binary morphology, connected components and the
//! rectangle searches used for FOV handling.

use super::{ImageRGB, Mask, Rect};
use crate::error::ImagingError;

/// Histogram bin of a [0,1] value on the 8-bit grid.
#[inline]
fn bin_of(v: f32) -> usize {
    ((v.clamp(0.0, 1.0) * 255.0).round() as usize).min(255)
}

/// 256-bin Otsu threshold maximizing between-class variance. Ties break
/// toward the lower threshold; a constant image returns its own value.
/// The returned value is the upper edge of the winning bin, so that
/// `v <= threshold` matches `bin(v) <= t`.
pub fn otsu_threshold(gray: &[f32]) -> f32 {
    assert!(!gray.is_empty(), "otsu_threshold: empty input");
    let mut hist = [0u64; 256];
    for &v in gray {
        hist[bin_of(v)] += 1;
    }
    let occupied = hist.iter().filter(|&&c| c > 0).count();
    if occupied <= 1 {
        return gray[0];
    }
    let total: u64 = gray.len() as u64;
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    let mut w0 = 0.0f64;
    let mut sum0 = 0.0f64;
    let mut best_t = 0usize;
    let mut best_var = f64::NEG_INFINITY;
    for t in 0..256 {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total as f64 - w0;
        if w0 == 0.0 {
            continue;
        }
        if w1 == 0.0 {
            break;
        }
        let mu0 = sum0 / w0;
        let mu1 = (sum_all - sum0) / w1;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best_t = t;
        }
    }
    ((best_t as f32 + 0.5) / 255.0).min(1.0)
}

/// Erosion with a square element; pixels outside the image count as
/// foreground so a full frame stays full.
pub fn erode(m: &Mask, radius: usize) -> Mask {
    let (h, w) = (m.height(), m.width());
    let mut out = Mask::filled(h, w, false);
    for y in 0..h {
        for x in 0..w {
            let mut keep = true;
            'win: for dy in -(radius as isize)..=(radius as isize) {
                for dx in -(radius as isize)..=(radius as isize) {
                    let yy = y as isize + dy;
                    let xx = x as isize + dx;
                    if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                        continue;
                    }
                    if !m.get(yy as usize, xx as usize) {
                        keep = false;
                        break 'win;
                    }
                }
            }
            out.set(y, x, keep);
        }
    }
    out
}

/// Dilation with a square element; pixels outside contribute nothing.
pub fn dilate(m: &Mask, radius: usize) -> Mask {
    let (h, w) = (m.height(), m.width());
    let mut out = Mask::filled(h, w, false);
    for y in 0..h {
        for x in 0..w {
            let mut hit = false;
            'win: for dy in -(radius as isize)..=(radius as isize) {
                for dx in -(radius as isize)..=(radius as isize) {
                    let yy = y as isize + dy;
                    let xx = x as isize + dx;
                    if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                        continue;
                    }
                    if m.get(yy as usize, xx as usize) {
                        hit = true;
                        break 'win;
                    }
                }
            }
            out.set(y, x, hit);
        }
    }
    out
}

/// Opening with a 5x5 square element.
pub fn morph_open(m: &Mask) -> Mask {
    dilate(&erode(m, 2), 2)
}

/// Closing with a 5x5 square element.
pub fn morph_close(m: &Mask) -> Mask {
    erode(&dilate(m, 2), 2)
}

/// Keeps only the largest 4-connected component. Ties break toward the
/// component discovered first in scan order.
pub fn largest_component(m: &Mask) -> Mask {
    let (h, w) = (m.height(), m.width());
    let mut label = vec![0u32; h * w];
    let mut sizes = vec![0usize];
    let mut queue = Vec::new();
    for start in 0..h * w {
        if !m.data()[start] || label[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32;
        sizes.push(0);
        queue.clear();
        queue.push(start);
        label[start] = id;
        while let Some(i) = queue.pop() {
            sizes[id as usize] += 1;
            let (y, x) = (i / w, i % w);
            if y > 0 && m.data()[i - w] && label[i - w] == 0 {
                label[i - w] = id;
                queue.push(i - w);
            }
            if y + 1 < h && m.data()[i + w] && label[i + w] == 0 {
                label[i + w] = id;
                queue.push(i + w);
            }
            if x > 0 && m.data()[i - 1] && label[i - 1] == 0 {
                label[i - 1] = id;
                queue.push(i - 1);
            }
            if x + 1 < w && m.data()[i + 1] && label[i + 1] == 0 {
                label[i + 1] = id;
                queue.push(i + 1);
            }
        }
    }
    let best = (1..sizes.len()).max_by_key(|&i| (sizes[i], usize::MAX - i));
    match best {
        None => Mask::filled(h, w, false),
        Some(id) => Mask::new(h, w, label.iter().map(|&l| l == id as u32).collect()),
    }
}

/// Projector FOV mask of a camera-captured surface image: Otsu-thresholded
/// luma, opening then closing with a 5x5 element, largest 4-connected
/// component retained.
pub fn fov_mask(surface: &ImageRGB) -> Result<Mask, ImagingError> {
    let luma = surface.luma();
    let t = otsu_threshold(&luma);
    let raw = Mask::new(
        surface.height(),
        surface.width(),
        luma.iter().map(|&v| v > t).collect(),
    );
    let cleaned = largest_component(&morph_close(&morph_open(&raw)));
    if cleaned.is_empty() {
        Err(ImagingError::NoFov)
    } else {
        Ok(cleaned)
    }
}

/// Tight axis-aligned bounding rectangle of the foreground.
pub fn bounding_rect(m: &Mask) -> Result<Rect, ImagingError> {
    let (h, w) = (m.height(), m.width());
    let mut x0 = w;
    let mut y0 = h;
    let mut x1 = 0usize;
    let mut y1 = 0usize;
    for y in 0..h {
        for x in 0..w {
            if m.get(y, x) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == w {
        return Err(ImagingError::EmptyMask);
    }
    Ok(Rect {
        x: x0,
        y: y0,
        w: x1 - x0 + 1,
        h: y1 - y0 + 1,
    })
}

/// Width of an aspect-constrained rectangle of height `h` (w/h ratio).
#[inline]
pub(crate) fn aspect_width(h: usize, aspect: f64) -> usize {
    ((h as f64 * aspect).round() as usize).max(1)
}

/// Largest axis-aligned rectangle of the given aspect ratio (w/h) fully
/// inside the mask, found by discrete search over integer heights and
/// translations. Ties break by smaller y, then x, then height.
pub fn max_inscribed_rect(m: &Mask, aspect: f64) -> Result<Rect, ImagingError> {
    assert!(aspect > 0.0 && aspect.is_finite(), "aspect must be positive");
    if m.is_empty() {
        return Err(ImagingError::EmptyMask);
    }
    let (h, w) = (m.height(), m.width());
    // summed-area table for O(1) containment checks
    let mut sat = vec![0u64; (h + 1) * (w + 1)];
    for y in 0..h {
        for x in 0..w {
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1]
                + sat[(y + 1) * (w + 1) + x]
                - sat[y * (w + 1) + x]
                + u64::from(m.get(y, x));
        }
    }
    let rect_full = |y: usize, x: usize, rh: usize, rw: usize| -> bool {
        let s = sat[(y + rh) * (w + 1) + x + rw] + sat[y * (w + 1) + x]
            - sat[y * (w + 1) + x + rw]
            - sat[(y + rh) * (w + 1) + x];
        s == (rh * rw) as u64
    };
    let mut best: Option<(usize, Rect)> = None; // (area, rect)
    for rh in 1..=h {
        let rw = aspect_width(rh, aspect);
        if rw > w {
            continue;
        }
        let area = rh * rw;
        for y in 0..=h - rh {
            for x in 0..=w - rw {
                if rect_full(y, x, rh, rw) {
                    let cand = Rect { x, y, w: rw, h: rh };
                    let replace = match &best {
                        None => true,
                        Some((ba, br)) => {
                            area > *ba
                                || (area == *ba
                                    && (cand.y, cand.x, cand.h) < (br.y, br.x, br.h))
                        }
                    };
                    if replace {
                        best = Some((area, cand));
                    }
                    break; // larger x at same (rh, y) cannot beat this tie order
                }
            }
        }
    }
    best.map(|(_, r)| r).ok_or(ImagingError::EmptyMask)
}
