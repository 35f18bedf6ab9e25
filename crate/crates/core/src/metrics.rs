//! Image quality metrics on subject-cropped images.
//!
//! PSNR is computed over RGB only (alpha excluded), dynamic range 1.
//! Identical inputs give `f64::INFINITY`, which reports serialize as the
//! string `"inf"`. SSIM is the mean over every 11×11 window lying fully
//! inside the (cropped) luma image, Gaussian weights σ = 1.5, K1 = 0.01,
//! K2 = 0.03, luma = 0.2126 R + 0.7152 G + 0.0722 B.

use serde::{Deserialize, Serialize, Serializer};

use crate::dataset::RgbaImage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl CropRect {
    pub fn full(image: &RgbaImage) -> Self {
        Self {
            x: 0,
            y: 0,
            width: image.width(),
            height: image.height(),
        }
    }

    fn check(&self, image: &RgbaImage) -> Result<()> {
        if self.width == 0
            || self.height == 0
            || self.x + self.width > image.width()
            || self.y + self.height > image.height()
        {
            return Err(Error::invalid(format!(
                "crop {self:?} outside {}x{} image",
                image.width(),
                image.height()
            )));
        }
        Ok(())
    }

    /// Same region at a resolution reduced by `divisor`, rounded outward.
    pub fn scaled_down(&self, divisor: u32) -> Self {
        let x0 = self.x / divisor;
        let y0 = self.y / divisor;
        let x1 = (self.x + self.width).div_ceil(divisor);
        let y1 = (self.y + self.height).div_ceil(divisor);
        Self {
            x: x0,
            y: y0,
            width: x1 - x0,
            height: y1 - y0,
        }
    }
}

pub const DEFAULT_CROP_PADDING: u32 = 2;

/// Tight box around `alpha > 0`, grown by `padding` and clamped to the image.
pub fn crop_from_mask(image: &RgbaImage, padding: u32) -> Result<CropRect> {
    let (w, h) = image.dims();
    let mut bounds: Option<(u32, u32, u32, u32)> = None;
    for y in 0..h {
        for x in 0..w {
            if image.get(x, y)[3] > 0.0 {
                bounds = Some(match bounds {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    let (x0, y0, x1, y1) = bounds.ok_or(Error::NoSubject)?;
    let x0 = x0.saturating_sub(padding);
    let y0 = y0.saturating_sub(padding);
    let x1 = (x1 + padding).min(w - 1);
    let y1 = (y1 + padding).min(h - 1);
    Ok(CropRect {
        x: x0,
        y: y0,
        width: x1 - x0 + 1,
        height: y1 - y0 + 1,
    })
}

fn check_pair(a: &RgbaImage, b: &RgbaImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::invalid(format!(
            "image sizes differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

pub fn mse(a: &RgbaImage, b: &RgbaImage, crop: Option<CropRect>) -> Result<f64> {
    check_pair(a, b)?;
    let crop = crop.unwrap_or_else(|| CropRect::full(a));
    crop.check(a)?;
    let mut acc = 0.0;
    for y in crop.y..crop.y + crop.height {
        for x in crop.x..crop.x + crop.width {
            let (p, q) = (a.get(x, y), b.get(x, y));
            for c in 0..3 {
                let d = p[c] - q[c];
                acc += d * d;
            }
        }
    }
    Ok(acc / (crop.width as f64 * crop.height as f64 * 3.0))
}

pub fn psnr(a: &RgbaImage, b: &RgbaImage, crop: Option<CropRect>) -> Result<f64> {
    let m = mse(a, b, crop)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / m).log10()
    })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn luma(image: &RgbaImage, crop: CropRect) -> Vec<f64> {
    let mut out = Vec::with_capacity(crop.width as usize * crop.height as usize);
    for y in crop.y..crop.y + crop.height {
        for x in crop.x..crop.x + crop.width {
            let p = image.get(x, y);
            out.push(0.2126 * p[0] + 0.7152 * p[1] + 0.0722 * p[2]);
        }
    }
    out
}

pub fn gaussian_kernel_1d(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let k: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering: output is `(h - n + 1) × (w - n + 1)`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

pub fn ssim(a: &RgbaImage, b: &RgbaImage, crop: Option<CropRect>) -> Result<f64> {
    check_pair(a, b)?;
    let crop = crop.unwrap_or_else(|| CropRect::full(a));
    crop.check(a)?;
    let (w, h) = (crop.width as usize, crop.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let x = luma(a, crop);
    let y = luma(b, crop);
    let k = gaussian_kernel_1d(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mu_x = filter_valid(&x, w, h, &k);
    let mu_y = filter_valid(&y, w, h, &k);
    let xx = filter_valid(&prod(&x, &x), w, h, &k);
    let yy = filter_valid(&prod(&y, &y), w, h, &k);
    let xy = filter_valid(&prod(&x, &y), w, h, &k);
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = xx[i] - mx * mx;
        let vy = yy[i] - my * my;
        let cxy = xy[i] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
            / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / mu_x.len() as f64)
}

/// Serializes infinite PSNR as `"inf"`.
pub fn serialize_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ViewScore {
    pub view: String,
    pub lod: usize,
    pub scale_divisor: u32,
    #[serde(serialize_with = "serialize_db")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LodSummary {
    pub lod: usize,
    pub scale_divisor: u32,
    #[serde(serialize_with = "serialize_db")]
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// Per-view and per-level scores, one row per level as in a results table.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub split: String,
    pub per_lod: Vec<LodSummary>,
    pub per_view: Vec<ViewScore>,
}

impl EvalReport {
    pub fn from_scores(split: &str, scores: Vec<ViewScore>) -> Self {
        let mut lods: Vec<(usize, u32)> = scores.iter().map(|s| (s.lod, s.scale_divisor)).collect();
        lods.sort();
        lods.dedup();
        let per_lod = lods
            .into_iter()
            .map(|(lod, d)| {
                let rows: Vec<&ViewScore> = scores
                    .iter()
                    .filter(|s| s.lod == lod && s.scale_divisor == d)
                    .collect();
                let n = rows.len() as f64;
                LodSummary {
                    lod,
                    scale_divisor: d,
                    mean_psnr: rows.iter().map(|s| s.psnr).sum::<f64>() / n,
                    mean_ssim: rows.iter().map(|s| s.ssim).sum::<f64>() / n,
                }
            })
            .collect();
        Self {
            split: split.to_string(),
            per_lod,
            per_view: scores,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_closed_forms() {
        let z = RgbaImage::filled(4, 4, [0.0, 0.0, 0.0, 1.0]);
        let h = RgbaImage::filled(4, 4, [0.5, 0.5, 0.5, 1.0]);
        let o = RgbaImage::filled(4, 4, [1.0, 1.0, 1.0, 0.0]);
        assert!((psnr(&z, &h, None).unwrap() - 6.0206).abs() < 1e-3);
        assert_eq!(psnr(&z, &o, None).unwrap(), 0.0);
        assert_eq!(psnr(&h, &h, None).unwrap(), f64::INFINITY);
        assert!(psnr(&z, &RgbaImage::new(4, 5), None).is_err());
    }

    #[test]
    fn crop_of_single_pixel() {
        let mut img = RgbaImage::new(20, 20);
        img.set(5, 5, [1.0; 4]);
        assert_eq!(
            crop_from_mask(&img, 2).unwrap(),
            CropRect {
                x: 3,
                y: 3,
                width: 5,
                height: 5
            }
        );
        let mut corner = RgbaImage::new(20, 20);
        corner.set(0, 19, [1.0; 4]);
        let c = crop_from_mask(&corner, 2).unwrap();
        assert_eq!((c.x, c.y, c.width, c.height), (0, 17, 3, 3));
    }

    #[test]
    fn crop_of_opaque_and_empty_images() {
        let img = RgbaImage::filled(7, 9, [0.1, 0.1, 0.1, 1.0]);
        assert_eq!(crop_from_mask(&img, 2).unwrap(), CropRect::full(&img));
        assert!(matches!(crop_from_mask(&RgbaImage::new(4, 4), 2), Err(Error::NoSubject)));
    }

    #[test]
    fn ssim_of_identical_is_one() {
        let mut img = RgbaImage::new(16, 12);
        for y in 0..12 {
            for x in 0..16 {
                let v = ((x * 7 + y * 3) % 11) as f64 / 10.0;
                img.set(x, y, [v, 1.0 - v, v * 0.5, 1.0]);
            }
        }
        assert!((ssim(&img, &img, None).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&RgbaImage::new(10, 20), &RgbaImage::new(10, 20), None).is_err());
    }

    #[test]
    fn scaled_crop_covers_region() {
        let c = CropRect {
            x: 13,
            y: 5,
            width: 20,
            height: 9,
        };
        let s = c.scaled_down(8);
        assert_eq!((s.x, s.y), (1, 0));
        assert_eq!((s.x + s.width, s.y + s.height), (5, 2));
    }
}
