//! Linear-light RGBA images, box-filter pyramids and bilinear lookup.
//!
//! Pixels are premultiplied against transparent black and kept in linear
//! [0, 1] as `f64`. PNG files are 8-bit; quantization happens only in
//! [`RgbaImage::to_png`] and [`RgbaImage::from_png`].

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RgbaImage {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl RgbaImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0.0; 4])
    }

    pub fn filled(width: u32, height: u32, rgba: [f64; 4]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 4);
        for _ in 0..n {
            data.extend_from_slice(&rgba);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if data.len() != width as usize * height as usize * 4 {
            return Err(Error::invalid(format!(
                "{}x{} RGBA image needs {} values, got {}",
                width,
                height,
                width as usize * height as usize * 4,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn as_raw(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 4
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f64; 4] {
        let o = self.offset(x, y);
        [self.data[o], self.data[o + 1], self.data[o + 2], self.data[o + 3]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgba: [f64; 4]) {
        let o = self.offset(x, y);
        self.data[o..o + 4].copy_from_slice(&rgba);
    }

    /// Pixel by row-major index.
    #[inline]
    pub fn get_index(&self, i: usize) -> [f64; 4] {
        let o = i * 4;
        [self.data[o], self.data[o + 1], self.data[o + 2], self.data[o + 3]]
    }

    pub fn channel_means(&self) -> [f64; 4] {
        let mut acc = [0.0; 4];
        for px in self.data.chunks_exact(4) {
            for c in 0..4 {
                acc[c] += px[c];
            }
        }
        let n = self.pixel_count().max(1) as f64;
        acc.map(|v| v / n)
    }

    pub fn alpha_mask(&self) -> Vec<bool> {
        self.data.chunks_exact(4).map(|px| px[3] > 0.0).collect()
    }

    /// Sets RGB to zero wherever alpha is zero.
    pub fn clear_transparent(&mut self) {
        for px in self.data.chunks_exact_mut(4) {
            if px[3] <= 0.0 {
                px[..3].fill(0.0);
            }
        }
    }

    pub fn to_rgba8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        encode_png(self.width, self.height, png::ColorType::Rgba, &self.to_rgba8())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_png()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Decodes 8/16-bit gray, gray+alpha, RGB, RGBA or palette PNGs.
    /// Missing alpha becomes 1.
    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let mut decoder = png::Decoder::new(Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::normalize_to_color8());
        let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Png("image too large".into()))?;
        let mut buf = vec![0u8; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Png(e.to_string()))?;
        let (w, h) = (info.width, info.height);
        let px = w as usize * h as usize;
        let bytes = &buf[..info.buffer_size()];
        let to = |b: u8| b as f64 / 255.0;
        let mut data = Vec::with_capacity(px * 4);
        match info.color_type {
            png::ColorType::Rgba => data.extend(bytes.iter().map(|b| to(*b))),
            png::ColorType::Rgb => {
                for p in bytes.chunks_exact(3) {
                    data.extend_from_slice(&[to(p[0]), to(p[1]), to(p[2]), 1.0]);
                }
            }
            png::ColorType::GrayscaleAlpha => {
                for p in bytes.chunks_exact(2) {
                    let g = to(p[0]);
                    data.extend_from_slice(&[g, g, g, to(p[1])]);
                }
            }
            png::ColorType::Grayscale => {
                for p in bytes {
                    let g = to(*p);
                    data.extend_from_slice(&[g, g, g, 1.0]);
                }
            }
            png::ColorType::Indexed => {
                return Err(Error::Png("palette was not expanded".into()));
            }
        }
        Self::from_raw(w, h, data)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_png(&bytes)
    }
}

pub(crate) fn encode_png(width: u32, height: u32, color: png::ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        writer
            .write_image_data(data)
            .map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(out)
}

/// Box-filter reduction by `divisor` (a power of two): each output pixel is
/// the mean of its `divisor × divisor` source block.
pub fn area_downsample(image: &RgbaImage, divisor: u32) -> Result<RgbaImage> {
    if divisor == 0 || !divisor.is_power_of_two() {
        return Err(Error::invalid(format!(
            "downsample divisor must be a power of two, got {divisor}"
        )));
    }
    let (w, h) = image.dims();
    if w % divisor != 0 || h % divisor != 0 {
        return Err(Error::invalid(format!(
            "{w}x{h} image is not divisible by {divisor}"
        )));
    }
    let (ow, oh) = (w / divisor, h / divisor);
    let norm = 1.0 / (divisor as f64 * divisor as f64);
    let mut out = RgbaImage::new(ow, oh);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = [0.0; 4];
            for y in oy * divisor..(oy + 1) * divisor {
                for x in ox * divisor..(ox + 1) * divisor {
                    let p = image.get(x, y);
                    for c in 0..4 {
                        acc[c] += p[c];
                    }
                }
            }
            out.set(ox, oy, acc.map(|v| v * norm));
        }
    }
    Ok(out)
}

/// Per-view box-filtered images, coarsest first. With `n` levels, level
/// `c` (1-based) is the base reduced by `2^(n - c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePyramid {
    levels: Vec<RgbaImage>,
}

pub const DEFAULT_PYRAMID_LEVELS: usize = 4;

impl ImagePyramid {
    pub fn build(base: &RgbaImage, num_levels: usize) -> Result<Self> {
        if num_levels == 0 {
            return Err(Error::invalid("pyramid needs at least one level"));
        }
        let levels = (1..=num_levels)
            .map(|c| area_downsample(base, 1 << (num_levels - c)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { levels })
    }

    /// `(width, height)` of every level for a base of the given size.
    pub fn level_dims(width: u32, height: u32, num_levels: usize) -> Result<Vec<(u32, u32)>> {
        let d = 1u32 << (num_levels.saturating_sub(1));
        if width % d != 0 || height % d != 0 {
            return Err(Error::invalid(format!(
                "{width}x{height} is not divisible by {d}"
            )));
        }
        Ok((1..=num_levels)
            .map(|c| {
                let s = 1u32 << (num_levels - c);
                (width / s, height / s)
            })
            .collect())
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// 1-based level; `num_levels()` is the base image.
    pub fn level(&self, c: usize) -> &RgbaImage {
        &self.levels[c - 1]
    }

    pub fn base(&self) -> &RgbaImage {
        self.levels.last().expect("non-empty pyramid")
    }

    pub fn levels(&self) -> &[RgbaImage] {
        &self.levels
    }
}

pub fn build_pyramid(base: &RgbaImage) -> Result<ImagePyramid> {
    ImagePyramid::build(base, DEFAULT_PYRAMID_LEVELS)
}

/// Bilinear lookup at continuous pixel coordinates, texel `(i, j)` centered
/// at `(i + 0.5, j + 0.5)`. Valid for `x ∈ [0, width]`, `y ∈ [0, height]`;
/// neighbours past the border clamp to the edge texel.
pub fn bilinear_sample(image: &RgbaImage, x: f64, y: f64) -> Result<[f64; 4]> {
    let (w, h) = image.dims();
    if !(x >= 0.0 && x <= w as f64 && y >= 0.0 && y <= h as f64) {
        return Err(Error::invalid(format!(
            "sample ({x}, {y}) outside {w}x{h} image"
        )));
    }
    let fx = x - 0.5;
    let fy = y - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = fx - x0;
    let ty = fy - y0;
    let clamp = |v: f64, n: u32| v.clamp(0.0, (n - 1) as f64) as u32;
    let (xa, xb) = (clamp(x0, w), clamp(x0 + 1.0, w));
    let (ya, yb) = (clamp(y0, h), clamp(y0 + 1.0, h));
    let (p00, p10, p01, p11) = (
        image.get(xa, ya),
        image.get(xb, ya),
        image.get(xa, yb),
        image.get(xb, yb),
    );
    let mut out = [0.0; 4];
    for c in 0..4 {
        let top = p00[c] + (p10[c] - p00[c]) * tx;
        let bottom = p01[c] + (p11[c] - p01[c]) * tx;
        out[c] = top + (bottom - top) * ty;
    }
    Ok(out)
}
