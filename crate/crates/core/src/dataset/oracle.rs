//! Analytic ray tracer for the built-in synthetic subject: an unlit textured
//! sphere on a transparent background. Polar caps carry a checkerboard and
//! the equatorial band carries fine sinusoidal stripes, giving detail both
//! below and above the Nyquist rate of the coarse pyramid levels.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::RgbaImage;
use crate::error::{Error, Result};
use crate::geometry::{dot3, sub, Camera, RigidTransform, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticScene {
    pub center: Vec3,
    pub radius: f64,
    /// Checker cells around the full longitude circle.
    pub checker_cells_longitude: u32,
    /// Checker cells from pole to pole.
    pub checker_cells_latitude: u32,
    /// Stripe periods around the full longitude circle.
    pub stripe_periods: f64,
    /// Half-height of the striped band, radians of latitude.
    pub stripe_band_half_angle: f64,
    pub checker_colors: [[f64; 3]; 2],
    pub stripe_colors: [[f64; 3]; 2],
}

impl Default for SyntheticScene {
    fn default() -> Self {
        Self {
            center: [0.0; 3],
            radius: 1.0,
            checker_cells_longitude: 12,
            checker_cells_latitude: 6,
            stripe_periods: 48.0,
            stripe_band_half_angle: 0.6,
            checker_colors: [[0.9, 0.75, 0.2], [0.15, 0.3, 0.7]],
            stripe_colors: [[0.95, 0.95, 0.95], [0.1, 0.1, 0.1]],
        }
    }
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::invalid("scene radius must be positive"));
        }
        if self.checker_cells_longitude == 0 || self.checker_cells_latitude == 0 {
            return Err(Error::invalid("checker cell counts must be positive"));
        }
        Ok(())
    }

    /// Distance along the unit direction `dir` from `origin` to the first
    /// sphere hit in front of the origin.
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        let oc = sub(origin, self.center);
        let b = dot3(oc, dir);
        let c = dot3(oc, oc) - self.radius * self.radius;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        let t0 = -b - s;
        let t1 = -b + s;
        if t0 > 1e-9 {
            Some(t0)
        } else if t1 > 1e-9 {
            Some(t1)
        } else {
            None
        }
    }

    /// Albedo at a point on the sphere surface.
    pub fn albedo(&self, p: Vec3) -> [f64; 3] {
        let n = sub(p, self.center).map(|v| v / self.radius);
        let lat = n[1].clamp(-1.0, 1.0).asin();
        let lon = n[2].atan2(n[0]);
        if lat.abs() < self.stripe_band_half_angle {
            let t = 0.5 + 0.5 * (self.stripe_periods * lon).sin();
            let [a, b] = self.stripe_colors;
            [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t)
        } else {
            let u = ((lon + PI) / TAU * self.checker_cells_longitude as f64).floor() as i64;
            let v = ((lat + PI / 2.0) / PI * self.checker_cells_latitude as f64).floor() as i64;
            self.checker_colors[((u + v).rem_euclid(2)) as usize]
        }
    }

    /// Premultiplied RGBA seen along a ray.
    pub fn radiance(&self, origin: Vec3, dir: Vec3) -> [f64; 4] {
        match self.intersect(origin, dir) {
            Some(t) => {
                let p = [0, 1, 2].map(|i| origin[i] + dir[i] * t);
                let [r, g, b] = self.albedo(p);
                [r, g, b, 1.0]
            }
            None => [0.0; 4],
        }
    }
}

/// Renders `cam` with `supersample²` stratified samples per pixel. With
/// `supersample == 1` the single sample sits at the pixel center; otherwise
/// each stratum is jittered from a stream keyed by `jitter_seed`.
pub fn render_oracle(scene: &SyntheticScene, cam: &Camera, supersample: u32, jitter_seed: u64) -> RgbaImage {
    let s = supersample.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(jitter_seed);
    let origin = cam.origin();
    let mut img = RgbaImage::new(cam.width_px, cam.height_px);
    let inv = 1.0 / (s * s) as f64;
    for v in 0..cam.height_px {
        for u in 0..cam.width_px {
            let mut acc = [0.0; 4];
            for sy in 0..s {
                for sx in 0..s {
                    let (jx, jy) = if s == 1 {
                        (0.5, 0.5)
                    } else {
                        (rng.gen::<f64>(), rng.gen::<f64>())
                    };
                    let x = u as f64 + (sx as f64 + jx) / s as f64;
                    let y = v as f64 + (sy as f64 + jy) / s as f64;
                    let d = cam.direction_through(x, y);
                    let len = dot3(d, d).sqrt();
                    let rgba = scene.radiance(origin, d.map(|c| c / len));
                    for c in 0..4 {
                        acc[c] += rgba[c];
                    }
                }
            }
            img.set(u, v, acc.map(|a| a * inv));
        }
    }
    img
}

/// Cameras on a ring around the scene looking at its center, alternating
/// slightly above and below the equator.
pub fn orbit_cameras(
    scene: &SyntheticScene,
    count: usize,
    width: u32,
    height: u32,
    distance: f64,
    focal_px: f64,
) -> Result<Vec<Camera>> {
    orbit_cameras_offset(scene, count, width, height, distance, focal_px, 0.0)
}

/// As [`orbit_cameras`] with every azimuth rotated by `azimuth_offset`
/// radians.
pub fn orbit_cameras_offset(
    scene: &SyntheticScene,
    count: usize,
    width: u32,
    height: u32,
    distance: f64,
    focal_px: f64,
    azimuth_offset: f64,
) -> Result<Vec<Camera>> {
    (0..count)
        .map(|i| {
            let az = azimuth_offset + TAU * i as f64 / count as f64;
            let el: f64 = if i % 2 == 0 { 0.25 } else { -0.25 };
            let c = scene.center;
            let eye = [
                c[0] + distance * el.cos() * az.cos(),
                c[1] + distance * el.sin(),
                c[2] + distance * el.cos() * az.sin(),
            ];
            let pose = RigidTransform::look_at(eye, c, [0.0, 1.0, 0.0])?;
            Camera::new(
                width,
                height,
                focal_px,
                focal_px,
                width as f64 / 2.0,
                height as f64 / 2.0,
                pose,
            )
        })
        .collect()
}
