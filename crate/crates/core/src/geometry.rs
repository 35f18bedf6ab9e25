//! Pinhole cameras, per-pixel ray generation, Plücker coordinates and the
//! frequency encoding fed to the network.
//!
//! Conventions: camera space looks down +z with +x right and +y down, so
//! pixel `(u, v)` maps to the camera-space direction
//! `((u + 0.5 - cx) / fx, (v + 0.5 - cy) / fy, 1)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Rigid transform taking camera-space points to world space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

impl RigidTransform {
    pub const IDENTITY: Self = Self {
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: [0.0; 3],
    };

    /// From a 3×4 row-major `[R | t]` matrix.
    pub fn from_row_major_3x4(m: &[f64]) -> Result<Self> {
        if m.len() != 12 {
            return Err(Error::invalid(format!(
                "pose must have 12 entries (3x4 row-major), got {}",
                m.len()
            )));
        }
        let t = Self {
            rotation: [
                [m[0], m[1], m[2]],
                [m[4], m[5], m[6]],
                [m[8], m[9], m[10]],
            ],
            translation: [m[3], m[7], m[11]],
        };
        t.validate()?;
        Ok(t)
    }

    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1],
            r[2][2], t[2],
        ]
    }

    /// Camera at `eye` looking at `target`; `up` is the approximate world
    /// direction that should appear toward the top of the image.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let fwd = sub(target, eye);
        let fl = norm(fwd);
        if fl == 0.0 {
            return Err(Error::invalid("look_at: eye coincides with target"));
        }
        let z = scale(fwd, 1.0 / fl);
        // image +y points down, so camera y ≈ -up and x = y × z = z × up
        let xr = cross(z, up);
        let xl = norm(xr);
        if xl < 1e-12 {
            return Err(Error::invalid("look_at: up is parallel to view direction"));
        }
        let x = scale(xr, 1.0 / xl);
        let y = cross(z, x);
        Ok(Self {
            rotation: [[x[0], y[0], z[0]], [x[1], y[1], z[1]], [x[2], y[2], z[2]]],
            translation: eye,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-6 {
                    return Err(Error::invalid("camera rotation is not orthonormal"));
                }
            }
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("camera translation is not finite"));
        }
        Ok(())
    }

    #[inline]
    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let r = &self.rotation;
        [dot3(r[0], v), dot3(r[1], v), dot3(r[2], v)]
    }

    /// World point into camera space.
    pub fn inverse_apply(&self, p: Vec3) -> Vec3 {
        let d = sub(p, self.translation);
        let r = &self.rotation;
        [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width_px: u32,
    pub height_px: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_from_camera: RigidTransform,
}

impl Camera {
    pub fn new(
        width_px: u32,
        height_px: u32,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        world_from_camera: RigidTransform,
    ) -> Result<Self> {
        let cam = Self {
            width_px,
            height_px,
            fx,
            fy,
            cx,
            cy,
            world_from_camera,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_px < 1 || self.height_px < 1 {
            return Err(Error::invalid("camera resolution must be at least 1x1"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("camera focal lengths must be positive"));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::invalid("camera principal point must be finite"));
        }
        self.world_from_camera.validate()
    }

    pub fn pixel_count(&self) -> usize {
        self.width_px as usize * self.height_px as usize
    }

    pub fn origin(&self) -> Vec3 {
        self.world_from_camera.translation
    }

    /// Unnormalized world-space direction through continuous pixel
    /// coordinate `(x, y)` (pixel centers sit at half-integers).
    pub fn direction_through(&self, x: f64, y: f64) -> Vec3 {
        let d = [(x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0];
        self.world_from_camera.rotate(d)
    }

    pub fn ray_through(&self, x: f64, y: f64) -> PluckerRay {
        make_plucker(self.origin(), self.direction_through(x, y))
            .expect("pinhole directions have positive z")
    }
}

/// Oriented line stored as (unit direction, origin × direction).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PluckerRay {
    pub direction: Vec3,
    pub moment: Vec3,
}

impl PluckerRay {
    pub fn components(&self) -> [f64; 6] {
        let (d, m) = (self.direction, self.moment);
        [d[0], d[1], d[2], m[0], m[1], m[2]]
    }

    /// Closest point on the line to the world origin.
    pub fn closest_point_to_origin(&self) -> Vec3 {
        cross(self.direction, self.moment)
    }
}

pub fn make_plucker(origin: Vec3, direction: Vec3) -> Result<PluckerRay> {
    let len = norm(direction);
    if !(len > 0.0) || !len.is_finite() {
        return Err(Error::invalid("ray direction must have non-zero finite length"));
    }
    let d = scale(direction, 1.0 / len);
    Ok(PluckerRay {
        direction: d,
        moment: cross(origin, d),
    })
}

/// Row-major `height × width` grid of rays through pixel centers.
pub fn rays_for_camera(cam: &Camera) -> Vec<PluckerRay> {
    let mut rays = Vec::with_capacity(cam.pixel_count());
    for v in 0..cam.height_px {
        for u in 0..cam.width_px {
            rays.push(cam.ray_through(u as f64 + 0.5, v as f64 + 0.5));
        }
    }
    rays
}

/// Resolution reduction by a power of two: 1, 2, 4 or 8.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScaleDivisor(u32);

impl ScaleDivisor {
    pub const FULL: Self = Self(1);
    pub const HALF: Self = Self(2);
    pub const QUARTER: Self = Self(4);
    pub const EIGHTH: Self = Self(8);

    pub fn new(divisor: u32) -> Result<Self> {
        match divisor {
            1 | 2 | 4 | 8 => Ok(Self(divisor)),
            _ => Err(Error::invalid(format!(
                "scale divisor must be 1, 2, 4 or 8, got {divisor}"
            ))),
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn factor(self) -> f64 {
        1.0 / self.0 as f64
    }
}

/// Multiplies resolution and intrinsics by `1 / divisor`; the pose is kept.
pub fn scale_intrinsics(cam: &Camera, divisor: ScaleDivisor) -> Result<Camera> {
    let d = divisor.get();
    if cam.width_px % d != 0 || cam.height_px % d != 0 {
        return Err(Error::invalid(format!(
            "{}x{} is not divisible by {d}",
            cam.width_px, cam.height_px
        )));
    }
    let f = divisor.factor();
    Ok(Camera {
        width_px: cam.width_px / d,
        height_px: cam.height_px / d,
        fx: cam.fx * f,
        fy: cam.fy * f,
        cx: cam.cx * f,
        cy: cam.cy * f,
        world_from_camera: cam.world_from_camera,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub num_frequencies: u32,
    pub include_raw: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            num_frequencies: 2,
            include_raw: false,
        }
    }
}

impl EncodingConfig {
    pub fn dim(&self) -> usize {
        6 * 2 * self.num_frequencies as usize + if self.include_raw { 6 } else { 0 }
    }
}

/// Writes the encoded feature of `ray` into `out` (length `cfg.dim()`).
///
/// Layout: the six raw components `(d.x, d.y, d.z, m.x, m.y, m.z)` first if
/// `include_raw`, then for each component in that order and each frequency
/// `j`, the pair `sin(2^j·π·p), cos(2^j·π·p)`.
pub fn encode_ray_into<T: crate::linalg::Scalar>(ray: &PluckerRay, cfg: &EncodingConfig, out: &mut [T]) {
    assert_eq!(out.len(), cfg.dim(), "encoding buffer length");
    let comps = ray.components();
    let mut i = 0;
    if cfg.include_raw {
        for p in comps {
            out[i] = T::from_f64_lossy(p);
            i += 1;
        }
    }
    for p in comps {
        for j in 0..cfg.num_frequencies {
            let a = (1u64 << j) as f64 * PI * p;
            out[i] = T::from_f64_lossy(a.sin());
            out[i + 1] = T::from_f64_lossy(a.cos());
            i += 2;
        }
    }
}

pub fn encode_ray(ray: &PluckerRay, cfg: &EncodingConfig) -> Vec<f32> {
    let mut out = vec![0.0f32; cfg.dim()];
    encode_ray_into(ray, cfg, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(w: u32, h: u32) -> Camera {
        Camera::new(w, h, 300.0, 310.0, w as f64 / 2.0, h as f64 / 2.0, RigidTransform::IDENTITY)
            .unwrap()
    }

    #[test]
    fn plucker_of_ray_through_origin_has_zero_moment() {
        let r = make_plucker([0.0; 3], [0.0, 0.0, 2.0]).unwrap();
        assert_eq!(r.direction, [0.0, 0.0, 1.0]);
        assert_eq!(r.moment, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn plucker_moment_is_origin_cross_direction() {
        let r = make_plucker([1.0, 0.0, 0.0], [0.0, 0.0, 1.0]).unwrap();
        assert_eq!(r.direction, [0.0, 0.0, 1.0]);
        assert_eq!(r.moment, [0.0, -1.0, 0.0]);
        let slid = make_plucker([1.0, 0.0, 5.0], [0.0, 0.0, 1.0]).unwrap();
        assert_eq!(slid, r);
    }

    #[test]
    fn zero_direction_is_rejected() {
        assert!(matches!(
            make_plucker([1.0, 2.0, 3.0], [0.0; 3]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn principal_ray_of_unit_camera_points_forward() {
        let c = Camera::new(1, 1, 1.0, 1.0, 0.5, 0.5, RigidTransform::IDENTITY).unwrap();
        let rays = rays_for_camera(&c);
        assert_eq!(rays.len(), 1);
        assert_eq!(rays[0].direction, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn small_grid_satisfies_plucker_constraint() {
        let pose = RigidTransform::look_at([1.0, -2.0, 3.0], [0.0; 3], [0.0, 1.0, 0.0]).unwrap();
        let c = Camera::new(2, 2, 2.0, 2.0, 1.0, 1.0, pose).unwrap();
        let rays = rays_for_camera(&c);
        assert_eq!(rays.len(), 4);
        for r in rays {
            assert!((norm(r.direction) - 1.0).abs() < 1e-6);
            assert!(dot3(r.direction, r.moment).abs() < 1e-6);
        }
    }

    #[test]
    fn scale_intrinsics_matches_capture_resolution() {
        let big = cam(4032, 3040);
        let s = scale_intrinsics(&big, ScaleDivisor::EIGHTH).unwrap();
        assert_eq!((s.width_px, s.height_px), (504, 380));
        let desk = scale_intrinsics(&cam(256, 192), ScaleDivisor::EIGHTH).unwrap();
        assert_eq!((desk.width_px, desk.height_px), (32, 24));
        assert_eq!(scale_intrinsics(&big, ScaleDivisor::FULL).unwrap(), big);
    }

    #[test]
    fn scale_intrinsics_composes() {
        let c = cam(256, 192);
        let twice = scale_intrinsics(&scale_intrinsics(&c, ScaleDivisor::HALF).unwrap(), ScaleDivisor::HALF)
            .unwrap();
        assert_eq!(twice, scale_intrinsics(&c, ScaleDivisor::QUARTER).unwrap());
    }

    #[test]
    fn scale_intrinsics_rejects_fractional_resolution() {
        assert!(scale_intrinsics(&cam(30, 20), ScaleDivisor::QUARTER).is_err());
        assert!(ScaleDivisor::new(3).is_err());
    }

    #[test]
    fn identity_scale_leaves_rays_unchanged() {
        let pose = RigidTransform::look_at([0.0, 1.0, -4.0], [0.0; 3], [0.0, 1.0, 0.0]).unwrap();
        let c = Camera::new(8, 6, 7.0, 7.0, 4.0, 3.0, pose).unwrap();
        assert_eq!(
            rays_for_camera(&scale_intrinsics(&c, ScaleDivisor::FULL).unwrap()),
            rays_for_camera(&c)
        );
    }

    #[test]
    fn encoding_of_zero_components_is_sin0_cos0() {
        let r = make_plucker([0.0; 3], [0.0, 0.0, 1.0]).unwrap();
        let e = encode_ray(&r, &EncodingConfig::default());
        assert_eq!(e.len(), 24);
        // components 0, 1 (d.x, d.y) and 3..6 (moment) are zero
        for comp in [0usize, 1, 3, 4, 5] {
            for j in 0..2 {
                let base = comp * 4 + j * 2;
                assert_eq!(e[base], 0.0);
                assert_eq!(e[base + 1], 1.0);
            }
        }
    }

    #[test]
    fn encoding_dims() {
        assert_eq!(EncodingConfig::default().dim(), 24);
        let c = EncodingConfig {
            num_frequencies: 1,
            include_raw: true,
        };
        assert_eq!(c.dim(), 18);
        let r = make_plucker([0.3, 0.1, -2.0], [0.2, 0.1, 1.0]).unwrap();
        let e = encode_ray(&r, &c);
        assert_eq!(e.len(), 18);
        assert_eq!(e[..6], r.components().map(|v| v as f32));
    }

    #[test]
    fn pose_row_major_round_trip() {
        let pose = RigidTransform::look_at([2.0, 1.0, -3.0], [0.0; 3], [0.0, 1.0, 0.0]).unwrap();
        let back = RigidTransform::from_row_major_3x4(&pose.to_row_major_3x4()).unwrap();
        assert_eq!(back, pose);
        let skew = [1.0, 0.5, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        assert!(RigidTransform::from_row_major_3x4(&skew).is_err());
    }

    #[test]
    fn look_at_projects_target_to_principal_point() {
        let pose = RigidTransform::look_at([3.0, 1.0, -2.0], [0.5, 0.2, 0.1], [0.0, 1.0, 0.0]).unwrap();
        let p = pose.inverse_apply([0.5, 0.2, 0.1]);
        assert!(p[0].abs() < 1e-12 && p[1].abs() < 1e-12 && p[2] > 0.0);
        // world up projects toward the top of the image (negative camera y)
        let above = pose.inverse_apply([0.5, 1.2, 0.1]);
        assert!(above[1] < 0.0);
    }
}
