//! Adaptive rendering with a per-pixel level of detail.
//!
//! A frame is rendered in three stages: an [`LodMap`] is built from the
//! policy, pixels the occupancy network rejects are marked skipped (0), and
//! the remaining pixels are evaluated in one batch per level. Skipped
//! pixels come out as transparent black.

use std::sync::OnceLock;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::image::encode_png;
use crate::dataset::RgbaImage;
use crate::error::{Error, Result};
use crate::geometry::{encode_ray_into, norm, scale_intrinsics, sub, Camera, EncodingConfig, ScaleDivisor, Vec3};
use crate::pronet::{ArchSpec, LodIndex, Precision, ProgressiveMlp};

/// Rays evaluated per network call.
const RENDER_CHUNK: usize = 8192;

/// A trained light field: the progressive network, its ray encoding and
/// the optional occupancy classifier.
#[derive(Debug)]
pub struct LightFieldModel {
    pub net: ProgressiveMlp<f32>,
    pub encoding: EncodingConfig,
    pub occupancy: Option<ProgressiveMlp<f32>>,
    half: OnceLock<ProgressiveMlp<f32>>,
}

impl Clone for LightFieldModel {
    fn clone(&self) -> Self {
        Self::new(self.net.clone(), self.encoding, self.occupancy.clone())
    }
}

impl LightFieldModel {
    pub fn new(net: ProgressiveMlp<f32>, encoding: EncodingConfig, occupancy: Option<ProgressiveMlp<f32>>) -> Self {
        Self {
            net,
            encoding,
            occupancy,
            half: OnceLock::new(),
        }
    }

    pub fn arch(&self) -> &ArchSpec {
        self.net.arch()
    }

    /// Half-precision copy of the network, built on first use.
    pub fn half_precision_net(&self) -> &ProgressiveMlp<f32> {
        self.half.get_or_init(|| self.net.to_half_precision())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LodMode {
    Fixed {
        lod: usize,
    },
    Distance {
        object_center: Vec3,
        object_radius: f64,
        train_full_height_px: f64,
    },
    Foveated {
        gaze_px: [f64; 2],
        radii: Vec<f64>,
    },
    Dithered {
        from_lod: usize,
        to_lod: usize,
        fraction: f64,
        #[serde(default)]
        frame_seed: u64,
    },
}

fn default_threshold() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderPolicy {
    #[serde(flatten)]
    pub mode: LodMode,
    #[serde(default)]
    pub use_occupancy: bool,
    #[serde(default = "default_threshold")]
    pub occupancy_threshold: f64,
    #[serde(default)]
    pub reduced_precision: bool,
}

impl RenderPolicy {
    pub fn fixed(lod: usize) -> Self {
        Self {
            mode: LodMode::Fixed { lod },
            use_occupancy: false,
            occupancy_threshold: default_threshold(),
            reduced_precision: false,
        }
    }

    pub fn with_occupancy(mut self, threshold: f64) -> Self {
        self.use_occupancy = true;
        self.occupancy_threshold = threshold;
        self
    }

    pub fn validate(&self, arch: &ArchSpec) -> Result<()> {
        let check = |k: usize| LodIndex::new(k, arch).map(|_| ());
        match &self.mode {
            LodMode::Fixed { lod } => check(*lod)?,
            LodMode::Distance {
                object_radius,
                train_full_height_px,
                ..
            } => {
                if !(*object_radius > 0.0 && *train_full_height_px > 0.0) {
                    return Err(Error::invalid("object_radius and train_full_height_px must be positive"));
                }
            }
            LodMode::Foveated { radii, .. } => validate_radii(radii, arch.num_lods())?,
            LodMode::Dithered {
                from_lod,
                to_lod,
                fraction,
                ..
            } => {
                check(*from_lod)?;
                check(*to_lod)?;
                if !(0.0..=1.0).contains(fraction) {
                    return Err(Error::invalid(format!("dither fraction {fraction} outside [0, 1]")));
                }
            }
        }
        if self.use_occupancy && !(self.occupancy_threshold > 0.0 && self.occupancy_threshold < 1.0) {
            return Err(Error::invalid("occupancy_threshold must lie in (0, 1)"));
        }
        Ok(())
    }
}

fn validate_radii(radii: &[f64], num_lods: usize) -> Result<()> {
    if radii.len() + 1 != num_lods {
        return Err(Error::invalid(format!(
            "foveation needs {} radii for {num_lods} levels, got {}",
            num_lods - 1,
            radii.len()
        )));
    }
    if radii.iter().any(|r| !(*r >= 0.0)) || radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("foveation radii must be non-negative and strictly increasing"));
    }
    Ok(())
}

/// Per-pixel level (row-major); 0 marks a skipped pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LodMap {
    pub width: u32,
    pub height: u32,
    pub levels: Vec<u8>,
}

impl LodMap {
    pub fn uniform(width: u32, height: u32, lod: LodIndex) -> Self {
        Self {
            width,
            height,
            levels: vec![lod.get() as u8; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.levels[(y * self.width + x) as usize]
    }

    /// Pixel count per level, index 0 for skipped.
    pub fn histogram(&self, num_lods: usize) -> Vec<usize> {
        let mut h = vec![0; num_lods + 1];
        for &l in &self.levels {
            h[l as usize] += 1;
        }
        h
    }

    /// 8-bit grayscale visualization: level `k` maps to `k · 255 / top`.
    pub fn to_png(&self, num_lods: usize) -> Result<Vec<u8>> {
        let data: Vec<u8> = self
            .levels
            .iter()
            .map(|&l| ((l as usize * 255) / num_lods.max(1)) as u8)
            .collect();
        encode_png(self.width, self.height, png::ColorType::Grayscale, &data)
    }
}

/// Level for an object of `object_radius` centered at `object_center`:
/// its projected diameter `d = 2·r·fy / distance` selects
/// `clamp(top − ⌊log2(H / max(d, 1))⌋, 1, top)` for training height `H`.
pub fn lod_for_distance(
    cam: &Camera,
    object_center: Vec3,
    object_radius: f64,
    train_full_height_px: f64,
    arch: &ArchSpec,
) -> Result<LodIndex> {
    let in_cam = cam.world_from_camera.inverse_apply(object_center);
    let distance = norm(sub(object_center, cam.origin()));
    if !(distance > 0.0) {
        return Err(Error::invalid("object distance must be positive"));
    }
    if in_cam[2] <= 0.0 {
        return Err(Error::invalid("object is behind the camera"));
    }
    let d_px = 2.0 * object_radius * cam.fy / distance;
    let top = arch.num_lods() as i64;
    let drop = (train_full_height_px / d_px.max(1.0)).log2().floor() as i64;
    let k = (top - drop).clamp(1, top);
    LodIndex::new(k as usize, arch)
}

/// Exactly `round(fraction · w · h)` pixels, taken as a prefix of a
/// permutation keyed by `frame_seed`, so masks nest as the fraction grows.
pub fn dither_mask(width: u32, height: u32, fraction: f64, frame_seed: u64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("dither fraction {fraction} outside [0, 1]")));
    }
    let n = width as usize * height as usize;
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(frame_seed));
    let count = (fraction * n as f64).round() as usize;
    let mut mask = vec![false; n];
    for &i in &order[..count.min(n)] {
        mask[i as usize] = true;
    }
    Ok(mask)
}

/// Top level within `radii[0]` of the gaze point, one level less per ring,
/// level 1 beyond the last radius.
pub fn lod_map_foveated(width: u32, height: u32, gaze_px: [f64; 2], radii: &[f64]) -> Result<LodMap> {
    let top = radii.len() + 1;
    validate_radii(radii, top)?;
    check_gaze(width, height, gaze_px)?;
    let mut levels = Vec::with_capacity(width as usize * height as usize);
    for v in 0..height {
        for u in 0..width {
            let dx = u as f64 + 0.5 - gaze_px[0];
            let dy = v as f64 + 0.5 - gaze_px[1];
            let r = dx.hypot(dy);
            let rings = radii.iter().take_while(|&&limit| r > limit).count();
            levels.push((top - rings) as u8);
        }
    }
    Ok(LodMap {
        width,
        height,
        levels,
    })
}

fn check_gaze(width: u32, height: u32, gaze: [f64; 2]) -> Result<()> {
    if !(gaze[0] >= 0.0 && gaze[0] <= width as f64 && gaze[1] >= 0.0 && gaze[1] <= height as f64) {
        return Err(Error::invalid(format!(
            "gaze point ({}, {}) outside {width}x{height} image",
            gaze[0], gaze[1]
        )));
    }
    Ok(())
}

/// LOD map for `policy` before occupancy skipping.
pub fn lod_map_for_policy(cam: &Camera, policy: &RenderPolicy, arch: &ArchSpec) -> Result<LodMap> {
    policy.validate(arch)?;
    let (w, h) = (cam.width_px, cam.height_px);
    Ok(match &policy.mode {
        LodMode::Fixed { lod } => LodMap::uniform(w, h, LodIndex::new(*lod, arch)?),
        LodMode::Distance {
            object_center,
            object_radius,
            train_full_height_px,
        } => LodMap::uniform(
            w,
            h,
            lod_for_distance(cam, *object_center, *object_radius, *train_full_height_px, arch)?,
        ),
        LodMode::Foveated { gaze_px, radii } => lod_map_foveated(w, h, *gaze_px, radii)?,
        LodMode::Dithered {
            from_lod,
            to_lod,
            fraction,
            frame_seed,
        } => {
            let mask = dither_mask(w, h, *fraction, *frame_seed)?;
            LodMap {
                width: w,
                height: h,
                levels: mask
                    .into_iter()
                    .map(|m| if m { *to_lod as u8 } else { *from_lod as u8 })
                    .collect(),
            }
        }
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub ray_generation_ms: f64,
    pub occupancy_ms: f64,
    pub network_ms: f64,
    pub total_ms: f64,
    /// Multiply-accumulates spent in the progressive network.
    pub network_macs: u64,
    pub occupancy_macs: u64,
    /// Pixels per level; index 0 counts skipped pixels.
    pub pixels_per_lod: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub image: RgbaImage,
    pub lod_map: LodMap,
    pub timing: TimingReport,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn encode_pixels(cam: &Camera, pixels: &[u32], encoding: &EncodingConfig) -> Vec<f32> {
    let dim = encoding.dim();
    let mut feats = vec![0.0f32; pixels.len() * dim];
    for (row, &p) in pixels.iter().enumerate() {
        let (u, v) = (p % cam.width_px, p / cam.width_px);
        let ray = cam.ray_through(u as f64 + 0.5, v as f64 + 0.5);
        encode_ray_into(&ray, encoding, &mut feats[row * dim..(row + 1) * dim]);
    }
    feats
}

fn eval_chunked(net: &ProgressiveMlp<f32>, feats: &[f32], lod: LodIndex) -> Result<Vec<f32>> {
    let dim = net.arch().input_dim;
    let mut out = Vec::with_capacity(feats.len() / dim * net.arch().output_dim);
    for chunk in feats.chunks(RENDER_CHUNK * dim) {
        out.extend(net.forward_batch(chunk, chunk.len() / dim, lod)?);
    }
    Ok(out)
}

/// Renders one frame under `policy`.
pub fn render(model: &LightFieldModel, cam: &Camera, policy: &RenderPolicy) -> Result<RenderOutput> {
    let started = Instant::now();
    cam.validate()?;
    let arch = model.arch();
    if arch.input_dim != model.encoding.dim() {
        return Err(Error::invalid("model encoding does not match network input"));
    }
    let mut lod_map = lod_map_for_policy(cam, policy, arch)?;
    let net = if policy.reduced_precision && model.net.precision() == Precision::Full {
        model.half_precision_net()
    } else {
        &model.net
    };
    let mut timing = TimingReport::default();

    let t = Instant::now();
    let all: Vec<u32> = (0..cam.pixel_count() as u32).collect();
    let feats = encode_pixels(cam, &all, &model.encoding);
    timing.ray_generation_ms = ms_since(t);

    if policy.use_occupancy {
        let occ = model
            .occupancy
            .as_ref()
            .ok_or_else(|| Error::invalid("policy requests occupancy skipping but the model has none"))?;
        let t = Instant::now();
        let probs = eval_chunked(occ, &feats, occ.arch().top())?;
        for (l, p) in lod_map.levels.iter_mut().zip(&probs) {
            if (*p as f64) < policy.occupancy_threshold {
                *l = 0;
            }
        }
        timing.occupancy_macs = occ.arch().macs_per_ray(occ.arch().top()) * all.len() as u64;
        timing.occupancy_ms = ms_since(t);
    }

    let t = Instant::now();
    let dim = model.encoding.dim();
    let mut image = RgbaImage::new(cam.width_px, cam.height_px);
    let mut raw = vec![0.0f64; cam.pixel_count() * 4];
    for k in 1..=arch.num_lods() {
        let lod = LodIndex::new(k, arch)?;
        let pixels: Vec<u32> = all
            .iter()
            .copied()
            .filter(|&p| lod_map.levels[p as usize] as usize == k)
            .collect();
        if pixels.is_empty() {
            continue;
        }
        let mut sub_feats = Vec::with_capacity(pixels.len() * dim);
        for &p in &pixels {
            sub_feats.extend_from_slice(&feats[p as usize * dim..(p as usize + 1) * dim]);
        }
        let out = eval_chunked(net, &sub_feats, lod)?;
        for (row, &p) in pixels.iter().enumerate() {
            for c in 0..4 {
                raw[p as usize * 4 + c] = out[row * 4 + c] as f64;
            }
        }
        timing.network_macs += arch.macs_per_ray(lod) * pixels.len() as u64;
    }
    timing.network_ms = ms_since(t);
    if arch.output_dim == 4 {
        image = RgbaImage::from_raw(cam.width_px, cam.height_px, raw)?;
    }
    timing.pixels_per_lod = lod_map.histogram(arch.num_lods());
    timing.total_ms = ms_since(started);
    Ok(RenderOutput {
        image,
        lod_map,
        timing,
    })
}

/// Whole-frame render at one level without occupancy skipping.
pub fn render_at_lod(net: &ProgressiveMlp<f32>, cam: &Camera, lod: LodIndex, encoding: &EncodingConfig) -> Result<RgbaImage> {
    let model = LightFieldModel::new(net.clone(), *encoding, None);
    Ok(render(&model, cam, &RenderPolicy::fixed(lod.get()))?.image)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchStats {
    pub lod: usize,
    pub scale_divisor: u32,
    pub frames: usize,
    pub ms_mean: f64,
    pub ms_p50: f64,
    pub ms_p95: f64,
    /// Network MACs summed over one pass over the cameras.
    pub network_macs_per_pass: u64,
    pub hidden_macs_per_ray: u64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Times fixed-level renders over `cams` scaled by `divisor`. The first of
/// `repetitions` passes is a discarded warm-up.
pub fn benchmark(
    model: &LightFieldModel,
    cams: &[Camera],
    lod: LodIndex,
    divisor: ScaleDivisor,
    repetitions: usize,
    use_occupancy: bool,
) -> Result<BenchStats> {
    if repetitions < 3 {
        return Err(Error::invalid("benchmark needs at least 3 repetitions"));
    }
    if cams.is_empty() {
        return Err(Error::invalid("benchmark needs at least one camera"));
    }
    let scaled: Vec<Camera> = cams
        .iter()
        .map(|c| scale_intrinsics(c, divisor))
        .collect::<Result<_>>()?;
    let mut policy = RenderPolicy::fixed(lod.get());
    policy.use_occupancy = use_occupancy;
    let mut times = Vec::new();
    let mut macs_per_pass = 0;
    for rep in 0..repetitions {
        let mut pass_macs = 0;
        for cam in &scaled {
            let t = Instant::now();
            let out = render(model, cam, &policy)?;
            let ms = ms_since(t);
            pass_macs += out.timing.network_macs;
            if rep > 0 {
                times.push(ms);
            }
        }
        macs_per_pass = pass_macs;
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    times.sort_by(|a, b| a.total_cmp(b));
    Ok(BenchStats {
        lod: lod.get(),
        scale_divisor: divisor.get(),
        frames: times.len(),
        ms_mean: mean,
        ms_p50: percentile(&times, 0.5),
        ms_p95: percentile(&times, 0.95),
        network_macs_per_pass: macs_per_pass,
        hidden_macs_per_ray: model.arch().hidden_macs_per_ray(lod),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;

    fn cam_at(z: f64, h: u32, fy: f64) -> Camera {
        let pose = RigidTransform::look_at([0.0, 0.0, -z], [0.0; 3], [0.0, 1.0, 0.0]).unwrap();
        Camera::new(h, h, fy, fy, h as f64 / 2.0, h as f64 / 2.0, pose).unwrap()
    }

    #[test]
    fn dither_counts_and_nesting() {
        for f in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let m = dither_mask(10, 10, f, 3).unwrap();
            assert_eq!(m.iter().filter(|b| **b).count(), (f * 100.0_f64).round() as usize);
        }
        let a = dither_mask(10, 10, 0.3, 7).unwrap();
        let b = dither_mask(10, 10, 0.7, 7).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| !*x || *y));
        assert!(dither_mask(4, 4, 1.5, 0).is_err());
    }

    #[test]
    fn foveation_rings() {
        let m = lod_map_foveated(20, 20, [10.0, 10.0], &[100.0, 200.0, 300.0]).unwrap();
        assert!(m.levels.iter().all(|&l| l == 4));
        let m = lod_map_foveated(40, 40, [20.0, 20.0], &[3.0, 8.0, 14.0]).unwrap();
        assert_eq!(m.get(19, 19), 4);
        assert_eq!(m.get(39, 39), 1);
        // non-increasing moving away from the gaze point along +x
        let row: Vec<u8> = (20..40).map(|x| m.get(x, 19)).collect();
        assert!(row.windows(2).all(|w| w[0] >= w[1]));
        assert!(lod_map_foveated(10, 10, [11.0, 5.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(lod_map_foveated(10, 10, [5.0, 5.0], &[2.0, 1.0, 3.0]).is_err());
    }

    #[test]
    fn distance_lod_rules() {
        let arch = ArchSpec::default();
        // radius 1 at distance 4 with fy 384: diameter 192 px = full height
        let near = cam_at(4.0, 192, 384.0);
        assert_eq!(lod_for_distance(&near, [0.0; 3], 1.0, 192.0, &arch).unwrap().get(), 4);
        // diameter exactly H / 8
        let far = cam_at(32.0, 192, 384.0);
        assert_eq!(lod_for_distance(&far, [0.0; 3], 1.0, 192.0, &arch).unwrap().get(), 1);
        let mut prev = 4;
        for i in 0..8 {
            let c = cam_at(3.0 * 2f64.powi(i), 192, 384.0);
            let k = lod_for_distance(&c, [0.0; 3], 1.0, 192.0, &arch).unwrap().get();
            assert!(k <= prev && prev - k <= 1);
            prev = k;
        }
        let behind = cam_at(4.0, 192, 384.0);
        assert!(lod_for_distance(&behind, [0.0, 0.0, -10.0], 1.0, 192.0, &arch).is_err());
    }

    #[test]
    fn policy_json_shape() {
        let p: RenderPolicy = serde_json::from_str(
            r#"{"mode":"dithered","from_lod":1,"to_lod":2,"fraction":0.5,"use_occupancy":true}"#,
        )
        .unwrap();
        assert_eq!(p.occupancy_threshold, 0.1);
        assert!(matches!(p.mode, LodMode::Dithered { frame_seed: 0, .. }));
        let p: RenderPolicy = serde_json::from_str(r#"{"mode":"fixed","lod":9}"#).unwrap();
        assert!(p.validate(&ArchSpec::default()).is_err());
    }

    #[test]
    fn fixed_render_mac_accounting() {
        let arch = ArchSpec {
            input_dim: 24,
            output_dim: 4,
            num_weight_layers: 4,
            lod_widths: vec![4, 8],
        };
        let model = LightFieldModel::new(ProgressiveMlp::init(arch.clone(), 0).unwrap(), EncodingConfig::default(), None);
        let cam = cam_at(4.0, 6, 10.0);
        for k in 1..=2 {
            let out = render(&model, &cam, &RenderPolicy::fixed(k)).unwrap();
            assert_eq!(out.timing.network_macs, 36 * arch.macs_per_ray(arch.lod(k).unwrap()));
            assert_eq!(out.timing.pixels_per_lod[k], 36);
        }
    }
}
