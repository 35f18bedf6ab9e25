//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Three operations, each a plain Rust function (tested natively) with a
//! thin `wasm_bindgen` wrapper:
//!
//! - [`lod_overlay`]: color-coded level map for a render policy, used to
//!   drag the foveation point and scrub a dithered transition.
//! - [`aliasing_pair`]: the synthetic scene point-sampled next to its
//!   supersampled render at the same small resolution.
//! - [`accounting`]: parameter counts and streamed byte sizes per level for
//!   any width schedule.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use plfn::dataset::{orbit_cameras, render_oracle, SyntheticScene};
use plfn::geometry::{Camera, EncodingConfig, RigidTransform};
use plfn::pronet::{ArchSpec, ProgressiveMlp};
use plfn::renderer::{lod_map_for_policy, LightFieldModel, RenderPolicy};
use plfn::streamfmt::{pack, read_meta};

const MIB: f64 = 1024.0 * 1024.0;

/// Overlay colors for levels 1..=4, dark to bright.
const PALETTE: [[u8; 3]; 5] = [
    [0, 0, 0],
    [49, 54, 149],
    [69, 160, 120],
    [240, 200, 60],
    [215, 48, 39],
];

fn demo_camera(width: u32, height: u32) -> Result<Camera, String> {
    let pose = RigidTransform::look_at([0.0, 0.0, -4.0], [0.0; 3], [0.0, 1.0, 0.0]).map_err(|e| e.to_string())?;
    let f = 1.4 * height as f64;
    Camera::new(width, height, f, f, width as f64 / 2.0, height as f64 / 2.0, pose).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct Overlay {
    /// RGBA8, row-major.
    pub rgba: Vec<u8>,
    /// Pixel count per level, index 0 unused.
    pub histogram: Vec<usize>,
}

/// Level map for `policy_json` (the render policy JSON the HTTP service
/// accepts) on a `width`×`height` frame of the default architecture.
pub fn lod_overlay(width: u32, height: u32, policy_json: &str) -> Result<Overlay, String> {
    let policy: RenderPolicy = serde_json::from_str(policy_json).map_err(|e| e.to_string())?;
    let arch = ArchSpec::default();
    let cam = demo_camera(width, height)?;
    let map = lod_map_for_policy(&cam, &policy, &arch).map_err(|e| e.to_string())?;
    let mut rgba = Vec::with_capacity(map.levels.len() * 4);
    for &l in &map.levels {
        let c = PALETTE[(l as usize).min(PALETTE.len() - 1)];
        rgba.extend_from_slice(&[c[0], c[1], c[2], 255]);
    }
    Ok(Overlay {
        rgba,
        histogram: map.histogram(arch.num_lods()),
    })
}

/// `size`×`size` point-sampled render on the left, `supersample`² samples
/// per pixel on the right; RGBA8 of width `2·size`.
pub fn aliasing_pair(size: u32, stripe_periods: f64, supersample: u32) -> Result<Vec<u8>, String> {
    let scene = SyntheticScene {
        stripe_periods,
        ..Default::default()
    };
    scene.validate().map_err(|e| e.to_string())?;
    let cam = orbit_cameras(&scene, 1, size, size, 4.0, 1.4 * size as f64).map_err(|e| e.to_string())?[0];
    let point = render_oracle(&scene, &cam, 1, 0).to_rgba8();
    let smooth = render_oracle(&scene, &cam, supersample.max(1), 0).to_rgba8();
    let row = size as usize * 4;
    let mut out = Vec::with_capacity(row * 2 * size as usize);
    for y in 0..size as usize {
        out.extend_from_slice(&point[y * row..(y + 1) * row]);
        out.extend_from_slice(&smooth[y * row..(y + 1) * row]);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct LevelSize {
    pub lod: usize,
    pub width: usize,
    pub params: usize,
    pub payload_bytes: u64,
    pub payload_mib: f64,
}

#[derive(Debug, Serialize)]
pub struct Accounting {
    pub levels: Vec<LevelSize>,
    /// Bytes for one file holding every level, header included.
    pub file_bytes: u64,
    /// MiB if each level were shipped as its own model.
    pub separate_models_mib: f64,
    pub progressive_mib: f64,
}

/// Sizes for a net with hidden widths `widths` and `layers` weight layers,
/// measured by packing a zero model.
pub fn accounting(widths: &[usize], layers: usize) -> Result<Accounting, String> {
    let encoding = EncodingConfig::default();
    let arch = ArchSpec {
        input_dim: encoding.dim(),
        output_dim: 4,
        num_weight_layers: layers,
        lod_widths: widths.to_vec(),
    };
    let net = ProgressiveMlp::<f32>::zeros(arch.clone()).map_err(|e| e.to_string())?;
    let bytes = pack(&LightFieldModel::new(net, encoding, None)).map_err(|e| e.to_string())?;
    let meta = read_meta(&bytes).map_err(|e| e.to_string())?;
    let mut levels = Vec::new();
    for k in 1..=arch.num_lods() {
        let lod = arch.lod(k).map_err(|e| e.to_string())?;
        let payload = meta.payload_bytes(k);
        levels.push(LevelSize {
            lod: k,
            width: arch.width(lod),
            params: arch.param_count(lod),
            payload_bytes: payload,
            payload_mib: payload as f64 / MIB,
        });
    }
    let separate: u64 = levels.iter().map(|l| l.payload_bytes).sum();
    Ok(Accounting {
        progressive_mib: levels.last().map_or(0.0, |l| l.payload_mib),
        separate_models_mib: separate as f64 / MIB,
        file_bytes: meta.total_len(),
        levels,
    })
}

fn js_err(e: String) -> JsError {
    JsError::new(&e)
}

/// RGBA8 overlay; the histogram is available from [`lod_histogram_js`].
#[wasm_bindgen(js_name = lodOverlay)]
pub fn lod_overlay_js(width: u32, height: u32, policy_json: &str) -> Result<Vec<u8>, JsError> {
    lod_overlay(width, height, policy_json).map(|o| o.rgba).map_err(js_err)
}

#[wasm_bindgen(js_name = lodHistogram)]
pub fn lod_histogram_js(width: u32, height: u32, policy_json: &str) -> Result<Vec<u32>, JsError> {
    lod_overlay(width, height, policy_json)
        .map(|o| o.histogram.into_iter().map(|c| c as u32).collect())
        .map_err(js_err)
}

#[wasm_bindgen(js_name = aliasingPair)]
pub fn aliasing_pair_js(size: u32, stripe_periods: f64, supersample: u32) -> Result<Vec<u8>, JsError> {
    aliasing_pair(size, stripe_periods, supersample).map_err(js_err)
}

/// JSON string of [`Accounting`].
#[wasm_bindgen(js_name = accounting)]
pub fn accounting_js(widths: Vec<u32>, layers: u32) -> Result<String, JsError> {
    let widths: Vec<usize> = widths.into_iter().map(|w| w as usize).collect();
    let acc = accounting(&widths, layers as usize).map_err(js_err)?;
    serde_json::to_string(&acc).map_err(|e| JsError::new(&e.to_string()))
}
