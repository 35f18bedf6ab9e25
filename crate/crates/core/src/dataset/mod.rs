//! Views, pyramids, camera manifests and the synthetic capture stand-in.
//!
//! # Manifest format
//!
//! A dataset directory holds `manifest.json`:
//!
//! ```json
//! {
//!   "views": [
//!     {
//!       "name": "view_000",
//!       "image": "views/view_000.png",
//!       "width": 256, "height": 192,
//!       "fx": 270.0, "fy": 270.0, "cx": 128.0, "cy": 96.0,
//!       "pose": [r00, r01, r02, tx, r10, r11, r12, ty, r20, r21, r22, tz],
//!       "split": "train"
//!     }
//!   ],
//!   "scene": "scene.json"
//! }
//! ```
//!
//! `pose` is the row-major 3×4 world-from-camera matrix (camera looks down
//! +z, image +y is down). `image` is relative to the manifest. `split` is
//! optional; when every view omits it, views are assigned 18:1:1
//! train/validation/test round-robin by index. `scene` optionally names the
//! synthetic scene document the views were rendered from.

pub mod image;
pub mod oracle;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use self::image::{area_downsample, bilinear_sample, build_pyramid, ImagePyramid, RgbaImage};
pub use self::oracle::{orbit_cameras, orbit_cameras_offset, render_oracle, SyntheticScene};
use crate::error::{Error, Result};
use crate::geometry::{Camera, RigidTransform};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    #[serde(alias = "val")]
    Validation,
    Test,
}

impl Split {
    /// 18:1:1 round-robin assignment by view index.
    pub fn round_robin(index: usize) -> Self {
        match index % 20 {
            18 => Split::Validation,
            19 => Split::Test,
            _ => Split::Train,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewImage {
    pub name: String,
    pub image: RgbaImage,
    pub camera: Camera,
    pub split: Split,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub views: Vec<ViewImage>,
    pub pyramids: Vec<ImagePyramid>,
    pub scene: Option<SyntheticScene>,
}

impl Dataset {
    /// Builds pyramids with `num_levels` levels for every view.
    pub fn from_views(views: Vec<ViewImage>, num_levels: usize, scene: Option<SyntheticScene>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::invalid("dataset has no views"));
        }
        let pyramids = views
            .iter()
            .map(|v| {
                if v.image.dims() != (v.camera.width_px, v.camera.height_px) {
                    return Err(Error::Dataset(format!(
                        "view '{}': image is {}x{} but camera is {}x{}",
                        v.name,
                        v.image.width(),
                        v.image.height(),
                        v.camera.width_px,
                        v.camera.height_px
                    )));
                }
                ImagePyramid::build(&v.image, num_levels)
                    .map_err(|e| Error::Dataset(format!("view '{}': {e}", v.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            views,
            pyramids,
            scene,
        })
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.views.len())
            .filter(|&i| self.views[i].split == split)
            .collect()
    }

    pub fn num_levels(&self) -> usize {
        self.pyramids.first().map_or(0, |p| p.num_levels())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestView {
    pub name: String,
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub pose: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl ManifestView {
    pub fn camera(&self) -> Result<Camera> {
        Camera::new(
            self.width,
            self.height,
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            RigidTransform::from_row_major_3x4(&self.pose)?,
        )
        .map_err(|e| Error::Dataset(format!("view '{}': {e}", self.name)))
    }

    pub fn from_camera(name: &str, image: &str, cam: &Camera, split: Option<Split>) -> Self {
        Self {
            name: name.to_string(),
            image: image.to_string(),
            width: cam.width_px,
            height: cam.height_px,
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            pose: cam.world_from_camera.to_row_major_3x4().to_vec(),
            split,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub views: Vec<ManifestView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<String>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Split of each view: explicit tags win; with no tags at all the
    /// round-robin rule applies; mixed tagging is an error.
    pub fn splits(&self) -> Result<Vec<Split>> {
        let tagged = self.views.iter().filter(|v| v.split.is_some()).count();
        if tagged == 0 {
            return Ok((0..self.views.len()).map(Split::round_robin).collect());
        }
        if tagged != self.views.len() {
            return Err(Error::Dataset(
                "manifest tags the split of some views but not others".into(),
            ));
        }
        Ok(self.views.iter().map(|v| v.split.expect("checked")).collect())
    }
}

/// Reads a manifest and its images and precomputes the pyramids.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    load_dataset_with_levels(manifest_path, image::DEFAULT_PYRAMID_LEVELS)
}

pub fn load_dataset_with_levels(manifest_path: &Path, num_levels: usize) -> Result<Dataset> {
    let manifest = Manifest::read(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let splits = manifest.splits()?;
    let mut views = Vec::with_capacity(manifest.views.len());
    for (mv, split) in manifest.views.iter().zip(splits) {
        let camera = mv.camera()?;
        let path = root.join(&mv.image);
        let mut image = RgbaImage::load_png(&path).map_err(|e| match e {
            Error::Io { .. } => Error::Dataset(format!("view '{}': cannot read {}", mv.name, path.display())),
            other => Error::Dataset(format!("view '{}': {other}", mv.name)),
        })?;
        image.clear_transparent();
        views.push(ViewImage {
            name: mv.name.clone(),
            image,
            camera,
            split,
        });
    }
    let scene = match &manifest.scene {
        Some(rel) => {
            let p = root.join(rel);
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            Some(serde_json::from_str(&text)?)
        }
        None => None,
    };
    Dataset::from_views(views, num_levels, scene)
}

/// Layout of the synthetic views.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub views: usize,
    pub width: u32,
    pub height: u32,
    pub camera_distance: f64,
    /// Focal length as a multiple of the image height.
    pub focal_over_height: f64,
    /// Stratified samples per pixel side for the training images.
    pub supersample: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            views: 24,
            width: 256,
            height: 192,
            camera_distance: 4.0,
            focal_over_height: 1.4,
            supersample: 2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn cameras(&self, scene: &SyntheticScene) -> Result<Vec<Camera>> {
        orbit_cameras(
            scene,
            self.views,
            self.width,
            self.height,
            self.camera_distance,
            self.focal_over_height * self.height as f64,
        )
    }
}

/// Renders the synthetic dataset in memory (no PNG quantization).
pub fn synthesize(scene: &SyntheticScene, cfg: &SynthConfig, num_levels: usize) -> Result<Dataset> {
    scene.validate()?;
    let cams = cfg.cameras(scene)?;
    let render = |(i, cam): (usize, &Camera)| ViewImage {
        name: format!("view_{i:03}"),
        image: render_oracle(scene, cam, cfg.supersample, cfg.seed.wrapping_add(i as u64)),
        camera: *cam,
        split: Split::round_robin(i),
    };
    #[cfg(feature = "parallel")]
    let views: Vec<ViewImage> = {
        use rayon::prelude::*;
        cams.par_iter().enumerate().map(render).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let views: Vec<ViewImage> = cams.iter().enumerate().map(render).collect();
    Dataset::from_views(views, num_levels, Some(scene.clone()))
}

/// Writes views as PNGs plus `manifest.json` (with explicit split tags) and
/// `scene.json` when the dataset carries its scene.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let views_dir = dir.join("views");
    std::fs::create_dir_all(&views_dir).map_err(|e| Error::io(&views_dir, e))?;
    let mut entries = Vec::with_capacity(dataset.views.len());
    for v in &dataset.views {
        let rel = format!("views/{}.png", v.name);
        v.image.save_png(&dir.join(&rel))?;
        entries.push(ManifestView::from_camera(&v.name, &rel, &v.camera, Some(v.split)));
    }
    let scene = match &dataset.scene {
        Some(s) => {
            let p = dir.join("scene.json");
            std::fs::write(&p, serde_json::to_string_pretty(s)?).map_err(|e| Error::io(&p, e))?;
            Some("scene.json".to_string())
        }
        None => None,
    };
    let manifest = Manifest {
        views: entries,
        scene,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
