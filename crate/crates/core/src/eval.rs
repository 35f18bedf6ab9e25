//! Scoring trained networks against ground truth at each scale.

use serde::{Deserialize, Serialize};

use crate::dataset::oracle::render_oracle;
use crate::dataset::{Dataset, RgbaImage, Split, SyntheticScene};
use crate::error::{Error, Result};
use crate::geometry::{scale_intrinsics, Camera, EncodingConfig, ScaleDivisor};
use crate::metrics::{crop_from_mask, psnr, ssim, EvalReport, ViewScore, DEFAULT_CROP_PADDING};
use crate::pronet::{LodIndex, ProgressiveMlp};
use crate::renderer::render_at_lod;

/// Ground truth a rendering is compared against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference {
    /// Box-filtered level of the view's image pyramid.
    #[default]
    Pyramid,
    /// Analytic render of the dataset's synthetic scene with
    /// `supersample²` samples per pixel at the target scale.
    Oracle { supersample: u32 },
}

/// Pyramid level whose resolution is the full resolution over `divisor`.
fn pyramid_level_for(dataset: &Dataset, divisor: ScaleDivisor) -> Result<usize> {
    let steps = divisor.get().trailing_zeros() as usize;
    let levels = dataset.num_levels();
    if steps >= levels {
        return Err(Error::invalid(format!(
            "dataset pyramid has no level at 1/{}",
            divisor.get()
        )));
    }
    Ok(levels - steps)
}

pub fn reference_image(dataset: &Dataset, view: usize, divisor: ScaleDivisor, reference: Reference) -> Result<RgbaImage> {
    match reference {
        Reference::Pyramid => {
            let c = pyramid_level_for(dataset, divisor)?;
            Ok(dataset.pyramids[view].level(c).clone())
        }
        Reference::Oracle { supersample } => {
            let scene = dataset
                .scene
                .as_ref()
                .ok_or_else(|| Error::invalid("oracle reference needs a synthetic dataset"))?;
            let cam = scale_intrinsics(&dataset.views[view].camera, divisor)?;
            Ok(render_oracle(scene, &cam, supersample, 0x0AC1E ^ view as u64))
        }
    }
}

/// Scores `net` at `lod` rendered at 1/`divisor` scale on every view of
/// `split`. The crop comes from the reference's alpha.
pub fn score_views(
    net: &ProgressiveMlp<f32>,
    encoding: &EncodingConfig,
    dataset: &Dataset,
    split: Split,
    lod: LodIndex,
    divisor: ScaleDivisor,
    reference: Reference,
) -> Result<Vec<ViewScore>> {
    let mut out = Vec::new();
    for i in dataset.indices(split) {
        let view = &dataset.views[i];
        let cam = scale_intrinsics(&view.camera, divisor)?;
        let img = render_at_lod(net, &cam, lod, encoding)?;
        let gt = reference_image(dataset, i, divisor, reference)?;
        let crop = crop_from_mask(&gt, DEFAULT_CROP_PADDING)?;
        out.push(ViewScore {
            view: view.name.clone(),
            lod: lod.get(),
            scale_divisor: divisor.get(),
            psnr: psnr(&img, &gt, Some(crop))?,
            ssim: ssim(&img, &gt, Some(crop))?,
        });
    }
    Ok(out)
}

/// Every level rendered at its own scale (level `k` at 1/2^(top−k)).
pub fn evaluate(
    net: &ProgressiveMlp<f32>,
    encoding: &EncodingConfig,
    dataset: &Dataset,
    split: Split,
    reference: Reference,
) -> Result<EvalReport> {
    let levels = net.arch().num_lods();
    if dataset.indices(split).is_empty() {
        return Err(Error::invalid(format!("split {split:?} has no views")));
    }
    let mut scores = Vec::new();
    for k in 1..=levels {
        let divisor = ScaleDivisor::new(1 << (levels - k))?;
        scores.extend(score_views(net, encoding, dataset, split, net.lod(k)?, divisor, reference)?);
    }
    Ok(EvalReport::from_scores(split.as_str(), scores))
}

/// Scores `net` at `lod` against oracle renders of `scene` from arbitrary
/// cameras, each rendered at 1/`divisor` scale.
pub fn score_oracle_cameras(
    net: &ProgressiveMlp<f32>,
    encoding: &EncodingConfig,
    scene: &SyntheticScene,
    cams: &[Camera],
    lod: LodIndex,
    divisor: ScaleDivisor,
    supersample: u32,
) -> Result<Vec<ViewScore>> {
    let mut out = Vec::with_capacity(cams.len());
    for (i, cam) in cams.iter().enumerate() {
        let cam = scale_intrinsics(cam, divisor)?;
        let img = render_at_lod(net, &cam, lod, encoding)?;
        let gt = render_oracle(scene, &cam, supersample, 0x0AC1E ^ i as u64);
        let crop = crop_from_mask(&gt, DEFAULT_CROP_PADDING)?;
        out.push(ViewScore {
            view: format!("novel_{i:03}"),
            lod: lod.get(),
            scale_divisor: divisor.get(),
            psnr: psnr(&img, &gt, Some(crop))?,
            ssim: ssim(&img, &gt, Some(crop))?,
        });
    }
    Ok(out)
}

pub fn mean_psnr(scores: &[ViewScore]) -> f64 {
    scores.iter().map(|s| s.psnr.min(100.0)).sum::<f64>() / scores.len() as f64
}
