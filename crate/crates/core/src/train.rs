//! Training: reverse-mode gradients through the sliced network, the
//! combined two-level loss, Adam, foreground/background ray sampling and the
//! epoch schedule (combined, single-scale and coarse-to-fine modes), plus
//! the auxiliary occupancy classifier.

use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{bilinear_sample, Dataset, Split};
use crate::error::{Error, Result};
use crate::geometry::{encode_ray_into, EncodingConfig};
use crate::linalg::{gemm_nt, transpose, MatRef, Scalar};
use crate::metrics::{crop_from_mask, psnr, DEFAULT_CROP_PADDING};
use crate::pronet::{ArchSpec, ForwardCache, Layer, LodIndex, ProgressiveMlp};
use crate::renderer::render_at_lod;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Top level plus one random lower level per step.
    #[default]
    Combined,
    /// Levels trained lowest-first, each frozen when its phase ends.
    CoarseToFine,
    /// Top level only.
    SingleScale,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "combined" => Ok(TrainMode::Combined),
            "coarse_to_fine" | "coarse-to-fine" => Ok(TrainMode::CoarseToFine),
            "single_scale" | "single-scale" => Ok(TrainMode::SingleScale),
            other => Err(Error::invalid(format!("unknown training mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub foreground_fraction: f64,
    pub background_fraction: f64,
    pub epochs: usize,
    pub images_per_batch_group: usize,
    /// Share of a group's foreground pixels visited per epoch; sets the
    /// number of steps per group.
    pub foreground_ray_coverage: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub mode: TrainMode,
    pub encoding: EncodingConfig,
    /// Validate every this many epochs (0: only after the last epoch).
    pub validate_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8192,
            foreground_fraction: 0.67,
            background_fraction: 0.33,
            epochs: 100,
            images_per_batch_group: 2,
            foreground_ray_coverage: 0.5,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            mode: TrainMode::Combined,
            encoding: EncodingConfig::default(),
            validate_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if ((self.foreground_fraction + self.background_fraction) - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "foreground_fraction + background_fraction must equal 1",
            ));
        }
        if !(0.0..=1.0).contains(&self.foreground_fraction) {
            return Err(Error::invalid("foreground_fraction must lie in [0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.images_per_batch_group == 0 {
            return Err(Error::invalid("images_per_batch_group must be at least 1"));
        }
        if !(self.foreground_ray_coverage > 0.0) {
            return Err(Error::invalid("foreground_ray_coverage must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn foreground_rows(&self) -> usize {
        (self.foreground_fraction * self.batch_size as f64).round() as usize
    }
}

/// Encoded rays with their per-level targets.
#[derive(Clone, Debug, PartialEq)]
pub struct RayBatch<T> {
    pub len: usize,
    /// `len × input_dim`
    pub features: Vec<T>,
    /// `targets[c - 1]` holds level `c`, `len × output_dim`.
    pub targets: Vec<Vec<T>>,
    pub foreground: Vec<bool>,
}

impl<T: Scalar> RayBatch<T> {
    pub fn cast<U: Scalar>(&self) -> RayBatch<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect();
        RayBatch {
            len: self.len,
            features: conv(&self.features),
            targets: self.targets.iter().map(conv).collect(),
            foreground: self.foreground.clone(),
        }
    }
}

/// Gradient store shaped like the full parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &ProgressiveMlp<T>) -> Self {
        Self {
            layers: net
                .layers()
                .iter()
                .map(|l| Layer::zeros(l.weight.rows, l.weight.cols))
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.data.iter().chain(&l.bias).copied())
            .collect()
    }
}

/// Accumulates the gradient of a scalar loss into `grads`, given the loss
/// gradient with respect to the output logits (`batch × output_dim`).
pub fn backward<T: Scalar>(
    net: &ProgressiveMlp<T>,
    cache: &ForwardCache<T>,
    d_logits: &[T],
    grads: &mut Gradients<T>,
) {
    let arch = net.arch();
    let n = cache.batch;
    let w = arch.width(cache.lod);
    assert_eq!(cache.inputs.len(), arch.num_weight_layers, "cache lacks activations");
    assert_eq!(d_logits.len(), n * arch.output_dim);
    let mut dz = d_logits.to_vec();
    for l in (0..arch.num_weight_layers).rev() {
        let (rows, cols) = arch.layer_shape(l, w);
        let x = &cache.inputs[l];
        let dz_t = transpose(MatRef::dense(&dz, n, rows));
        let x_t = transpose(MatRef::dense(x, n, cols));
        let mut dw = vec![T::zero(); rows * cols];
        gemm_nt(MatRef::dense(&dz_t, rows, n), MatRef::dense(&x_t, cols, n), &mut dw);
        let g = &mut grads.layers[l];
        let full_cols = g.weight.cols;
        for r in 0..rows {
            let dst = &mut g.weight.data[r * full_cols..r * full_cols + cols];
            for (d, s) in dst.iter_mut().zip(&dw[r * cols..(r + 1) * cols]) {
                *d = *d + *s;
            }
            let bsum = dz_t[r * n..(r + 1) * n].iter().fold(T::zero(), |a, b| a + *b);
            g.bias[r] = g.bias[r] + bsum;
        }
        if l == 0 {
            break;
        }
        let w_t = transpose(net.layers()[l].weight.region(rows, cols));
        let mut dx = vec![T::zero(); n * cols];
        gemm_nt(MatRef::dense(&dz, n, rows), MatRef::dense(&w_t, cols, rows), &mut dx);
        for (d, a) in dx.iter_mut().zip(x) {
            if *a <= T::zero() {
                *d = T::zero();
            }
        }
        dz = dx;
    }
}

/// `(1/b) Σ_i Σ_terms ‖f_lod(r_i) − y_i^lod‖²` and its gradient.
pub fn loss_and_grads<T: Scalar>(
    net: &ProgressiveMlp<T>,
    batch: &RayBatch<T>,
    terms: &[LodIndex],
) -> Result<(T, Gradients<T>)> {
    let mut grads = Gradients::zeros_like(net);
    let loss = accumulate_mse(net, batch, terms, &mut grads)?;
    Ok((loss, grads))
}

fn accumulate_mse<T: Scalar>(
    net: &ProgressiveMlp<T>,
    batch: &RayBatch<T>,
    terms: &[LodIndex],
    grads: &mut Gradients<T>,
) -> Result<T> {
    let b = batch.len;
    if b == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let inv_b = T::one() / T::from_f64_lossy(b as f64);
    let two = T::from_f64_lossy(2.0);
    let mut loss = T::zero();
    for &lod in terms {
        let target = batch
            .targets
            .get(lod.get() - 1)
            .ok_or_else(|| Error::invalid(format!("batch has no targets for level {}", lod.get())))?;
        let cache = net.forward_cached(&batch.features, b, lod)?;
        if target.len() != cache.outputs.len() {
            return Err(Error::invalid("target shape does not match network output"));
        }
        let mut d_logits = Vec::with_capacity(target.len());
        for (p, y) in cache.outputs.iter().zip(target) {
            let r = *p - *y;
            loss = loss + r * r * inv_b;
            d_logits.push(two * r * inv_b * *p * (T::one() - *p));
        }
        backward(net, &cache, &d_logits, grads);
    }
    Ok(loss)
}

/// Combined loss over the top level and lower level `k`.
pub fn combined_loss_and_grads<T: Scalar>(
    net: &ProgressiveMlp<T>,
    batch: &RayBatch<T>,
    k: LodIndex,
) -> Result<(T, Gradients<T>)> {
    let top = net.arch().top();
    if k >= top {
        return Err(Error::invalid(format!(
            "combined loss needs a lower level than the top ({}), got {}",
            top.get(),
            k.get()
        )));
    }
    loss_and_grads(net, batch, &[top, k])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Layer<T>>,
    pub v: Vec<Layer<T>>,
    /// Steps taken so far.
    pub steps: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(net: &ProgressiveMlp<T>) -> Self {
        let z = Gradients::zeros_like(net).layers;
        Self {
            m: z.clone(),
            v: z,
            steps: 0,
        }
    }
}

/// Is parameter `(row, col)` of `layer` (or bias `row` when `col` is None)
/// inside the slice of hidden width `w`?
fn in_slice(arch: &ArchSpec, layer: usize, row: usize, col: Option<usize>, w: usize) -> bool {
    let last = layer + 1 == arch.num_weight_layers;
    let row_in = last || row < w;
    let col_in = match col {
        None => true,
        Some(c) => layer == 0 || c < w,
    };
    row_in && col_in
}

/// One bias-corrected Adam update. Parameters inside the slice of width
/// `frozen_width` (if any) and their moments are left untouched.
pub fn adam_step<T: Scalar>(
    net: &mut ProgressiveMlp<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    params: &AdamParams,
    frozen_width: Option<usize>,
) -> Result<()> {
    if grads.layers.len() != net.layers().len()
        || state.m.len() != net.layers().len()
        || grads
            .layers
            .iter()
            .zip(net.layers())
            .any(|(g, p)| g.weight.data.len() != p.weight.data.len() || g.bias.len() != p.bias.len())
    {
        return Err(Error::invalid("gradient shape does not match parameters"));
    }
    state.steps += 1;
    let t = state.steps as i32;
    let b1 = T::from_f64_lossy(params.beta1);
    let b2 = T::from_f64_lossy(params.beta2);
    let one = T::one();
    let c1 = one - T::from_f64_lossy(params.beta1.powi(t));
    let c2 = one - T::from_f64_lossy(params.beta2.powi(t));
    let lr = T::from_f64_lossy(params.learning_rate);
    let eps = T::from_f64_lossy(params.epsilon);
    let arch = net.arch().clone();
    let update = |p: &mut T, g: T, m: &mut T, v: &mut T| {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let mh = *m / c1;
        let vh = *v / c2;
        *p = *p - lr * mh / (vh.sqrt() + eps);
    };
    for (l, layer) in net.layers_mut().iter_mut().enumerate() {
        let g = &grads.layers[l];
        let (m, v) = (&mut state.m[l], &mut state.v[l]);
        let cols = layer.weight.cols;
        for i in 0..layer.weight.data.len() {
            if let Some(fw) = frozen_width {
                if in_slice(&arch, l, i / cols, Some(i % cols), fw) {
                    continue;
                }
            }
            update(
                &mut layer.weight.data[i],
                g.weight.data[i],
                &mut m.weight.data[i],
                &mut v.weight.data[i],
            );
        }
        for i in 0..layer.bias.len() {
            if let Some(fw) = frozen_width {
                if in_slice(&arch, l, i, None, fw) {
                    continue;
                }
            }
            update(&mut layer.bias[i], g.bias[i], &mut m.bias[i], &mut v.bias[i]);
        }
    }
    Ok(())
}

/// Draws training rays from groups of views: a fixed share from the
/// foreground (alpha > 0 at full resolution), the rest from the background.
pub struct RaySampler<'a> {
    dataset: &'a Dataset,
    encoding: EncodingConfig,
    foreground: Vec<Vec<u32>>,
    background: Vec<Vec<u32>>,
}

impl<'a> RaySampler<'a> {
    pub fn new(dataset: &'a Dataset, encoding: EncodingConfig) -> Self {
        let mut foreground = Vec::with_capacity(dataset.views.len());
        let mut background = Vec::with_capacity(dataset.views.len());
        for v in &dataset.views {
            let (mut fg, mut bg) = (Vec::new(), Vec::new());
            for (i, hit) in v.image.alpha_mask().into_iter().enumerate() {
                if hit {
                    fg.push(i as u32);
                } else {
                    bg.push(i as u32);
                }
            }
            foreground.push(fg);
            background.push(bg);
        }
        Self {
            dataset,
            encoding,
            foreground,
            background,
        }
    }

    pub fn foreground_count(&self, group: &[usize]) -> usize {
        group.iter().map(|&v| self.foreground[v].len()).sum()
    }

    fn pick(pools: &[&[u32]], rng: &mut ChaCha8Rng) -> Option<(usize, u32)> {
        let total: usize = pools.iter().map(|p| p.len()).sum();
        if total == 0 {
            return None;
        }
        let mut i = rng.gen_range(0..total);
        for (slot, p) in pools.iter().enumerate() {
            if i < p.len() {
                return Some((slot, p[i]));
            }
            i -= p.len();
        }
        unreachable!()
    }

    /// `round(fg_fraction · b)` foreground rows followed by background rows.
    pub fn sample(&self, group: &[usize], batch_size: usize, fg_fraction: f64, rng: &mut ChaCha8Rng) -> Result<RayBatch<f32>> {
        if group.is_empty() {
            return Err(Error::invalid("empty view group"));
        }
        let fg_pools: Vec<&[u32]> = group.iter().map(|&v| self.foreground[v].as_slice()).collect();
        let bg_pools: Vec<&[u32]> = group.iter().map(|&v| self.background[v].as_slice()).collect();
        let mut n_fg = (fg_fraction * batch_size as f64).round() as usize;
        let fg_total: usize = fg_pools.iter().map(|p| p.len()).sum();
        let bg_total: usize = bg_pools.iter().map(|p| p.len()).sum();
        if fg_total == 0 && n_fg > 0 {
            warn!("view group {group:?} has no foreground pixels; sampling background only");
            n_fg = 0;
        }
        if bg_total == 0 {
            n_fg = batch_size;
        }
        let levels = self.dataset.num_levels();
        let in_dim = self.encoding.dim();
        let mut batch = RayBatch {
            len: batch_size,
            features: vec![0.0f32; batch_size * in_dim],
            targets: vec![Vec::with_capacity(batch_size * 4); levels],
            foreground: Vec::with_capacity(batch_size),
        };
        for row in 0..batch_size {
            let is_fg = row < n_fg;
            let pools = if is_fg { &fg_pools } else { &bg_pools };
            let (slot, pix) = Self::pick(pools, rng).expect("non-empty pool");
            let view_idx = group[slot];
            self.write_row(&mut batch, row, view_idx, pix)?;
            batch.foreground.push(is_fg);
        }
        Ok(batch)
    }

    fn write_row(&self, batch: &mut RayBatch<f32>, row: usize, view_idx: usize, pix: u32) -> Result<()> {
        let view = &self.dataset.views[view_idx];
        let pyr = &self.dataset.pyramids[view_idx];
        let w = view.camera.width_px;
        let (u, v) = (pix % w, pix / w);
        let (x, y) = (u as f64 + 0.5, v as f64 + 0.5);
        let in_dim = self.encoding.dim();
        let ray = view.camera.ray_through(x, y);
        encode_ray_into(&ray, &self.encoding, &mut batch.features[row * in_dim..(row + 1) * in_dim]);
        let levels = pyr.num_levels();
        for c in 1..=levels {
            let rgba = if c == levels {
                view.image.get(u, v)
            } else {
                let s = (1u32 << (levels - c)) as f64;
                bilinear_sample(pyr.level(c), x / s, y / s)?
            };
            batch.targets[c - 1].extend(rgba.iter().map(|v| *v as f32));
        }
        Ok(())
    }
}

/// One batch from `group` following `cfg`'s fractions.
pub fn sample_batch(dataset: &Dataset, group: &[usize], rng: &mut ChaCha8Rng, cfg: &TrainConfig) -> Result<RayBatch<f32>> {
    RaySampler::new(dataset, cfg.encoding).sample(group, cfg.batch_size, cfg.foreground_fraction, rng)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimization steps taken so far.
    pub step: u64,
    /// Level being trained (coarse-to-fine) or the top level.
    pub phase_lod: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    /// Validation PSNR per level (dB), when validated this epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_psnr: Option<Vec<f64>>,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: ProgressiveMlp<f32>,
    pub log: Vec<EpochRecord>,
}

/// Mean PSNR per level over the validation views, each level rendered at
/// its own pyramid scale against the box-filtered ground truth.
pub fn validation_psnr(net: &ProgressiveMlp<f32>, dataset: &Dataset, split: Split, encoding: &EncodingConfig) -> Result<Vec<f64>> {
    let idx = dataset.indices(split);
    let levels = net.arch().num_lods();
    let mut out = vec![0.0; levels];
    if idx.is_empty() {
        return Ok(vec![f64::NAN; levels]);
    }
    for &i in &idx {
        let view = &dataset.views[i];
        let pyr = &dataset.pyramids[i];
        for c in 1..=levels {
            let lod = net.lod(c)?;
            let divisor = 1u32 << (levels - c);
            let cam = crate::geometry::scale_intrinsics(&view.camera, crate::geometry::ScaleDivisor::new(divisor)?)?;
            let img = render_at_lod(net, &cam, lod, encoding)?;
            let gt = pyr.level(c);
            let crop = crop_from_mask(gt, DEFAULT_CROP_PADDING).ok();
            out[c - 1] += psnr(&img, gt, crop)?.min(100.0);
        }
    }
    Ok(out.into_iter().map(|v| v / idx.len() as f64).collect())
}

fn check_dataset(dataset: &Dataset, arch: &ArchSpec, encoding: &EncodingConfig) -> Result<Vec<usize>> {
    let train_idx = dataset.indices(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::invalid("dataset has no training views"));
    }
    if dataset.num_levels() != arch.num_lods() {
        return Err(Error::invalid(format!(
            "dataset pyramids have {} levels but the network has {}",
            dataset.num_levels(),
            arch.num_lods()
        )));
    }
    if arch.input_dim != encoding.dim() {
        return Err(Error::invalid(format!(
            "network input_dim {} does not match encoding dim {}",
            arch.input_dim,
            encoding.dim()
        )));
    }
    Ok(train_idx)
}

/// Trains a progressive network from scratch.
pub fn train(dataset: &Dataset, arch: &ArchSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_callback(dataset, arch, cfg, |_| {})
}

/// As [`train`], invoking `on_epoch` after each epoch.
pub fn train_with_callback(
    dataset: &Dataset,
    arch: &ArchSpec,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    arch.validate()?;
    if arch.output_dim != 4 {
        return Err(Error::invalid("light field networks output RGBA (output_dim 4)"));
    }
    let train_idx = check_dataset(dataset, arch, &cfg.encoding)?;
    let mut net = ProgressiveMlp::init(arch.clone(), cfg.seed)?;
    let mut adam = AdamState::new(&net);
    let params = cfg.adam();
    let sampler = RaySampler::new(dataset, cfg.encoding);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_1f0e_u64);
    let top = arch.top();
    let levels = arch.num_lods();

    // (level trained, frozen width, epochs) per phase
    let phases: Vec<(LodIndex, Option<usize>, usize)> = match cfg.mode {
        TrainMode::Combined | TrainMode::SingleScale => vec![(top, None, cfg.epochs)],
        TrainMode::CoarseToFine => {
            let per = (cfg.epochs / levels).max(1);
            (1..=levels)
                .map(|c| {
                    let frozen = (c > 1).then(|| arch.lod_widths[c - 2]);
                    (LodIndex::new(c, arch).expect("in range"), frozen, per)
                })
                .collect()
        }
    };
    let total_epochs: usize = phases.iter().map(|p| p.2).sum();
    let mut log = Vec::with_capacity(total_epochs);
    let mut epoch = 0;
    for (phase_lod, frozen, epochs) in phases {
        for _ in 0..epochs {
            epoch += 1;
            let started = Instant::now();
            let mut order = train_idx.clone();
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            let mut steps = 0usize;
            for group in order.chunks(cfg.images_per_batch_group) {
                let fg = sampler.foreground_count(group) as f64;
                let per_step = cfg.foreground_rows().max(1) as f64;
                let group_steps = ((cfg.foreground_ray_coverage * fg) / per_step).ceil().max(1.0) as usize;
                for _ in 0..group_steps {
                    let batch = sampler.sample(group, cfg.batch_size, cfg.foreground_fraction, &mut rng)?;
                    let (loss, grads) = match cfg.mode {
                        TrainMode::Combined if levels > 1 => {
                            let k = LodIndex::new(rng.gen_range(1..levels), arch)?;
                            combined_loss_and_grads(&net, &batch, k)?
                        }
                        TrainMode::Combined | TrainMode::SingleScale => loss_and_grads(&net, &batch, &[top])?,
                        TrainMode::CoarseToFine => loss_and_grads(&net, &batch, &[phase_lod])?,
                    };
                    adam_step(&mut net, &grads, &mut adam, &params, frozen)?;
                    loss_sum += loss as f64;
                    steps += 1;
                }
            }
            if !net.is_finite() {
                return Err(Error::invalid(format!("training diverged at epoch {epoch}")));
            }
            let validate = epoch == total_epochs
                || (cfg.validate_every > 0 && epoch % cfg.validate_every == 0);
            let val_psnr = if validate && !dataset.indices(Split::Validation).is_empty() {
                Some(validation_psnr(&net, dataset, Split::Validation, &cfg.encoding)?)
            } else {
                None
            };
            let record = EpochRecord {
                epoch,
                step: adam.steps,
                phase_lod: phase_lod.get(),
                loss: loss_sum / steps.max(1) as f64,
                val_psnr,
                seconds: started.elapsed().as_secs_f64(),
            };
            info!(
                "epoch {} step {} loss {:.6} ({:.1}s)",
                record.epoch, record.step, record.loss, record.seconds
            );
            on_epoch(&record);
            log.push(record);
        }
    }
    Ok(TrainOutcome { net, log })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OccupancyConfig {
    pub hidden_width: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub encoding: EncodingConfig,
}

impl Default for OccupancyConfig {
    fn default() -> Self {
        Self {
            hidden_width: 16,
            steps: 1500,
            batch_size: 1024,
            learning_rate: 5e-3,
            seed: 0,
            encoding: EncodingConfig::default(),
        }
    }
}

impl OccupancyConfig {
    pub fn arch(&self) -> ArchSpec {
        ArchSpec {
            input_dim: self.encoding.dim(),
            output_dim: 1,
            num_weight_layers: 3,
            lod_widths: vec![self.hidden_width],
        }
    }
}

/// Binary cross-entropy with logits and its gradient.
pub fn occupancy_loss_and_grads<T: Scalar>(net: &ProgressiveMlp<T>, features: &[T], labels: &[bool]) -> Result<(T, Gradients<T>)> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let cache = net.forward_cached(features, n, net.arch().top())?;
    let inv = T::one() / T::from_f64_lossy(n as f64);
    let mut loss = T::zero();
    let mut d = Vec::with_capacity(n);
    for ((z, p), y) in cache.logits.iter().zip(&cache.outputs).zip(labels) {
        let yv = if *y { T::one() } else { T::zero() };
        // log(1 + e^z) - y z, stable for either sign of z
        let softplus = z.max(T::zero()) + (-(z.abs())).exp().ln_1p();
        loss = loss + (softplus - yv * *z) * inv;
        d.push((*p - yv) * inv);
    }
    let mut grads = Gradients::zeros_like(net);
    backward(net, &cache, &d, &mut grads);
    Ok((loss, grads))
}

/// Trains the ray occupancy classifier on the training views (labels:
/// alpha > 0). Batches draw half foreground, half background rays.
pub fn train_occupancy(dataset: &Dataset, cfg: &OccupancyConfig) -> Result<ProgressiveMlp<f32>> {
    let train_idx = dataset.indices(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::invalid("dataset has no training views"));
    }
    if cfg.steps == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("occupancy steps and batch_size must be positive"));
    }
    let mut net = ProgressiveMlp::init(cfg.arch(), cfg.seed)?;
    let mut adam = AdamState::new(&net);
    let params = AdamParams {
        learning_rate: cfg.learning_rate,
        ..AdamParams::default()
    };
    let sampler = RaySampler::new(dataset, cfg.encoding);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0cc_u64);
    for step in 0..cfg.steps {
        let start = rng.gen_range(0..train_idx.len());
        let group = [train_idx[start], train_idx[(start + 1) % train_idx.len()]];
        let batch = sampler.sample(&group, cfg.batch_size, 0.5, &mut rng)?;
        let (loss, grads) = occupancy_loss_and_grads(&net, &batch.features, &batch.foreground)?;
        adam_step(&mut net, &grads, &mut adam, &params, None)?;
        if step % 500 == 0 {
            info!("occupancy step {step} loss {loss:.5}");
        }
    }
    Ok(net)
}
