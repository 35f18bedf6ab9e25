#![allow(dead_code)]

use plfn::dataset::RgbaImage;
use plfn::pronet::{ArchSpec, ProgressiveMlp};
use plfn::train::{combined_loss_and_grads, RayBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

/// Three-level net small enough for exhaustive finite differences.
pub fn tiny_arch() -> ArchSpec {
    ArchSpec {
        input_dim: 3,
        output_dim: 4,
        num_weight_layers: 4,
        lod_widths: vec![2, 4, 6],
    }
}

pub fn random_batch(arch: &ArchSpec, n: usize, seed: u64) -> RayBatch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = (0..n * arch.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let targets = (0..arch.num_lods())
        .map(|_| (0..n * arch.output_dim).map(|_| rng.gen::<f64>()).collect())
        .collect();
    RayBatch {
        len: n,
        features,
        targets,
        foreground: vec![true; n],
    }
}

/// Random weights and random non-zero biases, so no pre-activation sits
/// exactly on a ReLU kink.
pub fn generic_net(arch: &ArchSpec, seed: u64) -> ProgressiveMlp<f64> {
    let mut net = ProgressiveMlp::init(arch.clone(), seed).unwrap().cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for layer in net.layers_mut() {
        for b in &mut layer.bias {
            *b = rng.gen_range(-0.5..0.5);
        }
    }
    net
}

/// Largest relative error between the analytic combined-loss gradient and
/// central differences with step `h`, over every parameter.
pub fn max_gradient_error(net: &ProgressiveMlp<f64>, batch: &RayBatch<f64>, k: usize, h: f64) -> f64 {
    let lod = net.lod(k).unwrap();
    let (_, grads) = combined_loss_and_grads(net, batch, lod).unwrap();
    let analytic = grads.flat();
    let loss_at = |net: &ProgressiveMlp<f64>| combined_loss_and_grads(net, batch, lod).unwrap().0;
    let mut worst: f64 = 0.0;
    let mut idx = 0;
    for l in 0..net.layers().len() {
        let (nw, nb) = (net.layers()[l].weight.data.len(), net.layers()[l].bias.len());
        for i in 0..nw + nb {
            let mut plus = net.clone();
            let mut minus = net.clone();
            {
                let p = &mut plus.layers_mut()[l];
                if i < nw { p.weight.data[i] += h } else { p.bias[i - nw] += h }
                let m = &mut minus.layers_mut()[l];
                if i < nw { m.weight.data[i] -= h } else { m.bias[i - nw] -= h }
            }
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let a = analytic[idx];
            let scale = a.abs().max(numeric.abs());
            if scale > 1e-10 {
                worst = worst.max((a - numeric).abs() / scale);
            }
            idx += 1;
        }
    }
    worst
}

#[derive(Deserialize)]
pub struct SsimPair {
    pub width: u32,
    pub height: u32,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub ssim: f64,
}

#[derive(Deserialize)]
struct SsimFixture {
    pairs: Vec<SsimPair>,
}

pub fn ssim_reference_pairs() -> Vec<(RgbaImage, RgbaImage, f64)> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/ssim_reference.json");
    let text = std::fs::read_to_string(path).expect("fixture present");
    let fx: SsimFixture = serde_json::from_str(&text).unwrap();
    fx.pairs
        .into_iter()
        .map(|p| {
            (
                RgbaImage::from_raw(p.width, p.height, p.a).unwrap(),
                RgbaImage::from_raw(p.width, p.height, p.b).unwrap(),
                p.ssim,
            )
        })
        .collect()
}
