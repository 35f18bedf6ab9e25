//! The progressive width-sliced MLP.
//!
//! One parameter store holds the full-width network. Level of detail `k`
//! evaluates it with only the first `lod_widths[k]` neurons of every hidden
//! layer: the input layer keeps its top `w` rows (all input columns), each
//! hidden layer its top-left `w × w` block, and the output layer its first
//! `w` columns (all output rows). Biases are sliced to their first `w`
//! entries; the output bias is always used whole.

use half::f16;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm_nt, MatRef, Scalar};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    /// Input layer + hidden layers + output layer.
    pub num_weight_layers: usize,
    pub lod_widths: Vec<usize>,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            input_dim: 24,
            output_dim: 4,
            num_weight_layers: 10,
            lod_widths: vec![128, 256, 384, 512],
        }
    }
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::invalid("input_dim and output_dim must be at least 1"));
        }
        if self.num_weight_layers < 3 {
            return Err(Error::invalid("num_weight_layers must be at least 3"));
        }
        if self.lod_widths.is_empty() || self.lod_widths[0] == 0 {
            return Err(Error::invalid("lod_widths must be non-empty and positive"));
        }
        if self.lod_widths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("lod_widths must be strictly increasing"));
        }
        Ok(())
    }

    pub fn num_lods(&self) -> usize {
        self.lod_widths.len()
    }

    pub fn top(&self) -> LodIndex {
        LodIndex(self.num_lods())
    }

    pub fn full_width(&self) -> usize {
        *self.lod_widths.last().expect("validated arch")
    }

    pub fn width(&self, lod: LodIndex) -> usize {
        self.lod_widths[lod.0 - 1]
    }

    pub fn num_hidden_layers(&self) -> usize {
        self.num_weight_layers - 2
    }

    pub fn lod(&self, k: usize) -> Result<LodIndex> {
        LodIndex::new(k, self)
    }

    /// Active `(rows, cols)` of weight layer `layer` when hidden width is `w`.
    pub fn layer_shape(&self, layer: usize, w: usize) -> (usize, usize) {
        if layer == 0 {
            (w, self.input_dim)
        } else if layer + 1 == self.num_weight_layers {
            (self.output_dim, w)
        } else {
            (w, w)
        }
    }

    /// Parameters read by a forward pass at `lod` (weights and biases).
    pub fn param_count(&self, lod: LodIndex) -> usize {
        let w = self.width(lod);
        (0..self.num_weight_layers)
            .map(|l| {
                let (r, c) = self.layer_shape(l, w);
                r * c + r
            })
            .sum()
    }

    /// Multiply-accumulates per ray at `lod` (one per active weight).
    pub fn macs_per_ray(&self, lod: LodIndex) -> u64 {
        let w = self.width(lod);
        (0..self.num_weight_layers)
            .map(|l| {
                let (r, c) = self.layer_shape(l, w);
                (r * c) as u64
            })
            .sum()
    }

    pub fn hidden_macs_per_ray(&self, lod: LodIndex) -> u64 {
        let w = self.width(lod) as u64;
        self.num_hidden_layers() as u64 * w * w
    }
}

/// Level of detail, 1-based: 1 is the coarsest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LodIndex(usize);

impl LodIndex {
    pub fn new(k: usize, arch: &ArchSpec) -> Result<Self> {
        if k == 0 || k > arch.num_lods() {
            return Err(Error::invalid(format!(
                "level of detail {k} outside 1..={}",
                arch.num_lods()
            )));
        }
        Ok(Self(k))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut T {
        &mut self.data[r * self.cols + c]
    }

    /// Top-left `rows × cols` region.
    pub fn region(&self, rows: usize, cols: usize) -> MatRef<'_, T> {
        assert!(rows <= self.rows && cols <= self.cols);
        MatRef::new(&self.data, rows, cols, self.cols)
    }

    pub fn top_left(&self, rows: usize, cols: usize) -> Self {
        let region = self.region(rows, cols);
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            data.extend_from_slice(region.row(r));
        }
        Self { rows, cols, data }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            weight: Matrix::zeros(rows, cols),
            bias: vec![T::zero(); rows],
        }
    }
}

/// Storage precision of the weights used for rendering.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    Full,
    /// Weights rounded to IEEE half; arithmetic stays in the store's type.
    Half,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProgressiveMlp<T = f32> {
    arch: ArchSpec,
    layers: Vec<Layer<T>>,
    precision: Precision,
}

/// Per-layer inputs and the output logits of a batched forward pass, kept
/// for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    pub lod: LodIndex,
    pub batch: usize,
    /// `inputs[l]` is the (post-activation) input of weight layer `l`,
    /// `batch × cols(l)`; empty when the pass did not keep activations.
    pub inputs: Vec<Vec<T>>,
    /// Pre-sigmoid outputs, `batch × output_dim`.
    pub logits: Vec<T>,
    /// Sigmoid outputs, `batch × output_dim`.
    pub outputs: Vec<T>,
}

#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

impl ProgressiveMlp<f32> {
    /// Uniform `(-a, a)` weights with `a = sqrt(6 / fan_in)` using the
    /// full-width fan-in of each layer; zero biases.
    pub fn init(arch: ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let full = arch.full_width();
        let layers = (0..arch.num_weight_layers)
            .map(|l| {
                let (rows, cols) = arch.layer_shape(l, full);
                let bound = (6.0 / cols as f64).sqrt() as f32;
                let mut layer = Layer::zeros(rows, cols);
                for v in &mut layer.weight.data {
                    *v = rng.gen_range(-bound..bound);
                }
                layer
            })
            .collect();
        Ok(Self {
            arch,
            layers,
            precision: Precision::Full,
        })
    }

    /// Copy with every parameter rounded to half precision.
    pub fn to_half_precision(&self) -> Self {
        let round = |v: &f32| f16::from_f32(*v).to_f32();
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                weight: Matrix {
                    rows: l.weight.rows,
                    cols: l.weight.cols,
                    data: l.weight.data.iter().map(round).collect(),
                },
                bias: l.bias.iter().map(round).collect(),
            })
            .collect();
        Self {
            arch: self.arch.clone(),
            layers,
            precision: Precision::Half,
        }
    }
}

impl<T: Scalar> ProgressiveMlp<T> {
    /// All-zero network (outputs sigmoid(0) = 0.5 everywhere).
    pub fn zeros(arch: ArchSpec) -> Result<Self> {
        arch.validate()?;
        let full = arch.full_width();
        let layers = (0..arch.num_weight_layers)
            .map(|l| {
                let (r, c) = arch.layer_shape(l, full);
                Layer::zeros(r, c)
            })
            .collect();
        Ok(Self {
            arch,
            layers,
            precision: Precision::Full,
        })
    }

    /// Builds a network from explicit full-width layers.
    pub fn from_layers(arch: ArchSpec, layers: Vec<Layer<T>>) -> Result<Self> {
        arch.validate()?;
        if layers.len() != arch.num_weight_layers {
            return Err(Error::invalid(format!(
                "expected {} layers, got {}",
                arch.num_weight_layers,
                layers.len()
            )));
        }
        let full = arch.full_width();
        for (l, layer) in layers.iter().enumerate() {
            let (r, c) = arch.layer_shape(l, full);
            if layer.weight.rows != r
                || layer.weight.cols != c
                || layer.weight.data.len() != r * c
                || layer.bias.len() != r
            {
                return Err(Error::invalid(format!(
                    "layer {l} must be {r}x{c} with {r} biases"
                )));
            }
        }
        Ok(Self {
            arch,
            layers,
            precision: Precision::Full,
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.data.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> ProgressiveMlp<U> {
        let conv = |v: &T| U::from_f64_lossy(v.as_f64());
        ProgressiveMlp {
            arch: self.arch.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Matrix {
                        rows: l.weight.rows,
                        cols: l.weight.cols,
                        data: l.weight.data.iter().map(conv).collect(),
                    },
                    bias: l.bias.iter().map(conv).collect(),
                })
                .collect(),
            precision: self.precision,
        }
    }

    pub fn lod(&self, k: usize) -> Result<LodIndex> {
        LodIndex::new(k, &self.arch)
    }

    fn check_lod(&self, lod: LodIndex) -> Result<()> {
        LodIndex::new(lod.0, &self.arch).map(|_| ())
    }

    /// Evaluates one feature vector; outputs lie in (0, 1).
    pub fn forward(&self, features: &[T], lod: LodIndex) -> Result<Vec<T>> {
        self.forward_batch(features, 1, lod)
    }

    /// Row-wise [`forward`](Self::forward) over `n` feature rows.
    pub fn forward_batch(&self, features: &[T], n: usize, lod: LodIndex) -> Result<Vec<T>> {
        Ok(self.run(features, n, lod, false)?.outputs)
    }

    /// Forward pass that retains every layer input.
    pub fn forward_cached(&self, features: &[T], n: usize, lod: LodIndex) -> Result<ForwardCache<T>> {
        self.run(features, n, lod, true)
    }

    fn run(&self, features: &[T], n: usize, lod: LodIndex, keep: bool) -> Result<ForwardCache<T>> {
        self.check_lod(lod)?;
        if features.len() != n * self.arch.input_dim {
            return Err(Error::invalid(format!(
                "expected {n} x {} features, got {} values",
                self.arch.input_dim,
                features.len()
            )));
        }
        let w = self.arch.width(lod);
        let last = self.arch.num_weight_layers - 1;
        let mut inputs = Vec::with_capacity(self.arch.num_weight_layers);
        let mut current = features.to_vec();
        let mut logits = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let (rows, cols) = self.arch.layer_shape(l, w);
            let mut out = vec![T::zero(); n * rows];
            gemm_nt(
                MatRef::dense(&current, n, cols),
                layer.weight.region(rows, cols),
                &mut out,
            );
            let bias = &layer.bias[..rows];
            for row in out.chunks_mut(rows) {
                for (o, b) in row.iter_mut().zip(bias) {
                    *o = *o + *b;
                }
            }
            if l == last {
                logits = out;
                if keep {
                    inputs.push(current);
                }
                break;
            }
            for o in &mut out {
                if *o < T::zero() {
                    *o = T::zero();
                }
            }
            let prev = std::mem::replace(&mut current, out);
            if keep {
                inputs.push(prev);
            }
        }
        let outputs = logits.iter().map(|z| sigmoid(*z)).collect();
        Ok(ForwardCache {
            lod,
            batch: n,
            inputs,
            logits,
            outputs,
        })
    }

    /// Standalone network holding exactly the parameters of the `lod` slice.
    pub fn slice_lod(&self, lod: LodIndex) -> Result<Self> {
        self.check_lod(lod)?;
        let w = self.arch.width(lod);
        let arch = ArchSpec {
            lod_widths: self.arch.lod_widths[..lod.0].to_vec(),
            ..self.arch.clone()
        };
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let (r, c) = self.arch.layer_shape(l, w);
                Layer {
                    weight: layer.weight.top_left(r, c),
                    bias: layer.bias[..r].to_vec(),
                }
            })
            .collect();
        Ok(Self {
            arch,
            layers,
            precision: self.precision,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_arch() -> ArchSpec {
        ArchSpec {
            input_dim: 2,
            output_dim: 1,
            num_weight_layers: 3,
            lod_widths: vec![2, 3, 4],
        }
    }

    #[test]
    fn param_counts_match_capture_table() {
        let a = ArchSpec::default();
        let counts: Vec<usize> = (1..=4).map(|k| a.param_count(a.lod(k).unwrap())).collect();
        assert_eq!(counts, vec![135_812, 533_764, 1_193_860, 2_116_100]);
        for (k, w) in [128usize, 256, 384, 512].into_iter().enumerate() {
            assert_eq!(counts[k], 8 * w * w + 37 * w + 4);
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_bias_and_bounded_weights() {
        let a = ArchSpec::default();
        let n1 = ProgressiveMlp::init(a.clone(), 7).unwrap();
        let n2 = ProgressiveMlp::init(a.clone(), 7).unwrap();
        assert_eq!(n1, n2);
        assert_ne!(n1, ProgressiveMlp::init(a.clone(), 8).unwrap());
        assert!(n1.layers().iter().all(|l| l.bias.iter().all(|b| *b == 0.0)));
        let bound = (6.0f32 / 24.0).sqrt();
        assert!(n1.layers()[0].weight.data.iter().all(|v| v.abs() < bound));
        assert_eq!(n1.num_params(), a.param_count(a.top()));
    }

    #[test]
    fn zero_network_outputs_one_half() {
        let net = ProgressiveMlp::<f32>::zeros(ArchSpec::default()).unwrap();
        let x = vec![0.3f32; 24];
        for k in 1..=4 {
            assert_eq!(net.forward(&x, net.lod(k).unwrap()).unwrap(), vec![0.5; 4]);
        }
    }

    #[test]
    fn top_lod_equals_plain_mlp() {
        let net = ProgressiveMlp::init(toy_arch(), 3).unwrap().cast::<f64>();
        let x = [0.7, -0.2];
        let mut h = x.to_vec();
        for (l, layer) in net.layers().iter().enumerate() {
            let mut next = layer.bias.clone();
            for (r, o) in next.iter_mut().enumerate() {
                for (c, v) in h.iter().enumerate() {
                    *o += layer.weight.at(r, c) * v;
                }
            }
            if l < 2 {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = next;
        }
        let want = sigmoid(h[0]);
        let got = net.forward(&x, net.arch().top()).unwrap()[0];
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn lowest_lod_matches_hand_built_submatrix_net() {
        let net = ProgressiveMlp::init(toy_arch(), 11).unwrap().cast::<f64>();
        let l = net.layers();
        let x = [0.25, -0.5];
        // 2-wide network assembled by hand from the top-left blocks
        let h1: Vec<f64> = (0..2)
            .map(|r| (l[0].weight.at(r, 0) * x[0] + l[0].weight.at(r, 1) * x[1] + l[0].bias[r]).max(0.0))
            .collect();
        let h2: Vec<f64> = (0..2)
            .map(|r| (l[1].weight.at(r, 0) * h1[0] + l[1].weight.at(r, 1) * h1[1] + l[1].bias[r]).max(0.0))
            .collect();
        let z = l[2].weight.at(0, 0) * h2[0] + l[2].weight.at(0, 1) * h2[1] + l[2].bias[0];
        let got = net.forward(&x, net.lod(1).unwrap()).unwrap()[0];
        assert!((got - sigmoid(z)).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let net = ProgressiveMlp::init(toy_arch(), 0).unwrap();
        assert!(net.forward(&[1.0, 2.0, 3.0], net.arch().top()).is_err());
        assert!(net.lod(0).is_err());
        assert!(net.lod(3).is_ok());
        assert!(net.lod(4).is_err());
    }

    #[test]
    fn batch_rows_match_single_forward_and_permute() {
        let net = ProgressiveMlp::init(toy_arch(), 5).unwrap();
        let xs = [0.1f32, 0.2, -0.3, 0.4, 0.9, -0.8];
        for k in 1..=3 {
            let lod = net.lod(k).unwrap();
            let batch = net.forward_batch(&xs, 3, lod).unwrap();
            for i in 0..3 {
                assert_eq!(batch[i], net.forward(&xs[i * 2..i * 2 + 2], lod).unwrap()[0]);
            }
            let swapped = [xs[4], xs[5], xs[0], xs[1], xs[2], xs[3]];
            let out = net.forward_batch(&swapped, 3, lod).unwrap();
            assert_eq!(out, vec![batch[2], batch[0], batch[1]]);
        }
    }

    #[test]
    fn slices_nest_and_count_their_parameters() {
        let net = ProgressiveMlp::init(toy_arch(), 9).unwrap();
        let top = net.slice_lod(net.arch().top()).unwrap();
        assert_eq!(top, net);
        let s2 = net.slice_lod(net.lod(2).unwrap()).unwrap();
        let s21 = s2.slice_lod(s2.lod(1).unwrap()).unwrap();
        assert_eq!(s21, net.slice_lod(net.lod(1).unwrap()).unwrap());
        for k in 1..=3 {
            let lod = net.lod(k).unwrap();
            assert_eq!(net.slice_lod(lod).unwrap().num_params(), net.arch().param_count(lod));
        }
    }

    #[test]
    fn hidden_mac_ratio_is_one_sixteenth() {
        let a = ArchSpec::default();
        let lo = a.hidden_macs_per_ray(a.lod(1).unwrap());
        let hi = a.hidden_macs_per_ray(a.top());
        assert_eq!(lo * 16, hi);
        let macs: Vec<u64> = (1..=4).map(|k| a.macs_per_ray(a.lod(k).unwrap())).collect();
        assert!(macs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn half_precision_rounds_weights() {
        let net = ProgressiveMlp::init(toy_arch(), 1).unwrap();
        let h = net.to_half_precision();
        assert_eq!(h.precision(), Precision::Half);
        for (a, b) in net.layers()[1].weight.data.iter().zip(&h.layers()[1].weight.data) {
            assert!((a - b).abs() <= a.abs() * 1e-3 + 1e-7);
            assert_eq!(f16::from_f32(*b).to_f32(), *b);
        }
    }
}
