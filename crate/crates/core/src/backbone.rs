//! Local feature extraction and global average pooling.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `height x width x channels` grid of local features, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape("feature map dimensions must be >= 1".into()));
        }
        if values.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} map needs {} values, got {}",
                height * width * channels,
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn from_f32(height: usize, width: usize, channels: usize, values: &[f32]) -> Result<Self> {
        Self::new(height, width, channels, values.iter().map(|&v| v as f64).collect())
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            values: vec![0.0; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Feature vector at spatial position `(i, j)`.
    pub fn cell(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.width + j) * self.channels;
        &self.values[start..start + self.channels]
    }

    pub fn cell_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let start = (i * self.width + j) * self.channels;
        &mut self.values[start..start + self.channels]
    }

    fn at(&self, i: usize, j: usize, c: usize) -> f64 {
        self.values[(i * self.width + j) * self.channels + c]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFeature {
    pub values: Vec<f64>,
}

/// Average of the feature vectors over all spatial positions.
pub fn global_pool(map: &FeatureMap) -> GlobalFeature {
    let mut values = vec![0.0; map.channels];
    let scale = 1.0 / map.cells() as f64;
    for cell in map.values.chunks(map.channels) {
        for (g, v) in values.iter_mut().zip(cell) {
            *g += v * scale;
        }
    }
    GlobalFeature { values }
}

/// Gradient of [`global_pool`]: spreads `grad` evenly over every cell.
pub fn global_pool_backward(grad: &[f64], height: usize, width: usize, into: &mut FeatureMap) {
    let scale = 1.0 / (height * width) as f64;
    for cell in into.values.chunks_mut(grad.len()) {
        for (d, g) in cell.iter_mut().zip(grad) {
            *d += g * scale;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackboneKind {
    Identity,
    Conv,
}

/// Same-padded square convolution, weights laid out `[out, in, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    pub fn new<R: Rng>(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut R) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let std = (1.0 / fan_in).sqrt();
        let mut weight = Tensor::zeros(&[out_channels, in_channels, kernel, kernel]);
        for w in weight.data_mut() {
            *w = std * rng.sample::<f64, _>(StandardNormal);
        }
        Self {
            weight,
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    fn forward(&self, x: &FeatureMap) -> FeatureMap {
        let (oc, ic, k) = (self.out_channels(), self.in_channels(), self.kernel());
        let pad = (k / 2) as isize;
        let w = self.weight.data();
        let mut out = FeatureMap::zeros(x.height, x.width, oc);
        for i in 0..x.height {
            for j in 0..x.width {
                let cell = out.cell_mut(i, j);
                cell.copy_from_slice(self.bias.data());
                for ky in 0..k {
                    let yi = i as isize + ky as isize - pad;
                    if yi < 0 || yi >= x.height as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let xj = j as isize + kx as isize - pad;
                        if xj < 0 || xj >= x.width as isize {
                            continue;
                        }
                        let src = x.cell(yi as usize, xj as usize);
                        for (o, acc) in cell.iter_mut().enumerate() {
                            let base = o * ic * k * k + ky * k + kx;
                            for (c, s) in src.iter().enumerate() {
                                *acc += w[base + c * k * k] * s;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    fn backward(&self, x: &FeatureMap, grad_out: &FeatureMap, grads: &mut ConvLayer) -> FeatureMap {
        let (ic, k) = (self.in_channels(), self.kernel());
        let pad = (k / 2) as isize;
        let w = self.weight.data();
        let mut grad_in = FeatureMap::zeros(x.height, x.width, ic);
        for i in 0..x.height {
            for j in 0..x.width {
                let go = grad_out.cell(i, j);
                for (b, g) in grads.bias.data_mut().iter_mut().zip(go) {
                    *b += g;
                }
                for ky in 0..k {
                    let yi = i as isize + ky as isize - pad;
                    if yi < 0 || yi >= x.height as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let xj = j as isize + kx as isize - pad;
                        if xj < 0 || xj >= x.width as isize {
                            continue;
                        }
                        let (yi, xj) = (yi as usize, xj as usize);
                        for (o, &g) in go.iter().enumerate() {
                            if g == 0.0 {
                                continue;
                            }
                            let base = o * ic * k * k + ky * k + kx;
                            for c in 0..ic {
                                grads.weight.data_mut()[base + c * k * k] += g * x.at(yi, xj, c);
                                grad_in.cell_mut(yi, xj)[c] += g * w[base + c * k * k];
                            }
                        }
                    }
                }
            }
        }
        grad_in
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: self.weight.zeros_like(),
            bias: self.bias.zeros_like(),
        }
    }
}

/// Two convolutions with a `tanh` between them.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStack {
    pub first: ConvLayer,
    pub second: ConvLayer,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub enum BackboneCache {
    Identity,
    Conv { input: FeatureMap, hidden: FeatureMap },
}

/// Maps a stored sample to the local features the prototypes and heads consume.
#[derive(Debug, Clone, PartialEq)]
pub enum Backbone {
    /// Consumes precomputed feature maps unchanged.
    Identity { channels: usize },
    Conv(ConvStack),
}

impl Backbone {
    pub fn identity(channels: usize) -> Self {
        Backbone::Identity { channels }
    }

    pub fn conv<R: Rng>(
        in_channels: usize,
        hidden: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) || in_channels == 0 || hidden == 0 || out_channels == 0 {
            return Err(Error::InvalidArgument(
                "conv backbone needs an odd kernel and non-zero channels".into(),
            ));
        }
        Ok(Backbone::Conv(ConvStack {
            first: ConvLayer::new(in_channels, hidden, kernel, rng),
            second: ConvLayer::new(hidden, out_channels, kernel, rng),
        }))
    }

    pub fn kind(&self) -> BackboneKind {
        match self {
            Backbone::Identity { .. } => BackboneKind::Identity,
            Backbone::Conv(_) => BackboneKind::Conv,
        }
    }

    pub fn input_channels(&self) -> usize {
        match self {
            Backbone::Identity { channels } => *channels,
            Backbone::Conv(s) => s.first.in_channels(),
        }
    }

    pub fn output_channels(&self) -> usize {
        match self {
            Backbone::Identity { channels } => *channels,
            Backbone::Conv(s) => s.second.out_channels(),
        }
    }

    pub fn extract(&self, sample: &FeatureMap) -> Result<FeatureMap> {
        Ok(self.extract_cached(sample)?.0)
    }

    pub fn extract_cached(&self, sample: &FeatureMap) -> Result<(FeatureMap, BackboneCache)> {
        if sample.channels != self.input_channels() {
            return Err(Error::Shape(format!(
                "backbone expects {} input channels, sample has {}",
                self.input_channels(),
                sample.channels
            )));
        }
        match self {
            Backbone::Identity { .. } => Ok((sample.clone(), BackboneCache::Identity)),
            Backbone::Conv(stack) => {
                let mut hidden = stack.first.forward(sample);
                hidden.values.iter_mut().for_each(|v| *v = v.tanh());
                let out = stack.second.forward(&hidden);
                Ok((
                    out,
                    BackboneCache::Conv {
                        input: sample.clone(),
                        hidden,
                    },
                ))
            }
        }
    }

    /// Backpropagates `grad_out` (gradient w.r.t. the extracted map) into `grads`.
    pub fn backward(&self, cache: &BackboneCache, grad_out: &FeatureMap, grads: &mut Backbone) {
        match (self, cache, grads) {
            (Backbone::Identity { .. }, _, _) => {}
            (Backbone::Conv(stack), BackboneCache::Conv { input, hidden }, Backbone::Conv(g)) => {
                let mut grad_hidden = stack.second.backward(hidden, grad_out, &mut g.second);
                for (d, h) in grad_hidden.values.iter_mut().zip(&hidden.values) {
                    *d *= 1.0 - h * h;
                }
                stack.first.backward(input, &grad_hidden, &mut g.first);
            }
            _ => unreachable!("backbone, cache and gradient variants disagree"),
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Backbone::Identity { channels } => Backbone::Identity { channels: *channels },
            Backbone::Conv(s) => Backbone::Conv(ConvStack {
                first: s.first.zeros_like(),
                second: s.second.zeros_like(),
            }),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Backbone::Identity { .. } => vec![],
            Backbone::Conv(s) => vec![
                ("backbone.conv1.weight", &s.first.weight),
                ("backbone.conv1.bias", &s.first.bias),
                ("backbone.conv2.weight", &s.second.weight),
                ("backbone.conv2.bias", &s.second.bias),
            ],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            Backbone::Identity { .. } => vec![],
            Backbone::Conv(s) => vec![
                ("backbone.conv1.weight", &mut s.first.weight),
                ("backbone.conv1.bias", &mut s.first.bias),
                ("backbone.conv2.weight", &mut s.second.weight),
                ("backbone.conv2.bias", &mut s.second.bias),
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn map(h: usize, w: usize, c: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        FeatureMap::new(h, w, c, v).unwrap()
    }

    #[test]
    fn identity_returns_input() {
        let m = map(2, 2, 3, 1);
        let before = m.clone();
        let out = Backbone::identity(3).extract(&m).unwrap();
        assert_eq!(out, m);
        assert_eq!(m, before);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        assert!(Backbone::identity(4).extract(&map(2, 2, 3, 1)).is_err());
    }

    #[test]
    fn conv_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bb = Backbone::conv(1, 4, 2, 3, &mut rng).unwrap();
        let x = map(4, 4, 1, 2);
        assert_eq!(bb.extract(&x).unwrap(), bb.extract(&x).unwrap());
        let out = bb.extract(&x).unwrap();
        assert_eq!((out.height(), out.width(), out.channels()), (4, 4, 2));
    }

    #[test]
    fn conv_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut bb = Backbone::conv(1, 3, 2, 3, &mut rng).unwrap();
        for (_, t) in bb.tensors_mut() {
            for v in t.data_mut() {
                *v = rng.random_range(-0.8..0.8);
            }
        }
        let x = map(4, 4, 1, 5);
        let probe = map(4, 4, 2, 6);
        let objective = |bb: &Backbone| -> f64 {
            let out = bb.extract(&x).unwrap();
            out.values().iter().zip(probe.values()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = bb.extract_cached(&x).unwrap();
        let mut grads = bb.zeros_like();
        bb.backward(&cache, &probe, &mut grads);

        let h = 1e-6;
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|(_, t)| t.data().to_vec()).collect();
        for (ti, analytic) in analytic.iter().enumerate() {
            for (vi, &a) in analytic.iter().enumerate() {
                let mut plus = bb.clone();
                plus.tensors_mut()[ti].1.data_mut()[vi] += h;
                let mut minus = bb.clone();
                minus.tensors_mut()[ti].1.data_mut()[vi] -= h;
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                assert!(rel < 1e-4, "tensor {ti} entry {vi}: analytic {a} numeric {numeric}");
            }
        }
    }

    #[test]
    fn pooling_examples() {
        let constant = FeatureMap::new(2, 3, 2, vec![0.75; 12]).unwrap();
        assert_eq!(global_pool(&constant).values, vec![0.75, 0.75]);
        let m = FeatureMap::new(2, 1, 1, vec![1.0, 3.0]).unwrap();
        assert_eq!(global_pool(&m).values, vec![2.0]);
    }

    #[test]
    fn pooling_commutes_with_channel_permutation() {
        let m = map(3, 2, 3, 4);
        let perm = [2, 0, 1];
        let mut permuted = m.clone();
        for i in 0..3 {
            for j in 0..2 {
                let src = m.cell(i, j).to_vec();
                for (dst, &p) in permuted.cell_mut(i, j).iter_mut().zip(&perm) {
                    *dst = src[p];
                }
            }
        }
        let g = global_pool(&m).values;
        let gp = global_pool(&permuted).values;
        for (c, &p) in perm.iter().enumerate() {
            assert_eq!(gp[c], g[p]);
        }
    }

    #[test]
    fn pooling_is_linear() {
        let a = map(2, 2, 2, 7);
        let b = map(2, 2, 2, 8);
        let (alpha, beta) = (0.3, -1.7);
        let combo = FeatureMap::new(
            2,
            2,
            2,
            a.values().iter().zip(b.values()).map(|(x, y)| alpha * x + beta * y).collect(),
        )
        .unwrap();
        let lhs = global_pool(&combo).values;
        let (ga, gb) = (global_pool(&a).values, global_pool(&b).values);
        for c in 0..2 {
            assert!((lhs[c] - (alpha * ga[c] + beta * gb[c])).abs() < 1e-12);
        }
    }
}
