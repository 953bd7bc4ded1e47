//! Attribute prototypes: per-attribute similarity maps over local features,
//! spatial-max attribute prediction and the point-wise regression loss.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::backbone::FeatureMap;
use crate::error::{Error, Result};
use crate::tensor::{dot, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScorerKind {
    Dot,
    Mlp,
}

/// Scoring function between a prototype and a local feature.
#[derive(Debug, Clone, PartialEq)]
pub enum Scorer {
    /// `<p_k, f_ij>`.
    Dot,
    /// `v . tanh(U [p_k; f_ij] + b)` with `U: hidden x 2C`.
    Mlp { u: Tensor, b: Tensor, v: Tensor },
}

/// `K` learnable prototypes of dimension `Chan`, plus the scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    pub prototypes: Tensor,
    pub scorer: Scorer,
}

/// `K x H x W` similarity maps, attribute-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMaps {
    attributes: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SimilarityMaps {
    pub fn new(attributes: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != attributes * height * width || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "similarity maps {attributes}x{height}x{width} need {} values, got {}",
                attributes * height * width,
                values.len()
            )));
        }
        Ok(Self {
            attributes,
            height,
            width,
            values,
        })
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes
    }

    pub fn map(&self, k: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values[k * n..(k + 1) * n]
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.values[(k * self.height + i) * self.width + j]
    }
}

/// Predicted attributes with the spatial position each maximum came from.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributePrediction {
    pub values: Vec<f64>,
    pub argmax: Vec<(usize, usize)>,
}

impl PrototypeBank {
    pub fn new<R: Rng>(
        num_attributes: usize,
        channels: usize,
        scorer: ScorerKind,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if num_attributes == 0 || channels == 0 {
            return Err(Error::InvalidArgument("prototype bank needs K, Chan >= 1".into()));
        }
        let mut gauss = |shape: &[usize], std: f64| {
            let mut t = Tensor::zeros(shape);
            for v in t.data_mut() {
                *v = std * rng.sample::<f64, _>(StandardNormal);
            }
            t
        };
        let prototypes = gauss(&[num_attributes, channels], (1.0 / channels as f64).sqrt());
        let scorer = match scorer {
            ScorerKind::Dot => Scorer::Dot,
            ScorerKind::Mlp => {
                if hidden == 0 {
                    return Err(Error::InvalidArgument("mlp scorer needs hidden >= 1".into()));
                }
                Scorer::Mlp {
                    u: gauss(&[hidden, 2 * channels], (1.0 / (2 * channels) as f64).sqrt()),
                    b: Tensor::zeros(&[hidden]),
                    v: gauss(&[hidden], (1.0 / hidden as f64).sqrt()),
                }
            }
        };
        Ok(Self { prototypes, scorer })
    }

    pub fn num_attributes(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn channels(&self) -> usize {
        self.prototypes.cols()
    }

    fn score(&self, p: &[f64], f: &[f64]) -> f64 {
        match &self.scorer {
            Scorer::Dot => dot(p, f),
            Scorer::Mlp { u, b, v } => {
                let c = p.len();
                (0..b.len())
                    .map(|h| {
                        let row = u.row(h);
                        let pre = dot(&row[..c], p) + dot(&row[c..], f) + b.data()[h];
                        v.data()[h] * pre.tanh()
                    })
                    .sum()
            }
        }
    }

    pub fn similarity_maps(&self, map: &FeatureMap) -> Result<SimilarityMaps> {
        if map.channels() != self.channels() {
            return Err(Error::Shape(format!(
                "prototypes have {} channels, feature map has {}",
                self.channels(),
                map.channels()
            )));
        }
        let (h, w) = (map.height(), map.width());
        let mut values = Vec::with_capacity(self.num_attributes() * h * w);
        for p in self.prototypes.iter_rows() {
            for i in 0..h {
                for j in 0..w {
                    values.push(self.score(p, map.cell(i, j)));
                }
            }
        }
        SimilarityMaps::new(self.num_attributes(), h, w, values)
    }

    pub fn predict(&self, map: &FeatureMap) -> Result<AttributePrediction> {
        Ok(predict_attributes(&self.similarity_maps(map)?))
    }

    /// Routes `grad` (w.r.t. the predicted attributes) through the argmax
    /// cells into prototype/scorer gradients and the feature-map gradient.
    pub fn backward(
        &self,
        map: &FeatureMap,
        pred: &AttributePrediction,
        grad: &[f64],
        grads: &mut PrototypeBank,
        grad_map: &mut FeatureMap,
    ) {
        let c = self.channels();
        for (k, (&g, &(i, j))) in grad.iter().zip(&pred.argmax).enumerate() {
            if g == 0.0 {
                continue;
            }
            let p = self.prototypes.row(k);
            let f = map.cell(i, j);
            match (&self.scorer, &mut grads.scorer) {
                (Scorer::Dot, _) => {
                    for (d, fv) in grads.prototypes.row_mut(k).iter_mut().zip(f) {
                        *d += g * fv;
                    }
                    for (d, pv) in grad_map.cell_mut(i, j).iter_mut().zip(p) {
                        *d += g * pv;
                    }
                }
                (Scorer::Mlp { u, b, v }, Scorer::Mlp { u: gu, b: gb, v: gv }) => {
                    for h in 0..b.len() {
                        let row = u.row(h);
                        let act = (dot(&row[..c], p) + dot(&row[c..], f) + b.data()[h]).tanh();
                        gv.data_mut()[h] += g * act;
                        let dpre = g * v.data()[h] * (1.0 - act * act);
                        gb.data_mut()[h] += dpre;
                        let grow = gu.row_mut(h);
                        for ch in 0..c {
                            grow[ch] += dpre * p[ch];
                            grow[c + ch] += dpre * f[ch];
                        }
                        for (d, &r) in grads.prototypes.row_mut(k).iter_mut().zip(&row[..c]) {
                            *d += dpre * r;
                        }
                        for (d, &r) in grad_map.cell_mut(i, j).iter_mut().zip(&row[c..]) {
                            *d += dpre * r;
                        }
                    }
                }
                _ => unreachable!("scorer and gradient variants disagree"),
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            prototypes: self.prototypes.zeros_like(),
            scorer: match &self.scorer {
                Scorer::Dot => Scorer::Dot,
                Scorer::Mlp { u, b, v } => Scorer::Mlp {
                    u: u.zeros_like(),
                    b: b.zeros_like(),
                    v: v.zeros_like(),
                },
            },
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = vec![("prototypes", &self.prototypes)];
        if let Scorer::Mlp { u, b, v } = &self.scorer {
            out.extend([("scorer.u", u), ("scorer.b", b), ("scorer.v", v)]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut out = vec![("prototypes", &mut self.prototypes)];
        if let Scorer::Mlp { u, b, v } = &mut self.scorer {
            out.extend([("scorer.u", u), ("scorer.b", b), ("scorer.v", v)]);
        }
        out
    }
}

/// `a_k = max_ij M^k_ij`; ties go to the first cell in row-major order.
pub fn predict_attributes(maps: &SimilarityMaps) -> AttributePrediction {
    let mut values = Vec::with_capacity(maps.attributes);
    let mut argmax = Vec::with_capacity(maps.attributes);
    for k in 0..maps.attributes {
        let (mut best, mut at) = (f64::NEG_INFINITY, 0);
        for (idx, &v) in maps.map(k).iter().enumerate() {
            if v > best {
                best = v;
                at = idx;
            }
        }
        values.push(best);
        argmax.push((at / maps.width, at % maps.width));
    }
    AttributePrediction { values, argmax }
}

/// Mean over samples of `||a_i - a_hat_i||^2`.
pub fn pointwise_loss(a_true: &Tensor, a_pred: &Tensor) -> Result<f64> {
    Ok(pointwise_loss_grad(a_true, a_pred)?.0)
}

/// Loss value and its gradient w.r.t. `a_pred`.
pub fn pointwise_loss_grad(a_true: &Tensor, a_pred: &Tensor) -> Result<(f64, Tensor)> {
    if a_true.shape() != a_pred.shape() {
        return Err(Error::Shape(format!(
            "true attributes {:?} vs predicted {:?}",
            a_true.shape(),
            a_pred.shape()
        )));
    }
    let n = a_true.rows();
    if n == 0 {
        return Ok((0.0, a_pred.zeros_like()));
    }
    let mut grad = a_pred.zeros_like();
    let mut loss = 0.0;
    for ((t, p), g) in a_true.data().iter().zip(a_pred.data()).zip(grad.data_mut()) {
        let diff = p - t;
        loss += diff * diff;
        *g = 2.0 * diff / n as f64;
    }
    Ok((loss / n as f64, grad))
}
