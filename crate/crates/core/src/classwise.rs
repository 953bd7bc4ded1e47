//! Attribute-compatibility classification over the seen classes.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, log_sum_exp, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClasswiseMode {
    /// Cross-entropy over all seen classes.
    Softmax,
    /// Single-term ratio `exp(g W a_i) / exp(g W a_hat_i)`, i.e. `g W (a_hat_i - a_i)`.
    Literal,
}

/// Linear map `W: Chan x K` from pooled features into attribute space.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityHead {
    pub projection: Tensor,
}

impl CompatibilityHead {
    pub fn new<R: Rng>(channels: usize, attributes: usize, rng: &mut R) -> Self {
        let std = (1.0 / channels as f64).sqrt();
        let mut projection = Tensor::zeros(&[channels, attributes]);
        for v in projection.data_mut() {
            *v = std * rng.sample::<f64, _>(StandardNormal);
        }
        Self { projection }
    }

    pub fn channels(&self) -> usize {
        self.projection.rows()
    }

    pub fn attributes(&self) -> usize {
        self.projection.cols()
    }

    /// `W^T g`, the feature mapped into attribute space.
    pub fn embed(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.channels() {
            return Err(Error::Shape(format!(
                "compatibility head expects {} channels, got {}",
                self.channels(),
                g.len()
            )));
        }
        let mut v = vec![0.0; self.attributes()];
        for (row, &gc) in self.projection.iter_rows().zip(g) {
            for (vk, w) in v.iter_mut().zip(row) {
                *vk += gc * w;
            }
        }
        Ok(v)
    }

    /// `logit_c = g^T W a_c` for every row of `class_attributes`.
    pub fn class_logits(&self, g: &[f64], class_attributes: &Tensor) -> Result<Vec<f64>> {
        if class_attributes.cols() != self.attributes() {
            return Err(Error::Shape(format!(
                "class attributes have {} columns, head projects to {}",
                class_attributes.cols(),
                self.attributes()
            )));
        }
        let v = self.embed(g)?;
        Ok(class_attributes.iter_rows().map(|a| dot(&v, a)).collect())
    }

    /// Backpropagates `grad_embed` (w.r.t. `W^T g`) into `grads` and returns the gradient w.r.t. `g`.
    pub fn backward_embed(&self, g: &[f64], grad_embed: &[f64], grads: &mut CompatibilityHead) -> Vec<f64> {
        let mut grad_g = vec![0.0; self.channels()];
        for (c, (&gc, dg)) in g.iter().zip(grad_g.iter_mut()).enumerate() {
            let row = self.projection.row(c);
            *dg = dot(row, grad_embed);
            for (w, &e) in grads.projection.row_mut(c).iter_mut().zip(grad_embed) {
                *w += gc * e;
            }
        }
        grad_g
    }

    /// Backpropagates logit gradients; returns the gradient w.r.t. `g`.
    pub fn backward_logits(
        &self,
        g: &[f64],
        class_attributes: &Tensor,
        grad_logits: &[f64],
        grads: &mut CompatibilityHead,
    ) -> Vec<f64> {
        let mut grad_embed = vec![0.0; self.attributes()];
        for (a, &gl) in class_attributes.iter_rows().zip(grad_logits) {
            for (e, av) in grad_embed.iter_mut().zip(a) {
                *e += gl * av;
            }
        }
        self.backward_embed(g, &grad_embed, grads)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            projection: self.projection.zeros_like(),
        }
    }
}

pub fn classwise_loss(logits: &[Vec<f64>], targets: &[usize]) -> Result<f64> {
    Ok(classwise_loss_grad(logits, targets)?.0)
}

/// Mean softmax cross-entropy and its gradient w.r.t. each sample's logits.
/// `targets` index into each logit vector.
pub fn classwise_loss_grad(logits: &[Vec<f64>], targets: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} logit vectors for {} targets",
            logits.len(),
            targets.len()
        )));
    }
    if logits.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = logits.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (z, &t) in logits.iter().zip(targets) {
        if t >= z.len() {
            return Err(Error::InvalidArgument(format!(
                "target {t} outside the {} seen classes",
                z.len()
            )));
        }
        let lse = log_sum_exp(z.iter().copied());
        total += lse - z[t];
        let mut g: Vec<f64> = z.iter().map(|v| (v - lse).exp() / n).collect();
        g[t] -= 1.0 / n;
        grads.push(g);
    }
    Ok((total / n, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_head(n: usize) -> CompatibilityHead {
        let mut projection = Tensor::zeros(&[n, n]);
        for i in 0..n {
            projection.row_mut(i)[i] = 1.0;
        }
        CompatibilityHead { projection }
    }

    #[test]
    fn logits_examples() {
        let head = identity_head(2);
        let attrs = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(head.class_logits(&[2.0, 0.0], &attrs).unwrap(), vec![2.0, 0.0]);
        assert_eq!(head.class_logits(&[0.0, 0.0], &attrs).unwrap(), vec![0.0, 0.0]);

        let attrs = Tensor::from_rows(&[vec![0.3, 0.4], vec![0.9, 0.1]]).unwrap();
        let logits = head.class_logits(&[0.3, 0.4], &attrs).unwrap();
        assert!((logits[0] - 0.25).abs() < 1e-15);
        assert!(head.class_logits(&[0.3, 0.4, 0.1], &attrs).is_err());
    }

    #[test]
    fn loss_examples() {
        assert_eq!(classwise_loss(&[vec![3.7]], &[0]).unwrap(), 0.0);
        let l = classwise_loss(&[vec![2.0, 0.0]], &[0]).unwrap();
        assert!((l - -(2f64.exp() / (2f64.exp() + 1.0)).ln()).abs() < 1e-12);
        assert!((l - 0.12693).abs() < 1e-5);
        let shifted = classwise_loss(&[vec![7.0, 5.0]], &[0]).unwrap();
        assert!((l - shifted).abs() < 1e-12);
        let equal = classwise_loss(&[vec![0.4; 5]], &[3]).unwrap();
        assert!((equal - 5f64.ln()).abs() < 1e-12);
        assert!(classwise_loss(&[vec![0.0, 1.0]], &[2]).is_err());
    }

    #[test]
    fn attribute_scale_preserves_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = CompatibilityHead::new(4, 3, &mut rng);
        let attrs = Tensor::from_vec(&[5, 3], (0..15).map(|_| rng.random::<f64>()).collect()).unwrap();
        let mut scaled = attrs.clone();
        scaled.data_mut().iter_mut().for_each(|v| *v *= 3.0);
        for _ in 0..10 {
            let g: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let argmax = |z: Vec<f64>| {
                z.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0
            };
            assert_eq!(
                argmax(head.class_logits(&g, &attrs).unwrap()),
                argmax(head.class_logits(&g, &scaled).unwrap())
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences_three_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = CompatibilityHead::new(4, 3, &mut rng);
        let attrs = Tensor::from_vec(&[3, 3], (0..9).map(|_| rng.random::<f64>()).collect()).unwrap();
        let feats: Vec<Vec<f64>> = (0..2).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let targets = [2usize, 0];
        let loss = |head: &CompatibilityHead, feats: &[Vec<f64>]| {
            let logits: Vec<Vec<f64>> = feats.iter().map(|g| head.class_logits(g, &attrs).unwrap()).collect();
            classwise_loss(&logits, &targets).unwrap()
        };
        let logits: Vec<Vec<f64>> = feats.iter().map(|g| head.class_logits(g, &attrs).unwrap()).collect();
        let (_, gl) = classwise_loss_grad(&logits, &targets).unwrap();
        let mut grads = head.zeros_like();
        let grad_feats: Vec<Vec<f64>> = feats
            .iter()
            .zip(&gl)
            .map(|(g, gl)| head.backward_logits(g, &attrs, gl, &mut grads))
            .collect();
        let h = 1e-6;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        for vi in 0..head.projection.len() {
            let mut p = head.clone();
            p.projection.data_mut()[vi] += h;
            let mut m = head.clone();
            m.projection.data_mut()[vi] -= h;
            let n = (loss(&p, &feats) - loss(&m, &feats)) / (2.0 * h);
            assert!(rel(grads.projection.data()[vi], n) < 1e-4);
        }
        for s in 0..2 {
            for c in 0..4 {
                let mut p = feats.clone();
                p[s][c] += h;
                let mut m = feats.clone();
                m[s][c] -= h;
                let n = (loss(&head, &p) - loss(&head, &m)) / (2.0 * h);
                assert!(rel(grad_feats[s][c], n) < 1e-4);
            }
        }
    }
}
