//! The full network: backbone, attribute prototypes, compatibility head and
//! hash head, with a joint forward/backward pass over a mini-batch.

use std::collections::BTreeSet;

use rand_chacha::ChaCha8Rng;

use crate::backbone::{global_pool, global_pool_backward, Backbone, BackboneKind, FeatureMap};
use crate::classwise::{classwise_loss_grad, ClasswiseMode, CompatibilityHead};
use crate::config::TrainConfig;
use crate::contrast::{pairwise_loss, pairwise_loss_grad, PairSets};
use crate::error::{Error, Result};
use crate::hashing::{hypersphere_loss_grad, total_loss, HashCode, HashHead, HashInput, HashMode, HashOutput, MarginConfig};
use crate::prototypes::{pointwise_loss_grad, PrototypeBank};
use crate::tensor::{dot, Tensor};

fn seen_rows(class_attributes: &Tensor, seen: &BTreeSet<usize>) -> Result<(Vec<usize>, Tensor)> {
    let seen_classes: Vec<usize> = seen.iter().copied().collect();
    if let Some(&c) = seen_classes.iter().find(|&&c| c >= class_attributes.rows()) {
        return Err(Error::InvalidArgument(format!("seen class {c} has no attribute row")));
    }
    let rows: Vec<&[f64]> = seen_classes.iter().map(|&c| class_attributes.row(c)).collect();
    if rows.is_empty() {
        return Ok((seen_classes, Tensor::zeros(&[0, class_attributes.cols()])));
    }
    Ok((seen_classes, Tensor::from_rows(&rows)?))
}

/// Component losses of one evaluation; ablated components are exactly 0.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub pointwise: f64,
    pub pairwise: f64,
    pub classwise: f64,
    pub hash: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn components(&self) -> [f64; 4] {
        [self.pointwise, self.pairwise, self.classwise, self.hash]
    }

    /// First non-finite component, if any.
    pub fn non_finite(&self) -> Option<&'static str> {
        [
            ("pointwise", self.pointwise),
            ("pairwise", self.pairwise),
            ("classwise", self.classwise),
            ("hash", self.hash),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Training inputs for one forward/backward pass.
#[derive(Debug, Clone)]
pub struct Batch {
    pub samples: Vec<FeatureMap>,
    /// Index of each sample's class among the model's seen classes.
    pub targets: Vec<usize>,
    /// Ground-truth attribute rows, one per sample.
    pub attributes: Tensor,
    /// Pair sets numbered by position in this batch.
    pub pairs: PairSets,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub backbone: Backbone,
    pub prototypes: PrototypeBank,
    pub compat: CompatibilityHead,
    pub hash: HashHead,
    pub margin: MarginConfig,
    seen_classes: Vec<usize>,
    seen_attributes: Tensor,
    input_shape: (usize, usize, usize),
}

impl Model {
    /// Initializes every learnable tensor from `rng`.
    pub fn new(
        config: &TrainConfig,
        input_shape: (usize, usize, usize),
        class_attributes: &Tensor,
        seen: &BTreeSet<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let (seen_classes, seen_attributes) = seen_rows(class_attributes, seen)?;
        Self::with_seen_rows(config, input_shape, seen_classes, seen_attributes, rng)
    }

    /// Like [`Model::new`], given the seen class ids and their attribute rows directly.
    pub fn with_seen_rows(
        config: &TrainConfig,
        input_shape: (usize, usize, usize),
        seen_classes: Vec<usize>,
        seen_attributes: Tensor,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        if seen_classes.is_empty() {
            return Err(Error::InvalidArgument("training needs at least one seen class".into()));
        }
        let (h, w, c) = input_shape;
        let backbone = match config.backbone {
            BackboneKind::Identity => Backbone::identity(c),
            BackboneKind::Conv => Backbone::conv(c, config.conv_hidden, config.conv_out, config.conv_kernel, rng)?,
        };
        let feat = backbone.output_channels();
        let k = seen_attributes.cols();
        let prototypes = PrototypeBank::new(k, feat, config.scorer, config.scorer_hidden, rng)?;
        let compat = CompatibilityHead::new(feat, k, rng);
        let hash_dim = match config.hash_input {
            HashInput::Pooled => feat,
            HashInput::Spatial => h * w * feat,
        };
        let hash = HashHead::new(hash_dim, config.bits, config.hash_input, rng)?;
        let margin = MarginConfig::new(config.margin, config.scale, seen_classes.len(), config.bits, rng)?;
        Self::assemble(backbone, prototypes, compat, hash, margin, input_shape, seen_classes, seen_attributes)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        backbone: Backbone,
        prototypes: PrototypeBank,
        compat: CompatibilityHead,
        hash: HashHead,
        margin: MarginConfig,
        input_shape: (usize, usize, usize),
        class_attributes: &Tensor,
        seen: &BTreeSet<usize>,
    ) -> Result<Self> {
        let (seen_classes, seen_attributes) = seen_rows(class_attributes, seen)?;
        Self::assemble(backbone, prototypes, compat, hash, margin, input_shape, seen_classes, seen_attributes)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        backbone: Backbone,
        prototypes: PrototypeBank,
        compat: CompatibilityHead,
        hash: HashHead,
        margin: MarginConfig,
        input_shape: (usize, usize, usize),
        seen_classes: Vec<usize>,
        seen_attributes: Tensor,
    ) -> Result<Self> {
        if seen_classes.windows(2).any(|w| w[0] >= w[1]) || seen_attributes.rows() != seen_classes.len() {
            return Err(Error::InvalidArgument("seen classes must be sorted and match their attribute rows".into()));
        }
        let feat = backbone.output_channels();
        let pooled_dim = match hash.input {
            HashInput::Pooled => feat,
            HashInput::Spatial => input_shape.0 * input_shape.1 * feat,
        };
        if backbone.input_channels() != input_shape.2
            || prototypes.channels() != feat
            || prototypes.num_attributes() != seen_attributes.cols()
            || compat.channels() != feat
            || compat.attributes() != seen_attributes.cols()
            || hash.input_dim() != pooled_dim
            || margin.centers.rows() != seen_classes.len()
            || margin.centers.cols() != hash.bits()
        {
            return Err(Error::Shape("model components have inconsistent dimensions".into()));
        }
        Ok(Self {
            backbone,
            prototypes,
            compat,
            hash,
            margin,
            seen_classes,
            seen_attributes,
            input_shape,
        })
    }

    pub fn seen_classes(&self) -> &[usize] {
        &self.seen_classes
    }

    pub fn seen_index(&self, class: usize) -> Option<usize> {
        self.seen_classes.binary_search(&class).ok()
    }

    pub fn seen_attributes(&self) -> &Tensor {
        &self.seen_attributes
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn bits(&self) -> usize {
        self.hash.bits()
    }

    fn check_input(&self, x: &FeatureMap) -> Result<()> {
        if (x.height(), x.width(), x.channels()) != self.input_shape {
            return Err(Error::Shape(format!(
                "model expects {:?} maps, got {}x{}x{}",
                self.input_shape,
                x.height(),
                x.width(),
                x.channels()
            )));
        }
        Ok(())
    }

    /// Binary code of one sample.
    pub fn encode(&self, x: &FeatureMap) -> Result<HashCode> {
        self.check_input(x)?;
        let f = self.backbone.extract(x)?;
        let input = match self.hash.input {
            HashInput::Pooled => global_pool(&f).values,
            HashInput::Spatial => f.values().to_vec(),
        };
        match self.hash.forward(&input, HashMode::Infer)? {
            HashOutput::Code(c) => Ok(c),
            HashOutput::Relaxed(_) => unreachable!(),
        }
    }

    /// Predicted attribute vector of one sample.
    pub fn predict_attributes(&self, x: &FeatureMap) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.prototypes.predict(&self.backbone.extract(x)?)?.values)
    }

    pub fn losses(&self, batch: &Batch, config: &TrainConfig) -> Result<LossBreakdown> {
        Ok(self.run(batch, config, false)?.0)
    }

    /// Joint loss and the gradient of the weighted total w.r.t. every learnable tensor.
    pub fn loss_and_grad(&self, batch: &Batch, config: &TrainConfig) -> Result<(LossBreakdown, Model)> {
        let (losses, grads) = self.run(batch, config, true)?;
        Ok((losses, grads.expect("gradients requested")))
    }

    fn run(&self, batch: &Batch, config: &TrainConfig, want_grad: bool) -> Result<(LossBreakdown, Option<Model>)> {
        let n = batch.samples.len();
        if batch.targets.len() != n || batch.attributes.rows() != n || batch.pairs.samples() != n {
            return Err(Error::Shape("batch fields disagree on the sample count".into()));
        }
        if n == 0 {
            return Ok((LossBreakdown::default(), want_grad.then(|| self.zeros_like())));
        }
        if let Some(&t) = batch.targets.iter().find(|&&t| t >= self.seen_classes.len()) {
            return Err(Error::InvalidArgument(format!("target {t} is not a seen-class index")));
        }
        let ablation = config.ablation;
        let weights = config.effective_weights().0;
        let k = self.prototypes.num_attributes();

        struct Forward {
            map: FeatureMap,
            cache: crate::backbone::BackboneCache,
            prediction: crate::prototypes::AttributePrediction,
            pooled: Vec<f64>,
            relaxed: Vec<f64>,
        }
        let mut fwd = Vec::with_capacity(n);
        for x in &batch.samples {
            self.check_input(x)?;
            let (map, cache) = self.backbone.extract_cached(x)?;
            let prediction = self.prototypes.predict(&map)?;
            let pooled = global_pool(&map).values;
            let relaxed = {
                let input = match self.hash.input {
                    HashInput::Pooled => pooled.as_slice(),
                    HashInput::Spatial => map.values(),
                };
                match self.hash.forward(input, HashMode::Train)? {
                    HashOutput::Relaxed(t) => t,
                    HashOutput::Code(_) => unreachable!(),
                }
            };
            fwd.push(Forward {
                map,
                cache,
                prediction,
                pooled,
                relaxed,
            });
        }
        let predicted = Tensor::from_vec(&[n, k], fwd.iter().flat_map(|f| f.prediction.values.iter().copied()).collect())?;

        let mut losses = LossBreakdown::default();
        let mut grad_attr = predicted.zeros_like();
        if !ablation.pointwise {
            let (l, g) = pointwise_loss_grad(&batch.attributes, &predicted)?;
            losses.pointwise = l;
            grad_attr.axpy(weights[0], &g);
        }
        if !ablation.pairwise {
            if want_grad {
                let (l, g) = pairwise_loss_grad(&predicted, &batch.pairs, config.tau, config.similarity)?;
                losses.pairwise = l;
                grad_attr.axpy(weights[1], &g);
            } else {
                losses.pairwise = pairwise_loss(&predicted, &batch.pairs, config.tau, config.similarity)?;
            }
        }

        // Gradient of the classwise term w.r.t. each sample's W^T g.
        let mut grad_embed: Vec<Vec<f64>> = vec![Vec::new(); n];
        if !ablation.classwise {
            match config.classwise_mode {
                ClasswiseMode::Softmax => {
                    let logits = fwd
                        .iter()
                        .map(|f| self.compat.class_logits(&f.pooled, &self.seen_attributes))
                        .collect::<Result<Vec<_>>>()?;
                    let (l, gl) = classwise_loss_grad(&logits, &batch.targets)?;
                    losses.classwise = l;
                    for (ge, gl) in grad_embed.iter_mut().zip(gl) {
                        let mut e = vec![0.0; k];
                        for (a, g) in self.seen_attributes.iter_rows().zip(gl) {
                            for (ev, av) in e.iter_mut().zip(a) {
                                *ev += weights[2] * g * av;
                            }
                        }
                        *ge = e;
                    }
                }
                ClasswiseMode::Literal => {
                    let mut total = 0.0;
                    for (i, f) in fwd.iter().enumerate() {
                        let embed = self.compat.embed(&f.pooled)?;
                        let diff: Vec<f64> = predicted
                            .row(i)
                            .iter()
                            .zip(batch.attributes.row(i))
                            .map(|(p, t)| p - t)
                            .collect();
                        total += dot(&embed, &diff);
                        grad_embed[i] = diff.iter().map(|d| weights[2] * d / n as f64).collect();
                        for (ga, e) in grad_attr.row_mut(i).iter_mut().zip(&embed) {
                            *ga += weights[2] * e / n as f64;
                        }
                    }
                    losses.classwise = total / n as f64;
                }
            }
        }

        let codes = Tensor::from_vec(&[n, self.bits()], fwd.iter().flat_map(|f| f.relaxed.iter().copied()).collect())?;
        let (hash_loss, grad_codes, grad_centers) = hypersphere_loss_grad(&codes, &batch.targets, &self.margin)?;
        losses.hash = hash_loss;
        losses.total = total_loss(losses.components(), config.effective_weights());

        if !want_grad {
            return Ok((losses, None));
        }

        let mut grads = self.zeros_like();
        grads.margin.centers.axpy(weights[3], &grad_centers);
        for (i, f) in fwd.iter().enumerate() {
            let (h, w, c) = (f.map.height(), f.map.width(), f.map.channels());
            let mut grad_map = FeatureMap::zeros(h, w, c);
            let mut grad_pooled = vec![0.0; c];

            if !grad_embed[i].is_empty() {
                let g = self.compat.backward_embed(&f.pooled, &grad_embed[i], &mut grads.compat);
                grad_pooled.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }

            let grad_code: Vec<f64> = grad_codes.row(i).iter().map(|g| weights[3] * g).collect();
            let input = match self.hash.input {
                HashInput::Pooled => f.pooled.as_slice(),
                HashInput::Spatial => f.map.values(),
            };
            let grad_input = self.hash.backward(input, &f.relaxed, &grad_code, &mut grads.hash);
            match self.hash.input {
                HashInput::Pooled => grad_pooled.iter_mut().zip(grad_input).for_each(|(a, b)| *a += b),
                HashInput::Spatial => grad_map.values_mut().iter_mut().zip(grad_input).for_each(|(a, b)| *a += b),
            }

            global_pool_backward(&grad_pooled, h, w, &mut grad_map);
            self.prototypes
                .backward(&f.map, &f.prediction, grad_attr.row(i), &mut grads.prototypes, &mut grad_map);
            self.backbone.backward(&f.cache, &grad_map, &mut grads.backbone);
        }
        Ok((losses, Some(grads)))
    }

    pub fn zeros_like(&self) -> Model {
        Model {
            backbone: self.backbone.zeros_like(),
            prototypes: self.prototypes.zeros_like(),
            compat: self.compat.zeros_like(),
            hash: self.hash.zeros_like(),
            margin: MarginConfig {
                margin: self.margin.margin,
                scale: self.margin.scale,
                centers: self.margin.centers.zeros_like(),
            },
            seen_classes: self.seen_classes.clone(),
            seen_attributes: self.seen_attributes.clone(),
            input_shape: self.input_shape,
        }
    }

    /// Every learnable tensor with a stable name, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = self.backbone.tensors();
        out.extend(self.prototypes.tensors());
        out.push(("compat.projection", &self.compat.projection));
        out.push(("hash.weight", &self.hash.weight));
        out.push(("hash.bias", &self.hash.bias));
        out.push(("centers", &self.margin.centers));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut out = self.backbone.tensors_mut();
        out.extend(self.prototypes.tensors_mut());
        out.push(("compat.projection", &mut self.compat.projection));
        out.push(("hash.weight", &mut self.hash.weight));
        out.push(("hash.bias", &mut self.hash.bias));
        out.push(("centers", &mut self.margin.centers));
        out
    }
}
