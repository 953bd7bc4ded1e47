//! Training configuration and its flat `key=value` text form.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneKind;
use crate::classwise::ClasswiseMode;
use crate::contrast::SimilarityMode;
use crate::error::{Error, Result};
use crate::hashing::{HashInput, LossWeights};
use crate::prototypes::ScorerKind;

/// Components that can be switched off for ablation runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub pointwise: bool,
    pub pairwise: bool,
    pub classwise: bool,
}

impl Ablation {
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Ablation::default();
        for part in text.split(',').map(str::trim).filter(|s| !s.is_empty() && *s != "none") {
            match part {
                "pointwise" => out.pointwise = true,
                "pairwise" => out.pairwise = true,
                "classwise" => out.classwise = true,
                other => {
                    return Err(Error::ConfigValue {
                        key: "ablate".into(),
                        message: format!("unknown component `{other}` (pointwise, pairwise, classwise)"),
                    })
                }
            }
        }
        Ok(out)
    }

    fn render(&self) -> String {
        let parts: Vec<&str> = [
            (self.pointwise, "pointwise"),
            (self.pairwise, "pairwise"),
            (self.classwise, "classwise"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join(",")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weights: LossWeights,
    pub epsilon: f64,
    pub tau: f64,
    pub neg_count: usize,
    pub margin: f64,
    pub scale: f64,
    pub bits: usize,
    pub seed: u64,
    pub backbone: BackboneKind,
    pub conv_hidden: usize,
    pub conv_out: usize,
    pub conv_kernel: usize,
    pub scorer: ScorerKind,
    pub scorer_hidden: usize,
    pub similarity: SimilarityMode,
    pub classwise_mode: ClasswiseMode,
    pub hash_input: HashInput,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            learning_rate: 1e-4,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weights: LossWeights::default(),
            epsilon: 0.9,
            tau: 1.0,
            neg_count: 10,
            margin: 0.35,
            scale: 10.0,
            bits: 64,
            seed: 0,
            backbone: BackboneKind::Identity,
            conv_hidden: 16,
            conv_out: 16,
            conv_kernel: 3,
            scorer: ScorerKind::Dot,
            scorer_hidden: 16,
            similarity: SimilarityMode::PerDimension,
            classwise_mode: ClasswiseMode::Softmax,
            hash_input: HashInput::Pooled,
            ablation: Ablation::default(),
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "learning_rate",
    "weight_decay",
    "beta1",
    "beta2",
    "adam_eps",
    "lambda_pointwise",
    "lambda_pairwise",
    "lambda_classwise",
    "lambda_hash",
    "epsilon",
    "tau",
    "neg_count",
    "margin",
    "scale",
    "bits",
    "seed",
    "backbone",
    "conv_hidden",
    "conv_out",
    "conv_kernel",
    "scorer",
    "scorer_hidden",
    "similarity",
    "classwise_mode",
    "hash_input",
    "ablate",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::ConfigValue {
        key: key.into(),
        message: format!("cannot parse `{value}`"),
    })
}

fn choice<T: Copy>(key: &str, value: &str, options: &[(&str, T)]) -> Result<T> {
    options
        .iter()
        .find(|(name, _)| *name == value)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::ConfigValue {
            key: key.into(),
            message: format!(
                "`{value}` is not one of {}",
                options.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
            ),
        })
}

const BACKBONES: &[(&str, BackboneKind)] = &[("identity", BackboneKind::Identity), ("conv", BackboneKind::Conv)];
const SCORERS: &[(&str, ScorerKind)] = &[("dot", ScorerKind::Dot), ("mlp", ScorerKind::Mlp)];
const SIMILARITIES: &[(&str, SimilarityMode)] = &[
    ("per_dimension", SimilarityMode::PerDimension),
    ("full_vector", SimilarityMode::FullVector),
];
const CLASSWISE: &[(&str, ClasswiseMode)] = &[("softmax", ClasswiseMode::Softmax), ("literal", ClasswiseMode::Literal)];
const HASH_INPUTS: &[(&str, HashInput)] = &[("pooled", HashInput::Pooled), ("spatial", HashInput::Spatial)];

fn name_of<T: PartialEq>(options: &[(&'static str, T)], v: &T) -> &'static str {
    options.iter().find(|(_, o)| o == v).map(|(n, _)| *n).unwrap()
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "beta1" => self.beta1 = parse_num(key, value)?,
            "beta2" => self.beta2 = parse_num(key, value)?,
            "adam_eps" => self.adam_eps = parse_num(key, value)?,
            "lambda_pointwise" => self.weights.0[0] = parse_num(key, value)?,
            "lambda_pairwise" => self.weights.0[1] = parse_num(key, value)?,
            "lambda_classwise" => self.weights.0[2] = parse_num(key, value)?,
            "lambda_hash" => self.weights.0[3] = parse_num(key, value)?,
            "epsilon" => self.epsilon = parse_num(key, value)?,
            "tau" => self.tau = parse_num(key, value)?,
            "neg_count" => self.neg_count = parse_num(key, value)?,
            "margin" => self.margin = parse_num(key, value)?,
            "scale" => self.scale = parse_num(key, value)?,
            "bits" => self.bits = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "backbone" => self.backbone = choice(key, value, BACKBONES)?,
            "conv_hidden" => self.conv_hidden = parse_num(key, value)?,
            "conv_out" => self.conv_out = parse_num(key, value)?,
            "conv_kernel" => self.conv_kernel = parse_num(key, value)?,
            "scorer" => self.scorer = choice(key, value, SCORERS)?,
            "scorer_hidden" => self.scorer_hidden = parse_num(key, value)?,
            "similarity" => self.similarity = choice(key, value, SIMILARITIES)?,
            "classwise_mode" => self.classwise_mode = choice(key, value, CLASSWISE)?,
            "hash_input" => self.hash_input = choice(key, value, HASH_INPUTS)?,
            "ablate" => self.ablation = Ablation::parse(value)?,
            _ => {
                return Err(Error::UnknownKey {
                    key: key.into(),
                    valid: CONFIG_KEYS.join(", "),
                })
            }
        }
        Ok(())
    }

    /// Parses `key=value` lines on top of the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigValue {
                key: format!("line {}", lineno + 1),
                message: format!("expected key=value, got `{line}`"),
            })?;
            cfg.set(key.trim(), value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::ConfigValue {
                key: key.into(),
                message: message.into(),
            })
        };
        if self.epochs == 0 {
            return bad("epochs", "must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        if self.bits == 0 {
            return bad("bits", "must be >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", "must be > 0");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be >= 0");
        }
        if self.weights.0.iter().any(|w| !(*w >= 0.0)) {
            return bad("lambda_*", "loss weights must be >= 0");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", "must be > 0");
        }
        if !(self.tau > 0.0) {
            return bad("tau", "must be > 0");
        }
        if !(self.margin >= 0.0) {
            return bad("margin", "must be >= 0");
        }
        if !(self.scale > 0.0) {
            return bad("scale", "must be > 0");
        }
        if self.conv_kernel.is_multiple_of(2) {
            return bad("conv_kernel", "must be odd");
        }
        Ok(())
    }

    /// Every key, one per line, in [`CONFIG_KEYS`] order. Parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("learning_rate", self.learning_rate.to_string());
        put("weight_decay", self.weight_decay.to_string());
        put("beta1", self.beta1.to_string());
        put("beta2", self.beta2.to_string());
        put("adam_eps", self.adam_eps.to_string());
        put("lambda_pointwise", self.weights.0[0].to_string());
        put("lambda_pairwise", self.weights.0[1].to_string());
        put("lambda_classwise", self.weights.0[2].to_string());
        put("lambda_hash", self.weights.0[3].to_string());
        put("epsilon", self.epsilon.to_string());
        put("tau", self.tau.to_string());
        put("neg_count", self.neg_count.to_string());
        put("margin", self.margin.to_string());
        put("scale", self.scale.to_string());
        put("bits", self.bits.to_string());
        put("seed", self.seed.to_string());
        put("backbone", name_of(BACKBONES, &self.backbone).into());
        put("conv_hidden", self.conv_hidden.to_string());
        put("conv_out", self.conv_out.to_string());
        put("conv_kernel", self.conv_kernel.to_string());
        put("scorer", name_of(SCORERS, &self.scorer).into());
        put("scorer_hidden", self.scorer_hidden.to_string());
        put("similarity", name_of(SIMILARITIES, &self.similarity).into());
        put("classwise_mode", name_of(CLASSWISE, &self.classwise_mode).into());
        put("hash_input", name_of(HASH_INPUTS, &self.hash_input).into());
        put("ablate", self.ablation.render());
        s
    }

    /// Loss weights after ablation switches are applied.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights;
        if self.ablation.pointwise {
            w.0[0] = 0.0;
        }
        if self.ablation.pairwise {
            w.0[1] = 0.0;
        }
        if self.ablation.classwise {
            w.0[2] = 0.0;
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_published_settings() {
        let c = TrainConfig::default();
        assert_eq!(c.epochs, 10);
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.weight_decay, 5e-4);
        assert_eq!(c.weights.0, [10.0, 1.0, 10.0, 1.0]);
        assert_eq!(c.epsilon, 0.9);
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.set("learning_rate", "0.0003").unwrap();
        c.set("ablate", "pairwise,classwise").unwrap();
        c.set("backbone", "conv").unwrap();
        c.set("scale", "12.5").unwrap();
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = TrainConfig::parse("epochs=3\nlearning_rat=0.1\n").unwrap_err().to_string();
        assert!(err.contains("learning_rat") && err.contains("learning_rate") && err.contains("ablate"), "{err}");
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(TrainConfig::parse("epochs=0").is_err());
        assert!(TrainConfig::parse("backbone=resnet").is_err());
        assert!(TrainConfig::parse("ablate=hash").is_err());
        assert!(TrainConfig::parse("tau=-1").is_err());
        assert!(TrainConfig::parse("no equals sign").is_err());
        let c = TrainConfig::parse("# comment\n bits = 16 # trailing\n").unwrap();
        assert_eq!(c.bits, 16);
    }

    #[test]
    fn ablation_zeroes_weights() {
        let mut c = TrainConfig::default();
        c.ablation.pointwise = true;
        assert_eq!(c.effective_weights().0, [0.0, 1.0, 10.0, 1.0]);
    }
}
