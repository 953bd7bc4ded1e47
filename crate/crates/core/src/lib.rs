//! Attribute-guided zero-shot hashing.
//!
//! A model maps a spatial feature map to a binary code. Training combines
//! four losses: regression of prototype-based attribute predictions,
//! per-dimension attribute contrast, a class-compatibility cross-entropy over
//! seen classes and an additive-margin softmax on the relaxed codes. Codes of
//! unseen classes are then retrieved by Hamming distance.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backbone;
pub mod checkpoint;
pub mod classwise;
pub mod config;
pub mod contrast;
pub mod data;
pub mod error;
pub mod eval;
pub mod hashing;
pub mod model;
pub mod optim;
pub mod prototypes;
pub mod tensor;
pub mod trainer;

pub use config::{Ablation, TrainConfig};
pub use data::{load_dataset, make_split, make_synthetic, save_dataset, AttributedDataset, SplitSpec};
pub use error::{Error, Result};
pub use eval::CodeDatabase;
pub use hashing::HashCode;
pub use model::{LossBreakdown, Model};
pub use tensor::Tensor;
pub use trainer::{fit, FitReport, LossTrace, Trainer};
