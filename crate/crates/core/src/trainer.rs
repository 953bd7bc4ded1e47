//! The training loop: pair sets are built once over the seen training
//! samples, then each epoch shuffles the samples into mini-batches and takes
//! one AdamW step per batch.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::FeatureMap;
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::contrast::{build_pair_sets, PairSets};
use crate::data::AttributedDataset;
use crate::error::{Error, Result};
use crate::eval::CodeDatabase;
use crate::model::{Batch, LossBreakdown, Model};
use crate::optim::AdamW;
use crate::tensor::Tensor;

pub(crate) const SHUFFLE_STREAM: u64 = 1;
pub(crate) const INIT_STREAM: u64 = 2;

pub const TRACE_HEADER: &str = "epoch,pointwise,pairwise,classwise,hash,total";

/// Per-epoch losses over the full training set, each taken before that
/// epoch's first update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<(usize, LossBreakdown)>,
}

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{TRACE_HEADER}\n");
        for (e, l) in &self.rows {
            let _ = writeln!(out, "{e},{},{},{},{},{}", l.pointwise, l.pairwise, l.classwise, l.hash, l.total);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn parse_csv(text: &str, file: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == TRACE_HEADER => {}
            _ => return Err(Error::parse(file, Some(1), format!("expected header `{TRACE_HEADER}`"))),
        }
        let mut rows = Vec::new();
        for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::parse(file, Some(i + 1), format!("malformed trace row `{line}`"));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            let epoch = f[0].trim().parse().map_err(|_| bad())?;
            let v = f[1..]
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            rows.push((
                epoch,
                LossBreakdown {
                    pointwise: v[0],
                    pairwise: v[1],
                    classwise: v[2],
                    hash: v[3],
                    total: v[4],
                },
            ));
        }
        Ok(Self { rows })
    }
}

/// Hooks into the training loop; the default methods do nothing.
pub trait TrainObserver {
    /// Called after the gradient of a batch is computed, with the dataset
    /// indices of its samples.
    fn on_batch(&mut self, _epoch: usize, _batch: usize, _samples: &[usize], _losses: &LossBreakdown) {}

    fn on_epoch(&mut self, _epoch: usize, _losses: &LossBreakdown) {}
}

impl TrainObserver for () {}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: Model,
    pub trace: LossTrace,
    /// Full-training-set losses after the last update.
    pub final_losses: LossBreakdown,
}

pub struct Trainer {
    config: TrainConfig,
    model: Model,
    optimizer: AdamW,
    epoch: usize,
    shuffle_rng: ChaCha8Rng,
    train_indices: Vec<usize>,
    maps: Vec<FeatureMap>,
    targets: Vec<usize>,
    attributes: Tensor,
    pairs: PairSets,
    trace: LossTrace,
}

fn sample_map(dataset: &AttributedDataset, i: usize) -> Result<FeatureMap> {
    let (h, w, c) = dataset.map_shape();
    FeatureMap::from_f32(h, w, c, dataset.sample(i))
}

impl Trainer {
    /// Trains on every seen-class sample of `dataset`.
    pub fn new(dataset: &AttributedDataset, config: &TrainConfig) -> Result<Self> {
        let indices = dataset.indices_of_classes(dataset.split().seen());
        Self::with_indices(dataset, config, &indices)
    }

    /// Trains on the given samples, all of which must belong to seen classes.
    pub fn with_indices(dataset: &AttributedDataset, config: &TrainConfig, indices: &[usize]) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(INIT_STREAM);
        let model = Model::new(
            config,
            dataset.map_shape(),
            dataset.class_attributes(),
            dataset.split().seen(),
            &mut rng,
        )?;
        let optimizer = AdamW::new(
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.adam_eps,
            config.weight_decay,
        );
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle_rng.set_stream(SHUFFLE_STREAM);
        Self::assemble(dataset, config.clone(), model, optimizer, 0, shuffle_rng, indices, LossTrace::default())
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(dataset: &AttributedDataset, checkpoint: Checkpoint) -> Result<Self> {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(checkpoint.config.seed);
        shuffle_rng.set_stream(SHUFFLE_STREAM);
        shuffle_rng.set_word_pos(checkpoint.shuffle_word_pos);
        if dataset.map_shape() != checkpoint.model.input_shape() {
            return Err(Error::Shape(format!(
                "checkpoint expects {:?} maps, dataset has {:?}",
                checkpoint.model.input_shape(),
                dataset.map_shape()
            )));
        }
        Self::assemble(
            dataset,
            checkpoint.config,
            checkpoint.model,
            checkpoint.optimizer,
            checkpoint.epoch,
            shuffle_rng,
            &checkpoint.train_indices,
            checkpoint.trace,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        dataset: &AttributedDataset,
        config: TrainConfig,
        model: Model,
        optimizer: AdamW,
        epoch: usize,
        shuffle_rng: ChaCha8Rng,
        indices: &[usize],
        trace: LossTrace,
    ) -> Result<Self> {
        let mut targets = Vec::with_capacity(indices.len());
        let mut maps = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= dataset.len() {
                return Err(Error::InvalidArgument(format!("sample index {i} out of range")));
            }
            let class = dataset.labels()[i];
            let t = model
                .seen_index(class)
                .ok_or(Error::UnseenClass { sample: i, class })?;
            targets.push(t);
            maps.push(sample_map(dataset, i)?);
        }
        if indices.is_empty() {
            return Err(Error::InvalidArgument("no training samples".into()));
        }
        let rows: Vec<&[f64]> = indices.iter().map(|&i| dataset.attributes_of(i)).collect();
        let attributes = Tensor::from_rows(&rows)?;
        let pairs = build_pair_sets(&attributes, config.epsilon, config.neg_count, config.seed)?;
        Ok(Self {
            config,
            model,
            optimizer,
            epoch,
            shuffle_rng,
            train_indices: indices.to_vec(),
            maps,
            targets,
            attributes,
            pairs,
            trace,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn trace(&self) -> &LossTrace {
        &self.trace
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train_indices
    }

    pub fn pairs(&self) -> &PairSets {
        &self.pairs
    }

    fn batch(&self, positions: &[usize]) -> Result<Batch> {
        let rows: Vec<&[f64]> = positions.iter().map(|&p| self.attributes.row(p)).collect();
        Ok(Batch {
            samples: positions.iter().map(|&p| self.maps[p].clone()).collect(),
            targets: positions.iter().map(|&p| self.targets[p]).collect(),
            attributes: Tensor::from_rows(&rows)?,
            pairs: self.pairs.restrict(positions),
        })
    }

    /// Losses over the full training set with the complete pair sets.
    pub fn evaluate(&self) -> Result<LossBreakdown> {
        let positions: Vec<usize> = (0..self.maps.len()).collect();
        let losses = self.model.losses(&self.batch(&positions)?, &self.config)?;
        if let Some(component) = losses.non_finite() {
            return Err(Error::NonFinite {
                component,
                epoch: self.epoch,
                batch: None,
            });
        }
        Ok(losses)
    }

    /// Records the pre-update losses of the next epoch, then runs it.
    pub fn run_epoch(&mut self, observer: &mut dyn TrainObserver) -> Result<LossBreakdown> {
        let epoch = self.epoch;
        let start = self.evaluate()?;
        self.trace.rows.push((epoch, start));
        observer.on_epoch(epoch, &start);

        let mut order: Vec<usize> = (0..self.maps.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        for (b, positions) in order.chunks(self.config.batch_size).enumerate() {
            let batch = self.batch(positions)?;
            let (losses, grads) = self.model.loss_and_grad(&batch, &self.config)?;
            if let Some(component) = losses.non_finite() {
                return Err(Error::NonFinite {
                    component,
                    epoch,
                    batch: Some(b),
                });
            }
            let ids: Vec<usize> = positions.iter().map(|&p| self.train_indices[p]).collect();
            observer.on_batch(epoch, b, &ids, &losses);
            let grad_refs: Vec<&Tensor> = grads.tensors().into_iter().map(|(_, t)| t).collect();
            if grad_refs.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    component: "gradient",
                    epoch,
                    batch: Some(b),
                });
            }
            let params: Vec<&mut Tensor> = self.model.tensors_mut().into_iter().map(|(_, t)| t).collect();
            self.optimizer.update(params, &grad_refs);
            self.model.margin.normalize_centers();
        }
        self.epoch += 1;
        Ok(start)
    }

    /// Runs the remaining epochs up to `config.epochs`.
    pub fn run(&mut self, observer: &mut dyn TrainObserver) -> Result<()> {
        while self.epoch < self.config.epochs {
            self.run_epoch(observer)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
            epoch: self.epoch,
            shuffle_word_pos: self.shuffle_rng.get_word_pos(),
            train_indices: self.train_indices.clone(),
            trace: self.trace.clone(),
        }
    }

    pub fn into_report(self) -> Result<FitReport> {
        let final_losses = self.evaluate()?;
        Ok(FitReport {
            model: self.model,
            trace: self.trace,
            final_losses,
        })
    }
}

/// Trains on every seen-class sample for `config.epochs` epochs.
pub fn fit(dataset: &AttributedDataset, config: &TrainConfig) -> Result<FitReport> {
    let mut trainer = Trainer::new(dataset, config)?;
    trainer.run(&mut ())?;
    trainer.into_report()
}

/// Like [`fit`] over an explicit sample list; unseen-class samples are rejected.
pub fn fit_indices(
    dataset: &AttributedDataset,
    config: &TrainConfig,
    indices: &[usize],
    observer: &mut dyn TrainObserver,
) -> Result<FitReport> {
    let mut trainer = Trainer::with_indices(dataset, config, indices)?;
    trainer.run(observer)?;
    trainer.into_report()
}

/// Inference-mode codes for the given samples, tagged with their labels.
pub fn encode(model: &Model, dataset: &AttributedDataset, indices: &[usize]) -> Result<CodeDatabase> {
    let mut db = CodeDatabase::new(model.bits());
    for &i in indices {
        if i >= dataset.len() {
            return Err(Error::InvalidArgument(format!("sample index {i} out of range")));
        }
        db.push(&model.encode(&sample_map(dataset, i)?)?, dataset.labels()[i])?;
    }
    Ok(db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_split, make_synthetic};

    fn tiny() -> (AttributedDataset, TrainConfig) {
        let ds = make_synthetic(4, 3, 5, 0.1, 3).unwrap();
        let ds = ds.clone().with_split(make_split(&ds, 0.25, 1).unwrap()).unwrap();
        let config = TrainConfig {
            epochs: 2,
            batch_size: 4,
            bits: 8,
            ..TrainConfig::default()
        };
        (ds, config)
    }

    #[test]
    fn one_epoch_smoke() {
        let ds = make_synthetic(4, 3, 5, 0.1, 3).unwrap();
        let config = TrainConfig {
            epochs: 1,
            bits: 8,
            ..TrainConfig::default()
        };
        let report = fit(&ds, &config).unwrap();
        assert_eq!(report.trace.rows.len(), 1);
        assert!(report.trace.rows[0].1.components().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn same_seed_same_trace() {
        let (ds, config) = tiny();
        let a = fit(&ds, &config).unwrap();
        let b = fit(&ds, &config).unwrap();
        assert_eq!(a.trace.to_csv(), b.trace.to_csv());
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn unseen_samples_are_rejected() {
        let (ds, config) = tiny();
        let unseen = ds.indices_of_classes(ds.split().unseen());
        let err = fit_indices(&ds, &config, &unseen[..1], &mut ()).unwrap_err();
        assert!(matches!(err, Error::UnseenClass { .. }));
    }

    #[test]
    fn only_training_samples_contribute() {
        struct Ids(Vec<usize>);
        impl TrainObserver for Ids {
            fn on_batch(&mut self, _: usize, _: usize, samples: &[usize], _: &LossBreakdown) {
                self.0.extend_from_slice(samples);
            }
        }
        let (ds, config) = tiny();
        let mut ids = Ids(Vec::new());
        let train = ds.indices_of_classes(ds.split().seen());
        fit_indices(&ds, &config, &train, &mut ids).unwrap();
        assert_eq!(ids.0.len(), train.len() * config.epochs);
        assert!(ids.0.iter().all(|&i| ds.split().is_seen(ds.labels()[i])));
    }

    #[test]
    fn trace_csv_round_trip() {
        let (ds, config) = tiny();
        let trace = fit(&ds, &config).unwrap().trace;
        let csv = trace.to_csv();
        assert!(csv.starts_with(TRACE_HEADER));
        assert_eq!(LossTrace::parse_csv(&csv, Path::new("x")).unwrap(), trace);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (ds, mut config) = tiny();
        config.epochs = 3;
        let full = fit(&ds, &config).unwrap();

        let mut t = Trainer::new(&ds, &config).unwrap();
        t.run_epoch(&mut ()).unwrap();
        let bytes = t.checkpoint().to_bytes();
        let mut resumed = Trainer::resume(&ds, Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        resumed.run(&mut ()).unwrap();
        let resumed = resumed.into_report().unwrap();
        assert_eq!(resumed.trace.to_csv(), full.trace.to_csv());
        assert_eq!(resumed.model, full.model);
    }

    #[test]
    fn encode_is_deterministic() {
        let (ds, config) = tiny();
        let model = fit(&ds, &config).unwrap().model;
        let all: Vec<usize> = (0..ds.len()).collect();
        let a = encode(&model, &ds, &all).unwrap();
        assert_eq!(a, encode(&model, &ds, &all).unwrap());
        assert!(a.codes().iter().all(|c| c.bits().iter().all(|&b| b == 1 || b == -1)));
        assert!(encode(&model, &ds, &[]).unwrap().is_empty());
    }
}
