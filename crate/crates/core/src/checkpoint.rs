//! Versioned checkpoint container.
//!
//! Layout: `CMCK1`, a little-endian `u32` header length, a JSON header and a
//! payload of little-endian `f64` values. The header lists every tensor by
//! name and shape in payload order.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{LossBreakdown, Model};
use crate::optim::AdamW;
use crate::tensor::Tensor;
use crate::trainer::LossTrace;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"CMCK1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model,
    pub optimizer: AdamW,
    /// Completed epochs.
    pub epoch: usize,
    /// Position of the batch-shuffle generator.
    pub shuffle_word_pos: u128,
    pub train_indices: Vec<usize>,
    pub trace: LossTrace,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: String,
    epoch: usize,
    shuffle_word_pos: String,
    input_shape: (usize, usize, usize),
    seen_classes: Vec<usize>,
    train_indices: Vec<usize>,
    tensors: Vec<Entry>,
    adam_step: u64,
    adam_moments: bool,
    trace: Vec<(usize, [f64; 5])>,
}

fn push_tensor(out: &mut Vec<u8>, t: &Tensor) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("checkpoint payload truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let bytes = self.take(n * 8)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Tensor::from_vec(shape, data)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors: Vec<Entry> = self
            .model
            .tensors()
            .into_iter()
            .map(|(name, t)| Entry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect();
        tensors.push(Entry {
            name: "seen_attributes".into(),
            shape: self.model.seen_attributes().shape().to_vec(),
        });
        let header = Header {
            config: self.config.to_text(),
            epoch: self.epoch,
            shuffle_word_pos: self.shuffle_word_pos.to_string(),
            input_shape: self.model.input_shape(),
            seen_classes: self.model.seen_classes().to_vec(),
            train_indices: self.train_indices.clone(),
            tensors,
            adam_step: self.optimizer.step,
            adam_moments: !self.optimizer.first_moment.is_empty(),
            trace: self
                .trace
                .rows
                .iter()
                .map(|(e, l)| (*e, [l.pointwise, l.pairwise, l.classwise, l.hash, l.total]))
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(json.len() + 64);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.model.tensors() {
            push_tensor(&mut out, t);
        }
        push_tensor(&mut out, self.model.seen_attributes());
        for (m, v) in self.optimizer.first_moment.iter().zip(&self.optimizer.second_moment) {
            push_tensor(&mut out, m);
            push_tensor(&mut out, v);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 9 || &buf[..5] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (missing CMCK1 tag)".into()));
        }
        let len = u32::from_le_bytes(buf[5..9].try_into().expect("4 bytes")) as usize;
        let json = buf
            .get(9..9 + len)
            .ok_or_else(|| Error::Format("checkpoint header truncated".into()))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let config = TrainConfig::parse(&header.config)?;
        let word_pos: u128 = header
            .shuffle_word_pos
            .parse()
            .map_err(|_| Error::Format("bad generator position".into()))?;

        let mut reader = Reader { buf, pos: 9 + len };
        let mut loaded = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            loaded.push((e.name.as_str(), reader.tensor(&e.shape)?));
        }
        let (seen_name, seen_attributes) = loaded
            .pop()
            .ok_or_else(|| Error::Format("checkpoint lists no tensors".into()))?;
        if seen_name != "seen_attributes" {
            return Err(Error::Format("checkpoint is missing seen_attributes".into()));
        }

        let mut model = Model::with_seen_rows(
            &config,
            header.input_shape,
            header.seen_classes,
            seen_attributes,
            &mut ChaCha8Rng::seed_from_u64(0),
        )?;
        {
            let slots = model.tensors_mut();
            if slots.len() != loaded.len() {
                return Err(Error::Format(format!(
                    "checkpoint has {} tensors, model expects {}",
                    loaded.len(),
                    slots.len()
                )));
            }
            for ((name, slot), (stored, t)) in slots.into_iter().zip(&loaded) {
                if name != *stored || slot.shape() != t.shape() {
                    return Err(Error::Format(format!(
                        "tensor `{stored}` {:?} does not fit `{name}` {:?}",
                        t.shape(),
                        slot.shape()
                    )));
                }
                *slot = t.clone();
            }
        }

        let mut optimizer = AdamW::new(
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.adam_eps,
            config.weight_decay,
        );
        optimizer.step = header.adam_step;
        if header.adam_moments {
            for (_, t) in &loaded {
                optimizer.first_moment.push(reader.tensor(t.shape())?);
                optimizer.second_moment.push(reader.tensor(t.shape())?);
            }
        }
        if reader.pos != buf.len() {
            return Err(Error::Format("trailing bytes after checkpoint payload".into()));
        }
        let trace = LossTrace {
            rows: header
                .trace
                .into_iter()
                .map(|(e, v)| {
                    (
                        e,
                        LossBreakdown {
                            pointwise: v[0],
                            pairwise: v[1],
                            classwise: v[2],
                            hash: v[3],
                            total: v[4],
                        },
                    )
                })
                .collect(),
        };
        Ok(Self {
            config,
            model,
            optimizer,
            epoch: header.epoch,
            shuffle_word_pos: word_pos,
            train_indices: header.train_indices,
            trace,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneKind;
    use crate::data::make_synthetic;
    use crate::trainer::Trainer;

    #[test]
    fn round_trip_is_exact() {
        let ds = make_synthetic(3, 2, 4, 0.1, 5).unwrap();
        let config = TrainConfig {
            epochs: 2,
            bits: 8,
            backbone: BackboneKind::Conv,
            conv_hidden: 3,
            conv_out: 4,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(&ds, &config).unwrap();
        let fresh = t.checkpoint();
        assert_eq!(Checkpoint::from_bytes(&fresh.to_bytes()).unwrap(), fresh);
        t.run_epoch(&mut ()).unwrap();
        let ck = t.checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn rejects_corruption() {
        assert!(Checkpoint::from_bytes(b"CMCK0\0\0\0\0").is_err());
        let ds = make_synthetic(2, 2, 3, 0.1, 5).unwrap();
        let config = TrainConfig {
            bits: 4,
            ..TrainConfig::default()
        };
        let bytes = Trainer::new(&ds, &config).unwrap().checkpoint().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
