//! Hamming-space retrieval and the evaluation metrics built on it.

mod metrics;
mod protocol;
mod separability;

pub use metrics::{curves, mean_average_precision, Curves, Cutoff, MeanAveragePrecision, PrPoint, DEFAULT_N_GRID};
pub use protocol::{zero_shot_protocol, GalleryMode, RetrievalSplit};
pub use separability::{separability, separability_real, SeparabilityReport};

use std::path::Path;

use crate::error::{Error, Result};
use crate::hashing::{pack_codes_with_bits, unpack_codes, HashCode};

/// Label-tagged gallery of codes packed 64 bits per word, LSB first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeDatabase {
    bits: usize,
    words_per_code: usize,
    words: Vec<u64>,
    labels: Vec<usize>,
}

fn pack_words(code: &HashCode) -> Vec<u64> {
    let mut words = vec![0u64; code.len().div_ceil(64)];
    for (j, &b) in code.bits().iter().enumerate() {
        if b == 1 {
            words[j / 64] |= 1 << (j % 64);
        }
    }
    words
}

impl CodeDatabase {
    pub fn new(bits: usize) -> Self {
        Self {
            bits,
            words_per_code: bits.div_ceil(64),
            words: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn from_codes(codes: &[HashCode], labels: &[usize], bits: usize) -> Result<Self> {
        if codes.len() != labels.len() {
            return Err(Error::Shape(format!("{} codes for {} labels", codes.len(), labels.len())));
        }
        let mut db = Self::new(bits);
        for (c, &l) in codes.iter().zip(labels) {
            db.push(c, l)?;
        }
        Ok(db)
    }

    pub fn push(&mut self, code: &HashCode, label: usize) -> Result<()> {
        if code.len() != self.bits {
            return Err(Error::Shape(format!(
                "code has {} bits, database holds {}-bit codes",
                code.len(),
                self.bits
            )));
        }
        self.words.extend(pack_words(code));
        self.labels.push(label);
        Ok(())
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Same codes with different labels, e.g. for permutation baselines.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Shape(format!("{} labels for {} codes", labels.len(), self.len())));
        }
        Ok(Self {
            labels,
            ..self.clone()
        })
    }

    pub fn packed(&self, i: usize) -> &[u64] {
        &self.words[i * self.words_per_code..(i + 1) * self.words_per_code]
    }

    pub fn code(&self, i: usize) -> HashCode {
        let words = self.packed(i);
        let bits = (0..self.bits)
            .map(|j| if words[j / 64] >> (j % 64) & 1 == 1 { 1 } else { -1 })
            .collect();
        HashCode::new(bits).expect("packed bits decode to +-1")
    }

    pub fn codes(&self) -> Vec<HashCode> {
        (0..self.len()).map(|i| self.code(i)).collect()
    }

    pub fn distance(&self, i: usize, j: usize) -> u32 {
        popcount_distance(self.packed(i), self.packed(j))
    }

    fn distances_to(&self, query: &[u64]) -> Vec<u32> {
        (0..self.len()).map(|i| popcount_distance(self.packed(i), query)).collect()
    }

    /// `CMHC` packed-code bytes.
    pub fn to_packed_bytes(&self) -> Vec<u8> {
        pack_codes_with_bits(&self.codes(), self.bits).expect("uniform bit width")
    }

    /// Writes `<stem>.bin` (packed codes) and `<stem>_labels.csv`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        let bin = dir.join(format!("{stem}.bin"));
        std::fs::write(&bin, self.to_packed_bytes()).map_err(|e| Error::io(&bin, e))?;
        let csv = dir.join(format!("{stem}_labels.csv"));
        let text: String = self.labels.iter().map(|l| format!("{l}\n")).collect();
        std::fs::write(&csv, text).map_err(|e| Error::io(&csv, e))
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let bin = dir.join(format!("{stem}.bin"));
        let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let (codes, bits) = unpack_codes(&bytes)?;
        let csv = dir.join(format!("{stem}_labels.csv"));
        let text = std::fs::read_to_string(&csv).map_err(|e| Error::io(&csv, e))?;
        let labels = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                l.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::parse(&csv, Some(i + 1), format!("bad label `{l}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_codes(&codes, &labels, bits)
    }
}

fn popcount_distance(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Number of positions where the codes differ.
pub fn hamming(a: &HashCode, b: &HashCode) -> Result<u32> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("codes of {} and {} bits", a.len(), b.len())));
    }
    Ok(popcount_distance(&pack_words(a), &pack_words(b)))
}

/// Database indices by ascending Hamming distance, ties by ascending index.
pub fn rank(query: &HashCode, db: &CodeDatabase) -> Result<Vec<usize>> {
    if query.len() != db.bits {
        return Err(Error::Shape(format!(
            "query has {} bits, database {}",
            query.len(),
            db.bits
        )));
    }
    Ok(rank_packed(&pack_words(query), db))
}

/// Counting sort over the `bits + 1` possible distances; stable in index.
pub(crate) fn rank_packed(query: &[u64], db: &CodeDatabase) -> Vec<usize> {
    let dist = db.distances_to(query);
    let mut buckets = vec![0usize; db.bits + 2];
    for &d in &dist {
        buckets[d as usize + 1] += 1;
    }
    for i in 1..buckets.len() {
        buckets[i] += buckets[i - 1];
    }
    let mut order = vec![0usize; dist.len()];
    for (i, &d) in dist.iter().enumerate() {
        order[buckets[d as usize]] = i;
        buckets[d as usize] += 1;
    }
    order
}
