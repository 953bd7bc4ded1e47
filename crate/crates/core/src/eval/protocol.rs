use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::AttributedDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GalleryMode {
    /// Gallery holds only the unseen samples not used as queries.
    Unseen,
    /// Seen samples are added to the gallery as distractors.
    All,
}

impl GalleryMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "unseen" => Ok(GalleryMode::Unseen),
            "all" => Ok(GalleryMode::All),
            other => Err(Error::InvalidArgument(format!("gallery mode `{other}` (expected unseen|all)"))),
        }
    }
}

/// Sample indices for a retrieval experiment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalSplit {
    pub queries: Vec<usize>,
    pub gallery: Vec<usize>,
}

/// Samples `query_fraction` of each unseen class (at least one) as queries;
/// the remaining unseen samples form the gallery. Both lists are sorted.
pub fn zero_shot_protocol(
    dataset: &AttributedDataset,
    query_fraction: f64,
    mode: GalleryMode,
    seed: u64,
) -> Result<RetrievalSplit> {
    if !(query_fraction > 0.0 && query_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "query fraction must lie in (0, 1), got {query_fraction}"
        )));
    }
    let split = dataset.split();
    if split.unseen().is_empty() {
        return Err(Error::InvalidArgument("split has no unseen classes to retrieve".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let mut queries = Vec::new();
    let mut gallery = Vec::new();
    for &class in split.unseen() {
        let mut members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels()[i] == class).collect();
        if members.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "unseen class {class} needs at least 2 samples, has {}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let take = ((members.len() as f64 * query_fraction).round() as usize).clamp(1, members.len() - 1);
        queries.extend_from_slice(&members[..take]);
        gallery.extend_from_slice(&members[take..]);
    }
    if mode == GalleryMode::All {
        gallery.extend((0..dataset.len()).filter(|&i| split.is_seen(dataset.labels()[i])));
    }
    queries.sort_unstable();
    gallery.sort_unstable();
    Ok(RetrievalSplit { queries, gallery })
}
