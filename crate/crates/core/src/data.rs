//! Attributed datasets, the on-disk layout, seen/unseen class splits and a
//! synthetic generator whose attributes are recoverable by construction.
//!
//! Directory layout:
//!
//! * `features.bin`: `b"CMAE"`, then `N, H, W, Chan` as `u32` LE, then
//!   `N*H*W*Chan` `f32` LE values in sample-major, row-major, channel-last order.
//! * `labels.csv`: one class id per line.
//! * `attributes.csv`: one row per class, `K` comma-separated reals.
//! * `split.txt` (optional): seen ids on line 1, unseen ids on line 2, and
//!   optionally the split seed on line 3.
//! * `attribute_names.txt` (optional): one attribute name per line.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FEATURES_MAGIC: &[u8; 4] = b"CMAE";
const HEADER_LEN: usize = 4 + 4 * 4;

/// Disjoint partition of the class ids into seen (training) and unseen classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    seen: BTreeSet<usize>,
    unseen: BTreeSet<usize>,
    seed: u64,
}

impl SplitSpec {
    pub fn new(
        seen: BTreeSet<usize>,
        unseen: BTreeSet<usize>,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if let Some(c) = seen.intersection(&unseen).next() {
            return Err(Error::InvalidArgument(format!(
                "class {c} is both seen and unseen"
            )));
        }
        if let Some(c) = seen.iter().chain(&unseen).find(|&&c| c >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "split references class {c}, but there are only {num_classes} classes"
            )));
        }
        if seen.len() + unseen.len() != num_classes {
            return Err(Error::InvalidArgument(format!(
                "split covers {} of {num_classes} classes",
                seen.len() + unseen.len()
            )));
        }
        Ok(Self { seen, unseen, seed })
    }

    pub fn all_seen(num_classes: usize) -> Self {
        Self {
            seen: (0..num_classes).collect(),
            unseen: BTreeSet::new(),
            seed: 0,
        }
    }

    pub fn seen(&self) -> &BTreeSet<usize> {
        &self.seen
    }

    pub fn unseen(&self) -> &BTreeSet<usize> {
        &self.unseen
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_seen(&self, class: usize) -> bool {
        self.seen.contains(&class)
    }

    pub fn num_classes(&self) -> usize {
        self.seen.len() + self.unseen.len()
    }

    /// Text form used by `split.txt`.
    pub fn to_text(&self) -> String {
        fn join(s: &BTreeSet<usize>) -> String {
            s.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
        }
        format!("{}\n{}\n{}\n", join(&self.seen), join(&self.unseen), self.seed)
    }

    pub fn parse(text: &str, num_classes: usize, file: &Path) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < 2 {
            return Err(Error::parse(
                file,
                Some(lines.len() + 1),
                "expected a seen line and an unseen line",
            ));
        }
        let parse_ids = |line: &str, lineno: usize| -> Result<BTreeSet<usize>> {
            line.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<usize>()
                        .map_err(|_| Error::parse(file, Some(lineno), format!("bad class id `{s}`")))
                })
                .collect()
        };
        let seen = parse_ids(lines[0], 1)?;
        let unseen = parse_ids(lines[1], 2)?;
        let seed = match lines.get(2).map(|l| l.trim()).filter(|l| !l.is_empty()) {
            Some(s) => s
                .parse::<u64>()
                .map_err(|_| Error::parse(file, Some(3), format!("bad split seed `{s}`")))?,
            None => 0,
        };
        SplitSpec::new(seen, unseen, num_classes, seed)
            .map_err(|e| Error::parse(file, None, e.to_string()))
    }
}

/// A collection of feature maps with class labels and class-level attributes.
///
/// The attribute vector of sample `i` is `class_attributes[labels[i]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributedDataset {
    height: usize,
    width: usize,
    channels: usize,
    features: Vec<f32>,
    labels: Vec<usize>,
    class_attributes: Tensor,
    attribute_names: Option<Vec<String>>,
    split: SplitSpec,
}

impl AttributedDataset {
    /// `features` holds `labels.len()` maps of `height x width x channels`.
    pub fn new(
        (height, width, channels): (usize, usize, usize),
        features: Vec<f32>,
        labels: Vec<usize>,
        class_attributes: Tensor,
        split: SplitSpec,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("dataset needs at least one sample".into()));
        }
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape("feature maps must have non-zero dimensions".into()));
        }
        if features.len() != labels.len() * height * width * channels {
            return Err(Error::Shape(format!(
                "{} feature values for {} samples of {height}x{width}x{channels}",
                features.len(),
                labels.len()
            )));
        }
        if class_attributes.shape().len() != 2 || class_attributes.cols() == 0 {
            return Err(Error::Shape("class attribute matrix must be numClasses x K with K >= 1".into()));
        }
        if !class_attributes.is_finite() {
            return Err(Error::InvalidArgument("class attributes must be finite".into()));
        }
        let num_classes = class_attributes.rows();
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label out of range: {l} (numClasses = {num_classes})"
            )));
        }
        if split.num_classes() != num_classes {
            return Err(Error::InvalidArgument(format!(
                "split covers {} classes, dataset has {num_classes}",
                split.num_classes()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            features,
            labels,
            class_attributes,
            attribute_names: None,
            split,
        })
    }

    pub fn with_attribute_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_attributes() {
            return Err(Error::Shape(format!(
                "{} attribute names for K = {}",
                names.len(),
                self.num_attributes()
            )));
        }
        self.attribute_names = Some(names);
        Ok(self)
    }

    pub fn with_split(mut self, split: SplitSpec) -> Result<Self> {
        if split.num_classes() != self.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "split covers {} classes, dataset has {}",
                split.num_classes(),
                self.num_classes()
            )));
        }
        self.split = split;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn map_shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn num_classes(&self) -> usize {
        self.class_attributes.rows()
    }

    pub fn num_attributes(&self) -> usize {
        self.class_attributes.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let len = self.height * self.width * self.channels;
        &self.features[i * len..(i + 1) * len]
    }

    pub fn class_attributes(&self) -> &Tensor {
        &self.class_attributes
    }

    pub fn attributes_of(&self, i: usize) -> &[f64] {
        self.class_attributes.row(self.labels[i])
    }

    pub fn attribute_names(&self) -> Option<&[String]> {
        self.attribute_names.as_deref()
    }

    pub fn split(&self) -> &SplitSpec {
        &self.split
    }

    /// Sample indices whose class is in `classes`, in dataset order.
    pub fn indices_of_classes(&self, classes: &BTreeSet<usize>) -> Vec<usize> {
        (0..self.len()).filter(|&i| classes.contains(&self.labels[i])).collect()
    }
}

/// Marks `round(ratio * numClasses)` classes (ties half-up) unseen, chosen by a seeded shuffle.
pub fn make_split(dataset: &AttributedDataset, unseen_ratio: f64, seed: u64) -> Result<SplitSpec> {
    split_classes(dataset.num_classes(), unseen_ratio, seed)
}

pub fn split_classes(num_classes: usize, unseen_ratio: f64, seed: u64) -> Result<SplitSpec> {
    if !(0.0..=1.0).contains(&unseen_ratio) {
        return Err(Error::InvalidArgument(format!(
            "unseen ratio {unseen_ratio} outside [0, 1]"
        )));
    }
    let num_unseen = ((unseen_ratio * num_classes as f64) + 0.5).floor() as usize;
    let num_unseen = num_unseen.min(num_classes);
    let mut order: Vec<usize> = (0..num_classes).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let unseen: BTreeSet<usize> = order[..num_unseen].iter().copied().collect();
    let seen: BTreeSet<usize> = order[num_unseen..].iter().copied().collect();
    SplitSpec::new(seen, unseen, num_classes, seed)
}

/// Shape of the maps produced by [`make_synthetic_with`].
#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub num_attributes: usize,
    pub per_class: usize,
    pub noise: f64,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
}

/// Synthetic 2x2 maps with `Chan = K`; see [`make_synthetic_with`].
pub fn make_synthetic(
    num_classes: usize,
    num_attributes: usize,
    per_class: usize,
    noise: f64,
    seed: u64,
) -> Result<AttributedDataset> {
    make_synthetic_with(SyntheticSpec {
        num_classes,
        num_attributes,
        per_class,
        noise,
        seed,
        height: 2,
        width: 2,
    })
}

/// Every spatial cell of a class-`c` sample is `a_c + noise * N(0, 1)`.
///
/// Attributes are drawn as `f32` so that with zero noise the stored cells
/// reproduce them bit for bit. Samples are ordered class-major.
pub fn make_synthetic_with(spec: SyntheticSpec) -> Result<AttributedDataset> {
    if spec.num_classes == 0 || spec.num_attributes == 0 || spec.per_class == 0 {
        return Err(Error::InvalidArgument("synthetic counts must be >= 1".into()));
    }
    if spec.height == 0 || spec.width == 0 {
        return Err(Error::InvalidArgument("synthetic maps must be at least 1x1".into()));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise {} must be >= 0", spec.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.num_attributes;
    let attributes: Vec<f64> = (0..spec.num_classes * k)
        .map(|_| rng.random::<f32>() as f64)
        .collect();
    let class_attributes = Tensor::from_vec(&[spec.num_classes, k], attributes)?;

    let cells = spec.height * spec.width;
    let mut features = Vec::with_capacity(spec.num_classes * spec.per_class * cells * k);
    let mut labels = Vec::with_capacity(spec.num_classes * spec.per_class);
    for c in 0..spec.num_classes {
        let a = class_attributes.row(c);
        for _ in 0..spec.per_class {
            for _ in 0..cells {
                for &v in a {
                    let eps: f64 = if spec.noise > 0.0 {
                        spec.noise * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    };
                    features.push((v + eps) as f32);
                }
            }
            labels.push(c);
        }
    }
    AttributedDataset::new(
        (spec.height, spec.width, k),
        features,
        labels,
        class_attributes,
        SplitSpec::all_seen(spec.num_classes),
    )
}

pub fn load_dataset(root: impl AsRef<Path>) -> Result<AttributedDataset> {
    let root = root.as_ref();

    let features_path = root.join("features.bin");
    let bytes = fs::read(&features_path).map_err(|e| Error::io(&features_path, e))?;
    if bytes.len() < HEADER_LEN || &bytes[..4] != FEATURES_MAGIC {
        return Err(Error::parse(&features_path, None, "malformed header: missing CMAE magic"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (n, h, w, chan) = (dim(0), dim(1), dim(2), dim(3));
    let count = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(chan))
        .ok_or_else(|| Error::parse(&features_path, None, "malformed header: size overflow"))?;
    if bytes.len() != HEADER_LEN + 4 * count {
        return Err(Error::parse(
            &features_path,
            None,
            format!(
                "malformed header: {n}x{h}x{w}x{chan} needs {} payload bytes, found {}",
                4 * count,
                bytes.len() - HEADER_LEN
            ),
        ));
    }
    let features: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let attributes_path = root.join("attributes.csv");
    let text = read_text(&attributes_path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in numbered_lines(&text) {
        let row = line
            .split(',')
            .map(|s| {
                let s = s.trim();
                let v: f64 = s.parse().map_err(|_| {
                    Error::parse(&attributes_path, Some(lineno), format!("bad attribute value `{s}`"))
                })?;
                if !v.is_finite() {
                    return Err(Error::parse(&attributes_path, Some(lineno), "non-finite attribute"));
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::parse(
                    &attributes_path,
                    Some(lineno),
                    format!("row has {} attributes, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(&attributes_path, None, "no class rows"));
    }
    let num_classes = rows.len();
    let class_attributes = Tensor::from_rows(&rows)?;

    let labels_path = root.join("labels.csv");
    let text = read_text(&labels_path)?;
    let mut labels = Vec::new();
    for (lineno, line) in numbered_lines(&text) {
        let l: usize = line
            .trim()
            .parse()
            .map_err(|_| Error::parse(&labels_path, Some(lineno), format!("bad label `{}`", line.trim())))?;
        if l >= num_classes {
            return Err(Error::parse(
                &labels_path,
                Some(lineno),
                format!("label out of range: {l} (numClasses = {num_classes})"),
            ));
        }
        labels.push(l);
    }
    if labels.len() != n {
        return Err(Error::parse(
            &labels_path,
            None,
            format!("row-count mismatch: {} labels for {n} samples", labels.len()),
        ));
    }

    let split_path = root.join("split.txt");
    let split = if split_path.exists() {
        SplitSpec::parse(&read_text(&split_path)?, num_classes, &split_path)?
    } else {
        SplitSpec::all_seen(num_classes)
    };

    let mut dataset = AttributedDataset::new((h, w, chan), features, labels, class_attributes, split)
        .map_err(|e| Error::parse(&features_path, None, e.to_string()))?;

    let names_path = root.join("attribute_names.txt");
    if names_path.exists() {
        let names: Vec<String> = read_text(&names_path)?.lines().map(str::to_owned).collect();
        dataset = dataset
            .with_attribute_names(names)
            .map_err(|e| Error::parse(&names_path, None, e.to_string()))?;
    }
    Ok(dataset)
}

pub fn save_dataset(dataset: &AttributedDataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;

    let mut bytes = Vec::with_capacity(HEADER_LEN + 4 * dataset.features.len());
    bytes.extend_from_slice(FEATURES_MAGIC);
    for d in [dataset.len(), dataset.height, dataset.width, dataset.channels] {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &dataset.features {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_file(&root.join("features.bin"), &bytes)?;

    let labels: String = dataset.labels.iter().map(|l| format!("{l}\n")).collect();
    write_file(&root.join("labels.csv"), labels.as_bytes())?;

    let mut attrs = String::new();
    for row in dataset.class_attributes.iter_rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        attrs.push_str(&line.join(","));
        attrs.push('\n');
    }
    write_file(&root.join("attributes.csv"), attrs.as_bytes())?;

    write_file(&root.join("split.txt"), dataset.split.to_text().as_bytes())?;

    if let Some(names) = &dataset.attribute_names {
        let text: String = names.iter().map(|n| format!("{n}\n")).collect();
        write_file(&root.join("attribute_names.txt"), text.as_bytes())?;
    }
    Ok(())
}

pub fn save_split(split: &SplitSpec, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), split.to_text().as_bytes())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Non-blank lines with their 1-based line numbers.
fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(dir: &Path, features: &[u8], labels: &str, attributes: &str) {
        fs::write(dir.join("features.bin"), features).unwrap();
        fs::write(dir.join("labels.csv"), labels).unwrap();
        fs::write(dir.join("attributes.csv"), attributes).unwrap();
    }

    fn header(n: u32, h: u32, w: u32, c: u32) -> Vec<u8> {
        let mut b = FEATURES_MAGIC.to_vec();
        for d in [n, h, w, c] {
            b.extend_from_slice(&d.to_le_bytes());
        }
        b
    }

    #[test]
    fn minimal_directory_loads() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = header(2, 1, 1, 1);
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        bytes.extend_from_slice(&(-0.5f32).to_le_bytes());
        write_raw(dir.path(), &bytes, "0\n1\n", "0.1\n0.9\n");
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.num_attributes(), 1);
        assert_eq!(ds.attributes_of(1), &[0.9]);
        assert_eq!(ds.split(), &SplitSpec::all_seen(2));
    }

    #[test]
    fn label_out_of_range_is_rejected_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = header(2, 1, 1, 1);
        bytes.extend_from_slice(&[0u8; 8]);
        write_raw(dir.path(), &bytes, "0\n5\n", "0\n0.5\n1\n");
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("label out of range"), "{err}");
        assert!(err.contains("labels.csv:2"), "{err}");
    }

    #[test]
    fn malformed_header_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        write_raw(dir.path(), b"XXXX0000000000000000", "0\n", "0\n");
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("features.bin") && err.contains("malformed header"), "{err}");

        let mut bytes = header(2, 1, 1, 1);
        bytes.extend_from_slice(&[0u8; 4]);
        write_raw(dir.path(), &bytes, "0\n0\n", "0\n");
        assert!(load_dataset(dir.path()).unwrap_err().to_string().contains("malformed header"));

        let mut bytes = header(2, 1, 1, 1);
        bytes.extend_from_slice(&[0u8; 8]);
        write_raw(dir.path(), &bytes, "0\n", "0\n");
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("row-count mismatch"), "{err}");
    }

    #[test]
    fn non_finite_attribute_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = header(1, 1, 1, 1);
        bytes.extend_from_slice(&[0u8; 4]);
        write_raw(dir.path(), &bytes, "0\n", "0.5,NaN\n");
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("attributes.csv:1") && err.contains("non-finite"), "{err}");
    }

    #[test]
    fn save_creates_directory_and_writes_magic() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("nested/out");
        let ds = make_synthetic(2, 3, 2, 0.1, 1).unwrap();
        save_dataset(&ds, &target).unwrap();
        let bytes = fs::read(target.join("features.bin")).unwrap();
        assert_eq!(&bytes[..4], b"CMAE");
        assert_eq!(load_dataset(&target).unwrap(), ds);
    }

    #[test]
    fn four_sample_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let features = vec![0.1f32, -3.25e-7, f32::MAX, -0.0];
        let attrs = Tensor::from_rows(&[vec![0.1, 1.0 / 3.0], vec![2.5e-300, -0.0]]).unwrap();
        let split = SplitSpec::new([0].into(), [1].into(), 2, 11).unwrap();
        let ds = AttributedDataset::new((1, 1, 1), features, vec![0, 1, 1, 0], attrs, split)
            .unwrap()
            .with_attribute_names(vec!["black leg".into(), "stripes".into()])
            .unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        let bits = |d: &AttributedDataset| d.features().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&ds));
        let abits = |d: &AttributedDataset| {
            d.class_attributes().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(abits(&back), abits(&ds));
    }

    #[test]
    fn split_counts_and_determinism() {
        let s = split_classes(10, 0.0, 3).unwrap();
        assert!(s.unseen().is_empty());
        let s = split_classes(10, 0.2, 7).unwrap();
        assert_eq!(s.unseen().len(), 2);
        assert_eq!(s.seen().len(), 8);
        assert!(s.seen().is_disjoint(s.unseen()));
        assert_eq!(s, split_classes(10, 0.2, 7).unwrap());
        // 0.25 * 10 = 2.5 rounds half-up
        assert_eq!(split_classes(10, 0.25, 1).unwrap().unseen().len(), 3);
        assert!(split_classes(10, 1.5, 1).is_err());
    }

    #[test]
    fn split_text_round_trip() {
        let s = split_classes(6, 0.5, 9).unwrap();
        let back = SplitSpec::parse(&s.to_text(), 6, Path::new("split.txt")).unwrap();
        assert_eq!(back, s);
        let two_lines = SplitSpec::parse("0,1\n2\n", 3, Path::new("split.txt")).unwrap();
        assert_eq!(two_lines.unseen().len(), 1);
        assert!(SplitSpec::parse("0,1\n1,2\n", 3, Path::new("split.txt")).is_err());
    }

    #[test]
    fn synthetic_counts_and_seed_sensitivity() {
        let ds = make_synthetic(4, 3, 5, 0.1, 1).unwrap();
        assert_eq!(ds.len(), 20);
        for c in 0..4 {
            assert_eq!(ds.labels().iter().filter(|&&l| l == c).count(), 5);
        }
        let other = make_synthetic(4, 3, 5, 0.1, 2).unwrap();
        assert_ne!(ds.class_attributes(), other.class_attributes());
    }

    #[test]
    fn noiseless_synthetic_reconstructs_attributes() {
        let ds = make_synthetic(3, 4, 3, 0.0, 5).unwrap();
        let (h, w, k) = ds.map_shape();
        for i in 0..ds.len() {
            let first = ds.labels().iter().position(|&l| l == ds.labels()[i]).unwrap();
            assert_eq!(ds.sample(i), ds.sample(first));
            let mut mean = vec![0.0f64; k];
            for cell in ds.sample(i).chunks(k) {
                for (m, &v) in mean.iter_mut().zip(cell) {
                    *m += v as f64 / (h * w) as f64;
                }
            }
            assert_eq!(mean, ds.attributes_of(i));
        }
    }
}
