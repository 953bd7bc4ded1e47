use std::fmt::Write as _;
use std::path::Path;

use super::CodeDatabase;
use crate::error::{Error, Result};
use crate::tensor::{norm, Tensor};

/// Intra- and inter-class distance statistics of an embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparabilityReport {
    /// Left edge of each histogram bin; for Hamming codes these are `0..=l`.
    pub bin_edges: Vec<f64>,
    /// Normalized to sum 1, or all zero when there are no intra-class pairs.
    pub intra_histogram: Vec<f64>,
    pub inter_histogram: Vec<f64>,
    pub intra_pairs: usize,
    pub inter_pairs: usize,
    pub mean_intra: Option<f64>,
    pub mean_inter: Option<f64>,
    /// `mean_inter - mean_intra`; `None` when either side has no pairs.
    pub separability: Option<f64>,
    /// Minimum distance between classes over the maximum distance of a
    /// sample to its class mean. `f64::INFINITY` when the denominator is 0,
    /// `None` with fewer than two classes.
    pub theorem_ratio: Option<f64>,
}

impl SeparabilityReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("distance,intra,inter\n");
        for ((e, a), b) in self.bin_edges.iter().zip(&self.intra_histogram).zip(&self.inter_histogram) {
            let _ = writeln!(out, "{e},{a},{b}");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// `key=value` lines; absent statistics are written as `na`.
    pub fn summary(&self) -> String {
        let show = |v: Option<f64>| v.map_or_else(|| "na".to_string(), |v| v.to_string());
        format!(
            "mean_intra={}\nmean_inter={}\nseparability={}\ntheorem_ratio={}\n",
            show(self.mean_intra),
            show(self.mean_inter),
            show(self.separability),
            show(self.theorem_ratio)
        )
    }
}

fn class_means(points: &[Vec<f64>], labels: &[usize]) -> Vec<(usize, Vec<f64>)> {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes
        .into_iter()
        .map(|c| {
            let dim = points.first().map_or(0, Vec::len);
            let mut mean = vec![0.0; dim];
            let mut count = 0usize;
            for (p, _) in points.iter().zip(labels).filter(|(_, &l)| l == c) {
                mean.iter_mut().zip(p).for_each(|(m, v)| *m += v);
                count += 1;
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            (c, mean)
        })
        .collect()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
}

/// `separation` supplies the class-to-class distances for the ratio
/// numerator when given; otherwise class means are compared.
fn theorem_ratio(points: &[Vec<f64>], labels: &[usize], separation: Option<&Tensor>) -> Result<Option<f64>> {
    let means = class_means(points, labels);
    if means.len() < 2 {
        return Ok(None);
    }
    let mut numerator = f64::INFINITY;
    for (i, (ca, ma)) in means.iter().enumerate() {
        for (cb, mb) in &means[i + 1..] {
            let d = match separation {
                Some(attrs) => {
                    if *cb >= attrs.rows() {
                        return Err(Error::Shape(format!("class {cb} has no attribute row")));
                    }
                    euclid(attrs.row(*ca), attrs.row(*cb))
                }
                None => euclid(ma, mb),
            };
            numerator = numerator.min(d);
        }
    }
    let mut denominator = 0.0f64;
    for (p, l) in points.iter().zip(labels) {
        let mean = &means.iter().find(|(c, _)| c == l).expect("class present").1;
        denominator = denominator.max(euclid(p, mean));
    }
    Ok(Some(if denominator == 0.0 { f64::INFINITY } else { numerator / denominator }))
}

fn finish(bins: Vec<f64>, mut intra: Vec<f64>, mut inter: Vec<f64>, sums: [f64; 2], pairs: [usize; 2], ratio: Option<f64>) -> SeparabilityReport {
    for (hist, n) in [(&mut intra, pairs[0]), (&mut inter, pairs[1])] {
        if n > 0 {
            hist.iter_mut().for_each(|h| *h /= n as f64);
        }
    }
    let mean_intra = (pairs[0] > 0).then(|| sums[0] / pairs[0] as f64);
    let mean_inter = (pairs[1] > 0).then(|| sums[1] / pairs[1] as f64);
    SeparabilityReport {
        bin_edges: bins,
        intra_histogram: intra,
        inter_histogram: inter,
        intra_pairs: pairs[0],
        inter_pairs: pairs[1],
        mean_intra,
        mean_inter,
        separability: mean_intra.zip(mean_inter).map(|(a, e)| e - a),
        theorem_ratio: ratio,
    }
}

/// Hamming-distance statistics of a code database. `class_attributes`, when
/// given, supplies the ratio numerator as the smallest attribute distance
/// between classes present in `db`.
pub fn separability(db: &CodeDatabase, class_attributes: Option<&Tensor>) -> Result<SeparabilityReport> {
    let bits = db.bits();
    let mut intra = vec![0.0; bits + 1];
    let mut inter = vec![0.0; bits + 1];
    let mut sums = [0.0; 2];
    let mut pairs = [0usize; 2];
    let labels = db.labels();
    for i in 0..db.len() {
        for j in i + 1..db.len() {
            let d = db.distance(i, j) as usize;
            let side = usize::from(labels[i] != labels[j]);
            if side == 0 {
                intra[d] += 1.0;
            } else {
                inter[d] += 1.0;
            }
            sums[side] += d as f64;
            pairs[side] += 1;
        }
    }
    let points: Vec<Vec<f64>> = db.codes().iter().map(|c| c.as_f64()).collect();
    let ratio = theorem_ratio(&points, labels, class_attributes)?;
    let bins = (0..=bits).map(|b| b as f64).collect();
    Ok(finish(bins, intra, inter, sums, pairs, ratio))
}

/// Euclidean-distance statistics of real-valued points (e.g. attribute
/// vectors), histogrammed into `bins` equal-width bins over `[0, max]`.
pub fn separability_real(points: &Tensor, labels: &[usize], bins: usize) -> Result<SeparabilityReport> {
    if points.rows() != labels.len() {
        return Err(Error::Shape(format!("{} points for {} labels", points.rows(), labels.len())));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let rows: Vec<Vec<f64>> = points.iter_rows().map(<[f64]>::to_vec).collect();
    let mut dists = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            dists.push((euclid(&rows[i], &rows[j]), labels[i] != labels[j]));
        }
    }
    let max = dists.iter().map(|d| d.0).fold(0.0, f64::max);
    let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
    let mut intra = vec![0.0; bins];
    let mut inter = vec![0.0; bins];
    let mut sums = [0.0; 2];
    let mut pairs = [0usize; 2];
    for &(d, cross) in &dists {
        let b = ((d / width) as usize).min(bins - 1);
        let side = usize::from(cross);
        if cross {
            inter[b] += 1.0;
        } else {
            intra[b] += 1.0;
        }
        sums[side] += d;
        pairs[side] += 1;
    }
    let ratio = theorem_ratio(&rows, labels, None)?;
    let edges = (0..bins).map(|b| b as f64 * width).collect();
    Ok(finish(edges, intra, inter, sums, pairs, ratio))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashing::HashCode;

    fn db(codes: &[&[i8]], labels: &[usize]) -> CodeDatabase {
        let codes: Vec<HashCode> = codes.iter().map(|c| HashCode::new(c.to_vec()).unwrap()).collect();
        CodeDatabase::from_codes(&codes, labels, codes[0].len()).unwrap()
    }

    #[test]
    fn duplicated_opposite_classes() {
        let d = db(&[&[1, 1], &[1, 1], &[-1, -1], &[-1, -1]], &[0, 0, 1, 1]);
        let r = separability(&d, None).unwrap();
        assert_eq!(r.intra_pairs + r.inter_pairs, 6);
        assert_eq!(r.mean_intra, Some(0.0));
        assert_eq!(r.mean_inter, Some(2.0));
        assert_eq!(r.separability, Some(2.0));
        assert_eq!(r.theorem_ratio, Some(f64::INFINITY));
        assert_eq!(r.intra_histogram, vec![1.0, 0.0, 0.0]);
        assert_eq!(r.inter_histogram, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn one_sample_per_class_has_no_intra_stats() {
        let d = db(&[&[1, 1], &[-1, 1]], &[0, 1]);
        let r = separability(&d, None).unwrap();
        assert_eq!(r.intra_pairs, 0);
        assert_eq!(r.mean_intra, None);
        assert_eq!(r.separability, None);
        assert!(r.intra_histogram.iter().all(|&h| h == 0.0));
        assert!((r.inter_histogram.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_has_no_inter_stats() {
        let d = db(&[&[1, 1], &[-1, 1]], &[3, 3]);
        let r = separability(&d, None).unwrap();
        assert_eq!(r.mean_inter, None);
        assert_eq!(r.theorem_ratio, None);
    }

    #[test]
    fn ratio_uses_class_attributes() {
        let d = db(&[&[1, 1], &[1, -1], &[-1, -1], &[-1, -1]], &[0, 0, 1, 1]);
        let attrs = Tensor::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        let r = separability(&d, Some(&attrs)).unwrap();
        // class 0 mean is (1, 0), each member is at distance 1
        assert!((r.theorem_ratio.unwrap() - 5.0).abs() < 1e-12);
        let codes_only = separability(&d, None).unwrap();
        assert!((codes_only.theorem_ratio.unwrap() - 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariant() {
        let a = db(&[&[1, 1, -1], &[1, -1, -1], &[-1, -1, 1], &[1, 1, 1]], &[0, 0, 1, 1]);
        let b = db(&[&[1, 1, 1], &[-1, -1, 1], &[1, -1, -1], &[1, 1, -1]], &[1, 1, 0, 0]);
        assert_eq!(separability(&a, None).unwrap(), separability(&b, None).unwrap());
    }

    #[test]
    fn real_points() {
        let p = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![10.0], vec![11.0]]).unwrap();
        let r = separability_real(&p, &[0, 0, 1, 1], 11).unwrap();
        assert_eq!(r.mean_intra, Some(1.0));
        assert_eq!(r.mean_inter, Some(10.0));
        assert!((r.intra_histogram.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((r.theorem_ratio.unwrap() - 20.0).abs() < 1e-12);
    }
}
