//! Per-attribute-dimension positive/negative sets and the attribute-level
//! contrastive objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{log_sum_exp, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimilarityMode {
    /// `s_ij,d = a_i,d * a_j,d` inside the dimension-`d` term.
    PerDimension,
    /// `s_ij = <a_i, a_j>` in every dimension's term.
    FullVector,
}

/// `positives[d][i]` and `negatives[d][i]` hold sample indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSets {
    samples: usize,
    positives: Vec<Vec<Vec<usize>>>,
    negatives: Vec<Vec<Vec<usize>>>,
    pub epsilon: f64,
    pub neg_count: usize,
    pub seed: u64,
}

impl PairSets {
    /// Assembles sets directly, checking `i` is in neither set of its own and
    /// that positives and negatives are disjoint.
    pub fn from_parts(
        samples: usize,
        positives: Vec<Vec<Vec<usize>>>,
        negatives: Vec<Vec<Vec<usize>>>,
    ) -> Result<Self> {
        if positives.len() != negatives.len() {
            return Err(Error::Shape("positive and negative sets cover different dimensions".into()));
        }
        for (pd, nd) in positives.iter().zip(&negatives) {
            if pd.len() != samples || nd.len() != samples {
                return Err(Error::Shape(format!("pair sets must list {samples} samples per dimension")));
            }
            for (i, (p, n)) in pd.iter().zip(nd).enumerate() {
                if p.iter().chain(n).any(|&j| j == i || j >= samples) {
                    return Err(Error::InvalidArgument(format!(
                        "pair set of sample {i} contains itself or an out-of-range index"
                    )));
                }
                if p.iter().any(|j| n.contains(j)) {
                    return Err(Error::InvalidArgument(format!(
                        "positive and negative sets of sample {i} overlap"
                    )));
                }
            }
        }
        Ok(Self {
            samples,
            positives,
            negatives,
            epsilon: f64::NAN,
            neg_count: 0,
            seed: 0,
        })
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn dims(&self) -> usize {
        self.positives.len()
    }

    pub fn positives(&self, d: usize, i: usize) -> &[usize] {
        &self.positives[d][i]
    }

    pub fn negatives(&self, d: usize, i: usize) -> &[usize] {
        &self.negatives[d][i]
    }

    /// Sets over the sub-collection `indices`, renumbered to positions in
    /// `indices`; members outside the sub-collection are dropped.
    pub fn restrict(&self, indices: &[usize]) -> PairSets {
        let mut local = vec![usize::MAX; self.samples];
        for (pos, &g) in indices.iter().enumerate() {
            local[g] = pos;
        }
        let remap = |set: &[usize]| -> Vec<usize> {
            set.iter().map(|&j| local[j]).filter(|&j| j != usize::MAX).collect()
        };
        let pick = |sets: &Vec<Vec<Vec<usize>>>| -> Vec<Vec<Vec<usize>>> {
            sets.iter()
                .map(|per_d| indices.iter().map(|&g| remap(&per_d[g])).collect())
                .collect()
        };
        PairSets {
            samples: indices.len(),
            positives: pick(&self.positives),
            negatives: pick(&self.negatives),
            epsilon: self.epsilon,
            neg_count: self.neg_count,
            seed: self.seed,
        }
    }
}

/// `S+_d(i) = { j != i : |a_id - a_jd| < epsilon }`; `S-_d(i)` holds up to
/// `neg_count` indices drawn without replacement from the rest.
pub fn build_pair_sets(attributes: &Tensor, epsilon: f64, neg_count: usize, seed: u64) -> Result<PairSets> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
    }
    let (n, dims) = (attributes.rows(), attributes.cols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positives = Vec::with_capacity(dims);
    let mut negatives = Vec::with_capacity(dims);
    for d in 0..dims {
        let mut pd = Vec::with_capacity(n);
        let mut nd = Vec::with_capacity(n);
        for i in 0..n {
            let ai = attributes.row(i)[d];
            let (pos, rest): (Vec<usize>, Vec<usize>) = (0..n)
                .filter(|&j| j != i)
                .partition(|&j| (ai - attributes.row(j)[d]).abs() < epsilon);
            let take = neg_count.min(rest.len());
            let mut neg: Vec<usize> = rand::seq::index::sample(&mut rng, rest.len(), take)
                .into_iter()
                .map(|r| rest[r])
                .collect();
            neg.sort_unstable();
            pd.push(pos);
            nd.push(neg);
        }
        positives.push(pd);
        negatives.push(nd);
    }
    Ok(PairSets {
        samples: n,
        positives,
        negatives,
        epsilon,
        neg_count,
        seed,
    })
}

pub fn pairwise_loss(a_pred: &Tensor, sets: &PairSets, tau: f64, mode: SimilarityMode) -> Result<f64> {
    Ok(pairwise_impl(a_pred, sets, tau, mode, false)?.0)
}

/// Contrastive loss averaged over the `(d, i)` terms with a non-empty
/// positive set, and its gradient w.r.t. `a_pred`.
pub fn pairwise_loss_grad(
    a_pred: &Tensor,
    sets: &PairSets,
    tau: f64,
    mode: SimilarityMode,
) -> Result<(f64, Tensor)> {
    pairwise_impl(a_pred, sets, tau, mode, true)
}

fn pairwise_impl(
    a_pred: &Tensor,
    sets: &PairSets,
    tau: f64,
    mode: SimilarityMode,
    want_grad: bool,
) -> Result<(f64, Tensor)> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")));
    }
    if a_pred.rows() != sets.samples || a_pred.cols() != sets.dims() {
        return Err(Error::Shape(format!(
            "predictions {:?} vs pair sets over {} samples x {} dims",
            a_pred.shape(),
            sets.samples,
            sets.dims()
        )));
    }
    let mut grad = a_pred.zeros_like();
    let mut total = 0.0;
    let mut terms = 0usize;
    let sim = |i: usize, t: usize, d: usize| -> f64 {
        match mode {
            SimilarityMode::PerDimension => a_pred.row(i)[d] * a_pred.row(t)[d] / tau,
            SimilarityMode::FullVector => crate::tensor::dot(a_pred.row(i), a_pred.row(t)) / tau,
        }
    };
    let mut coeffs: Vec<(usize, f64)> = Vec::new();
    for d in 0..sets.dims() {
        for i in 0..sets.samples {
            let pos = &sets.positives[d][i];
            if pos.is_empty() {
                continue;
            }
            let neg = &sets.negatives[d][i];
            let s_pos: Vec<f64> = pos.iter().map(|&j| sim(i, j, d)).collect();
            let s_neg: Vec<f64> = neg.iter().map(|&j| sim(i, j, d)).collect();
            let lse_pos = log_sum_exp(s_pos.iter().copied());
            let lse_all = log_sum_exp(s_pos.iter().chain(&s_neg).copied());
            total += lse_all - lse_pos;
            terms += 1;
            if !want_grad {
                continue;
            }

            coeffs.clear();
            for (&j, &s) in pos.iter().zip(&s_pos) {
                coeffs.push((j, (s - lse_all).exp() - (s - lse_pos).exp()));
            }
            for (&j, &s) in neg.iter().zip(&s_neg) {
                coeffs.push((j, (s - lse_all).exp()));
            }
            for &(j, c) in &coeffs {
                let c = c / tau;
                match mode {
                    SimilarityMode::PerDimension => {
                        let (ai, aj) = (a_pred.row(i)[d], a_pred.row(j)[d]);
                        grad.row_mut(i)[d] += c * aj;
                        grad.row_mut(j)[d] += c * ai;
                    }
                    SimilarityMode::FullVector => {
                        for k in 0..a_pred.cols() {
                            let (ai, aj) = (a_pred.row(i)[k], a_pred.row(j)[k]);
                            grad.row_mut(i)[k] += c * aj;
                            grad.row_mut(j)[k] += c * ai;
                        }
                    }
                }
            }
        }
    }
    if terms == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / terms as f64;
    grad.data_mut().iter_mut().for_each(|g| *g *= scale);
    Ok((total * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn column(values: &[f64]) -> Tensor {
        Tensor::from_rows(&values.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn positive_set_thresholds() {
        let sets = build_pair_sets(&column(&[0.5, 0.55, 0.9]), 0.1, 10, 1).unwrap();
        assert_eq!(sets.positives(0, 0), &[1]);
        assert_eq!(sets.negatives(0, 0), &[2]);
        assert_eq!(sets.positives(0, 2), &[] as &[usize]);
    }

    #[test]
    fn saturated_epsilon_has_no_negatives() {
        let sets = build_pair_sets(&column(&[0.0, 0.3, 1.0]), 5.0, 4, 1).unwrap();
        for i in 0..3 {
            assert_eq!(sets.positives(0, i).len(), 2);
            assert!(sets.negatives(0, i).is_empty());
        }
    }

    #[test]
    fn default_epsilon_positives_unless_gap_reaches_it() {
        let col = [0.0, 0.05, 0.5, 0.95, 1.0];
        let sets = build_pair_sets(&column(&col), 0.9, 10, 3).unwrap();
        for i in 0..col.len() {
            for j in 0..col.len() {
                if i == j {
                    continue;
                }
                let is_pos = sets.positives(0, i).contains(&j);
                assert_eq!(is_pos, (col[i] - col[j]).abs() < 0.9, "({i},{j})");
            }
        }
    }

    #[test]
    fn negatives_are_sampled_without_replacement_and_truncated() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let attrs = Tensor::from_vec(&[30, 2], (0..60).map(|_| rng.random::<f64>()).collect()).unwrap();
        let sets = build_pair_sets(&attrs, 0.2, 5, 8).unwrap();
        for d in 0..2 {
            for i in 0..30 {
                let neg = sets.negatives(d, i);
                let complement = 29 - sets.positives(d, i).len();
                assert_eq!(neg.len(), complement.min(5));
                let mut dedup = neg.to_vec();
                dedup.dedup();
                assert_eq!(dedup.len(), neg.len());
                assert!(neg.iter().all(|j| !sets.positives(d, i).contains(j) && *j != i));
            }
        }
        assert_eq!(sets, build_pair_sets(&attrs, 0.2, 5, 8).unwrap());
        assert!(build_pair_sets(&attrs, 0.0, 5, 8).is_err());
    }

    fn single_term_sets() -> PairSets {
        PairSets::from_parts(3, vec![vec![vec![1], vec![], vec![]]], vec![vec![vec![2], vec![], vec![]]]).unwrap()
    }

    #[test]
    fn hand_evaluated_single_term() {
        let a = column(&[1.0, 1.0, -1.0]);
        let loss = pairwise_loss(&a, &single_term_sets(), 1.0, SimilarityMode::PerDimension).unwrap();
        let expected = -(1f64.exp() / (1f64.exp() + (-1f64).exp())).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.12693).abs() < 1e-5);
    }

    #[test]
    fn no_negatives_gives_zero() {
        let a = column(&[0.2, 0.4, 0.9]);
        let sets = build_pair_sets(&a, 2.0, 3, 0).unwrap();
        assert_eq!(pairwise_loss(&a, &sets, 0.5, SimilarityMode::PerDimension).unwrap(), 0.0);
    }

    #[test]
    fn loss_decreases_as_positive_similarity_grows() {
        let sets = single_term_sets();
        let mut last = f64::INFINITY;
        for pos in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let a = column(&[1.0, pos, -1.0]);
            let l = pairwise_loss(&a, &sets, 1.0, SimilarityMode::PerDimension).unwrap();
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn rejects_bad_temperature_and_overlaps() {
        let a = column(&[1.0, 1.0, -1.0]);
        assert!(pairwise_loss(&a, &single_term_sets(), 0.0, SimilarityMode::PerDimension).is_err());
        assert!(PairSets::from_parts(2, vec![vec![vec![1], vec![]]], vec![vec![vec![1], vec![]]]).is_err());
        assert!(PairSets::from_parts(2, vec![vec![vec![0], vec![]]], vec![vec![vec![], vec![]]]).is_err());
    }

    #[test]
    fn restrict_renumbers() {
        let sets = build_pair_sets(&column(&[0.5, 0.55, 0.9, 0.52]), 0.1, 10, 1).unwrap();
        let sub = sets.restrict(&[3, 0]);
        assert_eq!(sub.samples(), 2);
        assert_eq!(sub.positives(0, 0), &[1]);
        assert_eq!(sub.positives(0, 1), &[0]);
    }

    #[test]
    fn gradient_matches_finite_differences_three_samples_two_dims() {
        let attrs = Tensor::from_rows(&[vec![0.1, 0.8], vec![0.2, 0.3], vec![0.9, 0.35]]).unwrap();
        let sets = build_pair_sets(&attrs, 0.4, 2, 5).unwrap();
        let pred = Tensor::from_rows(&[vec![0.3, -0.7], vec![1.1, 0.4], vec![-0.5, 0.9]]).unwrap();
        for mode in [SimilarityMode::PerDimension, SimilarityMode::FullVector] {
            let (_, grad) = pairwise_loss_grad(&pred, &sets, 0.7, mode).unwrap();
            let h = 1e-6;
            for vi in 0..pred.len() {
                let mut p = pred.clone();
                p.data_mut()[vi] += h;
                let mut m = pred.clone();
                m.data_mut()[vi] -= h;
                let n = (pairwise_loss(&p, &sets, 0.7, mode).unwrap()
                    - pairwise_loss(&m, &sets, 0.7, mode).unwrap())
                    / (2.0 * h);
                let a = grad.data()[vi];
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
                assert!(rel < 1e-4, "{mode:?} entry {vi}: {a} vs {n}");
            }
        }
    }
}
