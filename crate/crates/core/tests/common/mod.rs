#![allow(dead_code)]

use std::collections::BTreeSet;

use attrhash::backbone::{BackboneKind, FeatureMap};
use attrhash::contrast::build_pair_sets;
use attrhash::model::{Batch, Model};
use attrhash::tensor::Tensor;
use attrhash::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `|a - n| / max(|a|, |n|)` in the Euclidean norm; 0 when both vanish.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// A 6-sample micro-batch over 3 seen classes with random feature maps.
pub fn micro_batch(config: &TrainConfig, seed: u64) -> (Model, Batch) {
    let (h, w, c, k) = (3, 3, 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attrs: Vec<Vec<f64>> = (0..3).map(|_| (0..k).map(|_| rng.random::<f64>()).collect()).collect();
    let class_attributes = Tensor::from_rows(&attrs).unwrap();
    let seen: BTreeSet<usize> = (0..3).collect();
    let model = Model::new(config, (h, w, c), &class_attributes, &seen, &mut rng).unwrap();
    let targets = vec![0, 1, 2, 0, 1, 2];
    let samples = targets
        .iter()
        .map(|_| FeatureMap::new(h, w, c, (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let rows: Vec<&Vec<f64>> = targets.iter().map(|&t| &attrs[t]).collect();
    let attributes = Tensor::from_rows(&rows).unwrap();
    let pairs = build_pair_sets(&attributes, 0.3, 2, seed).unwrap();
    (
        model,
        Batch {
            samples,
            targets,
            attributes,
            pairs,
        },
    )
}

pub fn small_conv() -> TrainConfig {
    TrainConfig {
        bits: 5,
        backbone: BackboneKind::Conv,
        conv_hidden: 3,
        conv_out: 4,
        scorer_hidden: 3,
        ..TrainConfig::default()
    }
}

/// Worst relative error over all learnable tensors of `model` on `batch`.
pub fn model_grad_error(model: &Model, batch: &Batch, config: &TrainConfig) -> (f64, String) {
    let (_, grads) = model.loss_and_grad(batch, config).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|(n, t)| (n.to_string(), t.data().to_vec()))
        .collect();
    let mut worst = (0.0, String::new());
    for (idx, (name, a)) in analytic.iter().enumerate() {
        let base = model.tensors()[idx].1.data().to_vec();
        let numeric = numeric_grad(&base, 1e-5, |x| {
            let mut m = model.clone();
            m.tensors_mut()[idx].1.data_mut().copy_from_slice(x);
            m.losses(batch, config).unwrap().total
        });
        let e = rel_err(a, &numeric);
        if e > worst.0 {
            worst = (e, name.clone());
        }
    }
    worst
}

/// Hamming distance by direct comparison of entries.
pub fn naive_hamming(a: &[i8], b: &[i8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Indices sorted by (distance, index).
pub fn naive_rank(q: &[i8], db: &[Vec<i8>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..db.len()).collect();
    idx.sort_by_key(|&i| (naive_hamming(q, &db[i]), i));
    idx
}

pub fn brute_map(queries: &[Vec<i8>], qlabels: &[usize], db: &[Vec<i8>], dlabels: &[usize], cutoff: Option<usize>) -> f64 {
    let mut sum = 0.0;
    for (q, &ql) in queries.iter().zip(qlabels) {
        let order = naive_rank(q, db);
        let top = cutoff.unwrap_or(db.len()).min(db.len());
        let mut hits = 0usize;
        let mut precisions = 0.0;
        for (r, &i) in order.iter().take(top).enumerate() {
            if dlabels[i] == ql {
                hits += 1;
                precisions += hits as f64 / (r + 1) as f64;
            }
        }
        if hits > 0 {
            sum += precisions / hits as f64;
        }
    }
    sum / queries.len() as f64
}

/// PR points per radius and their trapezoidal area, anchored at recall 0.
pub fn brute_auc(queries: &[Vec<i8>], qlabels: &[usize], db: &[Vec<i8>], dlabels: &[usize], bits: usize) -> f64 {
    let mut points = Vec::new();
    for r in 0..=bits {
        let (mut psum, mut pcount, mut rsum, mut rcount) = (0.0, 0usize, 0.0, 0usize);
        for (q, &ql) in queries.iter().zip(qlabels) {
            let relevant_total = dlabels.iter().filter(|&&l| l == ql).count();
            if relevant_total == 0 {
                continue;
            }
            let within: Vec<usize> = (0..db.len()).filter(|&i| naive_hamming(q, &db[i]) <= r).collect();
            let rel = within.iter().filter(|&&i| dlabels[i] == ql).count();
            if !within.is_empty() {
                psum += rel as f64 / within.len() as f64;
                pcount += 1;
            }
            rsum += rel as f64 / relevant_total as f64;
            rcount += 1;
        }
        if rcount == 0 {
            return 0.0;
        }
        if pcount > 0 {
            points.push((rsum / rcount as f64, psum / pcount as f64));
        }
    }
    points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut area = 0.0;
    let mut prev = (0.0, points[0].1);
    for &p in &points {
        area += (p.0 - prev.0) * (p.1 + prev.1) * 0.5;
        prev = p;
    }
    area
}

pub fn random_codes(rng: &mut ChaCha8Rng, n: usize, bits: usize) -> Vec<Vec<i8>> {
    (0..n)
        .map(|_| (0..bits).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect())
        .collect()
}
