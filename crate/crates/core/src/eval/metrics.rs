use std::fmt::Write as _;
use std::path::Path;

use super::{rank_packed, CodeDatabase};
use crate::error::{Error, Result};

/// `N` values for the P@N / R@N curves when none are configured.
pub const DEFAULT_N_GRID: &[usize] = &[1, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cutoff {
    Top(usize),
    All,
}

impl Cutoff {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(Cutoff::All);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Cutoff::Top(n)),
            _ => Err(Error::InvalidArgument(format!("cutoff `{s}` must be >= 1 or `all`"))),
        }
    }

    fn limit(self, len: usize) -> usize {
        match self {
            Cutoff::Top(n) => n.min(len),
            Cutoff::All => len,
        }
    }
}

impl std::fmt::Display for Cutoff {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cutoff::Top(n) => write!(f, "{n}"),
            Cutoff::All => f.write_str("all"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanAveragePrecision {
    pub value: f64,
    pub queries: usize,
    /// Queries with no relevant item within the cutoff; each contributes 0.
    pub zero_relevant: usize,
}

/// Mean over queries of average precision over the top-`cutoff` list, where
/// relevance means an identical class label.
pub fn mean_average_precision(queries: &CodeDatabase, db: &CodeDatabase, cutoff: Cutoff) -> Result<MeanAveragePrecision> {
    if queries.is_empty() {
        return Err(Error::InvalidArgument("mean average precision needs at least one query".into()));
    }
    if queries.bits() != db.bits() {
        return Err(Error::Shape(format!(
            "query codes have {} bits, gallery {}",
            queries.bits(),
            db.bits()
        )));
    }
    let limit = cutoff.limit(db.len());
    let mut sum = 0.0;
    let mut zero_relevant = 0;
    for q in 0..queries.len() {
        let label = queries.labels()[q];
        let order = rank_packed(queries.packed(q), db);
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        for (r, &idx) in order[..limit].iter().enumerate() {
            if db.labels()[idx] == label {
                hits += 1;
                precision_sum += hits as f64 / (r + 1) as f64;
            }
        }
        if hits == 0 {
            zero_relevant += 1;
        } else {
            sum += precision_sum / hits as f64;
        }
    }
    Ok(MeanAveragePrecision {
        value: sum / queries.len() as f64,
        queries: queries.len(),
        zero_relevant,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub radius: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curves {
    /// One point per Hamming radius with at least one retrieved item.
    pub pr: Vec<PrPoint>,
    pub precision_at_n: Vec<(usize, f64)>,
    pub recall_at_n: Vec<(usize, f64)>,
    /// Trapezoidal area under the recall-sorted PR points, anchored at
    /// recall 0 with the first point's precision.
    pub auc: f64,
    /// Queries with at least one relevant gallery item; only these are averaged.
    pub evaluated_queries: usize,
    /// Set when no query has a relevant item; all curves are then zero.
    pub degenerate: bool,
}

/// PR curve over Hamming radius `0..=bits`, P@N and R@N over `n_grid`, and the PR AUC.
pub fn curves(queries: &CodeDatabase, db: &CodeDatabase, n_grid: &[usize]) -> Result<Curves> {
    if queries.bits() != db.bits() {
        return Err(Error::Shape(format!(
            "query codes have {} bits, gallery {}",
            queries.bits(),
            db.bits()
        )));
    }
    let bits = db.bits();
    let mut precision_sum = vec![0.0; bits + 1];
    let mut precision_count = vec![0usize; bits + 1];
    let mut recall_sum = vec![0.0; bits + 1];
    let mut pan = vec![0.0; n_grid.len()];
    let mut ran = vec![0.0; n_grid.len()];
    let mut evaluated = 0usize;

    for q in 0..queries.len() {
        let label = queries.labels()[q];
        let total_relevant = db.labels().iter().filter(|&&l| l == label).count();
        if total_relevant == 0 {
            continue;
        }
        evaluated += 1;

        let mut all_at = vec![0usize; bits + 1];
        let mut rel_at = vec![0usize; bits + 1];
        for i in 0..db.len() {
            let d = super::popcount_distance(db.packed(i), queries.packed(q)) as usize;
            all_at[d] += 1;
            if db.labels()[i] == label {
                rel_at[d] += 1;
            }
        }
        let (mut retrieved, mut relevant) = (0usize, 0usize);
        for r in 0..=bits {
            retrieved += all_at[r];
            relevant += rel_at[r];
            if retrieved > 0 {
                precision_sum[r] += relevant as f64 / retrieved as f64;
                precision_count[r] += 1;
            }
            recall_sum[r] += relevant as f64 / total_relevant as f64;
        }

        let order = rank_packed(queries.packed(q), db);
        for (g, &n) in n_grid.iter().enumerate() {
            let top = n.min(db.len());
            let hits = order[..top].iter().filter(|&&i| db.labels()[i] == label).count();
            if top > 0 {
                pan[g] += hits as f64 / top as f64;
            }
            ran[g] += hits as f64 / total_relevant as f64;
        }
    }

    if evaluated == 0 {
        return Ok(Curves {
            pr: (0..=bits)
                .map(|radius| PrPoint {
                    radius,
                    precision: 0.0,
                    recall: 0.0,
                })
                .collect(),
            precision_at_n: n_grid.iter().map(|&n| (n, 0.0)).collect(),
            recall_at_n: n_grid.iter().map(|&n| (n, 0.0)).collect(),
            auc: 0.0,
            evaluated_queries: 0,
            degenerate: true,
        });
    }

    let pr: Vec<PrPoint> = (0..=bits)
        .filter(|&r| precision_count[r] > 0)
        .map(|r| PrPoint {
            radius: r,
            precision: precision_sum[r] / precision_count[r] as f64,
            recall: recall_sum[r] / evaluated as f64,
        })
        .collect();
    let auc = pr_auc(&pr);
    let scale = 1.0 / evaluated as f64;
    Ok(Curves {
        pr,
        precision_at_n: n_grid.iter().zip(&pan).map(|(&n, &p)| (n, p * scale)).collect(),
        recall_at_n: n_grid.iter().zip(&ran).map(|(&n, &r)| (n, r * scale)).collect(),
        auc,
        evaluated_queries: evaluated,
        degenerate: false,
    })
}

fn pr_auc(points: &[PrPoint]) -> f64 {
    let mut sorted: Vec<(f64, f64)> = points.iter().map(|p| (p.recall, p.precision)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let Some(&(_, first_precision)) = sorted.first() else {
        return 0.0;
    };
    let mut auc = 0.0;
    let (mut prev_r, mut prev_p) = (0.0, first_precision);
    for &(r, p) in &sorted {
        auc += (r - prev_r) * (p + prev_p) / 2.0;
        prev_r = r;
        prev_p = p;
    }
    auc
}

impl Curves {
    /// Writes `pr.csv`, `pan.csv` and `ran.csv` into `dir`.
    pub fn write_csv(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mut pr = String::from("radius,precision,recall\n");
        for p in &self.pr {
            let _ = writeln!(pr, "{},{},{}", p.radius, p.precision, p.recall);
        }
        let mut pan = String::from("n,precision\n");
        for (n, p) in &self.precision_at_n {
            let _ = writeln!(pan, "{n},{p}");
        }
        let mut ran = String::from("n,recall\n");
        for (n, r) in &self.recall_at_n {
            let _ = writeln!(ran, "{n},{r}");
        }
        for (name, text) in [("pr.csv", pr), ("pan.csv", pan), ("ran.csv", ran)] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// PR points sorted by recall with precision replaced by the running
    /// maximum from the right, so precision is non-increasing in recall.
    pub fn interpolated_pr(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
        let mut sorted = points.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut best = f64::NEG_INFINITY;
        for p in sorted.iter_mut().rev() {
            best = best.max(p.1);
            p.1 = best;
        }
        sorted
    }
}
