//! Correlation-based feature subset selection over pooled dimensions.
//!
//! Correlations are symmetric uncertainties between features discretized into ten
//! equal-frequency bins (and the class label). Subsets are scored with the merit
//!
//! ```text
//! merit(S) = k * mean(r_cf) / sqrt(k + k (k - 1) * mean(r_ff)),   k = |S|
//! ```
//!
//! and searched best-first from the empty set, stopping after five consecutive
//! expansions that fail to improve the best subset found.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features;
use crate::pooling::{self, PooledFeatureVector};

pub const N_BINS: usize = 10;
pub const MAX_STALE_EXPANSIONS: usize = 5;
/// Merit gains at or below this do not count as improvements.
const MERIT_EPSILON: f64 = 1e-12;

/// Equal-frequency bin index of every value. Ties always share a bin, so a
/// constant column maps to a single bin.
pub fn discretize(values: &[f64], n_bins: usize) -> Vec<usize> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cuts: Vec<f64> = (1..n_bins)
        .map(|q| sorted[(q * n / n_bins).min(n - 1)])
        .collect();
    values
        .iter()
        .map(|v| cuts.iter().filter(|&&c| c <= *v).count())
        .collect()
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Symmetric uncertainty `2 I(X;Y) / (H(X) + H(Y))` of two discrete codings.
pub fn symmetric_uncertainty(x: &[usize], y: &[usize]) -> f64 {
    let n = x.len() as f64;
    if x.is_empty() {
        return 0.0;
    }
    let mut cx: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cy: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cxy: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&a, &b) in x.iter().zip(y) {
        *cx.entry(a).or_default() += 1;
        *cy.entry(b).or_default() += 1;
        *cxy.entry((a, b)).or_default() += 1;
    }
    let hx = entropy(cx.values().copied(), n);
    let hy = entropy(cy.values().copied(), n);
    if hx + hy <= 0.0 {
        return 0.0;
    }
    let hxy = entropy(cxy.values().copied(), n);
    let mutual = (hx + hy - hxy).max(0.0);
    (2.0 * mutual / (hx + hy)).clamp(0.0, 1.0)
}

/// Discretized columns and class codes of a labelled dataset.
#[derive(Clone, Debug)]
pub struct DiscreteDataset {
    pub columns: Vec<Vec<usize>>,
    pub classes: Vec<usize>,
}

impl DiscreteDataset {
    pub fn new<S: AsRef<str>>(rows: &[Vec<f64>], labels: &[S]) -> Result<Self> {
        if rows.len() < 2 || rows.len() != labels.len() {
            return Err(Error::Degenerate(format!(
                "feature selection needs at least 2 labelled rows, got {}",
                rows.len()
            )));
        }
        let names: BTreeSet<&str> = labels.iter().map(AsRef::as_ref).collect();
        if names.len() < 2 {
            return Err(Error::Degenerate(
                "feature selection needs at least 2 classes".into(),
            ));
        }
        let names: Vec<&str> = names.into_iter().collect();
        let classes = labels
            .iter()
            .map(|l| {
                names
                    .iter()
                    .position(|n| *n == l.as_ref())
                    .expect("indexed")
            })
            .collect();
        let dim = rows[0].len();
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.len(),
            });
        }
        let columns = (0..dim)
            .into_par_iter()
            .map(|d| {
                let col: Vec<f64> = rows.iter().map(|r| r[d]).collect();
                discretize(&col, N_BINS)
            })
            .collect();
        Ok(DiscreteDataset { columns, classes })
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn feature_class_correlation(&self, dim: usize) -> f64 {
        symmetric_uncertainty(&self.columns[dim], &self.classes)
    }

    pub fn feature_feature_correlation(&self, a: usize, b: usize) -> f64 {
        symmetric_uncertainty(&self.columns[a], &self.columns[b])
    }
}

/// Precomputed feature-class and feature-feature correlations.
#[derive(Clone, Debug)]
pub struct Correlations {
    pub class: Vec<f64>,
    pub pairwise: Vec<Vec<f64>>,
}

impl Correlations {
    pub fn compute(data: &DiscreteDataset) -> Self {
        let d = data.dim();
        let class = (0..d).map(|i| data.feature_class_correlation(i)).collect();
        let upper: Vec<Vec<f64>> = (0..d)
            .into_par_iter()
            .map(|i| {
                (i + 1..d)
                    .map(|j| data.feature_feature_correlation(i, j))
                    .collect()
            })
            .collect();
        let mut pairwise = vec![vec![1.0; d]; d];
        for i in 0..d {
            for (off, &v) in upper[i].iter().enumerate() {
                let j = i + 1 + off;
                pairwise[i][j] = v;
                pairwise[j][i] = v;
            }
        }
        Correlations { class, pairwise }
    }
}

/// Merit from summed correlations of a subset of size `k`.
fn merit_from_sums(k: usize, class_sum: f64, pair_sum: f64) -> f64 {
    let kf = k as f64;
    let mean_cf = class_sum / kf;
    let mean_ff = if k > 1 {
        pair_sum / (kf * (kf - 1.0) / 2.0)
    } else {
        0.0
    };
    let denom = (kf + kf * (kf - 1.0) * mean_ff).sqrt();
    if denom > 0.0 {
        (kf * mean_cf / denom).max(0.0)
    } else {
        0.0
    }
}

pub fn cfs_merit(subset: &[usize], corr: &Correlations) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::InvalidParameter("merit of an empty subset".into()));
    }
    let class_sum: f64 = subset.iter().map(|&i| corr.class[i]).sum();
    let mut pair_sum = 0.0;
    for (a, &i) in subset.iter().enumerate() {
        for &j in &subset[a + 1..] {
            pair_sum += corr.pairwise[i][j];
        }
    }
    Ok(merit_from_sums(subset.len(), class_sum, pair_sum))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSubset {
    /// Sorted, unique dimension indices.
    pub indices: Vec<usize>,
    pub merit: f64,
    pub evaluated: usize,
}

struct OpenSubset {
    merit: f64,
    order: usize,
    members: Vec<usize>,
    class_sum: f64,
    pair_sum: f64,
}

impl PartialEq for OpenSubset {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OpenSubset {}

impl PartialOrd for OpenSubset {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OpenSubset {
    // Highest merit first; among equals, the earliest generated.
    fn cmp(&self, other: &Self) -> Ordering {
        self.merit
            .total_cmp(&other.merit)
            .then_with(|| other.order.cmp(&self.order))
    }
}

/// Best-first forward search over subsets.
pub fn best_first_search(corr: &Correlations) -> FeatureSubset {
    let d = corr.class.len();
    let mut open = BinaryHeap::new();
    let mut visited: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut order = 0;
    open.push(OpenSubset {
        merit: 0.0,
        order,
        members: Vec::new(),
        class_sum: 0.0,
        pair_sum: 0.0,
    });
    visited.insert(Vec::new());

    let mut best: (Vec<usize>, f64) = (Vec::new(), 0.0);
    let mut evaluated = 0;
    let mut stale = 0;
    while stale < MAX_STALE_EXPANSIONS {
        let Some(current) = open.pop() else { break };
        let mut improved = false;
        for f in 0..d {
            if current.members.binary_search(&f).is_ok() {
                continue;
            }
            let mut members = current.members.clone();
            let pos = members.binary_search(&f).unwrap_err();
            members.insert(pos, f);
            if !visited.insert(members.clone()) {
                continue;
            }
            let class_sum = current.class_sum + corr.class[f];
            let pair_sum = current.pair_sum
                + current
                    .members
                    .iter()
                    .map(|&g| corr.pairwise[f][g])
                    .sum::<f64>();
            let merit = merit_from_sums(members.len(), class_sum, pair_sum);
            evaluated += 1;
            if merit > best.1 + MERIT_EPSILON {
                best = (members.clone(), merit);
                improved = true;
            }
            order += 1;
            open.push(OpenSubset {
                merit,
                order,
                members,
                class_sum,
                pair_sum,
            });
        }
        if improved {
            stale = 0;
        } else {
            stale += 1;
        }
    }
    FeatureSubset {
        indices: best.0,
        merit: best.1,
        evaluated,
    }
}

/// Runs CFS on raw rows and their labels.
pub fn select_features<S: AsRef<str>>(rows: &[Vec<f64>], labels: &[S]) -> Result<FeatureSubset> {
    let data = DiscreteDataset::new(rows, labels)?;
    Ok(best_first_search(&Correlations::compute(&data)))
}

/// CFS on a pooled dataset.
pub fn select_pooled(data: &[PooledFeatureVector]) -> Result<FeatureSubset> {
    let rows: Vec<Vec<f64>> = data.iter().map(|v| v.values.clone()).collect();
    let labels = data
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.label.clone().ok_or_else(|| Error::Row {
                row: i + 1,
                message: format!("clip {:?} has no label", v.clip_id),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    select_features(&rows, &labels)
}

/// Statistic, feature family name and within-family index of a pooled dimension.
pub fn describe_pooled_dim(dim: usize) -> (&'static str, &'static str, Option<usize>) {
    let (stat, slot) = pooling::describe_dim(dim);
    let (family, index) = match slot {
        features::F0 => ("Fundamental Frequency", None),
        features::VUV => ("Voicing", None),
        features::LOG_ENERGY => ("Log Energy", None),
        features::H1H2 => ("Harmonic Structure (H1H2)", None),
        features::PEAK_SLOPE => ("Peak Slope", None),
        s if features::MFCC.contains(&s) => ("MFCC", Some(s - features::MFCC.start)),
        s if features::HMPDM.contains(&s) => ("HMPDM", Some(s - features::HMPDM.start)),
        s => ("HMPDD", Some(s - features::HMPDD.start)),
    };
    (stat.as_str(), family, index)
}

/// Text table of a selection, one row per selected pooled dimension.
pub fn selection_table(subset: &FeatureSubset) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>5}  {:<5}  {:<26}  {:>5}",
        "dim", "stat", "feature", "index"
    );
    for &d in &subset.indices {
        if d >= pooling::POOLED_DIM {
            let _ = writeln!(out, "{d:>5}  {:<5}  {:<26}  {:>5}", "-", "-", "-");
            continue;
        }
        let (stat, family, index) = describe_pooled_dim(d);
        let index = index.map(|i| i.to_string()).unwrap_or_else(|| "-".into());
        let _ = writeln!(out, "{d:>5}  {stat:<5}  {family:<26}  {index:>5}");
    }
    let _ = writeln!(
        out,
        "selected {} of {} dimensions, merit {:.4}, {} subsets evaluated",
        subset.indices.len(),
        pooling::POOLED_DIM,
        subset.merit,
        subset.evaluated
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discretize_constant_and_ranked() {
        assert!(discretize(&[3.0; 20], 10).windows(2).all(|w| w[0] == w[1]));
        let v: Vec<f64> = (0..100).map(f64::from).collect();
        let bins = discretize(&v, 10);
        assert_eq!(bins[0], 0);
        assert_eq!(bins[99], 9);
        for b in 0..10 {
            assert_eq!(bins.iter().filter(|&&x| x == b).count(), 10);
        }
    }

    #[test]
    fn su_bounds() {
        let x = [0, 1, 2, 3, 0, 1, 2, 3];
        assert!((symmetric_uncertainty(&x, &x) - 1.0).abs() < 1e-12);
        assert_eq!(symmetric_uncertainty(&[0; 8], &x), 0.0);
    }

    #[test]
    fn feature_equal_to_class_code() {
        let labels: Vec<&str> = (0..400).map(|i| ["a", "b", "c", "d"][i % 4]).collect();
        let rows: Vec<Vec<f64>> = (0..400).map(|i| vec![(i % 4) as f64]).collect();
        let data = DiscreteDataset::new(&rows, &labels).unwrap();
        assert!((data.feature_class_correlation(0) - 1.0).abs() < 1e-12);
        assert!((data.feature_feature_correlation(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn merit_formula_cases() {
        let corr = Correlations {
            class: vec![1.0, 1.0, 0.5, 0.5],
            pairwise: vec![
                vec![1.0, 1.0, 0.0, 0.0],
                vec![1.0, 1.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
            ],
        };
        assert_eq!(cfs_merit(&[0], &corr).unwrap(), 1.0);
        assert!((cfs_merit(&[0, 1], &corr).unwrap() - 1.0).abs() < 1e-15);
        assert!((cfs_merit(&[2, 3], &corr).unwrap() - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!(cfs_merit(&[], &corr).is_err());
    }

    #[test]
    fn degenerate_datasets_rejected() {
        assert!(DiscreteDataset::new(&[vec![1.0]], &["a"]).is_err());
        assert!(DiscreteDataset::new(&[vec![1.0], vec![2.0]], &["a", "a"]).is_err());
    }

    #[test]
    fn perfect_dimension_selected_first() {
        let labels: Vec<&str> = (0..200)
            .map(|i| if i % 2 == 0 { "x" } else { "y" })
            .collect();
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                vec![
                    ((i * 37) % 11) as f64,
                    (i % 2) as f64,
                    ((i * 13) % 7) as f64,
                ]
            })
            .collect();
        let sel = select_features(&rows, &labels).unwrap();
        assert_eq!(sel.indices, vec![1]);
        assert!((sel.merit - 1.0).abs() < 1e-12);
    }

    #[test]
    fn table_names_dimensions() {
        let table = selection_table(&FeatureSubset {
            indices: vec![0, 68 + 3, 136 + 8],
            merit: 0.5,
            evaluated: 10,
        });
        assert!(table.contains("max    Fundamental Frequency"));
        assert!(table.contains("min    Harmonic Structure (H1H2)"));
        assert!(table.contains("mean   MFCC"));
    }
}
