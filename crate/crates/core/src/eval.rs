//! Stratified k-fold cross-validation and classification metrics.
//!
//! Held-out predictions of all folds are pooled into one confusion matrix before
//! any metric is computed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pooling::PooledFeatureVector;
use crate::svm::{self, SvmConfig};

pub const DEFAULT_FOLDS: usize = 10;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Fold index of each dataset row, in dataset order.
    pub assignment: Vec<usize>,
}

impl FoldPlan {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }
}

/// Seeded stratified fold assignment.
///
/// Rows of each class (classes in sorted order) are shuffled and dealt
/// round-robin, with the dealing position carried over from one class to the
/// next, so both per-class and overall fold sizes differ by at most one.
pub fn make_folds<S: AsRef<str>>(labels: &[S], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!(
            "fold count must be at least 2, got {k}"
        )));
    }
    if k > labels.len() {
        return Err(Error::InvalidParameter(format!(
            "fold count {k} exceeds dataset size {}",
            labels.len()
        )));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l.as_ref()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for rows in by_class.values_mut() {
        rows.shuffle(&mut rng);
        for &r in rows.iter() {
            assignment[r] = next;
            next = (next + 1) % k;
        }
    }
    Ok(FoldPlan {
        k,
        seed,
        assignment,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    pub accuracy: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Per-class precision, recall and F1 (rows = true class, columns = predicted).
/// Zero denominators yield zero.
pub fn f1_scores<S: AsRef<str>>(labels: &[S], matrix: &[Vec<u64>]) -> Result<Metrics> {
    let n = labels.len();
    if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidParameter(format!(
            "confusion matrix must be {n}x{n}"
        )));
    }
    let total: u64 = matrix.iter().flatten().sum();
    let mut per_class = Vec::with_capacity(n);
    for c in 0..n {
        let tp = matrix[c][c] as f64;
        let row: u64 = matrix[c].iter().sum();
        let col: u64 = matrix.iter().map(|r| r[c]).sum();
        let precision = ratio(tp, col as f64);
        let recall = ratio(tp, row as f64);
        per_class.push(ClassMetrics {
            label: labels[c].as_ref().to_string(),
            precision,
            recall,
            // 2PR/(P+R) in integer form, exact for hand-checkable matrices.
            f1: ratio(2.0 * tp, (row + col) as f64),
            support: row,
        });
    }
    let macro_f1 = if n == 0 {
        0.0
    } else {
        per_class.iter().map(|m| m.f1).sum::<f64>() / n as f64
    };
    let diag: u64 = (0..n).map(|c| matrix[c][c]).sum();
    Ok(Metrics {
        per_class,
        macro_f1,
        accuracy: ratio(diag as f64, total as f64),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub labels: Vec<String>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<u64>>,
    pub metrics: Metrics,
    /// Held-out accuracy of each fold; empty for merged reports.
    pub fold_accuracies: Vec<f64>,
}

impl EvalReport {
    pub fn from_matrix(labels: Vec<String>, confusion: Vec<Vec<u64>>) -> Result<Self> {
        let metrics = f1_scores(&labels, &confusion)?;
        Ok(EvalReport {
            labels,
            confusion,
            metrics,
            fold_accuracies: Vec::new(),
        })
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn class_f1(&self, label: &str) -> Option<f64> {
        self.metrics
            .per_class
            .iter()
            .find(|m| m.label == label)
            .map(|m| m.f1)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .labels
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(4)
            .max(9);
        write!(f, "{:>width$}", "true\\pred")?;
        for l in &self.labels {
            write!(f, " {:>width$}", l)?;
        }
        writeln!(f)?;
        for (l, row) in self.labels.iter().zip(&self.confusion) {
            write!(f, "{:>width$}", l)?;
            for v in row {
                write!(f, " {:>width$}", v)?;
            }
            writeln!(f)?;
        }
        writeln!(f)?;
        writeln!(
            f,
            "{:>width$} {:>9} {:>9} {:>9} {:>9}",
            "class", "precision", "recall", "f1", "support"
        )?;
        for m in &self.metrics.per_class {
            writeln!(
                f,
                "{:>width$} {:>9.4} {:>9.4} {:>9.4} {:>9}",
                m.label, m.precision, m.recall, m.f1, m.support
            )?;
        }
        writeln!(
            f,
            "macro-F1 {:.4}  accuracy {:.4}",
            self.metrics.macro_f1, self.metrics.accuracy
        )
    }
}

/// Maps each label to a group, or to `None` to drop its rows and columns.
pub type MergeMap = BTreeMap<String, Option<String>>;

/// Human vs. all playback devices.
pub fn playback_merge() -> MergeMap {
    [
        ("human", Some("human")),
        ("loudspeaker", Some("playback")),
        ("ipod", Some("playback")),
        ("headphone", Some("playback")),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.map(String::from)))
    .collect()
}

/// Human vs. iPod+headphone, loudspeaker removed.
pub fn ipod_headphone_merge() -> MergeMap {
    [
        ("human", Some("human")),
        ("loudspeaker", None),
        ("ipod", Some("ipod+headphone")),
        ("headphone", Some("ipod+headphone")),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.map(String::from)))
    .collect()
}

/// Group labels in order of first appearance along `labels`.
fn merged_groups(labels: &[String], map: &MergeMap) -> Result<Vec<String>> {
    let mut groups: Vec<String> = Vec::new();
    for l in labels {
        match map.get(l) {
            None => {
                return Err(Error::InvalidParameter(format!(
                    "merge map has no entry for label {l:?}"
                )))
            }
            Some(Some(g)) if !groups.contains(g) => groups.push(g.clone()),
            Some(_) => {}
        }
    }
    Ok(groups)
}

/// Sums confusion-matrix rows and columns by group and recomputes metrics.
pub fn merge_classes(report: &EvalReport, map: &MergeMap) -> Result<EvalReport> {
    let groups = merged_groups(&report.labels, map)?;
    let group_of: Vec<Option<usize>> = report
        .labels
        .iter()
        .map(|l| {
            map[l]
                .as_ref()
                .map(|g| groups.iter().position(|x| x == g).expect("group listed"))
        })
        .collect();
    let mut matrix = vec![vec![0u64; groups.len()]; groups.len()];
    for (i, row) in report.confusion.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if let (Some(gi), Some(gj)) = (group_of[i], group_of[j]) {
                matrix[gi][gj] += v;
            }
        }
    }
    EvalReport::from_matrix(groups, matrix)
}

/// Rows restricted to a pool of training indices, raw vectors and labels.
fn gather<'a>(
    rows: &[usize],
    data: &'a [PooledFeatureVector],
    labels: &'a [String],
) -> (Vec<Vec<f64>>, Vec<&'a str>) {
    rows.iter()
        .map(|&r| (data[r].values.clone(), labels[r].as_str()))
        .unzip()
}

fn labels_of(data: &[PooledFeatureVector]) -> Result<Vec<String>> {
    data.iter()
        .enumerate()
        .map(|(i, v)| {
            v.label.clone().ok_or_else(|| Error::Row {
                row: i + 1,
                message: format!("clip {:?} has no label", v.clip_id),
            })
        })
        .collect()
}

/// Runs k-fold cross-validation: one standardizer + model per fold, trained on
/// the other folds only.
pub fn cross_validate(
    data: &[PooledFeatureVector],
    config: &SvmConfig,
    plan: &FoldPlan,
) -> Result<EvalReport> {
    let labels = labels_of(data)?;
    cross_validate_labels(data, &labels, config, plan, None)
}

/// Cross-validation after relabelling each row through `map`; rows mapped to
/// `None` are excluded from both training and testing. Folds follow `plan`.
pub fn cross_validate_merged(
    data: &[PooledFeatureVector],
    config: &SvmConfig,
    plan: &FoldPlan,
    map: &MergeMap,
) -> Result<EvalReport> {
    let labels = labels_of(data)?;
    let present: Vec<String> = labels
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    merged_groups(&present, map)?;
    let mapped: Vec<Option<String>> = labels.iter().map(|l| map[l].clone()).collect();
    let keep: Vec<usize> = (0..data.len()).filter(|&i| mapped[i].is_some()).collect();
    let sub_data: Vec<PooledFeatureVector> = keep.iter().map(|&i| data[i].clone()).collect();
    let sub_labels: Vec<String> = keep
        .iter()
        .map(|&i| mapped[i].clone().expect("kept"))
        .collect();
    let sub_plan = FoldPlan {
        k: plan.k,
        seed: plan.seed,
        assignment: keep.iter().map(|&i| plan.assignment[i]).collect(),
    };
    cross_validate_labels(&sub_data, &sub_labels, config, &sub_plan, None)
}

/// Shared implementation; `features` optionally restricts the input columns.
pub fn cross_validate_labels(
    data: &[PooledFeatureVector],
    labels: &[String],
    config: &SvmConfig,
    plan: &FoldPlan,
    features: Option<&[usize]>,
) -> Result<EvalReport> {
    if plan.assignment.len() != data.len() || labels.len() != data.len() {
        return Err(Error::InvalidParameter(format!(
            "fold plan covers {} rows but the dataset has {}",
            plan.assignment.len(),
            data.len()
        )));
    }
    if let Some(&bad) = plan.assignment.iter().find(|&&f| f >= plan.k) {
        return Err(Error::InvalidParameter(format!(
            "fold index {bad} out of range"
        )));
    }
    let classes: Vec<String> = labels
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let fold_results = (0..plan.k)
        .into_par_iter()
        .map(|fold| -> Result<Vec<(usize, String)>> {
            let test = plan.test_rows(fold);
            let train: Vec<usize> = (0..data.len())
                .filter(|&i| plan.assignment[i] != fold)
                .collect();
            let (x, y) = gather(&train, data, labels);
            let train_classes: BTreeSet<&str> = y.iter().copied().collect();
            if let Some(missing) = classes.iter().find(|c| !train_classes.contains(c.as_str())) {
                return Err(Error::Degenerate(format!(
                    "fold {fold}: training split has no examples of class {missing:?}"
                )));
            }
            let model = svm::train_multiclass_with(&x, &y, config, features.map(<[usize]>::to_vec))
                .map_err(|e| Error::Degenerate(format!("fold {fold}: {e}")))?;
            test.into_iter()
                .map(|r| Ok((r, model.predict(&data[r].values)?.label)))
                .collect()
        })
        .collect::<Vec<_>>();

    let index = |l: &str| classes.iter().position(|c| c == l).expect("known class");
    let mut confusion = vec![vec![0u64; classes.len()]; classes.len()];
    let mut fold_accuracies = Vec::with_capacity(plan.k);
    for result in fold_results {
        let predictions = result?;
        let correct = predictions.iter().filter(|(r, p)| labels[*r] == *p).count();
        fold_accuracies.push(ratio(correct as f64, predictions.len() as f64));
        for (r, predicted) in predictions {
            confusion[index(&labels[r])][index(&predicted)] += 1;
        }
    }
    let mut report = EvalReport::from_matrix(classes, confusion)?;
    report.fold_accuracies = fold_accuracies;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeMode {
    None,
    Playback,
    IpodHeadphone,
}

impl MergeMode {
    pub fn map(self) -> Option<MergeMap> {
        match self {
            MergeMode::None => None,
            MergeMode::Playback => Some(playback_merge()),
            MergeMode::IpodHeadphone => Some(ipod_headphone_merge()),
        }
    }
}

/// Machine-readable evaluation record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationDocument {
    pub seed: u64,
    pub k: usize,
    pub config: SvmConfig,
    pub clip_ids: Vec<String>,
    pub fold_assignment: Vec<usize>,
    pub report: EvalReport,
    /// Merged variants keyed by merge mode name.
    pub merged: BTreeMap<String, EvalReport>,
    pub retrain_binary: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_f1_example() {
        let m = f1_scores(&["a", "b"], &[vec![8, 4], vec![2, 86]]).unwrap();
        let a = &m.per_class[0];
        assert_eq!(a.precision, 0.8);
        assert!((a.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((a.f1 - 8.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_degenerate_f1() {
        let m = f1_scores(&["a", "b"], &[vec![50, 0], vec![0, 50]]).unwrap();
        assert_eq!(m.macro_f1, 1.0);
        let m = f1_scores(
            &["a", "b", "c"],
            &[vec![5, 0, 0], vec![0, 5, 0], vec![0, 0, 0]],
        )
        .unwrap();
        assert_eq!(m.per_class[2].f1, 0.0);
        assert!(f1_scores(&["a"], &[vec![1, 2]]).is_err());
    }

    #[test]
    fn folds_of_reference_composition() {
        let mut labels = Vec::new();
        for (l, n) in [
            ("loudspeaker", 106),
            ("ipod", 44),
            ("headphone", 46),
            ("human", 100),
        ] {
            labels.extend(std::iter::repeat_n(l, n));
        }
        let plan = make_folds(&labels, 10, 42).unwrap();
        let sizes = plan.fold_sizes();
        assert!(sizes.iter().all(|&s| s == 29 || s == 30), "{sizes:?}");
        assert_eq!(sizes.iter().sum::<usize>(), 296);
        assert_eq!(plan, make_folds(&labels, 10, 42).unwrap());
        assert_ne!(plan, make_folds(&labels, 10, 43).unwrap());
    }

    #[test]
    fn leave_one_out_and_bad_k() {
        let labels = ["a", "b", "a", "b", "c"];
        let plan = make_folds(&labels, 5, 1).unwrap();
        assert_eq!(plan.fold_sizes(), vec![1; 5]);
        assert!(make_folds(&labels, 6, 1).is_err());
        assert!(make_folds(&labels, 1, 1).is_err());
    }

    #[test]
    fn identity_merge_and_block_sums() {
        let labels: Vec<String> = ["human", "loudspeaker", "ipod", "headphone"]
            .map(String::from)
            .to_vec();
        let diag = vec![
            vec![5, 0, 0, 0],
            vec![0, 6, 0, 0],
            vec![0, 0, 7, 0],
            vec![0, 0, 0, 8],
        ];
        let report = EvalReport::from_matrix(labels.clone(), diag).unwrap();
        let identity: MergeMap = labels
            .iter()
            .map(|l| (l.clone(), Some(l.clone())))
            .collect();
        assert_eq!(merge_classes(&report, &identity).unwrap(), report);

        let merged = merge_classes(&report, &playback_merge()).unwrap();
        assert_eq!(merged.labels, vec!["human", "playback"]);
        assert_eq!(merged.confusion, vec![vec![5, 0], vec![0, 21]]);

        let dropped = merge_classes(&report, &ipod_headphone_merge()).unwrap();
        assert_eq!(dropped.confusion, vec![vec![5, 0], vec![0, 15]]);

        let mut partial = playback_merge();
        partial.remove("ipod");
        assert!(merge_classes(&report, &partial).is_err());
    }
}
