//! RBF-kernel support vector classification.
//!
//! Binary machines are trained with sequential minimal optimization on the dual
//!
//! ```text
//! min_a  1/2 a^T Q a - e^T a    s.t.  y^T a = 0,  0 <= a_i <= C
//! Q_ij = y_i y_j exp(-gamma |x_i - x_j|^2)
//! ```
//!
//! using the maximal-violating-pair working set (first-order selection). The
//! multi-class model is one-vs-one over the sorted class list, combined by
//! majority vote, on z-scored inputs.
//!
//! By default the z-scored vectors are further multiplied by `1/sqrt(D)` for a
//! `D`-dimensional input, so the expected squared distance between two training
//! vectors is 2 whatever the input width and gamma keeps the same meaning for
//! 2-dimensional toys and 204-dimensional pooled features. Without it, gamma =
//! 0.25 on 204 z-scored dimensions puts every off-diagonal kernel value near
//! `exp(-100)` and the decision collapses onto the bias.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::AudioClip;
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const HUMAN_LABEL: &str = "human";

/// Curvature floor for degenerate working pairs.
const TAU: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub gamma: f64,
    /// Stop once the maximal KKT violation falls below this.
    pub tolerance: f64,
    /// Iteration budget, in multiples of the training-set size.
    pub max_passes: usize,
    /// Multiply standardized vectors by `1/sqrt(dim)` before the kernel.
    #[serde(default = "default_true")]
    pub scale_by_dim: bool,
}

fn default_true() -> bool {
    true
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            gamma: 0.25,
            tolerance: 1e-3,
            max_passes: 200,
            scale_by_dim: true,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive("C", self.c)?;
        positive("gamma", self.gamma)?;
        positive("tolerance", self.tolerance)?;
        if self.max_passes == 0 {
            return Err(Error::InvalidParameter(
                "max_passes must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Factor applied to standardized vectors of width `dim`.
    pub fn input_scale(&self, dim: usize) -> f64 {
        if self.scale_by_dim && dim > 0 {
            1.0 / (dim as f64).sqrt()
        } else {
            1.0
        }
    }
}

fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok((-gamma * squared_distance(x, y)).exp())
}

/// Full RBF Gram matrix of `xs`.
pub fn gram_matrix(xs: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        k[i][i] = 1.0;
        for j in 0..i {
            let v = (-gamma * squared_distance(&xs[i], &xs[j])).exp();
            k[i][j] = v;
            k[j][i] = v;
        }
    }
    k
}

/// Per-dimension z-scoring fitted on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; 1 for constant dimensions.
    pub std: Vec<f64>,
    pub constant: Vec<bool>,
}

impl Standardizer {
    pub fn fit(vectors: &[Vec<f64>]) -> Result<Self> {
        if vectors.len() < 2 {
            return Err(Error::Degenerate(format!(
                "standardizer needs at least 2 vectors, got {}",
                vectors.len()
            )));
        }
        let dim = vectors[0].len();
        check_dims(vectors, dim)?;
        let n = vectors.len() as f64;
        let mut mean = vec![0.0; dim];
        for v in vectors {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for v in vectors {
            for ((s, x), m) in var.iter_mut().zip(v).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        let mut std = Vec::with_capacity(dim);
        let mut constant = Vec::with_capacity(dim);
        for (s, m) in var.iter().zip(&mean) {
            let sd = (s / n).sqrt();
            // Variance at rounding level of the mean counts as none.
            let flat = sd.is_nan() || sd <= 1e-12 * m.abs().max(1.0);
            std.push(if flat { 1.0 } else { sd });
            constant.push(flat);
        }
        Ok(Standardizer {
            mean,
            std,
            constant,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect())
    }
}

fn check_dims(vectors: &[Vec<f64>], dim: usize) -> Result<()> {
    match vectors.iter().find(|v| v.len() != dim) {
        Some(v) => Err(Error::DimensionMismatch {
            expected: dim,
            got: v.len(),
        }),
        None => Ok(()),
    }
}

/// Raw output of the binary solver.
#[derive(Clone, Debug, PartialEq)]
pub struct BinarySolution {
    pub alpha: Vec<f64>,
    /// Decision function is `sum_i alpha_i y_i k(x_i, x) + bias`.
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl BinarySolution {
    pub fn decision(&self, kernel_row: &[f64], labels: &[f64]) -> f64 {
        self.alpha
            .iter()
            .zip(labels)
            .zip(kernel_row)
            .map(|((a, y), k)| a * y * k)
            .sum::<f64>()
            + self.bias
    }
}

/// Dual objective `1/2 a^T Q a - sum(a)` for a kernel matrix and labels.
pub fn dual_objective(alpha: &[f64], labels: &[f64], kernel: &[Vec<f64>]) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * labels[i] * labels[j] * kernel[i][j];
        }
    }
    0.5 * quad - alpha.iter().sum::<f64>()
}

/// SMO on a precomputed kernel matrix. `labels` must be ±1.
pub fn solve_smo(
    kernel: &[Vec<f64>],
    labels: &[f64],
    config: &SvmConfig,
) -> Result<BinarySolution> {
    config.validate()?;
    let n = labels.len();
    if kernel.len() != n || kernel.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: kernel.len(),
        });
    }
    if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
        return Err(Error::InvalidParameter(format!(
            "binary labels must be ±1, got {bad}"
        )));
    }
    if !labels.contains(&1.0) || !labels.contains(&-1.0) {
        return Err(Error::Degenerate(
            "binary training needs both classes present".into(),
        ));
    }

    let c = config.c;
    let y = labels;
    let q = |i: usize, j: usize| y[i] * y[j] * kernel[i][j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let in_low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

    let max_iter = config.max_passes.saturating_mul(n.max(1));
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let mut i = usize::MAX;
        let mut m_up = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut m_low = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > m_up {
                m_up = v;
                i = t;
            }
            if in_low(alpha[t], y[t]) && v < m_low {
                m_low = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || m_up - m_low < config.tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (kernel[i][i] + kernel[j][j] + 2.0 * q(i, j)).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (kernel[i][i] + kernel[j][j] - 2.0 * q(i, j)).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(i, t) * di + q(j, t) * dj;
        }
    }

    Ok(BinarySolution {
        bias: -solve_rho(&alpha, &grad, y, c),
        alpha,
        iterations,
        converged,
    })
}

/// Threshold from the free variables, or the midpoint of the feasible interval
/// when every variable sits at a bound.
fn solve_rho(alpha: &[f64], grad: &[f64], y: &[f64], c: f64) -> f64 {
    let mut upper = f64::INFINITY;
    let mut lower = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut n_free = 0usize;
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                upper = upper.min(yg);
            } else {
                lower = lower.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                upper = upper.min(yg);
            } else {
                lower = lower.max(yg);
            }
        } else {
            free_sum += yg;
            n_free += 1;
        }
    }
    if n_free > 0 {
        free_sum / n_free as f64
    } else {
        (upper + lower) / 2.0
    }
}

/// Trains one binary machine on already standardized vectors.
pub fn train_binary_smo(
    vectors: &[Vec<f64>],
    labels: &[f64],
    config: &SvmConfig,
) -> Result<BinarySolution> {
    if vectors.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: vectors.len(),
            got: labels.len(),
        });
    }
    if let Some(first) = vectors.first() {
        check_dims(vectors, first.len())?;
    }
    solve_smo(&gram_matrix(vectors, config.gamma), labels, config)
}

/// One pairwise machine of a trained model. `positive` and `negative` index
/// [`SvmModel::classes`]; positive decisions vote for `positive`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryMachine {
    pub positive: usize,
    pub negative: usize,
    /// Indices into [`SvmModel::support_vectors`].
    pub support_indices: Vec<usize>,
    /// `alpha_i * y_i` for each support.
    pub coefficients: Vec<f64>,
    pub bias: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub format_version: u32,
    pub config: SvmConfig,
    /// Sorted class labels.
    pub classes: Vec<String>,
    /// Width of vectors accepted by [`SvmModel::predict`].
    pub input_dim: usize,
    /// Optional column subset applied before standardization.
    pub feature_indices: Option<Vec<usize>>,
    pub standardizer: Standardizer,
    /// Factor applied after standardization (see [`SvmConfig::input_scale`]).
    pub input_scale: f64,
    /// Standardized, scaled training vectors referenced by the machines.
    pub support_vectors: Vec<Vec<f64>>,
    pub machines: Vec<BinaryMachine>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairVote {
    pub positive: String,
    pub negative: String,
    pub decision: f64,
    pub winner: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: String,
    /// Vote count per class, in class order.
    pub votes: Vec<(String, usize)>,
    pub pairs: Vec<PairVote>,
}

fn select_columns(v: &[f64], indices: Option<&[usize]>) -> Vec<f64> {
    match indices {
        Some(idx) => idx.iter().map(|&i| v[i]).collect(),
        None => v.to_vec(),
    }
}

/// Trains a one-vs-one model on raw (unstandardized) vectors.
pub fn train_multiclass<S: AsRef<str>>(
    vectors: &[Vec<f64>],
    labels: &[S],
    config: &SvmConfig,
) -> Result<SvmModel> {
    train_multiclass_with(vectors, labels, config, None)
}

/// Like [`train_multiclass`], restricted to the given input columns.
pub fn train_multiclass_with<S: AsRef<str>>(
    vectors: &[Vec<f64>],
    labels: &[S],
    config: &SvmConfig,
    feature_indices: Option<Vec<usize>>,
) -> Result<SvmModel> {
    config.validate()?;
    if vectors.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: vectors.len(),
            got: labels.len(),
        });
    }
    let input_dim = vectors.first().map_or(0, Vec::len);
    check_dims(vectors, input_dim)?;
    if let Some(idx) = &feature_indices {
        if idx.is_empty() || idx.iter().any(|&i| i >= input_dim) {
            return Err(Error::InvalidParameter(format!(
                "feature subset must be non-empty and within 0..{input_dim}"
            )));
        }
    }

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l.as_ref()).or_insert(0) += 1;
    }
    if counts.len() < 2 {
        return Err(Error::Degenerate(format!(
            "training needs at least 2 classes, found {}",
            counts.len()
        )));
    }
    if let Some((label, n)) = counts.iter().find(|(_, &n)| n < 2) {
        return Err(Error::Degenerate(format!(
            "class {label:?} has {n} training example(s), need at least 2"
        )));
    }
    let classes: Vec<String> = counts.keys().map(|s| s.to_string()).collect();
    let class_of: Vec<usize> = labels
        .iter()
        .map(|l| {
            classes
                .iter()
                .position(|c| c == l.as_ref())
                .expect("label indexed")
        })
        .collect();

    let selected: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| select_columns(v, feature_indices.as_deref()))
        .collect();
    let standardizer = Standardizer::fit(&selected)?;
    let input_scale = config.input_scale(standardizer.dim());
    let scaled = selected
        .iter()
        .map(|v| {
            standardizer
                .apply(v)
                .map(|z| z.into_iter().map(|x| x * input_scale).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let full_kernel = gram_matrix(&scaled, config.gamma);

    let mut raw_machines = Vec::new();
    for a in 0..classes.len() {
        for b in a + 1..classes.len() {
            let rows: Vec<usize> = (0..scaled.len())
                .filter(|&r| class_of[r] == a || class_of[r] == b)
                .collect();
            let y: Vec<f64> = rows
                .iter()
                .map(|&r| if class_of[r] == a { 1.0 } else { -1.0 })
                .collect();
            let kernel: Vec<Vec<f64>> = rows
                .iter()
                .map(|&r| rows.iter().map(|&s| full_kernel[r][s]).collect())
                .collect();
            let sol = solve_smo(&kernel, &y, config)?;
            raw_machines.push((a, b, rows, y, sol));
        }
    }

    let used: BTreeSet<usize> = raw_machines
        .iter()
        .flat_map(|(_, _, rows, _, sol)| {
            rows.iter()
                .zip(&sol.alpha)
                .filter(|(_, &al)| al > 0.0)
                .map(|(&r, _)| r)
        })
        .collect();
    let position: BTreeMap<usize, usize> = used.iter().enumerate().map(|(p, &r)| (r, p)).collect();
    let support_vectors = used.iter().map(|&r| scaled[r].clone()).collect();

    let machines = raw_machines
        .into_iter()
        .map(|(a, b, rows, y, sol)| {
            let mut support_indices = Vec::new();
            let mut coefficients = Vec::new();
            for ((r, yi), al) in rows.iter().zip(&y).zip(&sol.alpha) {
                if *al > 0.0 {
                    support_indices.push(position[r]);
                    coefficients.push(al * yi);
                }
            }
            BinaryMachine {
                positive: a,
                negative: b,
                support_indices,
                coefficients,
                bias: sol.bias,
                converged: sol.converged,
            }
        })
        .collect();

    Ok(SvmModel {
        format_version: MODEL_FORMAT_VERSION,
        config: *config,
        classes,
        input_dim,
        feature_indices,
        standardizer,
        input_scale,
        support_vectors,
        machines,
    })
}

impl SvmModel {
    /// Decision values of every machine, in machine order.
    pub fn decision_values(&self, vector: &[f64]) -> Result<Vec<f64>> {
        if vector.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: vector.len(),
            });
        }
        let x: Vec<f64> = self
            .standardizer
            .apply(&select_columns(vector, self.feature_indices.as_deref()))?
            .into_iter()
            .map(|z| z * self.input_scale)
            .collect();
        let k: Vec<f64> = self
            .support_vectors
            .iter()
            .map(|sv| (-self.config.gamma * squared_distance(sv, &x)).exp())
            .collect();
        Ok(self
            .machines
            .iter()
            .map(|m| {
                m.support_indices
                    .iter()
                    .zip(&m.coefficients)
                    .map(|(&s, c)| c * k[s])
                    .sum::<f64>()
                    + m.bias
            })
            .collect())
    }

    /// One-vs-one vote. Ties go to the tied class with the larger sum of absolute
    /// decision values over the machines it won, then to the earlier class.
    pub fn predict(&self, vector: &[f64]) -> Result<Prediction> {
        let decisions = self.decision_values(vector)?;
        let k = self.classes.len();
        let mut votes = vec![0usize; k];
        let mut strength = vec![0.0f64; k];
        let mut pairs = Vec::with_capacity(self.machines.len());
        for (m, &d) in self.machines.iter().zip(&decisions) {
            let winner = if d > 0.0 { m.positive } else { m.negative };
            votes[winner] += 1;
            strength[winner] += d.abs();
            pairs.push(PairVote {
                positive: self.classes[m.positive].clone(),
                negative: self.classes[m.negative].clone(),
                decision: d,
                winner: self.classes[winner].clone(),
            });
        }
        let mut best = 0;
        for c in 1..k {
            if votes[c] > votes[best] || (votes[c] == votes[best] && strength[c] > strength[best]) {
                best = c;
            }
        }
        Ok(Prediction {
            label: self.classes[best].clone(),
            votes: self.classes.iter().cloned().zip(votes).collect(),
            pairs,
        })
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let model: SvmModel = serde_json::from_reader(reader)?;
        model.check()?;
        Ok(model)
    }

    /// Structural consistency of a deserialized model.
    pub fn check(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported model format version {} (expected {MODEL_FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.config.validate()?;
        let dim = self.standardizer.dim();
        let expected_dim = self
            .feature_indices
            .as_ref()
            .map_or(self.input_dim, Vec::len);
        let k = self.classes.len();
        let broken = |what: &str| Err(Error::InvalidParameter(format!("corrupt model: {what}")));
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return broken("input scale");
        }
        if dim != expected_dim || self.standardizer.std.len() != dim {
            return broken("standardizer width");
        }
        if self.support_vectors.iter().any(|v| v.len() != dim) {
            return broken("support vector width");
        }
        if k < 2 || self.machines.len() != k * (k - 1) / 2 {
            return broken("machine count");
        }
        for m in &self.machines {
            if m.positive >= k
                || m.negative >= k
                || m.support_indices.len() != m.coefficients.len()
                || m.support_indices
                    .iter()
                    .any(|&s| s >= self.support_vectors.len())
            {
                return broken("machine references");
            }
        }
        Ok(())
    }

    pub fn has_class(&self, label: &str) -> bool {
        self.classes.iter().any(|c| c == label)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateDecision {
    Accept,
    Reject,
}

impl fmt::Display for GateDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateDecision::Accept => "ACCEPT",
            GateDecision::Reject => "REJECT",
        })
    }
}

/// Accepts a clip only when the full pipeline classifies it as a live human.
/// Silent clips cannot be normalized and are rejected.
pub fn gate_human(model: &SvmModel, clip: &AudioClip) -> Result<GateDecision> {
    if !model.has_class(HUMAN_LABEL) {
        return Err(Error::InvalidParameter(format!(
            "model has no {HUMAN_LABEL:?} class (classes: {})",
            model.classes.join(", ")
        )));
    }
    let pooled = match crate::pipeline::featurize_clip(clip) {
        Ok(p) => p,
        Err(Error::Degenerate(_)) => return Ok(GateDecision::Reject),
        Err(e) => return Err(e),
    };
    let prediction = model.predict(&pooled.values)?;
    Ok(if prediction.label == HUMAN_LABEL {
        GateDecision::Accept
    } else {
        GateDecision::Reject
    })
}
