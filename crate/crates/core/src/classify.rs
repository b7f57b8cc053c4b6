//! One-vs-rest kernel SVM over fingerprint features, trained by seeded
//! stochastic subgradient descent on the hinge loss, with stratified
//! k-fold cross-validation and CSV accuracy tables.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::substream;

/// One fingerprint row.
pub type Sample = [f64; 8];

pub const DEFAULT_EPOCHS: usize = 200;
pub const DEFAULT_LAMBDA: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("class {label} has {count} samples, fewer than {folds} folds")]
    StratifyError { label: usize, count: usize, folds: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("model serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    Linear,
    /// (1 + x·y)³
    Polynomial,
    Rbf {
        gamma: f64,
    },
    Sigmoid {
        gamma: f64,
        c0: f64,
    },
}

impl Kernel {
    /// Scale heuristic γ = 1/(n_features · var): features are z-normalized
    /// before the kernel sees them, so unit variance gives 1/8.
    pub fn default_rbf() -> Kernel {
        Kernel::Rbf { gamma: 1.0 / 8.0 }
    }

    pub fn default_sigmoid() -> Kernel {
        Kernel::Sigmoid { gamma: 1.0 / 8.0, c0: 0.0 }
    }

    pub fn value(&self, a: &[f64], b: &[f64]) -> f64 {
        let dot = || a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        match self {
            Kernel::Linear => dot(),
            Kernel::Polynomial => (1.0 + dot()).powi(3),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
            Kernel::Sigmoid { gamma, c0 } => (gamma * dot() + c0).tanh(),
        }
    }

    fn validate(&self) -> Result<(), ClassifyError> {
        let ok = match self {
            Kernel::Linear | Kernel::Polynomial => true,
            Kernel::Rbf { gamma } => *gamma > 0.0,
            Kernel::Sigmoid { gamma, c0 } => gamma.is_finite() && c0.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(ClassifyError::BadInput(format!("bad kernel parameters: {self:?}")))
        }
    }
}

impl std::fmt::Display for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Kernel::Linear => f.write_str("linear"),
            Kernel::Polynomial => f.write_str("polynomial"),
            Kernel::Rbf { .. } => f.write_str("rbf"),
            Kernel::Sigmoid { .. } => f.write_str("sigmoid"),
        }
    }
}

/// Trained one-vs-rest model: per-class dual coefficients over the stored
/// (normalized) training vectors, an intercept per class, and the
/// normalization that produced those vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: Kernel,
    /// Ascending original label values.
    pub classes: Vec<usize>,
    /// `coefficients[class][sample]`, zero for non-support vectors.
    pub coefficients: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// Normalized training vectors, constant features already dropped.
    pub support: Vec<Vec<f64>>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    /// Indices of the features kept (training std > 0).
    pub kept: Vec<usize>,
}

impl SvmModel {
    fn normalize(&self, x: &Sample) -> Vec<f64> {
        self.kept
            .iter()
            .map(|&i| (x[i] - self.feature_mean[i]) / self.feature_std[i])
            .collect()
    }

    /// Per-class decision values f_c(x), ordered like `classes`.
    pub fn decision_values(&self, x: &Sample) -> Result<Vec<f64>, ClassifyError> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ClassifyError::BadInput("non-finite feature".into()));
        }
        let z = self.normalize(x);
        Ok((0..self.classes.len())
            .map(|c| {
                let dual: f64 = self.coefficients[c]
                    .iter()
                    .zip(&self.support)
                    .filter(|(a, _)| **a != 0.0)
                    .map(|(a, sv)| a * self.kernel.value(sv, &z))
                    .sum();
                dual + self.bias[c]
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String, ClassifyError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<SvmModel, ClassifyError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifyError> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }

    pub fn load(path: &Path) -> Result<SvmModel, ClassifyError> {
        SvmModel::from_json(&std::fs::read_to_string(path)?)
    }
}

fn check_data(x: &[Sample], y: &[usize]) -> Result<Vec<usize>, ClassifyError> {
    if x.len() != y.len() {
        return Err(ClassifyError::BadInput(format!(
            "{} samples but {} labels",
            x.len(),
            y.len()
        )));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ClassifyError::BadInput("non-finite feature in training data".into()));
    }
    let mut classes: Vec<usize> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(ClassifyError::DegenerateLabels(format!(
            "need at least 2 classes, got {}",
            classes.len()
        )));
    }
    for &c in &classes {
        let count = y.iter().filter(|&&l| l == c).count();
        if count < 2 {
            return Err(ClassifyError::DegenerateLabels(format!(
                "class {c} has only {count} sample(s)"
            )));
        }
    }
    Ok(classes)
}

/// Trains one max-margin separator per class against the rest. Each epoch
/// walks a fresh seeded permutation of the data; a sample inside the margin
/// joins the dual sum. The intercept is absorbed by training on K + 1 and
/// split back out, so stored coefficients pair with the plain kernel.
pub fn train(
    x: &[Sample],
    y: &[usize],
    kernel: Kernel,
    epochs: usize,
    lambda: f64,
    seed: u64,
) -> Result<SvmModel, ClassifyError> {
    kernel.validate()?;
    if epochs == 0 || !(lambda > 0.0) {
        return Err(ClassifyError::BadInput(format!(
            "need epochs > 0 and lambda > 0, got {epochs}, {lambda}"
        )));
    }
    let classes = check_data(x, y)?;
    let n = x.len();

    let mut feature_mean = vec![0.0; 8];
    let mut feature_std = vec![0.0; 8];
    for f in 0..8 {
        let mean = x.iter().map(|r| r[f]).sum::<f64>() / n as f64;
        let var = x.iter().map(|r| (r[f] - mean).powi(2)).sum::<f64>() / n as f64;
        feature_mean[f] = mean;
        feature_std[f] = var.sqrt();
    }
    let kept: Vec<usize> = (0..8).filter(|&f| feature_std[f] > 0.0).collect();
    let support: Vec<Vec<f64>> = x
        .iter()
        .map(|r| kept.iter().map(|&f| (r[f] - feature_mean[f]) / feature_std[f]).collect())
        .collect();

    // Gram matrix of the plain kernel; the +1 intercept column is added at
    // use time.
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.value(&support[i], &support[j]);
            gram[i * n + j] = v;
            gram[j * n + i] = v;
        }
    }

    let total_steps = (epochs * n) as f64;
    let mut coefficients = Vec::with_capacity(classes.len());
    let mut bias = Vec::with_capacity(classes.len());
    for (ci, &c) in classes.iter().enumerate() {
        let y_pm: Vec<f64> = y.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
        let mut alpha = vec![0u64; n];
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = substream(seed, &format!("ovr-{ci}"));
        let mut t = 0.0f64;
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                t += 1.0;
                let mut f = 0.0;
                for j in 0..n {
                    if alpha[j] != 0 {
                        f += alpha[j] as f64 * y_pm[j] * (gram[j * n + i] + 1.0);
                    }
                }
                f /= lambda * t;
                if y_pm[i] * f < 1.0 {
                    alpha[i] += 1;
                }
            }
        }
        let coeff: Vec<f64> =
            (0..n).map(|j| alpha[j] as f64 * y_pm[j] / (lambda * total_steps)).collect();
        bias.push(coeff.iter().sum());
        coefficients.push(coeff);
    }

    Ok(SvmModel {
        kernel,
        classes,
        coefficients,
        bias,
        support,
        feature_mean,
        feature_std,
        kept,
    })
}

/// Argmax of the per-class decision values; ties go to the lowest class.
pub fn predict(model: &SvmModel, x: &Sample) -> Result<usize, ClassifyError> {
    let values = model.decision_values(x)?;
    let mut best = 0;
    for (c, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = c;
        }
    }
    Ok(model.classes[best])
}

/// Fraction of rows whose prediction matches the label.
pub fn accuracy(model: &SvmModel, x: &[Sample], y: &[usize]) -> Result<f64, ClassifyError> {
    let mut correct = 0usize;
    for (row, &label) in x.iter().zip(y) {
        correct += (predict(model, row)? == label) as usize;
    }
    Ok(correct as f64 / x.len() as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelAccuracy {
    pub kernel: Kernel,
    /// Pooled held-out accuracy over all folds.
    pub accuracy: f64,
    pub fold_accuracies: Vec<f64>,
}

/// Label-stratified fold assignment: each class's rows are shuffled under
/// the seed and dealt round-robin, so every fold sees every class.
fn stratified_folds(
    y: &[usize],
    classes: &[usize],
    folds: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, ClassifyError> {
    let mut assignment = vec![Vec::new(); folds];
    for &c in classes {
        let mut idx: Vec<usize> =
            (0..y.len()).filter(|&i| y[i] == c).collect();
        if idx.len() < folds {
            return Err(ClassifyError::StratifyError { label: c, count: idx.len(), folds });
        }
        idx.shuffle(&mut substream(seed, &format!("fold-{c}")));
        for (pos, i) in idx.into_iter().enumerate() {
            assignment[pos % folds].push(i);
        }
    }
    Ok(assignment)
}

/// Mean held-out accuracy of every kernel under stratified k-fold
/// cross-validation.
pub fn cross_validate(
    x: &[Sample],
    y: &[usize],
    folds: usize,
    kernels: &[Kernel],
    epochs: usize,
    lambda: f64,
    seed: u64,
) -> Result<Vec<KernelAccuracy>, ClassifyError> {
    if folds < 2 {
        return Err(ClassifyError::BadInput(format!("need at least 2 folds, got {folds}")));
    }
    let classes = check_data(x, y)?;
    let assignment = stratified_folds(y, &classes, folds, seed)?;
    let mut table = Vec::with_capacity(kernels.len());
    for &kernel in kernels {
        let mut correct = 0usize;
        let mut total = 0usize;
        let mut fold_accuracies = Vec::with_capacity(folds);
        for held in &assignment {
            let mut train_x = Vec::with_capacity(x.len() - held.len());
            let mut train_y = Vec::with_capacity(x.len() - held.len());
            let held_set: std::collections::HashSet<usize> = held.iter().copied().collect();
            for i in 0..x.len() {
                if !held_set.contains(&i) {
                    train_x.push(x[i]);
                    train_y.push(y[i]);
                }
            }
            let model = train(&train_x, &train_y, kernel, epochs, lambda, seed)?;
            let mut fold_correct = 0usize;
            for &i in held {
                fold_correct += (predict(&model, &x[i])? == y[i]) as usize;
            }
            fold_accuracies.push(fold_correct as f64 / held.len() as f64);
            correct += fold_correct;
            total += held.len();
        }
        table.push(KernelAccuracy {
            kernel,
            accuracy: correct as f64 / total as f64,
            fold_accuracies,
        });
    }
    Ok(table)
}

/// Accuracy table as CSV: one row per kernel, mean then per-fold columns.
pub fn export_accuracy_csv(path: &Path, table: &[KernelAccuracy]) -> Result<(), ClassifyError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let folds = table.first().map_or(0, |r| r.fold_accuracies.len());
    write!(out, "kernel,accuracy_pct")?;
    for f in 1..=folds {
        write!(out, ",fold_{f}_pct")?;
    }
    writeln!(out)?;
    for row in table {
        write!(out, "{},{}", row.kernel, 100.0 * row.accuracy)?;
        for a in &row.fold_accuracies {
            write!(out, ",{}", 100.0 * a)?;
        }
        writeln!(out)?;
    }
    Ok(())
}
