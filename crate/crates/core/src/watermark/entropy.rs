//! Fingerprint-uniqueness analysis: histogram entropy of each process's
//! feature distributions and conditional entropy across processes. High
//! cross-process conditional entropy means one device's fingerprint tells
//! you nothing about another's.

use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use super::WatermarkError;
use crate::fingerprint::FeatureVector;

pub const DEFAULT_BINS: usize = 10;
/// Minimum fingerprints per process for the histograms to mean anything.
pub const MIN_SAMPLES: usize = 20;

/// Equal-width bin index of every sample over the slice's own range.
/// `None` when the range is degenerate: truly constant input, or a spread
/// at rounding-noise scale (≤ 1e-9 absolute after scaling by the sample
/// magnitude), which is constant in substance.
fn bin_indices(xs: &[f64], bins: usize) -> Option<Vec<usize>> {
    let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max - min > 1e-9 * max.abs().max(min.abs()).max(1.0)) {
        return None;
    }
    let width = (max - min) / bins as f64;
    Some(xs.iter().map(|&x| (((x - min) / width) as usize).min(bins - 1)).collect())
}

fn entropy_of_counts(counts: &[u64], total: f64, norm: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum::<f64>()
        / norm
}

/// Histogram entropy of `xs` over `bins` equal-width bins spanning the
/// sample range, normalized by log2(bins) so 1.0 is maximal.
pub fn normalized_entropy(xs: &[f64], bins: usize) -> Result<f64, WatermarkError> {
    let idx = bin_indices(xs, bins)
        .ok_or_else(|| WatermarkError::BadInput("constant sample set has no histogram".into()))?;
    let mut counts = vec![0u64; bins];
    for i in idx {
        counts[i] += 1;
    }
    Ok(entropy_of_counts(&counts, xs.len() as f64, (bins as f64).log2()))
}

/// Marginal entropies and mutual information of index-paired samples,
/// each variable binned over its own range; all three normalized by
/// log2(bins). Inputs are truncated to the shorter length.
pub fn binned_mi(xs: &[f64], ys: &[f64], bins: usize) -> Result<(f64, f64, f64), WatermarkError> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return Err(WatermarkError::InsufficientData { needed: 2, got: n });
    }
    let (xs, ys) = (&xs[..n], &ys[..n]);
    let bx = bin_indices(xs, bins)
        .ok_or_else(|| WatermarkError::BadInput("constant sample set has no histogram".into()))?;
    let by = bin_indices(ys, bins)
        .ok_or_else(|| WatermarkError::BadInput("constant sample set has no histogram".into()))?;
    let mut joint = vec![0u64; bins * bins];
    let mut mx = vec![0u64; bins];
    let mut my = vec![0u64; bins];
    for (&i, &j) in bx.iter().zip(&by) {
        joint[i * bins + j] += 1;
        mx[i] += 1;
        my[j] += 1;
    }
    let total = n as f64;
    let norm = (bins as f64).log2();
    let h_x = entropy_of_counts(&mx, total, norm);
    let h_y = entropy_of_counts(&my, total, norm);
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let c = joint[i * bins + j];
            if c == 0 {
                continue;
            }
            let p = c as f64 / total;
            let px = mx[i] as f64 / total;
            let py = my[j] as f64 / total;
            mi += p * (p / (px * py)).log2();
        }
    }
    Ok((h_x, h_y, mi / norm))
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropyReport {
    pub processes: Vec<String>,
    pub bins: usize,
    pub features_used: Vec<String>,
    /// Features left out because at least one process holds them constant.
    pub skipped_features: Vec<String>,
    /// Normalized histogram entropy per process, averaged over used features.
    pub process_entropy: Vec<f64>,
    /// `conditional[i][t]` = normalized H(process i | process t), averaged
    /// over used features. The diagonal conditions a fingerprint on itself
    /// and is identically zero.
    pub conditional: Vec<Vec<f64>>,
}

impl EntropyReport {
    /// Smallest off-diagonal conditional entropy — the tightest
    /// cross-process information leak.
    pub fn min_cross_conditional(&self) -> f64 {
        let mut min = f64::INFINITY;
        for (i, row) in self.conditional.iter().enumerate() {
            for (t, &v) in row.iter().enumerate() {
                if i != t {
                    min = min.min(v);
                }
            }
        }
        min
    }

    pub fn summary_text(&self) -> String {
        let mut s = format!(
            "{} processes, {} bins, features: {}\n",
            self.processes.len(),
            self.bins,
            self.features_used.join(", ")
        );
        if !self.skipped_features.is_empty() {
            s.push_str(&format!("skipped constant features: {}\n", self.skipped_features.join(", ")));
        }
        for (name, h) in self.processes.iter().zip(&self.process_entropy) {
            s.push_str(&format!("  H({name}) = {h:.4}\n"));
        }
        s.push_str(&format!("min cross-process conditional entropy: {:.4}\n", self.min_cross_conditional()));
        s
    }
}

/// Per-process normalized entropy and the cross-process conditional-entropy
/// matrix of fingerprint features. Features are binned over each variable's
/// own sample range; a feature constant in any process is skipped with a
/// warning. Cross-process pairs match fingerprints by sample index.
pub fn entropy_analysis(
    processes: &[(String, Vec<FeatureVector>)],
    bins: usize,
) -> Result<EntropyReport, WatermarkError> {
    if processes.len() < 2 {
        return Err(WatermarkError::InsufficientData { needed: 2, got: processes.len() });
    }
    if bins < 2 {
        return Err(WatermarkError::BadInput(format!("need at least 2 bins, got {bins}")));
    }
    for (name, fvs) in processes {
        if fvs.len() < MIN_SAMPLES {
            log::warn!("process {name} has {} fingerprints, need {MIN_SAMPLES}", fvs.len());
            return Err(WatermarkError::InsufficientData { needed: MIN_SAMPLES, got: fvs.len() });
        }
    }

    // columns[p][f] = feature f of every fingerprint of process p
    let columns: Vec<Vec<Vec<f64>>> = processes
        .iter()
        .map(|(_, fvs)| {
            let mut cols = vec![Vec::with_capacity(fvs.len()); FeatureVector::NAMES.len()];
            for fv in fvs {
                for (col, v) in cols.iter_mut().zip(fv.as_array()) {
                    col.push(v);
                }
            }
            cols
        })
        .collect();

    let mut used = Vec::new();
    let mut skipped = Vec::new();
    for (f, name) in FeatureVector::NAMES.iter().enumerate() {
        if columns.iter().any(|cols| bin_indices(&cols[f], bins).is_none()) {
            log::warn!("feature {name} is constant in at least one process; skipped");
            skipped.push(name.to_string());
        } else {
            used.push(f);
        }
    }
    if used.is_empty() {
        return Err(WatermarkError::BadInput("every feature is constant somewhere".into()));
    }

    let np = processes.len();
    let mut process_entropy = vec![0.0; np];
    for (p, cols) in columns.iter().enumerate() {
        for &f in &used {
            process_entropy[p] += normalized_entropy(&cols[f], bins)?;
        }
        process_entropy[p] /= used.len() as f64;
    }

    let mut conditional = vec![vec![0.0; np]; np];
    for i in 0..np {
        for t in 0..np {
            let mut acc = 0.0;
            for &f in &used {
                let (h_i, _, mi) = binned_mi(&columns[i][f], &columns[t][f], bins)?;
                acc += h_i - mi;
            }
            conditional[i][t] = acc / used.len() as f64;
        }
    }

    Ok(EntropyReport {
        processes: processes.iter().map(|(n, _)| n.clone()).collect(),
        bins,
        features_used: used.iter().map(|&f| FeatureVector::NAMES[f].to_string()).collect(),
        skipped_features: skipped,
        process_entropy,
        conditional,
    })
}

/// Matrix CSV: one row per process with its entropy and the conditional
/// entropies given every other process.
pub fn export_entropy_csv(path: &Path, report: &EntropyReport) -> Result<(), WatermarkError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "process,entropy")?;
    for name in &report.processes {
        write!(out, ",given_{name}")?;
    }
    writeln!(out)?;
    for (i, name) in report.processes.iter().enumerate() {
        write!(out, "{name},{}", report.process_entropy[i])?;
        for v in &report.conditional[i] {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
