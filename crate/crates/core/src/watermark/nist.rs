//! Randomness battery over generated delay bits: the SP 800-22 frequency,
//! block-frequency, runs, longest-run, cumulative-sums, approximate-entropy,
//! and serial tests. A sequence passes a test when its p-value exceeds 0.01.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::special::{erfc, gamma_q, phi};
use super::WatermarkError;

/// Sequences shorter than this report every test as not applicable.
pub const MIN_BITS: usize = 1000;
/// Pass threshold on each p-value.
pub const PASS_LEVEL: f64 = 0.01;

const BLOCK_FREQ_M: usize = 128;
const APEN_M: usize = 2;
const SERIAL_M: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NistTest {
    Frequency,
    BlockFrequency,
    Runs,
    LongestRun,
    CusumForward,
    CusumReverse,
    ApproximateEntropy,
    Serial1,
    Serial2,
}

impl std::fmt::Display for NistTest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            NistTest::Frequency => "frequency",
            NistTest::BlockFrequency => "block_frequency",
            NistTest::Runs => "runs",
            NistTest::LongestRun => "longest_run",
            NistTest::CusumForward => "cusum_forward",
            NistTest::CusumReverse => "cusum_reverse",
            NistTest::ApproximateEntropy => "approximate_entropy",
            NistTest::Serial1 => "serial_1",
            NistTest::Serial2 => "serial_2",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TestOutcome {
    P(f64),
    NotApplicable { needed: usize },
}

impl TestOutcome {
    pub fn passes(&self) -> Option<bool> {
        match self {
            TestOutcome::P(p) => Some(*p > PASS_LEVEL),
            TestOutcome::NotApplicable { .. } => None,
        }
    }
}

fn check_bits(bits: &[u8]) -> Result<(), WatermarkError> {
    if bits.is_empty() {
        return Err(WatermarkError::BadInput("empty bit sequence".into()));
    }
    if let Some(b) = bits.iter().find(|&&b| b > 1) {
        return Err(WatermarkError::BadInput(format!("bit value {b} is not 0/1")));
    }
    Ok(())
}

/// Frequency (monobit): erfc(|Σ±1| / √(2n)).
pub fn monobit(bits: &[u8]) -> Result<f64, WatermarkError> {
    check_bits(bits)?;
    let n = bits.len() as f64;
    let s: f64 = bits.iter().map(|&b| 2.0 * b as f64 - 1.0).sum();
    Ok(erfc(s.abs() / n.sqrt() / std::f64::consts::SQRT_2))
}

/// Block frequency with block size `m`: χ² of per-block one-proportions.
pub fn block_frequency(bits: &[u8], m: usize) -> Result<f64, WatermarkError> {
    check_bits(bits)?;
    let blocks = bits.len() / m;
    if m == 0 || blocks == 0 {
        return Err(WatermarkError::InsufficientData { needed: m.max(1), got: bits.len() });
    }
    let mut chi = 0.0;
    for i in 0..blocks {
        let ones: u32 = bits[i * m..(i + 1) * m].iter().map(|&b| b as u32).sum();
        let pi = ones as f64 / m as f64;
        chi += (pi - 0.5).powi(2);
    }
    chi *= 4.0 * m as f64;
    Ok(gamma_q(blocks as f64 / 2.0, chi / 2.0))
}

/// Runs test; short-circuits to p = 0 when the one-proportion pre-test
/// already rejects.
pub fn runs(bits: &[u8]) -> Result<f64, WatermarkError> {
    check_bits(bits)?;
    let n = bits.len() as f64;
    let pi = bits.iter().map(|&b| b as f64).sum::<f64>() / n;
    if (pi - 0.5).abs() >= 2.0 / n.sqrt() {
        return Ok(0.0);
    }
    let v = 1 + bits.windows(2).filter(|w| w[0] != w[1]).count();
    let num = (v as f64 - 2.0 * n * pi * (1.0 - pi)).abs();
    let den = 2.0 * (2.0 * n).sqrt() * pi * (1.0 - pi);
    Ok(erfc(num / den))
}

/// Longest run of ones per block, χ² against the tabulated category
/// probabilities for the block size chosen by sequence length.
pub fn longest_run(bits: &[u8]) -> Result<f64, WatermarkError> {
    check_bits(bits)?;
    let n = bits.len();
    let (m, cats, pi): (usize, &[usize], &[f64]) = if n < 128 {
        return Err(WatermarkError::InsufficientData { needed: 128, got: n });
    } else if n < 6272 {
        (8, &[1, 2, 3], &[0.2148, 0.3672, 0.2305, 0.1875])
    } else if n < 750_000 {
        (128, &[4, 5, 6, 7, 8], &[0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124])
    } else {
        (
            10_000,
            &[10, 11, 12, 13, 14, 15],
            &[0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727],
        )
    };
    let k = pi.len() - 1;
    let blocks = n / m;
    let mut nu = vec![0usize; k + 1];
    for i in 0..blocks {
        let (mut longest, mut cur) = (0usize, 0usize);
        for &b in &bits[i * m..(i + 1) * m] {
            cur = if b == 1 { cur + 1 } else { 0 };
            longest = longest.max(cur);
        }
        let cat = if longest <= cats[0] {
            0
        } else if longest > *cats.last().unwrap() {
            k
        } else {
            longest - cats[0]
        };
        nu[cat] += 1;
    }
    let nf = blocks as f64;
    let chi: f64 = nu.iter().zip(pi).map(|(&v, &p)| (v as f64 - nf * p).powi(2) / (nf * p)).sum();
    Ok(gamma_q(k as f64 / 2.0, chi / 2.0))
}

/// Cumulative sums of the ±1 walk, forward or over the reversed sequence.
pub fn cumulative_sums(bits: &[u8], forward: bool) -> Result<f64, WatermarkError> {
    check_bits(bits)?;
    let n = bits.len() as f64;
    let mut s = 0i64;
    let mut z = 0i64;
    let iter: Box<dyn Iterator<Item = &u8>> =
        if forward { Box::new(bits.iter()) } else { Box::new(bits.iter().rev()) };
    for &b in iter {
        s += 2 * b as i64 - 1;
        z = z.max(s.abs());
    }
    if z == 0 {
        // Walk that never leaves the origin is impossible for n >= 1 after
        // the first step; guard anyway.
        return Ok(0.0);
    }
    let z = z as f64;
    let rn = n.sqrt();
    let lo1 = ((-n / z + 1.0) / 4.0).floor() as i64;
    let hi = ((n / z - 1.0) / 4.0).floor() as i64;
    let lo2 = ((-n / z - 3.0) / 4.0).floor() as i64;
    let mut p = 1.0;
    for k in lo1..=hi {
        let k = k as f64;
        p -= phi((4.0 * k + 1.0) * z / rn) - phi((4.0 * k - 1.0) * z / rn);
    }
    for k in lo2..=hi {
        let k = k as f64;
        p += phi((4.0 * k + 3.0) * z / rn) - phi((4.0 * k + 1.0) * z / rn);
    }
    Ok(p.clamp(0.0, 1.0))
}

/// Occurrence counts of all overlapping `m`-bit patterns with wraparound.
fn pattern_counts(bits: &[u8], m: usize) -> Vec<u64> {
    let n = bits.len();
    let mut counts = vec![0u64; 1 << m];
    for i in 0..n {
        let mut idx = 0usize;
        for j in 0..m {
            idx = (idx << 1) | bits[(i + j) % n] as usize;
        }
        counts[idx] += 1;
    }
    counts
}

/// Approximate entropy over `m`- and `(m+1)`-bit patterns.
pub fn approximate_entropy(bits: &[u8], m: usize) -> Result<f64, WatermarkError> {
    check_bits(bits)?;
    let n = bits.len() as f64;
    let needed = 1usize << (m + 1);
    if bits.len() < needed {
        return Err(WatermarkError::InsufficientData { needed, got: bits.len() });
    }
    let phi_m = |mm: usize| -> f64 {
        pattern_counts(bits, mm)
            .into_iter()
            .filter(|&c| c > 0)
            .map(|c| {
                let f = c as f64 / n;
                f * f.ln()
            })
            .sum()
    };
    let ap_en = phi_m(m) - phi_m(m + 1);
    let chi = 2.0 * n * (std::f64::consts::LN_2 - ap_en);
    Ok(gamma_q((1 << (m - 1)) as f64, chi / 2.0))
}

fn psi_sq(bits: &[u8], m: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let n = bits.len() as f64;
    let sum: f64 = pattern_counts(bits, m).into_iter().map(|c| (c * c) as f64).sum();
    (1u64 << m) as f64 / n * sum - n
}

/// Serial test: the (∇ψ², ∇²ψ²) p-value pair for pattern length `m` >= 3.
pub fn serial(bits: &[u8], m: usize) -> Result<(f64, f64), WatermarkError> {
    check_bits(bits)?;
    if m < 3 {
        return Err(WatermarkError::BadInput(format!("serial needs m >= 3, got {m}")));
    }
    if bits.len() < (1 << m) {
        return Err(WatermarkError::InsufficientData { needed: 1 << m, got: bits.len() });
    }
    let d1 = psi_sq(bits, m) - psi_sq(bits, m - 1);
    let d2 = psi_sq(bits, m) - 2.0 * psi_sq(bits, m - 1) + psi_sq(bits, m - 2);
    let p1 = gamma_q((1u64 << (m - 2)) as f64, d1 / 2.0);
    let p2 = gamma_q((1u64 << (m - 3)) as f64, d2 / 2.0);
    Ok((p1, p2))
}

/// Runs the whole battery with its default parameters. Sequences under
/// [`MIN_BITS`] report every test as `NotApplicable`.
pub fn nist_subset(bits: &[u8]) -> Result<BTreeMap<NistTest, TestOutcome>, WatermarkError> {
    check_bits(bits)?;
    use NistTest::*;
    let mut out = BTreeMap::new();
    if bits.len() < MIN_BITS {
        for t in [
            Frequency,
            BlockFrequency,
            Runs,
            LongestRun,
            CusumForward,
            CusumReverse,
            ApproximateEntropy,
            Serial1,
            Serial2,
        ] {
            out.insert(t, TestOutcome::NotApplicable { needed: MIN_BITS });
        }
        return Ok(out);
    }
    out.insert(Frequency, TestOutcome::P(monobit(bits)?));
    out.insert(BlockFrequency, TestOutcome::P(block_frequency(bits, BLOCK_FREQ_M)?));
    out.insert(Runs, TestOutcome::P(runs(bits)?));
    out.insert(LongestRun, TestOutcome::P(longest_run(bits)?));
    out.insert(CusumForward, TestOutcome::P(cumulative_sums(bits, true)?));
    out.insert(CusumReverse, TestOutcome::P(cumulative_sums(bits, false)?));
    out.insert(ApproximateEntropy, TestOutcome::P(approximate_entropy(bits, APEN_M)?));
    let (p1, p2) = serial(bits, SERIAL_M)?;
    out.insert(Serial1, TestOutcome::P(p1));
    out.insert(Serial2, TestOutcome::P(p2));
    Ok(out)
}

/// CSV of the battery results: test,p_value,pass.
pub fn export_pvalues_csv(
    path: &Path,
    results: &BTreeMap<NistTest, TestOutcome>,
) -> Result<(), WatermarkError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "test,p_value,pass")?;
    for (test, outcome) in results {
        match outcome {
            TestOutcome::P(p) => {
                writeln!(out, "{test},{p},{}", if *p > PASS_LEVEL { "yes" } else { "no" })?
            }
            TestOutcome::NotApplicable { needed } => {
                writeln!(out, "{test},,needs {needed} bits")?
            }
        }
    }
    Ok(())
}

/// Text rendering of the battery results.
pub fn pvalue_table_text(results: &BTreeMap<NistTest, TestOutcome>) -> String {
    let mut s = String::from("test                 p-value      verdict\n");
    for (test, outcome) in results {
        match outcome {
            TestOutcome::P(p) => s.push_str(&format!(
                "{:<20} {:<12.6} {}\n",
                test.to_string(),
                p,
                if *p > PASS_LEVEL { "pass" } else { "FAIL" }
            )),
            TestOutcome::NotApplicable { needed } => s.push_str(&format!(
                "{:<20} {:<12} needs {} bits\n",
                test.to_string(),
                "n/a",
                needed
            )),
        }
    }
    s
}
