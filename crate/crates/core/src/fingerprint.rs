//! Transition-time extraction and per-chunk feature vectors.
//!
//! A device "operation" is the actuator leaving a settled state code; it
//! resolves by the paired sensor crossing a threshold (complete), by the
//! actuator changing course first (incomplete), or by running out the clock
//! (timed out). Complete operations yield transition-time samples; chunks of
//! those are summarised into 8-feature vectors for classification.

use std::io::Write as _;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeseries::{format_value, state_code, Dataset, TimeSeriesError};

#[derive(Debug, Error)]
pub enum FingerprintError {
    #[error("sensor range is degenerate (min == max == {value})")]
    DegenerateRange { value: f64 },
    #[error("channel {channel} row {row}: {code} is not a state code")]
    BadStateCode { channel: String, row: usize, code: f64 },
    #[error("empty series")]
    EmptySeries,
    #[error("chunk of {got} samples, expected {expected}")]
    BadChunk { expected: usize, got: usize },
    #[error("zero variance: higher moments undefined")]
    ZeroVariance,
    #[error(transparent)]
    Channel(#[from] TimeSeriesError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Default operation timeout.
pub const DEFAULT_TIMEOUT_S: f64 = 120.0;
/// Default chunk length for feature extraction.
pub const DEFAULT_CHUNK_SIZE: usize = 10;

/// ON/OFF crossing levels derived from a sensor's observed range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorThresholds {
    pub t_on: f64,
    pub t_off: f64,
    pub s_max: f64,
    pub s_min: f64,
}

impl SensorThresholds {
    /// 90%/10%-of-range levels from known extrema.
    pub fn from_extrema(s_max: f64, s_min: f64) -> Result<Self, FingerprintError> {
        if s_max == s_min {
            return Err(FingerprintError::DegenerateRange { value: s_max });
        }
        Ok(SensorThresholds {
            t_on: 0.9 * s_max + 0.1 * s_min,
            t_off: 0.1 * s_max + 0.9 * s_min,
            s_max,
            s_min,
        })
    }
}

/// Thresholds from the observed extrema of `sensor` in `ds`.
pub fn sensor_thresholds(ds: &Dataset, sensor: &str) -> Result<SensorThresholds, FingerprintError> {
    let vals = ds.values(sensor)?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    SensorThresholds::from_extrema(hi, lo)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TransitionOp {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransitionStatus {
    Complete,
    Incomplete,
    TimedOut,
}

/// One resolved operation of one actuator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionEvent {
    pub actuator: String,
    pub op: TransitionOp,
    /// Sample where the actuator left its settled code.
    pub start_idx: usize,
    /// Sample of the sensor crossing; only present when complete.
    pub end_idx: Option<usize>,
    /// Elapsed seconds; zero when the sensor was already past the threshold
    /// at the command instant. Only present when complete.
    pub transition_time_s: Option<f64>,
    pub status: TransitionStatus,
}

struct Pending {
    start: usize,
    op: TransitionOp,
    target: f64,
    reached_target: bool,
}

fn opposite(settled: f64) -> f64 {
    if settled == state_code::ON {
        state_code::OFF
    } else {
        state_code::ON
    }
}

/// Scans one actuator/sensor pair for operations.
///
/// An operation opens when the actuator departs a settled code (the target
/// is the opposite settled code, or the new code itself for devices that
/// switch without a transit phase). It closes as complete when the sensor
/// crosses `t_on` (ON ops) or `t_off` (OFF ops), as incomplete when the
/// actuator deviates from the expected transit -> target progression, or as
/// timed out past `timeout_s`. An operation still pending when the record
/// ends is discarded.
pub fn extract_transitions(
    ds: &Dataset,
    actuator: &str,
    sensor: &str,
    thresholds: &SensorThresholds,
    timeout_s: f64,
) -> Result<Vec<TransitionEvent>, FingerprintError> {
    let act = ds.values(actuator)?;
    let sen = ds.values(sensor)?;
    let period = ds.sample_period_s();
    for (row, &code) in act.iter().enumerate() {
        if code != state_code::TRANSIT && !state_code::is_settled(code) {
            return Err(FingerprintError::BadStateCode {
                channel: actuator.to_string(),
                row,
                code,
            });
        }
    }
    let mut events = Vec::new();
    let mut pending: Option<Pending> = None;
    for k in 1..act.len() {
        let (prev, cur) = (act[k - 1], act[k]);
        let changed = cur != prev;
        if changed {
            if let Some(p) = &mut pending {
                if !p.reached_target && cur == p.target {
                    p.reached_target = true;
                } else {
                    events.push(TransitionEvent {
                        actuator: actuator.to_string(),
                        op: p.op,
                        start_idx: p.start,
                        end_idx: None,
                        transition_time_s: None,
                        status: TransitionStatus::Incomplete,
                    });
                    pending = None;
                }
            }
        }
        if pending.is_none() && changed && state_code::is_settled(prev) {
            let target = if state_code::is_settled(cur) { cur } else { opposite(prev) };
            let op = if target == state_code::ON { TransitionOp::On } else { TransitionOp::Off };
            pending = Some(Pending { start: k, op, target, reached_target: cur == target });
        }
        if let Some(p) = &pending {
            let crossed = match p.op {
                TransitionOp::On => sen[k] >= thresholds.t_on,
                TransitionOp::Off => sen[k] <= thresholds.t_off,
            };
            let elapsed = (k - p.start) as f64 * period;
            if crossed {
                events.push(TransitionEvent {
                    actuator: actuator.to_string(),
                    op: p.op,
                    start_idx: p.start,
                    end_idx: Some(k),
                    transition_time_s: Some(elapsed),
                    status: TransitionStatus::Complete,
                });
                pending = None;
            } else if elapsed > timeout_s {
                events.push(TransitionEvent {
                    actuator: actuator.to_string(),
                    op: p.op,
                    start_idx: p.start,
                    end_idx: None,
                    transition_time_s: None,
                    status: TransitionStatus::TimedOut,
                });
                pending = None;
            }
        }
    }
    Ok(events)
}

/// Magnitude spectrum of `x`, zero-padded to the next power of two.
///
/// Returns `(y_f, y_m)` for the non-redundant bins `0..=N/2`; bin frequencies
/// assume unit sample rate (one sample per operation index).
pub fn fft_magnitude(x: &[f64]) -> Result<(Vec<f64>, Vec<f64>), FingerprintError> {
    if x.is_empty() {
        return Err(FingerprintError::EmptySeries);
    }
    let n = x.len().next_power_of_two();
    let mut buf: Vec<Complex<f64>> =
        x.iter().map(|&v| Complex::new(v, 0.0)).chain(std::iter::repeat(Complex::new(0.0, 0.0))).take(n).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let bins = n / 2 + 1;
    let y_f = (0..bins).map(|i| i as f64 / n as f64).collect();
    let y_m = buf[..bins].iter().map(|c| c.norm()).collect();
    Ok((y_f, y_m))
}

/// Chunk summary used as one classification sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub mean: f64,
    pub std_dev: f64,
    pub mean_avg_dev: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub spec_std_dev: f64,
    pub spec_centroid: f64,
    pub dc_component: f64,
}

impl FeatureVector {
    pub const NAMES: [&'static str; 8] = [
        "mean",
        "std_dev",
        "mean_avg_dev",
        "skewness",
        "kurtosis",
        "spec_std_dev",
        "spec_centroid",
        "dc_component",
    ];

    pub fn as_array(&self) -> [f64; 8] {
        [
            self.mean,
            self.std_dev,
            self.mean_avg_dev,
            self.skewness,
            self.kurtosis,
            self.spec_std_dev,
            self.spec_centroid,
            self.dc_component,
        ]
    }
}

fn compute(chunk: &[f64], chunk_size: usize) -> Result<(FeatureVector, bool), FingerprintError> {
    if chunk_size < 2 || chunk.len() != chunk_size {
        return Err(FingerprintError::BadChunk { expected: chunk_size.max(2), got: chunk.len() });
    }
    let n = chunk.len() as f64;
    let mean = chunk.iter().sum::<f64>() / n;
    // Sample (N-1) standard deviation; the higher moments then use 1/N with
    // this sigma. The conventions are mixed on purpose — they are applied
    // exactly as specified for the feature table.
    let var = chunk.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std_dev = var.sqrt();
    let mean_avg_dev = chunk.iter().map(|x| (x - mean).abs()).sum::<f64>() / n;
    let degenerate = std_dev == 0.0;
    let (skewness, kurtosis) = if degenerate {
        (0.0, 0.0)
    } else {
        let s3 = chunk.iter().map(|x| ((x - mean) / std_dev).powi(3)).sum::<f64>() / n;
        let s4 = chunk.iter().map(|x| ((x - mean) / std_dev).powi(4)).sum::<f64>() / n;
        (s3, s4 - 3.0)
    };
    let (y_f, y_m) = fft_magnitude(chunk)?;
    let total: f64 = y_m.iter().sum();
    let (spec_centroid, spec_std_dev) = if total > 0.0 {
        let c = y_f.iter().zip(&y_m).map(|(f, m)| f * m).sum::<f64>() / total;
        let s = (y_f.iter().zip(&y_m).map(|(f, m)| f * f * m).sum::<f64>() / total).sqrt();
        (c, s)
    } else {
        (0.0, 0.0)
    };
    Ok((
        FeatureVector {
            mean,
            std_dev,
            mean_avg_dev,
            skewness,
            kurtosis,
            spec_std_dev,
            spec_centroid,
            dc_component: y_m[0],
        },
        degenerate,
    ))
}

/// Feature vector of one chunk; constant chunks are an error here because
/// skewness/kurtosis are undefined at zero variance.
pub fn features(chunk: &[f64], chunk_size: usize) -> Result<FeatureVector, FingerprintError> {
    let (fv, degenerate) = compute(chunk, chunk_size)?;
    if degenerate {
        return Err(FingerprintError::ZeroVariance);
    }
    Ok(fv)
}

/// As [`features`], but a constant chunk yields skewness = kurtosis = 0 and
/// a raised degenerate flag instead of an error. Classification pipelines
/// use this form since near-deterministic devices do produce constant
/// chunks.
pub fn features_lenient(
    chunk: &[f64],
    chunk_size: usize,
) -> Result<(FeatureVector, bool), FingerprintError> {
    compute(chunk, chunk_size)
}

/// Non-overlapping chunks in arrival order; a trailing partial chunk is
/// dropped. Each entry carries the zero-variance flag.
pub fn chunk_features(
    times: &[f64],
    chunk_size: usize,
) -> Result<Vec<(FeatureVector, bool)>, FingerprintError> {
    if chunk_size < 2 {
        return Err(FingerprintError::BadChunk { expected: 2, got: chunk_size });
    }
    times.chunks_exact(chunk_size).map(|c| compute(c, chunk_size)).collect()
}

/// One row per labelled chunk: 8 feature columns then the label.
pub fn export_features_csv(
    path: &Path,
    rows: &[(FeatureVector, String)],
) -> Result<(), FingerprintError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{},label", FeatureVector::NAMES.join(","))?;
    for (fv, label) in rows {
        let cols: Vec<String> = fv.as_array().iter().map(|v| format_value(*v)).collect();
        writeln!(out, "{},{}", cols.join(","), label)?;
    }
    Ok(())
}
