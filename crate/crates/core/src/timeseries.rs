//! Uniformly sampled multi-channel recordings and their CSV form.
//!
//! A [`Dataset`] is the in-memory form of a historian dump: a fixed sample
//! period, a start time, and one [`TimeSeries`] per channel. Channels are
//! either free-valued sensors or actuators whose values are small integer
//! state codes. Internally time is represented as `start_time + index *
//! sample_period_s`; the CSV form materialises that time column.
//!
//! CSV layout:
//!
//! ```text
//! time,FIT101,MV101
//! 0,0.0013,1
//! 1,0.0042,1
//! ```
//!
//! Values are written with however many digits are needed to reparse to the
//! identical `f64`, so `ingest_csv(export_csv(ds))` reproduces the dataset
//! bit-for-bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// State codes used on actuator channels. Valves report TRANSIT while
/// travelling; pumps switch between OFF and ON directly.
pub mod state_code {
    pub const TRANSIT: f64 = 0.0;
    pub const OFF: f64 = 1.0;
    pub const ON: f64 = 2.0;

    /// True for the resting codes an operation can start from.
    pub fn is_settled(code: f64) -> bool {
        code == OFF || code == ON
    }
}

/// Role of a channel in the plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelKind {
    /// Free-valued measurement (flow, level, ...).
    Sensor,
    /// Reported device state; values are small integer codes.
    Actuator,
}

/// Declares kind and unit for one CSV column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSchema {
    pub kind: ChannelKind,
    #[serde(default)]
    pub unit: String,
}

impl ChannelSchema {
    pub fn sensor(unit: &str) -> Self {
        ChannelSchema { kind: ChannelKind::Sensor, unit: unit.to_string() }
    }
    pub fn actuator() -> Self {
        ChannelSchema { kind: ChannelKind::Actuator, unit: String::new() }
    }
}

/// Maps channel name to its declared schema. `BTreeMap` keeps lookups and
/// serialised form deterministic.
pub type Schema = BTreeMap<String, ChannelSchema>;

#[derive(Debug, Error)]
pub enum TimeSeriesError {
    #[error("time column is not a strictly increasing constant-step grid at row {row}")]
    RaggedSampling { row: usize },
    #[error("channel {0:?} not present")]
    UnknownChannel(String),
    #[error("dataset has no samples or no channels")]
    EmptyDataset,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("window [{start}, {end}) out of range for length {len}")]
    IndexError { start: usize, end: usize, len: usize },
    #[error("row {row}, column {col:?}: {what}")]
    BadValue { row: usize, col: String, what: String },
}

/// One named channel. Values are immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    name: String,
    kind: ChannelKind,
    unit: String,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(name: &str, kind: ChannelKind, unit: &str, values: Vec<f64>) -> Self {
        TimeSeries { name: name.to_string(), kind, unit: unit.to_string(), values }
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn kind(&self) -> ChannelKind {
        self.kind
    }
    pub fn unit(&self) -> &str {
        &self.unit
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A set of equally long channels on one sampling grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    sample_period_s: f64,
    start_time: i64,
    channels: Vec<TimeSeries>,
    provenance: String,
}

impl Dataset {
    /// Builds a dataset, enforcing a positive period, at least one non-empty
    /// channel and equal channel lengths.
    pub fn new(
        sample_period_s: f64,
        start_time: i64,
        channels: Vec<TimeSeries>,
        provenance: &str,
    ) -> Result<Self, TimeSeriesError> {
        if !(sample_period_s > 0.0) {
            return Err(TimeSeriesError::BadValue {
                row: 0,
                col: "time".into(),
                what: format!("sample period must be > 0, got {sample_period_s}"),
            });
        }
        if channels.is_empty() || channels[0].is_empty() {
            return Err(TimeSeriesError::EmptyDataset);
        }
        let len = channels[0].len();
        if let Some(bad) = channels.iter().find(|c| c.len() != len) {
            return Err(TimeSeriesError::RaggedSampling { row: bad.len().min(len) });
        }
        Ok(Dataset { sample_period_s, start_time, channels, provenance: provenance.to_string() })
    }

    pub fn sample_period_s(&self) -> f64 {
        self.sample_period_s
    }
    pub fn start_time(&self) -> i64 {
        self.start_time
    }
    pub fn provenance(&self) -> &str {
        &self.provenance
    }
    /// Number of samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn channels(&self) -> &[TimeSeries] {
        &self.channels
    }
    pub fn channel_names(&self) -> Vec<&str> {
        self.channels.iter().map(|c| c.name()).collect()
    }

    /// Looks a channel up by name.
    pub fn channel(&self, name: &str) -> Result<&TimeSeries, TimeSeriesError> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| TimeSeriesError::UnknownChannel(name.to_string()))
    }

    /// Shorthand for `channel(name)?.values()`.
    pub fn values(&self, name: &str) -> Result<&[f64], TimeSeriesError> {
        Ok(self.channel(name)?.values())
    }

    /// Time of sample `idx` in seconds.
    pub fn time_at(&self, idx: usize) -> f64 {
        self.start_time as f64 + idx as f64 * self.sample_period_s
    }

    /// Copies samples `[start, end)` of every channel. `window(ds, 0, len)`
    /// reproduces the dataset.
    pub fn window(&self, start: usize, end: usize) -> Result<Dataset, TimeSeriesError> {
        let len = self.len();
        if start > end || end > len {
            return Err(TimeSeriesError::IndexError { start, end, len });
        }
        if start == end {
            return Err(TimeSeriesError::EmptyDataset);
        }
        let channels = self
            .channels
            .iter()
            .map(|c| TimeSeries::new(&c.name, c.kind, &c.unit, c.values[start..end].to_vec()))
            .collect();
        let shift = (start as f64 * self.sample_period_s).round() as i64;
        Dataset::new(self.sample_period_s, self.start_time + shift, channels, &self.provenance)
    }

    /// Returns a copy with different provenance text.
    pub fn with_provenance(&self, provenance: &str) -> Dataset {
        let mut ds = self.clone();
        ds.provenance = provenance.to_string();
        ds
    }

    /// Returns a copy with one channel's values replaced. Length must match.
    pub fn with_channel_values(
        &self,
        name: &str,
        values: Vec<f64>,
    ) -> Result<Dataset, TimeSeriesError> {
        if values.len() != self.len() {
            return Err(TimeSeriesError::RaggedSampling { row: values.len() });
        }
        let mut ds = self.clone();
        let ch = ds
            .channels
            .iter_mut()
            .find(|c| c.name == name)
            .ok_or_else(|| TimeSeriesError::UnknownChannel(name.to_string()))?;
        ch.values = values;
        Ok(ds)
    }
}

/// Formats a float so that parsing the text yields the identical bits.
///
/// Rust's shortest-roundtrip formatter prints exactly as many significant
/// digits as the value requires (up to 17), so no precision is lost at any
/// magnitude.
pub fn format_value(v: f64) -> String {
    format!("{v}")
}

/// Writes `ds` in the CSV layout described at module level.
pub fn export_csv(ds: &Dataset, path: &Path) -> Result<(), TimeSeriesError> {
    let mut out = String::new();
    out.push_str("time");
    for c in &ds.channels {
        out.push(',');
        out.push_str(&c.name);
    }
    out.push('\n');
    for i in 0..ds.len() {
        let _ = write!(out, "{}", format_value(ds.time_at(i)));
        for c in &ds.channels {
            out.push(',');
            out.push_str(&format_value(c.values[i]));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parses a CSV file against a schema. Every column must appear in the
/// schema; the time column must be a strictly increasing constant-step grid.
pub fn ingest_csv(path: &Path, schema: &Schema) -> Result<Dataset, TimeSeriesError> {
    let text = std::fs::read_to_string(path)?;
    ingest_csv_str(&text, schema)
}

/// [`ingest_csv`] on in-memory text.
pub fn ingest_csv_str(text: &str, schema: &Schema) -> Result<Dataset, TimeSeriesError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(TimeSeriesError::EmptyDataset)?;
    let mut cols = header.split(',');
    match cols.next() {
        Some("time") => {}
        other => {
            return Err(TimeSeriesError::BadValue {
                row: 0,
                col: "time".into(),
                what: format!("first header cell must be \"time\", got {other:?}"),
            })
        }
    }
    let names: Vec<String> = cols.map(str::to_string).collect();
    if names.is_empty() {
        return Err(TimeSeriesError::EmptyDataset);
    }
    let mut specs = Vec::with_capacity(names.len());
    for n in &names {
        let s = schema.get(n).ok_or_else(|| TimeSeriesError::UnknownChannel(n.clone()))?;
        specs.push(s.clone());
    }

    let mut times: Vec<f64> = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (row_idx, line) in lines.enumerate() {
        let row = row_idx + 1;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let t_txt = fields.next().unwrap_or("");
        times.push(parse_cell(t_txt, row, "time")?);
        for (ci, col) in columns.iter_mut().enumerate() {
            let cell = fields.next().ok_or_else(|| TimeSeriesError::BadValue {
                row,
                col: names[ci].clone(),
                what: "missing cell".into(),
            })?;
            col.push(parse_cell(cell, row, &names[ci])?);
        }
        if fields.next().is_some() {
            return Err(TimeSeriesError::BadValue {
                row,
                col: String::new(),
                what: "more cells than header columns".into(),
            });
        }
    }
    if times.is_empty() {
        return Err(TimeSeriesError::EmptyDataset);
    }

    // Sampling grid check: constant positive step within a tight relative
    // tolerance of the first step.
    let period = if times.len() >= 2 { times[1] - times[0] } else { 1.0 };
    if !(period > 0.0) {
        return Err(TimeSeriesError::RaggedSampling { row: 2 });
    }
    for (i, &t) in times.iter().enumerate() {
        let expect = times[0] + i as f64 * period;
        if (t - expect).abs() > 1e-6 * period.max(1.0) {
            return Err(TimeSeriesError::RaggedSampling { row: i + 1 });
        }
    }
    let start_time = times[0].round() as i64;

    let channels = names
        .iter()
        .zip(specs)
        .zip(columns)
        .map(|((n, s), vals)| TimeSeries::new(n, s.kind, &s.unit, vals))
        .collect();
    Dataset::new(period, start_time, channels, "ingested")
}

fn parse_cell(cell: &str, row: usize, col: &str) -> Result<f64, TimeSeriesError> {
    if cell.is_empty() {
        return Err(TimeSeriesError::BadValue {
            row,
            col: col.to_string(),
            what: "blank cell".into(),
        });
    }
    cell.parse::<f64>().map_err(|e| TimeSeriesError::BadValue {
        row,
        col: col.to_string(),
        what: format!("{e}: {cell:?}"),
    })
}
