//! Shared plumbing: scenario loading, schema and pair inference, resolved
//! config reports, small CSV readers.

use std::path::{Path, PathBuf};

use actprint_core::fingerprint::{FeatureVector, SensorThresholds, TransitionOp};
use actprint_core::plantsim::{
    AttackWindow, CriticalEvent, DelayDraw, GroundTruth, PathDriver, Scenario, TrueOp,
};
use actprint_core::timeseries::{
    ingest_csv, ChannelKind, ChannelSchema, Dataset, Schema, TimeSeries,
};

use crate::CliError;

/// The bundled scenario: the two-stage plant cycling quickly between narrow
/// set-points, with the command-delay watermark switched on.
pub fn default_scenario() -> Scenario {
    let mut scn = Scenario::fast_cycle();
    scn.watermark.enabled = true;
    scn
}

/// Missing files are operator mistakes, not module failures.
pub fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("input file not found: {}", path.display())))
    }
}

pub fn load_scenario(path: &Option<PathBuf>) -> Result<Scenario, CliError> {
    match path {
        None => Ok(default_scenario()),
        Some(p) => {
            require_file(p)?;
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| {
                CliError::Usage(format!("malformed scenario {}: {e}", p.display()))
            })
        }
    }
}

/// Channel schema implied by a scenario: devices are actuators, tank levels
/// are mm sensors, metered paths are m3/h sensors.
pub fn scenario_schema(scn: &Scenario) -> Schema {
    let mut schema = Schema::new();
    for d in &scn.devices {
        schema.insert(d.device_id.clone(), ChannelSchema::actuator());
    }
    for t in &scn.tanks {
        schema.insert(t.level_channel.clone(), ChannelSchema::sensor("mm"));
    }
    for p in &scn.paths {
        if let Some(s) = &p.sensor {
            schema.insert(s.clone(), ChannelSchema::sensor("m3/h"));
        }
    }
    schema
}

pub fn load_dataset(path: &Path, scn: &Scenario) -> Result<Dataset, CliError> {
    require_file(path)?;
    Ok(ingest_csv(path, &scenario_schema(scn))?)
}

/// (actuator, flow sensor, full-scale flow) for every metered path. Pumped
/// paths pair the meter with the pump: the interlocked valve shows up on the
/// pump's own timing, so the pump is the device being fingerprinted.
pub fn infer_pairs(scn: &Scenario) -> Vec<(String, String, f64)> {
    let mut out = Vec::new();
    for p in &scn.paths {
        let Some(sensor) = &p.sensor else { continue };
        let actuator = match &p.driver {
            PathDriver::Valve(v) => v.clone(),
            PathDriver::PumpThroughValve { pump, .. } => pump.clone(),
            PathDriver::Fixed(_) => continue,
        };
        out.push((actuator, sensor.clone(), p.max_flow_m3h));
    }
    out
}

/// Parses `act:sensor,act:sensor`, pulling each sensor's full-scale value
/// from the scenario's paths.
pub fn parse_pairs(spec: &str, scn: &Scenario) -> Result<Vec<(String, String, f64)>, CliError> {
    let mut out = Vec::new();
    for part in spec.split(',') {
        let (act, sensor) = part
            .split_once(':')
            .ok_or_else(|| CliError::Usage(format!("pair '{part}' is not actuator:sensor")))?;
        let max = scn
            .paths
            .iter()
            .find(|p| p.sensor.as_deref() == Some(sensor))
            .map(|p| p.max_flow_m3h)
            .ok_or_else(|| {
                CliError::Usage(format!("sensor '{sensor}' is not a metered path in the scenario"))
            })?;
        out.push((act.to_string(), sensor.to_string(), max));
    }
    Ok(out)
}

pub fn resolve_pairs(
    spec: &Option<String>,
    scn: &Scenario,
) -> Result<Vec<(String, String, f64)>, CliError> {
    let pairs = match spec {
        Some(s) => parse_pairs(s, scn)?,
        None => infer_pairs(scn),
    };
    if pairs.is_empty() {
        return Err(CliError::Usage("no actuator:sensor pairs (scenario has no metered paths)".into()));
    }
    Ok(pairs)
}

pub fn thresholds_for(max_flow: f64) -> Result<SensorThresholds, CliError> {
    Ok(SensorThresholds::from_extrema(max_flow, 0.0)?)
}

pub fn parse_op(s: &str) -> Result<TransitionOp, CliError> {
    match s {
        "on" | "On" | "ON" => Ok(TransitionOp::On),
        "off" | "Off" | "OFF" => Ok(TransitionOp::Off),
        other => Err(CliError::Usage(format!("op must be on or off, got '{other}'"))),
    }
}

/// `channel:low:high`, e.g. `lit1:600:700`.
pub fn parse_trigger(s: &str) -> Result<(String, f64, f64), CliError> {
    let bad = || CliError::Usage(format!("trigger '{s}' is not channel:low:high"));
    let mut it = s.split(':');
    let ch = it.next().ok_or_else(bad)?;
    let low: f64 = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let high: f64 = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    if it.next().is_some() || ch.is_empty() {
        return Err(bad());
    }
    Ok((ch.to_string(), low, high))
}

/// First tank's level trigger band, for commands that default their trigger.
pub fn default_trigger(scn: &Scenario) -> Result<(String, f64, f64), CliError> {
    let t = scn
        .tanks
        .first()
        .ok_or_else(|| CliError::Usage("scenario has no tanks; pass --trigger".into()))?;
    Ok((t.level_channel.clone(), t.params.level_low_sp, t.params.level_high_sp))
}

pub fn parse_channel_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|c| !c.is_empty()).map(str::to_string).collect()
}

/// Labeled feature rows as written by the fingerprint command: the 8 feature
/// columns in canonical order, then the label.
pub fn read_features_csv(path: &Path) -> Result<Vec<(FeatureVector, String)>, CliError> {
    require_file(path)?;
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Usage(format!("{} is empty", path.display())))?;
    let expected = format!("{},label", FeatureVector::NAMES.join(","));
    if header != expected {
        return Err(CliError::Usage(format!(
            "{}: header '{header}' does not match '{expected}'",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(CliError::Usage(format!(
                "{} line {}: expected 9 columns, got {}",
                path.display(),
                lineno + 2,
                cols.len()
            )));
        }
        let mut v = [0.0f64; 8];
        for (i, c) in cols[..8].iter().enumerate() {
            v[i] = c.parse().map_err(|_| {
                CliError::Usage(format!(
                    "{} line {}: '{c}' is not a number",
                    path.display(),
                    lineno + 2
                ))
            })?;
        }
        let fv = FeatureVector {
            mean: v[0],
            std_dev: v[1],
            mean_avg_dev: v[2],
            skewness: v[3],
            kurtosis: v[4],
            spec_std_dev: v[5],
            spec_centroid: v[6],
            dc_component: v[7],
        };
        rows.push((fv, cols[8].to_string()));
    }
    if rows.is_empty() {
        return Err(CliError::Usage(format!("{} holds no feature rows", path.display())));
    }
    Ok(rows)
}

/// What a ground-truth sidecar file holds; the clean trace itself lives in
/// its own CSV and is not needed for scoring.
#[derive(serde::Deserialize)]
pub struct Sidecar {
    pub attacks: Vec<AttackWindow>,
    pub delay_draws: Vec<DelayDraw>,
    pub true_ops: Vec<TrueOp>,
    pub critical_events: Vec<CriticalEvent>,
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar, CliError> {
    require_file(path)?;
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("malformed sidecar {}: {e}", path.display())))
}

/// Detection scoring only consults the recorded attack windows, so a one-row
/// placeholder stands in for the clean trace the sidecar does not carry.
pub fn sidecar_truth(side: Sidecar) -> Result<GroundTruth, CliError> {
    let dummy = Dataset::new(
        1.0,
        0,
        vec![TimeSeries::new("placeholder", ChannelKind::Sensor, "", vec![0.0])],
        "ingested",
    )?;
    Ok(GroundTruth {
        true_dataset: dummy,
        attacks: side.attacks,
        delay_draws: side.delay_draws,
        true_ops: side.true_ops,
        critical_events: side.critical_events,
    })
}

/// Creates the output directory, writes `config.json` with the resolved
/// settings and returns the pretty JSON for embedding in the text report.
pub fn write_config(out_dir: &Path, config: &serde_json::Value) -> Result<String, CliError> {
    std::fs::create_dir_all(out_dir)?;
    let pretty = serde_json::to_string_pretty(config)
        .map_err(|e| CliError::Module { name: "IoError", message: e.to_string() })?;
    std::fs::write(out_dir.join("config.json"), format!("{pretty}\n"))?;
    Ok(pretty)
}

pub fn write_report(out_dir: &Path, name: &str, body: &str, config_json: &str) -> Result<(), CliError> {
    let text = format!("{body}\n--- resolved configuration ---\n{config_json}\n");
    std::fs::write(out_dir.join(name), text)?;
    Ok(())
}
