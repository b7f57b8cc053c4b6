//! Seeded simulator of a two-stage water process: motorized valves and pumps
//! with travel/spin-up transients, first-order flow lag into integrating
//! tanks, PLC fill hysteresis with a pump/valve interlock, optional
//! command-delay watermarking, and a catalog of sensor/command attacks
//! applied to the reported channels only.
//!
//! `simulate` returns the reported [`Dataset`] (noise + attacks) plus a
//! [`GroundTruth`] carrying the clean trace, true operations, attack windows
//! and watermark draws.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::TransitionOp;
use crate::timeseries::{Dataset, TimeSeriesError};

mod engine;

#[derive(Debug, Error)]
pub enum PlantSimError {
    #[error("scenario config: {0}")]
    Config(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error(transparent)]
    Channel(#[from] TimeSeriesError),
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, PlantSimError> {
    Err(PlantSimError::Config(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeviceKind {
    MotorizedValve,
    Pump,
}

/// Physical parameters of one actuator and the flow it drives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceParams {
    pub device_id: String,
    pub kind: DeviceKind,
    /// Full travel time for valves, spin-up time for pumps.
    pub open_time_s: f64,
    /// Full travel / spin-down; defaults to 1.15 x open.
    pub close_time_s: f64,
    /// Per-operation Gaussian jitter on the travel time.
    pub jitter_std_s: f64,
    /// First-order lag of the driven flow.
    pub process_tau_s: f64,
}

impl DeviceParams {
    pub fn valve(id: &str, open_time_s: f64, jitter_std_s: f64, process_tau_s: f64) -> Self {
        DeviceParams {
            device_id: id.to_string(),
            kind: DeviceKind::MotorizedValve,
            open_time_s,
            close_time_s: 1.15 * open_time_s,
            jitter_std_s,
            process_tau_s,
        }
    }

    pub fn pump(id: &str, spin_time_s: f64, jitter_std_s: f64, process_tau_s: f64) -> Self {
        DeviceParams {
            device_id: id.to_string(),
            kind: DeviceKind::Pump,
            open_time_s: spin_time_s,
            close_time_s: 1.15 * spin_time_s,
            jitter_std_s,
            process_tau_s,
        }
    }

    fn validate(&self) -> Result<(), PlantSimError> {
        if self.open_time_s <= 0.0 || self.close_time_s <= 0.0 || self.process_tau_s <= 0.0 {
            return config_err(format!("{}: times must be positive", self.device_id));
        }
        if self.jitter_std_s < 0.0 || self.jitter_std_s >= self.open_time_s / 3.0 {
            return config_err(format!(
                "{}: jitter_std_s must lie in [0, open_time/3)",
                self.device_id
            ));
        }
        Ok(())
    }
}

/// Tank geometry and rate limits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TankParams {
    /// Level-rate per unit inflow (mm/s per m3/h).
    pub area: f64,
    pub level_low_sp: f64,
    pub level_high_sp: f64,
    pub level_critical_high: f64,
    pub level_critical_low: f64,
    /// Worst-case fill rate at full inflow (mm/s).
    pub max_in_rate: f64,
    /// Worst-case drain rate at full outflow (mm/s).
    pub max_out_rate: f64,
}

impl Default for TankParams {
    fn default() -> Self {
        TankParams {
            area: 0.2,
            level_low_sp: 500.0,
            level_high_sp: 800.0,
            level_critical_high: 1000.0,
            level_critical_low: 150.0,
            max_in_rate: 0.48,
            max_out_rate: 0.47,
        }
    }
}

impl TankParams {
    pub(crate) fn validate(&self, id: &str) -> Result<(), PlantSimError> {
        let ordered = self.level_critical_low < self.level_low_sp
            && self.level_low_sp < self.level_high_sp
            && self.level_high_sp < self.level_critical_high;
        if !ordered {
            return config_err(format!("{id}: require critical_low < low < high < critical_high"));
        }
        if self.area <= 0.0 || self.max_in_rate <= 0.0 || self.max_out_rate <= 0.0 {
            return config_err(format!("{id}: area and rates must be positive"));
        }
        Ok(())
    }

    /// Worst-case seconds from the working band to a critical level:
    /// overflow fills at max_in_rate with no outflow, underflow drains at
    /// max_out_rate with no inflow.
    pub fn time_to_critical_bound_s(&self) -> f64 {
        let t_high = (self.level_critical_high - self.level_high_sp) / self.max_in_rate;
        let t_low = (self.level_low_sp - self.level_critical_low) / self.max_out_rate;
        t_high.min(t_low)
    }
}

/// One tank instance and its level channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tank {
    pub id: String,
    pub level_channel: String,
    pub params: TankParams,
    pub initial_level: f64,
}

/// What pushes flow through a path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum PathDriver {
    /// Gravity/supply line throttled by one valve.
    Valve(String),
    /// Pump discharging through an interlocked valve: flow is forced to zero
    /// unless the valve is fully open.
    PumpThroughValve { pump: String, valve: String },
    /// Constant normalized draw (process demand).
    Fixed(f64),
}

/// A metered (or silent) flow line between tanks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowPath {
    /// Flow meter channel; `None` for unmetered demand lines.
    pub sensor: Option<String>,
    pub driver: PathDriver,
    /// Tank drained by this path (`None` = external supply).
    pub from_tank: Option<String>,
    /// Tank filled by this path (`None` = external sink).
    pub into_tank: Option<String>,
    /// Flow at full drive, in m3/h; also the meter's full-scale value.
    pub max_flow_m3h: f64,
}

/// One PLC fill loop: keep a tank between its set-points by opening the
/// inlet valve (and, after the valve reports fully open, its pump).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FillLoop {
    pub level_channel: String,
    pub valve: Option<String>,
    pub pump: Option<String>,
}

/// Command-delay watermark configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WatermarkPolicy {
    pub enabled: bool,
    pub delay_min_s: f64,
    pub delay_max_s: f64,
    /// Delay grid resolution in seconds.
    pub granularity_s: f64,
    /// Seed of the delay generator, independent of the simulation seed.
    pub seed: u64,
}

impl Default for WatermarkPolicy {
    fn default() -> Self {
        // 64 grid points: (41.5 - 10) / 0.5 + 1.
        WatermarkPolicy {
            enabled: false,
            delay_min_s: 10.0,
            delay_max_s: 41.5,
            granularity_s: 0.5,
            seed: 0x5EED,
        }
    }
}

impl WatermarkPolicy {
    /// Number of distinct delays on the grid.
    pub fn choices(&self) -> usize {
        ((self.delay_max_s - self.delay_min_s) / self.granularity_s).round() as usize + 1
    }

    pub(crate) fn validate(&self) -> Result<(), PlantSimError> {
        if !(0.0 <= self.delay_min_s && self.delay_min_s <= self.delay_max_s) {
            return config_err("watermark: require 0 <= delay_min <= delay_max");
        }
        if self.granularity_s <= 0.0 {
            return config_err("watermark: granularity must be positive");
        }
        let span = self.delay_max_s - self.delay_min_s;
        let steps = (span / self.granularity_s).round();
        if (span - steps * self.granularity_s).abs() > 1e-9 {
            return config_err("watermark: delay span must be a whole number of grid steps");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttackType {
    A1,
    B1,
    C1,
    D1,
    D2,
    E1,
    F1,
}

impl std::fmt::Display for AttackType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Per-type attack knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AttackParams {
    None,
    /// A1: constant reported by the spoofed sensor.
    SpoofValue(f64),
    /// B1: injected command as a settled state code (1.0 or 2.0).
    Command(f64),
    /// C1: samples between forced toggles.
    TogglePeriod(usize),
    /// D1/E1: length of the spoofed sigmoid trace, in samples.
    SigmoidDuration(usize),
}

/// One scheduled attack on the reported data and/or command path.
///
/// Target conventions: A1/D2 list spoofed sensors; B1/C1 name one actuator;
/// D1/E1 name `[actuator, flow_sensor]`; F1 names exactly two sensors to
/// swap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSpec {
    pub attack: AttackType,
    pub targets: Vec<String>,
    pub start_idx: usize,
    pub duration: usize,
    pub params: AttackParams,
}

/// Scenario: plant topology, control program, watermark policy and attack
/// schedule. Serializable so runs can be described as config documents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub sample_period_s: f64,
    /// Per-device nominal-time spread (fraction, e.g. 0.08 = +/-8%), applied
    /// from a fixed per-device hash so the same id always gets the same
    /// hardware.
    pub device_spread: f64,
    pub devices: Vec<DeviceParams>,
    pub tanks: Vec<Tank>,
    pub paths: Vec<FlowPath>,
    pub loops: Vec<FillLoop>,
    /// Additive Gaussian noise per sensor channel (std in channel units).
    pub sensor_noise_std: BTreeMap<String, f64>,
    pub watermark: WatermarkPolicy,
    pub attacks: Vec<AttackSpec>,
}

impl Scenario {
    /// Two tanks in series with textbook set-points: `mv1` fills `t1`
    /// (meter `fit1`), pump `p1` discharges through interlocked `mv2` into
    /// `t2` (meter `fit2`), and a fixed demand drains `t2`.
    pub fn two_stage_default() -> Scenario {
        let mut noise = BTreeMap::new();
        noise.insert("fit1".to_string(), 0.02);
        noise.insert("fit2".to_string(), 0.02);
        noise.insert("lit1".to_string(), 0.5);
        noise.insert("lit2".to_string(), 0.5);
        Scenario {
            sample_period_s: 1.0,
            device_spread: 0.08,
            devices: vec![
                DeviceParams::valve("mv1", 15.0, 1.2, 6.0),
                DeviceParams::valve("mv2", 12.0, 1.0, 4.0),
                DeviceParams::pump("p1", 4.0, 0.4, 3.0),
            ],
            tanks: vec![
                Tank {
                    id: "t1".to_string(),
                    level_channel: "lit1".to_string(),
                    params: TankParams::default(),
                    initial_level: 650.0,
                },
                Tank {
                    id: "t2".to_string(),
                    level_channel: "lit2".to_string(),
                    params: TankParams { max_in_rate: 0.47, max_out_rate: 0.25, ..TankParams::default() },
                    initial_level: 520.0,
                },
            ],
            paths: vec![
                FlowPath {
                    sensor: Some("fit1".to_string()),
                    driver: PathDriver::Valve("mv1".to_string()),
                    from_tank: None,
                    into_tank: Some("t1".to_string()),
                    max_flow_m3h: 2.4,
                },
                FlowPath {
                    sensor: Some("fit2".to_string()),
                    driver: PathDriver::PumpThroughValve {
                        pump: "p1".to_string(),
                        valve: "mv2".to_string(),
                    },
                    from_tank: Some("t1".to_string()),
                    into_tank: Some("t2".to_string()),
                    max_flow_m3h: 2.35,
                },
                FlowPath {
                    sensor: None,
                    driver: PathDriver::Fixed(1.0),
                    from_tank: Some("t2".to_string()),
                    into_tank: None,
                    max_flow_m3h: 1.25,
                },
            ],
            loops: vec![
                FillLoop {
                    level_channel: "lit1".to_string(),
                    valve: Some("mv1".to_string()),
                    pump: None,
                },
                FillLoop {
                    level_channel: "lit2".to_string(),
                    valve: Some("mv2".to_string()),
                    pump: Some("p1".to_string()),
                },
            ],
            sensor_noise_std: noise,
            watermark: WatermarkPolicy::default(),
            attacks: Vec::new(),
        }
    }

    /// The default plant with a narrow hysteresis band so fill/drain cycles
    /// are minutes, not hours — used for long operation-rich campaigns.
    pub fn fast_cycle() -> Scenario {
        let mut scn = Scenario::two_stage_default();
        for tank in &mut scn.tanks {
            tank.params.level_low_sp = 600.0;
            tank.params.level_high_sp = 700.0;
        }
        scn.tanks[0].initial_level = 650.0;
        scn.tanks[1].initial_level = 620.0;
        scn
    }

    /// Worst-case time-to-critical over all tanks (seconds).
    pub fn time_to_critical_bound_s(&self) -> f64 {
        self.tanks
            .iter()
            .map(|t| t.params.time_to_critical_bound_s())
            .fold(f64::INFINITY, f64::min)
    }

    fn device(&self, id: &str) -> Option<&DeviceParams> {
        self.devices.iter().find(|d| d.device_id == id)
    }

    fn path_by_sensor(&self, sensor: &str) -> Option<&FlowPath> {
        self.paths.iter().find(|p| p.sensor.as_deref() == Some(sensor))
    }

    fn is_sensor_channel(&self, name: &str) -> bool {
        self.tanks.iter().any(|t| t.level_channel == name)
            || self.paths.iter().any(|p| p.sensor.as_deref() == Some(name))
    }

    pub fn validate(&self) -> Result<(), PlantSimError> {
        if self.sample_period_s <= 0.0 {
            return config_err("sample period must be positive");
        }
        if !(0.0..0.5).contains(&self.device_spread) {
            return config_err("device_spread must lie in [0, 0.5)");
        }
        if self.devices.is_empty() || self.tanks.is_empty() || self.paths.is_empty() {
            return config_err("scenario needs at least one device, tank and path");
        }
        let mut names: Vec<&str> = Vec::new();
        for d in &self.devices {
            d.validate()?;
            names.push(&d.device_id);
        }
        for t in &self.tanks {
            t.params.validate(&t.id)?;
            names.push(&t.level_channel);
        }
        for p in &self.paths {
            if let Some(s) = &p.sensor {
                names.push(s);
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for n in names {
            if !seen.insert(n) {
                return config_err(format!("duplicate channel or device name {n}"));
            }
        }
        for t in &self.tanks {
            if t.initial_level <= t.params.level_critical_low
                || t.initial_level >= t.params.level_critical_high
            {
                return config_err(format!("{}: initial level must start non-critical", t.id));
            }
        }
        for p in &self.paths {
            if p.max_flow_m3h <= 0.0 {
                return config_err("path max flow must be positive");
            }
            match &p.driver {
                PathDriver::Valve(v) => {
                    if self.device(v).is_none() {
                        return config_err(format!("path driver {v} is not a device"));
                    }
                }
                PathDriver::PumpThroughValve { pump, valve } => {
                    match (self.device(pump), self.device(valve)) {
                        (Some(p_dev), Some(v_dev))
                            if p_dev.kind == DeviceKind::Pump
                                && v_dev.kind == DeviceKind::MotorizedValve => {}
                        _ => {
                            return config_err(format!(
                                "interlock pair ({pump}, {valve}) must be a pump and a valve"
                            ))
                        }
                    }
                }
                PathDriver::Fixed(x) => {
                    if !(0.0..=1.0).contains(x) {
                        return config_err("fixed drive must lie in [0, 1]");
                    }
                }
            }
            for tank in [&p.from_tank, &p.into_tank].into_iter().flatten() {
                if !self.tanks.iter().any(|t| &t.id == tank) {
                    return config_err(format!("path references unknown tank {tank}"));
                }
            }
        }
        for l in &self.loops {
            if !self.tanks.iter().any(|t| t.level_channel == l.level_channel) {
                return config_err(format!("loop level channel {} unknown", l.level_channel));
            }
            if l.valve.is_none() && l.pump.is_none() {
                return config_err("loop must drive at least one device");
            }
            for d in [&l.valve, &l.pump].into_iter().flatten() {
                if self.device(d).is_none() {
                    return config_err(format!("loop references unknown device {d}"));
                }
            }
        }
        for (chan, std) in &self.sensor_noise_std {
            if !self.is_sensor_channel(chan) {
                return config_err(format!("noise configured for unknown sensor {chan}"));
            }
            if *std < 0.0 {
                return config_err(format!("{chan}: noise std must be non-negative"));
            }
        }
        self.watermark.validate()?;
        if self.watermark.delay_max_s >= self.time_to_critical_bound_s() {
            return config_err("watermark delay_max must stay below the time-to-critical bound");
        }
        for a in &self.attacks {
            self.validate_attack(a)?;
        }
        Ok(())
    }

    fn validate_attack(&self, a: &AttackSpec) -> Result<(), PlantSimError> {
        if a.start_idx == 0 || a.duration == 0 {
            return config_err(format!("{}: window must start after sample 0", a.attack));
        }
        let sensor_arity_ok = |want: usize| a.targets.len() == want
            && a.targets.iter().all(|t| self.is_sensor_channel(t));
        match a.attack {
            AttackType::A1 => {
                if !sensor_arity_ok(1) {
                    return config_err("A1 targets exactly one sensor");
                }
                if !matches!(a.params, AttackParams::SpoofValue(v) if v.is_finite()) {
                    return config_err("A1 needs a finite SpoofValue");
                }
            }
            AttackType::D2 => {
                if a.targets.is_empty() || !a.targets.iter().all(|t| self.is_sensor_channel(t)) {
                    return config_err("D2 targets one or more sensors");
                }
            }
            AttackType::B1 => {
                if a.targets.len() != 1 || self.device(&a.targets[0]).is_none() {
                    return config_err("B1 targets exactly one actuator");
                }
                if !matches!(a.params, AttackParams::Command(c) if c == 1.0 || c == 2.0) {
                    return config_err("B1 needs Command(1.0|2.0)");
                }
            }
            AttackType::C1 => {
                if a.targets.len() != 1 || self.device(&a.targets[0]).is_none() {
                    return config_err("C1 targets exactly one actuator");
                }
                if !matches!(a.params, AttackParams::TogglePeriod(p) if p >= 1) {
                    return config_err("C1 needs TogglePeriod >= 1");
                }
            }
            AttackType::D1 | AttackType::E1 => {
                let ok = a.targets.len() == 2
                    && self.device(&a.targets[0]).is_some()
                    && self.path_by_sensor(&a.targets[1]).is_some();
                if !ok {
                    return config_err(format!(
                        "{} targets [actuator, metered flow sensor]",
                        a.attack
                    ));
                }
                if !matches!(a.params, AttackParams::SigmoidDuration(d) if d >= 2) {
                    return config_err(format!("{} needs SigmoidDuration >= 2", a.attack));
                }
            }
            AttackType::F1 => {
                if !sensor_arity_ok(2) || a.targets[0] == a.targets[1] {
                    return config_err("F1 targets exactly two distinct sensors");
                }
            }
        }
        Ok(())
    }
}

/// A scheduled attack as it actually ran; `end_idx` is exclusive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackWindow {
    pub attack: AttackType,
    pub targets: Vec<String>,
    pub start_idx: usize,
    pub end_idx: usize,
    /// B1 only: the injected command matched the state the PLC already
    /// wanted, so nothing physically changed.
    pub no_op_attack: bool,
}

/// One watermark delay draw.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DelayDraw {
    pub device: String,
    pub op: TransitionOp,
    pub trigger_idx: usize,
    pub execute_idx: usize,
    pub delay_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpSource {
    Control,
    Attack,
}

/// A command the plant actually executed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrueOp {
    pub device: String,
    pub op: TransitionOp,
    pub command_idx: usize,
    /// Sample where the drive reached its target; `None` if superseded or
    /// still travelling at end of record.
    pub settled_idx: Option<usize>,
    pub source: OpSource,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalEvent {
    pub tank: String,
    pub idx: usize,
    pub level: f64,
    pub high: bool,
}

/// Everything the simulator knows that an operator would not.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Noise-free, attack-free channels on the reported schema.
    pub true_dataset: Dataset,
    pub attacks: Vec<AttackWindow>,
    pub delay_draws: Vec<DelayDraw>,
    pub true_ops: Vec<TrueOp>,
    pub critical_events: Vec<CriticalEvent>,
}

#[derive(Serialize)]
struct SidecarView<'a> {
    attacks: &'a [AttackWindow],
    delay_draws: &'a [DelayDraw],
    true_ops: &'a [TrueOp],
    critical_events: &'a [CriticalEvent],
}

impl GroundTruth {
    /// JSON sidecar: attack windows, true operations, watermark draws and
    /// critical excursions (the clean trace itself is exported as CSV).
    pub fn export_sidecar_json(&self, path: &Path) -> Result<(), PlantSimError> {
        let view = SidecarView {
            attacks: &self.attacks,
            delay_draws: &self.delay_draws,
            true_ops: &self.true_ops,
            critical_events: &self.critical_events,
        };
        let text = serde_json::to_string_pretty(&view)
            .map_err(|e| PlantSimError::Config(format!("sidecar serialization: {e}")))?;
        std::fs::write(path, text).map_err(|e| PlantSimError::Channel(TimeSeriesError::Io(e)))?;
        Ok(())
    }
}

/// Run the scenario for `duration_s` seconds.
pub fn simulate(
    scenario: &Scenario,
    duration_s: f64,
    seed: u64,
) -> Result<(Dataset, GroundTruth), PlantSimError> {
    engine::run(scenario, duration_s, seed)
}

/// Simulate `live_scenario`, then overwrite every reported channel inside
/// each `[start, end)` window with the corresponding rows of `recorded` — a
/// replay attack against a (possibly watermarked) live plant. The returned
/// GroundTruth still carries the live run's delay draws.
pub fn replay_attack(
    recorded: &Dataset,
    live_scenario: &Scenario,
    duration_s: f64,
    seed: u64,
    windows: &[(usize, usize)],
) -> Result<(Dataset, GroundTruth), PlantSimError> {
    let (live, truth) = engine::run(live_scenario, duration_s, seed)?;
    let names: Vec<String> = live.channel_names().iter().map(|s| s.to_string()).collect();
    for name in &names {
        if recorded.channel(name).is_err() {
            return Err(PlantSimError::Schema(format!("recorded trace lacks channel {name}")));
        }
    }
    let mut spliced = live;
    for name in &names {
        let recorded_vals = recorded.values(name)?.to_vec();
        let mut vals = spliced.values(name)?.to_vec();
        for &(start, end) in windows {
            if start >= end || end > vals.len() || end > recorded_vals.len() {
                return Err(PlantSimError::Schema(format!(
                    "replay window [{start}, {end}) outside both traces"
                )));
            }
            vals[start..end].copy_from_slice(&recorded_vals[start..end]);
        }
        spliced = spliced.with_channel_values(name, vals)?;
    }
    Ok((spliced, truth))
}
