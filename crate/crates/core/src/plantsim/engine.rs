//! Tick loop: PLC decisions from the previous reported row, delayed command
//! execution, actuator travel, first-order flow lag, tank integration,
//! sensor noise, then reported-channel attacks. True channels never see
//! noise or spoofing, so ground truth stays exact.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::rng::{fnv1a, substream, Chacha};
use crate::timeseries::{state_code, ChannelKind, TimeSeries};

const SNAP_EPS: f64 = 1e-9;

struct Dev {
    id: String,
    kind: DeviceKind,
    jitter_std: f64,
    nominal_open: f64,
    nominal_close: f64,
    drive: f64,
    commanded: f64,
    travel_s: f64,
    open_op: Option<usize>,
    col: usize,
}

impl Dev {
    fn code(&self) -> f64 {
        match self.kind {
            // Valves report an intermediate code while travelling.
            DeviceKind::MotorizedValve => {
                if self.drive == 1.0 {
                    state_code::ON
                } else if self.drive == 0.0 {
                    state_code::OFF
                } else {
                    state_code::TRANSIT
                }
            }
            // Pumps report run status as soon as the command lands.
            DeviceKind::Pump => {
                if self.commanded == 1.0 {
                    state_code::ON
                } else {
                    state_code::OFF
                }
            }
        }
    }
}

enum DriverRt {
    Valve(usize),
    PumpValve { pump: usize, valve: usize },
    Fixed(f64),
}

struct PathRt {
    driver: DriverRt,
    alpha: f64,
    flow: f64,
    from: Option<usize>,
    into: Option<usize>,
    max_flow: f64,
    col: Option<usize>,
}

struct TankRt {
    id: String,
    level: f64,
    in_critical: bool,
    col: usize,
    params: TankParams,
}

struct LoopRt {
    level_col: usize,
    low: f64,
    high: f64,
    valve: Option<usize>,
    valve_col: Option<usize>,
    pump: Option<usize>,
    filling: bool,
}

struct AttackRt {
    spec: AttackSpec,
    end: usize,
    target_cols: Vec<usize>,
    dev: Option<usize>,
    /// D1/E1: full-scale value of the spoofed flow meter.
    sensor_max: f64,
    /// Captured at window start.
    frozen: Vec<f64>,
    s0: f64,
    fake_on: bool,
    c0: f64,
    no_op: bool,
}

fn command_drive(code: f64) -> f64 {
    if code == state_code::ON {
        1.0
    } else {
        0.0
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn apply_command(
    devs: &mut [Dev],
    true_ops: &mut Vec<TrueOp>,
    jitter: &mut Chacha,
    d: usize,
    target: f64,
    k: usize,
    source: OpSource,
) {
    let dev = &mut devs[d];
    if dev.commanded == target {
        return;
    }
    dev.commanded = target;
    let base = if target == 1.0 { dev.nominal_open } else { dev.nominal_close };
    dev.travel_s = if dev.jitter_std > 0.0 {
        let z: f64 = jitter.sample(StandardNormal);
        (base + dev.jitter_std * z).max(0.1 * base)
    } else {
        base
    };
    let op = if target == 1.0 { TransitionOp::On } else { TransitionOp::Off };
    true_ops.push(TrueOp {
        device: dev.id.clone(),
        op,
        command_idx: k,
        settled_idx: None,
        source,
    });
    dev.open_op = Some(true_ops.len() - 1);
}

pub(super) fn run(
    scn: &Scenario,
    duration_s: f64,
    seed: u64,
) -> Result<(Dataset, GroundTruth), PlantSimError> {
    scn.validate()?;
    let dt = scn.sample_period_s;
    let n = (duration_s / dt).round() as usize;
    if n < 2 {
        return config_err("duration must cover at least two samples");
    }
    for a in &scn.attacks {
        if a.start_idx + a.duration > n {
            return config_err(format!("{} window runs past the record ({n} samples)", a.attack));
        }
    }

    // Channel layout: levels, metered flows, actuators — in declaration order.
    let mut names: Vec<String> = Vec::new();
    let mut kinds: Vec<ChannelKind> = Vec::new();
    let mut units: Vec<String> = Vec::new();
    let mut push = |names: &mut Vec<String>, n: &str, k: ChannelKind, u: &str| {
        names.push(n.to_string());
        kinds.push(k);
        units.push(u.to_string());
    };
    for t in &scn.tanks {
        push(&mut names, &t.level_channel, ChannelKind::Sensor, "mm");
    }
    for p in &scn.paths {
        if let Some(s) = &p.sensor {
            push(&mut names, s, ChannelKind::Sensor, "m3/h");
        }
    }
    for d in &scn.devices {
        push(&mut names, &d.device_id, ChannelKind::Actuator, "");
    }
    let col_of = |name: &str| names.iter().position(|n| n == name).unwrap();

    let dev_index = |id: &str| scn.devices.iter().position(|d| d.device_id == id).unwrap();
    let mut devs: Vec<Dev> = scn
        .devices
        .iter()
        .map(|d| {
            let u = (fnv1a(d.device_id.as_bytes()) >> 11) as f64 / (1u64 << 53) as f64;
            let factor = 1.0 + scn.device_spread * (2.0 * u - 1.0);
            Dev {
                id: d.device_id.clone(),
                kind: d.kind,
                jitter_std: d.jitter_std_s,
                nominal_open: d.open_time_s * factor,
                nominal_close: d.close_time_s * factor,
                drive: 0.0,
                commanded: 0.0,
                travel_s: d.open_time_s * factor,
                open_op: None,
                col: col_of(&d.device_id),
            }
        })
        .collect();

    let tank_index = |id: &str| scn.tanks.iter().position(|t| t.id == id).unwrap();
    let mut tanks: Vec<TankRt> = scn
        .tanks
        .iter()
        .map(|t| TankRt {
            id: t.id.clone(),
            level: t.initial_level,
            in_critical: false,
            col: col_of(&t.level_channel),
            params: t.params.clone(),
        })
        .collect();

    let mut paths: Vec<PathRt> = scn
        .paths
        .iter()
        .map(|p| {
            let (driver, tau) = match &p.driver {
                PathDriver::Valve(v) => {
                    let i = dev_index(v);
                    (DriverRt::Valve(i), scn.devices[i].process_tau_s)
                }
                PathDriver::PumpThroughValve { pump, valve } => {
                    let pi = dev_index(pump);
                    (DriverRt::PumpValve { pump: pi, valve: dev_index(valve) },
                     scn.devices[pi].process_tau_s)
                }
                PathDriver::Fixed(x) => (DriverRt::Fixed(*x), 1.0),
            };
            PathRt {
                driver,
                alpha: 1.0 - (-dt / tau).exp(),
                flow: 0.0,
                from: p.from_tank.as_deref().map(tank_index),
                into: p.into_tank.as_deref().map(tank_index),
                max_flow: p.max_flow_m3h,
                col: p.sensor.as_deref().map(col_of),
            }
        })
        .collect();

    let mut loops: Vec<LoopRt> = scn
        .loops
        .iter()
        .map(|l| {
            let tank = scn.tanks.iter().find(|t| t.level_channel == l.level_channel).unwrap();
            LoopRt {
                level_col: col_of(&l.level_channel),
                low: tank.params.level_low_sp,
                high: tank.params.level_high_sp,
                valve: l.valve.as_deref().map(dev_index),
                valve_col: l.valve.as_deref().map(col_of),
                pump: l.pump.as_deref().map(dev_index),
                filling: tank.initial_level <= tank.params.level_low_sp,
            }
        })
        .collect();

    let mut attacks: Vec<AttackRt> = scn
        .attacks
        .iter()
        .map(|a| AttackRt {
            end: a.start_idx + a.duration,
            target_cols: a.targets.iter().map(|t| col_of(t)).collect(),
            dev: match a.attack {
                AttackType::B1 | AttackType::C1 | AttackType::D1 | AttackType::E1 => {
                    Some(dev_index(&a.targets[0]))
                }
                _ => None,
            },
            sensor_max: match a.attack {
                AttackType::D1 | AttackType::E1 => {
                    scn.path_by_sensor(&a.targets[1]).unwrap().max_flow_m3h
                }
                _ => 0.0,
            },
            frozen: Vec::new(),
            s0: 0.0,
            fake_on: false,
            c0: 0.0,
            no_op: false,
            spec: a.clone(),
        })
        .collect();

    let n_cols = names.len();
    let mut true_m: Vec<Vec<f64>> = vec![vec![0.0; n]; n_cols];
    let mut reported: Vec<Vec<f64>> = vec![vec![0.0; n]; n_cols];
    let noise_std: Vec<f64> = names
        .iter()
        .map(|name| scn.sensor_noise_std.get(name).copied().unwrap_or(0.0))
        .collect();

    let mut jitter_rng = substream(seed, "jitter");
    let mut noise_rng = substream(seed, "noise");
    let mut wm_rng = substream(scn.watermark.seed, "watermark");

    let mut true_ops: Vec<TrueOp> = Vec::new();
    let mut delay_draws: Vec<DelayDraw> = Vec::new();
    let mut critical_events: Vec<CriticalEvent> = Vec::new();
    let mut pending: Vec<VecDeque<(usize, f64)>> = vec![VecDeque::new(); devs.len()];

    let write_row = |true_m: &mut Vec<Vec<f64>>,
                     k: usize,
                     tanks: &[TankRt],
                     paths: &[PathRt],
                     devs: &[Dev]| {
        for t in tanks {
            true_m[t.col][k] = t.level;
        }
        for p in paths {
            if let Some(c) = p.col {
                true_m[c][k] = p.flow * p.max_flow;
            }
        }
        for d in devs {
            true_m[d.col][k] = d.code();
        }
    };
    write_row(&mut true_m, 0, &tanks, &paths, &devs);
    for c in 0..n_cols {
        reported[c][0] = true_m[c][0];
        if kinds[c] == ChannelKind::Sensor && noise_std[c] > 0.0 {
            let z: f64 = noise_rng.sample(StandardNormal);
            reported[c][0] += noise_std[c] * z;
        }
    }

    for k in 1..n {
        // (1a) PLC: hysteresis per fill loop, pump gated on the valve
        // reporting fully open. Decisions read the previous reported row.
        let mut desires: Vec<(usize, f64)> = Vec::new();
        for lp in &mut loops {
            let level = reported[lp.level_col][k - 1];
            if level <= lp.low {
                lp.filling = true;
            } else if level >= lp.high {
                lp.filling = false;
            }
            if let Some(v) = lp.valve {
                desires.push((v, if lp.filling { 1.0 } else { 0.0 }));
            }
            if let Some(p) = lp.pump {
                let valve_open = match lp.valve_col {
                    Some(vc) => reported[vc][k - 1] == state_code::ON,
                    None => true,
                };
                desires.push((p, if lp.filling && valve_open { 1.0 } else { 0.0 }));
            }
        }

        // Devices currently held by a command-channel attacker ignore the PLC.
        let held = |d: usize| {
            attacks.iter().any(|a| {
                matches!(a.spec.attack, AttackType::B1 | AttackType::C1)
                    && a.dev == Some(d)
                    && a.spec.start_idx <= k
                    && k < a.end
            })
        };

        // (1b) Trigger commands, watermark-delayed when enabled.
        for (d, want) in desires {
            if want == devs[d].commanded || !pending[d].is_empty() || held(d) {
                continue;
            }
            let mut execute = k;
            if scn.watermark.enabled {
                let idx = wm_rng.gen_range(0..scn.watermark.choices());
                let delay_s = scn.watermark.delay_min_s + idx as f64 * scn.watermark.granularity_s;
                execute = k + (delay_s / dt).round() as usize;
                delay_draws.push(DelayDraw {
                    device: devs[d].id.clone(),
                    op: if want == 1.0 { TransitionOp::On } else { TransitionOp::Off },
                    trigger_idx: k,
                    execute_idx: execute,
                    delay_s,
                });
            }
            pending[d].push_back((execute, want));
        }

        // (1c) Execute due commands.
        for d in 0..devs.len() {
            while let Some(&(at, tgt)) = pending[d].front() {
                if at > k {
                    break;
                }
                pending[d].pop_front();
                apply_command(&mut devs, &mut true_ops, &mut jitter_rng, d, tgt, k, OpSource::Control);
            }
        }

        // (1d) Command-channel attacks override the controller.
        for a in &mut attacks {
            if k < a.spec.start_idx || k >= a.end {
                continue;
            }
            match a.spec.attack {
                AttackType::B1 => {
                    let AttackParams::Command(code) = a.spec.params else { unreachable!() };
                    let d = a.dev.unwrap();
                    let forced = command_drive(code);
                    if k == a.spec.start_idx {
                        a.no_op = devs[d].commanded == forced;
                    }
                    apply_command(&mut devs, &mut true_ops, &mut jitter_rng, d, forced, k, OpSource::Attack);
                }
                AttackType::C1 => {
                    let AttackParams::TogglePeriod(period) = a.spec.params else { unreachable!() };
                    let d = a.dev.unwrap();
                    if k == a.spec.start_idx {
                        a.c0 = devs[d].commanded;
                    }
                    let phase = ((k - a.spec.start_idx) / period) % 2;
                    let tgt = if phase == 0 { 1.0 - a.c0 } else { a.c0 };
                    apply_command(&mut devs, &mut true_ops, &mut jitter_rng, d, tgt, k, OpSource::Attack);
                }
                AttackType::D1 => {
                    if k == a.spec.start_idx {
                        let d = a.dev.unwrap();
                        let forced = 1.0 - devs[d].commanded;
                        a.fake_on = forced == 1.0;
                        apply_command(&mut devs, &mut true_ops, &mut jitter_rng, d, forced, k, OpSource::Attack);
                    }
                }
                _ => {}
            }
        }

        // (2) Actuator travel with end-of-travel snap.
        for dev in &mut devs {
            let was_settled = dev.drive == dev.commanded;
            let delta = dev.commanded - dev.drive;
            if delta != 0.0 {
                let step = (dt / dev.travel_s).min(delta.abs());
                dev.drive += step * delta.signum();
                if (dev.commanded - dev.drive).abs() < SNAP_EPS {
                    dev.drive = dev.commanded;
                }
            }
            if !was_settled && dev.drive == dev.commanded {
                if let Some(i) = dev.open_op {
                    if true_ops[i].settled_idx.is_none() {
                        true_ops[i].settled_idx = Some(k);
                    }
                }
            }
        }

        // (3) Flow transients; an interlocked pump line carries nothing
        // unless its valve is fully open.
        for p in &mut paths {
            match p.driver {
                DriverRt::Valve(v) => {
                    p.flow += p.alpha * (devs[v].drive - p.flow);
                }
                DriverRt::PumpValve { pump, valve } => {
                    if devs[valve].drive < 1.0 {
                        p.flow = 0.0;
                    } else {
                        p.flow += p.alpha * (devs[pump].drive - p.flow);
                    }
                }
                DriverRt::Fixed(x) => p.flow = x,
            }
        }

        // (4) Tank integration — levels are never clamped; excursions only
        // raise critical flags.
        for (ti, t) in tanks.iter_mut().enumerate() {
            let mut rate = 0.0;
            for p in &paths {
                let q = p.flow * p.max_flow * t.params.area;
                if p.into == Some(ti) {
                    rate += q;
                }
                if p.from == Some(ti) {
                    rate -= q;
                }
            }
            t.level += rate * dt;
            let (hi, lo) = (t.params.level_critical_high, t.params.level_critical_low);
            if !t.in_critical && (t.level >= hi || t.level <= lo) {
                critical_events.push(CriticalEvent {
                    tank: t.id.clone(),
                    idx: k,
                    level: t.level,
                    high: t.level >= hi,
                });
                t.in_critical = true;
            } else if t.in_critical && t.level < hi && t.level > lo {
                t.in_critical = false;
            }
        }

        // (5) True row, then the reported row with sensor noise.
        write_row(&mut true_m, k, &tanks, &paths, &devs);
        for c in 0..n_cols {
            reported[c][k] = true_m[c][k];
            if kinds[c] == ChannelKind::Sensor && noise_std[c] > 0.0 {
                let z: f64 = noise_rng.sample(StandardNormal);
                reported[c][k] += noise_std[c] * z;
            }
        }

        // (6) Reported-channel attacks, in schedule order.
        for a in &mut attacks {
            if k < a.spec.start_idx || k >= a.end {
                continue;
            }
            let o = k - a.spec.start_idx;
            match a.spec.attack {
                AttackType::A1 => {
                    let AttackParams::SpoofValue(v) = a.spec.params else { unreachable!() };
                    for &c in &a.target_cols {
                        reported[c][k] = v;
                    }
                }
                AttackType::D2 => {
                    if o == 0 {
                        a.frozen = a.target_cols.iter().map(|&c| reported[c][k]).collect();
                    }
                    for (&c, &v) in a.target_cols.iter().zip(&a.frozen) {
                        reported[c][k] = v;
                    }
                }
                AttackType::D1 => {
                    let AttackParams::SigmoidDuration(dur) = a.spec.params else { unreachable!() };
                    let sensor = a.target_cols[1];
                    if o == 0 {
                        a.s0 = reported[sensor][k];
                    }
                    let target = if a.fake_on { a.sensor_max } else { 0.0 };
                    reported[sensor][k] = spoof_curve(a.s0, target, o, dur);
                }
                AttackType::E1 => {
                    let AttackParams::SigmoidDuration(dur) = a.spec.params else { unreachable!() };
                    let (act, sensor) = (a.target_cols[0], a.target_cols[1]);
                    let d = a.dev.unwrap();
                    if o == 0 {
                        a.s0 = reported[sensor][k];
                        a.fake_on = devs[d].commanded == 0.0;
                    }
                    let settled = if a.fake_on { state_code::ON } else { state_code::OFF };
                    reported[act][k] = match devs[d].kind {
                        DeviceKind::Pump => settled,
                        DeviceKind::MotorizedValve => {
                            let ramp = ((0.6 * dur as f64).round() as usize).max(1);
                            if o < ramp {
                                state_code::TRANSIT
                            } else {
                                settled
                            }
                        }
                    };
                    let target = if a.fake_on { a.sensor_max } else { 0.0 };
                    reported[sensor][k] = spoof_curve(a.s0, target, o, dur);
                }
                AttackType::F1 => {
                    let (c0, c1) = (a.target_cols[0], a.target_cols[1]);
                    let tmp = reported[c0][k];
                    reported[c0][k] = reported[c1][k];
                    reported[c1][k] = tmp;
                }
                _ => {}
            }
        }
    }

    let build = |matrix: Vec<Vec<f64>>, provenance: String| {
        let channels: Vec<TimeSeries> = matrix
            .into_iter()
            .enumerate()
            .map(|(c, vals)| TimeSeries::new(&names[c], kinds[c], &units[c], vals))
            .collect();
        Dataset::new(dt, 0, channels, &provenance)
    };
    let ds = build(reported, format!("plantsim seed={seed}"))?;
    let true_dataset = build(true_m, format!("plantsim truth seed={seed}"))?;

    let windows: Vec<AttackWindow> = attacks
        .iter()
        .map(|a| AttackWindow {
            attack: a.spec.attack,
            targets: a.spec.targets.clone(),
            start_idx: a.spec.start_idx,
            end_idx: a.end,
            no_op_attack: a.no_op,
        })
        .collect();

    Ok((
        ds,
        GroundTruth {
            true_dataset,
            attacks: windows,
            delay_draws,
            true_ops,
            critical_events,
        },
    ))
}

/// Attacker's fake sensor trace: logistic ramp from `s0` to `target` over
/// `dur` samples (midpoint at half-duration), held afterwards.
fn spoof_curve(s0: f64, target: f64, o: usize, dur: usize) -> f64 {
    if o >= dur {
        return target;
    }
    let x = 12.0 * (o as f64 - dur as f64 / 2.0) / dur as f64;
    s0 + (target - s0) * logistic(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprint::{extract_transitions, SensorThresholds, TransitionStatus};

    fn single_tank(initial_level: f64, drain: bool) -> Scenario {
        let mut paths = vec![FlowPath {
            sensor: Some("fit1".to_string()),
            driver: PathDriver::Valve("mv1".to_string()),
            from_tank: None,
            into_tank: Some("t1".to_string()),
            max_flow_m3h: 2.4,
        }];
        if drain {
            paths.push(FlowPath {
                sensor: None,
                driver: PathDriver::Fixed(1.0),
                from_tank: Some("t1".to_string()),
                into_tank: None,
                max_flow_m3h: 1.25,
            });
        }
        Scenario {
            sample_period_s: 1.0,
            device_spread: 0.0,
            devices: vec![DeviceParams::valve("mv1", 10.0, 0.0, 5.0)],
            tanks: vec![Tank {
                id: "t1".to_string(),
                level_channel: "lit1".to_string(),
                params: TankParams::default(),
                initial_level,
            }],
            paths,
            loops: vec![FillLoop {
                level_channel: "lit1".to_string(),
                valve: Some("mv1".to_string()),
                pump: None,
            }],
            sensor_noise_std: BTreeMap::new(),
            watermark: WatermarkPolicy::default(),
            attacks: Vec::new(),
        }
    }

    #[test]
    fn valve_opens_exactly_after_its_travel_time() {
        let scn = single_tank(400.0, false);
        let (ds, _) = simulate(&scn, 120.0, 1).unwrap();
        let mv = ds.values("mv1").unwrap();
        let last_off = mv.iter().rposition(|&c| c == state_code::OFF).unwrap();
        let first_on = mv.iter().position(|&c| c == state_code::ON).unwrap();
        assert_eq!(first_on - last_off, 10, "10 s travel at 1 Hz");
        assert!(mv[last_off + 1..first_on].iter().all(|&c| c == state_code::TRANSIT));
    }

    #[test]
    fn flow_reaches_99_percent_within_five_taus_of_full_open() {
        let scn = single_tank(400.0, false);
        let (ds, _) = simulate(&scn, 200.0, 1).unwrap();
        let mv = ds.values("mv1").unwrap();
        let fit = ds.values("fit1").unwrap();
        let first_on = mv.iter().position(|&c| c == state_code::ON).unwrap();
        let probe = first_on + 25; // 5 tau at tau = 5 s
        assert!(
            fit[probe] >= 0.99 * 2.4,
            "flow {} at 5 tau after full open",
            fit[probe]
        );
    }

    #[test]
    fn hysteresis_fires_nothing_between_setpoints() {
        // Static level between set-points: no command, ever.
        let (ds, truth) = simulate(&single_tank(650.0, false), 400.0, 2).unwrap();
        assert!(ds.values("mv1").unwrap().iter().all(|&c| c == state_code::OFF));
        assert!(truth.true_ops.is_empty());

        // Draining from 650 at 0.25 mm/s: the low set-point is crossed at
        // sample 600 and the PLC acts on the next tick, not before.
        let (ds, truth) = simulate(&single_tank(650.0, true), 700.0, 2).unwrap();
        let mv = ds.values("mv1").unwrap();
        assert!(mv[..=600].iter().all(|&c| c == state_code::OFF));
        assert_eq!(truth.true_ops[0].command_idx, 601);
    }

    #[test]
    fn true_levels_conserve_mass_exactly() {
        let mut scn = Scenario::two_stage_default();
        scn.attacks.push(AttackSpec {
            attack: AttackType::A1,
            targets: vec!["fit1".to_string()],
            start_idx: 500,
            duration: 400,
            params: AttackParams::SpoofValue(2.4),
        });
        let (_, truth) = simulate(&scn, 4000.0, 7).unwrap();
        let ds = &truth.true_dataset;
        let fit1 = ds.values("fit1").unwrap();
        let fit2 = ds.values("fit2").unwrap();
        let area = 0.2;
        let mut l1 = 650.0;
        let mut l2 = 520.0;
        let lit1 = ds.values("lit1").unwrap();
        let lit2 = ds.values("lit2").unwrap();
        for k in 1..ds.len() {
            l1 += (fit1[k] - fit2[k]) * area;
            l2 += (fit2[k] - 1.25) * area;
            assert!((l1 - lit1[k]).abs() < 1e-9, "t1 at {k}: {l1} vs {}", lit1[k]);
            assert!((l2 - lit2[k]).abs() < 1e-9, "t2 at {k}: {l2} vs {}", lit2[k]);
        }
    }

    #[test]
    fn identical_seeds_reproduce_bit_identical_runs() {
        let mut scn = Scenario::two_stage_default();
        scn.watermark.enabled = true;
        let (a, ta) = simulate(&scn, 3000.0, 5).unwrap();
        let (b, tb) = simulate(&scn, 3000.0, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.true_dataset, tb.true_dataset);
        assert_eq!(ta.delay_draws.len(), tb.delay_draws.len());
        for (x, y) in ta.delay_draws.iter().zip(&tb.delay_draws) {
            assert_eq!(x.delay_s, y.delay_s);
            assert_eq!(x.execute_idx, y.execute_idx);
        }
        let (c, _) = simulate(&scn, 3000.0, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn interlocked_pump_line_never_flows_with_valve_ajar() {
        let mut scn = Scenario::fast_cycle();
        scn.sensor_noise_std.clear();
        let (_, truth) = simulate(&scn, 6000.0, 3).unwrap();
        let ds = &truth.true_dataset;
        let mv2 = ds.values("mv2").unwrap();
        let fit2 = ds.values("fit2").unwrap();
        let mut stretches = 0;
        for k in 0..ds.len() {
            if mv2[k] != state_code::ON {
                assert_eq!(fit2[k], 0.0, "flow through ajar valve at {k}");
                stretches += 1;
            }
        }
        assert!(stretches > 100, "test never exercised a non-open valve");
    }

    #[test]
    fn opening_transient_is_monotone_without_noise() {
        let scn = single_tank(400.0, false);
        let (ds, _) = simulate(&scn, 120.0, 4).unwrap();
        let mv = ds.values("mv1").unwrap();
        let fit = ds.values("fit1").unwrap();
        let depart = mv.iter().position(|&c| c == state_code::TRANSIT).unwrap();
        let first_on = mv.iter().position(|&c| c == state_code::ON).unwrap();
        for k in depart..first_on + 25 {
            assert!(fit[k + 1] >= fit[k] - 1e-12, "flow dipped at {k}");
        }
    }

    #[test]
    fn watermark_draws_stay_on_the_policy_grid() {
        let mut scn = Scenario::fast_cycle();
        scn.watermark.enabled = true;
        let (_, truth) = simulate(&scn, 12000.0, 9).unwrap();
        assert!(truth.delay_draws.len() >= 10, "{} draws", truth.delay_draws.len());
        for d in &truth.delay_draws {
            assert!(d.delay_s >= 10.0 && d.delay_s <= 41.5);
            let steps = (d.delay_s - 10.0) / 0.5;
            assert!((steps - steps.round()).abs() < 1e-9, "off-grid delay {}", d.delay_s);
            assert_eq!(d.execute_idx - d.trigger_idx, d.delay_s.round() as usize);
        }
    }

    #[test]
    fn b1_commanding_the_current_state_is_tagged_no_op() {
        let mut scn = single_tank(650.0, false);
        scn.attacks.push(AttackSpec {
            attack: AttackType::B1,
            targets: vec!["mv1".to_string()],
            start_idx: 50,
            duration: 30,
            params: AttackParams::Command(1.0), // valve is already closed
        });
        let (_, truth) = simulate(&scn, 200.0, 1).unwrap();
        assert!(truth.attacks[0].no_op_attack);
        assert!(truth.true_ops.is_empty());

        let mut scn = single_tank(650.0, false);
        scn.attacks.push(AttackSpec {
            attack: AttackType::B1,
            targets: vec!["mv1".to_string()],
            start_idx: 50,
            duration: 30,
            params: AttackParams::Command(2.0),
        });
        let (ds, truth) = simulate(&scn, 200.0, 1).unwrap();
        assert!(!truth.attacks[0].no_op_attack);
        assert_eq!(truth.true_ops[0].source, OpSource::Attack);
        assert!(ds.values("mv1").unwrap().iter().any(|&c| c == state_code::ON));
    }

    #[test]
    fn rapid_toggling_leaves_an_incomplete_operation() {
        let mut scn = Scenario::fast_cycle();
        scn.attacks.push(AttackSpec {
            attack: AttackType::C1,
            targets: vec!["mv1".to_string()],
            start_idx: 100,
            duration: 60,
            params: AttackParams::TogglePeriod(3),
        });
        let (ds, _) = simulate(&scn, 600.0, 11).unwrap();
        let th = SensorThresholds::from_extrema(2.4, 0.0).unwrap();
        let events = extract_transitions(&ds, "mv1", "fit1", &th, 120.0).unwrap();
        let hit = events.iter().any(|e| {
            e.status == TransitionStatus::Incomplete && (100..160).contains(&e.start_idx)
        });
        assert!(hit, "no incomplete op in the toggle window: {events:?}");
    }

    #[test]
    fn d2_freezes_the_reported_sensor() {
        let mut scn = Scenario::fast_cycle();
        scn.attacks.push(AttackSpec {
            attack: AttackType::D2,
            targets: vec!["fit2".to_string()],
            start_idx: 200,
            duration: 150,
            params: AttackParams::None,
        });
        let (ds, truth) = simulate(&scn, 800.0, 13).unwrap();
        let fit2 = ds.values("fit2").unwrap();
        assert!(fit2[200..350].iter().all(|&v| v == fit2[200]));
        // The true channel is untouched by the spoof.
        let true_fit2 = truth.true_dataset.values("fit2").unwrap();
        assert!(true_fit2[200..350].iter().any(|&v| v != fit2[200]));
    }

    #[test]
    fn f1_swaps_exactly_the_two_reported_sensors() {
        let mut scn = Scenario::fast_cycle();
        let (plain, _) = simulate(&scn, 900.0, 21).unwrap();
        scn.attacks.push(AttackSpec {
            attack: AttackType::F1,
            targets: vec!["fit1".to_string(), "fit2".to_string()],
            start_idx: 300,
            duration: 200,
            params: AttackParams::None,
        });
        let (swapped, _) = simulate(&scn, 900.0, 21).unwrap();
        let (pf1, pf2) = (plain.values("fit1").unwrap(), plain.values("fit2").unwrap());
        let (sf1, sf2) = (swapped.values("fit1").unwrap(), swapped.values("fit2").unwrap());
        for k in 300..500 {
            assert_eq!(sf1[k], pf2[k]);
            assert_eq!(sf2[k], pf1[k]);
        }
        assert_eq!(sf1[299], pf1[299]);
        assert_eq!(sf1[500], pf1[500]);
    }

    #[test]
    fn forced_fill_reaches_the_critical_flag() {
        let mut scn = single_tank(900.0, false);
        scn.attacks.push(AttackSpec {
            attack: AttackType::B1,
            targets: vec!["mv1".to_string()],
            start_idx: 1,
            duration: 500,
            params: AttackParams::Command(2.0),
        });
        let (_, truth) = simulate(&scn, 600.0, 1).unwrap();
        let ev = truth.critical_events.first().expect("overflow flag");
        assert_eq!(ev.tank, "t1");
        assert!(ev.high);
        assert!(ev.level >= 1000.0);
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let mut s = Scenario::two_stage_default();
        s.devices[0].jitter_std_s = 6.0; // >= open_time / 3
        assert!(matches!(s.validate(), Err(PlantSimError::Config(_))));

        let mut s = Scenario::two_stage_default();
        s.tanks[0].params.level_low_sp = 900.0;
        assert!(matches!(s.validate(), Err(PlantSimError::Config(_))));

        let mut s = Scenario::two_stage_default();
        s.watermark.delay_max_s = 500.0;
        assert!(matches!(s.validate(), Err(PlantSimError::Config(_))));

        let mut s = Scenario::two_stage_default();
        s.attacks.push(AttackSpec {
            attack: AttackType::F1,
            targets: vec!["fit1".to_string()],
            start_idx: 10,
            duration: 10,
            params: AttackParams::None,
        });
        assert!(matches!(s.validate(), Err(PlantSimError::Config(_))));

        let mut s = Scenario::two_stage_default();
        s.attacks.push(AttackSpec {
            attack: AttackType::B1,
            targets: vec!["mv1".to_string()],
            start_idx: 10,
            duration: 10,
            params: AttackParams::TogglePeriod(2),
        });
        assert!(matches!(s.validate(), Err(PlantSimError::Config(_))));

        let mut s = Scenario::two_stage_default();
        s.attacks.push(AttackSpec {
            attack: AttackType::A1,
            targets: vec!["nope".to_string()],
            start_idx: 10,
            duration: 10,
            params: AttackParams::SpoofValue(1.0),
        });
        assert!(matches!(s.validate(), Err(PlantSimError::Config(_))));
    }

    #[test]
    fn replaying_a_run_onto_itself_changes_nothing() {
        let mut scn = Scenario::two_stage_default();
        scn.watermark.enabled = false;
        let (ds, _) = simulate(&scn, 800.0, 3).unwrap();
        let (spliced, _) = replay_attack(&ds, &scn, 800.0, 3, &[(0, ds.len())]).unwrap();
        assert_eq!(spliced, ds);
    }

    #[test]
    fn replay_seams_jump_well_past_noise() {
        // Recorded plant starts 30 mm lower, so its inlet valve reopens ~60 s
        // earlier than the live plant's. Splicing the recorded trace over
        // [300, 380) leaves a level offset at the entry seam and a full-flow
        // vs no-flow mismatch at the exit seam.
        let mut recorded_scn = Scenario::two_stage_default();
        recorded_scn.tanks[0].initial_level = 620.0;
        let (recorded, _) = simulate(&recorded_scn, 900.0, 3).unwrap();
        let live_scn = Scenario::two_stage_default();
        let (spliced, _) = replay_attack(&recorded, &live_scn, 900.0, 3, &[(300, 380)]).unwrap();
        let lit1 = spliced.values("lit1").unwrap();
        let fit1 = spliced.values("fit1").unwrap();
        assert!(
            (lit1[300] - lit1[299]).abs() > 3.0 * 0.5,
            "entry seam {} vs {}",
            lit1[299],
            lit1[300]
        );
        assert!(
            (fit1[380] - fit1[379]).abs() > 3.0 * 0.02,
            "exit seam {} vs {}",
            fit1[379],
            fit1[380]
        );
    }

    #[test]
    fn replay_requires_matching_schema() {
        let scn = Scenario::two_stage_default();
        let (ds, _) = simulate(&single_tank(650.0, false), 300.0, 1).unwrap();
        assert!(matches!(
            replay_attack(&ds, &scn, 300.0, 1, &[(0, 100)]),
            Err(PlantSimError::Schema(_))
        ));
    }

    #[test]
    fn sidecar_serializes_without_the_bulk_trace() {
        let mut scn = Scenario::fast_cycle();
        scn.watermark.enabled = true;
        scn.attacks.push(AttackSpec {
            attack: AttackType::A1,
            targets: vec!["fit1".to_string()],
            start_idx: 100,
            duration: 50,
            params: AttackParams::SpoofValue(0.0),
        });
        let (_, truth) = simulate(&scn, 2000.0, 17).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.json");
        truth.export_sidecar_json(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["attacks"][0]["attack"], "A1");
        assert!(v["delay_draws"].as_array().unwrap().len() > 1);
        assert!(v.get("true_dataset").is_none());
    }
}
