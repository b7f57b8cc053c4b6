//! One function per subcommand. Each resolves its inputs, writes its
//! artifacts under `--out` and embeds the resolved configuration in both
//! `config.json` and the text report. Inputs are never modified.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use actprint_core::classify::{
    accuracy, cross_validate, predict, train, Kernel, KernelAccuracy, SvmModel,
};
use actprint_core::detect::{
    detection_report, export_alarms_csv, export_detection_csv, run_detector, tune_thresholds,
    CusumParams, PairParams, Pairing,
};
use actprint_core::fingerprint::{
    chunk_features, export_features_csv, extract_transitions, FeatureVector, TransitionEvent,
    TransitionOp, TransitionStatus,
};
use actprint_core::plantsim::{
    simulate, AttackParams, AttackSpec, AttackType, Scenario,
};
use actprint_core::sysid::{identify, prediction_gain, validate_holdout, IdentConfig};
use actprint_core::timeseries::export_csv;
use actprint_core::watermark::{
    delays_to_bits, entropy_analysis, export_entropy_csv, export_pvalues_csv, nist_subset,
    pvalue_table_text, replay_check, trigger_based_transition_times, DEFAULT_BINS,
};

use crate::util::{
    self, default_scenario, default_trigger, load_dataset, load_scenario, parse_channel_list,
    parse_op, parse_trigger, read_features_csv, read_sidecar, require_file, resolve_pairs,
    sidecar_truth, thresholds_for, write_config, write_report,
};
use crate::{svg, CliError, CommonArgs};

fn to_json<T: Serialize>(v: &T) -> Result<serde_json::Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Module { name: "IoError", message: e.to_string() })
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v)
        .map_err(|e| CliError::Module { name: "IoError", message: e.to_string() })?;
    std::fs::write(path, format!("{text}\n"))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// scenario
// ---------------------------------------------------------------------------

pub fn cmd_scenario(out: Option<PathBuf>) -> Result<(), CliError> {
    let scn = default_scenario();
    let text = serde_json::to_string_pretty(&scn)
        .map_err(|e| CliError::Module { name: "IoError", message: e.to_string() })?;
    match out {
        Some(p) => std::fs::write(p, format!("{text}\n"))?,
        None => println!("{text}"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate / attack
// ---------------------------------------------------------------------------

fn run_and_export(
    scn: &Scenario,
    common: &CommonArgs,
    duration: f64,
    config: serde_json::Value,
) -> Result<(), CliError> {
    let cfg_text = write_config(&common.out, &config)?;
    let (ds, truth) = simulate(scn, duration, common.seed)?;
    export_csv(&ds, &common.out.join("dataset.csv"))?;
    truth.export_sidecar_json(&common.out.join("truth.json"))?;

    let mut body = String::new();
    let _ = writeln!(body, "simulated {duration} s at seed {} -> {} samples", common.seed, ds.len());
    let _ = writeln!(body, "watermark {}", if scn.watermark.enabled { "on" } else { "off" });
    let _ = writeln!(body, "channels:");
    for c in ds.channels() {
        let _ = writeln!(body, "  {} ({:?}{}{})", c.name(), c.kind(),
            if c.unit().is_empty() { "" } else { ", " }, c.unit());
    }
    let mut ops: BTreeMap<&str, usize> = BTreeMap::new();
    for op in &truth.true_ops {
        *ops.entry(op.device.as_str()).or_default() += 1;
    }
    let _ = writeln!(body, "operations per device:");
    for (dev, n) in ops {
        let _ = writeln!(body, "  {dev}: {n}");
    }
    let _ = writeln!(body, "watermark delay draws: {}", truth.delay_draws.len());
    let _ = writeln!(body, "attack windows: {}", truth.attacks.len());
    let _ = writeln!(body, "critical excursions: {}", truth.critical_events.len());
    write_report(&common.out, "report.txt", &body, &cfg_text)
}

pub fn cmd_simulate(common: &CommonArgs, duration: f64) -> Result<(), CliError> {
    let scn = load_scenario(&common.scenario)?;
    let config = json!({
        "command": "simulate",
        "duration_s": duration,
        "seed": common.seed,
        "scenario": to_json(&scn)?,
    });
    run_and_export(&scn, common, duration, config)
}

fn parse_attack_type(s: &str) -> Result<AttackType, CliError> {
    Ok(match s.to_ascii_uppercase().as_str() {
        "A1" => AttackType::A1,
        "B1" => AttackType::B1,
        "C1" => AttackType::C1,
        "D1" => AttackType::D1,
        "D2" => AttackType::D2,
        "E1" => AttackType::E1,
        "F1" => AttackType::F1,
        other => {
            return Err(CliError::Usage(format!(
                "unknown attack type '{other}' (expected A1, B1, C1, D1, D2, E1 or F1)"
            )))
        }
    })
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_attack(
    common: &CommonArgs,
    duration: f64,
    attack_type: &str,
    targets: &str,
    start: usize,
    window: usize,
    spoof_value: Option<f64>,
    command_level: Option<f64>,
    toggle_period: Option<usize>,
    sigmoid_duration: Option<usize>,
) -> Result<(), CliError> {
    let mut scn = load_scenario(&common.scenario)?;
    let attack = parse_attack_type(attack_type)?;
    let params = match attack {
        AttackType::A1 => AttackParams::SpoofValue(
            spoof_value.ok_or_else(|| CliError::Usage("A1 needs --spoof-value".into()))?,
        ),
        AttackType::B1 => AttackParams::Command(
            command_level.ok_or_else(|| CliError::Usage("B1 needs --command-level".into()))?,
        ),
        AttackType::C1 => AttackParams::TogglePeriod(
            toggle_period.ok_or_else(|| CliError::Usage("C1 needs --toggle-period".into()))?,
        ),
        AttackType::D1 | AttackType::E1 => AttackParams::SigmoidDuration(
            sigmoid_duration
                .ok_or_else(|| CliError::Usage(format!("{attack} needs --sigmoid-duration")))?,
        ),
        AttackType::D2 | AttackType::F1 => {
            if spoof_value.is_some()
                || command_level.is_some()
                || toggle_period.is_some()
                || sigmoid_duration.is_some()
            {
                return Err(CliError::Usage(format!("{attack} takes no attack parameter")));
            }
            AttackParams::None
        }
    };
    let spec = AttackSpec {
        attack,
        targets: parse_channel_list(targets),
        start_idx: start,
        duration: window,
        params,
    };
    scn.attacks.push(spec.clone());
    let config = json!({
        "command": "attack",
        "duration_s": duration,
        "seed": common.seed,
        "attack": to_json(&spec)?,
        "scenario": to_json(&scn)?,
    });
    run_and_export(&scn, common, duration, config)
}

// ---------------------------------------------------------------------------
// identify
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn cmd_identify(
    common: &CommonArgs,
    data: &Path,
    inputs: Option<String>,
    outputs: Option<String>,
    order: usize,
    horizon: usize,
    ridge: f64,
    difference: bool,
    holdout: f64,
    process_std: f64,
) -> Result<(), CliError> {
    let scn = load_scenario(&common.scenario)?;
    let ds = load_dataset(data, &scn)?;

    let schema = util::scenario_schema(&scn);
    let inputs: Vec<String> = match &inputs {
        Some(s) => parse_channel_list(s),
        None => scn.devices.iter().map(|d| d.device_id.clone()).collect(),
    };
    let outputs: Vec<String> = match &outputs {
        Some(s) => parse_channel_list(s),
        None => schema
            .iter()
            .filter(|(_, cs)| matches!(cs.kind, actprint_core::timeseries::ChannelKind::Sensor))
            .map(|(name, _)| name.clone())
            .collect(),
    };
    if inputs.is_empty() || outputs.is_empty() {
        return Err(CliError::Usage("identification needs at least one input and one output".into()));
    }

    let cfg = IdentConfig { order, horizon, ridge, difference };
    let config = json!({
        "command": "identify",
        "data": data.display().to_string(),
        "inputs": inputs,
        "outputs": outputs,
        "order": order,
        "horizon": horizon,
        "ridge": ridge,
        "difference": difference,
        "holdout_fraction": holdout,
        "assumed_process_std": process_std,
        "seed": common.seed,
        "scenario": to_json(&scn)?,
    });
    let cfg_text = write_config(&common.out, &config)?;

    let in_refs: Vec<&str> = inputs.iter().map(String::as_str).collect();
    let out_refs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    let model = identify(&ds, &in_refs, &out_refs, &cfg)?;
    write_json(&common.out.join("model.json"), &model)?;

    let open_loop = validate_holdout(&model, &ds, &in_refs, &out_refs, None, holdout)?;
    let gain = prediction_gain(&model, process_std)?;
    let filtered = validate_holdout(&model, &ds, &in_refs, &out_refs, Some(&gain), holdout)?;

    let mut body = String::new();
    let _ = writeln!(body, "fit {} states from {} samples ({} inputs -> {} outputs)",
        order, ds.len(), inputs.len(), outputs.len());
    let _ = writeln!(body, "holdout = trailing {:.0}% of the record", holdout * 100.0);
    let _ = writeln!(body, "\nopen-loop rollout:\n{open_loop}");
    let _ = writeln!(body, "estimator-corrected rollout:\n{filtered}");
    let _ = writeln!(body, "(open-loop rollouts drift on closed-loop records; judge the fit by \
        the estimator-corrected scores)");
    write_report(&common.out, "report.txt", &body, &cfg_text)
}

// ---------------------------------------------------------------------------
// fingerprint
// ---------------------------------------------------------------------------

fn complete_times(events: &[TransitionEvent], op: TransitionOp) -> Vec<f64> {
    events
        .iter()
        .filter(|e| e.op == op && e.status == TransitionStatus::Complete)
        .filter_map(|e| e.transition_time_s)
        .collect()
}

pub fn cmd_fingerprint(
    common: &CommonArgs,
    data: &Path,
    pairs: Option<String>,
    chunk: usize,
    timeout: f64,
) -> Result<(), CliError> {
    let scn = load_scenario(&common.scenario)?;
    let ds = load_dataset(data, &scn)?;
    let pairs = resolve_pairs(&pairs, &scn)?;

    let config = json!({
        "command": "fingerprint",
        "data": data.display().to_string(),
        "pairs": pairs.iter().map(|(a, s, m)| json!({"actuator": a, "sensor": s, "full_scale": m}))
            .collect::<Vec<_>>(),
        "chunk_size": chunk,
        "timeout_s": timeout,
        "seed": common.seed,
        "scenario": to_json(&scn)?,
    });
    let cfg_text = write_config(&common.out, &config)?;

    let mut rows: Vec<(FeatureVector, String)> = Vec::new();
    let mut transitions = String::from("actuator,op,start_idx,end_idx,transition_time_s,status\n");
    let mut body = String::new();
    for (act, sensor, max_flow) in &pairs {
        let th = thresholds_for(*max_flow)?;
        let events = extract_transitions(&ds, act, sensor, &th, timeout)?;
        for e in &events {
            let _ = writeln!(
                transitions,
                "{},{:?},{},{},{},{:?}",
                e.actuator,
                e.op,
                e.start_idx,
                e.end_idx.map_or(String::new(), |i| i.to_string()),
                e.transition_time_s.map_or(String::new(), |t| format!("{t}")),
                e.status
            );
        }
        for op in [TransitionOp::On, TransitionOp::Off] {
            let times = complete_times(&events, op);
            let label = format!("{act}:{op:?}");
            let n_chunks = times.len() / chunk.max(1);
            let _ = writeln!(
                body,
                "{label}: {} complete transitions -> {} chunks of {}",
                times.len(),
                n_chunks,
                chunk
            );
            if !times.is_empty() {
                let mean = times.iter().sum::<f64>() / times.len() as f64;
                let _ = writeln!(body, "  mean transition time {mean:.3} s");
            }
            for (fv, _) in chunk_features(&times, chunk)? {
                rows.push((fv, label.clone()));
            }
        }
        let dropped =
            events.iter().filter(|e| e.status != TransitionStatus::Complete).count();
        if dropped > 0 {
            let _ = writeln!(body, "{act}: {dropped} incomplete or timed-out transitions dropped");
        }
    }
    if rows.is_empty() {
        return Err(CliError::Usage(format!(
            "no full chunks of {chunk} transitions; record is too short for fingerprints"
        )));
    }
    export_features_csv(&common.out.join("features.csv"), &rows)?;
    std::fs::write(common.out.join("transitions.csv"), transitions)?;
    let _ = writeln!(body, "\n{} labelled fingerprints written", rows.len());
    write_report(&common.out, "report.txt", &body, &cfg_text)
}

// ---------------------------------------------------------------------------
// train / classify
// ---------------------------------------------------------------------------

fn parse_kernels(spec: &str) -> Result<Vec<Kernel>, CliError> {
    let mut out = Vec::new();
    for name in spec.split(',') {
        out.push(match name.trim() {
            "linear" => Kernel::Linear,
            "polynomial" | "poly" => Kernel::Polynomial,
            "rbf" => Kernel::default_rbf(),
            "sigmoid" => Kernel::default_sigmoid(),
            other => {
                return Err(CliError::Usage(format!(
                    "unknown kernel '{other}' (expected linear, polynomial, rbf or sigmoid)"
                )))
            }
        });
    }
    if out.is_empty() {
        return Err(CliError::Usage("no kernels requested".into()));
    }
    Ok(out)
}

/// Sorted label set plus per-row class indices.
fn index_labels(rows: &[(FeatureVector, String)]) -> (Vec<String>, Vec<usize>) {
    let mut labels: Vec<String> = rows.iter().map(|(_, l)| l.clone()).collect();
    labels.sort();
    labels.dedup();
    let y = rows
        .iter()
        .map(|(_, l)| labels.binary_search(l).expect("label from the same list"))
        .collect();
    (labels, y)
}

fn accuracy_table(table: &[KernelAccuracy]) -> String {
    let mut s = String::from("kernel        accuracy   folds\n");
    for row in table {
        let folds: Vec<String> =
            row.fold_accuracies.iter().map(|a| format!("{:.3}", a)).collect();
        let _ = writeln!(s, "{:<12} {:>8.4}   [{}]", row.kernel.to_string(), row.accuracy,
            folds.join(", "));
    }
    s
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_train(
    common: &CommonArgs,
    features: &Path,
    kernels: &str,
    folds: usize,
    epochs: usize,
    lambda: f64,
    final_kernel: Option<String>,
) -> Result<(), CliError> {
    let rows = read_features_csv(features)?;
    let kernel_list = parse_kernels(kernels)?;
    let (labels, y) = index_labels(&rows);
    let x: Vec<[f64; 8]> = rows.iter().map(|(fv, _)| fv.as_array()).collect();

    let config = json!({
        "command": "train",
        "features": features.display().to_string(),
        "kernels": kernel_list.iter().map(|k| k.to_string()).collect::<Vec<_>>(),
        "folds": folds,
        "epochs": epochs,
        "lambda": lambda,
        "final_kernel": final_kernel,
        "labels": labels,
        "rows": rows.len(),
        "seed": common.seed,
    });
    let cfg_text = write_config(&common.out, &config)?;

    let table = cross_validate(&x, &y, folds, &kernel_list, epochs, lambda, common.seed)?;
    actprint_core::classify::export_accuracy_csv(&common.out.join("accuracy.csv"), &table)?;

    let chosen = match &final_kernel {
        Some(name) => parse_kernels(name)?[0],
        None => {
            table
                .iter()
                .max_by(|a, b| a.accuracy.total_cmp(&b.accuracy))
                .expect("at least one kernel")
                .kernel
        }
    };
    let model = train(&x, &y, chosen, epochs, lambda, common.seed)?;
    model.save(&common.out.join("model.json"))?;
    write_json(&common.out.join("labels.json"), &labels)?;
    let train_acc = accuracy(&model, &x, &y)?;

    let mut body = String::new();
    let _ = writeln!(body, "{} fingerprints, {} classes: {}", rows.len(), labels.len(),
        labels.join(", "));
    let _ = writeln!(body, "\n{}-fold cross-validation:\n{}", folds, accuracy_table(&table));
    let _ = writeln!(body, "final model: {chosen} kernel, training accuracy {train_acc:.4}");
    write_report(&common.out, "report.txt", &body, &cfg_text)
}

pub fn cmd_classify(common: &CommonArgs, model: &Path, features: &Path) -> Result<(), CliError> {
    require_file(model)?;
    let rows = read_features_csv(features)?;
    let svm = SvmModel::load(model)?;
    let labels_path = model.parent().unwrap_or(Path::new(".")).join("labels.json");
    let labels: Option<Vec<String>> = if labels_path.is_file() {
        let text = std::fs::read_to_string(&labels_path)?;
        Some(serde_json::from_str(&text).map_err(|e| {
            CliError::Usage(format!("malformed {}: {e}", labels_path.display()))
        })?)
    } else {
        None
    };

    let config = json!({
        "command": "classify",
        "model": model.display().to_string(),
        "labels_file": labels.is_some().then(|| labels_path.display().to_string()),
        "features": features.display().to_string(),
        "rows": rows.len(),
        "seed": common.seed,
    });
    let cfg_text = write_config(&common.out, &config)?;

    let name_of = |class: usize| -> String {
        match &labels {
            Some(l) if class < l.len() => l[class].clone(),
            _ => format!("class{class}"),
        }
    };
    let mut out_csv = String::from("row,label,predicted\n");
    let mut hits = 0usize;
    for (i, (fv, label)) in rows.iter().enumerate() {
        let predicted = name_of(predict(&svm, &fv.as_array())?);
        if &predicted == label {
            hits += 1;
        }
        let _ = writeln!(out_csv, "{i},{label},{predicted}");
    }
    std::fs::write(common.out.join("predictions.csv"), out_csv)?;

    let mut body = String::new();
    let _ = writeln!(body, "{} rows classified", rows.len());
    let _ = writeln!(body, "agreement with the file's labels: {}/{} ({:.2}%)",
        hits, rows.len(), 100.0 * hits as f64 / rows.len() as f64);
    if labels.is_none() {
        let _ = writeln!(body, "(no labels.json next to the model; class indices reported)");
    }
    write_report(&common.out, "report.txt", &body, &cfg_text)
}

// ---------------------------------------------------------------------------
// detect
// ---------------------------------------------------------------------------

/// Flat, JSON-friendly form of one pair's tuned parameters.
#[derive(Serialize, Deserialize)]
pub struct TunedEntry {
    pub actuator: String,
    pub op: TransitionOp,
    pub params: CusumParams,
}

fn read_params(path: &Path) -> Result<PairParams, CliError> {
    require_file(path)?;
    let text = std::fs::read_to_string(path)?;
    let entries: Vec<TunedEntry> = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("malformed parameter file {}: {e}", path.display())))?;
    Ok(entries.into_iter().map(|e| ((e.actuator, e.op), e.params)).collect())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_detect(
    common: &CommonArgs,
    data: &Path,
    pairs: Option<String>,
    tune: bool,
    params: Option<PathBuf>,
    truth: Option<PathBuf>,
    max_far: f64,
    timeout: f64,
    grace: usize,
) -> Result<(), CliError> {
    let scn = load_scenario(&common.scenario)?;
    let ds = load_dataset(data, &scn)?;
    let pairs = resolve_pairs(&pairs, &scn)?;
    let pairings: Vec<Pairing> = pairs
        .iter()
        .map(|(a, s, m)| {
            Ok(Pairing { actuator: a.clone(), sensor: s.clone(), thresholds: thresholds_for(*m)? })
        })
        .collect::<Result<_, CliError>>()?;

    let config = json!({
        "command": "detect",
        "data": data.display().to_string(),
        "pairs": pairs.iter().map(|(a, s, m)| json!({"actuator": a, "sensor": s, "full_scale": m}))
            .collect::<Vec<_>>(),
        "mode": if tune { "tune" } else { "scan" },
        "params": params.as_ref().map(|p| p.display().to_string()),
        "truth": truth.as_ref().map(|p| p.display().to_string()),
        "max_far": max_far,
        "timeout_s": timeout,
        "grace_samples": grace,
        "seed": common.seed,
        "scenario": to_json(&scn)?,
    });
    let cfg_text = write_config(&common.out, &config)?;

    if tune {
        let mut entries = Vec::new();
        let mut body = String::new();
        for p in &pairings {
            let events = extract_transitions(&ds, &p.actuator, &p.sensor, &p.thresholds, timeout)?;
            for op in [TransitionOp::On, TransitionOp::Off] {
                let times = complete_times(&events, op);
                let prm = tune_thresholds(&times, max_far)?;
                let _ = writeln!(
                    body,
                    "{} {:?}: {} samples -> mu {:.3}, beta {:.3}, T+ {:.3}, T- {:.3}",
                    p.actuator, op, times.len(), prm.mu, prm.beta, prm.t_plus, prm.t_minus
                );
                entries.push(TunedEntry { actuator: p.actuator.clone(), op, params: prm });
            }
        }
        write_json(&common.out.join("params.json"), &entries)?;
        let _ = writeln!(body, "\ntrained at a {max_far} per-direction false-alarm budget");
        return write_report(&common.out, "report.txt", &body, &cfg_text);
    }

    let params_path = params
        .ok_or_else(|| CliError::Usage("scanning needs --params (tune first with --tune)".into()))?;
    let pair_params = read_params(&params_path)?;
    let log = run_detector(&ds, &pairings, &pair_params, timeout)?;
    export_alarms_csv(&common.out.join("alarms.csv"), &log)?;

    let mut body = String::new();
    let _ = writeln!(body, "{} complete transitions checked", log.transitions_checked);
    let _ = writeln!(body, "{} alarms total ({} timing, {} incomplete, {} timed out)",
        log.total_alarms(), log.cusum.len(), log.incomplete.len(), log.timed_out.len());
    for p in &pairings {
        for op in [TransitionOp::On, TransitionOp::Off] {
            let n = log.cusum_for(&p.actuator, op).count();
            if n > 0 {
                let _ = writeln!(body, "  {} {:?}: {} timing alarms", p.actuator, op, n);
            }
        }
    }

    if let Some(truth_path) = truth {
        let side = read_sidecar(&truth_path)?;
        let gt = sidecar_truth(side)?;
        let rows = detection_report(&log, &gt, grace);
        export_detection_csv(&common.out.join("detection.csv"), &rows)?;
        let _ = writeln!(body, "\nper-attack detection (grace {grace} samples):");
        let _ = writeln!(body,
            "attack  performed  no-op  detected  overall%  timing%  incomplete%  timedout%");
        for r in &rows {
            let _ = writeln!(
                body,
                "{:<7} {:>9} {:>6} {:>9} {:>9.1} {:>8.1} {:>12.1} {:>10.1}",
                r.attack.to_string(), r.performed, r.no_op, r.detected, r.overall_rate_pct,
                r.cusum_rate_pct, r.incomplete_rate_pct, r.timed_out_rate_pct
            );
        }
    }
    write_report(&common.out, "report.txt", &body, &cfg_text)
}

// ---------------------------------------------------------------------------
// watermark-eval
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn cmd_watermark_eval(
    common: &CommonArgs,
    baseline: &Path,
    observed: &Path,
    trigger: Option<String>,
    sensor: Option<String>,
    op: &str,
    samples: Option<usize>,
    alpha: f64,
    timeout: f64,
    truth: Option<PathBuf>,
    features: Option<PathBuf>,
) -> Result<(), CliError> {
    let scn = load_scenario(&common.scenario)?;
    let base_ds = load_dataset(baseline, &scn)?;
    let obs_ds = load_dataset(observed, &scn)?;
    let (level_ch, low, high) = match &trigger {
        Some(s) => parse_trigger(s)?,
        None => default_trigger(&scn)?,
    };
    let (sensor_name, full_scale) = match &sensor {
        Some(s) => {
            let max = scn
                .paths
                .iter()
                .find(|p| p.sensor.as_deref() == Some(s.as_str()))
                .map(|p| p.max_flow_m3h)
                .ok_or_else(|| {
                    CliError::Usage(format!("sensor '{s}' is not a metered path in the scenario"))
                })?;
            (s.clone(), max)
        }
        None => scn
            .paths
            .iter()
            .find_map(|p| p.sensor.clone().map(|s| (s, p.max_flow_m3h)))
            .ok_or_else(|| CliError::Usage("scenario has no metered paths; pass --sensor".into()))?,
    };
    let op = parse_op(op)?;

    let config = json!({
        "command": "watermark-eval",
        "baseline": baseline.display().to_string(),
        "observed": observed.display().to_string(),
        "trigger": { "channel": level_ch, "low": low, "high": high },
        "sensor": sensor_name,
        "full_scale": full_scale,
        "op": format!("{op:?}"),
        "samples": samples,
        "alpha": alpha,
        "timeout_s": timeout,
        "truth": truth.as_ref().map(|p| p.display().to_string()),
        "features": features.as_ref().map(|p| p.display().to_string()),
        "seed": common.seed,
        "scenario": to_json(&scn)?,
    });
    let cfg_text = write_config(&common.out, &config)?;

    let th = thresholds_for(full_scale)?;
    let mut base_tc =
        trigger_based_transition_times(&base_ds, &level_ch, low, high, &sensor_name, &th, op, timeout)?;
    let mut obs_tc =
        trigger_based_transition_times(&obs_ds, &level_ch, low, high, &sensor_name, &th, op, timeout)?;
    if let Some(n) = samples {
        base_tc.truncate(n);
        obs_tc.truncate(n);
    }
    let ks = replay_check(&base_tc, &obs_tc, alpha)?;
    write_json(&common.out.join("ks.json"), &ks)?;
    svg::ecdf_chart(
        &common.out.join("ecdf.svg"),
        "trigger-to-response transition times",
        "seconds",
        &[("baseline", base_tc.as_slice()), ("observed", obs_tc.as_slice())],
    )?;

    let mut body = String::new();
    let _ = writeln!(body, "trigger-to-response replay check");
    let _ = writeln!(body, "  trigger {level_ch} in [{low}, {high}], sensor {sensor_name}, op {op:?}");
    let _ = writeln!(body, "  baseline: {} transitions, observed: {} transitions", ks.n, ks.m);
    let _ = writeln!(body, "  D = {:.4}, critical {:.4} at alpha = {}", ks.d_stat,
        ks.critical_value, ks.alpha);
    let _ = writeln!(body, "  distributions {:?}", ks.decision);
    let _ = writeln!(body, "  verdict: {}", if ks.flags_replay() {
        "observed record matches the unwatermarked baseline -- REPLAY SUSPECTED"
    } else {
        "observed record differs from the baseline -- watermark visible"
    });

    if let Some(truth_path) = truth {
        let side = read_sidecar(&truth_path)?;
        let delays: Vec<f64> = side.delay_draws.iter().map(|d| d.delay_s).collect();
        let _ = writeln!(body, "\ndelay randomness battery ({} recorded draws)", delays.len());
        if delays.is_empty() {
            let _ = writeln!(body, "  no watermark draws in the sidecar; battery skipped");
        } else {
            let bits = delays_to_bits(&delays, &scn.watermark)?;
            let results = nist_subset(&bits)?;
            export_pvalues_csv(&common.out.join("nist_pvalues.csv"), &results)?;
            let _ = writeln!(body, "  {} bits serialized from the delay stream", bits.len());
            for line in pvalue_table_text(&results).lines() {
                let _ = writeln!(body, "  {line}");
            }
        }
    }

    if let Some(feat_path) = features {
        let rows = read_features_csv(&feat_path)?;
        let mut groups: BTreeMap<String, Vec<FeatureVector>> = BTreeMap::new();
        for (fv, label) in rows {
            groups.entry(label).or_default().push(fv);
        }
        let processes: Vec<(String, Vec<FeatureVector>)> = groups.into_iter().collect();
        let report = entropy_analysis(&processes, DEFAULT_BINS)?;
        export_entropy_csv(&common.out.join("entropy.csv"), &report)?;
        let _ = writeln!(body, "\nfingerprint uniqueness across {} processes", processes.len());
        for line in report.summary_text().lines() {
            let _ = writeln!(body, "  {line}");
        }
    }
    write_report(&common.out, "report.txt", &body, &cfg_text)
}
