//! `report`: the whole toolchain on one scenario. Each stage is the same
//! code path as its standalone subcommand, pointed at a subdirectory, so the
//! bundle doubles as a worked example of the individual tools.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use crate::util::{load_scenario, write_config, write_report};
use crate::{commands, svg, CliError, CommonArgs};

fn sub(common: &CommonArgs, scenario: &Path, seed: u64, dir: &Path) -> CommonArgs {
    CommonArgs {
        scenario: Some(scenario.to_path_buf()),
        seed: common.seed.wrapping_add(seed),
        out: dir.to_path_buf(),
    }
}

/// First lines of a stage artifact, quoted into the top-level report.
fn quote(body: &mut String, title: &str, path: &Path, max_lines: usize) {
    let _ = writeln!(body, "\n== {title} ({}) ==", path.display());
    match std::fs::read_to_string(path) {
        Ok(text) => {
            for line in text.lines().take(max_lines) {
                let _ = writeln!(body, "  {line}");
            }
        }
        Err(e) => {
            let _ = writeln!(body, "  (unreadable: {e})");
        }
    }
}

/// Everything between the body and the embedded config of a stage report.
fn quote_report_body(body: &mut String, title: &str, dir: &Path) {
    let path = dir.join("report.txt");
    let _ = writeln!(body, "\n== {title} ({}) ==", path.display());
    match std::fs::read_to_string(&path) {
        Ok(text) => {
            for line in text.lines().take_while(|l| !l.starts_with("--- resolved configuration")) {
                let _ = writeln!(body, "  {line}");
            }
        }
        Err(e) => {
            let _ = writeln!(body, "  (unreadable: {e})");
        }
    }
}

pub fn cmd_report(common: &CommonArgs, duration: f64) -> Result<(), CliError> {
    let t0 = Instant::now();
    // Tuning wants 20+ operations per direction and cross-validation five
    // fingerprint chunks per class; below ~80 ks the default plant cannot
    // accumulate either.
    if !(duration >= 80_000.0) {
        return Err(CliError::Usage(format!(
            "the pipeline needs at least 80000 s of simulation to tune and train, got {duration}"
        )));
    }
    let out = common.out.clone();
    std::fs::create_dir_all(&out)?;

    // Stage scenario files: the run as configured, plus an unwatermarked
    // twin for detector tuning and the replay-check baseline.
    let scn = load_scenario(&common.scenario)?;
    let mut scn_off = scn.clone();
    scn_off.watermark.enabled = false;
    let scn_path = out.join("scenario.json");
    let scn_off_path = out.join("scenario_unwatermarked.json");
    let write_scn = |p: &PathBuf, s: &actprint_core::plantsim::Scenario| -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(s)
            .map_err(|e| CliError::Module { name: "IoError", message: e.to_string() })?;
        std::fs::write(p, format!("{text}\n"))?;
        Ok(())
    };
    write_scn(&scn_path, &scn)?;
    write_scn(&scn_off_path, &scn_off)?;

    let side_duration = (duration / 3.0).max(40_000.0);
    let attack_duration = (duration / 6.0).max(20_000.0);

    let config = json!({
        "command": "report",
        "duration_s": duration,
        "side_run_duration_s": side_duration,
        "attack_run_duration_s": attack_duration,
        "seed": common.seed,
        "scenario": serde_json::to_value(&scn)
            .map_err(|e| CliError::Module { name: "IoError", message: e.to_string() })?,
    });
    let cfg_text = write_config(&out, &config)?;

    // 1. Clean watermarked run: the record every analysis stage consumes.
    let sim_dir = out.join("sim");
    commands::cmd_simulate(&sub(common, &scn_path, 0, &sim_dir), duration)?;
    let dataset = sim_dir.join("dataset.csv");

    // 2. Unwatermarked twins: KS baseline and a stand-in replay capture.
    let base_dir = out.join("baseline");
    commands::cmd_simulate(&sub(common, &scn_off_path, 1, &base_dir), side_duration)?;
    let replay_dir = out.join("replay");
    commands::cmd_simulate(&sub(common, &scn_off_path, 2, &replay_dir), side_duration)?;

    // 3. Dynamics fit on the clean record. Closed-loop operational data
    // only supports the metered flow channels; the integrating levels are
    // fit in differences, and the estimator-corrected score is the one that
    // matters in the stage report.
    let flow_names: Vec<String> = scn.paths.iter().filter_map(|p| p.sensor.clone()).collect();
    let ident_dir = out.join("identify");
    commands::cmd_identify(
        &sub(common, &scn_path, 0, &ident_dir),
        &dataset,
        None,
        Some(flow_names.join(",")),
        4,
        20,
        1e-8,
        true,
        0.3,
        0.1,
    )?;

    // 4. Timing fingerprints and the kernel shoot-out on them.
    let fp_dir = out.join("fingerprint");
    commands::cmd_fingerprint(&sub(common, &scn_path, 0, &fp_dir), &dataset, None, 10, 120.0)?;
    let features = fp_dir.join("features.csv");
    let train_dir = out.join("train");
    commands::cmd_train(
        &sub(common, &scn_path, 0, &train_dir),
        &features,
        "linear,polynomial,rbf,sigmoid",
        5,
        actprint_core::classify::DEFAULT_EPOCHS,
        actprint_core::classify::DEFAULT_LAMBDA,
        None,
    )?;
    let classify_dir = out.join("classify");
    commands::cmd_classify(
        &sub(common, &scn_path, 0, &classify_dir),
        &train_dir.join("model.json"),
        &features,
    )?;

    // 5. Detector thresholds from the clean record.
    let tune_dir = out.join("detect_tune");
    commands::cmd_detect(
        &sub(common, &scn_path, 0, &tune_dir),
        &dataset,
        None,
        true,
        None,
        None,
        0.005,
        120.0,
        180,
    )?;
    let params = tune_dir.join("params.json");

    // 6. Two attack runs, scanned against the tuned thresholds.
    let c1_dir = out.join("attack_c1");
    commands::cmd_attack(
        &sub(common, &scn_path, 3, &c1_dir),
        attack_duration,
        "C1",
        "mv1",
        1500,
        80,
        None,
        None,
        Some(3),
        None,
    )?;
    let d2_dir = out.join("attack_d2");
    commands::cmd_attack(
        &sub(common, &scn_path, 4, &d2_dir),
        attack_duration,
        "D2",
        "fit1",
        6000,
        1400,
        None,
        None,
        None,
        None,
    )?;
    for (dir, scan_dir) in [(&c1_dir, out.join("detect_c1")), (&d2_dir, out.join("detect_d2"))] {
        commands::cmd_detect(
            &sub(common, &scn_path, 0, &scan_dir),
            &dir.join("dataset.csv"),
            None,
            false,
            Some(params.clone()),
            Some(dir.join("truth.json")),
            0.005,
            120.0,
            180,
        )?;
    }

    // 7. Watermark evidence: the honest run should separate from the
    // baseline, the replayed capture should not; plus the randomness
    // battery on the recorded draws and uniqueness across fingerprints.
    // The uniqueness histograms want 20 fingerprints per label, which short
    // runs cannot supply; skip that section rather than fail the bundle.
    let feature_rows = crate::util::read_features_csv(&features)?;
    let mut label_counts: std::collections::BTreeMap<&str, usize> = Default::default();
    for (_, label) in &feature_rows {
        *label_counts.entry(label.as_str()).or_default() += 1;
    }
    let enough_for_entropy = label_counts.len() >= 2
        && label_counts.values().all(|&n| n >= actprint_core::watermark::entropy::MIN_SAMPLES);
    let wm_honest = out.join("watermark_honest");
    commands::cmd_watermark_eval(
        &sub(common, &scn_path, 0, &wm_honest),
        &base_dir.join("dataset.csv"),
        &dataset,
        None,
        None,
        "on",
        None,
        actprint_core::watermark::DEFAULT_ALPHA,
        120.0,
        Some(sim_dir.join("truth.json")),
        enough_for_entropy.then(|| features.clone()),
    )?;
    let wm_replay = out.join("watermark_replay");
    commands::cmd_watermark_eval(
        &sub(common, &scn_path, 0, &wm_replay),
        &base_dir.join("dataset.csv"),
        &replay_dir.join("dataset.csv"),
        None,
        None,
        "on",
        None,
        actprint_core::watermark::DEFAULT_ALPHA,
        120.0,
        Some(replay_dir.join("truth.json")),
        None,
    )?;

    // 8. Overview plots from the clean record.
    let plot_dir = out.join("plots");
    std::fs::create_dir_all(&plot_dir)?;
    let ds = crate::util::load_dataset(&dataset, &scn)?;
    let window = ds.len().min(4000);
    let trace = |name: &str| -> Result<Vec<(f64, f64)>, CliError> {
        Ok(ds.values(name)?[..window]
            .iter()
            .enumerate()
            .map(|(i, &v)| (i as f64 * ds.sample_period_s(), v))
            .collect())
    };
    let level_names: Vec<String> = scn.tanks.iter().map(|t| t.level_channel.clone()).collect();
    let mut level_series = Vec::new();
    for name in &level_names {
        level_series.push((name.as_str(), trace(name)?));
    }
    svg::line_chart(&plot_dir.join("levels.svg"), "tank levels", "seconds", "mm", &level_series)?;
    let mut flow_series = Vec::new();
    for name in &flow_names {
        flow_series.push((name.as_str(), trace(name)?));
    }
    svg::line_chart(&plot_dir.join("flows.svg"), "metered flows", "seconds", "m3/h", &flow_series)?;

    // 9. Top-level digest quoting each stage's own report.
    let mut body = String::new();
    let _ = writeln!(body, "full pipeline on seed {}: {:.1} s wall clock", common.seed,
        t0.elapsed().as_secs_f64());
    let _ = writeln!(body, "stages: sim, baseline, replay, identify, fingerprint, train, \
        classify, detect_tune, attack_c1, attack_d2, detect_c1, detect_d2, \
        watermark_honest, watermark_replay, plots");
    if !enough_for_entropy {
        let _ = writeln!(body, "note: fewer than 20 fingerprints for some label at this \
            duration; the uniqueness analysis was skipped");
    }
    quote_report_body(&mut body, "clean run", &sim_dir);
    quote_report_body(&mut body, "dynamics fit", &ident_dir);
    quote_report_body(&mut body, "fingerprints", &fp_dir);
    quote(&mut body, "kernel accuracy", &train_dir.join("accuracy.csv"), 8);
    quote_report_body(&mut body, "classifier self-check", &classify_dir);
    quote_report_body(&mut body, "detector thresholds", &tune_dir);
    quote_report_body(&mut body, "toggle-storm attack scan", &out.join("detect_c1"));
    quote_report_body(&mut body, "frozen-meter attack scan", &out.join("detect_d2"));
    quote_report_body(&mut body, "watermark vs honest run", &wm_honest);
    quote_report_body(&mut body, "watermark vs replayed capture", &wm_replay);
    write_report(&out, "report.txt", &body, &cfg_text)
}
