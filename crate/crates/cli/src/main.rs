//! `actprint` — plant simulation, actuator fingerprinting, attack detection
//! and watermark evaluation from one binary. Every subcommand is
//! deterministic under its `--seed`, never modifies its inputs, and embeds
//! the fully resolved configuration in its report.

mod commands;
mod pipeline;
mod svg;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use actprint_core::classify::ClassifyError;
use actprint_core::detect::DetectError;
use actprint_core::fingerprint::FingerprintError;
use actprint_core::lti::LtiError;
use actprint_core::plantsim::PlantSimError;
use actprint_core::sysid::SysIdError;
use actprint_core::timeseries::TimeSeriesError;
use actprint_core::watermark::WatermarkError;

/// Usage problems exit with 2; failures inside the toolkit exit with 1 and
/// name the module error they came from.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Module { name: &'static str, message: String },
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Module { name, message } => write!(f, "{name}: {message}"),
        }
    }
}

macro_rules! module_error {
    ($ty:ty, $name:literal) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Module { name: $name, message: e.to_string() }
            }
        }
    };
}

module_error!(TimeSeriesError, "TimeSeriesError");
module_error!(LtiError, "LtiError");
module_error!(SysIdError, "SysIdError");
module_error!(PlantSimError, "PlantSimError");
module_error!(FingerprintError, "FingerprintError");
module_error!(ClassifyError, "ClassifyError");
module_error!(DetectError, "DetectError");
module_error!(WatermarkError, "WatermarkError");
module_error!(std::io::Error, "IoError");

#[derive(Parser)]
#[command(
    name = "actprint",
    about = "Actuator timing fingerprints for control-system integrity",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Clone)]
pub struct CommonArgs {
    /// Scenario description (JSON); omit for the bundled two-stage plant.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Master seed for anything stochastic in this subcommand.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory (created if absent; contents are overwritten).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write the bundled default scenario as editable JSON.
    Scenario {
        /// Target file; prints to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the plant and export the reported dataset plus ground truth.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Simulated duration in seconds.
        #[arg(long, default_value_t = 40_000.0)]
        duration: f64,
    },
    /// Run the plant with one scripted attack window.
    Attack {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 40_000.0)]
        duration: f64,
        /// Attack type: A1, B1, C1, D1, D2, E1 or F1.
        #[arg(long)]
        attack_type: String,
        /// Comma-separated target channels/devices.
        #[arg(long)]
        targets: String,
        /// First attacked sample.
        #[arg(long, default_value_t = 1200)]
        start: usize,
        /// Attack window length in samples.
        #[arg(long, default_value_t = 600)]
        window: usize,
        /// Constant value painted over a spoofed sensor (A1).
        #[arg(long, conflicts_with_all = ["command_level", "toggle_period", "sigmoid_duration"])]
        spoof_value: Option<f64>,
        /// Injected actuator command level (B1).
        #[arg(long, conflicts_with_all = ["toggle_period", "sigmoid_duration"])]
        command_level: Option<f64>,
        /// Samples between forced toggles (C1).
        #[arg(long, conflicts_with = "sigmoid_duration")]
        toggle_period: Option<usize>,
        /// Spoofed-transient length in samples (D1, E1).
        #[arg(long)]
        sigmoid_duration: Option<usize>,
    },
    /// Fit a state-space model to recorded channels and score it.
    Identify {
        #[command(flatten)]
        common: CommonArgs,
        /// Recorded dataset CSV.
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated input channels; defaults to every actuator.
        #[arg(long)]
        inputs: Option<String>,
        /// Comma-separated output channels; defaults to every sensor.
        #[arg(long)]
        outputs: Option<String>,
        #[arg(long, default_value_t = 4)]
        order: usize,
        #[arg(long, default_value_t = 20)]
        horizon: usize,
        #[arg(long, default_value_t = 1e-8)]
        ridge: f64,
        /// Regress on first differences (better for integrating levels).
        #[arg(long, default_value_t = false)]
        difference: bool,
        /// Trailing fraction of the record scored as holdout.
        #[arg(long, default_value_t = 0.3)]
        holdout: f64,
        /// Assumed process noise for the steady-state estimator gain.
        #[arg(long, default_value_t = 0.1)]
        process_std: f64,
    },
    /// Extract transition times and chunked fingerprint features.
    Fingerprint {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: PathBuf,
        /// Actuator:sensor pairs (e.g. mv1:fit1,p1:fit2); defaults to the
        /// scenario's flow paths.
        #[arg(long)]
        pairs: Option<String>,
        #[arg(long, default_value_t = 10)]
        chunk: usize,
        #[arg(long, default_value_t = 120.0)]
        timeout: f64,
    },
    /// Cross-validate kernels on labeled fingerprints and train a model.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Labeled feature CSV (fingerprint output).
        #[arg(long)]
        features: PathBuf,
        /// Comma-separated kernels: linear, polynomial, rbf, sigmoid.
        #[arg(long, default_value = "linear,polynomial,rbf,sigmoid")]
        kernels: String,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = actprint_core::classify::DEFAULT_EPOCHS)]
        epochs: usize,
        #[arg(long, default_value_t = actprint_core::classify::DEFAULT_LAMBDA)]
        lambda: f64,
        /// Kernel for the exported model; defaults to the CV winner.
        #[arg(long)]
        final_kernel: Option<String>,
    },
    /// Label fingerprints with a trained model.
    Classify {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
    },
    /// Tune per-pair detector thresholds or scan a record for alarms.
    Detect {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: PathBuf,
        /// Actuator:sensor pairs; defaults to the scenario's flow paths.
        #[arg(long)]
        pairs: Option<String>,
        /// Fit thresholds from this (clean) record instead of scanning.
        #[arg(long, default_value_t = false)]
        tune: bool,
        /// Threshold file produced by --tune; required when scanning.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Ground-truth sidecar JSON; adds a per-attack-type report.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Training false-alarm budget per direction for --tune.
        #[arg(long, default_value_t = 0.005)]
        max_far: f64,
        #[arg(long, default_value_t = 120.0)]
        timeout: f64,
        /// Post-attack grace window (samples) when scoring against truth.
        #[arg(long, default_value_t = 180)]
        grace: usize,
    },
    /// Compare transition-time distributions and audit delay randomness.
    WatermarkEval {
        #[command(flatten)]
        common: CommonArgs,
        /// Unwatermarked reference record CSV.
        #[arg(long)]
        baseline: PathBuf,
        /// Record under test CSV.
        #[arg(long)]
        observed: PathBuf,
        /// Level trigger as channel:low:high (e.g. lit1:600:700); defaults
        /// to the scenario's first tank.
        #[arg(long)]
        trigger: Option<String>,
        /// Responding flow sensor; defaults to the first flow path.
        #[arg(long)]
        sensor: Option<String>,
        /// Transition direction to time: on or off.
        #[arg(long, default_value = "on")]
        op: String,
        /// Number of transition times compared (earliest kept).
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = actprint_core::watermark::DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = 120.0)]
        timeout: f64,
        /// Ground-truth sidecar of the observed run; enables the
        /// randomness battery on its recorded delay draws.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Labeled feature CSV; enables the entropy/uniqueness report.
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Run the whole pipeline on one scenario and bundle all reports.
    Report {
        #[command(flatten)]
        common: CommonArgs,
        /// Duration of the clean run (attack runs are shorter).
        #[arg(long, default_value_t = 260_000.0)]
        duration: f64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Scenario { out } => commands::cmd_scenario(out),
        Command::Simulate { common, duration } => commands::cmd_simulate(&common, duration),
        Command::Attack {
            common,
            duration,
            attack_type,
            targets,
            start,
            window,
            spoof_value,
            command_level,
            toggle_period,
            sigmoid_duration,
        } => commands::cmd_attack(
            &common,
            duration,
            &attack_type,
            &targets,
            start,
            window,
            spoof_value,
            command_level,
            toggle_period,
            sigmoid_duration,
        ),
        Command::Identify {
            common,
            data,
            inputs,
            outputs,
            order,
            horizon,
            ridge,
            difference,
            holdout,
            process_std,
        } => commands::cmd_identify(
            &common, &data, inputs, outputs, order, horizon, ridge, difference, holdout,
            process_std,
        ),
        Command::Fingerprint { common, data, pairs, chunk, timeout } => {
            commands::cmd_fingerprint(&common, &data, pairs, chunk, timeout)
        }
        Command::Train { common, features, kernels, folds, epochs, lambda, final_kernel } => {
            commands::cmd_train(&common, &features, &kernels, folds, epochs, lambda, final_kernel)
        }
        Command::Classify { common, model, features } => {
            commands::cmd_classify(&common, &model, &features)
        }
        Command::Detect { common, data, pairs, tune, params, truth, max_far, timeout, grace } => {
            commands::cmd_detect(&common, &data, pairs, tune, params, truth, max_far, timeout, grace)
        }
        Command::WatermarkEval {
            common,
            baseline,
            observed,
            trigger,
            sensor,
            op,
            samples,
            alpha,
            timeout,
            truth,
            features,
        } => commands::cmd_watermark_eval(
            &common, &baseline, &observed, trigger, sensor, &op, samples, alpha, timeout, truth,
            features,
        ),
        Command::Report { common, duration } => pipeline::cmd_report(&common, duration),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                CliError::Module { .. } => ExitCode::from(1),
            }
        }
    }
}
