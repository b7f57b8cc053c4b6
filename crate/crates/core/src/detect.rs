//! Two-sided CUSUM change detection over per-device transition times:
//! parameter fitting, false-alarm-rate threshold tuning, streaming
//! iteration, and per-attack detection reporting against ground truth.
//!
//! Each (actuator, operation) pair runs its own detector. Complete
//! operations feed the CUSUM; incomplete and timed-out operations raise
//! their own alarm categories directly.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::{
    extract_transitions, FingerprintError, SensorThresholds, TransitionOp, TransitionStatus,
};
use crate::plantsim::GroundTruth;
use crate::timeseries::Dataset;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("need at least {needed} transitions, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("detector config: {0}")]
    ConfigError(String),
    #[error(transparent)]
    Extraction(#[from] FingerprintError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fitted detector parameters for one (actuator, operation) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CusumParams {
    /// Mean transition time (s).
    pub mu: f64,
    /// Bias absorbing in-family variation (s).
    pub beta: f64,
    pub t_plus: f64,
    pub t_minus: f64,
}

impl CusumParams {
    pub fn validate(&self) -> Result<(), DetectError> {
        if !(self.beta >= 0.0 && self.t_plus > 0.0 && self.t_minus < 0.0 && self.mu.is_finite()) {
            return Err(DetectError::ConfigError(format!(
                "require beta >= 0 and t_plus > 0 > t_minus, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Running sums of one detector instance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CusumState {
    pub s_plus: f64,
    pub s_minus: f64,
    pub iteration: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepAlarms {
    pub positive: bool,
    pub negative: bool,
}

impl StepAlarms {
    pub fn any(&self) -> bool {
        self.positive || self.negative
    }
}

/// Minimum complete transitions to fit (mu, beta).
pub const MIN_FIT_SAMPLES: usize = 5;
/// Minimum transitions for threshold tuning to say anything about rates.
pub const MIN_TUNE_SAMPLES: usize = 20;
/// Default per-direction false-alarm budget.
pub const DEFAULT_MAX_FAR: f64 = 0.02;
/// Lower bound of the threshold search; also the result for zero-variance
/// training data, where any positive threshold already yields zero alarms.
const SEARCH_EPS: f64 = 1e-9;
const SEARCH_ITERS: usize = 40;

fn check_times(times: &[f64]) -> Result<(), DetectError> {
    if let Some(bad) = times.iter().find(|t| !t.is_finite()) {
        return Err(DetectError::BadInput(format!("non-finite transition time {bad}")));
    }
    Ok(())
}

/// Mean and half-standard-deviation of the training transitions.
pub fn fit_cusum_params(times: &[f64]) -> Result<(f64, f64), DetectError> {
    check_times(times)?;
    if times.len() < MIN_FIT_SAMPLES {
        return Err(DetectError::InsufficientData { needed: MIN_FIT_SAMPLES, got: times.len() });
    }
    let n = times.len() as f64;
    let mu = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mu).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mu, var.sqrt() / 2.0))
}

fn replay_far_positive(times: &[f64], mu: f64, beta: f64, t_plus: f64) -> f64 {
    let mut s = 0.0;
    let mut alarms = 0usize;
    for &t in times {
        let d = s + t - mu - beta;
        if d > t_plus {
            alarms += 1;
            s = 0.0;
        } else {
            s = d.max(0.0);
        }
    }
    alarms as f64 / times.len() as f64
}

fn replay_far_negative(times: &[f64], mu: f64, beta: f64, t_minus: f64) -> f64 {
    let mut s = 0.0;
    let mut alarms = 0usize;
    for &t in times {
        let d = s + t - mu + beta;
        if d < t_minus {
            alarms += 1;
            s = 0.0;
        } else {
            s = d.min(0.0);
        }
    }
    alarms as f64 / times.len() as f64
}

/// Smallest-magnitude thresholds keeping the replayed false-alarm rate of
/// each direction within `max_far`, found by bisection over
/// `[eps, max observed |d|]`. Returns full parameters with (mu, beta)
/// fitted from the same transitions.
pub fn tune_thresholds(times: &[f64], max_far: f64) -> Result<CusumParams, DetectError> {
    if times.len() < MIN_TUNE_SAMPLES {
        return Err(DetectError::InsufficientData { needed: MIN_TUNE_SAMPLES, got: times.len() });
    }
    if !(0.0..1.0).contains(&max_far) {
        return Err(DetectError::BadInput(format!("max_far {max_far} outside [0, 1)")));
    }
    let (mu, beta) = fit_cusum_params(times)?;

    // Alarm-free replay bounds the search: with resets the sums only shrink,
    // so no candidate threshold can observe a larger excursion.
    let mut d_max = 0.0f64;
    let mut s = 0.0;
    for &t in times {
        s = (s + t - mu - beta).max(0.0);
        d_max = d_max.max(s);
    }
    let mut d_min = 0.0f64;
    let mut s = 0.0;
    for &t in times {
        s = (s + t - mu + beta).min(0.0);
        d_min = d_min.min(s);
    }

    let bisect = |hi0: f64, far: &dyn Fn(f64) -> f64| {
        let mut lo = SEARCH_EPS;
        let mut hi = hi0.max(SEARCH_EPS);
        for _ in 0..SEARCH_ITERS {
            let mid = 0.5 * (lo + hi);
            if far(mid) <= max_far {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    let t_plus = bisect(d_max, &|t| replay_far_positive(times, mu, beta, t));
    let t_minus = -bisect(-d_min, &|t| replay_far_negative(times, mu, beta, -t));
    let params = CusumParams { mu, beta, t_plus, t_minus };
    params.validate()?;
    Ok(params)
}

/// One detector iteration. Both directions update on every sample; an alarm
/// resets its direction's sum to zero.
pub fn cusum_step(
    state: &CusumState,
    params: &CusumParams,
    t: f64,
) -> Result<(CusumState, StepAlarms), DetectError> {
    if !t.is_finite() {
        return Err(DetectError::BadInput(format!("non-finite transition time {t}")));
    }
    let d_plus = state.s_plus + t - params.mu - params.beta;
    let d_minus = state.s_minus + t - params.mu + params.beta;
    let mut alarms = StepAlarms::default();
    let s_plus = if d_plus > params.t_plus {
        alarms.positive = true;
        0.0
    } else {
        d_plus.max(0.0)
    };
    let s_minus = if d_minus < params.t_minus {
        alarms.negative = true;
        0.0
    } else {
        d_minus.min(0.0)
    };
    Ok((CusumState { s_plus, s_minus, iteration: state.iteration + 1 }, alarms))
}

/// One tracked actuator/sensor pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Pairing {
    pub actuator: String,
    pub sensor: String,
    pub thresholds: SensorThresholds,
}

pub type PairParams = BTreeMap<(String, TransitionOp), CusumParams>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CusumAlarm {
    pub actuator: String,
    pub op: TransitionOp,
    /// Transition count within this pair's stream when the alarm fired.
    pub iteration: usize,
    pub direction: Direction,
    /// Latest earlier iteration at which this direction's sum sat at zero —
    /// the likely onset of the deviation.
    pub change_start_iteration: usize,
    /// Dataset samples spanned, from the first transition of the excursion
    /// to the alarming transition's crossing.
    pub window: (usize, usize),
}

/// An operation flagged without CUSUM: it never finished.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpFlag {
    pub actuator: String,
    pub op: TransitionOp,
    pub start_idx: usize,
    pub window: (usize, usize),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AlarmLog {
    pub cusum: Vec<CusumAlarm>,
    pub incomplete: Vec<OpFlag>,
    pub timed_out: Vec<OpFlag>,
    /// Complete transitions fed to the detectors.
    pub transitions_checked: usize,
}

impl AlarmLog {
    pub fn total_alarms(&self) -> usize {
        self.cusum.len() + self.incomplete.len() + self.timed_out.len()
    }

    pub fn cusum_for<'a>(
        &'a self,
        actuator: &'a str,
        op: TransitionOp,
    ) -> impl Iterator<Item = &'a CusumAlarm> {
        self.cusum.iter().filter(move |a| a.actuator == actuator && a.op == op)
    }
}

/// Streams each pairing's transitions through its per-operation detectors.
pub fn run_detector(
    ds: &Dataset,
    pairings: &[Pairing],
    params: &PairParams,
    timeout_s: f64,
) -> Result<AlarmLog, DetectError> {
    for p in pairings {
        for op in [TransitionOp::On, TransitionOp::Off] {
            let key = (p.actuator.clone(), op);
            let prm = params.get(&key).ok_or_else(|| {
                DetectError::ConfigError(format!("no parameters for ({}, {op:?})", p.actuator))
            })?;
            prm.validate()?;
        }
    }
    let timeout_samples = (timeout_s / ds.sample_period_s()).round() as usize;
    let mut log = AlarmLog::default();
    for p in pairings {
        let events = extract_transitions(ds, &p.actuator, &p.sensor, &p.thresholds, timeout_s)?;
        let mut lanes: BTreeMap<TransitionOp, (CusumState, [usize; 2], [usize; 2])> =
            BTreeMap::new();
        for e in &events {
            match e.status {
                TransitionStatus::Incomplete => log.incomplete.push(OpFlag {
                    actuator: p.actuator.clone(),
                    op: e.op,
                    start_idx: e.start_idx,
                    window: (e.start_idx, e.start_idx),
                }),
                TransitionStatus::TimedOut => log.timed_out.push(OpFlag {
                    actuator: p.actuator.clone(),
                    op: e.op,
                    start_idx: e.start_idx,
                    window: (e.start_idx, e.start_idx + timeout_samples),
                }),
                TransitionStatus::Complete => {
                    let prm = &params[&(p.actuator.clone(), e.op)];
                    // (state, last-zero iteration per direction, excursion
                    // anchor sample per direction)
                    let lane = lanes.entry(e.op).or_default();
                    let (state, last_zero, anchor) = lane;
                    if state.s_plus == 0.0 {
                        anchor[0] = e.start_idx;
                    }
                    if state.s_minus == 0.0 {
                        anchor[1] = e.start_idx;
                    }
                    let t = e.transition_time_s.expect("complete events carry a time");
                    let (next, alarms) = cusum_step(state, prm, t)?;
                    let end = e.end_idx.expect("complete events carry an end");
                    if alarms.positive {
                        log.cusum.push(CusumAlarm {
                            actuator: p.actuator.clone(),
                            op: e.op,
                            iteration: next.iteration,
                            direction: Direction::Positive,
                            change_start_iteration: last_zero[0],
                            window: (anchor[0], end),
                        });
                    }
                    if alarms.negative {
                        log.cusum.push(CusumAlarm {
                            actuator: p.actuator.clone(),
                            op: e.op,
                            iteration: next.iteration,
                            direction: Direction::Negative,
                            change_start_iteration: last_zero[1],
                            window: (anchor[1], end),
                        });
                    }
                    *state = next;
                    if state.s_plus == 0.0 {
                        last_zero[0] = state.iteration;
                    }
                    if state.s_minus == 0.0 {
                        last_zero[1] = state.iteration;
                    }
                    log.transitions_checked += 1;
                }
            }
        }
    }
    Ok(log)
}

/// Detection outcome for one attack type.
#[derive(Debug, Clone, Serialize)]
pub struct DetectionRow {
    pub attack: crate::plantsim::AttackType,
    /// Windows evaluated; no-op command injections are listed separately and
    /// excluded from the rates.
    pub performed: usize,
    pub no_op: usize,
    pub detected: usize,
    pub overall_rate_pct: f64,
    pub cusum_rate_pct: f64,
    pub incomplete_rate_pct: f64,
    pub timed_out_rate_pct: f64,
}

fn intersects(window: (usize, usize), start: usize, end_excl: usize, grace: usize) -> bool {
    let (a, b) = window;
    a < end_excl + grace && b >= start
}

/// Per-attack-type table: an attack counts as detected when any alarm window
/// intersects `[start, end + grace)`.
pub fn detection_report(
    log: &AlarmLog,
    truth: &GroundTruth,
    grace_samples: usize,
) -> Vec<DetectionRow> {
    let mut types: Vec<crate::plantsim::AttackType> =
        truth.attacks.iter().map(|a| a.attack).collect();
    types.sort();
    types.dedup();
    let mut rows = Vec::new();
    for ty in types {
        let mut row = DetectionRow {
            attack: ty,
            performed: 0,
            no_op: 0,
            detected: 0,
            overall_rate_pct: 0.0,
            cusum_rate_pct: 0.0,
            incomplete_rate_pct: 0.0,
            timed_out_rate_pct: 0.0,
        };
        let (mut by_cusum, mut by_incomplete, mut by_timeout) = (0usize, 0usize, 0usize);
        for atk in truth.attacks.iter().filter(|a| a.attack == ty) {
            if atk.no_op_attack {
                row.no_op += 1;
                continue;
            }
            row.performed += 1;
            let hit_c = log
                .cusum
                .iter()
                .any(|a| intersects(a.window, atk.start_idx, atk.end_idx, grace_samples));
            let hit_i = log
                .incomplete
                .iter()
                .any(|a| intersects(a.window, atk.start_idx, atk.end_idx, grace_samples));
            let hit_t = log
                .timed_out
                .iter()
                .any(|a| intersects(a.window, atk.start_idx, atk.end_idx, grace_samples));
            by_cusum += hit_c as usize;
            by_incomplete += hit_i as usize;
            by_timeout += hit_t as usize;
            row.detected += (hit_c || hit_i || hit_t) as usize;
        }
        if row.performed > 0 {
            let pct = |x: usize| 100.0 * x as f64 / row.performed as f64;
            row.overall_rate_pct = pct(row.detected);
            row.cusum_rate_pct = pct(by_cusum);
            row.incomplete_rate_pct = pct(by_incomplete);
            row.timed_out_rate_pct = pct(by_timeout);
        }
        rows.push(row);
    }
    rows
}

/// CSV with one row per alarm, all categories pooled.
pub fn export_alarms_csv(path: &Path, log: &AlarmLog) -> Result<(), DetectError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "kind,actuator,op,iteration,direction,change_start,window_start,window_end")?;
    for a in &log.cusum {
        writeln!(
            out,
            "cusum,{},{:?},{},{:?},{},{},{}",
            a.actuator, a.op, a.iteration, a.direction, a.change_start_iteration, a.window.0,
            a.window.1
        )?;
    }
    for (kind, flags) in [("incomplete", &log.incomplete), ("timed_out", &log.timed_out)] {
        for f in flags {
            writeln!(
                out,
                "{kind},{},{:?},,,,{},{}",
                f.actuator, f.op, f.window.0, f.window.1
            )?;
        }
    }
    Ok(())
}

/// Fixed-width text table of per-attack detection rates.
pub fn detection_table_text(rows: &[DetectionRow]) -> String {
    let mut s = String::from(
        "attack  performed  no_op  overall%   cusum%  incomplete%  timed_out%\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{:<6}  {:>9}  {:>5}  {:>8.1}  {:>7.1}  {:>11.1}  {:>10.1}\n",
            r.attack.to_string(),
            r.performed,
            r.no_op,
            r.overall_rate_pct,
            r.cusum_rate_pct,
            r.incomplete_rate_pct,
            r.timed_out_rate_pct
        ));
    }
    s
}

/// CSV form of [`detection_report`]'s table.
pub fn export_detection_csv(path: &Path, rows: &[DetectionRow]) -> Result<(), DetectError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "attack,performed,no_op,detected,overall_rate_pct,cusum_rate_pct,incomplete_rate_pct,timed_out_rate_pct"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.attack,
            r.performed,
            r.no_op,
            r.detected,
            r.overall_rate_pct,
            r.cusum_rate_pct,
            r.incomplete_rate_pct,
            r.timed_out_rate_pct
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plantsim::{self, AttackParams, AttackSpec, AttackType, Scenario};
    use crate::rng::chacha;
    use crate::timeseries::{state_code, ChannelKind, TimeSeries};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn example_params() -> CusumParams {
        CusumParams { mu: 17.79, beta: 1.12, t_plus: 6.56, t_minus: -3.05 }
    }

    #[test]
    fn in_family_sample_accumulates_without_alarm() {
        let p = example_params();
        let (s, alarms) = cusum_step(&CusumState::default(), &p, 20.0).unwrap();
        let d_plus = 20.0 - 17.79 - 1.12;
        let d_minus = 20.0 - 17.79 + 1.12;
        assert!(!alarms.any());
        assert!((s.s_plus - d_plus).abs() < 1e-12, "{}", s.s_plus);
        assert!(d_minus > 0.0 && s.s_minus == 0.0, "positive d- clips to zero");
        assert_eq!(s.iteration, 1);
    }

    #[test]
    fn excursion_past_threshold_alarms_and_resets() {
        let p = example_params();
        let (s, alarms) = cusum_step(&CusumState::default(), &p, 26.0).unwrap();
        assert!(26.0 - 17.79 - 1.12 > p.t_plus);
        assert!(alarms.positive && !alarms.negative);
        assert_eq!(s.s_plus, 0.0);
    }

    #[test]
    fn sample_at_the_mean_is_absorbed_by_the_bias() {
        let p = example_params();
        let (s, alarms) = cusum_step(&CusumState::default(), &p, p.mu).unwrap();
        assert!(!alarms.any());
        assert_eq!(s.s_plus, 0.0);
        assert_eq!(s.s_minus, 0.0);
    }

    #[test]
    fn fit_uses_mean_and_half_std() {
        let (mu, beta) = fit_cusum_params(&[7.0; 5]).unwrap();
        assert_eq!(mu, 7.0);
        assert_eq!(beta, 0.0);

        // Deviations (-2, 0, 2, -2, 2): sample variance 4, std 2.
        let (mu, beta) = fit_cusum_params(&[16.0, 18.0, 20.0, 16.0, 20.0]).unwrap();
        assert!((mu - 18.0).abs() < 1e-12);
        assert!((beta - 1.0).abs() < 1e-12);

        assert!(matches!(
            fit_cusum_params(&[16.0, 18.0, 20.0]),
            Err(DetectError::InsufficientData { needed: 5, got: 3 })
        ));
    }

    #[test]
    fn non_finite_samples_are_rejected() {
        assert!(matches!(fit_cusum_params(&[1.0, f64::NAN, 2.0, 3.0, 4.0]),
            Err(DetectError::BadInput(_))));
        assert!(matches!(
            cusum_step(&CusumState::default(), &example_params(), f64::NAN),
            Err(DetectError::BadInput(_))
        ));
    }

    #[test]
    fn zero_variance_training_tunes_to_the_search_floor() {
        let times = vec![7.0; 25];
        let p = tune_thresholds(&times, DEFAULT_MAX_FAR).unwrap();
        assert_eq!(p.mu, 7.0);
        assert_eq!(p.beta, 0.0);
        assert!(p.t_plus > 0.0 && p.t_plus < 1e-6, "{}", p.t_plus);
        assert!(p.t_minus < 0.0 && p.t_minus > -1e-6);
        // Replaying the training data through the tuned detector is silent.
        let mut state = CusumState::default();
        for &t in &times {
            let (next, alarms) = cusum_step(&state, &p, t).unwrap();
            assert!(!alarms.any());
            state = next;
        }
    }

    fn gaussian_times(n: usize, mu: f64, sigma: f64, seed: u64) -> Vec<f64> {
        let mut rng = chacha(seed);
        (0..n).map(|_| mu + sigma * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn tuned_thresholds_meet_the_far_budget_on_training_data() {
        let times = gaussian_times(400, 18.0, 1.0, 3);
        let p = tune_thresholds(&times, DEFAULT_MAX_FAR).unwrap();
        let mut state = CusumState::default();
        let (mut pos, mut neg) = (0usize, 0usize);
        for &t in &times {
            let (next, alarms) = cusum_step(&state, &p, t).unwrap();
            pos += alarms.positive as usize;
            neg += alarms.negative as usize;
            state = next;
        }
        let n = times.len() as f64;
        assert!(pos as f64 / n <= DEFAULT_MAX_FAR, "{pos} positive alarms");
        assert!(neg as f64 / n <= DEFAULT_MAX_FAR, "{neg} negative alarms");
    }

    #[test]
    fn tightening_the_far_budget_never_shrinks_thresholds() {
        let times = gaussian_times(400, 18.0, 1.0, 3);
        let loose = tune_thresholds(&times, 0.02).unwrap();
        let tight = tune_thresholds(&times, 0.005).unwrap();
        assert!(tight.t_plus >= loose.t_plus);
        assert!(tight.t_minus <= loose.t_minus);
    }

    #[test]
    fn tuning_needs_twenty_samples() {
        assert!(matches!(
            tune_thresholds(&vec![5.0; 19], 0.02),
            Err(DetectError::InsufficientData { needed: 20, got: 19 })
        ));
    }

    #[test]
    fn sums_stay_inside_the_threshold_band() {
        let p = example_params();
        let mut rng = chacha(11);
        let mut state = CusumState::default();
        for _ in 0..2000 {
            let t = 17.79 + 4.0 * rng.sample::<f64, _>(StandardNormal);
            let (next, alarms) = cusum_step(&state, &p, t.max(0.0)).unwrap();
            assert!((0.0..=p.t_plus).contains(&next.s_plus));
            assert!((p.t_minus..=0.0).contains(&next.s_minus));
            assert!(!(alarms.positive && alarms.negative), "directions are exclusive");
            state = next;
        }
    }

    #[test]
    fn constant_stream_at_the_mean_never_alarms() {
        for beta in [0.0, 1.12] {
            let p = CusumParams { mu: 17.79, beta, t_plus: 6.56, t_minus: -3.05 };
            let mut state = CusumState::default();
            for _ in 0..1000 {
                let (next, alarms) = cusum_step(&state, &p, p.mu).unwrap();
                assert!(!alarms.any());
                state = next;
            }
            assert_eq!(state.s_plus, 0.0);
            assert_eq!(state.s_minus, 0.0);
        }
    }

    #[test]
    fn sustained_shift_alarms_within_the_drift_bound() {
        // Shift of +3 against beta 1: net drift 2 per step, threshold 6.56
        // -> alarm on step ceil(6.56 / 2) = 4.
        let p = CusumParams { mu: 10.0, beta: 1.0, t_plus: 6.56, t_minus: -3.05 };
        let mut state = CusumState::default();
        let mut first_alarm = None;
        for i in 1..=10 {
            let (next, alarms) = cusum_step(&state, &p, 13.0).unwrap();
            if alarms.positive {
                first_alarm = Some(i);
                break;
            }
            state = next;
        }
        assert_eq!(first_alarm, Some(4));
    }

    /// Dataset with one actuator whose ON operations take the given times
    /// (1 Hz, pump-style codes, sensor range [0, 1]).
    fn op_dataset(on_times: &[f64], stall_last: bool) -> Dataset {
        let mut act = vec![state_code::OFF; 3];
        let mut sen = vec![0.0; 3];
        for (i, &tc) in on_times.iter().enumerate() {
            let stall = stall_last && i == on_times.len() - 1;
            // Departure to ON; sensor crosses 0.9 after tc samples.
            act.push(state_code::ON);
            sen.push(0.5);
            let dwell = tc as usize + 40;
            for j in 1..dwell {
                act.push(state_code::ON);
                sen.push(if j >= tc as usize && !stall { 1.0 } else { 0.5 });
            }
            // Return to OFF; sensor is already low the next sample.
            act.push(state_code::OFF);
            sen.push(1.0);
            for _ in 0..6 {
                act.push(state_code::OFF);
                sen.push(0.0);
            }
        }
        Dataset::new(
            1.0,
            0,
            vec![
                TimeSeries::new("dev", ChannelKind::Actuator, "", act),
                TimeSeries::new("flow", ChannelKind::Sensor, "", sen),
            ],
            "synthetic",
        )
        .unwrap()
    }

    fn pairings() -> Vec<Pairing> {
        vec![Pairing {
            actuator: "dev".to_string(),
            sensor: "flow".to_string(),
            thresholds: SensorThresholds::from_extrema(1.0, 0.0).unwrap(),
        }]
    }

    fn pair_params(on: CusumParams) -> PairParams {
        let mut m = PairParams::new();
        m.insert(("dev".to_string(), TransitionOp::On), on);
        // OFF ops in the synthetic trace complete instantly and uniformly.
        m.insert(
            ("dev".to_string(), TransitionOp::Off),
            CusumParams { mu: 1.0, beta: 0.5, t_plus: 5.0, t_minus: -5.0 },
        );
        m
    }

    #[test]
    fn detector_marks_the_change_start_at_the_last_zero() {
        // Four in-family samples then a jump: the positive sum never rests
        // after sample 1, so the excursion is anchored at the first op.
        let ds = op_dataset(&[20.0, 20.0, 20.0, 20.0, 26.0], false);
        let log = run_detector(&ds, &pairings(), &pair_params(example_params()), 120.0).unwrap();
        assert_eq!(log.transitions_checked, 10); // 5 ON + 5 OFF
        let on_alarms: Vec<_> = log.cusum_for("dev", TransitionOp::On).collect();
        assert_eq!(on_alarms.len(), 1);
        let a = on_alarms[0];
        assert_eq!(a.iteration, 5);
        assert_eq!(a.change_start_iteration, 0);
        assert_eq!(a.direction, Direction::Positive);
        assert!(a.window.0 < a.window.1);

        // A low sample mid-stream re-zeros the sum; the next excursion is
        // anchored there instead.
        let ds = op_dataset(&[20.0, 20.0, 14.0, 20.0, 26.0], false);
        let log = run_detector(&ds, &pairings(), &pair_params(example_params()), 120.0).unwrap();
        let on_alarms: Vec<_> = log.cusum_for("dev", TransitionOp::On).collect();
        assert_eq!(on_alarms.len(), 1);
        assert_eq!(on_alarms[0].iteration, 5);
        assert_eq!(on_alarms[0].change_start_iteration, 3);
    }

    #[test]
    fn stalled_operation_lands_in_the_timeout_category() {
        let ds = op_dataset(&[20.0, 20.0, 20.0, 20.0, 20.0], true);
        let log = run_detector(&ds, &pairings(), &pair_params(example_params()), 30.0).unwrap();
        assert_eq!(log.timed_out.len(), 1);
        assert_eq!(log.timed_out[0].op, TransitionOp::On);
        assert!(log.cusum_for("dev", TransitionOp::On).count() == 0);
    }

    #[test]
    fn missing_pair_parameters_refuse_to_run() {
        let ds = op_dataset(&[20.0], false);
        let mut params = PairParams::new();
        params.insert(("dev".to_string(), TransitionOp::On), example_params());
        assert!(matches!(
            run_detector(&ds, &pairings(), &params, 120.0),
            Err(DetectError::ConfigError(_))
        ));
    }

    #[test]
    fn eventless_record_yields_an_empty_log() {
        let ds = Dataset::new(
            1.0,
            0,
            vec![
                TimeSeries::new("dev", ChannelKind::Actuator, "", vec![state_code::OFF; 50]),
                TimeSeries::new("flow", ChannelKind::Sensor, "", vec![0.0; 50]),
            ],
            "synthetic",
        )
        .unwrap();
        let log = run_detector(&ds, &pairings(), &pair_params(example_params()), 120.0).unwrap();
        assert_eq!(log.total_alarms(), 0);
        assert_eq!(log.transitions_checked, 0);
    }

    /// Transition times of one (actuator, op) stream extracted from a run.
    fn times_for(
        ds: &Dataset,
        actuator: &str,
        sensor: &str,
        mx: f64,
        op: TransitionOp,
    ) -> Vec<f64> {
        let th = SensorThresholds::from_extrema(mx, 0.0).unwrap();
        extract_transitions(ds, actuator, sensor, &th, 120.0)
            .unwrap()
            .into_iter()
            .filter(|e| e.status == TransitionStatus::Complete && e.op == op)
            .filter_map(|e| e.transition_time_s)
            .collect()
    }

    fn plant_pairings() -> Vec<Pairing> {
        vec![
            Pairing {
                actuator: "mv1".to_string(),
                sensor: "fit1".to_string(),
                thresholds: SensorThresholds::from_extrema(2.4, 0.0).unwrap(),
            },
            Pairing {
                actuator: "p1".to_string(),
                sensor: "fit2".to_string(),
                thresholds: SensorThresholds::from_extrema(2.35, 0.0).unwrap(),
            },
        ]
    }

    fn tune_on_run(ds: &Dataset) -> PairParams {
        let mut params = PairParams::new();
        for (act, sen, mx) in [("mv1", "fit1", 2.4), ("p1", "fit2", 2.35)] {
            for op in [TransitionOp::On, TransitionOp::Off] {
                let times = times_for(ds, act, sen, mx, op);
                let p = tune_thresholds(&times, DEFAULT_MAX_FAR).unwrap();
                params.insert((act.to_string(), op), p);
            }
        }
        params
    }

    #[test]
    fn clean_plant_traffic_stays_under_the_alarm_budget() {
        let scn = Scenario::fast_cycle();
        let (train, _) = plantsim::simulate(&scn, 60_000.0, 101).unwrap();
        let params = tune_on_run(&train);
        let (eval, _) = plantsim::simulate(&scn, 60_000.0, 202).unwrap();
        let log = run_detector(&eval, &plant_pairings(), &params, 120.0).unwrap();
        assert!(log.incomplete.is_empty() && log.timed_out.is_empty());
        let rate = log.cusum.len() as f64 / log.transitions_checked as f64;
        assert!(
            rate <= 0.04,
            "{} alarms over {} transitions",
            log.cusum.len(),
            log.transitions_checked
        );
    }

    #[test]
    fn toggle_attack_is_reported_against_ground_truth() {
        let scn = Scenario::fast_cycle();
        let (train, _) = plantsim::simulate(&scn, 60_000.0, 101).unwrap();
        let params = tune_on_run(&train);

        let mut attacked = Scenario::fast_cycle();
        attacked.attacks.push(AttackSpec {
            attack: AttackType::C1,
            targets: vec!["mv1".to_string()],
            start_idx: 2000,
            duration: 80,
            params: AttackParams::TogglePeriod(3),
        });
        let (eval, truth) = plantsim::simulate(&attacked, 8000.0, 77).unwrap();
        let log = run_detector(&eval, &plant_pairings(), &params, 120.0).unwrap();
        assert!(
            log.incomplete.iter().any(|f| (2000..2080 + 120).contains(&f.start_idx)),
            "expected an incomplete-operation alarm in the toggle window"
        );
        let rows = detection_report(&log, &truth, 120);
        let c1 = rows.iter().find(|r| r.attack == AttackType::C1).unwrap();
        assert_eq!(c1.performed, 1);
        assert_eq!(c1.detected, 1);
        assert_eq!(c1.overall_rate_pct, 100.0);
        assert!(c1.incomplete_rate_pct > 0.0);
    }

    #[test]
    fn report_is_empty_without_attacks_and_skips_no_ops() {
        let log = AlarmLog::default();
        let scn = Scenario::fast_cycle();
        let (_, truth) = plantsim::simulate(&scn, 300.0, 1).unwrap();
        assert!(detection_report(&log, &truth, 120).is_empty());

        let mut scn = Scenario::fast_cycle();
        scn.attacks.push(AttackSpec {
            attack: AttackType::B1,
            targets: vec!["mv1".to_string()],
            start_idx: 50,
            duration: 20,
            params: AttackParams::Command(1.0), // mv1 is already closed
        });
        let (_, truth) = plantsim::simulate(&scn, 300.0, 1).unwrap();
        let rows = detection_report(&log, &truth, 120);
        let b1 = &rows[0];
        assert_eq!(b1.no_op, 1);
        assert_eq!(b1.performed, 0);
        assert_eq!(b1.overall_rate_pct, 0.0);
    }

    #[test]
    fn alarm_and_detection_exports_are_parseable() {
        let ds = op_dataset(&[20.0, 20.0, 20.0, 20.0, 26.0], false);
        let log = run_detector(&ds, &pairings(), &pair_params(example_params()), 120.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let alarms = dir.path().join("alarms.csv");
        export_alarms_csv(&alarms, &log).unwrap();
        let text = std::fs::read_to_string(&alarms).unwrap();
        assert_eq!(text.lines().count(), 1 + log.total_alarms());
        assert!(text.lines().nth(1).unwrap().starts_with("cusum,dev,On,5,Positive,0,"));

        let mut scn = Scenario::fast_cycle();
        scn.attacks.push(AttackSpec {
            attack: AttackType::A1,
            targets: vec!["fit1".to_string()],
            start_idx: 100,
            duration: 50,
            params: AttackParams::SpoofValue(0.0),
        });
        let (_, truth) = plantsim::simulate(&scn, 400.0, 5).unwrap();
        let rows = detection_report(&log, &truth, 120);
        let table = dir.path().join("detection.csv");
        export_detection_csv(&table, &rows).unwrap();
        assert_eq!(std::fs::read_to_string(&table).unwrap().lines().count(), 1 + rows.len());
        let rendered = detection_table_text(&rows);
        assert!(rendered.contains("A1"));
    }
}
