//! Watermarking support: delay budgets bounded by time-to-critical-state,
//! uniform grid delays, replay detection with the two-sample K-S test,
//! fingerprint-uniqueness entropy analysis, and a randomness battery over
//! the generated delay bits.

pub mod entropy;
pub mod nist;
pub mod special;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use entropy::{
    binned_mi, entropy_analysis, export_entropy_csv, normalized_entropy, EntropyReport,
    DEFAULT_BINS,
};
pub use nist::{export_pvalues_csv, nist_subset, pvalue_table_text, NistTest, TestOutcome};
pub use special::{erfc, gamma_q, ln_gamma};

use crate::fingerprint::{SensorThresholds, TransitionOp};
use crate::plantsim::{TankParams, WatermarkPolicy};
use crate::timeseries::{Dataset, TimeSeriesError};

#[derive(Debug, Error)]
pub enum WatermarkError {
    #[error("invalid critical-state mode: {0}")]
    InvalidMode(String),
    #[error("delay bound {delay_max_s} s exceeds the safe budget {allowed_s} s")]
    UnsafeDelay { delay_max_s: f64, allowed_s: f64 },
    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("bad input: {0}")]
    BadInput(String),
    #[error(transparent)]
    Channel(#[from] TimeSeriesError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fraction of the worst-case time-to-critical budget a delay may use.
pub const SAFETY_FRACTION: f64 = 0.5;
/// Default K-S confidence level.
pub const DEFAULT_ALPHA: f64 = 0.05;

// ---------------------------------------------------------------------------
// Time to critical state
// ---------------------------------------------------------------------------

/// One stage's tank limits plus where its level currently sits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageState {
    pub tank: TankParams,
    /// Level near the high setpoint (overflow is the nearby hazard).
    pub near_high: bool,
    /// Level near the low setpoint (underflow is the nearby hazard).
    pub near_low: bool,
}

/// Initial-state description of a two-stage process. The flag combination
/// selects the operating mode (the row of the critical-state table).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalStateConfig {
    pub stage1: StageState,
    pub stage2: StageState,
}

impl CriticalStateConfig {
    /// Mode number, 1 through 8. A stage near both bounds at once or no
    /// stage near any bound is physically impossible.
    pub fn mode(&self) -> Result<u8, WatermarkError> {
        let f = (
            self.stage1.near_high,
            self.stage1.near_low,
            self.stage2.near_high,
            self.stage2.near_low,
        );
        if (f.0 && f.1) || (f.2 && f.3) {
            return Err(WatermarkError::InvalidMode(
                "a stage cannot be near both bounds at once".into(),
            ));
        }
        Ok(match f {
            (false, false, false, true) => 1,
            (false, false, true, false) => 2,
            (false, true, false, false) => 3,
            (false, true, false, true) => 4,
            (false, true, true, false) => 5,
            (true, false, false, false) => 6,
            (true, false, false, true) => 7,
            (true, false, true, false) => 8,
            _ => {
                return Err(WatermarkError::InvalidMode(
                    "no stage is near a critical bound".into(),
                ))
            }
        })
    }
}

/// Either a point value or an interval, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TqBound {
    Point(f64),
    Interval { min: f64, max: f64 },
}

impl TqBound {
    /// Earliest possible arrival at a critical state — the value delay
    /// budgets must respect.
    pub fn worst_case_s(&self) -> f64 {
        match self {
            TqBound::Point(v) => *v,
            TqBound::Interval { min, .. } => *min,
        }
    }
}

/// Worst-case overflow time: full inflow, no outflow.
fn overflow_s(t: &TankParams) -> f64 {
    (t.level_critical_high - t.level_high_sp) / t.max_in_rate
}

/// Worst-case underflow time: full outflow, no inflow.
fn underflow_s(t: &TankParams) -> f64 {
    (t.level_low_sp - t.level_critical_low) / t.max_out_rate
}

/// Time to the nearest critical state for the mode encoded in `cfg`.
/// Single-stage modes are a plain distance/rate quotient under worst-case
/// rates; two-stage modes combine per-stage times as a min/sum interval,
/// except the opposed-hazard mode which is limited by whichever stage
/// fails first.
pub fn time_to_critical(cfg: &CriticalStateConfig) -> Result<TqBound, WatermarkError> {
    for s in [&cfg.stage1, &cfg.stage2] {
        s.tank
            .validate("stage")
            .map_err(|e| WatermarkError::BadInput(e.to_string()))?;
    }
    let t1h = overflow_s(&cfg.stage1.tank);
    let t1l = underflow_s(&cfg.stage1.tank);
    let t2h = overflow_s(&cfg.stage2.tank);
    let t2l = underflow_s(&cfg.stage2.tank);
    Ok(match cfg.mode()? {
        1 => TqBound::Point(t2l),
        2 => TqBound::Point(t2h),
        3 => TqBound::Point(t1l),
        4 => TqBound::Interval { min: t1l.min(t2l), max: t1l + t2l },
        5 => TqBound::Interval { min: t1l.min(t2h), max: t1l + t2h },
        6 => TqBound::Point(t1h),
        7 => TqBound::Point(t1h.min(t2l)),
        8 => TqBound::Interval { min: t1h.min(t2h), max: t1h + t2h },
        _ => unreachable!("mode() covers all rows"),
    })
}

// ---------------------------------------------------------------------------
// Delay generation
// ---------------------------------------------------------------------------

/// One delay, uniform over the policy's grid, after checking the range
/// against the safety fraction of the time-to-critical budget.
pub fn draw_delay(
    policy: &WatermarkPolicy,
    t_q_bound_s: f64,
    rng: &mut impl Rng,
) -> Result<f64, WatermarkError> {
    policy.validate().map_err(|e| WatermarkError::BadInput(e.to_string()))?;
    if !(t_q_bound_s > 0.0) {
        return Err(WatermarkError::BadInput(format!(
            "time-to-critical bound must be positive, got {t_q_bound_s}"
        )));
    }
    let allowed_s = SAFETY_FRACTION * t_q_bound_s;
    if policy.delay_max_s > allowed_s {
        return Err(WatermarkError::UnsafeDelay { delay_max_s: policy.delay_max_s, allowed_s });
    }
    let idx = rng.gen_range(0..policy.choices());
    Ok(policy.delay_min_s + idx as f64 * policy.granularity_s)
}

/// Serializes delays to bits: each draw's index on the policy grid emitted
/// as fixed-width binary, most significant bit first. Only a power-of-two
/// grid size fills the index space and yields unbiased bits.
pub fn delays_to_bits(delays: &[f64], policy: &WatermarkPolicy) -> Result<Vec<u8>, WatermarkError> {
    policy.validate().map_err(|e| WatermarkError::BadInput(e.to_string()))?;
    let choices = policy.choices();
    if choices < 2 {
        return Err(WatermarkError::BadInput(
            "single-point delay grid carries no information".into(),
        ));
    }
    let width = usize::BITS - (choices - 1).leading_zeros();
    if !choices.is_power_of_two() {
        log::warn!("{choices} grid points do not fill {width} bits; the serialized stream is biased");
    }
    let mut bits = Vec::with_capacity(delays.len() * width as usize);
    for &d in delays {
        let rel = (d - policy.delay_min_s) / policy.granularity_s;
        let idx = rel.round();
        if (rel - idx).abs() > 1e-6 || idx < 0.0 || idx as usize >= choices {
            return Err(WatermarkError::BadInput(format!("delay {d} is off the policy grid")));
        }
        let idx = idx as usize;
        for b in (0..width).rev() {
            bits.push(((idx >> b) & 1) as u8);
        }
    }
    Ok(bits)
}

// ---------------------------------------------------------------------------
// Two-sample K-S test and replay detection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KsDecision {
    /// The samples come from visibly different distributions.
    Distinct,
    Indistinct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    /// Largest gap between the two empirical CDFs.
    pub d_stat: f64,
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub critical_value: f64,
    pub decision: KsDecision,
}

impl KsResult {
    /// When the observation should carry a watermark, looking just like the
    /// unwatermarked baseline means the data is replayed.
    pub fn flags_replay(&self) -> bool {
        self.decision == KsDecision::Indistinct
    }
}

const MIN_KS_SAMPLES: usize = 5;

/// Two-sample Kolmogorov-Smirnov test at level `alpha`, with the asymptotic
/// critical value c(α)·√((n+m)/(n·m)), c(α) = √(−ln(α)/2).
pub fn ks_two_sample(a: &[f64], b: &[f64], alpha: f64) -> Result<KsResult, WatermarkError> {
    let (n, m) = (a.len(), b.len());
    if n < MIN_KS_SAMPLES || m < MIN_KS_SAMPLES {
        return Err(WatermarkError::InsufficientData { needed: MIN_KS_SAMPLES, got: n.min(m) });
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(WatermarkError::BadInput(format!("alpha {alpha} outside (0, 1)")));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(WatermarkError::BadInput("non-finite sample".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());

    // Merge scan: at every pooled point, advance past all ties in both
    // samples, then take the ECDF gap.
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    // Whichever sample remains only shrinks the gap back to zero.

    let c = (-0.5 * alpha.ln()).sqrt();
    let critical_value = c * (((n + m) as f64) / ((n * m) as f64)).sqrt();
    Ok(KsResult {
        d_stat: d,
        n,
        m,
        alpha,
        critical_value,
        decision: if d > critical_value { KsDecision::Distinct } else { KsDecision::Indistinct },
    })
}

/// Compares transition times observed now against the unwatermarked
/// baseline. With a watermark active the two must look different; an
/// `Indistinct` verdict (see [`KsResult::flags_replay`]) means the delay is
/// missing from the observations — they are replayed recordings.
pub fn replay_check(
    normal_tc: &[f64],
    observed_tc: &[f64],
    alpha: f64,
) -> Result<KsResult, WatermarkError> {
    ks_two_sample(normal_tc, observed_tc, alpha)
}

/// Transition times measured from the *control trigger* (the level crossing
/// that makes the loop act) to the paired sensor's threshold crossing.
/// Unlike actuator-departure timing this span contains any command delay the
/// watermark injected, which is what replay detection needs to see.
///
/// For `On` the trigger is the level falling to `low_sp` and completion is
/// the sensor reaching its on-threshold; `Off` mirrors both. Triggers re-arm
/// at the opposite setpoint. Episodes that outlast `timeout_s` or the record
/// are dropped.
pub fn trigger_based_transition_times(
    ds: &Dataset,
    level_channel: &str,
    low_sp: f64,
    high_sp: f64,
    sensor: &str,
    thresholds: &SensorThresholds,
    op: TransitionOp,
    timeout_s: f64,
) -> Result<Vec<f64>, WatermarkError> {
    if !(low_sp < high_sp) {
        return Err(WatermarkError::BadInput(format!(
            "setpoints must satisfy low < high, got {low_sp} >= {high_sp}"
        )));
    }
    let level = ds.values(level_channel)?;
    let sen = ds.values(sensor)?;
    let period = ds.sample_period_s();
    let timeout_samples = (timeout_s / period).round() as usize;
    let mut out = Vec::new();
    let mut armed = match op {
        TransitionOp::On => level[0] > low_sp,
        TransitionOp::Off => level[0] < high_sp,
    };
    for k in 0..level.len() {
        let (fired, rearm) = match op {
            TransitionOp::On => (level[k] <= low_sp, level[k] >= high_sp),
            TransitionOp::Off => (level[k] >= high_sp, level[k] <= low_sp),
        };
        if armed && fired {
            armed = false;
            let end = level.len().min(k + timeout_samples + 1);
            let crossed = (k + 1..end).find(|&j| match op {
                TransitionOp::On => sen[j] >= thresholds.t_on,
                TransitionOp::Off => sen[j] <= thresholds.t_off,
            });
            if let Some(j) = crossed {
                out.push((j - k) as f64 * period);
            }
        } else if !armed && rearm {
            armed = true;
        }
    }
    Ok(out)
}
