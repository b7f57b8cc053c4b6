//! Data-driven identification of [`StateSpaceModel`]s from recorded
//! input/output channels.
//!
//! Pipeline:
//!
//! 1. estimate impulse-response (Markov) parameters `H_0..H_q` by ridge
//!    least squares on the truncated convolution `y[k] ~ sum_i H_i u[k-i]`;
//! 2. stack `H_1..H_q` into a block Hankel matrix and SVD-truncate it to the
//!    requested order;
//! 3. read `A`, `B`, `C` off the shifted Hankel factorisation;
//! 4. take per-output noise levels from the one-step residuals of step 1.
//!
//! The realisation is only defined up to a similarity transform; callers
//! should judge it by predicted-output error ([`validate`]), not by matrix
//! entries.
//!
//! Plants with near-integrating modes (pole magnitudes within ~1/q of 1)
//! have memory far beyond any affordable truncation depth. For those,
//! [`IdentConfig::difference`] regresses on first-differenced data — the
//! Markov parameters of an LTI plant are unchanged, but the unmodelled tail
//! of an integrator becomes bounded instead of a random walk.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::lti::{kf_step, steady_state_gain, step, KalmanGain, LtiError, StateSpaceModel};
use crate::timeseries::{Dataset, TimeSeriesError};

#[derive(Debug, Error)]
pub enum SysIdError {
    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("Hankel matrix has numerical rank {achievable}, below requested order {requested}")]
    RankDeficient { achievable: usize, requested: usize },
    #[error("bad identification config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Channel(#[from] TimeSeriesError),
    #[error(transparent)]
    Lti(#[from] LtiError),
}

/// Identification settings.
#[derive(Debug, Clone)]
pub struct IdentConfig {
    /// Model order (state count) to realise.
    pub order: usize,
    /// Convolution truncation depth `q`; must exceed the plant's memory for
    /// an accurate fit. Must be >= `order`.
    pub horizon: usize,
    /// Ridge regularisation added to the normal equations.
    pub ridge: f64,
    /// Regress on first differences of the channels (see module docs).
    pub difference: bool,
}

impl IdentConfig {
    pub fn with_order(order: usize) -> Self {
        IdentConfig { order, horizon: 20, ridge: 1e-8, difference: false }
    }
}

/// Relative singular-value cutoff used for the numerical rank.
const RANK_TOL: f64 = 1e-10;

/// Per-output fit quality. `best_fit_pct = 100 (1 - nrmse)`.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub outputs: Vec<String>,
    pub nrmse: Vec<f64>,
    pub best_fit_pct: Vec<f64>,
}

impl std::fmt::Display for FitReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for i in 0..self.outputs.len() {
            writeln!(
                f,
                "{}: nrmse {:.6}, fit {:.2}%",
                self.outputs[i], self.nrmse[i], self.best_fit_pct[i]
            )?;
        }
        Ok(())
    }
}

fn channel_matrix(ds: &Dataset, names: &[&str]) -> Result<DMatrix<f64>, SysIdError> {
    let n = ds.len();
    let mut m = DMatrix::zeros(names.len(), n);
    for (r, name) in names.iter().enumerate() {
        let vals = ds.values(name)?;
        for (k, v) in vals.iter().enumerate() {
            m[(r, k)] = *v;
        }
    }
    Ok(m)
}

fn first_difference(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, n) = m.shape();
    let mut d = DMatrix::zeros(rows, n - 1);
    for r in 0..rows {
        for k in 1..n {
            d[(r, k - 1)] = m[(r, k)] - m[(r, k - 1)];
        }
    }
    d
}

/// Fits a state-space model of `cfg.order` states to the named channels.
///
/// Constant input channels cannot excite the plant; they are tolerated (the
/// regression still solves under ridge) but logged, since the realisation is
/// meaningless for that input.
pub fn identify(
    ds: &Dataset,
    inputs: &[&str],
    outputs: &[&str],
    cfg: &IdentConfig,
) -> Result<StateSpaceModel, SysIdError> {
    let p = inputs.len();
    let m_out = outputs.len();
    if cfg.order == 0 {
        return Err(SysIdError::BadConfig("order must be >= 1".into()));
    }
    if cfg.order > cfg.horizon {
        return Err(SysIdError::BadConfig(format!(
            "order {} exceeds horizon {}",
            cfg.order, cfg.horizon
        )));
    }
    if cfg.horizon * m_out < cfg.order {
        return Err(SysIdError::BadConfig(format!(
            "horizon {} x {} outputs cannot span order {}",
            cfg.horizon, m_out, cfg.order
        )));
    }
    if cfg.ridge < 0.0 {
        return Err(SysIdError::BadConfig("ridge must be >= 0".into()));
    }
    let q = cfg.horizon.max(2);
    let needed = (p + 1) * q + 10;
    let effective = if cfg.difference { ds.len().saturating_sub(1) } else { ds.len() };
    if effective < needed {
        return Err(SysIdError::InsufficientData { needed, got: effective });
    }
    let mut u = channel_matrix(ds, inputs)?;
    let mut y = channel_matrix(ds, outputs)?;
    for (r, name) in inputs.iter().enumerate() {
        let first = u[(r, 0)];
        if (0..u.ncols()).all(|k| u[(r, k)] == first) {
            log::warn!("input channel {name} is constant; it does not excite the plant");
        }
    }
    if cfg.difference {
        u = first_difference(&u);
        y = first_difference(&y);
    }
    let n = u.ncols();

    // Regression y[k] = Theta [u[k]; u[k-1]; ...; u[k-q]] over k in [q, n).
    let d = p * (q + 1);
    let cols = n - q;
    let mut x = DMatrix::zeros(d, cols);
    let mut t = DMatrix::zeros(m_out, cols);
    for k in q..n {
        let col = k - q;
        for i in 0..=q {
            for r in 0..p {
                x[(i * p + r, col)] = u[(r, k - i)];
            }
        }
        for r in 0..m_out {
            t[(r, col)] = y[(r, k)];
        }
    }
    let gram = &x * x.transpose() + DMatrix::identity(d, d) * cfg.ridge;
    let chol = gram
        .cholesky()
        .ok_or(SysIdError::RankDeficient { achievable: 0, requested: cfg.order })?;
    // Theta = T X' G^-1  <=>  G Theta' = X T'
    let theta_t = chol.solve(&(&x * t.transpose()));
    let theta = theta_t.transpose();

    // Markov parameters; H_0 (direct feedthrough) is fitted but unused since
    // the model class has none.
    let markov: Vec<DMatrix<f64>> =
        (0..=q).map(|i| theta.columns(i * p, p).into_owned()).collect();

    // Block Hankel of H_1.. and its one-step shift.
    let rows = q / 2;
    let colsb = q / 2;
    let mut h0 = DMatrix::zeros(rows * m_out, colsb * p);
    let mut h1 = DMatrix::zeros(rows * m_out, colsb * p);
    for i in 0..rows {
        for j in 0..colsb {
            h0.view_mut((i * m_out, j * p), (m_out, p)).copy_from(&markov[i + j + 1]);
            h1.view_mut((i * m_out, j * p), (m_out, p)).copy_from(&markov[i + j + 2]);
        }
    }

    let svd = h0.svd(true, true);
    let u_full = svd.u.as_ref().expect("svd requested u");
    let vt_full = svd.v_t.as_ref().expect("svd requested v_t");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let smax = svd.singular_values[idx[0]];
    let rank = if smax == 0.0 {
        0
    } else {
        idx.iter().filter(|&&i| svd.singular_values[i] > RANK_TOL * smax).count()
    };
    if rank < cfg.order {
        return Err(SysIdError::RankDeficient { achievable: rank, requested: cfg.order });
    }

    let nn = cfg.order;
    let mut u_n = DMatrix::zeros(u_full.nrows(), nn);
    let mut v_n = DMatrix::zeros(vt_full.ncols(), nn);
    let mut sqrt_s = DVector::zeros(nn);
    for (j, &i) in idx.iter().take(nn).enumerate() {
        u_n.set_column(j, &u_full.column(i));
        v_n.set_column(j, &vt_full.row(i).transpose());
        sqrt_s[j] = svd.singular_values[i].sqrt();
    }
    let sqrt_s_inv = DVector::from_iterator(nn, sqrt_s.iter().map(|s| 1.0 / s));

    // A = S^-1/2 U' H1 V S^-1/2 ; B = first p cols of S^1/2 V' ; C = first
    // m rows of U S^1/2.
    let mut a = u_n.transpose() * &h1 * &v_n;
    for i in 0..nn {
        for j in 0..nn {
            a[(i, j)] *= sqrt_s_inv[i] * sqrt_s_inv[j];
        }
    }
    let mut b = DMatrix::zeros(nn, p);
    for i in 0..nn {
        for j in 0..p {
            b[(i, j)] = sqrt_s[i] * v_n[(j, i)];
        }
    }
    let mut c = DMatrix::zeros(m_out, nn);
    for i in 0..m_out {
        for j in 0..nn {
            c[(i, j)] = u_n[(i, j)] * sqrt_s[j];
        }
    }

    // Noise levels from the one-step residuals of the convolution stage.
    // Differencing a signal with i.i.d. sensor noise doubles the noise
    // variance, so undo the sqrt(2).
    let resid = &t - &theta * &x;
    let mut sensor_std = DVector::zeros(m_out);
    for r in 0..m_out {
        let row = resid.row(r);
        let mean = row.sum() / cols as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (cols as f64 - 1.0);
        sensor_std[r] = if cfg.difference { (var / 2.0).sqrt() } else { var.sqrt() };
    }

    Ok(StateSpaceModel::new(a, b, c, DVector::zeros(nn), sensor_std)?)
}

/// One-step output predictor gain for an identified model.
///
/// Identified models carry zero process noise (the convolution stage cannot
/// separate it from sensor noise), so their own steady-state gain degenerates
/// to zero correction. This injects an assumed per-state disturbance level
/// and solves for the gain; the model's estimated sensor stds supply the
/// measurement weighting and must be nonzero.
pub fn prediction_gain(
    model: &StateSpaceModel,
    assumed_process_std: f64,
) -> Result<KalmanGain, SysIdError> {
    let n = model.n_states();
    let q = DMatrix::identity(n, n) * assumed_process_std.powi(2);
    let r = DMatrix::from_diagonal(&model.sensor_noise_std().map(|s| s * s));
    Ok(steady_state_gain(model, &q, &r)?)
}

/// Rolls the model over the dataset (open loop from rest when `gain` is
/// `None`, estimator-corrected otherwise) and scores each output with
/// mean-normalised RMS error.
pub fn validate(
    model: &StateSpaceModel,
    ds: &Dataset,
    inputs: &[&str],
    outputs: &[&str],
    gain: Option<&KalmanGain>,
) -> Result<FitReport, SysIdError> {
    let pred = predict_outputs(model, ds, inputs, outputs, gain)?;
    let y = channel_matrix(ds, outputs)?;
    score(&y, &pred, outputs, 0)
}

/// As [`validate`] but scoring only the trailing `holdout_fraction` of the
/// record; the rollout still starts from rest at sample 0 so the state is
/// warmed up when scoring begins.
pub fn validate_holdout(
    model: &StateSpaceModel,
    ds: &Dataset,
    inputs: &[&str],
    outputs: &[&str],
    gain: Option<&KalmanGain>,
    holdout_fraction: f64,
) -> Result<FitReport, SysIdError> {
    let pred = predict_outputs(model, ds, inputs, outputs, gain)?;
    let y = channel_matrix(ds, outputs)?;
    let from = ((1.0 - holdout_fraction) * ds.len() as f64).floor() as usize;
    score(&y, &pred, outputs, from.min(ds.len().saturating_sub(2)))
}

/// One-step/open-loop predictions for the named outputs.
pub fn predict_outputs(
    model: &StateSpaceModel,
    ds: &Dataset,
    inputs: &[&str],
    outputs: &[&str],
    gain: Option<&KalmanGain>,
) -> Result<DMatrix<f64>, SysIdError> {
    let u = channel_matrix(ds, inputs)?;
    let y = channel_matrix(ds, outputs)?;
    let n = ds.len();
    let mut pred = DMatrix::zeros(outputs.len(), n);
    let mut xs = DVector::zeros(model.n_states());
    for k in 0..n {
        let uk = u.column(k).into_owned();
        let (x_next, y_hat) = match gain {
            None => step(model, &xs, &uk, None)?,
            Some(g) => kf_step(model, g, &xs, &uk, &y.column(k).into_owned())?,
        };
        pred.set_column(k, &y_hat);
        xs = x_next;
    }
    Ok(pred)
}

fn score(
    y: &DMatrix<f64>,
    pred: &DMatrix<f64>,
    outputs: &[&str],
    from: usize,
) -> Result<FitReport, SysIdError> {
    let n = y.ncols();
    let mut nrmse = Vec::with_capacity(outputs.len());
    let mut fit = Vec::with_capacity(outputs.len());
    for r in 0..outputs.len() {
        let mean = (from..n).map(|k| y[(r, k)]).sum::<f64>() / (n - from) as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for k in from..n {
            num += (y[(r, k)] - pred[(r, k)]).powi(2);
            den += (y[(r, k)] - mean).powi(2);
        }
        let e = if den > 0.0 {
            (num / den).sqrt()
        } else if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        nrmse.push(e);
        fit.push(100.0 * (1.0 - e));
    }
    Ok(FitReport { outputs: outputs.iter().map(|s| s.to_string()).collect(), nrmse, best_fit_pct: fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::fixtures::four_state_plant;
    use crate::rng::chacha;
    use crate::timeseries::{ChannelKind, TimeSeries};
    use rand::Rng;

    /// Simulates `model` under the given input rows and packages everything
    /// as a dataset with channels u0.., y0..
    fn make_dataset(
        model: &StateSpaceModel,
        inputs: &DMatrix<f64>,
        noise_seed: Option<u64>,
    ) -> Dataset {
        let n = inputs.ncols();
        let mut rng = noise_seed.map(chacha);
        let mut x = DVector::zeros(model.n_states());
        let mut ys = DMatrix::zeros(model.n_outputs(), n);
        for k in 0..n {
            let u = inputs.column(k).into_owned();
            let (x_next, y) = step(model, &x, &u, rng.as_mut()).unwrap();
            ys.set_column(k, &y);
            x = x_next;
        }
        let mut channels = Vec::new();
        for r in 0..model.n_inputs() {
            let vals = (0..n).map(|k| inputs[(r, k)]).collect();
            channels.push(TimeSeries::new(&format!("u{r}"), ChannelKind::Actuator, "", vals));
        }
        for r in 0..model.n_outputs() {
            let vals = (0..n).map(|k| ys[(r, k)]).collect();
            channels.push(TimeSeries::new(&format!("y{r}"), ChannelKind::Sensor, "", vals));
        }
        Dataset::new(1.0, 0, channels, "simulated").unwrap()
    }

    /// Seeded switching input: holds a level for a few samples, then jumps.
    fn prbs(p: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = chacha(seed);
        let mut m = DMatrix::zeros(p, n);
        let mut level = vec![0.0; p];
        for k in 0..n {
            for r in 0..p {
                if k % (5 + 3 * r) == 0 {
                    level[r] = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                }
                m[(r, k)] = level[r];
            }
        }
        m
    }

    fn two_state_model() -> StateSpaceModel {
        StateSpaceModel::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.4]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.3]),
            DVector::zeros(2),
            DVector::zeros(1),
        )
        .unwrap()
    }

    #[test]
    fn recovers_two_state_plant_to_numerical_precision() {
        let truth = two_state_model();
        let ds = make_dataset(&truth, &prbs(1, 600, 11), None);
        let cfg = IdentConfig { order: 2, horizon: 40, ridge: 1e-10, difference: false };
        let model = identify(&ds, &["u0"], &["y0"], &cfg).unwrap();
        let report = validate_holdout(&model, &ds, &["u0"], &["y0"], None, 0.3).unwrap();
        assert!(report.nrmse[0] < 1e-6, "nrmse {}", report.nrmse[0]);
        assert!(report.best_fit_pct[0] > 99.999);
    }

    #[test]
    fn identified_behaviour_is_similarity_invariant() {
        let truth = two_state_model();
        let t = DMatrix::from_row_slice(2, 2, &[2.0, 0.7, -0.3, 1.4]);
        let t_inv = t.clone().try_inverse().unwrap();
        let transformed = StateSpaceModel::new(
            &t * truth.a() * &t_inv,
            &t * truth.b(),
            truth.c() * &t_inv,
            DVector::zeros(2),
            DVector::zeros(1),
        )
        .unwrap();

        let inputs = prbs(1, 600, 12);
        let cfg = IdentConfig { order: 2, horizon: 40, ridge: 1e-10, difference: false };
        let ds_a = make_dataset(&truth, &inputs, None);
        let ds_b = make_dataset(&transformed, &inputs, None);
        let m_a = identify(&ds_a, &["u0"], &["y0"], &cfg).unwrap();
        let m_b = identify(&ds_b, &["u0"], &["y0"], &cfg).unwrap();
        // Cross-validate: each identified model must reproduce the other
        // record, since the two plants are input-output identical.
        let r_ab = validate(&m_a, &ds_b, &["u0"], &["y0"], None).unwrap();
        let r_ba = validate(&m_b, &ds_a, &["u0"], &["y0"], None).unwrap();
        assert!(r_ab.nrmse[0] < 1e-8, "nrmse {}", r_ab.nrmse[0]);
        assert!(r_ba.nrmse[0] < 1e-8, "nrmse {}", r_ba.nrmse[0]);
    }

    #[test]
    fn self_rollout_scores_near_zero_error() {
        let truth = two_state_model();
        let ds = make_dataset(&truth, &prbs(1, 300, 16), None);
        let report = validate(&truth, &ds, &["u0"], &["y0"], None).unwrap();
        assert!(report.nrmse[0] < 1e-9, "nrmse {}", report.nrmse[0]);
    }

    #[test]
    fn zero_model_scores_nrmse_one_on_centered_data() {
        let zero = StateSpaceModel::new(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
            DVector::zeros(1),
        )
        .unwrap();
        // Output with exactly zero mean, so the mean-centred normaliser
        // equals the raw signal energy.
        let y: Vec<f64> = vec![1.0, -1.0, 2.0, -2.0, 3.0, -3.0, 0.5, -0.5];
        let u = vec![0.0; y.len()];
        let ds = Dataset::new(
            1.0,
            0,
            vec![
                TimeSeries::new("u0", ChannelKind::Actuator, "", u),
                TimeSeries::new("y0", ChannelKind::Sensor, "", y),
            ],
            "synthetic",
        )
        .unwrap();
        let report = validate(&zero, &ds, &["u0"], &["y0"], None).unwrap();
        assert!((report.nrmse[0] - 1.0).abs() < 1e-12);
        assert!(report.best_fit_pct[0].abs() < 1e-9);
    }

    fn four_mode_truth() -> StateSpaceModel {
        StateSpaceModel::new(
            DMatrix::from_row_slice(
                4,
                4,
                &[0.8, 0.3, 0.0, 0.0, -0.3, 0.6, 0.0, 0.0, 0.0, 0.0, 0.45, 0.0, 0.0, 0.0, 0.0, -0.2],
            ),
            DMatrix::from_row_slice(4, 1, &[1.0, 0.4, 0.9, 0.7]),
            DMatrix::from_row_slice(1, 4, &[1.0, 0.2, 0.8, 0.5]),
            DVector::zeros(4),
            DVector::zeros(1),
        )
        .unwrap()
    }

    #[test]
    fn training_error_never_degrades_with_order() {
        // Truth has 4 well-separated modes; fitting more states must not
        // hurt the training fit beyond numerical noise.
        let ds = make_dataset(&four_mode_truth(), &prbs(1, 900, 13), Some(5));
        let mut last = f64::INFINITY;
        for order in 1..=6 {
            let cfg = IdentConfig { order, horizon: 50, ridge: 1e-10, difference: false };
            let model = identify(&ds, &["u0"], &["y0"], &cfg).unwrap();
            let nrmse = validate(&model, &ds, &["u0"], &["y0"], None).unwrap().nrmse[0];
            assert!(nrmse <= last + 1e-9, "order {order}: {nrmse} vs previous {last}");
            last = nrmse;
        }
    }

    #[test]
    fn underfit_order_is_strictly_worse() {
        let ds = make_dataset(&four_mode_truth(), &prbs(1, 900, 17), None);
        let fit = |order| {
            let cfg = IdentConfig { order, horizon: 50, ridge: 1e-10, difference: false };
            let model = identify(&ds, &["u0"], &["y0"], &cfg).unwrap();
            validate(&model, &ds, &["u0"], &["y0"], None).unwrap().nrmse[0]
        };
        let (low, matched) = (fit(2), fit(4));
        assert!(
            low > matched && low > 1e-4,
            "expected order 2 ({low}) to lose clearly to order 4 ({matched})"
        );
    }

    #[test]
    fn short_records_are_rejected() {
        let truth = two_state_model();
        let ds = make_dataset(&truth, &prbs(1, 30, 14), None);
        let cfg = IdentConfig::with_order(2);
        match identify(&ds, &["u0"], &["y0"], &cfg) {
            Err(SysIdError::InsufficientData { needed, got }) => {
                assert_eq!(needed, 2 * 20 + 10);
                assert_eq!(got, 30);
            }
            other => panic!("expected InsufficientData, got {other:?}"),
        }
    }

    #[test]
    fn bad_configs_are_rejected() {
        let ds = make_dataset(&two_state_model(), &prbs(1, 300, 18), None);
        for cfg in [
            IdentConfig { order: 0, horizon: 20, ridge: 1e-8, difference: false },
            IdentConfig { order: 25, horizon: 20, ridge: 1e-8, difference: false },
            IdentConfig { order: 2, horizon: 20, ridge: -1.0, difference: false },
        ] {
            assert!(
                matches!(identify(&ds, &["u0"], &["y0"], &cfg), Err(SysIdError::BadConfig(_))),
                "{cfg:?} should be rejected"
            );
        }
    }

    #[test]
    fn all_zero_channels_are_rank_deficient() {
        let n = 200;
        let ds = Dataset::new(
            1.0,
            0,
            vec![
                TimeSeries::new("u0", ChannelKind::Actuator, "", vec![0.0; n]),
                TimeSeries::new("y0", ChannelKind::Sensor, "", vec![0.0; n]),
            ],
            "synthetic",
        )
        .unwrap();
        let cfg = IdentConfig::with_order(3);
        match identify(&ds, &["u0"], &["y0"], &cfg) {
            Err(SysIdError::RankDeficient { achievable, requested }) => {
                assert_eq!(achievable, 0);
                assert_eq!(requested, 3);
            }
            other => panic!("expected RankDeficient, got {other:?}"),
        }
    }

    #[test]
    fn noise_free_low_order_truth_cannot_fill_high_order() {
        let truth = two_state_model();
        let ds = make_dataset(&truth, &prbs(1, 600, 15), None);
        let cfg = IdentConfig { order: 10, horizon: 30, ridge: 0.0, difference: false };
        match identify(&ds, &["u0"], &["y0"], &cfg) {
            Err(SysIdError::RankDeficient { achievable, .. }) => {
                assert!(achievable < 10, "achievable {achievable}")
            }
            other => panic!("expected RankDeficient, got {other:?}"),
        }
    }

    /// 63%-of-plateau crossing of the model's own step response: the model's
    /// implied transition time constant, in samples.
    fn step_response_tc(model: &StateSpaceModel) -> usize {
        let mut inputs = DMatrix::zeros(model.n_inputs(), 200);
        for k in 100..200 {
            inputs[(0, k)] = 1.0;
        }
        let ds = make_dataset(model, &inputs, None);
        let y: Vec<f64> = ds.values("y0").unwrap().to_vec();
        let plateau = y[140] - y[99];
        (100..200)
            .find(|&k| (y[k] - y[99]) / plateau >= 0.632)
            .expect("step response crosses 63% of plateau")
    }

    #[test]
    fn fixture_identification_tracks_transitions_at_both_orders() {
        // Record from the 4-state fixture with its noise levels: a fast
        // switching segment to excite the plant, then sparse steps that let
        // transitions develop. A matched-order and an over-parameterised fit
        // must both (a) recover the sensor noise levels, (b) forecast
        // flow-sensor excursions through the sparse transitions, and
        // (c) agree on the implied transition time constant within 2 samples.
        //
        // The level output integrates an unobservable process-noise walk
        // (output gain ~3e4), so its absolute long-horizon value is not
        // predictable from inputs; tracking is asserted on the flow channel
        // that transition timing is extracted from.
        let truth = four_state_plant();
        let (n_train, n_val): (usize, usize) = (12_000, 3_600);
        let n = n_train + n_val;
        let mut inputs = prbs(3, n, 19);
        let switch = [300usize, 430, 370];
        for k in n_train..n {
            for r in 0..3 {
                inputs[(r, k)] = if ((k - n_train) / switch[r]) % 2 == 1 { 1.0 } else { -1.0 };
            }
        }
        let ds = make_dataset(&truth, &inputs, Some(21));
        let train = ds.window(0, n_train).unwrap();
        let input_names: [&str; 3] = ["u0", "u1", "u2"];
        let output_names: [&str; 2] = ["y0", "y1"];

        let mut tcs = Vec::new();
        for order in [4usize, 10] {
            let cfg = IdentConfig { order, horizon: 80, ridge: 1e-8, difference: true };
            let model = identify(&train, &input_names, &output_names, &cfg).unwrap();

            let est = model.sensor_noise_std();
            for (j, truth_std) in truth.sensor_noise_std().iter().enumerate() {
                assert!(
                    est[j] > 0.5 * truth_std && est[j] < 2.0 * truth_std,
                    "order {order}: sensor std {j} estimated {} vs true {}",
                    est[j],
                    truth_std
                );
            }

            // Anchor the state with the one-step predictor, then forecast
            // each sparse transition open loop and score the flow-channel
            // excursion against the measurement.
            let gain = prediction_gain(&model, 1e-2).unwrap();
            let u = channel_matrix(&ds, &input_names).unwrap();
            let y = channel_matrix(&ds, &output_names).unwrap();
            let anchor_ks: Vec<usize> =
                (1..12).map(|j| n_train + j * 300 - 40).filter(|k| k + 190 < n).collect();
            let mut xs = DVector::zeros(order);
            let mut anchors = Vec::new();
            for k in 0..n {
                if anchor_ks.contains(&k) {
                    anchors.push(xs.clone());
                }
                let (x_next, _) = kf_step(
                    &model,
                    &gain,
                    &xs,
                    &u.column(k).into_owned(),
                    &y.column(k).into_owned(),
                )
                .unwrap();
                xs = x_next;
            }
            let (mut num, mut den) = (0.0, 0.0);
            for (k0, anchor) in anchor_ks.iter().zip(&anchors) {
                let mut xf = anchor.clone();
                let y_hat0 = model.c() * &xf;
                for j in 1..=190usize {
                    let (x_next, y_hat) =
                        step(&model, &xf, &u.column(k0 + j - 1).into_owned(), None).unwrap();
                    num += ((y[(0, k0 + j)] - y[(0, *k0)]) - (y_hat[0] - y_hat0[0])).powi(2);
                    den += (y[(0, k0 + j)] - y[(0, *k0)]).powi(2);
                    xf = x_next;
                }
            }
            let window_nrmse = (num / den).sqrt();
            assert!(window_nrmse < 0.35, "order {order}: transition tracking nrmse {window_nrmse}");

            tcs.push(step_response_tc(&model) as i64);
        }
        assert!((tcs[0] - tcs[1]).abs() < 2, "transition time constants differ: {tcs:?}");
    }
}
