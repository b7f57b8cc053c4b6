//! Discrete-time linear state-space models and estimator-side residuals.
//!
//! Plant form (period-1 discrete time):
//!
//! ```text
//! x[k+1] = A x[k] + B u[k] + v[k]        v ~ N(0, diag(process_noise_std^2))
//! y[k]   = C x[k] + eta[k]               eta ~ N(0, diag(sensor_noise_std^2))
//! ```
//!
//! Estimator form with gain L:
//!
//! ```text
//! xh[k+1] = A xh[k] + B u[k] + L (y[k] - C xh[k])
//! yh[k]   = C xh[k]
//! ```
//!
//! [`watermark_residual`] runs the estimator with the *delayed* command
//! sequence a watermarking PLC actually executed, against the outputs an
//! attacker reports. With matched inputs the residual is pure noise; a
//! single-step input discrepancy `delta` at step k surfaces exactly as
//! `C B delta` in the residual at step k+1.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Chacha;

#[derive(Debug, Error)]
pub enum LtiError {
    #[error("dimension mismatch: {0}")]
    DimError(String),
    #[error("Riccati iteration did not converge after {iterations} steps (last delta {delta:.3e})")]
    RiccatiDiverged { iterations: usize, delta: f64 },
    #[error("innovation covariance is singular")]
    SingularCov,
}

/// LTI plant with diagonal Gaussian noise. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpaceModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    process_noise_std: DVector<f64>,
    sensor_noise_std: DVector<f64>,
}

impl StateSpaceModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        process_noise_std: DVector<f64>,
        sensor_noise_std: DVector<f64>,
    ) -> Result<Self, LtiError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(LtiError::DimError(format!("A must be square, got {}x{}", n, a.ncols())));
        }
        if b.nrows() != n {
            return Err(LtiError::DimError(format!("B has {} rows, expected {}", b.nrows(), n)));
        }
        if c.ncols() != n {
            return Err(LtiError::DimError(format!("C has {} cols, expected {}", c.ncols(), n)));
        }
        if process_noise_std.len() != n {
            return Err(LtiError::DimError(format!(
                "process noise std has {} entries, expected {}",
                process_noise_std.len(),
                n
            )));
        }
        if sensor_noise_std.len() != c.nrows() {
            return Err(LtiError::DimError(format!(
                "sensor noise std has {} entries, expected {}",
                sensor_noise_std.len(),
                c.nrows()
            )));
        }
        if process_noise_std.iter().chain(sensor_noise_std.iter()).any(|s| *s < 0.0) {
            return Err(LtiError::DimError("noise stds must be >= 0".into()));
        }
        Ok(StateSpaceModel { a, b, c, process_noise_std, sensor_noise_std })
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn process_noise_std(&self) -> &DVector<f64> {
        &self.process_noise_std
    }
    pub fn sensor_noise_std(&self) -> &DVector<f64> {
        &self.sensor_noise_std
    }

    fn check_x(&self, x: &DVector<f64>) -> Result<(), LtiError> {
        if x.len() != self.n_states() {
            return Err(LtiError::DimError(format!(
                "state has {} entries, expected {}",
                x.len(),
                self.n_states()
            )));
        }
        Ok(())
    }

    fn check_u(&self, u: &DVector<f64>) -> Result<(), LtiError> {
        if u.len() != self.n_inputs() {
            return Err(LtiError::DimError(format!(
                "input has {} entries, expected {}",
                u.len(),
                self.n_inputs()
            )));
        }
        Ok(())
    }
}

/// Estimator gain, validated against a model's dimensions on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanGain(DMatrix<f64>);

impl KalmanGain {
    pub fn new(model: &StateSpaceModel, l: DMatrix<f64>) -> Result<Self, LtiError> {
        if l.nrows() != model.n_states() || l.ncols() != model.n_outputs() {
            return Err(LtiError::DimError(format!(
                "gain is {}x{}, expected {}x{}",
                l.nrows(),
                l.ncols(),
                model.n_states(),
                model.n_outputs()
            )));
        }
        Ok(KalmanGain(l))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

fn noise_vec(std: &DVector<f64>, rng: &mut Chacha) -> DVector<f64> {
    DVector::from_iterator(
        std.len(),
        std.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal)),
    )
}

/// Advances the plant one step. Returns `(x_next, y)` where `y` is the output
/// observed at the *current* state. `rng: None` disables both noise terms.
pub fn step(
    model: &StateSpaceModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    rng: Option<&mut Chacha>,
) -> Result<(DVector<f64>, DVector<f64>), LtiError> {
    model.check_x(x)?;
    model.check_u(u)?;
    let mut x_next = &model.a * x + &model.b * u;
    let mut y = &model.c * x;
    if let Some(rng) = rng {
        x_next += noise_vec(&model.process_noise_std, rng);
        y += noise_vec(&model.sensor_noise_std, rng);
    }
    Ok((x_next, y))
}

/// Advances the estimator one step against a measured output. Returns
/// `(x_hat_next, y_hat)` with `y_hat = C x_hat` the pre-update prediction.
pub fn kf_step(
    model: &StateSpaceModel,
    gain: &KalmanGain,
    x_hat: &DVector<f64>,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), LtiError> {
    model.check_x(x_hat)?;
    model.check_u(u)?;
    if y.len() != model.n_outputs() {
        return Err(LtiError::DimError(format!(
            "output has {} entries, expected {}",
            y.len(),
            model.n_outputs()
        )));
    }
    let y_hat = &model.c * x_hat;
    let x_next = &model.a * x_hat + &model.b * u + gain.matrix() * (y - &y_hat);
    Ok((x_next, y_hat))
}

/// Converged Riccati iteration: prediction covariance, innovation covariance
/// and the one-step-ahead predictor gain.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub covariance: DMatrix<f64>,
    pub innovation_cov: DMatrix<f64>,
    pub gain: KalmanGain,
    pub iterations: usize,
}

const RICCATI_TOL: f64 = 1e-9;
const RICCATI_MAX_ITERS: usize = 100_000;

/// Fixed-point iteration of the discrete Riccati recursion
/// `P <- A P A' - A P C' (C P C' + R)^-1 C P A' + Q` from `P = Q`, stopping
/// when the max-abs change drops below 1e-9 (at most 100000 iterations).
pub fn riccati_solve(
    model: &StateSpaceModel,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<RiccatiSolution, LtiError> {
    let n = model.n_states();
    let m = model.n_outputs();
    if q.nrows() != n || q.ncols() != n {
        return Err(LtiError::DimError(format!("Q must be {n}x{n}")));
    }
    if r.nrows() != m || r.ncols() != m {
        return Err(LtiError::DimError(format!("R must be {m}x{m}")));
    }
    let a = &model.a;
    let c = &model.c;
    let mut p = q.clone();
    let mut delta = f64::INFINITY;
    for it in 0..RICCATI_MAX_ITERS {
        let s = c * &p * c.transpose() + r;
        let s_inv = s.clone().try_inverse().ok_or(LtiError::SingularCov)?;
        let l = a * &p * c.transpose() * &s_inv;
        let p_next = a * &p * a.transpose() - &l * c * &p * a.transpose() + q;
        delta = (&p_next - &p).amax();
        p = p_next;
        if delta < RICCATI_TOL {
            let s = c * &p * c.transpose() + r;
            let s_inv = s.clone().try_inverse().ok_or(LtiError::SingularCov)?;
            let l = a * &p * c.transpose() * &s_inv;
            return Ok(RiccatiSolution {
                covariance: p,
                innovation_cov: s,
                gain: KalmanGain(l),
                iterations: it + 1,
            });
        }
    }
    Err(LtiError::RiccatiDiverged { iterations: RICCATI_MAX_ITERS, delta })
}

/// Steady-state one-step-ahead predictor gain for noise covariances Q, R.
pub fn steady_state_gain(
    model: &StateSpaceModel,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<KalmanGain, LtiError> {
    Ok(riccati_solve(model, q, r)?.gain)
}

/// Next output when the plant executes a delayed command `u_delayed`:
/// `y[k+1] = C A x[k] + C v[k] + eta[k+1] + C B u_delayed`.
pub fn delayed_output(
    model: &StateSpaceModel,
    x: &DVector<f64>,
    u_delayed: &DVector<f64>,
    rng: Option<&mut Chacha>,
) -> Result<DVector<f64>, LtiError> {
    let (x_next, _) = step(model, x, u_delayed, None)?;
    let mut y_next = &model.c * x_next;
    if let Some(rng) = rng {
        y_next += &model.c * noise_vec(&model.process_noise_std, rng);
        y_next += noise_vec(&model.sensor_noise_std, rng);
    }
    Ok(y_next)
}

/// Runs the watermark-side estimator (fed the delayed inputs the PLC really
/// issued) against reported outputs, returning the residual sequence
/// `r[k] = y_reported[k] - C xh[k]`.
///
/// All three sequences must have equal length; `x0_estimate` seeds the
/// estimator state.
pub fn watermark_residual(
    model: &StateSpaceModel,
    gain: &KalmanGain,
    reported_inputs: &[DVector<f64>],
    reported_outputs: &[DVector<f64>],
    watermarked_inputs: &[DVector<f64>],
    x0_estimate: &DVector<f64>,
) -> Result<Vec<DVector<f64>>, LtiError> {
    if reported_inputs.len() != reported_outputs.len()
        || reported_inputs.len() != watermarked_inputs.len()
    {
        return Err(LtiError::DimError(format!(
            "sequence lengths differ: inputs {}, outputs {}, watermarked {}",
            reported_inputs.len(),
            reported_outputs.len(),
            watermarked_inputs.len()
        )));
    }
    let mut x_hat = x0_estimate.clone();
    model.check_x(&x_hat)?;
    let mut residuals = Vec::with_capacity(reported_outputs.len());
    for (y, u_wm) in reported_outputs.iter().zip(watermarked_inputs) {
        let (x_next, y_hat) = kf_step(model, gain, &x_hat, u_wm, y)?;
        residuals.push(y - y_hat);
        x_hat = x_next;
    }
    Ok(residuals)
}

/// Test fixtures shared across modules: a 4-state, 3-input, 2-output plant
/// of a raw-water stage (inputs: inlet valve and two pump statuses; outputs:
/// inlet flow and tank level) with a published estimator gain.
pub mod fixtures {
    use super::*;

    /// Inputs `[MV-101, P-101, P-102]`, outputs `[FIT-101, LIT-101]`.
    pub fn four_state_plant() -> StateSpaceModel {
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0000, 0.0008, -0.0003, 0.0031, //
                -0.0026, 0.9782, 0.1173, -0.0037, //
                -0.0057, -0.0614, 0.7645, 0.3523, //
                -0.0091, 0.0030, -0.0417, 0.8197,
            ],
        );
        let b = DMatrix::from_row_slice(
            4,
            3,
            &[
                0.0000, 0.0000, -0.0000, //
                -0.0003, 0.0001, 0.0000, //
                0.0009, -0.0007, 0.0001, //
                -0.0010, 0.0004, 0.0002,
            ],
        );
        let c = DMatrix::from_row_slice(
            2,
            4,
            &[
                0.0018e4, -0.0128e4, -0.0006e4, -0.0001e4, //
                -2.9695e4, -0.0029e4, 0.0002e4, -0.0028e4,
            ],
        );
        // Noise levels are a fixture choice, scaled to the output ranges the
        // C matrix produces.
        let process_noise_std = DVector::from_element(4, 1e-5);
        let sensor_noise_std = DVector::from_vec(vec![0.05, 0.5]);
        StateSpaceModel::new(a, b, c, process_noise_std, sensor_noise_std).unwrap()
    }

    /// Estimator gain published together with the plant matrices.
    pub fn four_state_gain() -> KalmanGain {
        let l = DMatrix::from_row_slice(
            4,
            2,
            &[
                -0.0001, -0.0000, //
                -0.0073, -0.0001, //
                -0.0282, 0.0010, //
                -0.0038, -0.0020,
            ],
        );
        KalmanGain::new(&four_state_plant(), l).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::{four_state_gain, four_state_plant};
    use super::*;
    use crate::rng::chacha;

    fn vec2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    #[test]
    fn identity_dynamics_hold_state_without_noise() {
        let m = StateSpaceModel::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DVector::zeros(2),
        )
        .unwrap();
        let x = vec2(3.5, -1.25);
        let (x_next, y) = step(&m, &x, &DVector::zeros(1), None).unwrap();
        assert_eq!(x_next, x);
        assert_eq!(y, x);
    }

    #[test]
    fn integrator_chain_rollout_matches_hand_arithmetic() {
        // x[k+1] = [[1,1],[0,1]] x[k] from (0,1): x[k] = (k, 1) exactly.
        let m = StateSpaceModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DVector::zeros(2),
        )
        .unwrap();
        let mut x = vec2(0.0, 1.0);
        for k in 0..50 {
            assert_eq!(x, vec2(k as f64, 1.0));
            x = step(&m, &x, &DVector::zeros(1), None).unwrap().0;
        }
        assert_eq!(x, vec2(50.0, 1.0));
    }

    #[test]
    fn step_is_linear_in_state_and_input() {
        let m = four_state_plant();
        let x1 = DVector::from_vec(vec![0.3, -0.7, 1.1, 0.05]);
        let x2 = DVector::from_vec(vec![-1.0, 0.2, 0.4, -0.6]);
        let u1 = DVector::from_vec(vec![1.0, 0.0, 2.0]);
        let u2 = DVector::from_vec(vec![-0.5, 1.0, 0.0]);
        let (xa, ya) = step(&m, &(&x1 + &x2), &(&u1 + &u2), None).unwrap();
        let (xb1, yb1) = step(&m, &x1, &u1, None).unwrap();
        let (xb2, yb2) = step(&m, &x2, &u2, None).unwrap();
        assert!((xa - (xb1 + xb2)).amax() < 1e-12);
        assert!((ya - (yb1 + yb2)).amax() < 1e-9); // outputs are O(1e4)
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let m = four_state_plant();
        let bad_u = DVector::zeros(2);
        assert!(matches!(
            step(&m, &DVector::zeros(4), &bad_u, None),
            Err(LtiError::DimError(_))
        ));
        assert!(matches!(
            StateSpaceModel::new(
                DMatrix::identity(3, 3),
                DMatrix::zeros(3, 1),
                DMatrix::identity(2, 2), // C must have 3 cols
                DVector::zeros(3),
                DVector::zeros(2),
            ),
            Err(LtiError::DimError(_))
        ));
        assert!(matches!(
            KalmanGain::new(&m, DMatrix::zeros(4, 3)),
            Err(LtiError::DimError(_))
        ));
    }

    fn scalar_model(a: f64, c: f64) -> StateSpaceModel {
        StateSpaceModel::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, c),
            DVector::zeros(1),
            DVector::zeros(1),
        )
        .unwrap()
    }

    #[test]
    fn scalar_riccati_matches_independent_fixed_point() {
        // Oracle: brute-force the scalar recursion p <- p - p^2/(p+1) + 1,
        // whose fixed point is the golden ratio; l = p/(p+1).
        let mut p = 1.0_f64;
        for _ in 0..200 {
            p = p - p * p / (p + 1.0) + 1.0;
        }
        let l_oracle = p / (p + 1.0);
        let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
        assert!((p - phi).abs() < 1e-12);

        let m = scalar_model(1.0, 1.0);
        let sol =
            riccati_solve(&m, &DMatrix::identity(1, 1), &DMatrix::identity(1, 1)).unwrap();
        assert!((sol.gain.matrix()[(0, 0)] - l_oracle).abs() < 1e-8);
        assert!((sol.covariance[(0, 0)] - phi).abs() < 1e-8);
        assert!((sol.innovation_cov[(0, 0)] - (phi + 1.0)).abs() < 1e-8);
    }

    #[test]
    fn zero_process_noise_with_stable_plant_gives_zero_gain() {
        let m = scalar_model(0.5, 1.0);
        let gain =
            steady_state_gain(&m, &DMatrix::zeros(1, 1), &DMatrix::identity(1, 1)).unwrap();
        assert!(gain.matrix()[(0, 0)].abs() <= 1e-12);
    }

    #[test]
    fn unobservable_marginal_plant_diverges() {
        let m = scalar_model(1.0, 0.0);
        match riccati_solve(&m, &DMatrix::identity(1, 1), &DMatrix::identity(1, 1)) {
            Err(LtiError::RiccatiDiverged { iterations, .. }) => {
                assert_eq!(iterations, 100_000)
            }
            other => panic!("expected RiccatiDiverged, got {other:?}"),
        }
    }

    #[test]
    fn unobservable_stable_plant_converges_to_zero_gain() {
        let m = scalar_model(0.5, 0.0);
        let sol =
            riccati_solve(&m, &DMatrix::identity(1, 1), &DMatrix::identity(1, 1)).unwrap();
        assert_eq!(sol.gain.matrix()[(0, 0)], 0.0);
        // p <- 0.25 p + 1 has fixed point 4/3.
        assert!((sol.covariance[(0, 0)] - 4.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn singular_innovation_covariance_is_reported() {
        let m = scalar_model(0.5, 0.0);
        assert!(matches!(
            riccati_solve(&m, &DMatrix::identity(1, 1), &DMatrix::zeros(1, 1)),
            Err(LtiError::SingularCov)
        ));
    }

    #[test]
    fn published_gain_contracts_estimation_error() {
        // The fixture's A - L C is a contraction, so feeding the estimator
        // the plant's own noise-free output must collapse the state error.
        let m = four_state_plant();
        let gain = four_state_gain();
        let u = DVector::zeros(3);
        let mut x = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let mut x_hat = DVector::zeros(4);
        let initial_err = (&x - &x_hat).norm();
        for _ in 0..200 {
            let (x_next, y) = step(&m, &x, &u, None).unwrap();
            let (xh_next, _) = kf_step(&m, &gain, &x_hat, &u, &y).unwrap();
            x = x_next;
            x_hat = xh_next;
        }
        assert!((x - x_hat).norm() < 1e-6 * initial_err.max(1.0));
    }

    #[test]
    fn innovation_mean_is_statistically_zero_on_honest_trace() {
        // 2-state stable plant with noise; gain and innovation covariance
        // from the Riccati solution. Innovations are white, so the empirical
        // mean of each component stays within 3 sigma / sqrt(N).
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, -0.05, 0.8]);
        let b = DMatrix::from_row_slice(2, 1, &[0.1, 0.05]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
        let q_std = 0.05;
        let r_std = 0.2;
        let m = StateSpaceModel::new(
            a,
            b,
            c,
            DVector::from_element(2, q_std),
            DVector::from_element(1, r_std),
        )
        .unwrap();
        let q = DMatrix::identity(2, 2) * q_std * q_std;
        let r = DMatrix::identity(1, 1) * r_std * r_std;
        let sol = riccati_solve(&m, &q, &r).unwrap();

        let mut rng = chacha(42);
        let n = 20_000;
        let u = DVector::from_element(1, 0.3);
        let mut x = DVector::zeros(2);
        let mut x_hat = DVector::zeros(2);
        let mut mean = 0.0;
        for _ in 0..n {
            let (x_next, y) = step(&m, &x, &u, Some(&mut rng)).unwrap();
            let (xh_next, y_hat) = kf_step(&m, &sol.gain, &x_hat, &u, &y).unwrap();
            mean += y[0] - y_hat[0];
            x = x_next;
            x_hat = xh_next;
        }
        mean /= n as f64;
        let sigma = sol.innovation_cov[(0, 0)].sqrt();
        assert!(
            mean.abs() < 3.0 * sigma / (n as f64).sqrt(),
            "innovation mean {mean} vs bound {}",
            3.0 * sigma / (n as f64).sqrt()
        );
    }

    #[test]
    fn delayed_output_projects_the_stepped_state() {
        let m = four_state_plant();
        let x = DVector::from_vec(vec![0.1, 0.2, -0.3, 0.4]);
        let u = DVector::from_vec(vec![1.0, 0.5, -1.0]);
        let y_next = delayed_output(&m, &x, &u, None).unwrap();
        let (x_next, _) = step(&m, &x, &u, None).unwrap();
        assert!((y_next - m.c() * x_next).amax() < 1e-12);
    }

    /// Noise-free plant rollout driven by `inputs`, returning the reported
    /// outputs (y[k] = C x[k]).
    fn rollout(m: &StateSpaceModel, x0: &DVector<f64>, inputs: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let mut x = x0.clone();
        let mut ys = Vec::with_capacity(inputs.len());
        for u in inputs {
            let (x_next, y) = step(m, &x, u, None).unwrap();
            ys.push(y);
            x = x_next;
        }
        ys
    }

    #[test]
    fn matched_inputs_give_identically_zero_residual() {
        let m = four_state_plant();
        let gain = four_state_gain();
        let x0 = DVector::from_vec(vec![0.02, -0.01, 0.03, 0.01]);
        let inputs: Vec<DVector<f64>> = (0..120)
            .map(|k| DVector::from_vec(vec![if k >= 40 { 1.0 } else { 0.0 }, 0.5, 0.0]))
            .collect();
        let outputs = rollout(&m, &x0, &inputs);
        let residuals =
            watermark_residual(&m, &gain, &inputs, &outputs, &inputs, &x0).unwrap();
        for r in residuals {
            assert!(r.amax() < 1e-12, "residual {r}");
        }
    }

    #[test]
    fn single_step_input_discrepancy_surfaces_as_cb_delta() {
        let m = four_state_plant();
        let gain = four_state_gain();
        let x0 = DVector::zeros(4);
        let k_diff = 30usize;
        let delta = DVector::from_vec(vec![1.0, -0.5, 0.25]);

        // Plant executes `plant_inputs`; verifier believes `wm_inputs`,
        // which differ only at step k_diff.
        let wm_inputs: Vec<DVector<f64>> =
            (0..80).map(|_| DVector::from_vec(vec![0.2, 0.1, 0.0])).collect();
        let mut plant_inputs = wm_inputs.clone();
        plant_inputs[k_diff] += &delta;

        let outputs = rollout(&m, &x0, &plant_inputs);
        let residuals =
            watermark_residual(&m, &gain, &plant_inputs, &outputs, &wm_inputs, &x0).unwrap();

        let expected = m.c() * m.b() * &delta;
        for (k, r) in residuals.iter().enumerate() {
            if k <= k_diff {
                assert!(r.amax() < 1e-12, "pre-discrepancy residual at {k}: {r}");
            }
        }
        assert!(
            (&residuals[k_diff + 1] - &expected).amax() < 1e-12,
            "got {} expected {}",
            residuals[k_diff + 1],
            expected
        );
    }

    #[test]
    fn replaying_undelayed_recording_inflates_residual() {
        // Honest watermarked run: plant executes the command 35 samples late
        // and reports truthfully -> residual stays at the noise floor. A
        // replay of the undelayed recording breaks the algebra during the
        // delay window.
        let m = four_state_plant();
        let gain = four_state_gain();
        let x0 = DVector::zeros(4);
        let n = 160;
        let cmd_at = 40usize;
        let delay = 35usize;
        let undelayed: Vec<DVector<f64>> = (0..n)
            .map(|k| DVector::from_vec(vec![if k >= cmd_at { 1.0 } else { 0.0 }, 0.0, 0.0]))
            .collect();
        let delayed: Vec<DVector<f64>> = (0..n)
            .map(|k| DVector::from_vec(vec![if k >= cmd_at + delay { 1.0 } else { 0.0 }, 0.0, 0.0]))
            .collect();

        let honest_outputs = rollout(&m, &x0, &delayed);
        let replayed_outputs = rollout(&m, &x0, &undelayed);

        let honest =
            watermark_residual(&m, &gain, &delayed, &honest_outputs, &delayed, &x0).unwrap();
        let replay =
            watermark_residual(&m, &gain, &undelayed, &replayed_outputs, &delayed, &x0).unwrap();

        let window = cmd_at..(cmd_at + delay + 40);
        let mean_abs = |rs: &[DVector<f64>]| {
            let mut s = 0.0;
            for r in &rs[window.clone()] {
                s += r.abs().sum();
            }
            s / window.len() as f64
        };
        assert!(
            mean_abs(&replay) > 10.0 * mean_abs(&honest).max(1e-12),
            "replay {} honest {}",
            mean_abs(&replay),
            mean_abs(&honest)
        );
    }

    #[test]
    fn fixture_has_published_dimensions_and_entries() {
        let m = four_state_plant();
        assert_eq!((m.n_states(), m.n_inputs(), m.n_outputs()), (4, 3, 2));
        assert_eq!(m.a()[(1, 2)], 0.1173);
        assert_eq!(m.a()[(0, 0)], 1.0);
        assert_eq!(m.b()[(3, 0)], -0.0010);
        assert_eq!(m.c()[(1, 0)], -29695.0);
        assert_eq!(m.c()[(0, 1)], -128.0);
        let l = four_state_gain();
        assert_eq!(l.matrix()[(2, 0)], -0.0282);
        assert_eq!(l.matrix()[(3, 1)], -0.0020);
    }
}
