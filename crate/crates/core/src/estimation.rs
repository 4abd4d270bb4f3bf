//! Kalman filter for the hydraulic states and the grid power-balance estimator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VshpError};
use crate::linearization::fd_step;
use crate::plant::{governor_deriv, turbine_outputs, waterway_deriv, GridParams, PlantParams, PlantState};
use crate::riccati::{care, care_residual, spectral_abscissa};

pub const KF_STATE_DIM: usize = 4;
pub const KF_INPUT_DIM: usize = 2;
pub const KF_OUTPUT_DIM: usize = 4;

pub const KF_STATE_NAMES: [&str; KF_STATE_DIM] = ["g", "q", "q_hr", "h_st"];
pub const KF_OUTPUT_NAMES: [&str; KF_OUTPUT_DIM] = ["g", "h_st", "h", "p_m"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Diagonal of the process noise covariance.
    pub process_noise: [f64; KF_STATE_DIM],
    /// Diagonal of the measurement noise covariance.
    pub measurement_noise: [f64; KF_OUTPUT_DIM],
    /// Propagate the estimate through the nonlinear hydraulic equations
    /// (constant gain) instead of the linearized model.
    pub nonlinear_prediction: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            process_noise: [1e-4; KF_STATE_DIM],
            measurement_noise: [1e-4, 1e-4, 1e-4, 1e-3],
            nonlinear_prediction: true,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.process_noise.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(VshpError::Config(
                "estimator.process_noise entries must be finite and >= 0".into(),
            ));
        }
        if self.measurement_noise.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(VshpError::Config(
                "estimator.measurement_noise entries must be finite and > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Hydraulic model linearized at one operating point, in deviation form
/// around `(x0, u0, y0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanModel {
    pub a_kf: DMatrix<f64>,
    pub b_kf: DMatrix<f64>,
    pub c_kf: DMatrix<f64>,
    pub d_kf: DMatrix<f64>,
    pub g_kf: DMatrix<f64>,
    pub h_kf: DMatrix<f64>,
    pub q_noise: DMatrix<f64>,
    pub r_noise: DMatrix<f64>,
    pub l_kf: DMatrix<f64>,
    pub x0: DVector<f64>,
    pub u0: DVector<f64>,
    pub y0: DVector<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorState {
    pub x_hat: [f64; KF_STATE_DIM],
    pub f_filt: f64,
    pub fdot_filt: f64,
    pub p_pb_hat: f64,
}

impl EstimatorState {
    pub fn is_finite(&self) -> bool {
        self.x_hat.iter().all(|v| v.is_finite())
            && self.f_filt.is_finite()
            && self.fdot_filt.is_finite()
            && self.p_pb_hat.is_finite()
    }
}

fn hydraulic_state(x: &[f64], omega: f64) -> PlantState {
    PlantState {
        delta_f: 0.0,
        g: x[0],
        q: x[1],
        q_hr: x[2],
        h_st: x[3],
        omega,
    }
}

/// Derivatives and outputs of the hydraulic subsystem for `x = [g, q, q_hr, h_st]`, `u = [g*, omega]`.
pub fn hydraulic_eval(
    x: &[f64; KF_STATE_DIM],
    u: &[f64; KF_INPUT_DIM],
    params: &PlantParams,
) -> Result<([f64; KF_STATE_DIM], [f64; KF_OUTPUT_DIM])> {
    let state = hydraulic_state(x, u[1]);
    let ww = waterway_deriv(&state, &params.waterway);
    let (hyd, q_dot) = turbine_outputs(&state, &params.turbine, params.waterway.t_w1, ww.h)?;
    let g_dot = governor_deriv(x[0], u[0], &params.waterway);
    Ok(([g_dot, q_dot, ww.q_hr_dot, ww.h_st_dot], [x[0], x[3], hyd.h, hyd.p_m]))
}

/// Linearizes the hydraulic subsystem at `op_point` with `g* = g`.
/// The Kalman gain is left at zero; see [`kalman_gain`].
pub fn linearize_hydraulics(
    params: &PlantParams,
    op_point: &PlantState,
    config: &EstimatorConfig,
) -> Result<KalmanModel> {
    config.validate()?;
    let x0 = [op_point.g, op_point.q, op_point.q_hr, op_point.h_st];
    let u0 = [op_point.g, op_point.omega];
    let (f0, y0) = hydraulic_eval(&x0, &u0, params)?;
    let mut warnings = Vec::new();
    let drift = f0.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if drift > 1e-8 {
        warnings.push(format!(
            "hydraulic operating point is not stationary (|dx| = {drift:e})"
        ));
    }

    let mut a = DMatrix::zeros(KF_STATE_DIM, KF_STATE_DIM);
    let mut c = DMatrix::zeros(KF_OUTPUT_DIM, KF_STATE_DIM);
    for j in 0..KF_STATE_DIM {
        let h = fd_step(x0[j]);
        let mut xp = x0;
        let mut xm = x0;
        xp[j] += h;
        xm[j] -= h;
        let (fp, yp) = hydraulic_eval(&xp, &u0, params)?;
        let (fm, ym) = hydraulic_eval(&xm, &u0, params)?;
        for i in 0..KF_STATE_DIM {
            a[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
        for i in 0..KF_OUTPUT_DIM {
            c[(i, j)] = (yp[i] - ym[i]) / (2.0 * h);
        }
    }
    let mut b = DMatrix::zeros(KF_STATE_DIM, KF_INPUT_DIM);
    let mut d = DMatrix::zeros(KF_OUTPUT_DIM, KF_INPUT_DIM);
    for j in 0..KF_INPUT_DIM {
        let h = fd_step(u0[j]);
        let mut up = u0;
        let mut um = u0;
        up[j] += h;
        um[j] -= h;
        let (fp, yp) = hydraulic_eval(&x0, &up, params)?;
        let (fm, ym) = hydraulic_eval(&x0, &um, params)?;
        for i in 0..KF_STATE_DIM {
            b[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
        for i in 0..KF_OUTPUT_DIM {
            d[(i, j)] = (yp[i] - ym[i]) / (2.0 * h);
        }
    }
    // exact structural entries
    c[(0, 0)] = 1.0;
    c[(1, 3)] = 1.0;
    for j in [1, 2] {
        c[(0, j)] = 0.0;
        c[(1, j)] = 0.0;
    }
    c[(0, 3)] = 0.0;
    c[(1, 0)] = 0.0;
    for j in 0..KF_INPUT_DIM {
        d[(0, j)] = 0.0;
        d[(1, j)] = 0.0;
    }

    Ok(KalmanModel {
        a_kf: a,
        b_kf: b,
        c_kf: c,
        d_kf: d,
        g_kf: DMatrix::identity(KF_STATE_DIM, KF_STATE_DIM),
        h_kf: DMatrix::zeros(KF_OUTPUT_DIM, KF_STATE_DIM),
        q_noise: DMatrix::from_diagonal(&DVector::from_row_slice(&config.process_noise)),
        r_noise: DMatrix::from_diagonal(&DVector::from_row_slice(&config.measurement_noise)),
        l_kf: DMatrix::zeros(KF_STATE_DIM, KF_OUTPUT_DIM),
        x0: DVector::from_row_slice(&x0),
        u0: DVector::from_row_slice(&u0),
        y0: DVector::from_row_slice(&y0),
        warnings,
    })
}

/// Filter Riccati solution and gain for generic matrices.
///
/// Solves `A P + P A' - P C' R^-1 C P + G Q G' = 0` and returns
/// `(P, L = P C' R^-1)`. The closed loop `A - L C` is verified Hurwitz.
pub fn filter_riccati(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let gqg = g * q * g.transpose();
    let p = care(&a.transpose(), &c.transpose(), &gqg, r)?;
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| VshpError::Config("measurement covariance is singular".into()))?;
    let l = &p * c.transpose() * r_inv;
    let abscissa = spectral_abscissa(&(a - &l * c));
    if abscissa >= 0.0 {
        return Err(VshpError::Config(format!(
            "filter closed loop is not Hurwitz (max real eigenvalue {abscissa:e}); pair (A, C) not detectable"
        )));
    }
    Ok((p, l))
}

/// Residual infinity norm of the filter Riccati equation at `p`.
pub fn filter_riccati_residual(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<f64> {
    let gqg = g * q * g.transpose();
    Ok(care_residual(&a.transpose(), &c.transpose(), &gqg, r, p)?.amax())
}

/// Computes and stores the steady-state Kalman gain. Returns the Riccati solution.
pub fn kalman_gain(model: &mut KalmanModel) -> Result<DMatrix<f64>> {
    let (p, l) = filter_riccati(&model.a_kf, &model.c_kf, &model.g_kf, &model.q_noise, &model.r_noise)?;
    model.l_kf = l;
    Ok(p)
}

/// Innovation `y - y0 - C (x - x0) - D (u - u0)`.
pub fn innovation(
    x_hat: &[f64; KF_STATE_DIM],
    u: &[f64; KF_INPUT_DIM],
    y: &[f64; KF_OUTPUT_DIM],
    model: &KalmanModel,
) -> DVector<f64> {
    let dx = DVector::from_row_slice(x_hat) - &model.x0;
    let du = DVector::from_row_slice(u) - &model.u0;
    DVector::from_row_slice(y) - &model.y0 - &model.c_kf * &dx - &model.d_kf * &du
}

/// Filter dynamics `dx/dt = A dx + B du + L (dy - C dx - D du)`.
pub fn kalman_deriv(
    x_hat: &[f64; KF_STATE_DIM],
    u: &[f64; KF_INPUT_DIM],
    y: &[f64; KF_OUTPUT_DIM],
    model: &KalmanModel,
) -> [f64; KF_STATE_DIM] {
    let dx = DVector::from_row_slice(x_hat) - &model.x0;
    let du = DVector::from_row_slice(u) - &model.u0;
    let deriv = &model.a_kf * dx + &model.b_kf * du + &model.l_kf * innovation(x_hat, u, y, model);
    std::array::from_fn(|i| deriv[i])
}

/// Constant-gain observer on the nonlinear hydraulic model:
/// `dx/dt = f(x, u) + L (y - h(x, u))`.
pub fn observer_deriv(
    x_hat: &[f64; KF_STATE_DIM],
    u: &[f64; KF_INPUT_DIM],
    y: &[f64; KF_OUTPUT_DIM],
    model: &KalmanModel,
    params: &PlantParams,
) -> Result<[f64; KF_STATE_DIM]> {
    let (f, y_hat) = hydraulic_eval(x_hat, u, params)?;
    let innov = DVector::from_fn(KF_OUTPUT_DIM, |i, _| y[i] - y_hat[i]);
    let correction = &model.l_kf * innov;
    Ok(std::array::from_fn(|i| f[i] + correction[i]))
}

/// Advances the frequency filters by `dt` and refreshes the disturbance estimate.
///
/// The first-order filters are updated with their exact zero-order-hold
/// discretization.
pub fn estimate_power_balance(
    est: &EstimatorState,
    delta_f: f64,
    delta_f_dot: f64,
    p_g: f64,
    params: &GridParams,
    dt: f64,
) -> Result<EstimatorState> {
    if !(dt > 0.0) {
        return Err(VshpError::Config(format!("filter step must be positive, got {dt}")));
    }
    let kf = 1.0 - (-params.omega_f * dt).exp();
    let kfd = 1.0 - (-params.omega_fdot * dt).exp();
    let f_filt = est.f_filt + kf * (delta_f - est.f_filt);
    let fdot_filt = est.fdot_filt + kfd * (delta_f_dot - est.fdot_filt);
    Ok(EstimatorState {
        f_filt,
        fdot_filt,
        p_pb_hat: power_balance(f_filt, fdot_filt, p_g, params),
        ..*est
    })
}

/// Disturbance power implied by the swing equation.
pub fn power_balance(delta_f: f64, delta_f_dot: f64, p_g: f64, params: &GridParams) -> f64 {
    -p_g + 2.0 * params.h_grid * params.s_n / params.omega_s * delta_f_dot + params.d_m * delta_f
}
