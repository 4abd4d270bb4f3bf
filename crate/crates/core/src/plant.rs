//! Nonlinear continuous-time model of the variable-speed hydropower plant.
//!
//! The model couples five subsystems:
//!
//! * guide vane servo (first order lag on the opening reference),
//! * waterway with headrace tunnel, surge tank and inelastic penstock,
//! * Euler-equation turbine,
//! * single-mass generator swing equation written in torque form,
//! * grid-side converter under virtual synchronous generator (VSG) control
//!   feeding a single-bus grid swing equation.
//!
//! All quantities are per unit on the machine base with `omega_s = 1`.
//!
//! Sign convention: the state `delta_f` is the grid frequency deviation
//! `f - f*`, so it rises when the grid is over-supplied. The VSG acts on
//! `f* - f`, i.e. on `-delta_f`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VshpError};

pub const STATE_DIM: usize = 6;
pub const INPUT_DIM: usize = 3;

/// Index of each state in the ordered state vector.
pub mod state_index {
    pub const DELTA_F: usize = 0;
    pub const G: usize = 1;
    pub const Q: usize = 2;
    pub const Q_HR: usize = 3;
    pub const H_ST: usize = 4;
    pub const OMEGA: usize = 5;
}

/// Index of each input in the ordered input vector.
pub mod input_index {
    pub const P_G_STAR: usize = 0;
    pub const P_PB: usize = 1;
    pub const G_STAR: usize = 2;
}

pub const STATE_NAMES: [&str; STATE_DIM] = ["delta_f", "g", "q", "q_hr", "h_st", "omega"];

/// The six continuous states of the closed-loop model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub delta_f: f64,
    pub g: f64,
    pub q: f64,
    pub q_hr: f64,
    pub h_st: f64,
    pub omega: f64,
}

impl PlantState {
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [self.delta_f, self.g, self.q, self.q_hr, self.h_st, self.omega]
    }

    pub fn from_array(x: &[f64; STATE_DIM]) -> Self {
        PlantState {
            delta_f: x[0],
            g: x[1],
            q: x[2],
            q_hr: x[3],
            h_st: x[4],
            omega: x[5],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInputs {
    pub p_g_star: f64,
    pub p_pb: f64,
    pub g_star: f64,
}

impl ControlInputs {
    pub fn to_array(&self) -> [f64; INPUT_DIM] {
        [self.p_g_star, self.p_pb, self.g_star]
    }

    pub fn from_array(u: &[f64; INPUT_DIM]) -> Self {
        ControlInputs {
            p_g_star: u[0],
            p_pb: u[1],
            g_star: u[2],
        }
    }
}

/// Governor servo and waterway constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaterwayParams {
    pub t_g: f64,
    pub c_s: f64,
    pub t_w1: f64,
    pub t_w2: f64,
    pub f_0: f64,
    pub f_p1: f64,
    pub f_p2: f64,
}

impl Default for WaterwayParams {
    fn default() -> Self {
        WaterwayParams {
            t_g: 0.2,
            c_s: 100.0,
            t_w1: 1.0,
            t_w2: 5.0,
            f_0: 0.01,
            f_p1: 0.02,
            f_p2: 0.05,
        }
    }
}

/// Euler turbine constants. `xi` and `psi` are normally produced by
/// [`calibrate_rated_point`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurbineParams {
    pub h_r_over_h_rt: f64,
    pub q_r_over_q_rt: f64,
    pub alpha_1r: f64,
    pub xi: f64,
    pub psi: f64,
    pub sigma: f64,
}

impl Default for TurbineParams {
    fn default() -> Self {
        TurbineParams {
            h_r_over_h_rt: 1.05,
            q_r_over_q_rt: 1.05,
            alpha_1r: 0.7,
            xi: 1.0,
            psi: 1.0,
            sigma: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    pub h_gen: f64,
    pub d_gen: f64,
    pub omega_ref: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            h_gen: 3.0,
            d_gen: 0.0,
            omega_ref: 1.0,
        }
    }
}

/// Virtual synchronous generator gains and converter limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VsgParams {
    /// Droop gain; `1 / droop` in per unit (1 % droop gives 100).
    pub k_vsg_p: f64,
    /// Virtual inertia gain on the rate of change of frequency.
    pub k_vsg_d: f64,
    pub f_star: f64,
    pub p_g_min: f64,
    pub p_g_max: f64,
}

impl Default for VsgParams {
    fn default() -> Self {
        VsgParams {
            k_vsg_p: 100.0,
            k_vsg_d: 10.0,
            f_star: 1.0,
            p_g_min: 0.0,
            p_g_max: 1.0,
        }
    }
}

impl VsgParams {
    /// Proportional gain for a droop given as a fraction (0.01 for 1 %).
    pub fn gain_for_droop(droop: f64) -> f64 {
        1.0 / droop
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    pub h_grid: f64,
    pub s_n: f64,
    /// Lumped frequency-dependent response of the rest of the grid.
    pub d_m: f64,
    pub omega_s: f64,
    pub omega_f: f64,
    pub omega_fdot: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        GridParams {
            h_grid: 25.35,
            s_n: 1.0,
            d_m: 12.5,
            omega_s: 1.0,
            omega_f: 0.625,
            omega_fdot: 0.25,
        }
    }
}

/// Operating range of the guide vane actuator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorParams {
    pub g_min: f64,
    pub g_max: f64,
}

impl Default for ActuatorParams {
    fn default() -> Self {
        ActuatorParams { g_min: 0.1, g_max: 1.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantParams {
    pub waterway: WaterwayParams,
    pub turbine: TurbineParams,
    pub generator: GeneratorParams,
    pub vsg: VsgParams,
    pub grid: GridParams,
    pub actuator: ActuatorParams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HydraulicOutputs {
    pub h: f64,
    pub p_m: f64,
    pub alpha_1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaterwayDerivs {
    pub h_st_dot: f64,
    pub q_hr_dot: f64,
    pub h: f64,
}

/// Algebraic quantities that accompany a derivative evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantOutputs {
    pub p_g: f64,
    pub delta_f_dot: f64,
    pub h: f64,
    pub p_m: f64,
    pub alpha_1: f64,
    /// True when the converter power sits on one of its limits.
    pub converter_clamped: bool,
}

pub fn governor_deriv(g: f64, g_star: f64, params: &WaterwayParams) -> f64 {
    (g_star - g) / params.t_g
}

pub fn waterway_deriv(state: &PlantState, params: &WaterwayParams) -> WaterwayDerivs {
    let net = state.q_hr - state.q;
    let orifice = params.f_0 * net * net;
    WaterwayDerivs {
        h_st_dot: net / params.c_s,
        q_hr_dot: (1.0 - state.h_st + orifice - params.f_p2 * state.q_hr * state.q_hr) / params.t_w2,
        h: state.h_st - orifice - params.f_p1 * state.q * state.q,
    }
}

/// Euler turbine: flow angle, mechanical power and penstock flow derivative.
pub fn turbine_outputs(
    state: &PlantState,
    params: &TurbineParams,
    t_w1: f64,
    h: f64,
) -> Result<(HydraulicOutputs, f64)> {
    if state.g <= 0.0 {
        return Err(VshpError::Domain(format!(
            "guide vane opening must be positive, got {}",
            state.g
        )));
    }
    if h <= 0.0 {
        return Err(VshpError::Domain(format!("turbine head must be positive, got {h}")));
    }
    let arg = params.q_r_over_q_rt * state.g * params.alpha_1r.sin();
    if !(-1.0..=1.0).contains(&arg) {
        return Err(VshpError::Domain(format!(
            "flow angle arcsine argument {arg} outside [-1, 1] (g = {})",
            state.g
        )));
    }
    let alpha_1 = arg.asin();
    let flow_ratio = state.q / state.g;
    let swirl = params.alpha_1r.tan() * alpha_1.sin() + alpha_1.cos();
    let p_m = params.q_r_over_q_rt / params.h_r_over_h_rt
        * (params.xi * flow_ratio * swirl - params.psi * state.omega)
        * state.q
        * state.omega
        / h;
    let q_dot = (h * params.h_r_over_h_rt - params.sigma * (state.omega * state.omega - 1.0) - flow_ratio * flow_ratio)
        / (t_w1 * params.q_r_over_q_rt);
    Ok((HydraulicOutputs { h, p_m, alpha_1 }, q_dot))
}

pub fn generator_speed_deriv(p_m: f64, p_g: f64, omega: f64, params: &GeneratorParams) -> Result<f64> {
    if omega <= 0.0 {
        return Err(VshpError::Domain(format!(
            "rotational speed must be positive, got {omega}"
        )));
    }
    Ok((p_m - p_g - params.d_gen * (params.omega_ref - omega) * omega) / (2.0 * params.h_gen * omega))
}

/// VSG active power law. `delta_f` here is `f* - f`.
pub fn vsg_power(delta_f: f64, delta_f_dot: f64, p_g_star: f64, params: &VsgParams) -> f64 {
    (params.k_vsg_p * delta_f + params.k_vsg_d * delta_f_dot + p_g_star).clamp(params.p_g_min, params.p_g_max)
}

/// Single-bus swing equation; `delta_f` is the state `f - f*`.
pub fn grid_freq_deriv(p_g: f64, p_pb: f64, delta_f: f64, params: &GridParams) -> f64 {
    params.omega_s * (p_g + p_pb - params.d_m * delta_f) / (2.0 * params.h_grid * params.s_n)
}

/// Solves the algebraic loop between the VSG (which reacts to the rate of
/// change of frequency) and the swing equation (which depends on the VSG
/// power). Returns `(p_g, delta_f_dot, clamped)`.
pub fn converter_power(delta_f: f64, p_g_star: f64, p_pb: f64, vsg: &VsgParams, grid: &GridParams) -> (f64, f64, bool) {
    let c = grid.omega_s / (2.0 * grid.h_grid * grid.s_n);
    let unclamped =
        (p_g_star - vsg.k_vsg_p * delta_f - vsg.k_vsg_d * c * (p_pb - grid.d_m * delta_f)) / (1.0 + vsg.k_vsg_d * c);
    let p_g = unclamped.clamp(vsg.p_g_min, vsg.p_g_max);
    let clamped = unclamped <= vsg.p_g_min || unclamped >= vsg.p_g_max;
    let delta_f_dot = grid_freq_deriv(p_g, p_pb, delta_f, grid);
    (p_g, delta_f_dot, clamped)
}

/// Right-hand side of the closed-loop model together with its algebraic outputs.
pub fn plant_eval(
    state: &PlantState,
    inputs: &ControlInputs,
    params: &PlantParams,
) -> Result<([f64; STATE_DIM], PlantOutputs)> {
    let (p_g, delta_f_dot, clamped) =
        converter_power(state.delta_f, inputs.p_g_star, inputs.p_pb, &params.vsg, &params.grid);
    debug_assert!((vsg_power(-state.delta_f, -delta_f_dot, inputs.p_g_star, &params.vsg) - p_g).abs() < 1e-9);
    let g_dot = governor_deriv(state.g, inputs.g_star, &params.waterway);
    let ww = waterway_deriv(state, &params.waterway);
    let (hyd, q_dot) = turbine_outputs(state, &params.turbine, params.waterway.t_w1, ww.h)?;
    let omega_dot = generator_speed_deriv(hyd.p_m, p_g, state.omega, &params.generator)?;
    let deriv = [delta_f_dot, g_dot, q_dot, ww.q_hr_dot, ww.h_st_dot, omega_dot];
    let outputs = PlantOutputs {
        p_g,
        delta_f_dot,
        h: hyd.h,
        p_m: hyd.p_m,
        alpha_1: hyd.alpha_1,
        converter_clamped: clamped,
    };
    Ok((deriv, outputs))
}

pub fn plant_deriv(state: &PlantState, inputs: &ControlInputs, params: &PlantParams) -> Result<[f64; STATE_DIM]> {
    plant_eval(state, inputs, params).map(|(d, _)| d)
}

/// Rated operating point used for calibration: `g = q = q_hr = omega = 1`.
pub fn rated_state(params: &PlantParams) -> PlantState {
    PlantState {
        delta_f: 0.0,
        g: 1.0,
        q: 1.0,
        q_hr: 1.0,
        h_st: 1.0 - params.waterway.f_p2,
        omega: 1.0,
    }
}

const CALIBRATION_TOL: f64 = 1e-9;

/// Fixes the turbine constants so that the rated point (`g = q = omega = 1`)
/// is stationary with unit mechanical power.
///
/// The flow equation does not contain `xi` or `psi`, so the head ratio is
/// set to `1 / h_rated` to make the flow balance hold. `xi` and `psi` are
/// then chosen so that `p_m = 1` and the rated speed is the power-optimal
/// speed at rated flow (`dp_m / domega = 0`).
pub fn calibrate_rated_point(params: &PlantParams) -> Result<PlantParams> {
    let rated = rated_state(params);
    let h_rated = waterway_deriv(&rated, &params.waterway).h;
    if h_rated <= 0.0 {
        return Err(VshpError::Config(format!(
            "rated head {h_rated} is not positive; friction coefficients too large"
        )));
    }

    if let Ok((hyd, q_dot)) = turbine_outputs(&rated, &params.turbine, params.waterway.t_w1, h_rated) {
        if q_dot.abs() <= CALIBRATION_TOL && (hyd.p_m - 1.0).abs() <= CALIBRATION_TOL {
            return Ok(*params);
        }
    }

    let turbine = &params.turbine;
    let arg = turbine.q_r_over_q_rt * turbine.alpha_1r.sin();
    if !(-1.0..=1.0).contains(&arg) {
        return Err(VshpError::Config(format!(
            "flow angle undefined at the rated opening (arcsine argument {arg})"
        )));
    }
    let alpha_1 = arg.asin();
    let swirl = turbine.alpha_1r.tan() * alpha_1.sin() + alpha_1.cos();
    let scale = turbine.q_r_over_q_rt;
    // p_m(rated) = scale * (xi * swirl - psi) with h * h_r_over_h_rt = 1,
    // optimum speed: xi * swirl = 2 psi.
    let xi = 2.0 / (scale * swirl);
    let psi = 1.0 / scale;
    if !(xi.is_finite() && xi > 0.0 && psi > 0.0) {
        return Err(VshpError::Config(format!(
            "no positive turbine constants reproduce unit rated power (xi = {xi}, psi = {psi})"
        )));
    }
    let mut out = *params;
    out.turbine.h_r_over_h_rt = 1.0 / h_rated;
    out.turbine.xi = xi;
    out.turbine.psi = psi;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::assert_close;

    mod approx_eq {
        macro_rules! assert_close {
            ($a:expr, $b:expr, $tol:expr) => {{
                let (a, b): (f64, f64) = ($a, $b);
                assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
            }};
        }
        pub(crate) use assert_close;
    }

    fn calibrated() -> PlantParams {
        calibrate_rated_point(&PlantParams::default()).unwrap()
    }

    #[test]
    fn governor_examples() {
        let ww = WaterwayParams::default();
        assert_eq!(governor_deriv(0.8, 0.8, &ww), 0.0);
        assert_close!(governor_deriv(0.8, 0.9, &ww), 0.5, 1e-12);
        assert_close!(governor_deriv(1.0, 0.96, &ww), -0.2, 1e-12);
    }

    #[test]
    fn waterway_examples() {
        let ww = WaterwayParams::default();
        let mut s = rated_state(&PlantParams::default());
        s.q = 0.7;
        s.q_hr = 0.7;
        assert_eq!(waterway_deriv(&s, &ww).h_st_dot, 0.0);

        let s = PlantState {
            delta_f: 0.0,
            g: 1.0,
            q: 1.0,
            q_hr: 1.0,
            h_st: 1.0 - ww.f_p2,
            omega: 1.0,
        };
        for f_0 in [0.0, 0.01, 0.5] {
            let ww = WaterwayParams { f_0, ..ww };
            assert_close!(waterway_deriv(&s, &ww).q_hr_dot, 0.0, 1e-15);
        }

        let s = PlantState { h_st: 1.0, ..s };
        assert_close!(waterway_deriv(&s, &ww).h, 0.98, 1e-15);
    }

    #[test]
    fn turbine_examples() {
        let params = calibrated();
        let t = params.turbine;
        let s = PlantState {
            g: 1.0 / t.q_r_over_q_rt,
            ..rated_state(&params)
        };
        let (hyd, _) = turbine_outputs(&s, &t, 1.0, 0.97).unwrap();
        assert_close!(hyd.alpha_1, t.alpha_1r, 1e-12);

        // h * H_R/H_Rt = (q/g)^2 with omega = 1
        let s = PlantState {
            g: 0.8,
            q: 0.8 * 0.9,
            omega: 1.0,
            ..s
        };
        let h = 0.81 / t.h_r_over_h_rt;
        let (_, q_dot) = turbine_outputs(&s, &t, 1.0, h).unwrap();
        assert_close!(q_dot, 0.0, 1e-14);

        let rated = rated_state(&params);
        let h = waterway_deriv(&rated, &params.waterway).h;
        let (hyd, q_dot) = turbine_outputs(&rated, &t, params.waterway.t_w1, h).unwrap();
        assert_close!(hyd.p_m, 1.0, 1e-9);
        assert_close!(q_dot, 0.0, 1e-12);
    }

    #[test]
    fn turbine_domain_errors() {
        let params = calibrated();
        let mut s = rated_state(&params);
        s.g = 2.0;
        let alpha = PlantParams {
            turbine: TurbineParams {
                alpha_1r: 1.4,
                ..params.turbine
            },
            ..params
        };
        assert!(matches!(
            turbine_outputs(&s, &alpha.turbine, 1.0, 1.0),
            Err(VshpError::Domain(_))
        ));
        let s = rated_state(&params);
        assert!(matches!(
            turbine_outputs(&s, &params.turbine, 1.0, 0.0),
            Err(VshpError::Domain(_))
        ));
        assert!(matches!(
            turbine_outputs(&s, &params.turbine, 1.0, -0.1),
            Err(VshpError::Domain(_))
        ));
    }

    #[test]
    fn generator_examples() {
        let gp = GeneratorParams::default();
        assert_eq!(generator_speed_deriv(0.8, 0.8, 1.0, &gp).unwrap(), 0.0);
        assert_close!(generator_speed_deriv(0.86, 0.8, 1.0, &gp).unwrap(), 0.01, 1e-12);
        assert_close!(generator_speed_deriv(0.86, 0.8, 1.2, &gp).unwrap(), 0.06 / 7.2, 1e-12);
        assert!(generator_speed_deriv(0.86, 0.8, 0.0, &gp).is_err());
    }

    #[test]
    fn vsg_examples() {
        let vsg = VsgParams::default();
        assert_eq!(vsg_power(0.0, 0.0, 0.8, &vsg), 0.8);
        let vsg0 = VsgParams { k_vsg_d: 0.0, ..vsg };
        assert_close!(vsg_power(-0.004, 0.0, 0.8, &vsg0), 0.4, 1e-12);
        assert_eq!(vsg_power(-0.02, 0.0, 0.8, &vsg), 0.0);
        assert_eq!(VsgParams::gain_for_droop(0.01), 100.0);
    }

    #[test]
    fn grid_examples() {
        let grid = GridParams {
            d_m: 0.0,
            ..GridParams::default()
        };
        assert_eq!(grid_freq_deriv(0.8, -0.8, 0.0, &grid), 0.0);
        assert_close!(grid_freq_deriv(0.8, -0.4, 0.0, &grid), 0.4 / 50.7, 1e-15);
        assert_close!(grid_freq_deriv(0.4, -0.8, 0.0, &grid), -0.4 / 50.7, 1e-15);
        assert_close!(0.4 / 50.7, 0.0078895, 1e-7);
    }

    #[test]
    fn converter_loop_matches_vsg_law() {
        let params = calibrated();
        for &(df, pstar, ppb) in &[
            (0.0, 0.8, -0.8),
            (0.003, 0.8, -0.35),
            (-0.002, 0.9, -1.0),
            (0.02, 0.8, -0.4),
        ] {
            let (p_g, dfdot, _) = converter_power(df, pstar, ppb, &params.vsg, &params.grid);
            assert_close!(vsg_power(-df, -dfdot, pstar, &params.vsg), p_g, 1e-12);
            assert_close!(grid_freq_deriv(p_g, ppb, df, &params.grid), dfdot, 1e-15);
        }
    }

    #[test]
    fn calibration_is_fixed_point_and_detects_infeasible() {
        let once = calibrated();
        let twice = calibrate_rated_point(&once).unwrap();
        assert_eq!(once, twice);

        let mut bad = PlantParams::default();
        bad.turbine.alpha_1r = 2.0;
        assert!(matches!(calibrate_rated_point(&bad), Err(VshpError::Config(_))));
    }

    #[test]
    fn rated_point_is_stationary() {
        let params = calibrated();
        let s = rated_state(&params);
        let u = ControlInputs {
            p_g_star: 1.0,
            p_pb: -1.0,
            g_star: 1.0,
        };
        let d = plant_deriv(&s, &u, &params).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-12), "{d:?}");
    }

    #[test]
    fn power_balance_perturbation_only_moves_frequency() {
        // Without the ROCOF term the converter power does not react
        // instantaneously, so only the swing equation sees the step.
        let mut params = calibrated();
        params.vsg.k_vsg_d = 0.0;
        let s = PlantState {
            omega: 1.0,
            ..rated_state(&params)
        };
        let base = ControlInputs {
            p_g_star: 1.0,
            p_pb: -1.0,
            g_star: 1.0,
        };
        let bumped = ControlInputs { p_pb: -0.99, ..base };
        let d0 = plant_deriv(&s, &base, &params).unwrap();
        let d1 = plant_deriv(&s, &bumped, &params).unwrap();
        assert_close!(d1[0] - d0[0], 0.01 / (2.0 * 25.35), 1e-15);
        for i in 1..STATE_DIM {
            assert_eq!(d1[i], d0[i]);
        }

        // With virtual inertia the loop divides the response by 1 + c k_d.
        let params = calibrated();
        let d1 = plant_deriv(&s, &bumped, &params).unwrap();
        let c = 1.0 / (2.0 * 25.35);
        assert_close!(d1[0], c * 0.01 / (1.0 + c * params.vsg.k_vsg_d), 1e-15);
    }

    #[test]
    fn speed_decreases_when_output_exceeds_mechanical_power() {
        let params = calibrated();
        let s = PlantState {
            omega: 0.95,
            ..rated_state(&params)
        };
        let h = waterway_deriv(&s, &params.waterway).h;
        let (hyd, _) = turbine_outputs(&s, &params.turbine, 1.0, h).unwrap();
        let d = generator_speed_deriv(hyd.p_m, hyd.p_m + 0.1, s.omega, &params.generator).unwrap();
        assert!(d < 0.0);
    }
}
