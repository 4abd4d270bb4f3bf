//! Stationary operating points, finite-difference Jacobians and forward-Euler
//! discretization of the plant model.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, VshpError};
use crate::plant::{converter_power, plant_eval, ControlInputs, PlantParams, PlantState, INPUT_DIM, STATE_DIM};

/// Output ordering of the algebraic output Jacobians `c_c`, `d_c`.
pub const OUTPUT_NAMES: [&str; 3] = ["p_g", "h", "p_m"];
pub const OUTPUT_DIM: usize = 3;

pub const STATIONARY_TOL: f64 = 1e-8;
const NEWTON_TARGET: f64 = 1e-13;
const NEWTON_MAX_ITER: usize = 60;
const MIN_DAMPING: f64 = 1.0 / 64.0;

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPoint {
    pub state: PlantState,
    pub inputs: ControlInputs,
    pub iterations: usize,
    /// Infinity norm of the model derivative at the returned point.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub x_s: DVector<f64>,
    pub u_s: DVector<f64>,
    /// Outputs `[p_g, h, p_m]` at the stationary point.
    pub y_s: DVector<f64>,
    pub a_c: DMatrix<f64>,
    pub b_c: DMatrix<f64>,
    /// Jacobians of `[p_g, h, p_m]` with respect to state and input.
    pub c_c: DMatrix<f64>,
    pub d_c: DMatrix<f64>,
    pub a_t: DMatrix<f64>,
    pub b_t: DMatrix<f64>,
    /// Per-step state change at the linearization point, `dt f(x_s, u_s)`;
    /// zero at a stationary point.
    pub drift: DVector<f64>,
    pub dt: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jacobians {
    pub a_c: DMatrix<f64>,
    pub b_c: DMatrix<f64>,
    pub c_c: DMatrix<f64>,
    pub d_c: DMatrix<f64>,
    pub warnings: Vec<String>,
}

/// Stationary point at the generator speed reference `omega_ref`.
pub fn solve_stationary(p_pb: f64, p_g_star: f64, params: &PlantParams) -> Result<StationaryPoint> {
    solve_stationary_at_speed(p_pb, p_g_star, params.generator.omega_ref, params, None)
}

/// Finds `(x_s, u_s)` with all derivatives zero and `g* = g`.
///
/// With `g* = g` the servo equation vanishes identically, leaving five
/// equations for six states; the speed is therefore fixed to `omega` and the
/// remaining states are found by damped Newton iteration.
pub fn solve_stationary_at_speed(
    p_pb: f64,
    p_g_star: f64,
    omega: f64,
    params: &PlantParams,
    guess: Option<&PlantState>,
) -> Result<StationaryPoint> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(VshpError::Infeasible(format!(
            "stationary speed {omega} is not positive"
        )));
    }
    let vsg = &params.vsg;
    let grid = &params.grid;
    // Swing + VSG balance is linear in delta_f when the converter is unclamped.
    let delta_f = (p_g_star + p_pb) / (vsg.k_vsg_p + grid.d_m);
    let p_g = p_g_star - vsg.k_vsg_p * delta_f;
    if !delta_f.is_finite() || p_g < vsg.p_g_min - 1e-12 || p_g > vsg.p_g_max + 1e-12 {
        return Err(VshpError::Infeasible(format!(
            "stationary converter power {p_g} outside [{}, {}] for p_pb = {p_pb}, p_g* = {p_g_star}",
            vsg.p_g_min, vsg.p_g_max
        )));
    }

    let start = match guess {
        Some(s) => [s.delta_f, s.g, s.q, s.q_hr, s.h_st],
        None => {
            let q0 = p_g.clamp(0.2, 1.2);
            [delta_f, q0, q0, q0, 1.0 - params.waterway.f_p2 * q0 * q0]
        }
    };

    let residual = |v: &[f64; 5]| -> Option<[f64; 5]> {
        let state = PlantState {
            delta_f: v[0],
            g: v[1],
            q: v[2],
            q_hr: v[3],
            h_st: v[4],
            omega,
        };
        let inputs = ControlInputs {
            p_g_star,
            p_pb,
            g_star: v[1],
        };
        let (d, _) = plant_eval(&state, &inputs, params).ok()?;
        let r = [d[0], d[2], d[3], d[4], d[5]];
        r.iter().all(|x| x.is_finite()).then_some(r)
    };
    let norm = |r: &[f64; 5]| r.iter().fold(0.0_f64, |m, x| m.max(x.abs()));

    let mut v = start;
    let mut r =
        residual(&v).ok_or_else(|| VshpError::Infeasible("initial guess outside the model domain".to_string()))?;
    let mut iterations = 0;
    while norm(&r) > NEWTON_TARGET && iterations < NEWTON_MAX_ITER {
        iterations += 1;
        let mut jac = DMatrix::<f64>::zeros(5, 5);
        for j in 0..5 {
            let h = 1e-7 * v[j].abs().max(1.0);
            let mut vp = v;
            let mut vm = v;
            vp[j] += h;
            vm[j] -= h;
            let (rp, rm) = match (residual(&vp), residual(&vm)) {
                (Some(rp), Some(rm)) => (rp, rm),
                _ => {
                    return Err(VshpError::Infeasible(
                        "Newton iterate left the model domain".to_string(),
                    ))
                }
            };
            for i in 0..5 {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let rhs = DVector::from_iterator(5, r.iter().map(|x| -x));
        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| VshpError::Infeasible("singular stationarity Jacobian".to_string()))?;

        let current = norm(&r);
        let mut damping = 1.0;
        loop {
            let mut trial = v;
            for i in 0..5 {
                trial[i] += damping * step[i];
            }
            match residual(&trial) {
                Some(rt) if norm(&rt) < current || damping <= MIN_DAMPING => {
                    v = trial;
                    r = rt;
                    break;
                }
                None if damping <= MIN_DAMPING => {
                    return Err(VshpError::Infeasible(
                        "Newton line search left the model domain".to_string(),
                    ))
                }
                _ => damping *= 0.5,
            }
        }
    }

    let res = norm(&r);
    if res > STATIONARY_TOL {
        return Err(VshpError::NonConvergence {
            method: "stationary point Newton iteration",
            iterations,
            residual: res,
        });
    }
    let state = PlantState {
        delta_f: v[0],
        g: v[1],
        q: v[2],
        q_hr: v[3],
        h_st: v[4],
        omega,
    };
    let act = &params.actuator;
    if state.g < act.g_min || state.g > act.g_max {
        return Err(VshpError::Infeasible(format!(
            "stationary guide vane opening {} outside actuator range [{}, {}]",
            state.g, act.g_min, act.g_max
        )));
    }
    Ok(StationaryPoint {
        state,
        inputs: ControlInputs {
            p_g_star,
            p_pb,
            g_star: state.g,
        },
        iterations,
        residual: res,
    })
}

fn eval_all(
    x: &[f64; STATE_DIM],
    u: &[f64; INPUT_DIM],
    params: &PlantParams,
) -> Result<([f64; STATE_DIM + OUTPUT_DIM], bool)> {
    let (d, out) = plant_eval(&PlantState::from_array(x), &ControlInputs::from_array(u), params)?;
    Ok((
        [d[0], d[1], d[2], d[3], d[4], d[5], out.p_g, out.h, out.p_m],
        out.converter_clamped,
    ))
}

fn is_clamped(x: &[f64; STATE_DIM], u: &[f64; INPUT_DIM], params: &PlantParams) -> bool {
    let (p_g, _, clamped) = converter_power(x[0], u[0], u[1], &params.vsg, &params.grid);
    clamped || p_g <= params.vsg.p_g_min + 1e-9 || p_g >= params.vsg.p_g_max - 1e-9
}

/// Perturbation size used for variable value `v`.
pub fn fd_step(v: f64) -> f64 {
    1e-6_f64.max(1e-6 * v.abs())
}

/// Central-difference Jacobians of the state derivative and of the outputs
/// `[p_g, h, p_m]`.
///
/// When the converter power sits on a clamp boundary the model is not
/// differentiable; one-sided differences into the unclamped side are used and
/// a warning is recorded.
pub fn jacobian(x_s: &[f64; STATE_DIM], u_s: &[f64; INPUT_DIM], params: &PlantParams) -> Result<Jacobians> {
    let mut warnings = Vec::new();
    let (f0, _) = eval_all(x_s, u_s, params)?;
    let at_boundary = is_clamped(x_s, u_s, params);
    if at_boundary {
        warnings.push("converter power on a clamp boundary; one-sided differences used".to_string());
    }
    let n_out = STATE_DIM + OUTPUT_DIM;
    let mut full_x = DMatrix::<f64>::zeros(n_out, STATE_DIM);
    let mut full_u = DMatrix::<f64>::zeros(n_out, INPUT_DIM);

    let column = |xp: [f64; STATE_DIM],
                  up: [f64; INPUT_DIM],
                  xm: [f64; STATE_DIM],
                  um: [f64; INPUT_DIM],
                  h: f64|
     -> Result<Vec<f64>> {
        if !at_boundary {
            let (fp, _) = eval_all(&xp, &up, params)?;
            let (fm, _) = eval_all(&xm, &um, params)?;
            return Ok((0..n_out).map(|i| (fp[i] - fm[i]) / (2.0 * h)).collect());
        }
        if !is_clamped(&xp, &up, params) {
            let (fp, _) = eval_all(&xp, &up, params)?;
            Ok((0..n_out).map(|i| (fp[i] - f0[i]) / h).collect())
        } else {
            let (fm, _) = eval_all(&xm, &um, params)?;
            Ok((0..n_out).map(|i| (f0[i] - fm[i]) / h).collect())
        }
    };

    for j in 0..STATE_DIM {
        let h = fd_step(x_s[j]);
        let mut xp = *x_s;
        let mut xm = *x_s;
        xp[j] += h;
        xm[j] -= h;
        let col = column(xp, *u_s, xm, *u_s, h)?;
        full_x.column_mut(j).copy_from_slice(&col);
    }
    for j in 0..INPUT_DIM {
        let h = fd_step(u_s[j]);
        let mut up = *u_s;
        let mut um = *u_s;
        up[j] += h;
        um[j] -= h;
        let col = column(*x_s, up, *x_s, um, h)?;
        full_u.column_mut(j).copy_from_slice(&col);
    }

    Ok(Jacobians {
        a_c: full_x.rows(0, STATE_DIM).into_owned(),
        b_c: full_u.rows(0, STATE_DIM).into_owned(),
        c_c: full_x.rows(STATE_DIM, OUTPUT_DIM).into_owned(),
        d_c: full_u.rows(STATE_DIM, OUTPUT_DIM).into_owned(),
        warnings,
    })
}

/// Forward-Euler discretization: `a_t = a_c dt + I`, `b_t = b_c dt`.
pub fn discretize(a_c: &DMatrix<f64>, b_c: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a_c.nrows();
    let mut a_t = a_c * dt;
    for i in 0..n {
        a_t[(i, i)] += 1.0;
    }
    (a_t, b_c * dt)
}

/// Stationary point, Jacobians and discrete model in one call.
pub fn linearize(point: &StationaryPoint, params: &PlantParams, dt: f64) -> Result<LinearModel> {
    linearize_at(&point.state, &point.inputs, params, dt)
}

/// Linearizes at an arbitrary point; off a stationary point the model keeps
/// the affine term in [`LinearModel::drift`].
pub fn linearize_at(state: &PlantState, inputs: &ControlInputs, params: &PlantParams, dt: f64) -> Result<LinearModel> {
    if dt <= 0.0 {
        return Err(VshpError::Config(format!(
            "discretization step must be positive, got {dt}"
        )));
    }
    let x_s = state.to_array();
    let u_s = inputs.to_array();
    let jac = jacobian(&x_s, &u_s, params)?;
    let (a_t, b_t) = discretize(&jac.a_c, &jac.b_c, dt);
    let (dx, out) = plant_eval(state, inputs, params)?;
    Ok(LinearModel {
        x_s: DVector::from_row_slice(&x_s),
        u_s: DVector::from_row_slice(&u_s),
        y_s: DVector::from_row_slice(&[out.p_g, out.h, out.p_m]),
        a_c: jac.a_c,
        b_c: jac.b_c,
        c_c: jac.c_c,
        d_c: jac.d_c,
        a_t,
        b_t,
        drift: DVector::from_iterator(dx.len(), dx.iter().map(|v| v * dt)),
        dt,
        warnings: jac.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{calibrate_rated_point, plant_deriv, rated_state, state_index as si};

    fn params() -> PlantParams {
        calibrate_rated_point(&PlantParams::default()).unwrap()
    }

    #[test]
    fn rated_demand_gives_rated_point() {
        let p = params();
        let sp = solve_stationary(-1.0, 1.0, &p).unwrap();
        let rated = rated_state(&p);
        for (a, b) in sp.state.to_array().iter().zip(rated.to_array()) {
            assert!((a - b).abs() < 1e-9, "{:?} vs {:?}", sp.state, rated);
        }
        assert_eq!(sp.inputs.g_star, sp.state.g);
    }

    #[test]
    fn balanced_demand_has_zero_frequency_deviation() {
        let p = params();
        for pg in [0.3, 0.55, 0.8, 0.95] {
            let sp = solve_stationary_at_speed(-pg, pg, 0.97, &p, None).unwrap();
            assert!(sp.state.delta_f.abs() < 1e-15);
            let d = plant_deriv(&sp.state, &sp.inputs, &p).unwrap();
            assert!(d.iter().all(|v| v.abs() <= STATIONARY_TOL));
        }
    }

    #[test]
    fn infeasible_demand_is_reported() {
        let p = params();
        assert!(matches!(solve_stationary(-2.0, 2.0, &p), Err(VshpError::Infeasible(_))));
    }

    #[test]
    fn resolve_from_solution_is_immediate() {
        let p = params();
        let sp = solve_stationary_at_speed(-0.5, 0.8, 0.93, &p, None).unwrap();
        let again = solve_stationary_at_speed(-0.5, 0.8, 0.93, &p, Some(&sp.state)).unwrap();
        assert!(again.iterations <= 1, "{}", again.iterations);
        assert_eq!(again.state.omega, sp.state.omega);
    }

    #[test]
    fn governor_and_swing_entries() {
        let p = params();
        let sp = solve_stationary_at_speed(-0.8, 0.8, 0.985, &p, None).unwrap();
        let jac = jacobian(&sp.state.to_array(), &sp.inputs.to_array(), &p).unwrap();
        let t_g = p.waterway.t_g;
        assert!((jac.a_c[(si::G, si::G)] + 1.0 / t_g).abs() < 1e-6);
        assert!((jac.b_c[(si::G, 2)] - 1.0 / t_g).abs() < 1e-6);

        // with virtual inertia the swing row is scaled by 1 / (1 + c k_d)
        let c = 1.0 / (2.0 * p.grid.h_grid * p.grid.s_n);
        let expected = c / (1.0 + c * p.vsg.k_vsg_d);
        assert!((jac.b_c[(si::DELTA_F, 1)] - expected).abs() < 1e-9);

        let mut p0 = p;
        p0.vsg.k_vsg_d = 0.0;
        let jac0 = jacobian(&sp.state.to_array(), &sp.inputs.to_array(), &p0).unwrap();
        assert!((jac0.b_c[(si::DELTA_F, 1)] - c).abs() < 1e-9);
        assert!(jac0.warnings.is_empty());
    }

    #[test]
    fn clamp_boundary_records_warning() {
        let p = params();
        let sp = solve_stationary(-1.0, 1.0, &p).unwrap();
        let jac = jacobian(&sp.state.to_array(), &sp.inputs.to_array(), &p).unwrap();
        assert_eq!(jac.warnings.len(), 1);
        assert!(jac.a_c.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn discretize_examples() {
        let zero = DMatrix::<f64>::zeros(3, 3);
        let b = DMatrix::<f64>::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let (a_t, _) = discretize(&zero, &b, 0.2);
        assert_eq!(a_t, DMatrix::<f64>::identity(3, 3));

        let a = DMatrix::from_element(1, 1, -1.0);
        let (a_t, _) = discretize(&a, &DMatrix::zeros(1, 1), 0.2);
        assert!((a_t[(0, 0)] - 0.8).abs() < 1e-15);

        let (_, b1) = discretize(&zero, &b, 0.2);
        let (_, b2) = discretize(&zero, &(&b * 2.0), 0.2);
        assert_eq!(b2, b1 * 2.0);
    }
}
