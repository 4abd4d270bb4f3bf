//! Output-feedback linear MPC built on one linearization per controller step.
//!
//! The decision vector is laid out as
//! `z = (dx_1 .. dx_N, v_1 .. v_m, eps)` where `dx_t` are state deviations
//! from the stationary point, `v_k` are the free inputs (P_g*, g*) of block
//! `k` in deviation form, and `eps` is one shared slack vector of state
//! dimension. P_pb is a measured disturbance held at its estimate.
//!
//! Costs are written without a factor 1/2: a weight `w` on `(x - r)` adds
//! `w (x - r)^2` to the objective.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VshpError};
use crate::linearization::{linearize, linearize_at, solve_stationary_at_speed, LinearModel};
use crate::plant::{
    converter_power, input_index, state_index, ControlInputs, PlantParams, PlantState, INPUT_DIM, STATE_DIM,
};
use crate::qp::{solve_qp, QpProblem, QpStatus};

/// Bounds with magnitude at or above this value are treated as absent.
pub const INFINITE_BOUND: f64 = 1e6;

/// Inputs chosen by the optimizer, in decision-vector order.
pub const FREE_INPUTS: [usize; 2] = [input_index::P_G_STAR, input_index::G_STAR];

/// Where the prediction model is linearized each controller step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearizationPoint {
    /// Current estimate and previous inputs, with the affine drift term.
    OperatingPoint,
    /// Stationary point at the estimated disturbance on the speed reference curve.
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub n_steps: usize,
    pub dt: f64,
    pub block_sizes: Vec<usize>,
    pub q_diag: [f64; STATE_DIM],
    pub q_delta_diag: [f64; STATE_DIM],
    pub r_diag: [f64; INPUT_DIM],
    pub r_delta_diag: [f64; INPUT_DIM],
    pub d_x: [f64; STATE_DIM],
    pub d_u: [f64; INPUT_DIM],
    pub rho: [f64; STATE_DIM],
    pub s_diag: [f64; STATE_DIM],
    pub x_low: [f64; STATE_DIM],
    pub x_high: [f64; STATE_DIM],
    pub dx_high: [f64; STATE_DIM],
    pub u_low: [f64; INPUT_DIM],
    pub u_high: [f64; INPUT_DIM],
    pub du_high: [f64; INPUT_DIM],
    pub p_g_ref: f64,
    pub linearization_point: LinearizationPoint,
}

impl Default for MpcConfig {
    fn default() -> Self {
        let inf = INFINITE_BOUND;
        let mut block_sizes = vec![1; 10];
        block_sizes.extend([2, 2, 2, 2, 3, 3, 3, 3, 3, 4, 4]);
        MpcConfig {
            n_steps: 41,
            dt: 0.2,
            block_sizes,
            q_diag: [0.01, 0.0, 0.0, 0.0, 0.0, 100.0],
            q_delta_diag: [0.0; STATE_DIM],
            r_diag: [1000.0, 0.0, 0.0],
            r_delta_diag: [0.0, 0.0, 1.0],
            d_x: [0.0; STATE_DIM],
            d_u: [0.0; INPUT_DIM],
            rho: [0.0; STATE_DIM],
            s_diag: [0.0, 0.0, 1.0, 0.0, 1e6, 1e5],
            x_low: [-inf, -inf, 0.3, -inf, 0.5, 0.7],
            x_high: [inf, inf, 1.3, inf, 1.1, 2.0],
            dx_high: [inf; STATE_DIM],
            u_low: [0.0, -inf, 0.1],
            u_high: [1.0, inf, 1.3],
            du_high: [inf, inf, 0.04],
            p_g_ref: 0.8,
            linearization_point: LinearizationPoint::OperatingPoint,
        }
    }
}

fn finite(bound: f64) -> bool {
    bound.abs() < INFINITE_BOUND
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(VshpError::Config("mpc.n_steps must be positive".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(VshpError::Config(format!("mpc.dt must be positive, got {}", self.dt)));
        }
        move_blocking_map(self.n_steps, &self.block_sizes)?;
        let nonneg: [(&str, &[f64]); 6] = [
            ("q_diag", &self.q_diag),
            ("q_delta_diag", &self.q_delta_diag),
            ("r_diag", &self.r_diag),
            ("r_delta_diag", &self.r_delta_diag),
            ("s_diag", &self.s_diag),
            ("rho", &self.rho),
        ];
        for (name, values) in nonneg {
            if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                return Err(VshpError::Config(format!(
                    "mpc.{name} entries must be finite and >= 0 (cost must be positive semidefinite), found {v}"
                )));
            }
        }
        for i in 0..STATE_DIM {
            if self.x_low[i] > self.x_high[i] {
                return Err(VshpError::Config(format!(
                    "mpc.x_low[{i}] = {} exceeds x_high[{i}] = {}",
                    self.x_low[i], self.x_high[i]
                )));
            }
            if self.dx_high[i] < 0.0 {
                return Err(VshpError::Config(format!("mpc.dx_high[{i}] must be >= 0")));
            }
        }
        for j in 0..INPUT_DIM {
            if self.u_low[j] > self.u_high[j] {
                return Err(VshpError::Config(format!(
                    "mpc.u_low[{j}] = {} exceeds u_high[{j}] = {}",
                    self.u_low[j], self.u_high[j]
                )));
            }
            if self.du_high[j] < 0.0 {
                return Err(VshpError::Config(format!("mpc.du_high[{j}] must be >= 0")));
            }
        }
        if !self.p_g_ref.is_finite() {
            return Err(VshpError::Config("mpc.p_g_ref must be finite".into()));
        }
        Ok(())
    }

    pub fn n_blocks(&self) -> usize {
        self.block_sizes.len()
    }
}

/// Optimal turbine speed as a function of converter power.
pub fn reference_speed(p_g: f64) -> f64 {
    if p_g >= 0.85 {
        1.0 + 0.6 * (p_g - 0.85)
    } else if p_g >= 0.73 {
        0.964 + 0.3 * (p_g - 0.73)
    } else {
        0.964 + 0.15 * (p_g - 0.73)
    }
}

/// Maps each horizon step to the block that owns its input.
pub fn move_blocking_map(n_steps: usize, block_sizes: &[usize]) -> Result<Vec<usize>> {
    if block_sizes.is_empty() || block_sizes.contains(&0) {
        return Err(VshpError::Config(
            "move blocking: block sizes must be nonempty and positive".into(),
        ));
    }
    let total: usize = block_sizes.iter().sum();
    if total != n_steps {
        return Err(VshpError::Config(format!(
            "move blocking: block sizes sum to {total} but the horizon has {n_steps} steps"
        )));
    }
    Ok(block_sizes
        .iter()
        .enumerate()
        .flat_map(|(k, &size)| std::iter::repeat_n(k, size))
        .collect())
}

/// Index arithmetic for the decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct QpLayout {
    pub n_steps: usize,
    pub n_blocks: usize,
    pub block_of_step: Vec<usize>,
    pub block_sizes: Vec<usize>,
}

impl QpLayout {
    pub fn new(config: &MpcConfig) -> Result<Self> {
        Ok(QpLayout {
            n_steps: config.n_steps,
            n_blocks: config.block_sizes.len(),
            block_of_step: move_blocking_map(config.n_steps, &config.block_sizes)?,
            block_sizes: config.block_sizes.clone(),
        })
    }

    /// Offset of `dx_t`, `t` in `1..=N`.
    pub fn state(&self, t: usize) -> usize {
        debug_assert!(t >= 1 && t <= self.n_steps);
        (t - 1) * STATE_DIM
    }

    /// Offset of the free inputs of block `k`.
    pub fn block(&self, k: usize) -> usize {
        self.n_steps * STATE_DIM + k * FREE_INPUTS.len()
    }

    pub fn slack(&self) -> usize {
        self.n_steps * STATE_DIM + self.n_blocks * FREE_INPUTS.len()
    }

    pub fn dim(&self) -> usize {
        self.slack() + STATE_DIM
    }
}

/// Reference values used by the cost terms, in absolute units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcReferences {
    /// Speed reference for the whole horizon.
    pub omega: f64,
}

struct Builder {
    n: usize,
    hessian: DMatrix<f64>,
    gradient: DVector<f64>,
    eq_rows: Vec<(Vec<(usize, f64)>, f64)>,
    in_rows: Vec<(Vec<(usize, f64)>, f64)>,
}

impl Builder {
    fn new(n: usize) -> Self {
        Builder {
            n,
            hessian: DMatrix::zeros(n, n),
            gradient: DVector::zeros(n),
            eq_rows: Vec::new(),
            in_rows: Vec::new(),
        }
    }

    /// Adds `w (sum a_i z_i - r)^2`.
    fn square(&mut self, w: f64, terms: &[(usize, f64)], r: f64) {
        if w == 0.0 {
            return;
        }
        for &(i, ai) in terms {
            for &(j, aj) in terms {
                self.hessian[(i, j)] += 2.0 * w * ai * aj;
            }
            self.gradient[i] -= 2.0 * w * r * ai;
        }
    }

    fn linear(&mut self, i: usize, c: f64) {
        self.gradient[i] += c;
    }

    /// Adds `sum a_i z_i <= b`.
    fn le(&mut self, terms: Vec<(usize, f64)>, b: f64) {
        self.in_rows.push((terms, b));
    }

    fn eq(&mut self, terms: Vec<(usize, f64)>, b: f64) {
        self.eq_rows.push((terms, b));
    }

    fn finish(self) -> QpProblem {
        let dense = |rows: &[(Vec<(usize, f64)>, f64)]| {
            let mut a = DMatrix::zeros(rows.len(), self.n);
            let mut b = DVector::zeros(rows.len());
            for (r, (terms, rhs)) in rows.iter().enumerate() {
                for &(c, v) in terms {
                    a[(r, c)] += v;
                }
                b[r] = *rhs;
            }
            (a, b)
        };
        let (eq_a, eq_b) = dense(&self.eq_rows);
        let (ineq_a, ineq_b) = dense(&self.in_rows);
        QpProblem {
            hessian: self.hessian,
            gradient: self.gradient,
            eq_a,
            eq_b,
            ineq_a,
            ineq_b,
        }
    }
}

/// Assembles the horizon QP in deviation coordinates around `model.x_s`, `model.u_s`.
pub fn build_qp(
    model: &LinearModel,
    x0_deviation: &[f64; STATE_DIM],
    prev_input: &[f64; INPUT_DIM],
    references: &MpcReferences,
    config: &MpcConfig,
) -> Result<QpProblem> {
    build_qp_with(model, x0_deviation, prev_input, references, config, true)
}

/// [`build_qp`] with the converter power rows optionally left out.
pub fn build_qp_with(
    model: &LinearModel,
    x0_deviation: &[f64; STATE_DIM],
    prev_input: &[f64; INPUT_DIM],
    references: &MpcReferences,
    config: &MpcConfig,
    converter_rows: bool,
) -> Result<QpProblem> {
    config.validate()?;
    let dims_ok = model.a_t.shape() == (STATE_DIM, STATE_DIM)
        && model.b_t.shape() == (STATE_DIM, INPUT_DIM)
        && model.c_c.ncols() == STATE_DIM
        && model.d_c.ncols() == INPUT_DIM
        && model.c_c.nrows() >= 1
        && model.x_s.len() == STATE_DIM
        && model.u_s.len() == INPUT_DIM
        && !model.y_s.is_empty();
    if !dims_ok {
        return Err(VshpError::Config("linear model has inconsistent dimensions".into()));
    }
    let layout = QpLayout::new(config)?;
    let n_steps = layout.n_steps;
    let x_s = &model.x_s;
    let u_s = &model.u_s;
    let mut qp = Builder::new(layout.dim());

    // reference in deviation coordinates
    let mut x_ref = [0.0; STATE_DIM];
    x_ref[state_index::DELTA_F] = -x_s[state_index::DELTA_F];
    x_ref[state_index::OMEGA] = references.omega - x_s[state_index::OMEGA];
    let mut u_ref = [0.0; INPUT_DIM];
    u_ref[input_index::P_G_STAR] = config.p_g_ref - u_s[input_index::P_G_STAR];

    // dynamics
    for t in 0..n_steps {
        let k = layout.block_of_step[t];
        for i in 0..STATE_DIM {
            let mut terms = vec![(layout.state(t + 1) + i, 1.0)];
            let mut rhs = model.drift.get(i).copied().unwrap_or(0.0);
            for j in 0..STATE_DIM {
                let a = model.a_t[(i, j)];
                if a == 0.0 {
                    continue;
                }
                if t == 0 {
                    rhs += a * x0_deviation[j];
                } else {
                    terms.push((layout.state(t) + j, -a));
                }
            }
            for (f, &inp) in FREE_INPUTS.iter().enumerate() {
                let b = model.b_t[(i, inp)];
                if b != 0.0 {
                    terms.push((layout.block(k) + f, -b));
                }
            }
            qp.eq(terms, rhs);
        }
    }

    // state costs, rate costs, soft bounds
    let eps = layout.slack();
    for t in 1..=n_steps {
        for i in 0..STATE_DIM {
            let xi = layout.state(t) + i;
            qp.square(config.q_diag[i], &[(xi, 1.0)], x_ref[i]);
            qp.linear(xi, config.d_x[i]);
            if t == 1 {
                qp.square(config.q_delta_diag[i], &[(xi, 1.0)], x0_deviation[i]);
            } else {
                qp.square(
                    config.q_delta_diag[i],
                    &[(xi, 1.0), (layout.state(t - 1) + i, -1.0)],
                    0.0,
                );
            }
            if finite(config.x_high[i]) {
                qp.le(vec![(xi, 1.0), (eps + i, -1.0)], config.x_high[i] - x_s[i]);
            }
            if finite(config.x_low[i]) {
                qp.le(vec![(xi, -1.0), (eps + i, -1.0)], x_s[i] - config.x_low[i]);
            }
            if finite(config.dx_high[i]) {
                if t == 1 {
                    qp.le(vec![(xi, 1.0)], config.dx_high[i] + x0_deviation[i]);
                    qp.le(vec![(xi, -1.0)], config.dx_high[i] - x0_deviation[i]);
                } else {
                    let prev = layout.state(t - 1) + i;
                    qp.le(vec![(xi, 1.0), (prev, -1.0)], config.dx_high[i]);
                    qp.le(vec![(xi, -1.0), (prev, 1.0)], config.dx_high[i]);
                }
            }
        }
    }

    // slacks
    for i in 0..STATE_DIM {
        qp.square(config.s_diag[i], &[(eps + i, 1.0)], 0.0);
        qp.linear(eps + i, config.rho[i]);
        qp.le(vec![(eps + i, -1.0)], 0.0);
        if !finite(config.x_low[i]) && !finite(config.x_high[i]) {
            qp.eq(vec![(eps + i, 1.0)], 0.0);
        }
    }

    // inputs
    for k in 0..layout.n_blocks {
        let size = layout.block_sizes[k] as f64;
        for (f, &inp) in FREE_INPUTS.iter().enumerate() {
            let v = layout.block(k) + f;
            qp.square(size * config.r_diag[inp], &[(v, 1.0)], u_ref[inp]);
            qp.linear(v, size * config.d_u[inp]);
            if finite(config.u_high[inp]) {
                qp.le(vec![(v, 1.0)], config.u_high[inp] - u_s[inp]);
            }
            if finite(config.u_low[inp]) {
                qp.le(vec![(v, -1.0)], u_s[inp] - config.u_low[inp]);
            }
            if k == 0 {
                let shift = prev_input[inp] - u_s[inp];
                qp.square(config.r_delta_diag[inp], &[(v, 1.0)], shift);
                if finite(config.du_high[inp]) {
                    qp.le(vec![(v, 1.0)], config.du_high[inp] + shift);
                    qp.le(vec![(v, -1.0)], config.du_high[inp] - shift);
                }
            } else {
                let prev = layout.block(k - 1) + f;
                qp.square(config.r_delta_diag[inp], &[(v, 1.0), (prev, -1.0)], 0.0);
                if finite(config.du_high[inp]) {
                    qp.le(vec![(v, 1.0), (prev, -1.0)], config.du_high[inp]);
                    qp.le(vec![(v, -1.0), (prev, 1.0)], config.du_high[inp]);
                }
            }
        }
    }

    // converter power through the linearized output equation
    let p_low = config.u_low[input_index::P_G_STAR];
    let p_high = config.u_high[input_index::P_G_STAR];
    let p_g_s = model.y_s[0];
    for t in (0..n_steps).filter(|_| converter_rows) {
        let k = layout.block_of_step[t];
        let mut terms = Vec::with_capacity(STATE_DIM + FREE_INPUTS.len());
        let mut constant = p_g_s;
        for j in 0..STATE_DIM {
            let c = model.c_c[(0, j)];
            if c == 0.0 {
                continue;
            }
            if t == 0 {
                constant += c * x0_deviation[j];
            } else {
                terms.push((layout.state(t) + j, c));
            }
        }
        for (f, &inp) in FREE_INPUTS.iter().enumerate() {
            let d = model.d_c[(0, inp)];
            if d != 0.0 {
                terms.push((layout.block(k) + f, d));
            }
        }
        if finite(p_high) {
            qp.le(terms.clone(), p_high - constant);
        }
        if finite(p_low) {
            qp.le(terms.iter().map(|&(i, v)| (i, -v)).collect(), constant - p_low);
        }
    }

    let mut problem = qp.finish();
    let h = &problem.hessian;
    problem.hessian = (h + h.transpose()) * 0.5;
    Ok(problem)
}

/// Diagnostics attached to every controller decision.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MpcDiagnostics {
    pub status: Option<QpStatus>,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// True when the previous decision was held because a stage failed.
    pub held: bool,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlDecision {
    pub g_star: f64,
    pub p_g_star: f64,
    /// Predicted absolute states for steps `1..=N`.
    pub predicted_trajectory: Vec<[f64; STATE_DIM]>,
    pub slack_values: [f64; STATE_DIM],
    pub diagnostics: MpcDiagnostics,
    /// Stationary point of the last successful step, reused as a Newton guess.
    #[serde(skip)]
    pub stationary: Option<PlantState>,
    /// Optimal decision vector of the last successful step.
    #[serde(skip)]
    pub warm_start: Option<DVector<f64>>,
}

impl ControlDecision {
    pub fn initial(g_star: f64, p_g_star: f64) -> Self {
        ControlDecision {
            g_star,
            p_g_star,
            predicted_trajectory: Vec::new(),
            slack_values: [0.0; STATE_DIM],
            diagnostics: MpcDiagnostics::default(),
            stationary: None,
            warm_start: None,
        }
    }

    fn hold(prev: &ControlDecision, message: String, status: Option<QpStatus>) -> Self {
        ControlDecision {
            diagnostics: MpcDiagnostics {
                status,
                iterations: 0,
                kkt_residual: 0.0,
                held: true,
                message: Some(message),
            },
            predicted_trajectory: Vec::new(),
            slack_values: [0.0; STATE_DIM],
            ..prev.clone()
        }
    }
}

/// Stationary converter power for a given disturbance and power reference.
pub fn stationary_power(p_pb: f64, p_g_star: f64, params: &PlantParams) -> f64 {
    let delta_f = (p_g_star + p_pb) / (params.vsg.k_vsg_p + params.grid.d_m);
    p_g_star - params.vsg.k_vsg_p * delta_f
}

/// Distance kept from the converter limits when choosing the linearization point.
const LIMIT_MARGIN: f64 = 1e-3;

/// Power reference of the linearization point: `p_g_star`, shifted if needed
/// so the stationary converter power stays inside its limits.
pub fn linearization_set_point(p_pb: f64, p_g_star: f64, params: &PlantParams) -> f64 {
    let vsg = &params.vsg;
    let gain = params.grid.d_m / (vsg.k_vsg_p + params.grid.d_m);
    if !(gain > 0.0) {
        return p_g_star;
    }
    let p_s = stationary_power(p_pb, p_g_star, params);
    let lo = vsg.p_g_min + LIMIT_MARGIN;
    let hi = vsg.p_g_max - LIMIT_MARGIN;
    if lo > hi || (lo..=hi).contains(&p_s) {
        return p_g_star;
    }
    p_g_star + (p_s.clamp(lo, hi) - p_s) / gain
}

/// One controller step: linearization, QP, first move.
///
/// Stage failures (infeasible stationary point, QP failure) hold the previous
/// decision and record a diagnostic; only configuration errors are returned.
/// The speed reference uses the converter power implied by the estimates.
pub fn mpc_step(
    estimates: &PlantState,
    p_pb_hat: f64,
    prev: &ControlDecision,
    params: &PlantParams,
    config: &MpcConfig,
) -> Result<ControlDecision> {
    let (p_g, _, _) = converter_power(estimates.delta_f, prev.p_g_star, p_pb_hat, &params.vsg, &params.grid);
    mpc_step_measured(estimates, p_pb_hat, p_g, prev, params, config)
}

/// [`mpc_step`] with the speed reference taken at a measured converter power.
pub fn mpc_step_measured(
    estimates: &PlantState,
    p_pb_hat: f64,
    p_g_measured: f64,
    prev: &ControlDecision,
    params: &PlantParams,
    config: &MpcConfig,
) -> Result<ControlDecision> {
    config.validate()?;
    for j in 0..INPUT_DIM {
        if config.u_low[j] > config.u_high[j] {
            return Err(VshpError::Config(format!(
                "input bounds for input {j} are inconsistent"
            )));
        }
    }
    if !estimates.is_finite() || !p_pb_hat.is_finite() || !p_g_measured.is_finite() {
        return Ok(ControlDecision::hold(prev, "non-finite estimates".into(), None));
    }

    let (model, stationary) = match config.linearization_point {
        LinearizationPoint::OperatingPoint => {
            let inputs = ControlInputs {
                p_g_star: prev.p_g_star,
                p_pb: p_pb_hat,
                g_star: prev.g_star,
            };
            match linearize_at(estimates, &inputs, params, config.dt) {
                Ok(m) => (m, None),
                Err(e) => return Ok(ControlDecision::hold(prev, format!("linearization: {e}"), None)),
            }
        }
        LinearizationPoint::Stationary => {
            let p_lin = linearization_set_point(p_pb_hat, prev.p_g_star, params);
            let omega_s = reference_speed(stationary_power(p_pb_hat, p_lin, params));
            let point = match solve_stationary_at_speed(p_pb_hat, p_lin, omega_s, params, prev.stationary.as_ref())
                .or_else(|_| solve_stationary_at_speed(p_pb_hat, p_lin, omega_s, params, None))
            {
                Ok(p) => p,
                Err(e) => return Ok(ControlDecision::hold(prev, format!("stationary point: {e}"), None)),
            };
            match linearize(&point, params, config.dt) {
                Ok(m) => (m, Some(point.state)),
                Err(e) => return Ok(ControlDecision::hold(prev, format!("linearization: {e}"), None)),
            }
        }
    };

    let references = MpcReferences {
        omega: reference_speed(p_g_measured),
    };
    let x = estimates.to_array();
    let x0_dev: [f64; STATE_DIM] = std::array::from_fn(|i| x[i] - model.x_s[i]);
    let prev_input = [prev.p_g_star, p_pb_hat, prev.g_star];
    let mut notes = model.warnings.clone();
    let mut problem = build_qp(&model, &x0_dev, &prev_input, &references, config)?;
    let warm = prev.warm_start.as_ref().filter(|w| w.len() == problem.dim());
    let mut result = solve_qp(&problem, warm);
    if matches!(&result, Ok(s) if s.status == QpStatus::Infeasible) {
        problem = build_qp_with(&model, &x0_dev, &prev_input, &references, config, false)?;
        result = solve_qp(&problem, warm);
        notes.push("converter power rows infeasible, solved without them".into());
    }
    let sol = match result {
        Ok(s) => s,
        Err(e) => return Ok(ControlDecision::hold(prev, format!("qp: {e}"), None)),
    };
    if sol.status != QpStatus::Solved {
        return Ok(ControlDecision::hold(
            prev,
            format!("qp status {:?}", sol.status),
            Some(sol.status),
        ));
    }

    let layout = QpLayout::new(config)?;
    let v0 = layout.block(0);
    let gi = input_index::G_STAR;
    let pi = input_index::P_G_STAR;
    let mut g_star = model.u_s[gi] + sol.z[v0 + 1];
    let mut p_g_star = model.u_s[pi] + sol.z[v0];
    // remove round-off so hard limits hold exactly
    g_star = g_star.clamp(config.u_low[gi], config.u_high[gi]);
    if finite(config.du_high[gi]) {
        g_star = g_star.clamp(prev.g_star - config.du_high[gi], prev.g_star + config.du_high[gi]);
    }
    p_g_star = p_g_star.clamp(config.u_low[pi], config.u_high[pi]);
    if finite(config.du_high[pi]) {
        p_g_star = p_g_star.clamp(prev.p_g_star - config.du_high[pi], prev.p_g_star + config.du_high[pi]);
    }

    let predicted_trajectory = (1..=layout.n_steps)
        .map(|t| std::array::from_fn(|i| model.x_s[i] + sol.z[layout.state(t) + i]))
        .collect();
    let slack_values = std::array::from_fn(|i| sol.z[layout.slack() + i].max(0.0));
    Ok(ControlDecision {
        g_star,
        p_g_star,
        predicted_trajectory,
        slack_values,
        diagnostics: MpcDiagnostics {
            status: Some(sol.status),
            iterations: sol.iterations,
            kkt_residual: sol.kkt_residual,
            held: false,
            message: (!notes.is_empty()).then(|| notes.join("; ")),
        },
        stationary,
        warm_start: Some(sol.z),
    })
}
