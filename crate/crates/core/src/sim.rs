//! Closed-loop simulation: plant, estimator and controller at fixed steps.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{Config, PidConfig};
use crate::error::{Result, VshpError};
use crate::estimation::{
    estimate_power_balance, kalman_deriv, kalman_gain, linearize_hydraulics, observer_deriv, EstimatorState,
    KalmanModel, KF_STATE_DIM,
};
use crate::linearization::solve_stationary_at_speed;
use crate::mpc::{mpc_step_measured, reference_speed, stationary_power, ControlDecision};
use crate::plant::{plant_deriv, plant_eval, ControlInputs, PlantParams, PlantState, STATE_DIM};
use crate::qp::QpStatus;

pub const BUILTIN_SCENARIOS: [&str; 5] = [
    "scenario1",
    "scenario2",
    "scenario3",
    "generator-loss-mpc",
    "generator-loss-pid",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventField {
    PPb,
    HGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub time: f64,
    pub field: EventField,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    Mpc,
    PidBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub duration: f64,
    pub sim_dt: f64,
    pub mpc_dt: f64,
    pub initial_p_pb: f64,
    pub initial_p_g_star: f64,
    pub controller: ControllerKind,
    #[serde(default)]
    pub events: Vec<Event>,
    /// Configuration overrides keyed by dotted path.
    #[serde(default)]
    pub overrides: BTreeMap<String, Value>,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(VshpError::Config(format!(
                "scenario duration must be positive, got {}",
                self.duration
            )));
        }
        if !(self.sim_dt > 0.0) || !(self.mpc_dt > 0.0) {
            return Err(VshpError::Config("scenario steps must be positive".into()));
        }
        let ratio = self.mpc_dt / self.sim_dt;
        if ratio < 1.0 || (ratio - ratio.round()).abs() > 1e-9 {
            return Err(VshpError::Config(format!(
                "mpc_dt ({}) must be an integer multiple of sim_dt ({})",
                self.mpc_dt, self.sim_dt
            )));
        }
        if self.events.windows(2).any(|w| w[1].time < w[0].time) {
            return Err(VshpError::Config("scenario events must be sorted by time".into()));
        }
        if let Some(ev) = self.events.iter().find(|e| !(e.time >= 0.0 && e.value.is_finite())) {
            return Err(VshpError::Config(format!("invalid event {ev:?}")));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| VshpError::Config(format!("scenario parse error: {e}")))
    }
}

fn load_events(config: &Config) -> Vec<Event> {
    let s = &config.scenario;
    vec![
        Event {
            time: 0.0,
            field: EventField::PPb,
            value: s.initial_p_pb + s.load_step,
        },
        Event {
            time: s.event_time,
            field: EventField::PPb,
            value: s.initial_p_pb,
        },
    ]
}

fn base_spec(name: &str, config: &Config, controller: ControllerKind) -> ScenarioSpec {
    ScenarioSpec {
        name: name.to_string(),
        duration: config.scenario.duration,
        sim_dt: config.scenario.sim_dt,
        mpc_dt: config.mpc.dt,
        initial_p_pb: config.scenario.initial_p_pb,
        initial_p_g_star: config.scenario.initial_p_g_star,
        controller,
        events: Vec::new(),
        overrides: BTreeMap::new(),
    }
}

/// Simultaneous disturbance step and inertia loss at t = 0.
pub fn generator_loss_scenario(config: &Config, controller: ControllerKind) -> ScenarioSpec {
    let name = match controller {
        ControllerKind::Mpc => "generator-loss-mpc",
        ControllerKind::PidBaseline => "generator-loss-pid",
    };
    let mut spec = base_spec(name, config, controller);
    spec.events = vec![
        Event {
            time: 0.0,
            field: EventField::PPb,
            value: config.scenario.initial_p_pb + config.scenario.generator_loss_p_pb_step,
        },
        Event {
            time: 0.0,
            field: EventField::HGrid,
            value: config.scenario.generator_loss_h_grid,
        },
    ];
    spec
}

/// Built-in scenario by name, parameterized by `config`.
pub fn builtin_scenario(name: &str, config: &Config) -> Option<ScenarioSpec> {
    let spec = match name {
        "scenario1" => {
            let mut s = base_spec(name, config, ControllerKind::Mpc);
            s.events = load_events(config);
            s.overrides.insert("vsg.k_vsg_p".into(), Value::from(100.0));
            s
        }
        "scenario2" => {
            let mut s = base_spec(name, config, ControllerKind::Mpc);
            s.events = load_events(config);
            s.overrides.insert("vsg.k_vsg_p".into(), Value::from(25.0));
            s
        }
        "scenario3" => {
            let mut s = base_spec(name, config, ControllerKind::Mpc);
            s.events = load_events(config);
            s.overrides.insert("vsg.k_vsg_p".into(), Value::from(100.0));
            s.overrides.insert("mpc.x_low.5".into(), Value::from(0.85));
            s.overrides.insert("mpc.x_high.5".into(), Value::from(1.10));
            s
        }
        "generator-loss-mpc" => generator_loss_scenario(config, ControllerKind::Mpc),
        "generator-loss-pid" => generator_loss_scenario(config, ControllerKind::PidBaseline),
        _ => return None,
    };
    Some(spec)
}

/// One classical fourth-order Runge-Kutta step with held inputs.
pub fn integrate_step(state: &PlantState, inputs: &ControlInputs, params: &PlantParams, dt: f64) -> Result<PlantState> {
    if !(dt > 0.0) {
        return Err(VshpError::Config(format!(
            "integration step must be positive, got {dt}"
        )));
    }
    let x = state.to_array();
    let f = |x: &[f64; STATE_DIM]| plant_deriv(&PlantState::from_array(x), inputs, params);
    let next = rk4(&x, dt, f)?;
    let out = PlantState::from_array(&next);
    if !out.is_finite() {
        return Err(VshpError::Domain("non-finite state after integration step".into()));
    }
    Ok(out)
}

fn rk4<const N: usize>(x: &[f64; N], dt: f64, f: impl Fn(&[f64; N]) -> Result<[f64; N]>) -> Result<[f64; N]> {
    let shift = |base: &[f64; N], k: &[f64; N], h: f64| -> [f64; N] { std::array::from_fn(|i| base[i] + h * k[i]) };
    let k1 = f(x)?;
    let k2 = f(&shift(x, &k1, 0.5 * dt))?;
    let k3 = f(&shift(x, &k2, 0.5 * dt))?;
    let k4 = f(&shift(x, &k3, dt))?;
    Ok(std::array::from_fn(|i| {
        x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PidGovernorState {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub integral: f64,
    pub prev_error: Option<f64>,
    /// Speed reference.
    pub target: f64,
    /// Opening the PID output is added to.
    pub g_base: f64,
    pub g_star: f64,
    pub rate_limit: f64,
    pub g_min: f64,
    pub g_max: f64,
    pub anti_windup: bool,
}

impl PidGovernorState {
    pub fn new(config: &PidConfig, g_initial: f64, target: f64, g_min: f64, g_max: f64) -> Self {
        PidGovernorState {
            kp: config.kp,
            ki: config.ki,
            kd: config.kd,
            integral: 0.0,
            prev_error: None,
            target,
            g_base: g_initial,
            g_star: g_initial,
            rate_limit: config.rate_limit,
            g_min,
            g_max,
            anti_windup: true,
        }
    }
}

/// PID on `target - omega` with range and rate limits. The integral is frozen
/// while the output is limited (when anti-windup is enabled).
pub fn pid_governor_step(state: &PidGovernorState, omega: f64, dt: f64) -> Result<(f64, PidGovernorState)> {
    if !(dt > 0.0) {
        return Err(VshpError::Config(format!("PID step must be positive, got {dt}")));
    }
    let error = state.target - omega;
    let derivative = state.prev_error.map_or(0.0, |e| (error - e) / dt);
    let candidate_integral = state.integral + error * dt;
    let raw = state.g_base + state.kp * error + state.ki * candidate_integral + state.kd * derivative;
    let max_move = state.rate_limit * dt;
    let limited = raw
        .clamp(state.g_star - max_move, state.g_star + max_move)
        .clamp(state.g_min, state.g_max);
    let saturated = limited != raw;
    let integral = if saturated && state.anti_windup {
        state.integral
    } else {
        candidate_integral
    };
    let next = PidGovernorState {
        integral,
        prev_error: Some(error),
        g_star: limited,
        ..state.clone()
    };
    Ok((limited, next))
}

/// One logged sample. Column names are the CSV header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub time_s: f64,
    pub delta_f: f64,
    pub g: f64,
    pub q: f64,
    pub q_hr: f64,
    pub h_st: f64,
    pub omega: f64,
    pub p_g_star: f64,
    pub p_pb: f64,
    pub g_star: f64,
    pub p_g: f64,
    pub delta_f_dot: f64,
    pub h: f64,
    pub p_m: f64,
    pub omega_ref: f64,
    pub h_grid: f64,
    pub xhat_g: f64,
    pub xhat_q: f64,
    pub xhat_q_hr: f64,
    pub xhat_h_st: f64,
    pub f_filt: f64,
    pub fdot_filt: f64,
    pub p_pb_hat: f64,
    pub eps_delta_f: f64,
    pub eps_g: f64,
    pub eps_q: f64,
    pub eps_q_hr: f64,
    pub eps_h_st: f64,
    pub eps_omega: f64,
    pub qp_solves: u64,
    pub qp_iterations: u64,
    pub qp_kkt_residual: f64,
    pub qp_status: String,
    pub controller_held: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub scenario: String,
    pub rows: Vec<TraceRow>,
    /// Reason the run stopped early, if it did.
    pub abort: Option<String>,
    pub wall_clock_s: f64,
}

impl SimTrace {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_rows_csv(&self.rows, writer)
    }

    pub fn column(&self, f: impl Fn(&TraceRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }
}

pub fn write_rows_csv<W: Write>(rows: &[TraceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv<R: std::io::Read>(reader: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize().map(|row| row.map_err(VshpError::from)).collect()
}

fn status_label(decision: &ControlDecision) -> &'static str {
    match (decision.diagnostics.held, decision.diagnostics.status) {
        (true, _) => "held",
        (false, Some(QpStatus::Solved)) => "solved",
        (false, Some(QpStatus::MaxIterations)) => "max-iterations",
        (false, Some(QpStatus::Infeasible)) => "infeasible",
        (false, None) => "none",
    }
}

enum Controller {
    Mpc(ControlDecision),
    Pid(PidGovernorState),
}

/// Applies the scenario overrides to a copy of `config`.
pub fn effective_config(spec: &ScenarioSpec, config: &Config) -> Result<Config> {
    let mut cfg = config.clone();
    for (key, value) in &spec.overrides {
        cfg.set_value(key, value.clone())?;
    }
    cfg.check()?;
    Ok(cfg)
}

/// Runs one scenario. Configuration problems are errors; numerical blow-up
/// ends the run early with `abort` set and the trace up to that point.
pub fn run_scenario(spec: &ScenarioSpec, config: &Config) -> Result<SimTrace> {
    let started = Instant::now();
    spec.validate()?;
    let cfg = effective_config(spec, config)?;
    if (cfg.mpc.dt - spec.mpc_dt).abs() > 1e-12 {
        return Err(VshpError::Config(format!(
            "scenario mpc_dt ({}) differs from the MPC model step ({})",
            spec.mpc_dt, cfg.mpc.dt
        )));
    }
    let mut params = cfg.plant_params()?;

    // initial stationary point on the speed reference curve
    let p_g0 = stationary_power(spec.initial_p_pb, spec.initial_p_g_star, &params);
    let init = solve_stationary_at_speed(
        spec.initial_p_pb,
        spec.initial_p_g_star,
        reference_speed(p_g0),
        &params,
        None,
    )?;
    let mut state = init.state;
    let mut inputs = init.inputs;

    let mut kf: KalmanModel = linearize_hydraulics(&params, &state, &cfg.estimator)?;
    kalman_gain(&mut kf)?;
    let mut est = EstimatorState {
        x_hat: [state.g, state.q, state.q_hr, state.h_st],
        f_filt: state.delta_f,
        fdot_filt: 0.0,
        p_pb_hat: spec.initial_p_pb,
    };

    let mut controller = match spec.controller {
        ControllerKind::Mpc => Controller::Mpc(ControlDecision::initial(inputs.g_star, inputs.p_g_star)),
        ControllerKind::PidBaseline => Controller::Pid(PidGovernorState::new(
            &cfg.pid,
            inputs.g_star,
            reference_speed(p_g0),
            cfg.mpc.u_low[crate::plant::input_index::G_STAR],
            cfg.mpc.u_high[crate::plant::input_index::G_STAR],
        )),
    };

    let n_total = (spec.duration / spec.sim_dt).round() as usize;
    let ratio = (spec.mpc_dt / spec.sim_dt).round() as usize;
    let mut next_event = 0;
    let mut qp_solves: u64 = 0;
    let mut rows = Vec::with_capacity(n_total + 1);
    let mut abort = None;

    for k in 0..=n_total {
        let t = k as f64 * spec.sim_dt;
        while next_event < spec.events.len() && spec.events[next_event].time <= t + 0.5 * spec.sim_dt {
            let ev = spec.events[next_event];
            match ev.field {
                EventField::PPb => inputs.p_pb = ev.value,
                EventField::HGrid => params.grid.h_grid = ev.value,
            }
            next_event += 1;
        }

        let (_, out_now) = match plant_eval(&state, &inputs, &params) {
            Ok(v) => v,
            Err(e) => {
                abort = Some(format!("t = {t:.3} s: {e}"));
                break;
            }
        };

        est = estimate_power_balance(
            &est,
            state.delta_f,
            out_now.delta_f_dot,
            out_now.p_g,
            &params.grid,
            spec.sim_dt,
        )?;
        if !est.is_finite() {
            abort = Some(format!("t = {t:.3} s: non-finite estimator state"));
            break;
        }

        if k % ratio == 0 {
            match &mut controller {
                Controller::Mpc(decision) => {
                    let estimates = PlantState {
                        delta_f: state.delta_f,
                        g: est.x_hat[0],
                        q: est.x_hat[1],
                        q_hr: est.x_hat[2],
                        h_st: est.x_hat[3],
                        omega: state.omega,
                    };
                    let next = mpc_step_measured(&estimates, est.p_pb_hat, out_now.p_g, decision, &params, &cfg.mpc)?;
                    if next.diagnostics.status.is_some() {
                        qp_solves += 1;
                    }
                    inputs.g_star = next.g_star;
                    inputs.p_g_star = next.p_g_star;
                    *decision = next;
                }
                Controller::Pid(pid) => {
                    pid.target = reference_speed(out_now.p_g);
                    let (g_star, next) = pid_governor_step(pid, state.omega, spec.mpc_dt)?;
                    inputs.g_star = g_star;
                    *pid = next;
                }
            }
        }

        let (_, out) = match plant_eval(&state, &inputs, &params) {
            Ok(v) => v,
            Err(e) => {
                abort = Some(format!("t = {t:.3} s: {e}"));
                break;
            }
        };
        let (eps, iterations, kkt, status, held) = match &controller {
            Controller::Mpc(d) => (
                d.slack_values,
                d.diagnostics.iterations as u64,
                d.diagnostics.kkt_residual,
                status_label(d),
                d.diagnostics.held,
            ),
            Controller::Pid(_) => ([0.0; STATE_DIM], 0, 0.0, "none", false),
        };
        rows.push(TraceRow {
            time_s: t,
            delta_f: state.delta_f,
            g: state.g,
            q: state.q,
            q_hr: state.q_hr,
            h_st: state.h_st,
            omega: state.omega,
            p_g_star: inputs.p_g_star,
            p_pb: inputs.p_pb,
            g_star: inputs.g_star,
            p_g: out.p_g,
            delta_f_dot: out.delta_f_dot,
            h: out.h,
            p_m: out.p_m,
            omega_ref: reference_speed(out.p_g),
            h_grid: params.grid.h_grid,
            xhat_g: est.x_hat[0],
            xhat_q: est.x_hat[1],
            xhat_q_hr: est.x_hat[2],
            xhat_h_st: est.x_hat[3],
            f_filt: est.f_filt,
            fdot_filt: est.fdot_filt,
            p_pb_hat: est.p_pb_hat,
            eps_delta_f: eps[0],
            eps_g: eps[1],
            eps_q: eps[2],
            eps_q_hr: eps[3],
            eps_h_st: eps[4],
            eps_omega: eps[5],
            qp_solves,
            qp_iterations: iterations,
            qp_kkt_residual: kkt,
            qp_status: status.to_string(),
            controller_held: held,
        });
        if k == n_total {
            break;
        }

        match step_plant_and_filter(
            &state,
            &est.x_hat,
            &inputs,
            &params,
            &kf,
            cfg.estimator.nonlinear_prediction,
            spec.sim_dt,
        ) {
            Ok((x_next, xhat_next)) => {
                state = x_next;
                est.x_hat = xhat_next;
            }
            Err(e) => {
                abort = Some(format!("t = {t:.3} s: {e}"));
                break;
            }
        }
    }

    Ok(SimTrace {
        scenario: spec.name.clone(),
        rows,
        abort,
        wall_clock_s: started.elapsed().as_secs_f64(),
    })
}

/// RK4 step of the plant and of the filter. The filter holds the
/// measurements and inputs sampled at the start of the step.
fn step_plant_and_filter(
    state: &PlantState,
    x_hat: &[f64; KF_STATE_DIM],
    inputs: &ControlInputs,
    params: &PlantParams,
    kf: &KalmanModel,
    nonlinear: bool,
    dt: f64,
) -> Result<(PlantState, [f64; KF_STATE_DIM])> {
    let (_, out) = plant_eval(state, inputs, params)?;
    let u_kf = [inputs.g_star, state.omega];
    let y_kf = [state.g, state.h_st, out.h, out.p_m];
    let next_state = integrate_step(state, inputs, params, dt)?;
    let next_hat = rk4(x_hat, dt, |xh: &[f64; KF_STATE_DIM]| {
        if nonlinear {
            observer_deriv(xh, &u_kf, &y_kf, kf, params)
        } else {
            Ok(kalman_deriv(xh, &u_kf, &y_kf, kf))
        }
    })?;
    if next_hat.iter().any(|v| !v.is_finite()) {
        return Err(VshpError::Domain("non-finite estimate after integration step".into()));
    }
    Ok((next_state, next_hat))
}
