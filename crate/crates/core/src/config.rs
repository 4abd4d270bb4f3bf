//! JSON configuration document, dotted-path overrides and validation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Result, VshpError};
use crate::estimation::EstimatorConfig;
use crate::mpc::MpcConfig;
use crate::plant::{
    calibrate_rated_point, ActuatorParams, GeneratorParams, GridParams, PlantParams, TurbineParams, VsgParams,
    WaterwayParams,
};

/// Scenario-level defaults shared by the built-in scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioDefaults {
    pub duration: f64,
    pub sim_dt: f64,
    /// Disturbance power before any event.
    pub initial_p_pb: f64,
    pub initial_p_g_star: f64,
    /// Load reduction applied at t = 0 and removed at `event_time`.
    pub load_step: f64,
    pub event_time: f64,
    pub generator_loss_p_pb_step: f64,
    pub generator_loss_h_grid: f64,
}

impl Default for ScenarioDefaults {
    fn default() -> Self {
        ScenarioDefaults {
            duration: 120.0,
            sim_dt: 0.01,
            initial_p_pb: -0.8,
            initial_p_g_star: 0.8,
            load_step: 0.45,
            event_time: 60.0,
            generator_loss_p_pb_step: -0.3,
            generator_loss_h_grid: 19.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidConfig {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Symmetric guide-vane reference rate limit (p.u./s).
    pub rate_limit: f64,
}

impl Default for PidConfig {
    fn default() -> Self {
        PidConfig {
            kp: 2.0,
            ki: 0.5,
            kd: 0.0,
            rate_limit: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub waterway: WaterwayParams,
    pub turbine: TurbineParams,
    pub generator: GeneratorParams,
    pub vsg: VsgParams,
    pub grid: GridParams,
    pub actuator: ActuatorParams,
    pub mpc: MpcConfig,
    pub estimator: EstimatorConfig,
    pub scenario: ScenarioDefaults,
    pub pid: PidConfig,
}

/// Validation outcome of one configuration group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub group: &'static str,
    pub errors: Vec<String>,
}

impl GroupReport {
    pub fn passed(&self) -> bool {
        self.errors.is_empty()
    }
}

fn check(errors: &mut Vec<String>, ok: bool, msg: impl FnOnce() -> String) {
    if !ok {
        errors.push(msg());
    }
}

fn positive(errors: &mut Vec<String>, name: &str, v: f64) {
    check(errors, v > 0.0 && v.is_finite(), || {
        format!("{name} must be positive, got {v}")
    });
}

fn nonneg(errors: &mut Vec<String>, name: &str, v: f64) {
    check(errors, v >= 0.0 && v.is_finite(), || {
        format!("{name} must be >= 0, got {v}")
    });
}

impl Config {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| VshpError::Config(format!("parse error: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| VshpError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| VshpError::Config(format!("{}: parse error: {e}", path.display())))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    /// Plant parameters with the turbine constants calibrated to the rated point.
    pub fn plant_params(&self) -> Result<PlantParams> {
        calibrate_rated_point(&self.raw_plant_params())
    }

    pub fn raw_plant_params(&self) -> PlantParams {
        PlantParams {
            waterway: self.waterway,
            turbine: self.turbine,
            generator: self.generator,
            vsg: self.vsg,
            grid: self.grid,
            actuator: self.actuator,
        }
    }

    /// Sets `group.field[.index]` to `value`. The value is parsed as JSON
    /// when possible and taken as a string otherwise.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let parsed: Value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        self.set_value(key, parsed)
    }

    pub fn set_value(&mut self, key: &str, value: Value) -> Result<()> {
        let mut doc = serde_json::to_value(&*self)?;
        let mut node = &mut doc;
        let segments: Vec<&str> = key.split('.').collect();
        if segments.len() < 2 || segments.iter().any(|s| s.is_empty()) {
            return Err(VshpError::Config(format!(
                "override key `{key}` must look like group.field"
            )));
        }
        for seg in &segments {
            node = match node {
                Value::Object(map) => map
                    .get_mut(*seg)
                    .ok_or_else(|| VshpError::Config(format!("unknown configuration key `{key}` (at `{seg}`)")))?,
                Value::Array(items) => {
                    let idx: usize = seg
                        .parse()
                        .map_err(|_| VshpError::Config(format!("`{seg}` in `{key}` is not an array index")))?;
                    let len = items.len();
                    items.get_mut(idx).ok_or_else(|| {
                        VshpError::Config(format!("index {idx} in `{key}` out of range (length {len})"))
                    })?
                }
                _ => return Err(VshpError::Config(format!("`{key}` descends into a scalar at `{seg}`"))),
            };
        }
        *node = value;
        *self = serde_json::from_value(doc).map_err(|e| VshpError::Config(format!("override `{key}`: {e}")))?;
        Ok(())
    }

    /// Checks every documented invariant and reports per group.
    pub fn validate(&self) -> Vec<GroupReport> {
        let mut reports = Vec::new();

        let mut e = Vec::new();
        let w = &self.waterway;
        for (n, v) in [("t_g", w.t_g), ("c_s", w.c_s), ("t_w1", w.t_w1), ("t_w2", w.t_w2)] {
            positive(&mut e, n, v);
        }
        for (n, v) in [("f_0", w.f_0), ("f_p1", w.f_p1), ("f_p2", w.f_p2)] {
            nonneg(&mut e, n, v);
        }
        reports.push(GroupReport {
            group: "waterway",
            errors: e,
        });

        let mut e = Vec::new();
        let t = &self.turbine;
        for (n, v) in [("h_r_over_h_rt", t.h_r_over_h_rt), ("q_r_over_q_rt", t.q_r_over_q_rt)] {
            positive(&mut e, n, v);
        }
        check(
            &mut e,
            t.alpha_1r > 0.0 && t.alpha_1r < std::f64::consts::FRAC_PI_2,
            || format!("alpha_1r must lie in (0, pi/2), got {}", t.alpha_1r),
        );
        nonneg(&mut e, "sigma", t.sigma);
        let arg = t.q_r_over_q_rt * self.actuator.g_max * t.alpha_1r.sin();
        check(&mut e, arg <= 1.0, || {
            format!("flow angle undefined up to g_max: q_r_over_q_rt * g_max * sin(alpha_1r) = {arg} > 1")
        });
        if let Err(err) = calibrate_rated_point(&self.raw_plant_params()) {
            e.push(format!("rated-point calibration failed: {err}"));
        }
        reports.push(GroupReport {
            group: "turbine",
            errors: e,
        });

        let mut e = Vec::new();
        let g = &self.generator;
        positive(&mut e, "h_gen", g.h_gen);
        nonneg(&mut e, "d_gen", g.d_gen);
        positive(&mut e, "omega_ref", g.omega_ref);
        reports.push(GroupReport {
            group: "generator",
            errors: e,
        });

        let mut e = Vec::new();
        let v = &self.vsg;
        nonneg(&mut e, "k_vsg_p", v.k_vsg_p);
        nonneg(&mut e, "k_vsg_d", v.k_vsg_d);
        positive(&mut e, "f_star", v.f_star);
        check(&mut e, v.p_g_min < v.p_g_max, || {
            format!("p_g_min ({}) must be below p_g_max ({})", v.p_g_min, v.p_g_max)
        });
        reports.push(GroupReport {
            group: "vsg",
            errors: e,
        });

        let mut e = Vec::new();
        let gr = &self.grid;
        for (n, x) in [
            ("h_grid", gr.h_grid),
            ("s_n", gr.s_n),
            ("omega_s", gr.omega_s),
            ("omega_f", gr.omega_f),
            ("omega_fdot", gr.omega_fdot),
        ] {
            positive(&mut e, n, x);
        }
        nonneg(&mut e, "d_m", gr.d_m);
        check(&mut e, self.vsg.k_vsg_p + gr.d_m > 0.0, || {
            "k_vsg_p + d_m must be positive for a unique frequency equilibrium".into()
        });
        reports.push(GroupReport {
            group: "grid",
            errors: e,
        });

        let mut e = Vec::new();
        let a = &self.actuator;
        check(&mut e, a.g_min > 0.0 && a.g_min < a.g_max, || {
            format!(
                "actuator range must satisfy 0 < g_min < g_max, got [{}, {}]",
                a.g_min, a.g_max
            )
        });
        reports.push(GroupReport {
            group: "actuator",
            errors: e,
        });

        let mut e = Vec::new();
        if let Err(err) = self.mpc.validate() {
            e.push(err.to_string());
        }
        reports.push(GroupReport {
            group: "mpc",
            errors: e,
        });

        let mut e = Vec::new();
        if let Err(err) = self.estimator.validate() {
            e.push(err.to_string());
        }
        reports.push(GroupReport {
            group: "estimator",
            errors: e,
        });

        let mut e = Vec::new();
        let s = &self.scenario;
        positive(&mut e, "duration", s.duration);
        positive(&mut e, "sim_dt", s.sim_dt);
        positive(&mut e, "generator_loss_h_grid", s.generator_loss_h_grid);
        nonneg(&mut e, "event_time", s.event_time);
        if s.sim_dt > 0.0 {
            let ratio = self.mpc.dt / s.sim_dt;
            check(&mut e, ratio >= 1.0 && (ratio - ratio.round()).abs() < 1e-9, || {
                format!(
                    "mpc.dt ({}) must be an integer multiple of sim_dt ({})",
                    self.mpc.dt, s.sim_dt
                )
            });
        }
        for (n, x) in [
            ("initial_p_pb", s.initial_p_pb),
            ("initial_p_g_star", s.initial_p_g_star),
            ("load_step", s.load_step),
            ("generator_loss_p_pb_step", s.generator_loss_p_pb_step),
        ] {
            check(&mut e, x.is_finite(), || format!("{n} must be finite"));
        }
        reports.push(GroupReport {
            group: "scenario",
            errors: e,
        });

        let mut e = Vec::new();
        let p = &self.pid;
        for (n, x) in [("kp", p.kp), ("ki", p.ki), ("kd", p.kd)] {
            nonneg(&mut e, n, x);
        }
        positive(&mut e, "rate_limit", p.rate_limit);
        reports.push(GroupReport {
            group: "pid",
            errors: e,
        });

        reports
    }

    /// First validation failure as an error, if any.
    pub fn check(&self) -> Result<()> {
        let failures: Vec<String> = self
            .validate()
            .into_iter()
            .flat_map(|r| r.errors.into_iter().map(move |m| format!("{}: {m}", r.group)))
            .collect();
        if failures.is_empty() {
            Ok(())
        } else {
            Err(VshpError::Config(failures.join("; ")))
        }
    }
}
