//! Run metrics derived from a trace.

use serde::{Deserialize, Serialize};

use crate::plant::STATE_NAMES;
use crate::sim::{SimTrace, TraceRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub peak_abs_delta_f: f64,
    /// |Δf| at the final sample.
    pub steady_state_abs_delta_f: f64,
    pub peak_abs_omega_error: f64,
    pub max_h_st: f64,
    pub min_h_st: f64,
    /// Largest slack per state, keyed by state name.
    pub max_slack: Vec<(String, f64)>,
    pub qp_solves: u64,
    pub max_kkt_residual: f64,
    pub wall_clock_s: f64,
    pub aborted: Option<String>,
}

/// Largest value of `f` over the rows, or 0 for an empty trace.
fn max_of(rows: &[TraceRow], f: impl Fn(&TraceRow) -> f64) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().map(f).fold(f64::NEG_INFINITY, f64::max)
}

impl RunSummary {
    pub fn from_rows(scenario: &str, rows: &[TraceRow], wall_clock_s: f64) -> Self {
        let slacks: [fn(&TraceRow) -> f64; 6] = [
            |r| r.eps_delta_f,
            |r| r.eps_g,
            |r| r.eps_q,
            |r| r.eps_q_hr,
            |r| r.eps_h_st,
            |r| r.eps_omega,
        ];
        RunSummary {
            scenario: scenario.to_string(),
            peak_abs_delta_f: max_of(rows, |r| r.delta_f.abs()),
            steady_state_abs_delta_f: rows.last().map_or(0.0, |r| r.delta_f.abs()),
            peak_abs_omega_error: max_of(rows, |r| (r.omega - r.omega_ref).abs()),
            max_h_st: max_of(rows, |r| r.h_st),
            min_h_st: -max_of(rows, |r| -r.h_st),
            max_slack: STATE_NAMES
                .iter()
                .zip(slacks)
                .map(|(name, f)| (name.to_string(), max_of(rows, f)))
                .collect(),
            qp_solves: rows.last().map_or(0, |r| r.qp_solves),
            max_kkt_residual: max_of(rows, |r| r.qp_kkt_residual),
            wall_clock_s,
            aborted: None,
        }
    }

    pub fn from_trace(trace: &SimTrace) -> Self {
        RunSummary {
            aborted: trace.abort.clone(),
            ..Self::from_rows(&trace.scenario, &trace.rows, trace.wall_clock_s)
        }
    }

    pub fn slack(&self, state: &str) -> Option<f64> {
        self.max_slack.iter().find(|(n, _)| n == state).map(|(_, v)| *v)
    }
}
