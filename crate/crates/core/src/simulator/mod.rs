//! Numerical integration of the delay system and trajectory-level checks.
//!
//! - [`integrate`]: fixed-step RK4 with stored dense output.
//! - [`lyapunov`]: the quadratic/logarithmic functional `U = U1 + U2`, the
//!   reduced functional with its forcing term, and the extinction functional
//!   `V_{p,q}`.
//! - [`checks`]: convergence, boundedness, control sandwich, kernel-limit
//!   and step-halving diagnostics.

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::model::SpecError;

pub mod checks;
pub mod integrate;
pub mod lyapunov;
pub mod quad;

pub use checks::{
    boundedness_check, convergence_check, fit_log_slope, kernel_square_trace, l1_doubling, observed_order,
    sandwich_check, BoundednessReport, ConvergenceReport, L1Report, SandwichReport, TRAILING_WINDOW,
};
pub use integrate::{default_step, integrate, step_for_horizon, integrate_with, GammaRoute, SimOptions, Trajectory};
pub use lyapunov::{big_g, g, lyapunov_trace, lyapunov_trace_strided, max_increase, vpq_trace, LyapunovTrace, VpqTrace};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("step size must be positive and finite (got {0})")]
    InvalidStep(f64),
    #[error("end time must be non-negative and finite (got {0})")]
    InvalidHorizon(f64),
    #[error("step h = {h} exceeds a quarter of the smallest point delay tau = {tau}")]
    StepTooLarge { h: f64, tau: f64 },
    #[error("{var} became non-positive ({value}) at t = {t}; reduce the step size (h = {h})")]
    NonPositive { var: String, t: f64, value: f64, h: f64 },
    #[error("invalid history: {0}")]
    History(#[from] SpecError),
    #[error("{0}")]
    Mismatch(String),
}

/// Why a run stopped before its end time.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    /// State `variable` (x then u, 0-based) exceeded the blow-up ceiling.
    Blowup { t: f64, variable: usize },
}

/// 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write `t, x_1..x_n, u_1..u_n[, U1, U2, U, V]`, one row per grid point
/// (every `stride`-th). With a trace, rows are the trace's sample points.
pub fn write_csv<W: Write>(
    out: &mut W,
    traj: &Trajectory,
    trace: Option<&LyapunovTrace>,
    stride: usize,
) -> io::Result<()> {
    let n = traj.n();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=n).map(|i| format!("u_{i}")));
    if let Some(tr) = trace {
        header.extend(["U1", "U2", "U"].map(String::from));
        if tr.v.is_some() || tr.vpq.is_some() {
            header.push("V".into());
        }
    }
    writeln!(out, "{}", header.join(","))?;
    let rows: Vec<(usize, Option<usize>)> = match trace {
        Some(tr) => tr
            .grid_index
            .iter()
            .enumerate()
            .filter(|(r, _)| r % stride.max(1) == 0)
            .map(|(r, &k)| (k, Some(r)))
            .collect(),
        None => (0..traj.len()).step_by(stride.max(1)).map(|k| (k, None)).collect(),
    };
    for (k, r) in rows {
        let mut cells = vec![fmt_float(traj.t_grid[k])];
        cells.extend((0..n).map(|i| fmt_float(traj.x[i][k])));
        cells.extend((0..n).map(|i| fmt_float(traj.u[i][k])));
        if let (Some(tr), Some(r)) = (trace, r) {
            cells.push(fmt_float(tr.u1[r]));
            cells.push(fmt_float(tr.u2[r]));
            cells.push(fmt_float(tr.u[r]));
            if let Some(v) = tr.v.as_ref().or(tr.vpq.as_ref()) {
                cells.push(fmt_float(v[r]));
            }
        }
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}
