use std::fmt::Write;

use lvdelay::attractivity::{AttractivityVerdict, Certificate, EtaQCert, Theorem};
use lvdelay::equilibria::{saturated_equilibrium, EquilibriumCandidate};
use lvdelay::model::History;
use lvdelay::simulator::{
    boundedness_check, convergence_check, fit_log_slope, step_for_horizon, integrate_with, lyapunov_trace_strided,
    max_increase, GammaRoute, LyapunovTrace, SimError, SimOptions, Trajectory, TRAILING_WINDOW,
};
use lvdelay::{HistorySpec, SystemSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::report::{fmt_num, AnalysisReport, LyapunovFlags, RateCheck, SimulationSummary, Tool, TOOL};

/// Allowed shortfall of the observed decay rate against the certified one.
pub const RATE_SLACK: f64 = 0.05;
/// Samples below this sit in the subnormal floor and carry no slope.
const LOG_FLOOR: f64 = 1e-250;
/// Step budget used to pick `h` when none is given.
pub const MAX_STEPS: usize = 400_000;
/// Verify horizons when none is given. A degenerate equilibrium (a zero
/// saturation margin) is approached algebraically, not exponentially.
pub const VERIFY_T: f64 = 200.0;
pub const VERIFY_T_DEGENERATE: f64 = 20_000.0;
/// Cap on Lyapunov samples when no stride is requested.
const MAX_TRACE_SAMPLES: usize = 5000;

pub struct SimSettings {
    pub t_end: f64,
    pub h: f64,
    pub tol: f64,
    pub opts: SimOptions,
}

impl SimSettings {
    pub fn new(spec: &SystemSpec, t_end: f64, h: Option<f64>, tol: f64, quadrature: bool) -> Self {
        let opts = SimOptions {
            gamma_route: if quadrature { GammaRoute::Quadrature } else { GammaRoute::Chain },
            ..Default::default()
        };
        SimSettings {
            t_end,
            h: h.unwrap_or_else(|| step_for_horizon(spec, t_end, MAX_STEPS)),
            tol,
            opts,
        }
    }
}

pub struct RunOutcome {
    pub summary: SimulationSummary,
    pub traj: Trajectory,
    pub trace: Option<LyapunovTrace>,
}

/// The certificate whose functional should be non-increasing, with its
/// equilibrium.
fn lyapunov_target(v: &AttractivityVerdict) -> Option<(&EquilibriumCandidate, &EtaQCert)> {
    let eq = v.equilibrium.as_ref()?;
    match &v.certificate {
        Some(Certificate::EtaQ(c)) => Some((eq, c)),
        Some(Certificate::Composite { reduced, .. }) => Some((eq, reduced)),
        _ => None,
    }
}

fn observed_rate(traj: &Trajectory, q: usize) -> f64 {
    let k0 = ((traj.len() as f64) * (1.0 - TRAILING_WINDOW)) as usize;
    let (t, y): (Vec<f64>, Vec<f64>) = traj.t_grid[k0..]
        .iter()
        .zip(&traj.x[q][k0..])
        .filter(|(_, x)| **x > LOG_FLOOR)
        .map(|(t, x)| (*t, x.ln()))
        .unzip();
    -fit_log_slope(&t, &y)
}

/// Integrate once and run every applicable check. `lyap_stride = 0` picks
/// a stride automatically.
pub fn simulate(
    spec: &SystemSpec,
    verdict: &AttractivityVerdict,
    history: &HistorySpec,
    history_label: String,
    settings: &SimSettings,
    injected: Option<&EquilibriumCandidate>,
    lyap_stride: usize,
) -> Result<RunOutcome, SimError> {
    let traj = integrate_with(spec, history, settings.t_end, settings.h, &settings.opts)?;
    let (target_source, target) = match (injected, &verdict.equilibrium) {
        (Some(eq), _) => (Some("injected"), Some(eq.clone())),
        (None, Some(eq)) => (Some("verdict"), Some(eq.clone())),
        (None, None) => match saturated_equilibrium(spec).ok().and_then(|s| s.unique().cloned()) {
            Some(eq) => (Some("saturated"), Some(eq)),
            None => (None, None),
        },
    };
    let convergence = target.as_ref().map(|eq| convergence_check(&traj, eq, settings.tol));
    let extinction = verdict
        .extinct
        .iter()
        .filter_map(|&q| verdict.decay_rate(q).map(|rate| (q, rate)))
        .map(|(q, rate)| {
            let observed = observed_rate(&traj, q);
            RateCheck {
                species: q,
                certified_rate: rate,
                observed_rate: observed,
                slack: RATE_SLACK,
                holds: traj.terminated.is_none() && observed >= rate - RATE_SLACK,
            }
        })
        .collect();
    let mut trace = None;
    let mut lyapunov = None;
    if let Some((eq, cert)) = lyapunov_target(verdict) {
        if traj.terminated.is_none() {
            let stride = if lyap_stride > 0 { lyap_stride } else { traj.len().div_ceil(MAX_TRACE_SAMPLES).max(1) };
            let tr = lyapunov_trace_strided(&traj, eq, cert, stride)?;
            let inc = max_increase(tr.monotone_series());
            let corr = max_increase(&tr.corrected);
            lyapunov = Some(LyapunovFlags {
                series: if tr.v.is_some() { "V" } else { "U" },
                tolerance: tr.tolerance(),
                max_increase: inc,
                monotone: tr.is_monotone(),
                corrected_max_increase: corr,
                corrected_monotone: tr.is_corrected_monotone(),
            });
            trace = Some(tr);
        }
    }
    let summary = SimulationSummary {
        t_end: settings.t_end,
        step: settings.h,
        steps: traj.len() - 1,
        history: history_label,
        terminated: traj.terminated.clone(),
        final_x: traj.final_x(),
        final_u: traj.final_u(),
        target_source,
        target,
        convergence,
        boundedness: boundedness_check(&traj, None),
        extinction,
        lyapunov,
    };
    Ok(RunOutcome { summary, traj, trace })
}

/// Piecewise-linear history on `[-3, 0]` with values in `[0.05, 2]`.
pub fn random_history(n: usize, seed: u64) -> HistorySpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times = vec![-3.0, -2.0, -1.0, 0.0];
    let mut one = || {
        let values: Vec<f64> = (0..times.len()).map(|_| rng.gen_range(0.05..2.0)).collect();
        History::table(times.clone(), values).expect("valid table")
    };
    let x = (0..n).map(|_| one()).collect();
    let u = (0..n).map(|_| one()).collect();
    HistorySpec { x, u }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Skip,
    Indeterminate,
}

#[derive(Debug, Serialize)]
pub struct VerifyRun {
    pub seed: u64,
    pub pass: bool,
    pub failures: Vec<String>,
    pub simulation: SimulationSummary,
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub tool: Tool,
    pub status: Status,
    pub notice: Option<String>,
    pub analysis: AnalysisReport,
    pub runs: Vec<VerifyRun>,
}

impl VerifyReport {
    pub fn render_text(&self, out: &mut String) {
        self.analysis.render_text(out);
        if let Some(n) = &self.notice {
            let _ = writeln!(out, "notice: {n}");
        }
        for r in &self.runs {
            let _ = writeln!(out, "run seed {}: {}", r.seed, if r.pass { "PASS" } else { "FAIL" });
            r.simulation.render_text(out);
            for f in &r.failures {
                let _ = writeln!(out, "  failure: {f}");
            }
        }
        let label = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
            Status::Indeterminate => "INDETERMINATE",
        };
        let _ = writeln!(out, "overall: {label}");
    }
}

fn run_failures(summary: &SimulationSummary, theorem: Theorem) -> Vec<String> {
    let mut out = Vec::new();
    if summary.terminated.is_some() {
        out.push("run terminated before the end time".into());
    }
    if let Some(c) = &summary.convergence {
        if !c.converged {
            out.push(format!(
                "no convergence to the {} equilibrium: window residual {} > {}",
                summary.target_source.unwrap_or("target"),
                fmt_num(c.max_residual()),
                fmt_num(c.atol)
            ));
        }
    }
    for r in summary.extinction.iter().filter(|r| !r.holds) {
        out.push(format!(
            "species {} decays at {} < certified {} - {}",
            r.species + 1,
            fmt_num(r.observed_rate),
            fmt_num(r.certified_rate),
            r.slack
        ));
    }
    if matches!(theorem, Theorem::T31 | Theorem::T32Positive) {
        match &summary.lyapunov {
            Some(l) if !l.corrected_monotone => out.push(format!(
                "Lyapunov functional increases by {} (tolerance {})",
                fmt_num(l.corrected_max_increase),
                fmt_num(l.tolerance)
            )),
            Some(_) => {}
            None => out.push("no Lyapunov trace".into()),
        }
    }
    out
}

/// Simulate from `runs` seeded histories (concurrently) and check each run
/// against the verdict.
pub fn verify(
    spec: &SystemSpec,
    analysis: AnalysisReport,
    settings: &SimSettings,
    seed: u64,
    runs: u64,
    injected: Option<Vec<f64>>,
) -> Result<VerifyReport, SimError> {
    if analysis.indeterminate() {
        return Ok(VerifyReport {
            tool: TOOL,
            status: Status::Indeterminate,
            notice: Some("a matrix classification is indeterminate; nothing to verify".into()),
            analysis,
            runs: Vec::new(),
        });
    }
    let verdict = &analysis.verdict;
    if !verdict.fired() {
        return Ok(VerifyReport {
            tool: TOOL,
            status: Status::Skip,
            notice: Some("no verdict fired; nothing to verify".into()),
            analysis,
            runs: Vec::new(),
        });
    }
    let injected = injected.map(|x| {
        let base = verdict.equilibrium.clone();
        let u: Vec<f64> = (0..spec.n()).map(|i| spec.d()[i] * x[i] / spec.e()[i]).collect();
        EquilibriumCandidate {
            support: (0..spec.n()).filter(|&i| x[i] > 0.0).collect(),
            margins: base.map(|b| b.margins).unwrap_or_default(),
            x_star: x,
            u_star: u,
            saturated: false,
            degenerate: false,
            residual: f64::NAN,
        }
    });
    let seeds: Vec<u64> = (0..runs).map(|k| seed + k).collect();
    let results: Vec<Result<RunOutcome, SimError>> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&sd| {
                let injected = injected.as_ref();
                s.spawn(move || {
                    let hist = random_history(spec.n(), sd);
                    log::debug!("verify: seed {sd}");
                    simulate(spec, verdict, &hist, format!("random (seed {sd})"), settings, injected, 0)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    let mut out = Vec::new();
    for (sd, r) in seeds.into_iter().zip(results) {
        let summary = r?.summary;
        let failures = run_failures(&summary, verdict.theorem);
        out.push(VerifyRun {
            seed: sd,
            pass: failures.is_empty(),
            failures,
            simulation: summary,
        });
    }
    let status = if out.iter().all(|r| r.pass) { Status::Pass } else { Status::Fail };
    Ok(VerifyReport {
        tool: TOOL,
        status,
        notice: None,
        analysis,
        runs: out,
    })
}
