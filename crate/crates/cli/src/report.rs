use std::fmt::Write;

use lvdelay::attractivity::{AttractivityVerdict, Certificate, ALPHA_BOX, EPSILON_RESOLUTION};
use lvdelay::equilibria::{enumerate_equilibria, EquilibriumCandidate, EquilibriumSet, DEGENERACY_RTOL, IDENTITY_RTOL};
use lvdelay::matrices::{
    classify_z_matrix, is_p_matrix, to_rows, MatrixClass, MatrixError, MatrixVerdict, StructureMatrices, DET_RTOL,
    EIG_TOL, INV_TOL,
};
use lvdelay::model::MASS_TOL;
use lvdelay::simulator::quad::KERNEL_TAIL_TOL;
use lvdelay::simulator::{BoundednessReport, ConvergenceReport, Termination};
use lvdelay::SystemSpec;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct Tool {
    pub name: &'static str,
    pub version: &'static str,
}

pub const TOOL: Tool = Tool {
    name: "lvdelay",
    version: env!("CARGO_PKG_VERSION"),
};

#[derive(Debug, Serialize)]
pub struct Tolerances {
    pub det_rtol: f64,
    pub inv_tol: f64,
    pub eig_tol: f64,
    pub degeneracy_rtol: f64,
    pub identity_rtol: f64,
    pub alpha_box: f64,
    pub epsilon_resolution: f64,
    pub kernel_mass_tol: f64,
    pub kernel_tail_tol: f64,
}

impl Tolerances {
    pub fn current() -> Self {
        Tolerances {
            det_rtol: DET_RTOL,
            inv_tol: INV_TOL,
            eig_tol: EIG_TOL,
            degeneracy_rtol: DEGENERACY_RTOL,
            identity_rtol: IDENTITY_RTOL,
            alpha_box: ALPHA_BOX,
            epsilon_resolution: EPSILON_RESOLUTION,
            kernel_mass_tol: MASS_TOL,
            kernel_tail_tol: KERNEL_TAIL_TOL,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SpecEcho {
    pub n: usize,
    pub b: Vec<f64>,
    pub mu: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub e: Vec<f64>,
    pub lambda: Vec<f64>,
    pub kernels: Vec<Vec<String>>,
    pub control_kernels: Vec<String>,
    pub notes: Vec<String>,
}

impl SpecEcho {
    pub fn of(spec: &SystemSpec) -> Self {
        SpecEcho {
            n: spec.n(),
            b: spec.b().to_vec(),
            mu: spec.mu().to_vec(),
            a: spec.a().to_vec(),
            c: spec.c().to_vec(),
            d: spec.d().to_vec(),
            e: spec.e().to_vec(),
            lambda: spec.lambda(),
            kernels: spec.kernels().iter().map(|r| r.iter().map(|k| k.to_string()).collect()).collect(),
            control_kernels: spec.control_kernels().iter().map(|k| k.to_string()).collect(),
            notes: spec.validation_notes(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct MatrixEntry {
    pub name: &'static str,
    /// `P` for the P-matrix test, `M` for the M-matrix classification.
    pub test: &'static str,
    pub rows: Vec<Vec<f64>>,
    pub verdict: MatrixVerdict,
}

#[derive(Debug, Serialize)]
pub struct AnalysisReport {
    pub tool: Tool,
    /// Species indices in this document count from 0.
    pub index_base: u8,
    pub tolerances: Tolerances,
    pub spec: SpecEcho,
    pub matrices: Vec<MatrixEntry>,
    pub equilibria: EquilibriumSet,
    pub verdict: AttractivityVerdict,
}

impl AnalysisReport {
    pub fn build(spec: &SystemSpec) -> Result<Self, MatrixError> {
        let s = StructureMatrices::build(spec);
        let mut matrices = Vec::new();
        for (name, m) in [("M0", &s.m0), ("M", &s.m)] {
            matrices.push(MatrixEntry {
                name,
                test: "P",
                rows: to_rows(m),
                verdict: is_p_matrix(m)?,
            });
        }
        for (name, m) in [("M0_minus", &s.m0_minus), ("M0_hat", &s.m0_hat), ("M_hat", &s.m_hat), ("M_check", &s.m_check)] {
            matrices.push(MatrixEntry {
                name,
                test: "M",
                rows: to_rows(m),
                verdict: classify_z_matrix(m)?,
            });
        }
        Ok(AnalysisReport {
            tool: TOOL,
            index_base: 0,
            tolerances: Tolerances::current(),
            spec: SpecEcho::of(spec),
            matrices,
            equilibria: enumerate_equilibria(spec)?,
            verdict: lvdelay::attractivity::verdict(spec)?,
        })
    }

    pub fn indeterminate(&self) -> bool {
        self.matrices.iter().any(|m| m.verdict.class == MatrixClass::Indeterminate) || !self.verdict.indeterminate.is_empty()
    }

    pub fn render_text(&self, out: &mut String) {
        let s = &self.spec;
        let _ = writeln!(out, "{} {}", self.tool.name, self.tool.version);
        let _ = writeln!(out, "system: n = {}", s.n);
        let _ = writeln!(out, "  b      = {}", fmt_vec(&s.b));
        let _ = writeln!(out, "  mu     = {}", fmt_vec(&s.mu));
        let _ = writeln!(out, "  lambda = {}", fmt_vec(&s.lambda));
        for (i, row) in s.a.iter().enumerate() {
            let _ = writeln!(out, "  a[{}]   = {}", i + 1, fmt_vec(row));
        }
        for note in &s.notes {
            let _ = writeln!(out, "  note: {note}");
        }
        let _ = writeln!(out, "matrices:");
        for m in &self.matrices {
            let mut line = format!("  {:<9} {}", m.name, m.verdict.class.label());
            if let Some(v) = &m.verdict.certificate {
                let _ = write!(line, "  v = {}", fmt_vec(v));
            }
            if let Some(f) = &m.verdict.failing_minor {
                let _ = write!(line, "  minor {} = {}", fmt_support(&f.indices), fmt_num(f.value));
            }
            let _ = writeln!(out, "{line}");
        }
        let _ = writeln!(out, "equilibria:");
        for c in &self.equilibria.candidates {
            let _ = writeln!(out, "  {}", fmt_candidate(c));
        }
        for sup in &self.equilibria.singular_supports {
            let _ = writeln!(out, "  support {} singular", fmt_support(sup));
        }
        render_verdict(&self.verdict, out);
    }
}

fn render_verdict(v: &AttractivityVerdict, out: &mut String) {
    let _ = writeln!(out, "verdict: {}", v.theorem.label());
    if !v.corollaries.is_empty() {
        let labels: Vec<&str> = v.corollaries.iter().map(|c| c.label()).collect();
        let _ = writeln!(out, "  corollaries: {}", labels.join(", "));
    }
    if let Some(eq) = &v.equilibrium {
        let role = if v.global_attractor { "global attractor" } else { "equilibrium" };
        let _ = writeln!(out, "  {role}: x* = {}, u* = {}", fmt_vec(&eq.x_star), fmt_vec(&eq.u_star));
    }
    if !v.extinct.is_empty() {
        let _ = writeln!(out, "  extinct: {}", fmt_support(&v.extinct));
    }
    match &v.certificate {
        Some(Certificate::Trivial { m0_minus }) => {
            let _ = writeln!(out, "  certificate: M0_minus {}", m0_minus.class.label());
        }
        Some(Certificate::EtaQ(c)) => {
            let _ = writeln!(
                out,
                "  certificate: eta = {}, q = {}, epsilon = {}",
                fmt_vec(&c.eta),
                fmt_vec(&c.q),
                fmt_num(c.epsilon)
            );
        }
        Some(Certificate::Alpha { alphas }) => {
            for a in alphas {
                let _ = writeln!(out, "  certificate: species {} alpha = {}, rate {}", a.q_index + 1, fmt_vec(&a.alpha), fmt_num(a.eta_rate));
            }
        }
        Some(Certificate::Composite { alphas, reduced, .. }) => {
            for a in alphas {
                let _ = writeln!(out, "  certificate: species {} alpha = {}, rate {}", a.q_index + 1, fmt_vec(&a.alpha), fmt_num(a.eta_rate));
            }
            let _ = writeln!(
                out,
                "  reduced: eta = {}, q = {}, epsilon = {}",
                fmt_vec(&reduced.eta),
                fmt_vec(&reduced.q),
                fmt_num(reduced.epsilon)
            );
        }
        Some(Certificate::Cascade(c)) => {
            let order = match &c.elimination_order {
                Some(o) => fmt_support(o),
                None => "none".into(),
            };
            let _ = writeln!(out, "  certificate: cascade, survivor {}, elimination order {order}", c.survivor + 1);
            for st in &c.stages {
                let _ = writeln!(out, "    species {}: alpha {}, rate {}", st.q + 1, fmt_num(st.alpha_q1), fmt_num(st.rate));
            }
        }
        None => {}
    }
    if !v.fired() {
        for c in v.checks.iter().filter(|c| !c.holds) {
            let _ = writeln!(out, "  failed: [{}] {}", c.theorem, c.hypothesis);
        }
    }
    for m in &v.indeterminate {
        let _ = writeln!(out, "  indeterminate: {m}");
    }
}

/// Numerical checks on one simulated trajectory.
#[derive(Debug, Serialize)]
pub struct SimulationSummary {
    pub t_end: f64,
    pub step: f64,
    pub steps: usize,
    pub history: String,
    pub terminated: Option<Termination>,
    pub final_x: Vec<f64>,
    pub final_u: Vec<f64>,
    /// Where the target equilibrium came from: verdict, saturated or injected.
    pub target_source: Option<&'static str>,
    pub target: Option<EquilibriumCandidate>,
    pub convergence: Option<ConvergenceReport>,
    pub boundedness: BoundednessReport,
    pub extinction: Vec<RateCheck>,
    pub lyapunov: Option<LyapunovFlags>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateCheck {
    pub species: usize,
    pub certified_rate: f64,
    /// `-slope` of `log x_q` over the trailing window.
    pub observed_rate: f64,
    pub slack: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovFlags {
    /// `U` or, for a reduced certificate, `V = U - H`.
    pub series: &'static str,
    pub tolerance: f64,
    pub max_increase: f64,
    pub monotone: bool,
    /// Same series with the control-kernel drift term restored.
    pub corrected_max_increase: f64,
    pub corrected_monotone: bool,
}

impl SimulationSummary {
    pub fn render_text(&self, out: &mut String) {
        let _ = writeln!(
            out,
            "simulation: T = {}, h = {}, {} steps, history {}",
            fmt_num(self.t_end),
            fmt_num(self.step),
            self.steps,
            self.history
        );
        if let Some(Termination::Blowup { t, variable }) = &self.terminated {
            let _ = writeln!(out, "  stopped: blow-up of state {} at t = {}", variable + 1, fmt_num(*t));
        }
        let _ = writeln!(out, "  final x = {}", fmt_vec(&self.final_x));
        let _ = writeln!(out, "  final u = {}", fmt_vec(&self.final_u));
        if let (Some(src), Some(t), Some(c)) = (self.target_source, &self.target, &self.convergence) {
            let _ = writeln!(
                out,
                "  target ({src}) x* = {}: {} (window residual {}, tol {})",
                fmt_vec(&t.x_star),
                if c.converged { "converged" } else { "not converged" },
                fmt_num(c.max_residual()),
                fmt_num(c.atol)
            );
        }
        let b = &self.boundedness;
        let _ = writeln!(out, "  bounded: {} (final-window growth {})", b.bounded, fmt_num(b.growth));
        for r in &self.extinction {
            let _ = writeln!(
                out,
                "  species {} decay rate {} vs certified {}: {}",
                r.species + 1,
                fmt_num(r.observed_rate),
                fmt_num(r.certified_rate),
                if r.holds { "ok" } else { "too slow" }
            );
        }
        if let Some(l) = &self.lyapunov {
            let _ = writeln!(
                out,
                "  {} non-increasing: {} (max increase {}, tol {}); with control drift term: {} ({})",
                l.series,
                l.monotone,
                fmt_num(l.max_increase),
                fmt_num(l.tolerance),
                l.corrected_monotone,
                fmt_num(l.corrected_max_increase)
            );
        }
    }
}

pub fn fmt_num(v: f64) -> String {
    if v == 0.0 || (1e-4..1e6).contains(&v.abs()) {
        let s = format!("{v:.6}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.4e}")
    }
}

pub fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| fmt_num(*x)).collect();
    format!("({})", parts.join(", "))
}

pub fn fmt_support(s: &[usize]) -> String {
    let parts: Vec<String> = s.iter().map(|i| (i + 1).to_string()).collect();
    format!("{{{}}}", parts.join(","))
}

fn fmt_candidate(c: &EquilibriumCandidate) -> String {
    let mut line = format!("support {:<7} x* = {}", fmt_support(&c.support), fmt_vec(&c.x_star));
    if !c.margins.is_empty() {
        let m: Vec<String> = c.margins.iter().map(|(q, v)| format!("{}: {}", q + 1, fmt_num(*v))).collect();
        let _ = write!(line, "  margins {}", m.join(", "));
    }
    if c.saturated {
        line.push_str("  saturated");
    }
    if c.degenerate {
        line.push_str("  degenerate");
    }
    line
}
