//! Sufficient conditions for global attractivity and partial extinction.
//!
//! Each check returns a certificate whose defining inequalities can be
//! re-evaluated by plain arithmetic ([`verify_certificate`]). [`verdict`]
//! runs the checks in a fixed priority order and records every hypothesis it
//! looked at, with margins, whether or not something fired.

use std::fmt;

use serde::Serialize;

use crate::equilibria::{self, cramer_table, EquilibriumCandidate, SaturatedOutcome};
use crate::lp::{self, LpOutcome};
use crate::matrices::{
    self, classify_z_matrix, is_p_matrix, lemma31_certificate, Mat, MatrixClass, MatrixError, MatrixVerdict,
    StructureMatrices,
};
use crate::model::{Kernel, SpecBuilder, SpecError, SystemSpec};

/// Upper bound on each multiplier in the extinction LP.
pub const ALPHA_BOX: f64 = 1e6;
/// Bisection resolution for the epsilon choice.
pub const EPSILON_RESOLUTION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Theorem {
    #[serde(rename = "T2_2i_trivial")]
    T22iTrivial,
    #[serde(rename = "T3_1")]
    T31,
    #[serde(rename = "T3_2_positive")]
    T32Positive,
    #[serde(rename = "T4_2_extinct")]
    T42Extinct,
    #[serde(rename = "T4_3")]
    T43,
    #[serde(rename = "T4_4_cascade")]
    T44Cascade,
    #[serde(rename = "none_applicable")]
    NoneApplicable,
}

impl Theorem {
    pub fn label(self) -> &'static str {
        match self {
            Theorem::T22iTrivial => "T2_2i_trivial",
            Theorem::T31 => "T3_1",
            Theorem::T32Positive => "T3_2_positive",
            Theorem::T42Extinct => "T4_2_extinct",
            Theorem::T43 => "T4_3",
            Theorem::T44Cascade => "T4_4_cascade",
            Theorem::NoneApplicable => "none_applicable",
        }
    }
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Planar specializations that hold alongside a theorem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Corollary {
    #[serde(rename = "C3_1i")]
    C31i,
    #[serde(rename = "C3_1ii")]
    C31ii,
    #[serde(rename = "C4_1")]
    C41,
}

impl Corollary {
    pub fn label(self) -> &'static str {
        match self {
            Corollary::C31i => "C3_1i",
            Corollary::C31ii => "C3_1ii",
            Corollary::C41 => "C4_1",
        }
    }
}

/// Weights `(eta, q)` for the quadratic Lyapunov functional, with the chosen
/// `epsilon`. All index vectors refer to `support_indices`, which is every
/// species for the full-system check and only the survivors for a reduced
/// check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EtaQCert {
    /// Species the weights refer to (0-based).
    pub indices: Vec<usize>,
    /// Support of the equilibrium (0-based).
    pub support: Vec<usize>,
    pub eta: Vec<f64>,
    pub q: Vec<f64>,
    pub epsilon: f64,
    /// `eta_i mu_i q_i - sum_j (eta_i |a~_ij| q_j + eta_j |a~_ji| q_i) / 2`.
    pub slack: Vec<f64>,
    /// Margins of the epsilon condition at the chosen `epsilon`, in the
    /// rescaled coordinates `x / q`.
    pub epsilon_margins: Vec<f64>,
    /// `mu_i q_i`.
    pub mu_bar: Vec<f64>,
    /// `a~_ij q_j` over `indices x indices`.
    pub a_tilde_bar: Vec<Vec<f64>>,
    /// `c_i q_i`.
    pub c_bar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaCert {
    pub q_index: usize,
    pub support: Vec<usize>,
    /// Multipliers over the support, in support order.
    pub alpha: Vec<f64>,
    /// `sum_i alpha_i b_i - b_q`.
    pub eta_rate: f64,
    /// `a_qj - sum_i alpha_i M_ij` for `j` in the support.
    pub support_slacks: Vec<f64>,
    /// `M_qj - sum_i alpha_i a_ij` for `j` off the support.
    pub off_support_slacks: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CascadeStage {
    pub q: usize,
    /// `a_q1 / (lambda_1 + a_11)`.
    pub alpha_q1: f64,
    /// `(lambda_1 + a_11) b_q - a_q1 b_1`.
    pub r_q: f64,
    /// `alpha_q1 b_1 - b_q = -r_q / (lambda_1 + a_11)`.
    pub rate: f64,
    /// `alpha_q1 a_1q - (lambda_q + a_qq)`, negative for a P-matrix.
    pub self_term: f64,
    /// `(j, alpha_q1 a_1j - a_qj)` for every other species `j`.
    pub cross_terms: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CascadeCert {
    pub survivor: usize,
    pub stages: Vec<CascadeStage>,
    /// An order in which the species can be removed so that every positive
    /// cross term multiplies an already-decaying density; `None` when no
    /// such order exists.
    pub elimination_order: Option<Vec<usize>>,
    /// `b_1 > 0` and `mu_1 > |a_11|`.
    pub upgraded: bool,
    /// Weights for the one-species reduced system when upgraded.
    pub reduced: Option<EtaQCert>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Certificate {
    /// `M0^-` is an M-matrix (the attached verdict carries `v` when
    /// non-singular).
    Trivial { m0_minus: MatrixVerdict },
    EtaQ(EtaQCert),
    Alpha { alphas: Vec<AlphaCert> },
    Composite {
        alphas: Vec<AlphaCert>,
        reduced: EtaQCert,
        /// `gamma_i(epsilon)` for the reduced system.
        gamma: Vec<f64>,
    },
    Cascade(CascadeCert),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisCheck {
    pub theorem: &'static str,
    pub hypothesis: String,
    pub holds: bool,
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttractivityVerdict {
    pub theorem: Theorem,
    pub corollaries: Vec<Corollary>,
    pub equilibrium: Option<EquilibriumCandidate>,
    /// The equilibrium attracts every positive solution.
    pub global_attractor: bool,
    /// Species certified to vanish (0-based).
    pub extinct: Vec<usize>,
    pub certificate: Option<Certificate>,
    pub checks: Vec<HypothesisCheck>,
    /// Matrix classifications that fell inside the tolerance band.
    pub indeterminate: Vec<String>,
}

impl AttractivityVerdict {
    pub fn fired(&self) -> bool {
        self.theorem != Theorem::NoneApplicable
    }

    pub fn eta_q(&self) -> Option<&EtaQCert> {
        match &self.certificate {
            Some(Certificate::EtaQ(c)) => Some(c),
            _ => None,
        }
    }

    pub fn alphas(&self) -> Vec<&AlphaCert> {
        match &self.certificate {
            Some(Certificate::Alpha { alphas }) | Some(Certificate::Composite { alphas, .. }) => alphas.iter().collect(),
            _ => Vec::new(),
        }
    }

    /// Guaranteed exponential decay rate for species `q`, if any.
    pub fn decay_rate(&self, q: usize) -> Option<f64> {
        if let Some(a) = self.alphas().into_iter().find(|a| a.q_index == q) {
            return Some(a.eta_rate);
        }
        match &self.certificate {
            Some(Certificate::Cascade(c)) => c.stages.iter().find(|s| s.q == q).map(|s| s.rate),
            _ => None,
        }
    }
}

/// Running record of hypotheses for one verdict.
#[derive(Default)]
struct Log {
    checks: Vec<HypothesisCheck>,
    indeterminate: Vec<String>,
}

impl Log {
    fn check(&mut self, theorem: &'static str, hypothesis: impl Into<String>, holds: bool, margin: Option<f64>) -> bool {
        self.checks.push(HypothesisCheck {
            theorem,
            hypothesis: hypothesis.into(),
            holds,
            margin,
        });
        holds
    }

    fn classify(&mut self, theorem: &'static str, name: &str, verdict: &MatrixVerdict, wanted: &[MatrixClass]) -> bool {
        if verdict.class == MatrixClass::Indeterminate {
            self.indeterminate.push(format!("{name} ({theorem})"));
        }
        let margin = verdict
            .failing_minor
            .as_ref()
            .map(|d| d.value)
            .or(verdict.min_real_eigenvalue);
        let holds = wanted.contains(&verdict.class);
        let wanted: Vec<&str> = wanted.iter().map(|c| c.label()).collect();
        self.check(
            theorem,
            format!("{name} is {} (found {})", wanted.join(" or "), verdict.class.label()),
            holds,
            margin,
        )
    }
}

fn p_matrix_verdict(s: &StructureMatrices) -> MatrixVerdict {
    is_p_matrix(&s.m).expect("dimension checked by the caller")
}

fn z_verdict(b: &Mat) -> MatrixVerdict {
    classify_z_matrix(b).expect("structure matrices are Z-matrices by construction")
}

fn fmt_support(s: &[usize]) -> String {
    let parts: Vec<String> = s.iter().map(|i| (i + 1).to_string()).collect();
    format!("{{{}}}", parts.join(","))
}

/// Largest `eps` in `(0, 1]` (to bisection accuracy) with `ok(eps)`, given
/// `ok(0+)` holds.
fn largest_epsilon(ok: impl Fn(f64) -> bool) -> Option<f64> {
    if ok(1.0) {
        return Some(1.0);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    // Shrink until some positive epsilon is accepted, then refine.
    while lo == 0.0 && hi > 1e-300 {
        hi *= 0.5;
        if ok(hi) {
            lo = hi;
            hi *= 2.0;
        }
    }
    if lo == 0.0 {
        return None;
    }
    while hi - lo > EPSILON_RESOLUTION * lo {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

/// `(eta, q)` weights and epsilon for a Z-matrix `b` over `indices`, where
/// `a_tilde(i, j)` gives the modified interactions and `c` the control
/// strengths, both indexed by species. `extra(i)` is added to the control
/// strength in the epsilon condition (off-support couplings of a reduced
/// system).
fn eta_q_cert(
    b: &Mat,
    indices: &[usize],
    support: &[usize],
    mu: &[f64],
    a_tilde: impl Fn(usize, usize) -> f64,
    c: &[f64],
    extra: impl Fn(usize) -> f64,
) -> Option<EtaQCert> {
    let cert = lemma31_certificate(b).ok()??;
    let (eta, q) = (cert.eta, cert.q);
    let p = indices.len();
    let mu_bar: Vec<f64> = (0..p).map(|k| mu[indices[k]] * q[k]).collect();
    let a_bar: Vec<Vec<f64>> = (0..p)
        .map(|k| (0..p).map(|l| a_tilde(indices[k], indices[l]) * q[l]).collect())
        .collect();
    let c_bar: Vec<f64> = (0..p).map(|k| c[indices[k]] * q[k]).collect();
    let slack: Vec<f64> = (0..p)
        .map(|i| {
            eta[i] * mu_bar[i]
                - (0..p)
                    .map(|j| 0.5 * (eta[i] * a_bar[i][j].abs() + eta[j] * a_bar[j][i].abs()))
                    .sum::<f64>()
        })
        .collect();
    if slack.iter().any(|s| *s <= 0.0) {
        return None;
    }
    let margins = |eps: f64| -> Vec<f64> {
        (0..p)
            .map(|i| {
                slack[i] - 0.5 * eps * eta[i] * (c_bar[i] + extra(indices[i]))
            })
            .collect()
    };
    let epsilon = largest_epsilon(|e| margins(e).iter().all(|m| *m > 0.0))?;
    let epsilon_margins = margins(epsilon);
    Some(EtaQCert {
        indices: indices.to_vec(),
        support: support.to_vec(),
        eta,
        q,
        epsilon,
        slack,
        epsilon_margins,
        mu_bar,
        a_tilde_bar: a_bar,
        c_bar,
    })
}

/// Global attractivity of a saturated equilibrium via `M0_hat_p`.
pub fn check_theorem_3_1(spec: &SystemSpec, eq: &EquilibriumCandidate) -> Option<EtaQCert> {
    check_3_1_logged(spec, eq, &mut Log::default())
}

fn check_3_1_logged(spec: &SystemSpec, eq: &EquilibriumCandidate, log: &mut Log) -> Option<EtaQCert> {
    if !eq.saturated {
        log.check("T3_1", format!("equilibrium on {} is saturated", fmt_support(&eq.support)), false, None);
        return None;
    }
    let s = StructureMatrices::build(spec);
    let b = s.m0_hat_p(&eq.support);
    let name = format!("M0_hat_p for support {}", fmt_support(&eq.support));
    if !log.classify("T3_1", &name, &z_verdict(&b), &[MatrixClass::NonsingularM]) {
        return None;
    }
    let all: Vec<usize> = (0..spec.n()).collect();
    let cert = eta_q_cert(&b, &all, &eq.support, spec.mu(), |i, j| s.modified_a(&eq.support, i, j), spec.c(), |_| 0.0);
    log.check("T3_1", "(eta, q) and epsilon found", cert.is_some(), cert.as_ref().map(|c| c.epsilon));
    cert
}

/// Existence and global attractivity of a positive equilibrium via `M0_hat`
/// and the Cramer numerators.
pub fn check_theorem_3_2(spec: &SystemSpec) -> Option<(EquilibriumCandidate, EtaQCert)> {
    check_3_2_logged(spec, &mut Log::default())
}

fn check_3_2_logged(spec: &SystemSpec, log: &mut Log) -> Option<(EquilibriumCandidate, EtaQCert)> {
    let n = spec.n();
    let s = StructureMatrices::build(spec);
    if !log.classify("T3_2", "M0_hat", &z_verdict(&s.m0_hat), &[MatrixClass::NonsingularM]) {
        return None;
    }
    let all: Vec<usize> = (0..n).collect();
    let table = cramer_table(spec, &all);
    let min_r = table.ri.iter().copied().fold(f64::INFINITY, f64::min);
    if !log.check("T3_2", "R_i^n > 0 for all i", min_r > 0.0 && table.r0 > 0.0, Some(min_r)) {
        return None;
    }
    let set = equilibria::enumerate_equilibria(spec).ok()?;
    let eq = set.candidates.into_iter().find(|c| c.support.len() == n)?;
    let cert = eta_q_cert(&s.m0_hat, &all, &all, spec.mu(), |i, j| spec.a()[i][j], spec.c(), |_| 0.0)?;
    Some((eq, cert))
}

/// Multipliers for exponential extinction of species `q` relative to
/// `support`, maximizing the certified rate.
pub fn find_alpha(spec: &SystemSpec, support: &[usize], q: usize) -> Option<AlphaCert> {
    find_alpha_with(spec, support, q, false)
}

/// As [`find_alpha`]; with `require_nonzero` the zero multiplier is never
/// returned.
pub fn find_alpha_with(spec: &SystemSpec, support: &[usize], q: usize, require_nonzero: bool) -> Option<AlphaCert> {
    assert!(!support.contains(&q), "q must lie off the support");
    let n = spec.n();
    let p = support.len();
    let b = spec.b();
    let a = spec.a();
    let m = StructureMatrices::build(spec).m;
    let off: Vec<usize> = (0..n).filter(|j| !support.contains(j)).collect();

    // Non-strict rows, shared by both passes.
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for &j in support {
        rows.push(support.iter().map(|&i| m[(i, j)]).collect());
        rhs.push(a[q][j]);
    }
    for &j in &off {
        rows.push(support.iter().map(|&i| a[i][j]).collect());
        rhs.push(m[(q, j)]);
    }
    for k in 0..p {
        let mut row = vec![0.0; p];
        row[k] = 1.0;
        rows.push(row);
        rhs.push(ALPHA_BOX);
    }
    let bs: Vec<f64> = support.iter().map(|&i| b[i]).collect();

    let mut feas_rows = rows.clone();
    let mut feas_rhs = rhs.clone();
    let mut strict = vec![false; rows.len()];
    feas_rows.push(bs.iter().map(|v| -v).collect());
    feas_rhs.push(-b[q]);
    strict.push(true);
    if require_nonzero {
        feas_rows.push(vec![-1.0; p]);
        feas_rhs.push(0.0);
        strict.push(true);
    }
    lp::linear_feasibility(&feas_rows, &feas_rhs, &strict).ok()??;

    let mut alpha = match lp::maximize(&bs, &rows, &rhs).ok()? {
        LpOutcome::Optimal { x, .. } => x,
        LpOutcome::Infeasible => return None,
    };
    let rate_of = |al: &[f64]| al.iter().zip(&bs).map(|(x, y)| x * y).sum::<f64>() - b[q];
    let is_zero = alpha.iter().all(|v| *v <= 1e-15);
    let proviso = spec.mu()[q] - matrices::negative_part(a[q][q]) > 0.0;
    if is_zero && (require_nonzero || !proviso) {
        // Keep at least half the best rate while pushing mass into alpha.
        let best = rate_of(&alpha);
        let mut r2 = rows.clone();
        let mut h2 = rhs.clone();
        r2.push(bs.iter().map(|v| -v).collect());
        h2.push(-(b[q] + 0.5 * best));
        alpha = match lp::maximize(&vec![1.0; p], &r2, &h2).ok()? {
            LpOutcome::Optimal { x, .. } => x,
            LpOutcome::Infeasible => return None,
        };
        if alpha.iter().all(|v| *v <= 1e-15) {
            return None;
        }
    }
    let eta_rate = rate_of(&alpha);
    if eta_rate <= lp::STRICT_SLACK {
        return None;
    }
    let cert = alpha_cert(spec, &m, support, q, alpha);
    let tol = 1e-12;
    if cert.support_slacks.iter().chain(&cert.off_support_slacks).any(|s| *s < -tol) {
        return None;
    }
    Some(cert)
}

fn alpha_cert(spec: &SystemSpec, m: &Mat, support: &[usize], q: usize, alpha: Vec<f64>) -> AlphaCert {
    let n = spec.n();
    let a = spec.a();
    let b = spec.b();
    let eta_rate = support.iter().zip(&alpha).map(|(&i, al)| al * b[i]).sum::<f64>() - b[q];
    let support_slacks = support
        .iter()
        .map(|&j| a[q][j] - support.iter().zip(&alpha).map(|(&i, al)| al * m[(i, j)]).sum::<f64>())
        .collect();
    let off_support_slacks = (0..n)
        .filter(|j| !support.contains(j))
        .map(|j| m[(q, j)] - support.iter().zip(&alpha).map(|(&i, al)| al * a[i][j]).sum::<f64>())
        .collect();
    AlphaCert {
        q_index: q,
        support: support.to_vec(),
        alpha,
        eta_rate,
        support_slacks,
        off_support_slacks,
    }
}

/// `(eta, q)` and `gamma_i(epsilon)` for the system restricted to `support`.
fn reduced_cert(spec: &SystemSpec, support: &[usize]) -> Option<(EtaQCert, Vec<f64>)> {
    let s = StructureMatrices::build(spec);
    let b = s.m0_hat_restricted(support);
    let a = spec.a();
    let off: Vec<usize> = (0..spec.n()).filter(|j| !support.contains(j)).collect();
    let off_sum = |i: usize| off.iter().map(|&j| a[i][j].abs()).sum::<f64>();
    let cert = eta_q_cert(&b, support, support, spec.mu(), |i, j| a[i][j], spec.c(), off_sum)?;
    let gamma = cert.epsilon_margins.clone();
    Some((cert, gamma))
}

/// Global attractivity of a boundary equilibrium with exponential
/// extinction of every absent species.
pub fn check_theorem_4_3(spec: &SystemSpec) -> Option<AttractivityVerdict> {
    check_4_3_logged(spec, &mut Log::default())
}

fn check_4_3_logged(spec: &SystemSpec, log: &mut Log) -> Option<AttractivityVerdict> {
    let s = StructureMatrices::build(spec);
    if !log.classify("T4_3", "M", &p_matrix_verdict(&s), &[MatrixClass::PMatrix]) {
        return None;
    }
    let outcome = equilibria::saturated_equilibrium(spec).ok()?;
    let eq = outcome.unique()?.clone();
    let boundary = !eq.is_trivial() && !eq.is_positive();
    if !log.check(
        "T4_3",
        format!("saturated equilibrium on {} is neither positive nor trivial", fmt_support(&eq.support)),
        boundary,
        None,
    ) {
        return None;
    }
    if !log.classify("T4_3", "M0_minus", &z_verdict(&s.m0_minus), &[MatrixClass::NonsingularM]) {
        return None;
    }
    let reduced = s.m0_hat_restricted(&eq.support);
    if !log.classify(
        "T4_3",
        &format!("M0_hat restricted to {}", fmt_support(&eq.support)),
        &z_verdict(&reduced),
        &[MatrixClass::NonsingularM],
    ) {
        return None;
    }
    let mut alphas = Vec::new();
    for q in eq.off_support() {
        let cert = find_alpha_with(spec, &eq.support, q, true);
        let ok = log.check(
            "T4_3",
            format!("nonzero alpha exists for q = {}", q + 1),
            cert.is_some(),
            cert.as_ref().map(|c| c.eta_rate),
        );
        if !ok {
            return None;
        }
        alphas.push(cert.unwrap());
    }
    let (reduced_cert, gamma) = reduced_cert(spec, &eq.support)?;
    let extinct = eq.off_support();
    Some(AttractivityVerdict {
        theorem: Theorem::T43,
        corollaries: Vec::new(),
        equilibrium: Some(eq),
        global_attractor: true,
        extinct,
        certificate: Some(Certificate::Composite {
            alphas,
            reduced: reduced_cert,
            gamma,
        }),
        checks: Vec::new(),
        indeterminate: Vec::new(),
    })
}

/// Removal order for the cascade: at each step pick a species whose cross
/// terms toward the remaining non-survivors are all non-positive.
fn elimination_order(stages: &[CascadeStage]) -> Option<Vec<usize>> {
    let mut alive: Vec<usize> = stages.iter().map(|s| s.q).collect();
    let mut order = Vec::new();
    while !alive.is_empty() {
        let pick = alive.iter().copied().find(|&q| {
            let stage = stages.iter().find(|s| s.q == q).unwrap();
            stage
                .cross_terms
                .iter()
                .all(|&(j, c)| c <= 0.0 || !alive.contains(&j))
        })?;
        order.push(pick);
        alive.retain(|&v| v != pick);
    }
    Some(order)
}

/// Extinction of every species except the first, by successive reduction.
pub fn check_theorem_4_4(spec: &SystemSpec) -> Option<AttractivityVerdict> {
    check_4_4_logged(spec, &mut Log::default())
}

fn check_4_4_logged(spec: &SystemSpec, log: &mut Log) -> Option<AttractivityVerdict> {
    let n = spec.n();
    if !log.check("T4_4", "n >= 2", n >= 2, None) {
        return None;
    }
    let s = StructureMatrices::build(spec);
    if !log.classify("T4_4", "M", &p_matrix_verdict(&s), &[MatrixClass::PMatrix]) {
        return None;
    }
    if !log.classify("T4_4", "M0_minus", &z_verdict(&s.m0_minus), &[MatrixClass::NonsingularM]) {
        return None;
    }
    let a = spec.a();
    let b = spec.b();
    let m11 = s.m[(0, 0)];
    let mut stages = Vec::new();
    for q in 1..n {
        if !log.check("T4_4", format!("a_{}1 >= 0", q + 1), a[q][0] >= 0.0, Some(a[q][0])) {
            return None;
        }
        let r_q = m11 * b[q] - a[q][0] * b[0];
        if !log.check("T4_4", format!("R_{}^{{2,{}}} < 0", q + 1, q + 1), r_q < 0.0, Some(r_q)) {
            return None;
        }
        let alpha_q1 = a[q][0] / m11;
        stages.push(CascadeStage {
            q,
            alpha_q1,
            r_q,
            rate: alpha_q1 * b[0] - b[q],
            self_term: alpha_q1 * a[0][q] - s.m[(q, q)],
            cross_terms: (1..n)
                .filter(|&j| j != q)
                .map(|j| (j, alpha_q1 * a[0][j] - a[q][j]))
                .collect(),
        });
    }
    let order = elimination_order(&stages);
    log.check("T4_4", "cross terms admit an elimination order", order.is_some(), None);
    let upgraded = b[0] > 0.0 && spec.mu()[0] > a[0][0].abs();
    log.check(
        "T4_4",
        "b_1 > 0 and mu_1 > |a_11| (global attractivity of E*,1)",
        upgraded,
        Some(spec.mu()[0] - a[0][0].abs()),
    );
    let reduced = if upgraded { reduced_cert(spec, &[0]).map(|(c, _)| c) } else { None };
    let set = equilibria::enumerate_equilibria(spec).ok()?;
    let eq = set.candidates.into_iter().find(|c| c.support == [0]);
    Some(AttractivityVerdict {
        theorem: Theorem::T44Cascade,
        corollaries: Vec::new(),
        equilibrium: eq,
        global_attractor: upgraded,
        extinct: (1..n).collect(),
        certificate: Some(Certificate::Cascade(CascadeCert {
            survivor: 0,
            elimination_order: order,
            stages,
            upgraded,
            reduced,
        })),
        checks: Vec::new(),
        indeterminate: Vec::new(),
    })
}

/// Extinction-only fallback: bounded solutions and an alpha certificate for
/// some absent species.
fn check_4_2_logged(spec: &SystemSpec, eq: &EquilibriumCandidate, log: &mut Log) -> Option<AttractivityVerdict> {
    let s = StructureMatrices::build(spec);
    if eq.is_trivial() || eq.is_positive() {
        return None;
    }
    if !log.classify("T4_2", "M0_minus (boundedness)", &z_verdict(&s.m0_minus), &[MatrixClass::NonsingularM]) {
        return None;
    }
    let mut alphas = Vec::new();
    for q in eq.off_support() {
        let cert = find_alpha(spec, &eq.support, q);
        log.check(
            "T4_2",
            format!("alpha exists for q = {}", q + 1),
            cert.is_some(),
            cert.as_ref().map(|c| c.eta_rate),
        );
        alphas.extend(cert);
    }
    if alphas.is_empty() {
        return None;
    }
    let extinct = alphas.iter().map(|c| c.q_index).collect();
    Some(AttractivityVerdict {
        theorem: Theorem::T42Extinct,
        corollaries: Vec::new(),
        equilibrium: Some(eq.clone()),
        global_attractor: false,
        extinct,
        certificate: Some(Certificate::Alpha { alphas }),
        checks: Vec::new(),
        indeterminate: Vec::new(),
    })
}

fn planar_corollaries(spec: &SystemSpec, v: &AttractivityVerdict) -> Vec<Corollary> {
    if spec.n() != 2 {
        return Vec::new();
    }
    let s = StructureMatrices::build(spec);
    let m_is_p = p_matrix_verdict(&s).class == MatrixClass::PMatrix;
    let mut out = Vec::new();
    let support = v.equilibrium.as_ref().map(|e| e.support.clone()).unwrap_or_default();
    match v.theorem {
        Theorem::T31 if m_is_p && support.len() == 1 => out.push(Corollary::C31i),
        Theorem::T31 | Theorem::T32Positive if m_is_p && support.len() == 2 => out.push(Corollary::C31ii),
        _ => {}
    }
    if matches!(v.theorem, Theorem::T43 | Theorem::T44Cascade) && m_is_p {
        let (a, b, mu) = (spec.a(), spec.b(), spec.mu());
        let holds = (0..2).all(|i| mu[i] - matrices::negative_part(a[i][i]) > 0.0)
            && a[1][0] >= 0.0
            && a[1][0] * b[0] > s.m[(0, 0)] * b[1]
            && b[0] > 0.0
            && mu[0] > a[0][0].abs();
        if holds {
            out.push(Corollary::C41);
        }
    }
    out
}

/// Run every check in priority order and report the first that fires.
pub fn verdict(spec: &SystemSpec) -> Result<AttractivityVerdict, MatrixError> {
    let n = spec.n();
    if n > matrices::MAX_ENUM_DIM {
        return Err(MatrixError::TooLarge(n));
    }
    let mut log = Log::default();
    let s = StructureMatrices::build(spec);
    let p_verdict = is_p_matrix(&s.m)?;
    let m_is_p = log.classify("T2_1", "M", &p_verdict, &[MatrixClass::PMatrix]);
    let outcome = equilibria::saturated_equilibrium(spec)?;
    let saturated: Vec<EquilibriumCandidate> = outcome.all().into_iter().cloned().collect();
    match &outcome {
        SaturatedOutcome::Multiple { equilibria } => {
            log.check("T2_1", format!("multiple saturated equilibria ({})", equilibria.len()), false, None);
        }
        SaturatedOutcome::NoneFound => {
            log.check("T2_1", "a saturated equilibrium exists", false, None);
        }
        SaturatedOutcome::Unique { .. } => {}
    }

    let finish = |mut v: AttractivityVerdict, log: Log| {
        v.checks = log.checks;
        v.indeterminate = log.indeterminate;
        v.corollaries = planar_corollaries(spec, &v);
        Ok(v)
    };

    // Trivial equilibrium.
    let b_nonpos = spec.b().iter().all(|v| *v <= 0.0);
    let bmax = spec.b().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m_is_p && log.check("T2_2i", "b_i <= 0 for all i", b_nonpos, Some(-bmax)) {
        let m0m = z_verdict(&s.m0_minus);
        if log.classify("T2_2i", "M0_minus", &m0m, &[MatrixClass::NonsingularM, MatrixClass::SingularM]) {
            let eq = saturated.iter().find(|e| e.is_trivial()).cloned();
            return finish(
                AttractivityVerdict {
                    theorem: Theorem::T22iTrivial,
                    corollaries: Vec::new(),
                    equilibrium: eq,
                    global_attractor: true,
                    extinct: (0..n).collect(),
                    certificate: Some(Certificate::Trivial { m0_minus: m0m }),
                    checks: Vec::new(),
                    indeterminate: Vec::new(),
                },
                log,
            );
        }
    }

    if let Some((eq, cert)) = check_3_2_logged(spec, &mut log) {
        return finish(
            AttractivityVerdict {
                theorem: Theorem::T32Positive,
                corollaries: Vec::new(),
                equilibrium: Some(eq),
                global_attractor: true,
                extinct: Vec::new(),
                certificate: Some(Certificate::EtaQ(cert)),
                checks: Vec::new(),
                indeterminate: Vec::new(),
            },
            log,
        );
    }

    for eq in &saturated {
        if let Some(cert) = check_3_1_logged(spec, eq, &mut log) {
            return finish(
                AttractivityVerdict {
                    theorem: Theorem::T31,
                    corollaries: Vec::new(),
                    equilibrium: Some(eq.clone()),
                    global_attractor: true,
                    extinct: eq.off_support(),
                    certificate: Some(Certificate::EtaQ(cert)),
                    checks: Vec::new(),
                    indeterminate: Vec::new(),
                },
                log,
            );
        }
    }

    if let Some(v) = check_4_3_logged(spec, &mut log) {
        return finish(v, log);
    }
    if let Some(v) = check_4_4_logged(spec, &mut log) {
        return finish(v, log);
    }
    if let Some(eq) = outcome.unique() {
        if let Some(v) = check_4_2_logged(spec, eq, &mut log) {
            return finish(v, log);
        }
    }
    finish(
        AttractivityVerdict {
            theorem: Theorem::NoneApplicable,
            corollaries: Vec::new(),
            equilibrium: None,
            global_attractor: false,
            extinct: Vec::new(),
            certificate: None,
            checks: Vec::new(),
            indeterminate: Vec::new(),
        },
        log,
    )
}

/// Re-evaluate a verdict's certificate by direct arithmetic on the spec.
pub fn verify_certificate(spec: &SystemSpec, v: &AttractivityVerdict) -> Result<(), String> {
    let tol = 1e-12;
    match &v.certificate {
        None => Ok(()),
        Some(Certificate::Trivial { m0_minus }) => {
            if let Some(vec) = &m0_minus.certificate {
                let s = StructureMatrices::build(spec);
                for i in 0..spec.n() {
                    let row: f64 = (0..spec.n()).map(|j| s.m0_minus[(i, j)] * vec[j]).sum();
                    if !(row > 0.0 && vec[i] > 0.0) {
                        return Err(format!("M0_minus certificate fails in row {}", i + 1));
                    }
                }
            }
            if spec.b().iter().any(|b| *b > 0.0) {
                return Err("some b_i is positive".into());
            }
            Ok(())
        }
        Some(Certificate::EtaQ(c)) => verify_eta_q(spec, c, |i, j| {
            StructureMatrices::build(spec).modified_a(&c.support, i, j)
        }, |_| 0.0),
        Some(Certificate::Alpha { alphas }) => alphas.iter().try_for_each(|a| verify_alpha(spec, a, tol)),
        Some(Certificate::Composite { alphas, reduced, gamma }) => {
            alphas.iter().try_for_each(|a| verify_alpha(spec, a, tol))?;
            if alphas.iter().any(|a| a.alpha.iter().all(|v| *v <= 0.0)) {
                return Err("zero alpha in a composite certificate".into());
            }
            let off: Vec<usize> = (0..spec.n()).filter(|j| !reduced.support.contains(j)).collect();
            verify_eta_q(spec, reduced, |i, j| spec.a()[i][j], |i| {
                off.iter().map(|&j| spec.a()[i][j].abs()).sum()
            })?;
            if gamma.iter().any(|g| *g <= 0.0) {
                return Err("gamma_i(epsilon) not positive".into());
            }
            Ok(())
        }
        Some(Certificate::Cascade(c)) => {
            let s = StructureMatrices::build(spec);
            let (a, b) = (spec.a(), spec.b());
            let m11 = s.m[(0, 0)];
            for st in &c.stages {
                let q = st.q;
                let r_q = m11 * b[q] - a[q][0] * b[0];
                if a[q][0] < 0.0 || r_q >= 0.0 {
                    return Err(format!("stage {} violates a_q1 >= 0, R_q < 0", q + 1));
                }
                let rate = st.alpha_q1 * b[0] - b[q];
                if rate <= 0.0 || (st.alpha_q1 * m11 - a[q][0]).abs() > tol * (1.0 + a[q][0].abs()) {
                    return Err(format!("stage {} alpha does not re-verify", q + 1));
                }
                if st.alpha_q1 * a[0][q] - s.m[(q, q)] >= 0.0 {
                    return Err(format!("stage {} self term is not negative", q + 1));
                }
            }
            Ok(())
        }
    }
}

fn verify_eta_q(
    spec: &SystemSpec,
    c: &EtaQCert,
    a_tilde: impl Fn(usize, usize) -> f64,
    extra: impl Fn(usize) -> f64,
) -> Result<(), String> {
    let idx = &c.indices;
    let p = idx.len();
    if c.eta.iter().chain(&c.q).any(|v| !(*v > 0.0)) {
        return Err("eta and q must be positive".into());
    }
    if !(c.epsilon > 0.0 && c.epsilon <= 1.0) {
        return Err("epsilon must lie in (0, 1]".into());
    }
    for i in 0..p {
        let (ii, eta, q) = (idx[i], &c.eta, &c.q);
        let lhs = eta[i] * spec.mu()[ii] * q[i];
        let rhs: f64 = (0..p)
            .map(|j| 0.5 * (eta[i] * a_tilde(ii, idx[j]).abs() * q[j] + eta[j] * a_tilde(idx[j], ii).abs() * q[i]))
            .sum();
        if lhs - rhs <= 0.0 {
            return Err(format!("(eta, q) inequality fails for species {}", ii + 1));
        }
        let eps_margin = lhs - rhs - 0.5 * c.epsilon * eta[i] * (spec.c()[ii] * q[i] + extra(ii));
        if eps_margin <= 0.0 {
            return Err(format!("epsilon condition fails for species {}", ii + 1));
        }
    }
    Ok(())
}

fn verify_alpha(spec: &SystemSpec, c: &AlphaCert, tol: f64) -> Result<(), String> {
    let s = StructureMatrices::build(spec);
    let fresh = alpha_cert(spec, &s.m, &c.support, c.q_index, c.alpha.clone());
    if c.alpha.iter().any(|v| *v < 0.0) {
        return Err("alpha has a negative entry".into());
    }
    if fresh.eta_rate <= 0.0 {
        return Err(format!("decay rate for q = {} is not positive", c.q_index + 1));
    }
    let scale = 1.0 + c.alpha.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if fresh
        .support_slacks
        .iter()
        .chain(&fresh.off_support_slacks)
        .any(|s| *s < -tol * scale)
    {
        return Err(format!("alpha inequalities fail for q = {}", c.q_index + 1));
    }
    Ok(())
}

/// Sup/inf bounds of time-varying coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientBounds {
    pub beta_sup: Vec<f64>,
    pub delta_sup: Vec<f64>,
    pub m_inf: Vec<f64>,
    pub alpha_inf: Vec<Vec<f64>>,
    pub k_inf: Vec<f64>,
    pub eps_inf: Vec<f64>,
}

/// Time-varying coefficient functions.
pub struct NonautonomousCoefficients<'a> {
    pub beta: Vec<&'a dyn Fn(f64) -> f64>,
    pub delta: Vec<&'a dyn Fn(f64) -> f64>,
    pub m: Vec<&'a dyn Fn(f64) -> f64>,
    pub alpha: Vec<Vec<&'a dyn Fn(f64) -> f64>>,
    pub k: Vec<&'a dyn Fn(f64) -> f64>,
    pub eps: Vec<&'a dyn Fn(f64) -> f64>,
}

/// Estimate bounds by sampling on `[0, t_end]` with step `dt`.
pub fn sample_bounds(coeffs: &NonautonomousCoefficients<'_>, t_end: f64, dt: f64) -> CoefficientBounds {
    let steps = (t_end / dt).ceil() as usize;
    let grid: Vec<f64> = (0..=steps).map(|k| (k as f64 * dt).min(t_end)).collect();
    let sup = |f: &&dyn Fn(f64) -> f64| grid.iter().map(|&t| f(t)).fold(f64::NEG_INFINITY, f64::max);
    let inf = |f: &&dyn Fn(f64) -> f64| grid.iter().map(|&t| f(t)).fold(f64::INFINITY, f64::min);
    CoefficientBounds {
        beta_sup: coeffs.beta.iter().map(sup).collect(),
        delta_sup: coeffs.delta.iter().map(sup).collect(),
        m_inf: coeffs.m.iter().map(inf).collect(),
        alpha_inf: coeffs.alpha.iter().map(|r| r.iter().map(inf).collect()).collect(),
        k_inf: coeffs.k.iter().map(inf).collect(),
        eps_inf: coeffs.eps.iter().map(inf).collect(),
    }
}

/// Autonomous comparison system whose saturated equilibrium dominates the
/// time-varying one.
pub fn nonautonomous_envelope(
    bounds: &CoefficientBounds,
    kernels: Vec<Vec<Kernel>>,
    control_kernels: Vec<Kernel>,
) -> Result<SystemSpec, SpecError> {
    let n = bounds.beta_sup.len();
    let all = [
        &bounds.beta_sup,
        &bounds.delta_sup,
        &bounds.m_inf,
        &bounds.k_inf,
        &bounds.eps_inf,
    ];
    if all.iter().any(|v| v.iter().any(|x| !x.is_finite()))
        || bounds.alpha_inf.iter().flatten().any(|x| !x.is_finite())
    {
        return Err(SpecError::Invariant("coefficient bounds must be finite".into()));
    }
    for i in 0..n {
        if !(bounds.m_inf[i] > 0.0) {
            return Err(SpecError::Invariant(format!("inf m must be positive (species {})", i + 1)));
        }
        if !(bounds.eps_inf[i] > 0.0) {
            return Err(SpecError::Invariant(format!("inf epsilon must be positive (species {})", i + 1)));
        }
        if !(bounds.delta_sup[i] > 0.0) {
            return Err(SpecError::Invariant(format!("sup delta must be positive (species {})", i + 1)));
        }
        if bounds.k_inf[i] < 0.0 {
            return Err(SpecError::Invariant(format!("inf k must be non-negative (species {})", i + 1)));
        }
    }
    SpecBuilder::new(bounds.beta_sup.clone(), bounds.m_inf.clone(), bounds.alpha_inf.clone())
        .controls(bounds.k_inf.clone(), bounds.delta_sup.clone(), bounds.eps_inf.clone())
        .kernels(kernels, control_kernels)
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SpecBuilder;

    fn ex51(alpha: f64) -> SystemSpec {
        SpecBuilder::new(vec![1.0, -1.25], vec![1.0, 1.0], vec![vec![0.5, 0.125], vec![-2.0, 0.5]])
            .controls(vec![alpha, 0.0], vec![1.0, 1.0], vec![1.0, 1.0])
            .build()
            .unwrap()
    }

    fn ex52(a: f64, gain: f64) -> SystemSpec {
        SpecBuilder::new(vec![2.0, 1.0], vec![3.0 - a, 1.0], vec![vec![a, 4.0], vec![2.0, 2.0]])
            .controls(vec![gain, 0.0], vec![1.0, 1.0], vec![1.0, 1.0])
            .build()
            .unwrap()
    }

    fn ex53(a12: f64, alpha: f64) -> SystemSpec {
        SpecBuilder::new(vec![1.0, 1.0 / 3.0], vec![1.0, 1.0], vec![vec![0.5, a12], vec![0.5, 0.5]])
            .controls(vec![alpha, alpha], vec![1.0, 1.0], vec![1.0, 1.0])
            .uniform_kernel(Kernel::gamma(1, 1.0))
            .build()
            .unwrap()
    }

    fn ex22() -> SystemSpec {
        SpecBuilder::new(vec![-2.0, -2.0], vec![1.0, 1.0], vec![vec![0.0, -4.0], vec![-4.0, 0.0]])
            .controls(vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0])
            .build()
            .unwrap()
    }

    #[test]
    fn example_5_2_alpha() {
        let c = find_alpha(&ex52(1.0, 0.0), &[0], 1).unwrap();
        assert!((c.alpha[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((c.eta_rate - 1.0 / 3.0).abs() < 1e-12);
        assert!(c.support_slacks[0].abs() < 1e-12);
        assert!((c.off_support_slacks[0] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn example_5_1_controlled_has_no_alpha() {
        assert_eq!(find_alpha(&ex51(0.1), &[0], 1), None);
    }

    #[test]
    fn alpha_impossible_when_invader_grows() {
        // b_2 > 0, a_2j <= 0 and b_1 <= 0.
        let spec = SpecBuilder::new(vec![-1.0, 1.0], vec![1.0, 1.0], vec![vec![0.0, 0.0], vec![-1.0, 0.0]])
            .build()
            .unwrap();
        assert_eq!(find_alpha(&spec, &[0], 1), None);
    }

    #[test]
    fn zero_alpha_needs_proviso() {
        // b_2 < 0 and a decoupled invader: alpha = 0 works, mu_2 > a_22^-.
        let spec = SpecBuilder::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![vec![0.0; 2]; 2]).build().unwrap();
        let c = find_alpha(&spec, &[0], 1).unwrap();
        assert!(c.eta_rate >= 1.0 - 1e-12);
    }

    #[test]
    fn example_5_1_controlled_fires_t31() {
        for alpha in [0.1, 0.3, 0.6] {
            let v = verdict(&ex51(alpha)).unwrap();
            assert_eq!(v.theorem, Theorem::T31, "alpha = {alpha}");
            let e = v.equilibrium.as_ref().unwrap();
            assert_eq!(e.support, vec![0]);
            assert!((e.x_star[0] - 1.0 / (1.5 + alpha)).abs() < 1e-14);
            assert!((e.u_star[0] - e.x_star[0]).abs() < 1e-15);
            assert_eq!(v.corollaries, vec![Corollary::C31i]);
            verify_certificate(&ex51(alpha), &v).unwrap();
        }
    }

    #[test]
    fn example_5_1_uncontrolled_t32_does_not_fire() {
        assert!(check_theorem_3_2(&ex51(0.0)).is_none());
    }

    #[test]
    fn example_5_2_fires_t43() {
        let spec = ex52(1.0, 0.0);
        let v = verdict(&spec).unwrap();
        assert_eq!(v.theorem, Theorem::T43);
        assert!((v.equilibrium.as_ref().unwrap().x_star[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((v.decay_rate(1).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(v.corollaries, vec![Corollary::C41]);
        verify_certificate(&spec, &v).unwrap();
    }

    #[test]
    fn example_5_2_controlled() {
        let spec = ex52(1.0, 0.5);
        let v = check_theorem_4_3(&spec).unwrap();
        assert!((v.equilibrium.unwrap().x_star[0] - 2.0 / 3.5).abs() < 1e-15);
    }

    #[test]
    fn example_5_2_t44_rate() {
        let v = check_theorem_4_4(&ex52(1.0, 0.0)).unwrap();
        assert!((v.decay_rate(1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(v.global_attractor);
    }

    #[test]
    fn t44_requires_nonnegative_a_q1() {
        assert!(check_theorem_4_4(&ex51(0.1)).is_none());
    }

    #[test]
    fn example_5_3_fires_t32() {
        for alpha in [0.1, 0.5, 1.0] {
            let spec = ex53(0.125, alpha);
            let v = verdict(&spec).unwrap();
            assert_eq!(v.theorem, Theorem::T32Positive);
            let det_m = (1.5 + alpha) * (1.5 + alpha) - 0.125 * 0.5;
            let x2 = alpha / (3.0 * det_m);
            let x1 = (1.0 + alpha + 0.5 - 0.125 / 3.0) / det_m;
            let e = v.equilibrium.unwrap();
            assert!((e.x_star[1] - x2).abs() < 1e-14 && (e.x_star[0] - x1).abs() < 1e-14);
        }
    }

    #[test]
    fn example_2_2_none_applicable() {
        let v = verdict(&ex22()).unwrap();
        assert_eq!(v.theorem, Theorem::NoneApplicable);
        assert!(v.checks.iter().any(|c| c.hypothesis.starts_with("M is P_matrix") && !c.holds));
        assert!(v.checks.iter().any(|c| c.hypothesis.starts_with("multiple saturated")));
    }

    #[test]
    fn scalar_decoupled_t32() {
        let spec = SpecBuilder::new(vec![1.0], vec![1.0], vec![vec![0.0]])
            .controls(vec![0.5], vec![1.0], vec![1.0])
            .build()
            .unwrap();
        let (eq, _) = check_theorem_3_2(&spec).unwrap();
        assert!((eq.x_star[0] - 1.0 / 1.5).abs() < 1e-15);
    }

    #[test]
    fn scalar_trivial() {
        let spec = SpecBuilder::new(vec![-1.0], vec![1.0], vec![vec![0.0]]).build().unwrap();
        assert_eq!(verdict(&spec).unwrap().theorem, Theorem::T22iTrivial);
    }

    #[test]
    fn strong_interactions_fail_t31() {
        let spec = SpecBuilder::new(vec![1.0, 1.0], vec![1.0, 1.0], vec![vec![0.0, 2.0], vec![2.0, 0.0]])
            .build()
            .unwrap();
        let e = equilibria::enumerate_equilibria(&spec).unwrap();
        for c in e.saturated() {
            assert!(check_theorem_3_1(&spec, c).is_none());
        }
    }

    #[test]
    fn epsilon_respects_control() {
        // Single species: slack eta mu q = 1 with eta = q = 1; c = 4 forces eps < 1/2.
        let spec = SpecBuilder::new(vec![1.0], vec![1.0], vec![vec![0.0]])
            .controls(vec![4.0], vec![1.0], vec![1.0])
            .build()
            .unwrap();
        let (_, c) = check_theorem_3_2(&spec).unwrap();
        assert!(c.epsilon < 0.5 && c.epsilon > 0.5 - 2e-6);
        assert!(c.epsilon_margins[0] > 0.0);
    }

    #[test]
    fn three_species_cascade() {
        let spec = SpecBuilder::new(
            vec![1.0, 0.2, 0.1],
            vec![1.0, 1.0, 1.0],
            vec![vec![0.2, 0.1, 0.1], vec![0.5, 0.2, 0.1], vec![0.5, 0.1, 0.2]],
        )
        .build()
        .unwrap();
        let v = check_theorem_4_4(&spec).unwrap();
        let Some(Certificate::Cascade(c)) = &v.certificate else { panic!() };
        assert_eq!(c.stages.len(), 2);
        assert!(c.elimination_order.is_some());
        assert!(c.upgraded);
        verify_certificate(&spec, &v).unwrap();
    }

    #[test]
    fn cascade_cross_terms_can_block_elimination() {
        // alpha_21 a_13 - a_23 = 0.5 / 1.2 * 0.1 > 0, and symmetrically.
        let spec = SpecBuilder::new(
            vec![1.0, 0.2, 0.1],
            vec![1.0, 1.0, 1.0],
            vec![vec![0.2, 0.1, 0.1], vec![0.5, 0.2, 0.0], vec![0.5, 0.0, 0.2]],
        )
        .build()
        .unwrap();
        let v = check_theorem_4_4(&spec).unwrap();
        let Some(Certificate::Cascade(c)) = &v.certificate else { panic!() };
        assert_eq!(c.elimination_order, None);
        assert!(c.stages[0].cross_terms[0].1 > 0.0);
    }

    #[test]
    fn envelope_of_constant_coefficients() {
        let bounds = CoefficientBounds {
            beta_sup: vec![1.0],
            delta_sup: vec![1.0],
            m_inf: vec![2.0],
            alpha_inf: vec![vec![0.5]],
            k_inf: vec![0.1],
            eps_inf: vec![3.0],
        };
        let spec = nonautonomous_envelope(&bounds, vec![vec![Kernel::dirac(1.0)]], vec![Kernel::dirac(1.0)]).unwrap();
        assert_eq!(spec.b(), &[1.0]);
        assert_eq!(spec.mu(), &[2.0]);
        assert_eq!(spec.e(), &[3.0]);
    }

    #[test]
    fn envelope_sampling_and_errors() {
        let beta = |t: f64| 1.0 + 0.1 * t.sin();
        let one = |_t: f64| 1.0;
        let half = |_t: f64| 0.5;
        let fading = |t: f64| 1.0 / (1.0 + t);
        let coeffs = NonautonomousCoefficients {
            beta: vec![&beta],
            delta: vec![&one],
            m: vec![&one],
            alpha: vec![vec![&half]],
            k: vec![&half],
            eps: vec![&one],
        };
        let bounds = sample_bounds(&coeffs, 20.0, 1e-3);
        assert!((bounds.beta_sup[0] - 1.1).abs() < 1e-7);
        let k = || (vec![vec![Kernel::dirac(1.0)]], vec![Kernel::dirac(1.0)]);
        let (kk, gg) = k();
        assert!((nonautonomous_envelope(&bounds, kk, gg).unwrap().b()[0] - 1.1).abs() < 1e-7);

        let coeffs = NonautonomousCoefficients { m: vec![&fading], ..coeffs };
        let mut bounds = sample_bounds(&coeffs, 1e3, 1.0);
        bounds.m_inf[0] = 0.0;
        let (kk, gg) = k();
        let err = nonautonomous_envelope(&bounds, kk, gg).unwrap_err();
        assert!(err.to_string().contains("inf m must be positive"));
    }
}
