//! System parameters, delay kernels and initial histories.
//!
//! A [`SystemSpec`] describes the controlled Lotka-Volterra system
//!
//! ```text
//! x_i' = x_i (b_i - mu_i x_i - sum_j a_ij (K_ij * x_j)(t) - c_i (G_i * u_i)(t))
//! u_i' = -e_i u_i + d_i x_i
//! ```
//!
//! where `(K * y)(t) = int_0^inf K(s) y(t - s) ds`. Specs are validated on
//! construction and immutable afterwards.
//!
//! Configuration documents are TOML. Every per-species list is positional and
//! the error messages name entries 1-based (`mu[2]`, `kernels.K[1][2]`), which
//! is also how the documents are described to users.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Kernels must integrate to one within this tolerance.
pub const MASS_TOL: f64 = 1e-12;

/// Table kernels whose trapezoid mass is within this distance of one are
/// renormalized (with a warning); anything further off is rejected.
pub const RENORMALIZE_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{0}")]
    Invariant(String),
}

fn invariant(msg: impl Into<String>) -> SpecError {
    SpecError::Invariant(msg.into())
}

/// Piecewise-linear density on `[nodes[0], nodes[last]]`, zero elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct TableKernel {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Trapezoid mass of the weights as supplied, before any renormalization.
    raw_mass: f64,
}

impl TableKernel {
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self, String> {
        if nodes.len() < 2 {
            return Err("needs at least two nodes".into());
        }
        if nodes.len() != weights.len() {
            return Err(format!(
                "nodes and weights differ in length ({} vs {})",
                nodes.len(),
                weights.len()
            ));
        }
        if nodes.iter().chain(&weights).any(|v| !v.is_finite()) {
            return Err("nodes and weights must be finite".into());
        }
        if nodes[0] < 0.0 {
            return Err("nodes must be >= 0".into());
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err("nodes must be strictly increasing".into());
        }
        if let Some(k) = weights.iter().position(|&w| w < 0.0) {
            return Err(format!("weights[{}] must be >= 0", k + 1));
        }
        let raw_mass = trapezoid(&nodes, &weights);
        let dev = (raw_mass - 1.0).abs();
        let weights = if dev <= MASS_TOL {
            weights
        } else if dev <= RENORMALIZE_TOL {
            log::warn!("table kernel mass {raw_mass} renormalized to 1");
            weights.iter().map(|w| w / raw_mass).collect()
        } else {
            return Err(format!("mass {raw_mass} differs from 1 by more than {RENORMALIZE_TOL}"));
        };
        Ok(TableKernel {
            nodes,
            weights,
            raw_mass,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn was_renormalized(&self) -> bool {
        (self.raw_mass - 1.0).abs() > MASS_TOL
    }

    pub fn raw_mass(&self) -> f64 {
        self.raw_mass
    }

    fn density(&self, s: f64) -> f64 {
        let last = self.nodes.len() - 1;
        if s < self.nodes[0] || s > self.nodes[last] {
            return 0.0;
        }
        let k = match self.nodes.partition_point(|&v| v <= s) {
            0 => 0,
            p => (p - 1).min(last - 1),
        };
        let (s0, s1) = (self.nodes[k], self.nodes[k + 1]);
        let (w0, w1) = (self.weights[k], self.weights[k + 1]);
        w0 + (w1 - w0) * (s - s0) / (s1 - s0)
    }

    /// Exact integral of `s^power * K(s)` over `[from, inf)` for power 0 or 1.
    fn tail_integral(&self, from: f64, power: i32) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.nodes.len() - 1 {
            let (s0, s1) = (self.nodes[k], self.nodes[k + 1]);
            if s1 <= from {
                continue;
            }
            let lo = s0.max(from);
            let f = |s: f64| s.powi(power) * self.density(s);
            let mid = 0.5 * (lo + s1);
            // Simpson is exact for the (at most quadratic) integrand.
            acc += (s1 - lo) / 6.0 * (f(lo) + 4.0 * f(mid) + f(s1));
        }
        acc
    }
}

fn trapezoid(nodes: &[f64], weights: &[f64]) -> f64 {
    nodes
        .windows(2)
        .zip(weights.windows(2))
        .map(|(s, w)| 0.5 * (s[1] - s[0]) * (w[0] + w[1]))
        .sum()
}

/// A normalized delay kernel with finite first moment.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    /// Point mass at `tau` (a discrete delay).
    Dirac { tau: f64 },
    /// Erlang density `rate^m s^(m-1) e^(-rate s) / (m-1)!`.
    Gamma { order: u32, rate: f64 },
    Table(TableKernel),
}

impl Kernel {
    pub fn dirac(tau: f64) -> Kernel {
        Kernel::Dirac { tau }
    }

    pub fn gamma(order: u32, rate: f64) -> Kernel {
        Kernel::Gamma { order, rate }
    }

    fn validate(&self) -> Result<(), String> {
        match *self {
            Kernel::Dirac { tau } if !(tau.is_finite() && tau >= 0.0) => {
                Err(format!("tau must be finite and >= 0 (got {tau})"))
            }
            Kernel::Gamma { order, .. } if order == 0 => Err("m must be a positive integer".into()),
            Kernel::Gamma { rate, .. } if !(rate.is_finite() && rate > 0.0) => {
                Err(format!("gamma must be > 0 (got {rate})"))
            }
            _ => Ok(()),
        }
    }

    /// Total mass. Exactly one for dirac and gamma kernels.
    pub fn mass(&self) -> f64 {
        match self {
            Kernel::Table(t) => trapezoid(&t.nodes, &t.weights),
            _ => 1.0,
        }
    }

    /// `int_0^inf s K(s) ds`.
    pub fn first_moment(&self) -> f64 {
        match self {
            Kernel::Dirac { tau } => *tau,
            Kernel::Gamma { order, rate } => *order as f64 / rate,
            Kernel::Table(t) => t.tail_integral(0.0, 1),
        }
    }

    /// Density value, `None` for a point mass.
    pub fn density(&self, s: f64) -> Option<f64> {
        match self {
            Kernel::Dirac { .. } => None,
            Kernel::Gamma { order, rate } => Some(erlang_density(*order, *rate, s)),
            Kernel::Table(t) => Some(t.density(s)),
        }
    }

    /// `int_T^inf K(s) ds`; a point mass at `tau` counts as long as `T <= tau`.
    pub fn tail_mass(&self, from: f64) -> f64 {
        let from = from.max(0.0);
        match self {
            Kernel::Dirac { tau } => {
                if from <= *tau {
                    1.0
                } else {
                    0.0
                }
            }
            Kernel::Gamma { order, rate } => upper_gamma_q(*order, rate * from),
            Kernel::Table(t) => t.tail_integral(from, 0).clamp(0.0, 1.0),
        }
    }

    /// `int_T^inf s K(s) ds`.
    pub fn moment_tail(&self, from: f64) -> f64 {
        let from = from.max(0.0);
        match self {
            Kernel::Dirac { tau } => {
                if from <= *tau {
                    *tau
                } else {
                    0.0
                }
            }
            Kernel::Gamma { order, rate } => *order as f64 / rate * upper_gamma_q(order + 1, rate * from),
            Kernel::Table(t) => t.tail_integral(from, 1),
        }
    }

    /// Smallest horizon `T` with both the tail mass and the first-moment tail
    /// at most `tol`. For a point mass this is the delay itself.
    pub fn horizon(&self, tol: f64) -> f64 {
        let ok = |t: f64| self.tail_mass(t) <= tol && self.moment_tail(t) <= tol;
        match self {
            Kernel::Dirac { tau } => *tau,
            Kernel::Gamma { order, rate } => {
                let mut hi = (*order as f64 / rate).max(1e-3);
                while !ok(hi) {
                    hi *= 2.0;
                }
                bisect_threshold(0.0, hi, ok)
            }
            Kernel::Table(t) => {
                let end = *t.nodes.last().unwrap();
                bisect_threshold(0.0, end, ok)
            }
        }
    }

    /// Largest point of the support (infinite for gamma kernels).
    pub fn support_end(&self) -> f64 {
        match self {
            Kernel::Dirac { tau } => *tau,
            Kernel::Gamma { .. } => f64::INFINITY,
            Kernel::Table(t) => *t.nodes.last().unwrap(),
        }
    }

    pub fn is_instantaneous(&self) -> bool {
        matches!(self, Kernel::Dirac { tau } if *tau == 0.0)
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Dirac { tau } => write!(f, "dirac(tau={tau})"),
            Kernel::Gamma { order, rate } => write!(f, "gamma(m={order}, gamma={rate})"),
            Kernel::Table(t) => write!(f, "table({} nodes)", t.nodes.len()),
        }
    }
}

/// Smallest `t` in `[lo, hi]` (to bisection accuracy) with `ok(t)`, given
/// `ok(hi)` and monotone `ok`.
fn bisect_threshold(mut lo: f64, mut hi: f64, ok: impl Fn(f64) -> bool) -> f64 {
    if ok(lo) {
        return lo;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

pub(crate) fn erlang_density(order: u32, rate: f64, s: f64) -> f64 {
    if s < 0.0 {
        return 0.0;
    }
    if s == 0.0 {
        return if order == 1 { rate } else { 0.0 };
    }
    let m = order as f64;
    let log_fact: f64 = (1..order).map(|k| (k as f64).ln()).sum();
    (m * rate.ln() + (m - 1.0) * s.ln() - rate * s - log_fact).exp()
}

/// Regularized upper incomplete gamma `Q(m, x)` for integer `m >= 1`.
pub(crate) fn upper_gamma_q(order: u32, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..order {
        term *= x / k as f64;
        sum += term;
    }
    ((-x).exp() * sum).min(1.0)
}

/// Initial function for one state variable on `(-inf, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub enum History {
    Constant(f64),
    /// Linear interpolation through `(times, values)`, constant before the
    /// first sample. The last sample sits at `theta = 0`.
    Table { times: Vec<f64>, values: Vec<f64> },
}

impl History {
    pub fn table(times: Vec<f64>, values: Vec<f64>) -> Result<Self, String> {
        if times.is_empty() || times.len() != values.len() {
            return Err("times and values must be non-empty and of equal length".into());
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err("times and values must be finite".into());
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err("times must be strictly increasing".into());
        }
        if *times.last().unwrap() != 0.0 {
            return Err("the last sample must be at time 0".into());
        }
        if values.iter().any(|&v| v < 0.0) {
            return Err("values must be >= 0".into());
        }
        Ok(History::Table { times, values })
    }

    /// Value at `theta <= 0` (positive arguments are clamped to 0).
    pub fn value(&self, theta: f64) -> f64 {
        match self {
            History::Constant(v) => *v,
            History::Table { times, values } => {
                let theta = theta.min(0.0);
                if theta <= times[0] {
                    return values[0];
                }
                let p = times.partition_point(|&t| t <= theta);
                if p >= times.len() {
                    return *values.last().unwrap();
                }
                let (t0, t1) = (times[p - 1], times[p]);
                let (v0, v1) = (values[p - 1], values[p]);
                v0 + (v1 - v0) * (theta - t0) / (t1 - t0)
            }
        }
    }

    pub fn at_zero(&self) -> f64 {
        self.value(0.0)
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, History::Constant(_))
    }
}

/// Initial functions for all `x_i` and `u_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistorySpec {
    pub x: Vec<History>,
    pub u: Vec<History>,
}

impl HistorySpec {
    pub fn constant(x: &[f64], u: &[f64]) -> HistorySpec {
        HistorySpec {
            x: x.iter().map(|&v| History::Constant(v)).collect(),
            u: u.iter().map(|&v| History::Constant(v)).collect(),
        }
    }

    /// `x_i = 0.5`, `u_i` in balance with it (`d_i x_i / e_i`).
    pub fn default_for(d: &[f64], e: &[f64]) -> HistorySpec {
        let x = vec![0.5; d.len()];
        let u: Vec<f64> = d.iter().zip(e).map(|(d, e)| 0.5 * d / e).collect();
        HistorySpec::constant(&x, &u)
    }

    pub fn validate(&self, n: usize) -> Result<(), SpecError> {
        for (name, list) in [("x", &self.x), ("u", &self.u)] {
            if list.len() != n {
                return Err(SpecError::Schema(format!(
                    "history.{name}: expected {n} entries, found {}",
                    list.len()
                )));
            }
            for (i, h) in list.iter().enumerate() {
                let bad = match h {
                    History::Constant(v) => !(v.is_finite() && *v >= 0.0),
                    History::Table { values, .. } => values.iter().any(|v| !(v.is_finite() && *v >= 0.0)),
                };
                if bad {
                    return Err(invariant(format!("history.{name}[{}] must be finite and >= 0", i + 1)));
                }
                if !(h.at_zero() > 0.0) {
                    return Err(invariant(format!("history.{name}[{}] at 0 must be > 0", i + 1)));
                }
            }
        }
        Ok(())
    }
}

/// Fully validated parameterization of the controlled system.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    n: usize,
    b: Vec<f64>,
    mu: Vec<f64>,
    a: Vec<Vec<f64>>,
    c: Vec<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
    k: Vec<Vec<Kernel>>,
    g: Vec<Kernel>,
    history: HistorySpec,
}

impl SystemSpec {
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn b(&self) -> &[f64] {
        &self.b
    }
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }
    pub fn a(&self) -> &[Vec<f64>] {
        &self.a
    }
    pub fn c(&self) -> &[f64] {
        &self.c
    }
    pub fn d(&self) -> &[f64] {
        &self.d
    }
    pub fn e(&self) -> &[f64] {
        &self.e
    }
    pub fn kernel(&self, i: usize, j: usize) -> &Kernel {
        &self.k[i][j]
    }
    pub fn kernels(&self) -> &[Vec<Kernel>] {
        &self.k
    }
    pub fn control_kernel(&self, i: usize) -> &Kernel {
        &self.g[i]
    }
    pub fn control_kernels(&self) -> &[Kernel] {
        &self.g
    }
    pub fn history(&self) -> &HistorySpec {
        &self.history
    }

    pub fn lambda(&self) -> Vec<f64> {
        lambda_vector(self)
    }

    pub fn to_builder(&self) -> SpecBuilder {
        SpecBuilder {
            n: self.n,
            b: self.b.clone(),
            mu: self.mu.clone(),
            a: self.a.clone(),
            c: self.c.clone(),
            d: self.d.clone(),
            e: self.e.clone(),
            k: self.k.clone(),
            g: self.g.clone(),
            history: Some(self.history.clone()),
        }
    }

    /// Same system with a different initial history.
    pub fn with_history(&self, history: HistorySpec) -> Result<SystemSpec, SpecError> {
        history.validate(self.n)?;
        let mut out = self.clone();
        out.history = history;
        Ok(out)
    }

    /// Non-fatal observations: instantaneous (tau = 0) self kernels, which are
    /// atomic at zero, and renormalized table kernels.
    pub fn validation_notes(&self) -> Vec<String> {
        let mut notes = Vec::new();
        for i in 0..self.n {
            if self.k[i][i].is_instantaneous() {
                notes.push(format!(
                    "kernels.K[{0}][{0}] is dirac(tau=0): instantaneous term, atomic at zero",
                    i + 1
                ));
            }
            if self.g[i].is_instantaneous() {
                notes.push(format!(
                    "kernels.G[{}] is dirac(tau=0): instantaneous term, atomic at zero",
                    i + 1
                ));
            }
        }
        let tables = self
            .k
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, k)| (format!("K[{}][{}]", i + 1, j + 1), k)))
            .chain(self.g.iter().enumerate().map(|(i, k)| (format!("G[{}]", i + 1), k)));
        for (key, kernel) in tables {
            if let Kernel::Table(t) = kernel {
                if t.was_renormalized() {
                    notes.push(format!("kernels.{key}: table mass {} renormalized to 1", t.raw_mass()));
                }
            }
        }
        notes
    }

    /// Serialize back to a configuration document.
    pub fn to_config_string(&self) -> String {
        let doc = SpecDoc::from_spec(self);
        toml::to_string(&doc).expect("spec documents always serialize")
    }
}

/// `lambda_i = mu_i + c_i d_i / e_i`.
pub fn lambda_vector(spec: &SystemSpec) -> Vec<f64> {
    (0..spec.n)
        .map(|i| spec.mu[i] + spec.c[i] * spec.d[i] / spec.e[i])
        .collect()
}

/// `int_T^inf K(s) ds`.
pub fn kernel_tail_mass(kernel: &Kernel, from: f64) -> f64 {
    kernel.tail_mass(from)
}

/// Assembles and validates a [`SystemSpec`]. Unset controls default to
/// `c = 0`, `d = e = 1`; unset history to [`HistorySpec::default_for`].
#[derive(Debug, Clone)]
pub struct SpecBuilder {
    n: usize,
    b: Vec<f64>,
    mu: Vec<f64>,
    a: Vec<Vec<f64>>,
    c: Vec<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
    k: Vec<Vec<Kernel>>,
    g: Vec<Kernel>,
    history: Option<HistorySpec>,
}

impl SpecBuilder {
    /// All kernels default to `dirac(1)`.
    pub fn new(b: Vec<f64>, mu: Vec<f64>, a: Vec<Vec<f64>>) -> SpecBuilder {
        let n = b.len();
        SpecBuilder {
            n,
            b,
            mu,
            a,
            c: vec![0.0; n],
            d: vec![1.0; n],
            e: vec![1.0; n],
            k: vec![vec![Kernel::dirac(1.0); n]; n],
            g: vec![Kernel::dirac(1.0); n],
            history: None,
        }
    }

    pub fn controls(mut self, c: Vec<f64>, d: Vec<f64>, e: Vec<f64>) -> Self {
        self.c = c;
        self.d = d;
        self.e = e;
        self
    }

    pub fn c(mut self, c: Vec<f64>) -> Self {
        self.c = c;
        self
    }

    pub fn mu(mut self, mu: Vec<f64>) -> Self {
        self.mu = mu;
        self
    }

    pub fn b(mut self, b: Vec<f64>) -> Self {
        self.b = b;
        self
    }

    pub fn a(mut self, a: Vec<Vec<f64>>) -> Self {
        self.a = a;
        self
    }

    pub fn kernels(mut self, k: Vec<Vec<Kernel>>, g: Vec<Kernel>) -> Self {
        self.k = k;
        self.g = g;
        self
    }

    /// Use one kernel for every `K_ij` and every `G_i`.
    pub fn uniform_kernel(mut self, kernel: Kernel) -> Self {
        self.k = vec![vec![kernel.clone(); self.n]; self.n];
        self.g = vec![kernel; self.n];
        self
    }

    pub fn history(mut self, history: HistorySpec) -> Self {
        self.history = Some(history);
        self
    }

    pub fn build(self) -> Result<SystemSpec, SpecError> {
        let n = self.n;
        if n == 0 {
            return Err(invariant("n must be a positive integer"));
        }
        let vectors = [
            ("b", &self.b),
            ("mu", &self.mu),
            ("c", &self.c),
            ("d", &self.d),
            ("e", &self.e),
        ];
        for (name, v) in vectors {
            if v.len() != n {
                return Err(SpecError::Schema(format!("{name}: expected {n} entries, found {}", v.len())));
            }
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(invariant(format!("{name}[{}] must be finite", i + 1)));
            }
        }
        if self.a.len() != n || self.a.iter().any(|r| r.len() != n) {
            return Err(SpecError::Schema(format!("a: expected a {n}x{n} matrix")));
        }
        for (i, row) in self.a.iter().enumerate() {
            if let Some(j) = row.iter().position(|x| !x.is_finite()) {
                return Err(invariant(format!("a[{}][{}] must be finite", i + 1, j + 1)));
            }
        }
        for i in 0..n {
            if !(self.mu[i] > 0.0) {
                return Err(invariant(format!("mu[{}] must be > 0", i + 1)));
            }
            if !(self.d[i] > 0.0) {
                return Err(invariant(format!("d[{}] must be > 0", i + 1)));
            }
            if !(self.e[i] > 0.0) {
                return Err(invariant(format!("e[{}] must be > 0", i + 1)));
            }
            if !(self.c[i] >= 0.0) {
                return Err(invariant(format!("c[{}] must be >= 0", i + 1)));
            }
        }
        if self.k.len() != n || self.k.iter().any(|r| r.len() != n) {
            return Err(SpecError::Schema(format!("kernels.K: expected a {n}x{n} array")));
        }
        if self.g.len() != n {
            return Err(SpecError::Schema(format!(
                "kernels.G: expected {n} entries, found {}",
                self.g.len()
            )));
        }
        for (i, row) in self.k.iter().enumerate() {
            for (j, k) in row.iter().enumerate() {
                check_kernel(k).map_err(|r| invariant(format!("kernels.K[{}][{}]: {r}", i + 1, j + 1)))?;
            }
        }
        for (i, k) in self.g.iter().enumerate() {
            check_kernel(k).map_err(|r| invariant(format!("kernels.G[{}]: {r}", i + 1)))?;
        }
        let history = self
            .history
            .unwrap_or_else(|| HistorySpec::default_for(&self.d, &self.e));
        history.validate(n)?;
        Ok(SystemSpec {
            n,
            b: self.b,
            mu: self.mu,
            a: self.a,
            c: self.c,
            d: self.d,
            e: self.e,
            k: self.k,
            g: self.g,
            history,
        })
    }
}

fn check_kernel(k: &Kernel) -> Result<(), String> {
    k.validate()?;
    let mass = k.mass();
    if (mass - 1.0).abs() > MASS_TOL {
        return Err(format!("mass {mass} is not 1"));
    }
    if !k.first_moment().is_finite() {
        return Err("first moment must be finite".into());
    }
    Ok(())
}

/// Parse and validate a configuration document.
pub fn load_spec(config_text: &str) -> Result<SystemSpec, SpecError> {
    let doc: SpecDoc = toml::from_str(config_text).map_err(|e| SpecError::Schema(e.message().to_string()))?;
    doc.into_spec()
}

// ---------------------------------------------------------------------------
// Document layer

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecDoc {
    n: usize,
    b: Vec<f64>,
    mu: Vec<f64>,
    a: MatrixDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    d: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    e: Option<Vec<f64>>,
    kernels: KernelsDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    history: Option<HistoryDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum MatrixDoc {
    Rows(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelsDoc {
    #[serde(rename = "K")]
    k: Vec<Vec<KernelDoc>>,
    #[serde(rename = "G")]
    g: Vec<KernelDoc>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelDoc {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    m: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nodes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HistoryDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<Vec<HistoryEntryDoc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    u: Option<Vec<HistoryEntryDoc>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum HistoryEntryDoc {
    Value(f64),
    Entry(HistoryEntryTable),
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HistoryEntryTable {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f64>>,
}

impl KernelDoc {
    fn into_kernel(self, key: &str) -> Result<Kernel, SpecError> {
        let schema = |msg: String| SpecError::Schema(format!("{key}: {msg}"));
        let forbid = |present: bool, name: &str| {
            if present {
                Err(schema(format!("unexpected key `{name}` for {} kernel", self.kind)))
            } else {
                Ok(())
            }
        };
        match self.kind.as_str() {
            "dirac" => {
                forbid(self.m.is_some(), "m")?;
                forbid(self.gamma.is_some(), "gamma")?;
                forbid(self.nodes.is_some(), "nodes")?;
                forbid(self.weights.is_some(), "weights")?;
                let tau = self.tau.ok_or_else(|| schema("missing key `tau`".into()))?;
                Ok(Kernel::dirac(tau))
            }
            "gamma" => {
                forbid(self.tau.is_some(), "tau")?;
                forbid(self.nodes.is_some(), "nodes")?;
                forbid(self.weights.is_some(), "weights")?;
                let m = self.m.ok_or_else(|| schema("missing key `m`".into()))?;
                let rate = self.gamma.ok_or_else(|| schema("missing key `gamma`".into()))?;
                if m < 1 || m > u32::MAX as i64 {
                    return Err(invariant(format!("{key}: m must be a positive integer")));
                }
                Ok(Kernel::gamma(m as u32, rate))
            }
            "table" => {
                forbid(self.tau.is_some(), "tau")?;
                forbid(self.m.is_some(), "m")?;
                forbid(self.gamma.is_some(), "gamma")?;
                let nodes = self.nodes.ok_or_else(|| schema("missing key `nodes`".into()))?;
                let weights = self.weights.ok_or_else(|| schema("missing key `weights`".into()))?;
                TableKernel::new(nodes, weights)
                    .map(Kernel::Table)
                    .map_err(|r| invariant(format!("{key}: {r}")))
            }
            other => Err(schema(format!(
                "unknown kind `{other}` (expected dirac, gamma or table)"
            ))),
        }
    }

    fn from_kernel(k: &Kernel) -> KernelDoc {
        match k {
            Kernel::Dirac { tau } => KernelDoc {
                kind: "dirac".into(),
                tau: Some(*tau),
                ..Default::default()
            },
            Kernel::Gamma { order, rate } => KernelDoc {
                kind: "gamma".into(),
                m: Some(*order as i64),
                gamma: Some(*rate),
                ..Default::default()
            },
            Kernel::Table(t) => KernelDoc {
                kind: "table".into(),
                nodes: Some(t.nodes.clone()),
                weights: Some(t.weights.clone()),
                ..Default::default()
            },
        }
    }
}

impl HistoryEntryDoc {
    fn into_history(self, key: &str) -> Result<History, SpecError> {
        match self {
            HistoryEntryDoc::Value(v) => Ok(History::Constant(v)),
            HistoryEntryDoc::Entry(t) => match t.kind.as_str() {
                "constant" => {
                    if t.times.is_some() || t.values.is_some() {
                        return Err(SpecError::Schema(format!(
                            "{key}: constant history takes only `value`"
                        )));
                    }
                    t.value
                        .map(History::Constant)
                        .ok_or_else(|| SpecError::Schema(format!("{key}: missing key `value`")))
                }
                "table" => {
                    if t.value.is_some() {
                        return Err(SpecError::Schema(format!("{key}: table history takes `times` and `values`")));
                    }
                    let times = t
                        .times
                        .ok_or_else(|| SpecError::Schema(format!("{key}: missing key `times`")))?;
                    let values = t
                        .values
                        .ok_or_else(|| SpecError::Schema(format!("{key}: missing key `values`")))?;
                    History::table(times, values).map_err(|r| invariant(format!("{key}: {r}")))
                }
                other => Err(SpecError::Schema(format!(
                    "{key}: unknown kind `{other}` (expected constant or table)"
                ))),
            },
        }
    }

    fn from_history(h: &History) -> HistoryEntryDoc {
        match h {
            History::Constant(v) => HistoryEntryDoc::Entry(HistoryEntryTable {
                kind: "constant".into(),
                value: Some(*v),
                ..Default::default()
            }),
            History::Table { times, values } => HistoryEntryDoc::Entry(HistoryEntryTable {
                kind: "table".into(),
                times: Some(times.clone()),
                values: Some(values.clone()),
                ..Default::default()
            }),
        }
    }
}

impl SpecDoc {
    fn into_spec(self) -> Result<SystemSpec, SpecError> {
        let n = self.n;
        if n == 0 {
            return Err(invariant("n must be a positive integer"));
        }
        let a = match self.a {
            MatrixDoc::Rows(rows) => rows,
            MatrixDoc::Flat(flat) => {
                if flat.len() != n * n {
                    return Err(SpecError::Schema(format!(
                        "a: expected {} entries (row-major {n}x{n}), found {}",
                        n * n,
                        flat.len()
                    )));
                }
                flat.chunks(n).map(|r| r.to_vec()).collect()
            }
        };
        if self.kernels.k.len() != n || self.kernels.k.iter().any(|r| r.len() != n) {
            return Err(SpecError::Schema(format!("kernels.K: expected a {n}x{n} array")));
        }
        if self.kernels.g.len() != n {
            return Err(SpecError::Schema(format!(
                "kernels.G: expected {n} entries, found {}",
                self.kernels.g.len()
            )));
        }
        let mut k = Vec::with_capacity(n);
        for (i, row) in self.kernels.k.into_iter().enumerate() {
            let mut out = Vec::with_capacity(n);
            for (j, doc) in row.into_iter().enumerate() {
                out.push(doc.into_kernel(&format!("kernels.K[{}][{}]", i + 1, j + 1))?);
            }
            k.push(out);
        }
        let g = self
            .kernels
            .g
            .into_iter()
            .enumerate()
            .map(|(i, doc)| doc.into_kernel(&format!("kernels.G[{}]", i + 1)))
            .collect::<Result<Vec<_>, _>>()?;

        let d = self.d.unwrap_or_else(|| vec![1.0; n]);
        let e = self.e.unwrap_or_else(|| vec![1.0; n]);
        let history = match self.history {
            None => None,
            Some(h) => {
                let default = HistorySpec::default_for(&d, &e);
                let convert = |list: Option<Vec<HistoryEntryDoc>>, name: &str, fallback: Vec<History>| {
                    match list {
                        None => Ok(fallback),
                        Some(list) => list
                            .into_iter()
                            .enumerate()
                            .map(|(i, doc)| doc.into_history(&format!("history.{name}[{}]", i + 1)))
                            .collect::<Result<Vec<_>, _>>(),
                    }
                };
                Some(HistorySpec {
                    x: convert(h.x, "x", default.x)?,
                    u: convert(h.u, "u", default.u)?,
                })
            }
        };

        let mut builder = SpecBuilder::new(self.b, self.mu, a)
            .controls(self.c.unwrap_or_else(|| vec![0.0; n]), d, e)
            .kernels(k, g);
        if let Some(h) = history {
            builder = builder.history(h);
        }
        let spec = builder.build()?;
        if spec.n != n {
            return Err(SpecError::Schema(format!("n = {n} but b has {} entries", spec.n)));
        }
        Ok(spec)
    }

    fn from_spec(spec: &SystemSpec) -> SpecDoc {
        SpecDoc {
            n: spec.n,
            b: spec.b.clone(),
            mu: spec.mu.clone(),
            a: MatrixDoc::Rows(spec.a.clone()),
            c: Some(spec.c.clone()),
            d: Some(spec.d.clone()),
            e: Some(spec.e.clone()),
            kernels: KernelsDoc {
                k: spec
                    .k
                    .iter()
                    .map(|row| row.iter().map(KernelDoc::from_kernel).collect())
                    .collect(),
                g: spec.g.iter().map(KernelDoc::from_kernel).collect(),
            },
            history: Some(HistoryDoc {
                x: Some(spec.history.x.iter().map(HistoryEntryDoc::from_history).collect()),
                u: Some(spec.history.u.iter().map(HistoryEntryDoc::from_history).collect()),
            }),
        }
    }
}
