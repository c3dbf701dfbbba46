//! Lyapunov functionals evaluated along a computed trajectory.
//!
//! Weights come from an [`EtaQCert`]: the functional is written in the
//! rescaled variables `x / q`, which in the original variables amounts to the
//! weights `eta_i / q_i` on the logarithmic terms and `|a~_ij| / q_j` on the
//! delayed quadratic terms.

use std::collections::HashMap;

use super::integrate::{Source, Trajectory};
use super::quad::KernelQuad;
use super::{fit_log_slope, SimError};
use crate::attractivity::{AlphaCert, EtaQCert};
use crate::equilibria::EquilibriumCandidate;
use crate::matrices::StructureMatrices;
use crate::model::Kernel;

/// `x - 1 - ln x`.
pub fn g(x: f64) -> f64 {
    x - 1.0 - x.ln()
}

/// `x* g(x / x*)`, and `x` itself when `x* = 0`.
pub fn big_g(x: f64, x_star: f64) -> f64 {
    if x_star > 0.0 {
        x_star * g(x / x_star)
    } else {
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovTrace {
    pub t: Vec<f64>,
    /// Trajectory grid index of each sample.
    pub grid_index: Vec<usize>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub u: Vec<f64>,
    /// `g_terms[i][r]` is `G(x_i, x_i*)` at sample `r`.
    pub g_terms: Vec<Vec<f64>>,
    /// `sum_i gamma_i (xbar_i - xbar_i*)^2 + eta_i cbar_i e_i / d_i (ubar_i - ubar_i*)^2`.
    pub f: Vec<f64>,
    /// Forcing from the absent species, for a reduced certificate.
    pub h_forcing: Option<Vec<f64>>,
    /// Running integral of `h_forcing`.
    pub h_integral: Option<Vec<f64>>,
    /// `U - H` for a reduced certificate.
    pub v: Option<Vec<f64>>,
    pub vpq: Option<Vec<f64>>,
    /// Running integral of the term the control part of `U2` contributes to
    /// its own derivative through `u_i(t)` inside the inner integral:
    /// `-(c_i eta_i / (eps q_i)) u_i'(t) int_0^inf S(r) (u_i(t-r) - u_i(t)) dr`.
    pub control_gap: Vec<f64>,
    /// `monotone_series() - control_gap`.
    pub corrected: Vec<f64>,
}

impl LyapunovTrace {
    /// The series expected to be non-increasing: `V` for a reduced
    /// certificate, `U` otherwise.
    pub fn monotone_series(&self) -> &[f64] {
        self.v.as_deref().unwrap_or(&self.u)
    }

    /// Tolerance `1e-6 (1 + U(0))` for monotonicity checks.
    pub fn tolerance(&self) -> f64 {
        1e-6 * (1.0 + self.u.first().copied().unwrap_or(0.0))
    }

    pub fn is_monotone(&self) -> bool {
        max_increase(self.monotone_series()) <= self.tolerance()
    }

    pub fn is_corrected_monotone(&self) -> bool {
        max_increase(&self.corrected) <= self.tolerance()
    }
}

/// `max_{r < s} (y_s - y_r)`, or 0 for a non-increasing series.
pub fn max_increase(y: &[f64]) -> f64 {
    let mut best = 0.0f64;
    let mut lo = f64::INFINITY;
    for &v in y {
        best = best.max(v - lo);
        lo = lo.min(v);
    }
    best
}

/// Quadrature tables keyed by kernel, shared across sample points.
struct Tables<'a> {
    traj: &'a Trajectory,
    cache: HashMap<String, KernelQuad>,
}

impl<'a> Tables<'a> {
    fn new(traj: &'a Trajectory) -> Self {
        Tables {
            traj,
            cache: HashMap::new(),
        }
    }

    fn get(&mut self, k: &Kernel) -> KernelQuad {
        let key = format!("{k:?}");
        let h = self.traj.step;
        self.cache.entry(key).or_insert_with(|| KernelQuad::new(k, h)).clone()
    }

    /// `int_0^inf S(r) f(t_k - r) dr` with `f` given on the grid and in time.
    fn survival(&self, q: &KernelQuad, k: usize, fg: impl Fn(isize) -> f64, ft: impl Fn(f64) -> f64) -> f64 {
        let mut acc: f64 = q.surv.iter().enumerate().map(|(j, w)| w * fg(k as isize - j as isize)).sum();
        if let Some((start, len)) = q.surv_partial {
            let t = self.traj.t_grid[k];
            acc += 0.5 * len * (ft(t - start) + ft(t - start - len));
        }
        acc
    }

    /// `int_0^inf K(s) f(t_k - s) ds`.
    fn conv(&self, q: &KernelQuad, k: usize, fg: impl Fn(isize) -> f64, ft: impl Fn(f64) -> f64) -> f64 {
        match q.dirac {
            Some(tau) => ft(self.traj.t_grid[k] - tau),
            None => q.conv.iter().enumerate().map(|(j, w)| w * fg(k as isize - j as isize)).sum(),
        }
    }
}

fn sample_points(len: usize, stride: usize) -> Vec<usize> {
    let mut pts: Vec<usize> = (0..len).step_by(stride.max(1)).collect();
    if pts.last() != Some(&(len - 1)) {
        pts.push(len - 1);
    }
    pts
}

/// [`lyapunov_trace_strided`] at every grid point.
pub fn lyapunov_trace(
    traj: &Trajectory,
    eq: &EquilibriumCandidate,
    cert: &EtaQCert,
) -> Result<LyapunovTrace, SimError> {
    lyapunov_trace_strided(traj, eq, cert, 1)
}

/// Evaluate `U1`, `U2` (and for a reduced certificate `h`, `H`, `V`) at
/// every `stride`-th grid point. The forcing integral `H` always uses every
/// grid point.
pub fn lyapunov_trace_strided(
    traj: &Trajectory,
    eq: &EquilibriumCandidate,
    cert: &EtaQCert,
    stride: usize,
) -> Result<LyapunovTrace, SimError> {
    let spec = traj.spec();
    let n = spec.n();
    if eq.x_star.len() != n || cert.indices.iter().any(|&i| i >= n) || cert.eta.len() != cert.indices.len() {
        return Err(SimError::Mismatch("equilibrium or certificate does not match the system".into()));
    }
    if traj.is_empty() {
        return Err(SimError::Mismatch("empty trajectory".into()));
    }
    let s = StructureMatrices::build(spec);
    let idx = &cert.indices;
    let p = idx.len();
    let reduced = p < n;
    let (xs, us) = (&eq.x_star, &eq.u_star);
    let (c, d, e) = (spec.c(), spec.d(), spec.e());
    let eps = cert.epsilon;
    let mut tables = Tables::new(traj);

    let mut x_quads = Vec::new();
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            let w = cert.eta[a] * s.modified_a(&cert.support, i, j).abs() / (2.0 * cert.q[b]);
            if w != 0.0 {
                x_quads.push((j, w, tables.get(spec.kernel(i, j))));
            }
        }
    }
    let mut u_quads = Vec::new();
    for (a, &i) in idx.iter().enumerate() {
        let w = cert.eta[a] * c[i] / (2.0 * eps * cert.q[a]);
        if w != 0.0 {
            u_quads.push((i, w, tables.get(spec.control_kernel(i))));
        }
    }

    let pts = sample_points(traj.len(), stride);
    let mut out = LyapunovTrace {
        t: pts.iter().map(|&k| traj.t_grid[k]).collect(),
        grid_index: pts.clone(),
        u1: Vec::with_capacity(pts.len()),
        u2: Vec::with_capacity(pts.len()),
        u: Vec::with_capacity(pts.len()),
        g_terms: vec![Vec::with_capacity(pts.len()); n],
        f: Vec::with_capacity(pts.len()),
        h_forcing: None,
        h_integral: None,
        v: None,
        vpq: None,
        control_gap: Vec::new(),
        corrected: Vec::new(),
    };
    for &k in &pts {
        for i in 0..n {
            out.g_terms[i].push(big_g(traj.x[i][k], xs[i]));
        }
        let mut u1 = 0.0;
        let mut f = 0.0;
        for (a, &i) in idx.iter().enumerate() {
            let (eta, q) = (cert.eta[a], cert.q[a]);
            let du = traj.u[i][k] - us[i];
            let dx = traj.x[i][k] - xs[i];
            u1 += eta / q * (big_g(traj.x[i][k], xs[i]) + c[i] / (2.0 * d[i]) * du * du);
            f += cert.epsilon_margins[a] * dx * dx / (q * q) + eta * c[i] * e[i] / (d[i] * q) * du * du;
        }
        let mut u2 = 0.0;
        for (j, w, q) in &x_quads {
            let j = *j;
            let xj = xs[j];
            let fg = |g: isize| (traj.grid(Source::X(j), g) - xj).powi(2);
            let ft = |t: f64| (traj.x_at(j, t) - xj).powi(2);
            u2 += w * tables.survival(q, k, fg, ft);
        }
        for (i, w, q) in &u_quads {
            let i = *i;
            let now = traj.u[i][k];
            let fg = |g: isize| (traj.grid(Source::U(i), g) - now).powi(2);
            let ft = |t: f64| (traj.u_at(i, t) - now).powi(2);
            u2 += w * tables.survival(q, k, fg, ft);
        }
        out.u1.push(u1);
        out.u2.push(u2);
        out.u.push(u1 + u2);
        out.f.push(f);
    }

    let gap_rate: Vec<f64> = (0..traj.len())
        .map(|k| {
            u_quads
                .iter()
                .map(|(i, w, q)| {
                    let i = *i;
                    let now = traj.u[i][k];
                    let fg = |g: isize| traj.grid(Source::U(i), g) - now;
                    let ft = |t: f64| traj.u_at(i, t) - now;
                    -2.0 * w * traj.du[i][k] * tables.survival(q, k, fg, ft)
                })
                .sum()
        })
        .collect();
    let gap_cum = running_integral(&gap_rate, traj.step);
    out.control_gap = pts.iter().map(|&k| gap_cum[k]).collect();

    if reduced {
        let mut forcing_terms = Vec::new();
        for (a, &i) in idx.iter().enumerate() {
            for j in (0..n).filter(|j| !idx.contains(j)) {
                let w = cert.eta[a] * spec.a()[i][j].abs() / (2.0 * eps);
                if w != 0.0 {
                    forcing_terms.push((j, w, tables.get(spec.kernel(i, j))));
                }
            }
        }
        let h_all: Vec<f64> = (0..traj.len())
            .map(|k| {
                forcing_terms
                    .iter()
                    .map(|(j, w, q)| {
                        let j = *j;
                        let fg = |g: isize| traj.grid(Source::X(j), g).powi(2);
                        let ft = |t: f64| traj.x_at(j, t).powi(2);
                        w * tables.conv(q, k, fg, ft)
                    })
                    .sum()
            })
            .collect();
        let cum = running_integral(&h_all, traj.step);
        let hs: Vec<f64> = pts.iter().map(|&k| h_all[k]).collect();
        let big_h: Vec<f64> = pts.iter().map(|&k| cum[k]).collect();
        out.v = Some(out.u.iter().zip(&big_h).map(|(u, h)| u - h).collect());
        out.h_forcing = Some(hs);
        out.h_integral = Some(big_h);
    }
    out.corrected = out
        .monotone_series()
        .iter()
        .zip(&out.control_gap)
        .map(|(v, g)| v - g)
        .collect();
    Ok(out)
}

fn running_integral(y: &[f64], h: f64) -> Vec<f64> {
    let mut cum = vec![0.0; y.len()];
    for k in 1..y.len() {
        cum[k] = cum[k - 1] + 0.5 * h * (y[k - 1] + y[k]);
    }
    cum
}

#[derive(Debug, Clone, PartialEq)]
pub struct VpqTrace {
    pub t: Vec<f64>,
    pub log_v: Vec<f64>,
    pub eta_rate: f64,
    /// `-slope` of a least-squares line through `log V` over the final half.
    pub fitted_rate: f64,
    /// `log V(t) <= log V(0) - eta_rate t` (to `1e-9` relative) at every
    /// sample.
    pub bound_holds: bool,
}

impl VpqTrace {
    pub fn v(&self) -> Vec<f64> {
        self.log_v.iter().map(|l| l.exp()).collect()
    }
}

/// `log V_{p,q}` along the trajectory for the multipliers in `alpha`.
pub fn vpq_trace(traj: &Trajectory, alpha: &AlphaCert, stride: usize) -> Result<VpqTrace, SimError> {
    let spec = traj.spec();
    let n = spec.n();
    let support = &alpha.support;
    let q = alpha.q_index;
    if q >= n || support.contains(&q) || alpha.alpha.len() != support.len() {
        return Err(SimError::Mismatch("alpha certificate does not match the system".into()));
    }
    let (a, c, e) = (spec.a(), spec.c(), spec.e());
    let mut tables = Tables::new(traj);
    // Phi_i = c_i/e_i u_i + sum_j a_ij int K int x_j + c_i int G int u_i
    let mut weighted: Vec<(usize, f64)> = support.iter().copied().zip(alpha.alpha.iter().copied()).collect();
    weighted.push((q, -1.0));
    let mut x_terms = Vec::new();
    let mut u_terms = Vec::new();
    for &(i, w) in &weighted {
        for j in 0..n {
            if a[i][j] != 0.0 && w != 0.0 {
                x_terms.push((j, w * a[i][j], tables.get(spec.kernel(i, j))));
            }
        }
        if c[i] != 0.0 && w != 0.0 {
            u_terms.push((i, w * c[i], tables.get(spec.control_kernel(i))));
        }
    }
    let pts = sample_points(traj.len(), stride);
    let mut log_v = Vec::with_capacity(pts.len());
    for &k in &pts {
        let mut lv = traj.x[q][k].ln();
        for &(i, w) in &weighted {
            if i != q {
                lv -= w * traj.x[i][k].ln();
            }
            lv += w * c[i] / e[i] * traj.u[i][k];
        }
        for (j, w, qd) in &x_terms {
            let j = *j;
            lv += w * tables.survival(qd, k, |g| traj.grid(Source::X(j), g), |t| traj.x_at(j, t));
        }
        for (i, w, qd) in &u_terms {
            let i = *i;
            lv += w * tables.survival(qd, k, |g| traj.grid(Source::U(i), g), |t| traj.u_at(i, t));
        }
        log_v.push(lv);
    }
    let t: Vec<f64> = pts.iter().map(|&k| traj.t_grid[k]).collect();
    let half = t.len() / 2;
    let fitted_rate = -fit_log_slope(&t[half..], &log_v[half..]);
    let eta = alpha.eta_rate;
    let bound_holds = t
        .iter()
        .zip(&log_v)
        .all(|(t, l)| *l <= log_v[0] - eta * t + 1e-9 * (1.0 + log_v[0].abs() + eta * t));
    Ok(VpqTrace {
        t,
        log_v,
        eta_rate: eta,
        fitted_rate,
        bound_holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attractivity::{check_theorem_3_2, find_alpha};
    use crate::model::{HistorySpec, SpecBuilder};
    use crate::simulator::integrate;

    #[test]
    fn g_is_nonnegative_with_unique_zero() {
        assert_eq!(g(1.0), 0.0);
        for x in [1e-6, 0.1, 0.5, 0.99, 1.01, 2.0, 50.0] {
            assert!(g(x) > 0.0);
        }
        assert!(big_g(0.3, 0.0) == 0.3);
        assert!(big_g(0.3, 0.3).abs() < 1e-17);
    }

    #[test]
    fn max_increase_of_sequences() {
        assert_eq!(max_increase(&[3.0, 2.0, 2.0, 1.0]), 0.0);
        assert_eq!(max_increase(&[3.0, 1.0, 2.5, 0.0]), 1.5);
    }

    #[test]
    fn scalar_logistic_u1_decreases_to_zero() {
        let spec = SpecBuilder::new(vec![1.0], vec![1.0], vec![vec![0.0]]).build().unwrap();
        let (eq, cert) = check_theorem_3_2(&spec).unwrap();
        let traj = integrate(&spec, &HistorySpec::constant(&[0.2], &[1.0]), 20.0, 0.01).unwrap();
        let tr = lyapunov_trace_strided(&traj, &eq, &cert, 10).unwrap();
        assert!(tr.u1.windows(2).all(|w| w[1] < w[0] || w[1] < 1e-15));
        assert!(tr.u1.last().unwrap() < &1e-12);
        assert!(tr.u2.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn trace_vanishes_at_equilibrium() {
        let spec = SpecBuilder::new(vec![1.0, 1.0], vec![1.0, 1.0], vec![vec![0.2, 0.1], vec![0.1, 0.3]])
            .controls(vec![0.5, 0.2], vec![1.0, 2.0], vec![2.0, 1.0])
            .uniform_kernel(Kernel::gamma(2, 1.0))
            .build()
            .unwrap();
        let (eq, cert) = check_theorem_3_2(&spec).unwrap();
        let hist = HistorySpec::constant(&eq.x_star, &eq.u_star);
        let traj = integrate(&spec, &hist, 5.0, 0.01).unwrap();
        let tr = lyapunov_trace_strided(&traj, &eq, &cert, 50).unwrap();
        assert!(tr.u.iter().all(|v| v.abs() < 1e-12), "{:?}", tr.u);
    }

    #[test]
    fn vpq_for_decoupled_decline() {
        // alpha = 0 proviso case: x_2' = x_2(-1 - x_2), species 1 logistic.
        let spec = SpecBuilder::new(vec![1.0, -1.0], vec![1.0, 1.0], vec![vec![0.0; 2]; 2]).build().unwrap();
        let cert = find_alpha(&spec, &[0], 1).unwrap();
        let traj = integrate(&spec, &HistorySpec::constant(&[0.5, 0.5], &[0.5, 0.5]), 20.0, 0.01).unwrap();
        let tr = vpq_trace(&traj, &cert, 10).unwrap();
        assert!(tr.bound_holds);
        assert!(tr.fitted_rate >= cert.eta_rate - 1e-6);
    }
}
