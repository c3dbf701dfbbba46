//! Finite-horizon surrogates for the asymptotic statements.

use serde::Serialize;

use super::integrate::{integrate_with, SimOptions, Source, Trajectory};
use super::quad::KernelQuad;
use super::SimError;
use crate::equilibria::EquilibriumCandidate;
use crate::model::{HistorySpec, SystemSpec};

/// Fraction of the run used for limit estimates.
pub const TRAILING_WINDOW: f64 = 0.25;

fn window_start(traj: &Trajectory, frac: f64) -> usize {
    let len = traj.len();
    ((len as f64) * (1.0 - frac)).floor().min((len - 1) as f64) as usize
}

/// Least-squares slope of `y` against `t`.
pub fn fit_log_slope(t: &[f64], y: &[f64]) -> f64 {
    let m = t.len().min(y.len());
    if m < 2 {
        return 0.0;
    }
    let mt = t[..m].iter().sum::<f64>() / m as f64;
    let my = y[..m].iter().sum::<f64>() / m as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for k in 0..m {
        sxy += (t[k] - mt) * (y[k] - my);
        sxx += (t[k] - mt) * (t[k] - mt);
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub atol: f64,
    pub window_start: f64,
    /// `max |x_i - x_i*|` over the trailing window.
    pub residual_x: Vec<f64>,
    pub residual_u: Vec<f64>,
    /// Largest deviation at the final time.
    pub final_residual: f64,
    /// `(q, -slope of log x_q)` over the trailing window for absent species.
    pub extinction_rates: Vec<(usize, f64)>,
}

impl ConvergenceReport {
    pub fn max_residual(&self) -> f64 {
        self.residual_x.iter().chain(&self.residual_u).copied().fold(0.0, f64::max)
    }
}

pub fn convergence_check(traj: &Trajectory, eq: &EquilibriumCandidate, atol: f64) -> ConvergenceReport {
    let n = traj.n();
    let k0 = window_start(traj, TRAILING_WINDOW);
    let dev = |series: &[f64], target: f64| series[k0..].iter().map(|v| (v - target).abs()).fold(0.0, f64::max);
    let residual_x: Vec<f64> = (0..n).map(|i| dev(&traj.x[i], eq.x_star[i])).collect();
    let residual_u: Vec<f64> = (0..n).map(|i| dev(&traj.u[i], eq.u_star[i])).collect();
    let fx = traj.final_x();
    let fu = traj.final_u();
    let final_residual = (0..n)
        .map(|i| (fx[i] - eq.x_star[i]).abs().max((fu[i] - eq.u_star[i]).abs()))
        .fold(0.0, f64::max);
    let t = &traj.t_grid[k0..];
    let extinction_rates = eq
        .off_support()
        .into_iter()
        .map(|q| {
            let logs: Vec<f64> = traj.x[q][k0..].iter().map(|v| v.ln()).collect();
            (q, -fit_log_slope(t, &logs))
        })
        .collect();
    let converged = traj.terminated.is_none()
        && residual_x.iter().chain(&residual_u).all(|r| *r <= atol);
    ConvergenceReport {
        converged,
        atol,
        window_start: traj.t_grid[k0],
        residual_x,
        residual_u,
        final_residual,
        extinction_rates,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundednessReport {
    pub sup_x: Vec<f64>,
    pub sup_u: Vec<f64>,
    /// Relative growth of the running supremum over the final window.
    pub growth: f64,
    pub ceiling: Option<f64>,
    pub bounded: bool,
}

/// Bounded means the run finished, the supremum grew by less than 1% over
/// the final window, and no value exceeded the ceiling.
pub fn boundedness_check(traj: &Trajectory, ceiling: Option<f64>) -> BoundednessReport {
    let n = traj.n();
    let sup = |s: &[f64]| s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sup_x: Vec<f64> = (0..n).map(|i| sup(&traj.x[i])).collect();
    let sup_u: Vec<f64> = (0..n).map(|i| sup(&traj.u[i])).collect();
    let k0 = window_start(traj, TRAILING_WINDOW).max(1);
    let before = (0..n)
        .map(|i| sup(&traj.x[i][..k0]).max(sup(&traj.u[i][..k0])))
        .fold(f64::NEG_INFINITY, f64::max);
    let overall = sup_x.iter().chain(&sup_u).copied().fold(f64::NEG_INFINITY, f64::max);
    let growth = if before > 0.0 { (overall - before) / before } else { 0.0 };
    let under = ceiling.is_none_or(|c| overall <= c);
    BoundednessReport {
        bounded: traj.terminated.is_none() && growth < 0.01 && under,
        sup_x,
        sup_u,
        growth,
        ceiling,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub window_start: f64,
    pub min_x: Vec<f64>,
    pub max_x: Vec<f64>,
    /// `(e_i / d_i) min u_i` and `(e_i / d_i) max u_i` over the window.
    pub min_u_scaled: Vec<f64>,
    pub max_u_scaled: Vec<f64>,
    pub holds: bool,
}

/// `min x_i <= (e_i/d_i) min u_i` and `(e_i/d_i) max u_i <= max x_i` over the
/// trailing window, up to `tol`.
pub fn sandwich_check(traj: &Trajectory, tol: f64) -> SandwichReport {
    let spec = traj.spec();
    let n = traj.n();
    let k0 = window_start(traj, TRAILING_WINDOW);
    let lo = |s: &[f64]| s[k0..].iter().copied().fold(f64::INFINITY, f64::min);
    let hi = |s: &[f64]| s[k0..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ratio: Vec<f64> = (0..n).map(|i| spec.e()[i] / spec.d()[i]).collect();
    let min_x: Vec<f64> = (0..n).map(|i| lo(&traj.x[i])).collect();
    let max_x: Vec<f64> = (0..n).map(|i| hi(&traj.x[i])).collect();
    let min_u_scaled: Vec<f64> = (0..n).map(|i| ratio[i] * lo(&traj.u[i])).collect();
    let max_u_scaled: Vec<f64> = (0..n).map(|i| ratio[i] * hi(&traj.u[i])).collect();
    let holds = (0..n).all(|i| min_x[i] <= min_u_scaled[i] + tol && max_u_scaled[i] <= max_x[i] + tol);
    SandwichReport {
        window_start: traj.t_grid[k0],
        min_x,
        max_x,
        min_u_scaled,
        max_u_scaled,
        holds,
    }
}

/// `int_0^inf K_ij(s) x_j(t - s)^2 ds` at every grid point.
pub fn kernel_square_trace(traj: &Trajectory, i: usize, j: usize) -> Vec<f64> {
    let q = KernelQuad::new(traj.spec().kernel(i, j), traj.step);
    (0..traj.len())
        .map(|k| match q.dirac {
            Some(tau) => traj.x_at(j, traj.t_grid[k] - tau).powi(2),
            None => q
                .conv
                .iter()
                .enumerate()
                .map(|(s, w)| w * traj.grid(Source::X(j), k as isize - s as isize).powi(2))
                .sum(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct L1Report {
    /// Integral over the first half of the run.
    pub half: f64,
    /// Integral over the whole run.
    pub full: f64,
    /// The second half adds at most `max(1e-6, 1e-2 * half)`.
    pub bounded: bool,
}

/// Whether the running integral of `trace` levels off as the horizon doubles.
pub fn l1_doubling(trace: &[f64], h: f64) -> L1Report {
    let mid = (trace.len() - 1) / 2;
    let integral = |s: &[f64]| s.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum::<f64>();
    let half = integral(&trace[..=mid]);
    let full = integral(trace);
    L1Report {
        half,
        full,
        bounded: full - half <= (1e-2 * half).max(1e-6),
    }
}

/// `log2` of the ratio of successive final-state differences for steps `h`,
/// `h/2`, `h/4`. The three runs execute concurrently.
pub fn observed_order(
    spec: &SystemSpec,
    history: &HistorySpec,
    t_end: f64,
    h: f64,
    opts: &SimOptions,
) -> Result<f64, SimError> {
    let runs: Vec<Result<Trajectory, SimError>> = std::thread::scope(|s| {
        let handles: Vec<_> = [h, h / 2.0, h / 4.0]
            .into_iter()
            .map(|step| s.spawn(move || integrate_with(spec, history, t_end, step, opts)))
            .collect();
        handles.into_iter().map(|hd| hd.join().expect("integration thread panicked")).collect()
    });
    let mut finals = Vec::new();
    for r in runs {
        let t = r?;
        let mut v = t.final_x();
        v.extend(t.final_u());
        finals.push(v);
    }
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let e1 = diff(&finals[0], &finals[1]);
    let e2 = diff(&finals[1], &finals[2]);
    Ok((e1 / e2).log2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::saturated_equilibrium;
    use crate::model::{Kernel, SpecBuilder};
    use crate::simulator::integrate;

    #[test]
    fn slope_of_a_line() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, -1.0, -3.0, -5.0];
        assert!((fit_log_slope(&t, &y) + 2.0).abs() < 1e-15);
    }

    #[test]
    fn logistic_bounded_by_history_or_capacity() {
        let spec = SpecBuilder::new(vec![1.0], vec![1.0], vec![vec![0.0]]).build().unwrap();
        let traj = integrate(&spec, &HistorySpec::constant(&[2.0], &[1.0]), 20.0, 0.01).unwrap();
        let r = boundedness_check(&traj, Some(2.0 + 1e-9));
        assert!(r.bounded);
        assert!(r.sup_x[0] <= 2.0 + 1e-12);
    }

    #[test]
    fn cooperative_blowup_is_flagged() {
        let spec = SpecBuilder::new(vec![1.0], vec![0.1], vec![vec![-2.0]])
            .uniform_kernel(Kernel::dirac(0.5))
            .build()
            .unwrap();
        // Stop while the per-capita rate times h is still small.
        let opts = SimOptions {
            blowup_ceiling: 10.0,
            ..SimOptions::default()
        };
        let traj = integrate_with(&spec, &HistorySpec::constant(&[0.5], &[0.5]), 30.0, 0.01, &opts).unwrap();
        assert!(traj.terminated.is_some());
        assert!(!boundedness_check(&traj, None).bounded);
    }

    #[test]
    fn equilibrium_history_is_converged() {
        let spec = SpecBuilder::new(vec![1.0, 1.0], vec![1.0, 1.0], vec![vec![0.2, 0.1], vec![0.1, 0.3]])
            .controls(vec![0.5, 0.0], vec![1.0, 1.0], vec![1.0, 1.0])
            .build()
            .unwrap();
        let eq = saturated_equilibrium(&spec).unwrap().unique().unwrap().clone();
        let traj = integrate(&spec, &HistorySpec::constant(&eq.x_star, &eq.u_star), 10.0, 0.01).unwrap();
        let r = convergence_check(&traj, &eq, 1e-12);
        assert!(r.converged, "{:?}", r);
        assert!(sandwich_check(&traj, 1e-12).holds);
    }

    #[test]
    fn rk4_order_on_chain_run() {
        let spec = SpecBuilder::new(vec![1.0, 0.5], vec![1.0, 1.0], vec![vec![0.3, 0.2], vec![-0.2, 0.4]])
            .controls(vec![0.3, 0.2], vec![1.0, 1.0], vec![1.0, 1.0])
            .uniform_kernel(Kernel::gamma(2, 1.0))
            .build()
            .unwrap();
        let hist = HistorySpec::constant(&[0.3, 0.7], &[0.2, 0.4]);
        let p = observed_order(&spec, &hist, 5.0, 0.1, &SimOptions::default()).unwrap();
        assert!(p > 3.5, "order {p}");
    }

    #[test]
    fn l1_of_decaying_trace() {
        let h = 0.01;
        let trace: Vec<f64> = (0..=10_000).map(|k| (-(k as f64) * h).exp()).collect();
        assert!(l1_doubling(&trace, h).bounded);
        let flat = vec![1.0; 10_001];
        assert!(!l1_doubling(&flat, h).bounded);
    }
}
