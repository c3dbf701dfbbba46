//! Fixed-step RK4 with the method of steps.

use std::collections::HashMap;

use super::quad::{composite_weights, KernelQuad};
use super::{SimError, Termination};
use crate::model::{History, HistorySpec, Kernel, SystemSpec};

/// Tail mass at which chain initial values are truncated.
pub const CHAIN_INIT_TAIL_TOL: f64 = 1e-10;

/// How gamma kernels are discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GammaRoute {
    /// Linear chain of `m` auxiliary ODEs per kernel.
    #[default]
    Chain,
    /// Truncated Simpson quadrature over the stored trajectory.
    Quadrature,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub gamma_route: GammaRoute,
    /// Integration stops (without error) once a state exceeds this value.
    pub blowup_ceiling: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            gamma_route: GammaRoute::Chain,
            blowup_ceiling: 1e12,
        }
    }
}

/// `min(0.01, smallest positive point delay / 10)`.
pub fn default_step(spec: &SystemSpec) -> f64 {
    let tau_min = min_positive_delay(spec);
    tau_min.map_or(0.01, |t| (t / 10.0).min(0.01))
}

/// [`default_step`], coarsened for long horizons so the run takes at most
/// `max_steps` steps where possible, but never above `0.05` or a quarter of
/// the smallest point delay.
pub fn step_for_horizon(spec: &SystemSpec, t_end: f64, max_steps: usize) -> f64 {
    let base = default_step(spec);
    let cap = min_positive_delay(spec).map_or(0.05, |t| (t / 4.0).min(0.05)).max(base);
    (t_end / max_steps as f64).clamp(base, cap)
}

fn min_positive_delay(spec: &SystemSpec) -> Option<f64> {
    spec.kernels()
        .iter()
        .flatten()
        .chain(spec.control_kernels())
        .filter_map(|k| match k {
            Kernel::Dirac { tau } if *tau > 0.0 => Some(*tau),
            _ => None,
        })
        .reduce(f64::min)
}

/// Sampled solution together with the data needed to evaluate it between
/// grid points and on the initial interval.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t_grid: Vec<f64>,
    /// `x[i][k]` is species `i` at `t_grid[k]`.
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    /// Auxiliary chain variables, `chain_states[v][k]`.
    pub chain_states: Vec<Vec<f64>>,
    pub history: HistorySpec,
    pub step: f64,
    /// Set when integration stopped before `t_end`.
    pub terminated: Option<Termination>,
    pub(crate) spec: SystemSpec,
    pub(crate) dx: Vec<Vec<f64>>,
    pub(crate) du: Vec<Vec<f64>>,
    /// History sampled at `-k h`, `k = 0..`.
    past_x: Vec<Vec<f64>>,
    past_u: Vec<Vec<f64>>,
}

/// Which state a convolution reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum Source {
    X(usize),
    U(usize),
}

impl Trajectory {
    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// Number of stored grid points.
    pub fn len(&self) -> usize {
        self.t_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_grid.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        *self.t_grid.last().unwrap_or(&0.0)
    }

    pub fn final_x(&self) -> Vec<f64> {
        self.x.iter().map(|s| *s.last().unwrap()).collect()
    }

    pub fn final_u(&self) -> Vec<f64> {
        self.u.iter().map(|s| *s.last().unwrap()).collect()
    }

    /// Grid samples that can be reached into the past.
    pub fn past_len(&self) -> usize {
        self.past_x.first().map_or(0, |p| p.len())
    }

    pub(crate) fn grid(&self, src: Source, k: isize) -> f64 {
        let (now, past, hist) = match src {
            Source::X(i) => (&self.x[i], &self.past_x[i], &self.history.x[i]),
            Source::U(i) => (&self.u[i], &self.past_u[i], &self.history.u[i]),
        };
        if k >= 0 {
            now[k as usize]
        } else {
            let j = (-k) as usize;
            past.get(j).copied().unwrap_or_else(|| hist.value(k as f64 * self.step))
        }
    }

    pub(crate) fn value(&self, src: Source, t: f64) -> f64 {
        let (now, der, hist) = match src {
            Source::X(i) => (&self.x[i], &self.dx[i], &self.history.x[i]),
            Source::U(i) => (&self.u[i], &self.du[i], &self.history.u[i]),
        };
        if t <= 0.0 {
            return hist.value(t);
        }
        let h = self.step;
        let pos = t / h;
        let mut k = pos.floor() as usize;
        let last = now.len() - 1;
        if k >= last {
            k = last.saturating_sub(1);
        }
        let th = (pos - k as f64).clamp(0.0, 1.0);
        hermite(now[k], der[k], now[k + 1], der[k + 1], h, th)
    }

    /// `x_i(t)` for any `t` up to the end of the run, using the history for
    /// `t <= 0` and cubic Hermite interpolation otherwise.
    pub fn x_at(&self, i: usize, t: f64) -> f64 {
        self.value(Source::X(i), t)
    }

    pub fn u_at(&self, i: usize, t: f64) -> f64 {
        self.value(Source::U(i), t)
    }
}

fn hermite(y0: f64, d0: f64, y1: f64, d1: f64, h: f64, th: f64) -> f64 {
    let t2 = th * th;
    let t3 = t2 * th;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + th) * h * d0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * h * d1
}

#[derive(Debug, Clone)]
enum Route {
    Instant,
    Delay(f64),
    /// State index of the last stage of a chain.
    Chain(usize),
    /// Weights for stage offsets 0, h/2, h (on grid points `t_k - j h`),
    /// plus the density at 0 and at each offset for the leading piece.
    Quad { w: [Vec<f64>; 3], lead: [(f64, f64); 3] },
}

#[derive(Debug, Clone)]
struct Conv {
    src: Source,
    route: Route,
}

#[derive(Debug, Clone)]
struct ChainDef {
    src: Source,
    rate: f64,
    /// First state index; the chain occupies `order` slots.
    start: usize,
    order: u32,
}

struct Plan {
    n: usize,
    dim: usize,
    /// `conv[i][j]`: `K_ij * x_j`; `control[i]`: `G_i * u_i`.
    conv: Vec<Vec<Conv>>,
    control: Vec<Conv>,
    chains: Vec<ChainDef>,
    reach: usize,
}

fn quad_route(kernel: &Kernel, h: f64) -> (Route, usize) {
    let q = KernelQuad::new(kernel, h);
    let n_int = q.conv.len() - 1;
    let mut w: [Vec<f64>; 3] = Default::default();
    let mut lead = [(0.0, 0.0); 3];
    let smooth = matches!(kernel, Kernel::Gamma { .. });
    for (idx, th) in [0.0, 0.5, 1.0].into_iter().enumerate() {
        let off = th * h;
        let base = if smooth { composite_weights(n_int) } else { super::quad::trapezoid_weights(n_int) };
        w[idx] = base
            .iter()
            .enumerate()
            .map(|(j, b)| b * h * kernel.density(off + j as f64 * h).unwrap_or(0.0))
            .collect();
        lead[idx] = (kernel.density(0.0).unwrap_or(0.0), kernel.density(off).unwrap_or(0.0));
    }
    (Route::Quad { w, lead }, n_int + 2)
}

fn build_plan(spec: &SystemSpec, h: f64, opts: &SimOptions) -> Plan {
    let n = spec.n();
    let mut dim = 2 * n;
    let mut chains: Vec<ChainDef> = Vec::new();
    let mut chain_ids: HashMap<(Source, u32, u64), usize> = HashMap::new();
    let mut reach = 2usize;
    let mut make = |kernel: &Kernel, src: Source, dim: &mut usize, chains: &mut Vec<ChainDef>| -> Conv {
        let route = match kernel {
            Kernel::Dirac { tau } if *tau == 0.0 => Route::Instant,
            Kernel::Dirac { tau } => {
                reach = reach.max((tau / h).ceil() as usize + 2);
                Route::Delay(*tau)
            }
            Kernel::Gamma { order, rate } if opts.gamma_route == GammaRoute::Chain => {
                let key = (src, *order, rate.to_bits());
                let id = *chain_ids.entry(key).or_insert_with(|| {
                    chains.push(ChainDef {
                        src,
                        rate: *rate,
                        start: *dim,
                        order: *order,
                    });
                    *dim += *order as usize;
                    chains.len() - 1
                });
                let c = &chains[id];
                Route::Chain(c.start + c.order as usize - 1)
            }
            _ => {
                let (r, need) = quad_route(kernel, h);
                reach = reach.max(need);
                r
            }
        };
        Conv { src, route }
    };
    let conv = (0..n)
        .map(|i| (0..n).map(|j| make(spec.kernel(i, j), Source::X(j), &mut dim, &mut chains)).collect())
        .collect();
    let control = (0..n)
        .map(|i| make(spec.control_kernel(i), Source::U(i), &mut dim, &mut chains))
        .collect();
    Plan {
        n,
        dim,
        conv,
        control,
        chains,
        reach,
    }
}

/// `int_0^inf Erlang_k(s) phi(-s) ds`.
fn chain_initial(hist: &History, order: u32, rate: f64) -> f64 {
    if let History::Constant(v) = hist {
        return *v;
    }
    let k = Kernel::gamma(order, rate);
    let horizon = k.horizon(CHAIN_INIT_TAIL_TOL);
    let steps = 20_000usize;
    let ds = horizon / steps as f64;
    (0..=steps)
        .map(|j| {
            let s = j as f64 * ds;
            let w = if j == 0 || j == steps { 0.5 } else { 1.0 };
            w * ds * k.density(s).unwrap() * hist.value(-s)
        })
        .sum()
}

impl Plan {
    fn stage_conv(&self, c: &Conv, traj: &Trajectory, state: &[f64], k: usize, th_idx: usize) -> f64 {
        let idx = |src: Source| match src {
            Source::X(j) => j,
            Source::U(j) => self.n + j,
        };
        match &c.route {
            Route::Instant => state[idx(c.src)],
            Route::Delay(tau) => {
                let t = (k as f64 + 0.5 * th_idx as f64) * traj.step - tau;
                traj.value(c.src, t)
            }
            Route::Chain(v) => state[*v],
            Route::Quad { w, lead } => {
                let ws = &w[th_idx];
                let mut acc = 0.0;
                for (j, wj) in ws.iter().enumerate() {
                    acc += wj * traj.grid(c.src, k as isize - j as isize);
                }
                if th_idx > 0 {
                    let off = 0.5 * th_idx as f64 * traj.step;
                    let (k0, koff) = lead[th_idx];
                    acc += 0.5 * off * (k0 * state[idx(c.src)] + koff * traj.grid(c.src, k as isize));
                }
                acc
            }
        }
    }

    fn rhs(&self, spec: &SystemSpec, traj: &Trajectory, state: &[f64], k: usize, th_idx: usize, out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut growth = spec.b()[i] - spec.mu()[i] * state[i];
            for j in 0..n {
                let a = spec.a()[i][j];
                if a != 0.0 {
                    growth -= a * self.stage_conv(&self.conv[i][j], traj, state, k, th_idx);
                }
            }
            if spec.c()[i] != 0.0 {
                growth -= spec.c()[i] * self.stage_conv(&self.control[i], traj, state, k, th_idx);
            }
            out[i] = state[i] * growth;
            out[n + i] = -spec.e()[i] * state[n + i] + spec.d()[i] * state[i];
        }
        for c in &self.chains {
            let src = match c.src {
                Source::X(j) => state[j],
                Source::U(j) => state[n + j],
            };
            let mut prev = src;
            for s in 0..c.order as usize {
                let v = c.start + s;
                out[v] = c.rate * (prev - state[v]);
                prev = state[v];
            }
        }
    }
}

/// Integrate with the spec's own history.
pub fn integrate(spec: &SystemSpec, history: &HistorySpec, t_end: f64, h: f64) -> Result<Trajectory, SimError> {
    integrate_with(spec, history, t_end, h, &SimOptions::default())
}

pub fn integrate_with(
    spec: &SystemSpec,
    history: &HistorySpec,
    t_end: f64,
    h: f64,
    opts: &SimOptions,
) -> Result<Trajectory, SimError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(SimError::InvalidStep(h));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(SimError::InvalidHorizon(t_end));
    }
    if let Some(tau) = min_positive_delay(spec) {
        if h > tau / 4.0 * (1.0 + 1e-12) {
            return Err(SimError::StepTooLarge { h, tau });
        }
    }
    let n = spec.n();
    history.validate(n)?;
    let plan = build_plan(spec, h, opts);
    let steps = ((t_end / h) - 1e-9).ceil().max(0.0) as usize;

    let sample = |hs: &Vec<History>| -> Vec<Vec<f64>> {
        hs.iter()
            .map(|hi| (0..=plan.reach).map(|k| hi.value(-(k as f64) * h)).collect())
            .collect()
    };
    let mut traj = Trajectory {
        t_grid: Vec::with_capacity(steps + 1),
        x: vec![Vec::with_capacity(steps + 1); n],
        u: vec![Vec::with_capacity(steps + 1); n],
        chain_states: vec![Vec::with_capacity(steps + 1); plan.dim - 2 * n],
        history: history.clone(),
        step: h,
        terminated: None,
        spec: spec.clone(),
        dx: vec![Vec::with_capacity(steps + 1); n],
        du: vec![Vec::with_capacity(steps + 1); n],
        past_x: sample(&history.x),
        past_u: sample(&history.u),
    };

    let mut state = vec![0.0; plan.dim];
    for i in 0..n {
        state[i] = history.x[i].at_zero();
        state[n + i] = history.u[i].at_zero();
    }
    for c in &plan.chains {
        let hist = match c.src {
            Source::X(j) => &history.x[j],
            Source::U(j) => &history.u[j],
        };
        for s in 0..c.order as usize {
            state[c.start + s] = chain_initial(hist, s as u32 + 1, c.rate);
        }
    }

    let push = |traj: &mut Trajectory, state: &[f64], t: f64| {
        traj.t_grid.push(t);
        for i in 0..n {
            traj.x[i].push(state[i]);
            traj.u[i].push(state[n + i]);
        }
        for (v, series) in traj.chain_states.iter_mut().enumerate() {
            series.push(state[2 * n + v]);
        }
    };
    let push_der = |traj: &mut Trajectory, der: &[f64]| {
        for i in 0..n {
            traj.dx[i].push(der[i]);
            traj.du[i].push(der[n + i]);
        }
    };

    push(&mut traj, &state, 0.0);
    let dim = plan.dim;
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut tmp = vec![0.0; dim];
    for k in 0..steps {
        plan.rhs(spec, &traj, &state, k, 0, &mut k1);
        push_der(&mut traj, &k1);
        for v in 0..dim {
            tmp[v] = state[v] + 0.5 * h * k1[v];
        }
        plan.rhs(spec, &traj, &tmp, k, 1, &mut k2);
        for v in 0..dim {
            tmp[v] = state[v] + 0.5 * h * k2[v];
        }
        plan.rhs(spec, &traj, &tmp, k, 1, &mut k3);
        for v in 0..dim {
            tmp[v] = state[v] + h * k3[v];
        }
        plan.rhs(spec, &traj, &tmp, k, 2, &mut k4);
        for v in 0..dim {
            state[v] += h / 6.0 * (k1[v] + 2.0 * k2[v] + 2.0 * k3[v] + k4[v]);
        }
        let t = (k + 1) as f64 * h;
        // Overflow (inf, or NaN from inf - inf) counts as blow-up.
        if let Some(i) = (0..2 * n).find(|&i| state[i] > opts.blowup_ceiling || state[i].is_nan() || state[i] == f64::INFINITY) {
            traj.terminated = Some(Termination::Blowup { t, variable: i });
            return Ok(traj);
        }
        for i in 0..2 * n {
            let v = state[i];
            if v <= 0.0 {
                let name = if i < n { format!("x_{}", i + 1) } else { format!("u_{}", i - n + 1) };
                return Err(SimError::NonPositive { var: name, t, value: v, h });
            }
        }
        push(&mut traj, &state, t);
    }
    plan.rhs(spec, &traj, &state, steps, 0, &mut k1);
    push_der(&mut traj, &k1);
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SpecBuilder;

    fn logistic() -> SystemSpec {
        SpecBuilder::new(vec![1.0], vec![1.0], vec![vec![0.0]]).build().unwrap()
    }

    #[test]
    fn long_horizons_coarsen_the_step() {
        let spec = SpecBuilder::new(vec![1.0], vec![1.0], vec![vec![0.0]]).build().unwrap();
        assert_eq!(step_for_horizon(&spec, 100.0, 400_000), 0.01);
        assert_eq!(step_for_horizon(&spec, 8000.0, 400_000), 0.02);
        assert_eq!(step_for_horizon(&spec, 1e6, 400_000), 0.05);
        let fast = spec.to_builder().uniform_kernel(Kernel::dirac(0.1)).build().unwrap();
        assert_eq!(step_for_horizon(&fast, 1e6, 400_000), 0.025);
    }

    #[test]
    fn scalar_logistic_limit() {
        let spec = logistic();
        let traj = integrate(&spec, &HistorySpec::constant(&[0.5], &[0.5]), 20.0, 0.01).unwrap();
        assert!((traj.final_x()[0] - 1.0).abs() < 1e-6);
        // Closed form x(t) = 1 / (1 + e^{-t}) from x(0) = 1/2.
        let exact = 1.0 / (1.0 + (-5.0f64).exp());
        assert!((traj.x[0][500] - exact).abs() < 1e-9);
    }

    #[test]
    fn hermite_reproduces_cubics() {
        let f = |t: f64| 1.0 + t - 2.0 * t * t + 0.5 * t * t * t;
        let df = |t: f64| 1.0 - 4.0 * t + 1.5 * t * t;
        let v = hermite(f(0.2), df(0.2), f(0.3), df(0.3), 0.1, 0.37);
        assert!((v - f(0.237)).abs() < 1e-14);
    }

    #[test]
    fn step_restriction_for_point_delays() {
        let spec = logistic();
        let err = integrate(&spec, &HistorySpec::constant(&[0.5], &[0.5]), 1.0, 0.3).unwrap_err();
        assert!(matches!(err, SimError::StepTooLarge { .. }));
        assert!((default_step(&spec) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn chain_initial_for_table_history() {
        // phi(s) = 1 + s/10 on [-10, 0]; for Erlang(1, 1), int e^{-s}(1 - s/10) ds ~ 0.9.
        let hist = History::table(vec![-10.0, 0.0], vec![0.0, 1.0]).unwrap();
        let v = chain_initial(&hist, 1, 1.0);
        let exact = 0.9 + 0.1 * (-10.0f64).exp();
        assert!((v - exact).abs() < 1e-5, "{v} vs {exact}");
    }

    #[test]
    fn gamma_routes_agree_on_scalar_run() {
        let spec = SpecBuilder::new(vec![1.0], vec![1.0], vec![vec![0.5]])
            .uniform_kernel(Kernel::gamma(1, 2.0))
            .build()
            .unwrap();
        let hist = HistorySpec::constant(&[0.2], &[0.5]);
        let a = integrate(&spec, &hist, 10.0, 0.01).unwrap();
        let opts = SimOptions {
            gamma_route: GammaRoute::Quadrature,
            ..SimOptions::default()
        };
        let b = integrate_with(&spec, &hist, 10.0, 0.01, &opts).unwrap();
        let diff = a.x[0].iter().zip(&b.x[0]).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-6, "{diff}");
    }
}
