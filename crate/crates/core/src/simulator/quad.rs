//! Grid quadrature for kernel convolutions on a uniform step.

use crate::model::Kernel;

/// Tail tolerance for truncating kernel integrals.
pub const KERNEL_TAIL_TOL: f64 = 1e-8;

/// Composite weights (without the factor `h`) for `N` intervals: Simpson
/// when `N` is even, Simpson plus a closing 3/8 panel when odd, trapezoid
/// for a single interval.
pub fn composite_weights(intervals: usize) -> Vec<f64> {
    let n = intervals;
    let mut w = vec![0.0; n + 1];
    match n {
        0 => {}
        1 => {
            w[0] = 0.5;
            w[1] = 0.5;
        }
        _ => {
            let simpson_end = if n % 2 == 0 { n } else { n - 3 };
            for k in (0..simpson_end).step_by(2) {
                w[k] += 1.0 / 3.0;
                w[k + 1] += 4.0 / 3.0;
                w[k + 2] += 1.0 / 3.0;
            }
            if n % 2 == 1 {
                let s = n - 3;
                w[s] += 3.0 / 8.0;
                w[s + 1] += 9.0 / 8.0;
                w[s + 2] += 9.0 / 8.0;
                w[s + 3] += 3.0 / 8.0;
            }
        }
    }
    w
}

/// Trapezoid weights (without `h`) for `N` intervals.
pub fn trapezoid_weights(intervals: usize) -> Vec<f64> {
    let mut w = vec![1.0; intervals + 1];
    if intervals == 0 {
        return vec![0.0];
    }
    w[0] = 0.5;
    w[intervals] = 0.5;
    w
}

/// Precomputed weights for `int_0^inf K(s) f(t - s) ds` and
/// `int_0^inf S(r) f(t - r) dr` (with `S` the survival function) when `t`
/// is a grid point and `f` is known on the grid.
#[derive(Debug, Clone)]
pub struct KernelQuad {
    /// Point mass at `tau`.
    pub dirac: Option<f64>,
    /// Weights on `f(t - k h)`, `k = 0..`, already scaled by `h`.
    pub conv: Vec<f64>,
    /// Survival weights on `f(t - k h)`, scaled by `h`. For a point mass
    /// these cover `[0, floor(tau/h) h]`; the remainder is `surv_partial`.
    pub surv: Vec<f64>,
    /// `(start, length)` of the last partial survival cell for a point mass.
    pub surv_partial: Option<(f64, f64)>,
}

impl KernelQuad {
    pub fn new(kernel: &Kernel, h: f64) -> KernelQuad {
        match kernel {
            Kernel::Dirac { tau } => {
                let full = (tau / h + 1e-9).floor() as usize;
                let rem = tau - full as f64 * h;
                let surv = composite_weights(full).into_iter().map(|w| w * h).collect();
                KernelQuad {
                    dirac: Some(*tau),
                    conv: Vec::new(),
                    surv,
                    surv_partial: (rem > 1e-12 * h.max(*tau)).then_some((full as f64 * h, rem)),
                }
            }
            Kernel::Gamma { .. } | Kernel::Table(_) => {
                let horizon = kernel.horizon(KERNEL_TAIL_TOL);
                let mut n = (horizon / h).ceil() as usize;
                let smooth = matches!(kernel, Kernel::Gamma { .. });
                if smooth && n % 2 == 1 {
                    n += 1;
                }
                let base = if smooth { composite_weights(n) } else { trapezoid_weights(n) };
                let conv = base
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * h * kernel.density(k as f64 * h).unwrap_or(0.0))
                    .collect();
                let surv = base
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * h * kernel.tail_mass(k as f64 * h))
                    .collect();
                KernelQuad {
                    dirac: None,
                    conv,
                    surv,
                    surv_partial: None,
                }
            }
        }
    }

    /// Number of grid steps into the past that the weights reach.
    pub fn reach(&self) -> usize {
        self.conv.len().max(self.surv.len()) + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composite_weights_integrate_cubics() {
        for n in [2usize, 3, 5, 8, 9] {
            let h = 1.0 / n as f64;
            let w = composite_weights(n);
            let v: f64 = w.iter().enumerate().map(|(k, w)| w * h * (k as f64 * h).powi(3)).sum();
            assert!((v - 0.25).abs() < 1e-14, "n = {n}: {v}");
        }
    }

    #[test]
    fn gamma_survival_weights_give_first_moment() {
        let k = Kernel::gamma(2, 1.5);
        let q = KernelQuad::new(&k, 0.01);
        let total: f64 = q.surv.iter().sum();
        assert!((total - 2.0 / 1.5).abs() < 1e-7);
        let mass: f64 = q.conv.iter().sum();
        assert!((mass - 1.0).abs() < 1e-7);
    }
}
