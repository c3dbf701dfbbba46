//! Dense two-phase simplex for the small linear programs used by the
//! certificate search. Bland's rule is used throughout, so the solver always
//! terminates and its output depends only on the input.

use thiserror::Error;

const PIVOT_EPS: f64 = 1e-12;
const MAX_ITER: usize = 50_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex did not terminate within {0} pivots")]
    IterationLimit(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn rhs(&self, r: usize) -> f64 {
        self.rows[r][self.width]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        self.basis[r] = c;
    }

    /// Maximize `obj . z` over the current basis, only letting columns with
    /// `allowed(j)` enter.
    fn optimize(&mut self, obj: &[f64], allowed: impl Fn(usize) -> bool) -> Result<(), LpError> {
        for _ in 0..MAX_ITER {
            let entering = (0..self.width).filter(|&j| allowed(j)).find(|&j| {
                let z: f64 = self
                    .rows
                    .iter()
                    .zip(&self.basis)
                    .map(|(row, &b)| obj[b] * row[j])
                    .sum();
                obj[j] - z > 1e-11
            });
            let Some(c) = entering else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows.len() {
                let a = self.rows[r][c];
                if a > PIVOT_EPS {
                    let ratio = self.rhs(r) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - 1e-14
                                || ((ratio - lratio).abs() <= 1e-14 && self.basis[r] < self.basis[lr])
                            {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            match leave {
                None => return Err(LpError::Unbounded),
                Some((r, _)) => self.pivot(r, c),
            }
        }
        Err(LpError::IterationLimit(MAX_ITER))
    }
}

/// Maximize `c . x` subject to `A x <= b` and `x >= 0`.
pub fn maximize(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<LpOutcome, LpError> {
    let m = a.len();
    let k = c.len();
    assert_eq!(b.len(), m, "row count mismatch");
    assert!(a.iter().all(|r| r.len() == k), "column count mismatch");

    // Columns: x (k), slack (m), artificial (one per row with negative rhs).
    let negative: Vec<usize> = (0..m).filter(|&r| b[r] < 0.0).collect();
    let width = k + m + negative.len();
    let art_start = k + m;
    let mut rows = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    for r in 0..m {
        let mut row = vec![0.0; width + 1];
        let sign = if b[r] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..k {
            row[j] = sign * a[r][j];
        }
        row[k + r] = sign;
        row[width] = sign * b[r];
        if let Some(p) = negative.iter().position(|&q| q == r) {
            row[art_start + p] = 1.0;
            basis.push(art_start + p);
        } else {
            basis.push(k + r);
        }
        rows.push(row);
    }
    let mut tab = Tableau { rows, basis, width };

    if !negative.is_empty() {
        let mut phase1 = vec![0.0; width];
        for j in art_start..width {
            phase1[j] = -1.0;
        }
        tab.optimize(&phase1, |_| true)?;
        let infeas: f64 = (0..m)
            .filter(|&r| tab.basis[r] >= art_start)
            .map(|r| tab.rhs(r))
            .sum();
        let scale = 1.0 + b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if infeas > 1e-9 * scale {
            return Ok(LpOutcome::Infeasible);
        }
        // Drive zero-level artificials out of the basis where possible.
        for r in 0..m {
            if tab.basis[r] >= art_start {
                if let Some(c) = (0..art_start).find(|&j| tab.rows[r][j].abs() > 1e-9) {
                    tab.pivot(r, c);
                }
            }
        }
    }

    let mut obj = vec![0.0; width];
    obj[..k].copy_from_slice(c);
    tab.optimize(&obj, |j| j < art_start)?;

    let mut x = vec![0.0; k];
    for (r, &bv) in tab.basis.iter().enumerate() {
        if bv < k {
            x[bv] = tab.rhs(r).max(0.0);
        }
    }
    let value = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok(LpOutcome::Optimal { x, value })
}

/// Smallest margin accepted for strict rows.
pub const STRICT_SLACK: f64 = 1e-9;

/// Find `x >= 0` with `A x <= rhs`, where rows flagged in `strict` must hold
/// with `<`. Strict rows are handled by maximizing a common margin `t <= 1`
/// (`A_r x + t <= rhs_r`); the system counts as infeasible when that margin
/// cannot exceed [`STRICT_SLACK`].
pub fn linear_feasibility(a: &[Vec<f64>], rhs: &[f64], strict: &[bool]) -> Result<Option<Vec<f64>>, LpError> {
    let k = a.first().map_or(0, |r| r.len());
    let m = a.len();
    assert_eq!(strict.len(), m, "strict flags must match rows");
    let mut rows: Vec<Vec<f64>> = a
        .iter()
        .zip(strict)
        .map(|(r, &s)| {
            let mut row = r.clone();
            row.push(if s { 1.0 } else { 0.0 });
            row
        })
        .collect();
    let mut b = rhs.to_vec();
    let mut t_bound = vec![0.0; k + 1];
    t_bound[k] = 1.0;
    rows.push(t_bound);
    b.push(1.0);
    let mut obj = vec![0.0; k + 1];
    obj[k] = 1.0;
    match maximize(&obj, &rows, &b)? {
        LpOutcome::Infeasible => Ok(None),
        LpOutcome::Optimal { mut x, value } => {
            if strict.iter().any(|&s| s) && value <= STRICT_SLACK {
                return Ok(None);
            }
            x.truncate(k);
            Ok(Some(x))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimum(out: LpOutcome) -> (Vec<f64>, f64) {
        match out {
            LpOutcome::Optimal { x, value } => (x, value),
            LpOutcome::Infeasible => panic!("expected optimum"),
        }
    }

    #[test]
    fn textbook_maximum() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let a = vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 2.0]];
        let (x, v) = optimum(maximize(&[3.0, 5.0], &a, &[4.0, 12.0, 18.0]).unwrap());
        assert!((v - 36.0).abs() < 1e-12);
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn lower_bounds_need_phase_one() {
        // max -x - y with x + y >= 2, x <= 3
        let a = vec![vec![-1.0, -1.0], vec![1.0, 0.0]];
        let (x, v) = optimum(maximize(&[-1.0, -1.0], &a, &[-2.0, 3.0]).unwrap());
        assert!((v + 2.0).abs() < 1e-12);
        assert!((x[0] + x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let a = vec![vec![1.0], vec![-1.0]];
        assert_eq!(maximize(&[1.0], &a, &[1.0, -2.0]).unwrap(), LpOutcome::Infeasible);
        assert_eq!(maximize(&[1.0], &[vec![-1.0]], &[1.0]), Err(LpError::Unbounded));
    }

    #[test]
    fn feasibility_single_constraint() {
        let x = linear_feasibility(&[vec![1.0]], &[1.0], &[false]).unwrap().unwrap();
        assert_eq!(x, vec![0.0]);
    }

    #[test]
    fn feasibility_strict_contradiction() {
        // x < 0 with x >= 0.
        assert_eq!(linear_feasibility(&[vec![1.0]], &[0.0], &[true]).unwrap(), None);
    }

    #[test]
    fn feasibility_strict_positive_combination() {
        // -x < -1 and x <= 3.
        let x = linear_feasibility(&[vec![-1.0], vec![1.0]], &[-1.0, 3.0], &[true, false])
            .unwrap()
            .unwrap();
        assert!(x[0] > 1.0 && x[0] <= 3.0);
    }

    #[test]
    fn degenerate_cycling_example_terminates() {
        // Beale's example, which cycles under the textbook largest-coefficient rule.
        let c = [0.75, -150.0, 0.02, -6.0];
        let a = vec![
            vec![0.25, -60.0, -0.04, 9.0],
            vec![0.5, -90.0, -0.02, 3.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ];
        let (_, v) = optimum(maximize(&c, &a, &[0.0, 0.0, 1.0]).unwrap());
        assert!((v - 0.05).abs() < 1e-12);
    }
}
