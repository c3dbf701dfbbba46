//! Equilibria of the controlled system.
//!
//! At an equilibrium with support `S`, the surviving densities solve
//! `M_SS x_S = b_S` with `M = [delta_ij lambda_i + a_ij]`, and every control
//! sits at `u_i = d_i x_i / e_i`. The equilibrium is saturated when no absent
//! species could invade: `(M x)_q >= b_q` for all `q` outside `S`.
//!
//! Supports are carried as sorted 0-based index lists; nothing is reordered.

use nalgebra::DVector;
use serde::Serialize;

use crate::matrices::{self, det, det_tolerance, principal_submatrix, Mat, MatrixClass, MatrixError, StructureMatrices};
use crate::model::SystemSpec;

/// Relative band for calling a support value or margin zero.
pub const DEGENERACY_RTOL: f64 = 1e-9;
/// Relative tolerance for the bordered-determinant identity.
pub const IDENTITY_RTOL: f64 = 1e-8;

/// Determinants attached to one support.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CramerTable {
    pub support: Vec<usize>,
    /// `det M_SS`.
    pub r0: f64,
    /// `det M_SS` with column `k` replaced by `b_S`, in support order.
    pub ri: Vec<f64>,
    /// `(q, det [[M_SS, b_S], [a_qS, b_q]])` for every `q` outside `S`.
    pub rq: Vec<(usize, f64)>,
    /// Largest relative deviation between the bordered determinants and
    /// `b_q r0 - sum_j a_qj r_j`.
    pub identity_residual: f64,
}

impl CramerTable {
    pub fn identity_holds(&self) -> bool {
        self.identity_residual <= IDENTITY_RTOL
    }

    pub fn ratio(&self, k: usize) -> f64 {
        self.ri[k] / self.r0
    }
}

/// Cramer quantities of `M_SS x_S = b_S` for a non-empty support.
pub fn cramer_table(spec: &SystemSpec, support: &[usize]) -> CramerTable {
    assert!(!support.is_empty(), "support must be non-empty");
    let m = StructureMatrices::build(spec).m;
    cramer_from(&m, spec.b(), spec.a(), support)
}

fn cramer_from(m: &Mat, b: &[f64], a: &[Vec<f64>], support: &[usize]) -> CramerTable {
    let n = m.nrows();
    let p = support.len();
    let mss = principal_submatrix(m, support);
    let r0 = det(&mss);
    let ri: Vec<f64> = (0..p)
        .map(|k| {
            let mut mk = mss.clone();
            for r in 0..p {
                mk[(r, k)] = b[support[r]];
            }
            det(&mk)
        })
        .collect();
    let mut identity_residual: f64 = 0.0;
    let rq = (0..n)
        .filter(|q| !support.contains(q))
        .map(|q| {
            let bordered = Mat::from_fn(p + 1, p + 1, |r, c| match (r < p, c < p) {
                (true, true) => mss[(r, c)],
                (true, false) => b[support[r]],
                (false, true) => a[q][support[c]],
                (false, false) => b[q],
            });
            let direct = det(&bordered);
            let terms: Vec<f64> = std::iter::once(b[q] * r0)
                .chain(support.iter().zip(&ri).map(|(&j, rj)| -a[q][j] * rj))
                .collect();
            let formula: f64 = terms.iter().sum();
            let scale = terms.iter().map(|t| t.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
            identity_residual = identity_residual.max((direct - formula).abs() / scale.max(direct.abs()));
            (q, direct)
        })
        .collect();
    CramerTable {
        support: support.to_vec(),
        r0,
        ri,
        rq,
        identity_residual,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumCandidate {
    pub support: Vec<usize>,
    pub x_star: Vec<f64>,
    pub u_star: Vec<f64>,
    /// `(q, (M x*)_q - b_q)` for every `q` outside the support.
    pub margins: Vec<(usize, f64)>,
    pub saturated: bool,
    /// Some support value or margin lies within the zero band.
    pub degenerate: bool,
    /// `max_{i in S} |(M x*)_i - b_i|` relative to the row scale.
    pub residual: f64,
}

impl EquilibriumCandidate {
    pub fn is_trivial(&self) -> bool {
        self.support.is_empty()
    }

    pub fn is_positive(&self) -> bool {
        self.support.len() == self.x_star.len()
    }

    pub fn off_support(&self) -> Vec<usize> {
        self.margins.iter().map(|(q, _)| *q).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumSet {
    /// One entry per non-singular support, by cardinality then lexicographic.
    pub candidates: Vec<EquilibriumCandidate>,
    /// Supports whose restricted system is singular.
    pub singular_supports: Vec<Vec<usize>>,
}

impl EquilibriumSet {
    pub fn saturated(&self) -> impl Iterator<Item = &EquilibriumCandidate> {
        self.candidates.iter().filter(|c| c.saturated)
    }
}

/// All supports of `{0..n}`, by increasing cardinality, lexicographic within.
pub fn supports_in_order(n: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = (0u32..(1 << n))
        .map(|mask| (0..n).filter(|&i| mask & (1 << i) != 0).collect())
        .collect();
    out.sort_by(|a: &Vec<usize>, b: &Vec<usize>| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out
}

fn candidate_for(spec: &SystemSpec, m: &Mat, support: &[usize]) -> Option<EquilibriumCandidate> {
    let n = spec.n();
    let b = spec.b();
    let mut x = vec![0.0; n];
    if !support.is_empty() {
        let mss = principal_submatrix(m, support);
        if det(&mss).abs() <= det_tolerance(&mss) {
            return None;
        }
        let rhs = DVector::from_iterator(support.len(), support.iter().map(|&i| b[i]));
        let xs = mss.lu().solve(&rhs)?;
        for (k, &i) in support.iter().enumerate() {
            x[i] = xs[k];
        }
    }
    let xv = DVector::from_vec(x.clone());
    let mx = m * &xv;
    let row_scale = |i: usize| -> f64 {
        let s: f64 = (0..n).map(|j| (m[(i, j)] * x[j]).abs()).sum();
        s.max(b[i].abs()).max(1.0)
    };
    let residual = support
        .iter()
        .map(|&i| (mx[i] - b[i]).abs() / row_scale(i))
        .fold(0.0, f64::max);
    let margins: Vec<(usize, f64)> = (0..n)
        .filter(|q| !support.contains(q))
        .map(|q| (q, mx[q] - b[q]))
        .collect();
    let x_scale = x.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    let x_tol = DEGENERACY_RTOL * x_scale;
    let mut degenerate = support.iter().any(|&i| x[i].abs() <= x_tol);
    let mut saturated = support.iter().all(|&i| x[i] >= -x_tol);
    for &(q, margin) in &margins {
        let tol = DEGENERACY_RTOL * row_scale(q);
        degenerate |= margin.abs() <= tol;
        saturated &= margin >= -tol;
    }
    let u: Vec<f64> = (0..n).map(|i| spec.d()[i] * x[i] / spec.e()[i]).collect();
    Some(EquilibriumCandidate {
        support: support.to_vec(),
        x_star: x,
        u_star: u,
        margins,
        saturated,
        degenerate,
        residual,
    })
}

/// Every equilibrium obtained from a non-singular support system.
pub fn enumerate_equilibria(spec: &SystemSpec) -> Result<EquilibriumSet, MatrixError> {
    let n = spec.n();
    if n > matrices::MAX_ENUM_DIM {
        return Err(MatrixError::TooLarge(n));
    }
    let m = StructureMatrices::build(spec).m;
    let mut candidates = Vec::new();
    let mut singular_supports = Vec::new();
    for support in supports_in_order(n) {
        match candidate_for(spec, &m, &support) {
            Some(c) => candidates.push(c),
            None => singular_supports.push(support),
        }
    }
    Ok(EquilibriumSet {
        candidates,
        singular_supports,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SaturatedOutcome {
    Unique {
        equilibrium: EquilibriumCandidate,
        /// `M` is a P-matrix, so no other saturated equilibrium exists.
        uniqueness_certified: bool,
    },
    Multiple {
        equilibria: Vec<EquilibriumCandidate>,
    },
    NoneFound,
}

impl SaturatedOutcome {
    pub fn unique(&self) -> Option<&EquilibriumCandidate> {
        match self {
            SaturatedOutcome::Unique { equilibrium, .. } => Some(equilibrium),
            _ => None,
        }
    }

    pub fn all(&self) -> Vec<&EquilibriumCandidate> {
        match self {
            SaturatedOutcome::Unique { equilibrium, .. } => vec![equilibrium],
            SaturatedOutcome::Multiple { equilibria } => equilibria.iter().collect(),
            SaturatedOutcome::NoneFound => Vec::new(),
        }
    }
}

fn same_point(a: &EquilibriumCandidate, b: &EquilibriumCandidate) -> bool {
    a.x_star
        .iter()
        .zip(&b.x_star)
        .all(|(x, y)| (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0))
}

/// Saturated equilibria with coincident points merged. The first (smallest)
/// support is kept for each point, so a boundary point reached with a zero
/// entry inside a larger support is reported under its true support.
pub fn distinct_saturated(set: &EquilibriumSet) -> Vec<EquilibriumCandidate> {
    let mut out: Vec<EquilibriumCandidate> = Vec::new();
    for c in set.saturated() {
        if !out.iter().any(|o| same_point(o, c)) {
            out.push(c.clone());
        }
    }
    out
}

/// The saturated equilibrium, certified unique when `M` is a P-matrix.
pub fn saturated_equilibrium(spec: &SystemSpec) -> Result<SaturatedOutcome, MatrixError> {
    let set = enumerate_equilibria(spec)?;
    let found = distinct_saturated(&set);
    let p_matrix = matrices::is_p_matrix(&StructureMatrices::build(spec).m)?.class == MatrixClass::PMatrix;
    if p_matrix && found.len() > 1 {
        log::warn!("M is a P-matrix but {} saturated points were found", found.len());
    }
    if !p_matrix && !found.is_empty() {
        log::warn!("M is not a P-matrix: uniqueness of the saturated equilibrium is not guaranteed");
    }
    Ok(match found.len() {
        0 => SaturatedOutcome::NoneFound,
        1 => SaturatedOutcome::Unique {
            equilibrium: found.into_iter().next().unwrap(),
            uniqueness_certified: p_matrix,
        },
        _ => SaturatedOutcome::Multiple { equilibria: found },
    })
}
