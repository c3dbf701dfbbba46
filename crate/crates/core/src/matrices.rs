//! Community matrices of a [`SystemSpec`] and their classification.
//!
//! All sign decisions go through a relative determinant band
//! (`tol_det = 1e-9 * prod_i max_j |b_ij|` over the minor in question); values
//! inside the band produce [`MatrixClass::Indeterminate`] rather than a guess.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::lp::{self, LpError};
use crate::model::SystemSpec;

pub type Mat = DMatrix<f64>;

/// Largest dimension for exhaustive principal-minor enumeration.
pub const MAX_ENUM_DIM: usize = 16;
pub const DET_RTOL: f64 = 1e-9;
/// Entries of a computed inverse above `-INV_TOL` count as non-negative.
pub const INV_TOL: f64 = 1e-10;
pub const EIG_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrixError {
    #[error("dimension {0} exceeds the enumeration bound {MAX_ENUM_DIM}")]
    TooLarge(usize),
    #[error("matrix is not square")]
    NotSquare,
    #[error("entry ({0}, {1}) is positive off the diagonal: not a Z-matrix")]
    NotZMatrix(usize, usize),
    #[error("internal solver error: {0}")]
    Solver(#[from] LpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixClass {
    PMatrix,
    NotP,
    NonsingularM,
    SingularM,
    NotM,
    Indeterminate,
}

impl MatrixClass {
    pub fn label(self) -> &'static str {
        match self {
            MatrixClass::PMatrix => "P_matrix",
            MatrixClass::NotP => "not_P",
            MatrixClass::NonsingularM => "nonsingular_M",
            MatrixClass::SingularM => "singular_M",
            MatrixClass::NotM => "not_M",
            MatrixClass::Indeterminate => "indeterminate",
        }
    }
}

/// A principal minor that decided (or failed to decide) a classification.
/// Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinorDiagnostic {
    pub indices: Vec<usize>,
    pub value: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixVerdict {
    pub class: MatrixClass,
    /// `v > 0` with `B v > 0` (for non-singular M-matrices).
    pub certificate: Option<Vec<f64>>,
    pub failing_minor: Option<MinorDiagnostic>,
    /// Smallest real part of the spectrum when it was needed.
    pub min_real_eigenvalue: Option<f64>,
}

impl MatrixVerdict {
    fn bare(class: MatrixClass) -> Self {
        MatrixVerdict {
            class,
            certificate: None,
            failing_minor: None,
            min_real_eigenvalue: None,
        }
    }
}

/// `(eta, q)` with `B q > 0`, `B^T eta > 0` and the symmetric row sums
/// `sum_j (eta_i b_ij q_j + eta_j b_ji q_i)` all positive.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma31Certificate {
    pub eta: Vec<f64>,
    pub q: Vec<f64>,
    pub row_values: Vec<f64>,
}

pub fn from_rows(rows: &[Vec<f64>]) -> Mat {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

pub fn to_rows(b: &Mat) -> Vec<Vec<f64>> {
    (0..b.nrows()).map(|i| (0..b.ncols()).map(|j| b[(i, j)]).collect()).collect()
}

pub fn principal_submatrix(b: &Mat, idx: &[usize]) -> Mat {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| b[(idx[r], idx[c])])
}

/// Band half-width for the sign of `det b`.
pub fn det_tolerance(b: &Mat) -> f64 {
    let scale: f64 = b
        .row_iter()
        .map(|r| r.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .product();
    DET_RTOL * scale
}

/// Determinant by LU with partial pivoting.
pub fn det(b: &Mat) -> f64 {
    if b.nrows() == 0 {
        return 1.0;
    }
    b.clone().lu().determinant()
}

/// Minor determinant and its tolerance.
fn minor(b: &Mat, idx: &[usize]) -> (f64, f64) {
    let sub = principal_submatrix(b, idx);
    (det(&sub), det_tolerance(&sub))
}

fn mask_indices(mask: u32, n: usize) -> Vec<usize> {
    (0..n).filter(|&i| mask & (1 << i) != 0).collect()
}

fn check_square(b: &Mat) -> Result<usize, MatrixError> {
    if b.nrows() != b.ncols() {
        return Err(MatrixError::NotSquare);
    }
    if b.nrows() > MAX_ENUM_DIM {
        return Err(MatrixError::TooLarge(b.nrows()));
    }
    Ok(b.nrows())
}

/// Every principal minor of `b`, with tolerances, in subset-mask order.
pub fn principal_minors(b: &Mat) -> Result<Vec<(Vec<usize>, f64, f64)>, MatrixError> {
    let n = check_square(b)?;
    Ok((1u32..(1 << n))
        .map(|mask| {
            let idx = mask_indices(mask, n);
            let (d, tol) = minor(b, &idx);
            (idx, d, tol)
        })
        .collect())
}

/// P-matrix test by exhaustive enumeration of principal minors.
pub fn is_p_matrix(b: &Mat) -> Result<MatrixVerdict, MatrixError> {
    let mut undecided: Option<MinorDiagnostic> = None;
    for (indices, value, tol) in principal_minors(b)? {
        if value < -tol {
            return Ok(MatrixVerdict {
                failing_minor: Some(MinorDiagnostic { indices, value, tol }),
                ..MatrixVerdict::bare(MatrixClass::NotP)
            });
        }
        if value <= tol && undecided.is_none() {
            undecided = Some(MinorDiagnostic { indices, value, tol });
        }
    }
    Ok(match undecided {
        Some(diag) => MatrixVerdict {
            failing_minor: Some(diag),
            ..MatrixVerdict::bare(MatrixClass::Indeterminate)
        },
        None => MatrixVerdict::bare(MatrixClass::PMatrix),
    })
}

pub fn check_z_matrix(b: &Mat) -> Result<(), MatrixError> {
    let n = check_square(b)?;
    for i in 0..n {
        for j in 0..n {
            if i != j && b[(i, j)] > 0.0 {
                return Err(MatrixError::NotZMatrix(i, j));
            }
        }
    }
    Ok(())
}

/// Smallest real part of the spectrum (Schur decomposition).
pub fn min_real_eigenvalue(b: &Mat) -> f64 {
    if b.nrows() == 0 {
        return f64::INFINITY;
    }
    b.complex_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |m, z| m.min(z.re))
}

/// Inverse-based certificate: `Some(v)` when `b` is safely invertible with an
/// entrywise non-negative inverse and `v = b^{-1} 1` re-verifies.
fn inverse_certificate(b: &Mat) -> Option<Vec<f64>> {
    let n = b.nrows();
    let d = det(b);
    if d.abs() <= det_tolerance(b) {
        return None;
    }
    let inv = b.clone().lu().try_inverse()?;
    if inv.iter().any(|v| !v.is_finite() || *v < -INV_TOL) {
        return None;
    }
    let v = &inv * DVector::from_element(n, 1.0);
    let bv = b * &v;
    if v.iter().all(|x| *x > 0.0) && bv.iter().all(|x| *x > 0.0) {
        Some(v.iter().copied().collect())
    } else {
        None
    }
}

/// Classify a Z-matrix as a non-singular M-matrix, singular M-matrix or
/// neither.
pub fn classify_z_matrix(b: &Mat) -> Result<MatrixVerdict, MatrixError> {
    check_z_matrix(b)?;
    if b.nrows() == 0 {
        return Ok(MatrixVerdict::bare(MatrixClass::NonsingularM));
    }
    if let Some(v) = inverse_certificate(b) {
        return Ok(MatrixVerdict {
            certificate: Some(v),
            ..MatrixVerdict::bare(MatrixClass::NonsingularM)
        });
    }
    let lam = min_real_eigenvalue(b);
    let class = if lam > EIG_TOL {
        // Spectrum says non-singular M but the inverse test disagreed.
        MatrixClass::Indeterminate
    } else if lam >= -EIG_TOL {
        MatrixClass::SingularM
    } else {
        MatrixClass::NotM
    };
    let failing_minor = if class == MatrixClass::Indeterminate {
        let (value, tol) = minor(b, &(0..b.nrows()).collect::<Vec<_>>());
        Some(MinorDiagnostic {
            indices: (0..b.nrows()).collect(),
            value,
            tol,
        })
    } else {
        None
    };
    Ok(MatrixVerdict {
        class,
        certificate: None,
        failing_minor,
        min_real_eigenvalue: Some(lam),
    })
}

/// Left and right positive vectors for a non-singular M-matrix:
/// `eta = (B^T)^{-1} 1`, `q = B^{-1} 1`.
pub fn lemma31_certificate(b: &Mat) -> Result<Option<Lemma31Certificate>, MatrixError> {
    let verdict = classify_z_matrix(b)?;
    if verdict.class != MatrixClass::NonsingularM {
        return Ok(None);
    }
    let Some(q) = verdict.certificate else {
        return Ok(None);
    };
    let Some(eta) = inverse_certificate(&b.transpose()) else {
        return Ok(None);
    };
    let row_values = lemma31_rows(b, &eta, &q);
    if row_values.iter().all(|v| *v > 0.0) {
        Ok(Some(Lemma31Certificate { eta, q, row_values }))
    } else {
        Ok(None)
    }
}

/// `sum_j (eta_i b_ij q_j + eta_j b_ji q_i)` for each `i`.
pub fn lemma31_rows(b: &Mat, eta: &[f64], q: &[f64]) -> Vec<f64> {
    let n = b.nrows();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| eta[i] * b[(i, j)] * q[j] + eta[j] * b[(j, i)] * q[i])
                .sum()
        })
        .collect()
}

/// Find `x >= 0` with `A x <= rhs`, rows flagged `strict` holding with `<`.
/// See [`lp::linear_feasibility`].
pub fn linear_feasibility(a: &[Vec<f64>], rhs: &[f64], strict: &[bool]) -> Result<Option<Vec<f64>>, MatrixError> {
    Ok(lp::linear_feasibility(a, rhs, strict)?)
}

/// The community matrices attached to a spec.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureMatrices {
    /// `[delta_ij mu_i + a_ij]`
    pub m0: Mat,
    /// `[delta_ij lambda_i + a_ij]`
    pub m: Mat,
    /// `[delta_ij mu_i - a_ij^-]`
    pub m0_minus: Mat,
    /// `[delta_ij mu_i - |a_ij|]`
    pub m0_hat: Mat,
    /// `[delta_ij (mu_i - c_i d_i / e_i) - |a_ij|]`
    pub m_hat: Mat,
    /// `[delta_ij lambda_i - |a_ij|]`
    pub m_check: Mat,
    mu: Vec<f64>,
    a: Vec<Vec<f64>>,
}

pub fn negative_part(v: f64) -> f64 {
    (-v).max(0.0)
}

impl StructureMatrices {
    pub fn build(spec: &SystemSpec) -> StructureMatrices {
        let n = spec.n();
        let mu = spec.mu();
        let a = spec.a();
        let lambda = spec.lambda();
        let gain: Vec<f64> = (0..n).map(|i| spec.c()[i] * spec.d()[i] / spec.e()[i]).collect();
        let diag = |i: usize, j: usize, v: f64| if i == j { v } else { 0.0 };
        StructureMatrices {
            m0: DMatrix::from_fn(n, n, |i, j| diag(i, j, mu[i]) + a[i][j]),
            m: DMatrix::from_fn(n, n, |i, j| diag(i, j, lambda[i]) + a[i][j]),
            m0_minus: DMatrix::from_fn(n, n, |i, j| diag(i, j, mu[i]) - negative_part(a[i][j])),
            m0_hat: DMatrix::from_fn(n, n, |i, j| diag(i, j, mu[i]) - a[i][j].abs()),
            m_hat: DMatrix::from_fn(n, n, |i, j| diag(i, j, mu[i] - gain[i]) - a[i][j].abs()),
            m_check: DMatrix::from_fn(n, n, |i, j| diag(i, j, lambda[i]) - a[i][j].abs()),
            mu: mu.to_vec(),
            a: a.to_vec(),
        }
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }

    /// Interaction with the sign-aware convention: `a_ij^-` when both `i`
    /// and `j` are off the support, `a_ij` otherwise.
    pub fn modified_a(&self, support: &[usize], i: usize, j: usize) -> f64 {
        if !support.contains(&i) && !support.contains(&j) {
            negative_part(self.a[i][j])
        } else {
            self.a[i][j]
        }
    }

    /// `[delta_ij mu_i - |a~_ij|]` for the given support.
    pub fn m0_hat_p(&self, support: &[usize]) -> Mat {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| {
            let d = if i == j { self.mu[i] } else { 0.0 };
            d - self.modified_a(support, i, j).abs()
        })
    }

    /// `M0_hat` restricted to the rows and columns in `support`.
    pub fn m0_hat_restricted(&self, support: &[usize]) -> Mat {
        principal_submatrix(&self.m0_hat, support)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SpecBuilder;

    fn m(rows: &[&[f64]]) -> Mat {
        from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    fn ex51(c1: f64) -> SystemSpec {
        SpecBuilder::new(vec![1.0, -1.25], vec![1.0, 1.0], vec![vec![0.5, 0.125], vec![-2.0, 0.5]])
            .controls(vec![c1, 0.0], vec![1.0, 1.0], vec![1.0, 1.0])
            .build()
            .unwrap()
    }

    #[test]
    fn example_2_2_matrices() {
        let spec = SpecBuilder::new(vec![-2.0, -2.0], vec![1.0, 1.0], vec![vec![0.0, -4.0], vec![-4.0, 0.0]])
            .controls(vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0])
            .build()
            .unwrap();
        let s = StructureMatrices::build(&spec);
        assert_eq!(s.m0, m(&[&[1.0, -4.0], &[-4.0, 1.0]]));
        assert_eq!(s.m, m(&[&[2.0, -4.0], &[-4.0, 2.0]]));
        assert_eq!(s.m0_minus, s.m0);
        let v = is_p_matrix(&s.m).unwrap();
        assert_eq!(v.class, MatrixClass::NotP);
        assert!((v.failing_minor.unwrap().value + 12.0).abs() < 1e-12);
    }

    #[test]
    fn example_5_1_matrices() {
        let s = StructureMatrices::build(&ex51(0.0));
        assert_eq!(s.m0, m(&[&[1.5, 0.125], &[-2.0, 1.5]]));
        assert_eq!(is_p_matrix(&s.m0).unwrap().class, MatrixClass::PMatrix);
        assert_eq!(s.m0_hat, m(&[&[0.5, -0.125], &[-2.0, 0.5]]));
        assert_eq!(classify_z_matrix(&s.m0_hat).unwrap().class, MatrixClass::SingularM);
        assert_eq!(lemma31_certificate(&s.m0_hat).unwrap(), None);

        let p1 = s.m0_hat_p(&[0]);
        assert_eq!(p1, m(&[&[0.5, -0.125], &[-2.0, 1.0]]));
        let v = classify_z_matrix(&p1).unwrap();
        assert_eq!(v.class, MatrixClass::NonsingularM);
        let cert = v.certificate.unwrap();
        let bv = &p1 * DVector::from_vec(cert.clone());
        assert!(cert.iter().all(|x| *x > 0.0) && bv.iter().all(|x| *x > 0.0));
    }

    #[test]
    fn structure_invariants() {
        let s = StructureMatrices::build(&ex51(0.3));
        let diff = &s.m - &s.m0;
        assert!((diff[(0, 0)] - 0.3).abs() < 1e-15 && diff[(0, 1)] == 0.0 && diff[(1, 0)] == 0.0);
        assert_eq!(s.m0_hat_p(&[0, 1]), s.m0_hat);
        assert_eq!(s.m0_hat_p(&[]), s.m0_minus);
        assert!((s.m_hat[(0, 0)] - 0.2).abs() < 1e-15);
        assert!((s.m_check[(0, 0)] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn decoupled_m0_hat_is_diag_mu() {
        let spec = SpecBuilder::new(vec![1.0, 1.0], vec![2.0, 3.0], vec![vec![0.0; 2]; 2]).build().unwrap();
        assert_eq!(StructureMatrices::build(&spec).m0_hat, m(&[&[2.0, 0.0], &[0.0, 3.0]]));
    }

    #[test]
    fn identity_and_negative_det() {
        assert_eq!(is_p_matrix(&Mat::identity(4, 4)).unwrap().class, MatrixClass::PMatrix);
        let b = m(&[&[1.0, -2.0], &[-2.0, 1.0]]);
        let v = classify_z_matrix(&b).unwrap();
        assert_eq!(v.class, MatrixClass::NotM);
        assert!((det(&b) + 3.0).abs() < 1e-12);
    }

    #[test]
    fn not_a_z_matrix_is_an_error() {
        let b = m(&[&[1.0, 0.5], &[0.0, 1.0]]);
        assert_eq!(classify_z_matrix(&b), Err(MatrixError::NotZMatrix(0, 1)));
    }

    #[test]
    fn lemma31_diagonal() {
        let cert = lemma31_certificate(&m(&[&[2.0, 0.0], &[0.0, 3.0]])).unwrap().unwrap();
        assert!((cert.eta[0] - 0.5).abs() < 1e-15 && (cert.eta[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(cert.eta, cert.q);
        assert!((cert.row_values[0] - 1.0).abs() < 1e-15);
        assert!((cert.row_values[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn lemma31_identity() {
        let cert = lemma31_certificate(&Mat::identity(3, 3)).unwrap().unwrap();
        assert_eq!(cert.eta, vec![1.0; 3]);
        assert_eq!(cert.row_values, vec![2.0; 3]);
    }

    #[test]
    fn p_matrix_indeterminate_band() {
        let b = m(&[&[1.0, 1.0], &[1.0, 1.0 + 1e-12]]);
        assert_eq!(is_p_matrix(&b).unwrap().class, MatrixClass::Indeterminate);
    }

    #[test]
    fn enumeration_bound() {
        assert_eq!(is_p_matrix(&Mat::identity(17, 17)), Err(MatrixError::TooLarge(17)));
    }
}
