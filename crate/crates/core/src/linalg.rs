//! Dense linear-algebra helpers and the structured matrix types that carry
//! the skew / positive-semidefinite constraints by construction.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{KphError, Result};

/// Iteration cap for the nonsymmetric eigensolver.
const SCHUR_MAX_ITER: usize = 10_000;

/// `(a + aᵀ)/2`, exactly symmetric entry by entry.
pub fn sym_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "sym_part needs a square matrix");
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        out[(i, i)] = a[(i, i)];
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// `(a - aᵀ)/2`, exactly skew entry by entry (zero diagonal).
pub fn skew_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "skew_part needs a square matrix");
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] - a[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = -v;
        }
    }
    out
}

pub fn is_finite(a: &DMatrix<f64>) -> bool {
    a.iter().all(|v| v.is_finite())
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Eigenvalues of the symmetric part of `a`, ascending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> DVector<f64> {
    if a.nrows() == 0 {
        return DVector::zeros(0);
    }
    let mut ev = SymmetricEigen::new(sym_part(a)).eigenvalues;
    ev.as_mut_slice().sort_by(f64::total_cmp);
    ev
}

pub fn min_sym_eigenvalue(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a).iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn max_sym_eigenvalue(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a)
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Eigenvalues of a general real square matrix via real Schur decomposition.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    if !is_finite(a) {
        return Err(KphError::Numerical("non-finite matrix passed to eigensolver".into()));
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or(KphError::EigenvalueFailure)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Largest real part of the spectrum.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|l| l.norm()).fold(0.0, f64::max))
}

/// `M^{-1/2}` for symmetric positive definite `m`, together with the
/// spectral condition number. Fails if `m` is not positive definite.
pub fn inv_sqrt_spd(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = m.nrows();
    let eig = SymmetricEigen::new(sym_part(m));
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    if !(lo > 0.0) {
        return Err(KphError::SingularGram {
            condition: f64::INFINITY,
        });
    }
    let cond = hi / lo;
    let scale = DVector::from_iterator(n, eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()));
    let v = &eig.eigenvectors;
    let t = v * DMatrix::from_diagonal(&scale) * v.transpose();
    Ok((sym_part(&t), cond))
}

/// Spectral condition number of a symmetric PSD matrix (infinite if singular).
pub fn spd_condition(m: &DMatrix<f64>) -> f64 {
    let ev = sym_eigenvalues(m);
    let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().copied().fold(0.0_f64, f64::max);
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Skew-symmetric matrix. The only constructors take the exact skew part,
/// so `K + Kᵀ = 0` holds bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewMatrix(DMatrix<f64>);

impl SkewMatrix {
    pub fn skew_part_of(a: &DMatrix<f64>) -> Self {
        SkewMatrix(skew_part(a))
    }

    pub fn zeros(n: usize) -> Self {
        SkewMatrix(DMatrix::zeros(n, n))
    }

    /// Accepts `a` if it is skew to within `tol` (max-abs of `a + aᵀ`), storing
    /// its exact skew part.
    pub fn try_new(a: &DMatrix<f64>, tol: f64) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(KphError::Dimension {
                context: "skew matrix columns",
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        let resid = max_abs(&(a + a.transpose()));
        if resid > tol {
            return Err(KphError::Structure(format!(
                "matrix is not skew-symmetric: max |A + Aᵀ| = {resid:e}"
            )));
        }
        Ok(Self::skew_part_of(a))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// `‖K + Kᵀ‖_F`; zero for every value of this type.
    pub fn skew_residual(&self) -> f64 {
        (&self.0 + self.0.transpose()).norm()
    }
}

/// Symmetric positive semidefinite matrix stored with its (nonnegative)
/// spectrum. Negative eigenvalues are clipped on construction, so
/// [`PsdMatrix::min_eigenvalue`] is `>= 0` by representation.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMatrix {
    matrix: DMatrix<f64>,
    eigenvalues: DVector<f64>,
}

impl PsdMatrix {
    pub fn zeros(n: usize) -> Self {
        PsdMatrix {
            matrix: DMatrix::zeros(n, n),
            eigenvalues: DVector::zeros(n),
        }
    }

    /// Nearest PSD matrix in Frobenius norm to the symmetric part of `a`,
    /// by eigenvalue clipping. Also returns `‖result - a‖_F`.
    pub fn nearest(a: &DMatrix<f64>) -> (Self, f64) {
        let n = a.nrows();
        if n == 0 {
            return (Self::zeros(0), 0.0);
        }
        let sym = sym_part(a);
        let eig = SymmetricEigen::new(sym.clone());
        let psd = if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
            PsdMatrix {
                matrix: sym,
                eigenvalues: eig.eigenvalues,
            }
        } else {
            let clipped = eig.eigenvalues.map(|l| l.max(0.0));
            let v = &eig.eigenvectors;
            let rebuilt = v * DMatrix::from_diagonal(&clipped) * v.transpose();
            PsdMatrix {
                matrix: sym_part(&rebuilt),
                eigenvalues: clipped,
            }
        };
        let moved = (&psd.matrix - a).norm();
        (psd, moved)
    }

    /// Accepts a symmetric matrix whose eigenvalues are all `>= -tol`.
    pub fn try_new(a: &DMatrix<f64>, tol: f64) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(KphError::Dimension {
                context: "PSD matrix columns",
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        let asym = max_abs(&(a - a.transpose()));
        if asym > tol {
            return Err(KphError::Structure(format!(
                "matrix is not symmetric: max |A - Aᵀ| = {asym:e}"
            )));
        }
        let lo = min_sym_eigenvalue(a);
        if a.nrows() > 0 && lo < -tol {
            return Err(KphError::Structure(format!(
                "matrix is not positive semidefinite: min eigenvalue {lo:e}"
            )));
        }
        Ok(Self::nearest(a).0)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        self.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_definite(&self) -> bool {
        self.dim() > 0 && self.eigenvalues.iter().all(|&l| l > 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn skew_and_sym_parts_are_exact() {
        let a = DMatrix::from_row_slice(3, 3, &[0.1, 0.7, -0.3, 0.2, 1.1, 0.9, 0.4, -0.6, 2.5]);
        let s = skew_part(&a);
        assert_eq!(&s + s.transpose(), DMatrix::zeros(3, 3));
        let h = sym_part(&a);
        assert_eq!(h, h.transpose());
        assert_relative_eq!(s + h, a, epsilon = 1e-15);
    }

    #[test]
    fn psd_clipping_diag() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.2]));
        let (p, moved) = PsdMatrix::nearest(&a);
        assert_relative_eq!(p.as_matrix().clone(), DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])), epsilon = 1e-15);
        assert_relative_eq!(moved, 0.2, epsilon = 1e-15);
        assert!(p.min_eigenvalue() >= 0.0);
    }

    #[test]
    fn psd_keeps_already_psd_input_exactly() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let (p, moved) = PsdMatrix::nearest(&a);
        assert_eq!(p.as_matrix(), &a);
        assert_eq!(moved, 0.0);
    }

    #[test]
    fn inverse_square_root_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let (t, cond) = inv_sqrt_spd(&m).unwrap();
        assert_relative_eq!(t, DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0])), epsilon = 1e-15);
        assert_relative_eq!(cond, 4.0, epsilon = 1e-14);
    }

    #[test]
    fn singular_gram_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(inv_sqrt_spd(&m), Err(KphError::SingularGram { .. })));
    }

    #[test]
    fn oscillator_eigenvalues() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let mut ev = eigenvalues(&a).unwrap();
        ev.sort_by(|x, y| x.im.total_cmp(&y.im));
        assert_relative_eq!(ev[0].im, -1.0, epsilon = 1e-12);
        assert_relative_eq!(ev[1].im, 1.0, epsilon = 1e-12);
        assert!(spectral_abscissa(&a).unwrap().abs() < 1e-12);
        assert_relative_eq!(spectral_radius(&a).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn skew_try_new_rejects_symmetric() {
        let a = DMatrix::identity(2, 2);
        assert!(SkewMatrix::try_new(&a, 1e-10).is_err());
        let j = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert_eq!(SkewMatrix::try_new(&j, 1e-10).unwrap().as_matrix(), &j);
    }
}
