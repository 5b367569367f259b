//! Galerkin projection of the generator decomposition onto a dictionary.
//!
//! Index convention: row `i` of every projected block is the generator applied
//! to `ψ_i`, i.e. `(A_J)_ij = Σ_k w_k (𝒦_J ψ_i)(x_k) ψ_j(x_k)`. With this
//! ordering the surrogate reads `Ψ̇ = (K_J - K_R)Ψ + K_u u` and the identity
//! dictionary on a linear system returns `J`, not `Jᵀ`.
//!
//! Pipeline for structured identification:
//! [`raw_projection`] → [`whiten`] (mass-matrix normalisation `T = M^{-1/2}`)
//! → [`enforce_structure`] (skew part, PSD projection).

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, KphError, Result};
use crate::exec::{self, Execution};
use crate::linalg::{inv_sqrt_spd, min_sym_eigenvalue, spd_condition, sym_part, PsdMatrix, SkewMatrix};
use crate::observables::{eval_dictionary, generator_action, Dictionary};
use crate::ph_model::{drift, PortHamiltonian};
use crate::samples::SampleSet;

/// Gram matrices with a larger condition number are rejected.
pub const GRAM_CONDITION_LIMIT: f64 = 1e12;
/// Points per reduction leaf. Fixed so serial and parallel sums agree bit-for-bit.
const REDUCTION_CHUNK: usize = 32;

/// Projected blocks before any structure enforcement.
#[derive(Debug, Clone, PartialEq)]
pub struct RawProjection {
    /// `M_ij = ⟨ψ_i, ψ_j⟩`
    pub gram: DMatrix<f64>,
    /// `⟨𝒦_J ψ_i, ψ_j⟩`
    pub a_j: DMatrix<f64>,
    /// `⟨𝒦_R ψ_i, ψ_j⟩`
    pub a_r: DMatrix<f64>,
    /// `E[(𝒦_j ψ_i)]`, `N × m`
    pub a_u: DMatrix<f64>,
    /// Dirichlet form `Σ w ∇ψ_iᵀ R ∇ψ_j`. Symmetric PSD for any nonnegative
    /// weights; unlike `a_r` it is not a projection of the dynamics.
    pub dissipation_form: DMatrix<f64>,
    /// Samples that fell outside the dictionary's declared domain.
    pub off_domain: usize,
}

impl RawProjection {
    fn zeros(n: usize, m: usize) -> Self {
        RawProjection {
            gram: DMatrix::zeros(n, n),
            a_j: DMatrix::zeros(n, n),
            a_r: DMatrix::zeros(n, n),
            a_u: DMatrix::zeros(n, m),
            dissipation_form: DMatrix::zeros(n, n),
            off_domain: 0,
        }
    }

    fn add(mut self, other: RawProjection) -> Self {
        self.gram += other.gram;
        self.a_j += other.a_j;
        self.a_r += other.a_r;
        self.a_u += other.a_u;
        self.dissipation_form += other.dissipation_form;
        self.off_domain += other.off_domain;
        self
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    /// `‖A_J + A_Jᵀ‖_F`. Vanishes only for jointly invariant sampling measures.
    pub fn skew_residual(&self) -> f64 {
        (&self.a_j + self.a_j.transpose()).norm()
    }
}

pub fn raw_projection<D, S>(d: &D, sys: &S, s: &SampleSet) -> Result<RawProjection>
where
    D: Dictionary + ?Sized,
    S: PortHamiltonian + ?Sized,
{
    raw_projection_with(d, sys, s, Execution::default())
}

/// Weighted inner products over the sample set. Errors with
/// [`KphError::SingularGram`] when there are fewer samples than observables
/// or the Gram condition number exceeds [`GRAM_CONDITION_LIMIT`].
pub fn raw_projection_with<D, S>(d: &D, sys: &S, s: &SampleSet, exec: Execution) -> Result<RawProjection>
where
    D: Dictionary + ?Sized,
    S: PortHamiltonian + ?Sized,
{
    let n_obs = d.len();
    let m = sys.input_dim();
    check_dim("dictionary state", sys.state_dim(), d.state_dim())?;
    check_dim("sample dimension", sys.state_dim(), s.dim())?;
    if s.len() < n_obs {
        return Err(KphError::SingularGram {
            condition: f64::INFINITY,
        });
    }
    let indices: Vec<usize> = (0..s.len()).collect();
    let leaves = exec::map_chunks(exec, &indices, REDUCTION_CHUNK, |chunk| -> Result<RawProjection> {
        let mut acc = RawProjection::zeros(n_obs, m);
        for &k in chunk {
            let x = &s.points()[k];
            let w = s.weights()[k];
            if let Some(dom) = d.domain() {
                if !dom.contains(x) {
                    acc.off_domain += 1;
                }
            }
            let psi = eval_dictionary(d, x)?;
            let act = generator_action(d, sys, x)?;
            acc.gram.ger(w, &psi, &psi, 1.0);
            acc.a_j.ger(w, &act.k_j, &psi, 1.0);
            acc.a_r.ger(w, &act.k_r, &psi, 1.0);
            acc.a_u += act.k_u * w;
            let jac = d.jacobian(x);
            acc.dissipation_form += (&jac * sys.dissipation(x) * jac.transpose()) * w;
        }
        Ok(acc)
    });
    let leaves = leaves.into_iter().collect::<Result<Vec<_>>>()?;
    let rp = exec::pairwise_reduce(leaves, RawProjection::add).unwrap_or_else(|| RawProjection::zeros(n_obs, m));
    let cond = spd_condition(&rp.gram);
    if !(cond <= GRAM_CONDITION_LIMIT) {
        return Err(KphError::SingularGram { condition: cond });
    }
    Ok(rp)
}

/// Change to the basis `TΨ` with `T = M^{-1/2}`, in which the Gram matrix is
/// the identity. Square blocks map by congruence `T A T`, so quadratic-form
/// signs are preserved; the input block maps as `T A_u`.
pub fn whiten(rp: &RawProjection) -> Result<(DMatrix<f64>, RawProjection)> {
    let (t, cond) = inv_sqrt_spd(&rp.gram)?;
    if cond > GRAM_CONDITION_LIMIT {
        return Err(KphError::SingularGram { condition: cond });
    }
    let white = RawProjection {
        gram: sym_part(&(&t * &rp.gram * &t)),
        a_j: &t * &rp.a_j * &t,
        a_r: &t * &rp.a_r * &t,
        a_u: &t * &rp.a_u,
        dissipation_form: &t * &rp.dissipation_form * &t,
        off_domain: rp.off_domain,
    };
    Ok((t, white))
}

/// Structured pair and how far each block had to move.
#[derive(Debug, Clone, PartialEq)]
pub struct Enforced {
    pub k_j: SkewMatrix,
    pub k_r: PsdMatrix,
    /// `‖K_J - A_J‖_F`
    pub skew_moved: f64,
    /// `‖K_R - A_R‖_F`
    pub psd_moved: f64,
}

/// Skew part of `a_j`; nearest PSD matrix to the symmetric part of `a_r`.
pub fn enforce_structure(a_j: &DMatrix<f64>, a_r: &DMatrix<f64>) -> Enforced {
    let k_j = SkewMatrix::skew_part_of(a_j);
    let skew_moved = (k_j.as_matrix() - a_j).norm();
    let (k_r, psd_moved) = PsdMatrix::nearest(a_r);
    Enforced {
        k_j,
        k_r,
        skew_moved,
        psd_moved,
    }
}

/// Unique split `K = K_J - K_R` into skew and symmetric parts, accepting
/// `K_R` if its eigenvalues are `>= -tol` (small negatives are clipped).
pub fn split_skew_psd(k: &DMatrix<f64>, tol: f64) -> Result<(SkewMatrix, PsdMatrix)> {
    if k.nrows() != k.ncols() {
        return Err(KphError::Dimension {
            context: "split_skew_psd columns",
            expected: k.nrows(),
            got: k.ncols(),
        });
    }
    let k_r = -sym_part(k);
    let lo = min_sym_eigenvalue(&k_r);
    if k.nrows() > 0 && lo < -tol {
        return Err(KphError::NotDissipative { max_eigenvalue: -lo });
    }
    Ok((SkewMatrix::skew_part_of(k), PsdMatrix::nearest(&k_r).0))
}

/// Residuals describing how a model's structure was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport {
    /// `‖K_J + K_Jᵀ‖_F` (zero by representation).
    pub skew_residual: f64,
    /// Smallest stored eigenvalue of `K_R` (nonnegative by representation).
    pub psd_min_eig: f64,
    pub gram_condition: Option<f64>,
    /// `‖Ã_J + Ã_Jᵀ‖_F` of the whitened projection before enforcement.
    pub raw_skew_residual: Option<f64>,
    pub skew_moved: f64,
    pub psd_moved: f64,
    pub off_domain: usize,
}

/// Structured lifted surrogate `Ψ̇ = (K_J - K_R)Ψ + K_u u`.
#[derive(Debug, Clone, PartialEq)]
pub struct KpHModel {
    k_j: SkewMatrix,
    k_r: PsdMatrix,
    k_u: DMatrix<f64>,
    transform: DMatrix<f64>,
    labels: Vec<String>,
    report: StructureReport,
}

impl KpHModel {
    /// Model in the raw dictionary basis (transform = identity).
    pub fn new(k_j: SkewMatrix, k_r: PsdMatrix, k_u: DMatrix<f64>) -> Result<Self> {
        let n = k_j.dim();
        check_dim("K_R size", n, k_r.dim())?;
        check_dim("K_u rows", n, k_u.nrows())?;
        let report = StructureReport {
            skew_residual: k_j.skew_residual(),
            psd_min_eig: k_r.min_eigenvalue(),
            gram_condition: None,
            raw_skew_residual: None,
            skew_moved: 0.0,
            psd_moved: 0.0,
            off_domain: 0,
        };
        Ok(KpHModel {
            k_j,
            k_r,
            k_u,
            transform: DMatrix::identity(n, n),
            labels: (1..=n).map(|i| format!("psi{i}")).collect(),
            report,
        })
    }

    /// Projects arbitrary matrices onto the structure first.
    pub fn from_matrices(k_j: &DMatrix<f64>, k_r: &DMatrix<f64>, k_u: DMatrix<f64>) -> Result<Self> {
        check_dim("K_J columns", k_j.nrows(), k_j.ncols())?;
        check_dim("K_R columns", k_r.nrows(), k_r.ncols())?;
        let e = enforce_structure(k_j, k_r);
        let mut model = Self::new(e.k_j, e.k_r, k_u)?;
        model.report.skew_moved = e.skew_moved;
        model.report.psd_moved = e.psd_moved;
        Ok(model)
    }

    pub fn k_j(&self) -> &SkewMatrix {
        &self.k_j
    }
    pub fn k_r(&self) -> &PsdMatrix {
        &self.k_r
    }
    pub fn k_u(&self) -> &DMatrix<f64> {
        &self.k_u
    }
    /// Lifting basis change: the model state is `T·Ψ(x)`.
    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }
    pub fn labels(&self) -> &[String] {
        &self.labels
    }
    pub fn report(&self) -> &StructureReport {
        &self.report
    }
    pub fn lifted_dim(&self) -> usize {
        self.k_j.dim()
    }
    pub fn input_dim(&self) -> usize {
        self.k_u.ncols()
    }

    /// `K_J - K_R`.
    pub fn generator(&self) -> DMatrix<f64> {
        self.k_j.as_matrix() - self.k_r.as_matrix()
    }

    /// Same model with `K_R` replaced, keeping basis and labels.
    pub fn with_dissipation(&self, k_r: PsdMatrix) -> Result<Self> {
        check_dim("K_R size", self.lifted_dim(), k_r.dim())?;
        let mut model = self.clone();
        model.report.psd_min_eig = k_r.min_eigenvalue();
        model.k_r = k_r;
        Ok(model)
    }

    /// `(T⁻¹K_J T, T⁻¹K_R T, T⁻¹K_u)`: the surrogate acting on `Ψ(x)` itself.
    /// These need not keep the skew/PSD structure unless `T` is a scaled
    /// orthogonal matrix.
    pub fn in_dictionary_basis(&self) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let t_inv = self
            .transform
            .clone()
            .try_inverse()
            .ok_or_else(|| KphError::Solve("lifting transform is singular".into()))?;
        Ok((
            &t_inv * self.k_j.as_matrix() * &self.transform,
            &t_inv * self.k_r.as_matrix() * &self.transform,
            t_inv * &self.k_u,
        ))
    }

    /// Lifted initial condition `T·Ψ(x)`.
    pub fn lift<D: Dictionary + ?Sized>(&self, d: &D, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("dictionary size", self.lifted_dim(), d.len())?;
        Ok(&self.transform * eval_dictionary(d, x)?)
    }
}

/// Unconstrained baseline `Ψ̇ ≈ KΨ + K_u u`, fitted by weighted least squares.
#[derive(Debug, Clone, PartialEq)]
pub struct UnstructuredModel {
    pub k: DMatrix<f64>,
    pub k_u: DMatrix<f64>,
    /// Weighted RMS of `∇Ψ·f(x_k) - KΨ(x_k)`.
    pub fit_residual: f64,
}

impl UnstructuredModel {
    /// The same model in the basis `TΨ`: `T K T⁻¹`, `T K_u`.
    pub fn in_basis(&self, t: &DMatrix<f64>) -> Result<UnstructuredModel> {
        let t_inv = t
            .clone()
            .try_inverse()
            .ok_or_else(|| KphError::Solve("basis transform is singular".into()))?;
        Ok(UnstructuredModel {
            k: t * &self.k * t_inv,
            k_u: t * &self.k_u,
            fit_residual: self.fit_residual,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdentificationMode {
    Structured,
    Unstructured,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Identified {
    Structured(KpHModel),
    Unstructured(UnstructuredModel),
}

pub fn identify_from_data<D, S>(d: &D, sys: &S, s: &SampleSet, mode: IdentificationMode) -> Result<Identified>
where
    D: Dictionary + ?Sized,
    S: PortHamiltonian + ?Sized,
{
    match mode {
        IdentificationMode::Structured => identify_structured(d, sys, s, Execution::default()).map(Identified::Structured),
        IdentificationMode::Unstructured => {
            identify_unstructured(d, sys, s, Execution::default()).map(Identified::Unstructured)
        }
    }
}

/// raw projection → whitening → structure enforcement. The result lives in
/// the whitened basis, with `T` recorded as the model transform.
pub fn identify_structured<D, S>(d: &D, sys: &S, s: &SampleSet, exec: Execution) -> Result<KpHModel>
where
    D: Dictionary + ?Sized,
    S: PortHamiltonian + ?Sized,
{
    let rp = raw_projection_with(d, sys, s, exec)?;
    let (t, white) = whiten(&rp)?;
    let e = enforce_structure(&white.a_j, &white.a_r);
    let report = StructureReport {
        skew_residual: e.k_j.skew_residual(),
        psd_min_eig: e.k_r.min_eigenvalue(),
        gram_condition: Some(spd_condition(&rp.gram)),
        raw_skew_residual: Some(white.skew_residual()),
        skew_moved: e.skew_moved,
        psd_moved: e.psd_moved,
        off_domain: rp.off_domain,
    };
    Ok(KpHModel {
        k_j: e.k_j,
        k_r: e.k_r,
        k_u: white.a_u,
        transform: t,
        labels: d.labels(),
        report,
    })
}

/// Weighted least squares on the stacked pairs `(Ψ(x_k), ∇Ψ(x_k)·drift(x_k))`,
/// solved by SVD of the data matrix (no Gram matrix is formed). The input
/// block is the sample mean of `∇Ψ·G`.
pub fn identify_unstructured<D, S>(d: &D, sys: &S, s: &SampleSet, exec: Execution) -> Result<UnstructuredModel>
where
    D: Dictionary + ?Sized,
    S: PortHamiltonian + ?Sized,
{
    let n_obs = d.len();
    let m = sys.input_dim();
    check_dim("dictionary state", sys.state_dim(), d.state_dim())?;
    check_dim("sample dimension", sys.state_dim(), s.dim())?;
    if s.len() < n_obs {
        return Err(KphError::SingularGram {
            condition: f64::INFINITY,
        });
    }
    let rows = exec::map_range(exec, s.len(), |k| -> Result<(DVector<f64>, DVector<f64>, DMatrix<f64>)> {
        let x = &s.points()[k];
        let jac = d.jacobian(x);
        let psi = eval_dictionary(d, x)?;
        let dpsi = &jac * drift(sys, x)?;
        Ok((psi, dpsi, jac * sys.port(x)))
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let mut x_mat = DMatrix::zeros(s.len(), n_obs);
    let mut y_mat = DMatrix::zeros(s.len(), n_obs);
    let mut k_u = DMatrix::zeros(n_obs, m);
    for (k, ((psi, dpsi, ku), w)) in rows.iter().zip(s.weights()).enumerate() {
        let sw = w.sqrt();
        x_mat.set_row(k, &(psi.transpose() * sw));
        y_mat.set_row(k, &(dpsi.transpose() * sw));
        k_u += ku * *w;
    }
    let svd = x_mat.clone().svd(true, true);
    let sv = &svd.singular_values;
    let hi = sv.max();
    let lo = sv.min();
    if !(lo > 0.0) || (hi / lo).powi(2) > GRAM_CONDITION_LIMIT {
        return Err(KphError::SingularGram {
            condition: if lo > 0.0 { (hi / lo).powi(2) } else { f64::INFINITY },
        });
    }
    let kt = svd
        .solve(&y_mat, 0.0)
        .map_err(|e| KphError::Solve(e.to_string()))?;
    let fit_residual = (&x_mat * &kt - &y_mat).norm();
    Ok(UnstructuredModel {
        k: kt.transpose(),
        k_u,
        fit_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observables::{builtin_dictionary, DictionaryKind};
    use crate::ph_model::{linear_ph, pendulum, LinearPHSystem};
    use crate::samples::{grid, uniform_box};
    use approx::assert_relative_eq;

    fn oscillator() -> LinearPHSystem {
        linear_ph(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.3]),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap()
    }

    /// `±e_i` with weights `1/4`: second-moment matrix `I/2`. Scaled by √2 it is `I`.
    fn isotropic_cross() -> SampleSet {
        let r = 2f64.sqrt();
        let pts = vec![
            DVector::from_vec(vec![r, 0.0]),
            DVector::from_vec(vec![-r, 0.0]),
            DVector::from_vec(vec![0.0, r]),
            DVector::from_vec(vec![0.0, -r]),
        ];
        SampleSet::uniform(pts).unwrap()
    }

    #[test]
    fn identity_projection_reproduces_linear_matrices() {
        let sys = oscillator();
        let d = builtin_dictionary(DictionaryKind::Identity { n: 2 }).unwrap();
        let rp = raw_projection(&d, &sys, &isotropic_cross()).unwrap();
        assert_relative_eq!(rp.gram, DMatrix::identity(2, 2), epsilon = 1e-15);
        assert_relative_eq!(rp.a_j, sys.j().clone(), epsilon = 1e-15);
        assert_relative_eq!(rp.a_r, sys.r().clone(), epsilon = 1e-15);
        assert_relative_eq!(rp.a_u, sys.g().clone(), epsilon = 1e-15);
    }

    #[test]
    fn zero_dissipation_gives_zero_ar() {
        let sys = linear_ph(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            DMatrix::zeros(2, 2),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let d = builtin_dictionary(DictionaryKind::Polynomial {
            n: 2,
            degree: 2,
            include_constant: false,
        })
        .unwrap();
        let s = uniform_box(&[-1.0, -1.0], &[1.0, 1.0], 50, 3).unwrap();
        let rp = raw_projection(&d, &sys, &s).unwrap();
        assert_eq!(rp.a_r, DMatrix::zeros(5, 5));
        let m = identify_structured(&d, &sys, &s, Execution::Serial).unwrap();
        assert_eq!(m.k_r().as_matrix(), &DMatrix::zeros(5, 5));
    }

    #[test]
    fn too_few_samples_is_singular() {
        let d = builtin_dictionary(DictionaryKind::Pendulum).unwrap();
        let s = uniform_box(&[-1.0, -1.0], &[1.0, 1.0], 3, 0).unwrap();
        let err = raw_projection(&d, &pendulum(0.3).unwrap(), &s).unwrap_err();
        assert!(matches!(err, KphError::SingularGram { .. }));
    }

    #[test]
    fn collinear_samples_are_singular() {
        let d = builtin_dictionary(DictionaryKind::Identity { n: 2 }).unwrap();
        let pts = (0..10).map(|i| DVector::from_vec(vec![i as f64, 2.0 * i as f64])).collect();
        let s = SampleSet::uniform(pts).unwrap();
        let err = raw_projection(&d, &oscillator(), &s).unwrap_err();
        assert!(matches!(err, KphError::SingularGram { .. }));
    }

    #[test]
    fn whiten_identity_and_diagonal() {
        let rp = RawProjection {
            gram: DMatrix::identity(2, 2),
            a_j: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            a_r: DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.3]),
            a_u: DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            dissipation_form: DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.3]),
            off_domain: 0,
        };
        let (t, w) = whiten(&rp).unwrap();
        assert_eq!(t, DMatrix::identity(2, 2));
        assert_eq!(w, rp);

        let rp2 = RawProjection {
            gram: DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])),
            ..rp
        };
        let (t, w) = whiten(&rp2).unwrap();
        assert_relative_eq!(t, DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0])), epsilon = 1e-15);
        assert_relative_eq!(w.gram, DMatrix::identity(2, 2), epsilon = 1e-15);
    }

    #[test]
    fn enforce_structure_examples() {
        let j = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let e = enforce_structure(&j, &DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.2])));
        assert_eq!(e.k_j.as_matrix(), &j);
        assert_eq!(e.skew_moved, 0.0);
        assert_relative_eq!(e.k_r.as_matrix().clone(), DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])), epsilon = 1e-15);
        assert_relative_eq!(e.psd_moved, 0.2, epsilon = 1e-15);

        let perturbed = &j + DMatrix::identity(2, 2) * 0.01;
        let e = enforce_structure(&perturbed, &DMatrix::zeros(2, 2));
        assert_eq!(e.k_j.as_matrix(), &j);
    }

    #[test]
    fn split_examples() {
        let j = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let r = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.3]);
        let (kj, kr) = split_skew_psd(&(&j - &r), 1e-12).unwrap();
        assert_eq!(kj.as_matrix(), &j);
        assert_relative_eq!(kr.as_matrix().clone(), r, epsilon = 1e-15);

        let (kj, kr) = split_skew_psd(&j, 1e-12).unwrap();
        assert_eq!(kj.as_matrix(), &j);
        assert_eq!(kr.as_matrix(), &DMatrix::zeros(2, 2));

        assert!(matches!(
            split_skew_psd(&DMatrix::identity(2, 2), 1e-12),
            Err(KphError::NotDissipative { .. })
        ));
    }

    #[test]
    fn structured_linear_recovery_on_grid() {
        let sys = oscillator();
        let d = builtin_dictionary(DictionaryKind::Identity { n: 2 }).unwrap();
        let s = grid(&[-1.0, -1.0], &[1.0, 1.0], &[5, 5]).unwrap();
        let m = identify_structured(&d, &sys, &s, Execution::Serial).unwrap();
        assert_relative_eq!(m.k_j().as_matrix().clone(), sys.j().clone(), epsilon = 1e-12);
        assert_relative_eq!(m.k_r().as_matrix().clone(), sys.r().clone(), epsilon = 1e-12);
        // K_u is expressed in the whitened basis; T is a multiple of the identity here.
        let t = m.transform().clone();
        assert_relative_eq!(t[(0, 1)], 0.0, epsilon = 1e-15);
        assert_relative_eq!(m.k_u().clone(), &t * sys.g(), epsilon = 1e-12);
        let (kj, kr, ku) = m.in_dictionary_basis().unwrap();
        assert_relative_eq!(kj, sys.j().clone(), epsilon = 1e-12);
        assert_relative_eq!(kr, sys.r().clone(), epsilon = 1e-12);
        assert_relative_eq!(ku, sys.g().clone(), epsilon = 1e-12);
    }

    #[test]
    fn unstructured_fit_reproduces_linear_drift() {
        let sys = oscillator();
        let d = builtin_dictionary(DictionaryKind::Identity { n: 2 }).unwrap();
        let s = uniform_box(&[-1.0, -1.0], &[1.0, 1.0], 40, 9).unwrap();
        let m = identify_unstructured(&d, &sys, &s, Execution::Serial).unwrap();
        assert_relative_eq!(m.k, sys.drift_matrix(), epsilon = 1e-12);
        assert_relative_eq!(m.k_u, sys.g().clone(), epsilon = 1e-12);
        assert!(m.fit_residual < 1e-12);
    }

    #[test]
    fn serial_and_parallel_agree_bitwise() {
        let sys = pendulum(0.3).unwrap();
        let d = builtin_dictionary(DictionaryKind::Pendulum).unwrap();
        let s = uniform_box(&[-3.0, -2.0], &[3.0, 2.0], 777, 11).unwrap();
        let a = raw_projection_with(&d, &sys, &s, Execution::Serial).unwrap();
        let b = raw_projection_with(&d, &sys, &s, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pendulum_model_structure() {
        let sys = pendulum(0.3).unwrap();
        let d = builtin_dictionary(DictionaryKind::Pendulum).unwrap();
        let s = uniform_box(&[-std::f64::consts::PI, -2.0], &[std::f64::consts::PI, 2.0], 2000, 5).unwrap();
        let m = identify_structured(&d, &sys, &s, Execution::default()).unwrap();
        assert_eq!(m.report().skew_residual, 0.0);
        assert!(m.report().psd_min_eig >= 0.0);
        assert_eq!(m.labels()[3], "H");
    }
}
