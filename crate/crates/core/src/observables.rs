//! Observable dictionaries `Ψ: ℝⁿ → ℝᴺ` with analytic Jacobians, and the
//! pointwise action of the generator components on them.
//!
//! For an observable `f`, `(𝒦_J f)(x) = ∇f(x)ᵀ J(x)∇H(x)`,
//! `(𝒦_R f)(x) = ∇f(x)ᵀ R(x)∇H(x)` and `(𝒦_j f)(x) = ∇f(x)ᵀ g_j(x)` for the
//! `j`-th port column. The generator of the drift is `𝒦_J - 𝒦_R`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, KphError, Result};
use crate::ph_model::{sub_fields, Checks, PortHamiltonian};

pub trait Dictionary: Send + Sync {
    /// Number of observables `N`.
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn state_dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `N × n`, row `i` is `∇ψ_i(x)ᵀ`.
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn labels(&self) -> Vec<String>;
    /// Region where the dictionary is meant to be evaluated.
    fn domain(&self) -> Option<&BoundingBox> {
        None
    }
}

/// Axis-aligned box `lower <= x <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoundingBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim("bounding box upper", lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(KphError::Config("bounding box needs at least one dimension".into()));
        }
        for (lo, hi) in lower.iter().zip(&upper) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(KphError::Config(format!("invalid box bounds [{lo}, {hi}]")));
            }
        }
        Ok(BoundingBox { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }
}

/// Parameters of the builtin dictionaries.
#[derive(Debug, Clone, PartialEq)]
pub enum DictionaryKind {
    /// `Ψ(x) = x`.
    Identity { n: usize },
    /// `Ψ(x) = Qx`; with `Q` the storage matrix this is `∇H`.
    QScaled { q: DMatrix<f64> },
    /// `[sin θ, p, cos θ, H]` on the pendulum state `(θ, p)`.
    Pendulum,
    /// Monomials of total degree `1..=degree` (plus `1` if requested).
    Polynomial {
        n: usize,
        degree: u32,
        include_constant: bool,
    },
    /// `exp(-‖x - c‖² / (2 width²))` for each center `c`.
    GaussianRbf {
        centers: Vec<DVector<f64>>,
        width: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Basis {
    Identity,
    Linear(DMatrix<f64>),
    Pendulum,
    Monomials(Vec<Vec<u32>>),
    Rbf { centers: Vec<DVector<f64>>, width: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltinDictionary {
    n: usize,
    basis: Basis,
    labels: Vec<String>,
    domain: Option<BoundingBox>,
}

impl BuiltinDictionary {
    pub fn with_domain(mut self, domain: BoundingBox) -> Result<Self> {
        check_dim("dictionary domain", self.n, domain.dim())?;
        self.domain = Some(domain);
        Ok(self)
    }
}

/// Exponent vectors of total degree `d` in `n` variables, the power of the
/// first variable descending (`x₁², x₁x₂, x₂²` for `n = d = 2`).
fn exponents_of_degree(n: usize, d: u32) -> Vec<Vec<u32>> {
    if n == 1 {
        return vec![vec![d]];
    }
    let mut out = Vec::new();
    for first in (0..=d).rev() {
        for mut rest in exponents_of_degree(n - 1, d - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn monomial_label(e: &[u32]) -> String {
    let parts: Vec<String> = e
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0)
        .map(|(i, &p)| match p {
            1 => format!("x{}", i + 1),
            _ => format!("x{}^{}", i + 1, p),
        })
        .collect();
    if parts.is_empty() {
        "1".to_string()
    } else {
        parts.join("*")
    }
}

pub fn builtin_dictionary(kind: DictionaryKind) -> Result<BuiltinDictionary> {
    let (n, basis, labels) = match kind {
        DictionaryKind::Identity { n } => {
            if n == 0 {
                return Err(KphError::Config("identity dictionary needs n >= 1".into()));
            }
            (n, Basis::Identity, (1..=n).map(|i| format!("x{i}")).collect())
        }
        DictionaryKind::QScaled { q } => {
            let n = q.nrows();
            if n == 0 || q.ncols() != n {
                return Err(KphError::Config("q_scaled dictionary needs a square, nonempty Q".into()));
            }
            if !crate::linalg::is_finite(&q) {
                return Err(KphError::Config("q_scaled dictionary has non-finite Q".into()));
            }
            (n, Basis::Linear(q), (1..=n).map(|i| format!("(Qx){i}")).collect())
        }
        DictionaryKind::Pendulum => (
            2,
            Basis::Pendulum,
            ["sin(theta)", "p", "cos(theta)", "H"].map(String::from).to_vec(),
        ),
        DictionaryKind::Polynomial {
            n,
            degree,
            include_constant,
        } => {
            if n == 0 || degree == 0 {
                return Err(KphError::Config(format!(
                    "polynomial dictionary needs n >= 1 and degree >= 1 (got n = {n}, degree = {degree})"
                )));
            }
            let start = if include_constant { 0 } else { 1 };
            let exps: Vec<Vec<u32>> = (start..=degree).flat_map(|d| exponents_of_degree(n, d)).collect();
            let labels = exps.iter().map(|e| monomial_label(e)).collect();
            (n, Basis::Monomials(exps), labels)
        }
        DictionaryKind::GaussianRbf { centers, width } => {
            if centers.is_empty() {
                return Err(KphError::Config("RBF dictionary needs at least one center".into()));
            }
            if !(width > 0.0 && width.is_finite()) {
                return Err(KphError::Config(format!("RBF width must be positive, got {width}")));
            }
            let n = centers[0].len();
            if n == 0 || centers.iter().any(|c| c.len() != n || c.iter().any(|v| !v.is_finite())) {
                return Err(KphError::Config("RBF centers must be finite and share one dimension".into()));
            }
            let labels = (1..=centers.len()).map(|i| format!("rbf{i}")).collect();
            (n, Basis::Rbf { centers, width }, labels)
        }
    };
    Ok(BuiltinDictionary {
        n,
        basis,
        labels,
        domain: None,
    })
}

fn monomial(x: &DVector<f64>, e: &[u32]) -> f64 {
    e.iter().zip(x.iter()).map(|(&p, &v)| v.powi(p as i32)).product()
}

impl Dictionary for BuiltinDictionary {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn state_dim(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.basis {
            Basis::Identity => x.clone(),
            Basis::Linear(q) => q * x,
            Basis::Pendulum => {
                let (th, p) = (x[0], x[1]);
                DVector::from_vec(vec![th.sin(), p, th.cos(), 0.5 * p * p + (1.0 - th.cos())])
            }
            Basis::Monomials(exps) => DVector::from_iterator(exps.len(), exps.iter().map(|e| monomial(x, e))),
            Basis::Rbf { centers, width } => {
                let s = 2.0 * width * width;
                DVector::from_iterator(centers.len(), centers.iter().map(|c| (-(x - c).norm_squared() / s).exp()))
            }
        }
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n;
        match &self.basis {
            Basis::Identity => DMatrix::identity(n, n),
            Basis::Linear(q) => q.clone(),
            Basis::Pendulum => {
                let (th, p) = (x[0], x[1]);
                let (s, c) = th.sin_cos();
                DMatrix::from_row_slice(4, 2, &[c, 0.0, 0.0, 1.0, -s, 0.0, s, p])
            }
            Basis::Monomials(exps) => {
                let mut jac = DMatrix::zeros(exps.len(), n);
                for (row, e) in exps.iter().enumerate() {
                    for i in 0..n {
                        if e[i] == 0 {
                            continue;
                        }
                        let mut d = e.clone();
                        d[i] -= 1;
                        jac[(row, i)] = e[i] as f64 * monomial(x, &d);
                    }
                }
                jac
            }
            Basis::Rbf { centers, width } => {
                let w2 = width * width;
                let mut jac = DMatrix::zeros(centers.len(), n);
                for (row, c) in centers.iter().enumerate() {
                    let diff = x - c;
                    let val = (-diff.norm_squared() / (2.0 * w2)).exp();
                    for i in 0..n {
                        jac[(row, i)] = -diff[i] / w2 * val;
                    }
                }
                jac
            }
        }
    }

    fn labels(&self) -> Vec<String> {
        self.labels.clone()
    }

    fn domain(&self) -> Option<&BoundingBox> {
        self.domain.as_ref()
    }
}

/// `Ψ(x)`, rejecting non-finite values.
pub fn eval_dictionary<D: Dictionary + ?Sized>(d: &D, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("dictionary state", d.state_dim(), x.len())?;
    let psi = d.eval(x);
    check_dim("dictionary output", d.len(), psi.len())?;
    if psi.iter().all(|v| v.is_finite()) {
        Ok(psi)
    } else {
        Err(KphError::Numerical("dictionary evaluation is not finite".into()))
    }
}

/// Pointwise generator components on a dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorAction {
    /// `(𝒦_J ψ_i)(x)`
    pub k_j: DVector<f64>,
    /// `(𝒦_R ψ_i)(x)`
    pub k_r: DVector<f64>,
    /// `N × m`, column `j` is `(𝒦_j ψ)(x)`.
    pub k_u: DMatrix<f64>,
}

pub fn generator_action<D, S>(d: &D, sys: &S, x: &DVector<f64>) -> Result<GeneratorAction>
where
    D: Dictionary + ?Sized,
    S: PortHamiltonian + ?Sized,
{
    generator_action_with(d, sys, x, Checks::Structure)
}

pub fn generator_action_with<D, S>(d: &D, sys: &S, x: &DVector<f64>, checks: Checks) -> Result<GeneratorAction>
where
    D: Dictionary + ?Sized,
    S: PortHamiltonian + ?Sized,
{
    check_dim("dictionary state", d.state_dim(), sys.state_dim())?;
    let fields = sub_fields(sys, x, checks)?;
    let jac = d.jacobian(x);
    check_dim("dictionary jacobian rows", d.len(), jac.nrows())?;
    check_dim("dictionary jacobian columns", d.state_dim(), jac.ncols())?;
    let action = GeneratorAction {
        k_j: &jac * &fields.v_j,
        k_r: &jac * &fields.v_r,
        k_u: &jac * sys.port(x),
    };
    let finite = action
        .k_j
        .iter()
        .chain(action.k_r.iter())
        .chain(action.k_u.iter())
        .all(|v| v.is_finite());
    if finite {
        Ok(action)
    } else {
        Err(KphError::Numerical("generator action is not finite".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ph_model::{drift, linear_ph, pendulum};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    /// Central-difference Jacobian, used as an oracle.
    fn fd_jacobian(d: &dyn Dictionary, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(d.len(), d.state_dim());
        for i in 0..d.state_dim() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            jac.set_column(i, &((d.eval(&xp) - d.eval(&xm)) / (2.0 * h)));
        }
        jac
    }

    #[test]
    fn pendulum_dictionary_values() {
        let d = builtin_dictionary(DictionaryKind::Pendulum).unwrap();
        assert_eq!(eval_dictionary(&d, &v(&[0.0, 0.0])).unwrap(), v(&[0.0, 0.0, 1.0, 0.0]));
        let psi = eval_dictionary(&d, &v(&[PI / 2.0, 1.0])).unwrap();
        assert_relative_eq!(psi, v(&[1.0, 1.0, 0.0, 1.5]), epsilon = 1e-15);
        assert_eq!(d.labels(), vec!["sin(theta)", "p", "cos(theta)", "H"]);
    }

    #[test]
    fn identity_dictionary() {
        let d = builtin_dictionary(DictionaryKind::Identity { n: 2 }).unwrap();
        let x = v(&[0.3, -2.0]);
        assert_eq!(eval_dictionary(&d, &x).unwrap(), x);
        assert_eq!(d.jacobian(&x), DMatrix::identity(2, 2));
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn polynomial_monomials() {
        let d = builtin_dictionary(DictionaryKind::Polynomial {
            n: 2,
            degree: 2,
            include_constant: false,
        })
        .unwrap();
        assert_eq!(d.len(), 5);
        assert_eq!(d.labels(), vec!["x1", "x2", "x1^2", "x1*x2", "x2^2"]);
        let psi = d.eval(&v(&[2.0, 3.0]));
        assert_eq!(psi, v(&[2.0, 3.0, 4.0, 6.0, 9.0]));

        let with_one = builtin_dictionary(DictionaryKind::Polynomial {
            n: 2,
            degree: 2,
            include_constant: true,
        })
        .unwrap();
        assert_eq!(with_one.len(), 6);
        assert_eq!(with_one.labels()[0], "1");
    }

    #[test]
    fn invalid_parameters() {
        let bad = [
            DictionaryKind::Identity { n: 0 },
            DictionaryKind::Polynomial {
                n: 2,
                degree: 0,
                include_constant: false,
            },
            DictionaryKind::GaussianRbf {
                centers: vec![],
                width: 1.0,
            },
            DictionaryKind::GaussianRbf {
                centers: vec![v(&[0.0])],
                width: 0.0,
            },
        ];
        for kind in bad {
            assert!(matches!(builtin_dictionary(kind), Err(KphError::Config(_))));
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let kinds = vec![
            DictionaryKind::Pendulum,
            DictionaryKind::Polynomial {
                n: 3,
                degree: 3,
                include_constant: true,
            },
            DictionaryKind::GaussianRbf {
                centers: vec![v(&[0.0, 0.0]), v(&[1.0, -0.5]), v(&[-0.3, 0.8])],
                width: 0.7,
            },
            DictionaryKind::QScaled {
                q: DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            },
        ];
        for kind in kinds {
            let d = builtin_dictionary(kind).unwrap();
            let x = DVector::from_iterator(d.state_dim(), (0..d.state_dim()).map(|i| 0.3 + 0.4 * i as f64));
            // Halving h should quarter the error.
            let e1 = (fd_jacobian(&d, &x, 1e-2) - d.jacobian(&x)).amax();
            let e2 = (fd_jacobian(&d, &x, 5e-3) - d.jacobian(&x)).amax();
            assert!(e1 < 1e-3, "{e1:e}");
            if e1 > 1e-10 {
                let ratio = e1 / e2;
                assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
            }
        }
    }

    #[test]
    fn pendulum_generator_closed_forms() {
        let b = 0.3;
        let sys = pendulum(b).unwrap();
        let d = builtin_dictionary(DictionaryKind::Pendulum).unwrap();
        for &(th, p) in &[(0.3, -1.2), (2.0, 0.7), (-3.0, 1.9)] {
            let a = generator_action(&d, &sys, &v(&[th, p])).unwrap();
            let (s, c) = (th.sin(), th.cos());
            assert_relative_eq!(a.k_j, v(&[p * c, -s, -p * s, 0.0]), epsilon = 1e-12);
            assert_relative_eq!(a.k_r, v(&[0.0, b * p, 0.0, b * p * p]), epsilon = 1e-12);
            assert_eq!(a.k_j[3], 0.0);
            assert_eq!(a.k_u, DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 0.0, p]));
        }
    }

    #[test]
    fn identity_dictionary_on_linear_system() {
        let j = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let r = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.3]);
        let sys = linear_ph(j.clone(), r.clone(), DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), DMatrix::identity(2, 2)).unwrap();
        let d = builtin_dictionary(DictionaryKind::Identity { n: 2 }).unwrap();
        let x = v(&[0.8, -0.4]);
        let a = generator_action(&d, &sys, &x).unwrap();
        assert_eq!(a.k_j, &j * &x);
        assert_eq!(a.k_r, &r * &x);
        assert_eq!(&a.k_j - &a.k_r, d.jacobian(&x) * drift(&sys, &x).unwrap());
    }

    #[test]
    fn domain_containment() {
        let bb = BoundingBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        assert!(bb.contains(&v(&[0.5, -1.0])));
        assert!(!bb.contains(&v(&[1.5, 0.0])));
        let d = builtin_dictionary(DictionaryKind::Identity { n: 2 }).unwrap().with_domain(bb).unwrap();
        assert!(d.domain().is_some());
        assert!(BoundingBox::new(vec![1.0], vec![0.0]).is_err());
    }
}
