//! Sample-based injectivity diagnostic for the lifting map. This is a
//! surrogate on the given points only, not a proof over a state region.

use kph_core::exec::{self, Execution};
use kph_core::observables::eval_dictionary;
use kph_core::{Dictionary, SampleSet};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WorstPair {
    pub first: usize,
    pub second: usize,
    /// `‖Ψ(x_i) - Ψ(x_j)‖ / ‖x_i - x_j‖`
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InjectivityReport {
    pub injective_on_samples: bool,
    pub worst_pair: Option<WorstPair>,
    /// Smallest singular value of `∇Ψ` over the samples.
    pub min_jacobian_singular_value: f64,
    pub jacobian_full_rank: bool,
}

/// Every pair must satisfy `‖Ψ(x_i) - Ψ(x_j)‖ ≥ tol·‖x_i - x_j‖`.
pub fn check_injectivity<D: Dictionary + ?Sized>(d: &D, s: &SampleSet, tol: f64) -> InjectivityReport {
    let exec = Execution::default();
    let lifted: Vec<_> = exec::map(exec, s.points(), |x| eval_dictionary(d, x).ok());
    let rows = exec::map_range(exec, s.len(), |i| {
        let mut worst: Option<WorstPair> = None;
        for j in (i + 1)..s.len() {
            let dx = (&s.points()[i] - &s.points()[j]).norm();
            let ratio = match (&lifted[i], &lifted[j]) {
                (Some(a), Some(b)) => (a - b).norm() / dx,
                _ => f64::NAN,
            };
            if worst.is_none_or(|w| !(ratio >= w.ratio)) {
                worst = Some(WorstPair {
                    first: i,
                    second: j,
                    ratio,
                });
            }
        }
        worst
    });
    let worst_pair = rows.into_iter().flatten().fold(None, |acc: Option<WorstPair>, w| match acc {
        Some(a) if !(w.ratio < a.ratio) => Some(a),
        _ => Some(w),
    });
    let min_sv = exec::map(exec, s.points(), |x| {
        let jac = d.jacobian(x);
        if jac.nrows() < jac.ncols() {
            0.0
        } else {
            jac.singular_values().min()
        }
    })
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    InjectivityReport {
        injective_on_samples: worst_pair.is_none_or(|w| w.ratio >= tol),
        worst_pair,
        min_jacobian_singular_value: min_sv,
        jacobian_full_rank: min_sv >= tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use kph_core::{builtin_dictionary, DictionaryKind};
    use nalgebra::{DMatrix, DVector};

    struct Constant;

    impl Dictionary for Constant {
        fn len(&self) -> usize {
            1
        }
        fn state_dim(&self) -> usize {
            2
        }
        fn eval(&self, _x: &DVector<f64>) -> DVector<f64> {
            DVector::from_element(1, 1.0)
        }
        fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::zeros(1, 2)
        }
        fn labels(&self) -> Vec<String> {
            vec!["1".into()]
        }
    }

    fn pts(xs: &[[f64; 2]]) -> SampleSet {
        SampleSet::uniform(xs.iter().map(|p| DVector::from_row_slice(p)).collect()).unwrap()
    }

    #[test]
    fn identity_is_injective() {
        let d = builtin_dictionary(DictionaryKind::Identity { n: 2 }).unwrap();
        let r = check_injectivity(&d, &pts(&[[0.0, 0.0], [1.0, 2.0], [-3.0, 0.5]]), 1e-6);
        assert!(r.injective_on_samples && r.jacobian_full_rank);
        assert!((r.worst_pair.unwrap().ratio - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pendulum_dictionary_is_periodic() {
        let d = builtin_dictionary(DictionaryKind::Pendulum).unwrap();
        let tau = 2.0 * std::f64::consts::PI;
        let r = check_injectivity(&d, &pts(&[[0.0, 0.0], [tau, 0.0], [1.0, 1.0]]), 1e-6);
        assert!(!r.injective_on_samples);
        let w = r.worst_pair.unwrap();
        assert_eq!((w.first, w.second), (0, 1));
    }

    #[test]
    fn constant_dictionary_is_not_injective() {
        let r = check_injectivity(&Constant, &pts(&[[0.0, 0.0], [1.0, 0.0]]), 1e-6);
        assert!(!r.injective_on_samples);
        assert!(!r.jacobian_full_rank);
    }
}
