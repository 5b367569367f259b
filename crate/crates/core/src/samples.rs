//! Weighted point sets standing in for the sampling measure in every inner
//! product, plus the three builtin generators (seeded uniform box, tensor
//! grid, trajectory subsampling).

use std::collections::HashMap;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, KphError, Result};
use crate::ph_model::Trajectory;

/// Allowed deviation of the weight total from one.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    points: Vec<DVector<f64>>,
    weights: Vec<f64>,
}

impl SampleSet {
    /// Zero-weight points are dropped and duplicate points merged (weights add).
    pub fn new(points: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        check_dim("sample weights", points.len(), weights.len())?;
        if points.is_empty() {
            return Err(KphError::Config("sample set is empty".into()));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(KphError::Config("sample points must have at least one coordinate".into()));
        }
        for p in &points {
            check_dim("sample point", dim, p.len())?;
            if p.iter().any(|v| !v.is_finite()) {
                return Err(KphError::Config("sample point is not finite".into()));
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(KphError::Config("sample weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(KphError::Config(format!("sample weights sum to {total}, expected 1")));
        }

        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut kept_points = Vec::with_capacity(points.len());
        let mut kept_weights: Vec<f64> = Vec::with_capacity(points.len());
        for (p, w) in points.into_iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            let key: Vec<u64> = p.iter().map(|v| (v + 0.0).to_bits()).collect();
            match index.get(&key) {
                Some(&i) => kept_weights[i] += w,
                None => {
                    index.insert(key, kept_points.len());
                    kept_points.push(p);
                    kept_weights.push(w);
                }
            }
        }
        Ok(SampleSet {
            points: kept_points,
            weights: kept_weights,
        })
    }

    /// Equal weights `1/K`.
    pub fn uniform(points: Vec<DVector<f64>>) -> Result<Self> {
        let k = points.len();
        if k == 0 {
            return Err(KphError::Config("sample set is empty".into()));
        }
        let w = 1.0 / k as f64;
        Self::new(points, vec![w; k])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DVector<f64>, f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }
}

fn check_box(lower: &[f64], upper: &[f64]) -> Result<()> {
    check_dim("box upper bound", lower.len(), upper.len())?;
    if lower.is_empty() {
        return Err(KphError::Config("box needs at least one dimension".into()));
    }
    for (lo, hi) in lower.iter().zip(upper) {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(KphError::Config(format!("invalid box bounds [{lo}, {hi}]")));
        }
    }
    Ok(())
}

/// `count` points drawn uniformly from the box, reproducible for a fixed seed.
pub fn uniform_box(lower: &[f64], upper: &[f64], count: usize, seed: u64) -> Result<SampleSet> {
    check_box(lower, upper)?;
    if count == 0 {
        return Err(KphError::Config("sample count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..count)
        .map(|_| {
            DVector::from_iterator(
                lower.len(),
                lower.iter().zip(upper).map(|(&lo, &hi)| {
                    if lo == hi {
                        lo
                    } else {
                        rng.random_range(lo..hi)
                    }
                }),
            )
        })
        .collect();
    SampleSet::uniform(points)
}

/// Tensor grid with `counts[i]` evenly spaced nodes per axis (endpoints
/// included; a single node sits at the midpoint). The last axis varies fastest.
pub fn grid(lower: &[f64], upper: &[f64], counts: &[usize]) -> Result<SampleSet> {
    check_box(lower, upper)?;
    check_dim("grid counts", lower.len(), counts.len())?;
    if counts.contains(&0) {
        return Err(KphError::Config("grid counts must be >= 1".into()));
    }
    let axes: Vec<Vec<f64>> = lower
        .iter()
        .zip(upper)
        .zip(counts)
        .map(|((&lo, &hi), &c)| {
            if c == 1 {
                vec![0.5 * (lo + hi)]
            } else {
                (0..c).map(|i| lo + (hi - lo) * i as f64 / (c - 1) as f64).collect()
            }
        })
        .collect();
    let total: usize = counts.iter().product();
    let mut points = Vec::with_capacity(total);
    let mut idx = vec![0usize; counts.len()];
    for _ in 0..total {
        points.push(DVector::from_iterator(idx.len(), idx.iter().enumerate().map(|(a, &i)| axes[a][i])));
        for a in (0..idx.len()).rev() {
            idx[a] += 1;
            if idx[a] < counts[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    SampleSet::uniform(points)
}

/// States at indices `stride, 2·stride, …` of a trajectory, equally weighted.
pub fn from_trajectory(traj: &Trajectory, stride: usize) -> Result<SampleSet> {
    if stride == 0 {
        return Err(KphError::Config("trajectory stride must be >= 1".into()));
    }
    let points: Vec<DVector<f64>> = traj.states.iter().skip(stride).step_by(stride).cloned().collect();
    if points.is_empty() {
        return Err(KphError::Config(format!(
            "trajectory of {} states has no samples at stride {stride}",
            traj.len()
        )));
    }
    SampleSet::uniform(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ph_model::{pendulum, simulate};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn grid_three_by_three() {
        let s = grid(&[-1.0, -1.0], &[1.0, 1.0], &[3, 3]).unwrap();
        assert_eq!(s.len(), 9);
        assert!(s.weights().iter().all(|&w| w == 1.0 / 9.0));
        assert_eq!(s.points()[0], v(&[-1.0, -1.0]));
        assert_eq!(s.points()[1], v(&[-1.0, 0.0]));
        assert_eq!(s.points()[8], v(&[1.0, 1.0]));
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let a = uniform_box(&[-1.0, 0.0], &[1.0, 2.0], 100, 42).unwrap();
        let b = uniform_box(&[-1.0, 0.0], &[1.0, 2.0], 100, 42).unwrap();
        assert_eq!(a, b);
        let c = uniform_box(&[-1.0, 0.0], &[1.0, 2.0], 100, 43).unwrap();
        assert_ne!(a, c);
        assert!(a.points().iter().all(|p| (-1.0..1.0).contains(&p[0]) && (0.0..2.0).contains(&p[1])));
    }

    #[test]
    fn trajectory_subsample_counts() {
        let sys = pendulum(0.3).unwrap();
        let traj = simulate(&sys, &v(&[1.0, 0.0]), |_| v(&[0.0]), 10.0, 0.01).unwrap();
        assert_eq!(traj.len(), 1001);
        let s = from_trajectory(&traj, 10).unwrap();
        assert_eq!(s.len(), 100);
        assert_eq!(s.points()[0], traj.states[10]);
    }

    #[test]
    fn zero_weights_pruned_and_duplicates_merged() {
        let s = SampleSet::new(vec![v(&[0.0]), v(&[1.0]), v(&[0.0]), v(&[2.0])], vec![0.25, 0.0, 0.25, 0.5]).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn invalid_sets_rejected() {
        assert!(SampleSet::new(vec![v(&[0.0])], vec![0.5]).is_err());
        assert!(SampleSet::new(vec![v(&[0.0]), v(&[1.0])], vec![1.5, -0.5]).is_err());
        assert!(SampleSet::new(vec![], vec![]).is_err());
        assert!(grid(&[0.0], &[1.0], &[0]).is_err());
        assert!(uniform_box(&[1.0], &[0.0], 3, 0).is_err());
    }
}
