//! The lifted surrogate `Ψ̇ = (K_J - K_R)Ψ + K_u u`, its quadratic storage
//! `H̃(Ψ) = ½ΨᵀPΨ` and the passivity certificates that go with it.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, KphError, Result};
use crate::galerkin::KpHModel;
use crate::linalg::{max_abs, min_sym_eigenvalue, sym_part};

/// Tolerance on the generalized passivity conditions.
pub const PASSIVITY_TOL: f64 = 1e-9;
/// Reference propagation takes this many RK4 substeps per recorded step.
pub const RK4_SUBSTEPS: usize = 10;

/// Quadratic storage weight `P = Pᵀ ≻ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageSpec {
    p: DMatrix<f64>,
}

impl StorageSpec {
    pub fn identity(n: usize) -> Self {
        StorageSpec {
            p: DMatrix::identity(n, n),
        }
    }

    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        check_dim("storage weight columns", p.nrows(), p.ncols())?;
        let asym = max_abs(&(&p - p.transpose()));
        if asym > 1e-12 * (1.0 + max_abs(&p)) {
            return Err(KphError::Structure(format!("storage weight is not symmetric ({asym:e})")));
        }
        let lo = min_sym_eigenvalue(&p);
        if !(lo > 0.0) {
            return Err(KphError::Structure(format!(
                "storage weight is not positive definite (min eigenvalue {lo:e})"
            )));
        }
        Ok(StorageSpec { p: sym_part(&p) })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }
}

fn check_lifted(m: &KpHModel, psi: &DVector<f64>) -> Result<()> {
    check_dim("lifted state", m.lifted_dim(), psi.len())
}

fn check_storage(m: &KpHModel, storage: &StorageSpec) -> Result<()> {
    check_dim("storage weight", m.lifted_dim(), storage.dim())
}

/// `(K_J - K_R)ψ + K_u u`.
pub fn lifted_drift(m: &KpHModel, psi: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    check_lifted(m, psi)?;
    check_dim("input", m.input_dim(), u.len())?;
    Ok(m.k_j().as_matrix() * psi - m.k_r().as_matrix() * psi + m.k_u() * u)
}

/// `K_uᵀPψ`; with `P = I` this is the surrogate's defined output `K_uᵀψ`.
pub fn lifted_output(m: &KpHModel, psi: &DVector<f64>, storage: &StorageSpec) -> Result<DVector<f64>> {
    check_lifted(m, psi)?;
    check_storage(m, storage)?;
    Ok(m.k_u().transpose() * (storage.matrix() * psi))
}

/// `½ψᵀPψ`.
pub fn storage_value(psi: &DVector<f64>, storage: &StorageSpec) -> Result<f64> {
    check_dim("lifted state", storage.dim(), psi.len())?;
    Ok(0.5 * psi.dot(&(storage.matrix() * psi)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassivityReport {
    /// `‖PK_J + K_JᵀP‖_F`
    pub skew_residual: f64,
    /// Smallest eigenvalue of `sym(PK_R + K_RᵀP)`.
    pub psd_min_eig: f64,
    pub passed: bool,
}

/// Checks `PK_J + K_JᵀP = 0` and `PK_R + K_RᵀP ⪰ 0` to [`PASSIVITY_TOL`].
pub fn check_passivity_conditions(m: &KpHModel, storage: &StorageSpec) -> Result<PassivityReport> {
    check_storage(m, storage)?;
    let p = storage.matrix();
    let kj = m.k_j().as_matrix();
    let kr = m.k_r().as_matrix();
    let skew_residual = (p * kj + kj.transpose() * p).norm();
    let psd_min_eig = if m.lifted_dim() == 0 {
        0.0
    } else {
        min_sym_eigenvalue(&(p * kr + kr.transpose() * p))
    };
    Ok(PassivityReport {
        skew_residual,
        psd_min_eig,
        passed: skew_residual <= PASSIVITY_TOL && psd_min_eig >= -PASSIVITY_TOL,
    })
}

/// Hard gate used before certifying anything with a non-identity storage.
pub fn certify_storage(m: &KpHModel, storage: &StorageSpec) -> Result<PassivityReport> {
    let report = check_passivity_conditions(m, storage)?;
    if report.passed {
        Ok(report)
    } else {
        Err(KphError::Certificate(format!(
            "storage weight fails the passivity conditions (skew residual {:e}, min eigenvalue {:e})",
            report.skew_residual, report.psd_min_eig
        )))
    }
}

/// `dH̃/dt = ψᵀP(K_J - K_R)ψ + ψᵀPK_u u`.
pub fn lifted_energy_rate(m: &KpHModel, psi: &DVector<f64>, u: &DVector<f64>, storage: &StorageSpec) -> Result<f64> {
    check_storage(m, storage)?;
    let f = lifted_drift(m, psi, u)?;
    Ok((storage.matrix() * psi).dot(&f))
}

/// One forward-Euler step with identity storage.
pub fn euler_step(m: &KpHModel, psi: &DVector<f64>, u: &DVector<f64>, dt: f64) -> Result<(DVector<f64>, f64)> {
    euler_step_with(m, psi, u, dt, &StorageSpec::identity(m.lifted_dim()))
}

/// `ψ⁺ = (I + dt(K_J - K_R))ψ + dt K_u u`, with the energy residual
/// `[H̃(ψ⁺) - H̃(ψ)] - dt·dH̃/dt(ψ, u)`, which is `O(dt²)`.
pub fn euler_step_with(
    m: &KpHModel,
    psi: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
    storage: &StorageSpec,
) -> Result<(DVector<f64>, f64)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(KphError::Config(format!("dt must be positive, got {dt}")));
    }
    let f = lifted_drift(m, psi, u)?;
    let next = psi + &f * dt;
    let rate = lifted_energy_rate(m, psi, u, storage)?;
    let residual = storage_value(&next, storage)? - storage_value(psi, storage)? - dt * rate;
    Ok((next, residual))
}

/// Recorded lifted run with storage-consistent outputs `y = K_uᵀPψ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedTrajectory {
    pub times: Vec<f64>,
    pub psi: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub storage: Vec<f64>,
}

impl LiftedTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Trapezoid-rule `∫ yᵀu dt` over the recorded grid.
    pub fn supply_integral(&self) -> f64 {
        let rates: Vec<f64> = self.outputs.iter().zip(&self.inputs).map(|(y, u)| y.dot(u)).collect();
        self.times
            .windows(2)
            .zip(rates.windows(2))
            .map(|(t, r)| 0.5 * (t[1] - t[0]) * (r[0] + r[1]))
            .sum()
    }

    /// `H̃(T) - H̃(0) - ∫ yᵀu dt`, nonpositive for a passive run up to quadrature error.
    pub fn passivity_gap(&self) -> f64 {
        match (self.storage.first(), self.storage.last()) {
            (Some(h0), Some(h1)) => h1 - h0 - self.supply_integral(),
            _ => 0.0,
        }
    }
}

/// RK4 propagation of the lifted model under `u = law(t, ψ)`, recorded every
/// `dt` and integrated with [`RK4_SUBSTEPS`] substeps per record.
pub fn simulate_lifted<U>(
    m: &KpHModel,
    psi0: &DVector<f64>,
    law: U,
    t_end: f64,
    dt: f64,
    storage: &StorageSpec,
) -> Result<LiftedTrajectory>
where
    U: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    check_lifted(m, psi0)?;
    check_storage(m, storage)?;
    if !(dt > 0.0 && dt.is_finite() && t_end > 0.0 && t_end.is_finite()) {
        return Err(KphError::Config(format!("invalid horizon (t_end = {t_end}, dt = {dt})")));
    }
    let steps = ((t_end / dt).round() as usize).max(1);
    let h = dt / RK4_SUBSTEPS as f64;
    let a = m.generator();
    let b = m.k_u();
    let rhs = |t: f64, psi: &DVector<f64>| -> Result<DVector<f64>> {
        let u = law(t, psi);
        check_dim("input", m.input_dim(), u.len())?;
        Ok(&a * psi + b * u)
    };
    let mut traj = LiftedTrajectory {
        times: Vec::with_capacity(steps + 1),
        psi: Vec::with_capacity(steps + 1),
        inputs: Vec::with_capacity(steps + 1),
        outputs: Vec::with_capacity(steps + 1),
        storage: Vec::with_capacity(steps + 1),
    };
    let mut psi = psi0.clone();
    for k in 0..=steps {
        let t = k as f64 * dt;
        let u = law(t, &psi);
        check_dim("input", m.input_dim(), u.len())?;
        traj.times.push(t);
        traj.outputs.push(lifted_output(m, &psi, storage)?);
        traj.storage.push(storage_value(&psi, storage)?);
        traj.inputs.push(u);
        traj.psi.push(psi.clone());
        if k == steps {
            break;
        }
        for s in 0..RK4_SUBSTEPS {
            let ts = t + s as f64 * h;
            let k1 = rhs(ts, &psi)?;
            let k2 = rhs(ts + 0.5 * h, &(&psi + &k1 * (0.5 * h)))?;
            let k3 = rhs(ts + 0.5 * h, &(&psi + &k2 * (0.5 * h)))?;
            let k4 = rhs(ts + h, &(&psi + &k3 * h))?;
            psi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(KphError::Numerical(format!("lifted state is not finite at t = {}", t + dt)));
        }
    }
    Ok(traj)
}

/// Step sizes `1e-1·2^{-k}` down to `1e-5`, largest first.
pub fn dyadic_dt_sweep() -> Vec<f64> {
    std::iter::successors(Some(1e-1_f64), |dt| Some(dt * 0.5))
        .take_while(|&dt| dt >= 1e-5)
        .collect()
}

/// Largest swept `dt` for which every forward-Euler step over `[0, t_end]`
/// satisfies `H̃(ψ⁺) - H̃(ψ) ≤ dt·yᵀu`. `None` if no swept step size works.
pub fn largest_passive_dt<U>(
    m: &KpHModel,
    storage: &StorageSpec,
    psi0: &DVector<f64>,
    input: U,
    t_end: f64,
) -> Result<Option<f64>>
where
    U: Fn(f64) -> DVector<f64>,
{
    for dt in dyadic_dt_sweep() {
        let steps = ((t_end / dt).round() as usize).max(1);
        let mut psi = psi0.clone();
        let mut ok = true;
        for k in 0..steps {
            let u = input(k as f64 * dt);
            let y = lifted_output(m, &psi, storage)?;
            let (next, _) = euler_step_with(m, &psi, &u, dt, storage)?;
            let gain = storage_value(&next, storage)? - storage_value(&psi, storage)?;
            if gain > dt * y.dot(&u) {
                ok = false;
                break;
            }
            psi = next;
        }
        if ok {
            return Ok(Some(dt));
        }
    }
    Ok(None)
}
