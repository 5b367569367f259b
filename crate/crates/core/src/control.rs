//! Controller synthesis on the lifted surrogate: damping injection, PBH
//! detectability, Lyapunov solvers and unconstrained finite-horizon MPC.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{check_dim, KphError, Result};
use crate::galerkin::KpHModel;
use crate::lifted::{simulate_lifted, LiftedTrajectory, StorageSpec};
use crate::linalg::{eigenvalues, max_abs, max_sym_eigenvalue, min_sym_eigenvalue, spectral_abscissa, spectral_radius, sym_part, PsdMatrix};

/// Eigenvalues with real part at or above `-MARGINAL_TOL` count as marginal.
pub const MARGINAL_TOL: f64 = 1e-8;
/// PBH rank threshold relative to the largest singular value.
pub const RANK_TOL: f64 = 1e-9;
/// Relative residual bound for the Lyapunov solvers.
pub const LYAPUNOV_RESIDUAL_TOL: f64 = 1e-9;
/// Allowed slack in the terminal Lyapunov inequality.
pub const TERMINAL_TOL: f64 = 1e-9;
/// Relative tolerance on the optimal-cost decrease.
pub const MONOTONE_TOL: f64 = 1e-9;

const STABILITY_MARGIN: f64 = 1e-12;

type Signal = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// `u = -K_d y + v_ext(t)`.
#[derive(Clone)]
pub struct DampingController {
    gain: PsdMatrix,
    external: Option<Signal>,
}

impl fmt::Debug for DampingController {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DampingController")
            .field("gain", &self.gain)
            .field("external", &self.external.is_some())
            .finish()
    }
}

impl DampingController {
    pub fn new(gain: &DMatrix<f64>) -> Result<Self> {
        Ok(DampingController {
            gain: PsdMatrix::try_new(gain, 1e-12)?,
            external: None,
        })
    }

    /// Scalar gain `k·I_m`.
    pub fn scalar(k: f64, m: usize) -> Result<Self> {
        Self::new(&(DMatrix::identity(m, m) * k))
    }

    pub fn with_external<F>(mut self, v: F) -> Self
    where
        F: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    {
        self.external = Some(Arc::new(v));
        self
    }

    pub fn gain(&self) -> &PsdMatrix {
        &self.gain
    }

    pub fn input_dim(&self) -> usize {
        self.gain.dim()
    }
}

pub fn damping_input(c: &DampingController, y: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    check_dim("damping output", c.input_dim(), y.len())?;
    let mut u = -(c.gain.as_matrix() * y);
    if let Some(v) = &c.external {
        let v = v(t);
        check_dim("external input", c.input_dim(), v.len())?;
        u += v;
    }
    Ok(u)
}

/// `K_J - K_R - K_u K_d K_uᵀ`.
pub fn closed_loop_matrix(m: &KpHModel, gain: &PsdMatrix) -> Result<DMatrix<f64>> {
    check_dim("damping gain", m.input_dim(), gain.dim())?;
    let ku = m.k_u();
    Ok(m.generator() - ku * gain.as_matrix() * ku.transpose())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectabilityReport {
    pub detectable: bool,
    pub marginal_modes: Vec<Complex<f64>>,
    pub offending_modes: Vec<Complex<f64>>,
}

/// PBH test on the modes of `a` with `Re λ ≥ -tol`.
pub fn check_detectability(a: &DMatrix<f64>, c: &DMatrix<f64>, tol: f64) -> Result<DetectabilityReport> {
    check_dim("state matrix columns", a.nrows(), a.ncols())?;
    check_dim("output matrix columns", a.ncols(), c.ncols())?;
    let n = a.nrows();
    let mut marginal_modes = Vec::new();
    let mut offending_modes = Vec::new();
    for lambda in eigenvalues(a)? {
        if lambda.re < -tol {
            continue;
        }
        marginal_modes.push(lambda);
        let mut stack = DMatrix::<Complex<f64>>::zeros(n + c.nrows(), n);
        for i in 0..n {
            for j in 0..n {
                let diag = if i == j { lambda } else { Complex::new(0.0, 0.0) };
                stack[(i, j)] = diag - Complex::new(a[(i, j)], 0.0);
            }
        }
        for i in 0..c.nrows() {
            for j in 0..n {
                stack[(n + i, j)] = Complex::new(c[(i, j)], 0.0);
            }
        }
        let sv = stack.singular_values();
        let top = sv.max();
        let rank = sv.iter().filter(|&&s| s > RANK_TOL * top).count();
        if rank < n {
            offending_modes.push(lambda);
        }
    }
    Ok(DetectabilityReport {
        detectable: offending_modes.is_empty(),
        marginal_modes,
        offending_modes,
    })
}

/// Column-major `vec`.
fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn solve_vectorized(op: DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = q.nrows();
    let rhs = -vec_of(q);
    let x = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| KphError::Solve("vectorized Lyapunov system is singular".into()))?;
    Ok(sym_part(&DMatrix::from_column_slice(n, n, x.as_slice())))
}

fn check_lyapunov_input(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<()> {
    check_dim("Lyapunov matrix columns", a.nrows(), a.ncols())?;
    check_dim("Lyapunov weight", a.nrows(), q.nrows())?;
    check_dim("Lyapunov weight columns", q.nrows(), q.ncols())?;
    if a.iter().chain(q.iter()).any(|v| !v.is_finite()) {
        return Err(KphError::Numerical("Lyapunov data is not finite".into()));
    }
    Ok(())
}

fn accept_solution(p: DMatrix<f64>, residual: f64, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if residual > LYAPUNOV_RESIDUAL_TOL * q.norm() {
        return Err(KphError::Solve(format!("Lyapunov residual {residual:e} exceeds tolerance")));
    }
    if p.nrows() > 0 && min_sym_eigenvalue(&p) <= 0.0 {
        return Err(KphError::Solve("Lyapunov solution is not positive definite".into()));
    }
    Ok(p)
}

/// Solves `AᵀP + PA + Q = 0` for Hurwitz `A`.
pub fn solve_lyapunov_ct(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_lyapunov_input(a, q)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let abscissa = spectral_abscissa(a)?;
    if abscissa >= -STABILITY_MARGIN {
        return Err(KphError::NotHurwitz { abscissa });
    }
    let id = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let op = id.kronecker(&at) + at.kronecker(&id);
    let p = solve_vectorized(op, q)?;
    let residual = (&at * &p + &p * a + q).norm();
    accept_solution(p, residual, q)
}

/// Solves `A_dᵀPA_d - P + Q = 0` for Schur-stable `A_d`.
pub fn solve_lyapunov_dt(ad: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_lyapunov_input(ad, q)?;
    let n = ad.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let radius = spectral_radius(ad)?;
    if radius >= 1.0 - STABILITY_MARGIN {
        return Err(KphError::NotSchur { radius });
    }
    let adt = ad.transpose();
    let op = adt.kronecker(&adt) - DMatrix::<f64>::identity(n * n, n * n);
    let p = solve_vectorized(op, q)?;
    let residual = (&adt * &p * ad - &p + q).norm();
    accept_solution(p, residual, q)
}

/// Largest eigenvalue of `sym(AᵀP + PA + Q)`; nonpositive when `P` certifies `A`.
pub fn lyapunov_slack_ct(a: &DMatrix<f64>, p: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    max_sym_eigenvalue(&sym_part(&(a.transpose() * p + p * a + q)))
}

/// Largest eigenvalue of `sym(A_dᵀPA_d - P + Q)`.
pub fn lyapunov_slack_dt(ad: &DMatrix<f64>, p: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    max_sym_eigenvalue(&sym_part(&(ad.transpose() * p * ad - p + q)))
}

/// Finite-horizon tracking problem on the forward-Euler discretization of the surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    model: KpHModel,
    reference: DVector<f64>,
    horizon: f64,
    dt: f64,
    terminal: DMatrix<f64>,
    terminal_decrease: DMatrix<f64>,
    state_cost: DMatrix<f64>,
    input_cost: DMatrix<f64>,
}

impl MpcProblem {
    /// Unit stage weights.
    pub fn new(
        model: KpHModel,
        reference: DVector<f64>,
        horizon: f64,
        dt: f64,
        terminal: DMatrix<f64>,
        terminal_decrease: DMatrix<f64>,
    ) -> Result<Self> {
        let n = model.lifted_dim();
        let m = model.input_dim();
        Self::with_costs(
            model,
            reference,
            horizon,
            dt,
            terminal,
            terminal_decrease,
            DMatrix::identity(n, n),
            DMatrix::identity(m, m),
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_costs(
        model: KpHModel,
        reference: DVector<f64>,
        horizon: f64,
        dt: f64,
        terminal: DMatrix<f64>,
        terminal_decrease: DMatrix<f64>,
        state_cost: DMatrix<f64>,
        input_cost: DMatrix<f64>,
    ) -> Result<Self> {
        let n = model.lifted_dim();
        let m = model.input_dim();
        check_dim("reference", n, reference.len())?;
        for (ctx, mat, dim) in [
            ("terminal weight", &terminal, n),
            ("terminal decrease weight", &terminal_decrease, n),
            ("state cost", &state_cost, n),
            ("input cost", &input_cost, m),
        ] {
            check_dim(ctx, dim, mat.nrows())?;
            check_dim(ctx, dim, mat.ncols())?;
            if mat.iter().any(|v| !v.is_finite()) || max_abs(&(mat - mat.transpose())) > 1e-12 * (1.0 + max_abs(mat)) {
                return Err(KphError::Config(format!("{ctx} must be finite and symmetric")));
            }
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(KphError::Config(format!("dt must be positive, got {dt}")));
        }
        if !(horizon.is_finite() && horizon >= dt) {
            return Err(KphError::Config(format!("horizon {horizon} is shorter than dt {dt}")));
        }
        if n > 0 && min_sym_eigenvalue(&terminal) < -1e-12 {
            return Err(KphError::Config("terminal weight must be positive semidefinite".into()));
        }
        if n > 0 && min_sym_eigenvalue(&state_cost) < -1e-12 {
            return Err(KphError::Config("state cost must be positive semidefinite".into()));
        }
        if m > 0 && min_sym_eigenvalue(&input_cost) <= 0.0 {
            return Err(KphError::Config("input cost must be positive definite".into()));
        }
        if n > 0 && min_sym_eigenvalue(&terminal_decrease) <= 0.0 {
            return Err(KphError::Config("terminal decrease weight must be positive definite".into()));
        }
        Ok(MpcProblem {
            model,
            reference,
            horizon,
            dt,
            terminal,
            terminal_decrease,
            state_cost,
            input_cost,
        })
    }

    pub fn model(&self) -> &KpHModel {
        &self.model
    }

    pub fn reference(&self) -> &DVector<f64> {
        &self.reference
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn terminal(&self) -> &DMatrix<f64> {
        &self.terminal
    }

    /// Number of control intervals, `round(T/dt)`.
    pub fn steps(&self) -> usize {
        ((self.horizon / self.dt).round() as usize).max(1)
    }

    /// `A_d = I + dt(K_J - K_R)`.
    pub fn state_transition(&self) -> DMatrix<f64> {
        let n = self.model.lifted_dim();
        DMatrix::identity(n, n) + self.model.generator() * self.dt
    }

    /// `B_d = dt·K_u`.
    pub fn input_transition(&self) -> DMatrix<f64> {
        self.model.k_u() * self.dt
    }

    /// Largest eigenvalue of `sym(A_dᵀPA_d - P + Q_lyap)`.
    pub fn terminal_slack(&self) -> f64 {
        if self.model.lifted_dim() == 0 {
            return 0.0;
        }
        lyapunov_slack_dt(&self.state_transition(), &self.terminal, &self.terminal_decrease)
    }

    /// Objective value of an input sequence applied from `psi0`.
    pub fn rollout(&self, psi0: &DVector<f64>, inputs: &[DVector<f64>]) -> Result<MpcSolution> {
        check_dim("initial lifted state", self.model.lifted_dim(), psi0.len())?;
        check_dim("input sequence", self.steps(), inputs.len())?;
        let a = self.state_transition();
        let b = self.input_transition();
        let mut states = Vec::with_capacity(inputs.len() + 1);
        let mut psi = psi0.clone();
        let mut cost = 0.0;
        for u in inputs {
            check_dim("input", self.model.input_dim(), u.len())?;
            let e = &psi - &self.reference;
            cost += self.dt * (e.dot(&(&self.state_cost * &e)) + u.dot(&(&self.input_cost * u)));
            let next = &a * &psi + &b * u;
            states.push(psi);
            psi = next;
        }
        let e = &psi - &self.reference;
        cost += e.dot(&(&self.terminal * &e));
        states.push(psi);
        Ok(MpcSolution {
            inputs: inputs.to_vec(),
            states,
            cost,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub inputs: Vec<DVector<f64>>,
    pub states: Vec<DVector<f64>>,
    pub cost: f64,
}

fn spd_solve(h: DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    h.cholesky()
        .map(|c| c.solve(rhs))
        .ok_or_else(|| KphError::Solve("MPC Hessian is not positive definite".into()))
}

/// Backward Riccati recursion in error coordinates `e = ψ - ψ_ref`, carrying
/// the affine drift `(A_d - I)ψ_ref`.
pub fn mpc_solve(prob: &MpcProblem, psi0: &DVector<f64>) -> Result<MpcSolution> {
    check_dim("initial lifted state", prob.model.lifted_dim(), psi0.len())?;
    let n = prob.model.lifted_dim();
    let steps = prob.steps();
    let a = prob.state_transition();
    let b = prob.input_transition();
    let at = a.transpose();
    let bt = b.transpose();
    let d = &a * &prob.reference - &prob.reference;

    let mut s = prob.terminal.clone();
    let mut s_lin = DVector::<f64>::zeros(n);
    let mut gains = Vec::with_capacity(steps);
    for _ in 0..steps {
        let h = &prob.input_cost * prob.dt + &bt * &s * &b;
        let rhs = DMatrix::from_columns(&[&bt * &s_lin]);
        let gain = spd_solve(h.clone(), &(&bt * &s))?;
        let offset = spd_solve(h, &rhs)?.column(0).into_owned();
        let w = &s - &s * &b * &gain;
        let w_lin = &s_lin - &s * &b * &offset;
        let s_next = &prob.state_cost * prob.dt + &at * &w * &a;
        s_lin = &at * (&w * &d + &w_lin);
        s = sym_part(&s_next);
        gains.push((gain, offset));
    }
    gains.reverse();

    let mut e = psi0 - &prob.reference;
    let mut inputs = Vec::with_capacity(steps);
    for (gain, offset) in &gains {
        let z = &a * &e + &d;
        let u = -(gain * &z + offset);
        e = &z + &b * &u;
        inputs.push(u);
    }
    prob.rollout(psi0, &inputs)
}

/// Dense stacked least-squares solve of the same quadratic.
pub fn mpc_solve_batch(prob: &MpcProblem, psi0: &DVector<f64>) -> Result<MpcSolution> {
    check_dim("initial lifted state", prob.model.lifted_dim(), psi0.len())?;
    let n = prob.model.lifted_dim();
    let m = prob.model.input_dim();
    let steps = prob.steps();
    let a = prob.state_transition();
    let b = prob.input_transition();

    // ψ_k = free_k + Σ_j gamma[k][j] u_j
    let mut free = vec![psi0.clone()];
    for k in 0..steps {
        free.push(&a * &free[k]);
    }
    let mut gamma = DMatrix::<f64>::zeros((steps + 1) * n, steps * m);
    for j in 0..steps {
        let mut block = b.clone();
        for k in (j + 1)..=steps {
            gamma.view_mut((k * n, j * m), (n, m)).copy_from(&block);
            block = &a * block;
        }
    }
    let mut offset = DVector::<f64>::zeros((steps + 1) * n);
    for (k, f) in free.iter().enumerate() {
        offset.rows_mut(k * n, n).copy_from(&(f - &prob.reference));
    }

    let mut qbar = DMatrix::<f64>::zeros((steps + 1) * n, (steps + 1) * n);
    for k in 0..steps {
        qbar.view_mut((k * n, k * n), (n, n)).copy_from(&(&prob.state_cost * prob.dt));
    }
    qbar.view_mut((steps * n, steps * n), (n, n)).copy_from(&prob.terminal);
    let mut rbar = DMatrix::<f64>::zeros(steps * m, steps * m);
    for k in 0..steps {
        rbar.view_mut((k * m, k * m), (m, m)).copy_from(&(&prob.input_cost * prob.dt));
    }
    let hess = gamma.transpose() * &qbar * &gamma + rbar;
    let grad = gamma.transpose() * &qbar * &offset;
    let u = hess
        .lu()
        .solve(&(-grad))
        .ok_or_else(|| KphError::Solve("stacked MPC system is singular".into()))?;
    let inputs: Vec<DVector<f64>> = (0..steps).map(|k| u.rows(k * m, m).into_owned()).collect();
    prob.rollout(psi0, &inputs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcCertificate {
    pub terminal_slack: f64,
    /// `(ψ_k - ψ_ref)ᵀP(ψ_k - ψ_ref)` at each visited state.
    pub lyapunov_values: Vec<f64>,
    pub optimal_costs: Vec<f64>,
    /// Largest `(J_{k+1} - J_k) / max(J_k, J_{k+1})` seen, `0` if none increased.
    pub max_relative_increase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcClosedLoop {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub certificate: MpcCertificate,
}

/// Receding-horizon loop: apply the first optimal input, re-solve.
pub fn mpc_closed_loop(prob: &MpcProblem, psi0: &DVector<f64>, n_steps: usize) -> Result<MpcClosedLoop> {
    check_dim("initial lifted state", prob.model.lifted_dim(), psi0.len())?;
    let terminal_slack = prob.terminal_slack();
    if terminal_slack > TERMINAL_TOL {
        return Err(KphError::Certificate(format!(
            "terminal weight violates the discrete Lyapunov inequality (slack {terminal_slack:e})"
        )));
    }
    let a = prob.state_transition();
    let b = prob.input_transition();
    let mut states = vec![psi0.clone()];
    let mut inputs = Vec::with_capacity(n_steps);
    let mut costs = Vec::with_capacity(n_steps + 1);
    let mut lyap = Vec::with_capacity(n_steps + 1);
    let mut psi = psi0.clone();
    for k in 0..=n_steps {
        let sol = mpc_solve(prob, &psi)?;
        let e = &psi - &prob.reference;
        lyap.push(e.dot(&(&prob.terminal * &e)));
        costs.push(sol.cost);
        if k == n_steps {
            break;
        }
        let u = sol.inputs[0].clone();
        psi = &a * &psi + &b * &u;
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(KphError::Numerical(format!("closed-loop state is not finite at step {}", k + 1)));
        }
        inputs.push(u);
        states.push(psi.clone());
    }
    let mut max_relative_increase = 0.0_f64;
    for w in costs.windows(2) {
        let scale = w[0].max(w[1]);
        if w[1] > w[0] {
            let rel = (w[1] - w[0]) / scale;
            max_relative_increase = max_relative_increase.max(rel);
            if w[1] - w[0] > MONOTONE_TOL * scale + 1e-300 {
                return Err(KphError::Certificate(format!(
                    "optimal cost increased from {:e} to {:e}",
                    w[0], w[1]
                )));
            }
        }
    }
    Ok(MpcClosedLoop {
        states,
        inputs,
        certificate: MpcCertificate {
            terminal_slack,
            lyapunov_values: lyap,
            optimal_costs: costs,
            max_relative_increase,
        },
    })
}

/// Lifted run under `u = -K_d K_uᵀψ + v_ext(t)`.
pub fn simulate_damped(
    m: &KpHModel,
    c: &DampingController,
    psi0: &DVector<f64>,
    t_end: f64,
    dt: f64,
) -> Result<LiftedTrajectory> {
    check_dim("damping gain", m.input_dim(), c.input_dim())?;
    let storage = StorageSpec::identity(m.lifted_dim());
    let ku_t = m.k_u().transpose();
    let law = |t: f64, psi: &DVector<f64>| {
        let y = &ku_t * psi;
        damping_input(c, &y, t).unwrap_or_else(|_| DVector::from_element(c.input_dim(), f64::NAN))
    };
    simulate_lifted(m, psi0, law, t_end, dt, &storage)
}
