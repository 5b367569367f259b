//! Port-Hamiltonian systems `ẋ = (J(x) - R(x))∇H(x) + G(x)u`, `y = G(x)ᵀ∇H(x)`.
//!
//! A system is anything implementing [`PortHamiltonian`]. Two builtins cover
//! the worked examples ([`Pendulum`], [`LinearPHSystem`]); [`PHSystem`] wraps
//! user closures. All evaluation helpers are free functions that take the
//! system by reference and never mutate it.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, KphError, Result};
use crate::linalg::{max_abs, min_sym_eigenvalue};

/// Tolerance on `J + Jᵀ`, `R - Rᵀ` and the smallest eigenvalue of `R`.
pub const STRUCTURE_TOL: f64 = 1e-10;
/// States with a larger Euclidean norm abort a simulation.
pub const BLOWUP_NORM: f64 = 1e12;

pub trait PortHamiltonian: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// Skew-symmetric interconnection matrix `J(x)`.
    fn structure(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// Symmetric PSD dissipation matrix `R(x)`.
    fn dissipation(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// Port matrix `G(x)`, `n × m`.
    fn port(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn hamiltonian(&self, x: &DVector<f64>) -> f64;
    fn grad_hamiltonian(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Only used by diagnostics.
    fn hess_hamiltonian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

/// Whether to verify the `J`/`R` invariants at an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Checks {
    #[default]
    Structure,
    Skip,
}

/// Damped planar pendulum, state `(θ, p)`, `H = p²/2 + 1 - cos θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pendulum {
    damping: f64,
}

pub fn pendulum(damping: f64) -> Result<Pendulum> {
    if !(damping.is_finite() && damping >= 0.0) {
        return Err(KphError::Config(format!(
            "pendulum damping must be finite and nonnegative, got {damping}"
        )));
    }
    Ok(Pendulum { damping })
}

impl Pendulum {
    pub fn damping(&self) -> f64 {
        self.damping
    }
}

impl PortHamiltonian for Pendulum {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn structure(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
    }
    fn dissipation(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, self.damping])
    }
    fn port(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0])
    }
    fn hamiltonian(&self, x: &DVector<f64>) -> f64 {
        0.5 * x[1] * x[1] + (1.0 - x[0].cos())
    }
    fn grad_hamiltonian(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![x[0].sin(), x[1]])
    }
    fn hess_hamiltonian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(2, 2, &[x[0].cos(), 0.0, 0.0, 1.0]))
    }
}

/// Linear system `ẋ = (J - R)Qx + Gu` with `H = ½xᵀQx`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPHSystem {
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    g: DMatrix<f64>,
    q: DMatrix<f64>,
}

/// Validated constructor: `Jᵀ = -J`, `R = Rᵀ ⪰ 0`, `Q = Qᵀ ≻ 0`, matching sizes.
pub fn linear_ph(
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    g: DMatrix<f64>,
    q: DMatrix<f64>,
) -> Result<LinearPHSystem> {
    let n = j.nrows();
    check_dim("J columns", n, j.ncols())?;
    check_dim("R rows", n, r.nrows())?;
    check_dim("R columns", n, r.ncols())?;
    check_dim("Q rows", n, q.nrows())?;
    check_dim("Q columns", n, q.ncols())?;
    check_dim("G rows", n, g.nrows())?;
    if n == 0 {
        return Err(KphError::Config("linear pH system needs n >= 1".into()));
    }
    for (name, m) in [("J", &j), ("R", &r), ("G", &g), ("Q", &q)] {
        if !crate::linalg::is_finite(m) {
            return Err(KphError::Numerical(format!("{name} has non-finite entries")));
        }
    }
    check_structure_matrices(&j, &r)?;
    let q_asym = max_abs(&(&q - q.transpose()));
    let q_min = min_sym_eigenvalue(&q);
    if q_asym > STRUCTURE_TOL || !(q_min > 0.0) {
        return Err(KphError::Structure(format!(
            "Q must be symmetric positive definite (asymmetry {q_asym:e}, min eigenvalue {q_min:e})"
        )));
    }
    Ok(LinearPHSystem { j, r, g, q })
}

impl LinearPHSystem {
    pub fn j(&self) -> &DMatrix<f64> {
        &self.j
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    /// `(J - R)Q`, the constant drift matrix.
    pub fn drift_matrix(&self) -> DMatrix<f64> {
        (&self.j - &self.r) * &self.q
    }
}

impl PortHamiltonian for LinearPHSystem {
    fn state_dim(&self) -> usize {
        self.j.nrows()
    }
    fn input_dim(&self) -> usize {
        self.g.ncols()
    }
    fn structure(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.j.clone()
    }
    fn dissipation(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.r.clone()
    }
    fn port(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.g.clone()
    }
    fn hamiltonian(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x))
    }
    fn grad_hamiltonian(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * x
    }
    fn hess_hamiltonian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.q.clone())
    }
}

type MatFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type VecFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

/// A port-Hamiltonian system assembled from closures.
#[derive(Clone)]
pub struct PHSystem {
    n: usize,
    m: usize,
    j: MatFn,
    r: MatFn,
    g: MatFn,
    h: ScalarFn,
    grad_h: VecFn,
    hess_h: Option<MatFn>,
}

impl fmt::Debug for PHSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PHSystem")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("has_hessian", &self.hess_h.is_some())
            .finish()
    }
}

impl PHSystem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        m: usize,
        j: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        r: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        g: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        h: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        grad_h: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        PHSystem {
            n,
            m,
            j: Arc::new(j),
            r: Arc::new(r),
            g: Arc::new(g),
            h: Arc::new(h),
            grad_h: Arc::new(grad_h),
            hess_h: None,
        }
    }

    pub fn with_hessian(
        mut self,
        hess: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.hess_h = Some(Arc::new(hess));
        self
    }
}

impl PortHamiltonian for PHSystem {
    fn state_dim(&self) -> usize {
        self.n
    }
    fn input_dim(&self) -> usize {
        self.m
    }
    fn structure(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.j)(x)
    }
    fn dissipation(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.r)(x)
    }
    fn port(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.g)(x)
    }
    fn hamiltonian(&self, x: &DVector<f64>) -> f64 {
        (self.h)(x)
    }
    fn grad_hamiltonian(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.grad_h)(x)
    }
    fn hess_hamiltonian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.hess_h.as_ref().map(|f| f(x))
    }
}

fn check_structure_matrices(j: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<()> {
    let j_resid = max_abs(&(j + j.transpose()));
    if j_resid > STRUCTURE_TOL {
        return Err(KphError::Structure(format!(
            "J is not skew-symmetric: max |J + Jᵀ| = {j_resid:e}"
        )));
    }
    let r_asym = max_abs(&(r - r.transpose()));
    if r_asym > STRUCTURE_TOL {
        return Err(KphError::Structure(format!(
            "R is not symmetric: max |R - Rᵀ| = {r_asym:e}"
        )));
    }
    let r_min = min_sym_eigenvalue(r);
    if r_min < -STRUCTURE_TOL {
        return Err(KphError::Structure(format!(
            "R is not positive semidefinite: min eigenvalue {r_min:e}"
        )));
    }
    Ok(())
}

/// Verifies `J(x) + J(x)ᵀ = 0` and `R(x) = R(x)ᵀ ⪰ 0` at `x`.
pub fn check_structure<S: PortHamiltonian + ?Sized>(sys: &S, x: &DVector<f64>) -> Result<()> {
    check_structure_matrices(&sys.structure(x), &sys.dissipation(x))
}

fn finite_vec(v: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(v)
    } else {
        Err(KphError::Numerical(format!("{what} is not finite")))
    }
}

fn check_state<S: PortHamiltonian + ?Sized>(sys: &S, x: &DVector<f64>) -> Result<()> {
    check_dim("state", sys.state_dim(), x.len())?;
    if x.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(KphError::Numerical("state is not finite".into()))
    }
}

/// Conservative and dissipative parts of the drift.
#[derive(Debug, Clone, PartialEq)]
pub struct SubFields {
    /// `J(x)∇H(x)`
    pub v_j: DVector<f64>,
    /// `R(x)∇H(x)`
    pub v_r: DVector<f64>,
}

impl SubFields {
    pub fn drift(&self) -> DVector<f64> {
        &self.v_j - &self.v_r
    }
}

pub fn sub_fields<S: PortHamiltonian + ?Sized>(
    sys: &S,
    x: &DVector<f64>,
    checks: Checks,
) -> Result<SubFields> {
    check_state(sys, x)?;
    let j = sys.structure(x);
    let r = sys.dissipation(x);
    if checks == Checks::Structure {
        check_structure_matrices(&j, &r)?;
    }
    let grad = sys.grad_hamiltonian(x);
    check_dim("gradient of H", sys.state_dim(), grad.len())?;
    Ok(SubFields {
        v_j: finite_vec(&j * &grad, "J∇H")?,
        v_r: finite_vec(&r * &grad, "R∇H")?,
    })
}

/// `(J(x) - R(x))∇H(x)`, with structure checks.
pub fn drift<S: PortHamiltonian + ?Sized>(sys: &S, x: &DVector<f64>) -> Result<DVector<f64>> {
    drift_with(sys, x, Checks::Structure)
}

pub fn drift_with<S: PortHamiltonian + ?Sized>(
    sys: &S,
    x: &DVector<f64>,
    checks: Checks,
) -> Result<DVector<f64>> {
    sub_fields(sys, x, checks).map(|f| f.drift())
}

/// Physical output `G(x)ᵀ∇H(x)`.
pub fn output<S: PortHamiltonian + ?Sized>(sys: &S, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_state(sys, x)?;
    finite_vec(sys.port(x).transpose() * sys.grad_hamiltonian(x), "output")
}

/// `dH/dt = yᵀu - ∇HᵀR∇H` at `(x, u)`.
pub fn energy_rate<S: PortHamiltonian + ?Sized>(
    sys: &S,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<f64> {
    check_state(sys, x)?;
    check_dim("input", sys.input_dim(), u.len())?;
    let grad = sys.grad_hamiltonian(x);
    let supply = (sys.port(x).transpose() * &grad).dot(u);
    let dissipated = grad.dot(&(sys.dissipation(x) * &grad));
    let rate = supply - dissipated;
    if rate.is_finite() {
        Ok(rate)
    } else {
        Err(KphError::Numerical("energy rate is not finite".into()))
    }
}

/// Full vector field `(J - R)∇H + Gu`.
pub fn vector_field<S: PortHamiltonian + ?Sized>(
    sys: &S,
    x: &DVector<f64>,
    u: &DVector<f64>,
    checks: Checks,
) -> Result<DVector<f64>> {
    check_dim("input", sys.input_dim(), u.len())?;
    let d = drift_with(sys, x, checks)?;
    finite_vec(d + sys.port(x) * u, "vector field")
}

/// Optional lifted columns carried alongside a state trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedColumns {
    pub psi: Vec<DVector<f64>>,
    /// Lifted storage `H̃(ψ)` at each sample.
    pub storage: Vec<f64>,
}

/// Sampled trajectory on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub state_dim: usize,
    pub input_dim: usize,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub energies: Vec<f64>,
    pub lifted: Option<LiftedColumns>,
}

impl Trajectory {
    pub fn empty(state_dim: usize, input_dim: usize) -> Self {
        Trajectory {
            state_dim,
            input_dim,
            times: Vec::new(),
            states: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            energies: Vec::new(),
            lifted: None,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn lifted_dim(&self) -> Option<usize> {
        self.lifted
            .as_ref()
            .map(|l| l.psi.first().map_or(0, |p| p.len()))
    }

    /// Checks equal column lengths, strictly increasing times and vector sizes.
    pub fn validate(&self) -> Result<()> {
        let len = self.times.len();
        check_dim("trajectory states", len, self.states.len())?;
        check_dim("trajectory inputs", len, self.inputs.len())?;
        check_dim("trajectory outputs", len, self.outputs.len())?;
        check_dim("trajectory energies", len, self.energies.len())?;
        if let Some(l) = &self.lifted {
            check_dim("trajectory lifted states", len, l.psi.len())?;
            check_dim("trajectory lifted storage", len, l.storage.len())?;
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(KphError::Numerical("trajectory times are not strictly increasing".into()));
        }
        for x in &self.states {
            check_dim("trajectory state size", self.state_dim, x.len())?;
        }
        for u in self.inputs.iter().chain(&self.outputs) {
            check_dim("trajectory input/output size", self.input_dim, u.len())?;
        }
        Ok(())
    }
}

fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(KphError::Config(format!("dt must be positive, got {dt}")));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(KphError::Config(format!("t_end must be positive, got {t_end}")));
    }
    Ok(((t_end / dt).round() as usize).max(1))
}

/// Fixed-step RK4 under an open-loop input signal `u(t)`.
pub fn simulate<S, U>(sys: &S, x0: &DVector<f64>, input: U, t_end: f64, dt: f64) -> Result<Trajectory>
where
    S: PortHamiltonian + ?Sized,
    U: Fn(f64) -> DVector<f64>,
{
    simulate_feedback(sys, x0, |t, _x: &DVector<f64>| input(t), t_end, dt)
}

/// Fixed-step RK4 under a state-feedback law `u(t, x)`, evaluated at every
/// RK stage. Structure checks run once per grid point.
pub fn simulate_feedback<S, U>(
    sys: &S,
    x0: &DVector<f64>,
    law: U,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory>
where
    S: PortHamiltonian + ?Sized,
    U: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    check_state(sys, x0)?;
    let steps = step_count(t_end, dt)?;
    let mut traj = Trajectory::empty(sys.state_dim(), sys.input_dim());
    let rhs = |t: f64, x: &DVector<f64>| -> Result<DVector<f64>> {
        vector_field(sys, x, &law(t, x), Checks::Skip)
    };
    let mut x = x0.clone();
    for k in 0..=steps {
        let t = k as f64 * dt;
        check_structure(sys, &x)?;
        let u = law(t, &x);
        check_dim("input", sys.input_dim(), u.len())?;
        traj.times.push(t);
        traj.outputs.push(output(sys, &x)?);
        traj.energies.push(sys.hamiltonian(&x));
        traj.inputs.push(u);
        traj.states.push(x.clone());
        if k == steps {
            break;
        }
        let k1 = rhs(t, &x)?;
        let k2 = rhs(t + 0.5 * dt, &(&x + &k1 * (0.5 * dt)))?;
        let k3 = rhs(t + 0.5 * dt, &(&x + &k2 * (0.5 * dt)))?;
        let k4 = rhs(t + dt, &(&x + &k3 * dt))?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        let norm = x.norm();
        if !norm.is_finite() || norm > BLOWUP_NORM {
            return Err(KphError::Numerical(format!(
                "state blew up at t = {} (|x| = {norm:e})",
                t + dt
            )));
        }
    }
    Ok(traj)
}

/// Finite-difference consistency of `∇H` (and `∇²H` when supplied) at `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub grad_error: f64,
    pub hess_error: Option<f64>,
}

/// Central differences with step `h`; errors are max-abs and scale as `O(h²)`.
pub fn gradient_consistency<S: PortHamiltonian + ?Sized>(
    sys: &S,
    x: &DVector<f64>,
    h: f64,
) -> Result<GradientCheck> {
    check_state(sys, x)?;
    let n = sys.state_dim();
    let grad = sys.grad_hamiltonian(x);
    let hess = sys.hess_hamiltonian(x);
    let mut grad_error = 0.0_f64;
    let mut hess_error = hess.as_ref().map(|_| 0.0_f64);
    for i in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let fd = (sys.hamiltonian(&xp) - sys.hamiltonian(&xm)) / (2.0 * h);
        grad_error = grad_error.max((fd - grad[i]).abs());
        if let (Some(hs), Some(err)) = (&hess, hess_error.as_mut()) {
            let col = (sys.grad_hamiltonian(&xp) - sys.grad_hamiltonian(&xm)) / (2.0 * h);
            for r in 0..n {
                *err = err.max((col[r] - hs[(r, i)]).abs());
            }
        }
    }
    Ok(GradientCheck {
        grad_error,
        hess_error,
    })
}
