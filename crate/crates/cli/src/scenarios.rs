//! Scenario runners. Config problems abort with [`CliError::Config`]; numerical
//! failures inside a scenario end it as a failed check in the [`Report`].

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use clap::ValueEnum;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kph_core::control::{
    check_detectability, closed_loop_matrix, mpc_closed_loop, mpc_solve, mpc_solve_batch, simulate_damped,
    solve_lyapunov_dt, DampingController, MpcProblem, MARGINAL_TOL,
};
use kph_core::exec::{self, Execution};
use kph_core::galerkin::{identify_structured, identify_unstructured, raw_projection, whiten};
use kph_core::lifted::{
    certify_storage, check_passivity_conditions, euler_step_with, largest_passive_dt, simulate_lifted, storage_value,
    StorageSpec,
};
use kph_core::linalg::{max_sym_eigenvalue, min_sym_eigenvalue, sym_part};
use kph_core::observables::{eval_dictionary, generator_action};
use kph_core::ph_model::{drift, output, simulate, simulate_feedback, LiftedColumns};
use kph_core::{BuiltinDictionary, Dictionary, KpHModel, KphError, PortHamiltonian, PsdMatrix, SampleSet, Trajectory};

use crate::config::{to_vector, DictionarySpec, MatrixSpec, RunConfig, SampleSpec, SystemSpec, Tolerances};
use crate::error::{config_err, CliError, CliResult};
use crate::export::{export_trajectory, write_table};
use crate::injectivity::check_injectivity;
use crate::report::{Bound, Check, Report};
use crate::setup::{build_dictionary, build_system, generate_samples, BuiltSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, ValueEnum)]
pub enum Scenario {
    #[value(name = "linear_recovery")]
    LinearRecovery,
    #[value(name = "q_conjugate")]
    QConjugate,
    #[value(name = "pendulum_generator")]
    PendulumGenerator,
    #[value(name = "passivity_suite")]
    PassivitySuite,
    #[value(name = "damping_demo")]
    DampingDemo,
    #[value(name = "mpc_demo")]
    MpcDemo,
    #[value(name = "structure_vs_unstructured")]
    StructureVsUnstructured,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::LinearRecovery,
        Scenario::QConjugate,
        Scenario::PendulumGenerator,
        Scenario::PassivitySuite,
        Scenario::DampingDemo,
        Scenario::MpcDemo,
        Scenario::StructureVsUnstructured,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::LinearRecovery => "linear_recovery",
            Scenario::QConjugate => "q_conjugate",
            Scenario::PendulumGenerator => "pendulum_generator",
            Scenario::PassivitySuite => "passivity_suite",
            Scenario::DampingDemo => "damping_demo",
            Scenario::MpcDemo => "mpc_demo",
            Scenario::StructureVsUnstructured => "structure_vs_unstructured",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Scenario::LinearRecovery => "identify a linear pH system with the identity dictionary and compare to (J, R, G)",
            Scenario::QConjugate => "fit the lifted generator of a general-Q linear system under the dictionary Qx",
            Scenario::PendulumGenerator => "tabulate the conservative and dissipative generator actions on a pendulum grid",
            Scenario::PassivitySuite => "storage conditions, lifted passivity along random runs, Euler energy residual order",
            Scenario::DampingDemo => "damping injection on the surrogate with a PBH detectability check",
            Scenario::MpcDemo => "receding-horizon MPC with a discrete Lyapunov terminal weight",
            Scenario::StructureVsUnstructured => "structured identification against unconstrained baselines",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown scenario `{s}`")))
    }
}

struct Ctx {
    report: Report,
    out_dir: Option<PathBuf>,
    tol: Tolerances,
    seed: u64,
    exec: Execution,
}

impl Ctx {
    fn push(&mut self, c: Check) {
        self.report.push(c);
    }

    fn write_trajectory(&mut self, name: &str, traj: &Trajectory) -> CliResult<()> {
        if let Some(dir) = &self.out_dir {
            let path = dir.join(name);
            export_trajectory(traj, &path)?;
            self.report.files.push(path.display().to_string());
        }
        Ok(())
    }

    fn write_table(&mut self, name: &str, header: &[String], rows: &[Vec<f64>]) -> CliResult<()> {
        if let Some(dir) = &self.out_dir {
            let path = dir.join(name);
            write_table(&path, header, rows)?;
            self.report.files.push(path.display().to_string());
        }
        Ok(())
    }
}

struct Setup {
    sys: BuiltSystem,
    dict: BuiltinDictionary,
    samples: SampleSet,
}

fn oscillator_spec() -> SystemSpec {
    SystemSpec::LinearPh {
        j: MatrixSpec(vec![vec![0.0, 1.0], vec![-1.0, 0.0]]),
        r: MatrixSpec(vec![vec![0.0, 0.0], vec![0.0, 0.3]]),
        g: MatrixSpec(vec![vec![0.0], vec![1.0]]),
        q: None,
    }
}

/// Symmetric grid on `[-1, 1]^n`, whose Gram matrix for linear observables is a multiple of `I`.
fn symmetric_grid(n: usize) -> SampleSpec {
    SampleSpec::Grid {
        lower: vec![-1.0; n],
        upper: vec![1.0; n],
        counts: vec![if n <= 3 { 5 } else { 3 }; n],
    }
}

fn pendulum_box(count: usize) -> SampleSpec {
    SampleSpec::MonteCarlo {
        lower: vec![-PI, -2.0],
        upper: vec![PI, 2.0],
        count,
        seed: None,
    }
}

fn setup(
    cfg: &RunConfig,
    system: SystemSpec,
    dictionary: DictionarySpec,
    samples: impl Fn(&BuiltSystem) -> SampleSpec,
) -> CliResult<Setup> {
    let seed = cfg.seed();
    let sys = build_system(cfg.system.as_ref().unwrap_or(&system), seed)?;
    let dict = build_dictionary(cfg.dictionary.as_ref().unwrap_or(&dictionary), &sys)?;
    let spec = cfg.samples.clone().unwrap_or_else(|| samples(&sys));
    let samples = generate_samples(&spec, &sys, seed)?;
    Ok(Setup { sys, dict, samples })
}

fn initial_state(cfg: &RunConfig, sys: &BuiltSystem) -> CliResult<DVector<f64>> {
    let n = sys.state_dim();
    let x0 = match &cfg.initial_state {
        Some(v) => to_vector(v, "initial_state")?,
        None => match sys {
            BuiltSystem::Pendulum(_) => DVector::from_vec(vec![1.0, 0.0]),
            BuiltSystem::Linear(_) => DVector::from_fn(n, |i, _| if i == 0 { 1.0 } else { 0.5 }),
        },
    };
    if x0.len() != n {
        return Err(CliError::Config(format!("initial_state has {} entries, expected {n}", x0.len())));
    }
    Ok(x0)
}

fn matrix_or(spec: &Option<MatrixSpec>, what: &str, default: DMatrix<f64>) -> CliResult<DMatrix<f64>> {
    let m = match spec {
        Some(s) => s.to_matrix(what)?,
        None => default,
    };
    Ok(m)
}

fn storage_weight(cfg: &RunConfig, n: usize) -> CliResult<StorageSpec> {
    let p = matrix_or(&cfg.controller().storage_weight, "controller.storage_weight", DMatrix::identity(n, n))?;
    if p.nrows() != n {
        return Err(CliError::Config(format!("storage weight must be {n}x{n}")));
    }
    StorageSpec::new(p).map_err(config_err)
}

fn damping_controller(cfg: &RunConfig, m: usize) -> CliResult<DampingController> {
    let k = matrix_or(&cfg.controller().damping_gain, "controller.damping_gain", DMatrix::identity(m, m) * 0.5)?;
    if k.nrows() != m || k.ncols() != m {
        return Err(CliError::Config(format!("damping gain must be {m}x{m}")));
    }
    DampingController::new(&k).map_err(config_err)
}

/// Physical RK4 run under `input`, with the surrogate's own prediction from
/// the lifted initial state in the lifted columns.
fn paired_run(
    setup: &Setup,
    model: &KpHModel,
    x0: &DVector<f64>,
    input: impl Fn(f64) -> DVector<f64> + Copy,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory, KphError> {
    let mut traj = simulate(setup.sys.as_dyn(), x0, input, t_end, dt)?;
    let psi0 = model.lift(&setup.dict, x0)?;
    let lifted = simulate_lifted(model, &psi0, |t, _| input(t), t_end, dt, &StorageSpec::identity(model.lifted_dim()))?;
    traj.lifted = Some(LiftedColumns {
        psi: lifted.psi,
        storage: lifted.storage,
    });
    Ok(traj)
}

fn structure_checks(ctx: &mut Ctx, model: &KpHModel) {
    ctx.push(Check::new("structure_skew_residual", model.report().skew_residual, Bound::AtMost(0.0)));
    ctx.push(Check::new("structure_psd_min_eigenvalue", model.report().psd_min_eig, Bound::AtLeast(0.0)));
}

/// Runs one scenario. Files (CSV plus `report.json`) go to
/// `<output_dir>/<scenario>/` when an output directory is configured.
pub fn run_scenario(scenario: Scenario, cfg: &RunConfig) -> CliResult<Report> {
    let seed = cfg.seed();
    let mut ctx = Ctx {
        report: Report::new(scenario.name(), seed),
        out_dir: cfg.output_dir.as_ref().map(|d| d.join(scenario.name())),
        tol: cfg.tolerances.clone(),
        seed,
        exec: Execution::default(),
    };
    if let Some(dir) = &ctx.out_dir {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let outcome = match scenario {
        Scenario::LinearRecovery => linear_recovery(&mut ctx, cfg),
        Scenario::QConjugate => q_conjugate(&mut ctx, cfg),
        Scenario::PendulumGenerator => pendulum_generator(&mut ctx, cfg),
        Scenario::PassivitySuite => passivity_suite(&mut ctx, cfg),
        Scenario::DampingDemo => damping_demo(&mut ctx, cfg),
        Scenario::MpcDemo => mpc_demo(&mut ctx, cfg),
        Scenario::StructureVsUnstructured => structure_vs_unstructured(&mut ctx, cfg),
    };
    match outcome {
        Ok(()) => {}
        Err(CliError::Core(e)) => ctx.report.fail_with(scenario.name(), e.to_string()),
        Err(e) => return Err(e),
    }
    if let Some(dir) = &ctx.out_dir {
        let path = dir.join("report.json");
        ctx.report.files.push(path.display().to_string());
        fs::write(&path, ctx.report.to_json() + "\n").map_err(|e| CliError::io(&path, e))?;
    }
    Ok(ctx.report)
}

fn linear_recovery(ctx: &mut Ctx, cfg: &RunConfig) -> CliResult<()> {
    let s = setup(cfg, oscillator_spec(), DictionarySpec::Identity, |sys| symmetric_grid(sys.state_dim()))?;
    let lin = s
        .sys
        .linear()
        .ok_or_else(|| CliError::Config("linear_recovery needs a linear system".into()))?
        .clone();
    let x0 = initial_state(cfg, &s.sys)?;
    let model = identify_structured(&s.dict, s.sys.as_dyn(), &s.samples, ctx.exec)?;
    let (kj, kr, ku) = model.in_dictionary_basis()?;
    let tol = ctx.tol.recovery;
    let shape_ok = kj.shape() == lin.j().shape() && ku.shape() == lin.g().shape();
    if !shape_ok {
        return Err(CliError::Config("linear_recovery needs a dictionary with one observable per state".into()));
    }
    let q_is_identity = lin.q() == &DMatrix::identity(lin.q().nrows(), lin.q().nrows());
    let note = (!q_is_identity).then(|| "exact recovery of (J, R, G) requires Q = I".to_string());
    for (name, got, want) in [("k_j_max_error", &kj, lin.j()), ("k_r_max_error", &kr, lin.r()), ("k_u_max_error", &ku, lin.g())] {
        let mut c = Check::new(name, (got - want).amax(), Bound::AtMost(tol));
        if let Some(n) = &note {
            c = c.with_note(n.clone());
        }
        ctx.push(c);
    }
    structure_checks(ctx, &model);
    if let Some(cond) = model.report().gram_condition {
        ctx.push(Check::new("gram_condition", cond, Bound::AtMost(kph_core::galerkin::GRAM_CONDITION_LIMIT)).informational());
    }
    let m = s.sys.input_dim();
    let traj = paired_run(&s, &model, &x0, move |t| DVector::from_element(m, t.sin()), 10.0, 0.01)?;
    let t_inv = model.transform().clone().try_inverse().unwrap_or_else(|| DMatrix::identity(kj.nrows(), kj.nrows()));
    let lifted = traj.lifted.as_ref().expect("paired run has lifted columns");
    let gap = traj
        .states
        .iter()
        .zip(&lifted.psi)
        .map(|(x, psi)| (eval_dictionary(&s.dict, x).map(|p| (&t_inv * psi - p).amax())).unwrap_or(f64::NAN))
        .fold(0.0, f64::max);
    ctx.push(
        Check::new("surrogate_prediction_error", gap, Bound::AtMost(1e-6))
            .informational()
            .with_note("physical RK4 at dt vs surrogate RK4 at dt/10, sup over t in [0, 10]"),
    );
    ctx.write_trajectory("trajectory.csv", &traj)
}

fn q_conjugate(ctx: &mut Ctx, cfg: &RunConfig) -> CliResult<()> {
    let s = setup(
        cfg,
        SystemSpec::RandomLinear {
            n: 3,
            m: 1,
            general_q: true,
        },
        DictionarySpec::QScaled { q: None },
        |sys| {
            let n = sys.state_dim();
            SampleSpec::MonteCarlo {
                lower: vec![-1.0; n],
                upper: vec![1.0; n],
                count: 200,
                seed: None,
            }
        },
    )?;
    let lin = s
        .sys
        .linear()
        .ok_or_else(|| CliError::Config("q_conjugate needs a linear system".into()))?
        .clone();
    let fit = identify_unstructured(&s.dict, s.sys.as_dyn(), &s.samples, ctx.exec)?;
    if fit.k.shape() != lin.j().shape() {
        return Err(CliError::Config("q_conjugate needs a dictionary with one observable per state".into()));
    }
    let q = lin.q();
    let jr = lin.j() - lin.r();
    let q_inv = q.clone().try_inverse().ok_or_else(|| CliError::Config("Q is singular".into()))?;
    let conjugated = q * &jr * &q_inv;
    let left = q * &jr;
    ctx.push(
        Check::new("conjugate_form_error", (&fit.k - &conjugated).norm(), Bound::AtMost(ctx.tol.q_conjugate))
            .informational()
            .with_note("K - Q(J-R)Q^-1; for the dictionary Qx the generator matrix is Q(J-R), so this is nonzero unless Q commutes with J-R"),
    );
    ctx.push(Check::new("generator_error", (&fit.k - &left).norm(), Bound::AtMost(ctx.tol.q_conjugate)).with_note("K - Q(J-R)"));
    ctx.push(Check::new("input_error", (&fit.k_u - q * lin.g()).norm(), Bound::AtMost(ctx.tol.q_conjugate)).with_note("K_u - QG"));
    ctx.push(Check::new("fit_residual", fit.fit_residual, Bound::AtMost(ctx.tol.q_conjugate)).informational());
    let model = identify_structured(&s.dict, s.sys.as_dyn(), &s.samples, ctx.exec)?;
    structure_checks(ctx, &model);
    ctx.push(
        Check::new("structured_skew_moved", model.report().skew_moved, Bound::AtLeast(0.0))
            .informational()
            .with_note("distance moved by the skew projection in the whitened basis"),
    );
    let header: Vec<String> = ["row", "col", "fitted", "q_times_drift", "conjugated"].iter().map(|s| s.to_string()).collect();
    let n = fit.k.nrows();
    let rows: Vec<Vec<f64>> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            vec![i as f64, j as f64, fit.k[(i, j)], left[(i, j)], conjugated[(i, j)]]
        })
        .collect();
    ctx.write_table("generator_entries.csv", &header, &rows)
}

fn pendulum_generator(ctx: &mut Ctx, cfg: &RunConfig) -> CliResult<()> {
    let s = setup(cfg, SystemSpec::Pendulum { damping: 0.3 }, DictionarySpec::Pendulum, |_| SampleSpec::Grid {
        lower: vec![-PI, -2.0],
        upper: vec![PI, 2.0],
        counts: vec![21, 21],
    })?;
    let b = match &s.sys {
        BuiltSystem::Pendulum(p) => p.damping(),
        BuiltSystem::Linear(_) => return Err(CliError::Config("pendulum_generator needs the pendulum system".into())),
    };
    if s.dict.labels() != ["sin(theta)", "p", "cos(theta)", "H"] {
        return Err(CliError::Config("pendulum_generator needs the pendulum dictionary".into()));
    }
    let closed = |x: &DVector<f64>| {
        let (th, p) = (x[0], x[1]);
        (
            DVector::from_vec(vec![p * th.cos(), -th.sin(), -p * th.sin(), 0.0]),
            DVector::from_vec(vec![0.0, b * p, 0.0, b * p * p]),
        )
    };
    let mut rows = Vec::with_capacity(s.samples.len());
    let (mut err_j, mut err_r, mut energy_j, mut energy_r) = (0.0_f64, 0.0_f64, 0.0_f64, f64::INFINITY);
    for x in s.samples.points() {
        let act = generator_action(&s.dict, s.sys.as_dyn(), x)?;
        let (kj, kr) = closed(x);
        err_j = err_j.max((&act.k_j - kj).amax());
        err_r = err_r.max((&act.k_r - kr).amax());
        energy_j = energy_j.max(act.k_j[3].abs());
        energy_r = energy_r.min(act.k_r[3]);
        let mut row = vec![x[0], x[1]];
        row.extend(act.k_j.iter());
        row.extend(act.k_r.iter());
        rows.push(row);
    }
    let tol = ctx.tol.generator_table;
    ctx.push(Check::new("conservative_action_max_error", err_j, Bound::AtMost(tol)));
    ctx.push(Check::new("dissipative_action_max_error", err_r, Bound::AtMost(tol)));
    ctx.push(Check::new("energy_conserved_by_conservative_part", energy_j, Bound::AtMost(tol)));
    ctx.push(Check::new("energy_dissipation_nonnegative", energy_r, Bound::AtLeast(0.0)));

    let probe = generator_action(&s.dict, s.sys.as_dyn(), &DVector::from_vec(vec![PI / 2.0, 2.0]))?;
    let expected = 4.0 * b;
    ctx.push(Check::new("probe_conservative_energy_row", probe.k_j[3].abs(), Bound::AtMost(tol)).with_note("(theta, p) = (pi/2, 2)"));
    ctx.push(
        Check::new("probe_dissipative_energy_row", probe.k_r[3], Bound::Between(expected - tol, expected + tol))
            .with_note(format!("(theta, p) = (pi/2, 2), expected b p^2 = {expected}")),
    );
    let mut header = vec!["theta".to_string(), "p".to_string()];
    header.extend((1..=4).map(|i| format!("kj{i}")));
    header.extend((1..=4).map(|i| format!("kr{i}")));
    ctx.write_table("generator_table.csv", &header, &rows)
}

/// Bounded multisine input, `|u_c(t)| ≤ 1`.
#[derive(Debug, Clone)]
struct Multisine {
    terms: Vec<Vec<(f64, f64, f64)>>,
}

impl Multisine {
    fn random(rng: &mut ChaCha8Rng, m: usize) -> Self {
        let terms = (0..m)
            .map(|_| {
                (0..3)
                    .map(|_| (rng.random_range(-1.0 / 3.0..1.0 / 3.0), rng.random_range(0.5..3.0), rng.random_range(0.0..2.0 * PI)))
                    .collect()
            })
            .collect();
        Multisine { terms }
    }

    fn at(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.terms.len(),
            self.terms.iter().map(|c| c.iter().map(|(a, w, p)| a * (w * t + p).sin()).sum::<f64>()),
        )
    }
}

fn passivity_suite(ctx: &mut Ctx, cfg: &RunConfig) -> CliResult<()> {
    let s = setup(cfg, SystemSpec::Pendulum { damping: 0.3 }, DictionarySpec::Pendulum, |_| pendulum_box(400))?;
    let x0 = initial_state(cfg, &s.sys)?;
    let model = identify_structured(&s.dict, s.sys.as_dyn(), &s.samples, ctx.exec)?;
    let n = model.lifted_dim();
    let m = model.input_dim();
    let p = storage_weight(cfg, n)?;
    structure_checks(ctx, &model);

    let cond = check_passivity_conditions(&model, &p)?;
    let ptol = ctx.tol.passivity_conditions;
    ctx.push(Check::new("storage_skew_residual", cond.skew_residual, Bound::AtMost(ptol)));
    ctx.push(Check::new("storage_dissipation_min_eigenvalue", cond.psd_min_eig, Bound::AtLeast(-ptol)));
    if p.matrix() != &DMatrix::identity(n, n) {
        certify_storage(&model, &p)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let runs: Vec<(DVector<f64>, Multisine)> = (0..20)
        .map(|_| (DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)), Multisine::random(&mut rng, m)))
        .collect();
    let gaps = exec::map(ctx.exec, &runs, |(psi0, u)| {
        simulate_lifted(&model, psi0, |t, _| u.at(t), 10.0, 1e-3, &p).map(|traj| traj.passivity_gap())
    });
    let worst = gaps.into_iter().collect::<Result<Vec<f64>, _>>()?.into_iter().fold(f64::NEG_INFINITY, f64::max);
    ctx.push(
        Check::new("lifted_passivity_gap", worst, Bound::AtMost(ctx.tol.passivity_gap))
            .with_note("max over 20 runs of H(T) - H(0) - integral y'u dt, dt = 1e-3, T = 10"),
    );

    let psi = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let u = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
    let residuals = [1e-2, 5e-3, 2.5e-3]
        .iter()
        .map(|&dt| euler_step_with(&model, &psi, &u, dt, &p).map(|r| r.1))
        .collect::<Result<Vec<f64>, _>>()?;
    let band = Bound::Between(ctx.tol.euler_ratio_min, ctx.tol.euler_ratio_max);
    ctx.push(Check::new("euler_residual_ratio_1e-2_to_5e-3", residuals[0] / residuals[1], band));
    ctx.push(Check::new("euler_residual_ratio_5e-3_to_2.5e-3", residuals[1] / residuals[2], band));

    let passive_dt = largest_passive_dt(&model, &p, &psi, |t| DVector::from_element(m, t.sin()), 1.0)?;
    let mut c = Check::new("largest_passive_euler_dt", passive_dt.unwrap_or(f64::NAN), Bound::AtLeast(1e-5)).informational();
    if passive_dt.is_none() {
        c = c.with_note("no swept step size satisfied the per-step inequality");
    }
    ctx.push(c);

    let rp = raw_projection(&s.dict, s.sys.as_dyn(), &s.samples)?;
    ctx.push(
        Check::new("raw_dissipative_block_min_eigenvalue", min_sym_eigenvalue(&sym_part(&rp.a_r)), Bound::AtLeast(-ctx.tol.raw_psd))
            .informational()
            .with_note("Galerkin block <K_R psi_i, psi_j>; symmetric PSD only for special sample sets"),
    );
    ctx.push(Check::new(
        "dissipation_form_min_eigenvalue",
        min_sym_eigenvalue(&rp.dissipation_form),
        Bound::AtLeast(-ctx.tol.raw_psd),
    ));

    let traj = paired_run(&s, &model, &x0, move |t| DVector::from_element(m, 0.5 * t.sin()), 10.0, 0.01)?;
    ctx.write_trajectory("trajectory.csv", &traj)
}

fn linear_model_setup(ctx: &Ctx, cfg: &RunConfig) -> CliResult<(Setup, KpHModel)> {
    let s = setup(cfg, oscillator_spec(), DictionarySpec::Identity, |sys| symmetric_grid(sys.state_dim()))?;
    let model = identify_structured(&s.dict, s.sys.as_dyn(), &s.samples, ctx.exec).map_err(CliError::Core)?;
    Ok((s, model))
}

fn max_increase(values: &[f64]) -> f64 {
    values.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
}

fn damping_demo(ctx: &mut Ctx, cfg: &RunConfig) -> CliResult<()> {
    let (s, model) = linear_model_setup(ctx, cfg)?;
    let x0 = initial_state(cfg, &s.sys)?;
    let c = damping_controller(cfg, model.input_dim())?;
    let psi0 = model.lift(&s.dict, &x0)?;
    structure_checks(ctx, &model);

    let cases = [("", model.clone(), 50.0), ("lossless_", model.with_dissipation(PsdMatrix::zeros(model.lifted_dim()))?, 100.0)];
    let mut recorded = None;
    for (prefix, m, horizon) in cases {
        let a = closed_loop_matrix(&m, c.gain())?;
        let det = check_detectability(&a, &m.k_u().transpose(), MARGINAL_TOL)?;
        ctx.push(
            Check::new(format!("{prefix}undetectable_modes"), det.offending_modes.len() as f64, Bound::AtMost(0.0))
                .with_note(format!("{} marginal modes tested", det.marginal_modes.len())),
        );
        let traj = simulate_damped(&m, &c, &psi0, horizon, 0.01)?;
        ctx.push(Check::new(
            format!("{prefix}storage_max_increase"),
            max_increase(&traj.storage),
            Bound::AtMost(ctx.tol.storage_increase),
        ));
        let ratio = traj.psi.last().map_or(f64::NAN, |p| p.norm()) / psi0.norm();
        ctx.push(
            Check::new(format!("{prefix}convergence_ratio"), ratio, Bound::AtMost(ctx.tol.convergence))
                .with_note(format!("|psi(T)| / |psi(0)| at T = {horizon}")),
        );
        if recorded.is_none() {
            recorded = Some(traj);
        }
    }

    let inj = check_injectivity(&s.dict, &s.samples, ctx.tol.injectivity);
    ctx.push(
        Check::new(
            "injectivity_worst_ratio",
            inj.worst_pair.map_or(f64::INFINITY, |w| w.ratio),
            Bound::AtLeast(ctx.tol.injectivity),
        )
        .informational()
        .with_note(format!(
            "sample-based surrogate only; min jacobian singular value {:e}",
            inj.min_jacobian_singular_value
        )),
    );

    let sys = s.sys.as_dyn();
    let mut phys = simulate_feedback(
        sys,
        &x0,
        |t, x| {
            let y = output(sys, x).unwrap_or_else(|_| DVector::from_element(c.input_dim(), f64::NAN));
            kph_core::control::damping_input(&c, &y, t).unwrap_or_else(|_| DVector::from_element(c.input_dim(), f64::NAN))
        },
        50.0,
        0.01,
    )?;
    let lifted = recorded.expect("damped case ran");
    phys.lifted = Some(LiftedColumns {
        psi: lifted.psi,
        storage: lifted.storage,
    });
    ctx.write_trajectory("closed_loop.csv", &phys)
}

fn mpc_demo(ctx: &mut Ctx, cfg: &RunConfig) -> CliResult<()> {
    let (s, model) = linear_model_setup(ctx, cfg)?;
    let x0 = initial_state(cfg, &s.sys)?;
    let ctl = cfg.controller();
    let n = model.lifted_dim();
    let dt = ctl.dt.unwrap_or(0.1);
    let horizon = ctl.horizon.unwrap_or(2.0);
    let steps = ctl.steps.unwrap_or(200);
    let q_lyap = matrix_or(&ctl.q_lyap, "controller.q_lyap", DMatrix::identity(n, n) * dt)?;
    let reference = match &ctl.reference {
        Some(r) => to_vector(r, "controller.reference")?,
        None => DVector::zeros(n),
    };
    if q_lyap.shape() != (n, n) || reference.len() != n {
        return Err(CliError::Config(format!("q_lyap must be {n}x{n} and reference must have {n} entries")));
    }
    let ad = DMatrix::identity(n, n) + model.generator() * dt;
    let p = solve_lyapunov_dt(&ad, &q_lyap)?;
    let prob = MpcProblem::new(model.clone(), reference, horizon, dt, p, q_lyap).map_err(config_err)?;
    let psi0 = model.lift(&s.dict, &x0)?;

    ctx.push(Check::new("terminal_condition_slack", prob.terminal_slack(), Bound::AtMost(ctx.tol.terminal)));
    let riccati = mpc_solve(&prob, &psi0)?;
    let batch = mpc_solve_batch(&prob, &psi0)?;
    let input_gap = riccati
        .inputs
        .iter()
        .zip(&batch.inputs)
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max);
    ctx.push(Check::new("riccati_vs_batch_inputs", input_gap, Bound::AtMost(ctx.tol.oracle)));
    ctx.push(Check::new(
        "riccati_vs_batch_cost",
        (riccati.cost - batch.cost).abs() / batch.cost.abs().max(1.0),
        Bound::AtMost(ctx.tol.oracle),
    ));

    let run = match mpc_closed_loop(&prob, &psi0, steps) {
        Ok(run) => run,
        Err(KphError::Certificate(msg)) => {
            ctx.push(Check::new("optimal_cost_monotone", f64::NAN, Bound::AtMost(ctx.tol.monotone)).with_note(msg));
            return Ok(());
        }
        Err(e) => return Err(e.into()),
    };
    let cert = &run.certificate;
    ctx.push(
        Check::new("optimal_cost_max_relative_increase", cert.max_relative_increase, Bound::AtMost(ctx.tol.monotone))
            .with_note(format!("{steps} receding-horizon steps")),
    );
    let v0 = cert.lyapunov_values[0];
    let v_end = *cert.lyapunov_values.last().unwrap_or(&f64::NAN);
    ctx.push(Check::new("terminal_lyapunov_ratio", if v0 > 0.0 { v_end / v0 } else { 0.0 }, Bound::AtMost(1.0)).informational());

    let m = model.input_dim();
    let mut header = vec!["step".to_string(), "t".to_string()];
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.push("V".into());
    header.push("J".into());
    header.extend((1..=n).map(|i| format!("psi{i}")));
    let rows: Vec<Vec<f64>> = (0..run.states.len())
        .map(|k| {
            let mut row = vec![k as f64, k as f64 * dt];
            match run.inputs.get(k) {
                Some(u) => row.extend(u.iter()),
                None => row.extend(std::iter::repeat_n(f64::NAN, m)),
            }
            row.push(cert.lyapunov_values[k]);
            row.push(cert.optimal_costs[k]);
            row.extend(run.states[k].iter());
            row
        })
        .collect();
    ctx.write_table("mpc.csv", &header, &rows)
}

/// `sqrt(Σ w ‖∇Ψ·f - KΨ‖²)` in dictionary coordinates.
fn prediction_residual<D, S>(d: &D, sys: &S, s: &SampleSet, k: &DMatrix<f64>) -> Result<f64, KphError>
where
    D: Dictionary + ?Sized,
    S: PortHamiltonian + ?Sized,
{
    let mut acc = 0.0;
    for (x, w) in s.iter() {
        let lhs = d.jacobian(x) * drift(sys, x)?;
        let rhs = k * eval_dictionary(d, x)?;
        acc += w * (lhs - rhs).norm_squared();
    }
    Ok(acc.sqrt())
}

fn structure_vs_unstructured(ctx: &mut Ctx, cfg: &RunConfig) -> CliResult<()> {
    let s = setup(cfg, SystemSpec::Pendulum { damping: 0.3 }, DictionarySpec::Pendulum, |_| pendulum_box(400))?;
    let model = identify_structured(&s.dict, s.sys.as_dyn(), &s.samples, ctx.exec)?;
    let n = model.lifted_dim();
    let t = model.transform().clone();
    let (_, white) = whiten(&raw_projection(&s.dict, s.sys.as_dyn(), &s.samples)?)?;
    let fit = identify_unstructured(&s.dict, s.sys.as_dyn(), &s.samples, ctx.exec)?;
    let fit_white = fit.in_basis(&t)?;

    structure_checks(ctx, &model);
    let cond = check_passivity_conditions(&model, &StorageSpec::identity(n))?;
    ctx.push(Check::new("structured_passivity_skew_residual", cond.skew_residual, Bound::AtMost(0.0)));

    let raw_skew = white.skew_residual();
    let raw_asym = (&white.a_r - white.a_r.transpose()).norm();
    let raw_psd_violation = (-min_sym_eigenvalue(&sym_part(&white.a_r))).max(0.0);
    let production = max_sym_eigenvalue(&sym_part(&fit_white.k)).max(0.0);
    ctx.push(Check::new("baseline_galerkin_skew_residual", raw_skew, Bound::AtLeast(0.0)).with_note("||A_J + A_J'||_F before projection"));
    ctx.push(Check::new("baseline_galerkin_psd_violation", raw_psd_violation + raw_asym, Bound::AtLeast(0.0)).with_note(
        "max(0, -min eig sym(A_R)) + ||A_R - A_R'||_F before projection",
    ));
    ctx.push(Check::new("baseline_least_squares_energy_production", production, Bound::AtLeast(0.0)).with_note(
        "max(0, max eig sym(K)) in the whitened basis; positive means the fit can create storage",
    ));

    let structured_dict = t.clone().try_inverse().map(|ti| &ti * model.generator() * &t).unwrap_or_else(|| model.generator());
    let structured_res = prediction_residual(&s.dict, s.sys.as_dyn(), &s.samples, &structured_dict)?;
    let baseline_res = prediction_residual(&s.dict, s.sys.as_dyn(), &s.samples, &fit.k)?;
    ctx.push(Check::new("structured_prediction_residual", structured_res, Bound::AtLeast(0.0)).informational());
    ctx.push(Check::new("baseline_prediction_residual", baseline_res, Bound::AtLeast(0.0)).informational());

    let dt = 0.01;
    let steps = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let random_start = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    // Direction in which the baseline produces storage fastest.
    let eig = nalgebra::SymmetricEigen::new(sym_part(&fit_white.k));
    let top = eig.eigenvalues.imax();
    let worst_start = eig.eigenvectors.column(top).into_owned();
    let storage = StorageSpec::identity(n);
    let flow = |k: &DMatrix<f64>, psi0: &DVector<f64>| -> Result<Vec<f64>, KphError> {
        let step = (k * dt).exp();
        let mut psi = psi0.clone();
        let mut h = Vec::with_capacity(steps + 1);
        for _ in 0..=steps {
            h.push(storage_value(&psi, &storage)?);
            psi = &step * psi;
        }
        Ok(h)
    };
    let h_struct = flow(&model.generator(), &worst_start)?;
    let h_base = flow(&fit_white.k, &worst_start)?;
    let h_struct_random = flow(&model.generator(), &random_start)?;
    let h_base_random = flow(&fit_white.k, &random_start)?;
    let growth = |h: &[f64]| h.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - h[0];
    let growth_struct = growth(&h_struct).max(growth(&h_struct_random));
    let growth_base = growth(&h_base).max(growth(&h_base_random));
    ctx.push(
        Check::new("structured_unforced_storage_growth", growth_struct, Bound::AtMost(ctx.tol.storage_increase))
            .with_note("max_t H(t) - H(0) under the exact flow for t in [0, 10], from a random start and the baseline's worst direction"),
    );
    ctx.push(Check::new("baseline_unforced_storage_growth", growth_base, Bound::AtMost(ctx.tol.storage_increase)).informational());

    let header: Vec<String> = ["t", "H_structured", "H_baseline"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<f64>> = (0..=steps).map(|k| vec![k as f64 * dt, h_struct[k], h_base[k]]).collect();
    ctx.write_table("storage_comparison.csv", &header, &rows)
}
