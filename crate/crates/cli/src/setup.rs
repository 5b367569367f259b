//! Turns config sections into core objects.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kph_core::ph_model::simulate;
use kph_core::samples::{from_trajectory, grid, uniform_box};
use kph_core::{
    builtin_dictionary, linear_ph, pendulum, BuiltinDictionary, Dictionary, DictionaryKind, LinearPHSystem, Pendulum,
    PortHamiltonian, SampleSet,
};

use crate::config::{to_vector, DictionarySpec, SampleSpec, SystemSpec};
use crate::error::{config_err, CliError, CliResult};

#[derive(Debug, Clone)]
pub enum BuiltSystem {
    Pendulum(Pendulum),
    Linear(LinearPHSystem),
}

impl BuiltSystem {
    pub fn as_dyn(&self) -> &dyn PortHamiltonian {
        match self {
            BuiltSystem::Pendulum(p) => p,
            BuiltSystem::Linear(l) => l,
        }
    }

    pub fn linear(&self) -> Option<&LinearPHSystem> {
        match self {
            BuiltSystem::Linear(l) => Some(l),
            BuiltSystem::Pendulum(_) => None,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.as_dyn().state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.as_dyn().input_dim()
    }
}

fn uniform_entries(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Seeded random linear pH system.
pub fn random_linear(n: usize, m: usize, general_q: bool, seed: u64) -> CliResult<LinearPHSystem> {
    if n == 0 || m == 0 {
        return Err(CliError::Config("random_linear needs n >= 1 and m >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = uniform_entries(&mut rng, n, n);
    let j = DMatrix::from_fn(n, n, |i, k| if i < k { a[(i, k)] } else if i > k { -a[(k, i)] } else { 0.0 });
    let b = uniform_entries(&mut rng, n, n);
    let r = &b * b.transpose();
    let r = DMatrix::from_fn(n, n, |i, k| 0.5 * (r[(i, k)] + r[(k, i)]));
    let g = uniform_entries(&mut rng, n, m);
    let q = if general_q {
        let c = uniform_entries(&mut rng, n, n);
        let q = &c * c.transpose() + DMatrix::identity(n, n) * 0.5;
        DMatrix::from_fn(n, n, |i, k| 0.5 * (q[(i, k)] + q[(k, i)]))
    } else {
        DMatrix::identity(n, n)
    };
    linear_ph(j, r, g, q).map_err(config_err)
}

pub fn build_system(spec: &SystemSpec, seed: u64) -> CliResult<BuiltSystem> {
    match spec {
        SystemSpec::Pendulum { damping } => Ok(BuiltSystem::Pendulum(pendulum(*damping).map_err(config_err)?)),
        SystemSpec::LinearPh { j, r, g, q } => {
            let j = j.to_matrix("system.j")?;
            let n = j.nrows();
            let q = match q {
                Some(q) => q.to_matrix("system.q")?,
                None => DMatrix::identity(n, n),
            };
            let sys = linear_ph(j, r.to_matrix("system.r")?, g.to_matrix("system.g")?, q).map_err(config_err)?;
            Ok(BuiltSystem::Linear(sys))
        }
        SystemSpec::RandomLinear { n, m, general_q } => {
            Ok(BuiltSystem::Linear(random_linear(*n, *m, *general_q, seed)?))
        }
    }
}

pub fn build_dictionary(spec: &DictionarySpec, sys: &BuiltSystem) -> CliResult<BuiltinDictionary> {
    let n = sys.state_dim();
    let kind = match spec {
        DictionarySpec::Identity => DictionaryKind::Identity { n },
        DictionarySpec::QScaled { q } => {
            let q = match (q, sys.linear()) {
                (Some(q), _) => q.to_matrix("dictionary.q")?,
                (None, Some(l)) => l.q().clone(),
                (None, None) => {
                    return Err(CliError::Config("q_scaled dictionary needs `q` for a nonlinear system".into()))
                }
            };
            DictionaryKind::QScaled { q }
        }
        DictionarySpec::Pendulum => DictionaryKind::Pendulum,
        DictionarySpec::Polynomial {
            degree,
            include_constant,
        } => DictionaryKind::Polynomial {
            n,
            degree: *degree,
            include_constant: *include_constant,
        },
        DictionarySpec::Rbf { centers, width } => DictionaryKind::GaussianRbf {
            centers: centers
                .iter()
                .map(|c| to_vector(c, "dictionary.centers"))
                .collect::<CliResult<Vec<_>>>()?,
            width: *width,
        },
    };
    let d = builtin_dictionary(kind).map_err(config_err)?;
    if d.state_dim() != n {
        return Err(CliError::Config(format!(
            "dictionary acts on {} states but the system has {n}",
            d.state_dim()
        )));
    }
    Ok(d)
}

/// Deterministic for a fixed spec and seed; weights are uniform `1/K`.
pub fn generate_samples(spec: &SampleSpec, sys: &BuiltSystem, seed: u64) -> CliResult<SampleSet> {
    let n = sys.state_dim();
    let s = match spec {
        SampleSpec::Grid { lower, upper, counts } => grid(lower, upper, counts),
        SampleSpec::MonteCarlo {
            lower,
            upper,
            count,
            seed: own,
        } => uniform_box(lower, upper, *count, own.unwrap_or(seed)),
        SampleSpec::Trajectory { x0, t_end, dt, stride } => {
            let x0 = to_vector(x0, "samples.x0")?;
            if x0.len() != n {
                return Err(CliError::Config(format!("samples.x0 has {} entries, expected {n}", x0.len())));
            }
            let m = sys.input_dim();
            let traj = simulate(sys.as_dyn(), &x0, |_| DVector::zeros(m), *t_end, *dt).map_err(config_err)?;
            from_trajectory(&traj, *stride)
        }
    }
    .map_err(config_err)?;
    if s.dim() != n {
        return Err(CliError::Config(format!("samples live in {} dimensions, expected {n}", s.dim())));
    }
    Ok(s)
}
