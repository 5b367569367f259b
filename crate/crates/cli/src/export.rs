//! CSV output. Floats are written as `{:.16e}` (17 significant digits), which
//! round-trips every finite `f64` exactly.

use std::fs::{self, File};
use std::path::Path;

use kph_core::ph_model::LiftedColumns;
use kph_core::Trajectory;
use nalgebra::DVector;

use crate::error::{CliError, CliResult};

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(path: &Path, e: impl ToString) -> CliError {
    CliError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn writer(path: &Path) -> CliResult<csv::Writer<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
    }
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

/// Header-plus-rows table with the same number formatting as trajectories.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(|&v| format_value(v))).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn trajectory_header(traj: &Trajectory) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=traj.state_dim).map(|i| format!("x{i}")));
    h.extend((1..=traj.input_dim).map(|i| format!("u{i}")));
    h.extend((1..=traj.input_dim).map(|i| format!("y{i}")));
    h.push("H".into());
    if let Some(n) = traj.lifted_dim() {
        h.extend((1..=n).map(|i| format!("psi{i}")));
        h.push("Hlift".into());
    }
    h
}

/// `t,x1..xn,u1..um,y1..ym,H` plus `psi1..psiN,Hlift` when lifted columns exist.
pub fn export_trajectory(traj: &Trajectory, path: &Path) -> CliResult<()> {
    traj.validate().map_err(|e| csv_err(path, e))?;
    let rows: Vec<Vec<f64>> = (0..traj.len())
        .map(|k| {
            let mut row = vec![traj.times[k]];
            row.extend(traj.states[k].iter());
            row.extend(traj.inputs[k].iter());
            row.extend(traj.outputs[k].iter());
            row.push(traj.energies[k]);
            if let Some(l) = &traj.lifted {
                row.extend(l.psi[k].iter());
                row.push(l.storage[k]);
            }
            row
        })
        .collect();
    write_table(path, &trajectory_header(traj), &rows)
}

fn count_prefixed(header: &csv::StringRecord, prefix: &str) -> usize {
    header
        .iter()
        .filter(|h| h.strip_prefix(prefix).is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit())))
        .count()
}

/// Inverse of [`export_trajectory`].
pub fn load_trajectory(path: &Path) -> CliResult<Trajectory> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let n = count_prefixed(&header, "x");
    let m = count_prefixed(&header, "u");
    let lifted_n = count_prefixed(&header, "psi");
    let has_lifted = header.iter().any(|h| h == "Hlift");
    let mut traj = Trajectory::empty(n, m);
    let expected: Vec<String> = {
        let mut probe = Trajectory::empty(n, m);
        if has_lifted {
            probe.lifted = Some(LiftedColumns {
                psi: vec![DVector::zeros(lifted_n)],
                storage: vec![0.0],
            });
        }
        trajectory_header(&probe)
    };
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(csv_err(path, format!("unexpected header {header:?}")));
    }
    let mut lifted = LiftedColumns {
        psi: Vec::new(),
        storage: Vec::new(),
    };
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let vals = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| csv_err(path, format!("{s:?}: {e}"))))
            .collect::<CliResult<Vec<f64>>>()?;
        let mut it = vals.into_iter();
        let mut take = |k: usize| DVector::from_iterator(k, it.by_ref().take(k));
        traj.times.push(take(1)[0]);
        traj.states.push(take(n));
        traj.inputs.push(take(m));
        traj.outputs.push(take(m));
        traj.energies.push(take(1)[0]);
        if has_lifted {
            lifted.psi.push(take(lifted_n));
            lifted.storage.push(take(1)[0]);
        }
    }
    if has_lifted {
        traj.lifted = Some(lifted);
    }
    Ok(traj)
}
