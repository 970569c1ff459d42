//! `compare`: discrepancy between two runs, or between a run and its reference.

use std::fs;
use std::path::{Path, PathBuf};

use rpinn_core::problem::StateTable;
use serde::Serialize;

use crate::run::{RunSummary, SpeciesError};
use crate::{error_norms, fmt_num, CliError};

/// A run directory read back from disk.
#[derive(Clone, Debug)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub species: Vec<String>,
    pub grid: Vec<f64>,
    pub pred: Vec<Vec<f64>>,
    pub reference: Vec<Vec<f64>>,
}

fn input_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Argument(format!("{}: {e}", path.display()))
}

pub fn load_run(dir: &Path) -> Result<LoadedRun, CliError> {
    let spath = dir.join("summary.toml");
    let text = fs::read_to_string(&spath).map_err(|e| input_err(&spath, e))?;
    let summary: RunSummary = toml::from_str(&text).map_err(|e| input_err(&spath, e))?;

    let cpath = dir.join("solution.csv");
    let mut rd = csv::Reader::from_path(&cpath).map_err(|e| input_err(&cpath, e))?;
    let header = rd.headers().map_err(|e| input_err(&cpath, e))?.clone();
    let species: Vec<String> =
        header.iter().filter_map(|h| h.strip_prefix("pred_")).map(str::to_string).collect();
    let n = species.len();
    if header.len() != 1 + 3 * n || &header[0] != "x" {
        return Err(input_err(&cpath, "unexpected column layout"));
    }
    let (mut grid, mut pred, mut reference) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rd.records() {
        let rec = rec.map_err(|e| input_err(&cpath, e))?;
        let nums = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| input_err(&cpath, e)))
            .collect::<Result<Vec<_>, _>>()?;
        grid.push(nums[0]);
        pred.push(nums[1..=n].to_vec());
        reference.push(nums[n + 1..=2 * n].to_vec());
    }
    if grid.is_empty() {
        return Err(input_err(&cpath, "no rows"));
    }
    Ok(LoadedRun { dir: dir.to_path_buf(), summary, species, grid, pred, reference })
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Comparison {
    pub problem: String,
    pub a: String,
    pub b: String,
    pub points: usize,
    pub species: Vec<SpeciesError>,
}

fn label(run: &LoadedRun) -> String {
    format!("{} ({})", run.dir.display(), run.summary.method.name())
}

/// Compare `a` against `b` on `a`'s grid points inside the overlap of both
/// runs, interpolating `b` linearly. Without `b`, compare `a` against its own
/// reference columns. Writes `comparison.csv` and `comparison.toml` to `out`.
pub fn compare(a: &LoadedRun, b: Option<&LoadedRun>, out: &Path) -> Result<Comparison, CliError> {
    let (grid, left, right, b_label): (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>, String) = match b {
        None => (a.grid.clone(), a.pred.clone(), a.reference.clone(), format!("{} reference", a.summary.reference)),
        Some(b) => {
            if a.summary.problem != b.summary.problem || a.summary.problem_params != b.summary.problem_params {
                return Err(CliError::Argument(format!(
                    "runs solve different problems: {} vs {}",
                    a.summary.problem, b.summary.problem
                )));
            }
            if a.species != b.species {
                return Err(CliError::Argument("runs report different species".into()));
            }
            let lo = a.grid[0].max(b.grid[0]);
            let hi = a.grid[a.grid.len() - 1].min(b.grid[b.grid.len() - 1]);
            let bt = StateTable::new(b.grid.clone(), b.pred.clone(), None)
                .map_err(|e| CliError::Argument(e.to_string()))?;
            let (mut g, mut l, mut r) = (Vec::new(), Vec::new(), Vec::new());
            for (j, &x) in a.grid.iter().enumerate() {
                if x >= lo && x <= hi {
                    g.push(x);
                    l.push(a.pred[j].clone());
                    r.push(bt.interpolate(x).map_err(|e| CliError::Argument(e.to_string()))?);
                }
            }
            if g.is_empty() {
                return Err(CliError::Argument("runs do not overlap".into()));
            }
            (g, l, r, label(b))
        }
    };

    fs::create_dir_all(out).map_err(|e| CliError::Output(format!("{}: {e}", out.display())))?;
    let cpath = out.join("comparison.csv");
    let werr = |e: csv::Error| CliError::Output(format!("{}: {e}", cpath.display()));
    let mut w = csv::Writer::from_path(&cpath).map_err(werr)?;
    let mut header = vec!["x".to_string()];
    for prefix in ["a", "b", "absdiff"] {
        header.extend(a.species.iter().map(|n| format!("{prefix}_{n}")));
    }
    w.write_record(&header).map_err(werr)?;
    for j in 0..grid.len() {
        let mut rec = vec![fmt_num(grid[j])];
        rec.extend(left[j].iter().map(|&v| fmt_num(v)));
        rec.extend(right[j].iter().map(|&v| fmt_num(v)));
        rec.extend(left[j].iter().zip(&right[j]).map(|(p, q)| fmt_num((p - q).abs())));
        w.write_record(&rec).map_err(werr)?;
    }
    w.flush().map_err(|e| CliError::Output(format!("{}: {e}", cpath.display())))?;

    let species = a
        .species
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let (max_abs, l2) = error_norms(
                &left.iter().map(|r| r[i]).collect::<Vec<_>>(),
                &right.iter().map(|r| r[i]).collect::<Vec<_>>(),
            );
            SpeciesError { name: name.clone(), max_abs, l2 }
        })
        .collect();
    let report = Comparison { problem: a.summary.problem.clone(), a: label(a), b: b_label, points: grid.len(), species };
    let tpath = out.join("comparison.toml");
    let text = toml::to_string(&report).map_err(|e| CliError::Output(e.to_string()))?;
    fs::write(&tpath, text).map_err(|e| CliError::Output(format!("{}: {e}", tpath.display())))?;
    Ok(report)
}
