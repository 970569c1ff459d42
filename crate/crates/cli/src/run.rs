//! `solve`: run one method on one problem and write its CSV and summary files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rpinn_core::baseline::solve_classical;
use rpinn_core::catalog::{Benchmark, OdeProblem};
use rpinn_core::nn::Mlp;
use rpinn_core::oracles::{bdf_integrate, BdfConfig};
use rpinn_core::problem::StateTable;
use rpinn_core::trainer::{solve_sequential_with, SequentialFailure, TrainReport};
use rpinn_core::Error;
use serde::{Deserialize, Serialize};

use crate::config::{Method, Resolved, RunConfig};
use crate::{error_norms, fmt_num, CliError};

/// Most rows a BDF trajectory writes to the solution CSV.
const MAX_BDF_ROWS: usize = 10_001;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SpeciesError {
    pub name: String,
    pub max_abs: f64,
    pub l2: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunSummary {
    pub problem: String,
    pub method: Method,
    pub seed: u64,
    /// `closed-form` or `bdf2 h=<step>`.
    pub reference: String,
    pub segments: usize,
    pub rows: usize,
    pub wall_time_s: f64,
    pub mass_drift: Option<f64>,
    pub problem_params: BTreeMap<String, f64>,
    pub errors: Vec<SpeciesError>,
    pub config: RunConfig,
}

pub fn species_names(bench: &Benchmark) -> Vec<String> {
    match &bench.problem {
        OdeProblem::Linear(_) => vec!["u".into()],
        OdeProblem::System(s) => (1..=s.dim()).map(|i| format!("u{i}")).collect(),
    }
}

/// Reference values on `grid`: the closed form when the benchmark has one,
/// otherwise a fine BDF2 run restarted on each plan segment.
fn reference_on(
    bench: &Benchmark,
    grid: &[f64],
    bounds: &[f64],
    cfg: &BdfConfig,
) -> Result<(Vec<Vec<f64>>, String), CliError> {
    if let Some(f) = &bench.reference {
        return Ok((grid.iter().map(|&x| f(x)).collect(), "closed-form".into()));
    }
    let species = bench.problem.species();
    let full = bench.problem.as_system();
    let mut u = full.init_values().to_vec();
    let mut out = Vec::with_capacity(grid.len());
    let mut j = 0;
    let segs = bounds.len() - 1;
    for (k, w) in bounds.windows(2).enumerate() {
        let (s, e) = (w[0], w[1]);
        let sys = full.restricted(s, e, u.clone()).map_err(|e| CliError::Config(e.to_string()))?;
        let step = BdfConfig { step_size: cfg.step_size.min(e - s), ..*cfg };
        let table = bdf_integrate(&sys, &step, (s, e)).map_err(solver_err)?;
        while j < grid.len() && (grid[j] <= e || k + 1 == segs) {
            let mut row = table.interpolate(grid[j].clamp(s, e)).map_err(solver_err)?;
            row.truncate(species);
            out.push(row);
            j += 1;
        }
        u = table.last_state().expect("non-empty table").to_vec();
    }
    if out.len() != grid.len() {
        return Err(CliError::Argument("reference grid extends past the plan".into()));
    }
    Ok((out, format!("bdf2 h={:e}", cfg.step_size)))
}

fn solver_err(e: Error) -> CliError {
    match e {
        Error::TrainingDiverged { .. } | Error::Divergence { .. } | Error::StepFailure { .. } | Error::Evaluation { .. } => {
            CliError::Diverged(e.to_string())
        }
        Error::Config(m) => CliError::Config(m),
        other => CliError::Argument(other.to_string()),
    }
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Output(format!("{}: {e}", path.display()))
}

/// Create `dir` and make sure files can be written into it.
pub fn prepare_output(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| write_err(dir, e))?;
    let probe = dir.join(".rpinn-write-test");
    fs::write(&probe, b"").map_err(|e| write_err(dir, e))?;
    fs::remove_file(&probe).map_err(|e| write_err(dir, e))
}

fn write_solution(
    path: &Path,
    names: &[String],
    grid: &[f64],
    pred: &[Vec<f64>],
    reference: &[Vec<f64>],
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_err(path, e))?;
    let mut header = vec!["x".to_string()];
    for prefix in ["pred", "ref", "abserr"] {
        header.extend(names.iter().map(|n| format!("{prefix}_{n}")));
    }
    w.write_record(&header).map_err(|e| write_err(path, e))?;
    for (j, &x) in grid.iter().enumerate() {
        let mut rec = vec![fmt_num(x)];
        rec.extend(pred[j].iter().map(|&v| fmt_num(v)));
        rec.extend(reference[j].iter().map(|&v| fmt_num(v)));
        rec.extend(pred[j].iter().zip(&reference[j]).map(|(p, r)| fmt_num((p - r).abs())));
        w.write_record(&rec).map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| write_err(path, e))
}

fn write_convergence(dir: &Path, reports: &[&TrainReport]) -> Result<(), CliError> {
    for (k, rep) in reports.iter().enumerate() {
        let path = dir.join(format!("convergence_seg{k:03}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(|e| write_err(&path, e))?;
        w.write_record(["epoch", "loss", "normalized_loss"]).map_err(|e| write_err(&path, e))?;
        for (epoch, (l, n)) in rep.history.iter().zip(&rep.normalized).enumerate() {
            w.write_record([epoch.to_string(), fmt_num(*l), fmt_num(*n)]).map_err(|e| write_err(&path, e))?;
        }
        w.flush().map_err(|e| write_err(&path, e))?;
    }
    Ok(())
}

fn write_checkpoints(dir: &Path, nets: &[&[Mlp]]) -> Result<(), CliError> {
    let cdir = dir.join("checkpoints");
    fs::create_dir_all(&cdir).map_err(|e| write_err(&cdir, e))?;
    for (k, seg) in nets.iter().enumerate() {
        for (i, net) in seg.iter().enumerate() {
            let path = cdir.join(format!("seg{k:03}_net{i}.txt"));
            let file = fs::File::create(&path).map_err(|e| write_err(&path, e))?;
            net.write_checkpoint(std::io::BufWriter::new(file)).map_err(|e| write_err(&path, e))?;
        }
    }
    Ok(())
}

/// What a finished (or partially finished) run produced.
pub struct RunOutput {
    pub dir: PathBuf,
    pub summary: RunSummary,
}

fn progress(k: usize, total: usize, rep: &TrainReport) {
    eprintln!(
        "segment {}/{} [{:.6e}, {:.6e}]: best loss {:.3e} at epoch {} (normalized {:.3e}), {:.1}s",
        k + 1,
        total,
        rep.segment.0,
        rep.segment.1,
        rep.best_loss,
        rep.best_epoch,
        rep.best_normalized(),
        rep.wall_time.as_secs_f64()
    );
}

fn thin(table: &StateTable) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = table.len();
    let stride = n.div_ceil(MAX_BDF_ROWS - 1).max(1);
    let mut idx: Vec<usize> = (0..n).step_by(stride).collect();
    if idx.last() != Some(&(n - 1)) {
        idx.push(n - 1);
    }
    (idx.iter().map(|&i| table.grid[i]).collect(), idx.iter().map(|&i| table.values[i].clone()).collect())
}

/// Solve, then write `solution.csv`, `convergence_segNNN.csv` and
/// `summary.toml` into the run directory. A diverging run still writes what
/// finished before returning [`CliError::Diverged`].
pub fn solve(config: RunConfig) -> Result<RunOutput, CliError> {
    let r: Resolved = config.resolve()?;
    prepare_output(&r.out)?;
    let names = species_names(&r.bench);
    let species = names.len();
    let started = Instant::now();
    let total = r.plan.segment_count();

    // (table, reports, nets, failure)
    let (table, reports, nets, failure): (StateTable, Vec<TrainReport>, Vec<Vec<Mlp>>, Option<CliError>) =
        match r.config.method {
            Method::Reduced => match solve_sequential_with(&r.bench.problem, &r.plan, |k, rep| progress(k, total, rep)) {
                Ok(sol) => {
                    let reports = sol.reports().into_iter().cloned().collect();
                    let nets = sol.segments.iter().map(|s| s.nets.clone()).collect();
                    (sol.table, reports, nets, None)
                }
                Err(SequentialFailure { error, partial, reports, .. }) => {
                    (partial, reports, Vec::new(), Some(solver_err(error)))
                }
            },
            Method::Classical => {
                match solve_classical(&r.bench.problem, &r.plan, &r.classical, |k, rep| progress(k, total, rep)) {
                    Ok(sol) => {
                        let reports = sol.reports().into_iter().cloned().collect();
                        let nets = sol.segments.iter().map(|s| s.nets.clone()).collect();
                        (sol.table, reports, nets, None)
                    }
                    Err(SequentialFailure { error, partial, reports, .. }) => {
                        (partial, reports, Vec::new(), Some(solver_err(error)))
                    }
                }
            }
            Method::Bdf => {
                let sys = r.bench.problem.as_system();
                let b = r.plan.boundaries();
                let t = bdf_integrate(&sys, &r.bdf, (b[0], b[b.len() - 1])).map_err(solver_err)?;
                let (grid, mut values) = thin(&t);
                values.iter_mut().for_each(|row| row.truncate(species));
                (StateTable::new(grid, values, None).map_err(solver_err)?, Vec::new(), Vec::new(), None)
            }
        };
    let wall = started.elapsed().as_secs_f64();

    let (reference, ref_label) = if table.is_empty() {
        (Vec::new(), String::from("none"))
    } else {
        let bounds = r.plan.boundaries();
        let done = &bounds[..=reports.len().max(1).min(bounds.len() - 1)];
        let bounds = if r.config.method == Method::Bdf { bounds } else { done };
        reference_on(&r.bench, &table.grid, bounds, &r.reference_bdf)?
    };
    write_solution(&r.out.join("solution.csv"), &names, &table.grid, &table.values, &reference)?;
    let report_refs: Vec<&TrainReport> = reports.iter().collect();
    write_convergence(&r.out, &report_refs)?;
    if r.config.checkpoints && !nets.is_empty() {
        let view: Vec<&[Mlp]> = nets.iter().map(|v| v.as_slice()).collect();
        write_checkpoints(&r.out, &view)?;
    }

    let errors = (0..species)
        .map(|i| {
            let (max_abs, l2) = error_norms(
                &table.values.iter().map(|row| row[i]).collect::<Vec<_>>(),
                &reference.iter().map(|row| row[i]).collect::<Vec<_>>(),
            );
            SpeciesError { name: names[i].clone(), max_abs, l2 }
        })
        .collect();
    let mass_drift = (r.bench.name == "rober").then(|| {
        table.values.iter().map(|row| (row.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    });
    let summary = RunSummary {
        problem: r.bench.name.clone(),
        method: r.config.method,
        seed: r.config.seed,
        reference: ref_label,
        segments: if r.config.method == Method::Bdf { total } else { reports.len() },
        rows: table.len(),
        wall_time_s: wall,
        mass_drift,
        problem_params: r.bench.params.clone(),
        errors,
        config: r.config.clone(),
    };
    let path = r.out.join("summary.toml");
    let text = toml::to_string(&summary).map_err(|e| write_err(&path, e))?;
    fs::write(&path, text).map_err(|e| write_err(&path, e))?;

    match failure {
        Some(e) => Err(e),
        None => Ok(RunOutput { dir: r.out, summary }),
    }
}
