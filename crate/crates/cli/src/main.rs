use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rpinn_cli::compare::{compare, load_run};
use rpinn_cli::config::{Method, RunConfig};
use rpinn_cli::run::solve;
use rpinn_cli::CliError;
use rpinn_core::catalog;

#[derive(Parser)]
#[command(name = "rpinn", version, about = "Sequential integral-form PINN solver for stiff ODE benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a benchmark problem and write CSV/TOML results.
    Solve(SolveArgs),
    /// Compare two run directories, or one run against its reference.
    Compare {
        run_a: PathBuf,
        run_b: Option<PathBuf>,
        /// Where to write comparison.csv/.toml (default: RUN_A).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in problems.
    ListProblems,
}

#[derive(Args)]
struct SolveArgs {
    /// Problem name; may instead come from the config file.
    problem: Option<String>,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// `a,b,c,...`, `log:N` or `linear:N`.
    #[arg(long)]
    segments: Option<String>,
    /// Solve only the first N segments of the plan.
    #[arg(long)]
    take_segments: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Collocation points per segment.
    #[arg(long)]
    collocation: Option<usize>,
    /// Seam transfer rule: trapezoid, simpson or auto.
    #[arg(long)]
    quadrature: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $RPINN_OUT_DIR/<problem>-<method>, or runs/...).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also save trained network parameters.
    #[arg(long)]
    checkpoints: bool,
    /// Problem parameter override, e.g. `--param lambda=-100`.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
}

impl SolveArgs {
    fn into_config(self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if self.problem.is_some() {
            cfg.problem = self.problem;
        }
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(s) = self.segments {
            cfg.segments.spec = Some(s);
            cfg.segments.boundaries = None;
        }
        cfg.segments.take = self.take_segments.or(cfg.segments.take);
        cfg.train.epochs = self.epochs.or(cfg.train.epochs);
        cfg.train.lr = self.lr.or(cfg.train.lr);
        cfg.train.collocation = self.collocation.or(cfg.train.collocation);
        cfg.train.quadrature = self.quadrature.or(cfg.train.quadrature);
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.out.is_some() {
            cfg.out = self.out;
        }
        cfg.checkpoints |= self.checkpoints;
        for kv in &self.params {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Argument(format!("expected KEY=VALUE, got '{kv}'")))?;
            let v: f64 = v.trim().parse().map_err(|_| CliError::Argument(format!("bad value in '{kv}'")))?;
            cfg.params.insert(k.trim().to_string(), v);
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::ListProblems => {
            for name in catalog::PROBLEM_NAMES {
                println!("{name:8} {}", catalog::describe(name).unwrap_or(""));
            }
            Ok(())
        }
        Command::Solve(args) => args.into_config().and_then(solve).map(|out| {
            for e in &out.summary.errors {
                println!("{:4} max_abs {:.3e}  l2 {:.3e}", e.name, e.max_abs, e.l2);
            }
            if let Some(m) = out.summary.mass_drift {
                println!("mass drift {m:.3e}");
            }
            println!("wrote {} ({:.1}s)", out.dir.display(), out.summary.wall_time_s);
        }),
        Command::Compare { run_a, run_b, out } => (|| {
            let a = load_run(&run_a)?;
            let b = run_b.as_deref().map(load_run).transpose()?;
            let dir = out.unwrap_or_else(|| run_a.clone());
            let report = compare(&a, b.as_ref(), &dir)?;
            println!("{} vs {} on {} points", report.a, report.b, report.points);
            for e in &report.species {
                println!("{:4} max_abs {:.3e}  l2 {:.3e}", e.name, e.max_abs, e.l2);
            }
            Ok(())
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
