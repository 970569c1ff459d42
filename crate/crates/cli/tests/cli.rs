use std::io::Write;
use std::path::Path;
use std::process::{Command, Output};

use rpinn_cli::compare::load_run;
use rpinn_core::oracles::exact_case2;

fn rpinn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rpinn")).args(args).env_remove("RPINN_OUT_DIR").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = rpinn(args);
    assert!(out.status.success(), "{:?} failed: {}", args, String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn exit_codes_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(rpinn(&["solve", "case9", "--out", p(&out)]).status.code(), Some(2));

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "problem = \"case2\"\n[train]\nepochs = \"many\"\n").unwrap();
    assert_eq!(rpinn(&["solve", "--config", p(&cfg), "--out", p(&out)]).status.code(), Some(3));

    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let under_file = blocker.join("run");
    assert_eq!(rpinn(&["solve", "case2", "--method", "bdf", "--out", p(&under_file)]).status.code(), Some(4));

    let div = dir.path().join("div");
    let r = rpinn(&["solve", "case2", "--epochs", "50", "--lr", "1e30", "--out", p(&div)]);
    assert_eq!(r.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&r.stderr).contains("diverged"));
}

#[test]
fn bdf_run_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["solve", "case2", "--method", "bdf", "--out", p(dir.path())]);
    let run = load_run(dir.path()).unwrap();
    assert_eq!(run.grid.len(), 5001);
    for (x, u) in run.grid.iter().zip(&run.pred) {
        assert!((u[0] - exact_case2(*x, -50.0, 2.0).unwrap()).abs() <= 1e-6, "x = {x}");
    }
    let header = std::fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    assert!(header.starts_with("x,pred_u,ref_u,abserr_u\n"));
}

#[test]
fn two_segment_run_writes_two_histories() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["solve", "case1", "--segments", "0,0.1,0.4", "--epochs", "30", "--out", p(dir.path())]);
    for k in 0..2 {
        let text = std::fs::read_to_string(dir.path().join(format!("convergence_seg{k:03}.csv"))).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("epoch,loss,normalized_loss"));
        assert_eq!(lines.count(), 30);
    }
    assert!(!dir.path().join("convergence_seg002.csv").exists());
}

#[test]
fn compare_against_self_reference_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    ok(&["solve", "case3", "--segments", "linear:2", "--epochs", "40", "--out", p(&a)]);
    let run = load_run(&a).unwrap();

    // Against its own reference the discrepancy is the run's reported error.
    ok(&["compare", p(&a)]);
    let cmp: toml::Table = toml::from_str(&std::fs::read_to_string(a.join("comparison.toml")).unwrap()).unwrap();
    let species = cmp["species"].as_array().unwrap();
    for (s, e) in species.iter().zip(&run.summary.errors) {
        assert!((s["max_abs"].as_float().unwrap() - e.max_abs).abs() <= 1e-12);
        assert!((s["l2"].as_float().unwrap() - e.l2).abs() <= 1e-12);
    }

    let same = dir.path().join("same");
    ok(&["compare", p(&a), p(&a), "--out", p(&same)]);
    let text = std::fs::read_to_string(same.join("comparison.toml")).unwrap();
    let cmp: toml::Table = toml::from_str(&text).unwrap();
    for s in cmp["species"].as_array().unwrap() {
        assert_eq!(s["max_abs"].as_float(), Some(0.0));
    }

    let other = dir.path().join("other");
    ok(&["solve", "case2", "--method", "bdf", "--out", p(&other)]);
    assert_eq!(rpinn(&["compare", p(&a), p(&other)]).status.code(), Some(2));
    let shifted = dir.path().join("shifted");
    ok(&["solve", "case2", "--method", "bdf", "--param", "lambda=-40", "--out", p(&shifted)]);
    assert_eq!(rpinn(&["compare", p(&other), p(&shifted)]).status.code(), Some(2));
}

#[test]
fn short_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["solve", "rober", "--take-segments", "2", "--epochs", "60", "--seed", "7", "--out", p(d)]);
    }
    for f in ["solution.csv", "convergence_seg000.csv", "convergence_seg001.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_file_and_env_default_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "problem = \"case2\"\nmethod = \"classical\"\ncheckpoints = true\n[train]\nepochs = 20\ncollocation = 11\n",
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_rpinn"))
        .args(["solve", "--config", p(&cfg)])
        .env("RPINN_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = dir.path().join("case2-classical");
    let run = load_run(&run_dir).unwrap();
    assert_eq!(run.grid.len(), 11);
    assert_eq!(run.summary.config.train.epochs, Some(20));
    let ck = std::fs::read_to_string(run_dir.join("checkpoints/seg000_net0.txt")).unwrap();
    let net = rpinn_core::nn::Mlp::read_checkpoint(ck.as_bytes()).unwrap();
    assert_eq!(net.sizes(), &[1, 50, 50, 50, 50, 1]);
}

#[test]
fn list_problems_names_every_preset() {
    let out = ok(&["list-problems"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["case1", "case2", "case3", "rober"] {
        assert!(text.contains(name));
    }
}

#[test]
fn classical_vs_reduced_report() {
    // Matched budgets on the stiff scalar case; the outcome is reported, not asserted.
    let dir = tempfile::tempdir().unwrap();
    let (red, cla) = (dir.path().join("reduced"), dir.path().join("classical"));
    for (m, d) in [("reduced", &red), ("classical", &cla)] {
        ok(&["solve", "case2", "--method", m, "--epochs", "3000", "--out", p(d)]);
    }
    let (r, c) = (load_run(&red).unwrap(), load_run(&cla).unwrap());
    let (er, ec) = (r.summary.errors[0].max_abs, c.summary.errors[0].max_abs);
    assert!(er.is_finite() && ec.is_finite());
    let _ = writeln!(std::io::stderr(), "case2, 3000 epochs: reduced max error {er:.3e}, classical {ec:.3e}");
    ok(&["compare", p(&cla), p(&red), "--out", p(dir.path())]);
    assert!(dir.path().join("comparison.csv").exists());
}
