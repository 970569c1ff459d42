//! Classical strong-form PINN for first-order systems: networks model `u`
//! directly and the loss is the mean squared ODE residual plus weighted
//! initial-condition penalties.

use std::time::{Duration, Instant};

use crate::catalog::OdeProblem;
use crate::error::{arg, Error, Result};
use crate::nn::{adam_step, Activation, AdamConfig, AdamState, Affine, Mlp};
use crate::oracles::{backward_euler_step, BdfConfig};
use crate::problem::{FirstOrderSystem, StateTable};
use crate::quadrature::UniformGrid;
use crate::trainer::{SegmentPlan, SequentialFailure, TrainConfig, TrainReport};

#[derive(Clone, Debug, PartialEq)]
pub struct ClassicalPinnConfig {
    /// Penalty weight per state variable; missing entries default to 1.
    pub ic_weights: Vec<f64>,
    pub collocation_count: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub loss_tolerance: Option<f64>,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub normalize_input: bool,
    pub output_scaling: bool,
}

impl Default for ClassicalPinnConfig {
    fn default() -> Self {
        Self {
            ic_weights: Vec::new(),
            collocation_count: 101,
            epochs: 20_000,
            adam: AdamConfig::default(),
            loss_tolerance: Some(1e-10),
            seed: 0,
            hidden: vec![50; 4],
            activation: Activation::Tanh,
            normalize_input: true,
            output_scaling: true,
        }
    }
}

impl ClassicalPinnConfig {
    /// Same budget and architecture as a reduced run.
    pub fn matching(cfg: &TrainConfig) -> Self {
        Self {
            collocation_count: cfg.collocation_count,
            epochs: cfg.epochs,
            adam: cfg.adam,
            loss_tolerance: cfg.loss_tolerance,
            seed: cfg.seed,
            hidden: cfg.hidden.clone(),
            normalize_input: cfg.normalize_input,
            output_scaling: cfg.output_scaling,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ic_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("initial-condition weights must be finite and >= 0".into()));
        }
        if self.collocation_count < 2 || self.epochs == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(
                "need collocation_count >= 2, epochs >= 1 and positive layer widths".into(),
            ));
        }
        self.adam.validate()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.ic_weights.get(i).copied().unwrap_or(1.0)
    }

    fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![1];
        sizes.extend(&self.hidden);
        sizes.push(1);
        sizes
    }
}

/// A model that reports both its value and its input derivative.
pub trait DifferentiableModel {
    fn value_and_slope(&self, xs: &[f64]) -> (Vec<f64>, Vec<f64>);
}

impl DifferentiableModel for Mlp {
    fn value_and_slope(&self, xs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let c = self.forward_cached(xs, true);
        (c.outputs().to_vec(), c.input_derivatives().expect("tangent tracked").to_vec())
    }
}

/// Closed-form stand-in for a network: `value(x)` and `slope(x)`.
pub struct Analytic<F, G> {
    pub value: F,
    pub slope: G,
}

impl<F: Fn(f64) -> f64, G: Fn(f64) -> f64> DifferentiableModel for Analytic<F, G> {
    fn value_and_slope(&self, xs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (xs.iter().map(|&x| (self.value)(x)).collect(), xs.iter().map(|&x| (self.slope)(x)).collect())
    }
}

/// `dv/dx` by forward-mode propagation through every layer.
pub fn input_derivative(net: &Mlp, x: f64) -> Result<f64> {
    if !net.params_finite() {
        return Err(Error::Evaluation { index: 0 });
    }
    let c = net.forward_cached(&[x], true);
    Ok(c.input_derivatives().expect("tangent tracked")[0])
}

struct Terms {
    loss: f64,
    /// ∂L/∂u_i(x_j)
    d_value: Vec<Vec<f64>>,
    /// ∂L/∂u_i'(x_j)
    d_slope: Vec<Vec<f64>>,
}

fn evaluate(
    sys: &FirstOrderSystem,
    nodes: &[f64],
    values: &[Vec<f64>],
    slopes: &[Vec<f64>],
    weights: &[f64],
) -> Terms {
    let dim = sys.dim();
    let n = nodes.len();
    let mu = sys.init_values();
    let mut loss = 0.0;
    let mut d_value = vec![vec![0.0; n]; dim];
    let mut d_slope = vec![vec![0.0; n]; dim];
    let mut u = vec![0.0; dim];
    for (j, &x) in nodes.iter().enumerate() {
        for i in 0..dim {
            u[i] = values[i][j];
        }
        let q = sys.rhs_unchecked(&u, x);
        let jac = sys.jacobian(&u, x);
        for i in 0..dim {
            let r = slopes[i][j] - q[i];
            loss += r * r / n as f64;
            let rbar = 2.0 * r / n as f64;
            d_slope[i][j] = rbar;
            for k in 0..dim {
                d_value[k][j] -= rbar * jac[(i, k)];
            }
        }
    }
    for i in 0..dim {
        let e = values[i][0] - mu[i];
        loss += weights[i] * e * e;
        d_value[i][0] += 2.0 * weights[i] * e;
    }
    Terms { loss, d_value, d_slope }
}

fn check_grid(sys: &FirstOrderSystem, grid: &UniformGrid) -> Result<()> {
    let (a, b) = sys.domain();
    let slack = 1e-12 * a.abs().max(b.abs()).max(1.0);
    if (grid.start() - a).abs() > slack || grid.end() > b + slack {
        return Err(arg("grid must start at the initial point and stay inside the domain"));
    }
    Ok(())
}

/// `Σ_i mean_j (u_i'(x_j) - q_i(u(x_j), x_j))^2 + Σ_i α_i (u_i(a) - μ_i)^2`.
pub fn classical_loss<M: DifferentiableModel>(
    models: &[M],
    sys: &FirstOrderSystem,
    grid: &UniformGrid,
    ic_weights: &[f64],
) -> Result<f64> {
    if models.len() != sys.dim() {
        return Err(arg(format!("expected {} networks, got {}", sys.dim(), models.len())));
    }
    if ic_weights.len() != sys.dim() {
        return Err(arg(format!("expected {} weights, got {}", sys.dim(), ic_weights.len())));
    }
    check_grid(sys, grid)?;
    let nodes = grid.nodes();
    let (values, slopes): (Vec<_>, Vec<_>) = models.iter().map(|m| m.value_and_slope(&nodes)).unzip();
    Ok(evaluate(sys, &nodes, &values, &slopes, ic_weights).loss)
}

/// Classical networks trained on one segment.
#[derive(Clone, Debug)]
pub struct ClassicalSegment {
    pub nets: Vec<Mlp>,
    pub report: TrainReport,
    pub grid: UniformGrid,
}

impl ClassicalSegment {
    pub fn table(&self) -> Result<StateTable> {
        let nodes = self.grid.nodes();
        let (values, slopes): (Vec<_>, Vec<_>) = self.nets.iter().map(|m| m.value_and_slope(&nodes)).unzip();
        let rows = |cols: &[Vec<f64>]| (0..nodes.len()).map(|j| cols.iter().map(|c| c[j]).collect()).collect();
        StateTable::new(nodes.clone(), rows(&values), Some(rows(&slopes)))
    }
}

fn initial_nets(sys: &FirstOrderSystem, s: f64, e: f64, cfg: &ClassicalPinnConfig) -> Result<Vec<Mlp>> {
    let base = Mlp::new(&cfg.layer_sizes(), cfg.activation, cfg.seed)?;
    let input = if cfg.normalize_input {
        Affine { offset: -(s + e) / (e - s), scale: 2.0 / (e - s) }
    } else {
        Affine::IDENTITY
    };
    let mu = sys.init_values().to_vec();
    // Offset at the initial value, scale from the change over one implicit step.
    let end = backward_euler_step(sys, &mu, s, e - s, &BdfConfig::default()).ok();
    let q0 = sys.rhs_unchecked(&mu, s);
    let mut scales: Vec<f64> = (0..mu.len())
        .map(|i| {
            let jump = end.as_ref().map_or(0.0, |u| (u[i] - mu[i]).abs());
            (q0[i].abs() * (e - s)).max(jump)
        })
        .collect();
    let fallback = scales.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    for sc in &mut scales {
        if !(*sc > 0.0 && sc.is_finite()) {
            *sc = if fallback > 0.0 { fallback } else { 1.0 };
        }
    }
    Ok(mu
        .iter()
        .zip(scales)
        .map(|(&m, sc)| {
            let mut net = base.clone();
            net.set_input_map(input);
            if cfg.output_scaling {
                net.set_output_map(Affine { offset: m, scale: sc });
            }
            net
        })
        .collect())
}

/// Train classical networks on `[s, e]` from `ics`.
pub fn train_classical(
    problem: &OdeProblem,
    segment: (f64, f64),
    ics: &[f64],
    cfg: &ClassicalPinnConfig,
) -> Result<ClassicalSegment> {
    cfg.validate()?;
    let (s, e) = segment;
    if !(s < e) {
        return Err(arg(format!("segment needs s < e, got [{s}, {e}]")));
    }
    let sys = problem.as_system().restricted(s, e, ics.to_vec())?;
    let grid = UniformGrid::new(s, e, cfg.collocation_count)?;
    let nodes = grid.nodes();
    let weights: Vec<f64> = (0..sys.dim()).map(|i| cfg.weight(i)).collect();
    let started = Instant::now();

    let mut nets = initial_nets(&sys, s, e, cfg)?;
    let mut states = nets.iter().map(|n| AdamState::new(n, cfg.adam)).collect::<Result<Vec<_>>>()?;
    let mut best = nets.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    let (mut best_loss, mut best_epoch) = (f64::INFINITY, 0);
    let mut stopped_early = false;
    for epoch in 0..cfg.epochs {
        let caches: Vec<_> = nets.iter().map(|n| n.forward_cached(&nodes, true)).collect();
        let values: Vec<Vec<f64>> = caches.iter().map(|c| c.outputs().to_vec()).collect();
        let slopes: Vec<Vec<f64>> =
            caches.iter().map(|c| c.input_derivatives().expect("tangent tracked").to_vec()).collect();
        let t = evaluate(&sys, &nodes, &values, &slopes, &weights);
        if !t.loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        history.push(t.loss);
        if t.loss < best_loss {
            best_loss = t.loss;
            best_epoch = epoch;
            best.clone_from(&nets);
        }
        if cfg.loss_tolerance.is_some_and(|tol| t.loss < tol) {
            stopped_early = true;
            break;
        }
        if epoch + 1 == cfg.epochs {
            break;
        }
        for (i, (net, st)) in nets.iter_mut().zip(&mut states).enumerate() {
            let g = net.backward(&caches[i], &t.d_value[i], Some(&t.d_slope[i]))?;
            adam_step(net, &g, st)?;
        }
    }
    let initial_loss = history[0];
    let normalized = history.iter().map(|&l| if initial_loss > 0.0 { l / initial_loss } else { 0.0 }).collect();
    let final_loss = *history.last().expect("at least one epoch");
    let boundary_state: Vec<f64> = best.iter().map(|n| n.forward_cached(&[e], false).outputs()[0]).collect();
    Ok(ClassicalSegment {
        nets: best,
        report: TrainReport {
            segment,
            history,
            normalized,
            initial_loss,
            best_loss,
            best_epoch,
            final_loss,
            stopped_early,
            wall_time: Duration::ZERO,
            boundary_state,
        },
        grid,
    })
    .map(|mut seg| {
        seg.report.wall_time = started.elapsed();
        seg
    })
}

#[derive(Clone, Debug)]
pub struct ClassicalSolution {
    pub table: StateTable,
    pub segments: Vec<ClassicalSegment>,
}

impl ClassicalSolution {
    pub fn reports(&self) -> Vec<&TrainReport> {
        self.segments.iter().map(|s| &s.report).collect()
    }
}

/// Sequential classical training over a plan's segments. Scalar
/// higher-order problems are solved in companion form and report `u` only.
pub fn solve_classical(
    problem: &OdeProblem,
    plan: &SegmentPlan,
    cfg: &ClassicalPinnConfig,
    mut on_segment: impl FnMut(usize, &TrainReport),
) -> std::result::Result<ClassicalSolution, SequentialFailure> {
    let mut table = StateTable::empty();
    let mut segments: Vec<ClassicalSegment> = Vec::new();
    let mut ics = problem.init_values().to_vec();
    let scalar = matches!(problem, OdeProblem::Linear(_));
    let (a, b) = problem.domain();
    let bounds = plan.boundaries();
    let slack = 1e-12 * a.abs().max(b.abs()).max(1.0);
    if (bounds[0] - a).abs() > slack || bounds[bounds.len() - 1] > b + slack {
        return Err(SequentialFailure {
            segment: 0,
            error: Error::Config(format!("plan must start at {a} and end inside [{a}, {b}]")),
            partial: table,
            reports: Vec::new(),
        });
    }
    for (idx, seg) in plan.segments().enumerate() {
        let outcome = train_classical(problem, seg, &ics, cfg).and_then(|t| {
            let mut part = t.table()?;
            let last = part.values.len() - 1;
            part.values[last] = t.report.boundary_state.clone();
            if scalar {
                part.values.iter_mut().for_each(|row| row.truncate(1));
                if let Some(d) = part.derivs.as_mut() {
                    d.iter_mut().for_each(|row| row.truncate(1));
                }
            }
            Ok((t, part))
        });
        match outcome {
            Ok((t, part)) => {
                on_segment(idx, &t.report);
                table.extend(part);
                ics = t.report.boundary_state.clone();
                segments.push(t);
            }
            Err(error) => {
                let reports = segments.iter().map(|s| s.report.clone()).collect();
                return Err(SequentialFailure { segment: idx, error, partial: table, reports });
            }
        }
    }
    Ok(ClassicalSolution { table, segments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{build, case3_system};
    use crate::oracles::{exact_case1, exact_case1_derivative, exact_case2, exact_case3};
    use nalgebra::{DMatrix, DVector};
    use std::collections::BTreeMap;

    fn case2_sys() -> FirstOrderSystem {
        build("case2", &BTreeMap::new()).unwrap().problem.as_system()
    }

    fn zero() -> Analytic<fn(f64) -> f64, fn(f64) -> f64> {
        Analytic { value: |_| 0.0, slope: |_| 0.0 }
    }

    #[test]
    fn exact_stub_nulls_loss_case2() {
        let sys = case2_sys();
        let grid = UniformGrid::new(0.0, 0.05, 101).unwrap();
        let stub = Analytic {
            value: |x| exact_case2(x, -50.0, 2.0).unwrap(),
            slope: |x| -50.0 * exact_case2(x, -50.0, 2.0).unwrap() + (-x).exp(),
        };
        assert!(classical_loss(&[stub], &sys, &grid, &[1.0]).unwrap() <= 1e-10);
    }

    #[test]
    fn exact_stubs_null_loss_every_closed_form_case() {
        let b1 = build("case1", &BTreeMap::new()).unwrap();
        let sys1 = b1.problem.as_system();
        let g1 = UniformGrid::new(0.0, 0.4, 101).unwrap();
        let ex = |x: f64| exact_case1(x, -1.0, 10.0, 1.0, 10.0).unwrap();
        let dex = |x: f64| exact_case1_derivative(x, -1.0, 10.0, 1.0, 10.0).unwrap();
        // u'' = 2c u' - (c^2 + d^2) u
        let ddex = move |x: f64| -2.0 * dex(x) - 101.0 * ex(x);
        let models: Vec<Box<dyn DifferentiableModel>> =
            vec![Box::new(Analytic { value: ex, slope: dex }), Box::new(Analytic { value: dex, slope: ddex })];
        let l1 = classical_loss(&models, &sys1, &g1, &[1.0, 1.0]).unwrap();
        assert!(l1 < 1e-8, "{l1}");

        let sys3 = case3_system(-20.0, -2.0, 0.0, 1.0, vec![2.0, 0.0]).unwrap();
        let g3 = UniformGrid::new(0.0, 1.0, 101).unwrap();
        let u = |i: usize| move |x: f64| if i == 0 { exact_case3(x, -20.0, -2.0, 2.0, 0.0).0 } else { exact_case3(x, -20.0, -2.0, 2.0, 0.0).1 };
        let du = |i: usize| {
            move |x: f64| {
                let (a, b) = (-20.0 * (-20.0 * x).exp(), -2.0 * (-2.0 * x).exp());
                if i == 0 { a + b } else { a - b }
            }
        };
        let models: Vec<Box<dyn DifferentiableModel>> =
            vec![Box::new(Analytic { value: u(0), slope: du(0) }), Box::new(Analytic { value: u(1), slope: du(1) })];
        let l3 = classical_loss(&models, &sys3, &g3, &[1.0, 1.0]).unwrap();
        assert!(l3 < 1e-8, "{l3}");
    }

    impl DifferentiableModel for Box<dyn DifferentiableModel> {
        fn value_and_slope(&self, xs: &[f64]) -> (Vec<f64>, Vec<f64>) {
            (**self).value_and_slope(xs)
        }
    }

    #[test]
    fn zero_networks_case2() {
        let sys = case2_sys();
        let grid = UniformGrid::new(0.0, 0.05, 101).unwrap();
        let l = classical_loss(&[zero()], &sys, &grid, &[1.0]).unwrap();
        let ode: f64 = grid.nodes().iter().map(|x| (-2.0 * x).exp()).sum::<f64>() / 101.0;
        assert!((l - (4.0 + ode)).abs() < 1e-12);
    }

    #[test]
    fn zero_networks_homogeneous_without_penalty() {
        let sys = case3_system(-20.0, -2.0, 0.0, 1.0, vec![2.0, 0.0]).unwrap();
        let grid = UniformGrid::new(0.0, 1.0, 11).unwrap();
        assert_eq!(classical_loss(&[zero(), zero()], &sys, &grid, &[0.0, 0.0]).unwrap(), 0.0);
        assert!(classical_loss(&[zero()], &sys, &grid, &[0.0, 0.0]).is_err());
        assert!(classical_loss(&[zero(), zero()], &sys, &grid, &[0.0]).is_err());
    }

    #[test]
    fn input_derivative_examples() {
        let affine = Mlp::from_parts(
            vec![DMatrix::from_element(1, 1, 3.0)],
            vec![DVector::from_element(1, 7.0)],
            Activation::Tanh,
        )
        .unwrap();
        for x in [-2.0, 0.0, 5.0] {
            assert_eq!(input_derivative(&affine, x).unwrap(), 3.0);
        }
        let z = Mlp::zeros(&[1, 10, 10, 1], Activation::Tanh).unwrap();
        assert_eq!(input_derivative(&z, 0.3).unwrap(), 0.0);

        let net = Mlp::new(&[1, 20, 20, 1], Activation::Tanh, 5).unwrap();
        let h = 1e-6;
        for i in 0..20 {
            let x = -1.0 + 0.1 * i as f64;
            let fd = (net.forward(x + h).unwrap() - net.forward(x - h).unwrap()) / (2.0 * h);
            let an = input_derivative(&net, x).unwrap();
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{x}: {fd} vs {an}");
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let b = build("case3", &BTreeMap::new()).unwrap();
        let sys = b.problem.as_system();
        let grid = UniformGrid::new(0.0, 1.0, 9).unwrap();
        let nodes = grid.nodes();
        let nets = [Mlp::new(&[1, 6, 1], Activation::Tanh, 3).unwrap(), Mlp::new(&[1, 6, 1], Activation::Tanh, 4).unwrap()];
        let w = [0.7, 1.3];
        let caches: Vec<_> = nets.iter().map(|n| n.forward_cached(&nodes, true)).collect();
        let vals: Vec<Vec<f64>> = caches.iter().map(|c| c.outputs().to_vec()).collect();
        let slopes: Vec<Vec<f64>> = caches.iter().map(|c| c.input_derivatives().unwrap().to_vec()).collect();
        let t = evaluate(&sys, &nodes, &vals, &slopes, &w);
        for i in 0..2 {
            let g = nets[i].backward(&caches[i], &t.d_value[i], Some(&t.d_slope[i])).unwrap().flatten();
            for (k, gk) in g.iter().enumerate() {
                let h = 1e-6;
                let shifted = |d: f64| {
                    let mut ns = nets.clone();
                    ns[i].for_each_param_mut(|idx, p| {
                        if idx == k {
                            *p += d
                        }
                    });
                    classical_loss(&ns, &sys, &grid, &w).unwrap()
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                assert!((fd - gk).abs() <= 1e-5 * fd.abs().max(1.0), "net {i} param {k}: {fd} vs {gk}");
            }
        }
    }

    #[test]
    fn short_classical_training_runs() {
        let b = build("case2", &BTreeMap::new()).unwrap();
        let cfg = ClassicalPinnConfig { epochs: 200, collocation_count: 21, ..Default::default() };
        let seg = train_classical(&b.problem, (0.0, 0.05), &[2.0], &cfg).unwrap();
        assert!(seg.report.best_loss < seg.report.initial_loss);
        assert_eq!(seg.report.boundary_state.len(), 1);
        let plan = SegmentPlan::new(vec![0.0, 0.02, 0.05], TrainConfig::default()).unwrap();
        let sol = solve_classical(&b.problem, &plan, &cfg, |_, _| {}).unwrap();
        assert_eq!(sol.table.dim(), 1);
        assert_eq!(sol.table.len(), 41);
        assert!(ClassicalPinnConfig { ic_weights: vec![-1.0], ..cfg }.validate().is_err());
    }
}
