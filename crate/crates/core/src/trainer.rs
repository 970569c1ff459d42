//! Integral-residual loss, the per-segment training loop and sequential
//! time marching across segments.
//!
//! One network per state variable models `v = u^(n)` (scalar IVPs) or
//! `v_i = u_i'` (systems). The loss is `Σ_i mean_j R_i(x_j)^2` over a uniform
//! collocation grid, with every integral taken as a cumulative trapezoid
//! prefix so the whole residual is a linear map of the sampled `v` plus the
//! right-hand side nonlinearity.

use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::catalog::{linear_boundaries, log_boundaries, OdeProblem};
use crate::error::{arg, Error, Result};
use crate::nn::{adam_step, Activation, AdamConfig, AdamState, Affine, Mlp, ScalarModel};
use crate::oracles::{backward_euler_step, BdfConfig};
use crate::problem::StateTable;
use crate::quadrature::{cumulative_trapezoid_adjoint, QuadratureRule, UniformGrid};
use crate::weakform::{SystemIntegralForm, VolterraForm};

/// Quadrature used to carry the end-of-segment state into the next segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransferRule {
    Trapezoid,
    Simpson,
    /// Simpson when the segment is shorter than ten grid spacings.
    Auto,
}

impl TransferRule {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "trapezoid" => Ok(TransferRule::Trapezoid),
            "simpson" => Ok(TransferRule::Simpson),
            "auto" => Ok(TransferRule::Auto),
            other => Err(Error::Config(format!("unknown quadrature rule '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TransferRule::Trapezoid => "trapezoid",
            TransferRule::Simpson => "simpson",
            TransferRule::Auto => "auto",
        }
    }

    pub fn resolve(self, collocation_count: usize) -> Result<QuadratureRule> {
        match self {
            TransferRule::Trapezoid => QuadratureRule::trapezoid(collocation_count),
            TransferRule::Simpson => Ok(QuadratureRule::simpson()),
            TransferRule::Auto if collocation_count < 11 => Ok(QuadratureRule::simpson()),
            TransferRule::Auto => QuadratureRule::trapezoid(collocation_count),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub collocation_count: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Stop as soon as the loss drops below this value.
    pub loss_tolerance: Option<f64>,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Feed the network `2(x-s)/(e-s) - 1` instead of raw `x`.
    pub normalize_input: bool,
    /// Set each network's output affine map from the right-hand side at the
    /// segment ends, so the trainable part works on an O(1) scale.
    pub output_scaling: bool,
    /// Let the optimizer weight residual `i` by `1/scale_i^2` (the output
    /// scale), so species of very different magnitude train alike. The
    /// reported loss is always the unweighted sum.
    pub balance_species: bool,
    pub transfer: TransferRule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            collocation_count: 101,
            epochs: 20_000,
            adam: AdamConfig::default(),
            loss_tolerance: Some(1e-10),
            seed: 0,
            hidden: vec![50; 4],
            activation: Activation::Relu,
            normalize_input: true,
            output_scaling: true,
            balance_species: true,
            transfer: TransferRule::Auto,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.collocation_count < 2 {
            return Err(Error::Config(format!(
                "collocation_count must be >= 2, got {}",
                self.collocation_count
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if let Some(t) = self.loss_tolerance {
            if !(t >= 0.0) {
                return Err(Error::Config(format!("loss tolerance must be >= 0, got {t}")));
            }
        }
        self.adam.validate()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![1];
        sizes.extend(&self.hidden);
        sizes.push(1);
        sizes
    }
}

/// Segment boundaries plus the training settings shared by every segment.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentPlan {
    boundaries: Vec<f64>,
    pub config: TrainConfig,
}

impl SegmentPlan {
    pub fn new(boundaries: Vec<f64>, config: TrainConfig) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(Error::Config("a plan needs at least two boundaries".into()));
        }
        if boundaries.iter().any(|b| !b.is_finite()) || boundaries.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config(format!(
                "segment boundaries must be finite and strictly increasing: {boundaries:?}"
            )));
        }
        config.validate()?;
        Ok(Self { boundaries, config })
    }

    pub fn uniform(a: f64, b: f64, segments: usize, config: TrainConfig) -> Result<Self> {
        Self::new(linear_boundaries(a, b, segments)?, config)
    }

    pub fn log(a: f64, b: f64, segments: usize, config: TrainConfig) -> Result<Self> {
        Self::new(log_boundaries(a, b, segments)?, config)
    }

    /// The first `count` segments of this plan.
    pub fn take(&self, count: usize) -> Result<Self> {
        if count == 0 || count > self.segment_count() {
            return Err(Error::Config(format!(
                "cannot take {count} of {} segments",
                self.segment_count()
            )));
        }
        Self::new(self.boundaries[..=count].to_vec(), self.config.clone())
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn segment_count(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn segments(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.boundaries.windows(2).map(|w| (w[0], w[1]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub segment: (f64, f64),
    /// Loss at every executed epoch, before that epoch's update.
    pub history: Vec<f64>,
    /// `history` divided by the initial loss.
    pub normalized: Vec<f64>,
    pub initial_loss: f64,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub final_loss: f64,
    pub stopped_early: bool,
    pub wall_time: Duration,
    /// State handed to the next segment.
    pub boundary_state: Vec<f64>,
}

impl TrainReport {
    pub fn best_normalized(&self) -> f64 {
        normalize(self.best_loss, self.initial_loss)
    }
}

fn normalize(loss: f64, initial: f64) -> f64 {
    if initial > 0.0 {
        loss / initial
    } else {
        0.0
    }
}

/// Integral form of a problem on one segment.
#[derive(Clone, Debug)]
pub enum IntegralForm {
    Volterra(VolterraForm),
    System(SystemIntegralForm),
}

impl IntegralForm {
    pub fn for_problem(problem: &OdeProblem) -> Self {
        match problem {
            OdeProblem::Linear(ivp) => IntegralForm::Volterra(VolterraForm::new(ivp.clone())),
            OdeProblem::System(sys) => IntegralForm::System(SystemIntegralForm::new(sys.clone())),
        }
    }

    pub fn species(&self) -> usize {
        match self {
            IntegralForm::Volterra(_) => 1,
            IntegralForm::System(s) => s.dim(),
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        match self {
            IntegralForm::Volterra(f) => f.domain(),
            IntegralForm::System(s) => s.system().domain(),
        }
    }
}

/// Residual operator discretised on a collocation grid.
struct GridOperator<'a> {
    form: &'a IntegralForm,
    grid: UniformGrid,
    nodes: Vec<f64>,
    volterra: Option<(DMatrix<f64>, DVector<f64>)>,
}

impl<'a> GridOperator<'a> {
    fn new(form: &'a IntegralForm, grid: &UniformGrid) -> Result<Self> {
        let (a, b) = form.domain();
        let slack = 1e-12 * a.abs().max(b.abs()).max(1.0);
        if (grid.start() - a).abs() > slack || grid.end() > b + slack {
            return Err(arg(format!(
                "grid [{}, {}] must start at the lower limit of [{a}, {b}] and stay inside it",
                grid.start(),
                grid.end()
            )));
        }
        let volterra = match form {
            IntegralForm::Volterra(f) => {
                Some((f.kernel_matrix(grid), DVector::from_vec(f.forcing_on(grid))))
            }
            IntegralForm::System(_) => None,
        };
        Ok(Self { form, grid: grid.clone(), nodes: grid.nodes(), volterra })
    }

    fn check(&self, v: &[Vec<f64>]) -> Result<()> {
        if v.len() != self.form.species() {
            return Err(arg(format!(
                "expected {} networks, got {}",
                self.form.species(),
                v.len()
            )));
        }
        if v.iter().any(|vi| vi.len() != self.nodes.len()) {
            return Err(arg("network samples do not match the grid"));
        }
        Ok(())
    }

    /// States `u(x_j)` for a system, one row per node.
    fn states(&self, sif: &SystemIntegralForm, v: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        sif.states_on(v, &self.grid)
    }

    fn residuals(&self, v: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check(v)?;
        match self.form {
            IntegralForm::Volterra(_) => {
                let (k, g) = self.volterra.as_ref().expect("built with the form");
                let vv = DVector::from_column_slice(&v[0]);
                let r = &vv + k * &vv - g;
                Ok(vec![r.as_slice().to_vec()])
            }
            IntegralForm::System(sif) => {
                let states = self.states(sif, v)?;
                let sys = sif.system();
                let mut out = vec![vec![0.0; self.nodes.len()]; v.len()];
                for (j, (u, &x)) in states.iter().zip(&self.nodes).enumerate() {
                    let q = sys.rhs_unchecked(u, x);
                    for i in 0..v.len() {
                        out[i][j] = v[i][j] - q[i];
                    }
                }
                Ok(out)
            }
        }
    }

    /// Unweighted loss, weighted loss and the weighted loss's gradient with
    /// respect to `v` at every node.
    fn loss_and_grad(&self, v: &[Vec<f64>], weights: Option<&[f64]>) -> Result<(f64, f64, Vec<Vec<f64>>)> {
        let r = self.residuals(v)?;
        let n = self.nodes.len() as f64;
        let weight = |i: usize| weights.map_or(1.0, |w| w.get(i).copied().unwrap_or(0.0));
        let (mut raw, mut weighted) = (0.0, 0.0);
        let mut rbar = vec![vec![0.0; self.nodes.len()]; r.len()];
        for (i, ri) in r.iter().enumerate() {
            let term = ri.iter().map(|x| x * x).sum::<f64>() / n;
            raw += term;
            let w = weight(i);
            if w == 0.0 {
                continue;
            }
            weighted += w * term;
            for (dst, x) in rbar[i].iter_mut().zip(ri) {
                *dst = 2.0 * w * x / n;
            }
        }
        let grad = match self.form {
            IntegralForm::Volterra(_) => {
                let (k, _) = self.volterra.as_ref().expect("built with the form");
                let rb = DVector::from_column_slice(&rbar[0]);
                let g = &rb + k.tr_mul(&rb);
                vec![g.as_slice().to_vec()]
            }
            IntegralForm::System(sif) => {
                let states = self.states(sif, v)?;
                let sys = sif.system();
                let dim = v.len();
                // w_k(x_j) = Σ_i J_ik(u_j, x_j) rbar_i(x_j) is -∂L/∂u_k at node j
                let mut w = vec![vec![0.0; self.nodes.len()]; dim];
                for (j, (u, &x)) in states.iter().zip(&self.nodes).enumerate() {
                    let jac = sys.jacobian(u, x);
                    for k in 0..dim {
                        w[k][j] = (0..dim).map(|i| jac[(i, k)] * rbar[i][j]).sum();
                    }
                }
                let dx = self.grid.spacing();
                rbar.iter()
                    .zip(&w)
                    .map(|(rk, wk)| {
                        let adj = cumulative_trapezoid_adjoint(wk, dx);
                        rk.iter().zip(adj).map(|(a, b)| a - b).collect()
                    })
                    .collect()
            }
        };
        Ok((raw, weighted, grad))
    }
}

fn sample<M: ScalarModel>(models: &[M], xs: &[f64]) -> Vec<Vec<f64>> {
    models.iter().map(|m| m.eval_batch(xs)).collect()
}

/// Residuals `R_i(x_j)` on the grid, one row per state variable.
pub fn residuals<M: ScalarModel>(models: &[M], form: &IntegralForm, grid: &UniformGrid) -> Result<Vec<Vec<f64>>> {
    let op = GridOperator::new(form, grid)?;
    op.check_models(models.len())?;
    op.residuals(&sample(models, &op.nodes))
}

/// `Σ_i (1/n) Σ_j R_i(x_j)^2`.
pub fn loss<M: ScalarModel>(models: &[M], form: &IntegralForm, grid: &UniformGrid) -> Result<f64> {
    Ok(loss_and_sample_gradient(models, form, grid, None)?.0)
}

/// Loss and its gradient with respect to the sampled network outputs. When
/// `terms` is given only the selected residual components enter the sum.
pub fn loss_and_sample_gradient<M: ScalarModel>(
    models: &[M],
    form: &IntegralForm,
    grid: &UniformGrid,
    terms: Option<&[bool]>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let op = GridOperator::new(form, grid)?;
    op.check_models(models.len())?;
    let weights = terms.map(|t| t.iter().map(|&on| if on { 1.0 } else { 0.0 }).collect::<Vec<_>>());
    let (_, weighted, grad) = op.loss_and_grad(&sample(models, &op.nodes), weights.as_deref())?;
    Ok((weighted, grad))
}

impl GridOperator<'_> {
    fn check_models(&self, count: usize) -> Result<()> {
        if count != self.form.species() {
            return Err(arg(format!(
                "expected {} networks, got {count}",
                self.form.species()
            )));
        }
        Ok(())
    }
}

/// `(u, u', ..., u^(n-1))` at `at`, rebuilt from a trained `v = u^(n)`.
pub fn higher_order_ic_transfer<M: ScalarModel>(
    model: &M,
    form: &VolterraForm,
    at: f64,
    quad: &QuadratureRule,
) -> Result<Vec<f64>> {
    let v = |x: f64| model.eval_batch(&[x])[0];
    (0..form.source_order()).map(|k| form.reconstruct(v, k, at, quad)).collect()
}

/// Networks trained on one segment together with what is needed to
/// reconstruct the solution there.
#[derive(Clone, Debug)]
pub struct TrainedSegment {
    pub nets: Vec<Mlp>,
    pub report: TrainReport,
    pub form: IntegralForm,
    pub grid: UniformGrid,
}

impl TrainedSegment {
    /// Network outputs on the collocation grid, one row per species.
    pub fn samples(&self) -> Vec<Vec<f64>> {
        sample(&self.nets, &self.grid.nodes())
    }

    /// Reconstructed states on the collocation grid. Scalar problems report
    /// `u` only; `derivs` holds the network outputs.
    pub fn table(&self) -> Result<StateTable> {
        let v = self.samples();
        let nodes = self.grid.nodes();
        let values = match &self.form {
            IntegralForm::Volterra(f) => {
                f.reconstruct_on(&v[0], 0, &self.grid)?.into_iter().map(|u| vec![u]).collect()
            }
            IntegralForm::System(sif) => sif.states_on(&v, &self.grid)?,
        };
        let derivs = (0..nodes.len()).map(|j| v.iter().map(|vi| vi[j]).collect()).collect();
        StateTable::new(nodes, values, Some(derivs))
    }

    /// Full initial-value vector for the successor segment.
    pub fn boundary_state(&self, quad: &QuadratureRule) -> Result<Vec<f64>> {
        let at = self.grid.end();
        match &self.form {
            IntegralForm::Volterra(f) => higher_order_ic_transfer(&self.nets[0], f, at, quad),
            IntegralForm::System(sif) => {
                let fs: Vec<_> = self
                    .nets
                    .iter()
                    .map(|n| move |x: f64| n.eval_batch(&[x])[0])
                    .collect();
                sif.reconstruct(&fs, at, quad)
            }
        }
    }
}

/// Output maps `v_i = offset_i + scale_i * raw_i`: the offset is the exact
/// `v_i` at the segment start and the scale the larger of `|v_i|` there and
/// after one backward Euler step across the segment.
fn output_maps(problem: &OdeProblem, s: f64, e: f64) -> Vec<Affine> {
    let sys = problem.as_system();
    let ics = problem.init_values().to_vec();
    let pick = |q: Vec<f64>| -> Vec<f64> {
        match problem {
            OdeProblem::Linear(_) => vec![*q.last().expect("order >= 1")],
            OdeProblem::System(_) => q,
        }
    };
    let start = pick(sys.rhs_unchecked(&ics, s));
    let end = backward_euler_step(&sys, &ics, s, e - s, &BdfConfig::default())
        .ok()
        .map(|u| pick(sys.rhs_unchecked(&u, e)))
        .filter(|q| q.iter().all(|v| v.is_finite()));
    let mut scales: Vec<f64> = start
        .iter()
        .enumerate()
        .map(|(i, v0)| {
            let ve = end.as_ref().map_or(0.0, |q| q[i].abs());
            v0.abs().max(ve)
        })
        .collect();
    let fallback = scales.iter().copied().fold(0.0, f64::max);
    for sc in &mut scales {
        if !(*sc > 0.0 && sc.is_finite()) {
            *sc = if fallback > 0.0 && fallback.is_finite() { fallback } else { 1.0 };
        }
    }
    start
        .iter()
        .zip(scales)
        .map(|(&offset, scale)| Affine { offset: if offset.is_finite() { offset } else { 0.0 }, scale })
        .collect()
}

fn initial_nets(problem: &OdeProblem, s: f64, e: f64, cfg: &TrainConfig) -> Result<Vec<Mlp>> {
    let base = Mlp::new(&cfg.layer_sizes(), cfg.activation, cfg.seed)?;
    let input = if cfg.normalize_input {
        let w = e - s;
        Affine { offset: -(s + e) / w, scale: 2.0 / w }
    } else {
        Affine::IDENTITY
    };
    let outputs = if cfg.output_scaling {
        output_maps(problem, s, e)
    } else {
        vec![Affine::IDENTITY; problem.species()]
    };
    Ok(outputs
        .into_iter()
        .map(|out| {
            let mut net = base.clone();
            net.set_input_map(input);
            net.set_output_map(out);
            net
        })
        .collect())
}

/// Train one network per state variable on `[s, e]` starting from `ics`.
///
/// Returns the parameters of the lowest-loss epoch; the report's boundary
/// state is computed with the configured transfer rule.
pub fn train_segment(
    problem: &OdeProblem,
    segment: (f64, f64),
    ics: &[f64],
    cfg: &TrainConfig,
) -> Result<TrainedSegment> {
    cfg.validate()?;
    let (s, e) = segment;
    if !(s < e) {
        return Err(arg(format!("segment needs s < e, got [{s}, {e}]")));
    }
    if ics.len() != problem.init_values().len() {
        return Err(arg(format!(
            "expected {} initial values, got {}",
            problem.init_values().len(),
            ics.len()
        )));
    }
    let local = problem.restricted(s, e, ics.to_vec())?;
    let form = IntegralForm::for_problem(&local);
    let grid = UniformGrid::new(s, e, cfg.collocation_count)?;
    let op = GridOperator::new(&form, &grid)?;
    let started = Instant::now();

    let mut nets = initial_nets(&local, s, e, cfg)?;
    let weights: Option<Vec<f64>> = cfg
        .balance_species
        .then(|| nets.iter().map(|n| n.output_map().scale.powi(-2)).collect());
    let mut states = nets
        .iter()
        .map(|n| AdamState::new(n, cfg.adam))
        .collect::<Result<Vec<_>>>()?;
    let mut best = nets.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    let (mut best_loss, mut best_objective, mut best_epoch) = (f64::INFINITY, f64::INFINITY, 0);
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let caches: Vec<_> = nets.iter().map(|n| n.forward_cached(&op.nodes, false)).collect();
        let v: Vec<Vec<f64>> = caches.iter().map(|c| c.outputs().to_vec()).collect();
        let (loss, objective, grad) = op.loss_and_grad(&v, weights.as_deref())?;
        if !loss.is_finite() || !objective.is_finite() || grad.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged { epoch });
        }
        history.push(loss);
        if objective < best_objective {
            best_objective = objective;
            best_loss = loss;
            best_epoch = epoch;
            best.clone_from(&nets);
        }
        if cfg.loss_tolerance.is_some_and(|t| loss < t) {
            stopped_early = true;
            break;
        }
        if epoch + 1 == cfg.epochs {
            break;
        }
        for ((net, cache), (g, st)) in nets.iter_mut().zip(&caches).zip(grad.iter().zip(&mut states)) {
            let pg = net.backward(cache, g, None)?;
            adam_step(net, &pg, st)?;
        }
    }

    let initial_loss = history[0];
    let normalized = history.iter().map(|&l| normalize(l, initial_loss)).collect();
    let final_loss = *history.last().expect("at least one epoch");
    let mut trained = TrainedSegment {
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
            boundary_state: Vec::new(),
        },
        form,
        grid,
    };
    let quad = cfg.transfer.resolve(cfg.collocation_count)?;
    trained.report.boundary_state = trained.boundary_state(&quad)?;
    trained.report.wall_time = started.elapsed();
    Ok(trained)
}

/// Result of a sequential run.
#[derive(Clone, Debug)]
pub struct SequentialSolution {
    pub table: StateTable,
    pub segments: Vec<TrainedSegment>,
    /// Initial values consumed by each segment.
    pub initial_states: Vec<Vec<f64>>,
}

impl SequentialSolution {
    pub fn reports(&self) -> Vec<&TrainReport> {
        self.segments.iter().map(|s| &s.report).collect()
    }
}

/// A segment failed; everything before it is kept.
#[derive(Clone, Debug)]
pub struct SequentialFailure {
    pub segment: usize,
    pub error: Error,
    pub partial: StateTable,
    pub reports: Vec<TrainReport>,
}

impl fmt::Display for SequentialFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "segment {} failed: {}", self.segment, self.error)
    }
}

impl std::error::Error for SequentialFailure {}

/// Train the plan's segments in order, handing each segment's end state to
/// the next one as its initial values.
pub fn solve_sequential(
    problem: &OdeProblem,
    plan: &SegmentPlan,
) -> std::result::Result<SequentialSolution, SequentialFailure> {
    solve_sequential_with(problem, plan, |_, _| {})
}

/// [`solve_sequential`] with a callback after every finished segment.
pub fn solve_sequential_with(
    problem: &OdeProblem,
    plan: &SegmentPlan,
    mut on_segment: impl FnMut(usize, &TrainReport),
) -> std::result::Result<SequentialSolution, SequentialFailure> {
    let fail = |segment, error, partial, reports| SequentialFailure { segment, error, partial, reports };
    let (a, b) = problem.domain();
    let bounds = plan.boundaries();
    let slack = 1e-12 * a.abs().max(b.abs()).max(1.0);
    if (bounds[0] - a).abs() > slack || bounds[bounds.len() - 1] > b + slack {
        let err = Error::Config(format!(
            "plan [{}, {}] must start at {a} and end inside [{a}, {b}]",
            bounds[0],
            bounds[bounds.len() - 1]
        ));
        return Err(fail(0, err, StateTable::empty(), Vec::new()));
    }

    let mut table = StateTable::empty();
    let mut segments: Vec<TrainedSegment> = Vec::with_capacity(plan.segment_count());
    let mut initial_states = Vec::with_capacity(plan.segment_count());
    let mut ics = problem.init_values().to_vec();
    for (idx, seg) in plan.segments().enumerate() {
        let outcome = train_segment(problem, seg, &ics, &plan.config).and_then(|t| {
            let mut part = t.table()?;
            // Finish on the transferred state so the seam is exact.
            let last = part.values.len() - 1;
            part.values[last] = match &t.form {
                IntegralForm::Volterra(_) => vec![t.report.boundary_state[0]],
                IntegralForm::System(_) => t.report.boundary_state.clone(),
            };
            Ok((t, part))
        });
        match outcome {
            Ok((trained, part)) => {
                on_segment(idx, &trained.report);
                table.extend(part);
                initial_states.push(ics);
                ics = trained.report.boundary_state.clone();
                segments.push(trained);
            }
            Err(error) => {
                let reports = segments.iter().map(|s| s.report.clone()).collect();
                return Err(fail(idx, error, table, reports));
            }
        }
    }
    Ok(SequentialSolution { table, segments, initial_states })
}
