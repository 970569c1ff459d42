//! Named benchmark problems with their default parameters, reference
//! solutions, segment plans and training budgets.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{arg, Error, Result};
use crate::oracles::{exact_case1, exact_case2, exact_case3};
use crate::problem::{FirstOrderSystem, LinearIvp, ScalarFn};

pub type ReferenceFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// Either a scalar nth-order linear IVP or a first-order system.
#[derive(Clone, Debug)]
pub enum OdeProblem {
    Linear(LinearIvp),
    System(FirstOrderSystem),
}

impl OdeProblem {
    pub fn domain(&self) -> (f64, f64) {
        match self {
            OdeProblem::Linear(p) => p.domain(),
            OdeProblem::System(s) => s.domain(),
        }
    }

    /// Initial values: `(u, u', ..)` for linear IVPs, the state vector for systems.
    pub fn init_values(&self) -> &[f64] {
        match self {
            OdeProblem::Linear(p) => p.init_values(),
            OdeProblem::System(s) => s.init_values(),
        }
    }

    /// Number of trained functions (one network each).
    pub fn species(&self) -> usize {
        match self {
            OdeProblem::Linear(_) => 1,
            OdeProblem::System(s) => s.dim(),
        }
    }

    pub fn restricted(&self, a: f64, b: f64, init_values: Vec<f64>) -> Result<Self> {
        Ok(match self {
            OdeProblem::Linear(p) => OdeProblem::Linear(p.restricted(a, b, init_values)?),
            OdeProblem::System(s) => OdeProblem::System(s.restricted(a, b, init_values)?),
        })
    }

    /// Equivalent first-order system (the companion form for linear IVPs).
    pub fn as_system(&self) -> FirstOrderSystem {
        match self {
            OdeProblem::Linear(p) => p.to_first_order_system(),
            OdeProblem::System(s) => s.clone(),
        }
    }
}

/// A catalog entry ready to solve.
#[derive(Clone)]
pub struct Benchmark {
    pub name: String,
    pub problem: OdeProblem,
    /// Closed-form solution, one value per reported species.
    pub reference: Option<ReferenceFn>,
    pub default_boundaries: Vec<f64>,
    pub default_epochs: usize,
    pub params: BTreeMap<String, f64>,
}

impl std::fmt::Debug for Benchmark {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Benchmark")
            .field("name", &self.name)
            .field("problem", &self.problem)
            .field("has_reference", &self.reference.is_some())
            .field("params", &self.params)
            .finish()
    }
}

pub const PROBLEM_NAMES: [&str; 4] = ["case1", "case2", "case3", "rober"];

pub fn describe(name: &str) -> Option<&'static str> {
    Some(match name {
        "case1" => "mild 2nd-order ODE u'' - 2c u' + (c^2+d^2) u = 0 on [0, 0.4]",
        "case2" => "stiff scalar ODE u' - lambda u = exp(-x) on [0, 0.05]",
        "case3" => "stiff 2x2 linear system with eigenvalues lambda1, lambda2 on [0, 1]",
        "rober" => "Robertson kinetics on [1e-5, 1e-1]",
        _ => return None,
    })
}

fn defaults(name: &str) -> Option<Vec<(&'static str, f64)>> {
    Some(match name {
        "case1" => vec![("c", -1.0), ("d", 10.0), ("mu0", 1.0), ("mu1", 10.0), ("start", 0.0), ("end", 0.4)],
        "case2" => vec![("lambda", -50.0), ("mu0", 2.0), ("start", 0.0), ("end", 0.05)],
        "case3" => vec![
            ("lambda1", -20.0),
            ("lambda2", -2.0),
            ("mu1", 2.0),
            ("mu2", 0.0),
            ("start", 0.0),
            ("end", 1.0),
        ],
        "rober" => vec![
            ("k1", 0.04),
            ("k2", 3e7),
            ("k3", 1e4),
            ("u1", 1.0),
            ("u2", 0.0),
            ("u3", 0.0),
            ("start", 1e-5),
            ("end", 1e-1),
        ],
        _ => return None,
    })
}

/// Build a named benchmark, overriding any of its default parameters.
pub fn build(name: &str, overrides: &BTreeMap<String, f64>) -> Result<Benchmark> {
    let defaults = defaults(name).ok_or_else(|| arg(format!("unknown problem '{name}'")))?;
    let mut p: BTreeMap<String, f64> = defaults.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    for (k, v) in overrides {
        match p.get_mut(k) {
            Some(slot) => *slot = *v,
            None => {
                return Err(Error::Config(format!("problem '{name}' has no parameter '{k}'")));
            }
        }
    }
    let g = |k: &str| p[k];
    let (a, b) = (g("start"), g("end"));
    let bench = match name {
        "case1" => {
            let (c, d, mu0, mu1) = (g("c"), g("d"), g("mu0"), g("mu1"));
            if d == 0.0 {
                return Err(Error::Config("case1 needs d != 0".into()));
            }
            let ivp = LinearIvp::new(
                vec![ScalarFn::Constant(-2.0 * c), ScalarFn::Constant(c * c + d * d)],
                ScalarFn::Constant(0.0),
                a,
                b,
                vec![mu0, mu1],
            )?;
            // The closed form is posed at x = 0; shift when the domain starts elsewhere.
            let reference: ReferenceFn = Arc::new(move |x| {
                vec![exact_case1(x - a, c, d, mu0, mu1).unwrap_or(f64::NAN)]
            });
            let mid = a + 0.25 * (b - a);
            Benchmark {
                name: name.into(),
                problem: OdeProblem::Linear(ivp),
                reference: Some(reference),
                default_boundaries: vec![a, mid, b],
                default_epochs: 20_000,
                params: p,
            }
        }
        "case2" => {
            let (lambda, mu0) = (g("lambda"), g("mu0"));
            if lambda == -1.0 {
                return Err(Error::Config("case2 needs lambda != -1".into()));
            }
            let ivp = LinearIvp::new(
                vec![ScalarFn::Constant(-lambda)],
                ScalarFn::Exponential { amplitude: 1.0, rate: -1.0 },
                a,
                b,
                vec![mu0],
            )?;
            // For a != 0 the forcing e^{-x} carries a factor e^{-a} relative to
            // the closed form posed at zero.
            let reference: ReferenceFn = Arc::new(move |x| {
                let r = 1.0 / (1.0 + lambda);
                let shift = (-a).exp();
                vec![(mu0 + r * shift) * (lambda * (x - a)).exp() - (-x).exp() * r]
            });
            Benchmark {
                name: name.into(),
                problem: OdeProblem::Linear(ivp),
                reference: Some(if a == 0.0 {
                    Arc::new(move |x| vec![exact_case2(x, lambda, mu0).unwrap_or(f64::NAN)])
                } else {
                    reference
                }),
                default_boundaries: vec![a, b],
                default_epochs: 20_000,
                params: p,
            }
        }
        "case3" => {
            let (l1, l2, mu1, mu2) = (g("lambda1"), g("lambda2"), g("mu1"), g("mu2"));
            let sys = case3_system(l1, l2, a, b, vec![mu1, mu2])?;
            let reference: ReferenceFn = Arc::new(move |x| {
                let (u1, u2) = exact_case3(x - a, l1, l2, mu1, mu2);
                vec![u1, u2]
            });
            Benchmark {
                name: name.into(),
                problem: OdeProblem::System(sys),
                reference: Some(reference),
                default_boundaries: (0..=5).map(|i| a + (b - a) * i as f64 / 5.0).collect(),
                default_epochs: 20_000,
                params: p,
            }
        }
        "rober" => {
            let sys = rober_system(g("k1"), g("k2"), g("k3"), a, b, vec![g("u1"), g("u2"), g("u3")])?;
            Benchmark {
                name: name.into(),
                problem: OdeProblem::System(sys),
                reference: None,
                default_boundaries: log_boundaries(a, b, 250)?,
                default_epochs: 5_000,
                params: p,
            }
        }
        _ => unreachable!(),
    };
    Ok(bench)
}

pub fn case3_system(l1: f64, l2: f64, a: f64, b: f64, mu: Vec<f64>) -> Result<FirstOrderSystem> {
    let (p, m) = ((l1 + l2) / 2.0, (l1 - l2) / 2.0);
    FirstOrderSystem::new(2, move |u: &[f64], _| vec![p * u[0] + m * u[1], m * u[0] + p * u[1]], a, b, mu)?
        .with_jacobian(move |_, _| DMatrix::from_row_slice(2, 2, &[p, m, m, p]))
}

/// Robertson kinetics with its analytic Jacobian.
pub fn rober_system(k1: f64, k2: f64, k3: f64, a: f64, b: f64, u0: Vec<f64>) -> Result<FirstOrderSystem> {
    FirstOrderSystem::new(
        3,
        move |u: &[f64], _| {
            let r1 = k1 * u[0];
            let r2 = k2 * u[1] * u[1];
            let r3 = k3 * u[1] * u[2];
            vec![-r1 + r3, r1 - r2 - r3, r2]
        },
        a,
        b,
        u0,
    )?
    .with_jacobian(move |u, _| {
        DMatrix::from_row_slice(
            3,
            3,
            &[
                -k1,
                k3 * u[2],
                k3 * u[1],
                k1,
                -2.0 * k2 * u[1] - k3 * u[2],
                -k3 * u[1],
                0.0,
                2.0 * k2 * u[1],
                0.0,
            ],
        )
    })
}

/// `count + 1` boundaries, geometrically spaced over `[a, b]` (needs `a > 0`).
pub fn log_boundaries(a: f64, b: f64, count: usize) -> Result<Vec<f64>> {
    if !(a > 0.0 && b > a) || count == 0 {
        return Err(arg(format!("log spacing needs 0 < a < b and at least one segment, got [{a}, {b}] x {count}")));
    }
    let (la, lb) = (a.ln(), b.ln());
    let mut out: Vec<f64> =
        (0..=count).map(|i| (la + (lb - la) * i as f64 / count as f64).exp()).collect();
    out[0] = a;
    out[count] = b;
    Ok(out)
}

/// `count + 1` equally spaced boundaries over `[a, b]`.
pub fn linear_boundaries(a: f64, b: f64, count: usize) -> Result<Vec<f64>> {
    if !(b > a) || count == 0 {
        return Err(arg(format!("linear spacing needs a < b and at least one segment, got [{a}, {b}] x {count}")));
    }
    let mut out: Vec<f64> = (0..=count).map(|i| a + (b - a) * i as f64 / count as f64).collect();
    out[count] = b;
    Ok(out)
}
