//! Reference solutions: closed forms for the linear benchmarks and a
//! fixed-step BDF integrator for everything else.

use nalgebra::{DMatrix, DVector};

use crate::error::{arg, Error, Result};
use crate::problem::{FirstOrderSystem, StateTable};

/// `u'' - 2c u' + (c²+d²) u = 0`, `u(0) = μ0`, `u'(0) = μ1`.
pub fn exact_case1(x: f64, c: f64, d: f64, mu0: f64, mu1: f64) -> Result<f64> {
    if d == 0.0 {
        return Err(arg("case 1 closed form needs d != 0"));
    }
    let (s, co) = (d * x).sin_cos();
    Ok(((mu1 - c * mu0) / d) * (c * x).exp() * s + mu0 * (c * x).exp() * co)
}

/// First derivative of [`exact_case1`].
pub fn exact_case1_derivative(x: f64, c: f64, d: f64, mu0: f64, mu1: f64) -> Result<f64> {
    if d == 0.0 {
        return Err(arg("case 1 closed form needs d != 0"));
    }
    let a = (mu1 - c * mu0) / d;
    let (s, co) = (d * x).sin_cos();
    Ok((c * x).exp() * ((c * a - d * mu0) * s + (c * mu0 + d * a) * co))
}

/// `u' - λu = e^{-x}`, `u(0) = μ0`.
pub fn exact_case2(x: f64, lambda: f64, mu0: f64) -> Result<f64> {
    if lambda == -1.0 {
        return Err(arg("case 2 closed form is resonant at lambda = -1"));
    }
    let r = 1.0 / (1.0 + lambda);
    Ok((mu0 + r) * (lambda * x).exp() - (-x).exp() * r)
}

/// Symmetric 2x2 linear system with eigenvalues λ1, λ2.
pub fn exact_case3(x: f64, lambda1: f64, lambda2: f64, mu1: f64, mu2: f64) -> (f64, f64) {
    let fast = 0.5 * (mu1 + mu2) * (lambda1 * x).exp();
    let slow = 0.5 * (mu1 - mu2) * (lambda2 * x).exp();
    (fast + slow, fast - slow)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BdfOrder {
    One,
    Two,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BdfConfig {
    pub order: BdfOrder,
    pub step_size: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for BdfConfig {
    fn default() -> Self {
        Self { order: BdfOrder::Two, step_size: 1e-5, newton_tol: 1e-12, newton_max_iter: 25 }
    }
}

impl BdfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("BDF step size must be positive, got {}", self.step_size)));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::Config("Newton tolerance must be positive".into()));
        }
        if self.newton_max_iter == 0 {
            return Err(Error::Config("Newton iteration limit must be >= 1".into()));
        }
        Ok(())
    }
}

/// Solve `u - γ q(u, x) = c` by Newton iteration from `guess`.
fn implicit_solve(
    sys: &FirstOrderSystem,
    guess: &[f64],
    x: f64,
    gamma: f64,
    c: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = sys.dim();
    let mut u = DVector::from_column_slice(guess);
    let eye = DMatrix::<f64>::identity(n, n);
    for _ in 0..max_iter {
        let q = sys.rhs_unchecked(u.as_slice(), x);
        let resid = DVector::from_fn(n, |i, _| u[i] - gamma * q[i] - c[i]);
        let jac = &eye - sys.jacobian(u.as_slice(), x) * gamma;
        let delta = jac.lu().solve(&(-resid)).ok_or(Error::StepFailure { x })?;
        u += &delta;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { x });
        }
        if delta.amax() <= tol * (1.0 + u.amax()) {
            return Ok(u.as_slice().to_vec());
        }
    }
    Err(Error::StepFailure { x })
}

/// One backward Euler step of size `h` from `(x, u)`.
pub fn backward_euler_step(
    sys: &FirstOrderSystem,
    u: &[f64],
    x: f64,
    h: f64,
    cfg: &BdfConfig,
) -> Result<Vec<f64>> {
    implicit_solve(sys, u, x + h, h, u, cfg.newton_tol, cfg.newton_max_iter)
}

/// Fixed-step BDF1/BDF2 from the system's initial values at `span.0`.
///
/// The step is shrunk to `(b - a) / ceil((b - a) / h)` so the grid lands on
/// `b`. BDF2 takes one backward Euler step to start.
pub fn bdf_integrate(sys: &FirstOrderSystem, cfg: &BdfConfig, span: (f64, f64)) -> Result<StateTable> {
    cfg.validate()?;
    let (a, b) = span;
    let (da, db) = sys.domain();
    if a != da {
        return Err(arg(format!("integration must start at the initial point {da}, got {a}")));
    }
    if !(b > a) || b > db {
        return Err(arg(format!("span [{a}, {b}] must be non-empty and inside [{da}, {db}]")));
    }
    let steps = ((b - a) / cfg.step_size - 1e-9).ceil().max(1.0) as usize;
    let h = (b - a) / steps as f64;
    let node = |i: usize| if i == steps { b } else { a + i as f64 * h };

    let mut grid = Vec::with_capacity(steps + 1);
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    grid.push(a);
    values.push(sys.init_values().to_vec());

    for i in 1..=steps {
        let x = node(i);
        let prev = &values[i - 1];
        let next = match (cfg.order, i) {
            (BdfOrder::One, _) | (BdfOrder::Two, 1) => {
                implicit_solve(sys, prev, x, h, prev, cfg.newton_tol, cfg.newton_max_iter)?
            }
            (BdfOrder::Two, _) => {
                // u_{n+1} - 4/3 u_n + 1/3 u_{n-1} = 2/3 h q(u_{n+1})
                let older = &values[i - 2];
                let c: Vec<f64> = prev.iter().zip(older).map(|(p, o)| (4.0 * p - o) / 3.0).collect();
                implicit_solve(sys, prev, x, 2.0 * h / 3.0, &c, cfg.newton_tol, cfg.newton_max_iter)?
            }
        };
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { x });
        }
        grid.push(x);
        values.push(next);
    }
    StateTable::new(grid, values, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::rober_system;
    use crate::problem::{LinearIvp, ScalarFn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn decay(lambda: f64, b: f64) -> FirstOrderSystem {
        FirstOrderSystem::new(1, move |u: &[f64], _| vec![lambda * u[0]], 0.0, b, vec![1.0])
            .unwrap()
            .with_jacobian(move |_, _| DMatrix::from_element(1, 1, lambda))
            .unwrap()
    }

    #[test]
    fn case1_values() {
        assert_eq!(exact_case1(0.0, -1.0, 10.0, 1.0, 10.0).unwrap(), 1.0);
        let h = 1e-6;
        let fd = (exact_case1(h, -1.0, 10.0, 1.0, 10.0).unwrap()
            - exact_case1(-h, -1.0, 10.0, 1.0, 10.0).unwrap())
            / (2.0 * h);
        assert!((fd - 10.0).abs() < 1e-6);
        let e = (-0.1f64).exp();
        let want = 1.1 * e * 1f64.sin() + e * 1f64.cos();
        assert!((exact_case1(0.1, -1.0, 10.0, 1.0, 10.0).unwrap() - want).abs() < 1e-15);
        assert!(exact_case1(0.1, -1.0, 0.0, 1.0, 10.0).is_err());
    }

    #[test]
    fn case2_values() {
        assert_eq!(exact_case2(0.0, -50.0, 2.0).unwrap(), 2.0);
        let want = (2.0 - 1.0 / 49.0) * (-2.5f64).exp() + (-0.05f64).exp() / 49.0;
        assert!((exact_case2(0.05, -50.0, 2.0).unwrap() - want).abs() < 1e-15);
        assert!(exact_case2(0.1, -1.0, 2.0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x: f64 = rng.random_range(0.0..0.05);
            let h = 1e-6;
            let du = (exact_case2(x + h, -50.0, 2.0).unwrap() - exact_case2(x - h, -50.0, 2.0).unwrap()) / (2.0 * h);
            let r = du + 50.0 * exact_case2(x, -50.0, 2.0).unwrap() - (-x).exp();
            assert!(r.abs() < 1e-5, "{r}");
        }
    }

    #[test]
    fn case3_values() {
        assert_eq!(exact_case3(0.0, -20.0, -2.0, 2.0, 0.0), (2.0, 0.0));
        for x in [0.0, 0.1, 0.7] {
            let (u1, u2) = exact_case3(x, -20.0, -2.0, 2.0, 0.0);
            assert!((u1 + u2 - 2.0 * (-20.0 * x).exp()).abs() < 1e-15);
        }
        let (u1, u2) = exact_case3(0.5, -20.0, -2.0, 2.0, 0.0);
        let (f, s) = ((-10f64).exp(), (-1f64).exp());
        assert!((u1 - (f + s)).abs() < 1e-15 && (u2 - (f - s)).abs() < 1e-15);
    }

    #[test]
    fn exact_solutions_null_strong_form() {
        let case1 = LinearIvp::new(
            vec![ScalarFn::Constant(2.0), ScalarFn::Constant(101.0)],
            ScalarFn::Constant(0.0),
            0.0,
            0.4,
            vec![1.0, 10.0],
        )
        .unwrap();
        let u = |x| exact_case1(x, -1.0, 10.0, 1.0, 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-4;
        for _ in 0..50 {
            let x: f64 = rng.random_range(0.01..0.39);
            let du = exact_case1_derivative(x, -1.0, 10.0, 1.0, 10.0).unwrap();
            let ddu = (u(x + h) - 2.0 * u(x) + u(x - h)) / (h * h);
            let r = case1.eval_linear_ode(&[u(x), du, ddu], x).unwrap();
            assert!(r.abs() < 1e-5 * 100.0, "{r}");
            // first derivative by central difference as well
            let fd = (u(x + 1e-6) - u(x - 1e-6)) / 2e-6;
            assert!((fd - du).abs() < 1e-5);
        }
    }

    #[test]
    fn backward_euler_one_step_closed_form() {
        let sys = decay(-1.0, 1.0);
        let cfg = BdfConfig { order: BdfOrder::One, step_size: 0.1, ..Default::default() };
        let t = bdf_integrate(&sys, &cfg, (0.0, 0.1)).unwrap();
        assert_eq!(t.len(), 2);
        assert!((t.values[1][0] - 1.0 / 1.1).abs() < 1e-15);
    }

    fn global_error(order: BdfOrder, h: f64) -> f64 {
        let sys = decay(-1.0, 1.0);
        let cfg = BdfConfig { order, step_size: h, ..Default::default() };
        let t = bdf_integrate(&sys, &cfg, (0.0, 1.0)).unwrap();
        (t.values.last().unwrap()[0] - (-1f64).exp()).abs()
    }

    #[test]
    fn observed_orders() {
        let p1 = (global_error(BdfOrder::One, 0.01) / global_error(BdfOrder::One, 0.005)).log2();
        let p2 = (global_error(BdfOrder::Two, 0.01) / global_error(BdfOrder::Two, 0.005)).log2();
        assert!((p1 - 1.0).abs() < 0.15, "{p1}");
        assert!((p2 - 2.0).abs() < 0.2, "{p2}");
    }

    #[test]
    fn a_stable_on_very_stiff_decay() {
        let sys = decay(-1e6, 1.0);
        for order in [BdfOrder::One, BdfOrder::Two] {
            let cfg = BdfConfig { order, step_size: 0.1, ..Default::default() };
            let t = bdf_integrate(&sys, &cfg, (0.0, 1.0)).unwrap();
            let col = t.column(0);
            assert!(col.iter().all(|v| v.abs() <= 1.0));
            // after the start-up step the magnitude must keep shrinking
            assert!(col.windows(2).all(|w| w[1].abs() <= w[0].abs()));
        }
    }

    #[test]
    fn rober_conserves_mass() {
        let sys = rober_system(0.04, 3e7, 1e4, 0.0, 0.01, vec![1.0, 0.0, 0.0]).unwrap();
        let cfg = BdfConfig { step_size: 1e-5, ..Default::default() };
        let t = bdf_integrate(&sys, &cfg, (0.0, 0.01)).unwrap();
        for row in &t.values {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_span_and_config() {
        let sys = decay(-1.0, 1.0);
        let cfg = BdfConfig::default();
        assert!(bdf_integrate(&sys, &cfg, (0.5, 1.0)).is_err());
        assert!(bdf_integrate(&sys, &cfg, (0.0, 2.0)).is_err());
        let bad = BdfConfig { step_size: 0.0, ..cfg };
        assert!(matches!(bdf_integrate(&sys, &bad, (0.0, 1.0)), Err(Error::Config(_))));
    }

    #[test]
    fn newton_failure_is_reported() {
        // A single Newton iteration cannot settle this oscillatory rhs.
        let sys = FirstOrderSystem::new(1, |u: &[f64], _| vec![(u[0] * 50.0).sin() * 1e6], 0.0, 1.0, vec![0.3])
            .unwrap();
        let cfg = BdfConfig { order: BdfOrder::One, step_size: 0.5, newton_tol: 1e-15, newton_max_iter: 1 };
        assert!(matches!(
            bdf_integrate(&sys, &cfg, (0.0, 1.0)),
            Err(Error::StepFailure { .. })
        ));
    }
}
