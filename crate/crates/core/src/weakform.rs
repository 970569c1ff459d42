//! Integral (Volterra second-kind) reformulation of initial value problems.
//!
//! For `u^(n) + Σ_j λ_{n-j}(x) u^(j) = f(x)` we train on `v = u^(n)`. Every
//! lower derivative follows from the iterated-integral identity
//!
//! ```text
//! u^(k)(x) = ∫_a^x (x-t)^{n-k-1}/(n-k-1)! v(t) dt + Σ_i μ^(n-i-1) (x-a)^{n-k-i-1}/(n-k-i-1)!
//! ```
//!
//! and substituting into the ODE gives `v(x) + ∫_a^x ψ(x,t) v(t) dt = g(x)`.
//! First-order nonlinear systems use `u_i = μ_i + ∫ v_i` directly and the
//! residual `v_i(x) - q_i(u(x), x)`.

use nalgebra::DMatrix;

use crate::error::{arg, Result};
use crate::problem::{check_domain, FirstOrderSystem, LinearIvp};
use crate::quadrature::{cumulative_trapezoid, QuadratureRule, UniformGrid};

fn inverse_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut f = 1.0;
    out.push(1.0);
    for k in 1..=n {
        f *= k as f64;
        out.push(1.0 / f);
    }
    out
}

/// Taylor part of the reconstruction: `Σ_{i=0}^{n-k-1} μ^(n-i-1) h^{n-k-i-1}/(n-k-i-1)!`.
fn taylor_part(mu: &[f64], inv_fact: &[f64], k: usize, h: f64) -> f64 {
    let n = mu.len();
    (0..n - k)
        .map(|i| {
            let p = n - k - i - 1;
            mu[n - i - 1] * h.powi(p as i32) * inv_fact[p]
        })
        .sum()
}

/// Kernel, forcing and reconstruction data for one scalar linear IVP.
#[derive(Clone, Debug)]
pub struct VolterraForm {
    ivp: LinearIvp,
    inv_fact: Vec<f64>,
}

impl VolterraForm {
    pub fn new(ivp: LinearIvp) -> Self {
        let inv_fact = inverse_factorials(ivp.order());
        Self { ivp, inv_fact }
    }

    pub fn ivp(&self) -> &LinearIvp {
        &self.ivp
    }

    pub fn source_order(&self) -> usize {
        self.ivp.order()
    }

    pub fn domain(&self) -> (f64, f64) {
        self.ivp.domain()
    }

    pub fn init_values(&self) -> &[f64] {
        self.ivp.init_values()
    }

    /// `ψ(x,t) = Σ_{j<n} λ_{n-j}(x) (x-t)^{n-j-1}/(n-j-1)!`
    pub fn kernel(&self, x: f64, t: f64) -> f64 {
        let n = self.source_order();
        let h = x - t;
        (0..n)
            .map(|j| {
                let p = n - j - 1;
                self.ivp.lambda(n - j, x) * h.powi(p as i32) * self.inv_fact[p]
            })
            .sum()
    }

    /// `g(x) = f(x) - Σ_j λ_{n-j}(x) · taylor_j(x)`, where `taylor_j` is the
    /// initial-value polynomial of `u^(j)`.
    pub fn forcing(&self, x: f64) -> f64 {
        let n = self.source_order();
        let (a, _) = self.domain();
        let mu = self.init_values();
        let mut g = self.ivp.forcing(x);
        for j in 0..n {
            g -= self.ivp.lambda(n - j, x) * taylor_part(mu, &self.inv_fact, j, x - a);
        }
        g
    }

    /// `v(x) + ∫_a^x ψ(x,t) v(t) dt - g(x)`.
    pub fn residual(&self, v: impl Fn(f64) -> f64, x: f64, quad: &QuadratureRule) -> Result<f64> {
        let (a, b) = self.domain();
        check_domain(x, a, b)?;
        let integral = quad.integrate(a, x, |t| self.kernel(x, t) * v(t))?;
        Ok(v(x) + integral - self.forcing(x))
    }

    /// `u^(k)(x)` rebuilt from `v = u^(n)`.
    pub fn reconstruct(
        &self,
        v: impl Fn(f64) -> f64,
        k: usize,
        x: f64,
        quad: &QuadratureRule,
    ) -> Result<f64> {
        let n = self.source_order();
        if k >= n {
            return Err(arg(format!("derivative order {k} must be below the ODE order {n}")));
        }
        let (a, b) = self.domain();
        check_domain(x, a, b)?;
        let p = n - k - 1;
        let w = self.inv_fact[p];
        let integral = quad.integrate(a, x, |t| (x - t).powi(p as i32) * w * v(t))?;
        Ok(integral + taylor_part(self.init_values(), &self.inv_fact, k, x - a))
    }

    /// Lower-triangular matrix `K` with `(K v)_j ≈ ∫_a^{x_j} ψ(x_j,t) v(t) dt`
    /// using trapezoid weights over the prefix `x_0..=x_j`.
    pub fn kernel_matrix(&self, grid: &UniformGrid) -> DMatrix<f64> {
        let xs = grid.nodes();
        let dx = grid.spacing();
        prefix_matrix(&xs, dx, |x, t| self.kernel(x, t))
    }

    pub fn forcing_on(&self, grid: &UniformGrid) -> Vec<f64> {
        grid.nodes().into_iter().map(|x| self.forcing(x)).collect()
    }

    /// `u^(k)` at every grid node from samples of `v` on the same grid.
    pub fn reconstruct_on(&self, v: &[f64], k: usize, grid: &UniformGrid) -> Result<Vec<f64>> {
        let n = self.source_order();
        if k >= n {
            return Err(arg(format!("derivative order {k} must be below the ODE order {n}")));
        }
        if v.len() != grid.count() {
            return Err(arg("samples of v do not match the grid"));
        }
        let p = n - k - 1;
        let w = self.inv_fact[p];
        let xs = grid.nodes();
        let a = grid.start();
        let integrals = if p == 0 {
            cumulative_trapezoid(v, grid.spacing())?
        } else {
            let m = prefix_matrix(&xs, grid.spacing(), |x, t| (x - t).powi(p as i32) * w);
            (m * nalgebra::DVector::from_column_slice(v)).as_slice().to_vec()
        };
        Ok(xs
            .iter()
            .zip(integrals)
            .map(|(&x, s)| s + taylor_part(self.init_values(), &self.inv_fact, k, x - a))
            .collect())
    }
}

/// `M_jl = w^{(j)}_l · f(x_j, x_l)`, trapezoid weights on `x_0..=x_j`.
fn prefix_matrix(xs: &[f64], dx: f64, f: impl Fn(f64, f64) -> f64) -> DMatrix<f64> {
    let n = xs.len();
    let mut m = DMatrix::zeros(n, n);
    for j in 1..n {
        for l in 0..=j {
            let w = if l == 0 || l == j { 0.5 * dx } else { dx };
            m[(j, l)] = w * f(xs[j], xs[l]);
        }
    }
    m
}

/// Transform an IVP into its integral form.
pub fn build_volterra(ivp: &LinearIvp) -> VolterraForm {
    VolterraForm::new(ivp.clone())
}

/// First-order substitution `u_i = μ_i + ∫_a^x v_i` for a system.
#[derive(Clone, Debug)]
pub struct SystemIntegralForm {
    system: FirstOrderSystem,
}

impl SystemIntegralForm {
    pub fn new(system: FirstOrderSystem) -> Self {
        Self { system }
    }

    pub fn system(&self) -> &FirstOrderSystem {
        &self.system
    }

    pub fn lower_limit(&self) -> f64 {
        self.system.domain().0
    }

    pub fn init_values(&self) -> &[f64] {
        self.system.init_values()
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    /// `u(x)` for every component.
    pub fn reconstruct<F: Fn(f64) -> f64>(
        &self,
        v: &[F],
        x: f64,
        quad: &QuadratureRule,
    ) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(arg(format!("expected {} functions, got {}", self.dim(), v.len())));
        }
        let (a, b) = self.system.domain();
        check_domain(x, a, b)?;
        v.iter()
            .zip(self.init_values())
            .map(|(vi, mu)| Ok(mu + quad.integrate(a, x, vi)?))
            .collect()
    }

    /// `R_i(x) = v_i(x) - q_i(u(x), x)`.
    pub fn residual<F: Fn(f64) -> f64>(
        &self,
        v: &[F],
        x: f64,
        quad: &QuadratureRule,
    ) -> Result<Vec<f64>> {
        let u = self.reconstruct(v, x, quad)?;
        let q = self.system.eval_rhs(&u, x)?;
        Ok(v.iter().zip(q).map(|(vi, qi)| vi(x) - qi).collect())
    }

    /// States `u(x_j)` (one row per node) from per-component samples of `v`.
    pub fn states_on(&self, v: &[Vec<f64>], grid: &UniformGrid) -> Result<Vec<Vec<f64>>> {
        if v.len() != self.dim() {
            return Err(arg(format!("expected {} components, got {}", self.dim(), v.len())));
        }
        let cols = v
            .iter()
            .map(|vi| {
                if vi.len() != grid.count() {
                    return Err(arg("samples of v do not match the grid"));
                }
                cumulative_trapezoid(vi, grid.spacing())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((0..grid.count())
            .map(|j| {
                cols.iter()
                    .zip(self.init_values())
                    .map(|(c, mu)| mu + c[j])
                    .collect()
            })
            .collect())
    }
}

/// Pointwise system residual; see [`SystemIntegralForm::residual`].
pub fn system_residual<F: Fn(f64) -> f64>(
    sif: &SystemIntegralForm,
    v: &[F],
    x: f64,
    quad: &QuadratureRule,
) -> Result<Vec<f64>> {
    sif.residual(v, x, quad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::ScalarFn;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const C: f64 = -1.0;
    const D: f64 = 10.0;
    const LAM: f64 = -50.0;

    fn case1(mu0: f64, mu1: f64) -> LinearIvp {
        LinearIvp::new(
            vec![ScalarFn::Constant(-2.0 * C), ScalarFn::Constant(C * C + D * D)],
            ScalarFn::Constant(0.0),
            0.0,
            0.4,
            vec![mu0, mu1],
        )
        .unwrap()
    }

    fn case2() -> LinearIvp {
        LinearIvp::new(
            vec![ScalarFn::Constant(-LAM)],
            ScalarFn::Exponential { amplitude: 1.0, rate: -1.0 },
            0.0,
            0.05,
            vec![2.0],
        )
        .unwrap()
    }

    // u = e^{cx}(A sin dx + B cos dx) and its derivatives, A = (μ1 - cμ0)/d, B = μ0.
    fn case1_derivs(x: f64) -> [f64; 4] {
        let (a, b) = ((10.0 - C) / D, 1.0);
        let e = (C * x).exp();
        let (s, co) = (D * x).sin_cos();
        let (a1, b1) = (C * a - D * b, C * b + D * a);
        let (a2, b2) = (C * a1 - D * b1, C * b1 + D * a1);
        let (a3, b3) = (C * a2 - D * b2, C * b2 + D * a2);
        [
            e * (a * s + b * co),
            e * (a1 * s + b1 * co),
            e * (a2 * s + b2 * co),
            e * (a3 * s + b3 * co),
        ]
    }

    fn case2_u(x: f64) -> f64 {
        (2.0 + 1.0 / (1.0 + LAM)) * (LAM * x).exp() - (-x).exp() / (1.0 + LAM)
    }

    fn case2_du(x: f64) -> f64 {
        LAM * (2.0 + 1.0 / (1.0 + LAM)) * (LAM * x).exp() + (-x).exp() / (1.0 + LAM)
    }

    fn case2_ddu(x: f64) -> f64 {
        LAM * LAM * (2.0 + 1.0 / (1.0 + LAM)) * (LAM * x).exp() - (-x).exp() / (1.0 + LAM)
    }

    #[test]
    fn kernel_identity_against_hand_forms() {
        let (mu0, mu1) = (1.0, 10.0);
        let f1 = build_volterra(&case1(mu0, mu1));
        let f2 = build_volterra(&case2());
        let k = C * C + D * D;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x: f64 = rng.random_range(0.0..0.4);
            let t: f64 = rng.random_range(0.0..=x);
            assert!((f1.kernel(x, t) - (k * (x - t) - 2.0 * C)).abs() < 1e-12);
            let g1 = -mu1 * (k * x - 2.0 * C) - mu0 * k;
            assert!((f1.forcing(x) - g1).abs() < 1e-12 * g1.abs().max(1.0));
            let x2 = x / 8.0;
            let t2 = t / 8.0;
            assert!((f2.kernel(x2, t2) - (-LAM)).abs() < 1e-12);
            assert!((f2.forcing(x2) - ((-x2).exp() + LAM * 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_equation() {
        let ivp = LinearIvp::new(
            vec![ScalarFn::Constant(0.0)],
            ScalarFn::Constant(0.0),
            0.0,
            1.0,
            vec![3.7],
        )
        .unwrap();
        let f = build_volterra(&ivp);
        for x in [0.0, 0.3, 1.0] {
            assert_eq!(f.kernel(x, 0.5 * x), 0.0);
            assert_eq!(f.forcing(x), 0.0);
        }
    }

    #[test]
    fn residual_at_lower_limit_is_v_minus_g() {
        let f = build_volterra(&case1(1.0, 10.0));
        let q = QuadratureRule::trapezoid(11).unwrap();
        let r = f.residual(|t| 3.0 + t, 0.0, &q).unwrap();
        assert_eq!(r, 3.0 - f.forcing(0.0));
    }

    #[test]
    fn exact_derivative_nulls_residual() {
        // With the exact v the residual is pure trapezoid error, whose leading
        // Euler-Maclaurin term is h^2/12 (F'(x) - F'(a)) for F(t) = ψ(x,t) v(t).
        let f2 = build_volterra(&case2());
        let q = QuadratureRule::trapezoid(101).unwrap();
        let (x, h) = (0.02, 0.02 / 100.0);
        let predicted = h * h / 12.0 * (-LAM) * (case2_ddu(x) - case2_ddu(0.0));
        let r = f2.residual(case2_du, x, &q).unwrap();
        assert!((r - predicted).abs() < 1e-2 * predicted.abs(), "{r} vs {predicted}");

        let f1 = build_volterra(&case1(1.0, 10.0));
        let q = QuadratureRule::trapezoid(201).unwrap();
        let (x, h) = (0.05, 0.05 / 200.0);
        let k = C * C + D * D;
        let dpsi_v = |t: f64| {
            let d = case1_derivs(t);
            -k * d[2] + (k * (x - t) - 2.0 * C) * d[3]
        };
        let predicted = h * h / 12.0 * (dpsi_v(x) - dpsi_v(0.0));
        let r = f1.residual(|t| case1_derivs(t)[2], x, &q).unwrap();
        assert!((r - predicted).abs() < 1e-2 * predicted.abs(), "{r} vs {predicted}");
        assert!(r.abs() < 1e-4);
    }

    #[test]
    fn residual_error_is_second_order() {
        let f1 = build_volterra(&case1(1.0, 10.0));
        let err = |n| {
            let q = QuadratureRule::trapezoid(n).unwrap();
            f1.residual(|t| case1_derivs(t)[2], 0.3, &q).unwrap().abs()
        };
        let ratio = err(101) / err(201);
        assert!((ratio - 4.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn reconstruct_examples() {
        let f1 = build_volterra(&case1(1.0, 10.0));
        let q = QuadratureRule::trapezoid(201).unwrap();
        assert!((f1.reconstruct(|_| 0.0, 0, 0.1, &q).unwrap() - 2.0).abs() < 1e-15);
        let u = f1.reconstruct(|t| case1_derivs(t)[2], 0, 0.3, &q).unwrap();
        assert!((u - case1_derivs(0.3)[0]).abs() < 1e-5);
        assert!(f1.reconstruct(|_| 0.0, 2, 0.1, &q).is_err());

        let f2 = build_volterra(&case2());
        let u = f2.reconstruct(case2_du, 0, 0.05, &q).unwrap();
        let expect = (2.0 - 1.0 / 49.0) * (-2.5f64).exp() + (-0.05f64).exp() / 49.0;
        let h = 0.05 / 200.0;
        let predicted = h * h / 12.0 * (case2_ddu(0.05) - case2_ddu(0.0));
        assert!(((u - expect) - predicted).abs() < 1e-2 * predicted.abs());
        assert!((case2_u(0.05) - expect).abs() < 1e-14);
    }

    #[test]
    fn reconstruct_derivative_consistency() {
        // Central difference of u^(0) approximates u^(1), with O(h²) error.
        let f1 = build_volterra(&case1(1.0, 10.0));
        let q = QuadratureRule::trapezoid(4001).unwrap();
        let v = |t: f64| case1_derivs(t)[2];
        let x = 0.2;
        let d1 = f1.reconstruct(v, 1, x, &q).unwrap();
        let err = |h: f64| {
            let fd = (f1.reconstruct(v, 0, x + h, &q).unwrap()
                - f1.reconstruct(v, 0, x - h, &q).unwrap())
                / (2.0 * h);
            (fd - d1).abs()
        };
        let (e1, e2) = (err(0.02), err(0.01));
        assert!(e1 < 0.2 && (e1 / e2 - 4.0).abs() < 0.5, "{e1} {e2}");
    }

    #[test]
    fn grid_forms_match_pointwise() {
        let f1 = build_volterra(&case1(1.0, 10.0));
        let grid = UniformGrid::new(0.0, 0.4, 41).unwrap();
        let xs = grid.nodes();
        let v: Vec<f64> = xs.iter().map(|&t| case1_derivs(t)[2]).collect();
        let k = f1.kernel_matrix(&grid);
        let g = f1.forcing_on(&grid);
        let kv = &k * nalgebra::DVector::from_column_slice(&v);
        let u0 = f1.reconstruct_on(&v, 0, &grid).unwrap();
        let u1 = f1.reconstruct_on(&v, 1, &grid).unwrap();
        for j in [0, 7, 40] {
            let x = xs[j];
            let q = QuadratureRule::trapezoid(j + 1).unwrap_or(QuadratureRule::simpson());
            if j == 0 {
                assert_eq!(kv[0], 0.0);
                continue;
            }
            let r = f1.residual(|t| case1_derivs(t)[2], x, &q).unwrap();
            assert!((v[j] + kv[j] - g[j] - r).abs() < 1e-9);
            let u = f1.reconstruct(|t| case1_derivs(t)[2], 0, x, &q).unwrap();
            assert!((u0[j] - u).abs() < 1e-12);
            let du = f1.reconstruct(|t| case1_derivs(t)[2], 1, x, &q).unwrap();
            assert!((u1[j] - du).abs() < 1e-12);
        }
    }

    fn case3_system() -> FirstOrderSystem {
        let (l1, l2) = (-20.0, -2.0);
        let (p, m) = ((l1 + l2) / 2.0, (l1 - l2) / 2.0);
        FirstOrderSystem::new(
            2,
            move |u: &[f64], _| vec![p * u[0] + m * u[1], m * u[0] + p * u[1]],
            0.0,
            1.0,
            vec![2.0, 0.0],
        )
        .unwrap()
    }

    fn case3_du(x: f64) -> [f64; 2] {
        let a = -20.0 * (-20.0 * x).exp();
        let b = -2.0 * (-2.0 * x).exp();
        [a + b, a - b]
    }

    #[test]
    fn system_residual_examples() {
        let sif = SystemIntegralForm::new(case3_system());
        let q = QuadratureRule::trapezoid(201).unwrap();
        let v = [|t| case3_du(t)[0], |t| case3_du(t)[1]];
        // trapezoid error in u is ~h^2/12 Δv', amplified by the coupling matrix
        for r in system_residual(&sif, &v, 0.1, &q).unwrap() {
            assert!(r.abs() < 2e-4, "{r}");
        }
        let r0 = system_residual(&sif, &v, 0.0, &q).unwrap();
        let du0 = case3_du(0.0);
        assert_eq!(r0, vec![du0[0] - (-22.0), du0[1] - (-18.0)]);
        let one = [|t: f64| t];
        assert!(system_residual(&sif, &one, 0.1, &q).is_err());
    }

    #[test]
    fn system_residual_matches_explicit_case3() {
        let sif = SystemIntegralForm::new(case3_system());
        let q = QuadratureRule::trapezoid(101).unwrap();
        let v1 = |t: f64| (3.0 * t).sin() - 1.0;
        let v2 = |t: f64| t * t + 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x: f64 = rng.random_range(0.0..1.0);
            let i1 = q.integrate(0.0, x, v1).unwrap();
            let i2 = q.integrate(0.0, x, v2).unwrap();
            let (p, m) = (-11.0, -9.0);
            let r1 = v1(x) - p * (i1 + 2.0) - m * (i2 + 0.0);
            let r2 = v2(x) - m * (i1 + 2.0) - p * (i2 + 0.0);
            let r = system_residual(&sif, &[&v1 as &dyn Fn(f64) -> f64, &v2], x, &q).unwrap();
            assert!((r[0] - r1).abs() < 1e-12 && (r[1] - r2).abs() < 1e-12);
        }
    }

    #[test]
    fn rober_zero_v_at_start() {
        let sys = crate::catalog::rober_system(0.04, 3e7, 1e4, 0.0, 1.0, vec![1.0, 0.0, 0.0]).unwrap();
        let sif = SystemIntegralForm::new(sys);
        let q = QuadratureRule::trapezoid(11).unwrap();
        let zero = [|_: f64| 0.0, |_: f64| 0.0, |_: f64| 0.0];
        let r = system_residual(&sif, &zero, 0.0, &q).unwrap();
        assert_eq!(r, vec![0.04, -0.04, 0.0]);
    }

    /// Polynomial helpers for the iterated-integral identity.
    fn poly_eval(c: &[f64], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
    }

    /// Antiderivative vanishing at `a`.
    fn poly_integrate(c: &[f64], a: f64) -> Vec<f64> {
        let mut out = vec![0.0];
        out.extend(c.iter().enumerate().map(|(k, ck)| ck / (k + 1) as f64));
        out[0] = -poly_eval(&out, a);
        out
    }

    fn binom(n: usize, k: usize) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    proptest! {
        #[test]
        fn iterated_integral_identity(
            c in proptest::collection::vec(-2.0f64..2.0, 1..=5),
            m in 1usize..=3,
            a in -1.0f64..1.0,
            len in 0.1f64..1.5,
        ) {
            let x = a + len;
            // m-fold nested integral, exactly.
            let mut nested = c.clone();
            for _ in 0..m {
                nested = poly_integrate(&nested, a);
            }
            let nested_val = poly_eval(&nested, x);
            // Single integral ∫ (x-t)^{m-1}/(m-1)! v(t) dt, exactly, by expanding in t.
            let p = m - 1;
            let inv = inverse_factorials(p)[p];
            let mut integrand = vec![0.0; c.len() + p];
            for r in 0..=p {
                let coef = binom(p, r) * x.powi((p - r) as i32) * (-1f64).powi(r as i32) * inv;
                for (k, ck) in c.iter().enumerate() {
                    integrand[k + r] += coef * ck;
                }
            }
            let single = poly_eval(&poly_integrate(&integrand, a), x);
            prop_assert!((single - nested_val).abs() < 1e-10);

            // Numerical single integral against the nested closed form.
            let q = QuadratureRule::trapezoid(2001).unwrap();
            let num = q.integrate(a, x, |t| (x - t).powi(p as i32) * inv * poly_eval(&c, t)).unwrap();
            prop_assert!((num - nested_val).abs() < 1e-5);
        }
    }
}
