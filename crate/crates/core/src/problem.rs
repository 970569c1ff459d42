//! Problem definitions: nth-order linear initial value problems and
//! first-order (possibly nonlinear) systems.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{arg, Error, Result};

/// A scalar function of time, used for coefficients and forcing terms.
#[derive(Clone)]
pub enum ScalarFn {
    Constant(f64),
    /// `amplitude * exp(rate * x)`
    Exponential { amplitude: f64, rate: f64 },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl ScalarFn {
    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        ScalarFn::Custom(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ScalarFn::Constant(c) => *c,
            ScalarFn::Exponential { amplitude, rate } => amplitude * (rate * x).exp(),
            ScalarFn::Custom(f) => f(x),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ScalarFn::Constant(c) if *c == 0.0)
    }
}

impl fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarFn::Constant(c) => write!(f, "Constant({c})"),
            ScalarFn::Exponential { amplitude, rate } => {
                write!(f, "Exponential({amplitude} * exp({rate} x))")
            }
            ScalarFn::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

pub(crate) fn check_interval(a: f64, b: f64) -> Result<()> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(arg(format!("interval [{a}, {b}] is not finite")));
    }
    if a >= b {
        return Err(arg(format!("interval [{a}, {b}] must satisfy a < b")));
    }
    Ok(())
}

/// Membership test with a few ulps of slack at the ends, so grid nodes built
/// as `a + i * dx` are never rejected for rounding.
pub(crate) fn check_domain(x: f64, a: f64, b: f64) -> Result<()> {
    let slack = 1e-12 * (b - a).abs().max(a.abs()).max(b.abs()).max(f64::MIN_POSITIVE);
    if !x.is_finite() || x < a - slack || x > b + slack {
        return Err(Error::Domain { x, a, b });
    }
    Ok(())
}

/// `u^(n) + λ1(x) u^(n-1) + ... + λn(x) u = f(x)` on `[a, b]` with
/// `u^(k)(a) = init_values[k]`.
#[derive(Clone, Debug)]
pub struct LinearIvp {
    coeffs: Vec<ScalarFn>,
    forcing: ScalarFn,
    a: f64,
    b: f64,
    init_values: Vec<f64>,
}

impl LinearIvp {
    /// `coeffs[i]` is λ_{i+1}, i.e. it multiplies `u^(n-1-i)`.
    pub fn new(
        coeffs: Vec<ScalarFn>,
        forcing: ScalarFn,
        a: f64,
        b: f64,
        init_values: Vec<f64>,
    ) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(arg("linear IVP needs order n >= 1"));
        }
        if init_values.len() != coeffs.len() {
            return Err(arg(format!(
                "order {} IVP needs {} initial values, got {}",
                coeffs.len(),
                coeffs.len(),
                init_values.len()
            )));
        }
        check_interval(a, b)?;
        if init_values.iter().any(|v| !v.is_finite()) {
            return Err(arg("initial values must be finite"));
        }
        Ok(Self { coeffs, forcing, a, b, init_values })
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn init_values(&self) -> &[f64] {
        &self.init_values
    }

    /// λ_i(x) for `i` in `1..=n`.
    pub fn lambda(&self, i: usize, x: f64) -> f64 {
        self.coeffs[i - 1].eval(x)
    }

    pub fn forcing(&self, x: f64) -> f64 {
        self.forcing.eval(x)
    }

    pub fn coeffs(&self) -> &[ScalarFn] {
        &self.coeffs
    }

    pub fn forcing_fn(&self) -> &ScalarFn {
        &self.forcing
    }

    /// Same equation posed on a sub-interval with new initial values.
    pub fn restricted(&self, a: f64, b: f64, init_values: Vec<f64>) -> Result<Self> {
        Self::new(self.coeffs.clone(), self.forcing.clone(), a, b, init_values)
    }

    /// Strong-form residual `u^(n) + Σ_j λ_{n-j}(x) u^(j) - f(x)`, with
    /// `u_derivs = [u, u', ..., u^(n)]`.
    pub fn eval_linear_ode(&self, u_derivs: &[f64], x: f64) -> Result<f64> {
        check_domain(x, self.a, self.b)?;
        let n = self.order();
        if u_derivs.len() != n + 1 {
            return Err(arg(format!(
                "expected {} derivative values, got {}",
                n + 1,
                u_derivs.len()
            )));
        }
        let mut r = u_derivs[n] - self.forcing(x);
        for (j, &uj) in u_derivs[..n].iter().enumerate() {
            r += self.lambda(n - j, x) * uj;
        }
        Ok(r)
    }

    /// Companion first-order system with state `(u, u', ..., u^(n-1))`.
    pub fn to_first_order_system(&self) -> FirstOrderSystem {
        let n = self.order();
        let rhs_ivp = self.clone();
        let jac_ivp = self.clone();
        FirstOrderSystem {
            dim: n,
            rhs: Arc::new(move |u: &[f64], x: f64| {
                let mut out = Vec::with_capacity(n);
                out.extend_from_slice(&u[1..]);
                let mut top = rhs_ivp.forcing(x);
                for (j, &uj) in u.iter().enumerate() {
                    top -= rhs_ivp.lambda(n - j, x) * uj;
                }
                out.push(top);
                out
            }),
            jacobian: Some(Arc::new(move |_u: &[f64], x: f64| {
                let mut m = DMatrix::zeros(n, n);
                for k in 0..n - 1 {
                    m[(k, k + 1)] = 1.0;
                }
                for j in 0..n {
                    m[(n - 1, j)] = -jac_ivp.lambda(n - j, x);
                }
                m
            })),
            a: self.a,
            b: self.b,
            init_values: self.init_values.clone(),
        }
    }
}

pub type RhsFn = Arc<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&[f64], f64) -> DMatrix<f64> + Send + Sync>;

/// `u' = q(u, x)` on `[a, b]` with `u(a) = init_values`.
#[derive(Clone)]
pub struct FirstOrderSystem {
    dim: usize,
    rhs: RhsFn,
    jacobian: Option<JacobianFn>,
    a: f64,
    b: f64,
    init_values: Vec<f64>,
}

impl fmt::Debug for FirstOrderSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FirstOrderSystem")
            .field("dim", &self.dim)
            .field("domain", &(self.a, self.b))
            .field("init_values", &self.init_values)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl FirstOrderSystem {
    pub fn new(
        dim: usize,
        rhs: impl Fn(&[f64], f64) -> Vec<f64> + Send + Sync + 'static,
        a: f64,
        b: f64,
        init_values: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(arg("system dimension must be >= 1"));
        }
        if init_values.len() != dim {
            return Err(arg(format!(
                "system of dimension {dim} needs {dim} initial values, got {}",
                init_values.len()
            )));
        }
        check_interval(a, b)?;
        let rhs: RhsFn = Arc::new(rhs);
        let probe = rhs(&init_values, a);
        if probe.len() != dim {
            return Err(arg(format!(
                "rhs returned {} components for a system of dimension {dim}",
                probe.len()
            )));
        }
        Ok(Self { dim, rhs, jacobian: None, a, b, init_values })
    }

    pub fn with_jacobian(
        mut self,
        jac: impl Fn(&[f64], f64) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        let jac: JacobianFn = Arc::new(jac);
        let probe = jac(&self.init_values, self.a);
        if probe.shape() != (self.dim, self.dim) {
            return Err(arg(format!(
                "jacobian has shape {:?}, expected {}x{}",
                probe.shape(),
                self.dim,
                self.dim
            )));
        }
        self.jacobian = Some(jac);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn init_values(&self) -> &[f64] {
        &self.init_values
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn restricted(&self, a: f64, b: f64, init_values: Vec<f64>) -> Result<Self> {
        check_interval(a, b)?;
        if init_values.len() != self.dim {
            return Err(arg("initial vector length does not match system dimension"));
        }
        Ok(Self {
            dim: self.dim,
            rhs: self.rhs.clone(),
            jacobian: self.jacobian.clone(),
            a,
            b,
            init_values,
        })
    }

    /// Raw right-hand side without domain or finiteness checks.
    #[inline]
    pub fn rhs_unchecked(&self, u: &[f64], x: f64) -> Vec<f64> {
        (self.rhs)(u, x)
    }

    pub fn eval_rhs(&self, u: &[f64], x: f64) -> Result<Vec<f64>> {
        if u.len() != self.dim {
            return Err(arg(format!("state has length {}, expected {}", u.len(), self.dim)));
        }
        check_domain(x, self.a, self.b)?;
        let out = (self.rhs)(u, x);
        if let Some(index) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::Evaluation { index });
        }
        Ok(out)
    }

    /// `∂q/∂u`: analytic when available, otherwise forward differences with
    /// step `1e-8 * max(1, |u_i|)`.
    pub fn jacobian(&self, u: &[f64], x: f64) -> DMatrix<f64> {
        if let Some(jac) = &self.jacobian {
            return jac(u, x);
        }
        self.fd_jacobian(u, x)
    }

    pub fn fd_jacobian(&self, u: &[f64], x: f64) -> DMatrix<f64> {
        let n = self.dim;
        let base = (self.rhs)(u, x);
        let mut m = DMatrix::zeros(n, n);
        let mut probe = u.to_vec();
        for k in 0..n {
            let h = 1e-8 * u[k].abs().max(1.0);
            probe[k] = u[k] + h;
            let shifted = (self.rhs)(&probe, x);
            for i in 0..n {
                m[(i, k)] = (shifted[i] - base[i]) / h;
            }
            probe[k] = u[k];
        }
        m
    }
}

/// Trajectory on a strictly increasing grid.
#[derive(Clone, Debug, PartialEq)]
pub struct StateTable {
    pub grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// `v = u^(n)` at each grid point, when the producer has it.
    pub derivs: Option<Vec<Vec<f64>>>,
}

impl StateTable {
    pub fn new(grid: Vec<f64>, values: Vec<Vec<f64>>, derivs: Option<Vec<Vec<f64>>>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(arg("grid and values differ in length"));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(arg("grid must be strictly increasing"));
        }
        let dim = values.first().map_or(0, Vec::len);
        if values.iter().any(|row| row.len() != dim) {
            return Err(arg("ragged state rows"));
        }
        if let Some(d) = &derivs {
            if d.len() != grid.len() {
                return Err(arg("derivative rows differ from grid length"));
            }
        }
        let all_finite = grid.iter().chain(values.iter().flatten()).all(|v| v.is_finite())
            && derivs.iter().flatten().flatten().all(|v| v.is_finite());
        if !all_finite {
            return Err(arg("state table entries must be finite"));
        }
        Ok(Self { grid, values, derivs })
    }

    pub fn empty() -> Self {
        Self { grid: Vec::new(), values: Vec::new(), derivs: None }
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[i]).collect()
    }

    pub fn last_state(&self) -> Option<&[f64]> {
        self.values.last().map(Vec::as_slice)
    }

    /// Linear interpolation; `x` must lie inside the grid span.
    pub fn interpolate(&self, x: f64) -> Result<Vec<f64>> {
        let (first, last) = match (self.grid.first(), self.grid.last()) {
            (Some(&f), Some(&l)) => (f, l),
            _ => return Err(arg("cannot interpolate an empty table")),
        };
        if x < first || x > last {
            return Err(Error::Domain { x, a: first, b: last });
        }
        let hi = self.grid.partition_point(|&g| g < x);
        if hi == 0 {
            return Ok(self.values[0].clone());
        }
        let lo = hi - 1;
        let (x0, x1) = (self.grid[lo], self.grid[hi]);
        let w = (x - x0) / (x1 - x0);
        Ok(self.values[lo]
            .iter()
            .zip(&self.values[hi])
            .map(|(a, b)| a + w * (b - a))
            .collect())
    }

    /// Append `other`, dropping its first row when it repeats this table's
    /// last grid point.
    pub fn extend(&mut self, other: StateTable) {
        let skip = match (self.grid.last(), other.grid.first()) {
            (Some(l), Some(f)) if f <= l => 1,
            _ => 0,
        };
        let keep_derivs = self.derivs.is_some() || self.is_empty();
        let StateTable { grid, values, derivs } = other;
        self.grid.extend(grid.into_iter().skip(skip));
        self.values.extend(values.into_iter().skip(skip));
        match (keep_derivs, derivs) {
            (true, Some(d)) => self
                .derivs
                .get_or_insert_with(Vec::new)
                .extend(d.into_iter().skip(skip)),
            _ => self.derivs = None,
        }
    }
}
