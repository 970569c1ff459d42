//! Newton–Cotes integration on uniform grids.

use crate::error::{arg, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuadratureKind {
    /// Composite trapezoid over `points` equispaced nodes.
    Trapezoid,
    /// Fixed three-node rule on the whole interval.
    Simpson,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuadratureRule {
    kind: QuadratureKind,
    points: usize,
}

impl QuadratureRule {
    pub fn trapezoid(points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::Config(format!(
                "trapezoid rule needs at least 2 points, got {points}"
            )));
        }
        Ok(Self { kind: QuadratureKind::Trapezoid, points })
    }

    pub fn simpson() -> Self {
        Self { kind: QuadratureKind::Simpson, points: 3 }
    }

    pub fn kind(&self) -> QuadratureKind {
        self.kind
    }

    pub fn points(&self) -> usize {
        self.points
    }

    /// Nodes and weights for `∫_a^x`. A degenerate range yields one node
    /// with weight zero.
    pub fn nodes_weights(&self, a: f64, x: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        if x == a {
            return Ok((vec![a], vec![0.0]));
        }
        if x < a {
            return Err(arg(format!("upper limit {x} is below lower limit {a}")));
        }
        match self.kind {
            QuadratureKind::Trapezoid => {
                let grid = UniformGrid::new(a, x, self.points)?;
                let dx = grid.spacing();
                let mut w = vec![dx; self.points];
                w[0] = dx / 2.0;
                w[self.points - 1] = dx / 2.0;
                Ok((grid.nodes(), w))
            }
            QuadratureKind::Simpson => {
                let h = (x - a) / 6.0;
                Ok((vec![a, 0.5 * (a + x), x], vec![h, 4.0 * h, h]))
            }
        }
    }

    /// `∫_a^x h(t) dt`.
    pub fn integrate(&self, a: f64, x: f64, h: impl Fn(f64) -> f64) -> Result<f64> {
        let (nodes, weights) = self.nodes_weights(a, x)?;
        Ok(nodes.iter().zip(&weights).map(|(&t, &w)| w * h(t)).sum())
    }
}

/// Equispaced nodes `x_i = a + i * dx`, with the last node pinned to `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformGrid {
    start: f64,
    end: f64,
    count: usize,
}

impl UniformGrid {
    pub fn new(start: f64, end: f64, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(arg(format!("uniform grid needs at least 2 points, got {count}")));
        }
        if !(start.is_finite() && end.is_finite()) || end <= start {
            return Err(arg(format!("uniform grid needs start < end, got [{start}, {end}]")));
        }
        Ok(Self { start, end, count })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn spacing(&self) -> f64 {
        (self.end - self.start) / (self.count - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            self.end
        } else {
            self.start + i as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.node(i)).collect()
    }
}

/// Composite trapezoid `(dx/2)(h0 + 2 Σ h_i + h_p)`.
pub fn trapezoid(values: &[f64], spacing: f64) -> Result<f64> {
    if values.len() < 2 {
        return Err(arg("trapezoid needs at least 2 samples"));
    }
    check_spacing(spacing)?;
    let p = values.len() - 1;
    let inner: f64 = values[1..p].iter().sum();
    Ok(0.5 * spacing * (values[0] + 2.0 * inner + values[p]))
}

/// Running trapezoid integral; `out[j]` integrates `values[..=j]`.
pub fn cumulative_trapezoid(values: &[f64], spacing: f64) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(arg("cumulative trapezoid needs at least 1 sample"));
    }
    check_spacing(spacing)?;
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(acc);
    for w in values.windows(2) {
        acc += spacing * (w[0] + w[1]) / 2.0;
        out.push(acc);
    }
    Ok(out)
}

/// Transpose of [`cumulative_trapezoid`]: given `s = ∂L/∂out`, returns
/// `∂L/∂values`.
pub(crate) fn cumulative_trapezoid_adjoint(s: &[f64], spacing: f64) -> Vec<f64> {
    let n = s.len();
    let mut g = vec![0.0; n];
    if n < 2 {
        return g;
    }
    // out[j] = dx/2 * (v0 + v_j) + dx * Σ_{0<l<j} v_l
    let mut tail = 0.0; // Σ_{j>l} s_j
    for l in (0..n).rev() {
        g[l] = if l == 0 {
            0.5 * spacing * tail
        } else {
            0.5 * spacing * s[l] + spacing * tail
        };
        tail += s[l];
    }
    g
}

/// Three-node Simpson rule on `[a, b]` with the midpoint `(a + b)/2`.
pub fn simpson3(h_a: f64, h_mid: f64, h_b: f64, a: f64, b: f64) -> Result<f64> {
    if !(b > a) {
        return Err(arg(format!("simpson3 needs b > a, got [{a}, {b}]")));
    }
    Ok((b - a) / 6.0 * (h_a + 4.0 * h_mid + h_b))
}

fn check_spacing(spacing: f64) -> Result<()> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(arg(format!("spacing must be positive, got {spacing}")));
    }
    Ok(())
}
