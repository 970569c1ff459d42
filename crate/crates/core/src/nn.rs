//! Fully-connected scalar-in, scalar-out networks with hand-written reverse
//! mode and an Adam optimizer.
//!
//! Activations are stored as `width x batch` matrices, one column per sample.
//! The forward pass can optionally carry the tangent `d/dx` through every
//! layer; the backward pass then accepts an upstream gradient on that tangent
//! as well, which is what the classical residual loss needs.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{arg, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// σ'(z); the ReLU kink at exactly zero counts as inactive.
    #[inline]
    fn slope(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    #[inline]
    fn curvature(self, z: f64) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }
}

/// `y = offset + scale * x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub offset: f64,
    pub scale: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine { offset: 0.0, scale: 1.0 };

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        self.offset + self.scale * x
    }
}

/// Per-layer parameter-shaped storage, used for gradients and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl Gradient {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            biases: net.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }

    fn shape_matches(&self, net: &Mlp) -> bool {
        self.weights.len() == net.weights.len()
            && self.weights.iter().zip(&net.weights).all(|(g, w)| g.shape() == w.shape())
            && self.biases.iter().zip(&net.biases).all(|(g, b)| g.len() == b.len())
    }

    /// Parameters in layer order: each weight matrix row-major, then its bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.transpose().iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn add_assign(&mut self, other: &Gradient) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
    activation: Activation,
    input_map: Affine,
    output_map: Affine,
}

/// Intermediate values kept for the backward pass.
pub struct ForwardCache {
    /// Layer inputs `A_0 .. A_{L-1}` (input row first).
    acts: Vec<DMatrix<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<DMatrix<f64>>,
    tangent: Option<TangentCache>,
    outputs: Vec<f64>,
}

struct TangentCache {
    acts: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
    outputs: Vec<f64>,
}

impl ForwardCache {
    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    /// `d(output)/dx` per sample, when the forward pass tracked tangents.
    pub fn input_derivatives(&self) -> Option<&[f64]> {
        self.tangent.as_ref().map(|t| t.outputs.as_slice())
    }
}

impl Mlp {
    /// He-initialised network: weights `N(0, 2/fan_in)`, biases
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new(sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        check_sizes(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let bound = 1.0 / (fan_in as f64).sqrt();
            // Row-major fill so the draw order is independent of storage layout.
            let vals: Vec<f64> = (0..fan_out * fan_in).map(|_| normal.sample(&mut rng)).collect();
            weights.push(DMatrix::from_row_slice(fan_out, fan_in, &vals));
            biases.push(DVector::from_fn(fan_out, |_, _| rng.random_range(-bound..=bound)));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
            activation,
            input_map: Affine::IDENTITY,
            output_map: Affine::IDENTITY,
        })
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        check_sizes(sizes)?;
        Ok(Self {
            sizes: sizes.to_vec(),
            weights: sizes.windows(2).map(|p| DMatrix::zeros(p[1], p[0])).collect(),
            biases: sizes.windows(2).map(|p| DVector::zeros(p[1])).collect(),
            activation,
            input_map: Affine::IDENTITY,
            output_map: Affine::IDENTITY,
        })
    }

    pub fn from_parts(
        weights: Vec<DMatrix<f64>>,
        biases: Vec<DVector<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(arg("need one bias vector per weight matrix"));
        }
        let mut sizes = vec![weights[0].ncols()];
        for (w, b) in weights.iter().zip(&biases) {
            if w.ncols() != *sizes.last().unwrap() || w.nrows() != b.len() {
                return Err(arg("incompatible layer shapes"));
            }
            sizes.push(w.nrows());
        }
        check_sizes(&sizes)?;
        Ok(Self {
            sizes,
            weights,
            biases,
            activation,
            input_map: Affine::IDENTITY,
            output_map: Affine::IDENTITY,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }

    pub fn input_map(&self) -> Affine {
        self.input_map
    }

    pub fn output_map(&self) -> Affine {
        self.output_map
    }

    /// Network sees `input_map(x)` instead of `x`.
    pub fn set_input_map(&mut self, map: Affine) {
        self.input_map = map;
    }

    /// Linear amplification applied to the last affine layer.
    pub fn set_output_map(&mut self, map: Affine) {
        self.output_map = map;
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn params_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Apply `f` to every parameter in [`Gradient::flatten`] order.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(usize, &mut f64)) {
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    f(k, &mut w[(r, c)]);
                    k += 1;
                }
            }
            for v in b.iter_mut() {
                f(k, v);
                k += 1;
            }
        }
    }

    pub fn forward_batch(&self, xs: &[f64]) -> Result<Vec<f64>> {
        if !self.params_finite() {
            let index = self.weights.iter().position(|w| w.iter().any(|v| !v.is_finite()));
            return Err(Error::Evaluation { index: index.unwrap_or(0) });
        }
        Ok(self.forward_cached(xs, false).outputs)
    }

    pub fn forward(&self, x: f64) -> Result<f64> {
        Ok(self.forward_batch(&[x])?[0])
    }

    pub fn forward_cached(&self, xs: &[f64], with_tangent: bool) -> ForwardCache {
        let batch = xs.len();
        let layers = self.weights.len();
        let mut acts = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers - 1);
        acts.push(DMatrix::from_fn(1, batch, |_, j| self.input_map.apply(xs[j])));
        let mut t_acts = Vec::new();
        let mut t_pre = Vec::new();
        if with_tangent {
            t_acts.push(DMatrix::from_element(1, batch, self.input_map.scale));
        }
        let mut last = DMatrix::zeros(1, batch);
        let mut last_t = DMatrix::zeros(1, batch);
        for l in 0..layers {
            let w = &self.weights[l];
            let mut z = w * &acts[l];
            for mut col in z.column_iter_mut() {
                col += &self.biases[l];
            }
            let zt = with_tangent.then(|| w * &t_acts[l]);
            if l + 1 == layers {
                last = z;
                if let Some(zt) = zt {
                    last_t = zt;
                }
                break;
            }
            let a = z.map(|v| self.activation.apply(v));
            if let Some(zt) = zt {
                let at = z.zip_map(&zt, |v, t| self.activation.slope(v) * t);
                t_acts.push(at);
                t_pre.push(zt);
            }
            pre.push(z);
            acts.push(a);
        }
        let out = self.output_map;
        let outputs = last.iter().map(|&y| out.apply(y)).collect();
        let tangent = with_tangent.then(|| TangentCache {
            acts: t_acts,
            pre: t_pre,
            outputs: last_t.iter().map(|&t| out.scale * t).collect(),
        });
        ForwardCache { acts, pre, tangent, outputs }
    }

    /// Parameter gradient given `∂L/∂output` and, optionally, `∂L/∂(doutput/dx)`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_out: &[f64],
        grad_tangent: Option<&[f64]>,
    ) -> Result<Gradient> {
        let batch = cache.outputs.len();
        if grad_out.len() != batch {
            return Err(arg(format!(
                "upstream gradient has {} entries for a batch of {batch}",
                grad_out.len()
            )));
        }
        let tangent = match (grad_tangent, &cache.tangent) {
            (None, _) => None,
            (Some(g), Some(t)) if g.len() == batch => Some((g, t)),
            (Some(_), Some(_)) => return Err(arg("tangent gradient length mismatch")),
            (Some(_), None) => return Err(arg("forward pass did not track tangents")),
        };
        let layers = self.weights.len();
        let scale = self.output_map.scale;
        let mut grad = Gradient::zeros_like(self);
        let mut gz = DMatrix::from_fn(1, batch, |_, j| scale * grad_out[j]);
        let mut gzt = tangent.map(|(g, _)| DMatrix::from_fn(1, batch, |_, j| scale * g[j]));

        for l in (0..layers).rev() {
            grad.weights[l] = &gz * cache.acts[l].transpose();
            if let (Some(gzt), Some((_, t))) = (&gzt, tangent) {
                grad.weights[l] += gzt * t.acts[l].transpose();
            }
            for (j, bj) in grad.biases[l].iter_mut().enumerate() {
                *bj = gz.row(j).sum();
            }
            if l == 0 {
                break;
            }
            let w = &self.weights[l];
            let ga = w.tr_mul(&gz);
            let z = &cache.pre[l - 1];
            match (&mut gzt, tangent) {
                (Some(gzt_cur), Some((_, t))) => {
                    let gat = w.tr_mul(gzt_cur);
                    let zt = &t.pre[l - 1];
                    let act = self.activation;
                    gz = DMatrix::from_fn(z.nrows(), batch, |r, c| {
                        let zv = z[(r, c)];
                        ga[(r, c)] * act.slope(zv) + gat[(r, c)] * act.curvature(zv) * zt[(r, c)]
                    });
                    *gzt_cur = gat.zip_map(z, |g, zv| g * act.slope(zv));
                }
                _ => {
                    let act = self.activation;
                    gz = ga.zip_map(z, |g, zv| g * act.slope(zv));
                }
            }
        }
        Ok(grad)
    }

    /// Write the checkpoint text format: a header with layer sizes and maps,
    /// then each weight matrix row by row followed by its bias row.
    pub fn write_checkpoint(&self, mut w: impl Write) -> std::io::Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "rpinn-mlp 1");
        let _ = writeln!(s, "activation {}", self.activation.name());
        let sizes: Vec<String> = self.sizes.iter().map(ToString::to_string).collect();
        let _ = writeln!(s, "sizes {}", sizes.join(" "));
        let _ = writeln!(s, "input {:e} {:e}", self.input_map.offset, self.input_map.scale);
        let _ = writeln!(s, "output {:e} {:e}", self.output_map.offset, self.output_map.scale);
        for (wm, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..wm.nrows() {
                let row: Vec<String> = wm.row(r).iter().map(|v| format!("{v:e}")).collect();
                let _ = writeln!(s, "{}", row.join(" "));
            }
            let row: Vec<String> = b.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        w.write_all(s.as_bytes())
    }

    pub fn read_checkpoint(r: impl BufRead) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut lines = r.lines().map(|l| l.map_err(|e| Error::Checkpoint(e.to_string())));
        let mut next = || lines.next().unwrap_or_else(|| Err(bad("unexpected end of file")));
        if next()?.trim() != "rpinn-mlp 1" {
            return Err(bad("missing header"));
        }
        let act_line = next()?;
        let activation = match act_line.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["activation", name] => Activation::parse(name).map_err(|_| bad("bad activation"))?,
            _ => return Err(bad("missing activation line")),
        };
        let sizes_line = next()?;
        let mut parts = sizes_line.split_whitespace();
        if parts.next() != Some("sizes") {
            return Err(bad("missing sizes line"));
        }
        let sizes = parts
            .map(|p| p.parse::<usize>().map_err(|_| bad("bad layer size")))
            .collect::<Result<Vec<_>>>()?;
        check_sizes(&sizes).map_err(|_| bad("invalid layer sizes"))?;
        let mut read_map = |tag: &str| -> Result<Affine> {
            let line = next()?;
            let v: Vec<&str> = line.split_whitespace().collect();
            if v.len() != 3 || v[0] != tag {
                return Err(bad("bad affine map line"));
            }
            let p = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            Ok(Affine { offset: p(v[1])?, scale: p(v[2])? })
        };
        let input_map = read_map("input")?;
        let output_map = read_map("output")?;
        let mut row = |len: usize| -> Result<Vec<f64>> {
            let v = next()?
                .split_whitespace()
                .map(|p| p.parse::<f64>().map_err(|_| bad("bad number")))
                .collect::<Result<Vec<_>>>()?;
            if v.len() != len {
                return Err(bad("row length does not match layer sizes"));
            }
            Ok(v)
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            let mut vals = Vec::with_capacity(pair[0] * pair[1]);
            for _ in 0..pair[1] {
                vals.extend(row(pair[0])?);
            }
            weights.push(DMatrix::from_row_slice(pair[1], pair[0], &vals));
            biases.push(DVector::from_vec(row(pair[1])?));
        }
        let mut net = Mlp::from_parts(weights, biases, activation)?;
        net.input_map = input_map;
        net.output_map = output_map;
        Ok(net)
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(arg("network needs at least an input and an output layer"));
    }
    if sizes[0] != 1 || *sizes.last().unwrap() != 1 {
        return Err(arg("network must map a scalar input to a scalar output"));
    }
    if sizes.contains(&0) {
        return Err(arg("layer widths must be positive"));
    }
    Ok(())
}

/// Parameter gradient of a loss given its derivative at each output.
pub fn grad_loss(net: &Mlp, loss_grad_at_outputs: &[f64], xs: &[f64]) -> Result<Gradient> {
    if loss_grad_at_outputs.len() != xs.len() {
        return Err(arg(format!(
            "{} loss gradients for {} inputs",
            loss_grad_at_outputs.len(),
            xs.len()
        )));
    }
    let cache = net.forward_cached(xs, false);
    net.backward(&cache, loss_grad_at_outputs, None)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: Gradient,
    second_moment: Gradient,
    step_count: u64,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            first_moment: Gradient::zeros_like(net),
            second_moment: Gradient::zeros_like(net),
            step_count: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(net: &mut Mlp, grad: &Gradient, state: &mut AdamState) -> Result<()> {
    if !grad.shape_matches(net) || !state.first_moment.shape_matches(net) {
        return Err(arg("gradient or optimizer state does not match the network shape"));
    }
    state.step_count += 1;
    let AdamConfig { learning_rate, beta1, beta2, epsilon } = state.config;
    let t = state.step_count as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    };
    for l in 0..net.weights.len() {
        let (w, g) = (&mut net.weights[l], &grad.weights[l]);
        let (m, v) = (&mut state.first_moment.weights[l], &mut state.second_moment.weights[l]);
        for i in 0..w.len() {
            update(&mut w[i], g[i], &mut m[i], &mut v[i]);
        }
        let (b, g) = (&mut net.biases[l], &grad.biases[l]);
        let (m, v) = (&mut state.first_moment.biases[l], &mut state.second_moment.biases[l]);
        for i in 0..b.len() {
            update(&mut b[i], g[i], &mut m[i], &mut v[i]);
        }
    }
    Ok(())
}

/// Read-only scalar model `x -> v(x)`, batched.
pub trait ScalarModel {
    fn eval_batch(&self, xs: &[f64]) -> Vec<f64>;
}

impl ScalarModel for Mlp {
    fn eval_batch(&self, xs: &[f64]) -> Vec<f64> {
        self.forward_cached(xs, false).outputs
    }
}

impl<F: Fn(f64) -> f64> ScalarModel for F {
    fn eval_batch(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self(x)).collect()
    }
}
