//! Run configuration: a TOML file plus command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rpinn_core::baseline::ClassicalPinnConfig;
use rpinn_core::catalog::{self, Benchmark};
use rpinn_core::nn::{Activation, AdamConfig};
use rpinn_core::oracles::{BdfConfig, BdfOrder};
use rpinn_core::trainer::{SegmentPlan, TrainConfig, TransferRule};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable naming the base directory for run outputs.
pub const OUT_DIR_ENV: &str = "RPINN_OUT_DIR";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Reduced,
    Classical,
    Bdf,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Reduced => "reduced",
            Method::Classical => "classical",
            Method::Bdf => "bdf",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentSection {
    /// `a,b,c,...`, `log:N` or `linear:N`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundaries: Option<Vec<f64>>,
    /// Keep only the first N segments of the plan.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub take: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collocation: Option<usize>,
    /// `trapezoid`, `simpson` or `auto`; the rule used to hand derivative
    /// values across segment seams.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalize_input: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_scaling: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub balance_species: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_tolerance: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassicalSection {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub ic_weights: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BdfSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    /// Step of the BDF2 run used as reference when no closed form exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_step: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    pub method: Method,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub checkpoints: bool,
    pub params: BTreeMap<String, f64>,
    pub segments: SegmentSection,
    pub train: TrainSection,
    pub classical: ClassicalSection,
    pub bdf: BdfSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

/// Everything a run needs, checked and built.
pub struct Resolved {
    pub config: RunConfig,
    pub bench: Benchmark,
    pub plan: SegmentPlan,
    pub classical: ClassicalPinnConfig,
    pub bdf: BdfConfig,
    pub reference_bdf: BdfConfig,
    pub out: PathBuf,
}

fn core_err(e: rpinn_core::Error) -> CliError {
    match e {
        rpinn_core::Error::Config(m) => CliError::Config(m),
        other => CliError::Config(other.to_string()),
    }
}

/// Parse `a,b,c`, `log:N` or `linear:N` over `[a, b]`.
pub fn parse_segments(spec: &str, a: f64, b: f64) -> Result<Vec<f64>, CliError> {
    let spec = spec.trim();
    let count = |n: &str| {
        n.trim().parse::<usize>().map_err(|_| CliError::Config(format!("bad segment count in '{spec}'")))
    };
    if let Some(n) = spec.strip_prefix("log:") {
        return catalog::log_boundaries(a, b, count(n)?).map_err(core_err);
    }
    if let Some(n) = spec.strip_prefix("linear:") {
        return catalog::linear_boundaries(a, b, count(n)?).map_err(core_err);
    }
    spec.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| CliError::Config(format!("bad segment boundary '{t}'"))))
        .collect()
}

fn activation(name: &Option<String>, default: Activation) -> Result<Activation, CliError> {
    name.as_deref().map_or(Ok(default), |s| Activation::parse(s).map_err(core_err))
}

impl RunConfig {
    pub fn resolve(self) -> Result<Resolved, CliError> {
        let name = self.problem.clone().ok_or_else(|| CliError::Argument("no problem given".into()))?;
        if !catalog::PROBLEM_NAMES.contains(&name.as_str()) {
            return Err(CliError::UnknownProblem(name));
        }
        let bench = catalog::build(&name, &self.params).map_err(core_err)?;
        let (a, b) = bench.problem.domain();

        let t = &self.train;
        let base = TrainConfig::default();
        let train = TrainConfig {
            collocation_count: t.collocation.unwrap_or(base.collocation_count),
            epochs: t.epochs.unwrap_or(bench.default_epochs),
            adam: AdamConfig { learning_rate: t.lr.unwrap_or(base.adam.learning_rate), ..base.adam },
            loss_tolerance: t.loss_tolerance.or(base.loss_tolerance),
            seed: self.seed,
            hidden: t.hidden.clone().unwrap_or(base.hidden.clone()),
            activation: activation(&t.activation, base.activation)?,
            normalize_input: t.normalize_input.unwrap_or(base.normalize_input),
            output_scaling: t.output_scaling.unwrap_or(base.output_scaling),
            balance_species: t.balance_species.unwrap_or(base.balance_species),
            transfer: match &t.quadrature {
                Some(q) => TransferRule::parse(q).map_err(core_err)?,
                None => base.transfer,
            },
        };

        let bounds = match (&self.segments.spec, &self.segments.boundaries) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config("give either segments.spec or segments.boundaries".into()))
            }
            (Some(s), None) => parse_segments(s, a, b)?,
            (None, Some(v)) => v.clone(),
            (None, None) => bench.default_boundaries.clone(),
        };
        let mut plan = SegmentPlan::new(bounds, train.clone()).map_err(core_err)?;
        if let Some(n) = self.segments.take {
            plan = plan.take(n).map_err(core_err)?;
        }
        let pb = plan.boundaries();
        let slack = 1e-12 * a.abs().max(b.abs()).max(1.0);
        if (pb[0] - a).abs() > slack || pb[pb.len() - 1] > b + slack {
            return Err(CliError::Config(format!("segments must start at {a} and end inside [{a}, {b}]")));
        }

        let classical = ClassicalPinnConfig {
            ic_weights: self.classical.ic_weights.clone(),
            activation: activation(&self.classical.activation, ClassicalPinnConfig::default().activation)?,
            ..ClassicalPinnConfig::matching(&train)
        };
        classical.validate().map_err(core_err)?;

        let order = match self.bdf.order.unwrap_or(2) {
            1 => BdfOrder::One,
            2 => BdfOrder::Two,
            o => return Err(CliError::Config(format!("BDF order must be 1 or 2, got {o}"))),
        };
        let bdf = BdfConfig { order, step_size: self.bdf.step.unwrap_or(1e-5), ..BdfConfig::default() };
        bdf.validate().map_err(core_err)?;
        let reference_bdf = BdfConfig {
            order: BdfOrder::Two,
            step_size: self.bdf.reference_step.unwrap_or(1e-8),
            ..BdfConfig::default()
        };
        reference_bdf.validate().map_err(core_err)?;

        let out = match &self.out {
            Some(p) => p.clone(),
            None => {
                let base = std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
                base.join(format!("{name}-{}", self.method.name()))
            }
        };
        Ok(Resolved { config: self, bench, plan, classical, bdf, reference_bdf, out })
    }
}
