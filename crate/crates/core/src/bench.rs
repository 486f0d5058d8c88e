//! JSON experiment configs and the four benchmark commands behind the CLI.
//!
//! A config file is either a single experiment object or
//! `{"version": .., "cases": [..]}`. Every experiment names exactly one of
//! `partition`, `mixture` or `bases`:
//!
//! ```json
//! {
//!   "id": "linear_2",
//!   "integrand": {"id": "linear"},
//!   "partition": {"counts": [2]},
//!   "estimator": {"n_samples": 1000000, "seeds": [1, 2]}
//! }
//! ```
//!
//! Comparison CSV columns are `case,method,analytic_var,empirical_var,mean,mu,n,seed,error`.
//! Floats are written in Rust's shortest round-trip form (`{:?}`), rows are
//! sorted by `(case, method, seed)`, and `error` is empty on success.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::density::{catalog_density, DensityModel};
use crate::domain::{make_uniform_partition, BoxDomain, Partition};
use crate::estimator::{estimate_balance_mis, estimate_mixture_is, estimate_plain_is, EstimateReport};
use crate::integrand::{catalog_integrand, Integrand, Params};
use crate::domain::elementary_basis;
use crate::optimizer::{
    grid_search_oracle, minimize, variance_objective, ObjectiveSpec, OptimizerOptions, OptimizerResult,
};
use crate::quadrature::{compute_mixture_moments, compute_moments, MixtureComponent, MomentSet, QuadratureConfig};
use crate::sampler::RngStream;
use crate::weights::{analytic_variance, l1_weights, optimal_mixture_frequencies, optimal_weights, Provenance, WeightVector};

/// Bundled comparison catalog.
pub const CATALOG_V1: &str = include_str!("../configs/catalog_v1.json");

/// Both variances below this make the comparison ratio 1.
const RATIO_ZERO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl BenchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            BenchError::Runtime(_) => 3,
        }
    }
}

fn config_err(path: &str, msg: impl std::fmt::Display) -> BenchError {
    BenchError::Config(format!("{path}: {msg}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    pub id: String,
    #[serde(default)]
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    #[serde(default)]
    pub counts: Option<Vec<usize>>,
    #[serde(default)]
    pub breaks: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub alpha: f64,
    pub integrand: FunctionSpec,
    pub density: FunctionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub components: Vec<ComponentSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    L1,
    Optimal,
    Optimizer,
    NaturalAlpha,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::L1 => "l1",
            Method::Optimal => "optimal",
            Method::Optimizer => "optimizer",
            Method::NaturalAlpha => "natural_alpha",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightChoice {
    Method(Method),
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSettings {
    pub n_samples: usize,
    pub seeds: Vec<u64>,
    /// Weights used by `estimate`; defaults to the kind's best method.
    pub weights: Option<WeightChoice>,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self { n_samples: 100_000, seeds: vec![0], weights: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub tol: f64,
    pub max_iters: usize,
    pub eps_floor: f64,
    pub resolution: f64,
    pub grid_oracle: bool,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        let o = OptimizerOptions::default();
        Self { tol: o.tol, max_iters: o.max_iters, eps_floor: o.eps_floor, resolution: o.resolution, grid_oracle: true }
    }
}

impl OptimizerSettings {
    pub fn options(&self) -> OptimizerOptions {
        OptimizerOptions { tol: self.tol, max_iters: self.max_iters, eps_floor: self.eps_floor, resolution: self.resolution }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub domain: Option<DomainSpec>,
    #[serde(default)]
    pub integrand: Option<FunctionSpec>,
    #[serde(default)]
    pub partition: Option<PartitionSpec>,
    #[serde(default)]
    pub mixture: Option<MixtureSpec>,
    #[serde(default)]
    pub bases: Option<Vec<FunctionSpec>>,
    #[serde(default)]
    pub estimator: EstimatorSettings,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseList {
    #[serde(default)]
    version: Option<u32>,
    #[serde(default)]
    description: Option<String>,
    cases: Vec<ExperimentConfig>,
}

/// Parsed config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    pub version: Option<u32>,
    pub cases: Vec<ExperimentConfig>,
    /// Input was a bare experiment rather than a case list.
    pub single: bool,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, BenchError> {
        let probe: Value = serde_json::from_str(text).map_err(|e| BenchError::Config(format!("invalid JSON: {e}")))?;
        let is_list = probe.as_object().is_some_and(|o| o.contains_key("cases"));
        let file = if is_list {
            let list: CaseList = deserialize_with_path(text)?;
            ConfigFile { version: list.version, cases: list.cases, single: false }
        } else {
            ConfigFile { version: None, cases: vec![deserialize_with_path(text)?], single: true }
        };
        if file.cases.is_empty() {
            return Err(config_err("cases", "at least one case is required"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, c) in file.cases.iter().enumerate() {
            if !seen.insert(c.id.as_str()) {
                return Err(config_err(&file.case_path(i), format!("duplicate case id '{}'", c.id)));
            }
        }
        Ok(file)
    }

    /// The bundled catalog.
    pub fn catalog() -> Self {
        Self::parse(CATALOG_V1).expect("bundled catalog parses")
    }

    fn case_path(&self, i: usize) -> String {
        if self.single {
            "$".into()
        } else {
            format!("cases[{i}]")
        }
    }

    /// Replaces every case's seed list with `[seed]`.
    pub fn override_seed(&mut self, seed: u64) {
        for c in &mut self.cases {
            c.estimator.seeds = vec![seed];
        }
    }

    pub fn resolve(&self) -> Result<Vec<Experiment>, BenchError> {
        self.cases.iter().enumerate().map(|(i, c)| c.resolve(&self.case_path(i))).collect()
    }
}

fn deserialize_with_path<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, BenchError> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        BenchError::Config(format!("{path}: {}", e.into_inner()))
    })
}

/// Experiment with its objects constructed.
#[derive(Debug, Clone)]
pub enum Setup {
    Partition { f: Integrand, partition: Partition },
    Mixture { domain: BoxDomain, components: Vec<MixtureComponent> },
    Bases { f: Integrand, bases: Vec<DensityModel>, domain: BoxDomain },
}

impl Setup {
    pub fn kind(&self) -> &'static str {
        match self {
            Setup::Partition { .. } => "partition",
            Setup::Mixture { .. } => "mixture",
            Setup::Bases { .. } => "bases",
        }
    }

    /// Methods compared for this kind, in CSV order.
    pub fn methods(&self) -> &'static [Method] {
        match self {
            Setup::Partition { .. } => &[Method::L1, Method::Optimal, Method::Optimizer],
            Setup::Mixture { .. } => &[Method::NaturalAlpha, Method::Optimal],
            Setup::Bases { .. } => &[Method::Optimizer],
        }
    }

    fn default_method(&self) -> Method {
        match self {
            Setup::Bases { .. } => Method::Optimizer,
            _ => Method::Optimal,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub id: String,
    pub setup: Setup,
    pub estimator: EstimatorSettings,
    pub quadrature: QuadratureConfig,
    pub optimizer: OptimizerSettings,
}

fn build_integrand(spec: &FunctionSpec, path: &str) -> Result<Integrand, BenchError> {
    catalog_integrand(&spec.id, &spec.params).map_err(|e| config_err(path, e))
}

fn build_density(spec: &FunctionSpec, path: &str) -> Result<DensityModel, BenchError> {
    catalog_density(&spec.id, &spec.params).map_err(|e| config_err(path, e))
}

impl ExperimentConfig {
    pub fn resolve(&self, path: &str) -> Result<Experiment, BenchError> {
        let chosen = [self.partition.is_some(), self.mixture.is_some(), self.bases.is_some()];
        if chosen.iter().filter(|c| **c).count() != 1 {
            return Err(config_err(path, "exactly one of 'partition', 'mixture' or 'bases' is required"));
        }
        self.quadrature.validate().map_err(|e| config_err(&format!("{path}.quadrature"), e))?;
        let o = &self.optimizer;
        if !(o.tol > 0.0) || !(o.eps_floor >= 0.0) || o.max_iters == 0 {
            return Err(config_err(&format!("{path}.optimizer"), "tol > 0, eps_floor >= 0 and max_iters >= 1 required"));
        }
        if self.estimator.n_samples == 0 {
            return Err(config_err(&format!("{path}.estimator.n_samples"), "must be >= 1"));
        }
        if self.estimator.seeds.is_empty() {
            return Err(config_err(&format!("{path}.estimator.seeds"), "at least one seed is required"));
        }
        let domain = match &self.domain {
            Some(d) => Some(
                BoxDomain::new(d.lower.clone(), d.upper.clone()).map_err(|e| config_err(&format!("{path}.domain"), e))?,
            ),
            None => None,
        };
        let need_integrand = || -> Result<Integrand, BenchError> {
            let spec = self
                .integrand
                .as_ref()
                .ok_or_else(|| config_err(&format!("{path}.integrand"), "required for this experiment kind"))?;
            build_integrand(spec, &format!("{path}.integrand"))
        };
        let setup = if let Some(p) = &self.partition {
            let f = need_integrand()?;
            let ppath = format!("{path}.partition");
            let partition = match (&p.counts, &p.breaks) {
                (Some(counts), None) => {
                    if let Some(k) = counts.iter().position(|c| *c == 0) {
                        return Err(config_err(&format!("{ppath}.counts[{k}]"), "cell counts must be >= 1"));
                    }
                    let dom = domain.clone().unwrap_or_else(|| BoxDomain::unit(counts.len()));
                    make_uniform_partition(&dom, counts).map_err(|e| config_err(&format!("{ppath}.counts"), e))?
                }
                (None, Some(breaks)) => {
                    let part = Partition::from_breaks(breaks.clone()).map_err(|e| config_err(&format!("{ppath}.breaks"), e))?;
                    if let Some(d) = &domain {
                        if d != part.domain() {
                            return Err(config_err(&ppath, "breaks do not span the declared domain"));
                        }
                    }
                    part
                }
                _ => return Err(config_err(&ppath, "give exactly one of 'counts' or 'breaks'")),
            };
            if f.dim() != partition.domain().dim() {
                return Err(config_err(path, format!("integrand is {}-D but the partition is {}-D", f.dim(), partition.domain().dim())));
            }
            Setup::Partition { f, partition }
        } else if let Some(m) = &self.mixture {
            if self.integrand.is_some() {
                return Err(config_err(&format!("{path}.integrand"), "mixture experiments take per-component integrands"));
            }
            if m.components.is_empty() {
                return Err(config_err(&format!("{path}.mixture.components"), "at least one component is required"));
            }
            let mut components = Vec::with_capacity(m.components.len());
            for (i, c) in m.components.iter().enumerate() {
                let cpath = format!("{path}.mixture.components[{i}]");
                if !(c.alpha >= 0.0) {
                    return Err(config_err(&format!("{cpath}.alpha"), "must be >= 0"));
                }
                components.push(MixtureComponent {
                    alpha: c.alpha,
                    f: build_integrand(&c.integrand, &format!("{cpath}.integrand"))?,
                    g: build_density(&c.density, &format!("{cpath}.density"))?,
                });
            }
            let alpha_sum: f64 = components.iter().map(|c| c.alpha).sum();
            if (alpha_sum - 1.0).abs() > 1e-12 {
                return Err(config_err(&format!("{path}.mixture.components"), format!("alphas sum to {alpha_sum}, not 1")));
            }
            let dim = components[0].f.dim();
            let domain = domain.unwrap_or_else(|| BoxDomain::unit(dim));
            Setup::Mixture { domain, components }
        } else {
            let f = need_integrand()?;
            let specs = self.bases.as_ref().expect("checked above");
            if specs.is_empty() {
                return Err(config_err(&format!("{path}.bases"), "at least one basis is required"));
            }
            let bases = specs
                .iter()
                .enumerate()
                .map(|(i, s)| build_density(s, &format!("{path}.bases[{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
            let domain = domain.unwrap_or_else(|| BoxDomain::unit(f.dim()));
            Setup::Bases { f, bases, domain }
        };
        Ok(Experiment {
            id: self.id.clone(),
            setup,
            estimator: self.estimator.clone(),
            quadrature: self.quadrature,
            optimizer: self.optimizer,
        })
    }
}

fn runtime(case: &str, e: impl std::fmt::Display) -> BenchError {
    BenchError::Runtime(format!("case '{case}': {e}"))
}

/// Weights for one method together with their analytic per-sample variance.
#[derive(Debug, Clone)]
pub struct MethodWeights {
    pub method: Method,
    pub weights: WeightVector,
    pub analytic_variance: f64,
}

/// Moments, objective and mu shared by all methods of one experiment.
pub struct CaseContext<'a> {
    pub experiment: &'a Experiment,
    pub mu: f64,
    pub moments: Option<MomentSet>,
    pub objective: Option<ObjectiveSpec>,
}

impl<'a> CaseContext<'a> {
    pub fn new(experiment: &'a Experiment) -> Result<Self, BenchError> {
        let id = &experiment.id;
        let cfg = &experiment.quadrature;
        match &experiment.setup {
            Setup::Partition { f, partition } => {
                let moments = compute_moments(f, partition, &elementary_basis(partition), cfg).map_err(|e| runtime(id, e))?;
                Ok(Self { experiment, mu: moments.mu, moments: Some(moments), objective: None })
            }
            Setup::Mixture { domain, components } => {
                let moments = compute_mixture_moments(domain, components, cfg).map_err(|e| runtime(id, e))?;
                Ok(Self { experiment, mu: moments.mu, moments: Some(moments), objective: None })
            }
            Setup::Bases { f, bases, domain } => {
                let spec = ObjectiveSpec::new(f.clone(), bases.clone(), domain.clone(), *cfg).map_err(|e| runtime(id, e))?;
                Ok(Self { experiment, mu: spec.mu(), moments: None, objective: Some(spec) })
            }
        }
    }

    fn objective_spec(&self) -> Result<ObjectiveSpec, BenchError> {
        let e = self.experiment;
        match (&self.objective, &e.setup) {
            (Some(spec), _) => Ok(spec.clone()),
            (None, Setup::Partition { f, partition }) => {
                ObjectiveSpec::elementary(f.clone(), partition, e.quadrature).map_err(|err| runtime(&e.id, err))
            }
            _ => Err(BenchError::Config(format!("case '{}': the optimizer needs a partition or bases experiment", e.id))),
        }
    }

    pub fn run_optimizer(&self) -> Result<OptimizerResult, BenchError> {
        let spec = self.objective_spec()?;
        minimize(&spec, None, &self.experiment.optimizer.options()).map_err(|e| runtime(&self.experiment.id, e))
    }

    fn analytic(&self, w: &WeightVector) -> Result<f64, BenchError> {
        let id = &self.experiment.id;
        match (&self.moments, &self.objective) {
            (Some(m), _) => Ok(analytic_variance(m, w).map_err(|e| runtime(id, e))?.analytic_variance),
            (None, Some(spec)) => variance_objective(spec, w).map_err(|e| runtime(id, e)),
            _ => unreachable!("context always carries moments or an objective"),
        }
    }

    pub fn weights_for(&self, method: Method) -> Result<MethodWeights, BenchError> {
        let id = &self.experiment.id;
        let unsupported = || {
            BenchError::Config(format!("case '{id}': method '{}' does not apply to {} experiments", method.as_str(), self.experiment.setup.kind()))
        };
        let weights = match (method, &self.experiment.setup) {
            (Method::L1, Setup::Partition { .. }) => l1_weights(self.moments.as_ref().unwrap()).map_err(|e| runtime(id, e))?,
            (Method::Optimal, Setup::Partition { .. }) => {
                optimal_weights(self.moments.as_ref().unwrap()).map_err(|e| runtime(id, e))?
            }
            (Method::Optimal, Setup::Mixture { .. }) => {
                optimal_mixture_frequencies(self.moments.as_ref().unwrap()).map_err(|e| runtime(id, e))?
            }
            (Method::NaturalAlpha, Setup::Mixture { components, .. }) => {
                WeightVector::new(components.iter().map(|c| c.alpha).collect(), Provenance::Custom)
                    .map_err(|e| runtime(id, e))?
            }
            (Method::Optimizer, Setup::Partition { .. } | Setup::Bases { .. }) => {
                let r = self.run_optimizer()?;
                return Ok(MethodWeights { method, analytic_variance: self.analytic(&r.weights)?, weights: r.weights });
            }
            _ => return Err(unsupported()),
        };
        let analytic_variance = self.analytic(&weights)?;
        Ok(MethodWeights { method, weights, analytic_variance })
    }

    fn custom_weights(&self, values: &[f64]) -> Result<WeightVector, BenchError> {
        let n = match &self.experiment.setup {
            Setup::Partition { partition, .. } => partition.len(),
            Setup::Mixture { components, .. } => components.len(),
            Setup::Bases { bases, .. } => bases.len(),
        };
        if values.len() != n {
            return Err(BenchError::Config(format!(
                "case '{}': estimator.weights has {} entries, expected {n}",
                self.experiment.id,
                values.len()
            )));
        }
        WeightVector::new(values.to_vec(), Provenance::Custom)
            .map_err(|e| BenchError::Config(format!("case '{}': estimator.weights: {e}", self.experiment.id)))
    }

    /// Runs the experiment's estimator with the given weights (cell weights,
    /// mixture frequencies or proposal frequencies, by kind).
    pub fn estimate(&self, weights: &WeightVector, n: usize, seed: u64) -> Result<EstimateReport, BenchError> {
        let id = &self.experiment.id;
        let report = match &self.experiment.setup {
            Setup::Partition { f, partition } => {
                estimate_plain_is(f, partition, weights, n, &mut RngStream::new(seed, 0))
            }
            Setup::Mixture { components, .. } => estimate_mixture_is(components, weights, n, seed),
            Setup::Bases { f, bases, .. } => estimate_balance_mis(f, bases, weights, n, seed),
        }
        .map_err(|e| runtime(id, e))?;
        Ok(report)
    }
}

fn emit(file: &ConfigFile, values: Vec<Value>) -> Value {
    if file.single {
        values.into_iter().next().unwrap_or(Value::Null)
    } else {
        Value::Array(values)
    }
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn variance_ratio(baseline: f64, best: f64) -> f64 {
    if baseline.abs() < RATIO_ZERO && best.abs() < RATIO_ZERO {
        1.0
    } else {
        baseline / best
    }
}

/// Moments, both weight vectors and their analytic variances.
pub fn cmd_weights(file: &ConfigFile) -> Result<Value, BenchError> {
    let experiments = file.resolve()?;
    let mut out = Vec::new();
    for e in &experiments {
        let ctx = CaseContext::new(e)?;
        let (baseline, best) = match &e.setup {
            Setup::Partition { .. } => (Method::L1, Method::Optimal),
            Setup::Mixture { .. } => (Method::NaturalAlpha, Method::Optimal),
            Setup::Bases { .. } => {
                return Err(BenchError::Config(format!(
                    "case '{}': weights needs a partition or mixture experiment (use optimize for bases)",
                    e.id
                )))
            }
        };
        let mut entry = json!({
            "case": e.id,
            "kind": e.setup.kind(),
            "mu": ctx.mu,
            "moments": to_json(ctx.moments.as_ref().unwrap()),
        });
        let mut vars = serde_json::Map::new();
        let mut got = Vec::new();
        for m in [baseline, best] {
            match ctx.weights_for(m) {
                Ok(w) => {
                    entry[m.as_str()] = to_json(&w.weights);
                    vars.insert(m.as_str().into(), json!(w.analytic_variance));
                    got.push(w.analytic_variance);
                }
                Err(err @ BenchError::Runtime(_)) if m == Method::L1 => {
                    entry[m.as_str()] = Value::Null;
                    entry["l1_error"] = json!(err.to_string());
                }
                Err(err) => return Err(err),
            }
        }
        entry["analytic_variance"] = Value::Object(vars);
        entry["ratio"] = if got.len() == 2 { json!(variance_ratio(got[0], got[1])) } else { Value::Null };
        out.push(entry);
    }
    Ok(emit(file, out))
}

fn chosen_weights(ctx: &CaseContext) -> Result<(String, WeightVector, f64), BenchError> {
    match &ctx.experiment.estimator.weights {
        Some(WeightChoice::Custom(v)) => {
            let w = ctx.custom_weights(v)?;
            let var = ctx.analytic(&w)?;
            Ok(("custom".into(), w, var))
        }
        Some(WeightChoice::Method(m)) => {
            let w = ctx.weights_for(*m)?;
            Ok((m.as_str().into(), w.weights, w.analytic_variance))
        }
        None => {
            let w = ctx.weights_for(ctx.experiment.setup.default_method())?;
            Ok((w.method.as_str().into(), w.weights, w.analytic_variance))
        }
    }
}

/// One estimator report per configured seed.
pub fn cmd_estimate(file: &ConfigFile) -> Result<Value, BenchError> {
    let experiments = file.resolve()?;
    let mut out = Vec::new();
    for e in &experiments {
        let ctx = CaseContext::new(e)?;
        let (method, weights, predicted) = chosen_weights(&ctx)?;
        let reports = e
            .estimator
            .seeds
            .iter()
            .map(|&seed| Ok(to_json(&ctx.estimate(&weights, e.estimator.n_samples, seed)?.with_prediction(predicted))))
            .collect::<Result<Vec<_>, BenchError>>()?;
        out.push(json!({
            "case": e.id,
            "kind": e.setup.kind(),
            "method": method,
            "mu": ctx.mu,
            "weights": to_json(&weights),
            "reports": reports,
        }));
    }
    Ok(emit(file, out))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub case: String,
    pub method: String,
    pub analytic_var: Option<f64>,
    pub empirical_var: Option<f64>,
    pub mean: Option<f64>,
    pub mu: Option<f64>,
    pub n: usize,
    pub seed: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryEntry {
    pub case: String,
    pub kind: String,
    pub baseline_method: String,
    pub baseline_var: Option<f64>,
    pub best_method: String,
    pub best_var: Option<f64>,
    /// `baseline_var / best_var`, 1 when both vanish.
    pub ratio: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareOutput {
    pub version: Option<u32>,
    pub rows: Vec<ComparisonRow>,
    pub summary: Vec<SummaryEntry>,
}

pub const CSV_HEADER: [&str; 9] = ["case", "method", "analytic_var", "empirical_var", "mean", "mu", "n", "seed", "error"];

fn fmt_float(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

impl CompareOutput {
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.case.clone(),
                r.method.clone(),
                fmt_float(r.analytic_var),
                fmt_float(r.empirical_var),
                fmt_float(r.mean),
                fmt_float(r.mu),
                r.n.to_string(),
                r.seed.to_string(),
                r.error.clone().unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("CSV is UTF-8")
    }

    pub fn summary_json(&self) -> Value {
        json!({ "version": self.version, "cases": to_json(&self.summary) })
    }
}

fn compare_case(e: &Experiment, rows: &mut Vec<ComparisonRow>) -> SummaryEntry {
    let s = &e.estimator;
    let (baseline_method, best_method) = match &e.setup {
        Setup::Partition { .. } => ("l1", "optimal"),
        Setup::Mixture { .. } => ("natural_alpha", "optimal"),
        Setup::Bases { .. } => ("uniform", "optimizer"),
    };
    let mut summary = SummaryEntry {
        case: e.id.clone(),
        kind: e.setup.kind().into(),
        baseline_method: baseline_method.into(),
        baseline_var: None,
        best_method: best_method.into(),
        best_var: None,
        ratio: None,
        error: None,
    };
    let fail_row = |method: &str, seed: u64, err: &BenchError| ComparisonRow {
        case: e.id.clone(),
        method: method.into(),
        analytic_var: None,
        empirical_var: None,
        mean: None,
        mu: None,
        n: s.n_samples,
        seed,
        error: Some(err.to_string()),
    };
    let ctx = match CaseContext::new(e) {
        Ok(c) => c,
        Err(err) => {
            for m in e.setup.methods() {
                for &seed in &s.seeds {
                    rows.push(fail_row(m.as_str(), seed, &err));
                }
            }
            summary.error = Some(err.to_string());
            return summary;
        }
    };
    for &m in e.setup.methods() {
        let mw = ctx.weights_for(m);
        if let Ok(w) = &mw {
            if m.as_str() == baseline_method {
                summary.baseline_var = Some(w.analytic_variance);
            }
            if m.as_str() == best_method {
                summary.best_var = Some(w.analytic_variance);
            }
        }
        for &seed in &s.seeds {
            let row = mw.as_ref().map_err(Clone::clone).and_then(|w| {
                let r = ctx.estimate(&w.weights, s.n_samples, seed)?;
                Ok(ComparisonRow {
                    case: e.id.clone(),
                    method: m.as_str().into(),
                    analytic_var: Some(w.analytic_variance),
                    empirical_var: Some(r.empirical_variance),
                    mean: Some(r.mean),
                    mu: Some(ctx.mu),
                    n: r.n_samples,
                    seed,
                    error: None,
                })
            });
            rows.push(row.unwrap_or_else(|err| fail_row(m.as_str(), seed, &err)));
        }
    }
    if let Setup::Bases { .. } = e.setup {
        let n = ctx.objective.as_ref().map_or(0, |o| o.len());
        summary.baseline_var = ctx.analytic(&WeightVector::uniform(n)).ok();
    }
    if let (Some(b), Some(o)) = (summary.baseline_var, summary.best_var) {
        summary.ratio = Some(variance_ratio(b, o));
    } else if summary.error.is_none() {
        summary.error = Some("a variance in the ratio could not be computed".into());
    }
    summary
}

/// Every applicable method on every case and seed. Per-case failures become
/// rows with an error message; only config errors abort the run.
pub fn cmd_compare(file: &ConfigFile) -> Result<CompareOutput, BenchError> {
    let experiments = file.resolve()?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for e in &experiments {
        summary.push(compare_case(e, &mut rows));
    }
    rows.sort_by(|a, b| (&a.case, &a.method, a.seed).cmp(&(&b.case, &b.method, b.seed)));
    summary.sort_by(|a, b| a.case.cmp(&b.case));
    Ok(CompareOutput { version: file.version, rows, summary })
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizeOutput {
    pub case: String,
    pub n_bases: usize,
    pub optimizer: OptimizerResult,
    pub oracle: Option<OptimizerResult>,
    pub oracle_warning: Option<String>,
    /// `optimizer.objective - oracle.objective`.
    pub objective_gap: Option<f64>,
    pub oracle_max_weight_diff: Option<f64>,
    /// Closed-form weights when the bases are an elementary partition.
    pub closed_form: Option<WeightVector>,
    pub closed_form_max_weight_diff: Option<f64>,
}

fn max_diff(a: &WeightVector, b: &WeightVector) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Optimizer (and lattice oracle for up to four bases) per case. The flag is
/// true when every case converged.
pub fn cmd_optimize(file: &ConfigFile) -> Result<(Value, bool), BenchError> {
    let experiments = file.resolve()?;
    let mut out = Vec::new();
    let mut all_converged = true;
    for e in &experiments {
        let ctx = CaseContext::new(e)?;
        let spec = ctx.objective_spec()?;
        let result = minimize(&spec, None, &e.optimizer.options()).map_err(|err| runtime(&e.id, err))?;
        all_converged &= result.converged;
        let (oracle, oracle_warning) = if !e.optimizer.grid_oracle {
            (None, None)
        } else if spec.len() > 4 {
            (None, Some(format!("grid oracle skipped: {} bases (supports at most 4)", spec.len())))
        } else {
            let r = grid_search_oracle(&spec, e.optimizer.resolution, e.optimizer.eps_floor)
                .map_err(|err| runtime(&e.id, err))?;
            (Some(r), None)
        };
        let closed_form = match &ctx.moments {
            Some(m) => Some(optimal_weights(m).map_err(|err| runtime(&e.id, err))?),
            None => None,
        };
        out.push(to_json(&OptimizeOutput {
            case: e.id.clone(),
            n_bases: spec.len(),
            objective_gap: oracle.as_ref().map(|o| result.objective - o.objective),
            oracle_max_weight_diff: oracle.as_ref().map(|o| max_diff(&result.weights, &o.weights)),
            closed_form_max_weight_diff: closed_form.as_ref().map(|c| max_diff(&result.weights, c)),
            closed_form,
            oracle,
            oracle_warning,
            optimizer: result,
        }));
    }
    Ok((emit(file, out), all_converged))
}
