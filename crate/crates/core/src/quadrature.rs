//! Deterministic adaptive cubature and the per-component moment sets that
//! feed the weight formulas.
//!
//! The panel rule is a tensor-product Gauss–Legendre rule. Each region is
//! scored by comparing the rule on the whole region against the same rule on
//! its two halves (split along the longest axis); regions are refined
//! worst-first until the summed estimate drops below
//! `max(abs_tol, rel_tol * |value|)`.

use std::cell::Cell;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::DensityModel;
use crate::domain::{BasisFunction, BoxDomain, Partition};
use crate::integrand::Integrand;

/// Densities below this are treated as zero when checking supports.
pub const DENSITY_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    /// Gauss points per panel per axis.
    pub base_order: usize,
    pub max_depth: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Hard cap on live regions, so 2D refinement along a kink terminates.
    pub max_regions: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { base_order: 8, max_depth: 40, rel_tol: 1e-10, abs_tol: 1e-12, max_regions: 200_000 }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.base_order < 2 {
            return Err(format!("base_order = {} must be >= 2", self.base_order));
        }
        if !(self.rel_tol > 0.0) {
            return Err(format!("rel_tol = {} must be > 0", self.rel_tol));
        }
        if !(self.abs_tol > 0.0) {
            return Err(format!("abs_tol = {} must be > 0", self.abs_tol));
        }
        if self.max_regions == 0 {
            return Err("max_regions must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadError {
    #[error("quadrature did not converge: best value {value} with error estimate {error}")]
    NotConverged { value: f64, error: f64 },
    #[error("invalid quadrature configuration: {0}")]
    InvalidConfig(String),
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Visits every tensor-product node of the rule mapped onto `bx`,
    /// passing the point and its weight.
    pub fn for_each_node(&self, bx: &BoxDomain, mut visit: impl FnMut(&[f64], f64)) {
        let d = bx.dim();
        let n = self.order();
        let half: Vec<f64> = (0..d).map(|k| 0.5 * bx.width(k)).collect();
        let mid: Vec<f64> = (0..d).map(|k| bx.lower()[k] + half[k]).collect();
        let jac: f64 = half.iter().product();
        let mut idx = vec![0usize; d];
        let mut x = vec![0.0; d];
        loop {
            let mut w = jac;
            for k in 0..d {
                x[k] = mid[k] + half[k] * self.nodes[idx[k]];
                w *= self.weights[idx[k]];
            }
            visit(&x, w);
            let mut k = d;
            loop {
                if k == 0 {
                    return;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < n {
                    break;
                }
                idx[k] = 0;
            }
        }
    }

    pub fn apply<F: Fn(&[f64]) -> f64>(&self, f: &F, bx: &BoxDomain) -> f64 {
        let mut acc = 0.0;
        self.for_each_node(bx, |x, w| acc += w * f(x));
        acc
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, dp)
}

struct Region {
    bx: BoxDomain,
    value: f64,
    err: f64,
    depth: usize,
}

impl PartialEq for Region {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Region {}
impl PartialOrd for Region {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Region {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err
            .total_cmp(&other.err)
            .then_with(|| other.depth.cmp(&self.depth))
            .then_with(|| other.bx.lower().partial_cmp(self.bx.lower()).unwrap_or(Ordering::Equal))
    }
}

fn score<F: Fn(&[f64]) -> f64>(rule: &GaussLegendre, f: &F, bx: BoxDomain, depth: usize) -> Region {
    let coarse = rule.apply(f, &bx);
    let axis = bx.longest_axis();
    let mid = bx.lower()[axis] + 0.5 * bx.width(axis);
    let (l, r) = bx.split(axis, mid);
    let fine = rule.apply(f, &l) + rule.apply(f, &r);
    let err = if fine.is_finite() { (coarse - fine).abs() } else { f64::INFINITY };
    Region { bx, value: fine, err, depth }
}

/// Adaptive integral of `f` over `bx`.
pub fn integrate<F: Fn(&[f64]) -> f64>(f: F, bx: &BoxDomain, cfg: &QuadratureConfig) -> Result<Estimate, QuadError> {
    cfg.validate().map_err(QuadError::InvalidConfig)?;
    let rule = GaussLegendre::new(cfg.base_order);
    integrate_with_rule(&f, bx, cfg, &rule)
}

fn integrate_with_rule<F: Fn(&[f64]) -> f64>(
    f: &F,
    bx: &BoxDomain,
    cfg: &QuadratureConfig,
    rule: &GaussLegendre,
) -> Result<Estimate, QuadError> {
    let first = score(rule, f, bx.clone(), 0);
    let mut value = first.value;
    let mut err = first.err;
    let mut heap = BinaryHeap::new();
    let mut frozen = Vec::new();
    heap.push(first);
    let mut converged = false;
    while let Some(worst) = heap.pop() {
        if err <= cfg.abs_tol.max(cfg.rel_tol * value.abs()) {
            heap.push(worst);
            converged = true;
            break;
        }
        if worst.depth >= cfg.max_depth || !worst.err.is_finite() {
            frozen.push(worst);
            continue;
        }
        if heap.len() + frozen.len() + 2 > cfg.max_regions {
            heap.push(worst);
            break;
        }
        let axis = worst.bx.longest_axis();
        let mid = worst.bx.lower()[axis] + 0.5 * worst.bx.width(axis);
        let (l, r) = worst.bx.split(axis, mid);
        let a = score(rule, f, l, worst.depth + 1);
        let b = score(rule, f, r, worst.depth + 1);
        value += a.value + b.value - worst.value;
        err += a.err + b.err - worst.err;
        heap.push(a);
        heap.push(b);
    }
    // Re-sum in a fixed order so the result does not carry incremental drift.
    let mut regions = heap.into_sorted_vec();
    regions.extend(frozen);
    regions.sort_by(|a, b| a.bx.lower().partial_cmp(b.bx.lower()).unwrap_or(Ordering::Equal));
    let value: f64 = regions.iter().map(|r| r.value).sum();
    let error: f64 = regions.iter().map(|r| r.err).sum();
    let tol = cfg.abs_tol.max(cfg.rel_tol * value.abs());
    if (converged || error <= tol) && value.is_finite() {
        Ok(Estimate { value, error })
    } else {
        Err(QuadError::NotConverged { value, error })
    }
}

/// Splits `bx` at the given per-axis breakpoints (those strictly inside the
/// box) into a tensor grid of pieces, in row-major order.
pub fn pieces(bx: &BoxDomain, breaks: &[Vec<f64>]) -> Vec<BoxDomain> {
    let axes: Vec<Vec<f64>> = (0..bx.dim())
        .map(|k| {
            let (lo, hi) = (bx.lower()[k], bx.upper()[k]);
            let mut pts = vec![lo];
            let mut inner: Vec<f64> = breaks
                .get(k)
                .map(|b| b.iter().copied().filter(|x| *x > lo && *x < hi).collect())
                .unwrap_or_default();
            inner.sort_by(f64::total_cmp);
            inner.dedup();
            pts.extend(inner);
            pts.push(hi);
            pts
        })
        .collect();
    match Partition::from_breaks(axes) {
        Ok(p) => p.cells().to_vec(),
        Err(_) => vec![bx.clone()],
    }
}

/// Integral over `bx` after splitting at known discontinuities; the pieces
/// are summed in a fixed order.
pub fn integrate_pieces<F: Fn(&[f64]) -> f64>(
    f: F,
    bx: &BoxDomain,
    breaks: &[Vec<f64>],
    cfg: &QuadratureConfig,
) -> Result<Estimate, QuadError> {
    cfg.validate().map_err(QuadError::InvalidConfig)?;
    let rule = GaussLegendre::new(cfg.base_order);
    let mut total = Estimate { value: 0.0, error: 0.0 };
    let mut failed = false;
    for piece in pieces(bx, breaks) {
        match integrate_with_rule(&f, &piece, cfg, &rule) {
            Ok(e) => {
                total.value += e.value;
                total.error += e.error;
            }
            Err(QuadError::NotConverged { value, error }) => {
                failed = true;
                total.value += value;
                total.error += error;
            }
            Err(e) => return Err(e),
        }
    }
    if failed {
        Err(QuadError::NotConverged { value: total.value, error: total.error })
    } else {
        Ok(total)
    }
}

pub(crate) fn integrand_breaks(f: &Integrand, dim: usize) -> Vec<Vec<f64>> {
    (0..dim).map(|k| f.breakpoints(k)).collect()
}

/// First and second moments of an integrand against a set of components,
/// together with the integral `mu`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSet {
    pub mu: f64,
    pub first_moments: Vec<f64>,
    pub second_moments: Vec<f64>,
    pub error_bounds: Vec<f64>,
}

impl MomentSet {
    pub fn len(&self) -> usize {
        self.second_moments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.second_moments.is_empty()
    }

    /// Moment set from known values; `mu` is the sum of the first moments.
    pub fn from_values(first_moments: Vec<f64>, second_moments: Vec<f64>) -> Self {
        let mu = first_moments.iter().sum();
        let error_bounds = vec![0.0; second_moments.len()];
        Self { mu, first_moments, second_moments, error_bounds }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MomentError {
    #[error("cell {index}: {source}")]
    Cell { index: usize, source: QuadError },
    #[error("component {index}: integrand is nonzero where its density vanishes")]
    SupportMismatch { index: usize },
    #[error("{0}")]
    InvalidArgument(String),
}

/// Per-cell moments for the (possibly non-canonical) piecewise-constant
/// basis on `partition`: `first_i = ∫_{C_i} f` and
/// `second_i = ∫_{C_i} f^2 / b_i`.
pub fn compute_moments(
    f: &Integrand,
    partition: &Partition,
    basis: &[BasisFunction],
    cfg: &QuadratureConfig,
) -> Result<MomentSet, MomentError> {
    if basis.len() != partition.len() {
        return Err(MomentError::InvalidArgument(format!(
            "{} basis functions for {} cells",
            basis.len(),
            partition.len()
        )));
    }
    if f.dim() != partition.domain().dim() {
        return Err(MomentError::InvalidArgument(format!(
            "integrand is {}-dimensional, partition is {}-dimensional",
            f.dim(),
            partition.domain().dim()
        )));
    }
    let breaks = integrand_breaks(f, f.dim());
    let mut first_moments = Vec::with_capacity(basis.len());
    let mut second_moments = Vec::with_capacity(basis.len());
    let mut error_bounds = Vec::with_capacity(basis.len());
    for (index, (cell, b)) in partition.cells().iter().zip(basis).enumerate() {
        if &b.support != cell || !(b.height > 0.0) {
            return Err(MomentError::InvalidArgument(format!("basis {index} is not aligned with its cell")));
        }
        let cell_err = |source| MomentError::Cell { index, source };
        let first = integrate_pieces(|x| f.eval(x), cell, &breaks, cfg).map_err(cell_err)?;
        let square = integrate_pieces(
            |x| {
                let v = f.eval(x);
                v * v
            },
            cell,
            &breaks,
            cfg,
        )
        .map_err(cell_err)?;
        first_moments.push(first.value);
        second_moments.push(square.value / b.height);
        error_bounds.push(first.error + square.error / b.height);
    }
    let mu = first_moments.iter().sum();
    Ok(MomentSet { mu, first_moments, second_moments, error_bounds })
}

/// One term `alpha_i f_i` of a target mixture, sampled through `g_i`.
#[derive(Debug, Clone)]
pub struct MixtureComponent {
    pub alpha: f64,
    pub f: Integrand,
    pub g: DensityModel,
}

/// Mixture moments over `domain`: `first_i = alpha_i ∫ f_i` and
/// `second_i = alpha_i^2 ∫ f_i^2 / g_i`.
pub fn compute_mixture_moments(
    domain: &BoxDomain,
    components: &[MixtureComponent],
    cfg: &QuadratureConfig,
) -> Result<MomentSet, MomentError> {
    if components.is_empty() {
        return Err(MomentError::InvalidArgument("mixture has no components".into()));
    }
    let alpha_sum: f64 = components.iter().map(|c| c.alpha).sum();
    if (alpha_sum - 1.0).abs() > 1e-12 || components.iter().any(|c| !(c.alpha >= 0.0)) {
        return Err(MomentError::InvalidArgument(format!(
            "mixture coefficients must be nonnegative and sum to 1 (sum = {alpha_sum})"
        )));
    }
    let mut first_moments = Vec::with_capacity(components.len());
    let mut second_moments = Vec::with_capacity(components.len());
    let mut error_bounds = Vec::with_capacity(components.len());
    for (index, c) in components.iter().enumerate() {
        if c.f.dim() != domain.dim() || c.g.dim() != domain.dim() {
            return Err(MomentError::InvalidArgument(format!("component {index}: dimension mismatch")));
        }
        let support = c.g.support();
        if domain.intersect(support).as_ref() != Some(support) {
            return Err(MomentError::InvalidArgument(format!(
                "component {index}: density support {support:?} leaves the domain"
            )));
        }
        let cell_err = |source| MomentError::Cell { index, source };
        let mut breaks = integrand_breaks(&c.f, domain.dim());
        for (k, b) in breaks.iter_mut().enumerate() {
            b.push(support.lower()[k]);
            b.push(support.upper()[k]);
            b.extend(c.g.breakpoints(k));
        }
        let first = integrate_pieces(|x| c.f.eval(x), domain, &breaks, cfg).map_err(cell_err)?;
        let mismatch = Cell::new(false);
        let mut ratio = Estimate { value: 0.0, error: 0.0 };
        for piece in pieces(domain, &breaks) {
            let inside = support.intersect(&piece).as_ref() == Some(&piece);
            let est = if inside {
                integrate(
                    |x| {
                        let v = c.f.eval(x);
                        if v == 0.0 {
                            return 0.0;
                        }
                        let g = c.g.pdf(x);
                        if g < DENSITY_FLOOR {
                            mismatch.set(true);
                            return 0.0;
                        }
                        v * v / g
                    },
                    &piece,
                    cfg,
                )
                .map_err(cell_err)?
            } else {
                let outside = integrate(|x| c.f.eval(x).powi(2), &piece, cfg).map_err(cell_err)?;
                if outside.value > cfg.abs_tol {
                    return Err(MomentError::SupportMismatch { index });
                }
                outside
            };
            ratio.value += est.value;
            ratio.error += est.error;
        }
        if mismatch.get() {
            return Err(MomentError::SupportMismatch { index });
        }
        let a2 = c.alpha * c.alpha;
        first_moments.push(c.alpha * first.value);
        second_moments.push(a2 * ratio.value);
        error_bounds.push(c.alpha * first.error + a2 * ratio.error);
    }
    let mu = first_moments.iter().sum();
    Ok(MomentSet { mu, first_moments, second_moments, error_bounds })
}
