//! Variance minimization over the simplex for arbitrary, possibly overlapping,
//! basis densities.
//!
//! The objective `V(a) = ∫ f^2 / g_a - mu^2` with `g_a = sum_i a_i b_i` is
//! convex in `a`; its partial derivatives are `-∫ b_i f^2 / g_a^2`, and an
//! interior optimum equalizes those projections across components.
//!
//! [`minimize`] runs a monotone spectral projected gradient method on a fixed
//! composite Gauss discretization of the objective (a smooth function of the
//! weights, so line searches see no refinement noise). Reported objective
//! values and residuals are recomputed with adaptive quadrature.
//! [`grid_search_oracle`] enumerates a simplex lattice on the same
//! discretization.

use std::cell::Cell;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::DensityModel;
use crate::domain::{elementary_basis, BoxDomain, Partition};
use crate::integrand::Integrand;
use crate::quadrature::{
    integrand_breaks, integrate, integrate_pieces, pieces, GaussLegendre, QuadError, QuadratureConfig, DENSITY_FLOOR,
};
use crate::weights::{Provenance, WeightVector};

/// Composite panels per axis on each smooth piece when tabulating.
const TABULATION_PANELS_1D: usize = 16;
const TABULATION_PANELS_2D: usize = 6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizeError {
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error("support violation: f is nonzero at {point:?} where the mixture density is {g}")]
    SupportViolation { point: Vec<f64>, g: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// Integrand, basis densities and the domain they are combined on.
#[derive(Debug, Clone)]
pub struct ObjectiveSpec {
    f: Integrand,
    bases: Vec<DensityModel>,
    domain: BoxDomain,
    cfg: QuadratureConfig,
    breaks: Vec<Vec<f64>>,
    mu: f64,
}

impl ObjectiveSpec {
    pub fn new(
        f: Integrand,
        bases: Vec<DensityModel>,
        domain: BoxDomain,
        cfg: QuadratureConfig,
    ) -> Result<Self, OptimizeError> {
        if bases.is_empty() {
            return Err(OptimizeError::InvalidArgument("need at least one basis".into()));
        }
        if f.dim() != domain.dim() || bases.iter().any(|b| b.dim() != domain.dim()) {
            return Err(OptimizeError::InvalidArgument("dimension mismatch between f, bases and domain".into()));
        }
        let mut breaks = integrand_breaks(&f, domain.dim());
        for b in &bases {
            for (k, axis) in breaks.iter_mut().enumerate() {
                axis.push(b.support().lower()[k]);
                axis.push(b.support().upper()[k]);
                axis.extend(b.breakpoints(k));
            }
        }
        for axis in &mut breaks {
            axis.sort_by(f64::total_cmp);
            axis.dedup();
        }
        for (i, b) in bases.iter().enumerate() {
            let mass = integrate_pieces(|x| b.pdf(x), &domain, &breaks, &cfg)?.value;
            if (mass - 1.0).abs() > 1e-10 {
                return Err(OptimizeError::InvalidArgument(format!(
                    "basis {i} ({}) integrates to {mass} over the domain",
                    b.id()
                )));
            }
        }
        let mu = integrate_pieces(|x| f.eval(x), &domain, &breaks, &cfg)?.value;
        Ok(Self { f, bases, domain, cfg, breaks, mu })
    }

    /// Non-overlapping elementary basis on `partition`.
    pub fn elementary(f: Integrand, partition: &Partition, cfg: QuadratureConfig) -> Result<Self, OptimizeError> {
        let bases = elementary_basis(partition).into_iter().map(|b| DensityModel::uniform(b.support)).collect();
        Self::new(f, bases, partition.domain().clone(), cfg)
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn bases(&self) -> &[DensityModel] {
        &self.bases
    }

    pub fn integrand(&self) -> &Integrand {
        &self.f
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    fn mixture(&self, weights: &[f64], x: &[f64]) -> f64 {
        self.bases.iter().zip(weights).map(|(b, a)| if *a == 0.0 { 0.0 } else { a * b.pdf(x) }).sum()
    }

    fn check_weights(&self, weights: &WeightVector) -> Result<(), OptimizeError> {
        if weights.len() != self.len() {
            return Err(OptimizeError::InvalidArgument(format!(
                "{} weights for {} bases",
                weights.len(),
                self.len()
            )));
        }
        Ok(())
    }

    /// Integrates `h(x, f(x), g(x))` over the domain, flagging points where
    /// `f != 0` but `g` vanishes.
    fn integrate_ratio(
        &self,
        weights: &[f64],
        h: impl Fn(&[f64], f64, f64) -> f64,
    ) -> Result<f64, OptimizeError> {
        let violation: Cell<Option<(Vec<f64>, f64)>> = Cell::new(None);
        let value = integrate_pieces(
            |x| {
                let fx = self.f.eval(x);
                if fx == 0.0 {
                    return 0.0;
                }
                let g = self.mixture(weights, x);
                if g < DENSITY_FLOOR {
                    violation.set(Some((x.to_vec(), g)));
                    return 0.0;
                }
                h(x, fx, g)
            },
            &self.domain,
            &self.breaks,
            &self.cfg,
        )?
        .value;
        if let Some((point, g)) = violation.take() {
            return Err(OptimizeError::SupportViolation { point, g });
        }
        Ok(value)
    }
}

/// `∫ f^2 / g - mu^2` by adaptive quadrature.
pub fn variance_objective(spec: &ObjectiveSpec, weights: &WeightVector) -> Result<f64, OptimizeError> {
    spec.check_weights(weights)?;
    let second = spec.integrate_ratio(weights.values(), |_, fx, g| fx * fx / g)?;
    Ok(clamp_roundoff(second - spec.mu * spec.mu, spec.mu * spec.mu))
}

fn clamp_roundoff(v: f64, scale: f64) -> f64 {
    if v < 0.0 && v >= -1e-12 * scale.max(1e-300) {
        0.0
    } else {
        v
    }
}

/// Projections `c_i = ∫ b_i f^2 / g^2`; the gradient of the objective is
/// `-c`.
pub fn projection_integrals(spec: &ObjectiveSpec, weights: &WeightVector) -> Result<Vec<f64>, OptimizeError> {
    spec.check_weights(weights)?;
    let w = weights.values();
    (0..spec.len())
        .map(|i| {
            let b = &spec.bases[i];
            let support = b.support();
            // only the part of the domain where b_i is supported contributes
            let mut total = 0.0;
            for piece in pieces(&spec.domain, &spec.breaks) {
                if support.intersect(&piece).is_none() {
                    continue;
                }
                let violation = Cell::new(None);
                let est = integrate(
                    |x| {
                        let bx = b.pdf(x);
                        if bx == 0.0 {
                            return 0.0;
                        }
                        let fx = spec.f.eval(x);
                        if fx == 0.0 {
                            return 0.0;
                        }
                        let g = spec.mixture(w, x);
                        if g < DENSITY_FLOOR {
                            violation.set(Some((x.to_vec(), g)));
                            return 0.0;
                        }
                        bx * fx * fx / (g * g)
                    },
                    &piece,
                    &spec.cfg,
                )?;
                if let Some((point, g)) = violation.take() {
                    return Err(OptimizeError::SupportViolation { point, g });
                }
                total += est.value;
            }
            Ok(total)
        })
        .collect()
}

/// `dV/da_i = -∫ b_i f^2 / g^2`.
pub fn gradient(spec: &ObjectiveSpec, weights: &WeightVector) -> Result<Vec<f64>, OptimizeError> {
    Ok(projection_integrals(spec, weights)?.into_iter().map(|c| -c).collect())
}

/// Spread of the projections over components with positive weight,
/// `max |c_i - c_j| / mean(c)`.
pub fn condition_residual(spec: &ObjectiveSpec, weights: &WeightVector) -> Result<f64, OptimizeError> {
    let c = projection_integrals(spec, weights)?;
    let active: Vec<usize> = (0..c.len()).filter(|&i| weights.values()[i] > 0.0).collect();
    Ok(spread(&c, &active))
}

fn spread(c: &[f64], active: &[usize]) -> f64 {
    if active.len() <= 1 {
        return 0.0;
    }
    let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for &i in active {
        lo = lo.min(c[i]);
        hi = hi.max(c[i]);
        sum += c[i];
    }
    let mean = sum / active.len() as f64;
    if mean == 0.0 {
        0.0
    } else {
        (hi - lo) / mean.abs()
    }
}

/// Euclidean projection onto `{x : x_i >= eps, sum x = 1}`.
pub fn project_to_floored_simplex(y: &[f64], eps: f64) -> Vec<f64> {
    let n = y.len();
    let eps = eps.clamp(0.0, 1.0 / n as f64);
    // shift to the standard simplex of mass 1 - n*eps
    let mass = 1.0 - n as f64 * eps;
    let shifted: Vec<f64> = y.iter().map(|v| v - eps).collect();
    let mut sorted = shifted.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (k, v) in sorted.iter().enumerate() {
        cum += v;
        let t = (cum - mass) / (k + 1) as f64;
        if *v - t > 0.0 {
            tau = t;
        }
    }
    let mut x: Vec<f64> = shifted.iter().map(|v| (v - tau).max(0.0) + eps).collect();
    let residue = 1.0 - x.iter().sum::<f64>();
    if let Some(big) = x.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *big += residue;
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub eps_floor: f64,
    /// Lattice spacing for the grid oracle.
    pub resolution: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iters: 500, eps_floor: 1e-9, resolution: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizerResult {
    pub weights: WeightVector,
    pub objective: f64,
    pub condition_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Components held at the weight floor; excluded from the residual.
    pub boundary: Vec<usize>,
    pub projected_gradient_norm: f64,
    /// Discretized objective after each accepted iterate.
    pub objective_trace: Vec<f64>,
}

/// Objective on a fixed node set, with nodes sharing identical basis values
/// merged into one group.
struct Tabulated {
    /// Groups covered by a single basis collapse to `solo[i] / a_i`.
    solo: Vec<f64>,
    group_weight: Vec<f64>,
    group_start: Vec<usize>,
    entry_index: Vec<usize>,
    entry_value: Vec<f64>,
    mu2: f64,
}

impl Tabulated {
    fn build(spec: &ObjectiveSpec) -> Result<Self, OptimizeError> {
        let rule = GaussLegendre::new(spec.cfg.base_order);
        let panels = if spec.domain.dim() == 1 { TABULATION_PANELS_1D } else { TABULATION_PANELS_2D };
        let mut groups: BTreeMap<Vec<(usize, u64)>, f64> = BTreeMap::new();
        let mut uncovered = None;
        for piece in pieces(&spec.domain, &spec.breaks) {
            let grid: Vec<Vec<f64>> = (0..piece.dim())
                .map(|k| {
                    let (lo, hi) = (piece.lower()[k], piece.upper()[k]);
                    (0..=panels).map(|j| lo + (hi - lo) * j as f64 / panels as f64).collect()
                })
                .collect();
            let panel_grid = Partition::from_breaks(grid).map_err(|e| OptimizeError::InvalidArgument(e.to_string()))?;
            for panel in panel_grid.cells() {
                rule.for_each_node(panel, |x, w| {
                    let fx = spec.f.eval(x);
                    if fx == 0.0 {
                        return;
                    }
                    let key: Vec<(usize, u64)> = spec
                        .bases
                        .iter()
                        .enumerate()
                        .filter_map(|(i, b)| {
                            let v = b.pdf(x);
                            (v > 0.0).then_some((i, v.to_bits()))
                        })
                        .collect();
                    if key.is_empty() {
                        uncovered = Some(x.to_vec());
                        return;
                    }
                    *groups.entry(key).or_insert(0.0) += w * fx * fx;
                });
            }
        }
        if let Some(point) = uncovered {
            return Err(OptimizeError::SupportViolation { point, g: 0.0 });
        }
        let mut t = Tabulated {
            solo: vec![0.0; spec.len()],
            group_weight: Vec::with_capacity(groups.len()),
            group_start: vec![0],
            entry_index: Vec::new(),
            entry_value: Vec::new(),
            mu2: spec.mu * spec.mu,
        };
        for (key, w) in groups {
            if let [(i, bits)] = key[..] {
                t.solo[i] += w / f64::from_bits(bits);
                continue;
            }
            t.group_weight.push(w);
            for (i, bits) in key {
                t.entry_index.push(i);
                t.entry_value.push(f64::from_bits(bits));
            }
            t.group_start.push(t.entry_index.len());
        }
        Ok(t)
    }

    #[inline]
    fn density(&self, g: usize, a: &[f64]) -> f64 {
        let (s, e) = (self.group_start[g], self.group_start[g + 1]);
        let mut d = 0.0;
        for k in s..e {
            d += a[self.entry_index[k]] * self.entry_value[k];
        }
        d
    }

    fn solo_sum(&self, a: &[f64]) -> f64 {
        let mut total = 0.0;
        for (w, ai) in self.solo.iter().zip(a) {
            if *w > 0.0 {
                if *ai <= 0.0 {
                    return f64::INFINITY;
                }
                total += w / ai;
            }
        }
        total
    }

    /// `∫ f^2 / g_a` on the node set; `inf` where a supported group loses
    /// all its mass.
    fn second_moment(&self, a: &[f64]) -> f64 {
        self.second_moment_below(a, f64::INFINITY)
    }

    /// As [`Self::second_moment`], stopping early once the sum reaches
    /// `bound` (all terms are positive).
    fn second_moment_below(&self, a: &[f64], bound: f64) -> f64 {
        let mut total = self.solo_sum(a);
        if total >= bound {
            return total;
        }
        for g in 0..self.group_weight.len() {
            let d = self.density(g, a);
            if d <= 0.0 {
                return f64::INFINITY;
            }
            total += self.group_weight[g] / d;
            if total >= bound {
                return total;
            }
        }
        total
    }

    /// Returns `∫ f^2/g_a` and the projections `c_i`.
    fn with_projections(&self, a: &[f64]) -> (f64, Vec<f64>) {
        let mut c: Vec<f64> = self.solo.iter().zip(a).map(|(w, ai)| if *w > 0.0 { w / (ai * ai) } else { 0.0 }).collect();
        let mut total = self.solo_sum(a);
        for g in 0..self.group_weight.len() {
            let d = self.density(g, a);
            let w = self.group_weight[g];
            total += w / d;
            let q = w / (d * d);
            for k in self.group_start[g]..self.group_start[g + 1] {
                c[self.entry_index[k]] += q * self.entry_value[k];
            }
        }
        (total, c)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn active_set(a: &[f64], eps: f64) -> Vec<usize> {
    (0..a.len()).filter(|&i| a[i] > 2.0 * eps).collect()
}

fn projected_gradient_norm(a: &[f64], c: &[f64], active: &[usize], eps: f64) -> f64 {
    let scale = active.iter().map(|&i| c[i]).sum::<f64>() / active.len().max(1) as f64;
    if !(scale > 0.0) {
        return 0.0;
    }
    let trial: Vec<f64> = a.iter().zip(c).map(|(x, ci)| x + ci / scale).collect();
    project_to_floored_simplex(&trial, eps)
        .iter()
        .zip(a)
        .map(|(p, x)| (p - x).abs())
        .fold(0.0, f64::max)
}

/// Spectral projected gradient descent with Armijo backtracking.
pub fn minimize(
    spec: &ObjectiveSpec,
    init: Option<&WeightVector>,
    opts: &OptimizerOptions,
) -> Result<OptimizerResult, OptimizeError> {
    let n = spec.len();
    let eps = opts.eps_floor;
    if !(eps >= 0.0 && eps * (n as f64) < 1.0) {
        return Err(OptimizeError::InvalidArgument(format!("eps_floor = {eps} is infeasible for {n} bases")));
    }
    let table = Tabulated::build(spec)?;
    let start = match init {
        Some(w) => {
            spec.check_weights(w)?;
            w.values().to_vec()
        }
        None => vec![1.0 / n as f64; n],
    };
    let mut a = project_to_floored_simplex(&start, eps);
    let (mut j, mut c) = table.with_projections(&a);
    if !j.is_finite() {
        return Err(OptimizeError::InvalidArgument("objective is infinite at the starting point".into()));
    }
    let mut trace = vec![j - table.mu2];
    let mut step = 1.0 / c.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut converged = false;
    let mut iterations = 0;
    let mut pg = f64::INFINITY;
    while iterations < opts.max_iters {
        let active = active_set(&a, eps);
        pg = projected_gradient_norm(&a, &c, &active, eps);
        if spread(&c, &active) <= opts.tol || pg <= opts.tol {
            converged = true;
            break;
        }
        iterations += 1;
        // gradient is -c
        let trial: Vec<f64> = a.iter().zip(&c).map(|(x, ci)| x + step * ci).collect();
        let target = project_to_floored_simplex(&trial, eps);
        let d: Vec<f64> = target.iter().zip(&a).map(|(p, x)| p - x).collect();
        let slope = -dot(&c, &d);
        if !(slope < 0.0) {
            break;
        }
        let mut t = 1.0;
        let next = loop {
            let cand: Vec<f64> = a.iter().zip(&d).map(|(x, di)| x + t * di).collect();
            let jn = table.second_moment(&cand);
            if jn.is_finite() && jn <= j + 1e-4 * t * slope {
                break Some((cand, jn));
            }
            t *= 0.5;
            if t < 1e-20 {
                break None;
            }
        };
        let Some((a_next, j_next)) = next else { break };
        let (_, c_next) = table.with_projections(&a_next);
        let s: Vec<f64> = a_next.iter().zip(&a).map(|(x, y)| x - y).collect();
        // y = grad_next - grad = c - c_next
        let yv: Vec<f64> = c.iter().zip(&c_next).map(|(p, q)| p - q).collect();
        let sy = dot(&s, &yv);
        step = if sy > 0.0 { (dot(&s, &s) / sy).clamp(1e-12, 1e12) } else { (step * 2.0).min(1e12) };
        a = a_next;
        j = j_next;
        c = c_next;
        trace.push(j - table.mu2);
    }
    finish(spec, a, eps, iterations, converged, pg, trace)
}

fn finish(
    spec: &ObjectiveSpec,
    a: Vec<f64>,
    eps: f64,
    iterations: usize,
    converged: bool,
    pg: f64,
    trace: Vec<f64>,
) -> Result<OptimizerResult, OptimizeError> {
    let weights = WeightVector::from_parts(a, Provenance::Optimizer, None);
    let objective = variance_objective(spec, &weights)?;
    let active = active_set(weights.values(), eps);
    let boundary = (0..weights.len()).filter(|i| !active.contains(i)).collect();
    let c = projection_integrals(spec, &weights)?;
    let condition_residual = spread(&c, &active);
    Ok(OptimizerResult {
        weights,
        objective,
        condition_residual,
        iterations,
        converged,
        boundary,
        projected_gradient_norm: pg,
        objective_trace: trace,
    })
}

/// Exhaustive minimization over the lattice `{k / K : sum k = K}` with
/// `K = round(1 / resolution)`, each point floored at `eps_floor` and
/// renormalized. Only for up to four bases.
pub fn grid_search_oracle(
    spec: &ObjectiveSpec,
    resolution: f64,
    eps_floor: f64,
) -> Result<OptimizerResult, OptimizeError> {
    let n = spec.len();
    if n > 4 {
        return Err(OptimizeError::Unsupported(format!("grid oracle supports at most 4 bases, got {n}")));
    }
    if !(1e-3..=1.0).contains(&resolution) {
        return Err(OptimizeError::InvalidArgument(format!("resolution {resolution} outside [1e-3, 1]")));
    }
    let table = Tabulated::build(spec)?;
    let steps = (1.0 / resolution).round() as usize;
    let inv = 1.0 / steps as f64;
    let mut search = LatticeSearch {
        table: &table,
        eps: eps_floor,
        inv,
        k: vec![0; n],
        a: vec![0.0; n],
        best: f64::INFINITY,
        best_k: vec![0; n],
        evaluated: 0,
    };
    search.visit(0, steps);
    let best: Vec<f64> = search.best_k.iter().map(|&k| (k as f64 * inv).max(eps_floor)).collect();
    let z: f64 = best.iter().sum();
    oracle_result(spec, best.iter().map(|v| v / z).collect(), eps_floor, search.evaluated)
}

struct LatticeSearch<'a> {
    table: &'a Tabulated,
    eps: f64,
    inv: f64,
    k: Vec<usize>,
    a: Vec<f64>,
    best: f64,
    best_k: Vec<usize>,
    evaluated: usize,
}

impl LatticeSearch<'_> {
    fn visit(&mut self, pos: usize, left: usize) {
        let n = self.k.len();
        if pos + 1 == n {
            self.k[pos] = left;
            self.a[pos] = (left as f64 * self.inv).max(self.eps);
            // J is homogeneous of degree -1, so J(a / z) = z J(a)
            let z: f64 = self.a.iter().sum();
            let j = z * self.table.second_moment_below(&self.a, self.best / z);
            self.evaluated += 1;
            if j < self.best {
                self.best = j;
                self.best_k.copy_from_slice(&self.k);
            }
            return;
        }
        for v in 0..=left {
            self.k[pos] = v;
            self.a[pos] = (v as f64 * self.inv).max(self.eps);
            self.visit(pos + 1, left - v);
        }
    }
}

fn oracle_result(spec: &ObjectiveSpec, a: Vec<f64>, eps: f64, evaluated: usize) -> Result<OptimizerResult, OptimizeError> {
    let a = project_to_floored_simplex(&a, eps);
    let mut r = finish(spec, a, eps, evaluated, true, f64::NAN, Vec::new())?;
    r.projected_gradient_norm = f64::NAN;
    Ok(r)
}
