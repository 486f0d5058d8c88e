//! Axis-aligned box domains, tensor-grid partitions and the elementary
//! (normalized indicator) basis built on them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("not found: {0}")]
    NotFound(String),
}

/// Closed box `[lower[0], upper[0]] x ... x [lower[d-1], upper[d-1]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, DomainError> {
        if lower.is_empty() {
            return Err(DomainError::InvalidArgument("box dimension must be >= 1".into()));
        }
        if lower.len() != upper.len() {
            return Err(DomainError::InvalidArgument(format!(
                "lower has {} coordinates, upper has {}",
                lower.len(),
                upper.len()
            )));
        }
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(DomainError::InvalidArgument(format!(
                    "axis {k}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Unit interval / unit square shorthand used throughout the tests.
    pub fn unit(dim: usize) -> Self {
        Self { lower: vec![0.0; dim], upper: vec![1.0; dim] }
    }

    pub fn interval(a: f64, b: f64) -> Result<Self, DomainError> {
        Self::new(vec![a], vec![b])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn measure(&self) -> f64 {
        (0..self.dim()).map(|k| self.width(k)).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Intersection with another box of the same dimension, `None` when the
    /// overlap has empty interior.
    pub fn intersect(&self, other: &BoxDomain) -> Option<BoxDomain> {
        if self.dim() != other.dim() {
            return None;
        }
        let lower: Vec<f64> = self.lower.iter().zip(&other.lower).map(|(a, b)| a.max(*b)).collect();
        let upper: Vec<f64> = self.upper.iter().zip(&other.upper).map(|(a, b)| a.min(*b)).collect();
        if lower.iter().zip(&upper).all(|(lo, hi)| lo < hi) {
            Some(BoxDomain { lower, upper })
        } else {
            None
        }
    }

    /// Maps a point of the unit cube affinely onto the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(k, t)| self.lower[k] + t * self.width(k))
            .collect()
    }

    /// Splits along `axis` at `at`, which must lie strictly inside.
    pub fn split(&self, axis: usize, at: f64) -> (BoxDomain, BoxDomain) {
        let mut left = self.clone();
        let mut right = self.clone();
        left.upper[axis] = at;
        right.lower[axis] = at;
        (left, right)
    }

    pub fn longest_axis(&self) -> usize {
        (0..self.dim())
            .max_by(|a, b| self.width(*a).total_cmp(&self.width(*b)))
            .unwrap_or(0)
    }
}

/// Tensor-grid partition of a box into non-overlapping cells.
///
/// Cells are stored row-major with the last axis varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Partition {
    domain: BoxDomain,
    breaks: Vec<Vec<f64>>,
    cells: Vec<BoxDomain>,
    measures: Vec<f64>,
}

impl Partition {
    /// Builds the grid from explicit per-axis breakpoints. Each axis list must
    /// be strictly increasing.
    pub fn from_breaks(breaks: Vec<Vec<f64>>) -> Result<Self, DomainError> {
        if breaks.is_empty() {
            return Err(DomainError::InvalidArgument("partition needs at least one axis".into()));
        }
        for (k, axis) in breaks.iter().enumerate() {
            if axis.len() < 2 {
                return Err(DomainError::InvalidArgument(format!(
                    "axis {k}: need at least two breakpoints"
                )));
            }
            if axis.iter().any(|b| !b.is_finite()) || axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(DomainError::InvalidArgument(format!(
                    "axis {k}: breakpoints must be finite and strictly increasing"
                )));
            }
        }
        let domain = BoxDomain::new(
            breaks.iter().map(|b| b[0]).collect(),
            breaks.iter().map(|b| *b.last().unwrap()).collect(),
        )?;
        let counts: Vec<usize> = breaks.iter().map(|b| b.len() - 1).collect();
        let total: usize = counts.iter().product();
        let mut cells = Vec::with_capacity(total);
        let mut measures = Vec::with_capacity(total);
        let mut idx = vec![0usize; counts.len()];
        for _ in 0..total {
            let lower: Vec<f64> = idx.iter().enumerate().map(|(k, &i)| breaks[k][i]).collect();
            let upper: Vec<f64> = idx.iter().enumerate().map(|(k, &i)| breaks[k][i + 1]).collect();
            let cell = BoxDomain { lower, upper };
            measures.push(cell.measure());
            cells.push(cell);
            for k in (0..counts.len()).rev() {
                idx[k] += 1;
                if idx[k] < counts[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok(Self { domain, breaks, cells, measures })
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn cells(&self) -> &[BoxDomain] {
        &self.cells
    }

    pub fn measures(&self) -> &[f64] {
        &self.measures
    }

    pub fn breaks(&self) -> &[Vec<f64>] {
        &self.breaks
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Index of the cell containing `x`, using half-open cells `[lo, hi)`
    /// except on the upper domain face. `None` outside the domain.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        if !self.domain.contains(x) {
            return None;
        }
        let mut flat = 0usize;
        for (k, axis) in self.breaks.iter().enumerate() {
            let n = axis.len() - 1;
            let i = axis.partition_point(|b| *b <= x[k]).saturating_sub(1).min(n - 1);
            flat = flat * n + i;
        }
        Some(flat)
    }
}

/// Tensor grid with `counts[k]` equal slabs along axis `k`.
pub fn make_uniform_partition(domain: &BoxDomain, counts: &[usize]) -> Result<Partition, DomainError> {
    if counts.len() != domain.dim() {
        return Err(DomainError::InvalidArgument(format!(
            "counts has {} entries for a {}-dimensional domain",
            counts.len(),
            domain.dim()
        )));
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(DomainError::InvalidArgument(format!("counts[{k}] must be >= 1")));
    }
    let breaks = counts
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let (lo, hi) = (domain.lower()[k], domain.upper()[k]);
            (0..=n)
                .map(|i| if i == n { hi } else { lo + (hi - lo) * i as f64 / n as f64 })
                .collect()
        })
        .collect();
    Partition::from_breaks(breaks)
}

/// `b(x) = height` on `support`, zero elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasisFunction {
    pub support: BoxDomain,
    pub height: f64,
}

impl BasisFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.support.contains(x) {
            self.height
        } else {
            0.0
        }
    }

    pub fn integral(&self) -> f64 {
        self.height * self.support.measure()
    }
}

/// One normalized indicator `|C_i|^{-1} 1_{C_i}` per cell.
pub fn elementary_basis(partition: &Partition) -> Vec<BasisFunction> {
    partition
        .cells()
        .iter()
        .zip(partition.measures())
        .map(|(cell, m)| BasisFunction { support: cell.clone(), height: 1.0 / m })
        .collect()
}
