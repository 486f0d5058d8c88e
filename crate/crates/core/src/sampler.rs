//! Seeded random streams, piecewise-constant sampling and sample allocation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::density::DensityModel;
use crate::domain::Partition;
use crate::estimator::EstimateError;
use crate::weights::WeightVector;

/// Reproducible uniform stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8, whose 64-bit stream parameter gives independent
/// sequences for each component index under one seed.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn fill_uniform(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.uniform();
        }
    }

    /// Draws one point from `g` by pushing a uniform vector through its
    /// inverse CDF.
    pub fn sample(&mut self, g: &DensityModel, scratch: &mut Vec<f64>) -> Vec<f64> {
        scratch.resize(g.dim(), 0.0);
        self.fill_uniform(scratch);
        g.inverse_cdf(scratch)
    }
}

/// Integer split of a sample budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Allocation {
    pub total: usize,
    pub counts: Vec<usize>,
    pub frequencies: Vec<f64>,
}

/// Largest-remainder apportionment of `total` samples; remainder seats go
/// to the largest fractional parts, ties to the lower index.
pub fn allocate(total: usize, frequencies: &WeightVector) -> Allocation {
    let freq = frequencies.values();
    let quotas: Vec<f64> = freq.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..freq.len()).filter(|&i| freq[i] > 0.0).collect();
    let rem = |i: usize| quotas[i] - quotas[i].floor();
    order.sort_by(|&a, &b| rem(b).total_cmp(&rem(a)).then(a.cmp(&b)));
    let mut left = total.saturating_sub(assigned);
    let mut k = 0;
    while left > 0 && !order.is_empty() {
        counts[order[k % order.len()]] += 1;
        left -= 1;
        k += 1;
    }
    // float floors can overshoot by one when a quota rounds up to an integer
    let mut over = counts.iter().sum::<usize>().saturating_sub(total);
    for &i in order.iter().rev() {
        if over == 0 {
            break;
        }
        if counts[i] > 0 {
            counts[i] -= 1;
            over -= 1;
        }
    }
    Allocation { total, counts, frequencies: freq.to_vec() }
}

/// Draws a point from `g = sum_i w_i b_i`; returns the point and its
/// density `w_i / |C_i|`.
pub fn sample_piecewise_constant(
    partition: &Partition,
    weights: &WeightVector,
    rng: &mut RngStream,
) -> Result<(Vec<f64>, f64), EstimateError> {
    let g = piecewise_density(partition, weights)?;
    let mut scratch = Vec::new();
    let x = rng.sample(&g, &mut scratch);
    let p = g.pdf(&x);
    Ok((x, p))
}

pub(crate) fn piecewise_density(partition: &Partition, weights: &WeightVector) -> Result<DensityModel, EstimateError> {
    if weights.values().iter().all(|w| *w == 0.0) {
        return Err(EstimateError::Degenerate("all weights are zero".into()));
    }
    DensityModel::piecewise_constant(partition.clone(), weights.values())
        .map_err(|e| EstimateError::Degenerate(e.to_string()))
}
