//! Sampleable probability densities with exact inverse CDFs.

use serde_json::Value;

use crate::domain::{BoxDomain, DomainError, Partition};
use crate::integrand::{number, reject_unknown, Params};

/// Absolute slack allowed on `sum(weights) == 1`.
pub const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Uniform,
    PiecewiseConstant {
        partition: Partition,
        weights: Vec<f64>,
        heights: Vec<f64>,
        /// `cdf[i]` is the mass of cells `0..i`; `cdf[n] == 1`.
        cdf: Vec<f64>,
    },
    PowerRamp { k: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityModel {
    id: String,
    support: BoxDomain,
    kind: Kind,
}

impl DensityModel {
    pub fn uniform(support: BoxDomain) -> Self {
        Self { id: "uniform".into(), support, kind: Kind::Uniform }
    }

    /// `g = sum_i w_i b_i` over the elementary basis of `partition`.
    pub fn piecewise_constant(partition: Partition, weights: &[f64]) -> Result<Self, DomainError> {
        if weights.len() != partition.len() {
            return Err(DomainError::InvalidArgument(format!(
                "{} weights for {} cells",
                weights.len(),
                partition.len()
            )));
        }
        check_simplex(weights)?;
        let total: f64 = weights.iter().sum();
        let mut cdf = Vec::with_capacity(weights.len() + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for w in weights {
            acc += w;
            cdf.push(acc / total);
        }
        *cdf.last_mut().unwrap() = 1.0;
        let heights = weights.iter().zip(partition.measures()).map(|(w, m)| w / m).collect();
        Ok(Self {
            id: "piecewise_constant".into(),
            support: partition.domain().clone(),
            kind: Kind::PiecewiseConstant { partition, weights: weights.to_vec(), heights, cdf },
        })
    }

    /// `pdf(x) ∝ x^k` on `[a, b]` with `0 <= a < b`.
    pub fn power_ramp(a: f64, b: f64, k: f64) -> Result<Self, DomainError> {
        if !(k.is_finite() && k >= 0.0) {
            return Err(DomainError::InvalidArgument(format!("power_ramp: exponent k = {k} must be >= 0")));
        }
        if a < 0.0 {
            return Err(DomainError::InvalidArgument("power_ramp: support must lie in x >= 0".into()));
        }
        Ok(Self { id: "power_ramp".into(), support: BoxDomain::interval(a, b)?, kind: Kind::PowerRamp { k } })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Support box; the pdf vanishes outside it.
    pub fn support(&self) -> &BoxDomain {
        &self.support
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        if !self.support.contains(x) {
            return 0.0;
        }
        match &self.kind {
            Kind::Uniform => 1.0 / self.support.measure(),
            Kind::PiecewiseConstant { partition, heights, .. } => {
                partition.locate(x).map_or(0.0, |i| heights[i])
            }
            Kind::PowerRamp { k } => {
                let (a, b) = (self.support.lower()[0], self.support.upper()[0]);
                (k + 1.0) * x[0].powf(*k) / (b.powf(k + 1.0) - a.powf(k + 1.0))
            }
        }
    }

    /// Maps a point of the unit cube to the support so that uniform input
    /// yields samples distributed by `pdf`.
    pub fn inverse_cdf(&self, u: &[f64]) -> Vec<f64> {
        match &self.kind {
            Kind::Uniform => self.support.from_unit(u),
            Kind::PiecewiseConstant { partition, cdf, .. } => {
                let n = partition.len();
                // First cell whose upper cumulative mass exceeds u0; zero-mass
                // cells have cdf[i+1] == cdf[i] and are never selected.
                let mut i = cdf[1..].partition_point(|c| *c <= u[0]).min(n - 1);
                while cdf[i + 1] <= cdf[i] && i > 0 {
                    i -= 1;
                }
                let mass = cdf[i + 1] - cdf[i];
                let r = ((u[0] - cdf[i]) / mass).clamp(0.0, 1.0 - f64::EPSILON / 2.0);
                let mut local = u.to_vec();
                local[0] = r;
                partition.cells()[i].from_unit(&local)
            }
            Kind::PowerRamp { k } => {
                let (a, b) = (self.support.lower()[0], self.support.upper()[0]);
                let p = k + 1.0;
                let (pa, pb) = (a.powf(p), b.powf(p));
                vec![(pa + u[0] * (pb - pa)).powf(1.0 / p).clamp(a, b)]
            }
        }
    }

    /// Interior discontinuities of the pdf along `axis`.
    pub fn breakpoints(&self, axis: usize) -> Vec<f64> {
        match &self.kind {
            Kind::PiecewiseConstant { partition, .. } => {
                let b = &partition.breaks()[axis];
                b[1..b.len() - 1].to_vec()
            }
            _ => Vec::new(),
        }
    }

    /// Cell weights, for piecewise-constant densities.
    pub fn cell_weights(&self) -> Option<&[f64]> {
        match &self.kind {
            Kind::PiecewiseConstant { weights, .. } => Some(weights),
            _ => None,
        }
    }
}

pub(crate) fn check_simplex(values: &[f64]) -> Result<(), DomainError> {
    if values.is_empty() {
        return Err(DomainError::InvalidArgument("weight vector is empty".into()));
    }
    if let Some(i) = values.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(DomainError::InvalidArgument(format!(
            "weight {i} = {} is not a finite nonnegative number",
            values[i]
        )));
    }
    let total: f64 = values.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(DomainError::InvalidArgument(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

fn number_list(params: &Params, key: &str) -> Result<Option<Vec<f64>>, DomainError> {
    match params.get(key) {
        None => Ok(None),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_f64())
            .collect::<Option<Vec<f64>>>()
            .map(Some)
            .ok_or_else(|| DomainError::InvalidArgument(format!("'{key}' must be an array of numbers"))),
        Some(_) => Err(DomainError::InvalidArgument(format!("'{key}' must be an array"))),
    }
}

fn support_box(params: &Params, dim_hint: usize) -> Result<BoxDomain, DomainError> {
    let lower = number_list(params, "lower")?.unwrap_or_else(|| vec![0.0; dim_hint]);
    let upper = number_list(params, "upper")?.unwrap_or_else(|| vec![1.0; lower.len()]);
    BoxDomain::new(lower, upper)
}

/// Builds a density from the built-in family.
///
/// * `uniform`: `{lower, upper}` (defaults to the unit interval)
/// * `piecewise_constant`: `{breaks: [[..], ..], weights}` or
///   `{lower, upper, counts, weights}`
/// * `power_ramp`: `{k, a, b}` with defaults `k = 1` on `[0, 1]`
pub fn catalog_density(id: &str, params: &Params) -> Result<DensityModel, DomainError> {
    match id {
        "uniform" => {
            reject_unknown(id, params, &["lower", "upper"])?;
            Ok(DensityModel::uniform(support_box(params, 1)?))
        }
        "power_ramp" => {
            reject_unknown(id, params, &["k", "a", "b"])?;
            DensityModel::power_ramp(number(params, "a", 0.0)?, number(params, "b", 1.0)?, number(params, "k", 1.0)?)
        }
        "piecewise_constant" => {
            reject_unknown(id, params, &["breaks", "lower", "upper", "counts", "weights"])?;
            let weights = number_list(params, "weights")?
                .ok_or_else(|| DomainError::InvalidArgument("piecewise_constant: missing weights".into()))?;
            let partition = match params.get("breaks") {
                Some(Value::Array(axes)) => {
                    let breaks = axes
                        .iter()
                        .map(|a| {
                            a.as_array()
                                .and_then(|xs| xs.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
                                .ok_or_else(|| DomainError::InvalidArgument("breaks must be arrays of numbers".into()))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    Partition::from_breaks(breaks)?
                }
                Some(_) => return Err(DomainError::InvalidArgument("breaks must be an array".into())),
                None => {
                    let counts = number_list(params, "counts")?
                        .ok_or_else(|| DomainError::InvalidArgument("piecewise_constant: need breaks or counts".into()))?;
                    let counts = counts
                        .iter()
                        .map(|c| {
                            if c.fract() == 0.0 && *c >= 1.0 {
                                Ok(*c as usize)
                            } else {
                                Err(DomainError::InvalidArgument(format!("count {c} must be a positive integer")))
                            }
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    crate::domain::make_uniform_partition(&support_box(params, counts.len())?, &counts)?
                }
            };
            DensityModel::piecewise_constant(partition, &weights)
        }
        other => Err(DomainError::NotFound(format!("unknown density id '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::make_uniform_partition;
    use serde_json::json;

    fn params(v: Value) -> Params {
        v.as_object().cloned().unwrap()
    }

    #[test]
    fn uniform_identity_map() {
        let g = catalog_density("uniform", &params(json!({"lower": [0.0], "upper": [1.0]}))).unwrap();
        assert_eq!(g.pdf(&[0.3]), 1.0);
        assert_eq!(g.inverse_cdf(&[0.3]), vec![0.3]);
        assert_eq!(g.pdf(&[1.3]), 0.0);
    }

    #[test]
    fn power_ramp_linear() {
        let g = catalog_density("power_ramp", &params(json!({"k": 1}))).unwrap();
        assert_eq!(g.pdf(&[0.25]), 0.5);
        assert_eq!(g.inverse_cdf(&[0.25]), vec![0.5]);
        for u in [0.01, 0.2, 0.64, 0.99] {
            let x = g.inverse_cdf(&[u])[0];
            assert!((x - f64::sqrt(u)).abs() < 1e-15);
        }
    }

    #[test]
    fn piecewise_heights() {
        let p = make_uniform_partition(&BoxDomain::unit(1), &[2]).unwrap();
        let g = DensityModel::piecewise_constant(p, &[0.25, 0.75]).unwrap();
        assert_eq!(g.pdf(&[0.1]), 0.5);
        assert_eq!(g.pdf(&[0.9]), 1.5);
        assert_eq!(g.breakpoints(0), vec![0.5]);
    }

    #[test]
    fn piecewise_skips_zero_mass_cells() {
        let p = make_uniform_partition(&BoxDomain::unit(1), &[4]).unwrap();
        let g = DensityModel::piecewise_constant(p, &[0.0, 0.5, 0.0, 0.5]).unwrap();
        for i in 0..=1000 {
            let u = i as f64 / 1000.0 * (1.0 - 1e-12);
            let x = g.inverse_cdf(&[u]);
            assert!(g.pdf(&x) > 0.0, "u = {u} -> {x:?}");
        }
        let g = DensityModel::piecewise_constant(
            make_uniform_partition(&BoxDomain::unit(1), &[3]).unwrap(),
            &[0.5, 0.5, 0.0],
        )
        .unwrap();
        assert!(g.pdf(&g.inverse_cdf(&[1.0 - 1e-17])) > 0.0);
    }

    #[test]
    fn off_simplex_weights_rejected() {
        let p = make_uniform_partition(&BoxDomain::unit(1), &[2]).unwrap();
        assert!(DensityModel::piecewise_constant(p.clone(), &[0.5, 0.6]).is_err());
        assert!(DensityModel::piecewise_constant(p.clone(), &[1.5, -0.5]).is_err());
        assert!(DensityModel::piecewise_constant(p, &[1.0]).is_err());
        let err = catalog_density(
            "piecewise_constant",
            &params(json!({"counts": [2], "weights": [0.2, 0.2]})),
        )
        .unwrap_err();
        assert!(matches!(err, DomainError::InvalidArgument(_)));
    }

    #[test]
    fn unknown_density_not_found() {
        assert!(matches!(
            catalog_density("beta", &Params::new()).unwrap_err(),
            DomainError::NotFound(_)
        ));
    }

    #[test]
    fn inverse_cdf_monotone_on_grid() {
        let dens = [
            catalog_density("power_ramp", &params(json!({"k": 2.5, "a": 0.5, "b": 2.0}))).unwrap(),
            catalog_density("piecewise_constant", &params(json!({"breaks": [[0.0, 0.1, 0.7, 1.0]], "weights": [0.2, 0.0, 0.8]})))
                .unwrap(),
            catalog_density("uniform", &params(json!({"lower": [-1.0], "upper": [3.0]}))).unwrap(),
        ];
        for g in &dens {
            let xs: Vec<f64> = (0..=2000).map(|i| g.inverse_cdf(&[i as f64 / 2000.0])[0]).collect();
            assert!(xs.windows(2).all(|w| w[0] <= w[1]), "{}", g.id());
        }
    }

    #[test]
    fn two_dimensional_piecewise() {
        let p = make_uniform_partition(&BoxDomain::unit(2), &[2, 2]).unwrap();
        let g = DensityModel::piecewise_constant(p, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!((g.pdf(&[0.75, 0.75]) - 1.6).abs() < 1e-15);
        let x = g.inverse_cdf(&[0.95, 0.5]);
        assert!(x[0] >= 0.5 && x[1] >= 0.5);
    }
}
