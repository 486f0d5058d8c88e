//! Unbiased Monte Carlo estimators: plain importance sampling from a
//! piecewise-constant density, stratified mixture sampling with per-component
//! weights, and the balance-heuristic multiple importance sampling estimator.

use serde::Serialize;
use thiserror::Error;

use crate::density::DensityModel;
use crate::domain::Partition;
use crate::integrand::Integrand;
use crate::quadrature::{MixtureComponent, DENSITY_FLOOR};
use crate::sampler::{allocate, piecewise_density, RngStream};
use crate::weights::WeightVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    PlainIs,
    MixtureIs,
    BalanceMis,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error("support violation in component {component}: f = {f} at {point:?} where the sampling density is {g}")]
    SupportViolation { component: usize, point: Vec<f64>, f: f64, g: f64 },
    #[error("degenerate sampling density: {0}")]
    Degenerate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub estimator_kind: EstimatorKind,
    pub mean: f64,
    /// Unbiased sample variance of the per-sample weights.
    pub empirical_variance: f64,
    pub empirical_variance_of_mean: f64,
    /// Analytic per-sample variance, when known.
    pub predicted_variance: Option<f64>,
    pub predicted_variance_of_mean: Option<f64>,
    pub n_samples: usize,
    pub seed: u64,
    /// Samples drawn per component (one entry for plain IS).
    pub counts: Vec<usize>,
}

impl EstimateReport {
    /// Attaches the analytic per-sample variance `V`; the mean's variance is `V / N`.
    pub fn with_prediction(mut self, per_sample_variance: f64) -> Self {
        self.predicted_variance = Some(per_sample_variance);
        self.predicted_variance_of_mean = Some(per_sample_variance / self.n_samples as f64);
        self
    }
}

/// Running mean / M2 accumulator, fed in a fixed order.
#[derive(Debug, Default, Clone)]
struct Moments {
    n: usize,
    sum: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, w: f64) {
        self.n += 1;
        self.sum += w;
        let delta = w - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (w - self.mean);
    }

    fn finish(self, kind: EstimatorKind, seed: u64, counts: Vec<usize>) -> EstimateReport {
        let n = self.n;
        let mean = if n > 0 { self.sum / n as f64 } else { 0.0 };
        let var = if n > 1 { (self.m2 / (n - 1) as f64).max(0.0) } else { 0.0 };
        EstimateReport {
            estimator_kind: kind,
            mean,
            empirical_variance: var,
            empirical_variance_of_mean: if n > 0 { var / n as f64 } else { 0.0 },
            predicted_variance: None,
            predicted_variance_of_mean: None,
            n_samples: n,
            seed,
            counts,
        }
    }
}

/// `num / den`, or a support violation when the density vanishes under a
/// nonzero integrand value.
fn ratio(component: usize, x: &[f64], num: f64, den: f64) -> Result<f64, EstimateError> {
    if den < DENSITY_FLOOR {
        if num != 0.0 {
            return Err(EstimateError::SupportViolation { component, point: x.to_vec(), f: num, g: den });
        }
        return Ok(0.0);
    }
    Ok(num / den)
}

fn check_n(n: usize) -> Result<(), EstimateError> {
    if n == 0 {
        Err(EstimateError::InvalidArgument("sample count must be >= 1".into()))
    } else {
        Ok(())
    }
}

/// `(1/N) sum f(X_j) / g(X_j)` with `X_j ~ g = sum_i w_i b_i`.
pub fn estimate_plain_is(
    f: &Integrand,
    partition: &Partition,
    weights: &WeightVector,
    n: usize,
    rng: &mut RngStream,
) -> Result<EstimateReport, EstimateError> {
    check_n(n)?;
    let g = piecewise_density(partition, weights)?;
    let mut acc = Moments::default();
    let mut scratch = Vec::new();
    for _ in 0..n {
        let x = rng.sample(&g, &mut scratch);
        acc.push(ratio(0, &x, f.eval(&x), g.pdf(&x))?);
    }
    Ok(acc.finish(EstimatorKind::PlainIs, rng.seed(), vec![n]))
}

/// Stratified mixture estimator: exactly `N_i` draws from `g_i`, each
/// weighted by `(alpha_i / freq_i) f_i / g_i`. Component `i` uses stream
/// `i` under `seed`.
pub fn estimate_mixture_is(
    components: &[MixtureComponent],
    frequencies: &WeightVector,
    n: usize,
    seed: u64,
) -> Result<EstimateReport, EstimateError> {
    check_n(n)?;
    if components.len() != frequencies.len() {
        return Err(EstimateError::InvalidArgument(format!(
            "{} frequencies for {} components",
            frequencies.len(),
            components.len()
        )));
    }
    let alloc = allocate(n, frequencies);
    let mut acc = Moments::default();
    let mut scratch = Vec::new();
    for (i, (c, &count)) in components.iter().zip(&alloc.counts).enumerate() {
        if count == 0 {
            continue;
        }
        let scale = c.alpha / frequencies.values()[i];
        let mut rng = RngStream::new(seed, i as u64);
        for _ in 0..count {
            let x = rng.sample(&c.g, &mut scratch);
            acc.push(scale * ratio(i, &x, c.f.eval(&x), c.g.pdf(&x))?);
        }
    }
    Ok(acc.finish(EstimatorKind::MixtureIs, seed, alloc.counts))
}

/// Balance-heuristic estimator: stratified draws from each proposal, every
/// sample weighted by `f(x) / sum_j freq_j g_j(x)` regardless of origin.
pub fn estimate_balance_mis(
    f: &Integrand,
    proposals: &[DensityModel],
    frequencies: &WeightVector,
    n: usize,
    seed: u64,
) -> Result<EstimateReport, EstimateError> {
    check_n(n)?;
    if proposals.len() != frequencies.len() {
        return Err(EstimateError::InvalidArgument(format!(
            "{} frequencies for {} proposals",
            frequencies.len(),
            proposals.len()
        )));
    }
    let alloc = allocate(n, frequencies);
    let freq = frequencies.values();
    let mut acc = Moments::default();
    let mut scratch = Vec::new();
    for (i, (g, &count)) in proposals.iter().zip(&alloc.counts).enumerate() {
        let mut rng = RngStream::new(seed, i as u64);
        for _ in 0..count {
            let x = rng.sample(g, &mut scratch);
            let mixture: f64 = proposals.iter().zip(freq).map(|(gj, a)| a * gj.pdf(&x)).sum();
            acc.push(ratio(i, &x, f.eval(&x), mixture)?);
        }
    }
    Ok(acc.finish(EstimatorKind::BalanceMis, seed, alloc.counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{make_uniform_partition, BoxDomain};
    use crate::integrand::Shape1d;
    use crate::weights::Provenance;

    fn wv(v: &[f64]) -> WeightVector {
        WeightVector::new(v.to_vec(), Provenance::Custom).unwrap()
    }

    fn linear() -> Integrand {
        Integrand::one_d("linear", Shape1d::Linear)
    }

    #[test]
    fn constant_with_proportional_weights_is_exact() {
        let p = make_uniform_partition(&BoxDomain::unit(1), &[4]).unwrap();
        let f = Integrand::one_d("one", Shape1d::Polynomial(vec![1.0]));
        let r = estimate_plain_is(&f, &p, &wv(&[0.25; 4]), 1000, &mut RngStream::new(5, 0)).unwrap();
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.empirical_variance, 0.0);
        // any valid weights stay unbiased
        let r = estimate_plain_is(&f, &p, &wv(&[0.1, 0.2, 0.3, 0.4]), 100_000, &mut RngStream::new(5, 0)).unwrap();
        assert!((r.mean - 1.0).abs() <= 4.0 * r.empirical_variance_of_mean.sqrt());
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let p = make_uniform_partition(&BoxDomain::unit(1), &[3]).unwrap();
        let w = wv(&[0.2, 0.3, 0.5]);
        let a = estimate_plain_is(&linear(), &p, &w, 5000, &mut RngStream::new(17, 0)).unwrap();
        let b = estimate_plain_is(&linear(), &p, &w, 5000, &mut RngStream::new(17, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        let c = estimate_plain_is(&linear(), &p, &w, 5000, &mut RngStream::new(18, 0)).unwrap();
        assert_ne!(a.mean, c.mean);
    }

    #[test]
    fn perfect_mixture_weights_are_constant() {
        let comps = vec![
            MixtureComponent {
                alpha: 0.5,
                f: Integrand::one_d("one", Shape1d::Polynomial(vec![1.0])),
                g: DensityModel::uniform(BoxDomain::unit(1)),
            },
            MixtureComponent {
                alpha: 0.5,
                f: Integrand::one_d("ramp", Shape1d::Polynomial(vec![0.0, 2.0])),
                g: DensityModel::power_ramp(0.0, 1.0, 1.0).unwrap(),
            },
        ];
        let r = estimate_mixture_is(&comps, &wv(&[0.5, 0.5]), 10_000, 3).unwrap();
        assert_eq!(r.counts, vec![5000, 5000]);
        assert!((r.mean - 1.0).abs() < 1e-12);
        assert!(r.empirical_variance < 1e-24);
    }

    #[test]
    fn mixture_zero_frequency_component_is_skipped() {
        let comps = vec![
            MixtureComponent {
                alpha: 0.5,
                f: Integrand::one_d("zero", Shape1d::Polynomial(vec![0.0])),
                g: DensityModel::uniform(BoxDomain::unit(1)),
            },
            MixtureComponent {
                alpha: 0.5,
                f: Integrand::one_d("ramp", Shape1d::Polynomial(vec![0.0, 2.0])),
                g: DensityModel::power_ramp(0.0, 1.0, 1.0).unwrap(),
            },
        ];
        let r = estimate_mixture_is(&comps, &wv(&[0.0, 1.0]), 1000, 3).unwrap();
        assert_eq!(r.counts, vec![0, 1000]);
        assert!((r.mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn vanishing_density_under_nonzero_f_is_a_violation() {
        assert!(matches!(
            ratio(2, &[0.1], 1.0, 0.0),
            Err(EstimateError::SupportViolation { component: 2, .. })
        ));
        assert_eq!(ratio(0, &[0.1], 0.0, 0.0), Ok(0.0));
        assert_eq!(ratio(0, &[0.1], 3.0, 2.0), Ok(1.5));
    }

    #[test]
    fn balance_mis_examples() {
        let props = vec![DensityModel::uniform(BoxDomain::unit(1)), DensityModel::power_ramp(0.0, 1.0, 1.0).unwrap()];
        let r = estimate_balance_mis(&linear(), &props, &wv(&[0.0, 1.0]), 10_000, 9).unwrap();
        assert!((r.mean - 0.5).abs() < 1e-15);
        assert!(r.empirical_variance < 1e-28);

        let r = estimate_balance_mis(&linear(), &props, &wv(&[0.5, 0.5]), 200_000, 9).unwrap();
        assert!((r.mean - 0.5).abs() <= 4.0 * r.empirical_variance_of_mean.sqrt());
        assert_eq!(r.counts, vec![100_000, 100_000]);
    }

    #[test]
    fn balance_mis_single_proposal_proportional() {
        let f = Integrand::one_d("ramp", Shape1d::Polynomial(vec![0.0, 3.0]));
        let props = vec![DensityModel::power_ramp(0.0, 1.0, 1.0).unwrap()];
        let r = estimate_balance_mis(&f, &props, &wv(&[1.0]), 1000, 1).unwrap();
        assert!((r.mean - 1.5).abs() < 1e-14);
        assert!(r.empirical_variance < 1e-28);
    }

    #[test]
    fn zero_samples_rejected() {
        let p = make_uniform_partition(&BoxDomain::unit(1), &[2]).unwrap();
        assert!(estimate_plain_is(&linear(), &p, &wv(&[0.5, 0.5]), 0, &mut RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn prediction_divides_by_n() {
        let p = make_uniform_partition(&BoxDomain::unit(1), &[2]).unwrap();
        let r = estimate_plain_is(&linear(), &p, &wv(&[0.25, 0.75]), 100, &mut RngStream::new(1, 0))
            .unwrap()
            .with_prediction(1.0 / 36.0);
        assert_eq!(r.predicted_variance_of_mean, Some(1.0 / 3600.0));
    }
}
