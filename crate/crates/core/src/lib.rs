//! Importance-sampling weight optimization: partitions and basis densities,
//! adaptive moment quadrature, closed-form and numerical optimal weights,
//! seeded estimators and a JSON-driven benchmark harness.

pub mod bench;
pub mod density;
pub mod domain;
pub mod estimator;
pub mod integrand;
pub mod optimizer;
pub mod quadrature;
pub mod sampler;
pub mod weights;

pub use density::DensityModel;
pub use domain::{elementary_basis, make_uniform_partition, BasisFunction, BoxDomain, Partition};
pub use estimator::{EstimateError, EstimateReport, EstimatorKind};
pub use integrand::{catalog_integrand, Integrand, Shape1d};
pub use optimizer::{grid_search_oracle, minimize, variance_objective, ObjectiveSpec, OptimizerOptions, OptimizerResult};
pub use quadrature::{compute_mixture_moments, compute_moments, integrate, MomentSet, QuadratureConfig};
pub use sampler::{allocate, RngStream};
pub use weights::{analytic_variance, l1_weights, optimal_weights, Provenance, VarianceReport, WeightVector};
