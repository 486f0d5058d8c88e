//! Catalog-wide weight, estimator and optimizer properties.

use isopt::bench::{cmd_compare, CaseContext, ConfigFile, Experiment, Setup};
use isopt::optimizer::{grid_search_oracle, minimize, ObjectiveSpec, OptimizerOptions};
use isopt::quadrature::MomentSet;
use isopt::weights::{analytic_variance, l1_weights, optimal_weights};

fn catalog() -> Vec<Experiment> {
    ConfigFile::catalog().resolve().unwrap()
}

fn moments(ctx: &CaseContext) -> Option<MomentSet> {
    ctx.moments.clone()
}

#[test]
fn dominance_is_strict_when_weights_differ() {
    for e in catalog() {
        if !matches!(e.setup, Setup::Partition { .. }) {
            continue;
        }
        let m = moments(&CaseContext::new(&e).unwrap()).unwrap();
        let (opt, l1) = (optimal_weights(&m).unwrap(), l1_weights(&m).unwrap());
        let v_opt = analytic_variance(&m, &opt).unwrap().analytic_variance;
        let v_l1 = analytic_variance(&m, &l1).unwrap().analytic_variance;
        assert!(v_opt <= v_l1 + 1e-12, "{}", e.id);
        let differ = opt.values().iter().zip(l1.values()).any(|(a, b)| (a - b).abs() > 1e-9);
        if differ {
            assert!(v_opt < v_l1, "{}: {v_opt} vs {v_l1}", e.id);
        }
    }
}

#[test]
fn scale_invariance_and_stationarity_on_catalog() {
    for e in catalog() {
        let Some(m) = moments(&CaseContext::new(&e).unwrap()) else { continue };
        let opt = optimal_weights(&m).unwrap();
        let lambda = opt.lambda_diag().unwrap();
        for (mi, ai) in m.second_moments.iter().zip(opt.values()) {
            if *mi > 0.0 {
                assert!((mi / (ai * ai) - lambda).abs() <= 1e-9 * lambda, "{}", e.id);
            }
        }
        let c = 3.7;
        let scaled = MomentSet::from_values(
            m.first_moments.iter().map(|v| c * v).collect(),
            m.second_moments.iter().map(|v| c * c * v).collect(),
        );
        let opt_c = optimal_weights(&scaled).unwrap();
        for (a, b) in opt.values().iter().zip(opt_c.values()) {
            assert!((a - b).abs() <= 1e-12, "{}", e.id);
        }
        let v = analytic_variance(&m, &opt).unwrap().analytic_variance;
        let v_c = analytic_variance(&scaled, &opt_c).unwrap().analytic_variance;
        let scale = (c * c) * m.second_moments.iter().map(|s| s.sqrt()).sum::<f64>().powi(2);
        assert!((v_c - c * c * v).abs() <= 1e-12 * scale, "{}", e.id);
    }
}

#[test]
fn aligned_step_has_zero_variance() {
    let e = catalog().into_iter().find(|e| e.id == "step_aligned_2").unwrap();
    let m = moments(&CaseContext::new(&e).unwrap()).unwrap();
    let v = analytic_variance(&m, &optimal_weights(&m).unwrap()).unwrap().analytic_variance;
    assert!(v <= 1e-12 * m.mu * m.mu);
}

#[test]
fn estimator_reports_are_bit_reproducible() {
    for e in catalog() {
        let ctx = CaseContext::new(&e).unwrap();
        let method = *e.setup.methods().last().unwrap();
        let w = ctx.weights_for(method).unwrap();
        let a = ctx.estimate(&w.weights, 20_000, 99).unwrap();
        let b = ctx.estimate(&w.weights, 20_000, 99).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits(), "{}", e.id);
        assert_eq!(a, b);
    }
}

#[test]
fn every_case_and_method_is_unbiased_over_twenty_seeds() {
    let n = 100_000;
    for e in catalog() {
        let ctx = CaseContext::new(&e).unwrap();
        for &m in e.setup.methods() {
            let w = ctx.weights_for(m).unwrap();
            let sd = (w.analytic_variance / n as f64).sqrt();
            let hits = (0..20u64)
                .filter(|&seed| {
                    let r = ctx.estimate(&w.weights, n, 1000 + seed).unwrap();
                    // roundoff floor for zero-variance cases
                    (r.mean - ctx.mu).abs() <= 4.0 * sd + 1e-9 * ctx.mu.abs()
                })
                .count();
            assert!(hits >= 19, "{} {}: {hits}/20", e.id, m.as_str());
        }
    }
}

#[test]
fn optimal_frequencies_do_not_lose_empirically() {
    let out = cmd_compare(&ConfigFile::catalog()).unwrap();
    for s in &out.summary {
        let base = if s.kind == "bases" { continue } else { &s.baseline_method };
        for seed in out.rows.iter().filter(|r| r.case == s.case).map(|r| r.seed) {
            let get = |m: &str| {
                out.rows.iter().find(|r| r.case == s.case && r.method == m && r.seed == seed).unwrap().empirical_var.unwrap()
            };
            assert!(get(&s.best_method) <= 1.02 * get(base) + 1e-12, "{} seed {seed}", s.case);
        }
    }
}

#[test]
fn optimizer_is_no_worse_than_lattice_oracle() {
    for e in catalog() {
        let ctx = CaseContext::new(&e).unwrap();
        let spec = match (&e.setup, &ctx.objective) {
            (Setup::Partition { f, partition }, _) => ObjectiveSpec::elementary(f.clone(), partition, e.quadrature).unwrap(),
            (Setup::Bases { .. }, Some(spec)) => spec.clone(),
            _ => continue,
        };
        if spec.len() > 4 {
            continue;
        }
        let r = minimize(&spec, None, &OptimizerOptions::default()).unwrap();
        let grid = grid_search_oracle(&spec, 1e-2, 1e-9).unwrap();
        assert!(r.objective <= grid.objective + 1e-9 * (1.0 + grid.objective.abs()), "{}: {} vs {}", e.id, r.objective, grid.objective);
        assert!(r.weights.values().iter().all(|v| *v >= 1e-9 - 1e-15));
        // interior optima satisfy the equal-projection condition
        if r.boundary.is_empty() {
            assert!(r.condition_residual <= 1e-4, "{}: residual {}", e.id, r.condition_residual);
        }
    }
}
