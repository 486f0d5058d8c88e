//! Browser bindings for the demo page in `www/`.
//!
//! Each operation has a plain Rust form returning a JSON string (tested
//! natively) and a thin `wasm_bindgen` export.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use isopt::density::DensityModel;
use isopt::domain::{elementary_basis, make_uniform_partition, BoxDomain};
use isopt::estimator::estimate_plain_is;
use isopt::integrand::{catalog_integrand, Integrand, Params};
use isopt::optimizer::{minimize, variance_objective, ObjectiveSpec, OptimizerOptions};
use isopt::quadrature::{compute_moments, QuadratureConfig};
use isopt::sampler::RngStream;
use isopt::weights::{analytic_variance, l1_weights, optimal_weights, Provenance, WeightVector};

const MAX_CELLS: usize = 64;
const MAX_SAMPLES: usize = 2_000_000;
const CURVE_POINTS: usize = 200;

fn parse_integrand(id: &str, params_json: &str) -> Result<Integrand, String> {
    let params: Params = if params_json.trim().is_empty() {
        Params::new()
    } else {
        serde_json::from_str(params_json).map_err(|e| format!("params: {e}"))?
    };
    let f = catalog_integrand(id, &params).map_err(|e| e.to_string())?;
    if f.dim() != 1 {
        return Err("the demo draws one-dimensional integrands only".into());
    }
    Ok(f)
}

fn check_cells(cells: usize) -> Result<(), String> {
    if cells == 0 || cells > MAX_CELLS {
        return Err(format!("cells must be in 1..={MAX_CELLS}"));
    }
    Ok(())
}

fn curve(f: &Integrand) -> Vec<[f64; 2]> {
    (0..=CURVE_POINTS)
        .map(|k| {
            let x = k as f64 / CURVE_POINTS as f64;
            [x, f.eval(&[x])]
        })
        .collect()
}

/// Moments, l1 and optimal weights on `cells` equal cells of `[0, 1]`, plus
/// a sampled curve of `f` for drawing.
pub fn project_weights_json(id: &str, params_json: &str, cells: usize) -> Result<String, String> {
    check_cells(cells)?;
    let f = parse_integrand(id, params_json)?;
    let p = make_uniform_partition(&BoxDomain::unit(1), &[cells]).map_err(|e| e.to_string())?;
    let m = compute_moments(&f, &p, &elementary_basis(&p), &QuadratureConfig::default()).map_err(|e| e.to_string())?;
    let opt = optimal_weights(&m).map_err(|e| e.to_string())?;
    let v_opt = analytic_variance(&m, &opt).map_err(|e| e.to_string())?.analytic_variance;
    let (l1, v_l1) = match l1_weights(&m) {
        Ok(w) => {
            let v = analytic_variance(&m, &w).map_err(|e| e.to_string())?.analytic_variance;
            (Some(w.values().to_vec()), Some(v))
        }
        Err(_) => (None, None),
    };
    let out = json!({
        "mu": m.mu,
        "breaks": p.breaks()[0],
        "second_moments": m.second_moments,
        "optimal": opt.values(),
        "l1": l1,
        "variance_optimal": v_opt,
        "variance_l1": v_l1,
        "curve": curve(&f),
    });
    Ok(out.to_string())
}

/// Variance along the segment between a uniform and a `k`-ramp proposal,
/// with the optimizer's minimizer.
pub fn variance_curve_json(id: &str, params_json: &str, ramp_k: f64) -> Result<String, String> {
    if !(0.0..=20.0).contains(&ramp_k) {
        return Err("ramp exponent must be in [0, 20]".into());
    }
    let f = parse_integrand(id, params_json)?;
    let ramp = DensityModel::power_ramp(0.0, 1.0, ramp_k).map_err(|e| e.to_string())?;
    let spec = ObjectiveSpec::new(
        f.clone(),
        vec![DensityModel::uniform(BoxDomain::unit(1)), ramp],
        BoxDomain::unit(1),
        QuadratureConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let mut points = Vec::with_capacity(CURVE_POINTS + 1);
    for k in 0..=CURVE_POINTS {
        let t = (k as f64 / CURVE_POINTS as f64).clamp(1e-6, 1.0 - 1e-6);
        let w = WeightVector::new(vec![1.0 - t, t], Provenance::Custom).map_err(|e| e.to_string())?;
        // points where the uniform share is too small to cover f are skipped
        if let Ok(v) = variance_objective(&spec, &w) {
            points.push([t, v]);
        }
    }
    let r = minimize(&spec, None, &OptimizerOptions::default()).map_err(|e| e.to_string())?;
    let out = json!({
        "mu": spec.mu(),
        "points": points,
        "optimum": {
            "ramp_weight": r.weights.values()[1],
            "objective": r.objective,
            "iterations": r.iterations,
            "converged": r.converged,
        },
        "curve": curve(&f),
    });
    Ok(out.to_string())
}

/// Plain importance sampling with `method` (`"l1"` or `"optimal"`) weights;
/// returns the report and a 50-bin histogram of the sample positions.
pub fn run_estimator_json(
    id: &str,
    params_json: &str,
    cells: usize,
    method: &str,
    n: usize,
    seed: u64,
) -> Result<String, String> {
    check_cells(cells)?;
    if n == 0 || n > MAX_SAMPLES {
        return Err(format!("samples must be in 1..={MAX_SAMPLES}"));
    }
    let f = parse_integrand(id, params_json)?;
    let p = make_uniform_partition(&BoxDomain::unit(1), &[cells]).map_err(|e| e.to_string())?;
    let m = compute_moments(&f, &p, &elementary_basis(&p), &QuadratureConfig::default()).map_err(|e| e.to_string())?;
    let w = match method {
        "l1" => l1_weights(&m),
        "optimal" => optimal_weights(&m),
        other => return Err(format!("unknown method '{other}'")),
    }
    .map_err(|e| e.to_string())?;
    let predicted = analytic_variance(&m, &w).map_err(|e| e.to_string())?.analytic_variance;
    let report = estimate_plain_is(&f, &p, &w, n, &mut RngStream::new(seed, 0))
        .map_err(|e| e.to_string())?
        .with_prediction(predicted);
    // replay the same stream for the histogram
    let g = DensityModel::piecewise_constant(p, w.values()).map_err(|e| e.to_string())?;
    let mut rng = RngStream::new(seed, 0);
    let mut bins = vec![0usize; 50];
    let mut scratch = Vec::new();
    for _ in 0..n.min(200_000) {
        let x = rng.sample(&g, &mut scratch)[0];
        bins[((x * 50.0) as usize).min(49)] += 1;
    }
    let mut out: Value = serde_json::to_value(&report).map_err(|e| e.to_string())?;
    out["mu"] = json!(m.mu);
    out["weights"] = json!(w.values());
    out["histogram"] = json!(bins);
    Ok(out.to_string())
}

#[wasm_bindgen]
pub fn project_weights(id: &str, params_json: &str, cells: usize) -> Result<String, JsValue> {
    project_weights_json(id, params_json, cells).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn variance_curve(id: &str, params_json: &str, ramp_k: f64) -> Result<String, JsValue> {
    variance_curve_json(id, params_json, ramp_k).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn run_estimator(id: &str, params_json: &str, cells: usize, method: &str, n: usize, seed: u64) -> Result<String, JsValue> {
    run_estimator_json(id, params_json, cells, method, n, seed).map_err(|e| JsValue::from_str(&e))
}
