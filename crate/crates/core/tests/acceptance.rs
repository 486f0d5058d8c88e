//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs against the bundled catalog.

use std::process::ExitCode;
use std::time::Instant;

use isopt::bench::{cmd_compare, CaseContext, CompareOutput, ConfigFile, Experiment, Setup};
use isopt::density::DensityModel;
use isopt::domain::{elementary_basis, make_uniform_partition, BoxDomain};
use isopt::estimator::{estimate_balance_mis, estimate_mixture_is, estimate_plain_is};
use isopt::integrand::{Integrand, Shape1d};
use isopt::optimizer::{
    gradient, grid_search_oracle, minimize, variance_objective, ObjectiveSpec, OptimizerOptions,
};
use isopt::quadrature::{compute_mixture_moments, compute_moments, MixtureComponent, MomentSet, QuadratureConfig};
use isopt::sampler::RngStream;
use isopt::weights::{analytic_variance, l1_weights, optimal_mixture_frequencies, optimal_weights, Provenance, WeightVector};

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

fn catalog() -> Vec<Experiment> {
    ConfigFile::catalog().resolve().expect("catalog resolves")
}

fn partition_moments(e: &Experiment) -> Option<MomentSet> {
    match &e.setup {
        Setup::Partition { f, partition } => {
            Some(compute_moments(f, partition, &elementary_basis(partition), &e.quadrature).unwrap())
        }
        _ => None,
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_1(cases: &[Experiment]) -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for e in cases {
        let Setup::Partition { f, partition } = &e.setup else { continue };
        if partition.len() > 4 {
            continue;
        }
        count += 1;
        let m = partition_moments(e).unwrap();
        let opt = optimal_weights(&m).unwrap();
        let spec = ObjectiveSpec::elementary(f.clone(), partition, e.quadrature).unwrap();
        let grid = grid_search_oracle(&spec, 1e-3, 1e-9).unwrap();
        worst = worst.max(max_abs_diff(opt.values(), grid.weights.values()));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-3 && secs < 30.0 && count > 0,
        format!("{count} cases with n <= 4, max |optimal - grid| = {worst:.3e} (<= 1e-3), {secs:.1} s (< 30 s)"),
    )
}

fn criterion_2(cases: &[Experiment]) -> Outcome {
    let mut count = 0;
    let mut violations = Vec::new();
    for e in cases {
        let Some(m) = partition_moments(e) else { continue };
        count += 1;
        let v_opt = analytic_variance(&m, &optimal_weights(&m).unwrap()).unwrap().analytic_variance;
        let v_l1 = analytic_variance(&m, &l1_weights(&m).unwrap()).unwrap().analytic_variance;
        if v_opt > v_l1 + 1e-12 {
            violations.push(e.id.clone());
        }
    }
    // antiderivative oracle for f(x) = x on [0, 1/2], [1/2, 1]
    let cells = [(0.0f64, 0.5f64), (0.5, 1.0)];
    let m_exact: Vec<f64> = cells.iter().map(|(a, b)| (b - a) * (b.powi(3) - a.powi(3)) / 3.0).collect();
    let first_exact: Vec<f64> = cells.iter().map(|(a, b)| (b * b - a * a) / 2.0).collect();
    let mu = 0.5;
    let sum_sqrt: f64 = m_exact.iter().map(|m| m.sqrt()).sum();
    let v_opt_exact = sum_sqrt * sum_sqrt - mu * mu;
    let v_l1_exact: f64 = m_exact.iter().zip(&first_exact).map(|(m, i)| m / (i / mu)).sum::<f64>() - mu * mu;

    let p = make_uniform_partition(&BoxDomain::unit(1), &[2]).unwrap();
    let f = Integrand::one_d("linear", Shape1d::Linear);
    let m = compute_moments(&f, &p, &elementary_basis(&p), &QuadratureConfig::default()).unwrap();
    let v_opt = analytic_variance(&m, &optimal_weights(&m).unwrap()).unwrap().analytic_variance;
    let v_l1 = analytic_variance(&m, &l1_weights(&m).unwrap()).unwrap().analytic_variance;
    let ratio = v_l1 / v_opt;
    let ok = count >= 10
        && violations.is_empty()
        && (ratio - 1.03239).abs() <= 1e-4
        && (v_opt - v_opt_exact).abs() <= 1e-12
        && (v_l1 - v_l1_exact).abs() <= 1e-12
        && (v_opt_exact - 0.0269063).abs() <= 1e-7
        && (v_l1_exact - 0.0277778).abs() <= 1e-7;
    outcome(
        ok,
        format!(
            "{count} cases, violations {violations:?}; linear_2 V_opt = {v_opt:.7} (oracle {v_opt_exact:.7}), V_l1 = {v_l1:.7} (oracle {v_l1_exact:.7}), ratio = {ratio:.6}"
        ),
    )
}

fn criterion_3(cases: &[Experiment]) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for e in cases {
        let m = match &e.setup {
            Setup::Partition { .. } => partition_moments(e).unwrap(),
            Setup::Mixture { domain, components } => compute_mixture_moments(domain, components, &e.quadrature).unwrap(),
            Setup::Bases { .. } => continue,
        };
        count += 1;
        let r = analytic_variance(&m, &optimal_weights(&m).unwrap()).unwrap();
        let s: f64 = m.second_moments.iter().map(|v| v.sqrt()).sum();
        let identity = s * s - m.mu * m.mu;
        // relative to the second moment sum that both sides subtract mu^2 from
        let scale = (s * s).max(f64::MIN_POSITIVE);
        worst = worst.max((r.analytic_variance - identity).abs() / scale);
    }
    outcome(worst <= 1e-12, format!("{count} cases, max |V - ((sum sqrt m)^2 - mu^2)| / (sum sqrt m)^2 = {worst:.3e} (<= 1e-12)"))
}

fn criterion_4(cases: &[Experiment]) -> Outcome {
    let aligned = cases.iter().find(|e| e.id == "step_aligned_2").unwrap();
    let ctx = CaseContext::new(aligned).unwrap();
    let m = ctx.moments.as_ref().unwrap();
    let w = optimal_weights(m).unwrap();
    let analytic = analytic_variance(m, &w).unwrap().analytic_variance;
    let empirical = ctx.estimate(&w, 1_000_000, 1).unwrap().empirical_variance;

    // perfect proposals: 1 ~ uniform, 2x ~ 2x
    let comps = perfect_mixture();
    let mm = compute_mixture_moments(&BoxDomain::unit(1), &comps, &QuadratureConfig::default()).unwrap();
    let freq = optimal_mixture_frequencies(&mm).unwrap();
    let mut weights_seen = (f64::INFINITY, f64::NEG_INFINITY);
    let mut scratch = Vec::new();
    for (i, c) in comps.iter().enumerate() {
        let mut rng = RngStream::new(3, i as u64);
        for _ in 0..10_000 {
            let x = rng.sample(&c.g, &mut scratch);
            let w = c.alpha / freq.values()[i] * c.f.eval(&x) / c.g.pdf(&x);
            weights_seen = (weights_seen.0.min(w), weights_seen.1.max(w));
        }
    }
    let mix = estimate_mixture_is(&comps, &freq, 1_000_000, 3).unwrap();
    let spread = weights_seen.1 - weights_seen.0;
    let ok = analytic <= 1e-12
        && empirical <= 1e-12
        && spread <= 4.0 * f64::EPSILON
        && mix.empirical_variance <= f64::EPSILON * f64::EPSILON;
    outcome(
        ok,
        format!(
            "aligned step: analytic {analytic:.3e}, empirical {empirical:.3e} (<= 1e-12); perfect mixture: weight spread {spread:.3e}, empirical variance {:.3e} (roundoff level)",
            mix.empirical_variance
        ),
    )
}

fn perfect_mixture() -> Vec<MixtureComponent> {
    vec![
        MixtureComponent {
            alpha: 0.5,
            f: Integrand::one_d("one", Shape1d::Polynomial(vec![1.0])),
            g: DensityModel::uniform(BoxDomain::unit(1)),
        },
        MixtureComponent {
            alpha: 0.5,
            f: Integrand::one_d("two_x", Shape1d::Polynomial(vec![0.0, 2.0])),
            g: DensityModel::power_ramp(0.0, 1.0, 1.0).unwrap(),
        },
    ]
}

fn uniform_mixture() -> Vec<MixtureComponent> {
    let mut c = perfect_mixture();
    c[1].g = DensityModel::uniform(BoxDomain::unit(1));
    c
}

fn unbiased_suite(name: &str, mu: f64, v: f64, run: impl Fn(u64) -> f64) -> (bool, String) {
    let n = 1_000_000.0;
    let start = Instant::now();
    let hits = (0..20u64).filter(|&seed| (run(seed) - mu).abs() <= 4.0 * (v / n).sqrt() + 1e-12 * mu.abs()).count();
    let secs = start.elapsed().as_secs_f64();
    (hits >= 19 && secs < 120.0, format!("{name} {hits}/20 in {secs:.1} s"))
}

fn criterion_5() -> Outcome {
    let n = 1_000_000;
    let cfg = QuadratureConfig::default();
    // plain IS, f(x) = x on 2 cells at optimal weights
    let p = make_uniform_partition(&BoxDomain::unit(1), &[2]).unwrap();
    let f = Integrand::one_d("linear", Shape1d::Linear);
    let m = compute_moments(&f, &p, &elementary_basis(&p), &cfg).unwrap();
    let w = optimal_weights(&m).unwrap();
    let v = analytic_variance(&m, &w).unwrap().analytic_variance;
    let plain = unbiased_suite("plain", 0.5, v, |seed| {
        estimate_plain_is(&f, &p, &w, n, &mut RngStream::new(seed, 0)).unwrap().mean
    });
    // stratified mixture, uniform proposals, optimal frequencies
    let comps = uniform_mixture();
    let mm = compute_mixture_moments(&BoxDomain::unit(1), &comps, &cfg).unwrap();
    let freq = optimal_mixture_frequencies(&mm).unwrap();
    let vm = analytic_variance(&mm, &freq).unwrap().analytic_variance;
    let mixture = unbiased_suite("mixture", 1.0, vm, |seed| estimate_mixture_is(&comps, &freq, n, seed).unwrap().mean);
    // balance heuristic, f(x) = x with {uniform, 2x} at (1/2, 1/2)
    let proposals = vec![DensityModel::uniform(BoxDomain::unit(1)), DensityModel::power_ramp(0.0, 1.0, 1.0).unwrap()];
    let half = WeightVector::new(vec![0.5, 0.5], Provenance::Custom).unwrap();
    let vb = 0.25 * 3f64.ln() - 0.25;
    let mis = unbiased_suite("balance_mis", 0.5, vb, |seed| estimate_balance_mis(&f, &proposals, &half, n, seed).unwrap().mean);
    outcome(plain.0 && mixture.0 && mis.0, format!("N = 1e6, within 4 sd: {}; {}; {}", plain.1, mixture.1, mis.1))
}

fn criterion_6(out: &CompareOutput) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for r in &out.rows {
        if let Some(err) = &r.error {
            failures.push(format!("{}:{} error {err}", r.case, r.method));
            continue;
        }
        let (a, e, mu) = (r.analytic_var.unwrap(), r.empirical_var.unwrap(), r.mu.unwrap());
        // absolute floor at quadrature roundoff for zero-variance cases
        let tol = 0.1 * a + 1e-12 * mu * mu;
        if a > 1e-12 * mu * mu {
            worst = worst.max((e - a).abs() / a);
        }
        if (e - a).abs() > tol || r.n != 1_000_000 {
            failures.push(format!("{}:{}:{} analytic {a:e} empirical {e:e}", r.case, r.method, r.seed));
        }
    }
    outcome(
        failures.is_empty(),
        format!("{} rows at N = 1e6, max relative gap {worst:.4} (<= 0.1) {failures:?}", out.rows.len()),
    )
}

fn criterion_7(out: &CompareOutput) -> Outcome {
    let rows: Vec<_> = out.rows.iter().filter(|r| r.case == "mixture_uniform").collect();
    let mut ok = !rows.is_empty();
    let mut detail = Vec::new();
    for seed in rows.iter().map(|r| r.seed).collect::<std::collections::BTreeSet<_>>() {
        let get = |m: &str| rows.iter().find(|r| r.method == m && r.seed == seed).and_then(|r| r.empirical_var).unwrap();
        let (opt, nat) = (get("optimal"), get("natural_alpha"));
        ok &= opt < nat && (opt - 0.1606836).abs() <= 0.1 * 0.1606836 && (nat - 0.1666667).abs() <= 0.1 * 0.1666667;
        detail.push(format!("seed {seed}: optimal {opt:.7} < alpha {nat:.7}"));
    }
    outcome(ok, detail.join("; "))
}

fn criterion_8(cases: &[Experiment]) -> Outcome {
    let opts = OptimizerOptions::default();
    let mut notes = Vec::new();
    let mut ok = true;

    // closed form reproduction and interior residual on every partition case
    let mut worst_w: f64 = 0.0;
    let mut worst_res: f64 = 0.0;
    for e in cases {
        let Setup::Partition { f, partition } = &e.setup else { continue };
        let spec = ObjectiveSpec::elementary(f.clone(), partition, e.quadrature).unwrap();
        let r = minimize(&spec, None, &opts).unwrap();
        let closed = optimal_weights(&partition_moments(e).unwrap()).unwrap();
        worst_w = worst_w.max(max_abs_diff(r.weights.values(), closed.values()));
        if r.boundary.is_empty() {
            worst_res = worst_res.max(r.condition_residual);
        }
    }
    // overlapping interior optimum: 1 + x = 3/2 (2/3 * 1 + 1/3 * 2x)
    let interior = ObjectiveSpec::new(
        Integrand::one_d("affine", Shape1d::Polynomial(vec![1.0, 1.0])),
        vec![DensityModel::uniform(BoxDomain::unit(1)), DensityModel::power_ramp(0.0, 1.0, 1.0).unwrap()],
        BoxDomain::unit(1),
        QuadratureConfig::default(),
    )
    .unwrap();
    let r = minimize(&interior, None, &opts).unwrap();
    worst_res = worst_res.max(r.condition_residual);
    ok &= r.boundary.is_empty() && worst_w <= 1e-6 && worst_res <= 1e-4;
    notes.push(format!("closed-form gap {worst_w:.2e} (<= 1e-6), interior residual {worst_res:.2e} (<= 1e-4)"));

    // gradient vs central differences along random tangent directions
    let tight = QuadratureConfig { rel_tol: 1e-13, abs_tol: 1e-15, ..QuadratureConfig::default() };
    let bump = ObjectiveSpec::new(
        Integrand::one_d("bump", Shape1d::GaussianBump { center: 0.6, width: 0.25 }),
        vec![
            DensityModel::uniform(BoxDomain::unit(1)),
            DensityModel::power_ramp(0.0, 1.0, 1.0).unwrap(),
            DensityModel::power_ramp(0.0, 1.0, 2.0).unwrap(),
        ],
        BoxDomain::unit(1),
        tight,
    )
    .unwrap();
    let mut rng = RngStream::new(2718, 0);
    let mut worst_fd: f64 = 0.0;
    for _ in 0..50 {
        let a = random_simplex(&mut rng, 3, 0.1);
        let wv = WeightVector::new(a.clone(), Provenance::Custom).unwrap();
        let g = gradient(&bump, &wv).unwrap();
        let mut d: Vec<f64> = (0..3).map(|_| rng.uniform() - 0.5).collect();
        let mean = d.iter().sum::<f64>() / 3.0;
        d.iter_mut().for_each(|v| *v -= mean);
        let h = 1e-6;
        let at = |s: f64| {
            let p: Vec<f64> = a.iter().zip(&d).map(|(x, y)| x + s * y).collect();
            variance_objective(&bump, &WeightVector::new(p, Provenance::Custom).unwrap()).unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let an: f64 = g.iter().zip(&d).map(|(x, y)| x * y).sum();
        worst_fd = worst_fd.max((fd - an).abs() / an.abs().max(1e-300));
    }
    ok &= worst_fd <= 1e-4;
    notes.push(format!("50 points, max FD relative error {worst_fd:.2e} (<= 1e-4)"));

    // convexity probe
    let mut worst_gap = f64::NEG_INFINITY;
    let eval = |a: &[f64]| variance_objective(&bump, &WeightVector::new(a.to_vec(), Provenance::Custom).unwrap()).unwrap();
    for _ in 0..200 {
        let a = random_simplex(&mut rng, 3, 0.0);
        let b = random_simplex(&mut rng, 3, 0.0);
        let (va, vb) = (eval(&a), eval(&b));
        for t in [0.25, 0.5, 0.75] {
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
            worst_gap = worst_gap.max(eval(&mid) - (t * va + (1.0 - t) * vb));
        }
    }
    ok &= worst_gap <= 1e-9;
    notes.push(format!("200 pairs, max convexity excess {worst_gap:.2e} (<= 1e-9)"));
    outcome(ok, notes.join("; "))
}

/// Dirichlet(1, .., 1) point mixed with `floor` of the barycenter.
fn random_simplex(rng: &mut RngStream, n: usize, floor: f64) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.uniform()).ln()).collect();
    let s: f64 = e.iter().sum();
    let mut a: Vec<f64> = e.iter().map(|v| (1.0 - floor) * v / s + floor / n as f64).collect();
    let resid = 1.0 - a.iter().sum::<f64>();
    a[0] += resid;
    a
}

fn main() -> ExitCode {
    let cases = catalog();
    let start = Instant::now();
    let first = cmd_compare(&ConfigFile::catalog()).expect("catalog compare runs");
    let second = cmd_compare(&ConfigFile::catalog()).expect("catalog compare runs");
    let compare_secs = start.elapsed().as_secs_f64() / 2.0;
    let (csv_a, csv_b) = (first.to_csv(), second.to_csv());
    let c9 = outcome(
        csv_a.as_bytes() == csv_b.as_bytes(),
        format!("{} CSV bytes, identical across two runs ({compare_secs:.1} s per run)", csv_a.len()),
    );
    let results = [
        ("1 closed-form optimality vs grid oracle", criterion_1(&cases)),
        ("2 dominance over l1", criterion_2(&cases)),
        ("3 variance identity", criterion_3(&cases)),
        ("4 zero-variance cases", criterion_4(&cases)),
        ("5 unbiasedness", criterion_5()),
        ("6 variance prediction", criterion_6(&first)),
        ("7 mixture improvement", criterion_7(&first)),
        ("8 optimizer correctness", criterion_8(&cases)),
        ("9 determinism", c9),
    ];
    let mut all = true;
    for (name, o) in &results {
        println!("{} criterion {name}: {}", if o.ok { "PASS" } else { "FAIL" }, o.detail);
        all &= o.ok;
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
