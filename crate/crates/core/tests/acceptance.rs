//! Acceptance criteria, each run at its stated tolerance. Prints one PASS/FAIL line per
//! criterion and exits nonzero when any fails.

use std::f64::consts::TAU;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use geotomo::boundary::{conformal_jet_oracle, jet_recover, remainder_scaling};
use geotomo::config::ExperimentConfig;
use geotomo::decomp::{DecompOperator, SolverOptions};
use geotomo::gauge::{
    gauge_normalize_boundary, gauge_normalize_global, semigeodesic_chart, ChartOptions,
    GaugeOptions,
};
use geotomo::geodesic::{distance_table, ShootingOptions};
use geotomo::inversion::{
    holder_fit, random_closed_loop, stability_ratio_sweep, ClosedLoopOptions,
};
use geotomo::metric::{MetricSpec, Profile, ScalarTerm, DIM};
use geotomo::synth::{random_one_form, random_tensor, sym_diff_rule};
use geotomo::tensorfield::{
    contract, inner, norm, Grid, GridGeometry, OneFormField, Rule, Support, SymTensorField,
};
use geotomo::xray::{
    forward, normal_kernel_field, InflowGrid, KernelOptions, Sinogram, XrayOperator, XrayOptions,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn conformal_family() -> MetricSpec {
    MetricSpec::conformal(vec![ScalarTerm {
        amplitude: 0.05,
        center: [0.0, 0.0],
        profile: Profile::Gaussian { sharpness: 4.0 },
    }])
}

fn scenario(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name);
    ExperimentConfig::load(&path).expect("shipped scenario parses")
}

fn diameter(spec: &MetricSpec) -> f64 {
    let t = distance_table(spec, 24, &ShootingOptions::default()).unwrap();
    t.rho2
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(*v))
        .sqrt()
}

/// `sup |v| + sup |∂v|` of a closed-form 1-form over a lattice of `Ω`.
fn c1_norm(spec: &MetricSpec, v: &Rule<DIM>) -> f64 {
    let d = spec.domain;
    let (mut c0, mut c1): (f64, f64) = (0.0, 0.0);
    let m = 81;
    let e = 1e-5;
    for i in 0..m {
        for j in 0..m {
            let x = [
                d.center[0] + d.radius * (2.0 * i as f64 / (m - 1) as f64 - 1.0),
                d.center[1] + d.radius * (2.0 * j as f64 / (m - 1) as f64 - 1.0),
            ];
            if !d.inside(&x) {
                continue;
            }
            let val = v(&x);
            c0 = c0.max(val[0].abs()).max(val[1].abs());
            for k in 0..DIM {
                let mut xp = x;
                let mut xm = x;
                xp[k] += e;
                xm[k] -= e;
                let (a, b) = (v(&xp), v(&xm));
                for c in 0..DIM {
                    c1 = c1.max(((a[c] - b[c]) / (2.0 * e)).abs());
                }
            }
        }
    }
    c0 + c1
}

/// `sup |v| + sup |∂v|` of a grid 1-form over the nodes of `Ω`.
fn grid_c1_norm(v: &OneFormField) -> f64 {
    let grid = v.grid;
    let (mut c0, mut c1): (f64, f64) = (0.0, 0.0);
    for idx in 0..grid.len() {
        if !v.in_mask(idx) {
            continue;
        }
        for c in 0..DIM {
            c0 = c0.max(v.values[idx][c].abs());
            for axis in 0..DIM {
                c1 = c1.max(v.partial(idx, c, axis).abs());
            }
        }
    }
    c0 + c1
}

fn max_abs(s: &Sinogram) -> f64 {
    s.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn potential_annihilation() -> Outcome {
    let spec = conformal_family();
    let grid = Grid::new(64, spec.domain).unwrap();
    let inflow = Arc::new(InflowGrid::new(&spec, 64, 64).unwrap());
    let diam = diameter(&spec);
    let opts = XrayOptions::default();
    let (mut worst, mut worst_grid): (f64, f64) = (0.0, 0.0);
    for seed in 0..5 {
        let v = random_one_form(grid, Support::Inner, 100 + seed, 0.9, 2);
        let rule = v.rule().unwrap().clone();
        let scale = c1_norm(&spec, &rule) * diam;
        let f = SymTensorField::from_rule(grid, Support::Inner, sym_diff_rule(&spec, rule));
        worst = worst.max(max_abs(&forward(&spec, &f, &inflow, &opts).unwrap()) / scale);
        let fg = f.grid_only();
        worst_grid = worst_grid.max(max_abs(&forward(&spec, &fg, &inflow, &opts).unwrap()) / scale);
    }
    Outcome {
        pass: worst <= 1e-3,
        detail: format!(
            "max|I(dv)| / (|v|_C1 diam) = {worst:.3e} (tol 1e-3); grid-sampled dv at N=64: {worst_grid:.3e}"
        ),
    }
}

fn random_sinogram(inflow: &Arc<InflowGrid>, seed: u64) -> Sinogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0..4) as f64,
                rng.gen_range(0..3) as f64,
                rng.gen_range(0.0..TAU),
            )
        })
        .collect();
    let mut u = Sinogram::zeros(inflow.clone());
    for (k, s) in inflow.samples.iter().enumerate() {
        u.values[k] = terms
            .iter()
            .map(|(a, m, n, ph)| a * (m * s.beta + ph).cos() * (n * s.psi).cos())
            .sum();
    }
    u
}

fn adjointness() -> Outcome {
    let spec = conformal_family();
    let grid = Grid::new(32, spec.domain).unwrap();
    let op =
        XrayOperator::new(&spec, grid, Support::Inner, 32, 32, XrayOptions::default()).unwrap();
    let geo = GridGeometry::new(&spec, grid).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let f = random_tensor(grid, Support::Inner, 200 + seed, 0.9, 2).grid_only();
        let u = random_sinogram(&op.inflow, 300 + seed);
        let ifs = op.forward(&f).unwrap();
        let lhs = ifs.inner(&u);
        let rhs = inner(&geo, &f, &op.adjoint(&u).unwrap()).unwrap();
        let denom = ifs.inner(&ifs).sqrt() * u.inner(&u).sqrt();
        worst = worst.max((lhs - rhs).abs() / denom);
    }
    Outcome {
        pass: worst <= 1e-2,
        detail: format!("max relative adjointness defect = {worst:.3e} (tol 1e-2)"),
    }
}

fn kernel_vs_composed() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for (name, spec) in [
        ("euclidean", MetricSpec::euclidean()),
        ("conformal", conformal_family()),
    ] {
        let grid = Grid::new(64, spec.domain).unwrap();
        let xray = XrayOptions {
            adjoint_directions: 128,
            ..Default::default()
        };
        let op = XrayOperator::new(&spec, grid, Support::Inner, 128, 64, xray).unwrap();
        let geo = GridGeometry::new(&spec, grid).unwrap();
        let nodes: Vec<usize> = (0..grid.len())
            .filter(|&idx| {
                let (i, j) = grid.coords(idx);
                i % 4 == 0 && j % 4 == 0 && grid.in_support(idx, Support::Inner)
            })
            .collect();
        for seed in 0..3 {
            let f = random_tensor(grid, Support::Inner, 400 + seed, 0.9, 2);
            let nc = op.normal(&f).unwrap();
            let (nk, _) =
                normal_kernel_field(&spec, &f, &nodes, &KernelOptions::default()).unwrap();
            let (mut num, mut den) = (0.0, 0.0);
            for &idx in &nodes {
                let ginv = &geo.at(idx).ginv;
                let w = geo.weight(idx);
                let d: [f64; 3] = std::array::from_fn(|c| nk.values[idx][c] - nc.values[idx][c]);
                num += w * contract(ginv, &d, &d);
                den += w * contract(ginv, &nc.values[idx], &nc.values[idx]);
            }
            let rel = (num / den).sqrt();
            worst = worst.max(rel);
            lines.push(format!("{name}#{seed} {rel:.2e}"));
        }
    }
    Outcome {
        pass: worst <= 0.02,
        detail: format!(
            "max relative L2 gap = {worst:.3e} (tol 2e-2) over stride-4 nodes [{}]",
            lines.join(", ")
        ),
    }
}

fn decomposition_projectors() -> Outcome {
    let spec = conformal_family();
    let grid = Grid::new(64, spec.domain).unwrap();
    let op = DecompOperator::new(&spec, grid, SolverOptions::default()).unwrap();
    let f = random_tensor(grid, Support::Inner, 500, 0.95, 3).grid_only();
    let h = random_tensor(grid, Support::Inner, 501, 0.95, 3).grid_only();
    let d = op.decompose(&f).unwrap();
    let sf = d.solenoidal;
    let ssf = op.solenoidal(&sf).unwrap();
    let nf = norm(&op.geo, &f).unwrap();
    let idem = norm(&op.geo, &ssf.sub(&sf).unwrap()).unwrap() / nf;
    let ph = op.potential(&h).unwrap();
    let orth = inner(&op.geo, &sf, &ph).unwrap().abs() / (nf * norm(&op.geo, &h).unwrap());
    let l2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let div = l2(&op.weak_divergence(&sf).unwrap()) / l2(&op.weak_divergence(&f).unwrap());
    Outcome {
        pass: idem <= 1e-4 && orth <= 1e-3 && div <= 1e-3,
        detail: format!(
            "|S²f−Sf|/|f| = {idem:.2e} (tol 1e-4), |<Sf,Ph>|/(|f||h|) = {orth:.2e} (tol 1e-3), weak div of f^s = {div:.2e} (tol 1e-3)"
        ),
    }
}

fn gauge_normalization() -> Outcome {
    let spec = conformal_family();
    let grid = Grid::new(64, spec.domain).unwrap();
    let f = random_tensor(grid, Support::Inner, 600, 1.0, 2);
    let chart = semigeodesic_chart(&spec, grid, ChartOptions::semigeodesic()).unwrap();
    let global = gauge_normalize_global(&spec, &chart, &f).unwrap();
    let node = global.node_residual.relative();
    let b = gauge_normalize_boundary(&spec, &f, &GaugeOptions::default()).unwrap();
    let inflow = Arc::new(InflowGrid::new(&spec, 64, 64).unwrap());
    let opts = XrayOptions::default();
    let before = forward(&spec, &f, &inflow, &opts).unwrap();
    let after = forward(&spec, &b.f_tilde, &inflow, &opts).unwrap();
    let change = before
        .values
        .iter()
        .zip(&after.values)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let sino = change / (grid_c1_norm(&b.v) * diameter(&spec));
    Outcome {
        pass: node <= 1e-3 && sino <= 1e-3,
        detail: format!(
            "global: max node |f#_in| / scale = {node:.2e} (tol 1e-3); boundary: sinogram change / (|v|_C1 diam) = {sino:.2e} (tol 1e-3)"
        ),
    }
}

fn jet_recovery() -> Outcome {
    let cfg = scenario("conformal-pair.toml");
    let mut opts = cfg.jets.clone();
    opts.order = 1;
    let jet = jet_recover(&cfg.reference_metric(), &cfg.metric, &opts).unwrap();
    let mut err = [0.0f64; 2];
    let mut scale = [0.0f64; 2];
    for (j, &beta) in jet.betas.iter().enumerate() {
        let o = conformal_jet_oracle(&cfg.metric, beta);
        for k in 0..2 {
            err[k] = err[k].max((jet.jets[k][j] - o[k]).abs());
            scale[k] = scale[k].max(o[k].abs());
        }
    }
    let (e0, e1) = (err[0] / scale[0], err[1] / scale[1]);
    Outcome {
        pass: e0 <= 0.05 && e1 <= 0.15,
        detail: format!("relative jet error k=0: {e0:.2e} (tol 5e-2), k=1: {e1:.2e} (tol 1.5e-1)"),
    }
}

fn linearization_remainder() -> Outcome {
    let cfg = scenario("conformal-pair.toml");
    let lc = &cfg.linearize;
    let inflow = InflowGrid::new(&cfg.metric, lc.z_count, lc.w_count).unwrap();
    let eps = [0.01, 0.02, 0.04, 0.08];
    let (maxes, slope) =
        remainder_scaling(&cfg.metric, &lc.perturbation(), &eps, &inflow, &lc.options).unwrap();
    Outcome {
        pass: (1.8..=2.2).contains(&slope),
        detail: format!(
            "log-log slope of max|R| = {slope:.4} (range [1.8, 2.2]); max|R| = {}",
            maxes
                .iter()
                .map(|m| format!("{m:.2e}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    }
}

fn stability_witness() -> Outcome {
    let cfg = scenario("stability-32.toml");
    let mut opts = cfg.stability.clone();
    opts.grid = 32;
    opts.trials = 50;
    opts.perturbation = 0.02;
    let s = stability_ratio_sweep(&cfg.metric, cfg.seed, &opts).unwrap();
    let p = s.perturbed.as_ref().unwrap();
    let change = s.max_trial_change.unwrap();
    let pass = s.base.all_finite()
        && p.all_finite()
        && s.base.max_over_median <= 10.0
        && p.max_over_median <= 10.0
        && change <= 2.0;
    Outcome {
        pass,
        detail: format!(
            "max/median = {:.3} (perturbed {:.3}, tol 10); max per-trial change under eps=0.02 = {change:.3} (tol 2)",
            s.base.max_over_median, p.max_over_median
        ),
    }
}

fn closed_loop_inversion() -> Outcome {
    let spec = MetricSpec::euclidean();
    let opts = ClosedLoopOptions::default();
    let errs: Vec<f64> = [32, 48, 64]
        .iter()
        .map(|&n| {
            random_closed_loop(&spec, n, 1, &opts)
                .unwrap()
                .relative_error
                .unwrap()
        })
        .collect();
    let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
    Outcome {
        pass: errs[0] <= 0.10 && decreasing,
        detail: format!(
            "relative L2 error N=32/48/64: {:.4} / {:.4} / {:.4} (tol 0.10 at N=32, strictly decreasing)",
            errs[0], errs[1], errs[2]
        ),
    }
}

fn holder_exponent() -> Outcome {
    let cfg = scenario("conformal-pair.toml");
    let h = holder_fit(&cfg.metric, &cfg.holder).unwrap();
    Outcome {
        pass: h.exponent >= 0.5,
        detail: format!(
            "fitted exponent = {:.4} (tol >= 0.5); caveat: one-sided witness over {} amplitudes of one perturbation family; the theoretical exponent below 1 and its constants are not reproducible at desk scale",
            h.exponent,
            h.amplitudes.len()
        ),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome, Option<Duration>); 10] = [
        (
            "1 potential-field annihilation",
            potential_annihilation,
            Some(Duration::from_secs(60)),
        ),
        ("2 adjointness", adjointness, Some(Duration::from_secs(120))),
        (
            "3 kernel vs composed route",
            kernel_vs_composed,
            Some(Duration::from_secs(300)),
        ),
        ("4 decomposition projectors", decomposition_projectors, None),
        ("5 gauge normalization", gauge_normalization, None),
        (
            "6 boundary jet recovery",
            jet_recovery,
            Some(Duration::from_secs(300)),
        ),
        ("7 linearization remainder", linearization_remainder, None),
        (
            "8 stability witness",
            stability_witness,
            Some(Duration::from_secs(600)),
        ),
        ("9 closed-loop inversion", closed_loop_inversion, None),
        ("10 Hölder fit", holder_exponent, None),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, check, budget) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let in_time = budget.map_or(true, |b| elapsed <= b);
        let pass = outcome.pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget_note = budget.map_or(String::new(), |b| format!(", budget {} s", b.as_secs()));
        println!(
            "[{}] criterion {name}: {} [{:.1} s{budget_note}]",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
