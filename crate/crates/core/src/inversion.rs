//! Regularized reconstruction of the solenoidal part from normal-operator data, and empirical
//! witnesses of the stability estimate and of the Hölder shape of boundary rigidity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::fit_slope;
use crate::decomp::{DecompOperator, SolverOptions};
use crate::error::{Error, Result};
use crate::geodesic::{boundary_distance, ShootingOptions};
use crate::metric::{Family, MetricSpec, Profile, ScalarTerm, TensorTerm, DIM};
use crate::norms::{htilde2, NormOptions};
use crate::synth::random_tensor;
use crate::tensorfield::{inner, norm, Grid, Support, SymTensorField};
use crate::xray::{XrayOperator, XrayOptions};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionOptions {
    /// Regularization weight relative to the Rayleigh quotient of `S N S` on the data.
    pub regularization: f64,
    pub max_iterations: usize,
    /// Relative residual of the regularized normal equations at which the iteration stops.
    pub tolerance: f64,
    /// Iterations without a new best discrepancy before the run is flagged as stagnated.
    pub patience: usize,
}

impl Default for InversionOptions {
    fn default() -> Self {
        InversionOptions {
            regularization: 1e-4,
            max_iterations: 200,
            tolerance: 1e-6,
            patience: 15,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct InversionReport {
    #[serde(skip)]
    pub reconstruction: SymTensorField,
    pub iterations: usize,
    /// Iteration whose iterate was returned.
    pub best_iteration: usize,
    /// Absolute regularization weight `α`.
    pub regularization: f64,
    /// `‖S N S f̂ + α f̂ − S d‖ / ‖S d‖` per iteration.
    pub discrepancy: Vec<f64>,
    pub stagnated: bool,
    /// `‖S f̂ − f̂‖ / ‖f̂‖`.
    pub reprojection_change: f64,
    /// Relative `L²(Ω)` error against a known `f^s`, when one is supplied.
    pub relative_error: Option<f64>,
    /// `‖f^s‖_{L²(Ω)} / ‖N f‖_{H̃²(Ω₁)}`, when computed.
    pub stability_ratio: Option<f64>,
}

/// Relative `L²(Ω)` distance of `a` from `b`.
pub fn relative_error(
    decomp: &DecompOperator,
    a: &SymTensorField,
    b: &SymTensorField,
) -> Result<f64> {
    let a = a.grid_only().restrict(Support::Inner);
    let b = b.grid_only().restrict(Support::Inner);
    Ok(norm(&decomp.geo, &a.sub(&b)?)? / norm(&decomp.geo, &b)?)
}

/// Conjugate gradients for `S N S f + α f = S d` on the solenoidal subspace, in the Riemannian
/// `L²` pairing. Every operator application is re-projected by `S`; the iterate with the smallest
/// discrepancy is returned.
pub fn reconstruct_solenoidal(
    op: &XrayOperator,
    decomp: &DecompOperator,
    data: &SymTensorField,
    opts: &InversionOptions,
) -> Result<InversionReport> {
    let geo = &decomp.geo;
    let b = decomp.solenoidal(&data.grid_only())?;
    let b_norm = norm(geo, &b)?;
    let zero = SymTensorField::zeros(decomp.grid(), Support::Outer);
    if b_norm == 0.0 {
        return Ok(InversionReport {
            reconstruction: zero,
            iterations: 0,
            best_iteration: 0,
            regularization: 0.0,
            discrepancy: vec![0.0],
            stagnated: false,
            reprojection_change: 0.0,
            relative_error: None,
            stability_ratio: None,
        });
    }
    let snp = |p: &SymTensorField| -> Result<SymTensorField> { decomp.solenoidal(&op.normal(p)?) };
    let mut x = zero;
    let mut r = b.clone();
    let mut p = b.clone();
    let mut rr = inner(geo, &r, &r)?;
    let mut alpha_reg = None;
    let mut discrepancy = vec![1.0];
    let mut best = (x.clone(), 1.0, 0usize);
    let mut stagnated = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iterations {
        iterations = it;
        let np = snp(&p)?;
        let reg = *alpha_reg.get_or_insert_with(|| {
            let pp = inner(geo, &p, &p).unwrap_or(1.0);
            opts.regularization * inner(geo, &p, &np).unwrap_or(0.0) / pp
        });
        let ap = p.axpy(reg, &np)?;
        let pap = inner(geo, &p, &ap)?;
        if !(pap > 0.0) {
            stagnated = true;
            break;
        }
        let step = rr / pap;
        x = p.axpy(step, &x)?;
        r = ap.axpy(-step, &r)?;
        let rr_new = inner(geo, &r, &r)?;
        let d = rr_new.sqrt() / b_norm;
        discrepancy.push(d);
        if d < best.1 {
            best = (x.clone(), d, it);
        } else if it - best.2 >= opts.patience {
            stagnated = true;
            break;
        }
        if d <= opts.tolerance {
            break;
        }
        p = p.axpy(rr_new / rr, &r)?;
        rr = rr_new;
    }
    let (xb, _, best_iteration) = best;
    let projected = decomp.solenoidal(&xb)?;
    let xn = norm(geo, &xb)?;
    let reprojection_change = if xn > 0.0 {
        norm(geo, &projected.sub(&xb)?)? / xn
    } else {
        0.0
    };
    Ok(InversionReport {
        reconstruction: projected,
        iterations,
        best_iteration,
        regularization: alpha_reg.unwrap_or(0.0),
        discrepancy,
        stagnated,
        reprojection_change,
        relative_error: None,
        stability_ratio: None,
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClosedLoopOptions {
    /// Inflow boundary samples per grid node along one side.
    pub z_per_node: usize,
    /// Inflow direction samples per grid node along one side.
    pub w_per_node: usize,
    /// Adjoint directions per grid node along one side.
    pub directions_per_node: usize,
    pub xray: XrayOptions,
    pub inversion: InversionOptions,
}

impl Default for ClosedLoopOptions {
    fn default() -> Self {
        ClosedLoopOptions {
            z_per_node: 2,
            w_per_node: 1,
            directions_per_node: 2,
            xray: XrayOptions::default(),
            inversion: InversionOptions::default(),
        }
    }
}

/// Operators of a closed-loop run on `grid`, with Γ₋ sampling refined along with the grid.
pub fn closed_loop_operators(
    spec: &MetricSpec,
    grid: Grid,
    opts: &ClosedLoopOptions,
) -> Result<(XrayOperator, DecompOperator)> {
    let n = grid.n;
    let xray = XrayOptions {
        adjoint_directions: opts.directions_per_node * n,
        ..opts.xray
    };
    let op = XrayOperator::new(
        spec,
        grid,
        Support::Inner,
        opts.z_per_node * n,
        opts.w_per_node * n,
        xray,
    )?;
    let decomp = DecompOperator::new(spec, grid, SolverOptions::default())?;
    Ok((op, decomp))
}

/// Forward-then-invert: the data is `N f` (closed form used when `f` carries one) and the
/// ground truth is the discrete solenoidal projection of the grid samples of `f`.
pub fn closed_loop(
    spec: &MetricSpec,
    f: &SymTensorField,
    opts: &ClosedLoopOptions,
) -> Result<InversionReport> {
    let (op, decomp) = closed_loop_operators(spec, f.grid, opts)?;
    let truth = decomp.solenoidal(&f.grid_only())?;
    let data = op.normal(f)?;
    let mut report = reconstruct_solenoidal(&op, &decomp, &data, &opts.inversion)?;
    report.relative_error = Some(relative_error(&decomp, &report.reconstruction, &truth)?);
    Ok(report)
}

/// `closed_loop` on a random smooth field supported in `|x| < 0.9`.
pub fn random_closed_loop(
    spec: &MetricSpec,
    n: usize,
    seed: u64,
    opts: &ClosedLoopOptions,
) -> Result<InversionReport> {
    let grid = Grid::new(n, spec.domain)?;
    let f = random_tensor(grid, Support::Inner, seed, 0.9, 2);
    closed_loop(spec, &f, opts)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityOptions {
    pub grid: usize,
    pub trials: usize,
    pub z_count: usize,
    pub w_count: usize,
    pub cutoff: f64,
    pub max_freq: usize,
    /// Amplitude `ε` of the metric perturbation `g₀ + ε h`; zero skips the repeat.
    pub perturbation: f64,
    pub xray: XrayOptions,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        StabilityOptions {
            grid: 32,
            trials: 50,
            z_count: 64,
            w_count: 32,
            cutoff: 0.9,
            max_freq: 2,
            perturbation: 0.02,
            xray: XrayOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RatioSummary {
    pub ratios: Vec<f64>,
    pub max: f64,
    pub median: f64,
    pub max_over_median: f64,
}

impl RatioSummary {
    fn new(ratios: Vec<f64>) -> RatioSummary {
        let mut sorted = ratios.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let m = sorted.len();
        let median = if m == 0 {
            f64::NAN
        } else if m % 2 == 1 {
            sorted[m / 2]
        } else {
            0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
        };
        let max = sorted.last().copied().unwrap_or(f64::NAN);
        RatioSummary {
            ratios,
            max,
            median,
            max_over_median: max / median,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.ratios.iter().all(|r| r.is_finite() && *r > 0.0)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilitySweep {
    pub seed: u64,
    pub base: RatioSummary,
    pub perturbed: Option<RatioSummary>,
    /// `max_t max(r_t / r̃_t, r̃_t / r_t)` over trials.
    pub max_trial_change: Option<f64>,
}

/// Smooth symmetric perturbation `h` of unit size, vanishing near `∂Ω`.
pub fn metric_perturbation(amplitude: f64) -> TensorTerm {
    TensorTerm::Profiled {
        amplitude,
        center: [0.1, -0.15],
        profile: Profile::Bump { radius: 0.7 },
        matrix: [[1.0, 0.4], [0.4, -0.6]],
    }
}

fn stability_ratios(spec: &MetricSpec, seed: u64, opts: &StabilityOptions) -> Result<Vec<f64>> {
    let grid = Grid::new(opts.grid, spec.domain)?;
    let op = XrayOperator::new(
        spec,
        grid,
        Support::Outer,
        opts.z_count,
        opts.w_count,
        opts.xray,
    )?;
    let decomp = DecompOperator::new(spec, grid, SolverOptions::default())?;
    let norm_opts = NormOptions::default();
    (0..opts.trials)
        .into_par_iter()
        .map(|t| {
            let f = random_tensor(
                grid,
                Support::Inner,
                seed.wrapping_add(t as u64),
                opts.cutoff,
                opts.max_freq,
            );
            let fs = decomp.solenoidal(&f.grid_only())?.restrict(Support::Inner);
            let nf = op.normal(&f)?;
            Ok(norm(&decomp.geo, &fs)? / htilde2(&nf, &norm_opts))
        })
        .collect()
}

/// `‖f^s‖_{L²(Ω)} / ‖N f‖_{H̃²(Ω₁)}` over random smooth fields, for `g₀` and `g₀ + ε h`.
pub fn stability_ratio_sweep(
    spec: &MetricSpec,
    seed: u64,
    opts: &StabilityOptions,
) -> Result<StabilitySweep> {
    let base = stability_ratios(spec, seed, opts)?;
    let (perturbed, max_trial_change) = if opts.perturbation != 0.0 {
        let mut p = spec.clone();
        p.tensor.push(metric_perturbation(opts.perturbation));
        let pr = stability_ratios(&p, seed, opts)?;
        let change = base
            .iter()
            .zip(&pr)
            .map(|(a, b)| (a / b).max(b / a))
            .fold(0.0, f64::max);
        (Some(RatioSummary::new(pr)), Some(change))
    } else {
        (None, None)
    };
    Ok(StabilitySweep {
        seed,
        base: RatioSummary::new(base),
        perturbed,
        max_trial_change,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HolderOptions {
    /// Perturbation `h` of the conformal exponent; must vanish near `∂Ω`.
    pub perturbation: ScalarTerm,
    pub amplitudes: Vec<f64>,
    /// Equispaced boundary points; distances are taken over all pairs.
    pub boundary_points: usize,
    /// Sampling of `Ω` per side for the metric gap.
    pub gap_samples: usize,
    pub shooting: ShootingOptions,
}

impl Default for HolderOptions {
    fn default() -> Self {
        HolderOptions {
            perturbation: ScalarTerm {
                amplitude: 1.0,
                center: [0.15, -0.1],
                profile: Profile::Bump { radius: 0.6 },
            },
            amplitudes: vec![0.005, 0.01, 0.02, 0.04, 0.08],
            boundary_points: 16,
            gap_samples: 41,
            shooting: ShootingOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HolderFit {
    pub amplitudes: Vec<f64>,
    /// `sup |ρ_{g₀} − ρ_{g_a}|` over boundary pairs.
    pub delta: Vec<f64>,
    /// `sup_Ω |g_a − g₀|`.
    pub gap: Vec<f64>,
    /// Slope of `log gap` against `log δ`.
    pub exponent: f64,
    pub delta_monotone: bool,
}

fn metric_gap(a: &MetricSpec, b: &MetricSpec, samples: usize) -> Result<f64> {
    let dom = a.domain;
    let mut gap: f64 = 0.0;
    for i in 0..samples {
        for j in 0..samples {
            let s = |k: usize| 2.0 * k as f64 / (samples - 1) as f64 - 1.0;
            let x = [
                dom.center[0] + dom.radius * s(i),
                dom.center[1] + dom.radius * s(j),
            ];
            if !dom.inside(&x) {
                continue;
            }
            let (ga, gb) = (a.eval_metric(&x)?, b.eval_metric(&x)?);
            for p in 0..DIM {
                for q in 0..DIM {
                    gap = gap.max((ga[p][q] - gb[p][q]).abs());
                }
            }
        }
    }
    Ok(gap)
}

/// Boundary distance gap against metric gap for conformal perturbations `φ₀ + a h`.
pub fn holder_fit(spec: &MetricSpec, opts: &HolderOptions) -> Result<HolderFit> {
    if spec.family() == Family::General {
        return Err(Error::Input(
            "the Hölder sweep perturbs the conformal factor of a conformal metric".into(),
        ));
    }
    let dom = spec.domain;
    let m = opts.boundary_points;
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| ((i + 1)..m).map(move |j| (i, j)))
        .collect();
    let point = |k: usize| dom.boundary_point(std::f64::consts::TAU * k as f64 / m as f64);
    let distances = |s: &MetricSpec| -> Result<Vec<f64>> {
        pairs
            .par_iter()
            .map(|&(i, j)| Ok(boundary_distance(s, &point(i), &point(j), &opts.shooting)?.rho))
            .collect()
    };
    let base = distances(spec)?;
    let mut delta = Vec::new();
    let mut gap = Vec::new();
    for &a in &opts.amplitudes {
        let mut p = spec.clone();
        p.conformal.push(ScalarTerm {
            amplitude: a * opts.perturbation.amplitude,
            ..opts.perturbation
        });
        let d = distances(&p)?;
        delta.push(
            base.iter()
                .zip(&d)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max),
        );
        gap.push(metric_gap(spec, &p, opts.gap_samples)?);
    }
    let pts: Vec<(f64, f64)> = delta
        .iter()
        .zip(&gap)
        .filter(|(d, g)| **d > 0.0 && **g > 0.0)
        .map(|(d, g)| (d.ln(), g.ln()))
        .collect();
    let exponent = if pts.len() >= 2 {
        fit_slope(&pts)
    } else {
        f64::NAN
    };
    let delta_monotone = delta.windows(2).all(|w| w[1] >= w[0]);
    Ok(HolderFit {
        amplitudes: opts.amplitudes.clone(),
        delta,
        gap,
        exponent,
        delta_monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::Domain;
    use crate::synth::{random_one_form, sym_diff_rule};

    fn small_op(spec: &MetricSpec, n: usize) -> (XrayOperator, DecompOperator) {
        let grid = Grid::new(n, spec.domain).unwrap();
        let xray = XrayOptions {
            adjoint_directions: 48,
            ..Default::default()
        };
        (
            XrayOperator::new(spec, grid, Support::Inner, 48, 24, xray).unwrap(),
            DecompOperator::new(spec, grid, SolverOptions::default()).unwrap(),
        )
    }

    #[test]
    fn zero_data_gives_zero_reconstruction() {
        let spec = MetricSpec::euclidean();
        let (op, decomp) = small_op(&spec, 28);
        let data = SymTensorField::zeros(decomp.grid(), Support::Inner);
        let r = reconstruct_solenoidal(&op, &decomp, &data, &InversionOptions::default()).unwrap();
        assert_eq!(r.reconstruction.max_abs(), 0.0);
    }

    #[test]
    fn potential_field_reconstructs_to_nearly_zero() {
        let spec = MetricSpec::euclidean();
        let (op, decomp) = small_op(&spec, 28);
        let grid = decomp.grid();
        let v = random_one_form(grid, Support::Inner, 5, 0.9, 2);
        let f = SymTensorField::from_rule(
            grid,
            Support::Inner,
            sym_diff_rule(&spec, v.rule().unwrap().clone()),
        );
        let g = random_tensor(grid, Support::Inner, 6, 0.9, 2);
        let opts = InversionOptions {
            max_iterations: 30,
            ..Default::default()
        };
        let rf = reconstruct_solenoidal(&op, &decomp, &op.normal(&f).unwrap(), &opts).unwrap();
        let rg = reconstruct_solenoidal(&op, &decomp, &op.normal(&g).unwrap(), &opts).unwrap();
        let ratio = norm(&decomp.geo, &rf.reconstruction).unwrap()
            / norm(&decomp.geo, &rg.reconstruction).unwrap();
        assert!(ratio < 0.05, "{ratio}");
        assert!(rg.reprojection_change < 1e-8);
    }

    #[test]
    fn closed_loop_on_a_small_grid() {
        let r = random_closed_loop(&MetricSpec::euclidean(), 28, 3, &Default::default()).unwrap();
        assert!(r.relative_error.unwrap() < 0.2, "{:?}", r.relative_error);
    }

    #[test]
    fn ratio_summary_statistics() {
        let s = RatioSummary::new(vec![3.0, 1.0, 2.0, 4.0]);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.max, 4.0);
        assert!(s.all_finite());
    }

    #[test]
    fn zero_amplitude_gives_zero_gaps() {
        let spec = MetricSpec::euclidean().with_domain(Domain::default());
        let opts = HolderOptions {
            amplitudes: vec![0.0],
            boundary_points: 6,
            ..Default::default()
        };
        let fit = holder_fit(&spec, &opts).unwrap();
        assert_eq!(fit.delta, vec![0.0]);
        assert_eq!(fit.gap, vec![0.0]);
    }
}
