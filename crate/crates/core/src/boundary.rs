//! Boundary jets of a metric from short-chord boundary distances, and the linearization of the
//! boundary distance function.
//!
//! Jets are tangential Taylor coefficients `f^(k)` of `f = g₁ − g₀` in common boundary normal
//! coordinates `(β, r)`: `f_ββ(β, r) = Σ r^k f^(k)(β)`. The squared distance between the
//! boundary points at `β` and `β + εp` satisfies
//! `ρ²_{g₁} − ρ²_{g₀} = C_k ε^{2k+2} p^{2k+2} ∫₀¹ Γ_s^k ds f^(k) + O(ε^{2k+3})` when the
//! lower jets vanish, with `Γ_s = −½ ∂_r (g_s)_ββ` on `∂Ω` along `g_s = g₀ + s f`.

use std::f64::consts::TAU;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauge::{boundary_normal_chart, ChartOptions};
use crate::geodesic::{boundary_distance, shoot_from_boundary, ShootingOptions};
use crate::linalg;
use crate::metric::{CollarJet, Family, Fourier, MetricSpec, Point, TensorTerm, DIM};
use crate::tensorfield::{Grid, Support, SymTensorField, SYM};
use crate::xray::{ray_integral, InflowGrid};

/// `C_k = 2^{−k} ∫₀¹ (t − t²)^k dt`.
pub fn jet_constant(k: usize) -> f64 {
    // ∫₀¹ (t − t²)^k dt = (k!)² / (2k + 1)!
    let mut beta = 1.0;
    for j in 1..=k {
        beta *= j as f64 / (k + j) as f64;
    }
    beta /= (2 * k + 1) as f64;
    beta / 2f64.powi(k as i32)
}

/// Squared boundary distances from the point at angle `beta` to the points at `beta + εp`.
#[derive(Clone, Debug, Serialize)]
pub struct EpsilonScan {
    pub beta: f64,
    pub direction: f64,
    pub eps: Vec<f64>,
    /// `ρ²_{g₀}` at `+ε` and `−ε`.
    pub rho2_0: Vec<[f64; 2]>,
    /// `ρ²_{g₁}` at `+ε` and `−ε`.
    pub rho2_1: Vec<[f64; 2]>,
}

impl EpsilonScan {
    /// Even part `½(D(ε) + D(−ε))` of `D = ρ²_{g₁} − ρ²_{g₀}`.
    pub fn even_difference(&self) -> Vec<f64> {
        self.rho2_0
            .iter()
            .zip(&self.rho2_1)
            .map(|(a, b)| 0.5 * ((b[0] - a[0]) + (b[1] - a[1])))
            .collect()
    }

    /// Coefficients `c_1, …, c_J` of `Σ c_j ε^{2j}` fitted to the even difference.
    pub fn even_coefficients(&self, terms: usize) -> Result<Vec<f64>> {
        let rows: Vec<Vec<f64>> = self
            .eps
            .iter()
            .map(|e| (1..=terms).map(|j| e.powi(2 * j as i32)).collect())
            .collect();
        linalg::least_squares(&rows, &self.even_difference())
            .ok_or_else(|| Error::Conditioning("ε-grid too small for the requested fit".into()))
    }

    /// Slope of `log |D_even|` against `log ε` over the scan.
    pub fn leading_exponent(&self) -> f64 {
        let d = self.even_difference();
        let pts: Vec<(f64, f64)> = self
            .eps
            .iter()
            .zip(&d)
            .filter(|(_, v)| v.abs() > 0.0)
            .map(|(e, v)| (e.ln(), v.abs().ln()))
            .collect();
        fit_slope(&pts)
    }
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Geometric grid `ε₀ 2^{−i}`, `i < count`.
pub fn geometric_grid(eps0: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| eps0 * 0.5f64.powi(i as i32)).collect()
}

fn rho2(spec: &MetricSpec, a: f64, b: f64, opts: &ShootingOptions) -> Result<f64> {
    let x = spec.domain.boundary_point(a);
    let y = spec.domain.boundary_point(b);
    Ok(boundary_distance(spec, &x, &y, opts)?.rho.powi(2))
}

pub fn epsilon_scan(
    spec0: &MetricSpec,
    spec1: &MetricSpec,
    beta: f64,
    direction: f64,
    eps: &[f64],
    opts: &ShootingOptions,
) -> Result<EpsilonScan> {
    if spec0.domain != spec1.domain {
        return Err(Error::Input(
            "the two metrics live on different domains".into(),
        ));
    }
    let pairs: Vec<Result<([f64; 2], [f64; 2])>> = eps
        .par_iter()
        .map(|&e| {
            let mut r0 = [0.0; 2];
            let mut r1 = [0.0; 2];
            for (s, sign) in [1.0, -1.0].iter().enumerate() {
                let b = beta + sign * e * direction;
                r0[s] = rho2(spec0, beta, b, opts)?;
                r1[s] = rho2(spec1, beta, b, opts)?;
            }
            Ok((r0, r1))
        })
        .collect();
    let (rho2_0, rho2_1) = pairs
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok(EpsilonScan {
        beta,
        direction,
        eps: eps.to_vec(),
        rho2_0,
        rho2_1,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JetOptions {
    /// Highest jet order recovered (at most 2).
    pub order: usize,
    /// Equispaced boundary angles at which the jets are recovered.
    pub base_points: usize,
    /// Tangential directions `p` (in units of `β`).
    pub directions: Vec<f64>,
    /// `ε`-grid for the order-0 scan.
    pub eps0: Vec<f64>,
    /// `ε`-grid for the higher-order scans.
    pub eps_high: Vec<f64>,
    /// Terms of the even polynomial fit.
    pub fit_terms: usize,
    pub shooting: ShootingOptions,
}

impl Default for JetOptions {
    fn default() -> Self {
        JetOptions {
            order: 1,
            base_points: 16,
            directions: vec![1.0],
            eps0: geometric_grid(0.16, 5),
            eps_high: (1..=8).map(|i| 0.04 * i as f64).collect(),
            fit_terms: 4,
            shooting: ShootingOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundaryJet {
    pub betas: Vec<f64>,
    /// `jets[k][j] = f^(k)_ββ(β_j)`.
    pub jets: Vec<Vec<f64>>,
    /// `−½ ∂_r (g₀)_ββ` on the boundary samples.
    pub base_gamma: Vec<f64>,
}

/// Metric `g₀ + Σ_{k<K} r^k F_k(β) dβ²` built from recovered jets sampled at equispaced angles.
pub fn truncated_jet_metric(base: &MetricSpec, jets: &[Vec<f64>]) -> MetricSpec {
    let r2 = base.domain.radius.powi(2);
    let collar = CollarJet {
        jets: jets
            .iter()
            .map(|j| Fourier::interpolate(&j.iter().map(|v| v / r2).collect::<Vec<_>>()))
            .collect(),
        fade_start: 0.3 * base.domain.radius,
        fade_end: 0.6 * base.domain.radius,
    };
    let mut spec = base.clone();
    spec.tensor.push(TensorTerm::Collar(collar));
    spec
}

/// Tangential jets `f^(k)` of `g₁ − g₀`, `k ≤ order`. Lower jets are removed from the data by
/// re-simulating the scans with the metric carrying the recovered lower jets, which keeps the
/// common boundary normal coordinates only when `g₀` is Euclidean.
pub fn jet_recover(
    spec0: &MetricSpec,
    spec1: &MetricSpec,
    opts: &JetOptions,
) -> Result<BoundaryJet> {
    if opts.order > 2 {
        return Err(Error::Input(format!(
            "jet order {} exceeds the supported maximum 2",
            opts.order
        )));
    }
    if opts.order > 0 && spec0.family() != Family::Euclidean {
        return Err(Error::Input(
            "higher jets need a Euclidean reference metric".into(),
        ));
    }
    if opts.directions.is_empty()
        || opts
            .directions
            .iter()
            .any(|p| !(0.5..=2.0).contains(&p.abs()))
    {
        return Err(Error::Conditioning(
            "tangential directions must satisfy ½ ≤ |p| ≤ 2".into(),
        ));
    }
    let n = opts.base_points;
    let betas: Vec<f64> = (0..n).map(|j| TAU * j as f64 / n as f64).collect();
    let mut jets: Vec<Vec<f64>> = Vec::new();
    let mut base_gamma = Vec::new();
    for k in 0..=opts.order {
        let reference = if k == 0 {
            spec0.clone()
        } else {
            truncated_jet_metric(spec0, &jets)
        };
        let gamma = boundary_gamma(&reference, n)?;
        if k == 0 {
            base_gamma = gamma.clone();
        }
        let eps = if k == 0 { &opts.eps0 } else { &opts.eps_high };
        let mut fk = Vec::with_capacity(n);
        for (j, &beta) in betas.iter().enumerate() {
            // Least squares over directions: c(p) = A p^{2k+2}.
            let (mut num, mut den) = (0.0, 0.0);
            for &p in &opts.directions {
                let scan = epsilon_scan(&reference, spec1, beta, p, eps, &opts.shooting)?;
                let c = scan.even_coefficients(opts.fit_terms)?[k];
                let w = p.powi(2 * k as i32 + 2);
                num += w * c;
                den += w * w;
            }
            let a = num / den;
            let ck = jet_constant(k);
            let g = gamma[j];
            if g <= 0.0 && k > 0 {
                return Err(Error::Convexity(format!(
                    "second fundamental form {g:.3e} ≤ 0 at β = {beta:.4}"
                )));
            }
            let value = match k {
                0 => a,
                // C₁ f (Γ − f/4) = a
                1 => {
                    let disc = g * g - a / ck;
                    if disc < 0.0 {
                        return Err(Error::Convexity(format!(
                            "averaged second fundamental form degenerates at β = {beta:.4}"
                        )));
                    }
                    2.0 * (g - disc.sqrt())
                }
                _ => a / (ck * g.powi(k as i32)),
            };
            fk.push(value);
        }
        jets.push(fk);
    }
    Ok(BoundaryJet {
        betas,
        jets,
        base_gamma,
    })
}

/// `−½ ∂_r G` at `count` equispaced boundary angles, for `G = g(∂_β, ∂_β)`.
pub fn boundary_gamma(spec: &MetricSpec, count: usize) -> Result<Vec<f64>> {
    let dr = 1e-3;
    let chart = boundary_normal_chart(spec, 2.0 * dr, ChartOptions { rays: count, dr })?;
    Ok(chart.points.iter().map(|ray| -0.5 * ray[0].guu_r).collect())
}

/// Closed-form jets `f^(0)`, `f^(1)` of `e^{2φ}δ − δ` relative to the Euclidean disk, in
/// `(β, r)` units.
pub fn conformal_jet_oracle(spec: &MetricSpec, beta: f64) -> [f64; 2] {
    let d = &spec.domain;
    let x = d.boundary_point(beta);
    let phi = spec.conformal_exponent(&x);
    let nu = d.outward_normal(&x);
    let dnu = phi.grad[0] * nu[0] + phi.grad[1] * nu[1];
    let r = d.radius;
    let f0 = r * r * ((2.0 * phi.value).exp() - 1.0);
    let f1 = 2.0 * r - 2.0 * r * r * phi.value.exp() * (1.0 / r + dnu);
    [f0, f1]
}

/// Perturbation `f = g̃ − g` given by closed-form tensor terms.
#[derive(Clone, Debug)]
pub struct Perturbation {
    pub terms: Vec<TensorTerm>,
}

impl Perturbation {
    pub fn value(&self, domain: &crate::metric::Domain, x: &Point) -> [f64; SYM] {
        let spec = MetricSpec {
            domain: *domain,
            conformal: Vec::new(),
            tensor: self.terms.clone(),
        };
        let g = spec.jet(x, false).g;
        [g[0][0] - 1.0, g[0][1], g[1][1] - 1.0]
    }

    pub fn scaled(&self, s: f64) -> Perturbation {
        let terms = self
            .terms
            .iter()
            .map(|t| match t {
                TensorTerm::Profiled {
                    amplitude,
                    center,
                    profile,
                    matrix,
                } => TensorTerm::Profiled {
                    amplitude: amplitude * s,
                    center: *center,
                    profile: *profile,
                    matrix: *matrix,
                },
                TensorTerm::Collar(c) => {
                    let scale = |f: &Fourier| Fourier {
                        mean: f.mean * s,
                        cos: f.cos.iter().map(|v| v * s).collect(),
                        sin: f.sin.iter().map(|v| v * s).collect(),
                    };
                    TensorTerm::Collar(CollarJet {
                        jets: c.jets.iter().map(scale).collect(),
                        ..c.clone()
                    })
                }
            })
            .collect();
        Perturbation { terms }
    }

    /// `g + f`.
    pub fn apply(&self, spec: &MetricSpec) -> MetricSpec {
        let mut out = spec.clone();
        out.tensor.extend(self.terms.iter().cloned());
        out
    }

    /// `sup |f| + sup |∂f|` over a sampling of `Ω`.
    pub fn c1_norm(&self, domain: &crate::metric::Domain, samples: usize) -> f64 {
        let spec = MetricSpec {
            domain: *domain,
            conformal: Vec::new(),
            tensor: self.terms.clone(),
        };
        let (mut c0, mut c1): (f64, f64) = (0.0, 0.0);
        for i in 0..samples {
            for j in 0..samples {
                let x = [
                    domain.center[0]
                        + domain.radius * (2.0 * i as f64 / (samples - 1) as f64 - 1.0),
                    domain.center[1]
                        + domain.radius * (2.0 * j as f64 / (samples - 1) as f64 - 1.0),
                ];
                if !domain.inside(&x) {
                    continue;
                }
                let jet = spec.jet(&x, false);
                let id = linalg::identity();
                for a in 0..DIM {
                    for b in 0..DIM {
                        c0 = c0.max((jet.g[a][b] - id[a][b]).abs());
                        for k in 0..DIM {
                            c1 = c1.max(jet.dg[k][a][b].abs());
                        }
                    }
                }
            }
        }
        c0 + c1
    }

    pub fn field(&self, grid: Grid) -> SymTensorField {
        let p = self.clone();
        let domain = grid.domain;
        SymTensorField::from_rule(
            grid,
            Support::Inner,
            Arc::new(move |x: &Point| p.value(&domain, x)),
        )
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LinearizationRow {
    pub beta: f64,
    pub psi: f64,
    pub exit_beta: f64,
    pub rho: f64,
    pub rho_perturbed: f64,
    pub half_if: f64,
    pub remainder: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LinearizationTable {
    pub rows: Vec<LinearizationRow>,
    pub max_remainder: f64,
    /// `max |R| / (ρ ‖f‖²_{C¹})`.
    pub max_scaled_remainder: f64,
    pub c1_norm: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearizationOptions {
    pub shooting: ShootingOptions,
    /// Step for the ray integral `I f`.
    pub ray_step: f64,
    /// Chords shorter than this are skipped.
    pub min_chord: f64,
}

impl Default for LinearizationOptions {
    fn default() -> Self {
        let mut shooting = ShootingOptions::default();
        shooting.flow.step = 2e-3;
        LinearizationOptions {
            shooting,
            ray_step: 2e-3,
            min_chord: 0.05,
        }
    }
}

/// `ρ_{g+f}(x, y) − ρ_g(x, y) − ½ I f(x, y)` over the chords of an inflow grid.
pub fn linearize_distance(
    spec: &MetricSpec,
    f: &Perturbation,
    inflow: &InflowGrid,
    opts: &LinearizationOptions,
) -> Result<LinearizationTable> {
    let perturbed = f.apply(spec);
    for x in [spec.domain.center, spec.domain.boundary_point(0.0)] {
        perturbed
            .eval_metric(&x)
            .map_err(|e| Error::Input(format!("g + f is not a metric: {e}")))?;
    }
    let field = f.field(Grid::new(8, spec.domain)?);
    let rows: Vec<Result<Option<LinearizationRow>>> = inflow
        .samples
        .par_iter()
        .map(|s| {
            let land = shoot_from_boundary(spec, &s.z, s.psi, &opts.shooting.flow)?;
            if land.time < opts.min_chord {
                return Ok(None);
            }
            let dom = &spec.domain;
            let y = dom.boundary_point(dom.angle_of(&land.point));
            let rho_perturbed = boundary_distance(&perturbed, &s.z, &y, &opts.shooting)?.rho;
            let half_if = 0.5 * ray_integral(spec, &field, &s.z, &s.omega, opts.ray_step)?;
            Ok(Some(LinearizationRow {
                beta: s.beta,
                psi: s.psi,
                exit_beta: dom.angle_of(&y),
                rho: land.time,
                rho_perturbed,
                half_if,
                remainder: rho_perturbed - land.time - half_if,
            }))
        })
        .collect();
    let rows: Vec<LinearizationRow> = rows
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let c1_norm = f.c1_norm(&spec.domain, 41);
    let max_remainder = rows.iter().map(|r| r.remainder.abs()).fold(0.0, f64::max);
    let max_scaled_remainder = if c1_norm > 0.0 {
        rows.iter()
            .map(|r| r.remainder.abs() / (r.rho * c1_norm * c1_norm))
            .fold(0.0, f64::max)
    } else {
        0.0
    };
    Ok(LinearizationTable {
        rows,
        max_remainder,
        max_scaled_remainder,
        c1_norm,
    })
}

/// Fitted log-log slope of `max |R|` against the amplitude `a` for `f → a f`.
pub fn remainder_scaling(
    spec: &MetricSpec,
    f: &Perturbation,
    amplitudes: &[f64],
    inflow: &InflowGrid,
    opts: &LinearizationOptions,
) -> Result<(Vec<f64>, f64)> {
    let mut maxes = Vec::new();
    for &a in amplitudes {
        maxes.push(linearize_distance(spec, &f.scaled(a), inflow, opts)?.max_remainder);
    }
    let pts: Vec<(f64, f64)> = amplitudes
        .iter()
        .zip(&maxes)
        .map(|(a, m)| (a.ln(), m.ln()))
        .collect();
    Ok((maxes, fit_slope(&pts)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{Profile, ScalarTerm};

    fn conformal() -> MetricSpec {
        MetricSpec::conformal(vec![ScalarTerm {
            amplitude: 0.1,
            center: [0.3, 0.1],
            profile: Profile::Gaussian { sharpness: 1.0 },
        }])
    }

    #[test]
    fn jet_constants() {
        assert!((jet_constant(0) - 1.0).abs() < 1e-15);
        assert!((jet_constant(1) - 1.0 / 12.0).abs() < 1e-15);
        assert!((jet_constant(2) - 1.0 / 120.0).abs() < 1e-15);
    }

    #[test]
    fn identical_metrics_give_zero_scan() {
        let spec = conformal();
        let scan = epsilon_scan(
            &spec,
            &spec,
            0.4,
            1.0,
            &geometric_grid(0.1, 3),
            &ShootingOptions::default(),
        )
        .unwrap();
        assert!(scan.even_difference().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scan_difference_is_quadratic_and_matches_order_zero_oracle() {
        let spec0 = MetricSpec::euclidean();
        let spec1 = conformal();
        let beta = 0.7;
        let scan = epsilon_scan(
            &spec0,
            &spec1,
            beta,
            1.0,
            &geometric_grid(0.08, 4),
            &ShootingOptions::default(),
        )
        .unwrap();
        let slope = scan.leading_exponent();
        assert!((1.9..=2.1).contains(&slope), "{slope}");
        let c = scan.even_coefficients(3).unwrap();
        let [f0, _] = conformal_jet_oracle(&spec1, beta);
        assert!((c[0] - f0).abs() < 1e-3 * f0.abs(), "{} vs {f0}", c[0]);
        // First-order Taylor oracle 2φ(x').
        let phi = spec1
            .conformal_exponent(&spec1.domain.boundary_point(beta))
            .value;
        assert!((c[0] - 2.0 * phi).abs() < 0.15 * 2.0 * phi);
    }

    #[test]
    fn euclidean_boundary_gamma_is_one() {
        let g = boundary_gamma(&MetricSpec::euclidean(), 8).unwrap();
        assert!(g.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn zero_perturbation_has_zero_remainder() {
        let spec = conformal();
        let inflow = InflowGrid::new(&spec, 6, 4).unwrap();
        let f = Perturbation { terms: Vec::new() };
        let t = linearize_distance(&spec, &f, &inflow, &LinearizationOptions::default()).unwrap();
        assert!(t.max_remainder < 1e-9, "{}", t.max_remainder);
    }
}
