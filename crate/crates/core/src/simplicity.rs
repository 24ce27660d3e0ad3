//! Sampled simplicity check: strict convexity of `∂Ω` and absence of conjugate points along
//! fans of geodesics issued from boundary points.

use std::f64::consts::{FRAC_PI_2, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gauge::{boundary_normal_chart, ChartOptions};
use crate::geodesic::{inward_covector, jacobi_determinant, FlowOptions, PhasePoint};
use crate::metric::MetricSpec;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimplicityOptions {
    /// Boundary points carrying a fan.
    pub boundary_samples: usize,
    /// Geodesics per fan.
    pub fan_size: usize,
    pub flow: FlowOptions,
}

impl Default for SimplicityOptions {
    fn default() -> Self {
        SimplicityOptions {
            boundary_samples: 32,
            fan_size: 15,
            flow: FlowOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SimplicityReport {
    /// Minimum over boundary samples of the second fundamental form on unit tangents.
    pub convexity_margin: f64,
    pub conjugate_point: bool,
    /// Minimum over sampled geodesics of `det[γ̇, Y](t) / t`.
    pub min_jacobi: f64,
    pub boundary_samples: usize,
    pub geodesics: usize,
    pub simple: bool,
    pub diagnostics: Vec<String>,
}

/// Second fundamental form `II(T, T) = −½ ∂_r G / G` of `∂Ω` at `count` equispaced angles.
pub fn boundary_convexity(spec: &MetricSpec, count: usize) -> Result<Vec<f64>> {
    let dr = 1e-3;
    let chart = boundary_normal_chart(spec, 2.0 * dr, ChartOptions { rays: count, dr })?;
    Ok(chart
        .points
        .iter()
        .map(|ray| -0.5 * ray[0].guu_r / ray[0].guu)
        .collect())
}

pub fn check_simplicity(spec: &MetricSpec, opts: &SimplicityOptions) -> Result<SimplicityReport> {
    let convexity = boundary_convexity(spec, opts.boundary_samples)?;
    let convexity_margin = convexity.iter().copied().fold(f64::INFINITY, f64::min);
    let dom = spec.domain;
    let fans: Vec<(f64, bool, Option<String>)> = (0..opts.boundary_samples * opts.fan_size)
        .into_par_iter()
        .map(|id| {
            let m = id / opts.fan_size;
            let l = id % opts.fan_size;
            let beta = TAU * m as f64 / opts.boundary_samples as f64;
            let psi = -FRAC_PI_2 + (l as f64 + 0.5) * std::f64::consts::PI / opts.fan_size as f64;
            let z = dom.boundary_point(beta);
            let xi = inward_covector(spec, &z, psi);
            match jacobi_determinant(spec, PhasePoint { x: z, xi }, dom.radius, &opts.flow) {
                Ok(trace) => {
                    let trapped = trace.times.last().map_or(true, |&t| t >= opts.flow.max_time - opts.flow.step);
                    let min = trace
                        .times
                        .iter()
                        .zip(&trace.det)
                        .filter(|(t, _)| **t > 10.0 * opts.flow.step)
                        .map(|(t, d)| d / t)
                        .fold(f64::INFINITY, f64::min);
                    let diag = if trapped {
                        Some(format!("geodesic from β = {beta:.4}, ψ = {psi:.4} did not leave Ω"))
                    } else if !trace.conjugate_times.is_empty() {
                        Some(format!(
                            "conjugate point at t = {:.4} on the geodesic from β = {beta:.4}, ψ = {psi:.4}",
                            trace.conjugate_times[0]
                        ))
                    } else {
                        None
                    };
                    (min, !trace.conjugate_times.is_empty() || trapped, diag)
                }
                Err(e) => (f64::NAN, true, Some(format!("geodesic from β = {beta:.4}, ψ = {psi:.4}: {e}"))),
            }
        })
        .collect();
    let min_jacobi = fans.iter().map(|f| f.0).fold(f64::INFINITY, f64::min);
    let conjugate_point = fans.iter().any(|f| f.1);
    let mut diagnostics: Vec<String> = fans.into_iter().filter_map(|f| f.2).collect();
    if convexity_margin <= 0.0 {
        diagnostics.insert(
            0,
            format!("boundary is not strictly convex (margin {convexity_margin:.4e})"),
        );
    }
    Ok(SimplicityReport {
        convexity_margin,
        conjugate_point,
        min_jacobi,
        boundary_samples: opts.boundary_samples,
        geodesics: opts.boundary_samples * opts.fan_size,
        simple: convexity_margin > 0.0 && !conjugate_point,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{Domain, Profile, ScalarTerm};

    fn lens(amplitude: f64, sharpness: f64) -> MetricSpec {
        MetricSpec::conformal(vec![ScalarTerm {
            amplitude,
            center: [0.0, 0.0],
            profile: Profile::Gaussian { sharpness },
        }])
    }

    #[test]
    fn euclidean_disks_are_simple() {
        for radius in [1.0, 0.5] {
            let spec = MetricSpec::euclidean().with_domain(Domain {
                center: [0.0, 0.0],
                radius,
                outer_radius: 1.1 * radius,
            });
            let opts = SimplicityOptions {
                boundary_samples: 8,
                fan_size: 5,
                ..Default::default()
            };
            let report = check_simplicity(&spec, &opts).unwrap();
            assert!(report.simple);
            assert!(
                (report.convexity_margin - 1.0 / radius).abs() < 1e-8,
                "{}",
                report.convexity_margin
            );
            assert!((report.min_jacobi - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn weak_conformal_metric_is_simple() {
        let opts = SimplicityOptions {
            boundary_samples: 12,
            fan_size: 9,
            ..Default::default()
        };
        let report = check_simplicity(&lens(0.05, 4.0), &opts).unwrap();
        assert!(report.simple, "{:?}", report.diagnostics);
        assert!(report.min_jacobi > 0.0);
    }

    #[test]
    fn strong_lens_has_conjugate_points() {
        let opts = SimplicityOptions {
            boundary_samples: 12,
            fan_size: 15,
            ..Default::default()
        };
        let report = check_simplicity(&lens(1.0, 4.0), &opts).unwrap();
        assert!(report.conjugate_point);
        assert!(!report.simple);
    }
}
