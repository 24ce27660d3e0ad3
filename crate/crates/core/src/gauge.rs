//! Polar-type charts `(u, r)` in which the metric reads `dr² + G du²`: boundary normal
//! coordinates along `∂Ω`, and semigeodesic coordinates from a point of `∂Ω₁`. Along the
//! `r`-lines the gauge conditions `(dv)_rr = f_rr`, `(dv)_ur = f_ur` become
//! `∂_r v_r = f_rr` and `∂_r v_u − (∂_r G / G) v_u = 2 f_ur − ∂_u v_r`.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::metric::{Mat, MetricSpec, Point, DIM};
use crate::sheet::{GeodesicSheet, SheetLayout, SheetSample};
use crate::tensorfield::{
    sym_diff, sym_to_mat, Grid, GridGeometry, OneFormField, Support, SymTensorField, SYM,
};

/// Lines meeting `∂Ω₁` at a smaller angle are flagged.
pub const TANGENCY_ANGLE: f64 = 5.0 * PI / 180.0;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChartOptions {
    pub rays: usize,
    pub dr: f64,
}

impl Default for ChartOptions {
    fn default() -> Self {
        ChartOptions::boundary()
    }
}

impl ChartOptions {
    pub fn boundary() -> Self {
        ChartOptions {
            rays: 512,
            dr: 0.0025,
        }
    }

    pub fn semigeodesic() -> Self {
        ChartOptions {
            rays: 721,
            dr: 0.005,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ChartKind {
    BoundaryNormal,
    SemiGeodesic,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ChartPoint {
    pub x: Point,
    pub x_u: Point,
    pub x_r: Point,
    pub x_ur: Point,
    /// `G = g(∂_u, ∂_u)`
    pub guu: f64,
    /// `∂_r G`
    pub guu_r: f64,
    /// `g(∂_u, ∂_r)`
    pub gur: f64,
    /// `g(∂_r, ∂_r)`
    pub grr: f64,
}

impl ChartPoint {
    fn new(spec: &MetricSpec, s: &SheetSample) -> ChartPoint {
        let jet = spec.jet(&s.x, false);
        let mut guu_r = 2.0 * bilinear(&jet.g, &s.x_u, &s.x_uv);
        for k in 0..DIM {
            guu_r += s.x_v[k] * linalg::quad(&jet.dg[k], &s.x_u, &s.x_u);
        }
        ChartPoint {
            x: s.x,
            x_u: s.x_u,
            x_r: s.x_v,
            x_ur: s.x_uv,
            guu: linalg::quad(&jet.g, &s.x_u, &s.x_u),
            guu_r,
            gur: bilinear(&jet.g, &s.x_u, &s.x_v),
            grr: linalg::quad(&jet.g, &s.x_v, &s.x_v),
        }
    }
}

fn bilinear(m: &Mat, a: &Point, b: &Point) -> f64 {
    let mut s = 0.0;
    for i in 0..DIM {
        for j in 0..DIM {
            s += m[i][j] * a[i] * b[j];
        }
    }
    s
}

fn tensor_pair(f: &[f64; SYM], a: &Point, b: &Point) -> f64 {
    bilinear(&sym_to_mat(f), a, b)
}

/// A one-parameter family of unit-speed geodesics `r ↦ x(u, r)` orthogonal to the level sets
/// of `r`, sampled on a regular `(u, r)` lattice.
#[derive(Clone, Debug)]
pub struct PolarChart {
    pub kind: ChartKind,
    pub sheet: GeodesicSheet,
    pub points: Vec<Vec<ChartPoint>>,
    pub origin: Point,
    pub r_max: f64,
    spec: MetricSpec,
}

impl PolarChart {
    fn from_sheet(
        spec: &MetricSpec,
        kind: ChartKind,
        sheet: GeodesicSheet,
        origin: Point,
        r_max: f64,
    ) -> Result<PolarChart> {
        let dr = sheet.layout.dv;
        let limit = (r_max / dr).round() as usize + 1;
        let points: Vec<Vec<ChartPoint>> = sheet
            .rays
            .par_iter()
            .map(|ray| {
                ray.iter()
                    .take(limit)
                    .map(|s| ChartPoint::new(spec, s))
                    .collect()
            })
            .collect();
        let first = if kind == ChartKind::SemiGeodesic {
            1
        } else {
            0
        };
        for (m, ray) in points.iter().enumerate() {
            if let Some((k, _)) = ray
                .iter()
                .enumerate()
                .skip(first)
                .find(|(_, p)| !(p.guu > 0.0))
            {
                return Err(Error::Chart(format!(
                    "coordinate lines focus at u = {:.4}, r = {:.4}",
                    sheet.u_of(m),
                    k as f64 * dr
                )));
            }
        }
        Ok(PolarChart {
            kind,
            sheet,
            points,
            origin,
            r_max,
            spec: spec.clone(),
        })
    }

    pub fn dr(&self) -> f64 {
        self.sheet.layout.dv
    }

    pub fn u_of(&self, m: usize) -> f64 {
        self.sheet.u_of(m)
    }

    fn euclidean_guess(&self, x: &Point) -> (f64, f64) {
        let d = &self.spec.domain;
        match self.kind {
            ChartKind::BoundaryNormal => (d.angle_of(x), d.radius - d.dist_from_center(x)),
            ChartKind::SemiGeodesic => {
                let g = self.spec.jet(&self.origin, false).g;
                let frame = orthonormal_frame(&g, &self.spec.domain.outward_normal(&self.origin));
                let dx = linalg::sub(x, &self.origin);
                let gd = linalg::mat_vec(&g, &dx);
                let a = linalg::dot(&gd, &frame[0]);
                let b = linalg::dot(&gd, &frame[1]);
                (b.atan2(a), (a * a + b * b).sqrt())
            }
        }
    }

    /// Chart coordinates `(u, r)` of `x`, if `x` is covered.
    pub fn invert(&self, x: &Point) -> Option<(f64, f64)> {
        let guess = self.euclidean_guess(x);
        let found = self.sheet.invert(x, guess).or_else(|| {
            let (u, _) = guess;
            let m = ((u - self.sheet.layout.u0) / self.sheet.layout.du).round() as isize;
            let mut best: Option<(f64, (f64, f64))> = None;
            for dm in -24..=24 {
                let mm = if self.sheet.layout.periodic {
                    (m + dm).rem_euclid(self.points.len() as isize)
                } else {
                    m + dm
                };
                if mm < 0 || mm as usize >= self.points.len() {
                    continue;
                }
                for (k, p) in self.points[mm as usize].iter().enumerate() {
                    let d = linalg::norm(&linalg::sub(&p.x, x));
                    if best.map_or(true, |(b, _)| d < b) {
                        best = Some((d, (self.u_of(mm as usize), k as f64 * self.dr())));
                    }
                }
            }
            self.sheet.invert(x, best?.1)
        })?;
        let (u, r) = found;
        if r < -1e-9 || r > self.r_max + 1e-9 {
            return None;
        }
        Some((u, r.max(0.0)))
    }

    /// Bilinear interpolation of lattice values (`NaN` marks missing entries).
    pub fn interpolate(&self, vals: &[Vec<f64>], u: f64, r: f64) -> Option<f64> {
        let l = &self.sheet.layout;
        let n = vals.len();
        let mut fu = (u - l.u0) / l.du;
        if l.periodic {
            fu = fu.rem_euclid(n as f64);
        } else if fu < -1e-9 || fu > (n - 1) as f64 + 1e-9 {
            return None;
        }
        let m0 = (fu.floor().max(0.0) as usize).min(if l.periodic { n - 1 } else { n - 2 });
        let a = fu - m0 as f64;
        let m1 = if l.periodic { (m0 + 1) % n } else { m0 + 1 };
        let fr = r / l.dv;
        let k0 = fr.floor().max(0.0) as usize;
        let b = fr - k0 as f64;
        let get = |m: usize, k: usize| vals[m].get(k).copied().filter(|v| v.is_finite());
        let w = [
            (m0, k0, (1.0 - a) * (1.0 - b)),
            (m1, k0, a * (1.0 - b)),
            (m0, k0 + 1, (1.0 - a) * b),
            (m1, k0 + 1, a * b),
        ];
        let mut s = 0.0;
        for (m, k, wt) in w {
            if wt.abs() < 1e-14 {
                continue;
            }
            s += wt * get(m, k)?;
        }
        Some(s)
    }

    /// Cartesian components of the covector with chart components `(c_u, c_r)` at `(u, r)`.
    fn to_cartesian(&self, u: f64, r: f64, cu: f64, cr: f64) -> Option<Point> {
        let (_, xu, xr) = self.sheet.position(u, r)?;
        let det = linalg::cross2(&xu, &xr);
        if det.abs() < 1e-14 {
            return None;
        }
        // Solve [xu xr]ᵀ w = (cu, cr).
        Some([
            (cu * xr[1] - cr * xu[1]) / det,
            (cr * xu[0] - cu * xr[0]) / det,
        ])
    }
}

/// `g`-orthonormal frame at a boundary point: tangent first, inward second.
fn orthonormal_frame(g: &Mat, outward: &Point) -> [Point; 2] {
    let t = [-outward[1], outward[0]];
    let tn = linalg::quad(g, &t, &t).sqrt();
    let t = [t[0] / tn, t[1] / tn];
    let inward = [-outward[0], -outward[1]];
    let p = bilinear(g, &inward, &t);
    let w = [inward[0] - p * t[0], inward[1] - p * t[1]];
    let wn = linalg::quad(g, &w, &w).sqrt();
    [t, [w[0] / wn, w[1] / wn]]
}

/// Boundary normal coordinates `(β, r)`: `r` is the distance to `∂Ω` along the inward normal
/// geodesic from the boundary point at angle `β`. Covers `0 ≤ r ≤ r_max`.
pub fn boundary_normal_chart(
    spec: &MetricSpec,
    r_max: f64,
    opts: ChartOptions,
) -> Result<PolarChart> {
    let domain = spec.domain;
    let count = opts.rays;
    let layout = SheetLayout {
        u0: 0.0,
        du: 2.0 * PI / count as f64,
        count,
        periodic: true,
        dv: opts.dr,
        stop_radius: domain.outer_radius,
        max_len: r_max + 2.0 * opts.dr,
    };
    let s2 = spec.clone();
    let sheet = GeodesicSheet::build(spec, layout, move |beta| {
        let z = domain.boundary_point(beta);
        let (s, c) = beta.sin_cos();
        let zu = [-domain.radius * s, domain.radius * c];
        let n = [c, s];
        let nu = [-s, c];
        let inv = s2.inverse_jet(&z, false).expect("invertible metric");
        let mut gu = linalg::zero_mat();
        for k in 0..DIM {
            for i in 0..DIM {
                for j in 0..DIM {
                    gu[i][j] += inv.dginv[k][i][j] * zu[k];
                }
            }
        }
        let q = linalg::quad(&inv.ginv, &n, &n);
        let sq = q.sqrt();
        let dq = 2.0 * bilinear(&inv.ginv, &nu, &n) + linalg::quad(&gu, &n, &n);
        let ds = dq / (2.0 * sq);
        let xi = [-n[0] / sq, -n[1] / sq];
        let xiu = [-nu[0] / sq + n[0] * ds / q, -nu[1] / sq + n[1] * ds / q];
        (z, xi, zu, xiu)
    });
    for (m, ray) in sheet.rays.iter().enumerate() {
        if (ray.len() as f64 - 1.0) * opts.dr < r_max - 1e-12 {
            return Err(Error::Chart(format!(
                "normal geodesic at u = {:.4} leaves Ω₁ before depth {r_max}",
                sheet.u_of(m)
            )));
        }
    }
    PolarChart::from_sheet(spec, ChartKind::BoundaryNormal, sheet, domain.center, r_max)
}

/// Semigeodesic chart: polar normal coordinates `(a, r)` about the bottom point `x₀` of `∂Ω₁`,
/// reported as `y = (cot a, r)` so that `g_{i2} = δ_{i2}`.
#[derive(Clone, Debug)]
pub struct SemiGeodesicChart {
    pub chart: PolarChart,
    pub grid: Grid,
    /// `(a, r)` per node, `None` where the node is not covered.
    pub polar: Vec<Option<(f64, f64)>>,
    /// `y = (cot a, r)` per node.
    pub coords: Vec<Option<Point>>,
    /// Pushed-forward metric `(g_11, g_12, g_22)` in `y` coordinates per node.
    pub metric: Vec<Option<[f64; SYM]>>,
    /// Nodes in the tangency band or not covered.
    pub flagged: Vec<bool>,
    /// Angle at which each coordinate line leaves `Ω₁`.
    pub exit_angle: Vec<f64>,
    /// `min sin a = θ²` over the covered nodes of `Ω`.
    pub theta_n_min: f64,
}

impl SemiGeodesicChart {
    /// `max |g_12|, |g_22 − 1|` over unflagged nodes.
    pub fn normal_defect(&self) -> f64 {
        let mut out: f64 = 0.0;
        for (m, &flag) in self.metric.iter().zip(&self.flagged) {
            if let (Some(m), false) = (m, flag) {
                out = out.max(m[1].abs()).max((m[2] - 1.0).abs());
            }
        }
        out
    }

    fn ray_flagged(&self, m: usize) -> bool {
        let a = self.chart.u_of(m);
        a.min(PI - a) < TANGENCY_ANGLE || self.exit_angle[m] < TANGENCY_ANGLE
    }

    /// Maximum distance between a covered node and the chart image of its coordinates.
    pub fn round_trip_error(&self) -> f64 {
        let mut out: f64 = 0.0;
        for (idx, p) in self.polar.iter().enumerate() {
            if let Some((a, r)) = p {
                if let Some((x, _, _)) = self.chart.sheet.position(*a, *r) {
                    out = out.max(linalg::norm(&linalg::sub(&x, &self.grid.node(idx))));
                }
            }
        }
        out
    }
}

pub fn semigeodesic_chart(
    spec: &MetricSpec,
    grid: Grid,
    opts: ChartOptions,
) -> Result<SemiGeodesicChart> {
    let domain = spec.domain;
    let origin = [domain.center[0], domain.center[1] - domain.outer_radius];
    let g0 = spec.eval_metric(&origin)?;
    let frame = orthonormal_frame(&g0, &domain.outward_normal(&origin));
    let a_lo = 0.5 * PI / 180.0;
    let layout = SheetLayout {
        u0: a_lo,
        du: (PI - 2.0 * a_lo) / (opts.rays - 1) as f64,
        count: opts.rays,
        periodic: false,
        dv: opts.dr,
        stop_radius: domain.outer_radius,
        max_len: 4.0 * domain.outer_radius,
    };
    let sheet = GeodesicSheet::build(spec, layout, move |a| {
        let (s, c) = a.sin_cos();
        let theta = [
            c * frame[0][0] + s * frame[1][0],
            c * frame[0][1] + s * frame[1][1],
        ];
        let dtheta = [
            -s * frame[0][0] + c * frame[1][0],
            -s * frame[0][1] + c * frame[1][1],
        ];
        (
            origin,
            linalg::mat_vec(&g0, &theta),
            [0.0, 0.0],
            linalg::mat_vec(&g0, &dtheta),
        )
    });
    let r_max = sheet
        .rays
        .iter()
        .map(|r| r.len() as f64 * opts.dr)
        .fold(0.0, f64::max);
    let exit_angle: Vec<f64> = sheet
        .rays
        .iter()
        .map(|ray| {
            let last = ray
                .iter()
                .rev()
                .find(|s| domain.inside_outer(&s.x))
                .unwrap_or(&ray[0]);
            let n = domain.outward_normal(&last.x);
            (linalg::dot(&last.x_v, &n).abs() / linalg::norm(&last.x_v))
                .min(1.0)
                .asin()
        })
        .collect();
    let chart = PolarChart::from_sheet(spec, ChartKind::SemiGeodesic, sheet, origin, r_max)?;
    let results: Vec<(Option<(f64, f64)>, Option<[f64; SYM]>)> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            if !grid.in_support(idx, Support::Outer) {
                return (None, None);
            }
            let x = grid.node(idx);
            let Some((a, r)) = chart.invert(&x) else {
                return (None, None);
            };
            let metric = chart.sheet.position(a, r).map(|(p, xa, xr)| {
                let g = spec.jet(&p, false).g;
                let s2 = a.sin().powi(2);
                [
                    linalg::quad(&g, &xa, &xa) * s2 * s2,
                    -bilinear(&g, &xa, &xr) * s2,
                    linalg::quad(&g, &xr, &xr),
                ]
            });
            (Some((a, r)), metric)
        })
        .collect();
    let polar: Vec<Option<(f64, f64)>> = results.iter().map(|r| r.0).collect();
    let metric: Vec<Option<[f64; SYM]>> = results.iter().map(|r| r.1).collect();
    let coords = polar
        .iter()
        .map(|p| p.map(|(a, r)| [a.cos() / a.sin(), r]))
        .collect();
    let mut out = SemiGeodesicChart {
        chart,
        grid,
        polar,
        coords,
        metric,
        flagged: Vec::new(),
        exit_angle,
        theta_n_min: f64::INFINITY,
    };
    let flagged: Vec<bool> = out
        .polar
        .iter()
        .enumerate()
        .map(|(idx, p)| match p {
            None => grid.in_support(idx, Support::Outer),
            Some((a, _)) => {
                let fm = (a - out.chart.sheet.layout.u0) / out.chart.sheet.layout.du;
                out.ray_flagged(fm.floor() as usize)
                    || out.ray_flagged((fm.ceil() as usize).min(out.exit_angle.len() - 1))
            }
        })
        .collect();
    out.flagged = flagged;
    for idx in 0..grid.len() {
        if grid.in_support(idx, Support::Inner) {
            match out.polar[idx] {
                Some((a, _)) => out.theta_n_min = out.theta_n_min.min(a.sin()),
                None => {
                    let x = grid.node(idx);
                    return Err(Error::Chart(format!(
                        "node ({:.4}, {:.4}) of Ω is not reached from x₀; the metric is not simple",
                        x[0], x[1]
                    )));
                }
            }
        }
    }
    Ok(out)
}

/// Chart components `(v_u, v_r)` of a 1-form on the chart lattice.
#[derive(Clone, Debug)]
pub struct ChartCovector {
    pub v_u: Vec<Vec<f64>>,
    pub v_r: Vec<Vec<f64>>,
}

/// Cumulative integral of lattice values with a locally cubic rule.
fn cumulative(q: &[f64], h: f64) -> Vec<f64> {
    let n = q.len();
    let mut out = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let seg = if n < 4 {
            0.5 * (q[k] + q[k + 1])
        } else if k == 0 {
            (9.0 * q[0] + 19.0 * q[1] - 5.0 * q[2] + q[3]) / 24.0
        } else if k == n - 2 {
            (9.0 * q[n - 1] + 19.0 * q[n - 2] - 5.0 * q[n - 3] + q[n - 4]) / 24.0
        } else {
            (-q[k - 1] + 13.0 * q[k] + 13.0 * q[k + 1] - q[k + 2]) / 24.0
        };
        out[k + 1] = out[k] + h * seg;
    }
    out
}

type Sampler<'a> = &'a (dyn Fn(&Point) -> [f64; SYM] + Sync);

/// Solve the gauge system along every `r`-line with `v = 0` at `r = 0`.
pub fn integrate_gauge(chart: &PolarChart, f: Sampler) -> ChartCovector {
    let dr = chart.dr();
    let semi = chart.kind == ChartKind::SemiGeodesic;
    let (v_u, v_r): (Vec<Vec<f64>>, Vec<Vec<f64>>) = chart
        .points
        .par_iter()
        .map(|ray| {
            let n = ray.len();
            let mut frr = vec![0.0; n];
            let mut fur = vec![0.0; n];
            let mut dfrr = vec![0.0; n];
            for (k, p) in ray.iter().enumerate() {
                let fx = f(&p.x);
                frr[k] = tensor_pair(&fx, &p.x_r, &p.x_r);
                fur[k] = tensor_pair(&fx, &p.x_u, &p.x_r);
                let len = linalg::norm(&p.x_u);
                let mut d = 2.0 * tensor_pair(&fx, &p.x_r, &p.x_ur);
                if len > 1e-12 {
                    let eps = 1e-5;
                    let e = [eps * p.x_u[0] / len, eps * p.x_u[1] / len];
                    let fp = f(&[p.x[0] + e[0], p.x[1] + e[1]]);
                    let fm = f(&[p.x[0] - e[0], p.x[1] - e[1]]);
                    let mut df = [0.0; SYM];
                    for c in 0..SYM {
                        df[c] = (fp[c] - fm[c]) / (2.0 * eps) * len;
                    }
                    d += tensor_pair(&df, &p.x_r, &p.x_r);
                }
                dfrr[k] = d;
            }
            let vr = cumulative(&frr, dr);
            let dvr_u = cumulative(&dfrr, dr);
            let mut q: Vec<f64> = (0..n)
                .map(|k| {
                    if ray[k].guu > 0.0 {
                        (2.0 * fur[k] - dvr_u[k]) / ray[k].guu
                    } else {
                        0.0
                    }
                })
                .collect();
            if semi && n > 3 {
                q[0] = 3.0 * q[1] - 3.0 * q[2] + q[3];
            }
            let w = cumulative(&q, dr);
            let vu = (0..n).map(|k| ray[k].guu * w[k]).collect();
            (vu, vr)
        })
        .unzip();
    ChartCovector { v_u, v_r }
}

/// Gauge residuals `f_rr − (dv)_rr` and `(f_ur − (dv)_ur)/√G` on the lattice, with the
/// derivatives of `v` taken by fourth-order differences of the lattice values.
#[derive(Clone, Debug)]
pub struct ResidualLattice {
    pub nn: Vec<Vec<f64>>,
    pub tn: Vec<Vec<f64>>,
    /// Largest orthonormal-frame component of `f` on the lattice.
    pub scale: f64,
}

fn d_r(v: &[f64], k: usize, h: f64) -> f64 {
    let n = v.len();
    if n < 5 {
        return f64::NAN;
    }
    if k >= 2 && k + 2 < n {
        (v[k - 2] - 8.0 * v[k - 1] + 8.0 * v[k + 1] - v[k + 2]) / (12.0 * h)
    } else if k == 0 {
        (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) / (12.0 * h)
    } else if k == 1 {
        (-3.0 * v[0] - 10.0 * v[1] + 18.0 * v[2] - 6.0 * v[3] + v[4]) / (12.0 * h)
    } else if k == n - 1 {
        -(-25.0 * v[n - 1] + 48.0 * v[n - 2] - 36.0 * v[n - 3] + 16.0 * v[n - 4] - 3.0 * v[n - 5])
            / (12.0 * h)
    } else {
        -(-3.0 * v[n - 1] - 10.0 * v[n - 2] + 18.0 * v[n - 3] - 6.0 * v[n - 4] + v[n - 5])
            / (12.0 * h)
    }
}

pub fn residual_lattice(chart: &PolarChart, v: &ChartCovector, f: Sampler) -> ResidualLattice {
    let dr = chart.dr();
    let du = chart.sheet.layout.du;
    let count = chart.points.len();
    let periodic = chart.sheet.layout.periodic;
    let skip = if chart.kind == ChartKind::SemiGeodesic {
        2
    } else {
        0
    };
    let rows: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..count)
        .into_par_iter()
        .map(|m| {
            let ray = &chart.points[m];
            let neighbor = |dm: isize| -> Option<usize> {
                let mm = m as isize + dm;
                if periodic {
                    Some(mm.rem_euclid(count as isize) as usize)
                } else if mm >= 0 && (mm as usize) < count {
                    Some(mm as usize)
                } else {
                    None
                }
            };
            let mut nn = vec![f64::NAN; ray.len()];
            let mut tn = vec![f64::NAN; ray.len()];
            let mut scale: f64 = 0.0;
            for (k, p) in ray.iter().enumerate() {
                let fx = f(&p.x);
                let frr = tensor_pair(&fx, &p.x_r, &p.x_r);
                let fur = tensor_pair(&fx, &p.x_u, &p.x_r);
                let fuu = tensor_pair(&fx, &p.x_u, &p.x_u);
                if p.guu > 0.0 {
                    scale = scale
                        .max(frr.abs())
                        .max(fur.abs() / p.guu.sqrt())
                        .max(fuu.abs() / p.guu);
                }
                if k < skip {
                    continue;
                }
                nn[k] = frr - d_r(&v.v_r[m], k, dr);
                let stencil: Option<Vec<f64>> = [-2isize, -1, 1, 2]
                    .iter()
                    .map(|&dm| neighbor(dm).and_then(|mm| v.v_r[mm].get(k).copied()))
                    .collect();
                if let Some(s) = stencil {
                    let dvr_u = (s[0] - 8.0 * s[1] + 8.0 * s[2] - s[3]) / (12.0 * du);
                    let dvu_r = d_r(&v.v_u[m], k, dr);
                    let gamma = p.guu_r / (2.0 * p.guu);
                    let dv_ur = 0.5 * (dvr_u + dvu_r) - gamma * v.v_u[m][k];
                    tn[k] = (fur - dv_ur) / p.guu.sqrt();
                }
            }
            (nn, tn, scale)
        })
        .collect();
    let scale = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let (nn, tn) = rows.into_iter().map(|(a, b, _)| (a, b)).unzip();
    ResidualLattice { nn, tn, scale }
}

/// Maximum residuals over the lattice points selected by `keep(m, r)`.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct GaugeResidual {
    pub max_nn: f64,
    pub max_tn: f64,
    pub scale: f64,
    pub points: usize,
}

impl GaugeResidual {
    pub fn relative(&self) -> f64 {
        if self.scale > 0.0 {
            self.max_nn.max(self.max_tn) / self.scale
        } else {
            self.max_nn.max(self.max_tn)
        }
    }
}

fn summarize<K: Fn(usize, f64) -> bool>(
    chart: &PolarChart,
    res: &ResidualLattice,
    keep: K,
) -> GaugeResidual {
    let mut out = GaugeResidual {
        scale: res.scale,
        ..Default::default()
    };
    for m in 0..res.nn.len() {
        for k in 0..res.nn[m].len() {
            let r = k as f64 * chart.dr();
            if !keep(m, r) {
                continue;
            }
            let (a, b) = (res.nn[m][k], res.tn[m][k]);
            if a.is_finite() && b.is_finite() {
                out.max_nn = out.max_nn.max(a.abs());
                out.max_tn = out.max_tn.max(b.abs());
                out.points += 1;
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaugeOptions {
    /// Width of the collar (relative to the radius of `Ω`) on which `f̃_in = 0`.
    pub collar: f64,
    pub chart: ChartOptions,
}

impl Default for GaugeOptions {
    fn default() -> Self {
        GaugeOptions {
            collar: 0.15,
            chart: ChartOptions::boundary(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BoundaryGauge {
    /// `f̃ = f − d(χv)`, evaluated pointwise through the chart.
    pub f_tilde: SymTensorField,
    /// `χv` on the grid.
    pub v: OneFormField,
    pub chart: PolarChart,
    pub potential: ChartCovector,
    /// Residual of `f̃_in` over the collar.
    pub residual: GaugeResidual,
    pub residuals: ResidualLattice,
}

/// Smooth cutoff equal to one on `[0, w]` and zero beyond `2w`.
fn collar_cutoff(r: f64, w: f64) -> f64 {
    let s = ((r - w) / w).clamp(0.0, 1.0);
    1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

fn cartesian_potential(
    chart: &PolarChart,
    pot: &ChartCovector,
    grid: Grid,
    support: Support,
    coords: &[Option<(f64, f64)>],
    weight: impl Fn(f64) -> f64 + Sync,
) -> OneFormField {
    let values: Vec<[f64; DIM]> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let Some((u, r)) = coords[idx] else {
                return [0.0; DIM];
            };
            if !grid.in_support(idx, support) {
                return [0.0; DIM];
            }
            let w = weight(r);
            if w == 0.0 {
                return [0.0; DIM];
            }
            match (
                chart.interpolate(&pot.v_u, u, r),
                chart.interpolate(&pot.v_r, u, r),
            ) {
                (Some(cu), Some(cr)) => chart
                    .to_cartesian(u, r, w * cu, w * cr)
                    .unwrap_or([0.0; DIM]),
                _ => [0.0; DIM],
            }
        })
        .collect();
    let mut out = OneFormField::zeros(grid, support);
    out.values = values;
    out
}

fn collar_cutoff_slope(r: f64, w: f64) -> f64 {
    let s = (r - w) / w;
    if !(0.0..1.0).contains(&s) {
        return 0.0;
    }
    -30.0 * s * s * (1.0 - s) * (1.0 - s) / w
}

/// `(dv)_uu = ∂_u v_u − (∂_u G / 2G) v_u + ½ ∂_r G v_r` on the chart lattice.
fn lattice_duu(chart: &PolarChart, pot: &ChartCovector) -> Vec<Vec<f64>> {
    let m_count = chart.points.len();
    let du = chart.sheet.layout.du;
    let periodic = chart.sheet.layout.periodic;
    (0..m_count)
        .map(|m| {
            let (mp, mm, span) = if periodic {
                ((m + 1) % m_count, (m + m_count - 1) % m_count, 2.0 * du)
            } else if m == 0 {
                (1, 0, du)
            } else if m + 1 == m_count {
                (m, m - 1, du)
            } else {
                (m + 1, m - 1, 2.0 * du)
            };
            (0..chart.points[m].len())
                .map(|k| {
                    let p = &chart.points[m][k];
                    let (Some(vp), Some(vm), Some(gp), Some(gm)) = (
                        pot.v_u[mp].get(k),
                        pot.v_u[mm].get(k),
                        chart.points[mp].get(k),
                        chart.points[mm].get(k),
                    ) else {
                        return f64::NAN;
                    };
                    if p.guu <= 0.0 {
                        return f64::NAN;
                    }
                    let dvu = (vp - vm) / span;
                    let dg = (gp.guu - gm.guu) / span;
                    dvu - dg / (2.0 * p.guu) * pot.v_u[m][k] + 0.5 * p.guu_r * pot.v_r[m][k]
                })
                .collect()
        })
        .collect()
}

/// Pointwise `f − d(χv)`. On the collar the gauge identities give `(dv)_rr = f_rr` and
/// `(dv)_ur = f_ur`, so only `χ'` and the tangential component need the lattice.
fn collar_corrected_rule(
    chart: &PolarChart,
    pot: &ChartCovector,
    f: &SymTensorField,
    w: f64,
) -> crate::tensorfield::Rule<SYM> {
    let duu = lattice_duu(chart, pot);
    let chart = Arc::new(chart.clone());
    let pot = Arc::new(pot.clone());
    let f = f.clone();
    let domain = chart.spec.domain;
    let depth = chart
        .points
        .iter()
        .filter_map(|ray| ray.last())
        .map(|p| domain.radius - domain.dist_from_center(&p.x))
        .fold(0.0f64, f64::max);
    Arc::new(move |x: &Point| {
        let fx = f.sample_extended(x);
        let rho = domain.dist_from_center(x);
        if rho > domain.radius || domain.radius - rho > depth + 1e-3 * domain.radius {
            return fx;
        }
        let Some((u, r)) = chart.invert(x) else {
            return fx;
        };
        let (c, dc) = (collar_cutoff(r, w), collar_cutoff_slope(r, w));
        if c == 0.0 && dc == 0.0 {
            return fx;
        }
        let (Some((_, xu, xr)), Some(vu), Some(vr), Some(tuu)) = (
            chart.sheet.position(u, r),
            chart.interpolate(&pot.v_u, u, r),
            chart.interpolate(&pot.v_r, u, r),
            chart.interpolate(&duu, u, r),
        ) else {
            return fx;
        };
        let t = [
            [c * tuu, 0.5 * dc * vu + c * tensor_pair(&fx, &xu, &xr)],
            [0.0, dc * vr + c * tensor_pair(&fx, &xr, &xr)],
        ];
        let det = linalg::cross2(&xu, &xr);
        if det.abs() < 1e-14 {
            return fx;
        }
        // Rows of ∂(u, r)/∂x.
        let a = [[xr[1] / det, -xr[0] / det], [-xu[1] / det, xu[0] / det]];
        let pull = |i: usize, j: usize| {
            a[0][i] * a[0][j] * t[0][0]
                + (a[0][i] * a[1][j] + a[1][i] * a[0][j]) * t[0][1]
                + a[1][i] * a[1][j] * t[1][1]
        };
        [fx[0] - pull(0, 0), fx[1] - pull(0, 1), fx[2] - pull(1, 1)]
    })
}

/// Boundary gauge: `v` solves the gauge system in boundary normal coordinates, is cut off
/// beyond the collar, and `f̃ = f − d(χv)` has vanishing normal components on the collar.
pub fn gauge_normalize_boundary(
    spec: &MetricSpec,
    f: &SymTensorField,
    opts: &GaugeOptions,
) -> Result<BoundaryGauge> {
    let w = opts.collar * spec.domain.radius;
    let chart = boundary_normal_chart(spec, 2.0 * w, opts.chart)?;
    let sampler = |x: &Point| f.sample_extended(x);
    let potential = integrate_gauge(&chart, &sampler);
    let residuals = residual_lattice(&chart, &potential, &sampler);
    let residual = summarize(&chart, &residuals, |_, r| r <= w + 1e-12);
    let grid = f.grid;
    let coords: Vec<Option<(f64, f64)>> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let x = grid.node(idx);
            if !grid.in_support(idx, Support::Inner)
                || spec.domain.radius - spec.domain.dist_from_center(&x) > 2.0 * w + grid.spacing()
            {
                return None;
            }
            chart.invert(&x)
        })
        .collect();
    let v = cartesian_potential(&chart, &potential, grid, Support::Inner, &coords, |r| {
        collar_cutoff(r, w)
    });
    let f_tilde = SymTensorField::from_rule(
        grid,
        Support::Inner,
        collar_corrected_rule(&chart, &potential, f, w),
    );
    Ok(BoundaryGauge {
        f_tilde,
        v,
        chart,
        potential,
        residual,
        residuals,
    })
}

#[derive(Clone, Debug)]
pub struct GlobalGauge {
    /// `f# = f − dv#` on `Ω₁`.
    pub f_sharp: SymTensorField,
    pub v: OneFormField,
    pub potential: ChartCovector,
    /// Residual of `f#_in` over the lattice outside the tangency band.
    pub residual: GaugeResidual,
    /// Residual of `f#_in` interpolated to the unflagged grid nodes.
    pub node_residual: GaugeResidual,
    pub residuals: ResidualLattice,
}

fn global_gauge(
    spec: &MetricSpec,
    chart: &SemiGeodesicChart,
    sampler: Sampler,
    base: &SymTensorField,
) -> Result<GlobalGauge> {
    let pc = &chart.chart;
    let potential = integrate_gauge(pc, sampler);
    let residuals = residual_lattice(pc, &potential, sampler);
    let residual = summarize(pc, &residuals, |m, _| !chart.ray_flagged(m));
    let mut node_residual = GaugeResidual {
        scale: residuals.scale,
        ..Default::default()
    };
    for (idx, p) in chart.polar.iter().enumerate() {
        if chart.flagged[idx] {
            continue;
        }
        if let Some((a, r)) = p {
            if let (Some(nn), Some(tn)) = (
                pc.interpolate(&residuals.nn, *a, *r),
                pc.interpolate(&residuals.tn, *a, *r),
            ) {
                node_residual.max_nn = node_residual.max_nn.max(nn.abs());
                node_residual.max_tn = node_residual.max_tn.max(tn.abs());
                node_residual.points += 1;
            }
        }
    }
    let grid = chart.grid;
    let v = cartesian_potential(pc, &potential, grid, Support::Outer, &chart.polar, |_| 1.0);
    let geo = GridGeometry::new(spec, grid)?;
    let dv = sym_diff(&geo, &v)?;
    let f_sharp = base.sub(&dv)?;
    Ok(GlobalGauge {
        f_sharp,
        v,
        potential,
        residual,
        node_residual,
        residuals,
    })
}

/// Global gauge on `Ω₁`: `v#` vanishes at `x₀` and `f# = f − dv#` has `f#_{i2} = 0` in the
/// semigeodesic chart, away from the tangency band.
pub fn gauge_normalize_global(
    spec: &MetricSpec,
    chart: &SemiGeodesicChart,
    f: &SymTensorField,
) -> Result<GlobalGauge> {
    chart.grid.ensure_same(&f.grid)?;
    let sampler = |x: &Point| f.sample_extended(x);
    let base = f.grid_only().restrict(Support::Outer);
    global_gauge(spec, chart, &sampler, &base)
}

/// Potential `v` with `dv = f − f^s`, recovered by integrating the gauge system from `x₀`.
pub fn recover_potential(
    spec: &MetricSpec,
    chart: &SemiGeodesicChart,
    f: &SymTensorField,
    f_s: &SymTensorField,
) -> Result<OneFormField> {
    chart.grid.ensure_same(&f.grid)?;
    chart.grid.ensure_same(&f_s.grid)?;
    let sampler = |x: &Point| {
        let a = f.sample_extended(x);
        let b = f_s.sample_extended(x);
        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
    };
    let base = SymTensorField::zeros(chart.grid, Support::Outer);
    Ok(global_gauge(spec, chart, &sampler, &base)?.v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{Domain, Profile, ScalarTerm};
    use crate::synth;
    use crate::tensorfield::Rule;
    use std::sync::Arc;

    fn conformal() -> MetricSpec {
        MetricSpec::conformal(vec![ScalarTerm {
            amplitude: 0.1,
            center: [0.0, 0.0],
            profile: Profile::Gaussian { sharpness: 1.0 },
        }])
    }

    #[test]
    fn cumulative_rule_is_exact_for_cubics() {
        let h = 0.1;
        let q: Vec<f64> = (0..12).map(|k| (k as f64 * h).powi(3)).collect();
        let c = cumulative(&q, h);
        for (k, v) in c.iter().enumerate() {
            assert!((v - (k as f64 * h).powi(4) / 4.0).abs() < 1e-13);
        }
    }

    #[test]
    fn euclidean_boundary_chart_is_polar() {
        let chart =
            boundary_normal_chart(&MetricSpec::euclidean(), 0.3, ChartOptions::boundary()).unwrap();
        let p = &chart.points[17][40];
        let beta = chart.u_of(17);
        let r = 40.0 * chart.dr();
        assert!((p.x[0] - (1.0 - r) * beta.cos()).abs() < 1e-12);
        assert!((p.guu - (1.0 - r).powi(2)).abs() < 1e-10);
        assert!(p.gur.abs() < 1e-12 && (p.grr - 1.0).abs() < 1e-12);
        let (u, rr) = chart.invert(&[0.5, 0.7]).unwrap();
        assert!((u - 0.7f64.atan2(0.5)).abs() < 1e-9);
        assert!((rr - (1.0 - 0.74f64.sqrt())).abs() < 1e-9);
    }

    #[test]
    fn gauss_lemma_holds_in_boundary_chart() {
        let chart = boundary_normal_chart(&conformal(), 0.3, ChartOptions::boundary()).unwrap();
        for ray in &chart.points {
            for p in ray {
                assert!(p.gur.abs() < 1e-8, "{}", p.gur);
                assert!((p.grr - 1.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn boundary_gauge_zeroes_normal_components() {
        let spec = conformal();
        let grid = Grid::new(64, Domain::default()).unwrap();
        let f = synth::random_tensor(grid, Support::Inner, 3, 0.95, 2);
        let gauge = gauge_normalize_boundary(&spec, &f, &GaugeOptions::default()).unwrap();
        assert!(gauge.residual.points > 1000);
        assert!(gauge.residual.relative() < 1e-6, "{:?}", gauge.residual);
        for idx in 0..grid.len() {
            let x = grid.node(idx);
            if spec.domain.dist_from_center(&x) > 0.99 && grid.in_support(idx, Support::Inner) {
                assert!(linalg::norm(&gauge.v.values[idx]) < 0.05 * f.max_abs());
            }
        }
    }

    #[test]
    fn gauge_of_tangential_field_is_trivial() {
        let spec = MetricSpec::euclidean();
        let grid = Grid::new(40, Domain::default()).unwrap();
        // f = a(x) (dθ)², no normal components in polar coordinates.
        let f = SymTensorField::from_rule(
            grid,
            Support::Inner,
            Arc::new(|x: &Point| {
                let r2 = x[0] * x[0] + x[1] * x[1];
                let a = (1.0 + x[0]) / r2.max(1e-12);
                [a * x[1] * x[1], -a * x[0] * x[1], a * x[0] * x[0]]
            }),
        );
        let gauge = gauge_normalize_boundary(&spec, &f, &GaugeOptions::default()).unwrap();
        let vmax = gauge.v.max_abs();
        assert!(vmax < 1e-6, "{vmax}");
    }

    #[test]
    fn euclidean_semigeodesic_chart_is_projective() {
        let grid = Grid::new(32, Domain::default()).unwrap();
        let spec = MetricSpec::euclidean();
        let chart = semigeodesic_chart(&spec, grid, ChartOptions::semigeodesic()).unwrap();
        assert!(chart.normal_defect() < 1e-4, "{}", chart.normal_defect());
        assert!(chart.round_trip_error() < 1e-6);
        for (idx, y) in chart.coords.iter().enumerate() {
            if let (Some(y), false) = (y, chart.flagged[idx]) {
                let x = grid.node(idx);
                let d = [x[0], x[1] + 1.1];
                let r = linalg::norm(&d);
                assert!((y[1] - r).abs() < 1e-7);
                assert!((y[0] - d[0] / d[1]).abs() < 1e-6 * (1.0 + y[0].abs()));
            }
        }
        assert!(chart.theta_n_min > 0.3);
    }

    #[test]
    fn global_gauge_recovers_boundary_vanishing_potential() {
        let spec = conformal();
        let grid = Grid::new(48, Domain::default()).unwrap();
        let chart = semigeodesic_chart(&spec, grid, ChartOptions::semigeodesic()).unwrap();
        assert!(chart.normal_defect() < 1e-4);
        let w: Rule<DIM> = synth::random_components::<DIM>(5, [0.0, 0.0], 0.8, 2);
        let dw =
            SymTensorField::from_rule(grid, Support::Inner, synth::sym_diff_rule(&spec, w.clone()));
        let zero = SymTensorField::zeros(grid, Support::Inner);
        let v = recover_potential(&spec, &chart, &dw, &zero).unwrap();
        let mut err: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for idx in 0..grid.len() {
            if chart.flagged[idx] {
                continue;
            }
            let e = w(&grid.node(idx));
            scale = scale.max(e[0].abs()).max(e[1].abs());
            err = err
                .max((v.values[idx][0] - e[0]).abs())
                .max((v.values[idx][1] - e[1]).abs());
        }
        assert!(err < 1e-3 * scale, "{err} {scale}");
        let gauge = gauge_normalize_global(&spec, &chart, &dw).unwrap();
        assert!(
            gauge.node_residual.relative() < 1e-5,
            "{:?}",
            gauge.node_residual
        );
        let _ = Arc::clone(&w);
    }
}
