//! Hamiltonian geodesic flow, exponential map, boundary distance and Jacobi fields.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::metric::{inverse_jet, MetricSpec, Point, DIM};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowOptions {
    /// Fixed RK4 step in flow time.
    pub step: f64,
    /// Hard cap on flow time.
    pub max_time: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            step: 1e-3,
            max_time: 20.0,
        }
    }
}

/// A point of the cotangent bundle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhasePoint {
    pub x: Point,
    pub xi: Point,
}

pub(crate) fn rk4_step<const S: usize, F>(f: &F, y: &[f64; S], h: f64) -> [f64; S]
where
    F: Fn(&[f64; S]) -> [f64; S],
{
    let add = |a: &[f64; S], b: &[f64; S], s: f64| {
        let mut out = *a;
        for i in 0..S {
            out[i] += s * b[i];
        }
        out
    };
    let k1 = f(y);
    let k2 = f(&add(y, &k1, 0.5 * h));
    let k3 = f(&add(y, &k2, 0.5 * h));
    let k4 = f(&add(y, &k3, h));
    let mut out = *y;
    for i in 0..S {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Right-hand side of Hamilton's equations for `H = ½ g^{ij} ξ_i ξ_j`: returns `(ẋ, ξ̇)`.
pub fn hamilton(spec: &MetricSpec, x: &Point, xi: &Point) -> (Point, Point) {
    let jet = spec.jet(x, false);
    let inv = inverse_jet(&jet, false).expect("metric must be invertible along the flow");
    let mut dx = [0.0; DIM];
    let mut dxi = [0.0; DIM];
    for i in 0..DIM {
        for j in 0..DIM {
            dx[i] += inv.ginv[i][j] * xi[j];
        }
    }
    for k in 0..DIM {
        let mut s = 0.0;
        for i in 0..DIM {
            for j in 0..DIM {
                s += inv.dginv[k][i][j] * xi[i] * xi[j];
            }
        }
        dxi[k] = -0.5 * s;
    }
    (dx, dxi)
}

/// Hamilton's equations together with their linearization along a variation `(δx, δξ)`.
/// Returns `(ẋ, ξ̇, δẋ, δξ̇)`.
pub fn hamilton_variational(
    spec: &MetricSpec,
    x: &Point,
    xi: &Point,
    dx0: &Point,
    dxi0: &Point,
) -> [Point; 4] {
    let jet = spec.jet(x, true);
    let inv = inverse_jet(&jet, true).expect("metric must be invertible along the flow");
    let mut xdot = [0.0; DIM];
    let mut xidot = [0.0; DIM];
    let mut dxdot = [0.0; DIM];
    let mut dxidot = [0.0; DIM];
    for i in 0..DIM {
        for j in 0..DIM {
            xdot[i] += inv.ginv[i][j] * xi[j];
            dxdot[i] += inv.ginv[i][j] * dxi0[j];
            for l in 0..DIM {
                dxdot[i] += inv.dginv[l][i][j] * xi[j] * dx0[l];
            }
        }
    }
    for k in 0..DIM {
        let mut s = 0.0;
        let mut ds = 0.0;
        for i in 0..DIM {
            for j in 0..DIM {
                s += inv.dginv[k][i][j] * xi[i] * xi[j];
                ds += inv.dginv[k][i][j] * xi[i] * dxi0[j];
                for l in 0..DIM {
                    ds += 0.5 * inv.ddginv[k][l][i][j] * xi[i] * xi[j] * dx0[l];
                }
            }
        }
        xidot[k] = -0.5 * s;
        dxidot[k] = -ds;
    }
    [xdot, xidot, dxdot, dxidot]
}

pub(crate) fn hamilton_rhs4(spec: &MetricSpec) -> impl Fn(&[f64; 4]) -> [f64; 4] + '_ {
    move |y| {
        let (dx, dxi) = hamilton(spec, &[y[0], y[1]], &[y[2], y[3]]);
        [dx[0], dx[1], dxi[0], dxi[1]]
    }
}

pub(crate) fn variational_rhs8(spec: &MetricSpec) -> impl Fn(&[f64; 8]) -> [f64; 8] + '_ {
    move |y| {
        let r = hamilton_variational(
            spec,
            &[y[0], y[1]],
            &[y[2], y[3]],
            &[y[4], y[5]],
            &[y[6], y[7]],
        );
        [
            r[0][0], r[0][1], r[1][0], r[1][1], r[2][0], r[2][1], r[3][0], r[3][1],
        ]
    }
}

/// Result of integrating until the position leaves a disk.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Traced<const S: usize> {
    pub t: f64,
    pub y: [f64; S],
    pub exited: bool,
}

/// Integrate `rhs` from `y0` with fixed RK4 steps until the position (first two state entries)
/// leaves the disk of radius `radius` about `center`, or until `max_time`. The exit time is
/// located to near machine precision. `visit` sees every accepted state, including the last.
pub(crate) fn trace_to_exit<const S: usize, F, V>(
    rhs: &F,
    y0: [f64; S],
    center: &Point,
    radius: f64,
    step: f64,
    max_time: f64,
    mut visit: V,
) -> Result<Traced<S>>
where
    F: Fn(&[f64; S]) -> [f64; S],
    V: FnMut(f64, &[f64; S]),
{
    let level = |y: &[f64; S]| {
        let dx = y[0] - center[0];
        let dy = y[1] - center[1];
        dx * dx + dy * dy - radius * radius
    };
    let on_boundary = level(&y0) > -1e-9 * radius * radius;
    let mut t = 0.0;
    let mut y = y0;
    visit(t, &y);
    let mut first = true;
    loop {
        let h = step.min(max_time - t);
        if h <= 0.0 {
            return Ok(Traced {
                t,
                y,
                exited: false,
            });
        }
        let y1 = rk4_step(rhs, &y, h);
        if !y1.iter().all(|v| v.is_finite()) {
            return Err(Error::Integration(format!("non-finite state at t = {t}")));
        }
        let outside = level(&y1) > 0.0;
        if first && on_boundary {
            // The start lies on the circle: look for the first re-crossing inside this step.
            let subs = 16;
            let mut last_in: Option<f64> = None;
            let mut found = None;
            for m in 1..=subs {
                let s = h * m as f64 / subs as f64;
                let ys = if m == subs { y1 } else { rk4_step(rhs, &y, s) };
                let lv = level(&ys);
                if lv < 0.0 {
                    last_in = Some(s);
                } else if let Some(a) = last_in {
                    found = Some((a, s));
                    break;
                }
            }
            match (last_in, found) {
                (None, _) => {
                    visit(t, &y);
                    return Ok(Traced { t, y, exited: true });
                }
                (Some(_), Some((a, b))) => {
                    let (s, ys) = locate_crossing(rhs, &y, a, b, center, radius);
                    visit(t + s, &ys);
                    return Ok(Traced {
                        t: t + s,
                        y: ys,
                        exited: true,
                    });
                }
                (Some(_), None) => {}
            }
        } else if outside {
            let (s, ys) = locate_crossing(rhs, &y, 0.0, h, center, radius);
            visit(t + s, &ys);
            return Ok(Traced {
                t: t + s,
                y: ys,
                exited: true,
            });
        }
        first = false;
        t += h;
        y = y1;
        visit(t, &y);
    }
}

/// Root of `|x(s) - c|² - R²` for `s ∈ [a, b]`, where the state at `s` is one RK4 step of
/// length `s` from `y`; the level must change sign over the bracket.
pub(crate) fn locate_crossing<const S: usize, F>(
    rhs: &F,
    y: &[f64; S],
    mut a: f64,
    mut b: f64,
    center: &Point,
    radius: f64,
) -> (f64, [f64; S])
where
    F: Fn(&[f64; S]) -> [f64; S],
{
    let level = |y: &[f64; S]| {
        let dx = y[0] - center[0];
        let dy = y[1] - center[1];
        dx * dx + dy * dy - radius * radius
    };
    let width = b - a;
    let sign_a = level(&rk4_step(rhs, y, a)) > 0.0;
    while b - a > 1e-6 * width {
        let m = 0.5 * (a + b);
        if (level(&rk4_step(rhs, y, m)) > 0.0) == sign_a {
            a = m;
        } else {
            b = m;
        }
    }
    // Newton polish on the level function |x - c|^2 - R^2.
    let mut s = 0.5 * (a + b);
    let mut ys = rk4_step(rhs, y, s);
    for _ in 0..4 {
        let lv = level(&ys);
        if lv.abs() < 1e-16 {
            break;
        }
        let d = rhs(&ys);
        let dl = 2.0 * ((ys[0] - center[0]) * d[0] + (ys[1] - center[1]) * d[1]);
        if dl.abs() < 1e-300 {
            break;
        }
        let next = s - lv / dl;
        if !(next > a - 1e-3 * width && next < b + 1e-3 * width) {
            break;
        }
        s = next;
        ys = rk4_step(rhs, y, s);
    }
    (s, ys)
}

/// Sampled geodesic in phase space.
#[derive(Clone, Debug, Serialize)]
pub struct GeodesicPath {
    pub times: Vec<f64>,
    pub points: Vec<PhasePoint>,
    /// True when the path stopped on `∂Ω` rather than at the time cap.
    pub exited: bool,
}

impl GeodesicPath {
    pub fn end(&self) -> PhasePoint {
        *self.points.last().expect("paths hold at least the start")
    }

    pub fn duration(&self) -> f64 {
        *self.times.last().expect("paths hold at least the start")
    }
}

/// Integrate the geodesic flow from `start` until `t_max` or the first crossing of `∂Ω`.
pub fn flow(
    spec: &MetricSpec,
    start: PhasePoint,
    t_max: f64,
    opts: &FlowOptions,
) -> Result<GeodesicPath> {
    flow_within(spec, start, spec.domain.radius, t_max, opts)
}

/// As [`flow`], stopping on the circle of the given radius about the domain center.
pub fn flow_within(
    spec: &MetricSpec,
    start: PhasePoint,
    radius: f64,
    t_max: f64,
    opts: &FlowOptions,
) -> Result<GeodesicPath> {
    spec.eval_metric(&start.x)?;
    let mut times = Vec::new();
    let mut points = Vec::new();
    let y0 = [start.x[0], start.x[1], start.xi[0], start.xi[1]];
    let traced = trace_to_exit(
        &hamilton_rhs4(spec),
        y0,
        &spec.domain.center,
        radius,
        opts.step,
        t_max.min(opts.max_time),
        |t, y| {
            times.push(t);
            points.push(PhasePoint {
                x: [y[0], y[1]],
                xi: [y[2], y[3]],
            });
        },
    )?;
    Ok(GeodesicPath {
        times,
        points,
        exited: traced.exited,
    })
}

/// `exp_x(v)`: follow the geodesic with initial velocity `v` for unit time.
pub fn exp_map(spec: &MetricSpec, x: &Point, v: &Point, opts: &FlowOptions) -> Result<Point> {
    let g = spec.eval_metric(x)?;
    let len = linalg::quad(&g, v, v).sqrt();
    if len == 0.0 {
        return Ok(*x);
    }
    let gv = linalg::mat_vec(&g, v);
    let xi = [gv[0] / len, gv[1] / len];
    let y0 = [x[0], x[1], xi[0], xi[1]];
    let traced = trace_to_exit(
        &hamilton_rhs4(spec),
        y0,
        &spec.domain.center,
        spec.domain.outer_radius,
        opts.step,
        len,
        |_, _| {},
    )?;
    if traced.exited {
        let p = [traced.y[0], traced.y[1]];
        return Err(Error::Domain {
            x: p[0],
            y: p[1],
            radius: spec.domain.outer_radius,
        });
    }
    Ok([traced.y[0], traced.y[1]])
}

/// Dual norm `|ξ|_{g*}` at `x`.
pub fn covector_norm(spec: &MetricSpec, x: &Point, xi: &Point) -> f64 {
    let ginv = spec.inverse_jet(x, false).expect("invertible metric").ginv;
    linalg::quad(&ginv, xi, xi).sqrt()
}

/// Unit covector at the boundary point `z`, making angle `psi ∈ (-π/2, π/2)` with the inward
/// metric normal. Positive `psi` turns counterclockwise about the domain center.
pub fn inward_covector(spec: &MetricSpec, z: &Point, psi: f64) -> Point {
    let (e, _) = inward_direction(spec, z, psi);
    e
}

/// Inward unit covector and its derivative with respect to `psi`.
pub(crate) fn inward_direction(spec: &MetricSpec, z: &Point, psi: f64) -> (Point, Point) {
    let ginv = spec.inverse_jet(z, false).expect("invertible metric").ginv;
    let n = spec.domain.outward_normal(z);
    let m = linalg::mat_vec(&ginv, &n);
    let mn = linalg::norm(&m);
    let mhat = [m[0] / mn, m[1] / mn];
    let mperp = [-mhat[1], mhat[0]];
    let (s, c) = psi.sin_cos();
    let e = [-c * mhat[0] + s * mperp[0], -c * mhat[1] + s * mperp[1]];
    let de = [s * mhat[0] + c * mperp[0], s * mhat[1] + c * mperp[1]];
    normalize_with_derivative(&ginv, &e, &de)
}

/// `ω = e/|e|_{g*}` and `dω` given `de`.
pub(crate) fn normalize_with_derivative(
    ginv: &crate::metric::Mat,
    e: &Point,
    de: &Point,
) -> (Point, Point) {
    let q = linalg::quad(ginv, e, e);
    let nq = q.sqrt();
    let dq = 2.0 * linalg::quad(ginv, e, de);
    let mut w = [0.0; DIM];
    let mut dw = [0.0; DIM];
    for i in 0..DIM {
        w[i] = e[i] / nq;
        dw[i] = de[i] / nq - e[i] * dq / (2.0 * q * nq);
    }
    (w, dw)
}

/// Covector on the unit cosphere at `x` in Euclidean direction `alpha`, with its `alpha`-derivative.
pub fn cosphere_direction(spec: &MetricSpec, x: &Point, alpha: f64) -> (Point, Point) {
    let ginv = spec.inverse_jet(x, false).expect("invertible metric").ginv;
    let (s, c) = alpha.sin_cos();
    normalize_with_derivative(&ginv, &[c, s], &[-s, c])
}

/// Geodesic distance between two boundary points with the unit covectors at both ends.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BoundaryDistance {
    pub rho: f64,
    /// `ξ(x, y) = -∇_x ρ`, the initial unit covector of the geodesic from `x` to `y`.
    pub xi_init: Option<Point>,
    /// Unit covector of the geodesic on arrival at `y`.
    pub xi_exit: Option<Point>,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShootingOptions {
    pub flow: FlowOptions,
    /// Tolerance on the Euclidean distance between the landing point and the target.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        ShootingOptions {
            flow: FlowOptions::default(),
            tolerance: 1e-11,
            max_iterations: 100,
        }
    }
}

/// Landing data of the geodesic leaving boundary point `z` at angle `psi`.
pub(crate) struct Landing {
    pub time: f64,
    pub point: Point,
    pub xi: Point,
    pub init: Point,
}

pub(crate) fn shoot_from_boundary(
    spec: &MetricSpec,
    z: &Point,
    psi: f64,
    opts: &FlowOptions,
) -> Result<Landing> {
    let init = inward_covector(spec, z, psi);
    let traced = trace_to_exit(
        &hamilton_rhs4(spec),
        [z[0], z[1], init[0], init[1]],
        &spec.domain.center,
        spec.domain.radius,
        opts.step,
        opts.max_time,
        |_, _| {},
    )?;
    if !traced.exited {
        return Err(Error::Integration(format!(
            "geodesic from boundary angle {:.6} did not leave the domain within t = {} (trapped?)",
            spec.domain.angle_of(z),
            opts.max_time
        )));
    }
    let y = traced.y;
    Ok(Landing {
        time: traced.t,
        point: [y[0], y[1]],
        xi: [y[2], y[3]],
        init,
    })
}

fn check_on_boundary(spec: &MetricSpec, x: &Point) -> Result<()> {
    let r = spec.domain.dist_from_center(x);
    if (r - spec.domain.radius).abs() > 1e-8 * spec.domain.radius {
        return Err(Error::Input(format!(
            "point ({:.6}, {:.6}) is not on the boundary circle (|x - c| = {r})",
            x[0], x[1]
        )));
    }
    Ok(())
}

/// `ρ(x, y)` for boundary points by shooting on the inward angle at `x`.
pub fn boundary_distance(
    spec: &MetricSpec,
    x: &Point,
    y: &Point,
    opts: &ShootingOptions,
) -> Result<BoundaryDistance> {
    check_on_boundary(spec, x)?;
    check_on_boundary(spec, y)?;
    if linalg::norm(&linalg::sub(x, y)) < 1e-14 {
        return Ok(BoundaryDistance {
            rho: 0.0,
            xi_init: None,
            xi_exit: None,
            iterations: 0,
        });
    }
    let dom = &spec.domain;
    let bx = dom.angle_of(x);
    let target = (dom.angle_of(y) - bx).rem_euclid(TAU);
    // Counterclockwise angular travel of the landing point; decreasing in psi.
    let travel = |psi: f64| -> Result<(f64, Landing)> {
        let land = shoot_from_boundary(spec, x, psi, &opts.flow)?;
        let mut d = (dom.angle_of(&land.point) - bx).rem_euclid(TAU);
        if psi > 0.0 && d > 1.5 * PI {
            d -= TAU;
        }
        if psi < 0.0 && d < 0.5 * PI {
            d += TAU;
        }
        Ok((d, land))
    };
    let mut lo = -FRAC_PI_2;
    let mut hi = FRAC_PI_2;
    let mut psi = 0.5 * (PI - target);
    let mut prev: Option<(f64, f64)> = None;
    let tol_angle = opts.tolerance / dom.radius;
    for it in 1..=opts.max_iterations {
        let (d, land) = travel(psi)?;
        let f = d - target;
        if f.abs() <= tol_angle {
            return Ok(BoundaryDistance {
                rho: land.time,
                xi_init: Some(land.init),
                xi_exit: Some(land.xi),
                iterations: it,
            });
        }
        if f > 0.0 {
            lo = psi;
        } else {
            hi = psi;
        }
        let mut next = match prev {
            Some((p0, f0)) if (f - f0).abs() > 1e-300 => psi - f * (psi - p0) / (f - f0),
            _ => psi - f / -2.0,
        };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        prev = Some((psi, f));
        psi = next;
        if hi - lo < 1e-15 {
            break;
        }
    }
    let (d, _) = travel(psi)?;
    Err(Error::Shooting {
        iterations: opts.max_iterations,
        residual: (d - target).abs() * dom.radius,
    })
}

/// Boundary distances between `m` equispaced boundary points.
#[derive(Clone, Debug, Serialize)]
pub struct DistanceTable {
    pub angles: Vec<f64>,
    /// `ρ²` indexed `[i][j]`.
    pub rho2: Vec<Vec<f64>>,
    /// Initial covector `ξ(x_i, x_j)`; `None` on the diagonal.
    pub covectors: Vec<Vec<Option<Point>>>,
}

pub fn distance_table(
    spec: &MetricSpec,
    m: usize,
    opts: &ShootingOptions,
) -> Result<DistanceTable> {
    let angles: Vec<f64> = (0..m).map(|i| TAU * i as f64 / m as f64).collect();
    let points: Vec<Point> = angles
        .iter()
        .map(|&b| spec.domain.boundary_point(b))
        .collect();
    let rows: Vec<Result<Vec<BoundaryDistance>>> = (0..m)
        .into_par_iter()
        .map(|i| {
            (0..m)
                .map(|j| boundary_distance(spec, &points[i], &points[j], opts))
                .collect()
        })
        .collect();
    let mut rho2 = Vec::with_capacity(m);
    let mut covectors = Vec::with_capacity(m);
    for row in rows {
        let row = row?;
        rho2.push(row.iter().map(|d| d.rho * d.rho).collect());
        covectors.push(row.iter().map(|d| d.xi_init).collect());
    }
    Ok(DistanceTable {
        angles,
        rho2,
        covectors,
    })
}

/// Jacobi determinant `det[γ̇, Y]` along a geodesic, where `Y` is the variation through
/// unit covectors rotating about the start point.
#[derive(Clone, Debug, Serialize)]
pub struct JacobiTrace {
    pub times: Vec<f64>,
    pub det: Vec<f64>,
    /// Times where the determinant changes sign after the start.
    pub conjugate_times: Vec<f64>,
}

pub fn jacobi_determinant(
    spec: &MetricSpec,
    start: PhasePoint,
    radius: f64,
    opts: &FlowOptions,
) -> Result<JacobiTrace> {
    spec.eval_metric(&start.x)?;
    let alpha = start.xi[1].atan2(start.xi[0]);
    let (xi0, dxi0) = cosphere_direction(spec, &start.x, alpha);
    let rhs = variational_rhs8(spec);
    let mut times = Vec::new();
    let mut det = Vec::new();
    let y0 = [
        start.x[0], start.x[1], xi0[0], xi0[1], 0.0, 0.0, dxi0[0], dxi0[1],
    ];
    trace_to_exit(
        &rhs,
        y0,
        &spec.domain.center,
        radius,
        opts.step,
        opts.max_time,
        |t, y| {
            let r = rhs(y);
            times.push(t);
            det.push(linalg::cross2(&[r[0], r[1]], &[y[4], y[5]]));
        },
    )?;
    let mut conjugate_times = Vec::new();
    for k in 2..det.len() {
        if det[k - 1] != 0.0 && det[k].signum() != det[k - 1].signum() {
            conjugate_times.push(times[k]);
        }
    }
    Ok(JacobiTrace {
        times,
        det,
        conjugate_times,
    })
}
