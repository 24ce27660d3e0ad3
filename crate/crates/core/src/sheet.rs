//! One-parameter families of geodesics sampled on a regular `(u, v)` grid, where `v` is arc
//! length and `u` labels the initial data. Positions are interpolated bicubically from the
//! exact `u`- and `v`-derivatives supplied by the variational equations.

use rayon::prelude::*;

use crate::geodesic::{rk4_step, variational_rhs8};
use crate::linalg;
use crate::metric::{MetricSpec, Point};

#[derive(Clone, Copy, Debug, Default)]
pub struct SheetSample {
    pub x: Point,
    pub xi: Point,
    /// `∂x/∂u`
    pub x_u: Point,
    pub xi_u: Point,
    /// `∂x/∂v`
    pub x_v: Point,
    /// `∂²x/∂u∂v`
    pub x_uv: Point,
}

/// Initial data of one member of the family: `(x, ξ, ∂_u x, ∂_u ξ)`.
pub type SheetInit = (Point, Point, Point, Point);

#[derive(Clone, Copy, Debug)]
pub struct SheetLayout {
    pub u0: f64,
    pub du: f64,
    pub count: usize,
    pub periodic: bool,
    pub dv: f64,
    /// Rays are continued until they leave this disk (about the domain center).
    pub stop_radius: f64,
    pub max_len: f64,
}

#[derive(Clone, Debug)]
pub struct GeodesicSheet {
    pub layout: SheetLayout,
    pub rays: Vec<Vec<SheetSample>>,
}

struct Cell {
    m0: usize,
    m1: usize,
    a: f64,
    k: usize,
    b: f64,
}

fn h00(t: f64) -> (f64, f64) {
    (2.0 * t * t * t - 3.0 * t * t + 1.0, 6.0 * t * t - 6.0 * t)
}
fn h10(t: f64) -> (f64, f64) {
    (t * t * t - 2.0 * t * t + t, 3.0 * t * t - 4.0 * t + 1.0)
}
fn h01(t: f64) -> (f64, f64) {
    (-2.0 * t * t * t + 3.0 * t * t, -6.0 * t * t + 6.0 * t)
}
fn h11(t: f64) -> (f64, f64) {
    (t * t * t - t * t, 3.0 * t * t - 2.0 * t)
}

impl GeodesicSheet {
    pub fn build<I>(spec: &MetricSpec, layout: SheetLayout, init: I) -> GeodesicSheet
    where
        I: Fn(f64) -> SheetInit + Sync,
    {
        let rhs = variational_rhs8(spec);
        let center = spec.domain.center;
        let rays = (0..layout.count)
            .into_par_iter()
            .map(|m| {
                let u = layout.u0 + m as f64 * layout.du;
                let (x, xi, xu, xiu) = init(u);
                let mut y = [x[0], x[1], xi[0], xi[1], xu[0], xu[1], xiu[0], xiu[1]];
                let mut out = Vec::new();
                let steps = (layout.max_len / layout.dv).ceil() as usize;
                let mut entered = false;
                for k in 0..=steps {
                    let d = rhs(&y);
                    out.push(SheetSample {
                        x: [y[0], y[1]],
                        xi: [y[2], y[3]],
                        x_u: [y[4], y[5]],
                        xi_u: [y[6], y[7]],
                        x_v: [d[0], d[1]],
                        x_uv: [d[4], d[5]],
                    });
                    let r = linalg::norm(&linalg::sub(&[y[0], y[1]], &center));
                    if r < layout.stop_radius - 1e-12 {
                        entered = true;
                    } else if (entered || k > 0) && r > layout.stop_radius {
                        break;
                    }
                    if k == steps {
                        break;
                    }
                    y = rk4_step(&rhs, &y, layout.dv);
                }
                out
            })
            .collect();
        GeodesicSheet { layout, rays }
    }

    pub fn u_of(&self, m: usize) -> f64 {
        self.layout.u0 + m as f64 * self.layout.du
    }

    fn cell(&self, u: f64, v: f64) -> Option<Cell> {
        let l = &self.layout;
        if !(v >= 0.0) {
            return None;
        }
        let mut fu = (u - l.u0) / l.du;
        let n = l.count;
        if l.periodic {
            fu = fu.rem_euclid(n as f64);
        } else if fu < 0.0 || fu > (n - 1) as f64 {
            return None;
        }
        let mut m0 = fu.floor() as usize;
        if !l.periodic && m0 >= n - 1 {
            m0 = n - 2;
        }
        let m0 = m0.min(n - 1);
        let a = fu - m0 as f64;
        let m1 = if l.periodic { (m0 + 1) % n } else { m0 + 1 };
        let fv = v / l.dv;
        let k = fv.floor() as usize;
        let b = fv - k as f64;
        if self.rays[m0].len() < k + 2 || self.rays[m1].len() < k + 2 {
            return None;
        }
        Some(Cell { m0, m1, a, k, b })
    }

    /// Interpolated position and its `u`, `v` derivatives.
    pub fn position(&self, u: f64, v: f64) -> Option<(Point, Point, Point)> {
        let c = self.cell(u, v)?;
        let (du, dv) = (self.layout.du, self.layout.dv);
        let corners = [
            (
                &self.rays[c.m0][c.k],
                h00(c.a),
                h10(c.a),
                h00(c.b),
                h10(c.b),
            ),
            (
                &self.rays[c.m1][c.k],
                h01(c.a),
                h11(c.a),
                h00(c.b),
                h10(c.b),
            ),
            (
                &self.rays[c.m0][c.k + 1],
                h00(c.a),
                h10(c.a),
                h01(c.b),
                h11(c.b),
            ),
            (
                &self.rays[c.m1][c.k + 1],
                h01(c.a),
                h11(c.a),
                h01(c.b),
                h11(c.b),
            ),
        ];
        let mut p = [0.0; 2];
        let mut pa = [0.0; 2];
        let mut pb = [0.0; 2];
        for (s, va, da, vb, db) in corners {
            for i in 0..2 {
                let terms = [
                    (s.x[i], va, vb),
                    (s.x_u[i] * du, da, vb),
                    (s.x_v[i] * dv, va, db),
                    (s.x_uv[i] * du * dv, da, db),
                ];
                for (coef, ba, bb) in terms {
                    p[i] += coef * ba.0 * bb.0;
                    pa[i] += coef * ba.1 * bb.0;
                    pb[i] += coef * ba.0 * bb.1;
                }
            }
        }
        Some((p, [pa[0] / du, pa[1] / du], [pb[0] / dv, pb[1] / dv]))
    }

    /// Bilinear interpolation of every sampled quantity.
    pub fn sample(&self, u: f64, v: f64) -> Option<SheetSample> {
        let c = self.cell(u, v)?;
        let w = [
            ((1.0 - c.a) * (1.0 - c.b), &self.rays[c.m0][c.k]),
            (c.a * (1.0 - c.b), &self.rays[c.m1][c.k]),
            ((1.0 - c.a) * c.b, &self.rays[c.m0][c.k + 1]),
            (c.a * c.b, &self.rays[c.m1][c.k + 1]),
        ];
        let mut out = SheetSample::default();
        for (wt, s) in w {
            for i in 0..2 {
                out.x[i] += wt * s.x[i];
                out.xi[i] += wt * s.xi[i];
                out.x_u[i] += wt * s.x_u[i];
                out.xi_u[i] += wt * s.xi_u[i];
                out.x_v[i] += wt * s.x_v[i];
                out.x_uv[i] += wt * s.x_uv[i];
            }
        }
        if let Some((p, pu, pv)) = self.position(u, v) {
            out.x = p;
            out.x_u = pu;
            out.x_v = pv;
        }
        Some(out)
    }

    /// Solve `x(u, v) = target` by damped Newton from `guess`.
    pub fn invert(&self, target: &Point, guess: (f64, f64)) -> Option<(f64, f64)> {
        let (mut u, mut v) = guess;
        let (p, mut pu, mut pv) = self.position(u, v)?;
        let mut res = linalg::sub(&p, target);
        let mut err = linalg::norm(&res);
        for _ in 0..40 {
            if err < 1e-13 {
                return Some((u, v));
            }
            let det = linalg::cross2(&pu, &pv);
            if det.abs() < 1e-300 {
                return None;
            }
            let du = (res[0] * pv[1] - res[1] * pv[0]) / det;
            let dv = (pu[0] * res[1] - pu[1] * res[0]) / det;
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let (nu, nv) = (u - lambda * du, v - lambda * dv);
                if let Some((np, npu, npv)) = self.position(nu, nv) {
                    let nres = linalg::sub(&np, target);
                    let nerr = linalg::norm(&nres);
                    if nerr < err {
                        u = nu;
                        v = nv;
                        pu = npu;
                        pv = npv;
                        res = nres;
                        err = nerr;
                        accepted = true;
                        break;
                    }
                }
                lambda *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if err < 1e-10 {
            Some((u, v))
        } else {
            None
        }
    }
}
