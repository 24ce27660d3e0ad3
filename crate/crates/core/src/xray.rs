//! Geodesic X-ray transform of symmetric 2-tensors, its adjoint, and the normal operator
//! computed by composition or through its integral kernel.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::io::{BufRead, Read, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesic::{
    cosphere_direction, hamilton_rhs4, inward_direction, locate_crossing, rk4_step, trace_to_exit,
};
use crate::linalg;
use crate::metric::{MetricSpec, Point, DIM};
use crate::sheet::{GeodesicSheet, SheetLayout};
use crate::tensorfield::{sym_index, Grid, GridGeometry, Support, SymTensorField, SYM};

/// One sample of the inflow boundary `∂₊SΩ`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct InflowSample {
    /// Polar angle of the boundary point.
    pub beta: f64,
    /// Angle from the inward metric normal, in `(-π/2, π/2)`.
    pub psi: f64,
    pub z: Point,
    /// Unit inward covector.
    pub omega: Point,
    /// Quadrature weight `|⟨ω, ν⟩| dS_x dS_ω`.
    pub weight: f64,
}

/// Tensor-product sampling of `∂₊SΩ`: `z_count` boundary angles times `w_count` directions.
#[derive(Clone, Debug, Serialize)]
pub struct InflowGrid {
    pub z_count: usize,
    pub w_count: usize,
    pub samples: Vec<InflowSample>,
}

impl InflowGrid {
    pub fn new(spec: &MetricSpec, z_count: usize, w_count: usize) -> Result<InflowGrid> {
        if z_count < 4 || w_count < 4 {
            return Err(Error::Input(format!(
                "inflow grid needs at least 4 samples per axis, got {z_count} x {w_count}"
            )));
        }
        let dom = &spec.domain;
        let dbeta = TAU / z_count as f64;
        let dpsi = PI / w_count as f64;
        let mut samples = Vec::with_capacity(z_count * w_count);
        for a in 0..z_count {
            let beta = a as f64 * dbeta;
            let z = dom.boundary_point(beta);
            let g = spec.eval_metric(&z)?;
            let ginv = linalg::inverse(&g).expect("validated metric");
            let tangent = [-dom.radius * beta.sin(), dom.radius * beta.cos()];
            let ds_x = linalg::quad(&g, &tangent, &tangent).sqrt() * dbeta;
            let n = dom.outward_normal(&z);
            let nu_norm = linalg::quad(&ginv, &n, &n).sqrt();
            let nu = linalg::mat_vec(&ginv, &n);
            let inv_sqrt_det = 1.0 / linalg::determinant(&g).sqrt();
            for b in 0..w_count {
                let psi = -FRAC_PI_2 + (b as f64 + 0.5) * dpsi;
                let (omega, _) = inward_direction(spec, &z, psi);
                let e_norm = linalg::norm(&omega);
                let e = [omega[0] / e_norm, omega[1] / e_norm];
                let q = linalg::quad(&ginv, &e, &e);
                let ds_w = inv_sqrt_det / q * dpsi;
                let cos = (linalg::dot(&omega, &nu) / nu_norm).abs();
                samples.push(InflowSample {
                    beta,
                    psi,
                    z,
                    omega,
                    weight: cos * ds_x * ds_w,
                });
            }
        }
        Ok(InflowGrid {
            z_count,
            w_count,
            samples,
        })
    }

    pub fn index(&self, a: usize, b: usize) -> usize {
        a * self.w_count + b
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Inverse of the `ψ` parametrization: the angle of a unit inward covector at `z`.
    pub fn psi_of(spec: &MetricSpec, z: &Point, omega: &Point) -> f64 {
        let ginv = spec.inverse_jet(z, false).expect("invertible metric").ginv;
        let n = spec.domain.outward_normal(z);
        let m = linalg::mat_vec(&ginv, &n);
        let mn = linalg::norm(&m);
        let mhat = [m[0] / mn, m[1] / mn];
        let mperp = [-mhat[1], mhat[0]];
        linalg::dot(omega, &mperp).atan2(-linalg::dot(omega, &mhat))
    }

    /// Four-point Lagrange stencil `(start, weights)` in `β` (periodic).
    fn beta_stencil(&self, beta: f64) -> ([usize; 4], [f64; 4]) {
        let f = beta.rem_euclid(TAU) / (TAU / self.z_count as f64);
        let i = f.floor();
        let t = f - i;
        let n = self.z_count as isize;
        let i = i as isize;
        let idx = [
            (i - 1).rem_euclid(n),
            i.rem_euclid(n),
            (i + 1).rem_euclid(n),
            (i + 2).rem_euclid(n),
        ];
        (idx.map(|k| k as usize), lagrange4(t))
    }

    fn psi_stencil(&self, psi: f64) -> ([usize; 4], [f64; 4]) {
        let f = (psi + FRAC_PI_2) / (PI / self.w_count as f64) - 0.5;
        let start = (f.floor() as isize - 1).clamp(0, self.w_count as isize - 4);
        let t = f - (start + 1) as f64;
        let s = start as usize;
        ([s, s + 1, s + 2, s + 3], lagrange4(t))
    }
}

/// Cubic Lagrange weights on nodes `-1, 0, 1, 2` evaluated at `t`.
fn lagrange4(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

/// Data on the inflow boundary.
#[derive(Clone, Debug)]
pub struct Sinogram {
    pub inflow: Arc<InflowGrid>,
    pub values: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(inflow: Arc<InflowGrid>) -> Sinogram {
        let values = vec![0.0; inflow.len()];
        Sinogram { inflow, values }
    }

    /// `L²(∂₊SΩ, μ)` pairing.
    pub fn inner(&self, other: &Sinogram) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .zip(&self.inflow.samples)
            .map(|((a, b), s)| a * b * s.weight)
            .sum()
    }

    /// Cubic interpolation in `(β, ψ)`.
    pub fn interpolate(&self, beta: f64, psi: f64) -> f64 {
        let (ia, wa) = self.inflow.beta_stencil(beta);
        let (ib, wb) = self.inflow.psi_stencil(psi);
        let mut s = 0.0;
        for p in 0..4 {
            for q in 0..4 {
                s += wa[p] * wb[q] * self.values[self.inflow.index(ia[p], ib[q])];
            }
        }
        s
    }

    /// CSV: boundary angle, direction angle, measure weight, value.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# z_count={}", self.inflow.z_count)?;
        writeln!(w, "# w_count={}", self.inflow.w_count)?;
        writeln!(w, "beta,psi,weight,value")?;
        for (s, v) in self.inflow.samples.iter().zip(&self.values) {
            writeln!(
                w,
                "{:.17e},{:.17e},{:.17e},{:.17e}",
                s.beta, s.psi, s.weight, v
            )?;
        }
        Ok(())
    }

    /// Values from a CSV written by [`Sinogram::write_csv`], checked against `inflow`.
    pub fn read_csv<R: BufRead>(inflow: Arc<InflowGrid>, r: R) -> Result<Sinogram> {
        let mut values = Vec::with_capacity(inflow.len());
        let mut header = false;
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header {
                header = true;
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 4 {
                return Err(Error::Format(format!(
                    "line {}: expected 4 columns",
                    lineno + 1
                )));
            }
            values.push(
                parts[3]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("line {}: bad number", lineno + 1)))?,
            );
        }
        if values.len() != inflow.len() {
            return Err(Error::GridMismatch(format!(
                "sinogram has {} samples, inflow grid has {}",
                values.len(),
                inflow.len()
            )));
        }
        Ok(Sinogram { inflow, values })
    }

    /// Little-endian binary: magic `TTSG`, counts, then `(β, ψ, weight, value)` records.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"TTSG")?;
        w.write_all(&(self.inflow.z_count as u32).to_le_bytes())?;
        w.write_all(&(self.inflow.w_count as u32).to_le_bytes())?;
        for (s, v) in self.inflow.samples.iter().zip(&self.values) {
            for x in [s.beta, s.psi, s.weight, *v] {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(inflow: Arc<InflowGrid>, mut r: R) -> Result<Sinogram> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"TTSG" {
            return Err(Error::Format("not a sinogram file (bad magic)".into()));
        }
        let mut u = [0u8; 4];
        r.read_exact(&mut u)?;
        let zc = u32::from_le_bytes(u) as usize;
        r.read_exact(&mut u)?;
        let wc = u32::from_le_bytes(u) as usize;
        if zc != inflow.z_count || wc != inflow.w_count {
            return Err(Error::GridMismatch(format!(
                "sinogram is {zc} x {wc}, inflow grid is {} x {}",
                inflow.z_count, inflow.w_count
            )));
        }
        let mut values = Vec::with_capacity(inflow.len());
        let mut b = [0u8; 8];
        for _ in 0..inflow.len() {
            let mut rec = [0.0; 4];
            for x in rec.iter_mut() {
                r.read_exact(&mut b)?;
                *x = f64::from_le_bytes(b);
            }
            values.push(rec[3]);
        }
        Ok(Sinogram { inflow, values })
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct XrayOptions {
    /// RK4 step for ray integration.
    pub step: f64,
    /// Directions per node in the adjoint, over the full circle.
    pub adjoint_directions: usize,
}

impl Default for XrayOptions {
    fn default() -> Self {
        XrayOptions {
            step: 5e-3,
            adjoint_directions: 64,
        }
    }
}

/// `I f` on every inflow sample: `∫ f_ij(γ) γ̇^i γ̇^j dt` along the geodesic through `∂Ω`.
pub fn forward(
    spec: &MetricSpec,
    f: &SymTensorField,
    inflow: &Arc<InflowGrid>,
    opts: &XrayOptions,
) -> Result<Sinogram> {
    if f.grid.domain != spec.domain {
        return Err(Error::GridMismatch(
            "field grid and metric use different domains".into(),
        ));
    }
    let values: Vec<Result<f64>> = inflow
        .samples
        .par_iter()
        .map(|s| ray_integral(spec, f, &s.z, &s.omega, opts.step))
        .collect();
    Ok(Sinogram {
        inflow: inflow.clone(),
        values: values.into_iter().collect::<Result<_>>()?,
    })
}

/// Transform of `f` along the single geodesic entering at `z` with unit covector `omega`.
pub fn ray_integral(
    spec: &MetricSpec,
    f: &SymTensorField,
    z: &Point,
    omega: &Point,
    step: f64,
) -> Result<f64> {
    let ham = hamilton_rhs4(spec);
    let rhs = |y: &[f64; 5]| {
        let d = ham(&[y[0], y[1], y[2], y[3]]);
        let v = f.sample(&[y[0], y[1]]);
        let mut q = 0.0;
        for i in 0..DIM {
            for j in 0..DIM {
                q += v[sym_index(i, j)] * d[i] * d[j];
            }
        }
        [d[0], d[1], d[2], d[3], q]
    };
    let traced = trace_to_exit(
        &rhs,
        [z[0], z[1], omega[0], omega[1], 0.0],
        &spec.domain.center,
        spec.domain.radius,
        step,
        1e3,
        |_, _| {},
    )?;
    Ok(traced.y[4])
}

/// Where the geodesic through a node in a given direction enters `Ω`.
#[derive(Clone, Copy, Debug)]
struct AdjointEntry {
    beta: f64,
    psi: f64,
    /// `dS_ω ω_k ω_l` packed.
    weighted: [f64; SYM],
}

/// Precomputed geometry of the adjoint `I*` at a set of nodes.
#[derive(Clone, Debug)]
pub struct AdjointPlan {
    pub grid: Grid,
    pub support: Support,
    nodes: Vec<(usize, Vec<AdjointEntry>)>,
}

impl AdjointPlan {
    /// Plan over every node of `grid` inside `support`.
    pub fn new(
        spec: &MetricSpec,
        grid: Grid,
        support: Support,
        opts: &XrayOptions,
    ) -> Result<AdjointPlan> {
        let idx: Vec<usize> = (0..grid.len())
            .filter(|&i| grid.in_support(i, support))
            .collect();
        Self::at_nodes(spec, grid, support, &idx, opts)
    }

    pub fn at_nodes(
        spec: &MetricSpec,
        grid: Grid,
        support: Support,
        nodes: &[usize],
        opts: &XrayOptions,
    ) -> Result<AdjointPlan> {
        let nd = opts.adjoint_directions;
        if nd < 4 {
            return Err(Error::Input("adjoint needs at least 4 directions".into()));
        }
        let dalpha = TAU / nd as f64;
        let planned: Vec<Result<(usize, Vec<AdjointEntry>)>> = nodes
            .par_iter()
            .map(|&idx| {
                let y = grid.node(idx);
                let g = spec.eval_metric(&y)?;
                let ginv = linalg::inverse(&g).expect("validated metric");
                let inv_sqrt_det = 1.0 / linalg::determinant(&g).sqrt();
                let mut entries = Vec::with_capacity(nd);
                for d in 0..nd {
                    let alpha = (d as f64 + 0.5) * dalpha;
                    let (omega, _) = cosphere_direction(spec, &y, alpha);
                    let e = [alpha.cos(), alpha.sin()];
                    let ds = inv_sqrt_det / linalg::quad(&ginv, &e, &e) * dalpha;
                    if let Some((z, w)) = entry_point(spec, &y, &omega, opts.step)? {
                        let mut weighted = [0.0; SYM];
                        for i in 0..DIM {
                            for j in i..DIM {
                                weighted[sym_index(i, j)] = ds * omega[i] * omega[j];
                            }
                        }
                        entries.push(AdjointEntry {
                            beta: spec.domain.angle_of(&z),
                            psi: InflowGrid::psi_of(spec, &z, &w),
                            weighted,
                        });
                    }
                }
                Ok((idx, entries))
            })
            .collect();
        Ok(AdjointPlan {
            grid,
            support,
            nodes: planned.into_iter().collect::<Result<_>>()?,
        })
    }

    /// `(I* u)_kl(y) = ∫ u(entry(y, ω)) ω_k ω_l dS_ω`.
    pub fn apply(&self, u: &Sinogram) -> SymTensorField {
        let mut out = SymTensorField::zeros(self.grid, self.support);
        let vals: Vec<(usize, [f64; SYM])> = self
            .nodes
            .par_iter()
            .map(|(idx, entries)| {
                let mut acc = [0.0; SYM];
                for e in entries {
                    let v = u.interpolate(e.beta, e.psi);
                    for c in 0..SYM {
                        acc[c] += v * e.weighted[c];
                    }
                }
                (*idx, acc)
            })
            .collect();
        for (idx, v) in vals {
            out.values[idx] = v;
        }
        out
    }
}

/// First entry into `Ω` of the maximal geodesic through `(y, ω)` in `Ω₁`, as a boundary point
/// and the unit covector there. `None` when the geodesic misses `Ω`.
fn entry_point(
    spec: &MetricSpec,
    y: &Point,
    omega: &Point,
    step: f64,
) -> Result<Option<(Point, Point)>> {
    let dom = &spec.domain;
    let ham = hamilton_rhs4(spec);
    let level = |s: &[f64; 4]| {
        let d = [s[0] - dom.center[0], s[1] - dom.center[1]];
        d[0] * d[0] + d[1] * d[1] - dom.radius * dom.radius
    };
    // Search backward first; the last exit from Ω seen backward is the forward entry.
    for dir in [-1.0, 1.0] {
        let y0 = [y[0], y[1], dir * omega[0], dir * omega[1]];
        let mut s = y0;
        let mut found: Option<[f64; 4]> = None;
        let inside0 = level(&s) < 0.0;
        if dir > 0.0 && inside0 {
            break;
        }
        let mut steps = 0usize;
        loop {
            let next = rk4_step(&ham, &s, step);
            if !next.iter().all(|v| v.is_finite()) {
                return Err(Error::Integration(
                    "non-finite state while tracing the adjoint".into(),
                ));
            }
            let (l0, l1) = (level(&s), level(&next));
            let crossing = (l0 < 0.0) != (l1 < 0.0);
            if crossing {
                let (_, at) = locate_crossing(&ham, &s, 0.0, step, &dom.center, dom.radius);
                let entering_forward = if dir < 0.0 { l0 < 0.0 } else { l0 >= 0.0 };
                if entering_forward {
                    found = Some(at);
                    if dir > 0.0 {
                        break;
                    }
                }
            }
            s = next;
            steps += 1;
            let r = dom.dist_from_center(&[s[0], s[1]]);
            if r > dom.outer_radius || steps > 100_000 {
                break;
            }
        }
        if let Some(at) = found {
            let z = [at[0], at[1]];
            let w = [dir * at[2], dir * at[3]];
            let zr = dom.dist_from_center(&z);
            let zb = [
                dom.center[0] + (z[0] - dom.center[0]) * dom.radius / zr,
                dom.center[1] + (z[1] - dom.center[1]) * dom.radius / zr,
            ];
            return Ok(Some((zb, w)));
        }
        if inside0 {
            break;
        }
    }
    Ok(None)
}

/// Forward transform, adjoint and normal operator sharing one inflow grid and adjoint plan.
pub struct XrayOperator {
    pub spec: MetricSpec,
    pub inflow: Arc<InflowGrid>,
    pub plan: AdjointPlan,
    pub opts: XrayOptions,
}

impl XrayOperator {
    pub fn new(
        spec: &MetricSpec,
        grid: Grid,
        support: Support,
        z_count: usize,
        w_count: usize,
        opts: XrayOptions,
    ) -> Result<XrayOperator> {
        let inflow = Arc::new(InflowGrid::new(spec, z_count, w_count)?);
        let plan = AdjointPlan::new(spec, grid, support, &opts)?;
        Ok(XrayOperator {
            spec: spec.clone(),
            inflow,
            plan,
            opts,
        })
    }

    pub fn forward(&self, f: &SymTensorField) -> Result<Sinogram> {
        forward(&self.spec, f, &self.inflow, &self.opts)
    }

    pub fn adjoint(&self, u: &Sinogram) -> Result<SymTensorField> {
        if u.inflow.z_count != self.inflow.z_count || u.inflow.w_count != self.inflow.w_count {
            return Err(Error::GridMismatch(
                "sinogram sampled on a different inflow grid".into(),
            ));
        }
        Ok(self.plan.apply(u))
    }

    /// `N f = I* I f`.
    pub fn normal(&self, f: &SymTensorField) -> Result<SymTensorField> {
        self.adjoint(&self.forward(f)?)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelOptions {
    /// Geodesics in the fan at each evaluation point.
    pub rays: usize,
    /// Arc-length spacing of fan samples.
    pub dv: f64,
    /// Cells whose node lies within this many grid spacings get a refined rule.
    pub near_cells: f64,
    /// Gauss points per axis on ordinary cells.
    pub far_order: usize,
    /// Gauss points per axis on near cells.
    pub near_order: usize,
}

impl Default for KernelOptions {
    fn default() -> Self {
        KernelOptions {
            rays: 512,
            dv: 0.01,
            near_cells: 3.0,
            far_order: 3,
            near_order: 8,
        }
    }
}

/// `N f(x)` through the integral kernel
/// `(2/√det g(x)) f^{ij}(y) ρ⁻¹ ∂_{y^i}ρ ∂_{y^j}ρ ∂_{x^k}ρ ∂_{x^l}ρ |det ∂²(ρ²/2)/∂x∂y|`,
/// integrated over the dual cells of the support nodes of `f`.
pub fn normal_kernel(
    spec: &MetricSpec,
    f: &SymTensorField,
    x: &Point,
    opts: &KernelOptions,
) -> Result<KernelValue> {
    let g = spec.eval_metric(x)?;
    let sqrt_det = linalg::determinant(&g).sqrt();
    let layout = SheetLayout {
        u0: 0.0,
        du: TAU / opts.rays as f64,
        count: opts.rays,
        periodic: true,
        dv: opts.dv,
        stop_radius: spec.domain.outer_radius,
        max_len: 50.0,
    };
    let fan = GeodesicSheet::build(spec, layout, |a| {
        let (xi, dxi) = cosphere_direction(spec, x, a);
        (*x, xi, [0.0, 0.0], dxi)
    });
    let grid = f.grid;
    let h = grid.spacing();
    let mut acc = [0.0; SYM];
    let mut skipped = 0usize;
    let (gf, wf) = gauss_legendre(opts.far_order);
    let (gn, wn) = gauss_legendre(opts.near_order);
    let add_point = |y: Point, w: f64, acc: &mut [f64; SYM], skipped: &mut usize| {
        let d = linalg::sub(&y, x);
        let gd = linalg::mat_vec(&g, &d);
        let guess = (gd[1].atan2(gd[0]), linalg::quad(&g, &d, &d).sqrt());
        let Some((alpha, r)) = fan.invert(&y, guess) else {
            *skipped += 1;
            return;
        };
        let Some(s) = fan.sample(alpha, r) else {
            *skipped += 1;
            return;
        };
        let (omega, domega) = cosphere_direction(spec, x, alpha);
        let jac = linalg::cross2(&s.x_v, &s.x_u).abs();
        if jac < 1e-300 {
            *skipped += 1;
            return;
        }
        // f_ij γ̇^i γ̇^j at y equals f^{ij} η_i η_j with η = ∂_y ρ.
        let fy = f.sample(&y);
        let mut fvv = 0.0;
        for i in 0..DIM {
            for j in 0..DIM {
                fvv += fy[sym_index(i, j)] * s.x_v[i] * s.x_v[j];
            }
        }
        let det_h = r * linalg::cross2(&omega, &domega).abs() / jac;
        let k = 2.0 / sqrt_det * fvv / r * det_h * w;
        for i in 0..DIM {
            for j in i..DIM {
                acc[sym_index(i, j)] += k * omega[i] * omega[j];
            }
        }
    };
    for idx in 0..grid.len() {
        if !f.in_mask(idx) {
            continue;
        }
        let c = grid.node(idx);
        let dist = linalg::norm(&linalg::sub(&c, x));
        if dist < 0.5 * h {
            // Cell containing x: four triangles with apex x, Duffy-mapped to squares.
            let corners = [
                [c[0] - 0.5 * h, c[1] - 0.5 * h],
                [c[0] + 0.5 * h, c[1] - 0.5 * h],
                [c[0] + 0.5 * h, c[1] + 0.5 * h],
                [c[0] - 0.5 * h, c[1] + 0.5 * h],
            ];
            for t in 0..4 {
                let p1 = corners[t];
                let p2 = corners[(t + 1) % 4];
                let e1 = linalg::sub(&p1, x);
                let e2 = linalg::sub(&p2, x);
                let area2 = linalg::cross2(&e1, &e2).abs();
                for (a, wa) in gn.iter().zip(&wn) {
                    for (b, wb) in gn.iter().zip(&wn) {
                        // (a, b) in [0,1]^2 -> x + a (e1 + b (e2 - e1)), Jacobian a * area2
                        let p = [
                            x[0] + a * (e1[0] + b * (e2[0] - e1[0])),
                            x[1] + a * (e1[1] + b * (e2[1] - e1[1])),
                        ];
                        add_point(p, wa * wb * a * area2, &mut acc, &mut skipped);
                    }
                }
            }
        } else {
            let near = dist < opts.near_cells * h;
            let (pts, wts) = if near { (&gn, &wn) } else { (&gf, &wf) };
            for (a, wa) in pts.iter().zip(wts) {
                for (b, wb) in pts.iter().zip(wts) {
                    let p = [c[0] + (a - 0.5) * h, c[1] + (b - 0.5) * h];
                    add_point(p, wa * wb * h * h, &mut acc, &mut skipped);
                }
            }
        }
    }
    Ok(KernelValue {
        value: acc,
        skipped,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct KernelValue {
    pub value: [f64; SYM],
    /// Quadrature points where the fan could not be inverted.
    pub skipped: usize,
}

/// Kernel-route normal operator at selected nodes; other nodes are zero.
pub fn normal_kernel_field(
    spec: &MetricSpec,
    f: &SymTensorField,
    nodes: &[usize],
    opts: &KernelOptions,
) -> Result<(SymTensorField, usize)> {
    let vals: Vec<Result<(usize, KernelValue)>> = nodes
        .par_iter()
        .map(|&idx| normal_kernel(spec, f, &f.grid.node(idx), opts).map(|v| (idx, v)))
        .collect();
    let mut out = SymTensorField::zeros(f.grid, Support::Outer);
    let mut skipped = 0;
    for v in vals {
        let (idx, k) = v?;
        out.values[idx] = k.value;
        skipped += k.skipped;
    }
    Ok((out, skipped))
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let (pn, pn1) = if n == 1 { (z, 1.0) } else { (p1, p0) };
            let dp = n as f64 * (z * pn - pn1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                let (mut q0, mut q1) = (1.0, z);
                for k in 2..=n {
                    let q2 = ((2 * k - 1) as f64 * z * q1 - (k - 1) as f64 * q0) / k as f64;
                    q0 = q1;
                    q1 = q2;
                }
                let (qn, qn1) = if n == 1 { (z, 1.0) } else { (q1, q0) };
                let dq = n as f64 * (z * qn - qn1) / (z * z - 1.0);
                x[i] = 0.5 * (1.0 - z);
                w[i] = 1.0 / ((1.0 - z * z) * dq * dq);
                break;
            }
        }
    }
    (x, w)
}

/// Field-side `L²` inner product helper re-exported for adjointness checks.
pub fn field_inner(geo: &GridGeometry, a: &SymTensorField, b: &SymTensorField) -> Result<f64> {
    crate::tensorfield::inner(geo, a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{Domain, Profile, ScalarTerm};
    use crate::synth;

    #[test]
    fn euclidean_inflow_mass_is_4pi() {
        let inflow = InflowGrid::new(&MetricSpec::euclidean(), 64, 64).unwrap();
        let total: f64 = inflow.samples.iter().map(|s| s.weight).sum();
        assert!((total - 4.0 * PI).abs() < 1e-3 * 4.0 * PI, "{total}");
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(9)).sum();
        assert!((s - 0.1).abs() < 1e-14);
    }

    #[test]
    fn transform_of_identity_is_chord_length() {
        let spec = MetricSpec::euclidean();
        let grid = Grid::new(16, Domain::default()).unwrap();
        let id = SymTensorField::from_rule(grid, Support::Inner, Arc::new(|_| [1.0, 0.0, 1.0]));
        let inflow = Arc::new(InflowGrid::new(&spec, 8, 8).unwrap());
        let u = forward(&spec, &id, &inflow, &XrayOptions::default()).unwrap();
        for (s, v) in inflow.samples.iter().zip(&u.values) {
            let chord = 2.0 * s.psi.cos();
            assert!((v - chord).abs() < 1e-9, "{v} vs {chord}");
        }
    }

    #[test]
    fn potential_fields_have_zero_transform() {
        let spec = MetricSpec::conformal(vec![ScalarTerm {
            amplitude: 0.1,
            center: [0.1, 0.0],
            profile: Profile::Gaussian { sharpness: 1.0 },
        }]);
        let grid = Grid::new(16, Domain::default()).unwrap();
        // d(∇ψ) for compact ψ via the closed form of the covariant Hessian.
        let psi = synth::TrigBump::random(
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5),
            [0.0, 0.0],
            0.9,
            2,
        );
        let sp = spec.clone();
        let hess = move |x: &Point| {
            let h = psi.hessian(x);
            let gamma = sp.christoffel(x).unwrap();
            let grad = {
                let e = 1e-6;
                let mut g = [0.0; 2];
                for k in 0..2 {
                    let mut p = *x;
                    let mut m = *x;
                    p[k] += e;
                    m[k] -= e;
                    g[k] = (psi.value(&p) - psi.value(&m)) / (2.0 * e);
                }
                g
            };
            let mut out = [0.0; SYM];
            for i in 0..2 {
                for j in i..2 {
                    out[sym_index(i, j)] =
                        h[i][j] - gamma[0][i][j] * grad[0] - gamma[1][i][j] * grad[1];
                }
            }
            out
        };
        let f = SymTensorField::from_rule(grid, Support::Inner, Arc::new(hess));
        let inflow = Arc::new(InflowGrid::new(&spec, 12, 12).unwrap());
        let u = forward(
            &spec,
            &f,
            &inflow,
            &XrayOptions {
                step: 2e-3,
                ..Default::default()
            },
        )
        .unwrap();
        let max = u.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 1e-5, "{max}");
    }

    #[test]
    fn sinogram_round_trips() {
        let spec = MetricSpec::euclidean();
        let inflow = Arc::new(InflowGrid::new(&spec, 6, 5).unwrap());
        let mut u = Sinogram::zeros(inflow.clone());
        for (i, v) in u.values.iter_mut().enumerate() {
            *v = i as f64 * 0.1 - 1.0;
        }
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let back = Sinogram::read_csv(inflow.clone(), &buf[..]).unwrap();
        assert_eq!(back.values, u.values);
        let mut bin = Vec::new();
        u.write_binary(&mut bin).unwrap();
        let back = Sinogram::read_binary(inflow, &bin[..]).unwrap();
        assert_eq!(back.values, u.values);
    }

    #[test]
    fn interpolation_is_exact_on_samples() {
        let spec = MetricSpec::euclidean();
        let inflow = Arc::new(InflowGrid::new(&spec, 12, 10).unwrap());
        let mut u = Sinogram::zeros(inflow.clone());
        for (v, s) in u.values.iter_mut().zip(&inflow.samples) {
            *v = s.beta.sin() + s.psi * s.psi;
        }
        for (v, s) in u.values.iter().zip(&inflow.samples) {
            assert!((u.interpolate(s.beta, s.psi) - v).abs() < 1e-12);
        }
    }
}
