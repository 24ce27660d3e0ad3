//! Solenoidal/potential decomposition `f = f^s + dv`, `δf^s = 0`, `v|∂Ω = 0`, through the
//! symmetric Laplacian `Δ^s = δd` with Dirichlet data, discretized as `DᵀMD`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{MetricSpec, Point, DIM};
use crate::tensorfield::{
    sym_index, sym_to_mat, Grid, GridGeometry, OneFormField, Support, SymTensorField, SYM,
};

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
}

/// Conjugate gradients for a symmetric positive definite operator, to relative residual `tol`.
pub fn conjugate_gradient<A>(
    apply: A,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveReport)>
where
    A: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            x,
            SolveReport {
                iterations: 0,
                residual: 0.0,
                history: vec![0.0],
            },
        ));
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut history = vec![1.0];
    for it in 1..=max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Solver {
                iterations: it,
                residual: rr.sqrt() / bnorm,
                history,
            });
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let rel = rr_new.sqrt() / bnorm;
        history.push(rel);
        if rel <= tol {
            return Ok((
                x,
                SolveReport {
                    iterations: it,
                    residual: rel,
                    history,
                },
            ));
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Err(Error::Solver {
        iterations: max_iter,
        residual: *history.last().unwrap(),
        history,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-10,
            max_iterations: 20_000,
        }
    }
}

/// Discrete symmetrized derivative `D` (central differences, zero Dirichlet values outside
/// `Ω`), the mass matrix `M` of the Riemannian `L²` pairing, and the projectors built on them.
/// The unknowns of `Δ^s` are the 1-form values at the nodes inside `Ω`.
#[derive(Clone, Debug)]
pub struct DecompOperator {
    pub geo: GridGeometry,
    pub opts: SolverOptions,
    /// Nodes inside `Ω`, in unknown order.
    pub interior: Vec<usize>,
    /// Nodes where `D v` is evaluated: `Ω` plus the exterior ring touching it.
    rows: Vec<usize>,
    slot: Vec<Option<usize>>,
}

#[derive(Clone, Debug)]
pub struct Decomposition {
    pub solenoidal: SymTensorField,
    pub potential: OneFormField,
    /// `D v`, the potential part.
    pub potential_part: SymTensorField,
    pub report: SolveReport,
}

impl DecompOperator {
    pub fn new(spec: &MetricSpec, grid: Grid, opts: SolverOptions) -> Result<DecompOperator> {
        if 1.0 + grid.spacing() / grid.domain.radius
            >= grid.domain.outer_radius / grid.domain.radius
        {
            return Err(Error::Input(format!(
                "grid with {} nodes per side is too coarse for the Dirichlet ring inside the outer disk",
                grid.n
            )));
        }
        let geo = GridGeometry::new(spec, grid)?;
        let interior: Vec<usize> = (0..grid.len())
            .filter(|&i| grid.in_support(i, Support::Inner))
            .collect();
        let mut slot = vec![None; grid.len()];
        for (k, &idx) in interior.iter().enumerate() {
            slot[idx] = Some(k);
        }
        let near = |idx: usize| {
            let (i, j) = grid.coords(idx);
            [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .any(|&(di, dj)| {
                    let (ii, jj) = (i as isize + di, j as isize + dj);
                    ii >= 0
                        && jj >= 0
                        && (ii as usize) < grid.n
                        && (jj as usize) < grid.n
                        && slot[grid.index(ii as usize, jj as usize)].is_some()
                })
        };
        let rows: Vec<usize> = (0..grid.len())
            .filter(|&i| slot[i].is_some() || near(i))
            .collect();
        Ok(DecompOperator {
            geo,
            opts,
            interior,
            rows,
            slot,
        })
    }

    pub fn grid(&self) -> Grid {
        self.geo.grid
    }

    fn neighbor(&self, idx: usize, axis: usize, step: isize) -> Option<usize> {
        let g = self.grid();
        let (i, j) = g.coords(idx);
        let (ii, jj) = if axis == 0 {
            (i as isize + step, j as isize)
        } else {
            (i as isize, j as isize + step)
        };
        if ii < 0 || jj < 0 || ii >= g.n as isize || jj >= g.n as isize {
            return None;
        }
        Some(g.index(ii as usize, jj as usize))
    }

    /// `D` on full-node 1-form values (exterior values act as Dirichlet data).
    fn apply_d(&self, v: &[[f64; DIM]]) -> Vec<[f64; SYM]> {
        let h = self.grid().spacing();
        let mut out = vec![[0.0; SYM]; self.rows.len()];
        for (k, &idx) in self.rows.iter().enumerate() {
            let gamma = &self.geo.at(idx).gamma;
            let mut d = [[0.0; DIM]; DIM];
            for (a, row) in d.iter_mut().enumerate() {
                let p = self.neighbor(idx, a, 1).map(|n| v[n]).unwrap_or([0.0; DIM]);
                let m = self
                    .neighbor(idx, a, -1)
                    .map(|n| v[n])
                    .unwrap_or([0.0; DIM]);
                for c in 0..DIM {
                    row[c] = (p[c] - m[c]) / (2.0 * h);
                }
            }
            for i in 0..DIM {
                for j in i..DIM {
                    let mut s = 0.5 * (d[i][j] + d[j][i]);
                    for c in 0..DIM {
                        s -= gamma[c][i][j] * v[idx][c];
                    }
                    out[k][sym_index(i, j)] = s;
                }
            }
        }
        out
    }

    /// `R = w g^{ik} g^{jl} T_kl`, i.e. `M T` as a full symmetric matrix per node.
    fn apply_m(&self, t: &[[f64; SYM]]) -> Vec<[[f64; DIM]; DIM]> {
        self.rows
            .iter()
            .zip(t)
            .map(|(&idx, tv)| {
                let nm = self.geo.at(idx);
                let w = self.geo.weight(idx);
                let m = sym_to_mat(tv);
                let mut r = [[0.0; DIM]; DIM];
                for i in 0..DIM {
                    for j in 0..DIM {
                        let mut s = 0.0;
                        for k in 0..DIM {
                            for l in 0..DIM {
                                s += nm.ginv[i][k] * nm.ginv[j][l] * m[k][l];
                            }
                        }
                        r[i][j] = w * s;
                    }
                }
                r
            })
            .collect()
    }

    /// Transpose of `D` (as a map into full matrices), restricted to the unknowns.
    fn apply_dt(&self, r: &[[[f64; DIM]; DIM]]) -> Vec<f64> {
        let h = self.grid().spacing();
        let mut out = vec![0.0; self.interior.len() * DIM];
        for (k, &idx) in self.rows.iter().enumerate() {
            let gamma = &self.geo.at(idx).gamma;
            let rk = &r[k];
            if let Some(ks) = self.slot[idx] {
                for c in 0..DIM {
                    let mut s = 0.0;
                    for i in 0..DIM {
                        for j in 0..DIM {
                            s -= rk[i][j] * gamma[c][i][j];
                        }
                    }
                    out[ks * DIM + c] += s;
                }
            }
            // ½(δ_i v_j + δ_j v_i) paired with symmetric R gives Σ R_ij δ_i v_j.
            for i in 0..DIM {
                for (step, sign) in [(1isize, 1.0), (-1isize, -1.0)] {
                    if let Some(n) = self.neighbor(idx, i, step) {
                        if let Some(kn) = self.slot[n] {
                            for c in 0..DIM {
                                out[kn * DIM + c] += sign * rk[i][c] / (2.0 * h);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn expand(&self, u: &[f64]) -> Vec<[f64; DIM]> {
        let mut v = vec![[0.0; DIM]; self.grid().len()];
        for (k, &idx) in self.interior.iter().enumerate() {
            for c in 0..DIM {
                v[idx][c] = u[k * DIM + c];
            }
        }
        v
    }

    fn apply_a(&self, u: &[f64]) -> Vec<f64> {
        let v = self.expand(u);
        self.apply_dt(&self.apply_m(&self.apply_d(&v)))
    }

    fn tensor_from(&self, t: &[[f64; SYM]]) -> SymTensorField {
        let mut f = SymTensorField::zeros(self.grid(), Support::Outer);
        for (k, &idx) in self.rows.iter().enumerate() {
            f.values[idx] = t[k];
        }
        f
    }

    fn tensor_values(&self, f: &SymTensorField) -> Vec<[f64; SYM]> {
        self.rows.iter().map(|&idx| f.values[idx]).collect()
    }

    /// Discrete symmetrized derivative used by the projectors; `v` is taken as zero outside `Ω`.
    pub fn sym_diff(&self, v: &OneFormField) -> Result<SymTensorField> {
        self.grid().ensure_same(&v.grid)?;
        let mut vals = v.values.clone();
        for (idx, val) in vals.iter_mut().enumerate() {
            if self.slot[idx].is_none() {
                *val = [0.0; DIM];
            }
        }
        Ok(self.tensor_from(&self.apply_d(&vals)))
    }

    /// Weak divergence `Dᵀ M f`, one entry per interior unknown and component.
    pub fn weak_divergence(&self, f: &SymTensorField) -> Result<Vec<f64>> {
        self.grid().ensure_same(&f.grid)?;
        Ok(self.apply_dt(&self.apply_m(&self.tensor_values(f))))
    }

    /// `f = f^s + D v` with `v = 0` on the boundary.
    pub fn decompose(&self, f: &SymTensorField) -> Result<Decomposition> {
        self.grid().ensure_same(&f.grid)?;
        let t = self.tensor_values(f);
        let b = self.apply_dt(&self.apply_m(&t));
        let (u, report) = conjugate_gradient(
            |x| self.apply_a(x),
            &b,
            self.opts.tolerance,
            self.opts.max_iterations,
        )?;
        let v = self.expand(&u);
        let dv = self.apply_d(&v);
        let mut potential = OneFormField::zeros(self.grid(), Support::Inner);
        potential.values = v;
        let solenoidal: Vec<[f64; SYM]> = t
            .iter()
            .zip(&dv)
            .map(|(a, b)| {
                let mut s = *a;
                for c in 0..SYM {
                    s[c] -= b[c];
                }
                s
            })
            .collect();
        Ok(Decomposition {
            solenoidal: self.tensor_from(&solenoidal),
            potential,
            potential_part: self.tensor_from(&dv),
            report,
        })
    }

    /// Solenoidal projection `S f`.
    pub fn solenoidal(&self, f: &SymTensorField) -> Result<SymTensorField> {
        Ok(self.decompose(f)?.solenoidal)
    }

    /// Potential projection `P f = D v`.
    pub fn potential(&self, f: &SymTensorField) -> Result<SymTensorField> {
        Ok(self.decompose(f)?.potential_part)
    }

    /// Weak solution of `Δ^s u = h` in `Ω` with `u = boundary(x)` at the nodes outside `Ω`.
    pub fn laplacian_s_solve(
        &self,
        h: &OneFormField,
        boundary: Option<&dyn Fn(&Point) -> [f64; DIM]>,
    ) -> Result<(OneFormField, SolveReport)> {
        self.grid().ensure_same(&h.grid)?;
        let grid = self.grid();
        let mut rhs = vec![0.0; self.interior.len() * DIM];
        for (k, &idx) in self.interior.iter().enumerate() {
            let nm = self.geo.at(idx);
            let w = self.geo.weight(idx);
            for c in 0..DIM {
                let mut s = 0.0;
                for j in 0..DIM {
                    s += nm.ginv[c][j] * h.values[idx][j];
                }
                rhs[k * DIM + c] = w * s;
            }
        }
        let mut lifted = vec![[0.0; DIM]; grid.len()];
        if let Some(b) = boundary {
            for (idx, val) in lifted.iter_mut().enumerate() {
                if self.slot[idx].is_none() {
                    *val = b(&grid.node(idx));
                }
            }
            let ab = self.apply_dt(&self.apply_m(&self.apply_d(&lifted)));
            for (r, a) in rhs.iter_mut().zip(&ab) {
                *r -= a;
            }
        }
        let (u, report) = conjugate_gradient(
            |x| self.apply_a(x),
            &rhs,
            self.opts.tolerance,
            self.opts.max_iterations,
        )?;
        let mut out = OneFormField::zeros(grid, Support::Outer);
        out.values = lifted;
        for (k, &idx) in self.interior.iter().enumerate() {
            for c in 0..DIM {
                out.values[idx][c] = u[k * DIM + c];
            }
        }
        Ok((out, report))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{Domain, Profile, ScalarTerm};
    use crate::synth;
    use crate::tensorfield::inner;
    use std::sync::Arc;

    fn conformal() -> MetricSpec {
        MetricSpec::conformal(vec![ScalarTerm {
            amplitude: 0.1,
            center: [0.0, 0.0],
            profile: Profile::Gaussian { sharpness: 1.0 },
        }])
    }

    #[test]
    fn d_transpose_is_adjoint() {
        let spec = conformal();
        let grid = Grid::new(28, Domain::default()).unwrap();
        let op = DecompOperator::new(&spec, grid, SolverOptions::default()).unwrap();
        assert!(DecompOperator::new(
            &spec,
            Grid::new(20, Domain::default()).unwrap(),
            SolverOptions::default()
        )
        .is_err());
        let n = op.interior.len() * DIM;
        let u: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let w: Vec<f64> = (0..n).map(|i| ((i * 104729) % 11) as f64 - 5.0).collect();
        let au = op.apply_a(&u);
        let aw = op.apply_a(&w);
        let lhs = dot(&au, &w);
        let rhs = dot(&u, &aw);
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs());
        assert!(dot(&u, &au) > 0.0);
    }

    #[test]
    fn projections_are_orthogonal_and_idempotent() {
        let spec = conformal();
        let grid = Grid::new(32, Domain::default()).unwrap();
        let op = DecompOperator::new(
            &spec,
            grid,
            SolverOptions {
                tolerance: 1e-12,
                max_iterations: 20_000,
            },
        )
        .unwrap();
        let f = synth::random_tensor(grid, Support::Inner, 1, 0.95, 2);
        let dec = op.decompose(&f).unwrap();
        let w = synth::random_one_form(grid, Support::Inner, 2, 0.9, 2);
        let dw = op.sym_diff(&w).unwrap();
        let ip = inner(&op.geo, &dec.solenoidal, &dw).unwrap();
        let scale = crate::tensorfield::norm(&op.geo, &dec.solenoidal).unwrap()
            * crate::tensorfield::norm(&op.geo, &dw).unwrap();
        assert!(ip.abs() < 1e-8 * scale, "{ip} vs {scale}");
        let pp = op.potential(&dec.potential_part).unwrap();
        let diff = pp.sub(&dec.potential_part).unwrap();
        let rel = crate::tensorfield::norm(&op.geo, &diff).unwrap()
            / crate::tensorfield::norm(&op.geo, &dec.potential_part).unwrap();
        assert!(rel < 1e-8, "{rel}");
    }

    #[test]
    fn euclidean_laplacian_manufactured_solution() {
        // Δ^s u = -½(Δu + ∇ div u) for u = (sin(a x + b y), cos(c x - d y)).
        let (a, b, c, d) = (1.3, 0.7, 0.9, 1.6);
        let exact = move |x: &Point| [(a * x[0] + b * x[1]).sin(), (c * x[0] - d * x[1]).cos()];
        let rhs = move |x: &Point| {
            let s1 = (a * x[0] + b * x[1]).sin();
            let c2 = (c * x[0] - d * x[1]).cos();
            let lap = [-(a * a + b * b) * s1, -(c * c + d * d) * c2];
            let gdiv = [-a * a * s1 + d * c * c2, -a * b * s1 - d * d * c2];
            [-0.5 * (lap[0] + gdiv[0]), -0.5 * (lap[1] + gdiv[1])]
        };
        let spec = MetricSpec::euclidean();
        let mut errs = Vec::new();
        for n in [33, 65] {
            let grid = Grid::new(n, Domain::default()).unwrap();
            let op = DecompOperator::new(&spec, grid, SolverOptions::default()).unwrap();
            let h = OneFormField::from_fn(grid, Support::Inner, rhs);
            let (u, _) = op.laplacian_s_solve(&h, Some(&exact)).unwrap();
            let mut err: f64 = 0.0;
            for &idx in &op.interior {
                let e = exact(&grid.node(idx));
                err = err
                    .max((u.values[idx][0] - e[0]).abs())
                    .max((u.values[idx][1] - e[1]).abs());
            }
            errs.push(err);
        }
        assert!(errs[1] < 5e-3, "{errs:?}");
        assert!(errs[1] < 0.35 * errs[0], "{errs:?}");
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let grid = Grid::new(33, Domain::default()).unwrap();
        let op = DecompOperator::new(&conformal(), grid, SolverOptions::default()).unwrap();
        let (u, _) = op
            .laplacian_s_solve(&OneFormField::zeros(grid, Support::Inner), None)
            .unwrap();
        assert_eq!(u.max_abs(), 0.0);
    }

    #[test]
    fn solenoidal_part_of_potential_field_is_small() {
        let spec = MetricSpec::euclidean();
        let grid = Grid::new(48, Domain::default()).unwrap();
        let op = DecompOperator::new(&spec, grid, SolverOptions::default()).unwrap();
        let w = OneFormField::from_rule(
            grid,
            Support::Inner,
            synth::random_components::<DIM>(9, [0.0, 0.0], 0.9, 2),
        );
        let dw = op.sym_diff(&w).unwrap();
        let dec = op.decompose(&dw).unwrap();
        let ratio = crate::tensorfield::norm(&op.geo, &dec.solenoidal).unwrap()
            / crate::tensorfield::norm(&op.geo, &dw).unwrap();
        assert!(ratio < 1e-8, "{ratio}");
        let _ = Arc::new(0);
    }
}
