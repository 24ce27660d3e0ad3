//! Grid-sampled scalar fields, 1-forms and symmetric 2-tensors on the disk, with metric-aware
//! calculus, quadrature and file formats.

use std::fmt;
use std::io::{BufRead, Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::metric::{christoffel_from_jet, Christoffel, Domain, Mat, MetricSpec, Point, DIM};

/// Number of independent components of a symmetric 2-tensor.
pub const SYM: usize = DIM * (DIM + 1) / 2;

/// Storage slot of `f_ij` in the upper-triangular packing `[f11, f12, f22]`.
pub fn sym_index(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    a * DIM - a * (a + 1) / 2 + b
}

pub fn sym_to_mat(v: &[f64; SYM]) -> Mat {
    let mut m = [[0.0; DIM]; DIM];
    for i in 0..DIM {
        for j in 0..DIM {
            m[i][j] = v[sym_index(i, j)];
        }
    }
    m
}

pub fn mat_to_sym(m: &Mat) -> [f64; SYM] {
    let mut v = [0.0; SYM];
    for i in 0..DIM {
        for j in i..DIM {
            v[sym_index(i, j)] = 0.5 * (m[i][j] + m[j][i]);
        }
    }
    v
}

/// Uniform `n x n` node grid covering the square circumscribing `Ω₁`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n: usize,
    pub domain: Domain,
}

impl Grid {
    pub fn new(n: usize, domain: Domain) -> Result<Grid> {
        if n < 4 {
            return Err(Error::Input(format!(
                "grid needs at least 4 nodes per side, got {n}"
            )));
        }
        Ok(Grid { n, domain })
    }

    pub fn lo(&self) -> Point {
        let r = self.domain.outer_radius;
        [self.domain.center[0] - r, self.domain.center[1] - r]
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.domain.outer_radius / (self.n - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.n, idx / self.n)
    }

    pub fn node(&self, idx: usize) -> Point {
        let (i, j) = self.coords(idx);
        let lo = self.lo();
        let h = self.spacing();
        [lo[0] + i as f64 * h, lo[1] + j as f64 * h]
    }

    pub fn in_support(&self, idx: usize, support: Support) -> bool {
        let r = self.domain.dist_from_center(&self.node(idx));
        r < support.radius(&self.domain)
    }

    pub fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "{}x{} grid over radius {} vs {}x{} grid over radius {}",
                self.n,
                self.n,
                self.domain.outer_radius,
                other.n,
                other.n,
                other.domain.outer_radius
            )));
        }
        Ok(())
    }
}

/// Where a field lives: the inner disk `Ω` or the outer disk `Ω₁`. Node values outside the
/// support are zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    Inner,
    Outer,
}

impl Support {
    pub fn radius(&self, domain: &Domain) -> f64 {
        match self {
            Support::Inner => domain.radius,
            Support::Outer => domain.outer_radius,
        }
    }
}

pub type Rule<const K: usize> = Arc<dyn Fn(&Point) -> [f64; K] + Send + Sync>;

/// A field with `K` components per node. When a closed-form `rule` is attached, point samples
/// use it instead of grid interpolation.
#[derive(Clone)]
pub struct Field<const K: usize> {
    pub grid: Grid,
    pub support: Support,
    pub values: Vec<[f64; K]>,
    rule: Option<Rule<K>>,
}

pub type ScalarField = Field<1>;
pub type OneFormField = Field<DIM>;
pub type SymTensorField = Field<SYM>;

impl<const K: usize> fmt::Debug for Field<K> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field")
            .field("components", &K)
            .field("n", &self.grid.n)
            .field("support", &self.support)
            .field("closed_form", &self.rule.is_some())
            .finish()
    }
}

impl<const K: usize> Field<K> {
    pub fn zeros(grid: Grid, support: Support) -> Self {
        Field {
            grid,
            support,
            values: vec![[0.0; K]; grid.len()],
            rule: None,
        }
    }

    /// Sample `f` at the support nodes; the result carries no closed form.
    pub fn from_fn<F: Fn(&Point) -> [f64; K]>(grid: Grid, support: Support, f: F) -> Self {
        let values = (0..grid.len())
            .map(|idx| {
                if grid.in_support(idx, support) {
                    f(&grid.node(idx))
                } else {
                    [0.0; K]
                }
            })
            .collect();
        Field {
            grid,
            support,
            values,
            rule: None,
        }
    }

    /// Sample a closed-form field and keep the formula for off-grid reads.
    pub fn from_rule(grid: Grid, support: Support, rule: Rule<K>) -> Self {
        let mut f = Self::from_fn(grid, support, |x| rule(x));
        f.rule = Some(rule);
        f
    }

    pub fn has_rule(&self) -> bool {
        self.rule.is_some()
    }

    pub fn rule(&self) -> Option<&Rule<K>> {
        self.rule.as_ref()
    }

    /// Same node values, without the closed form.
    pub fn grid_only(&self) -> Self {
        Field {
            rule: None,
            ..self.clone()
        }
    }

    pub fn in_mask(&self, idx: usize) -> bool {
        self.grid.in_support(idx, self.support)
    }

    pub fn mask(&self) -> Vec<bool> {
        (0..self.grid.len()).map(|i| self.in_mask(i)).collect()
    }

    /// Zero every node outside the given support.
    pub fn restrict(&self, support: Support) -> Self {
        let mut out = Self::from_fn(self.grid, support, |_| [0.0; K]);
        for idx in 0..self.grid.len() {
            if self.grid.in_support(idx, support) {
                out.values[idx] = self.values[idx];
            }
        }
        out.rule = None;
        out
    }

    pub fn with_support(mut self, support: Support) -> Self {
        self.support = support;
        self
    }

    pub fn map_nodes<F: Fn(usize, &[f64; K]) -> [f64; K]>(&self, f: F) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| f(i, v))
            .collect();
        Field {
            grid: self.grid,
            support: self.support,
            values,
            rule: None,
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        let rule = self.rule.clone().map(|r| -> Rule<K> {
            Arc::new(move |x: &Point| {
                let mut v = r(x);
                v.iter_mut().for_each(|c| *c *= s);
                v
            })
        });
        let mut out = self.map_nodes(|_, v| v.map(|c| c * s));
        out.rule = rule;
        out
    }

    /// `a * self + other`, node-wise; closed forms combine when both sides have one.
    pub fn axpy(&self, a: f64, other: &Self) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        let support = if self.support == Support::Outer || other.support == Support::Outer {
            Support::Outer
        } else {
            Support::Inner
        };
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| {
                let mut v = *y;
                for c in 0..K {
                    v[c] += a * x[c];
                }
                v
            })
            .collect();
        let rule = match (&self.rule, &other.rule) {
            (Some(r1), Some(r2)) => {
                let (r1, r2) = (r1.clone(), r2.clone());
                Some(Arc::new(move |x: &Point| {
                    let p = r1(x);
                    let mut q = r2(x);
                    for c in 0..K {
                        q[c] += a * p[c];
                    }
                    q
                }) as Rule<K>)
            }
            _ => None,
        };
        Ok(Field {
            grid: self.grid,
            support,
            values,
            rule,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        other.axpy(-1.0, self)
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |m, c| m.max(c.abs()))
    }

    /// Value at an arbitrary point: the closed form when present, otherwise interpolation that
    /// only uses nodes inside the support (bilinear where the whole cell is inside, otherwise a
    /// local least-squares plane).
    pub fn sample(&self, x: &Point) -> [f64; K] {
        if let Some(r) = &self.rule {
            return r(x);
        }
        self.interpolate(x)
    }

    /// `sample`, extended by zero outside the support disk.
    pub fn sample_extended(&self, x: &Point) -> [f64; K] {
        if self.grid.domain.dist_from_center(x) > self.support.radius(&self.grid.domain) {
            return [0.0; K];
        }
        self.sample(x)
    }

    pub fn interpolate(&self, x: &Point) -> [f64; K] {
        let n = self.grid.n;
        let h = self.grid.spacing();
        let lo = self.grid.lo();
        let fx = (x[0] - lo[0]) / h;
        let fy = (x[1] - lo[1]) / h;
        if !(fx >= 0.0 && fy >= 0.0 && fx <= (n - 1) as f64 && fy <= (n - 1) as f64) {
            return [0.0; K];
        }
        let i = (fx.floor() as usize).min(n - 2);
        let j = (fy.floor() as usize).min(n - 2);
        let a = fx - i as f64;
        let b = fy - j as f64;
        let corners = [
            (self.grid.index(i, j), (1.0 - a) * (1.0 - b)),
            (self.grid.index(i + 1, j), a * (1.0 - b)),
            (self.grid.index(i, j + 1), (1.0 - a) * b),
            (self.grid.index(i + 1, j + 1), a * b),
        ];
        if corners.iter().all(|(idx, _)| self.in_mask(*idx)) {
            let mut out = [0.0; K];
            for (idx, w) in corners {
                for c in 0..K {
                    out[c] += w * self.values[idx][c];
                }
            }
            return out;
        }
        let mut rows = Vec::new();
        let mut rhs: Vec<[f64; K]> = Vec::new();
        for jj in j.saturating_sub(1)..=(j + 2).min(n - 1) {
            for ii in i.saturating_sub(1)..=(i + 2).min(n - 1) {
                let idx = self.grid.index(ii, jj);
                if self.in_mask(idx) {
                    let p = self.grid.node(idx);
                    rows.push(vec![1.0, (p[0] - x[0]) / h, (p[1] - x[1]) / h]);
                    rhs.push(self.values[idx]);
                }
            }
        }
        if rows.is_empty() {
            return [0.0; K];
        }
        let mut out = [0.0; K];
        if rows.len() >= 3 {
            let mut ok = true;
            for c in 0..K {
                let b: Vec<f64> = rhs.iter().map(|v| v[c]).collect();
                match linalg::least_squares(&rows, &b) {
                    Some(sol) => out[c] = sol[0],
                    None => ok = false,
                }
            }
            if ok {
                return out;
            }
        }
        for v in &rhs {
            for c in 0..K {
                out[c] += v[c] / rhs.len() as f64;
            }
        }
        out
    }

    /// Mask-aware first partial derivative of component `c` along `axis` at node `idx`:
    /// central where both neighbours are in the support, second-order one-sided otherwise.
    pub fn partial(&self, idx: usize, c: usize, axis: usize) -> f64 {
        let n = self.grid.n as isize;
        let h = self.grid.spacing();
        let (i, j) = self.grid.coords(idx);
        let at = |k: isize| -> Option<f64> {
            let (ii, jj) = if axis == 0 {
                (i as isize + k, j as isize)
            } else {
                (i as isize, j as isize + k)
            };
            if ii < 0 || jj < 0 || ii >= n || jj >= n {
                return None;
            }
            let id = self.grid.index(ii as usize, jj as usize);
            self.in_mask(id).then(|| self.values[id][c])
        };
        let f0 = self.values[idx][c];
        match (at(-2), at(-1), at(1), at(2)) {
            (_, Some(m1), Some(p1), _) => (p1 - m1) / (2.0 * h),
            (_, None, Some(p1), Some(p2)) => (-3.0 * f0 + 4.0 * p1 - p2) / (2.0 * h),
            (Some(m2), Some(m1), None, _) => (3.0 * f0 - 4.0 * m1 + m2) / (2.0 * h),
            (_, None, Some(p1), None) => (p1 - f0) / h,
            (None, Some(m1), None, _) => (f0 - m1) / h,
            _ => 0.0,
        }
    }
}

/// Metric data cached at every grid node inside `Ω₁`.
#[derive(Clone, Copy, Debug)]
pub struct NodeMetric {
    pub g: Mat,
    pub ginv: Mat,
    pub sqrt_det: f64,
    pub gamma: Christoffel,
}

#[derive(Clone, Debug)]
pub struct GridGeometry {
    pub grid: Grid,
    pub nodes: Vec<Option<NodeMetric>>,
}

impl GridGeometry {
    pub fn new(spec: &MetricSpec, grid: Grid) -> Result<GridGeometry> {
        let mut nodes = Vec::with_capacity(grid.len());
        for idx in 0..grid.len() {
            if grid.in_support(idx, Support::Outer) {
                let x = grid.node(idx);
                let g = spec.eval_metric(&x)?;
                let jet = spec.jet(&x, false);
                let ginv = linalg::inverse(&g).ok_or(Error::SingularMetric {
                    x: x[0],
                    y: x[1],
                    condition: f64::INFINITY,
                })?;
                nodes.push(Some(NodeMetric {
                    g,
                    ginv,
                    sqrt_det: linalg::determinant(&g).sqrt(),
                    gamma: christoffel_from_jet(&jet, &ginv),
                }));
            } else {
                nodes.push(None);
            }
        }
        Ok(GridGeometry { grid, nodes })
    }

    pub fn at(&self, idx: usize) -> &NodeMetric {
        self.nodes[idx]
            .as_ref()
            .expect("node inside the outer disk")
    }

    /// Quadrature weight `h² √det g` of a node.
    pub fn weight(&self, idx: usize) -> f64 {
        let h = self.grid.spacing();
        h * h * self.at(idx).sqrt_det
    }
}

/// Pointwise metric pairing of two `K`-component values with inverse metric `ginv`.
pub fn contract<const K: usize>(ginv: &Mat, a: &[f64; K], b: &[f64; K]) -> f64 {
    if K == 1 {
        a[0] * b[0]
    } else if K == DIM {
        let mut s = 0.0;
        for i in 0..DIM {
            for j in 0..DIM {
                s += ginv[i][j] * a[i] * b[j];
            }
        }
        s
    } else {
        let mut s = 0.0;
        for i in 0..DIM {
            for j in 0..DIM {
                for k in 0..DIM {
                    for l in 0..DIM {
                        s += a[sym_index(i, j)] * b[sym_index(k, l)] * ginv[i][k] * ginv[j][l];
                    }
                }
            }
        }
        s
    }
}

/// `L²` inner product with the Riemannian volume, by nodal quadrature over the common support.
pub fn inner<const K: usize>(geo: &GridGeometry, a: &Field<K>, b: &Field<K>) -> Result<f64> {
    geo.grid.ensure_same(&a.grid)?;
    geo.grid.ensure_same(&b.grid)?;
    let mut s = 0.0;
    for idx in 0..geo.grid.len() {
        if a.in_mask(idx) && b.in_mask(idx) {
            s += geo.weight(idx) * contract(&geo.at(idx).ginv, &a.values[idx], &b.values[idx]);
        }
    }
    Ok(s)
}

pub fn norm<const K: usize>(geo: &GridGeometry, a: &Field<K>) -> Result<f64> {
    Ok(inner(geo, a, a)?.max(0.0).sqrt())
}

/// Symmetrized covariant derivative `(dv)_ij = ½(∇_i v_j + ∇_j v_i)`.
pub fn sym_diff(geo: &GridGeometry, v: &OneFormField) -> Result<SymTensorField> {
    geo.grid.ensure_same(&v.grid)?;
    let mut out = SymTensorField::zeros(v.grid, v.support);
    for idx in 0..v.grid.len() {
        if !v.in_mask(idx) {
            continue;
        }
        let gamma = &geo.at(idx).gamma;
        let mut d = [[0.0; DIM]; DIM];
        for (a, row) in d.iter_mut().enumerate() {
            for (c, e) in row.iter_mut().enumerate() {
                *e = v.partial(idx, c, a);
            }
        }
        for i in 0..DIM {
            for j in i..DIM {
                let mut s = 0.5 * (d[i][j] + d[j][i]);
                for k in 0..DIM {
                    s -= gamma[k][i][j] * v.values[idx][k];
                }
                out.values[idx][sym_index(i, j)] = s;
            }
        }
    }
    Ok(out)
}

/// Divergence `(δf)_i = g^{jk} ∇_k f_ij`.
pub fn divergence(geo: &GridGeometry, f: &SymTensorField) -> Result<OneFormField> {
    geo.grid.ensure_same(&f.grid)?;
    let mut out = OneFormField::zeros(f.grid, f.support);
    for idx in 0..f.grid.len() {
        if !f.in_mask(idx) {
            continue;
        }
        let nm = geo.at(idx);
        let fv = sym_to_mat(&f.values[idx]);
        for i in 0..DIM {
            let mut s = 0.0;
            for j in 0..DIM {
                for k in 0..DIM {
                    let mut cov = f.partial(idx, sym_index(i, j), k);
                    for l in 0..DIM {
                        cov -= nm.gamma[l][k][i] * fv[l][j] + nm.gamma[l][k][j] * fv[i][l];
                    }
                    s += nm.ginv[j][k] * cov;
                }
            }
            out.values[idx][i] = s;
        }
    }
    Ok(out)
}

/// `f^{ij} = g^{ik} g^{jl} f_kl`
pub fn raise_indices(geo: &GridGeometry, f: &SymTensorField) -> SymTensorField {
    f.map_nodes(|idx, v| match &geo.nodes[idx] {
        Some(nm) => mat_to_sym(&conjugate(&nm.ginv, &sym_to_mat(v))),
        None => *v,
    })
}

/// `f_ij = g_ik g_jl f^{kl}`
pub fn lower_indices(geo: &GridGeometry, f: &SymTensorField) -> SymTensorField {
    f.map_nodes(|idx, v| match &geo.nodes[idx] {
        Some(nm) => mat_to_sym(&conjugate(&nm.g, &sym_to_mat(v))),
        None => *v,
    })
}

/// `A M A` for symmetric `A`.
pub fn conjugate(a: &Mat, m: &Mat) -> Mat {
    let mut out = [[0.0; DIM]; DIM];
    for i in 0..DIM {
        for j in 0..DIM {
            for k in 0..DIM {
                for l in 0..DIM {
                    out[i][j] += a[i][k] * a[j][l] * m[k][l];
                }
            }
        }
    }
    out
}

fn component_names(k: usize) -> Vec<&'static str> {
    match k {
        1 => vec!["value"],
        2 => vec!["v1", "v2"],
        3 => vec!["f11", "f12", "f22"],
        _ => vec![],
    }
}

const FIELD_MAGIC: &[u8; 4] = b"TT2F";

impl<const K: usize> Field<K> {
    /// CSV with `#` metadata lines, then `index,x,y,<components>` for every node.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = &self.grid.domain;
        writeln!(w, "# n={}", self.grid.n)?;
        writeln!(w, "# center={},{}", d.center[0], d.center[1])?;
        writeln!(w, "# radius={}", d.radius)?;
        writeln!(w, "# outer_radius={}", d.outer_radius)?;
        writeln!(
            w,
            "# support={}",
            if self.support == Support::Inner {
                "inner"
            } else {
                "outer"
            }
        )?;
        writeln!(w, "index,x,y,{}", component_names(K).join(","))?;
        for (idx, v) in self.values.iter().enumerate() {
            let p = self.grid.node(idx);
            write!(w, "{idx},{:.17e},{:.17e}", p[0], p[1])?;
            for c in v {
                write!(w, ",{c:.17e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut n = None;
        let mut center = [0.0, 0.0];
        let mut radius = None;
        let mut outer = None;
        let mut support = Support::Inner;
        let mut values = Vec::new();
        let mut header_seen = false;
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Format(format!("line {}: {what}", lineno + 1));
            if let Some(meta) = line.strip_prefix('#') {
                let (key, val) = meta
                    .trim()
                    .split_once('=')
                    .ok_or_else(|| bad("malformed metadata"))?;
                match key.trim() {
                    "n" => n = Some(val.trim().parse::<usize>().map_err(|_| bad("bad n"))?),
                    "center" => {
                        let parts: Vec<f64> = val
                            .split(',')
                            .map(|s| s.trim().parse::<f64>())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|_| bad("bad center"))?;
                        if parts.len() != DIM {
                            return Err(bad("bad center"));
                        }
                        center = [parts[0], parts[1]];
                    }
                    "radius" => {
                        radius = Some(val.trim().parse::<f64>().map_err(|_| bad("bad radius"))?)
                    }
                    "outer_radius" => {
                        outer = Some(
                            val.trim()
                                .parse::<f64>()
                                .map_err(|_| bad("bad outer_radius"))?,
                        )
                    }
                    "support" => {
                        support = match val.trim() {
                            "inner" => Support::Inner,
                            "outer" => Support::Outer,
                            _ => return Err(bad("bad support")),
                        }
                    }
                    _ => {}
                }
                continue;
            }
            if !header_seen {
                header_seen = true;
                let cols = line.split(',').count();
                if cols != 3 + K {
                    return Err(bad(&format!("expected {} columns, found {cols}", 3 + K)));
                }
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 + K {
                return Err(bad("wrong column count"));
            }
            let mut v = [0.0; K];
            for c in 0..K {
                v[c] = parts[3 + c].trim().parse().map_err(|_| bad("bad number"))?;
            }
            values.push(v);
        }
        let n = n.ok_or_else(|| Error::Format("missing `# n=` metadata".into()))?;
        let domain = Domain {
            center,
            radius: radius.ok_or_else(|| Error::Format("missing `# radius=` metadata".into()))?,
            outer_radius: outer
                .ok_or_else(|| Error::Format("missing `# outer_radius=` metadata".into()))?,
        };
        let grid = Grid::new(n, domain)?;
        if values.len() != grid.len() {
            return Err(Error::Format(format!(
                "expected {} rows, found {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Field {
            grid,
            support,
            values,
            rule: None,
        })
    }

    /// Little-endian binary: magic, components, n, support, domain, then node values row-major.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let d = &self.grid.domain;
        w.write_all(FIELD_MAGIC)?;
        w.write_all(&(K as u32).to_le_bytes())?;
        w.write_all(&(self.grid.n as u32).to_le_bytes())?;
        w.write_all(
            &(if self.support == Support::Inner {
                0u32
            } else {
                1u32
            })
            .to_le_bytes(),
        )?;
        for v in [d.center[0], d.center[1], d.radius, d.outer_radius] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.values {
            for c in v {
                w.write_all(&c.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != FIELD_MAGIC {
            return Err(Error::Format("not a tensor field file (bad magic)".into()));
        }
        let mut u = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut u)?;
            Ok(u32::from_le_bytes(u))
        };
        let k = read_u32(&mut r)? as usize;
        if k != K {
            return Err(Error::Format(format!(
                "file holds {k} components, expected {K}"
            )));
        }
        let n = read_u32(&mut r)? as usize;
        let support = match read_u32(&mut r)? {
            0 => Support::Inner,
            1 => Support::Outer,
            s => return Err(Error::Format(format!("bad support tag {s}"))),
        };
        let mut f = [0u8; 8];
        let mut read_f64 = |r: &mut R| -> Result<f64> {
            r.read_exact(&mut f)?;
            Ok(f64::from_le_bytes(f))
        };
        let center = [read_f64(&mut r)?, read_f64(&mut r)?];
        let radius = read_f64(&mut r)?;
        let outer_radius = read_f64(&mut r)?;
        let grid = Grid::new(
            n,
            Domain {
                center,
                radius,
                outer_radius,
            },
        )?;
        let mut values = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            let mut v = [0.0; K];
            for c in v.iter_mut() {
                *c = read_f64(&mut r)?;
            }
            values.push(v);
        }
        Ok(Field {
            grid,
            support,
            values,
            rule: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{Profile, ScalarTerm};
    use std::f64::consts::PI;

    fn grid(n: usize) -> Grid {
        Grid::new(n, Domain::default()).unwrap()
    }

    #[test]
    fn add_and_sub_keep_operand_order() {
        let g = grid(8);
        let mut a = SymTensorField::zeros(g, Support::Inner);
        let mut b = SymTensorField::zeros(g, Support::Inner);
        a.values[10] = [3.0, 1.0, -2.0];
        b.values[10] = [1.0, 4.0, 0.5];
        assert_eq!(a.sub(&b).unwrap().values[10], [2.0, -3.0, -2.5]);
        assert_eq!(a.add(&b).unwrap().values[10], [4.0, 5.0, -1.5]);
    }

    #[test]
    fn identity_tensor_norm_on_unit_disk() {
        let g = grid(201);
        let geo = GridGeometry::new(&MetricSpec::euclidean(), g).unwrap();
        let id = SymTensorField::from_fn(g, Support::Inner, |_| [1.0, 0.0, 1.0]);
        let v = inner(&geo, &id, &id).unwrap();
        assert!((v - 2.0 * PI).abs() < 0.01 * 2.0 * PI, "{v}");
    }

    #[test]
    fn euclidean_gradient_of_quadratic() {
        let g = grid(65);
        let geo = GridGeometry::new(&MetricSpec::euclidean(), g).unwrap();
        let v = OneFormField::from_fn(g, Support::Inner, |x| [x[0] * x[0], x[0] * x[1]]);
        let dv = sym_diff(&geo, &v).unwrap();
        for idx in 0..g.len() {
            if v.in_mask(idx) {
                let x = g.node(idx);
                let expect = [2.0 * x[0], 0.5 * x[1], x[0]];
                for c in 0..SYM {
                    assert!((dv.values[idx][c] - expect[c]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn constant_form_picks_up_only_christoffel_terms() {
        let spec = MetricSpec::conformal(vec![ScalarTerm {
            amplitude: 0.1,
            center: [0.0, 0.0],
            profile: Profile::Gaussian { sharpness: 1.0 },
        }]);
        let g = grid(41);
        let geo = GridGeometry::new(&spec, g).unwrap();
        let v = OneFormField::from_fn(g, Support::Inner, |_| [1.0, 2.0]);
        let dv = sym_diff(&geo, &v).unwrap();
        let idx = g.index(22, 17);
        let x = g.node(idx);
        let phi = spec.conformal_exponent(&x).grad;
        // -Γ^k_ij v_k with Γ^k_ij = δ_ik φ_j + δ_jk φ_i - δ_ij φ_k
        let vv = [1.0, 2.0];
        let dot = phi[0] * vv[0] + phi[1] * vv[1];
        let e11 = -(2.0 * vv[0] * phi[0] - dot);
        let e12 = -(vv[0] * phi[1] + vv[1] * phi[0]);
        let e22 = -(2.0 * vv[1] * phi[1] - dot);
        let got = dv.values[idx];
        assert!(
            (got[0] - e11).abs() < 1e-12
                && (got[1] - e12).abs() < 1e-12
                && (got[2] - e22).abs() < 1e-12
        );
    }

    #[test]
    fn divergence_of_euclidean_hessian_tensor() {
        let g = grid(81);
        let geo = GridGeometry::new(&MetricSpec::euclidean(), g).unwrap();
        // f = [[x^2, xy], [xy, y^2]] -> δf = (2x + x, y + 2y) = (3x, 3y)
        let f = SymTensorField::from_fn(g, Support::Inner, |x| {
            [x[0] * x[0], x[0] * x[1], x[1] * x[1]]
        });
        let d = divergence(&geo, &f).unwrap();
        let idx = g.index(30, 50);
        let x = g.node(idx);
        assert!((d.values[idx][0] - 3.0 * x[0]).abs() < 1e-10);
        assert!((d.values[idx][1] - 3.0 * x[1]).abs() < 1e-10);
    }

    #[test]
    fn interpolation_near_boundary_extrapolates_linear_fields() {
        let g = grid(33);
        let f = ScalarField::from_fn(g, Support::Inner, |x| [1.0 + 2.0 * x[0] - x[1]]);
        for t in [0.1, 1.3, 2.9, 4.4, 5.7] {
            let p = [0.999 * f64::cos(t), 0.999 * f64::sin(t)];
            let v = f.interpolate(&p)[0];
            assert!((v - (1.0 + 2.0 * p[0] - p[1])).abs() < 1e-10);
        }
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let geo = GridGeometry::new(&MetricSpec::euclidean(), grid(16)).unwrap();
        let a = ScalarField::zeros(grid(16), Support::Inner);
        let b = ScalarField::zeros(grid(17), Support::Inner);
        assert!(matches!(inner(&geo, &a, &b), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let g = grid(9);
        let f = SymTensorField::from_fn(g, Support::Outer, |x| [x[0], x[1] * 0.5, 1.0 / 3.0]);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = SymTensorField::read_csv(&buf[..]).unwrap();
        assert_eq!(back.values, f.values);
        assert_eq!(back.support, Support::Outer);
        let mut bin = Vec::new();
        f.write_binary(&mut bin).unwrap();
        let back = SymTensorField::read_binary(&bin[..]).unwrap();
        assert_eq!(back.values, f.values);
        assert!(OneFormField::read_binary(&bin[..]).is_err());
    }

    #[test]
    fn sym_packing() {
        assert_eq!(sym_index(0, 0), 0);
        assert_eq!(sym_index(0, 1), 1);
        assert_eq!(sym_index(1, 0), 1);
        assert_eq!(sym_index(1, 1), 2);
    }
}
