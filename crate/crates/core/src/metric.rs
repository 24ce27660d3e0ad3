//! Riemannian metrics on the extended disk and their pointwise geometry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyperdual::HyperDual;
use crate::linalg;

pub const DIM: usize = 2;
pub type Point = [f64; DIM];
pub type Mat = [[f64; DIM]; DIM];
/// Christoffel symbols of the second kind, indexed `[k][i][j]` for `Γ^k_ij`.
pub type Christoffel = [[[f64; DIM]; DIM]; DIM];

const MAX_CONDITION: f64 = 1e12;

/// The inner disk `Ω` and the concentric outer disk `Ω₁` on which the metric is defined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    #[serde(default)]
    pub center: Point,
    pub radius: f64,
    pub outer_radius: f64,
}

impl Default for Domain {
    fn default() -> Self {
        Domain {
            center: [0.0, 0.0],
            radius: 1.0,
            outer_radius: 1.1,
        }
    }
}

impl Domain {
    pub fn offset(&self, x: &Point) -> Point {
        linalg::sub(x, &self.center)
    }

    pub fn dist_from_center(&self, x: &Point) -> f64 {
        linalg::norm(&self.offset(x))
    }

    pub fn inside(&self, x: &Point) -> bool {
        self.dist_from_center(x) < self.radius
    }

    pub fn inside_outer(&self, x: &Point) -> bool {
        self.dist_from_center(x) < self.outer_radius
    }

    /// Point of `∂Ω` at polar angle `beta`.
    pub fn boundary_point(&self, beta: f64) -> Point {
        [
            self.center[0] + self.radius * beta.cos(),
            self.center[1] + self.radius * beta.sin(),
        ]
    }

    /// Polar angle of `x` about the center, in `[0, 2π)`.
    pub fn angle_of(&self, x: &Point) -> f64 {
        let d = self.offset(x);
        d[1].atan2(d[0]).rem_euclid(std::f64::consts::TAU)
    }

    /// Euclidean outward unit conormal to the circle through `x`.
    pub fn outward_normal(&self, x: &Point) -> Point {
        let d = self.offset(x);
        let r = linalg::norm(&d);
        [d[0] / r, d[1] / r]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    /// `exp(-sharpness |x - c|^2)`
    Gaussian { sharpness: f64 },
    /// `exp(1 - 1/(1 - s))` with `s = |x - c|^2 / radius^2`, zero for `s >= 1`.
    Bump { radius: f64 },
}

/// Value, gradient and Hessian of a scalar function at a point.
#[derive(Clone, Copy, Debug, Default)]
pub struct ScalarJet {
    pub value: f64,
    pub grad: Point,
    pub hess: Mat,
}

impl Profile {
    pub fn jet(&self, d: &Point) -> ScalarJet {
        let r2 = linalg::dot(d, d);
        match *self {
            Profile::Gaussian { sharpness: b } => {
                let p = (-b * r2).exp();
                let mut jet = ScalarJet {
                    value: p,
                    ..Default::default()
                };
                for k in 0..DIM {
                    jet.grad[k] = -2.0 * b * d[k] * p;
                    for l in 0..DIM {
                        let delta = if k == l { 1.0 } else { 0.0 };
                        jet.hess[k][l] = (4.0 * b * b * d[k] * d[l] - 2.0 * b * delta) * p;
                    }
                }
                jet
            }
            Profile::Bump { radius } => {
                let s = r2 / (radius * radius);
                if s >= 1.0 {
                    return ScalarJet::default();
                }
                let q = 1.0 / (1.0 - s);
                let b0 = (1.0 - q).exp();
                let b1 = -b0 * q * q;
                let b2 = b0 * (q.powi(4) - 2.0 * q.powi(3));
                let mut jet = ScalarJet {
                    value: b0,
                    ..Default::default()
                };
                let rr = radius * radius;
                for k in 0..DIM {
                    let sk = 2.0 * d[k] / rr;
                    jet.grad[k] = b1 * sk;
                    for l in 0..DIM {
                        let sl = 2.0 * d[l] / rr;
                        let skl = if k == l { 2.0 / rr } else { 0.0 };
                        jet.hess[k][l] = b2 * sk * sl + b1 * skl;
                    }
                }
                jet
            }
        }
    }
}

/// `amplitude * profile(x - center)`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarTerm {
    pub amplitude: f64,
    #[serde(default)]
    pub center: Point,
    pub profile: Profile,
}

impl ScalarTerm {
    pub fn jet(&self, x: &Point) -> ScalarJet {
        let d = linalg::sub(x, &self.center);
        let mut j = self.profile.jet(&d);
        j.value *= self.amplitude;
        for k in 0..DIM {
            j.grad[k] *= self.amplitude;
            for l in 0..DIM {
                j.hess[k][l] *= self.amplitude;
            }
        }
        j
    }
}

/// Real trigonometric polynomial in the boundary angle.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fourier {
    pub mean: f64,
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl Fourier {
    /// Trigonometric interpolant of samples at `beta_j = 2πj/n`.
    pub fn interpolate(samples: &[f64]) -> Fourier {
        let n = samples.len();
        let nf = n as f64;
        let modes = (n - 1) / 2;
        let mean = samples.iter().sum::<f64>() / nf;
        let mut cos = Vec::with_capacity(modes);
        let mut sin = Vec::with_capacity(modes);
        for m in 1..=modes {
            let (mut a, mut b) = (0.0, 0.0);
            for (j, v) in samples.iter().enumerate() {
                let t = std::f64::consts::TAU * (m * j) as f64 / nf;
                a += v * t.cos();
                b += v * t.sin();
            }
            cos.push(2.0 * a / nf);
            sin.push(2.0 * b / nf);
        }
        Fourier { mean, cos, sin }
    }

    pub fn eval(&self, beta: f64) -> f64 {
        let mut v = self.mean;
        for (m, c) in self.cos.iter().enumerate() {
            v += c * ((m + 1) as f64 * beta).cos();
        }
        for (m, s) in self.sin.iter().enumerate() {
            v += s * ((m + 1) as f64 * beta).sin();
        }
        v
    }

    fn eval_hd(&self, beta: HyperDual) -> HyperDual {
        let mut v = HyperDual::constant(self.mean);
        for (m, c) in self.cos.iter().enumerate() {
            v = v + (beta * (m + 1) as f64).cos() * *c;
        }
        for (m, s) in self.sin.iter().enumerate() {
            v = v + (beta * (m + 1) as f64).sin() * *s;
        }
        v
    }
}

/// Additive perturbation written in the polar collar of the domain:
/// `Σ_k r^k F_k(β) ds⊗ds`, with `r = R - |x - c|`, `s = Rβ`, faded out toward the center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollarJet {
    pub jets: Vec<Fourier>,
    #[serde(default = "CollarJet::default_fade_start")]
    pub fade_start: f64,
    #[serde(default = "CollarJet::default_fade_end")]
    pub fade_end: f64,
}

impl CollarJet {
    fn default_fade_start() -> f64 {
        0.3
    }

    fn default_fade_end() -> f64 {
        0.6
    }

    fn cutoff(&self, rho: HyperDual) -> HyperDual {
        let t = (rho.re - self.fade_start) / (self.fade_end - self.fade_start);
        if t <= 0.0 {
            return HyperDual::constant(0.0);
        }
        if t >= 1.0 {
            return HyperDual::constant(1.0);
        }
        let t = (rho + (-self.fade_start)) * (1.0 / (self.fade_end - self.fade_start));
        let one_minus = -t + 1.0;
        let a = (-t.recip()).exp();
        let b = (-one_minus.recip()).exp();
        a / (a + b)
    }

    fn component(&self, domain: &Domain, x: &[HyperDual; DIM], i: usize, j: usize) -> HyperDual {
        let dx = x[0] + (-domain.center[0]);
        let dy = x[1] + (-domain.center[1]);
        let rho2 = dx * dx + dy * dy;
        let rho = rho2.sqrt();
        let chi = self.cutoff(rho);
        if chi.re == 0.0 && chi.e1 == 0.0 && chi.e2 == 0.0 && chi.e12 == 0.0 {
            return HyperDual::constant(0.0);
        }
        let beta = dy.atan2(dx);
        let r = -rho + domain.radius;
        let mut poly = HyperDual::constant(0.0);
        let mut rk = HyperDual::constant(1.0);
        for f in &self.jets {
            poly = poly + rk * f.eval_hd(beta);
            rk = rk * r;
        }
        let inv = rho2.recip();
        let w = [-dy * inv, dx * inv];
        chi * poly * w[i] * w[j] * (domain.radius * domain.radius)
    }

    fn add_jet(&self, domain: &Domain, x: &Point, jet: &mut MetricJet, second: bool) {
        for i in 0..DIM {
            for j in i..DIM {
                let mut val = 0.0;
                for k in 0..DIM {
                    for l in k..DIM {
                        if !second && l != k {
                            continue;
                        }
                        let mut xs = [HyperDual::constant(0.0); DIM];
                        for (m, xm) in xs.iter_mut().enumerate() {
                            let e1 = if m == k { 1.0 } else { 0.0 };
                            let e2 = if m == l { 1.0 } else { 0.0 };
                            *xm = HyperDual::variable(x[m], e1, e2);
                        }
                        let v = self.component(domain, &xs, i, j);
                        val = v.re;
                        if k == l {
                            jet.dg[k][i][j] += v.e1;
                            if i != j {
                                jet.dg[k][j][i] += v.e1;
                            }
                        }
                        if second {
                            jet.ddg[k][l][i][j] += v.e12;
                            if k != l {
                                jet.ddg[l][k][i][j] += v.e12;
                            }
                            if i != j {
                                jet.ddg[k][l][j][i] += v.e12;
                                if k != l {
                                    jet.ddg[l][k][j][i] += v.e12;
                                }
                            }
                        }
                    }
                }
                jet.g[i][j] += val;
                if i != j {
                    jet.g[j][i] += val;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TensorTerm {
    /// `amplitude * profile(x - center) * matrix` with a constant symmetric matrix.
    Profiled {
        amplitude: f64,
        #[serde(default)]
        center: Point,
        profile: Profile,
        matrix: Mat,
    },
    Collar(CollarJet),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Euclidean,
    Conformal,
    General,
}

/// A metric `g = e^{2φ} δ + Σ T_m` on `Ω₁`, with `φ` a sum of scalar terms and `T_m` tensor terms.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    #[serde(default)]
    pub domain: Domain,
    #[serde(default)]
    pub conformal: Vec<ScalarTerm>,
    #[serde(default)]
    pub tensor: Vec<TensorTerm>,
}

/// Metric with first and (optionally) second partial derivatives.
/// `dg[k][i][j] = ∂_k g_ij`, `ddg[k][l][i][j] = ∂_k ∂_l g_ij`.
#[derive(Clone, Copy, Debug)]
pub struct MetricJet {
    pub g: Mat,
    pub dg: [Mat; DIM],
    pub ddg: [[Mat; DIM]; DIM],
}

/// Inverse metric with its derivatives: `dginv[k][i][j] = ∂_k g^{ij}`.
#[derive(Clone, Copy, Debug)]
pub struct InverseJet {
    pub ginv: Mat,
    pub dginv: [Mat; DIM],
    pub ddginv: [[Mat; DIM]; DIM],
}

impl MetricSpec {
    pub fn euclidean() -> Self {
        MetricSpec::default()
    }

    pub fn conformal(terms: Vec<ScalarTerm>) -> Self {
        MetricSpec {
            conformal: terms,
            ..Default::default()
        }
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn family(&self) -> Family {
        if !self.tensor.is_empty() {
            Family::General
        } else if !self.conformal.is_empty() {
            Family::Conformal
        } else {
            Family::Euclidean
        }
    }

    /// Conformal exponent `φ` with derivatives.
    pub fn conformal_exponent(&self, x: &Point) -> ScalarJet {
        let mut phi = ScalarJet::default();
        for t in &self.conformal {
            let j = t.jet(x);
            phi.value += j.value;
            for k in 0..DIM {
                phi.grad[k] += j.grad[k];
                for l in 0..DIM {
                    phi.hess[k][l] += j.hess[k][l];
                }
            }
        }
        phi
    }

    /// Metric jet without domain or positivity checks. Second derivatives are filled only when
    /// `second` is set.
    pub fn jet(&self, x: &Point, second: bool) -> MetricJet {
        let mut jet = MetricJet {
            g: linalg::zero_mat(),
            dg: [linalg::zero_mat(); DIM],
            ddg: [[linalg::zero_mat(); DIM]; DIM],
        };
        let phi = self.conformal_exponent(x);
        let e = (2.0 * phi.value).exp();
        for i in 0..DIM {
            jet.g[i][i] = e;
            for k in 0..DIM {
                jet.dg[k][i][i] = 2.0 * phi.grad[k] * e;
                if second {
                    for l in 0..DIM {
                        jet.ddg[k][l][i][i] =
                            (2.0 * phi.hess[k][l] + 4.0 * phi.grad[k] * phi.grad[l]) * e;
                    }
                }
            }
        }
        for term in &self.tensor {
            match term {
                TensorTerm::Profiled {
                    amplitude,
                    center,
                    profile,
                    matrix,
                } => {
                    let p = ScalarTerm {
                        amplitude: *amplitude,
                        center: *center,
                        profile: *profile,
                    }
                    .jet(x);
                    if p.value == 0.0 && p.grad.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    for i in 0..DIM {
                        for j in 0..DIM {
                            let a = matrix[i][j];
                            jet.g[i][j] += p.value * a;
                            for k in 0..DIM {
                                jet.dg[k][i][j] += p.grad[k] * a;
                                if second {
                                    for l in 0..DIM {
                                        jet.ddg[k][l][i][j] += p.hess[k][l] * a;
                                    }
                                }
                            }
                        }
                    }
                }
                TensorTerm::Collar(c) => c.add_jet(&self.domain, x, &mut jet, second),
            }
        }
        jet
    }

    pub fn check_domain(&self, x: &Point) -> Result<()> {
        let r = self.domain.dist_from_center(x);
        if !(r <= self.domain.outer_radius * (1.0 + 1e-12)) {
            return Err(Error::Domain {
                x: x[0],
                y: x[1],
                radius: self.domain.outer_radius,
            });
        }
        Ok(())
    }

    /// Metric matrix at `x ∈ Ω₁`, validated for symmetry and positive definiteness.
    pub fn eval_metric(&self, x: &Point) -> Result<Mat> {
        self.check_domain(x)?;
        let g = self.jet(x, false).g;
        check_positive(&g, x)?;
        Ok(g)
    }

    pub fn christoffel(&self, x: &Point) -> Result<Christoffel> {
        self.check_domain(x)?;
        let jet = self.jet(x, false);
        check_positive(&jet.g, x)?;
        let ginv = linalg::inverse(&jet.g).ok_or(Error::SingularMetric {
            x: x[0],
            y: x[1],
            condition: f64::INFINITY,
        })?;
        Ok(christoffel_from_jet(&jet, &ginv))
    }

    pub fn inverse_jet(&self, x: &Point, second: bool) -> Option<InverseJet> {
        let jet = self.jet(x, second);
        inverse_jet(&jet, second)
    }
}

pub fn check_positive(g: &Mat, x: &Point) -> Result<()> {
    let ev = linalg::sym_eigenvalues(g);
    let cond = ev[DIM - 1] / ev[0];
    if !(ev[0] > 0.0) || !(cond < MAX_CONDITION) {
        return Err(Error::SingularMetric {
            x: x[0],
            y: x[1],
            condition: cond.abs(),
        });
    }
    Ok(())
}

pub fn christoffel_from_jet(jet: &MetricJet, ginv: &Mat) -> Christoffel {
    let mut gamma = [[[0.0; DIM]; DIM]; DIM];
    for k in 0..DIM {
        for i in 0..DIM {
            for j in 0..DIM {
                let mut s = 0.0;
                for l in 0..DIM {
                    s += ginv[k][l] * (jet.dg[i][j][l] + jet.dg[j][i][l] - jet.dg[l][i][j]);
                }
                gamma[k][i][j] = 0.5 * s;
            }
        }
    }
    gamma
}

pub fn inverse_jet(jet: &MetricJet, second: bool) -> Option<InverseJet> {
    let ginv = linalg::inverse(&jet.g)?;
    let mut dginv = [linalg::zero_mat(); DIM];
    for k in 0..DIM {
        dginv[k] = neg_conjugate(&ginv, &jet.dg[k]);
    }
    let mut ddginv = [[linalg::zero_mat(); DIM]; DIM];
    if second {
        // ∂_l ∂_k g^{ij} = -(∂_l g^{ia} ∂_k g_ab g^{bj} + g^{ia} ∂_kl g_ab g^{bj} + g^{ia} ∂_k g_ab ∂_l g^{bj})
        for k in 0..DIM {
            for l in 0..DIM {
                for i in 0..DIM {
                    for j in 0..DIM {
                        let mut s = 0.0;
                        for a in 0..DIM {
                            for b in 0..DIM {
                                s += dginv[l][i][a] * jet.dg[k][a][b] * ginv[b][j]
                                    + ginv[i][a] * jet.ddg[k][l][a][b] * ginv[b][j]
                                    + ginv[i][a] * jet.dg[k][a][b] * dginv[l][b][j];
                            }
                        }
                        ddginv[k][l][i][j] = -s;
                    }
                }
            }
        }
    }
    Some(InverseJet {
        ginv,
        dginv,
        ddginv,
    })
}

fn neg_conjugate(ginv: &Mat, m: &Mat) -> Mat {
    let mut out = linalg::zero_mat();
    for i in 0..DIM {
        for j in 0..DIM {
            let mut s = 0.0;
            for a in 0..DIM {
                for b in 0..DIM {
                    s += ginv[i][a] * m[a][b] * ginv[b][j];
                }
            }
            out[i][j] = -s;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gaussian(amplitude: f64, center: Point, sharpness: f64) -> ScalarTerm {
        ScalarTerm {
            amplitude,
            center,
            profile: Profile::Gaussian { sharpness },
        }
    }

    fn sample_specs() -> Vec<MetricSpec> {
        let conformal = MetricSpec::conformal(vec![gaussian(0.1, [0.0, 0.0], 1.0)]);
        let general = MetricSpec {
            conformal: vec![gaussian(0.05, [0.2, -0.1], 2.0)],
            tensor: vec![
                TensorTerm::Profiled {
                    amplitude: 0.1,
                    center: [-0.1, 0.3],
                    profile: Profile::Bump { radius: 0.8 },
                    matrix: [[1.0, 0.3], [0.3, 0.5]],
                },
                TensorTerm::Collar(CollarJet {
                    jets: vec![
                        Fourier {
                            mean: 0.05,
                            cos: vec![0.02],
                            sin: vec![0.0, -0.01],
                        },
                        Fourier {
                            mean: -0.03,
                            cos: vec![],
                            sin: vec![0.01],
                        },
                    ],
                    fade_start: 0.3,
                    fade_end: 0.6,
                }),
            ],
            ..Default::default()
        };
        vec![MetricSpec::euclidean(), conformal, general]
    }

    #[test]
    fn conformal_value_at_origin() {
        let spec = MetricSpec::conformal(vec![gaussian(0.1, [0.0, 0.0], 1.0)]);
        let g = spec.eval_metric(&[0.0, 0.0]).unwrap();
        let e = (0.2f64).exp();
        assert!((g[0][0] - e).abs() < 1e-15 && (g[1][1] - e).abs() < 1e-15 && g[0][1] == 0.0);
    }

    #[test]
    fn outside_outer_disk_is_a_domain_error() {
        let spec = MetricSpec::euclidean();
        assert!(matches!(
            spec.eval_metric(&[1.2, 0.0]),
            Err(Error::Domain { .. })
        ));
        assert!(spec.eval_metric(&[1.1, 0.0]).is_ok());
    }

    #[test]
    fn degenerate_metric_is_rejected() {
        let spec = MetricSpec {
            tensor: vec![TensorTerm::Profiled {
                amplitude: -1.0,
                center: [0.0, 0.0],
                profile: Profile::Gaussian { sharpness: 0.0 },
                matrix: [[1.0, 0.0], [0.0, 0.0]],
            }],
            ..Default::default()
        };
        assert!(matches!(
            spec.eval_metric(&[0.0, 0.0]),
            Err(Error::SingularMetric { .. })
        ));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for spec in sample_specs() {
            for x in [[0.3, -0.2], [0.7, 0.5], [-0.85, 0.1], [0.0, 0.95]] {
                let jet = spec.jet(&x, true);
                for k in 0..DIM {
                    let mut xp = x;
                    let mut xm = x;
                    xp[k] += h;
                    xm[k] -= h;
                    let jp = spec.jet(&xp, true);
                    let jm = spec.jet(&xm, true);
                    for i in 0..DIM {
                        for j in 0..DIM {
                            let fd = (jp.g[i][j] - jm.g[i][j]) / (2.0 * h);
                            assert!((fd - jet.dg[k][i][j]).abs() < 1e-6, "dg {k}{i}{j}");
                            for l in 0..DIM {
                                let fd2 = (jp.dg[l][i][j] - jm.dg[l][i][j]) / (2.0 * h);
                                assert!(
                                    (fd2 - jet.ddg[k][l][i][j]).abs() < 1e-5,
                                    "ddg {k}{l}{i}{j}: {fd2} vs {}",
                                    jet.ddg[k][l][i][j]
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn conformal_christoffel_matches_closed_form() {
        let spec = MetricSpec::conformal(vec![gaussian(0.1, [0.2, 0.1], 1.5)]);
        let x = [0.4, -0.3];
        let gamma = spec.christoffel(&x).unwrap();
        let phi = spec.conformal_exponent(&x);
        for k in 0..DIM {
            for i in 0..DIM {
                for j in 0..DIM {
                    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
                    let expected =
                        d(i, k) * phi.grad[j] + d(j, k) * phi.grad[i] - d(i, j) * phi.grad[k];
                    assert!((gamma[k][i][j] - expected).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn collar_jet_is_polar_in_collar() {
        let f0 = Fourier {
            mean: 0.05,
            cos: vec![0.02],
            sin: vec![],
        };
        let spec = MetricSpec {
            tensor: vec![TensorTerm::Collar(CollarJet {
                jets: vec![f0.clone()],
                fade_start: 0.3,
                fade_end: 0.6,
            })],
            ..Default::default()
        };
        let beta: f64 = 0.8;
        let rho = 0.9;
        let x = [rho * beta.cos(), rho * beta.sin()];
        let g = spec.eval_metric(&x).unwrap();
        let radial = [beta.cos(), beta.sin()];
        let angular = [-beta.sin(), beta.cos()];
        assert!((linalg::quad(&g, &radial, &radial) - 1.0).abs() < 1e-13);
        assert!(linalg::quad(&g, &radial, &angular).abs() < 1e-13);
        let expected = 1.0 + f0.eval(beta) / (rho * rho);
        assert!((linalg::quad(&g, &angular, &angular) - expected).abs() < 1e-13);
    }

    #[test]
    fn fourier_interpolation_reproduces_samples() {
        let samples: Vec<f64> = (0..9)
            .map(|j| (j as f64 * 0.7).sin() + 0.1 * j as f64)
            .collect();
        let f = Fourier::interpolate(&samples);
        for (j, v) in samples.iter().enumerate() {
            let b = std::f64::consts::TAU * j as f64 / 9.0;
            assert!((f.eval(b) - v).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn metric_is_symmetric_positive_and_inverse_consistent(
            r in 0.0f64..1.1, t in 0.0f64..std::f64::consts::TAU
        ) {
            for spec in sample_specs() {
                let x = [r * t.cos(), r * t.sin()];
                let g = spec.eval_metric(&x).unwrap();
                prop_assert!((g[0][1] - g[1][0]).abs() < 1e-15);
                let inv = spec.inverse_jet(&x, false).unwrap().ginv;
                for i in 0..DIM {
                    for j in 0..DIM {
                        let s: f64 = (0..DIM).map(|a| g[i][a] * inv[a][j]).sum();
                        let id = if i == j { 1.0 } else { 0.0 };
                        prop_assert!((s - id).abs() < 1e-12);
                    }
                }
            }
        }

        #[test]
        fn christoffel_is_symmetric_in_lower_indices(
            r in 0.0f64..1.05, t in 0.0f64..std::f64::consts::TAU
        ) {
            for spec in sample_specs() {
                let gamma = spec.christoffel(&[r * t.cos(), r * t.sin()]).unwrap();
                for k in 0..DIM {
                    prop_assert!((gamma[k][0][1] - gamma[k][1][0]).abs() < 1e-14);
                }
            }
        }
    }
}
