//! Smooth closed-form test fields: random trigonometric sums under a compact bump.

use std::f64::consts::TAU;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hyperdual::HyperDual;
use crate::metric::{Mat, MetricSpec, Point, DIM};
use crate::tensorfield::{sym_index, Grid, OneFormField, Rule, Support, SymTensorField, SYM};

const ENVELOPE_POWER: i32 = 6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub k: Point,
    pub phase: f64,
    pub amplitude: f64,
}

/// `(1 - |x - c|²/r²)^6 Σ a cos(k·x + θ)` inside the disk of radius `r`, zero outside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigBump {
    pub center: Point,
    pub cutoff: f64,
    pub waves: Vec<Wave>,
}

impl TrigBump {
    /// Random waves with integer-lattice frequencies up to `max_freq` (in units of `π`),
    /// amplitudes decaying like `1/(1 + |k|)²`.
    pub fn random<R: Rng>(rng: &mut R, center: Point, cutoff: f64, max_freq: usize) -> TrigBump {
        let mut waves = Vec::new();
        for p in 0..=max_freq {
            for q in 0..=max_freq {
                let decay = 1.0 / (1.0 + (p + q) as f64).powi(2);
                waves.push(Wave {
                    k: [
                        p as f64 * std::f64::consts::PI,
                        q as f64 * std::f64::consts::PI,
                    ],
                    phase: rng.gen_range(0.0..TAU),
                    amplitude: decay * rng.gen_range(-1.0..1.0),
                });
            }
        }
        TrigBump {
            center,
            cutoff,
            waves,
        }
    }

    pub fn value(&self, x: &Point) -> f64 {
        let d = [x[0] - self.center[0], x[1] - self.center[1]];
        let s = (d[0] * d[0] + d[1] * d[1]) / (self.cutoff * self.cutoff);
        if s >= 1.0 {
            return 0.0;
        }
        let bump = (1.0 - s).powi(ENVELOPE_POWER);
        bump * self
            .waves
            .iter()
            .map(|w| w.amplitude * (w.k[0] * x[0] + w.k[1] * x[1] + w.phase).cos())
            .sum::<f64>()
    }

    fn value_hd(&self, x: &[HyperDual; DIM]) -> HyperDual {
        let d = [x[0] + (-self.center[0]), x[1] + (-self.center[1])];
        let s = (d[0] * d[0] + d[1] * d[1]) * (1.0 / (self.cutoff * self.cutoff));
        if s.re >= 1.0 {
            return HyperDual::constant(0.0);
        }
        let bump = (-s + 1.0).powi(ENVELOPE_POWER);
        let mut sum = HyperDual::constant(0.0);
        for w in &self.waves {
            sum = sum + (x[0] * w.k[0] + x[1] * w.k[1] + w.phase).cos() * w.amplitude;
        }
        bump * sum
    }

    /// Hessian by hyper-dual evaluation.
    pub fn hessian(&self, x: &Point) -> Mat {
        let mut h = [[0.0; DIM]; DIM];
        for k in 0..DIM {
            for l in k..DIM {
                let mut xs = [HyperDual::constant(0.0); DIM];
                for (m, xm) in xs.iter_mut().enumerate() {
                    *xm = HyperDual::variable(
                        x[m],
                        if m == k { 1.0 } else { 0.0 },
                        if m == l { 1.0 } else { 0.0 },
                    );
                }
                let v = self.value_hd(&xs).e12;
                h[k][l] = v;
                h[l][k] = v;
            }
        }
        h
    }
}

/// Independent random trig-bump components, packaged as a closed-form rule.
pub fn random_components<const K: usize>(
    seed: u64,
    center: Point,
    cutoff: f64,
    max_freq: usize,
) -> Rule<K> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comps: Vec<TrigBump> = (0..K)
        .map(|_| TrigBump::random(&mut rng, center, cutoff, max_freq))
        .collect();
    Arc::new(move |x: &Point| {
        let mut v = [0.0; K];
        for (c, t) in comps.iter().enumerate() {
            v[c] = t.value(x);
        }
        v
    })
}

/// Smooth random symmetric tensor field compactly supported in the disk of radius `cutoff`.
pub fn random_tensor(
    grid: Grid,
    support: Support,
    seed: u64,
    cutoff: f64,
    max_freq: usize,
) -> SymTensorField {
    SymTensorField::from_rule(
        grid,
        support,
        random_components::<SYM>(seed, grid.domain.center, cutoff, max_freq),
    )
}

pub fn random_one_form(
    grid: Grid,
    support: Support,
    seed: u64,
    cutoff: f64,
    max_freq: usize,
) -> OneFormField {
    OneFormField::from_rule(
        grid,
        support,
        random_components::<DIM>(seed, grid.domain.center, cutoff, max_freq),
    )
}

/// Euclidean divergence-free tensor `[[ψ_yy, -ψ_xy], [-ψ_xy, ψ_xx]]` from a random
/// compactly supported stress function `ψ`.
pub fn airy_solenoidal(grid: Grid, seed: u64, cutoff: f64, max_freq: usize) -> SymTensorField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let psi = TrigBump::random(&mut rng, grid.domain.center, cutoff, max_freq);
    SymTensorField::from_rule(
        grid,
        Support::Inner,
        Arc::new(move |x: &Point| {
            let h = psi.hessian(x);
            [h[1][1], -h[0][1], h[0][0]]
        }),
    )
}


/// Closed-form symmetric differential of a closed-form 1-form, by central differences of the
/// rule at step `1e-5` and the analytic Christoffel symbols.
pub fn sym_diff_rule(spec: &MetricSpec, v: Rule<DIM>) -> Rule<SYM> {
    let spec = spec.clone();
    Arc::new(move |x: &Point| {
        let eps = 1e-5;
        let mut d = [[0.0; DIM]; DIM];
        for (a, row) in d.iter_mut().enumerate() {
            let mut xp = *x;
            let mut xm = *x;
            xp[a] += eps;
            xm[a] -= eps;
            let (p, m) = (v(&xp), v(&xm));
            for c in 0..DIM {
                row[c] = (p[c] - m[c]) / (2.0 * eps);
            }
        }
        let Ok(gamma) = spec.christoffel(x) else {
            return [0.0; SYM];
        };
        let val = v(x);
        let mut out = [0.0; SYM];
        for i in 0..DIM {
            for j in i..DIM {
                let mut s = 0.5 * (d[i][j] + d[j][i]);
                for k in 0..DIM {
                    s -= gamma[k][i][j] * val[k];
                }
                out[sym_index(i, j)] = s;
            }
        }
        out
    })
}
