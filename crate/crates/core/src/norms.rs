//! Boundary-adapted Sobolev norms `H̃¹`, `H̃²` on the outer disk.
//!
//! Near `∂Ω` derivatives are taken in polar form: the tangential derivative and the normal
//! derivative weighted by the signed distance `x^n = R − |x − c|`, localized by a radial collar
//! cutoff and a fixed partition of 8 angular bumps. Away from the collar the full gradient is
//! used. Volume and component pairings are Euclidean, so the same norm serves every metric.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::tensorfield::{Field, Support};

/// Number of angular bumps in the boundary partition.
pub const PARTITION_SIZE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormOrder {
    One,
    Two,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormOptions {
    /// Half-width `c` of the boundary collar: the cutoff is 1 for `|x^n| ≤ c/2` and 0 beyond `c`.
    pub collar: f64,
}

impl Default for NormOptions {
    fn default() -> Self {
        NormOptions { collar: 0.1 }
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

fn collar_cutoff(xn: f64, c: f64) -> f64 {
    1.0 - smoothstep((xn.abs() - 0.5 * c) / (0.5 * c))
}

/// Squared partition weights `χ_j(θ)²`, with `Σ_j χ_j = 1`.
fn partition(theta: f64) -> [f64; PARTITION_SIZE] {
    let width = TAU / PARTITION_SIZE as f64;
    let mut raw = [0.0; PARTITION_SIZE];
    for (j, r) in raw.iter_mut().enumerate() {
        let centre = j as f64 * width;
        let d = (theta - centre + TAU / 2.0).rem_euclid(TAU) - TAU / 2.0;
        let s = d / width;
        *r = if s.abs() < 1.0 {
            (1.0 - s * s).powi(3)
        } else {
            0.0
        };
    }
    let sum: f64 = raw.iter().sum();
    raw.map(|r| (r / sum).powi(2))
}

fn gradient<const K: usize>(f: &Field<K>, idx: usize) -> [[f64; 2]; K] {
    let mut g = [[0.0; 2]; K];
    for (c, gc) in g.iter_mut().enumerate() {
        for (axis, v) in gc.iter_mut().enumerate() {
            *v = f.partial(idx, c, axis);
        }
    }
    g
}

/// `‖F‖_{H̃¹(Ω₁)}`.
pub fn htilde1<const K: usize>(f: &Field<K>, opts: &NormOptions) -> f64 {
    let grid = f.grid;
    let dom = grid.domain;
    let h2 = grid.spacing().powi(2);
    let mut total = 0.0;
    for idx in 0..grid.len() {
        if !grid.in_support(idx, Support::Outer) || !f.in_mask(idx) {
            continue;
        }
        let x = grid.node(idx);
        let d = dom.offset(&x);
        let r = dom.dist_from_center(&x);
        let xn = dom.radius - r;
        let eta = collar_cutoff(xn, opts.collar);
        let val: f64 = f.values[idx].iter().map(|v| v * v).sum();
        let grad = gradient(f, idx);
        let full: f64 = grad.iter().map(|g| g[0] * g[0] + g[1] * g[1]).sum();
        let mut s = val + (1.0 - eta).powi(2) * full;
        if eta > 0.0 && r > 0.0 {
            let er = [d[0] / r, d[1] / r];
            let et = [-er[1], er[0]];
            let dt: f64 = grad
                .iter()
                .map(|g| (g[0] * et[0] + g[1] * et[1]).powi(2))
                .sum();
            let dn: f64 = grad
                .iter()
                .map(|g| (g[0] * er[0] + g[1] * er[1]).powi(2))
                .sum();
            let chi: f64 = partition(d[1].atan2(d[0]).rem_euclid(TAU)).iter().sum();
            s += chi * eta * eta * (dt + xn * xn * dn);
        }
        total += h2 * s;
    }
    total.sqrt()
}

/// `‖F‖_{H¹(Ω₁)}`.
pub fn h1<const K: usize>(f: &Field<K>) -> f64 {
    let grid = f.grid;
    let h2 = grid.spacing().powi(2);
    let mut total = 0.0;
    for idx in 0..grid.len() {
        if !grid.in_support(idx, Support::Outer) || !f.in_mask(idx) {
            continue;
        }
        let val: f64 = f.values[idx].iter().map(|v| v * v).sum();
        let grad: f64 = gradient(f, idx)
            .iter()
            .map(|g| g[0] * g[0] + g[1] * g[1])
            .sum();
        total += h2 * (val + grad);
    }
    total.sqrt()
}

/// `Σ_i ‖∂_i F‖_{H̃¹} + ‖F‖_{H¹}`.
pub fn htilde2<const K: usize>(f: &Field<K>, opts: &NormOptions) -> f64 {
    let mut s = h1(f);
    for axis in 0..2 {
        let d = f.grid_only().map_nodes(|idx, _| {
            let mut out = [0.0; K];
            for (c, o) in out.iter_mut().enumerate() {
                *o = f.partial(idx, c, axis);
            }
            out
        });
        s += htilde1(&d, opts);
    }
    s
}

pub fn htilde_norm<const K: usize>(f: &Field<K>, order: NormOrder, opts: &NormOptions) -> f64 {
    match order {
        NormOrder::One => htilde1(f, opts),
        NormOrder::Two => htilde2(f, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::Domain;
    use crate::synth::random_tensor;
    use crate::tensorfield::{Grid, SymTensorField};
    use proptest::prelude::*;

    #[test]
    fn partition_sums_to_one() {
        for k in 0..100 {
            let theta = TAU * k as f64 / 100.0;
            let s: f64 = partition(theta).iter().map(|w| w.sqrt()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_field_has_zero_norm() {
        let grid = Grid::new(24, Domain::default()).unwrap();
        let f = SymTensorField::zeros(grid, Support::Outer);
        assert_eq!(
            htilde_norm(&f, NormOrder::Two, &NormOptions::default()),
            0.0
        );
    }

    #[test]
    fn norm_comparisons_on_smooth_fields() {
        let grid = Grid::new(48, Domain::default()).unwrap();
        let opts = NormOptions::default();
        for seed in 0..5 {
            let f = random_tensor(grid, Support::Outer, seed, 1.05, 3).grid_only();
            let (t1, n1, t2) = (htilde1(&f, &opts), h1(&f), htilde2(&f, &opts));
            assert!(t1 <= n1 * (1.0 + 1e-12), "{t1} {n1}");
            assert!(n1 <= t2, "{n1} {t2}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn norms_are_absolutely_homogeneous(seed in 0u64..1000, c in -5.0f64..5.0) {
            let grid = Grid::new(20, Domain::default()).unwrap();
            let f = random_tensor(grid, Support::Outer, seed, 1.05, 2).grid_only();
            let opts = NormOptions::default();
            for order in [NormOrder::One, NormOrder::Two] {
                let a = htilde_norm(&f.scale(c), order, &opts);
                let b = c.abs() * htilde_norm(&f, order, &opts);
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b));
            }
        }
    }
}
