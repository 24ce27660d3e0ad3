//! Dense helpers for the small `DIM x DIM` matrices that appear pointwise.

use crate::metric::{Mat, Point, DIM};

pub fn zero_mat() -> Mat {
    [[0.0; DIM]; DIM]
}

pub fn identity() -> Mat {
    let mut m = zero_mat();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn mat_vec(m: &Mat, v: &Point) -> Point {
    let mut out = [0.0; DIM];
    for i in 0..DIM {
        for j in 0..DIM {
            out[i] += m[i][j] * v[j];
        }
    }
    out
}

pub fn dot(a: &Point, b: &Point) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &Point) -> f64 {
    dot(a, a).sqrt()
}

pub fn quad(m: &Mat, a: &Point, b: &Point) -> f64 {
    dot(a, &mat_vec(m, b))
}

pub fn sub(a: &Point, b: &Point) -> Point {
    let mut out = [0.0; DIM];
    for i in 0..DIM {
        out[i] = a[i] - b[i];
    }
    out
}

pub fn axpy(a: f64, x: &Point, y: &Point) -> Point {
    let mut out = [0.0; DIM];
    for i in 0..DIM {
        out[i] = a * x[i] + y[i];
    }
    out
}

/// Determinant of the matrix whose columns are `a` and `b` (planar cross product).
pub fn cross2(a: &Point, b: &Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Gauss-Jordan inverse with partial pivoting. Returns `None` when singular.
pub fn inverse(m: &Mat) -> Option<Mat> {
    let mut a = *m;
    let mut inv = identity();
    for col in 0..DIM {
        let mut piv = col;
        for r in col + 1..DIM {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        inv.swap(col, piv);
        let p = a[col][col];
        for c in 0..DIM {
            a[col][c] /= p;
            inv[col][c] /= p;
        }
        for r in 0..DIM {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for c in 0..DIM {
                        a[r][c] -= f * a[col][c];
                        inv[r][c] -= f * inv[col][c];
                    }
                }
            }
        }
    }
    Some(inv)
}

pub fn determinant(m: &Mat) -> f64 {
    let mut a = *m;
    let mut det = 1.0;
    for col in 0..DIM {
        let mut piv = col;
        for r in col + 1..DIM {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            a.swap(col, piv);
            det = -det;
        }
        det *= a[col][col];
        for r in col + 1..DIM {
            let f = a[r][col] / a[col][col];
            for c in col..DIM {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    det
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn sym_eigenvalues(m: &Mat) -> [f64; DIM] {
    let mut a = *m;
    for _sweep in 0..50 {
        let mut off = 0.0;
        for p in 0..DIM {
            for q in p + 1..DIM {
                off += a[p][q] * a[p][q];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..DIM {
            for q in p + 1..DIM {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..DIM {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..DIM {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev = [0.0; DIM];
    for i in 0..DIM {
        ev[i] = a[i][i];
    }
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

/// Solve a small dense system by Gaussian elimination; `None` if singular.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv =
            (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = b[r];
        for c in r + 1..n {
            s -= a[r][c] * x[c];
        }
        x[r] = s / a[r][r];
    }
    Some(x)
}

/// Least-squares solution of `A x = b` via the normal equations.
pub fn least_squares(rows: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let m = rows.first()?.len();
    let mut ata = vec![vec![0.0; m]; m];
    let mut atb = vec![0.0; m];
    for (row, &b) in rows.iter().zip(rhs) {
        for i in 0..m {
            atb[i] += row[i] * b;
            for j in 0..m {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    solve_dense(ata, atb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_and_determinant_agree() {
        let m = [[2.0, 0.5], [0.5, 1.0]];
        let inv = inverse(&m).unwrap();
        let det = determinant(&m);
        assert!((det - 1.75).abs() < 1e-14);
        assert!((inv[0][0] - 1.0 / 1.75).abs() < 1e-14);
        assert!((inv[0][1] + 0.5 / 1.75).abs() < 1e-14);
    }

    #[test]
    fn jacobi_eigenvalues() {
        let ev = sym_eigenvalues(&[[2.0, 1.0], [1.0, 2.0]]);
        assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn singular_matrix_has_no_inverse() {
        assert!(inverse(&[[1.0, 2.0], [2.0, 4.0]]).is_none());
    }
}
