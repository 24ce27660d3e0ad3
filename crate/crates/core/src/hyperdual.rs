//! Hyper-dual numbers: exact first and mixed second derivatives by forward propagation.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperDual {
    pub re: f64,
    pub e1: f64,
    pub e2: f64,
    pub e12: f64,
}

impl HyperDual {
    pub fn constant(re: f64) -> Self {
        HyperDual {
            re,
            e1: 0.0,
            e2: 0.0,
            e12: 0.0,
        }
    }

    pub fn variable(re: f64, d1: f64, d2: f64) -> Self {
        HyperDual {
            re,
            e1: d1,
            e2: d2,
            e12: 0.0,
        }
    }

    fn chain(self, f: f64, df: f64, ddf: f64) -> Self {
        HyperDual {
            re: f,
            e1: df * self.e1,
            e2: df * self.e2,
            e12: df * self.e12 + ddf * self.e1 * self.e2,
        }
    }

    pub fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e, e)
    }

    pub fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * self.re))
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn recip(self) -> Self {
        let r = 1.0 / self.re;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }

    pub fn powi(self, n: i32) -> Self {
        if n == 0 {
            return HyperDual::constant(1.0);
        }
        let f = self.re.powi(n);
        let df = n as f64 * self.re.powi(n - 1);
        let ddf = (n * (n - 1)) as f64 * self.re.powi(n - 2);
        self.chain(f, df, ddf)
    }

    pub fn atan2(self, x: Self) -> Self {
        // d atan2(y, x) = (x dy - y dx) / (x^2 + y^2)
        let y = self;
        let r2 = y * y + x * x;
        let num1 = x.re * y.e1 - y.re * x.e1;
        let num2 = x.re * y.e2 - y.re * x.e2;
        let inv = r2.recip();
        let d1 = num1 * inv.re;
        let d2 = num2 * inv.re;
        // second mixed derivative of (x dy - y dx)/r2 along direction 2
        let dnum1_2 = x.e2 * y.e1 + x.re * y.e12 - y.e2 * x.e1 - y.re * x.e12;
        let d12 = dnum1_2 * inv.re + num1 * inv.e2;
        HyperDual {
            re: y.re.atan2(x.re),
            e1: d1,
            e2: d2,
            e12: d12,
        }
    }
}

impl Add for HyperDual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        HyperDual {
            re: self.re + o.re,
            e1: self.e1 + o.e1,
            e2: self.e2 + o.e2,
            e12: self.e12 + o.e12,
        }
    }
}

impl Sub for HyperDual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        HyperDual {
            re: self.re - o.re,
            e1: self.e1 - o.e1,
            e2: self.e2 - o.e2,
            e12: self.e12 - o.e12,
        }
    }
}

impl Mul for HyperDual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        HyperDual {
            re: self.re * o.re,
            e1: self.re * o.e1 + self.e1 * o.re,
            e2: self.re * o.e2 + self.e2 * o.re,
            e12: self.re * o.e12 + self.e1 * o.e2 + self.e2 * o.e1 + self.e12 * o.re,
        }
    }
}

impl Div for HyperDual {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

impl Neg for HyperDual {
    type Output = Self;
    fn neg(self) -> Self {
        HyperDual {
            re: -self.re,
            e1: -self.e1,
            e2: -self.e2,
            e12: -self.e12,
        }
    }
}

impl Mul<f64> for HyperDual {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        HyperDual {
            re: self.re * s,
            e1: self.e1 * s,
            e2: self.e2 * s,
            e12: self.e12 * s,
        }
    }
}

impl Add<f64> for HyperDual {
    type Output = Self;
    fn add(self, s: f64) -> Self {
        HyperDual {
            re: self.re + s,
            ..self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_second_derivative_of_product() {
        // f(x, y) = exp(x) * sin(y): f_xy = exp(x) cos(y)
        let (x0, y0) = (0.3, 0.7);
        let x = HyperDual::variable(x0, 1.0, 0.0);
        let y = HyperDual::variable(y0, 0.0, 1.0);
        let f = x.exp() * y.sin();
        assert!((f.e12 - x0.exp() * y0.cos()).abs() < 1e-14);
        assert!((f.e1 - x0.exp() * y0.sin()).abs() < 1e-14);
    }

    #[test]
    fn atan2_second_derivatives_match_finite_differences() {
        let g = |x: f64, y: f64| y.atan2(x);
        let (x0, y0, h) = (0.4, -0.9, 1e-4);
        for &(a, b) in &[(0usize, 0usize), (0, 1), (1, 1)] {
            let dir = |k: usize| if k == 0 { (1.0, 0.0) } else { (0.0, 1.0) };
            let (a1, a2) = dir(a);
            let (b1, b2) = dir(b);
            let x = HyperDual {
                re: x0,
                e1: a1,
                e2: b1,
                e12: 0.0,
            };
            let y = HyperDual {
                re: y0,
                e1: a2,
                e2: b2,
                e12: 0.0,
            };
            let v = y.atan2(x);
            let fd = (g(x0 + h * a1 + h * b1, y0 + h * a2 + h * b2)
                - g(x0 + h * a1 - h * b1, y0 + h * a2 - h * b2)
                - g(x0 - h * a1 + h * b1, y0 - h * a2 + h * b2)
                + g(x0 - h * a1 - h * b1, y0 - h * a2 - h * b2))
                / (4.0 * h * h);
            assert!((v.e12 - fd).abs() < 1e-6, "{a}{b}: {} vs {fd}", v.e12);
        }
    }
}
