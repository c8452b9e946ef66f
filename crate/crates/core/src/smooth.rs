//! Univariate smooth building blocks with exact derivatives up to third order.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Truncated Taylor jet [f, f', f'', f'''] in one variable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct T3(pub [f64; 4]);

impl T3 {
    pub fn var(x: f64) -> T3 {
        T3([x, 1.0, 0.0, 0.0])
    }
    pub fn cst(c: f64) -> T3 {
        T3([c, 0.0, 0.0, 0.0])
    }
    pub fn v(&self) -> f64 {
        self.0[0]
    }
    pub fn d(&self, k: usize) -> f64 {
        self.0[k]
    }
    pub fn exp(self) -> T3 {
        let [f, f1, f2, f3] = self.0;
        let g = f.exp();
        T3([g, f1 * g, (f2 + f1 * f1) * g, (f3 + 3.0 * f1 * f2 + f1 * f1 * f1) * g])
    }
    pub fn recip(self) -> T3 {
        let [f, f1, f2, f3] = self.0;
        let i = 1.0 / f;
        let i2 = i * i;
        T3([
            i,
            -f1 * i2,
            (2.0 * f1 * f1 - f * f2) * i2 * i,
            (-6.0 * f1 * f1 * f1 + 6.0 * f * f1 * f2 - f * f * f3) * i2 * i2,
        ])
    }
    pub fn scale(self, s: f64) -> T3 {
        T3(self.0.map(|x| x * s))
    }
    pub fn sqrt(self) -> T3 {
        let [f, f1, f2, f3] = self.0;
        let g = f.sqrt();
        let g1 = f1 / (2.0 * g);
        let g2 = (f2 - 2.0 * g1 * g1) / (2.0 * g);
        let g3 = (f3 - 6.0 * g1 * g2) / (2.0 * g);
        T3([g, g1, g2, g3])
    }
}

impl Add for T3 {
    type Output = T3;
    fn add(self, o: T3) -> T3 {
        T3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2], self.0[3] + o.0[3]])
    }
}
impl Sub for T3 {
    type Output = T3;
    fn sub(self, o: T3) -> T3 {
        self + (-o)
    }
}
impl Neg for T3 {
    type Output = T3;
    fn neg(self) -> T3 {
        self.scale(-1.0)
    }
}
impl Mul for T3 {
    type Output = T3;
    fn mul(self, o: T3) -> T3 {
        let [f, f1, f2, f3] = self.0;
        let [g, g1, g2, g3] = o.0;
        T3([
            f * g,
            f1 * g + f * g1,
            f2 * g + 2.0 * f1 * g1 + f * g2,
            f3 * g + 3.0 * f2 * g1 + 3.0 * f1 * g2 + f * g3,
        ])
    }
}
impl Div for T3 {
    type Output = T3;
    fn div(self, o: T3) -> T3 {
        self * o.recip()
    }
}

/// C^∞ step: 0 for s ≤ 0, 1 for s ≥ 1.
pub fn smoothstep(s: T3) -> T3 {
    let x = s.v();
    if x <= 0.0 {
        return T3::cst(0.0);
    }
    if x >= 1.0 {
        return T3::cst(1.0);
    }
    let a = (-s.recip()).exp();
    let b = (-(T3::cst(1.0) - s).recip()).exp();
    a / (a + b)
}

/// Step rising from 0 at t = a to 1 at t = b, differentiated in t.
pub fn ramp(t: f64, a: f64, b: f64) -> T3 {
    smoothstep(T3::var(t).add_const(-a).scale(1.0 / (b - a)))
}

impl T3 {
    pub fn add_const(self, c: f64) -> T3 {
        let mut r = self;
        r.0[0] += c;
        r
    }
}

/// Box-flow generator Φ(z) = exp(−1/(z(w − z))) on (0, w), unnormalised.
pub fn profile_raw(z: f64, w: f64) -> T3 {
    if z <= 0.0 || z >= w {
        return T3::cst(0.0);
    }
    let x = T3::var(z);
    let q = x * (T3::cst(w) - x);
    (-q.recip()).exp()
}

/// Radial plateau bump: 1 on |ρ| ≤ 1/2, 0 on |ρ| ≥ 1.
pub fn plateau(rho: f64) -> f64 {
    1.0 - smoothstep(T3::cst((rho.abs() - 0.5) * 2.0)).v()
}

/// Plateau bump with derivatives.
pub fn plateau_jet(rho: T3) -> T3 {
    let r = if rho.v() < 0.0 { -rho } else { rho };
    T3::cst(1.0) - smoothstep(r.add_const(-0.5).scale(2.0))
}

/// Monomial coefficients on [0, 1] of the quintic Hermite basis for
/// (value, slope, curvature) at 0, then at 1.
pub const QUINTIC_BASIS: [[f64; 6]; 6] = [
    [1.0, 0.0, 0.0, -10.0, 15.0, -6.0],
    [0.0, 1.0, 0.0, -6.0, 8.0, -3.0],
    [0.0, 0.0, 0.5, -1.5, 1.5, -0.5],
    [0.0, 0.0, 0.0, 10.0, -15.0, 6.0],
    [0.0, 0.0, 0.0, -4.0, 7.0, -3.0],
    [0.0, 0.0, 0.0, 0.5, -1.0, 0.5],
];

/// Unique quintic matching (value, slope, curvature) at both ends of [a, b].
#[derive(Clone, Copy, Debug)]
pub struct QuinticHermite {
    a: f64,
    h: f64,
    c: [f64; 6],
}

impl QuinticHermite {
    pub fn new(a: f64, b: f64, left: [f64; 3], right: [f64; 3]) -> Self {
        let h = b - a;
        let (y0, d0, s0) = (left[0], left[1] * h, left[2] * h * h);
        let (y1, d1, s1) = (right[0], right[1] * h, right[2] * h * h);
        let w = [y0, d0, s0, y1, d1, s1];
        let mut c = [0.0; 6];
        for (wi, row) in w.iter().zip(QUINTIC_BASIS.iter()) {
            for k in 0..6 {
                c[k] += wi * row[k];
            }
        }
        QuinticHermite { a, h, c }
    }

    pub fn coeffs(&self) -> [f64; 6] {
        self.c
    }

    pub fn eval(&self, x: T3) -> T3 {
        let s = x.add_const(-self.a).scale(1.0 / self.h);
        let mut acc = T3::cst(self.c[5]);
        for k in (0..5).rev() {
            acc = acc * s + T3::cst(self.c[k]);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(f64) -> f64, x: f64, h: f64) -> [f64; 3] {
        let d1 = (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h);
        let d2 = (-f(x - 2.0 * h) + 16.0 * f(x - h) - 30.0 * f(x) + 16.0 * f(x + h) - f(x + 2.0 * h))
            / (12.0 * h * h);
        let d3 = (f(x + 2.0 * h) - 2.0 * f(x + h) + 2.0 * f(x - h) - f(x - 2.0 * h)) / (2.0 * h * h * h);
        [d1, d2, d3]
    }

    #[test]
    fn jet_derivatives_match_finite_differences() {
        let g = |x: T3| (x * x).exp() / (T3::cst(2.0) + x);
        let x0 = 0.3;
        let j = g(T3::var(x0));
        let d = fd(|x| g(T3::cst(x)).v(), x0, 1e-3);
        let h = |x: T3| (x * x + T3::cst(1.0)).sqrt();
        let js = h(T3::var(x0));
        let ds = fd(|x| h(T3::cst(x)).v(), x0, 1e-3);
        assert!((js.d(1) - ds[0]).abs() < 1e-8 && (js.d(3) - ds[2]).abs() < 1e-4);
        assert!((j.d(1) - d[0]).abs() < 1e-8);
        assert!((j.d(2) - d[1]).abs() < 1e-6);
        assert!((j.d(3) - d[2]).abs() < 1e-4);
    }

    #[test]
    fn smoothstep_limits_and_symmetry() {
        assert_eq!(smoothstep(T3::var(-0.1)).v(), 0.0);
        assert_eq!(smoothstep(T3::var(1.2)).v(), 1.0);
        for &s in &[0.1, 0.25, 0.4] {
            let a = smoothstep(T3::var(s));
            let b = smoothstep(T3::var(1.0 - s));
            assert!((a.v() + b.v() - 1.0).abs() < 1e-15);
            assert!((a.d(1) - b.d(1)).abs() < 1e-12);
        }
        assert!((smoothstep(T3::var(0.5)).v() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn chi_bridge_coefficients() {
        let q = QuinticHermite::new(2.0, 4.0, [1.0, 0.0, 0.0], [4.0, 1.0, 0.0]);
        let c = q.coeffs();
        let expect = [1.0, 0.0, 0.0, 22.0, -31.0, 12.0];
        for k in 0..6 {
            assert!((c[k] - expect[k]).abs() < 1e-13, "{k}: {}", c[k]);
        }
        let r = q.eval(T3::var(4.0));
        assert!((r.v() - 4.0).abs() < 1e-14 && (r.d(1) - 1.0).abs() < 1e-14 && r.d(2).abs() < 1e-13);
    }

    #[test]
    fn plateau_shape() {
        assert_eq!(plateau(0.3), 1.0);
        assert_eq!(plateau(-0.5), 1.0);
        assert_eq!(plateau(1.0), 0.0);
        assert!(plateau(0.75) > 0.0 && plateau(0.75) < 1.0);
    }
}
