//! Gauss–Legendre nodes and a few small dense linear-algebra helpers.

use std::f64::consts::PI;

/// Nodes and weights on [-1, 1].
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..(m + 1) / 2 {
        let mut z = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pm = if m == 1 { z } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = m as f64 * (z * pm - pm1) / (z * z - 1.0);
            let dz = pm / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[m - 1 - i] = w[i];
    }
    (x, w)
}

/// Nodes and weights mapped to [a, b].
pub fn gauss_legendre_on(m: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(m);
    let h = 0.5 * (b - a);
    (x.iter().map(|t| a + h * (t + 1.0)).collect(), w.iter().map(|v| v * h).collect())
}

/// Solve A x = b (row-major, dim d) by partial pivoting. None if singular.
pub fn solve(a: &[f64], b: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for c in 0..d {
        let p = (c..d).max_by(|&i, &j| m[i * d + c].abs().total_cmp(&m[j * d + c].abs()))?;
        if m[p * d + c].abs() < 1e-14 {
            return None;
        }
        if p != c {
            for k in 0..d {
                m.swap(c * d + k, p * d + k);
            }
            x.swap(c, p);
        }
        for r in (c + 1)..d {
            let f = m[r * d + c] / m[c * d + c];
            for k in c..d {
                m[r * d + k] -= f * m[c * d + k];
            }
            x[r] -= f * x[c];
        }
    }
    for c in (0..d).rev() {
        let mut s = x[c];
        for k in (c + 1)..d {
            s -= m[c * d + k] * x[k];
        }
        x[c] = s / m[c * d + c];
    }
    Some(x)
}

/// Inverse of a d×d matrix.
pub fn inverse(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; d * d];
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        let col = solve(a, &e, d)?;
        for i in 0..d {
            inv[i * d + j] = col[i];
        }
    }
    Some(inv)
}

/// Singular values of a small matrix via eigenvalues of AᵀA (Jacobi sweeps).
pub fn singular_values(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut s = vec![0.0; cols * cols];
    for i in 0..cols {
        for j in 0..cols {
            s[i * cols + j] = (0..rows).map(|r| a[r * cols + i] * a[r * cols + j]).sum();
        }
    }
    let d = cols;
    for _ in 0..100 {
        let mut off = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                off += s[p * d + q] * s[p * d + q];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = s[p * d + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (s[q * d + q] - s[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..d {
                    let skp = s[k * d + p];
                    let skq = s[k * d + q];
                    s[k * d + p] = c * skp - sn * skq;
                    s[k * d + q] = sn * skp + c * skq;
                }
                for k in 0..d {
                    let spk = s[p * d + k];
                    let sqk = s[q * d + k];
                    s[p * d + k] = c * spk - sn * sqk;
                    s[q * d + k] = sn * spk + c * sqk;
                }
            }
        }
    }
    let mut sv: Vec<f64> = (0..d).map(|i| s[i * d + i].max(0.0).sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        // exact up to degree 15
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((s - 2.0 / 15.0).abs() < 1e-14);
        let (x, w) = gauss_legendre_on(40, 0.0, 1.0);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.exp()).sum();
        assert!((s - (1f64.exp() - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn solve_and_inverse() {
        let a = [4.0, 1.0, 2.0, 1.0, 3.0, 0.0, 2.0, 0.0, 5.0];
        let x = solve(&a, &[1.0, 2.0, 3.0], 3).unwrap();
        for r in 0..3 {
            let lhs: f64 = (0..3).map(|c| a[r * 3 + c] * x[c]).sum();
            assert!((lhs - [1.0, 2.0, 3.0][r]).abs() < 1e-14);
        }
        assert!(solve(&[1.0, 2.0, 2.0, 4.0], &[1.0, 1.0], 2).is_none());
        let inv = inverse(&a, 3).unwrap();
        let sv = singular_values(&a, 3, 3);
        let svi = singular_values(&inv, 3, 3);
        assert!((sv[0] * svi[2] - 1.0).abs() < 1e-12);
    }
}
