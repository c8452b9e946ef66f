//! 3-D complex FFT on an n³ grid (x₃ fastest) assembled from rustfft line transforms.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

pub struct Fft3 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

static PLANS: OnceLock<Mutex<HashMap<usize, Arc<Fft3>>>> = OnceLock::new();

pub fn plan(n: usize) -> Arc<Fft3> {
    let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("fft plan cache poisoned");
    map.entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Fft3 { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) })
        })
        .clone()
}

impl Fft3 {
    /// Forward transform normalised so that f(x) = Σ c(m) e^{2πi m·x}.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.fwd);
        let s = 1.0 / (self.n * self.n * self.n) as f64;
        data.par_iter_mut().for_each(|z| *z *= s);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inv);
    }

    fn run(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        let n2 = n * n;
        assert_eq!(data.len(), n2 * n);
        let scratch_len = fft.get_inplace_scratch_len();

        // axis 3: contiguous lines
        data.par_chunks_mut(n2).for_each(|plane| {
            let mut scratch = vec![Complex64::default(); scratch_len];
            fft.process_with_scratch(plane, &mut scratch);
        });

        // axis 2: transpose each (i2, i3) plane
        data.par_chunks_mut(n2).for_each(|plane| {
            let mut scratch = vec![Complex64::default(); scratch_len];
            transpose_square(plane, n);
            fft.process_with_scratch(plane, &mut scratch);
            transpose_square(plane, n);
        });

        // axis 1: gather (i1) lines for each (i2, i3)
        let mut buf = vec![Complex64::default(); n2 * n];
        buf.par_chunks_mut(n * n).enumerate().for_each(|(blk, out)| {
            // out holds lines j = blk*n .. blk*n + n, each of length n
            for jj in 0..n {
                let j = blk * n + jj;
                for i1 in 0..n {
                    out[jj * n + i1] = data[i1 * n2 + j];
                }
            }
            let mut scratch = vec![Complex64::default(); scratch_len];
            fft.process_with_scratch(out, &mut scratch);
        });
        data.par_chunks_mut(n2).enumerate().for_each(|(i1, plane)| {
            for (j, z) in plane.iter_mut().enumerate() {
                *z = buf[j * n + i1];
            }
        });
    }
}

fn transpose_square(a: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            a.swap(i * n + j, j * n + i);
        }
    }
}

/// Index of the mode −m given the index of m.
#[inline]
pub fn neg_index(idx: usize, n: usize) -> usize {
    let i3 = idx % n;
    let i2 = (idx / n) % n;
    let i1 = idx / (n * n);
    let f = |i: usize| (n - i) % n;
    (f(i1) * n + f(i2)) * n + f(i3)
}

/// Transform two real sample arrays with one complex FFT.
pub fn forward_real_pair(n: usize, f: &[f64], g: Option<&[f64]>) -> (Vec<Complex64>, Option<Vec<Complex64>>) {
    let p = plan(n);
    let mut z: Vec<Complex64> = match g {
        Some(g) => f.iter().zip(g).map(|(&a, &b)| Complex64::new(a, b)).collect(),
        None => f.iter().map(|&a| Complex64::new(a, 0.0)).collect(),
    };
    p.forward(&mut z);
    if g.is_none() {
        return (z, None);
    }
    let len = z.len();
    let mut a = vec![Complex64::default(); len];
    let mut b = vec![Complex64::default(); len];
    let n2 = n * n;
    a.par_chunks_mut(n2).zip(b.par_chunks_mut(n2)).enumerate().for_each(|(i1, (pa, pb))| {
        let j1 = (n - i1) % n;
        for i2 in 0..n {
            let j2 = (n - i2) % n;
            let row = &z[(i1 * n + i2) * n..][..n];
            let neg = &z[(j1 * n + j2) * n..][..n];
            for i3 in 0..n {
                let zm = row[i3];
                let zc = neg[(n - i3) % n].conj();
                pa[i2 * n + i3] = (zm + zc) * 0.5;
                // (zm - zc) / (2i)
                let d = (zm - zc) * 0.5;
                pb[i2 * n + i3] = Complex64::new(d.im, -d.re);
            }
        }
    });
    (a, Some(b))
}

/// Inverse transform of one or two real-field coefficient arrays.
pub fn inverse_real_pair(n: usize, a: &[Complex64], b: Option<&[Complex64]>) -> (Vec<f64>, Option<Vec<f64>>) {
    let p = plan(n);
    let mut z: Vec<Complex64> = match b {
        Some(b) => a.iter().zip(b).map(|(&x, &y)| x + Complex64::new(-y.im, y.re)).collect(),
        None => a.to_vec(),
    };
    p.inverse(&mut z);
    let f: Vec<f64> = z.iter().map(|c| c.re).collect();
    let g = b.map(|_| z.iter().map(|c| c.im).collect());
    (f, g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(n: usize, data: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); data.len()];
        let w = |k: usize, x: usize| {
            let th = -2.0 * std::f64::consts::PI * ((k * x) % n) as f64 / n as f64;
            Complex64::new(th.cos(), th.sin())
        };
        for k1 in 0..n {
            for k2 in 0..n {
                for k3 in 0..n {
                    let mut s = Complex64::default();
                    for x1 in 0..n {
                        for x2 in 0..n {
                            for x3 in 0..n {
                                s += data[(x1 * n + x2) * n + x3] * w(k1, x1) * w(k2, x2) * w(k3, x3);
                            }
                        }
                    }
                    out[(k1 * n + k2) * n + k3] = s / (n * n * n) as f64;
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_dft() {
        let n = 4;
        let data: Vec<Complex64> =
            (0..64).map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 1.3).cos())).collect();
        let mut fast = data.clone();
        plan(n).forward(&mut fast);
        let slow = naive_dft(n, &data);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).norm() < 1e-13);
        }
        plan(n).inverse(&mut fast);
        for (a, b) in fast.iter().zip(&data) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn real_pair_roundtrip() {
        let n = 8;
        let f: Vec<f64> = (0..512).map(|i| (i as f64 * 0.11).sin()).collect();
        let g: Vec<f64> = (0..512).map(|i| (i as f64 * 0.7).cos() + 0.2).collect();
        let (a, b) = forward_real_pair(n, &f, Some(&g));
        let (a1, _) = forward_real_pair(n, &f, None);
        for (x, y) in a.iter().zip(&a1) {
            assert!((x - y).norm() < 1e-14);
        }
        let (f2, g2) = inverse_real_pair(n, &a, b.as_deref());
        let g2 = g2.unwrap();
        for i in 0..512 {
            assert!((f2[i] - f[i]).abs() < 1e-13);
            assert!((g2[i] - g[i]).abs() < 1e-13);
        }
    }
}
