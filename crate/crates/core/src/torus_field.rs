//! Fourier-spectral fields on the unit torus T³ = [0,1]³.
//!
//! Coefficients are stored on the full n³ grid with f(x) = Σ c(m) e^{2πi m·x},
//! m ∈ [−n/2, n/2)³, index (i₁ n + i₂) n + i₃.

use crate::error::{Error, Result};
use crate::fft::{forward_real_pair, inverse_real_pair, neg_index};
use crate::quad::gauss_legendre_on;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::f64::consts::PI;

pub const TWO_PI: f64 = 2.0 * PI;
const MEAN_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n: usize,
    pub dealias_fraction: f64,
}

impl Grid {
    pub fn new(n: usize) -> Result<Grid> {
        Grid::with_dealias(n, 2.0 / 3.0)
    }

    pub fn with_dealias(n: usize, dealias_fraction: f64) -> Result<Grid> {
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::BadGrid(n));
        }
        if !(dealias_fraction > 0.0 && dealias_fraction <= 1.0) {
            return Err(Error::BadGrid(n));
        }
        Ok(Grid { n, dealias_fraction })
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn wavenumber(&self, i: usize) -> i64 {
        if i < self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    #[inline]
    pub fn mode(&self, idx: usize) -> [i64; 3] {
        let n = self.n;
        [self.wavenumber(idx / (n * n)), self.wavenumber((idx / n) % n), self.wavenumber(idx % n)]
    }

    #[inline]
    pub fn index_of(&self, m: [i64; 3]) -> usize {
        let n = self.n as i64;
        let w = |k: i64| k.rem_euclid(n) as usize;
        (w(m[0]) * self.n + w(m[1])) * self.n + w(m[2])
    }

    #[inline]
    pub fn lattice(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        [idx / (n * n), (idx / n) % n, idx % n]
    }

    #[inline]
    pub fn point(&self, idx: usize) -> [f64; 3] {
        let l = self.lattice(idx);
        let h = 1.0 / self.n as f64;
        [l[0] as f64 * h, l[1] as f64 * h, l[2] as f64 * h]
    }

    /// Whether mode m survives the dealiasing truncation.
    #[inline]
    pub fn in_band(&self, m: [i64; 3]) -> bool {
        if self.dealias_fraction >= 1.0 {
            return true;
        }
        let k = self.dealias_fraction * self.n as f64 / 2.0;
        m.iter().all(|&c| (c.abs() as f64) < k)
    }

    /// In-band flag per coefficient index, cached per grid.
    pub fn band_mask(&self) -> Arc<Vec<bool>> {
        static MASKS: OnceLock<Mutex<HashMap<(usize, u64), Arc<Vec<bool>>>>> = OnceLock::new();
        let cache = MASKS.get_or_init(|| Mutex::new(HashMap::new()));
        let mut map = cache.lock().expect("band mask cache poisoned");
        map.entry((self.n, self.dealias_fraction.to_bits()))
            .or_insert_with(|| Arc::new((0..self.len()).map(|i| self.in_band(self.mode(i))).collect()))
            .clone()
    }

    /// Largest retained |m_a|.
    pub fn band_limit(&self) -> i64 {
        (0..=(self.n as i64 / 2)).filter(|&k| self.in_band([k, 0, 0])).max().unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rank {
    Scalar,
    Vector,
    Tensor,
}

impl Rank {
    pub fn ncomp(self) -> usize {
        match self {
            Rank::Scalar => 1,
            Rank::Vector => 3,
            Rank::Tensor => 9,
        }
    }
    pub fn order(self) -> u8 {
        match self {
            Rank::Scalar => 0,
            Rank::Vector => 1,
            Rank::Tensor => 2,
        }
    }
    pub fn from_order(o: u8) -> Result<Rank> {
        match o {
            0 => Ok(Rank::Scalar),
            1 => Ok(Rank::Vector),
            2 => Ok(Rank::Tensor),
            _ => Err(Error::Format(format!("rank {o}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Symmetry {
    None,
    SymTraceFree,
    Antisymmetric,
}

impl Symmetry {
    pub fn tag(self) -> u8 {
        match self {
            Symmetry::None => 0,
            Symmetry::SymTraceFree => 1,
            Symmetry::Antisymmetric => 2,
        }
    }
    pub fn from_tag(t: u8) -> Result<Symmetry> {
        match t {
            0 => Ok(Symmetry::None),
            1 => Ok(Symmetry::SymTraceFree),
            2 => Ok(Symmetry::Antisymmetric),
            _ => Err(Error::Format(format!("symmetry tag {t}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormSpec {
    L1,
    L2,
    Linf,
    Hs { s: f64, homogeneous: bool },
    W1(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub grid: Grid,
    pub rank: Rank,
    pub sym: Symmetry,
    pub comps: Vec<Vec<C64>>,
}

/// Real-space samples, one array per component.
pub type Samples = Vec<Vec<f64>>;

impl Field {
    pub fn zeros(grid: Grid, rank: Rank) -> Field {
        Field { grid, rank, sym: Symmetry::None, comps: vec![vec![C64::default(); grid.len()]; rank.ncomp()] }
    }

    pub fn from_real(grid: Grid, rank: Rank, data: &[Vec<f64>]) -> Result<Field> {
        if data.len() != rank.ncomp() {
            return Err(Error::RankMismatch { expected: rank.ncomp(), got: data.len() });
        }
        let mut comps = Vec::with_capacity(data.len());
        for pair in data.chunks(2) {
            let (a, b) = forward_real_pair(grid.n, &pair[0], pair.get(1).map(|v| v.as_slice()));
            comps.push(a);
            if let Some(b) = b {
                comps.push(b);
            }
        }
        Ok(Field { grid, rank, sym: Symmetry::None, comps })
    }

    /// Forward transform followed by truncation to the dealiasing band.
    pub fn from_real_dealiased(grid: Grid, rank: Rank, data: &[Vec<f64>]) -> Result<Field> {
        Ok(Field::from_real(grid, rank, data)?.truncate())
    }

    pub fn to_real(&self) -> Samples {
        let mut out = Vec::with_capacity(self.comps.len());
        for pair in self.comps.chunks(2) {
            let (f, g) = inverse_real_pair(self.grid.n, &pair[0], pair.get(1).map(|v| v.as_slice()));
            out.push(f);
            if let Some(g) = g {
                out.push(g);
            }
        }
        out
    }

    pub fn scalar_from_fn(grid: Grid, f: impl Fn([f64; 3]) -> f64) -> Field {
        let data: Vec<f64> = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        Field::from_real(grid, Rank::Scalar, &[data]).expect("scalar")
    }

    pub fn vector_from_fn(grid: Grid, f: impl Fn([f64; 3]) -> [f64; 3]) -> Field {
        let mut data = vec![vec![0.0; grid.len()]; 3];
        for i in 0..grid.len() {
            let v = f(grid.point(i));
            for c in 0..3 {
                data[c][i] = v[c];
            }
        }
        Field::from_real(grid, Rank::Vector, &data).expect("vector")
    }

    pub fn tensor_from_fn(grid: Grid, f: impl Fn([f64; 3]) -> [[f64; 3]; 3]) -> Field {
        let mut data = vec![vec![0.0; grid.len()]; 9];
        for i in 0..grid.len() {
            let m = f(grid.point(i));
            for a in 0..3 {
                for b in 0..3 {
                    data[3 * a + b][i] = m[a][b];
                }
            }
        }
        Field::from_real(grid, Rank::Tensor, &data).expect("tensor")
    }

    pub fn ncomp(&self) -> usize {
        self.comps.len()
    }

    pub fn component(&self, c: usize) -> Field {
        Field { grid: self.grid, rank: Rank::Scalar, sym: Symmetry::None, comps: vec![self.comps[c].clone()] }
    }

    pub fn from_components(parts: Vec<Field>) -> Result<Field> {
        let rank = match parts.len() {
            1 => Rank::Scalar,
            3 => Rank::Vector,
            9 => Rank::Tensor,
            k => return Err(Error::RankMismatch { expected: 3, got: k }),
        };
        let grid = parts[0].grid;
        let comps = parts.into_iter().map(|p| p.comps.into_iter().next().expect("component")).collect();
        Ok(Field { grid, rank, sym: Symmetry::None, comps })
    }

    pub fn with_sym(mut self, sym: Symmetry) -> Field {
        self.sym = sym;
        self
    }

    fn check_same(&self, o: &Field) -> Result<()> {
        if self.grid.n != o.grid.n {
            return Err(Error::GridMismatch(self.grid.n, o.grid.n));
        }
        if self.rank != o.rank {
            return Err(Error::RankMismatch { expected: self.ncomp(), got: o.ncomp() });
        }
        Ok(())
    }

    pub fn add(&self, o: &Field) -> Field {
        self.lincomb(1.0, o, 1.0)
    }

    pub fn sub(&self, o: &Field) -> Field {
        self.lincomb(1.0, o, -1.0)
    }

    pub fn scale(&self, s: f64) -> Field {
        let mut r = self.clone();
        r.comps.iter_mut().flatten().for_each(|z| *z *= s);
        r
    }

    /// a·self + b·o; the symmetry tag survives when both tags agree.
    pub fn lincomb(&self, a: f64, o: &Field, b: f64) -> Field {
        self.check_same(o).expect("lincomb operands");
        let comps = self
            .comps
            .iter()
            .zip(&o.comps)
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * a + q * b).collect())
            .collect();
        let sym = if self.sym == o.sym { self.sym } else { Symmetry::None };
        Field { grid: self.grid, rank: self.rank, sym, comps }
    }

    pub fn axpy(&mut self, a: f64, o: &Field) {
        self.check_same(o).expect("axpy operands");
        for (x, y) in self.comps.iter_mut().zip(&o.comps) {
            for (p, q) in x.iter_mut().zip(y) {
                *p += q * a;
            }
        }
        if self.sym != o.sym {
            self.sym = Symmetry::None;
        }
    }

    /// Multiply every component by a mode-dependent factor.
    pub fn multiplier(&self, f: impl Fn([i64; 3]) -> C64) -> Field {
        let g = self.grid;
        let mult: Vec<C64> = (0..g.len()).map(|i| f(g.mode(i))).collect();
        let comps = self.comps.iter().map(|c| c.iter().zip(&mult).map(|(z, m)| z * m).collect()).collect();
        Field { grid: g, rank: self.rank, sym: self.sym, comps }
    }

    pub fn derivative(&self, axis: usize) -> Field {
        let half = self.grid.n as i64 / 2;
        self.multiplier(|m| {
            if m[axis] == -half {
                C64::default()
            } else {
                C64::new(0.0, TWO_PI * m[axis] as f64)
            }
        })
    }

    pub fn laplacian(&self) -> Field {
        self.multiplier(|m| C64::new(-kappa(m), 0.0))
    }

    pub fn remove_mean(&self) -> Field {
        let mut r = self.clone();
        for c in r.comps.iter_mut() {
            c[0] = C64::default();
        }
        r
    }

    pub fn mean(&self) -> Vec<f64> {
        self.comps.iter().map(|c| c[0].re).collect()
    }

    pub fn max_abs_mean(&self) -> f64 {
        self.mean().iter().fold(0.0, |a, b| a.max(b.abs()))
    }

    pub fn truncate(&self) -> Field {
        let mask = self.grid.band_mask();
        let mut r = self.clone();
        for c in r.comps.iter_mut() {
            c.iter_mut().zip(mask.iter()).filter(|(_, &keep)| !keep).for_each(|(z, _)| *z = C64::default());
        }
        r
    }

    /// Zero every mode with a component at −n/2. Sampled non-band-limited fields are
    /// stored this way so that discrete divergence and its right inverses are exact.
    pub fn drop_nyquist(&self) -> Field {
        let g = self.grid;
        let half = g.n as i64 / 2;
        let mut r = self.clone();
        for idx in 0..g.len() {
            if g.mode(idx).iter().any(|&k| k == -half) {
                for c in r.comps.iter_mut() {
                    c[idx] = C64::default();
                }
            }
        }
        r
    }

    pub fn gradient(&self) -> Field {
        assert_eq!(self.rank, Rank::Scalar);
        let parts = (0..3).map(|a| self.derivative(a)).collect();
        Field::from_components(parts).expect("gradient")
    }

    pub fn divergence(&self) -> Field {
        assert_eq!(self.rank, Rank::Vector);
        let mut d = self.component(0).derivative(0);
        d.axpy(1.0, &self.component(1).derivative(1));
        d.axpy(1.0, &self.component(2).derivative(2));
        d
    }

    pub fn curl(&self) -> Field {
        assert_eq!(self.rank, Rank::Vector);
        let c = |i: usize, a: usize| self.component(i).derivative(a);
        let x = c(2, 1).sub(&c(1, 2));
        let y = c(0, 2).sub(&c(2, 0));
        let z = c(1, 0).sub(&c(0, 1));
        Field::from_components(vec![x, y, z]).expect("curl")
    }

    /// ℙ_H = Id − ∇div/Δ; the m = 0 mode passes through.
    pub fn leray_project(&self) -> Field {
        assert_eq!(self.rank, Rank::Vector);
        let g = self.grid;
        let half = g.n as i64 / 2;
        let mut out = self.clone();
        for idx in 1..g.len() {
            let m = g.mode(idx);
            // Nyquist components carry no derivative, so project with the effective wavevector
            let k: [f64; 3] = [0, 1, 2].map(|a| if m[a] == -half { 0.0 } else { m[a] as f64 });
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            if k2 == 0.0 {
                continue;
            }
            let kv = self.comps[0][idx] * k[0] + self.comps[1][idx] * k[1] + self.comps[2][idx] * k[2];
            for a in 0..3 {
                out.comps[a][idx] = self.comps[a][idx] - kv * (k[a] / k2);
            }
        }
        out
    }

    pub fn inverse_laplacian(&self) -> Result<Field> {
        let scale = self.l2_norm().max(1.0);
        let mean = self.max_abs_mean();
        if mean > MEAN_TOL * scale {
            return Err(Error::NonZeroMean(mean));
        }
        Ok(self.multiplier(|m| {
            let k = kappa(m);
            if k == 0.0 {
                C64::default()
            } else {
                C64::new(-1.0 / k, 0.0)
            }
        }))
    }

    pub fn heat(&self, t: f64) -> Result<Field> {
        if t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
        if t == 0.0 {
            return Ok(self.clone());
        }
        Ok(self.multiplier(|m| C64::new((-kappa(m) * t).exp(), 0.0)))
    }

    pub fn mollify(&self, eps: f64) -> Result<Field> {
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::BadEpsilon(eps));
        }
        let table = mollifier_table(self.grid, eps);
        Ok(self.multiplier(|m| C64::new(table[&(m[0] * m[0] + m[1] * m[1] + m[2] * m[2])], 0.0)))
    }

    /// ∫ f·g over T³ (Parseval).
    pub fn inner(&self, o: &Field) -> f64 {
        self.check_same(o).expect("inner operands");
        let mut s = 0.0;
        for (a, b) in self.comps.iter().zip(&o.comps) {
            for (p, q) in a.iter().zip(b) {
                s += p.re * q.re + p.im * q.im;
            }
        }
        s
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// max_m |c(−m) − conj c(m)|, zero for real fields.
    pub fn conj_symmetry_residual(&self) -> f64 {
        let n = self.grid.n;
        let mut r: f64 = 0.0;
        for c in &self.comps {
            for idx in 0..c.len() {
                r = r.max((c[neg_index(idx, n)] - c[idx].conj()).norm());
            }
        }
        r
    }

    pub fn norm(&self, spec: NormSpec) -> Result<f64> {
        match spec {
            NormSpec::L1 | NormSpec::L2 | NormSpec::Linf => Ok(sample_norm(&self.to_real(), spec)),
            NormSpec::Hs { s, homogeneous } => {
                if !s.is_finite() {
                    return Err(Error::UnsupportedSpec(format!("H^{s}")));
                }
                let g = self.grid;
                let mut acc = 0.0;
                for idx in 0..g.len() {
                    let m = g.mode(idx);
                    let k = kappa(m);
                    let w = if homogeneous {
                        if k == 0.0 {
                            continue;
                        }
                        k.powf(s)
                    } else {
                        (1.0 + k).powf(s)
                    };
                    for c in &self.comps {
                        acc += w * c[idx].norm_sqr();
                    }
                }
                Ok(acc.sqrt())
            }
            NormSpec::W1(order) => {
                let mut total = 0.0;
                for a in 0..=order {
                    for b in 0..=(order - a) {
                        for c in 0..=(order - a - b) {
                            let mut d = self.clone();
                            for _ in 0..a {
                                d = d.derivative(0);
                            }
                            for _ in 0..b {
                                d = d.derivative(1);
                            }
                            for _ in 0..c {
                                d = d.derivative(2);
                            }
                            total += sample_norm(&d.to_real(), NormSpec::L1);
                        }
                    }
                }
                Ok(total)
            }
        }
    }
}

/// 2π m with Nyquist components zeroed: the symbol of the spectral gradient.
#[inline]
pub fn xi(m: [i64; 3], n: usize) -> [f64; 3] {
    let half = n as i64 / 2;
    m.map(|k| if k == -half { 0.0 } else { TWO_PI * k as f64 })
}

/// 4π²|m|².
#[inline]
pub fn kappa(m: [i64; 3]) -> f64 {
    4.0 * PI * PI * (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]) as f64
}

/// L^p norm of real samples, pointwise Euclidean magnitude across components.
pub fn sample_norm(data: &[Vec<f64>], spec: NormSpec) -> f64 {
    let len = data[0].len();
    let mag = |i: usize| data.iter().map(|c| c[i] * c[i]).sum::<f64>();
    match spec {
        NormSpec::L1 => (0..len).map(|i| mag(i).sqrt()).sum::<f64>() / len as f64,
        NormSpec::L2 => ((0..len).map(mag).sum::<f64>() / len as f64).sqrt(),
        NormSpec::Linf => (0..len).map(|i| mag(i).sqrt()).fold(0.0, f64::max),
        _ => f64::NAN,
    }
}

/// Fourier multiplier of the unit-mass radial bump of radius eps, keyed by |m|².
fn mollifier_table(grid: Grid, eps: f64) -> HashMap<i64, f64> {
    let (r, w) = gauss_legendre_on(256, 0.0, eps);
    let kern: Vec<f64> = r
        .iter()
        .map(|&x| {
            let s = x / eps;
            if s < 1.0 {
                (-1.0 / (1.0 - s * s)).exp() * x * x
            } else {
                0.0
            }
        })
        .collect();
    let mass: f64 = kern.iter().zip(&w).map(|(k, w)| k * w).sum();
    let half = grid.n as i64 / 2;
    let mut table = HashMap::new();
    for a in 0..=half {
        for b in 0..=a {
            for c in 0..=b {
                let m2 = a * a + b * b + c * c;
                table.entry(m2).or_insert_with(|| {
                    let k = (m2 as f64).sqrt();
                    let val: f64 = r
                        .iter()
                        .zip(&kern)
                        .zip(&w)
                        .map(|((&x, &kv), &wv)| {
                            let arg = TWO_PI * k * x;
                            let sinc = if arg.abs() < 1e-8 { 1.0 - arg * arg / 6.0 } else { arg.sin() / arg };
                            kv * wv * sinc
                        })
                        .sum();
                    val / mass
                });
            }
        }
    }
    table
}
