//! Direction sets Λ_b, Λ_v, Λ_s, the two decomposition lemmas and the χ regularizer.
//!
//! Skew matrices are handled through their axial vector w = (M₂₃, M₃₁, M₁₂);
//! symmetric ones through s = (X₁₁, X₂₂, X₃₃, X₁₂, X₁₃, X₂₃).

use crate::error::{Error, Result};
use crate::quad::{inverse, singular_values, solve};
use crate::smooth::{QuinticHermite, T3};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub type Mat3 = [[f64; 3]; 3];

/// Rational vector num/den.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rational3 {
    pub num: [i64; 3],
    pub den: i64,
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl Rational3 {
    pub const fn new(num: [i64; 3], den: i64) -> Rational3 {
        Rational3 { num, den }
    }

    pub fn to_f64(&self) -> [f64; 3] {
        self.num.map(|x| x as f64 / self.den as f64)
    }

    fn reduced(self) -> Rational3 {
        let g = gcd(gcd(gcd(self.num[0], self.num[1]), self.num[2]), self.den);
        let s = if self.den < 0 { -g } else { g };
        Rational3 { num: self.num.map(|x| x / s), den: self.den / s }
    }

    fn cross(&self, o: &Rational3) -> Rational3 {
        let (a, b) = (self.num, o.num);
        Rational3 {
            num: [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]],
            den: self.den * o.den,
        }
        .reduced()
    }

    fn dot_num(&self, o: &Rational3) -> i64 {
        (0..3).map(|i| self.num[i] * o.num[i]).sum()
    }

    fn neg(self) -> Rational3 {
        Rational3 { num: self.num.map(|x| -x), den: self.den }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionTriple {
    pub k: Rational3,
    pub kbar: Rational3,
    pub kbarbar: Rational3,
}

impl DirectionTriple {
    /// Keeps k and k̄̄, sets k̄ = ±k̄̄ × k with the sign closest to `kbar_hint`.
    fn completed(k: Rational3, kbar_hint: Rational3, kbarbar: Rational3) -> DirectionTriple {
        let c = kbarbar.cross(&k);
        let kbar = if c.dot_num(&kbar_hint) >= 0 { c } else { c.neg() };
        DirectionTriple { k, kbar, kbarbar }
    }

    pub fn k(&self) -> [f64; 3] {
        self.k.to_f64()
    }
    pub fn kbar(&self) -> [f64; 3] {
        self.kbar.to_f64()
    }
    pub fn kbarbar(&self) -> [f64; 3] {
        self.kbarbar.to_f64()
    }

    /// k̄⊗k̄̄ − k̄̄⊗k̄.
    pub fn skew_generator(&self) -> Mat3 {
        let (a, b) = (self.kbar(), self.kbarbar());
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = a[i] * b[j] - b[i] * a[j];
            }
        }
        m
    }

    /// k̄⊗k̄.
    pub fn sym_generator(&self) -> Mat3 {
        let a = self.kbar();
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = a[i] * a[j];
            }
        }
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    B,
    V,
    S,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DirectionSet {
    pub label: Family,
    pub triples: Vec<DirectionTriple>,
    pub epsilon: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Directions {
    pub b: DirectionSet,
    pub v: DirectionSet,
    pub s: DirectionSet,
    pub n_lambda: i64,
}

impl Directions {
    /// All triples in the order Λ_b, Λ_v, Λ_s.
    pub fn all(&self) -> impl Iterator<Item = (Family, &DirectionTriple)> {
        self.b
            .triples
            .iter()
            .map(|t| (Family::B, t))
            .chain(self.v.triples.iter().map(|t| (Family::V, t)))
            .chain(self.s.triples.iter().map(|t| (Family::S, t)))
    }
}

const fn r(x: i64, y: i64, z: i64, d: i64) -> Rational3 {
    Rational3::new([x, y, z], d)
}

/// Printed (k, k̄, k̄̄) rows.
const TABLE_B: [[Rational3; 3]; 5] = [
    [r(1, 0, 0, 1), r(0, 1, 0, 1), r(0, 0, 1, 1)],
    [r(0, 1, 0, 1), r(0, 0, 1, 1), r(1, 0, 0, 1)],
    [r(0, 0, 1, 1), r(1, 0, 0, 1), r(0, 1, 0, 1)],
    [r(0, -4, -3, 5), r(0, -3, -4, 5), r(1, 0, 0, 1)],
    [r(3, 4, 0, 5), r(4, -3, 0, 5), r(0, 0, 1, 1)],
];

const TABLE_V: [[Rational3; 3]; 6] = [
    [r(12, 5, 0, 13), r(5, 0, -12, 13), r(0, 0, 1, 1)],
    [r(12, -5, 0, 13), r(5, 0, 12, 13), r(0, 0, 1, 1)],
    [r(5, 0, 12, 13), r(5, 0, -12, 13), r(0, 1, 0, 1)],
    [r(5, 0, -12, 13), r(5, 0, 12, 13), r(0, 1, 0, 1)],
    [r(0, 12, 5, 13), r(0, 12, -5, 13), r(1, 0, 0, 1)],
    [r(0, 12, -5, 13), r(0, 12, 5, 13), r(1, 0, 0, 1)],
];

const TABLE_S: [[Rational3; 3]; 1] = [[r(9, 40, 0, 41), r(40, -9, 0, 41), r(0, 0, 1, 1)]];

fn lcm(a: i64, b: i64) -> i64 {
    a / gcd(a, b) * b
}

pub fn load_direction_sets() -> Directions {
    let build = |rows: &[[Rational3; 3]]| -> Vec<DirectionTriple> {
        rows.iter().map(|t| DirectionTriple::completed(t[0], t[1], t[2])).collect()
    };
    let tb = build(&TABLE_B);
    let tv = build(&TABLE_V);
    let ts = build(&TABLE_S);
    let n_lambda = tb
        .iter()
        .chain(&tv)
        .chain(&ts)
        .flat_map(|t| [t.k.den, t.kbar.den, t.kbarbar.den])
        .fold(1, lcm);
    let eb = SkewLemma::from_triples(&tb).map(|l| l.eps).unwrap_or(0.0);
    let ev = SymLemma::from_triples(&tv).map(|l| l.eps).unwrap_or(0.0);
    Directions {
        b: DirectionSet { label: Family::B, triples: tb, epsilon: eb },
        v: DirectionSet { label: Family::V, triples: tv, epsilon: ev },
        s: DirectionSet { label: Family::S, triples: ts, epsilon: 0.0 },
        n_lambda,
    }
}

pub fn frobenius(m: &Mat3) -> f64 {
    m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn axial(m: &Mat3) -> [f64; 3] {
    [
        0.5 * (m[1][2] - m[2][1]),
        0.5 * (m[2][0] - m[0][2]),
        0.5 * (m[0][1] - m[1][0]),
    ]
}

fn sym_coords(m: &Mat3) -> [f64; 6] {
    [
        m[0][0],
        m[1][1],
        m[2][2],
        0.5 * (m[0][1] + m[1][0]),
        0.5 * (m[0][2] + m[2][0]),
        0.5 * (m[1][2] + m[2][1]),
    ]
}

/// Minimum-norm c with Σ c_k g_k = 0 and c ≥ lb, by enumerating active sets.
pub fn min_norm_positive_null(gens: &[[f64; 3]], lb: f64) -> Option<Vec<f64>> {
    let m = gens.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let free: Vec<usize> = (0..m).filter(|&i| mask & (1 << i) == 0).collect();
        let mut rhs = [0.0; 3];
        for i in (0..m).filter(|&i| mask & (1 << i) != 0) {
            for a in 0..3 {
                rhs[a] -= lb * gens[i][a];
            }
        }
        let f = free.len();
        let sol: Option<Vec<f64>> = if f == 0 {
            Some(vec![])
        } else if f >= 3 {
            // min-norm: c_f = G_fᵀ (G_f G_fᵀ)⁻¹ rhs
            let mut ggt = vec![0.0; 9];
            for a in 0..3 {
                for b in 0..3 {
                    ggt[a * 3 + b] = free.iter().map(|&i| gens[i][a] * gens[i][b]).sum();
                }
            }
            solve(&ggt, &rhs, 3).map(|y| free.iter().map(|&i| (0..3).map(|a| gens[i][a] * y[a]).sum()).collect())
        } else {
            let mut gtg = vec![0.0; f * f];
            let mut gtr = vec![0.0; f];
            for (p, &i) in free.iter().enumerate() {
                for (q, &j) in free.iter().enumerate() {
                    gtg[p * f + q] = (0..3).map(|a| gens[i][a] * gens[j][a]).sum();
                }
                gtr[p] = (0..3).map(|a| gens[i][a] * rhs[a]).sum();
            }
            solve(&gtg, &gtr, f)
        };
        let Some(sol) = sol else { continue };
        let mut c = vec![lb; m];
        for (p, &i) in free.iter().enumerate() {
            c[i] = sol[p];
        }
        let resid: f64 = (0..3)
            .map(|a| (0..m).map(|i| c[i] * gens[i][a]).sum::<f64>().abs())
            .fold(0.0, f64::max);
        if resid > 1e-12 || c.iter().any(|&x| x < lb - 1e-14) {
            continue;
        }
        let norm: f64 = c.iter().map(|x| x * x).sum();
        if best.as_ref().map_or(true, |(b, _)| norm < *b - 1e-15) {
            best = Some((norm, c));
        }
    }
    best.map(|(_, c)| c)
}

/// a(M) = c⁰ + L w(M) on skew matrices.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SkewLemma {
    pub triples: Vec<DirectionTriple>,
    pub gens: Vec<[f64; 3]>,
    pub c0: Vec<f64>,
    pub l: Vec<[f64; 3]>,
    pub eps: f64,
}

pub const C0_LOWER: f64 = 0.1;

impl SkewLemma {
    pub fn new(set: &DirectionSet) -> Result<SkewLemma> {
        SkewLemma::from_triples(&set.triples)
    }

    fn from_triples(triples: &[DirectionTriple]) -> Result<SkewLemma> {
        let gens: Vec<[f64; 3]> = triples.iter().map(|t| axial(&t.skew_generator())).collect();
        let c0 = min_norm_positive_null(&gens, C0_LOWER).ok_or(Error::SingularBasis)?;
        let mut ggt = vec![0.0; 9];
        for a in 0..3 {
            for b in 0..3 {
                ggt[a * 3 + b] = gens.iter().map(|g| g[a] * g[b]).sum();
            }
        }
        let inv = inverse(&ggt, 3).ok_or(Error::SingularBasis)?;
        let l: Vec<[f64; 3]> = gens
            .iter()
            .map(|g| [0, 1, 2].map(|b| (0..3).map(|a| g[a] * inv[a * 3 + b]).sum()))
            .collect();
        let cmin = c0.iter().cloned().fold(f64::MAX, f64::min);
        // ‖M‖_F = √2 |w|; a_k ≥ cmin/2 as long as |L_k·w| ≤ c0_k − cmin/2
        let eps = c0
            .iter()
            .zip(&l)
            .map(|(c, row)| (c - 0.5 * cmin) / row.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(f64::MAX, f64::min)
            * 2f64.sqrt();
        Ok(SkewLemma { triples: triples.to_vec(), gens, c0, l, eps })
    }

    /// Coefficients for the axial vector w, without the ball check.
    pub fn affine(&self, w: [f64; 3]) -> Vec<f64> {
        self.c0.iter().zip(&self.l).map(|(c, row)| c + row[0] * w[0] + row[1] * w[1] + row[2] * w[2]).collect()
    }

    pub fn coefficients(&self, m: &Mat3) -> Result<Vec<f64>> {
        let norm = frobenius(m);
        if norm > self.eps {
            return Err(Error::OutsideBall { norm, radius: self.eps });
        }
        Ok(self.affine(axial(m)))
    }

    pub fn recompose(&self, a: &[f64]) -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for (c, t) in a.iter().zip(&self.triples) {
            let g = t.skew_generator();
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += c * g[i][j];
                }
            }
        }
        m
    }

    /// Smallest radius, over random directions, at which some coefficient reaches zero.
    pub fn ray_search(&self, dirs: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best = f64::MAX;
        for _ in 0..dirs {
            let d = [0; 3].map(|_| rng.gen_range(-1.0..1.0));
            let n = 2f64.sqrt() * d.iter().map(|x| x * x).sum::<f64>().sqrt();
            for (c, row) in self.c0.iter().zip(&self.l) {
                let slope = (row[0] * d[0] + row[1] * d[1] + row[2] * d[2]) / n;
                if slope < 0.0 {
                    best = best.min(c / -slope);
                }
            }
        }
        best
    }
}

/// γ(R) = B⁻¹ s(R) on symmetric matrices.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SymLemma {
    pub triples: Vec<DirectionTriple>,
    pub binv: Vec<f64>,
    pub center: Vec<f64>,
    pub eps: f64,
    pub condition: f64,
}

impl SymLemma {
    pub fn new(set: &DirectionSet) -> Result<SymLemma> {
        SymLemma::from_triples(&set.triples)
    }

    fn from_triples(triples: &[DirectionTriple]) -> Result<SymLemma> {
        if triples.len() != 6 {
            return Err(Error::SingularBasis);
        }
        let mut b = vec![0.0; 36];
        for (k, t) in triples.iter().enumerate() {
            let s = sym_coords(&t.sym_generator());
            for i in 0..6 {
                b[i * 6 + k] = s[i];
            }
        }
        let binv = inverse(&b, 6).ok_or(Error::SingularBasis)?;
        let sv = singular_values(&b, 6, 6);
        let condition = sv[0] / sv[5];
        let id = sym_coords(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let center: Vec<f64> = (0..6).map(|k| (0..6).map(|i| binv[k * 6 + i] * id[i]).sum()).collect();
        if center.iter().any(|&c| c <= 0.0) {
            return Err(Error::SingularBasis);
        }
        let cmin = center.iter().cloned().fold(f64::MAX, f64::min);
        // dual of the Frobenius norm in s-coordinates
        let eps = (0..6)
            .map(|k| {
                let row = &binv[k * 6..k * 6 + 6];
                let dual = (row[0] * row[0] + row[1] * row[1] + row[2] * row[2]
                    + 0.5 * (row[3] * row[3] + row[4] * row[4] + row[5] * row[5]))
                    .sqrt();
                (center[k] - 0.5 * cmin) / dual
            })
            .fold(f64::MAX, f64::min);
        Ok(SymLemma { triples: triples.to_vec(), binv, center, eps, condition })
    }

    pub fn linear(&self, r: &Mat3) -> Vec<f64> {
        let s = sym_coords(r);
        (0..6).map(|k| (0..6).map(|i| self.binv[k * 6 + i] * s[i]).sum()).collect()
    }

    pub fn coefficients(&self, r: &Mat3) -> Result<Vec<f64>> {
        let mut d = *r;
        for (i, row) in d.iter_mut().enumerate() {
            row[i] -= 1.0;
        }
        let norm = frobenius(&d);
        if norm > self.eps {
            return Err(Error::OutsideBall { norm, radius: self.eps });
        }
        Ok(self.linear(r))
    }

    pub fn recompose(&self, a: &[f64]) -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for (c, t) in a.iter().zip(&self.triples) {
            let g = t.sym_generator();
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += c * g[i][j];
                }
            }
        }
        m
    }

    pub fn ray_search(&self, dirs: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best = f64::MAX;
        for _ in 0..dirs {
            let mut d = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in i..3 {
                    let x: f64 = rng.gen_range(-1.0..1.0);
                    d[i][j] = x;
                    d[j][i] = x;
                }
            }
            let n = frobenius(&d);
            let slope = self.linear(&d);
            for (c, s) in self.center.iter().zip(&slope) {
                if *s < 0.0 {
                    best = best.min(c * n / -s);
                }
            }
        }
        best
    }
}

/// ⟨A⟩ = (1 + |A|²)^{1/2}.
pub fn bracket(a: &Mat3) -> f64 {
    (1.0 + frobenius(a).powi(2)).sqrt()
}

fn chi_bridge() -> QuinticHermite {
    QuinticHermite::new(2.0, 4.0, [1.0, 0.0, 0.0], [4.0, 1.0, 0.0])
}

pub fn chi_regularizer(z: f64) -> Result<f64> {
    if z < 0.0 {
        return Err(Error::NegativeInput(z));
    }
    Ok(chi_jet(T3::cst(z)).v())
}

pub fn chi_jet(z: T3) -> T3 {
    let x = z.v();
    if x <= 2.0 {
        T3::cst(1.0)
    } else if x >= 4.0 {
        z
    } else {
        chi_bridge().eval(z)
    }
}

/// Jet-valued 3×3 matrix, row-major.
pub type JetMat = [T3; 9];

fn jet_frob2(m: &JetMat) -> T3 {
    m.iter().fold(T3::cst(0.0), |acc, &x| acc + x * x)
}

/// χ(⟨A/s⟩) with time derivatives.
pub fn chi_of_bracket(a: &JetMat, s: f64) -> T3 {
    let b = (T3::cst(1.0) + jet_frob2(a).scale(1.0 / (s * s))).sqrt();
    chi_jet(b)
}

/// Amplitudes η (ρ γ_k(M/ρ))^{1/2} for one point; M given as its jet matrix.
pub fn skew_amplitudes(lemma: &SkewLemma, eta: T3, rho: T3, m: &JetMat) -> Result<Vec<T3>> {
    let nk = lemma.c0.len();
    if eta.v() == 0.0 && eta.d(1) == 0.0 {
        return Ok(vec![T3::cst(0.0); nk]);
    }
    if rho.v() <= 0.0 {
        return Err(Error::GapVanishes(rho.v()));
    }
    let norm = jet_frob2(m).v().sqrt() / rho.v();
    if norm > lemma.eps {
        return Err(Error::OutsideBall { norm, radius: lemma.eps });
    }
    let w = [
        (m[5] - m[7]).scale(0.5),
        (m[6] - m[2]).scale(0.5),
        (m[1] - m[3]).scale(0.5),
    ];
    Ok(lemma
        .c0
        .iter()
        .zip(&lemma.l)
        .map(|(c, row)| {
            let g = rho.scale(*c) + w[0].scale(row[0]) + w[1].scale(row[1]) + w[2].scale(row[2]);
            eta * g.sqrt()
        })
        .collect())
}

/// Amplitudes η (ρ γ_k(Id − R/ρ))^{1/2} for one point.
pub fn sym_amplitudes(lemma: &SymLemma, eta: T3, rho: T3, r: &JetMat) -> Result<Vec<T3>> {
    if eta.v() == 0.0 && eta.d(1) == 0.0 {
        return Ok(vec![T3::cst(0.0); 6]);
    }
    if rho.v() <= 0.0 {
        return Err(Error::GapVanishes(rho.v()));
    }
    let norm = jet_frob2(r).v().sqrt() / rho.v();
    if norm > lemma.eps {
        return Err(Error::OutsideBall { norm, radius: lemma.eps });
    }
    // s(ρ Id − R)
    let s = [
        rho - r[0],
        rho - r[4],
        rho - r[8],
        -(r[1] + r[3]).scale(0.5),
        -(r[2] + r[6]).scale(0.5),
        -(r[5] + r[7]).scale(0.5),
    ];
    Ok((0..6)
        .map(|k| {
            let g = (0..6).fold(T3::cst(0.0), |acc, i| acc + s[i].scale(lemma.binv[k * 6 + i]));
            eta * g.sqrt()
        })
        .collect())
}

/// Gridpoint-wise amplitude fields; `at(p)` returns (η, ρ, M) at sample p.
pub fn coefficient_fields_b(
    lemma: &SkewLemma,
    len: usize,
    at: impl Fn(usize) -> (T3, T3, JetMat) + Sync,
) -> Result<Vec<Vec<T3>>> {
    let per: Result<Vec<Vec<T3>>> = (0..len)
        .into_par_iter()
        .map(|p| {
            let (e, r, m) = at(p);
            skew_amplitudes(lemma, e, r, &m)
        })
        .collect();
    Ok(transpose(per?, lemma.c0.len()))
}

pub fn coefficient_fields_v(
    lemma: &SymLemma,
    len: usize,
    at: impl Fn(usize) -> (T3, T3, JetMat) + Sync,
) -> Result<Vec<Vec<T3>>> {
    let per: Result<Vec<Vec<T3>>> = (0..len)
        .into_par_iter()
        .map(|p| {
            let (e, r, m) = at(p);
            sym_amplitudes(lemma, e, r, &m)
        })
        .collect();
    Ok(transpose(per?, 6))
}

fn transpose(per: Vec<Vec<T3>>, nk: usize) -> Vec<Vec<T3>> {
    (0..nk).map(|k| per.iter().map(|v| v[k]).collect()).collect()
}
