//! Parameter ladder, time partition, straight and squiggling cutoffs, and the energy and
//! helicity gap functions.

use crate::error::{Error, Result};
use crate::quad::gauss_legendre_on;
use crate::smooth::{plateau_jet, ramp, T3};
use crate::torus_field::TWO_PI;
use serde::{Deserialize, Serialize};

/// λ_q = a^(b^q), δ_q = λ₂^{3β} λ_q^{−2β}, ℓ_q = (2λ_q)⁻¹, τ_q = λ_q⁻¹.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    pub a: f64,
    pub b: f64,
    pub beta: f64,
    pub alpha: f64,
    /// Exponent used in the ℓ-powers of the gap regularisers.
    pub gap_alpha: f64,
}

impl Ladder {
    pub fn desk() -> Ladder {
        Ladder { a: 2.0, b: 2.0, beta: 1.0 / 16.0, alpha: 1.0 / 64.0, gap_alpha: 9.0 }
    }
    pub fn lambda(&self, q: i32) -> f64 {
        self.a.powf(self.b.powi(q))
    }
    pub fn delta(&self, q: i32) -> f64 {
        self.lambda(2).powf(3.0 * self.beta) * self.lambda(q).powf(-2.0 * self.beta)
    }
    pub fn ell(&self, q: i32) -> f64 {
        0.5 / self.lambda(q)
    }
    pub fn tau(&self, q: i32) -> f64 {
        1.0 / self.lambda(q)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimePartition {
    pub t_end: f64,
    pub tau: f64,
    pub n_q: usize,
    pub n0: usize,
}

pub fn build_partition(t_end: f64, tau: f64) -> Result<TimePartition> {
    if !(tau > 0.0 && tau < t_end) || tau > 1.0 / 3.0 {
        return Err(Error::BadTau(tau));
    }
    Ok(TimePartition {
        t_end,
        tau,
        n_q: (t_end / tau - 1e-12).ceil() as usize,
        n0: (1.0 / tau + 1e-12).floor() as usize - 2,
    })
}

impl TimePartition {
    pub fn t(&self, l: usize) -> f64 {
        l as f64 * self.tau
    }
    /// I_l = [t_l + τ/3, t_l + 2τ/3].
    pub fn i_interval(&self, l: usize) -> (f64, f64) {
        (self.t(l) + self.tau / 3.0, self.t(l) + 2.0 * self.tau / 3.0)
    }
    /// J_l = (t_l − τ/3, t_l + τ/3).
    pub fn j_interval(&self, l: usize) -> (f64, f64) {
        (self.t(l) - self.tau / 3.0, self.t(l) + self.tau / 3.0)
    }
    pub fn covers(&self, t: f64) -> bool {
        (0..=self.n_q + 1).any(|l| {
            let (a, b) = self.i_interval(l);
            let (c, d) = self.j_interval(l);
            (a..=b).contains(&t) || (t > c && t < d)
        })
    }

    /// χ_l, l = 1..=N_q: weight of the local solution started at t_{l−1}.
    pub fn chi(&self, l: usize, t: f64) -> T3 {
        assert!(l >= 1 && l <= self.n_q);
        let mut v = T3::cst(1.0);
        if l >= 2 {
            let (a, b) = self.i_interval(l - 1);
            v = v * ramp(t, a, b);
        }
        if l < self.n_q {
            let (a, b) = self.i_interval(l);
            v = v * (T3::cst(1.0) - ramp(t, a, b));
        }
        v
    }

    /// max_t |∂_t^N χ_l| τ^N for N = 0..=3 over all l.
    pub fn derivative_constants(&self) -> [f64; 4] {
        let mut out = [0.0; 4];
        let m = 20_000;
        for l in 1..=self.n_q {
            for j in 0..=m {
                let t = self.t_end * j as f64 / m as f64;
                let c = self.chi(l, t);
                for (k, o) in out.iter_mut().enumerate() {
                    *o = f64::max(*o, c.d(k).abs() * self.tau.powi(k as i32));
                }
            }
        }
        out
    }
}

/// Straight cutoffs η̄_l, squiggling cutoffs η̃_l, η₋₁ and ℵ.
#[derive(Clone, Debug)]
pub struct Cutoffs {
    pub part: TimePartition,
    pub eps: f64,
    pub eps0: f64,
    pub tau_prev: f64,
    /// Space-mollifier quadrature: (offset, weight) in x₁.
    kx: Vec<(f64, f64)>,
    /// Gauss-Legendre rule on [0, 1] for the time-kernel CDF tail.
    gl: (Vec<f64>, Vec<f64>),
}

const PLATEAU_MASS: f64 = 1.5;

fn plateau_moment(from: f64, power: i32) -> f64 {
    // ∫_from^1 φ(u) u^power du
    let mut acc = 0.0;
    let edges = [from, from.max(0.5), 1.0];
    for w in edges.windows(2) {
        if w[1] > w[0] {
            let (x, wt) = gauss_legendre_on(32, w[0], w[1]);
            acc += x.iter().zip(&wt).map(|(&u, &c)| c * plateau_jet(T3::cst(u)).v() * u.powi(power)).sum::<f64>();
        }
    }
    acc
}

impl Cutoffs {
    pub fn new(part: TimePartition, eps: f64, eps0: f64, tau_prev: f64) -> Result<Cutoffs> {
        if !(eps > 0.0 && eps < 1.0 / 3.0) || !(eps0 > 0.0 && eps0 <= 0.125) {
            return Err(Error::BadEpsilons(eps, eps0));
        }
        // x₁-marginal of the unit-mass radial kernel: I(|z|/ε₀) / (2 ε₀ m₃)
        let m3 = plateau_moment(0.0, 2);
        let mut kx = Vec::new();
        for p in 0..8 {
            let (a, b) = (-1.0 + p as f64 * 0.25, -1.0 + (p + 1) as f64 * 0.25);
            let (x, w) = gauss_legendre_on(12, a, b);
            for (s, c) in x.into_iter().zip(w) {
                kx.push((s * eps0, c * plateau_moment(s.abs(), 1) / (2.0 * m3)));
            }
        }
        let total: f64 = kx.iter().map(|k| k.1).sum();
        kx.iter_mut().for_each(|k| k.1 /= total);
        Ok(Cutoffs { part, eps, eps0, tau_prev, kx, gl: gauss_legendre_on(24, 0.0, 1.0) })
    }

    pub fn desk(part: TimePartition, tau_prev: f64) -> Result<Cutoffs> {
        Cutoffs::new(part, 0.25, part.tau / 8.0, tau_prev)
    }

    pub fn count(&self) -> usize {
        self.part.n_q
    }

    /// η̄_l(t) = η̄_1(t − t_{l−1}), supp η̄_1 = [7τ/6, 11τ/6].
    pub fn eta_bar(&self, l: usize, t: f64) -> T3 {
        let tau = self.part.tau;
        let s = t - self.part.t(l - 1);
        ramp(s, 7.0 * tau / 6.0, 4.0 * tau / 3.0) * (T3::cst(1.0) - ramp(s, 5.0 * tau / 3.0, 11.0 * tau / 6.0))
    }

    /// CDF of the unit-mass time kernel of radius w, with derivatives in its argument.
    fn time_cdf(&self, s: T3, w: f64) -> T3 {
        let x = s.v();
        if x <= -w {
            return T3::cst(0.0);
        }
        if x >= w {
            return T3::cst(1.0);
        }
        let k = plateau_jet(s.scale(1.0 / w)).scale(1.0 / (PLATEAU_MASS * w));
        let ax = x.abs();
        let mut c = ax.min(0.5 * w) / (PLATEAU_MASS * w);
        if ax > 0.5 * w {
            let len = ax - 0.5 * w;
            let (n, wt) = &self.gl;
            let tail: f64 =
                n.iter().zip(wt).map(|(&u, &q)| q * plateau_jet(T3::cst(0.5 + u * len / w)).v()).sum();
            c += tail * len / (PLATEAU_MASS * w);
        }
        let val = if x >= 0.0 { 0.5 + c } else { 0.5 - c };
        T3([val, k.0[0], k.0[1], k.0[2]])
    }

    /// η̃_l(x₁, t): mollified indicator of the sheared slab over I_l'.
    pub fn eta_tilde(&self, l: usize, x1: f64, t: f64) -> T3 {
        let tau = self.part.tau;
        let a = self.part.t(l) + self.eps * tau / 3.0;
        let b = self.part.t(l) + (3.0 - self.eps) * tau / 3.0;
        let amp = 2.0 * self.eps * tau / 3.0;
        let w = self.eps0 * tau;
        let mut acc = T3::cst(0.0);
        for &(dz, wt) in &self.kx {
            let shear = amp * (TWO_PI * (x1 - dz)).sin();
            let lo = self.time_cdf(T3::var(t).add_const(-a - shear), w);
            let hi = self.time_cdf(T3::var(t).add_const(-b - shear), w);
            acc = acc + (lo - hi).scale(wt);
        }
        acc
    }

    pub fn eta(&self, l: usize, x1: f64, t: f64) -> T3 {
        if l < self.part.n0 {
            self.eta_bar(l, t)
        } else {
            self.eta_tilde(l, x1, t)
        }
    }

    pub fn eta_minus1(&self, t: f64) -> T3 {
        let n0 = self.part.n0;
        T3::cst(1.0) - ramp(t, self.part.t(n0), self.part.t(n0 + 1))
    }

    /// ℵ: 1 before 1 − τ_{q−1}, 0 after 1 − τ_q.
    pub fn aleph(&self, t: f64) -> T3 {
        T3::cst(1.0) - ramp(t, 1.0 - self.tau_prev, 1.0 - self.part.tau)
    }

    /// η_l on the n lattice values of x₁.
    pub fn eta_profile(&self, l: usize, n: usize, t: f64) -> Vec<T3> {
        (0..n).map(|i| self.eta(l, i as f64 / n as f64, t)).collect()
    }

    /// Grid mean of η_l² (η depends on x₁ only).
    pub fn mass(&self, l: usize, n: usize, t: f64) -> T3 {
        let p = self.eta_profile(l, n, t);
        p.iter().fold(T3::cst(0.0), |acc, &e| acc + e * e).scale(1.0 / n as f64)
    }

    /// Indices l with η_l possibly nonzero at t.
    pub fn active(&self, t: f64) -> Vec<usize> {
        let tau = self.part.tau;
        (1..=self.part.n_q).filter(|&l| t > self.part.t(l) - tau / 3.0 && t < self.part.t(l + 1) + tau / 3.0).collect()
    }
}

/// ρ_q = ⅓(e − ∫(|v̄|² + |b̄|²) − E − δ_{q+2}/2).
pub fn rho_q(e: T3, glued_energy: T3, big_e: T3, delta_q2: f64) -> T3 {
    (e - glued_energy - big_e).add_const(-0.5 * delta_q2).scale(1.0 / 3.0)
}

/// h_q = ⅓(h − ∫v̄·b̄ − δ_{q+2}/200).
pub fn h_q(h: T3, cross: T3, delta_q2: f64) -> T3 {
    (h - cross).add_const(-delta_q2 / 200.0).scale(1.0 / 3.0)
}

/// δ ℵ + g (1 − ℵ) / (η₋₁ + mass), shared form of ρ_{q,0} and h_{b,q}.
fn modified_gap(base: f64, aleph: T3, gap: T3, eta_m1: T3, mass: T3, stage: &str) -> Result<T3> {
    let den = eta_m1 + mass;
    if aleph.v() < 1.0 && den.v() <= 0.0 {
        return Err(Error::GapNegative { stage: stage.into(), value: den.v() });
    }
    let tail = if aleph.v() >= 1.0 { T3::cst(0.0) } else { gap * (T3::cst(1.0) - aleph) / den };
    Ok(aleph.scale(base) + tail)
}

/// ρ_{q,0} = δ_{q+1}ℵ + ρ_q(1−ℵ)/(η₋₁ + Σ∫η_l²χ_v).
pub fn rho_q0(delta: f64, aleph: T3, rho: T3, eta_m1: T3, mass: T3) -> Result<T3> {
    modified_gap(delta, aleph, rho, eta_m1, mass, "rho_q0")
}

/// h_{b,q} = (δ_{q+1}/400)ℵ + h_q(1−ℵ)/(η₋₁ + Σ∫η_l²).
pub fn h_bq(delta: f64, aleph: T3, h: T3, eta_m1: T3, mass: T3) -> Result<T3> {
    modified_gap(delta / 400.0, aleph, h, eta_m1, mass, "h_bq")
}

/// Positivity required on [1 − τ_{q−1}, T].
pub fn check_gap(stage: &str, value: f64, t: f64, window_start: f64) -> Result<()> {
    if t >= window_start && value <= 0.0 {
        return Err(Error::GapNegative { stage: stage.into(), value });
    }
    Ok(())
}
