//! Intermittent box flows: the 1-D profile, its stretched periodisation, the three-factor
//! box flow along (k, k̄, k̄̄) with a traveling middle factor, the fast oscillation ψ_k with
//! its vector potentials, and disjoint shifts.
//!
//! Flows are evaluated at grid nodes in integer phase arithmetic: with K the numerator of a
//! direction and c = N_Λ/den, the phase of grid point i is c (K·i) mod n.

use crate::error::{Error, Result};
use crate::geometry::{DirectionTriple, Directions, Family};
use crate::quad::{gauss_legendre_on, solve};
use crate::smooth::T3;
use crate::torus_field::{Field, Grid, Rank, TWO_PI};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

/// Support of the base profile Φ.
pub const PROFILE_WIDTH: f64 = 0.125;
const MAX_CANDIDATES: usize = 100_000;
const MSQ_FLOOR: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resolution {
    /// Require the grid to resolve every oscillation.
    Strict,
    /// Exact formulas at grid nodes, aliasing accepted.
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub lambda: i64,
    pub sigma: i64,
    pub mu: i64,
    pub r_inv: i64,
    pub rbar_inv: i64,
    pub rbarbar_inv: i64,
    pub n_lambda: i64,
    pub resolution: Resolution,
    pub seed: u64,
}

impl FlowParams {
    pub fn desk(n_lambda: i64) -> FlowParams {
        FlowParams {
            lambda: 16,
            sigma: 1,
            mu: 1,
            r_inv: 1,
            rbar_inv: 1,
            rbarbar_inv: 1,
            n_lambda,
            resolution: Resolution::Sampled,
            seed: 0x5eed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for v in [self.lambda, self.sigma, self.mu, self.r_inv, self.rbar_inv, self.rbarbar_inv, self.n_lambda] {
            if v < 1 {
                return Err(Error::NotInteger(v as f64));
            }
        }
        Ok(())
    }

    /// Temporal frequency σ N_Λ μ of the traveling factor.
    pub fn travel_rate(&self) -> i64 {
        self.sigma * self.n_lambda * self.mu
    }

    /// Largest spatial frequency of any factor along an axis, for strict resolution checks.
    pub fn max_frequency(&self) -> f64 {
        let r = self.r_inv.max(self.rbar_inv * self.sigma).max(self.rbarbar_inv);
        (self.n_lambda * r).max(self.lambda * self.n_lambda) as f64
    }
}

fn phi_ss(s: T3) -> T3 {
    // Φ = exp(−1/q), q = s(1−s); Φ'' = Φ (q'²/q⁴ − 2q'²/q³ + q''/q²)
    let q = s * (T3::cst(1.0) - s);
    if q.v() < 1e-3 {
        return T3::cst(0.0);
    }
    let qp = T3::cst(1.0) - s.scale(2.0);
    let iq = q.recip();
    let iq2 = iq * iq;
    let big = (-iq).exp();
    let qp2 = qp * qp;
    big * (qp2 * iq2 * iq2 - (qp2 * iq2 * iq).scale(2.0) - iq2.scale(2.0))
}

/// Φ(z) = exp(−1/(s(1−s))) with s = z/w on (0, w).
pub fn base_bump(z: f64) -> f64 {
    let s = z / PROFILE_WIDTH;
    if s <= 0.0 || s >= 1.0 {
        return 0.0;
    }
    (-1.0 / (s * (1.0 - s))).exp()
}

/// φ = Φ'' (unnormalised), with derivatives in z.
pub fn base_profile(z: T3) -> T3 {
    let s = z.scale(1.0 / PROFILE_WIDTH);
    if s.v() <= 0.0 || s.v() >= 1.0 {
        return T3::cst(0.0);
    }
    phi_ss(s).scale(1.0 / (PROFILE_WIDTH * PROFILE_WIDTH))
}

fn profile_norm() -> f64 {
    static NORM: OnceLock<f64> = OnceLock::new();
    *NORM.get_or_init(|| {
        let panels = 256;
        let h = PROFILE_WIDTH / panels as f64;
        let mut acc = 0.0;
        for p in 0..panels {
            let (x, w) = gauss_legendre_on(16, p as f64 * h, (p + 1) as f64 * h);
            acc += x.iter().zip(&w).map(|(&z, &wt)| wt * base_profile(T3::cst(z)).v().powi(2)).sum::<f64>();
        }
        1.0 / acc.sqrt()
    })
}

/// r^{-1/2} φ(y/r) periodised with period 1, normalised to ∫₀¹ g_r² = 1.
pub fn stretched(y: T3, r_inv: i64) -> T3 {
    let f = y.add_const(-y.v().floor());
    let z = f.scale(r_inv as f64);
    if z.v() >= PROFILE_WIDTH {
        return T3::cst(0.0);
    }
    base_profile(z).scale((r_inv as f64).sqrt() * profile_norm())
}

/// Fraction of the period on which g_r is nonzero, counted on `samples` uniform points.
pub fn support_fraction(r_inv: i64, samples: usize) -> f64 {
    let top = ((samples as f64) * PROFILE_WIDTH / r_inv as f64).ceil() as usize + 1;
    let hits = (0..top.min(samples)).filter(|&j| stretched(T3::cst(j as f64 / samples as f64), r_inv).v() != 0.0).count();
    hits as f64 / samples as f64
}

/// L^p norm of g_r on [0,1) from uniform samples (p = ∞ allowed).
pub fn lp_norm_1d(r_inv: i64, p: f64, samples: usize) -> f64 {
    let top = (((samples as f64) * PROFILE_WIDTH / r_inv as f64).ceil() as usize + 1).min(samples);
    let vals = (0..top).map(|j| stretched(T3::cst(j as f64 / samples as f64), r_inv).v().abs());
    if p.is_infinite() {
        vals.fold(0.0, f64::max)
    } else {
        (vals.map(|v| v.powf(p)).sum::<f64>() / samples as f64).powf(1.0 / p)
    }
}

/// Profile ĝ_r = g_r / M(n y)^{1/2}, where M(θ) is the mean of g_r² over the shifted lattice
/// (u + θ)/n. Every lattice mean of ĝ_r² is 1 and so is its integral over a period.
#[derive(Clone, Debug)]
pub struct GridProfile {
    pub n: usize,
    pub r_inv: i64,
    cells: Vec<f64>,
    prefix: Vec<f64>,
    first_moment: f64,
}

const SUB: usize = 8;
const NODES: usize = 24;

impl GridProfile {
    pub fn new(n: usize, r_inv: i64) -> Result<GridProfile> {
        let mut p = GridProfile { n, r_inv, cells: vec![], prefix: vec![], first_moment: 0.0 };
        let worst = (0..256).map(|j| p.msq(T3::cst(j as f64 / 256.0)).v()).fold(f64::MAX, f64::min);
        if worst < MSQ_FLOOR {
            return Err(Error::UnderResolved { nyquist: n as f64 / 2.0, freq: n as f64 * r_inv as f64 / 8.0 });
        }
        let width_cells = p.support_cells();
        let mut cells = vec![0.0; n];
        let mut moment = 0.0;
        for (u, cell) in cells.iter_mut().enumerate().take(width_cells) {
            let (x, w) = p.cell_rule(u as f64 / n as f64, (u + 1) as f64 / n as f64);
            for (&y, &wt) in x.iter().zip(&w) {
                let g2 = p.eval(T3::cst(y)).v().powi(2);
                *cell += wt * g2;
                moment += wt * y * g2;
            }
        }
        let mut prefix = vec![0.0; n + 1];
        for u in 0..n {
            prefix[u + 1] = prefix[u] + cells[u];
        }
        p.cells = cells;
        p.prefix = prefix;
        p.first_moment = moment;
        Ok(p)
    }

    fn support_cells(&self) -> usize {
        ((self.n as f64 * PROFILE_WIDTH / self.r_inv as f64).ceil() as usize).min(self.n)
    }

    fn cell_rule(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let h = (b - a) / SUB as f64;
        let mut xs = Vec::with_capacity(SUB * NODES);
        let mut ws = Vec::with_capacity(SUB * NODES);
        for s in 0..SUB {
            let (x, w) = gauss_legendre_on(NODES, a + s as f64 * h, a + (s + 1) as f64 * h);
            xs.extend(x);
            ws.extend(w);
        }
        (xs, ws)
    }

    pub fn raw(&self, y: T3) -> T3 {
        stretched(y, self.r_inv)
    }

    /// M(θ) = n⁻¹ Σ_u g_r((u + θ)/n)².
    pub fn msq(&self, theta: T3) -> T3 {
        let th = theta.add_const(-theta.v().floor());
        let inv = 1.0 / self.n as f64;
        let mut acc = T3::cst(0.0);
        for u in 0..=self.support_cells().min(self.n - 1) {
            let g = self.raw(th.add_const(u as f64).scale(inv));
            acc = acc + g * g;
        }
        acc.scale(inv)
    }

    pub fn eval(&self, y: T3) -> T3 {
        let g = self.raw(y);
        if g.0 == [0.0; 4] {
            return g;
        }
        g / self.msq(y.scale(self.n as f64)).sqrt()
    }

    /// Total ∫₀¹ ĝ², equal to 1 up to quadrature error.
    pub fn total_mass(&self) -> f64 {
        self.prefix[self.n]
    }

    /// A(y) = ∫₀^y (ĝ² − 1), 1-periodic.
    pub fn antiderivative(&self, y: f64) -> f64 {
        let f = y - y.floor();
        let pos = f * self.n as f64;
        let u = (pos.floor() as usize).min(self.n - 1);
        let a = u as f64 / self.n as f64;
        let mut acc = self.prefix[u];
        if u < self.support_cells() && f > a {
            let (x, w) = self.cell_rule(a, f);
            acc += x.iter().zip(&w).map(|(&z, &wt)| wt * self.eval(T3::cst(z)).v().powi(2)).sum::<f64>();
        }
        acc - f
    }

    /// Fourier coefficients b_j of A with |b_j| above `tol`, as (j, b_j).
    pub fn harmonics(&self, tol: f64) -> Vec<(i64, C64)> {
        let len = 8192;
        let mut buf: Vec<C64> = (0..len).map(|j| C64::new(self.eval(T3::cst(j as f64 / len as f64)).v().powi(2), 0.0)).collect();
        FftPlanner::new().plan_fft_forward(len).process(&mut buf);
        let mut out = vec![(0, C64::new(0.5 - self.first_moment, 0.0))];
        for (j, c) in buf.iter().enumerate().skip(1) {
            let m = if j < len / 2 { j as i64 } else { j as i64 - len as i64 };
            if 2 * m.abs() >= len as i64 {
                continue;
            }
            let b = c / (len as f64) / C64::new(0.0, TWO_PI * m as f64);
            if b.norm() > tol {
                out.push((m, b));
            }
        }
        out.sort_by_key(|&(j, _)| j);
        out
    }
}

/// One box flow φ_k(x−x_k) φ_k̄(x−x_k, t) φ_k̄̄(x−x_k) with its oscillation ψ_k.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoxFlow {
    pub family: Family,
    pub triple: DirectionTriple,
    /// Numerators K, K̄, K̄̄.
    pub ints: [[i64; 3]; 3],
    /// Phase multipliers N/den (σ N/den for the traveling factor).
    pub mult: [i64; 3],
    /// Shift of each factor in lattice phase units.
    pub shift: [f64; 3],
    /// λ N/den for ψ_k.
    pub psi_mult: i64,
}

/// Per-time lookup tables indexed by lattice phase.
#[derive(Clone, Debug)]
pub struct FactorTables {
    pub k: Vec<f64>,
    pub kb: Vec<T3>,
    pub kbb: Vec<f64>,
    /// ∂_t⁻¹ P_{>0} φ_k̄², with time derivatives.
    pub anti: Vec<T3>,
}

impl FactorTables {
    pub fn at(&self, ph: [usize; 3]) -> (f64, T3, f64) {
        (self.k[ph[0]], self.kb[ph[1]], self.kbb[ph[2]])
    }

    /// Box-flow value with its time derivatives.
    pub fn phi(&self, ph: [usize; 3]) -> T3 {
        self.kb[ph[1]].scale(self.k[ph[0]] * self.kbb[ph[2]])
    }
}

fn dot_i(a: [i64; 3], b: [usize; 3]) -> i64 {
    a[0] * b[0] as i64 + a[1] * b[1] as i64 + a[2] * b[2] as i64
}

/// Offset so the samples sit symmetrically about the bump centre.
fn centred_offset(width_cells: f64) -> f64 {
    let f = if width_cells >= 1.5 { 0.5 * width_cells + 0.5 } else { 0.5 * width_cells };
    -(f - f.floor())
}

impl BoxFlow {
    fn new(family: Family, t: DirectionTriple, p: &FlowParams) -> Result<BoxFlow> {
        let n = p.n_lambda;
        for q in [t.k, t.kbar, t.kbarbar] {
            if n % q.den != 0 {
                return Err(Error::NonIntegerWavevector);
            }
        }
        Ok(BoxFlow {
            family,
            triple: t,
            ints: [t.k.num, t.kbar.num, t.kbarbar.num],
            mult: [n / t.k.den, p.sigma * n / t.kbar.den, n / t.kbarbar.den],
            shift: [0.0; 3],
            psi_mult: p.lambda * n / t.k.den,
        })
    }

    pub fn phases(&self, n: usize, lat: [usize; 3]) -> [usize; 3] {
        [0, 1, 2].map(|a| (self.mult[a] * dot_i(self.ints[a], lat)).rem_euclid(n as i64) as usize)
    }

    /// ψ_k = √2 sin(2π λ N k·x) at a lattice point.
    pub fn psi_at(&self, n: usize, lat: [usize; 3]) -> f64 {
        let p = (self.psi_mult * dot_i(self.ints[0], lat)).rem_euclid(n as i64);
        2f64.sqrt() * (TWO_PI * p as f64 / n as f64).sin()
    }

    /// Grid wavevector that ψ_k aliases to.
    pub fn psi_mode(&self, n: usize) -> [i64; 3] {
        let n = n as i64;
        self.ints[0].map(|k| {
            let m = (self.psi_mult * k).rem_euclid(n);
            if m >= n / 2 { m - n } else { m }
        })
    }

    pub fn tables(&self, prof: &[GridProfile; 3], p: &FlowParams, t: f64) -> FactorTables {
        self.tables_at(prof, p, (p.travel_rate() as f64 * t).fract())
    }

    /// Tables with the traveling phase σN_Λμ t (mod 1) given directly as `drift`.
    pub fn tables_at(&self, prof: &[GridProfile; 3], p: &FlowParams, drift: f64) -> FactorTables {
        let n = prof[0].n;
        let inv = 1.0 / n as f64;
        let stat = |a: usize| -> Vec<f64> {
            (0..n).map(|u| prof[a].eval(T3::cst((u as f64 - self.shift[a]) * inv)).v()).collect()
        };
        let rate = p.travel_rate() as f64;
        let mut kb = Vec::with_capacity(n);
        let mut anti = Vec::with_capacity(n);
        let sm = (p.sigma * p.mu) as f64;
        for u in 0..n {
            let y = (u as f64 - self.shift[1]) * inv + drift;
            let g = prof[1].eval(T3([y, rate, 0.0, 0.0]));
            kb.push(g);
            let d = (g * g).add_const(-1.0).scale(sm);
            anti.push(T3([prof[1].antiderivative(y) / p.n_lambda as f64, d.0[0], d.0[1], d.0[2]]));
        }
        FactorTables { k: stat(0), kb, kbb: stat(2), anti }
    }

    /// Physical shift x_k solving mult_a K_a·x = s_a/n.
    pub fn shift_vector(&self, n: usize) -> [f64; 3] {
        let mut m = vec![0.0; 9];
        for a in 0..3 {
            for b in 0..3 {
                m[3 * a + b] = (self.mult[a] * self.ints[a][b]) as f64;
            }
        }
        let rhs = self.shift.map(|s| s / n as f64);
        let x = solve(&m, &rhs, 3).unwrap_or(vec![0.0; 3]);
        [0, 1, 2].map(|i| x[i] - x[i].floor())
    }
}

/// Greedy disjoint placement: `support(flow, candidate)` returns the support of `flow`
/// under candidate shift number `candidate`, or None if that candidate is unusable.
pub fn greedy_place(
    len: usize,
    flows: usize,
    max_candidates: usize,
    support: impl Fn(usize, usize) -> Option<Vec<usize>>,
) -> Result<Vec<usize>> {
    let mut taken = vec![false; len];
    let mut chosen = Vec::with_capacity(flows);
    let mut tried = 0;
    for f in 0..flows {
        let mut placed = false;
        for cand in 0.. {
            if tried >= max_candidates {
                return Err(Error::PlacementFailed(tried));
            }
            tried += 1;
            let Some(s) = support(f, cand) else { continue };
            if s.is_empty() || s.iter().any(|&p| taken[p]) {
                continue;
            }
            s.iter().for_each(|&p| taken[p] = true);
            chosen.push(cand);
            placed = true;
            break;
        }
        debug_assert!(placed);
    }
    Ok(chosen)
}

#[derive(Clone, Debug)]
pub struct BoxFlowFamily {
    pub grid: Grid,
    pub params: FlowParams,
    /// Profiles for the k, k̄, k̄̄ factors.
    pub profiles: [GridProfile; 3],
    pub flows: Vec<BoxFlow>,
    /// Lattice phase → grid index, when the phase map is a bijection.
    inverse: Vec<Option<Vec<u32>>>,
}

fn phase_inverse(grid: Grid, flow: &BoxFlow) -> Option<Vec<u32>> {
    let n = grid.n;
    let mut inv = vec![u32::MAX; grid.len()];
    for idx in 0..grid.len() {
        let ph = flow.phases(n, grid.lattice(idx));
        let slot = &mut inv[(ph[0] * n + ph[1]) * n + ph[2]];
        if *slot != u32::MAX {
            return None;
        }
        *slot = idx as u32;
    }
    Some(inv)
}

impl BoxFlowFamily {
    pub fn build(grid: Grid, dirs: &Directions, params: &FlowParams) -> Result<BoxFlowFamily> {
        params.validate()?;
        if params.resolution == Resolution::Strict {
            let nyq = grid.n as f64 / 2.0;
            let freq = params.max_frequency();
            if freq > nyq {
                return Err(Error::UnderResolved { nyquist: nyq, freq });
            }
        }
        let n = grid.n;
        let profiles = [
            GridProfile::new(n, params.r_inv)?,
            GridProfile::new(n, params.rbar_inv)?,
            GridProfile::new(n, params.rbarbar_inv)?,
        ];
        let mut flows = dirs.all().map(|(f, t)| BoxFlow::new(f, *t, params)).collect::<Result<Vec<_>>>()?;
        let offs = [params.r_inv, params.rbar_inv, params.rbarbar_inv]
            .map(|r| centred_offset(n as f64 * PROFILE_WIDTH / r as f64));
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let cands: Vec<[f64; 3]> = (0..MAX_CANDIDATES)
            .map(|c| if c == 0 { offs } else { [0, 1, 2].map(|a| rng.gen_range(0..n) as f64 + offs[a]) })
            .collect();
        let inverse = flows.iter().map(|f| phase_inverse(grid, f)).collect();
        let fam = BoxFlowFamily { grid, params: params.clone(), profiles, flows: flows.clone(), inverse };
        let chosen = greedy_place(grid.len(), flows.len(), MAX_CANDIDATES, |f, c| {
            Some(fam.support_with(f, *cands.get(c)?, 0.0))
        })?;
        for (flow, c) in flows.iter_mut().zip(chosen) {
            flow.shift = cands[c];
        }
        Ok(BoxFlowFamily { flows, ..fam })
    }

    pub fn of(&self, family: Family) -> impl Iterator<Item = &BoxFlow> {
        self.flows.iter().filter(move |f| f.family == family)
    }

    pub fn tables(&self, flow: &BoxFlow, t: f64) -> FactorTables {
        flow.tables(&self.profiles, &self.params, t)
    }

    pub fn tables_at(&self, flow: &BoxFlow, drift: f64) -> FactorTables {
        flow.tables_at(&self.profiles, &self.params, drift)
    }

    /// Grid indices where flow `fi` is nonzero at time t, in increasing order.
    pub fn support(&self, fi: usize, t: f64) -> Vec<usize> {
        self.support_with(fi, self.flows[fi].shift, t)
    }

    fn support_with(&self, fi: usize, shift: [f64; 3], t: f64) -> Vec<usize> {
        let n = self.grid.n;
        let flow = &self.flows[fi];
        let drift = [0.0, (self.params.travel_rate() as f64 * t).fract(), 0.0];
        let masks: [Vec<bool>; 3] = [0, 1, 2].map(|a| {
            (0..n)
                .map(|u| self.profiles[a].raw(T3::cst((u as f64 - shift[a]) / n as f64 + drift[a])).v() != 0.0)
                .collect()
        });
        let mut out = match &self.inverse[fi] {
            Some(inv) => {
                let on: [Vec<usize>; 3] = [0, 1, 2].map(|a| (0..n).filter(|&u| masks[a][u]).collect());
                let mut v = Vec::with_capacity(on[0].len() * on[1].len() * on[2].len());
                for &a in &on[0] {
                    for &b in &on[1] {
                        for &c in &on[2] {
                            v.push(inv[(a * n + b) * n + c] as usize);
                        }
                    }
                }
                v
            }
            None => (0..self.grid.len())
                .filter(|&idx| {
                    let ph = flow.phases(n, self.grid.lattice(idx));
                    masks[0][ph[0]] && masks[1][ph[1]] && masks[2][ph[2]]
                })
                .collect(),
        };
        out.sort_unstable();
        out
    }

    /// φ_{k,k̄,k̄̄} samples and their time derivative.
    pub fn samples(&self, flow: &BoxFlow, t: f64) -> (Vec<f64>, Vec<f64>) {
        let tab = self.tables(flow, t);
        let n = self.grid.n;
        (0..self.grid.len())
            .map(|idx| {
                let j = tab.phi(flow.phases(n, self.grid.lattice(idx)));
                (j.v(), j.d(1))
            })
            .unzip()
    }

    pub fn psi_samples(&self, flow: &BoxFlow) -> Vec<f64> {
        (0..self.grid.len()).map(|idx| flow.psi_at(self.grid.n, self.grid.lattice(idx))).collect()
    }

    pub fn psi(&self, flow: &BoxFlow) -> Field {
        Field::from_real(self.grid, Rank::Scalar, &[self.psi_samples(flow)]).expect("scalar")
    }

    /// (F_k̄, F_k̄̄) with curl F/λ = P_H(ψ_k k̄) and P_H(ψ_k k̄̄).
    pub fn potentials(&self, flow: &BoxFlow) -> Result<(Field, Field)> {
        let psi = self.psi(flow);
        let lam = self.params.lambda as f64;
        let pot = |dir: [f64; 3]| -> Result<Field> {
            let v = Field::from_components(dir.iter().map(|&d| psi.scale(d)).collect())?;
            Ok(v.inverse_laplacian()?.curl().scale(-lam))
        };
        Ok((pot(flow.triple.kbar())?, pot(flow.triple.kbarbar())?))
    }

    /// Number of grid points covered by two or more supports at time t.
    pub fn overlap_count(&self, t: f64) -> usize {
        let mut count = vec![0u8; self.grid.len()];
        for fi in 0..self.flows.len() {
            for p in self.support(fi, t) {
                count[p] = count[p].saturating_add(1);
            }
        }
        count.iter().filter(|&&c| c > 1).count()
    }
}

/// Least-squares slope of log y against log x.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() < 2 || x.len() != y.len() {
        return Err(Error::TooFewSamples(x.len()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Concentration scales (r⁻¹, r̄⁻¹, r̄̄⁻¹) at the asymptotic scaling, rounded to integers.
pub fn asymptotic_scales(lambda: f64) -> [i64; 3] {
    let r = lambda.powf(14.0 / 16.0).round() as i64;
    [r, r, lambda.powf(5.0 / 16.0).round().max(1.0) as i64]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub theory: f64,
    pub lambdas: Vec<f64>,
    pub values: Vec<f64>,
}

const SCALING_SAMPLES: usize = 1 << 22;

/// Fitted exponent of ‖φ_{k,k̄,k̄̄}‖_{L^p} against λ from separable 1-D factors.
pub fn lp_norm_report(lambdas: &[f64], p: f64) -> Result<ScalingFit> {
    if lambdas.len() < 4 {
        return Err(Error::TooFewSamples(lambdas.len()));
    }
    let values: Vec<f64> = lambdas
        .iter()
        .map(|&l| {
            asymptotic_scales(l)
                .iter()
                .map(|&r| lp_norm_1d(r, p, SCALING_SAMPLES) / lp_norm_1d(r, 2.0, SCALING_SAMPLES))
                .product()
        })
        .collect();
    let q = if p.is_infinite() { 0.0 } else { 1.0 / p };
    Ok(ScalingFit {
        slope: fit_slope(lambdas, &values)?,
        theory: 14.0 / 16.0 * (1.0 - 2.0 * q) + 5.0 / 16.0 * (0.5 - q),
        lambdas: lambdas.to_vec(),
        values,
    })
}

/// Fitted exponent of the support measure of φ_{k,k̄,k̄̄} against λ.
pub fn support_report(lambdas: &[f64]) -> Result<ScalingFit> {
    if lambdas.len() < 4 {
        return Err(Error::TooFewSamples(lambdas.len()));
    }
    let values: Vec<f64> = lambdas
        .iter()
        .map(|&l| asymptotic_scales(l).iter().map(|&r| support_fraction(r, SCALING_SAMPLES)).product())
        .collect();
    Ok(ScalingFit { slope: fit_slope(lambdas, &values)?, theory: -33.0 / 16.0, lambdas: lambdas.to_vec(), values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::load_direction_sets;
    use crate::torus_field::NormSpec;

    fn desk() -> BoxFlowFamily {
        let d = load_direction_sets();
        BoxFlowFamily::build(Grid::new(64).unwrap(), &d, &FlowParams::desk(d.n_lambda)).unwrap()
    }

    #[test]
    fn base_profile_support_and_mean() {
        let m = 1 << 14;
        let vals: Vec<f64> = (0..m).map(|j| base_profile(T3::cst(j as f64 / m as f64)).v()).collect();
        let mean: f64 = vals.iter().sum::<f64>() / m as f64;
        let peak = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(mean.abs() < 1e-12 * peak);
        assert!(vals.iter().enumerate().all(|(j, v)| *v == 0.0 || (j as f64 / m as f64) < PROFILE_WIDTH));
    }

    #[test]
    fn second_derivative_matches_spectral() {
        let m = 4096;
        let mut buf: Vec<C64> = (0..m).map(|j| C64::new(base_bump(j as f64 / m as f64), 0.0)).collect();
        let mut pl = FftPlanner::new();
        pl.plan_fft_forward(m).process(&mut buf);
        for (j, c) in buf.iter_mut().enumerate() {
            let k = if j < m / 2 { j as f64 } else { j as f64 - m as f64 };
            *c *= -(TWO_PI * k).powi(2) / m as f64;
        }
        pl.plan_fft_inverse(m).process(&mut buf);
        let err = (0..m)
            .map(|j| (buf[j].re - base_profile(T3::cst(j as f64 / m as f64)).v()).abs())
            .fold(0.0, f64::max);
        let scale = (0..m).map(|j| base_profile(T3::cst(j as f64 / m as f64)).v().abs()).fold(0.0, f64::max);
        assert!(err < 1e-8 * scale, "{err} {scale}");
    }

    #[test]
    fn stretched_support_scales_with_r() {
        let f: Vec<f64> = [4, 8, 16].iter().map(|&r| support_fraction(r, 1 << 16)).collect();
        assert!((f[0] / f[1] - 2.0).abs() < 0.05 && (f[1] / f[2] - 2.0).abs() < 0.05);
        for r in [1, 4] {
            assert!((lp_norm_1d(r, 2.0, 1 << 16) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn grid_profile_lattice_means_are_one() {
        let p = GridProfile::new(64, 1).unwrap();
        assert!((p.total_mass() - 1.0).abs() < 1e-12);
        for j in 0..17 {
            let th = j as f64 / 16.0 + 0.013;
            let m: f64 = (0..64).map(|u| p.eval(T3::cst((u as f64 + th) / 64.0)).v().powi(2)).sum::<f64>() / 64.0;
            assert!((m - 1.0).abs() < 1e-13, "{th}: {m}");
        }
        assert!(p.antiderivative(0.0).abs() < 1e-15);
        assert!(p.antiderivative(0.999999).abs() < 1e-5);
        for y in [0.02, 0.05, 0.3] {
            let h = 1e-6;
            let fd = (p.antiderivative(y + h) - p.antiderivative(y - h)) / (2.0 * h);
            assert!((fd - (p.eval(T3::cst(y)).v().powi(2) - 1.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn harmonics_resum_antiderivative() {
        let p = GridProfile::new(64, 1).unwrap();
        let h = p.harmonics(1e-16);
        for y in [0.0, 0.031, 0.0625, 0.11, 0.5] {
            let s: f64 = h.iter().map(|(j, b)| (b * C64::from_polar(1.0, TWO_PI * *j as f64 * y)).re).sum();
            assert!((s - p.antiderivative(y)).abs() < 1e-12, "{y}");
        }
    }

    #[test]
    fn too_fine_profile_is_underresolved() {
        assert!(matches!(GridProfile::new(64, 16), Err(Error::UnderResolved { .. })));
    }

    #[test]
    fn desk_family_norms_and_disjointness() {
        let fam = desk();
        assert_eq!(fam.flows.len(), 12);
        for f in &fam.flows {
            let (phi, _) = fam.samples(f, 0.0);
            let l2 = crate::torus_field::sample_norm(&[phi.clone()], NormSpec::L2);
            assert!((l2 - 1.0).abs() < 1e-12);
            let psi = fam.psi_samples(f);
            let l2p = crate::torus_field::sample_norm(&[psi.clone()], NormSpec::L2);
            assert!((l2p - 1.0).abs() < 1e-14);
            let mix: f64 = phi.iter().zip(&psi).map(|(a, b)| (a * b).powi(2)).sum::<f64>() / phi.len() as f64;
            assert!((mix - 1.0).abs() < 1e-12);
            let m = f.psi_mode(64);
            assert_eq!(m.iter().filter(|c| **c != 0).count(), 1);
            assert_eq!(m.iter().map(|c| c.abs()).max(), Some(16));
        }
        assert_eq!(fam.overlap_count(0.0), 0);
        let supp: Vec<Vec<usize>> = (0..12).map(|f| fam.support(f, 0.0)).collect();
        assert!(supp.iter().all(|s| s.len() == 512));
    }

    #[test]
    fn traveling_factor_is_a_phase_shift() {
        let fam = desk();
        let f = &fam.flows[0];
        let rate = fam.params.travel_rate() as f64;
        let t = 0.37;
        let a = fam.tables(f, t);
        let drift = (rate * t).fract();
        for u in 0..64 {
            let y = (u as f64 - f.shift[1]) / 64.0 + drift;
            assert_eq!(a.kb[u].v(), fam.profiles[1].eval(T3::cst(y)).v());
            assert!((a.kb[u].d(1) - rate * fam.profiles[1].eval(T3::var(y)).d(1)).abs() < 1e-9 * rate);
        }
        let b = fam.tables(f, t + 1.0 / rate);
        for u in 0..64 {
            assert!((a.kb[u].v() - b.kb[u].v()).abs() < 1e-9);
        }
    }

    #[test]
    fn antiderivative_table_is_bounded_and_consistent() {
        let fam = desk();
        let f = &fam.flows[3];
        let t = 0.21;
        let h = 1e-9;
        let (a, b) = (fam.tables(f, t - h), fam.tables(f, t + h));
        let c = fam.tables(f, t);
        for u in 0..64 {
            assert!(c.anti[u].v().abs() <= 2.0);
            let fd = (b.anti[u].v() - a.anti[u].v()) / (2.0 * h);
            assert!((fd - c.anti[u].d(1)).abs() < 1e-5, "{u}: {fd} {}", c.anti[u].d(1));
        }
    }

    #[test]
    fn potentials_reproduce_projected_oscillation() {
        let fam = desk();
        for f in fam.flows.iter().step_by(3) {
            let psi = fam.psi(f);
            let (fb, fbb) = fam.potentials(f).unwrap();
            let lam = fam.params.lambda as f64;
            for (pot, dir) in [(fb, f.triple.kbar()), (fbb, f.triple.kbarbar())] {
                let v = Field::from_components(dir.iter().map(|&d| psi.scale(d)).collect()).unwrap();
                let err = pot.curl().scale(1.0 / lam).sub(&v.leray_project()).l2_norm();
                assert!(err < 1e-12, "{err}");
            }
        }
        let axis = fam.flows.iter().find(|f| f.triple.k.num == [1, 0, 0]).unwrap();
        let psi = fam.psi(axis);
        let v = Field::from_components(axis.triple.kbar().iter().map(|&d| psi.scale(d)).collect()).unwrap();
        assert!(v.divergence().l2_norm() < 1e-13);
    }

    #[test]
    fn greedy_place_detects_pigeonhole() {
        let r = greedy_place(10, 2, 1000, |_, c| Some((0..6).map(|p| (p + c) % 10).collect()));
        assert!(matches!(r, Err(Error::PlacementFailed(_))));
        let ok = greedy_place(10, 1, 10, |_, c| Some(vec![c % 10])).unwrap();
        assert_eq!(ok, vec![0]);
    }

    #[test]
    fn reference_parameters_place_disjointly() {
        let d = load_direction_sets();
        let g = Grid::new(64).unwrap();
        let p = FlowParams { r_inv: 16, rbar_inv: 16, rbarbar_inv: 4, sigma: 2, ..FlowParams::desk(d.n_lambda) };
        assert!(matches!(BoxFlowFamily::build(g, &d, &p), Err(Error::UnderResolved { .. })));
        let strict = FlowParams { resolution: Resolution::Strict, ..FlowParams::desk(d.n_lambda) };
        assert!(BoxFlowFamily::build(g, &d, &strict).unwrap_err().is_resolution());
    }

    #[test]
    fn asymptotic_scaling_exponents() {
        let l: Vec<f64> = (8..=12).map(|e| 2f64.powi(e)).collect();
        for p in [1.0, f64::INFINITY] {
            let r = lp_norm_report(&l, p).unwrap();
            assert!((r.slope - r.theory).abs() < 0.15, "{p}: {} vs {}", r.slope, r.theory);
        }
        let p2 = lp_norm_report(&l, 2.0).unwrap();
        assert!(p2.slope.abs() < 0.05 && p2.theory == 0.0);
        let s = support_report(&l).unwrap();
        assert!((s.slope + 33.0 / 16.0).abs() < 0.15);
        assert!(matches!(lp_norm_report(&l[..3], 1.0), Err(Error::TooFewSamples(3))));
    }

    #[test]
    fn slope_fit_recovers_power_law() {
        let x = [2.0, 4.0, 8.0, 16.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.25)).collect();
        assert!((fit_slope(&x, &y).unwrap() + 1.25).abs() < 1e-12);
        assert!(matches!(fit_slope(&[1.0], &[1.0]), Err(Error::TooFewSamples(1))));
    }
}
