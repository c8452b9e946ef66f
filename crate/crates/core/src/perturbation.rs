//! Perturbation families (principal, helicity, temporal, inverse traveling wave, heat
//! conduction, corrector, initial), their amplitudes, assembly into (w, d), the stresses of
//! the next level, and the oscillation cancellation checks.
//!
//! Every family is carried with its exact first time derivative. Box flows are sampled at grid
//! nodes; sampled fields are stored with their Nyquist planes dropped.

use crate::building_flows::{BoxFlowFamily, FlowParams};
use crate::cutoffs_gaps::{check_gap, h_bq, h_q, rho_q, rho_q0, Cutoffs, Ladder};
use crate::error::{Error, Result};
use crate::geometry::{
    chi_of_bracket, load_direction_sets, skew_amplitudes, sym_amplitudes, Directions, Family, JetMat,
    SkewLemma, SymLemma,
};
use crate::gluing::{relaxed_defect, Glued};
use crate::inverse_divergence::{div_tensor, inv_div_anti, inv_div_sym};
use crate::mhd_solver::centered_derivative;
use crate::products::{anti_stress, dot, outer, outer_tf};
use crate::smooth::T3;
use crate::torus_field::{kappa, Field, Grid, NormSpec, Rank, Samples, Symmetry, TWO_PI};
use num_complex::Complex64 as C64;
use serde::Serialize;
use std::collections::BTreeMap;

const HARMONIC_TOL: f64 = 1e-17;
const HARMONIC_CHECK: f64 = 1e-11;
/// Finite-difference step of the cancellation checks, in units of one travel period.
const FD_STEP: f64 = 1e-5;

/// Box-flow family, geometric lemmas and the harmonic expansion of the traveling antiderivative.
#[derive(Clone, Debug)]
pub struct FlowSetup {
    pub fam: BoxFlowFamily,
    pub dirs: Directions,
    pub skew: SkewLemma,
    pub sym: SymLemma,
    /// Fourier coefficients b_j of A(y) = ∫₀^y (ĝ² − 1).
    pub harmonics: Vec<(i64, C64)>,
}

/// One flow sampled on the grid at a given drift; jets carry ∂_t.
#[derive(Clone, Debug)]
pub struct FlowSample {
    pub phi: Vec<T3>,
    pub psi: Vec<f64>,
    /// √2 cos(2π m·x)/(2π|m|²), so that curl(pot (m × e)) = ℙ_H(ψ e).
    pub pot: Vec<f64>,
    /// φ_k² φ_k̄̄².
    pub s: Vec<f64>,
    pub kb: Vec<T3>,
    pub anti: Vec<T3>,
    /// Lattice phase of the traveling factor, y = (u − shift)/n + drift.
    pub y: Vec<f64>,
}

impl FlowSetup {
    pub fn new(grid: Grid, params: &FlowParams) -> Result<FlowSetup> {
        let dirs = load_direction_sets();
        let fam = BoxFlowFamily::build(grid, &dirs, params)?;
        // ψ_k must land on a nonzero mode strictly inside the band for the potentials to exist
        let nyquist = grid.n as f64 / 2.0;
        for f in &fam.flows {
            let m = f.psi_mode(grid.n);
            if m.iter().all(|&c| c == 0) || m.iter().any(|&c| c.abs() as f64 >= nyquist) {
                return Err(Error::UnderResolved { nyquist, freq: params.lambda as f64 });
            }
        }
        let skew = SkewLemma::new(&dirs.b)?;
        let sym = SymLemma::new(&dirs.v)?;
        let prof = &fam.profiles[1];
        let harmonics = prof.harmonics(HARMONIC_TOL);
        let worst = (0..101)
            .map(|i| {
                let y = i as f64 / 101.0;
                let s: f64 =
                    harmonics.iter().map(|(j, b)| (b * C64::from_polar(1.0, TWO_PI * *j as f64 * y)).re).sum();
                (s - prof.antiderivative(y)).abs()
            })
            .fold(0.0, f64::max);
        if worst > HARMONIC_CHECK {
            return Err(Error::QuadratureUnderResolved(format!(
                "{} harmonics resum the traveling antiderivative to {worst:e}",
                harmonics.len()
            )));
        }
        Ok(FlowSetup { fam, dirs, skew, sym, harmonics })
    }

    pub fn desk(grid: Grid) -> Result<FlowSetup> {
        FlowSetup::new(grid, &FlowParams::desk(load_direction_sets().n_lambda))
    }

    pub fn grid(&self) -> Grid {
        self.fam.grid
    }

    pub fn rate(&self) -> f64 {
        self.fam.params.travel_rate() as f64
    }

    pub fn drift(&self, t: f64) -> f64 {
        (self.rate() * t).fract()
    }

    /// Nearest time at which every traveling factor is back at its certified position.
    pub fn snap(&self, t: f64) -> f64 {
        (t * self.rate()).round() / self.rate()
    }

    fn indices(&self, f: Family) -> Vec<usize> {
        (0..self.fam.flows.len()).filter(|&i| self.fam.flows[i].family == f).collect()
    }

    pub fn sample(&self, fi: usize, drift: f64) -> FlowSample {
        let g = self.fam.grid;
        let n = g.n;
        let flow = &self.fam.flows[fi];
        let tab = self.fam.tables_at(flow, drift);
        let m = flow.psi_mode(n);
        let m2 = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]) as f64;
        let len = g.len();
        let mut out = FlowSample {
            phi: Vec::with_capacity(len),
            psi: Vec::with_capacity(len),
            pot: Vec::with_capacity(len),
            s: Vec::with_capacity(len),
            kb: Vec::with_capacity(len),
            anti: Vec::with_capacity(len),
            y: Vec::with_capacity(len),
        };
        let k0 = flow.ints[0];
        for idx in 0..len {
            let lat = g.lattice(idx);
            let ph = flow.phases(n, lat);
            let (a, kb, c) = tab.at(ph);
            let dk = k0[0] * lat[0] as i64 + k0[1] * lat[1] as i64 + k0[2] * lat[2] as i64;
            let arg = TWO_PI * (flow.psi_mult * dk).rem_euclid(n as i64) as f64 / n as f64;
            out.phi.push(kb.scale(a * c));
            out.psi.push(2f64.sqrt() * arg.sin());
            out.pot.push(2f64.sqrt() * arg.cos() / (TWO_PI * m2));
            out.s.push((a * c) * (a * c));
            out.kb.push(kb);
            out.anti.push(tab.anti[ph[1]]);
            out.y.push((ph[1] as f64 - flow.shift[1]) / n as f64 + drift);
        }
        out
    }

    /// Grid shift m_j and coefficient c_j = b_j N_Λ⁻¹ e^{−2πij s/n} of each harmonic, for flow `fi`.
    fn shifted_harmonics(&self, fi: usize) -> Vec<([i64; 3], i64, C64)> {
        let flow = &self.fam.flows[fi];
        let n = self.fam.grid.n as i64;
        let base = flow.ints[1].map(|k| (flow.mult[1] * k).rem_euclid(n));
        let nl = self.fam.params.n_lambda as f64;
        self.harmonics
            .iter()
            .map(|&(j, b)| {
                let mj = base.map(|c| (j * c).rem_euclid(n));
                let ph = -TWO_PI * j as f64 * flow.shift[1] / n as f64;
                (mj, j, b * C64::from_polar(1.0 / nl, ph))
            })
            .collect()
    }
}

/// Time-dependent field with its exact time derivative.
#[derive(Clone, Debug)]
pub struct FieldJet {
    pub val: Field,
    pub ddt: Field,
}

impl FieldJet {
    pub fn zeros(g: Grid, rank: Rank) -> FieldJet {
        FieldJet { val: Field::zeros(g, rank), ddt: Field::zeros(g, rank) }
    }

    pub fn add(&self, o: &FieldJet) -> FieldJet {
        FieldJet { val: self.val.add(&o.val), ddt: self.ddt.add(&o.ddt) }
    }

    pub fn sub(&self, o: &FieldJet) -> FieldJet {
        FieldJet { val: self.val.sub(&o.val), ddt: self.ddt.sub(&o.ddt) }
    }

    fn map(&self, f: impl Fn(&Field) -> Field) -> FieldJet {
        FieldJet { val: f(&self.val), ddt: f(&self.ddt) }
    }
}

/// Scalar gap values at one sample time, for the ledger.
#[derive(Clone, Debug, Default, Serialize)]
pub struct GapReport {
    pub t: f64,
    pub glued_energy: f64,
    pub cross: f64,
    pub big_e: f64,
    pub rho_q: f64,
    pub rho_q0: f64,
    pub h_q: f64,
    pub h_bq: f64,
    pub mass: f64,
    pub mass_v: f64,
    pub aleph: f64,
    pub eta_minus1: f64,
}

/// Level data shared by every sample time of one step.
#[derive(Clone, Copy)]
pub struct Level<'a> {
    pub setup: &'a FlowSetup,
    pub ladder: &'a Ladder,
    pub cut: &'a Cutoffs,
    pub q: i32,
}

/// Σ_l a_{l,k} and Σ_l a²_{l,k} per flow on the grid, with time derivatives.
#[derive(Clone, Debug)]
pub struct Coefficients {
    pub t: f64,
    pub drift: f64,
    pub lin: Vec<Vec<T3>>,
    pub sq: Vec<Vec<T3>>,
    pub gaps: GapReport,
}

fn jet(v: f64, d: f64) -> T3 {
    T3([v, d, 0.0, 0.0])
}

fn jet_mat(a: &Samples, b: &Samples, p: usize, s: f64) -> JetMat {
    std::array::from_fn(|c| jet(s * a[c][p], s * b[c][p]))
}

fn outer3(a: [f64; 3], b: [f64; 3]) -> [f64; 9] {
    std::array::from_fn(|c| a[c / 3] * b[c % 3])
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

impl Coefficients {
    /// Amplitudes of every flow at the glued time, given e(t) and h(t) as jets.
    pub fn compute(lv: &Level, gl: &Glued, e: T3, h: T3) -> Result<Coefficients> {
        let (setup, cut, lad, q) = (lv.setup, lv.cut, lv.ladder, lv.q);
        let g = gl.grid();
        let (n, len, t) = (g.n, g.len(), gl.t);
        let drift = setup.drift(t);
        let delta = lad.delta(q + 1);
        let delta2 = lad.delta(q + 2);
        let ell = lad.ell(q);
        let ga = lad.gap_alpha;
        let window = 1.0 - lad.tau(q - 1);
        let active = cut.active(t);
        let etas: Vec<Vec<T3>> = active.iter().map(|&l| cut.eta_profile(l, n, t)).collect();
        let nf = setup.fam.flows.len();
        let zero = T3::cst(0.0);
        let mut lin = vec![vec![zero; len]; nf];
        let mut sq = vec![vec![zero; len]; nf];
        let (ib, iv, is) = (setup.indices(Family::B), setup.indices(Family::V), setup.indices(Family::S));

        let (mr, dmr) = (gl.m.to_real(), gl.dm.to_real());
        let (sb, rb) = (delta * ell.powf(ga / 2.0), delta * ell.powf(ga / 3.0));
        for p in 0..len {
            let mb = jet_mat(&mr, &dmr, p, -1.0);
            let rho_b = chi_of_bracket(&mb, sb).scale(rb);
            let x1 = g.lattice(p)[0];
            for eta in &etas {
                let amps = skew_amplitudes(&setup.skew, eta[x1], rho_b, &mb).map_err(|e| e.at("magnetic amplitudes"))?;
                for (a, &fi) in amps.iter().zip(&ib) {
                    lin[fi][p] = lin[fi][p] + *a;
                    sq[fi][p] = sq[fi][p] + *a * *a;
                }
            }
        }
        drop((mr, dmr));

        let (rr, drr) = (gl.r.to_real(), gl.dr.to_real());
        let split: Vec<[f64; 9]> = ib
            .iter()
            .map(|&fi| {
                let tr = &setup.fam.flows[fi].triple;
                let (a, b) = (outer3(tr.kbar(), tr.kbar()), outer3(tr.kbarbar(), tr.kbarbar()));
                std::array::from_fn(|c| a[c] - b[c])
            })
            .collect();
        let r_v = |sq: &[Vec<T3>], p: usize| -> JetMat {
            let mut r = jet_mat(&rr, &drr, p, 1.0);
            for (w, &fi) in split.iter().zip(&ib) {
                for c in 0..9 {
                    r[c] = r[c] - sq[fi][p].scale(w[c]);
                }
            }
            r
        };
        let sv = delta * ell.powf(ga / 4.0);
        let chi_v: Vec<T3> = (0..len).map(|p| chi_of_bracket(&r_v(&sq, p), sv)).collect();
        let mut mass_v = zero;
        for (p, c) in chi_v.iter().enumerate() {
            let x1 = g.lattice(p)[0];
            for eta in &etas {
                mass_v = mass_v + eta[x1] * eta[x1] * *c;
            }
        }
        let mass_v = mass_v.scale(1.0 / len as f64);

        let glued_energy =
            jet(gl.v.inner(&gl.v) + gl.b.inner(&gl.b), 2.0 * (gl.v.inner(&gl.dv) + gl.b.inner(&gl.db)));
        let cross = jet(gl.v.inner(&gl.b), gl.dv.inner(&gl.b) + gl.v.inner(&gl.db));
        let (aleph, em1) = (cut.aleph(t), cut.eta_minus1(t));
        let mass = active.iter().fold(zero, |acc, &l| acc + cut.mass(l, n, t));

        let hq = h_q(h, cross, delta2);
        check_gap("helicity gap", hq.v(), t, window)?;
        let hb = h_bq(delta, aleph, hq, em1, mass)?;
        if hb.v() <= 0.0 {
            return Err(Error::GapNegative { stage: "h_bq".into(), value: hb.v() });
        }
        let root = hb.sqrt();
        for &fi in &is {
            for p in 0..len {
                let x1 = g.lattice(p)[0];
                for eta in &etas {
                    lin[fi][p] = lin[fi][p] + eta[x1] * root;
                    sq[fi][p] = sq[fi][p] + eta[x1] * eta[x1] * hb;
                }
            }
        }

        // E = ∫|wp_b|² + |dp|² + |wh|² + |dh|²; supports are disjoint so cross terms vanish.
        let mut big_e = zero;
        for &fi in ib.iter().chain(&is) {
            let smp = setup.sample(fi, drift);
            for p in 0..len {
                if smp.phi[p].v() != 0.0 {
                    let a = lin[fi][p] * smp.phi[p].scale(smp.psi[p]);
                    big_e = big_e + a * a;
                }
            }
        }
        let big_e = big_e.scale(2.0 / len as f64);

        let rho = rho_q(e, glued_energy, big_e, delta2);
        check_gap("energy gap", rho.v(), t, window)?;
        let rho0 = rho_q0(delta, aleph, rho, em1, mass_v)?;
        for p in 0..len {
            let x1 = g.lattice(p)[0];
            let rv = r_v(&sq, p);
            let rho_v = rho0 * chi_v[p];
            for eta in &etas {
                let amps =
                    sym_amplitudes(&setup.sym, eta[x1], rho_v, &rv).map_err(|e| e.at("velocity amplitudes"))?;
                for (a, &fi) in amps.iter().zip(&iv) {
                    lin[fi][p] = lin[fi][p] + *a;
                    sq[fi][p] = sq[fi][p] + *a * *a;
                }
            }
        }
        let gaps = GapReport {
            t,
            glued_energy: glued_energy.v(),
            cross: cross.v(),
            big_e: big_e.v(),
            rho_q: rho.v(),
            rho_q0: rho0.v(),
            h_q: hq.v(),
            h_bq: hb.v(),
            mass: mass.v(),
            mass_v: mass_v.v(),
            aleph: aleph.v(),
            eta_minus1: em1.v(),
        };
        Ok(Coefficients { t, drift, lin, sq, gaps })
    }

    /// Coefficients a = f(flow, x) with a² = f², for checks independent of a glued state.
    pub fn synthetic(setup: &FlowSetup, t: f64, f: impl Fn(usize, [f64; 3]) -> T3) -> Coefficients {
        let g = setup.grid();
        let nf = setup.fam.flows.len();
        let lin: Vec<Vec<T3>> = (0..nf).map(|fi| (0..g.len()).map(|p| f(fi, g.point(p))).collect()).collect();
        let sq = lin.iter().map(|v| v.iter().map(|&a| a * a).collect()).collect();
        Coefficients { t, drift: setup.drift(t), lin, sq, gaps: GapReport { t, ..GapReport::default() } }
    }
}

/// Real-space accumulator of a vector field and its time derivative.
struct Acc {
    val: Samples,
    ddt: Samples,
}

impl Acc {
    fn new(len: usize) -> Acc {
        Acc { val: vec![vec![0.0; len]; 3], ddt: vec![vec![0.0; len]; 3] }
    }

    fn add(&mut self, p: usize, dir: [f64; 3], x: T3) {
        for a in 0..3 {
            self.val[a][p] += dir[a] * x.v();
            self.ddt[a][p] += dir[a] * x.d(1);
        }
    }

    fn field(&self, g: Grid) -> Result<FieldJet> {
        Ok(FieldJet {
            val: Field::from_real(g, Rank::Vector, &self.val)?.drop_nyquist(),
            ddt: Field::from_real(g, Rank::Vector, &self.ddt)?.drop_nyquist(),
        })
    }

    fn projected(&self, g: Grid) -> Result<FieldJet> {
        Ok(self.field(g)?.map(project))
    }
}

/// ℙ_H ℙ_{>0}.
fn project(f: &Field) -> Field {
    f.remove_mean().leray_project()
}

fn scalar(g: Grid, data: Vec<f64>) -> Field {
    Field::from_real(g, Rank::Scalar, &[data]).expect("scalar")
}

/// Directional derivative (e·∇) with the Nyquist planes removed.
fn along(f: &Field, e: [f64; 3]) -> Field {
    f.multiplier(|m| C64::new(0.0, TWO_PI * (m[0] as f64 * e[0] + m[1] as f64 * e[1] + m[2] as f64 * e[2])))
        .drop_nyquist()
}

/// Duhamel integrals of one magnetic flow, as spectra: H1 (traveling), H2 (stationary).
struct Duhamel {
    h1: Field,
    dh1: Field,
    h2: Field,
    dh2: Field,
    /// ‖(∂_t + κ)Ĥ − source‖² and ‖source‖², summed over both integrals.
    miss: f64,
    size: f64,
}

/// H1 = ∫₀ᵗ e^{(t−τ)Δ} Δ (k̄̄·∇)(A S) dτ and H2 = ∫₀ᵗ e^{(t−τ)Δ}(k̄̄·∇)S dτ, modewise.
fn duhamel(setup: &FlowSetup, fi: usize, smp: &FlowSample, t: f64, drift: f64) -> Result<Duhamel> {
    let g = setup.grid();
    let n = g.n;
    let kbb = setup.fam.flows[fi].triple.kbarbar();
    let s_hat = scalar(g, smp.s.clone());
    let src = scalar(g, smp.anti.iter().zip(&smp.s).map(|(a, s)| a.v() * s).collect());
    let rate = setup.rate();
    // group harmonics by grid shift; the time factor depends on the shift only through κ(m)
    let mut classes: BTreeMap<[i64; 3], Vec<(i64, C64)>> = BTreeMap::new();
    for (mj, j, c) in setup.shifted_harmonics(fi) {
        classes.entry(mj).or_default().push((j, c));
    }
    let half = n as i64 / 2;
    let nyq = |m: [i64; 3]| m.iter().any(|&c| c == -half);
    let kmax = 3 * (half * half) as usize + 1;
    let mut h1 = vec![C64::default(); g.len()];
    let mut dh1 = vec![C64::default(); g.len()];
    let mut tables: Vec<Vec<(C64, C64)>> = Vec::with_capacity(classes.len());
    for list in classes.values() {
        // Σ_j c_j (e^{iωt} − e^{−κt})/(κ + iω) and its time derivative, for each |m|²
        let mut tab = vec![(C64::default(), C64::default()); kmax];
        for (k2, slot) in tab.iter_mut().enumerate() {
            let kap = TWO_PI * TWO_PI * k2 as f64;
            let ekt = (-kap * t).exp();
            for &(j, c) in list {
                let om = TWO_PI * j as f64 * rate;
                let eiw = C64::from_polar(1.0, TWO_PI * j as f64 * drift);
                let den = C64::new(kap, om);
                if den.norm() == 0.0 {
                    continue;
                }
                slot.0 += c * (eiw - ekt) / den;
                slot.1 += c * (C64::new(0.0, om) * eiw + kap * ekt) / den;
            }
        }
        tables.push(tab);
    }
    let nu = n as i64;
    for (ci, mj) in classes.keys().enumerate() {
        let tab = &tables[ci];
        for idx in 1..g.len() {
            let m = g.mode(idx);
            if nyq(m) {
                continue;
            }
            let shifted = g.index_of([0, 1, 2].map(|a| (m[a] - mj[a]).rem_euclid(nu)));
            let k2 = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]) as usize;
            let sv = s_hat.comps[0][shifted];
            h1[idx] += tab[k2].0 * sv;
            dh1[idx] += tab[k2].1 * sv;
        }
    }
    let mut h2 = vec![C64::default(); g.len()];
    let mut dh2 = vec![C64::default(); g.len()];
    let (mut miss, mut size) = (0.0, 0.0);
    for idx in 1..g.len() {
        let m = g.mode(idx);
        if nyq(m) {
            h1[idx] = C64::default();
            dh1[idx] = C64::default();
            continue;
        }
        let kap = kappa(m);
        let l2 = C64::new(0.0, TWO_PI * (m[0] as f64 * kbb[0] + m[1] as f64 * kbb[1] + m[2] as f64 * kbb[2]));
        let l1 = l2 * (-kap);
        h1[idx] *= l1;
        dh1[idx] *= l1;
        let ekt = (-kap * t).exp();
        let sv = s_hat.comps[0][idx];
        h2[idx] = l2 * sv * (1.0 - ekt) / kap;
        dh2[idx] = l2 * sv * ekt;
        let s1 = l1 * src.comps[0][idx];
        let s2 = l2 * sv;
        miss += (dh1[idx] + h1[idx] * kap - s1).norm_sqr() + (dh2[idx] + h2[idx] * kap - s2).norm_sqr();
        size += s1.norm_sqr() + s2.norm_sqr();
    }
    let wrap = |c: Vec<C64>| Field { grid: g, rank: Rank::Scalar, sym: Symmetry::None, comps: vec![c] };
    Ok(Duhamel { h1: wrap(h1), dh1: wrap(dh1), h2: wrap(h2), dh2: wrap(dh2), miss, size })
}

/// The seven families at one time; (dh = wh).
#[derive(Clone, Debug)]
pub struct PerturbationBundle {
    pub t: f64,
    pub wp: FieldJet,
    pub dp: FieldJet,
    pub wh: FieldJet,
    pub wt: FieldJet,
    pub dt: FieldJet,
    pub wv: FieldJet,
    pub dv: FieldJet,
    pub wl: FieldJet,
    pub dl: FieldJet,
    pub wc: FieldJet,
    pub dc: FieldJet,
    pub ws: FieldJet,
    pub ds: FieldJet,
    /// ∫|wp + wh|² + |dp + dh|² from grid samples.
    pub energy_lhs: f64,
    /// ∫wh·dh from grid samples.
    pub helicity_lhs: f64,
    /// Relative L² miss of (∂_t − Δ) on the Duhamel integrals against their sources.
    pub heat_residual: f64,
    pub gaps: GapReport,
}

/// (ws, ds) = e^{tΔ}(f∗ψ_ℓ − f∗ψ_{ℓ'}∗ψ_ℓ) for f = v_in, b_in.
pub fn initial_flows(v_in: &Field, b_in: &Field, ell: f64, ell_prev: f64, t: f64) -> Result<(FieldJet, FieldJet)> {
    let one = |f: &Field| -> Result<FieldJet> {
        let base = f.mollify(ell)?.sub(&f.mollify(ell_prev)?.mollify(ell)?);
        let val = base.heat(t)?;
        let ddt = val.laplacian();
        Ok(FieldJet { val, ddt })
    };
    Ok((one(v_in)?, one(b_in)?))
}

impl PerturbationBundle {
    /// Build every flow-based family from the coefficients; (ws, ds) are passed in.
    pub fn build(setup: &FlowSetup, coef: &Coefficients, ws: FieldJet, ds: FieldJet) -> Result<PerturbationBundle> {
        let g = setup.grid();
        let len = g.len();
        let p = &setup.fam.params;
        let (mu, ms) = (p.mu as f64, (p.mu * p.sigma) as f64);
        let (t, drift) = (coef.t, coef.drift);
        let mut wp = Acc::new(len);
        let mut dp = Acc::new(len);
        let mut wh = Acc::new(len);
        let mut wt = Acc::new(len);
        let mut dt = Acc::new(len);
        let mut wv = Acc::new(len);
        let mut dv = Acc::new(len);
        let mut wl = Acc::new(len);
        let mut dl = Acc::new(len);
        let mut pw = Acc::new(len);
        let mut pd = Acc::new(len);
        let (mut miss, mut size) = (0.0, 0.0);
        for (fi, flow) in setup.fam.flows.iter().enumerate() {
            let smp = setup.sample(fi, drift);
            let (kb, kbb) = (flow.triple.kbar(), flow.triple.kbarbar());
            let m = flow.psi_mode(g.n).map(|c| c as f64);
            let (fb, fbb) = (cross3(m, kb), cross3(m, kbb));
            let (lin, sq) = (&coef.lin[fi], &coef.sq[fi]);
            for q in 0..len {
                let ph = smp.phi[q];
                if ph.v() == 0.0 && ph.d(1) == 0.0 {
                    continue;
                }
                let amp = lin[q] * ph;
                let osc = amp.scale(smp.psi[q]);
                let pot = amp.scale(smp.pot[q]);
                let tmp = -(sq[q] * ph * ph).scale(1.0 / mu);
                match flow.family {
                    Family::V => {
                        wp.add(q, kb, osc);
                        pw.add(q, fb, pot);
                        wt.add(q, kb, tmp);
                    }
                    Family::B => {
                        wp.add(q, kb, osc);
                        dp.add(q, kbb, osc);
                        pw.add(q, fb, pot);
                        pd.add(q, fbb, pot);
                        wt.add(q, kb, tmp);
                        dt.add(q, kbb, tmp);
                    }
                    Family::S => {
                        wh.add(q, kbb, osc);
                        pw.add(q, fbb, pot);
                        pd.add(q, fbb, pot);
                    }
                }
            }
            if flow.family != Family::B {
                continue;
            }
            let a_s: Vec<f64> = smp.anti.iter().zip(&smp.s).map(|(a, s)| a.v() * s).collect();
            let da_s: Vec<f64> = smp.anti.iter().zip(&smp.s).map(|(a, s)| a.d(1) * s).collect();
            let qv = along(&scalar(g, a_s), kbb).to_real().remove(0);
            let qd = along(&scalar(g, da_s), kbb).to_real().remove(0);
            let heat = duhamel(setup, fi, &smp, t, drift)?;
            miss += heat.miss;
            size += heat.size;
            let hv = heat.h1.scale(1.0 / ms).add(&heat.h2).to_real().remove(0);
            let hd = heat.dh1.scale(1.0 / ms).add(&heat.dh2).to_real().remove(0);
            for q in 0..len {
                let a2 = sq[q];
                if a2.v() == 0.0 && a2.d(1) == 0.0 {
                    continue;
                }
                let wave = (a2 * jet(qv[q], qd[q])).scale(1.0 / ms);
                wv.add(q, kbb, wave);
                dv.add(q, kb, wave);
                let cond = a2 * jet(hv[q], hd[q]);
                wl.add(q, kbb, cond);
                dl.add(q, kb, cond);
            }
        }

        let mut energy = 0.0;
        let mut helicity = 0.0;
        for q in 0..len {
            let (mut e1, mut e2, mut hh) = (0.0, 0.0, 0.0);
            for a in 0..3 {
                let (x, y, z) = (wp.val[a][q], dp.val[a][q], wh.val[a][q]);
                e1 += (x + z) * (x + z);
                e2 += (y + z) * (y + z);
                hh += z * z;
            }
            energy += e1 + e2;
            helicity += hh;
        }

        let wp = wp.field(g)?;
        let dp = dp.field(g)?;
        let wh = wh.field(g)?;
        let curl = |a: &Acc| -> Result<FieldJet> { Ok(a.field(g)?.map(|f| f.curl().drop_nyquist())) };
        let wc = curl(&pw)?.sub(&wp).sub(&wh);
        let dc = curl(&pd)?.sub(&dp).sub(&wh);
        Ok(PerturbationBundle {
            t,
            wp,
            dp,
            wh,
            wt: wt.projected(g)?,
            dt: dt.projected(g)?,
            wv: wv.projected(g)?,
            dv: dv.projected(g)?,
            wl: wl.projected(g)?,
            dl: dl.projected(g)?,
            wc,
            dc,
            ws,
            ds,
            energy_lhs: energy / len as f64,
            helicity_lhs: helicity / len as f64,
            heat_residual: if size > 0.0 { (miss / size).sqrt() } else { 0.0 },
            gaps: coef.gaps.clone(),
        })
    }

    /// (w_{q+1}, d_{q+1}) as the sum of all families.
    pub fn assemble(&self) -> (FieldJet, FieldJet) {
        let w = [&self.wh, &self.wc, &self.wt, &self.wv, &self.wl, &self.ws].iter().fold(self.wp.clone(), |a, f| a.add(f));
        let d = [&self.wh, &self.dc, &self.dt, &self.dv, &self.dl, &self.ds].iter().fold(self.dp.clone(), |a, f| a.add(f));
        (w, d)
    }

    pub fn families(&self) -> [(&'static str, &FieldJet); 13] {
        [
            ("wp", &self.wp),
            ("dp", &self.dp),
            ("wh", &self.wh),
            ("wt", &self.wt),
            ("dt", &self.dt),
            ("wv", &self.wv),
            ("dv", &self.dv),
            ("wl", &self.wl),
            ("dl", &self.dl),
            ("wc", &self.wc),
            ("dc", &self.dc),
            ("ws", &self.ws),
            ("ds", &self.ds),
        ]
    }

    /// (name, L², H³) per family.
    pub fn norms(&self) -> Result<Vec<(&'static str, f64, f64)>> {
        self.families()
            .iter()
            .map(|(k, f)| Ok((*k, f.val.l2_norm(), f.val.norm(NormSpec::Hs { s: 3.0, homogeneous: false })?)))
            .collect()
    }

    /// Relative remainder of ∫|wp + wh|² + |dp + dh|² = 3ρ_q + E.
    pub fn energy_remainder(&self) -> f64 {
        let target = 3.0 * self.gaps.rho_q + self.gaps.big_e;
        (self.energy_lhs - target) / target
    }

    /// Relative remainder of ∫wh·dh = h_q.
    pub fn helicity_remainder(&self) -> f64 {
        (self.helicity_lhs - self.gaps.h_q) / self.gaps.h_q
    }
}

fn flow_sum(
    setup: &FlowSetup,
    fam: Family,
    dir: impl Fn(usize) -> [f64; 3],
    mut each: impl FnMut(usize, &FlowSample, &mut Vec<f64>),
    drift: f64,
) -> Result<Field> {
    let g = setup.grid();
    let mut acc = vec![vec![0.0; g.len()]; 3];
    for fi in setup.indices(fam) {
        let smp = setup.sample(fi, drift);
        let mut s = vec![0.0; g.len()];
        each(fi, &smp, &mut s);
        let e = dir(fi);
        for a in 0..3 {
            acc[a].iter_mut().zip(&s).for_each(|(x, y)| *x += e[a] * y);
        }
    }
    Ok(project(&Field::from_real(g, Rank::Vector, &acc)?.drop_nyquist()))
}

fn rel_miss(lhs: &Field, rhs: &Field, terms: &[&Field]) -> f64 {
    let scale = terms.iter().map(|f| f.l2_norm()).fold(0.0, f64::max);
    lhs.sub(rhs).l2_norm() / scale.max(f64::MIN_POSITIVE)
}

fn shifted(coef: &Coefficients, fi: usize, q: usize, s: f64) -> f64 {
    let a = coef.sq[fi][q];
    a.v() + s * a.d(1)
}

/// ∂_t dt + ℙΣ a² div(φ² k̄⊗k̄̄) against −ℙΣ μ⁻¹ ∂_t(a²) φ² k̄̄, relative L² miss.
pub fn temporal_identity(setup: &FlowSetup, coef: &Coefficients) -> Result<f64> {
    let p = &setup.fam.params;
    let mu = p.mu as f64;
    let sn = (p.sigma * p.n_lambda) as f64;
    let h = FD_STEP / setup.rate();
    let kbb = |fi: usize| setup.fam.flows[fi].triple.kbarbar();
    let at = |s: f64| -> Result<Field> {
        flow_sum(
            setup,
            Family::B,
            kbb,
            |fi, smp, out| {
                for (q, o) in out.iter_mut().enumerate() {
                    *o = -shifted(coef, fi, q, s) * smp.phi[q].v().powi(2) / mu;
                }
            },
            coef.drift + setup.rate() * s,
        )
    };
    let st = [at(-2.0 * h)?, at(-h)?, at(h)?, at(2.0 * h)?];
    let fd = centered_derivative([&st[0], &st[1], &st[2], &st[3]], h);
    let prof = &setup.fam.profiles[1];
    let div = flow_sum(
        setup,
        Family::B,
        kbb,
        |fi, smp, out| {
            for (q, o) in out.iter_mut().enumerate() {
                if smp.s[q] != 0.0 {
                    // (k̄·∇)ĝ(y)² = 2ĝĝ' σN_Λ
                    let gy = prof.eval(T3::var(smp.y[q]));
                    *o = coef.sq[fi][q].v() * smp.s[q] * 2.0 * gy.v() * gy.d(1) * sn;
                }
            }
        },
        coef.drift,
    )?;
    let rhs = flow_sum(
        setup,
        Family::B,
        kbb,
        |fi, smp, out| {
            for (q, o) in out.iter_mut().enumerate() {
                *o = -coef.sq[fi][q].d(1) * smp.phi[q].v().powi(2) / mu;
            }
        },
        coef.drift,
    )?;
    Ok(rel_miss(&fd.add(&div), &rhs, &[&fd, &div, &rhs]))
}

/// ∂_t dv − ℙΣ a² div(ℙ_{>0}(φ_k̄²) φ_k²φ_k̄̄² k̄̄⊗k̄) against (μσ)⁻¹ℙΣ ∂_t(a²) div(A S k̄̄⊗k̄).
pub fn inverse_wave_identity(setup: &FlowSetup, coef: &Coefficients) -> Result<f64> {
    let g = setup.grid();
    let p = &setup.fam.params;
    let ms = (p.mu * p.sigma) as f64;
    let h = FD_STEP / setup.rate();
    let kb = |fi: usize| setup.fam.flows[fi].triple.kbar();
    let derived = |vals: Vec<f64>, fi: usize| -> Vec<f64> {
        along(&scalar(g, vals), setup.fam.flows[fi].triple.kbarbar()).to_real().remove(0)
    };
    let at = |s: f64| -> Result<Field> {
        flow_sum(
            setup,
            Family::B,
            kb,
            |fi, smp, out| {
                let q = derived(smp.anti.iter().zip(&smp.s).map(|(a, s)| a.v() * s).collect(), fi);
                for (i, o) in out.iter_mut().enumerate() {
                    *o = shifted(coef, fi, i, s) * q[i] / ms;
                }
            },
            coef.drift + setup.rate() * s,
        )
    };
    let st = [at(-2.0 * h)?, at(-h)?, at(h)?, at(2.0 * h)?];
    let fd = centered_derivative([&st[0], &st[1], &st[2], &st[3]], h);
    let low = flow_sum(
        setup,
        Family::B,
        kb,
        |fi, smp, out| {
            let q = derived(smp.kb.iter().zip(&smp.s).map(|(k, s)| (k.v() * k.v() - 1.0) * s).collect(), fi);
            for (i, o) in out.iter_mut().enumerate() {
                *o = -coef.sq[fi][i].v() * q[i];
            }
        },
        coef.drift,
    )?;
    let rhs = flow_sum(
        setup,
        Family::B,
        kb,
        |fi, smp, out| {
            let q = derived(smp.anti.iter().zip(&smp.s).map(|(a, s)| a.v() * s).collect(), fi);
            for (i, o) in out.iter_mut().enumerate() {
                *o = coef.sq[fi][i].d(1) * q[i] / ms;
            }
        },
        coef.drift,
    )?;
    Ok(rel_miss(&fd.add(&low), &rhs, &[&fd, &low, &rhs]))
}

/// Tuple of the next level at one time.
#[derive(Clone, Debug)]
pub struct NextLevel {
    pub t: f64,
    pub v: Field,
    pub b: Field,
    pub p: Field,
    pub r: Field,
    pub m: Field,
    pub dv: Field,
    pub db: Field,
}

impl NextLevel {
    /// Relative defects of the relaxed momentum and induction equations.
    pub fn defect(&self) -> (f64, f64) {
        relaxed_defect(&self.v, &self.b, &self.p, &self.r, &self.m, &self.dv, &self.db)
    }
}

/// v = v̄ + w, b = b̄ + d with R̊ = R^lin + R^osc and M̊ = M^lin + M^osc.
pub fn next_level(gl: &Glued, w: &FieldJet, d: &FieldJet) -> Result<NextLevel> {
    let (vb, bb) = (&gl.v, &gl.b);
    let heat_v = w.ddt.sub(&w.val.laplacian()).drop_nyquist();
    let heat_b = d.ddt.sub(&d.val.laplacian()).drop_nyquist();
    let r_lin = inv_div_sym(&heat_v).map_err(|e| e.at("linear Reynolds stress"))?.add(
        &outer_tf(&w.val, vb).add(&outer_tf(vb, &w.val)).sub(&outer_tf(&d.val, bb)).sub(&outer_tf(bb, &d.val)),
    );
    let y = div_tensor(&outer(&w.val, &w.val).sub(&outer(&d.val, &d.val)).add(&gl.r)).drop_nyquist();
    let r_osc = inv_div_sym(&y.leray_project()).map_err(|e| e.at("oscillation Reynolds stress"))?;
    let m_lin = inv_div_anti(&heat_b)
        .map_err(|e| e.at("linear magnetic stress"))?
        .add(&anti_stress(&w.val, bb).add(&anti_stress(vb, &d.val)));
    let z = div_tensor(&anti_stress(&w.val, &d.val).add(&gl.m)).drop_nyquist();
    let m_osc = inv_div_anti(&z.leray_project()).map_err(|e| e.at("oscillation magnetic stress"))?;
    let mut p = gl.p.sub(&dot(&w.val, vb).sub(&dot(&d.val, bb)).scale(2.0 / 3.0));
    p.axpy(-1.0, &y.divergence().inverse_laplacian()?);
    Ok(NextLevel {
        t: gl.t,
        v: vb.add(&w.val),
        b: bb.add(&d.val),
        p: p.remove_mean(),
        r: r_lin.add(&r_osc).with_sym(Symmetry::SymTraceFree),
        m: m_lin.add(&m_osc).with_sym(Symmetry::Antisymmetric),
        dv: gl.dv.add(&w.ddt),
        db: gl.db.add(&d.ddt),
    })
}
