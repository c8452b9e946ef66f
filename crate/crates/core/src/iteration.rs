//! Bootstrap state, one q → q+1 step at desk scale, and the ledger of measured estimates.

use crate::cutoffs_gaps::{build_partition, Cutoffs, Ladder};
use crate::error::{Error, Result};
use crate::gluing::{glue_at, solve_locals};
use crate::io::{read_field, to_json, write_field};
use crate::mhd_solver::MhdState;
use crate::perturbation::{
    initial_flows, inverse_wave_identity, next_level, temporal_identity, Coefficients, FlowSetup, GapReport, Level,
    NextLevel, PerturbationBundle,
};
use crate::products::{anti_stress, dot, sym_stress};
use crate::smooth::T3;
use crate::torus_field::{Field, Grid, NormSpec, Rank, Symmetry, TWO_PI};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

const DIV_TOL: f64 = 1e-10;

/// Target e(t) or h(t) on [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Profile {
    /// The level-q quantity plus a constant offset.
    Band(f64),
    Constant(f64),
}

impl Profile {
    /// e = ∫|v_q|² + |b_q|² + δ_{q+1} + δ_{q+2}/2.
    pub fn energy_default(l: &Ladder, q: i32) -> Profile {
        Profile::Band(l.delta(q + 1) + l.delta(q + 2) / 2.0)
    }

    /// h = ∫v_q·b_q + δ_{q+1}/100 + δ_{q+2}/200.
    pub fn helicity_default(l: &Ladder, q: i32) -> Profile {
        Profile::Band(l.delta(q + 1) / 100.0 + l.delta(q + 2) / 200.0)
    }

    pub fn jet(&self, level: T3) -> T3 {
        match *self {
            Profile::Band(c) => level.add_const(c),
            Profile::Constant(c) => T3::cst(c),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Source {
    /// v_q = e^{tΔ}v0, b_q = e^{tΔ}b0.
    Heat { v0: Field, b0: Field },
    /// Tuples stored at the step's sample times.
    Samples(Vec<NextLevel>),
}

/// (v_q, b_q, p_q, R̊_q, M̊_q) with the data they were started from.
#[derive(Clone, Debug)]
pub struct IterationState {
    pub q: i32,
    pub ladder: Ladder,
    pub v_in: Field,
    pub b_in: Field,
    pub source: Source,
}

impl IterationState {
    pub fn grid(&self) -> Grid {
        self.v_in.grid
    }

    /// (v, b, ∂_t v, ∂_t b) at t.
    pub fn fields(&self, t: f64) -> Result<(Field, Field, Field, Field)> {
        match &self.source {
            Source::Heat { v0, b0 } => {
                let (v, b) = (v0.heat(t)?, b0.heat(t)?);
                let (dv, db) = (v.laplacian(), b.laplacian());
                Ok((v, b, dv, db))
            }
            Source::Samples(s) => {
                let x = stored(s, t)?;
                Ok((x.v.clone(), x.b.clone(), x.dv.clone(), x.db.clone()))
            }
        }
    }

    /// Full tuple at t.
    pub fn tuple(&self, t: f64) -> Result<NextLevel> {
        match &self.source {
            Source::Heat { .. } => {
                let (v, b, dv, db) = self.fields(t)?;
                let p = dot(&v, &v).sub(&dot(&b, &b)).scale(-1.0 / 3.0).remove_mean();
                let r = sym_stress(&v, &b).with_sym(Symmetry::SymTraceFree);
                let m = anti_stress(&v, &b).with_sym(Symmetry::Antisymmetric);
                Ok(NextLevel { t, v, b, p, r, m, dv, db })
            }
            Source::Samples(s) => Ok(stored(s, t)?.clone()),
        }
    }

    /// Times at which the tuple is available; `None` when it is available everywhere.
    pub fn times(&self) -> Option<Vec<f64>> {
        match &self.source {
            Source::Heat { .. } => None,
            Source::Samples(s) => Some(s.iter().map(|x| x.t).collect()),
        }
    }

    /// ∫|v|² + |b|² and ∫v·b at t as jets.
    fn invariants(&self, t: f64) -> Result<(T3, T3)> {
        let (v, b, dv, db) = self.fields(t)?;
        let e = T3([v.inner(&v) + b.inner(&b), 2.0 * (v.inner(&dv) + b.inner(&db)), 0.0, 0.0]);
        let h = T3([v.inner(&b), dv.inner(&b) + v.inner(&db), 0.0, 0.0]);
        Ok((e, h))
    }
}

fn stored(s: &[NextLevel], t: f64) -> Result<&NextLevel> {
    s.iter().find(|x| (x.t - t).abs() < 1e-12).ok_or(Error::MissingSample(t))
}

fn check_input(f: &Field) -> Result<()> {
    if f.rank != Rank::Vector {
        return Err(Error::RankMismatch { expected: 1, got: f.rank.order() as usize });
    }
    let m = f.max_abs_mean();
    if m > 1e-12 * f.l2_norm().max(1.0) {
        return Err(Error::NonZeroMean(m));
    }
    let d = f.divergence().l2_norm();
    if d > DIV_TOL * f.gradient_scale() {
        return Err(Error::NotDivergenceFree(d / f.gradient_scale()));
    }
    Ok(())
}

trait GradientScale {
    fn gradient_scale(&self) -> f64;
}

impl GradientScale for Field {
    /// ‖∇f‖_{L²}, floored so that zero fields pass.
    fn gradient_scale(&self) -> f64 {
        (0..3).map(|a| self.derivative(a).l2_norm().powi(2)).sum::<f64>().sqrt().max(f64::MIN_POSITIVE)
    }
}

/// q = 1 state: v₁ = e^{tΔ}(v_in∗ψ_{ℓ₀}), b₁ likewise, stresses from the quadratic terms.
pub fn bootstrap(v_in: &Field, b_in: &Field, ladder: Ladder) -> Result<IterationState> {
    check_input(v_in)?;
    check_input(b_in)?;
    if v_in.grid != b_in.grid {
        return Err(Error::GridMismatch(v_in.grid.n, b_in.grid.n));
    }
    let ell = ladder.ell(0);
    Ok(IterationState {
        q: 1,
        ladder,
        v_in: v_in.clone(),
        b_in: b_in.clone(),
        source: Source::Heat { v0: v_in.mollify(ell)?, b0: b_in.mollify(ell)? },
    })
}

/// Low-mode solenoidal data: a scaled ABC flow for v_in and two shears for b_in.
pub fn desk_data(g: Grid, amp: f64) -> (Field, Field) {
    let s = |x: f64| (TWO_PI * x).sin();
    let c = |x: f64| (TWO_PI * x).cos();
    let (a, b, cc) = (1.0, 0.8, 0.6);
    let v = Field::vector_from_fn(g, |x| {
        [a * s(x[2]) + cc * c(x[1]), b * s(x[0]) + a * c(x[2]), cc * s(x[1]) + b * c(x[0])].map(|u| amp * u)
    });
    let bf = Field::vector_from_fn(g, |x| [0.7 * c(x[1]), 0.0, 0.5 * s(x[0] + x[1])].map(|u| amp * u));
    (v, bf)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    /// Step bound of the local solves.
    pub dt: f64,
    /// Number of Chebyshev sample times besides t = 0.
    pub samples: usize,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig { dt: 1.0 / 64.0, samples: 8 }
    }
}

/// t = 0 and Chebyshev nodes on (0, 1), snapped to whole travel periods.
pub fn sample_times(setup: &FlowSetup, k: usize) -> Vec<f64> {
    let mut ts = vec![0.0];
    for i in 0..k {
        let c = 0.5 * (1.0 - (std::f64::consts::PI * (i as f64 + 0.5) / k as f64).cos());
        ts.push(setup.snap(c));
    }
    ts.dedup();
    ts
}

/// Everything measured at one sample time.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SampleRecord {
    pub t: f64,
    pub glued_defect: f64,
    pub defect_v: f64,
    pub defect_b: f64,
    pub energy_remainder: Option<f64>,
    pub helicity_remainder: Option<f64>,
    pub temporal: f64,
    pub inverse_wave: f64,
    pub heat: f64,
    pub div_w: f64,
    pub div_d: f64,
    pub r_symmetry: f64,
    pub m_symmetry: f64,
    pub velocity_diff: f64,
    pub magnetic_diff: f64,
    pub r_l1: f64,
    pub m_l1: f64,
    pub gaps: GapReportRow,
    /// (name, L², H³)
    pub families: Vec<(String, f64, f64)>,
}

/// Serializable copy of [`GapReport`].
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct GapReportRow {
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

impl From<&GapReport> for GapReportRow {
    fn from(g: &GapReport) -> Self {
        GapReportRow {
            glued_energy: g.glued_energy,
            cross: g.cross,
            big_e: g.big_e,
            rho_q: g.rho_q,
            rho_q0: g.rho_q0,
            h_q: g.h_q,
            h_bq: g.h_bq,
            mass: g.mass,
            mass_v: g.mass_v,
            aleph: g.aleph,
            eta_minus1: g.eta_minus1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Check {
    AtMost(f64),
    Positive,
    Report,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub name: String,
    /// Which relation the row measures and over which samples.
    pub provenance: String,
    pub target: String,
    pub measured: f64,
    pub check: Check,
    pub pass: Option<bool>,
}

impl Row {
    pub fn new(name: &str, provenance: &str, target: &str, measured: f64, check: Check) -> Row {
        let pass = match check {
            Check::AtMost(tol) => Some(measured <= tol),
            Check::Positive => Some(measured > 0.0),
            Check::Report => None,
        };
        Row {
            name: name.into(),
            provenance: provenance.into(),
            target: target.into(),
            measured,
            check,
            pass,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Ledger {
    pub q: i32,
    pub rows: Vec<Row>,
    pub samples: Vec<SampleRecord>,
}

impl Ledger {
    pub fn row(&self, name: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn failures(&self) -> Vec<&Row> {
        self.rows.iter().filter(|r| r.pass == Some(false)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        to_json(self)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,measured,check,pass,target,provenance\n");
        for r in &self.rows {
            let check = match r.check {
                Check::AtMost(t) => format!("<= {t:e}"),
                Check::Positive => "> 0".into(),
                Check::Report => "report".into(),
            };
            let pass = r.pass.map_or("-", |p| if p { "PASS" } else { "FAIL" });
            let _ = writeln!(s, "{},{:e},{},{},\"{}\",\"{}\"", r.name, r.measured, check, pass, r.target, r.provenance);
        }
        s
    }
}

pub struct StepOutput {
    pub next: IterationState,
    pub ledger: Ledger,
}

fn max_of(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(0.0, f64::max)
}

fn min_of(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(f64::INFINITY, f64::min)
}

/// Largest |A − Aᵀ| (or |A + Aᵀ| and |tr A|) over the grid, relative to the largest entry.
pub fn symmetry_defect(a: &Field, sym: Symmetry) -> f64 {
    let s = a.to_real();
    let scale = max_of(s.iter().flat_map(|c| c.iter().map(|x| x.abs()))).max(f64::MIN_POSITIVE);
    let sign = if sym == Symmetry::Antisymmetric { 1.0 } else { -1.0 };
    let mut worst: f64 = 0.0;
    for p in 0..a.grid.len() {
        for i in 0..3 {
            for j in i..3 {
                worst = worst.max((s[3 * i + j][p] + sign * s[3 * j + i][p]).abs());
            }
        }
        let tr = s[0][p] + s[4][p] + s[8][p];
        if sym == Symmetry::SymTraceFree {
            worst = worst.max(tr.abs());
        }
    }
    worst / scale
}

fn rel_div(f: &Field) -> f64 {
    f.divergence().l2_norm() / f.gradient_scale()
}

/// One step from `state` toward e(t), h(t): mollify, local solves, glue, amplitudes, flows,
/// new stresses, and the ledger.
pub fn one_step(state: &IterationState, e: &Profile, h: &Profile, cfg: &StepConfig) -> Result<StepOutput> {
    let (q, lad, g) = (state.q, state.ladder, state.grid());
    let part = build_partition(1.0, lad.tau(q)).map_err(|e| e.at("time partition"))?;
    let cut = Cutoffs::desk(part, lad.tau(q - 1)).map_err(|e| e.at("cutoffs"))?;
    let setup = FlowSetup::desk(g).map_err(|e| e.at("flow placement"))?;
    let lv = Level { setup: &setup, ladder: &lad, cut: &cut, q };
    let times = sample_times(&setup, cfg.samples);
    let ell = lad.ell(q);
    let runs = solve_locals(
        &part,
        |t| {
            let (v, b, _, _) = state.fields(t)?;
            MhdState::new(v.mollify(ell)?, b.mollify(ell)?, t)
        },
        cfg.dt,
        &times,
    )
    .map_err(|e| e.at("local solutions"))?;

    let window = 1.0 - lad.tau(q);
    let mut records = Vec::with_capacity(times.len());
    let mut tuples = Vec::with_capacity(times.len());
    for &t in &times {
        let gl = glue_at(&part, t, &runs).map_err(|e| e.at("gluing"))?;
        let (ej, hj) = state.invariants(t)?;
        let coef = Coefficients::compute(&lv, &gl, e.jet(ej), h.jet(hj)).map_err(|e| e.at("amplitudes"))?;
        let (ws, ds) = initial_flows(&state.v_in, &state.b_in, ell, lad.ell(q - 1), t)?;
        let temporal = temporal_identity(&setup, &coef).map_err(|e| e.at("temporal flows"))?;
        let inverse_wave = inverse_wave_identity(&setup, &coef).map_err(|e| e.at("inverse traveling wave"))?;
        let bundle = PerturbationBundle::build(&setup, &coef, ws, ds).map_err(|e| e.at("perturbation flows"))?;
        let (w, d) = bundle.assemble();
        let nl = next_level(&gl, &w, &d).map_err(|e| e.at("new stresses"))?;
        let (dv, db) = nl.defect();
        let (vq, bq, _, _) = state.fields(t)?;
        let in_window = t >= window;
        records.push(SampleRecord {
            t,
            glued_defect: {
                let (a, b) = crate::gluing::defect(&gl);
                a.max(b)
            },
            defect_v: dv,
            defect_b: db,
            energy_remainder: in_window.then(|| bundle.energy_remainder()),
            helicity_remainder: in_window.then(|| bundle.helicity_remainder()),
            temporal,
            inverse_wave,
            heat: bundle.heat_residual,
            div_w: rel_div(&w.val),
            div_d: rel_div(&d.val),
            r_symmetry: symmetry_defect(&nl.r, Symmetry::SymTraceFree),
            m_symmetry: symmetry_defect(&nl.m, Symmetry::Antisymmetric),
            velocity_diff: nl.v.sub(&vq).l2_norm(),
            magnetic_diff: nl.b.sub(&bq).l2_norm(),
            r_l1: nl.r.norm(NormSpec::L1)?,
            m_l1: nl.m.norm(NormSpec::L1)?,
            gaps: (&bundle.gaps).into(),
            families: bundle.norms()?.into_iter().map(|(k, a, b)| (k.to_string(), a, b)).collect(),
        });
        tuples.push(nl);
    }

    let ledger = step_ledger(state, &records, &tuples)?;
    let next = IterationState {
        q: q + 1,
        ladder: lad,
        v_in: state.v_in.clone(),
        b_in: state.b_in.clone(),
        source: Source::Samples(tuples),
    };
    Ok(StepOutput { next, ledger })
}

fn step_ledger(state: &IterationState, rec: &[SampleRecord], tuples: &[NextLevel]) -> Result<Ledger> {
    let (q, lad) = (state.q, state.ladder);
    let all = "all sample times";
    let win = "sample times in [1 - tau_q, 1]";
    let mut rows = vec![
        Row::new(
            "relaxed residual",
            &format!("momentum and induction equations at level {}, {all}", q + 1),
            "relative L2 residual",
            max_of(rec.iter().map(|r| r.defect_v.max(r.defect_b))),
            Check::AtMost(1e-6),
        ),
        Row::new(
            "glued residual",
            &format!("glued tuple at level {q}, {all}"),
            "relative L2 residual",
            max_of(rec.iter().map(|r| r.glued_defect)),
            Check::AtMost(1e-7),
        ),
    ];
    let t0 = tuples.iter().find(|x| x.t == 0.0).ok_or(Error::MissingSample(0.0))?;
    let ell = lad.ell(q);
    for (name, got, f) in [("initial pinning v", &t0.v, &state.v_in), ("initial pinning b", &t0.b, &state.b_in)] {
        let want = f.mollify(ell)?;
        let err = got.sub(&want).l2_norm() / want.l2_norm().max(f64::MIN_POSITIVE);
        rows.push(Row::new(name, "t = 0", "relative L2 distance to the mollified initial data", err, Check::AtMost(1e-10)));
    }
    let windowed = |f: fn(&SampleRecord) -> Option<f64>| max_of(rec.iter().filter_map(f).map(f64::abs));
    rows.push(Row::new(
        "energy identity remainder",
        win,
        "int |wp + wh|^2 + |dp + dh|^2 = 3 rho_q + E",
        windowed(|r| r.energy_remainder),
        Check::AtMost(0.05),
    ));
    rows.push(Row::new(
        "helicity identity remainder",
        win,
        "int wh . dh = h_q",
        windowed(|r| r.helicity_remainder),
        Check::AtMost(0.05),
    ));
    for (name, target, f) in [
        ("temporal identity", "d_t of temporal flows against the slow part of div(phi^2 kbar x kbarbar)", (|r: &SampleRecord| r.temporal) as fn(&SampleRecord) -> f64),
        ("inverse wave identity", "d_t of inverse traveling waves against the high-frequency stress", |r| r.inverse_wave),
        ("heat identity", "(d_t - Laplacian) of heat flows against their sources", |r| r.heat),
        ("divergence w", "relative divergence of w_{q+1}", |r| r.div_w),
        ("divergence d", "relative divergence of d_{q+1}", |r| r.div_d),
    ] {
        let tol = if name.starts_with("divergence") { DIV_TOL } else { 1e-8 };
        rows.push(Row::new(name, all, target, max_of(rec.iter().map(f)), Check::AtMost(tol)));
    }
    rows.push(Row::new(
        "R symmetry",
        all,
        "symmetric trace-free new Reynolds stress",
        max_of(rec.iter().map(|r| r.r_symmetry)),
        Check::AtMost(1e-13),
    ));
    rows.push(Row::new(
        "M antisymmetry",
        all,
        "antisymmetric new magnetic stress",
        max_of(rec.iter().map(|r| r.m_symmetry)),
        Check::AtMost(1e-13),
    ));
    let in_win: Vec<&SampleRecord> = rec.iter().filter(|r| r.energy_remainder.is_some()).collect();
    rows.push(Row::new("energy gap", win, "rho_q > 0", min_of(in_win.iter().map(|r| r.gaps.rho_q)), Check::Positive));
    rows.push(Row::new("helicity gap", win, "h_q > 0", min_of(in_win.iter().map(|r| r.gaps.h_q)), Check::Positive));
    let sd = lad.delta(q + 1).sqrt();
    rows.push(Row::new(
        "velocity difference",
        all,
        "||v_{q+1} - v_q||_L2 / delta_{q+1}^{1/2}, bounded by C0",
        max_of(rec.iter().map(|r| r.velocity_diff)) / sd,
        Check::Report,
    ));
    rows.push(Row::new(
        "magnetic difference",
        all,
        "||b_{q+1} - b_q||_L2 / delta_{q+1}^{1/2}, bounded by C0",
        max_of(rec.iter().map(|r| r.magnetic_diff)) / sd,
        Check::Report,
    ));
    let d2 = lad.delta(q + 2);
    rows.push(Row::new(
        "new Reynolds stress L1",
        all,
        "||R_{q+1}||_L1 / delta_{q+2}",
        max_of(rec.iter().map(|r| r.r_l1)) / d2,
        Check::Report,
    ));
    rows.push(Row::new(
        "new magnetic stress L1",
        all,
        "||M_{q+1}||_L1 / delta_{q+2}",
        max_of(rec.iter().map(|r| r.m_l1)) / d2,
        Check::Report,
    ));
    if let Some(first) = rec.first() {
        for (i, (name, _, _)) in first.families.iter().enumerate() {
            let l2 = max_of(rec.iter().map(|r| r.families[i].1));
            let h3 = max_of(rec.iter().map(|r| r.families[i].2));
            rows.push(Row::new(&format!("family {name} L2"), all, "max over samples", l2, Check::Report));
            rows.push(Row::new(&format!("family {name} H3"), all, "max over samples", h3, Check::Report));
        }
    }
    Ok(Ledger { q, rows, samples: rec.to_vec() })
}

/// Norms of a state over time as CSV, with the bootstrap L¹ bound row.
pub fn diagnose(state: &IterationState, times: &[f64]) -> Result<(String, Ledger)> {
    let ts = state.times().unwrap_or_else(|| times.to_vec());
    let mut csv = String::from("t,energy,cross_helicity,v_l2,b_l2,r_l1,m_l1,defect_v,defect_b\n");
    let mut r_l1: f64 = 0.0;
    let mut worst: f64 = 0.0;
    for &t in &ts {
        let x = state.tuple(t)?;
        let (dv, db) = x.defect();
        let (rl, ml) = (x.r.norm(NormSpec::L1)?, x.m.norm(NormSpec::L1)?);
        r_l1 = r_l1.max(rl);
        worst = worst.max(dv.max(db));
        let _ = writeln!(
            csv,
            "{t:e},{:e},{:e},{:e},{:e},{rl:e},{ml:e},{dv:e},{db:e}",
            x.v.inner(&x.v) + x.b.inner(&x.b),
            x.v.inner(&x.b),
            x.v.l2_norm(),
            x.b.l2_norm()
        );
    }
    let mut rows = vec![Row::new(
        "relaxed residual",
        &format!("level {}, {} sample times", state.q, ts.len()),
        "relative L2 residual",
        worst,
        Check::AtMost(if state.q == 1 { 1e-8 } else { 1e-6 }),
    )];
    if state.q == 1 {
        let bound = state.v_in.inner(&state.v_in) + state.b_in.inner(&state.b_in);
        rows.push(Row::new(
            "bootstrap stress L1",
            "max over sample times",
            "||R_1||_L1 <= ||(v_in, b_in)||_L2^2",
            r_l1 - bound,
            Check::AtMost(0.0),
        ));
    }
    Ok((csv, Ledger { q: state.q, rows, samples: vec![] }))
}

/// Shell energy spectrum Σ_{|m| ∈ [k−½, k+½)} |c(m)|².
pub fn spectrum(f: &Field) -> Vec<f64> {
    let g = f.grid;
    let mut out = vec![0.0; g.n];
    for c in &f.comps {
        for (idx, z) in c.iter().enumerate() {
            let m = g.mode(idx);
            let k = ((m[0] * m[0] + m[1] * m[1] + m[2] * m[2]) as f64).sqrt().round() as usize;
            if k < out.len() {
                out[k] += z.norm_sqr();
            }
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    q: i32,
    ladder: Ladder,
    /// Empty for a heat-evolved state.
    times: Vec<f64>,
}

const TUPLE: [&str; 7] = ["v", "b", "p", "r", "m", "dv", "db"];

/// Write a state as TFLD files plus `state.json`.
pub fn save_state(dir: &Path, s: &IterationState) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_field(&dir.join("v_in.tfld"), &s.v_in, 0.0, "v_in")?;
    write_field(&dir.join("b_in.tfld"), &s.b_in, 0.0, "b_in")?;
    let times = match &s.source {
        Source::Heat { .. } => vec![],
        Source::Samples(xs) => {
            for (i, x) in xs.iter().enumerate() {
                for (name, f) in TUPLE.iter().zip([&x.v, &x.b, &x.p, &x.r, &x.m, &x.dv, &x.db]) {
                    write_field(&dir.join(format!("{name}_{i:03}.tfld")), f, x.t, name)?;
                }
            }
            xs.iter().map(|x| x.t).collect()
        }
    };
    let man = Manifest { q: s.q, ladder: s.ladder, times };
    fs::write(dir.join("state.json"), to_json(&man)?)?;
    Ok(())
}

pub fn load_state(dir: &Path) -> Result<IterationState> {
    let man: Manifest = serde_json::from_slice(&fs::read(dir.join("state.json"))?)
        .map_err(|e| Error::Format(e.to_string()))?;
    let (v_in, _) = read_field(&dir.join("v_in.tfld"))?;
    let (b_in, _) = read_field(&dir.join("b_in.tfld"))?;
    if man.times.is_empty() {
        let mut s = bootstrap(&v_in, &b_in, man.ladder)?;
        s.q = man.q;
        return Ok(s);
    }
    let mut xs = Vec::with_capacity(man.times.len());
    for (i, &t) in man.times.iter().enumerate() {
        let f: Vec<Field> = TUPLE
            .iter()
            .map(|name| read_field(&dir.join(format!("{name}_{i:03}.tfld"))).map(|x| x.0))
            .collect::<Result<_>>()?;
        let mut it = f.into_iter();
        let mut next = || it.next().unwrap();
        xs.push(NextLevel { t, v: next(), b: next(), p: next(), r: next(), m: next(), dv: next(), db: next() });
    }
    Ok(IterationState { q: man.q, ladder: man.ladder, v_in, b_in, source: Source::Samples(xs) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_field;

    fn solenoidal(g: Grid, kmax: i64, seed: u64, amp: f64) -> Field {
        random_field(g, Rank::Vector, kmax, seed).leray_project().remove_mean().scale(amp)
    }

    #[test]
    #[ignore]
    fn desk_step_probe() {
        let g = Grid::new(64).unwrap();
        let (v, b) = desk_data(g, 0.1);
        let s = bootstrap(&v, &b, Ladder::desk()).unwrap();
        let lad = Ladder::desk();
        let t0 = std::time::Instant::now();
        let out = one_step(&s, &Profile::energy_default(&lad, 1), &Profile::helicity_default(&lad, 1), &StepConfig::default());
        eprintln!("elapsed {:?}", t0.elapsed());
        let out = out.unwrap();
        eprintln!("{}", out.ledger.to_csv());
        for r in &out.ledger.samples {
            eprintln!("{:.4} dv {:e} db {:e} en {:?} he {:?} gaps {:?}", r.t, r.defect_v, r.defect_b, r.energy_remainder, r.helicity_remainder, r.gaps);
        }
    }

    #[test]
    fn zero_data_gives_zero_state() {
        let g = Grid::new(16).unwrap();
        let z = Field::zeros(g, Rank::Vector);
        let s = bootstrap(&z, &z, Ladder::desk()).unwrap();
        let x = s.tuple(0.3).unwrap();
        for f in [&x.v, &x.b, &x.p, &x.r, &x.m] {
            assert_eq!(f.l2_norm(), 0.0);
        }
    }

    #[test]
    fn bootstrap_rejects_compressible_data() {
        let g = Grid::new(16).unwrap();
        let v = Field::vector_from_fn(g, |x| [(std::f64::consts::TAU * x[0]).sin(), 0.0, 0.0]);
        let z = Field::zeros(g, Rank::Vector);
        assert!(matches!(bootstrap(&v, &z, Ladder::desk()), Err(Error::NotDivergenceFree(_))));
    }

    #[test]
    fn single_mode_stress_matches_closed_form() {
        let g = Grid::new(16).unwrap();
        let tau = std::f64::consts::TAU;
        let v = Field::vector_from_fn(g, |x| [0.0, (tau * x[0]).sin(), 0.0]);
        let z = Field::zeros(g, Rank::Vector);
        let s = bootstrap(&v, &z, Ladder::desk()).unwrap();
        let t = 0.05;
        // the mollifier multiplier on |m| = 1 is read off the evolved amplitude
        let amp = s.fields(t).unwrap().0.to_real()[1][g.index_of([0, 0, 0]) + 4 * 16 * 16];
        let want = Field::tensor_from_fn(g, |x| {
            let u = amp * (tau * x[0]).sin();
            let u2 = u * u;
            [[-u2 / 3.0, 0.0, 0.0], [0.0, 2.0 * u2 / 3.0, 0.0], [0.0, 0.0, -u2 / 3.0]]
        });
        let r = s.tuple(t).unwrap().r;
        assert!(r.sub(&want).l2_norm() < 1e-12 * want.l2_norm());
    }

    #[test]
    fn bootstrap_satisfies_relaxed_system() {
        let g = Grid::new(32).unwrap();
        let s = bootstrap(&solenoidal(g, 3, 1, 0.3), &solenoidal(g, 3, 2, 0.2), Ladder::desk()).unwrap();
        for i in 0..10 {
            let (dv, db) = s.tuple(0.1 * i as f64).unwrap().defect();
            assert!(dv < 1e-8 && db < 1e-8, "{i}: {dv:e} {db:e}");
        }
    }

    #[test]
    fn bootstrap_stress_bound_and_determinism() {
        let g = Grid::new(16).unwrap();
        let s = bootstrap(&solenoidal(g, 2, 3, 0.5), &solenoidal(g, 2, 4, 0.5), Ladder::desk()).unwrap();
        let ts = [0.0, 0.25, 0.5];
        let (csv, l) = diagnose(&s, &ts).unwrap();
        let (csv2, l2) = diagnose(&s, &ts).unwrap();
        assert_eq!(csv, csv2);
        assert_eq!(l.to_json().unwrap(), l2.to_json().unwrap());
        assert!(l.failures().is_empty(), "{:?}", l.failures());
    }

    #[test]
    fn symmetry_defect_detects_tags() {
        let g = Grid::new(8).unwrap();
        let a = random_field(g, Rank::Vector, 2, 1);
        let b = random_field(g, Rank::Vector, 2, 2);
        assert!(symmetry_defect(&anti_stress(&a, &b), Symmetry::Antisymmetric) < 1e-14);
        assert!(symmetry_defect(&sym_stress(&a, &b), Symmetry::SymTraceFree) < 1e-14);
        assert!(symmetry_defect(&crate::products::outer(&a, &b), Symmetry::SymTraceFree) > 1e-3);
    }

    #[test]
    fn spectrum_sums_to_energy() {
        let g = Grid::new(16).unwrap();
        let v = solenoidal(g, 3, 9, 1.0);
        let total: f64 = spectrum(&v).iter().sum();
        assert!((total - v.inner(&v)).abs() < 1e-12 * total);
    }

    #[test]
    fn state_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(8).unwrap();
        let s = bootstrap(&solenoidal(g, 2, 5, 0.5), &solenoidal(g, 2, 6, 0.5), Ladder::desk()).unwrap();
        save_state(dir.path(), &s).unwrap();
        let back = load_state(dir.path()).unwrap();
        let (a, b) = (s.tuple(0.2).unwrap(), back.tuple(0.2).unwrap());
        assert!(a.v.sub(&b.v).l2_norm() < 1e-15 && a.r.sub(&b.r).l2_norm() < 1e-15);
    }
}
