//! Exact local solutions on [t_l, t_{l+2}] and their gluing into (v̄, b̄, p̄, R̊̄, M̊̄).

use crate::cutoffs_gaps::TimePartition;
use crate::error::{Error, Result};
use crate::inverse_divergence::{div_tensor, inv_div_anti, inv_div_sym};
use crate::mhd_solver::{integrate, residuals, MhdState, Snapshot};
use crate::products::{anti_stress, dot, outer_tf, sym_stress};
use crate::smooth::T3;
use crate::torus_field::{Field, Grid, Rank, Symmetry};

const MEAN_TOL: f64 = 1e-12;

/// Local solution started at t_l, stored at the sample times where it carries weight.
#[derive(Clone, Debug)]
pub struct LocalRun {
    pub l: usize,
    pub states: Vec<MhdState>,
    pub steps: usize,
}

impl LocalRun {
    pub fn at(&self, t: f64) -> Option<&MhdState> {
        self.states.iter().find(|s| (s.t - t).abs() < 1e-12)
    }
}

/// Index l of the run weighted by χ_{l+1}, for every run active at t, with its weight.
pub fn weights(part: &TimePartition, t: f64) -> Vec<(usize, T3)> {
    (1..=part.n_q).map(|j| (j - 1, part.chi(j, t))).filter(|(_, c)| c.v() != 0.0).collect()
}

/// Solve every local problem from `initial(t_l)` and keep the states at `samples`.
pub fn solve_locals(
    part: &TimePartition,
    initial: impl Fn(f64) -> Result<MhdState>,
    dt: f64,
    samples: &[f64],
) -> Result<Vec<LocalRun>> {
    let mut runs = Vec::with_capacity(part.n_q);
    for l in 0..part.n_q {
        let start = part.t(l);
        let end = part.t(l + 2).min(part.t_end);
        let keep: Vec<f64> = samples
            .iter()
            .copied()
            .filter(|&t| t >= start - 1e-14 && t <= end + 1e-14 && part.chi(l + 1, t).v() != 0.0)
            .collect();
        let mut init = initial(start)?;
        init.t = start;
        let horizon = keep.iter().copied().fold(start, f64::max);
        let tr = integrate(&init, horizon, dt, &keep).map_err(|e| e.at(&format!("local solution {l}")))?;
        runs.push(LocalRun { l, states: tr.states, steps: tr.steps });
    }
    Ok(runs)
}

/// Glued tuple at one time with first time derivatives.
#[derive(Clone, Debug)]
pub struct Glued {
    pub t: f64,
    pub v: Field,
    pub b: Field,
    pub p: Field,
    pub r: Field,
    pub m: Field,
    pub dv: Field,
    pub db: Field,
    pub dr: Field,
    pub dm: Field,
}

impl Glued {
    fn single(s: Snapshot) -> Glued {
        let g = s.v.grid;
        let zt = Field::zeros(g, Rank::Tensor);
        Glued {
            t: s.t,
            v: s.v,
            b: s.b,
            p: s.p,
            r: zt.clone().with_sym(Symmetry::SymTraceFree),
            m: zt.clone().with_sym(Symmetry::Antisymmetric),
            dv: s.dv,
            db: s.db,
            dr: zt.clone(),
            dm: zt,
        }
    }

    pub fn grid(&self) -> Grid {
        self.v.grid
    }
}

/// Glue two exact solutions with weight c on the earlier one.
pub fn glue_pair(c: T3, early: &Snapshot, late: &Snapshot) -> Result<Glued> {
    let (dv, db) = (early.v.sub(&late.v), early.b.sub(&late.b));
    if dv.max_abs_mean() > MEAN_TOL * dv.l2_norm().max(1.0) || db.max_abs_mean() > MEAN_TOL * db.l2_norm().max(1.0) {
        return Err(Error::MeanMismatch);
    }
    let (dv, db) = (dv.remove_mean(), db.remove_mean());
    let (ddv, ddb) = (early.dv.sub(&late.dv), early.db.sub(&late.db));
    let (c0, c1, c2) = (c.v(), c.d(1), c.d(2));
    let (g0, g1) = (c0 * (1.0 - c0), c1 * (1.0 - 2.0 * c0));

    let v = late.v.lincomb(1.0, &dv, c0);
    let b = late.b.lincomb(1.0, &db, c0);
    let mut vdot = late.dv.lincomb(1.0, &dv, c1);
    vdot.axpy(c0, &ddv);
    let mut bdot = late.db.lincomb(1.0, &db, c1);
    bdot.axpy(c0, &ddb);

    let jump = dot(&dv, &dv).sub(&dot(&db, &db)).remove_mean();
    let mut p = early.p.lincomb(c0, &late.p, 1.0 - c0);
    p.axpy(g0 / 3.0, &jump);

    let (rv, rdv) = (inv_div_sym(&dv)?, inv_div_sym(&ddv.remove_mean())?);
    let (ab, adb) = (inv_div_anti(&db)?, inv_div_anti(&ddb.remove_mean())?);
    let q = sym_stress(&dv, &db);
    let a = anti_stress(&dv, &db);
    let r = rv.lincomb(c1, &q, -g0).with_sym(Symmetry::SymTraceFree);
    let m = ab.lincomb(c1, &a, -g0).with_sym(Symmetry::Antisymmetric);

    let dq = outer_tf(&ddv, &dv)
        .add(&outer_tf(&dv, &ddv))
        .sub(&outer_tf(&ddb, &db))
        .sub(&outer_tf(&db, &ddb));
    let da = anti_stress(&ddv, &db).add(&anti_stress(&dv, &ddb));
    let mut dr = rv.lincomb(c2, &rdv, c1);
    dr.axpy(-g1, &q);
    dr.axpy(-g0, &dq);
    let mut dm = ab.lincomb(c2, &adb, c1);
    dm.axpy(-g1, &a);
    dm.axpy(-g0, &da);
    Ok(Glued { t: late.t, v, b, p, r, m, dv: vdot, db: bdot, dr, dm })
}

/// Glued tuple at t from the stored local runs.
pub fn glue_at(part: &TimePartition, t: f64, runs: &[LocalRun]) -> Result<Glued> {
    let w = weights(part, t);
    let snap = |l: usize| -> Result<Snapshot> {
        let run = runs.iter().find(|r| r.l == l).ok_or(Error::MissingSample(t))?;
        Ok(Snapshot::of(run.at(t).ok_or(Error::MissingSample(t))?))
    };
    match w.as_slice() {
        [(l, _)] => Ok(Glued::single(snap(*l)?)),
        [(la, c), (lb, _)] => glue_pair(*c, &snap(*la)?, &snap(*lb)?),
        _ => Err(Error::MissingSample(t)),
    }
}

/// Relative L² defects of the glued momentum and induction equations.
pub fn defect(gl: &Glued) -> (f64, f64) {
    relaxed_defect(&gl.v, &gl.b, &gl.p, &gl.r, &gl.m, &gl.dv, &gl.db)
}

/// Relative L² defects of the relaxed system for (v, b, p, R̊, M̊) with time derivatives.
pub fn relaxed_defect(v: &Field, b: &Field, p: &Field, r: &Field, m: &Field, dv: &Field, db: &Field) -> (f64, f64) {
    let (rv, rb) = residuals(v, b, p, dv, db);
    let (dr, dm) = (div_tensor(r), div_tensor(m));
    let ev = rv.sub(&dr).l2_norm();
    let eb = rb.sub(&dm).l2_norm();
    let sv = dv.l2_norm() + v.laplacian().l2_norm() + dr.l2_norm();
    let sb = db.l2_norm() + b.laplacian().l2_norm() + dm.l2_norm();
    (ev / sv.max(f64::MIN_POSITIVE), eb / sb.max(f64::MIN_POSITIVE))
}
