//! Dealiased bilinear products: pointwise product on the grid, then 2/3-rule truncation.

use crate::torus_field::{Field, Grid, Rank, Samples, Symmetry};

/// (a⊗b)_{ij} = a_i b_j on samples.
pub fn outer_samples(a: &Samples, b: &Samples) -> Samples {
    let mut out = Vec::with_capacity(9);
    for i in 0..3 {
        for j in 0..3 {
            out.push(a[i].iter().zip(&b[j]).map(|(x, y)| x * y).collect());
        }
    }
    out
}

pub fn dot_samples(a: &Samples, b: &Samples) -> Vec<f64> {
    let len = a[0].len();
    (0..len).map(|p| (0..a.len()).map(|c| a[c][p] * b[c][p]).sum()).collect()
}

/// Remove one third of the trace from the diagonal.
pub fn trace_free_samples(m: &mut Samples) {
    let len = m[0].len();
    for p in 0..len {
        let t = (m[0][p] + m[4][p] + m[8][p]) / 3.0;
        m[0][p] -= t;
        m[4][p] -= t;
        m[8][p] -= t;
    }
}

pub fn dealias(grid: Grid, rank: Rank, data: &Samples) -> Field {
    Field::from_real_dealiased(grid, rank, data).expect("dealias rank")
}

pub fn outer(a: &Field, b: &Field) -> Field {
    dealias(a.grid, Rank::Tensor, &outer_samples(&a.to_real(), &b.to_real()))
}

/// a∘⊗b = a⊗b − ⅓(a·b) Id.
pub fn outer_tf(a: &Field, b: &Field) -> Field {
    let mut m = outer_samples(&a.to_real(), &b.to_real());
    trace_free_samples(&mut m);
    dealias(a.grid, Rank::Tensor, &m)
}

/// a∘⊗a − b∘⊗b, symmetric and trace free.
pub fn sym_stress(a: &Field, b: &Field) -> Field {
    let (ra, rb) = (a.to_real(), b.to_real());
    let mut m = outer_samples(&ra, &ra);
    let mb = outer_samples(&rb, &rb);
    for (x, y) in m.iter_mut().zip(&mb) {
        x.iter_mut().zip(y).for_each(|(p, q)| *p -= q);
    }
    trace_free_samples(&mut m);
    dealias(a.grid, Rank::Tensor, &m).with_sym(Symmetry::SymTraceFree)
}

/// a⊗b − b⊗a, antisymmetric.
pub fn anti_stress(a: &Field, b: &Field) -> Field {
    let (ra, rb) = (a.to_real(), b.to_real());
    let ab = outer_samples(&ra, &rb);
    let mut m = ab.clone();
    for i in 0..3 {
        for j in 0..3 {
            m[3 * i + j] = ab[3 * i + j].iter().zip(&ab[3 * j + i]).map(|(x, y)| x - y).collect();
        }
    }
    dealias(a.grid, Rank::Tensor, &m).with_sym(Symmetry::Antisymmetric)
}

pub fn dot(a: &Field, b: &Field) -> Field {
    dealias(a.grid, Rank::Scalar, &vec![dot_samples(&a.to_real(), &b.to_real())])
}

/// Pointwise product of a scalar field with a field of any rank.
pub fn scalar_mul(s: &Field, f: &Field) -> Field {
    let rs = s.to_real();
    let data: Samples = f.to_real().iter().map(|c| c.iter().zip(&rs[0]).map(|(x, y)| x * y).collect()).collect();
    dealias(f.grid, f.rank, &data).with_sym(f.sym)
}

pub fn transpose(m: &Field) -> Field {
    let mut r = m.clone();
    for i in 0..3 {
        for j in 0..3 {
            r.comps[3 * i + j] = m.comps[3 * j + i].clone();
        }
    }
    r
}

pub fn trace(m: &Field) -> Field {
    let mut t = m.component(0);
    t.axpy(1.0, &m.component(4));
    t.axpy(1.0, &m.component(8));
    t
}

/// f·Id as a tensor field.
pub fn times_identity(f: &Field) -> Field {
    let z = Field::zeros(f.grid, Rank::Scalar);
    let parts =
        (0..9).map(|k| if k % 4 == 0 { f.clone() } else { z.clone() }).collect();
    Field::from_components(parts).expect("tensor")
}

/// Largest pointwise deviation from (symmetric, trace free) or antisymmetric form.
pub fn symmetry_residual(m: &Field) -> (f64, f64, f64) {
    let r = m.to_real();
    let (mut sym, mut tr, mut anti) = (0.0f64, 0.0f64, 0.0f64);
    for p in 0..r[0].len() {
        for i in 0..3 {
            for j in 0..3 {
                sym = sym.max((r[3 * i + j][p] - r[3 * j + i][p]).abs());
                anti = anti.max((r[3 * i + j][p] + r[3 * j + i][p]).abs());
            }
        }
        tr = tr.max((r[0][p] + r[4][p] + r[8][p]).abs());
    }
    (sym, tr, anti)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_field;

    #[test]
    fn exact_for_band_limited_inputs() {
        // oracle: product on a grid twice as fine, truncated to the coarse band
        let g = Grid::new(16).unwrap();
        let fine = Grid::new(32).unwrap();
        let a = random_field(g, Rank::Scalar, 5, 11);
        let b = random_field(g, Rank::Scalar, 5, 12);
        let lift = |f: &Field| {
            let mut h = Field::zeros(fine, Rank::Scalar);
            for idx in 0..g.len() {
                h.comps[0][fine.index_of(g.mode(idx))] = f.comps[0][idx];
            }
            h
        };
        let p = scalar_mul(&a, &b);
        let pf = scalar_mul(&lift(&a), &lift(&b));
        for idx in 0..g.len() {
            let m = g.mode(idx);
            if g.in_band(m) {
                assert!((p.comps[0][idx] - pf.comps[0][fine.index_of(m)]).norm() < 1e-12, "{m:?}");
            }
        }
    }

    #[test]
    fn stress_tags_hold() {
        let g = Grid::new(8).unwrap();
        let a = random_field(g, Rank::Vector, 2, 1);
        let b = random_field(g, Rank::Vector, 2, 2);
        let (s, t, _) = symmetry_residual(&sym_stress(&a, &b));
        assert!(s < 1e-13 && t < 1e-13);
        let (_, _, an) = symmetry_residual(&anti_stress(&a, &b));
        assert!(an < 1e-13);
        let e = sym_stress(&a, &a);
        assert!(e.l2_norm() < 1e-14);
        let tt = trace(&outer(&a, &b)).sub(&dot(&a, &b));
        assert!(tt.l2_norm() < 1e-13);
    }
}
