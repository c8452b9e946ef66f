//! Tensor divergence and its two right inverses ℛ (symmetric trace free) and ℛ_a (antisymmetric).

use crate::error::{Error, Result};
use crate::torus_field::{xi, Field, Rank, Symmetry};
use num_complex::Complex64 as C64;

const MEAN_TOL: f64 = 1e-12;
pub const DIV_FREE_TOL: f64 = 1e-10;

/// (div M)_i = Σ_j ∂_j M_{ji}.
pub fn div_tensor(m: &Field) -> Field {
    assert_eq!(m.rank, Rank::Tensor);
    let parts = (0..3)
        .map(|i| {
            let mut acc = m.component(i).derivative(0);
            acc.axpy(1.0, &m.component(3 + i).derivative(1));
            acc.axpy(1.0, &m.component(6 + i).derivative(2));
            acc
        })
        .collect();
    Field::from_components(parts).expect("vector")
}

fn check_mean(v: &Field) -> Result<()> {
    let mean = v.max_abs_mean();
    if mean > MEAN_TOL * v.l2_norm().max(1.0) {
        return Err(Error::NonZeroMean(mean));
    }
    Ok(())
}

/// ℛv = ∂_kΔ⁻¹v^l + ∂_lΔ⁻¹v^k − ½(δ_kl + ∂_k∂_lΔ⁻¹) div Δ⁻¹v.
pub fn inv_div_sym(v: &Field) -> Result<Field> {
    assert_eq!(v.rank, Rank::Vector);
    check_mean(v)?;
    let g = v.grid;
    let mut out = Field::zeros(g, Rank::Tensor);
    for idx in 1..g.len() {
        let k = xi(g.mode(idx), g.n);
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        if k2 == 0.0 {
            continue;
        }
        // û = Δ⁻¹v̂
        let u = [0, 1, 2].map(|a| v.comps[a][idx] * (-1.0 / k2));
        let divu = (u[0] * k[0] + u[1] * k[1] + u[2] * k[2]) * C64::i();
        for a in 0..3 {
            for b in 0..3 {
                let delta = if a == b { 1.0 } else { 0.0 };
                let val = C64::i() * (u[b] * k[a] + u[a] * k[b]) - divu * (0.5 * (delta + k[a] * k[b] / k2));
                out.comps[3 * a + b][idx] = val;
            }
        }
    }
    Ok(out.with_sym(Symmetry::SymTraceFree))
}

/// ℛ_a u = ε_{ijk} Δ⁻¹ (curl u)_k, the sign fixed so that div ℛ_a u = u with (div M)_i = ∂_j M_{ji}.
pub fn inv_div_anti(u: &Field) -> Result<Field> {
    assert_eq!(u.rank, Rank::Vector);
    check_mean(u)?;
    let dn = u.divergence().l2_norm();
    let scale = u.l2_norm();
    if dn > DIV_FREE_TOL * scale {
        return Err(Error::NotDivergenceFree(dn / scale));
    }
    let g = u.grid;
    let mut out = Field::zeros(g, Rank::Tensor);
    for idx in 1..g.len() {
        let k = xi(g.mode(idx), g.n);
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        if k2 == 0.0 {
            continue;
        }
        let uh = [u.comps[0][idx], u.comps[1][idx], u.comps[2][idx]];
        // w = Δ⁻¹ curl u = −(iξ × û)/|ξ|²
        let c = [
            uh[2] * k[1] - uh[1] * k[2],
            uh[0] * k[2] - uh[2] * k[0],
            uh[1] * k[0] - uh[0] * k[1],
        ];
        let w = c.map(|z| z * C64::i() * (-1.0 / k2));
        out.comps[1][idx] = w[2];
        out.comps[3][idx] = -w[2];
        out.comps[2][idx] = -w[1];
        out.comps[6][idx] = w[1];
        out.comps[5][idx] = w[0];
        out.comps[7][idx] = -w[0];
    }
    Ok(out.with_sym(Symmetry::Antisymmetric))
}
