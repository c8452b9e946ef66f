//! Helpers shared by unit tests.

use crate::fft::neg_index;
use crate::torus_field::{Field, Grid, Rank};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random real field band-limited to |m_a| ≤ kmax.
pub fn random_field(grid: Grid, rank: Rank, kmax: i64, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = Field::zeros(grid, rank);
    for c in f.comps.iter_mut() {
        for idx in 0..grid.len() {
            let m = grid.mode(idx);
            if m.iter().all(|&k| k.abs() <= kmax) {
                c[idx] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
    }
    // enforce conjugate symmetry
    let n = grid.n;
    let half = n as i64 / 2;
    for c in f.comps.iter_mut() {
        for idx in 0..grid.len() {
            let j = neg_index(idx, n);
            if idx < j {
                c[j] = c[idx].conj();
            } else if idx == j {
                c[idx] = C64::new(c[idx].re, 0.0);
            }
            if grid.mode(idx).iter().any(|&k| k == -half) {
                c[idx] = C64::default();
            }
        }
    }
    f
}

