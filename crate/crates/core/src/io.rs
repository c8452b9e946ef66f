//! TFLD v1 field files with JSON sidecars.

use crate::error::{Error, Result};
use crate::torus_field::{Field, Grid, Rank, Symmetry};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 4] = b"TFLD";
const VERSION: u32 = 1;
const HEADER: usize = 14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub n: usize,
    pub rank: u8,
    pub time: f64,
    pub label: String,
}

/// Real-space samples, x₃ fastest, little-endian.
pub fn encode(f: &Field) -> Vec<u8> {
    let data = f.to_real();
    let mut out = Vec::with_capacity(HEADER + 8 * data.len() * f.grid.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(f.grid.n as u32).to_le_bytes());
    out.push(f.rank.order());
    out.push(f.sym.tag());
    for comp in &data {
        for x in comp {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Field> {
    if bytes.len() < HEADER || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing TFLD magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if word(4) != VERSION {
        return Err(Error::Format(format!("unsupported version {}", word(4))));
    }
    let grid = Grid::new(word(8) as usize)?;
    let rank = Rank::from_order(bytes[12])?;
    let sym = Symmetry::from_tag(bytes[13])?;
    let (nc, len) = (rank.ncomp(), grid.len());
    if bytes.len() != HEADER + 8 * nc * len {
        return Err(Error::Format(format!("expected {} payload bytes, found {}", 8 * nc * len, bytes.len() - HEADER)));
    }
    let data: Vec<Vec<f64>> = (0..nc)
        .map(|c| {
            (0..len)
                .map(|p| {
                    let at = HEADER + 8 * (c * len + p);
                    f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
                })
                .collect()
        })
        .collect();
    Ok(Field::from_real(grid, rank, &data)?.with_sym(sym))
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Write `path` and `path.json`.
pub fn write_field(path: &Path, f: &Field, time: f64, label: &str) -> Result<()> {
    fs::write(path, encode(f))?;
    let side = Sidecar { n: f.grid.n, rank: f.rank.order(), time, label: label.to_string() };
    fs::write(sidecar_path(path), to_json(&side)?)?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<(Field, Sidecar)> {
    let f = decode(&fs::read(path)?)?;
    let side: Sidecar =
        serde_json::from_slice(&fs::read(sidecar_path(path))?).map_err(|e| Error::Format(e.to_string()))?;
    if side.n != f.grid.n || side.rank != f.rank.order() {
        return Err(Error::Format("sidecar disagrees with field header".into()));
    }
    Ok((f, side))
}

pub fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_field;

    #[test]
    fn round_trip_preserves_samples_and_tag() {
        let g = Grid::new(8).unwrap();
        let f = random_field(g, Rank::Tensor, 3, 5).with_sym(Symmetry::Antisymmetric);
        let back = decode(&encode(&f)).unwrap();
        assert_eq!(back.sym, Symmetry::Antisymmetric);
        assert!(back.sub(&f).l2_norm() < 1e-15 * f.l2_norm());
    }

    #[test]
    fn header_layout() {
        let g = Grid::new(8).unwrap();
        let b = encode(&Field::zeros(g, Rank::Vector));
        assert_eq!(&b[..4], b"TFLD");
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 8);
        assert_eq!((b[12], b.len()), (1, 14 + 8 * 3 * 512));
    }

    #[test]
    fn rejects_truncated_payload() {
        let g = Grid::new(8).unwrap();
        let b = encode(&Field::zeros(g, Rank::Scalar));
        assert!(matches!(decode(&b[..b.len() - 8]), Err(Error::Format(_))));
        assert!(matches!(decode(b"XXXX"), Err(Error::Format(_))));
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(8).unwrap();
        let f = random_field(g, Rank::Vector, 2, 1);
        let p = dir.path().join("v.tfld");
        write_field(&p, &f, 0.25, "v").unwrap();
        let (back, side) = read_field(&p).unwrap();
        assert_eq!(side, Sidecar { n: 8, rank: 1, time: 0.25, label: "v".into() });
        assert!(back.sub(&f).l2_norm() < 1e-15 * f.l2_norm());
    }
}
