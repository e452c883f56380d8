//! Binary field snapshots.
//!
//! Layout (little-endian): `b"GKDV"`, version `u32`, `L: f64`, `n: u64`,
//! `t: f64`, then `n` samples as `f64`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid1D};

pub const MAGIC: &[u8; 4] = b"GKDV";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 8;

pub fn encode(field: &Field, t: f64) -> Vec<u8> {
    let g = field.grid();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * g.n());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&g.length().to_le_bytes());
    out.extend_from_slice(&(g.n() as u64).to_le_bytes());
    out.extend_from_slice(&t.to_le_bytes());
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(Field, f64)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated { expected: HEADER_LEN, found: bytes.len() });
    }
    let word = |at: usize| -> [u8; 8] { bytes[at..at + 8].try_into().unwrap() };
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::SnapshotVersion { found: version, expected: VERSION });
    }
    let length = f64::from_le_bytes(word(8));
    let n = u64::from_le_bytes(word(16)) as usize;
    let t = f64::from_le_bytes(word(24));
    let grid = Grid1D::new(length, n)?;
    let expected = HEADER_LEN + 8 * n;
    if bytes.len() != expected {
        return Err(Error::Truncated { expected, found: bytes.len() });
    }
    let values = (0..n).map(|i| f64::from_le_bytes(word(HEADER_LEN + 8 * i))).collect();
    Ok((Field::new(grid, values)?, t))
}

pub fn save_snapshot(field: &Field, t: f64, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(field, t))?;
    Ok(())
}

pub fn load_snapshot(path: impl AsRef<Path>) -> Result<(Field, f64)> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Field {
        let g = Grid1D::new(12.5, 32).unwrap();
        Field::from_fn(g, |x| (0.7 * x).sin() * (-x * x / 9.0).exp() + 1e-300)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let f = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.bin");
        save_snapshot(&f, -3.25, &path).unwrap();
        let (g, t) = load_snapshot(&path).unwrap();
        assert_eq!(t.to_bits(), (-3.25f64).to_bits());
        assert_eq!(g.grid(), f.grid());
        for (a, b) in f.values().iter().zip(g.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = encode(&sample(), 0.0);
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::BadMagic)));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode(&sample(), 0.0);
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode(&bytes),
            Err(Error::SnapshotVersion { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn truncated() {
        let bytes = encode(&sample(), 0.0);
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
        assert!(matches!(decode(&bytes[..10]), Err(Error::Truncated { .. })));
    }
}
