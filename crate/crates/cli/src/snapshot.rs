//! Binary field snapshots.
//!
//! Layout, all little-endian: magic `CNS1`; `u32` nx, ny; `f64` lx, ly, t;
//! then `n` and `c` (`nx*ny` each), `u_x` (`(nx+1)*ny`), `u_y` (`nx*(ny+1)`).

use std::fs;
use std::path::Path;

use thiserror::Error;

use stochem_core::dynamics::State;
use stochem_core::grid::{make_grid, ScalarField, VectorField};

pub const MAGIC: &[u8; 4] = b"CNS1";
const HEADER: usize = 4 + 2 * 4 + 3 * 8;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a snapshot (bad magic bytes)")]
    BadMagic,
    #[error("snapshot truncated or oversized: expected {expected} bytes, found {found}")]
    Size { expected: usize, found: usize },
    #[error("invalid snapshot contents: {0}")]
    Invalid(String),
}

/// Size in bytes of the snapshot of an `nx` by `ny` state.
pub fn snapshot_len(nx: usize, ny: usize) -> usize {
    HEADER + 8 * (2 * nx * ny + (nx + 1) * ny + nx * (ny + 1))
}

pub fn encode(state: &State) -> Vec<u8> {
    let g = state.grid();
    let mut out = Vec::with_capacity(snapshot_len(g.nx, g.ny));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(g.nx as u32).to_le_bytes());
    out.extend_from_slice(&(g.ny as u32).to_le_bytes());
    for v in [g.lx, g.ly, state.t] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for block in [state.n.values(), state.c.values(), state.u.ux_values(), state.u.uy_values()] {
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<State, SnapshotError> {
    if bytes.len() < HEADER {
        return Err(SnapshotError::Size { expected: HEADER, found: bytes.len() });
    }
    if &bytes[..4] != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let (nx, ny) = (u32_at(4), u32_at(8));
    let expected = snapshot_len(nx, ny);
    if bytes.len() != expected {
        return Err(SnapshotError::Size { expected, found: bytes.len() });
    }
    let (lx, ly, t) = (f64_at(12), f64_at(20), f64_at(28));
    let grid = make_grid(nx, ny, lx, ly).map_err(|e| SnapshotError::Invalid(e.to_string()))?;
    let mut offset = HEADER;
    let mut take = |len: usize| {
        let v: Vec<f64> = (0..len).map(|k| f64_at(offset + 8 * k)).collect();
        offset += 8 * len;
        v
    };
    let n = take(nx * ny);
    let c = take(nx * ny);
    let ux = take((nx + 1) * ny);
    let uy = take(nx * (ny + 1));
    let invalid = |e: stochem_core::SimError| SnapshotError::Invalid(e.to_string());
    Ok(State {
        u: VectorField::from_components(grid, ux, uy).map_err(invalid)?,
        c: ScalarField::from_values(grid, c).map_err(invalid)?,
        n: ScalarField::from_values(grid, n).map_err(invalid)?,
        t,
    })
}

pub fn write_snapshot(state: &State, path: &Path) -> Result<(), SnapshotError> {
    fs::write(path, encode(state))?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<State, SnapshotError> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> State {
        let g = make_grid(4, 4, 1.0, 2.0).unwrap();
        let n = ScalarField::from_fn(g, |x, y| 1.0 + x * y);
        let c = ScalarField::from_fn(g, |x, _| 0.1 + x / 3.0);
        let mut u = VectorField::from_fns(g, |x, y| x * (1.0 - x) * y, |_, y| y.sin());
        u.enforce_no_slip();
        State::new(u, c, n, 0.125).unwrap()
    }

    #[test]
    fn four_by_four_is_612_bytes() {
        assert_eq!(encode(&sample()).len(), 612);
        assert_eq!(snapshot_len(4, 4), 612);
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let s = sample();
        let back = decode(&encode(&s)).unwrap();
        assert_eq!(back.t.to_bits(), s.t.to_bits());
        assert_eq!(back.n, s.n);
        assert_eq!(back.c, s.c);
        assert_eq!(back.u, s.u);
    }

    #[test]
    fn damaged_files_are_rejected() {
        let bytes = encode(&sample());
        assert!(matches!(decode(&bytes[..611]), Err(SnapshotError::Size { expected: 612, found: 611 })));
        assert!(matches!(decode(&bytes[..10]), Err(SnapshotError::Size { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(SnapshotError::BadMagic)));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(decode(&long), Err(SnapshotError::Size { .. })));
    }
}
