//! Binary checkpoints of the stress state.
//!
//! Layout, all little-endian: the magic `OBKM`, `u32` version, `u32` n,
//! then `f64` length, t, ν_s, ν_p, λ, then the six packed components
//! `11, 22, 33, 12, 13, 23` of n³ `f64` each, first axis fastest.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::SymTensorField;
use crate::grid::Grid;

pub const MAGIC: [u8; 4] = *b"OBKM";
pub const VERSION: u32 = 1;
/// Bytes before the payload.
pub const HEADER_LEN: usize = 4 + 4 + 4 + 5 * 8;

/// A stress state with the time and parameters it was produced under.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub t: f64,
    pub nu_s: f64,
    pub nu_p: f64,
    /// May be infinite.
    pub lambda: f64,
    pub sigma: SymTensorField,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let g = self.sigma.grid();
        let mut out = Vec::with_capacity(HEADER_LEN + 6 * g.points() * 8);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(g.n() as u32).to_le_bytes());
        for v in [g.length(), self.t, self.nu_s, self.nu_p, self.lambda] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.sigma.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes a checkpoint; `origin` only labels errors.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fail = |message: String| Error::Checkpoint {
            path: origin.to_path_buf(),
            message,
        };
        if bytes.len() < HEADER_LEN {
            return Err(fail(format!(
                "header needs {HEADER_LEN} bytes, file has {}",
                bytes.len()
            )));
        }
        if bytes[..4] != MAGIC {
            return Err(fail(format!(
                "bad magic {:?}, expected {:?}",
                &bytes[..4],
                MAGIC
            )));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let version = u32_at(4);
        if version != VERSION {
            return Err(fail(format!("version {version}, expected {VERSION}")));
        }
        let n = u32_at(8) as usize;
        let [length, t, nu_s, nu_p, lambda] = [0, 1, 2, 3, 4].map(|i| f64_at(12 + 8 * i));
        let grid = Grid::new(n, length).map_err(|e| fail(e.to_string()))?;
        let expected = HEADER_LEN + 6 * grid.points() * 8;
        if bytes.len() != expected {
            return Err(fail(format!(
                "expected {expected} bytes for n = {n}, found {}",
                bytes.len()
            )));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let sigma = SymTensorField::from_data(&grid, data).map_err(|e| fail(e.to_string()))?;
        Ok(Self {
            t,
            nu_s,
            nu_p,
            lambda,
            sigma,
        })
    }
}

/// Writes through a temporary file and renames, so readers never see a
/// partial checkpoint.
pub fn write_checkpoint(cp: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&cp.to_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Checkpoint::from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state(seed: u64) -> Checkpoint {
        let g = Grid::new(8, 3.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..6 * g.points())
            .map(|_| rng.random_range(-1e3..1e3))
            .collect();
        Checkpoint {
            t: 0.125,
            nu_s: 1.0,
            nu_p: 0.5,
            lambda: f64::INFINITY,
            sigma: SymTensorField::from_data(&g, data).unwrap(),
        }
    }

    fn message(e: Error) -> String {
        match e {
            Error::Checkpoint { message, .. } => message,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn layout_is_fixed() {
        let cp = state(1);
        let b = cp.to_bytes();
        assert_eq!(&b[..4], b"OBKM");
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 8);
        assert_eq!(b.len(), HEADER_LEN + 6 * 512 * 8);
        let first = f64::from_le_bytes(b[HEADER_LEN..HEADER_LEN + 8].try_into().unwrap());
        assert_eq!(first.to_bits(), cp.sigma.component(0)[0].to_bits());
    }

    #[test]
    fn truncation_and_version_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        let b = state(2).to_bytes();
        std::fs::write(&p, &b[..b.len() - 8]).unwrap();
        let msg = message(read_checkpoint(&p).unwrap_err());
        assert!(
            msg.contains(&format!("{}", b.len())) && msg.contains(&format!("{}", b.len() - 8)),
            "{msg}"
        );
        let mut v2 = b.clone();
        v2[4] = 2;
        std::fs::write(&p, &v2).unwrap();
        assert!(message(read_checkpoint(&p).unwrap_err()).contains("version 2"));
        let mut bad = b;
        bad[0] = b'X';
        std::fs::write(&p, &bad).unwrap();
        assert!(message(read_checkpoint(&p).unwrap_err()).contains("magic"));
        std::fs::write(&p, b"OBKM").unwrap();
        assert!(read_checkpoint(&p).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>()) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("c.bin");
            let cp = state(seed);
            write_checkpoint(&cp, &p).unwrap();
            let back = read_checkpoint(&p).unwrap();
            let bits = |c: &Checkpoint| c.sigma.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&cp));
            prop_assert_eq!(back.t.to_bits(), cp.t.to_bits());
            prop_assert_eq!(back.lambda, cp.lambda);
        }
    }
}
