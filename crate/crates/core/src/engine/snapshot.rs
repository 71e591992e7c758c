//! Flat little-endian snapshot of an [`OvqState`].
//!
//! Layout: magic, version (u32), dtype width in bytes (u8), d (u32), n_max,
//! n_active, tokens_seen, chunks_seen (u64 each), the configuration, then the
//! active rows of `means_k` and `means_v` row-major as f64 and the counts as
//! u64.

use std::io::{Read, Write};
use std::path::Path;

use super::config::{Ablation, OvqConfig, Similarity, UpdateRule};
use super::state::OvqState;
use crate::error::{OvqError, Result};
use crate::matrix::{Matrix, Scalar};

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"OVQS";
pub const SNAPSHOT_VERSION: u32 = 1;

impl<T: Scalar> OvqState<T> {
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        let cfg = self.config();
        w.write_all(&SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&[std::mem::size_of::<T>() as u8])?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        for x in [
            cfg.n_max as u64,
            self.n_active() as u64,
            self.tokens_seen(),
            self.chunks_seen(),
            cfg.chunk_len as u64,
        ] {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(&cfg.beta.to_le_bytes())?;
        let (tag, rate, expected) = match cfg.ablation {
            Ablation::None => (0u8, 0.0, 0u64),
            Ablation::RandomAssign => (1, 0.0, 0),
            Ablation::LinearGrowth { expected_len } => (2, 0.0, expected_len as u64),
            Ablation::ConstantLr { rate } => (3, rate, 0),
        };
        w.write_all(&[
            cfg.normalize_centroids as u8,
            match cfg.update_rule {
                UpdateRule::MiniBatch => 0,
                UpdateRule::Sequential => 1,
            },
            match cfg.similarity {
                Similarity::KeyDot => 0,
                Similarity::Joint => 1,
            },
            tag,
        ])?;
        w.write_all(&rate.to_le_bytes())?;
        w.write_all(&expected.to_le_bytes())?;
        w.write_all(&cfg.seed.to_le_bytes())?;
        for m in [self.means_k(), self.means_v()] {
            for &x in m.as_slice() {
                w.write_all(&x.as_f64().to_le_bytes())?;
            }
        }
        for &c in self.counts() {
            w.write_all(&c.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != SNAPSHOT_MAGIC {
            return Err(OvqError::InvalidState("not an OVQ state snapshot".into()));
        }
        let version = u32::from_le_bytes(take(&mut r)?);
        if version != SNAPSHOT_VERSION {
            return Err(OvqError::InvalidState(format!(
                "unsupported snapshot version {version}"
            )));
        }
        let [width] = take::<1, _>(&mut r)?;
        if width as usize != std::mem::size_of::<T>() {
            return Err(OvqError::InvalidState(format!(
                "snapshot holds {}-bit floats",
                width as usize * 8
            )));
        }
        let d = u32::from_le_bytes(take(&mut r)?) as usize;
        let n_max = read_u64(&mut r)? as usize;
        let n_active = read_u64(&mut r)? as usize;
        let tokens_seen = read_u64(&mut r)?;
        let chunks_seen = read_u64(&mut r)?;
        let chunk_len = read_u64(&mut r)? as usize;
        let beta = read_f64(&mut r)?;
        let [normalize, rule, sim, tag] = take::<4, _>(&mut r)?;
        let rate = read_f64(&mut r)?;
        let expected = read_u64(&mut r)? as usize;
        let seed = read_u64(&mut r)?;

        let bad = |what: &str| OvqError::InvalidState(format!("bad {what} byte in snapshot"));
        let config = OvqConfig {
            n_max,
            chunk_len,
            beta,
            normalize_centroids: match normalize {
                0 => false,
                1 => true,
                _ => return Err(bad("normalization")),
            },
            ablation: match tag {
                0 => Ablation::None,
                1 => Ablation::RandomAssign,
                2 => Ablation::LinearGrowth { expected_len: expected },
                3 => Ablation::ConstantLr { rate },
                _ => return Err(bad("ablation")),
            },
            update_rule: match rule {
                0 => UpdateRule::MiniBatch,
                1 => UpdateRule::Sequential,
                _ => return Err(bad("update rule")),
            },
            similarity: match sim {
                0 => Similarity::KeyDot,
                1 => Similarity::Joint,
                _ => return Err(bad("similarity")),
            },
            seed,
            fault: None,
        };
        if d == 0 || n_active > n_max {
            return Err(OvqError::InvalidState("snapshot header is inconsistent".into()));
        }
        let read_matrix = |r: &mut R| -> Result<Matrix<T>> {
            let mut data = Vec::with_capacity(n_active * d);
            for _ in 0..n_active * d {
                data.push(T::from_f64(read_f64(r)?));
            }
            Matrix::from_vec(n_active, d, data)
        };
        let means_k = read_matrix(&mut r)?;
        let means_v = read_matrix(&mut r)?;
        let counts = (0..n_active).map(|_| read_u64(&mut r)).collect::<Result<Vec<_>>>()?;
        OvqState::from_parts(config, d, means_k, means_v, counts, tokens_seen, chunks_seen)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_snapshot(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_snapshot(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(take(r)?))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(take(r)?))
}
