//! Streaming covariance over training batches.
//!
//! During an epoch every feature batch `Z_B` contributes its Gram matrix
//! `Z_B Z_Bᵀ` to a running sum; dividing by the total column count at epoch
//! end yields `(1/N) Z Zᵀ` for the whole epoch, *exactly* — storing raw sums
//! instead of per-batch means makes ragged final batches a non-issue and
//! keeps memory at a single `p×p` matrix plus a counter.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::manifold::SampleMatrix;

const SNAPSHOT_VERSION: u8 = 1;

/// Running Gram-sum accumulator for one epoch of feature batches.
#[derive(Debug, Clone)]
pub struct CovAccumulator {
    dim: usize,
    /// Row-major `dim×dim` sum of `Z_B Z_Bᵀ` over ingested batches; kept
    /// exactly symmetric by mirroring the computed upper triangle.
    gram_sum: Vec<f64>,
    sample_count: u64,
    epoch_tag: u64,
}

impl CovAccumulator {
    pub fn new(dim: usize, epoch_tag: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionZero);
        }
        Ok(Self {
            dim,
            gram_sum: vec![0.0; dim * dim],
            sample_count: 0,
            epoch_tag,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample_count(&self) -> u64 {
        self.sample_count
    }

    pub fn epoch_tag(&self) -> u64 {
        self.epoch_tag
    }

    pub fn gram_sum(&self) -> &[f64] {
        &self.gram_sum
    }

    /// Adds `Z_B Z_Bᵀ` to the running sum and the batch width to the counter.
    pub fn accumulate(&mut self, z: &SampleMatrix) -> Result<()> {
        if z.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: z.dim(),
            });
        }
        let d = self.dim;
        for col in 0..z.count() {
            let c = z.column(col);
            for i in 0..d {
                let ci = c[i];
                if ci == 0.0 {
                    continue;
                }
                for j in i..d {
                    self.gram_sum[i * d + j] += ci * c[j];
                }
            }
        }
        for i in 0..d {
            for j in (i + 1)..d {
                self.gram_sum[j * d + i] = self.gram_sum[i * d + j];
            }
        }
        self.sample_count += z.count() as u64;
        Ok(())
    }

    /// Entrywise sum of two accumulators over disjoint batch sets; identical
    /// to having accumulated all their batches sequentially.
    pub fn merge(&mut self, other: &CovAccumulator) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        for (a, b) in self.gram_sum.iter_mut().zip(&other.gram_sum) {
            *a += b;
        }
        self.sample_count += other.sample_count;
        Ok(())
    }

    /// `gram_sum / sample_count` — the covariance of every column seen so
    /// far, exact for any batch partition.
    pub fn finalize(&self) -> Result<SymMatrix> {
        if self.sample_count == 0 {
            return Err(Error::EmptyAccumulator);
        }
        let scale = 1.0 / self.sample_count as f64;
        let data = self.gram_sum.iter().map(|x| x * scale).collect();
        SymMatrix::new(self.dim, data)
    }

    /// Binary snapshot: version byte, little-endian u32 dim, u64 count, then
    /// `dim²` f64 values row-major. The epoch tag is deliberately not
    /// persisted; a restored accumulator starts with tag 0.
    pub fn write_snapshot(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&[SNAPSHOT_VERSION])?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&self.sample_count.to_le_bytes())?;
        for v in &self.gram_sum {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot(r: &mut impl Read) -> Result<Self> {
        let mut version = [0u8; 1];
        read_exact(r, &mut version, "covariance snapshot header")?;
        if version[0] != SNAPSHOT_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "covariance snapshot",
                got: version[0],
            });
        }
        let mut b4 = [0u8; 4];
        read_exact(r, &mut b4, "covariance snapshot dimension")?;
        let dim = u32::from_le_bytes(b4) as usize;
        if dim == 0 {
            return Err(Error::DimensionZero);
        }
        let mut b8 = [0u8; 8];
        read_exact(r, &mut b8, "covariance snapshot count")?;
        let sample_count = u64::from_le_bytes(b8);
        let mut gram_sum = Vec::with_capacity(dim * dim);
        for _ in 0..dim * dim {
            read_exact(r, &mut b8, "covariance snapshot payload")?;
            gram_sum.push(f64::from_le_bytes(b8));
        }
        Ok(Self {
            dim,
            gram_sum,
            sample_count,
            epoch_tag: 0,
        })
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated { what }
        } else {
            Error::Io(e)
        }
    })
}

/// Single-batch covariance `(1/bs) Z_B Z_Bᵀ`.
pub fn batch_covariance(z: &SampleMatrix) -> Result<SymMatrix> {
    let mut acc = CovAccumulator::new(z.dim(), 0)?;
    acc.accumulate(z)?;
    acc.finalize()
}
