use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// A fixed set of `w` sign vectors of length `n`. Row 0 is always the
/// identity flip (all `+1`), so statistic 0 is the observed one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlipEnsemble {
    n: usize,
    w: usize,
    seed: u64,
    exhaustive: bool,
    signs: Vec<i8>,
}

impl FlipEnsemble {
    /// Draws `w - 1` random flips after the identity. Row `g` is generated
    /// from its own ChaCha stream `(seed, g)`, so rows do not depend on each
    /// other or on generation order. When `w == 2^n` all sign vectors are
    /// enumerated instead (see [`FlipEnsemble::exhaustive`]).
    pub fn generate(n: usize, w: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("flip ensemble needs n >= 1".into()));
        }
        if w < 2 {
            return Err(Error::InvalidInput(format!("flip ensemble needs w >= 2, got {w}")));
        }
        if n < 63 {
            let total = 1usize << n;
            if w > total {
                return Err(Error::InvalidInput(format!(
                    "w = {w} exceeds the {total} distinct sign vectors for n = {n}"
                )));
            }
            if w == total {
                return Self::exhaustive(n);
            }
        }
        let mut signs = vec![1i8; n * w];
        for g in 1..w {
            fill_row(&mut signs[g * n..(g + 1) * n], seed, g as u64);
        }
        Ok(FlipEnsemble { n, w, seed, exhaustive: false, signs })
    }

    /// All `2^n` sign vectors in lexicographic order with `+1 < -1`, so the
    /// first row is the identity.
    pub fn exhaustive(n: usize) -> Result<Self> {
        if n == 0 || n > 24 {
            return Err(Error::InvalidInput(format!(
                "exhaustive enumeration supports 1 <= n <= 24, got {n}"
            )));
        }
        let w = 1usize << n;
        let mut signs = vec![1i8; n * w];
        for g in 0..w {
            for i in 0..n {
                if (g >> (n - 1 - i)) & 1 == 1 {
                    signs[g * n + i] = -1;
                }
            }
        }
        Ok(FlipEnsemble { n, w, seed: 0, exhaustive: true, signs })
    }

    /// Builds an ensemble from explicit rows; the first row must be all `+1`.
    pub fn from_rows(rows: Vec<Vec<i8>>) -> Result<Self> {
        let w = rows.len();
        if w < 2 {
            return Err(Error::InvalidInput(format!("flip ensemble needs w >= 2, got {w}")));
        }
        let n = rows[0].len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("flip rows must share a positive length".into()));
        }
        if rows.iter().flatten().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidInput("flip entries must be +1 or -1".into()));
        }
        if rows[0].iter().any(|&s| s != 1) {
            return Err(Error::InvalidInput("first flip must be the identity".into()));
        }
        Ok(FlipEnsemble { n, w, seed: 0, exhaustive: false, signs: rows.concat() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_exhaustive(&self) -> bool {
        self.exhaustive
    }

    pub fn row(&self, g: usize) -> &[i8] {
        &self.signs[g * self.n..(g + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[i8]> {
        self.signs.chunks_exact(self.n)
    }
}

fn fill_row(row: &mut [i8], seed: u64, g: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(g);
    let mut bits = 0u64;
    for (i, s) in row.iter_mut().enumerate() {
        if i % 64 == 0 {
            bits = rng.next_u64();
        }
        *s = if bits & 1 == 1 { -1 } else { 1 };
        bits >>= 1;
    }
}
