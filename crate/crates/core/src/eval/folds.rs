use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Assignment of rows `0..n` to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    /// Fold index of each row.
    pub assignment: Vec<usize>,
}

/// Shuffles `0..n` with `seed` and cuts the permutation into `k` contiguous
/// chunks; the first `n % k` chunks get the extra row.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldSpec> {
    if k < 2 || k > n {
        return Err(Error::Parameter(format!(
            "k-fold needs 2 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut crate::rng::rng_from(seed));
    let (base, extra) = (n / k, n % k);
    let mut assignment = vec![0; n];
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &row in &perm[pos..pos + size] {
            assignment[row] = fold;
        }
        pos += size;
    }
    Ok(FoldSpec {
        n,
        k,
        seed,
        assignment,
    })
}

impl FoldSpec {
    /// `(training rows, held-out rows)` for `fold`, both ascending.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.n).partition(|&i| self.assignment[i] != fold)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.assignment {
            s[f] += 1;
        }
        s
    }

    /// Hex SHA-256 over `(n, k, seed, assignment)`, used to show that two
    /// runs shared the same folds.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for v in [self.n as u64, self.k as u64, self.seed] {
            h.update(v.to_le_bytes());
        }
        for &a in &self.assignment {
            h.update((a as u32).to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
