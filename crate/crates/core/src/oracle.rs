//! Power-set enumeration over dense kernels, for small catalogs only.
//!
//! These routines deliberately share no code path with [`crate::dpp`]: the
//! kernel is materialized and determinants come from LU factorization.

use nalgebra::DMatrix;

use crate::dpp::{EmbeddingMatrix, Subset};
use crate::error::{DppError, Result};

pub const DEFAULT_CAP: usize = 15;

#[derive(Debug, Clone, Copy)]
pub struct BruteForce {
    pub cap: usize,
}

impl Default for BruteForce {
    fn default() -> Self {
        BruteForce { cap: DEFAULT_CAP }
    }
}

fn members(mask: usize, n: usize) -> Vec<usize> {
    (0..n).filter(|i| mask >> i & 1 == 1).collect()
}

fn mask_of(subset: &Subset) -> usize {
    subset.indices().iter().fold(0, |m, &i| m | 1 << i)
}

impl BruteForce {
    pub fn with_cap(cap: usize) -> Self {
        BruteForce { cap }
    }

    fn kernel(&self, v: &EmbeddingMatrix) -> Result<DMatrix<f64>> {
        if v.n_items() > self.cap {
            return Err(DppError::CatalogTooLarge { n: v.n_items(), cap: self.cap });
        }
        v.dense_kernel(self.cap)
    }

    /// `det(L_S)` for every subset `S`, indexed by bitmask.
    pub fn subset_determinants(&self, v: &EmbeddingMatrix) -> Result<Vec<f64>> {
        let l = self.kernel(v)?;
        let n = v.n_items();
        Ok((0..1usize << n)
            .map(|mask| {
                let ix = members(mask, n);
                if ix.is_empty() {
                    1.0
                } else {
                    l.select_rows(&ix).select_columns(&ix).determinant().max(0.0)
                }
            })
            .collect())
    }

    /// Exact probability of every subset, indexed by bitmask.
    pub fn subset_probabilities(&self, v: &EmbeddingMatrix) -> Result<Vec<f64>> {
        let dets = self.subset_determinants(v)?;
        let total: f64 = dets.iter().sum();
        Ok(dets.into_iter().map(|d| d / total).collect())
    }

    pub fn log_prob(&self, v: &EmbeddingMatrix, a: &Subset) -> Result<f64> {
        a.check_within(v.n_items())?;
        let probs = self.subset_probabilities(v)?;
        Ok(probs[mask_of(a)].ln())
    }

    /// `Σ_{S ⊇ A ∪ {i}} det(L_S) / Σ_{S ⊇ A} det(L_S)` for each `i ∉ A`,
    /// as `(item, probability)` pairs in index order.
    pub fn marginals(&self, v: &EmbeddingMatrix, a: &Subset) -> Result<Vec<(usize, f64)>> {
        a.check_within(v.n_items())?;
        let n = v.n_items();
        let dets = self.subset_determinants(v)?;
        let base = mask_of(a);
        let mut containing = 0.0;
        let mut with_item = vec![0.0; n];
        for (mask, &d) in dets.iter().enumerate() {
            if mask & base != base {
                continue;
            }
            containing += d;
            for (i, acc) in with_item.iter_mut().enumerate() {
                if mask >> i & 1 == 1 {
                    *acc += d;
                }
            }
        }
        Ok((0..n)
            .filter(|i| !a.contains(*i))
            .map(|i| (i, with_item[i] / containing))
            .collect())
    }
}

pub fn brute_force_log_prob(v: &EmbeddingMatrix, a: &Subset) -> Result<f64> {
    BruteForce::default().log_prob(v, a)
}

pub fn brute_force_marginals(v: &EmbeddingMatrix, a: &Subset) -> Result<Vec<(usize, f64)>> {
    BruteForce::default().marginals(v, a)
}
