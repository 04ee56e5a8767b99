//! Exact low-rank DPP computations: subset log-determinants, the global
//! normalizer, conditioning on an observed subset and next-item marginals.
//!
//! The kernel `L = V Vᵀ` is never formed at catalog size. Everything runs
//! through `|A| × |A|` Gram matrices or the `K × K` dual kernel `C = Vᵀ V`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{DppError, Result};
use crate::linalg::{self, SINGULAR_TOL};

/// Bijection between external item identifiers and dense indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Catalog {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ids<I, S>(ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut catalog = Catalog::new();
        for id in ids {
            let id = id.into();
            if catalog.index.contains_key(&id) {
                return Err(DppError::Config(format!("duplicate item id '{id}' in catalog")));
            }
            catalog.intern(&id);
        }
        Ok(catalog)
    }

    /// Index of `id`, inserting it at the end when unseen.
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), i);
        i
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

impl From<Vec<String>> for Catalog {
    fn from(ids: Vec<String>) -> Self {
        let mut catalog = Catalog::new();
        for id in ids {
            catalog.intern(&id);
        }
        catalog
    }
}

impl From<Catalog> for Vec<String> {
    fn from(catalog: Catalog) -> Self {
        catalog.ids
    }
}

/// A canonical (sorted, duplicate-free) set of catalog indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Subset(Vec<usize>);

impl Subset {
    /// Canonicalizes `indices`; duplicates are rejected.
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if let Some(w) = indices.windows(2).find(|w| w[0] == w[1]) {
            return Err(DppError::InvalidSubset(format!("duplicate index {}", w[0])));
        }
        Ok(Subset(indices))
    }

    pub fn empty() -> Self {
        Subset(Vec::new())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    /// Copy of this subset with `index` removed.
    pub fn without(&self, index: usize) -> Subset {
        Subset(self.0.iter().copied().filter(|&i| i != index).collect())
    }

    pub fn check_within(&self, n: usize) -> Result<()> {
        match self.0.last() {
            Some(&max) if max >= n => Err(DppError::InvalidSubset(format!(
                "index {max} out of range for catalog of {n} items"
            ))),
            _ => Ok(()),
        }
    }
}

impl TryFrom<Vec<usize>> for Subset {
    type Error = DppError;

    fn try_from(indices: Vec<usize>) -> Result<Self> {
        Subset::new(indices)
    }
}

/// The `n × K` item embedding matrix `V`; row `i` is the embedding of item `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    values: DMatrix<f64>,
}

impl EmbeddingMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(DppError::Config(format!(
                "embedding matrix must be at least 1x1, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(DppError::Config("embedding matrix has non-finite entries".into()));
        }
        Ok(EmbeddingMatrix { values })
    }

    pub fn from_row_slice(n: usize, k: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * k {
            return Err(DppError::Config(format!(
                "expected {} values for a {n}x{k} matrix, got {}",
                n * k,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(n, k, data))
    }

    pub fn n_items(&self) -> usize {
        self.values.nrows()
    }

    pub fn rank_k(&self) -> usize {
        self.values.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.values
    }

    /// Stacks the rows indexed by `subset` into an `|A| × K` matrix.
    pub fn rows_of(&self, subset: &Subset) -> DMatrix<f64> {
        self.values.select_rows(subset.indices())
    }

    /// The dense `n × n` kernel `V Vᵀ`, refused above `max_items`.
    pub fn dense_kernel(&self, max_items: usize) -> Result<DMatrix<f64>> {
        if self.n_items() > max_items {
            return Err(DppError::CatalogTooLarge { n: self.n_items(), cap: max_items });
        }
        Ok(&self.values * self.values.transpose())
    }

    /// Dual kernel `C = Vᵀ V` (`K × K`).
    pub fn dual_kernel(&self) -> DMatrix<f64> {
        self.values.tr_mul(&self.values)
    }
}

/// `log det(V_A V_Aᵀ)`; `0` for the empty set and `-inf` when the Gram matrix
/// is singular (in particular whenever `|A| > K`).
pub fn subset_logdet(v: &EmbeddingMatrix, a: &Subset) -> Result<f64> {
    a.check_within(v.n_items())?;
    if a.is_empty() {
        return Ok(0.0);
    }
    if a.len() > v.rank_k() {
        return Ok(f64::NEG_INFINITY);
    }
    let rows = v.rows_of(a);
    let gram = &rows * rows.transpose();
    Ok(linalg::cholesky(&gram).map_or(f64::NEG_INFINITY, |l| linalg::logdet_from_cholesky(&l)))
}

/// `log det(L + I)` evaluated as `log det(Vᵀ V + I_K)`.
pub fn log_normalizer(v: &EmbeddingMatrix) -> f64 {
    let k = v.rank_k();
    let shifted = v.dual_kernel() + DMatrix::<f64>::identity(k, k);
    let l = linalg::cholesky(&shifted).expect("Vᵀ V + I is positive definite");
    linalg::logdet_from_cholesky(&l)
}

pub fn subset_log_prob(v: &EmbeddingMatrix, a: &Subset) -> Result<f64> {
    Ok(subset_logdet(v, a)? - log_normalizer(v))
}

/// Dual representation of the DPP conditioned on every item of `A` being
/// present.
#[derive(Debug, Clone)]
pub struct ConditionedKernel {
    base_subset: Subset,
    /// `B^A = Z^A Vᵀ`, `K × n`.
    projected_features: DMatrix<f64>,
    /// Eigenvalues of `C^A`, clamped at zero.
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    tolerance: f64,
}

impl ConditionedKernel {
    pub fn base_subset(&self) -> &Subset {
        &self.base_subset
    }

    pub fn projected_features(&self) -> &DMatrix<f64> {
        &self.projected_features
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// Eigenvalues at or below this are treated as zero.
    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn n_items(&self) -> usize {
        self.projected_features.ncols()
    }

    /// `Σ λ_n v̂_n v̂_nᵀ`.
    pub fn reconstructed_dual(&self) -> DMatrix<f64> {
        let scaled = &self.eigenvectors * DMatrix::from_diagonal(&self.eigenvalues);
        scaled * self.eigenvectors.transpose()
    }
}

/// Conditions the DPP on `A ⊆ Y`. The empty set yields the unconditioned
/// dual kernel.
pub fn condition(v: &EmbeddingMatrix, a: &Subset) -> Result<ConditionedKernel> {
    a.check_within(v.n_items())?;
    let k = v.rank_k();
    let features = v.matrix().transpose();
    let projector = if a.is_empty() {
        DMatrix::<f64>::identity(k, k)
    } else {
        if a.len() > k {
            return Err(DppError::DegenerateConditioning);
        }
        let basis = v.rows_of(a).transpose(); // B_A, K × |A|
        let gram = basis.tr_mul(&basis);
        let chol = linalg::cholesky(&gram).ok_or(DppError::DegenerateConditioning)?;
        let mut solved = basis.transpose(); // |A| × K
        linalg::cholesky_solve(&chol, &mut solved);
        DMatrix::<f64>::identity(k, k) - &basis * solved
    };
    let projected_features = &projector * &features;
    let conditioned_dual = linalg::symmetrize(&(&projected_features * projected_features.transpose()));

    let scale = v.matrix().norm_squared();
    let tolerance = SINGULAR_TOL * scale.max(f64::MIN_POSITIVE);
    let eigen = SymmetricEigen::new(conditioned_dual);
    let eigenvalues = eigen.eigenvalues.map(|lambda| if lambda < tolerance { lambda.max(0.0) } else { lambda });
    Ok(ConditionedKernel {
        base_subset: a.clone(),
        projected_features,
        eigenvalues,
        eigenvectors: eigen.eigenvectors,
        tolerance,
    })
}

/// Conditional inclusion probabilities `P_i = Pr(i ∈ Y | A ⊆ Y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemMarginals {
    values: Vec<f64>,
    excluded: Subset,
}

impl ItemMarginals {
    /// Builds marginals from raw per-item values; used by alternative scorers.
    pub fn from_values(values: Vec<f64>, excluded: Subset) -> Self {
        ItemMarginals { values, excluded }
    }

    /// `P_i` for a candidate (`i ∉ A`).
    pub fn get(&self, item: usize) -> Option<f64> {
        if self.excluded.contains(item) {
            None
        } else {
            self.values.get(item).copied()
        }
    }

    /// Value of the marginal formula for any item, including members of `A`.
    pub fn raw(&self, item: usize) -> f64 {
        self.values[item]
    }

    /// `(item, P_i)` over `Y \ A` in index order.
    pub fn candidates(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .copied()
            .enumerate()
            .filter(move |(i, _)| !self.excluded.contains(*i))
    }

    pub fn candidate_count(&self) -> usize {
        self.values.len() - self.excluded.len()
    }

    pub fn excluded(&self) -> &Subset {
        &self.excluded
    }
}

pub fn next_item_marginals(ck: &ConditionedKernel) -> ItemMarginals {
    let n = ck.n_items();
    let mut values = vec![0.0; n];
    for (col, &lambda) in ck.eigenvalues.iter().enumerate() {
        if lambda <= ck.tolerance {
            continue;
        }
        let direction = ck.eigenvectors.column(col);
        let weight = lambda / (lambda + 1.0);
        let inv_sqrt = 1.0 / lambda.sqrt();
        // b_iᴬ · v̂_n for every item at once.
        let projections = ck.projected_features.tr_mul(&direction);
        for (p, &dot) in values.iter_mut().zip(projections.iter()) {
            let scaled = inv_sqrt * dot;
            *p += weight * scaled * scaled;
        }
    }
    for p in &mut values {
        *p = p.clamp(0.0, 1.0);
    }
    ItemMarginals { values, excluded: ck.base_subset.clone() }
}
