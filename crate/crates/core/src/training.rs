//! Regularized DPP log-likelihood over mini-batches, its gradient with
//! respect to the embedding rows, and the training loop that chains that
//! gradient through the network.

use std::io::Write;

use log::{info, warn};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, AdamHyper, AdamState};
use crate::data::DatasetSplit;
use crate::dpp::{log_normalizer, subset_logdet, EmbeddingMatrix, Subset};
use crate::error::{DppError, Result};
use crate::hogwild;
use crate::linalg;
use crate::net::{backward, forward, init_params, Architecture, NetworkParams};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub alpha: f64,
    pub batch_size: usize,
    /// Number of epochs (full passes over the training baskets).
    pub max_iterations: usize,
    pub convergence_rel_tol: f64,
    pub validation_check_period: usize,
    pub seed: u64,
    pub worker_count: usize,
    pub adam: AdamHyper,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            alpha: 1.0,
            batch_size: 256,
            max_iterations: 1000,
            convergence_rel_tol: 1e-4,
            validation_check_period: 10,
            seed: 0,
            worker_count: 1,
            adam: AdamHyper::default(),
        }
    }
}

impl TrainingConfig {
    /// Defaults with `alpha = 1` for the shallow model and `alpha = 0` for deep towers.
    pub fn for_architecture(arch: &Architecture) -> Self {
        TrainingConfig { alpha: default_alpha(arch), ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(DppError::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if self.batch_size == 0 || self.validation_check_period == 0 || self.worker_count == 0 {
            return Err(DppError::Config("batch size, check period and worker count must be positive".into()));
        }
        if !(self.convergence_rel_tol > 0.0) {
            return Err(DppError::Config("convergence tolerance must be positive".into()));
        }
        Ok(())
    }
}

pub fn default_alpha(arch: &Architecture) -> f64 {
    if arch.is_shallow() {
        1.0
    } else {
        0.0
    }
}

/// Occurrence count of each item across the training baskets.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemCounts {
    counts: Vec<u64>,
}

impl ItemCounts {
    pub fn from_baskets(n_items: usize, baskets: &[Subset]) -> Self {
        let mut counts = vec![0; n_items];
        for basket in baskets {
            for &i in basket.indices() {
                counts[i] += 1;
            }
        }
        ItemCounts { counts }
    }

    pub fn get(&self, item: usize) -> u64 {
        self.counts[item]
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// `1 / max(λ_i, 1)`.
    pub fn regularization_weight(&self, item: usize) -> f64 {
        1.0 / self.counts[item].max(1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub loss: f64,
    /// `∂loss/∂V`, `n × K`.
    pub grad: DMatrix<f64>,
    /// Baskets dropped because their Gram matrix was singular or `|A| > K`.
    pub degenerate: usize,
}

/// Negative regularized log-likelihood of `batch`:
/// `-Σ log det(L_A) + batch_scale · log det(L + I) + α Σ_i ‖v_i‖² / max(λ_i, 1)`.
pub fn batch_loss_and_embedding_grad(
    v: &EmbeddingMatrix,
    batch: &[Subset],
    counts: &ItemCounts,
    alpha: f64,
    batch_scale: f64,
) -> Result<BatchLoss> {
    let (n, k) = (v.n_items(), v.rank_k());
    if counts.len() != n {
        return Err(DppError::Config(format!("item counts cover {} items, catalog has {n}", counts.len())));
    }
    let vm = v.matrix();
    let mut grad = DMatrix::<f64>::zeros(n, k);
    let mut loss = 0.0;
    let mut degenerate = 0;

    for basket in batch {
        basket.check_within(n)?;
        if basket.is_empty() {
            return Err(DppError::InvalidSubset("training baskets must be nonempty".into()));
        }
        if basket.len() > k {
            degenerate += 1;
            continue;
        }
        let rows = v.rows_of(basket);
        let gram = &rows * rows.transpose();
        let Some(chol) = linalg::cholesky(&gram) else {
            degenerate += 1;
            continue;
        };
        loss -= linalg::logdet_from_cholesky(&chol);
        // ∂ log det(V_A V_Aᵀ) / ∂V_A = 2 (V_A V_Aᵀ)⁻¹ V_A
        let mut solved = rows;
        linalg::cholesky_solve(&chol, &mut solved);
        for (r, &item) in basket.indices().iter().enumerate() {
            let mut row = grad.row_mut(item);
            row -= solved.row(r) * 2.0;
        }
    }

    if batch_scale != 0.0 {
        let shifted = v.dual_kernel() + DMatrix::<f64>::identity(k, k);
        let chol = linalg::cholesky(&shifted).expect("Vᵀ V + I is positive definite");
        loss += batch_scale * linalg::logdet_from_cholesky(&chol);
        // ∂ log det(Vᵀ V + I) / ∂V = 2 V (Vᵀ V + I)⁻¹
        let inv = linalg::cholesky_inverse(&chol);
        grad += (vm * inv) * (2.0 * batch_scale);
    }

    if alpha != 0.0 {
        for i in 0..n {
            let w = alpha * counts.regularization_weight(i);
            let row = vm.row(i);
            loss += w * row.norm_squared();
            let mut g = grad.row_mut(i);
            g += row * (2.0 * w);
        }
    }
    Ok(BatchLoss { loss, grad, degenerate })
}

/// `Σ log det(L_A) - |baskets| · log det(L + I)`. Degenerate baskets make
/// the result `-inf`.
pub fn validation_log_likelihood(v: &EmbeddingMatrix, baskets: &[Subset]) -> Result<f64> {
    let mut total = 0.0;
    for basket in baskets {
        total += subset_logdet(v, basket)?;
    }
    Ok(total - baskets.len() as f64 * log_normalizer(v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean per-basket training loss over the epoch.
    pub train_loss: f64,
    pub val_loglik: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<IterationRecord>,
    /// Training baskets larger than K, excluded before training.
    pub excluded_oversized: usize,
    /// Basket evaluations skipped for singular Gram matrices, summed over all steps.
    pub degenerate_skips: usize,
    pub converged: bool,
}

impl TrainingLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["iteration", "train_loss", "val_loglik"])?;
        for r in &self.records {
            let val = r.val_loglik.map(|v| v.to_string()).unwrap_or_default();
            writer.write_record([r.iteration.to_string(), r.train_loss.to_string(), val])?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Last recorded validation log-likelihood.
    pub fn final_val_loglik(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.val_loglik)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: NetworkParams,
    pub embeddings: EmbeddingMatrix,
    pub log: TrainingLog,
}

/// Embedding matrix for the whole catalog.
pub fn materialize(params: &NetworkParams, features: Option<&DMatrix<f64>>) -> Result<EmbeddingMatrix> {
    let all: Vec<usize> = (0..params.architecture().n_items).collect();
    let (rows, _) = forward(params, &all, features)?;
    EmbeddingMatrix::new(rows).map_err(|_| DppError::Config("training diverged: embeddings are non-finite".into()))
}

/// Per-batch regularization weight and normalizer multiplier. The global
/// terms `N · log det(L + I)` and `α Σ ‖v_i‖² / λ_i` are both scaled by
/// `|batch| / N`, so the batch losses of one epoch sum to the full objective.
pub fn batch_weights(alpha: f64, batch_len: usize, total: f64) -> (f64, f64) {
    let fraction = batch_len as f64 / total;
    (alpha * fraction, fraction * total)
}

/// One gradient step's worth of work: forward over the catalog, batch loss,
/// backward into the network.
pub fn batch_gradient(
    params: &NetworkParams,
    features: Option<&DMatrix<f64>>,
    batch: &[Subset],
    counts: &ItemCounts,
    alpha: f64,
    batch_scale: f64,
) -> Result<(f64, usize, NetworkParams)> {
    let all: Vec<usize> = (0..params.architecture().n_items).collect();
    let (rows, cache) = forward(params, &all, features)?;
    let v = EmbeddingMatrix::new(rows).map_err(|_| DppError::Config("training diverged: embeddings are non-finite".into()))?;
    let bl = batch_loss_and_embedding_grad(&v, batch, counts, alpha, batch_scale)?;
    let grads = backward(params, &cache, &bl.grad)?;
    Ok((bl.loss, bl.degenerate, grads))
}

pub fn train(data: &DatasetSplit, arch: &Architecture, cfg: &TrainingConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    arch.validate()?;
    let n = data.catalog.len();
    let meta_width = data.features.as_ref().map_or(0, |f| f.ncols());
    if arch.n_items != n || arch.meta_width != meta_width {
        return Err(DppError::Config(format!(
            "architecture expects {} items and {} feature columns, data has {n} and {meta_width}",
            arch.n_items, arch.meta_width
        )));
    }
    let features = data.features.as_ref();

    let (train_set, oversized): (Vec<Subset>, Vec<Subset>) =
        data.train.iter().cloned().partition(|b| b.len() <= arch.k);
    if !oversized.is_empty() {
        warn!(
            "{} training baskets exceed K = {} and are excluded; consider a larger K",
            oversized.len(),
            arch.k
        );
    }
    if train_set.is_empty() {
        return Err(DppError::Config("training set is empty".into()));
    }
    let counts = ItemCounts::from_baskets(n, &train_set);
    let mut params = init_params(arch, cfg.seed);
    let mut log = TrainingLog { excluded_oversized: oversized.len(), ..Default::default() };

    let mut shuffle_rng = rng::substream(cfg.seed, rng::SHUFFLE);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let total = train_set.len() as f64;
    let mut adam = AdamState::new(params.param_count());
    let shared = (cfg.worker_count > 1).then(|| hogwild::SharedTrainer::new(&params));
    let mut previous_val: Option<f64> = None;

    for iteration in 1..=cfg.max_iterations {
        order.shuffle(&mut shuffle_rng);
        let batches: Vec<Vec<Subset>> = order
            .chunks(cfg.batch_size)
            .map(|chunk| chunk.iter().map(|&i| train_set[i].clone()).collect())
            .collect();

        let (epoch_loss, degenerate) = match &shared {
            Some(trainer) => {
                let outcome = trainer.run_epoch(&batches, features, &counts, cfg, total)?;
                params = trainer.snapshot();
                outcome
            }
            None => {
                let mut epoch_loss = 0.0;
                let mut degenerate = 0;
                for batch in &batches {
                    let (alpha, scale) = batch_weights(cfg.alpha, batch.len(), total);
                    let (loss, skipped, grads) = batch_gradient(&params, features, batch, &counts, alpha, scale)?;
                    adam_step(&mut params, &grads, &mut adam, &cfg.adam)?;
                    epoch_loss += loss;
                    degenerate += skipped;
                }
                (epoch_loss, degenerate)
            }
        };
        log.degenerate_skips += degenerate;

        let check = iteration % cfg.validation_check_period == 0 || iteration == cfg.max_iterations;
        let val_loglik = if check && !data.validation.is_empty() {
            let v = materialize(&params, features)?;
            Some(validation_log_likelihood(&v, &data.validation)?)
        } else {
            None
        };
        log.records.push(IterationRecord { iteration, train_loss: epoch_loss / total, val_loglik });

        if let Some(current) = val_loglik {
            if let Some(prev) = previous_val {
                let rel = (current - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
                if current.is_finite() && prev.is_finite() && rel < cfg.convergence_rel_tol {
                    info!("converged at iteration {iteration}: relative change {rel:.3e}");
                    log.converged = true;
                    break;
                }
            }
            previous_val = Some(current);
        }
    }
    if log.degenerate_skips > 0 {
        warn!("{} basket evaluations skipped for singular Gram matrices", log.degenerate_skips);
    }
    let embeddings = materialize(&params, features)?;
    Ok(TrainedModel { params, embeddings, log })
}
