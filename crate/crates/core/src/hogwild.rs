//! Lock-free asynchronous parameter updates shared by several workers.
//!
//! Parameters and Adam moments live in arrays of `AtomicU64` holding `f64`
//! bit patterns, accessed with relaxed ordering. Individual coordinates are
//! never torn, but a worker may read a mix of old and new coordinates and
//! concurrent updates to the same coordinate can overwrite each other. Runs
//! are therefore not reproducible bit for bit.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use nalgebra::DMatrix;

use crate::dpp::Subset;
use crate::error::{DppError, Result};
use crate::net::NetworkParams;
use crate::training::{batch_gradient, batch_weights, ItemCounts, TrainingConfig};

fn atomic_vec(values: impl Iterator<Item = f64>) -> Vec<AtomicU64> {
    values.map(|x| AtomicU64::new(x.to_bits())).collect()
}

#[inline]
fn load(cell: &AtomicU64) -> f64 {
    f64::from_bits(cell.load(Ordering::Relaxed))
}

#[inline]
fn store(cell: &AtomicU64, value: f64) {
    cell.store(value.to_bits(), Ordering::Relaxed);
}

pub struct SharedTrainer {
    template: NetworkParams,
    params: Vec<AtomicU64>,
    m: Vec<AtomicU64>,
    v: Vec<AtomicU64>,
    step: AtomicU64,
}

impl SharedTrainer {
    pub fn new(initial: &NetworkParams) -> Self {
        let count = initial.param_count();
        SharedTrainer {
            template: initial.clone(),
            params: atomic_vec(initial.values().copied()),
            m: atomic_vec(std::iter::repeat_n(0.0, count)),
            v: atomic_vec(std::iter::repeat_n(0.0, count)),
            step: AtomicU64::new(0),
        }
    }

    /// Unsynchronized read of the current parameters.
    pub fn snapshot(&self) -> NetworkParams {
        let mut out = self.template.clone();
        for (dst, src) in out.values_mut().zip(&self.params) {
            *dst = load(src);
        }
        out
    }

    fn apply(&self, grads: &NetworkParams, cfg: &TrainingConfig) {
        let t = self.step.fetch_add(1, Ordering::Relaxed) + 1;
        for (i, &g) in grads.values().enumerate() {
            let (p, m, v) = cfg.adam.update(load(&self.params[i]), g, load(&self.m[i]), load(&self.v[i]), t);
            store(&self.params[i], p);
            store(&self.m[i], m);
            store(&self.v[i], v);
        }
    }

    /// Processes every batch once, spread over `cfg.worker_count` threads.
    /// Returns the summed batch loss and degenerate-basket count.
    pub fn run_epoch(
        &self,
        batches: &[Vec<Subset>],
        features: Option<&DMatrix<f64>>,
        counts: &ItemCounts,
        cfg: &TrainingConfig,
        total: f64,
    ) -> Result<(f64, usize)> {
        let next = AtomicUsize::new(0);
        let failure: Mutex<Option<DppError>> = Mutex::new(None);
        let partials: Vec<(f64, usize)> = thread::scope(|scope| {
            let workers: Vec<_> = (0..cfg.worker_count)
                .map(|_| {
                    scope.spawn(|| {
                        let (mut loss, mut degenerate) = (0.0, 0);
                        loop {
                            let b = next.fetch_add(1, Ordering::Relaxed);
                            if b >= batches.len() {
                                break;
                            }
                            let batch = &batches[b];
                            let params = self.snapshot();
                            let (alpha, scale) = batch_weights(cfg.alpha, batch.len(), total);
                            match batch_gradient(&params, features, batch, counts, alpha, scale) {
                                Ok((l, skipped, grads)) => {
                                    self.apply(&grads, cfg);
                                    loss += l;
                                    degenerate += skipped;
                                }
                                Err(e) => {
                                    failure.lock().expect("poisoned").get_or_insert(e);
                                    next.store(batches.len(), Ordering::Relaxed);
                                    break;
                                }
                            }
                        }
                        (loss, degenerate)
                    })
                })
                .collect();
            workers.into_iter().map(|w| w.join().expect("worker panicked")).collect()
        });
        if let Some(e) = failure.into_inner().expect("poisoned") {
            return Err(e);
        }
        Ok(partials.into_iter().fold((0.0, 0), |(l, d), (pl, pd)| (l + pl, d + pd)))
    }
}
