//! Deep determinantal point processes for basket completion.
//!
//! A feed-forward SELU tower produces the low-rank DPP embedding matrix `V`
//! (kernel `L = V Vᵀ`). The crate covers exact low-rank DPP inference
//! ([`dpp`]), the network and its optimizer ([`net`], [`adam`]), regularized
//! maximum-likelihood training ([`training`]), data ingestion and synthetic
//! generators ([`data`], [`synth`]), set-recommendation metrics ([`eval`]) and
//! model persistence ([`model_file`]).

pub mod adam;
pub mod data;
pub mod dpp;
pub mod error;
pub mod eval;
mod hogwild;
pub mod linalg;
pub mod matrix_io;
pub mod model_file;
pub mod net;
pub mod oracle;
pub mod rng;
pub mod synth;
pub mod training;

pub use dpp::{
    condition, log_normalizer, next_item_marginals, subset_log_prob, subset_logdet, Catalog, ConditionedKernel,
    EmbeddingMatrix, ItemMarginals, Subset,
};
pub use error::{DppError, Result};
