//! Fits a shallow DPP to baskets drawn from a planted model and completes one basket.
//!
//! cargo run --release --example basket_completion

use deep_dpp::data::{split, SplitCounts};
use deep_dpp::eval::{mpr, EvalConfig};
use deep_dpp::net::Architecture;
use deep_dpp::synth::generate_planted_dpp;
use deep_dpp::training::{train, validation_log_likelihood, TrainingConfig};
use deep_dpp::{condition, next_item_marginals, Catalog};

fn main() -> deep_dpp::Result<()> {
    let planted = generate_planted_dpp(12, 3, 20_000, 1)?;
    let catalog = Catalog::from_ids((0..12).map(|i| format!("item{i}")))?;
    let data = split(planted.baskets, catalog, SplitCounts::default(), 1)?;

    let arch = Architecture::shallow(12, 3);
    let mut cfg = TrainingConfig { batch_size: 64, ..TrainingConfig::for_architecture(&arch) };
    cfg.adam.lr = 0.01;
    let model = train(&data, &arch, &cfg)?;

    let per_basket = |v| validation_log_likelihood(v, &data.test).map(|ll| ll / data.test.len() as f64);
    println!("test log-likelihood per basket: learned {:.4}, truth {:.4}", per_basket(&model.embeddings)?, per_basket(&planted.truth)?);
    println!("MPR {:.2}", mpr(&model.embeddings, &data.test, &EvalConfig::default())?.estimate);

    let basket = &data.test[0];
    let marginals = next_item_marginals(&condition(&model.embeddings, basket)?);
    let mut ranked: Vec<_> = marginals.candidates().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let names: Vec<&str> = basket.indices().iter().map(|&i| data.catalog.id(i)).collect();
    println!("basket {names:?}, best additions:");
    for (item, p) in ranked.iter().take(3) {
        println!("  {} {p:.4}", data.catalog.id(*item));
    }
    Ok(())
}
