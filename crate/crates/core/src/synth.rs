//! Synthetic basket generators with known structure.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::dpp::{subset_log_prob, EmbeddingMatrix, Subset};
use crate::error::{DppError, Result};
use crate::oracle::DEFAULT_CAP;
use crate::rng;

#[derive(Debug, Clone)]
pub struct PlantedDataset {
    pub truth: EmbeddingMatrix,
    pub baskets: Vec<Subset>,
}

/// Random ground-truth embeddings: each row is a Gaussian direction with
/// E‖u‖² = 1, scaled by a log-normal quality factor.
pub fn random_ground_truth(n: usize, k: usize, seed: u64) -> Result<EmbeddingMatrix> {
    let mut rng = rng::substream(seed, "truth");
    let quality = Normal::new(0.0, 0.5).expect("valid");
    let mut data = Vec::with_capacity(n * k);
    for _ in 0..n {
        let q: f64 = f64::exp(quality.sample(&mut rng));
        for _ in 0..k {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(q * z / (k as f64).sqrt());
        }
    }
    EmbeddingMatrix::from_row_slice(n, k, &data)
}

/// Draws `count` nonempty baskets i.i.d. from the exact DPP defined by `truth`.
pub fn sample_from_dpp(truth: &EmbeddingMatrix, count: usize, seed: u64) -> Result<Vec<Subset>> {
    let n = truth.n_items();
    if n > DEFAULT_CAP {
        return Err(DppError::CatalogTooLarge { n, cap: DEFAULT_CAP });
    }
    let mut cumulative = Vec::with_capacity(1 << n);
    let mut acc = 0.0;
    for mask in 0..1usize << n {
        let members: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        acc += subset_log_prob(truth, &Subset::new(members)?)?.exp();
        cumulative.push(acc);
    }
    let mut rng = rng::substream(seed, rng::SYNTH);
    let mut baskets = Vec::with_capacity(count);
    while baskets.len() < count {
        let u = rng.random::<f64>() * acc;
        let mask = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
        if mask == 0 {
            continue;
        }
        baskets.push(Subset::new((0..n).filter(|i| mask >> i & 1 == 1).collect())?);
    }
    Ok(baskets)
}

pub fn generate_planted_dpp(n: usize, k: usize, baskets_count: usize, seed: u64) -> Result<PlantedDataset> {
    if n > DEFAULT_CAP {
        return Err(DppError::CatalogTooLarge { n, cap: DEFAULT_CAP });
    }
    let truth = random_ground_truth(n, k, seed)?;
    let baskets = sample_from_dpp(&truth, baskets_count, seed)?;
    Ok(PlantedDataset { truth, baskets })
}

pub const MIN_BASKET: usize = 2;
pub const MAX_BASKET: usize = 5;

/// Two hidden binary attributes per item.
pub type Attributes = (bool, bool);

#[derive(Debug, Clone)]
pub struct NonlinearDataset {
    pub attributes: Vec<Attributes>,
    pub baskets: Vec<Subset>,
}

fn parity(a: Attributes) -> bool {
    a.0 ^ a.1
}

/// A basket is valid iff all of its items share the same `a XOR b` value.
/// Items agreeing on both attributes and items disagreeing on both are
/// interchangeable, so neither attribute alone predicts co-occurrence.
pub fn satisfies_rule(basket: &Subset, attributes: &[Attributes]) -> bool {
    let mut it = basket.indices().iter().map(|&i| parity(attributes[i]));
    match it.next() {
        Some(first) => it.all(|p| p == first),
        None => true,
    }
}

fn balanced_attributes<R: Rng>(n: usize, rng: &mut R) -> Vec<Attributes> {
    let mut attrs: Vec<Attributes> = (0..n).map(|i| (i % 2 == 1, (i / 2) % 2 == 1)).collect();
    attrs.shuffle(rng);
    attrs
}

fn sample_pools<R: Rng>(attributes: &[Attributes], count: usize, rng: &mut R) -> Vec<Subset> {
    let pools: [Vec<usize>; 2] = [false, true].map(|p| (0..attributes.len()).filter(|&i| parity(attributes[i]) == p).collect());
    (0..count)
        .map(|_| {
            let pool = &pools[rng.random_range(0..2)];
            let size = rng.random_range(MIN_BASKET..=MAX_BASKET).min(pool.len());
            let picked = index::sample(rng, pool.len(), size).into_iter().map(|j| pool[j]).collect();
            Subset::new(picked).expect("distinct picks")
        })
        .collect()
}

pub fn generate_nonlinear_coocurrence(n: usize, baskets_count: usize, seed: u64) -> Result<NonlinearDataset> {
    if n < 8 {
        return Err(DppError::Config(format!("the co-occurrence generator needs at least 8 items, got {n}")));
    }
    let mut rng = rng::substream(seed, rng::SYNTH);
    let attributes = balanced_attributes(n, &mut rng);
    let baskets = sample_pools(&attributes, baskets_count, &mut rng);
    Ok(NonlinearDataset { attributes, baskets })
}

/// Control generator: baskets are drawn using a shuffled copy of the
/// attributes, and the unshuffled attributes are returned.
pub fn generate_shuffled_control(n: usize, baskets_count: usize, seed: u64) -> Result<NonlinearDataset> {
    let NonlinearDataset { attributes, .. } = generate_nonlinear_coocurrence(n, 0, seed)?;
    let mut rng = rng::substream(seed, "control");
    let mut shuffled = attributes.clone();
    shuffled.shuffle(&mut rng);
    let baskets = sample_pools(&shuffled, baskets_count, &mut rng);
    Ok(NonlinearDataset { attributes, baskets })
}
