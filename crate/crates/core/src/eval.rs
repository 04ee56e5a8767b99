//! Mean percentile rank and subset AUC with bootstrap confidence intervals,
//! broken down by basket-size tercile.

use std::cmp::Ordering;
use std::io::Write;

use log::warn;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dpp::{self, EmbeddingMatrix, ItemMarginals, Subset};
use crate::error::{DppError, Result};
use crate::rng;

/// Anything that scores subsets and predicts the next item of a basket.
pub trait SetScorer {
    fn n_items(&self) -> usize;
    fn log_likelihood(&self, subset: &Subset) -> Result<f64>;
    fn conditional_marginals(&self, given: &Subset) -> Result<ItemMarginals>;
}

impl SetScorer for EmbeddingMatrix {
    fn n_items(&self) -> usize {
        EmbeddingMatrix::n_items(self)
    }

    fn log_likelihood(&self, subset: &Subset) -> Result<f64> {
        dpp::subset_log_prob(self, subset)
    }

    fn conditional_marginals(&self, given: &Subset) -> Result<ItemMarginals> {
        Ok(dpp::next_item_marginals(&dpp::condition(self, given)?))
    }
}

/// How candidates scoring exactly like the held-out item are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieRule {
    /// Other candidates tied with the held-out item count one half.
    #[default]
    Midrank,
    /// Literal `p_held_out ≥ p_candidate`: ties count fully.
    AtLeast,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub seed: u64,
    pub tie_rule: TieRule,
    pub bootstrap_resamples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { seed: 0, tie_rule: TieRule::Midrank, bootstrap_resamples: 1000 }
    }
}

/// Percentile rank of `held_out` among all candidates outside the basket,
/// given their marginals. The held-out item always counts itself.
pub fn percentile_rank_from_marginals(marginals: &ItemMarginals, held_out: usize, tie_rule: TieRule) -> Result<f64> {
    let target = marginals
        .get(held_out)
        .ok_or_else(|| DppError::InvalidSubset(format!("held-out item {held_out} is part of the observed basket")))?;
    let (mut below, mut ties, mut total) = (0usize, 0usize, 0usize);
    for (item, p) in marginals.candidates() {
        total += 1;
        if item == held_out {
            continue;
        }
        match target.partial_cmp(&p) {
            Some(Ordering::Greater) => below += 1,
            Some(Ordering::Equal) => ties += 1,
            _ => {}
        }
    }
    let tie_weight = match tie_rule {
        TieRule::Midrank => 0.5,
        TieRule::AtLeast => 1.0,
    };
    Ok(100.0 * (1.0 + below as f64 + tie_weight * ties as f64) / total as f64)
}

pub fn percentile_rank<M: SetScorer + ?Sized>(model: &M, a: &Subset, held_out: usize, tie_rule: TieRule) -> Result<f64> {
    if a.contains(held_out) {
        return Err(DppError::InvalidSubset(format!("held-out item {held_out} is part of the observed basket")));
    }
    percentile_rank_from_marginals(&model.conditional_marginals(a)?, held_out, tie_rule)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub segment: String,
    pub min_basket_size: usize,
    pub max_basket_size: usize,
    pub count: usize,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub count: usize,
    pub skipped: usize,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub segments: Vec<SegmentReport>,
}

impl EvalReport {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// Rows of `metric,segment,estimate,ci_low,ci_high`, overall first.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "segment", "estimate", "ci_low", "ci_high"])?;
        w.write_record([&self.metric, "all", &self.estimate.to_string(), &self.ci_low.to_string(), &self.ci_high.to_string()])?;
        for s in &self.segments {
            w.write_record([&self.metric, &s.segment, &s.estimate.to_string(), &s.ci_low.to_string(), &s.ci_high.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Splits instance indices, ordered by basket size, into three contiguous
/// groups whose sizes differ by at most one.
pub fn size_terciles(sizes: &[usize]) -> [Vec<usize>; 3] {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&i| sizes[i]);
    let (base, extra) = (sizes.len() / 3, sizes.len() % 3);
    let mut groups: [Vec<usize>; 3] = Default::default();
    let mut start = 0;
    for (g, group) in groups.iter_mut().enumerate() {
        let len = base + usize::from(g < extra);
        *group = order[start..start + len].to_vec();
        start += len;
    }
    groups
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile-bootstrap 95% interval of `statistic` over resampled instances.
fn bootstrap<F>(count: usize, resamples: usize, rng: &mut rng::StreamRng, statistic: F) -> (f64, f64)
where
    F: Fn(&[usize]) -> f64,
{
    let all: Vec<usize> = (0..count).collect();
    let point = statistic(&all);
    if count == 0 || resamples == 0 {
        return (point, point);
    }
    let mut draws = vec![0usize; count];
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            draws.iter_mut().for_each(|d| *d = rng.random_range(0..count));
            statistic(&draws)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    (quantile(&stats, 0.025).min(point), quantile(&stats, 0.975).max(point))
}

const SEGMENT_NAMES: [&str; 3] = ["small", "medium", "large"];

fn build_report<F>(metric: &str, sizes: &[usize], skipped: usize, cfg: &EvalConfig, statistic: F) -> EvalReport
where
    F: Fn(&[usize]) -> f64,
{
    let mut boot_rng = rng::substream(cfg.seed, rng::BOOTSTRAP);
    let all: Vec<usize> = (0..sizes.len()).collect();
    let estimate = statistic(&all);
    let (ci_low, ci_high) = bootstrap(sizes.len(), cfg.bootstrap_resamples, &mut boot_rng, &statistic);
    let segments = size_terciles(sizes)
        .into_iter()
        .zip(SEGMENT_NAMES)
        .filter(|(members, _)| !members.is_empty())
        .map(|(members, name)| {
            let sub = |picks: &[usize]| statistic(&picks.iter().map(|&p| members[p]).collect::<Vec<_>>());
            let estimate = sub(&(0..members.len()).collect::<Vec<_>>());
            let (ci_low, ci_high) = bootstrap(members.len(), cfg.bootstrap_resamples, &mut boot_rng, sub);
            SegmentReport {
                segment: name.to_owned(),
                min_basket_size: sizes[members[0]],
                max_basket_size: sizes[*members.last().expect("nonempty")],
                count: members.len(),
                estimate,
                ci_low,
                ci_high,
            }
        })
        .collect();
    EvalReport { metric: metric.to_owned(), count: sizes.len(), skipped, estimate, ci_low, ci_high, segments }
}

fn mean_of(values: &[f64], picks: &[usize]) -> f64 {
    picks.iter().map(|&i| values[i]).sum::<f64>() / picks.len() as f64
}

/// Mean percentile rank: for each test basket with at least two items one
/// member is held out at random and ranked against the rest of the catalog.
pub fn mpr<M: SetScorer + ?Sized>(model: &M, test_baskets: &[Subset], cfg: &EvalConfig) -> Result<EvalReport> {
    if test_baskets.is_empty() {
        return Err(DppError::InsufficientData("no test baskets".into()));
    }
    let mut rng = rng::substream(cfg.seed, rng::HELD_OUT);
    let (mut ranks, mut sizes, mut skipped) = (Vec::new(), Vec::new(), 0);
    for basket in test_baskets {
        if basket.len() < 2 {
            skipped += 1;
            continue;
        }
        let held_out = basket.indices()[rng.random_range(0..basket.len())];
        match percentile_rank(model, &basket.without(held_out), held_out, cfg.tie_rule) {
            Ok(pr) => {
                ranks.push(pr);
                sizes.push(basket.len());
            }
            Err(DppError::DegenerateConditioning) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if skipped > 0 {
        warn!("MPR skipped {skipped} baskets (fewer than two items or degenerate conditioning)");
    }
    if ranks.is_empty() {
        return Err(DppError::InsufficientData("no test basket could be evaluated for MPR".into()));
    }
    Ok(build_report("mpr", &sizes, skipped, cfg, |picks| mean_of(&ranks, picks)))
}

/// `|basket|` distinct items drawn uniformly from the catalog.
pub fn sample_negative<R: Rng + ?Sized>(basket: &Subset, n_items: usize, rng: &mut R) -> Result<Subset> {
    if basket.len() > n_items {
        return Err(DppError::InvalidSubset(format!("basket of {} items exceeds catalog of {n_items}", basket.len())));
    }
    Subset::new(index::sample(rng, n_items, basket.len()).into_vec())
}

pub fn sample_negative_seeded(basket: &Subset, n_items: usize, seed: u64) -> Result<Subset> {
    sample_negative(basket, n_items, &mut rng::substream(seed, rng::NEGATIVES))
}

/// Mann–Whitney estimate of `Pr(positive > negative)`, ties counting one half.
/// `-inf` scores sort below every finite score and tie with each other.
pub fn mann_whitney_auc(positives: &[f64], negatives: &[f64]) -> f64 {
    let mut pooled: Vec<(f64, bool)> =
        positives.iter().map(|&s| (s, true)).chain(negatives.iter().map(|&s| (s, false))).collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let midrank = (i + j + 1) as f64 / 2.0;
        positive_rank_sum += midrank * pooled[i..j].iter().filter(|p| p.1).count() as f64;
        i = j;
    }
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}

/// AUC of subset log-likelihoods: each positive basket against one uniformly
/// random negative of the same size.
pub fn auc<M: SetScorer + ?Sized>(model: &M, positive_baskets: &[Subset], cfg: &EvalConfig) -> Result<EvalReport> {
    if positive_baskets.is_empty() {
        return Err(DppError::InsufficientData("no positive baskets".into()));
    }
    let mut rng = rng::substream(cfg.seed, rng::NEGATIVES);
    let n = model.n_items();
    let mut pos = Vec::with_capacity(positive_baskets.len());
    let mut neg = Vec::with_capacity(positive_baskets.len());
    let mut sizes = Vec::with_capacity(positive_baskets.len());
    for basket in positive_baskets {
        let negative = sample_negative(basket, n, &mut rng)?;
        pos.push(model.log_likelihood(basket)?);
        neg.push(model.log_likelihood(&negative)?);
        sizes.push(basket.len());
    }
    Ok(build_report("auc", &sizes, 0, cfg, |picks| {
        let p: Vec<f64> = picks.iter().map(|&i| pos[i]).collect();
        let q: Vec<f64> = picks.iter().map(|&i| neg[i]).collect();
        mann_whitney_auc(&p, &q)
    }))
}
