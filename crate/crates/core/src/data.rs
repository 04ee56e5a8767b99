//! Basket and item-feature ingestion, size filtering and train/validation/test
//! splitting.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dpp::{Catalog, Subset};
use crate::error::{DppError, Result};
use crate::rng;

pub const DEFAULT_MAX_BASKET_SIZE: usize = 100;
pub const DEFAULT_TEST_COUNT: usize = 2000;
pub const DEFAULT_VALIDATION_COUNT: usize = 300;
pub const DEFAULT_HASH_WIDTH: usize = 64;
/// Feature-file columns with this header prefix are hashed as free text.
pub const TEXT_COLUMN_PREFIX: &str = "text:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasketFormat {
    /// One basket per line, whitespace-separated item ids.
    Lines,
    /// Header plus `basket_id,item_id` rows, one per membership.
    Csv,
}

impl BasketFormat {
    /// `csv` for `.csv` files, `lines` otherwise.
    pub fn infer(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => BasketFormat::Csv,
            _ => BasketFormat::Lines,
        }
    }
}

impl FromStr for BasketFormat {
    type Err = DppError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lines" => Ok(BasketFormat::Lines),
            "csv" => Ok(BasketFormat::Csv),
            other => Err(DppError::Config(format!("unknown basket format '{other}' (expected lines or csv)"))),
        }
    }
}

/// Baskets as lists of external ids, before indexing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawBaskets {
    pub baskets: Vec<Vec<String>>,
    /// Repeated items inside a basket that were collapsed.
    pub duplicates: usize,
}

fn dedup_in_order(items: Vec<String>, duplicates: &mut usize) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let before = items.len();
    let out: Vec<String> = items.into_iter().filter(|i| seen.insert(i.clone())).collect();
    *duplicates += before - out.len();
    out
}

pub fn read_raw_baskets<R: Read>(input: R, format: BasketFormat) -> Result<RawBaskets> {
    let mut raw = RawBaskets::default();
    match format {
        BasketFormat::Lines => {
            for (lineno, line) in BufReader::new(input).lines().enumerate() {
                let line = line.map_err(|e| DppError::Parse { location: format!("line {}", lineno + 1), message: e.to_string() })?;
                let items: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
                if !items.is_empty() {
                    raw.baskets.push(dedup_in_order(items, &mut raw.duplicates));
                }
            }
        }
        BasketFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
            let headers = reader.headers()?.clone();
            let column = |name: &str| {
                headers.iter().position(|h| h == name).ok_or_else(|| DppError::Parse {
                    location: "line 1".into(),
                    message: format!("missing '{name}' column"),
                })
            };
            let (basket_col, item_col) = (column("basket_id")?, column("item_id")?);
            let mut order: HashMap<String, usize> = HashMap::new();
            let mut grouped: Vec<Vec<String>> = Vec::new();
            for (row, record) in reader.records().enumerate() {
                let location = format!("line {}", row + 2);
                let record = record.map_err(|e| DppError::Parse { location: location.clone(), message: e.to_string() })?;
                let (Some(basket), Some(item)) = (record.get(basket_col), record.get(item_col)) else {
                    return Err(DppError::Parse { location, message: "row is missing fields".into() });
                };
                if basket.is_empty() || item.is_empty() {
                    return Err(DppError::Parse { location, message: "empty basket_id or item_id".into() });
                }
                let slot = *order.entry(basket.to_owned()).or_insert_with(|| {
                    grouped.push(Vec::new());
                    grouped.len() - 1
                });
                grouped[slot].push(item.to_owned());
            }
            for items in grouped {
                raw.baskets.push(dedup_in_order(items, &mut raw.duplicates));
            }
        }
    }
    if raw.baskets.is_empty() {
        return Err(DppError::InsufficientData("basket file contains no baskets".into()));
    }
    if raw.duplicates > 0 {
        warn!("collapsed {} repeated items within baskets", raw.duplicates);
    }
    Ok(raw)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedBaskets {
    pub catalog: Catalog,
    pub baskets: Vec<Subset>,
    pub duplicates: usize,
}

/// Indexes raw baskets, building the catalog from the ids in order of first appearance.
pub fn index_baskets(raw: RawBaskets) -> LoadedBaskets {
    let mut catalog = Catalog::new();
    let baskets = raw
        .baskets
        .iter()
        .map(|items| {
            let ix = items.iter().map(|id| catalog.intern(id)).collect();
            Subset::new(ix).expect("duplicates already collapsed")
        })
        .collect();
    LoadedBaskets { catalog, baskets, duplicates: raw.duplicates }
}

pub fn load_baskets(path: &Path, format: BasketFormat) -> Result<LoadedBaskets> {
    Ok(index_baskets(read_raw_baskets(File::open(path)?, format)?))
}

/// Maps raw baskets onto an existing catalog. Baskets that mention unknown
/// ids are dropped; returns the kept baskets and the number dropped.
pub fn map_to_catalog(raw: &RawBaskets, catalog: &Catalog) -> (Vec<Subset>, usize) {
    let mut dropped = 0;
    let kept = raw
        .baskets
        .iter()
        .filter_map(|items| {
            let ix: Option<Vec<usize>> = items.iter().map(|id| catalog.index_of(id)).collect();
            if ix.is_none() {
                dropped += 1;
            }
            ix.map(|ix| Subset::new(ix).expect("duplicates already collapsed"))
        })
        .collect();
    if dropped > 0 {
        warn!("skipped {dropped} baskets containing items unknown to the model");
    }
    (kept, dropped)
}

pub fn write_baskets<W: Write>(out: W, baskets: &[Subset], catalog: &Catalog, format: BasketFormat) -> Result<()> {
    match format {
        BasketFormat::Lines => {
            let mut out = std::io::BufWriter::new(out);
            for b in baskets {
                let ids: Vec<&str> = b.indices().iter().map(|&i| catalog.id(i)).collect();
                writeln!(out, "{}", ids.join(" "))?;
            }
            out.flush()?;
        }
        BasketFormat::Csv => {
            let mut writer = csv::Writer::from_writer(out);
            writer.write_record(["basket_id", "item_id"])?;
            for (n, b) in baskets.iter().enumerate() {
                for &i in b.indices() {
                    writer.write_record([n.to_string().as_str(), catalog.id(i)])?;
                }
            }
            writer.flush()?;
        }
    }
    Ok(())
}

/// Keeps baskets with `1 ≤ |A| ≤ max_size`. Returns the kept baskets and how many were dropped.
pub fn filter_by_size(baskets: Vec<Subset>, max_size: usize) -> (Vec<Subset>, usize) {
    let before = baskets.len();
    let kept: Vec<Subset> = baskets.into_iter().filter(|b| !b.is_empty() && b.len() <= max_size).collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub test: usize,
    pub validation: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        SplitCounts { test: DEFAULT_TEST_COUNT, validation: DEFAULT_VALIDATION_COUNT }
    }
}

impl SplitCounts {
    /// The default 2000/300 split, shrunk proportionally so that held-out
    /// baskets never exceed half of a small dataset.
    pub fn defaults_for(total: usize) -> Self {
        let d = SplitCounts::default();
        let held_out = d.test + d.validation;
        if 2 * held_out <= total {
            return d;
        }
        let budget = total / 2;
        let test = (budget * d.test / held_out).max(1);
        let validation = budget.saturating_sub(test).max(1);
        SplitCounts { test, validation }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub catalog: Catalog,
    pub train: Vec<Subset>,
    pub validation: Vec<Subset>,
    pub test: Vec<Subset>,
    /// `n × d_meta` item features, when metadata is used.
    pub features: Option<DMatrix<f64>>,
}

impl DatasetSplit {
    pub fn with_features(mut self, features: DMatrix<f64>) -> Result<Self> {
        if features.nrows() != self.catalog.len() {
            return Err(DppError::Config(format!(
                "feature matrix has {} rows for {} items",
                features.nrows(),
                self.catalog.len()
            )));
        }
        self.features = Some(features);
        Ok(self)
    }
}

/// Uniformly random disjoint test/validation selection; the rest trains.
pub fn split(baskets: Vec<Subset>, catalog: Catalog, counts: SplitCounts, seed: u64) -> Result<DatasetSplit> {
    if counts.test + counts.validation >= baskets.len() {
        return Err(DppError::InsufficientData(format!(
            "{} baskets cannot supply {} test and {} validation baskets plus training data",
            baskets.len(),
            counts.test,
            counts.validation
        )));
    }
    for b in &baskets {
        b.check_within(catalog.len())?;
    }
    let mut order: Vec<usize> = (0..baskets.len()).collect();
    order.shuffle(&mut rng::substream(seed, rng::SPLIT));
    let mut role = vec![0u8; baskets.len()];
    for &i in &order[..counts.test] {
        role[i] = 1;
    }
    for &i in &order[counts.test..counts.test + counts.validation] {
        role[i] = 2;
    }
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (b, r) in baskets.into_iter().zip(role) {
        match r {
            1 => test.push(b),
            2 => validation.push(b),
            _ => train.push(b),
        }
    }
    Ok(DatasetSplit { catalog, train, validation, test, features: None })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericColumn {
    pub name: String,
    pub mean: f64,
    /// Zero marks a constant column, which encodes to zeros.
    pub std: f64,
}

/// Everything needed to re-encode a feature file identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub numeric: Vec<NumericColumn>,
    pub text: Vec<String>,
    pub hash_width: usize,
}

impl FeatureEncoder {
    pub fn width(&self) -> usize {
        self.numeric.len() + self.text.len() * self.hash_width
    }
}

/// Signed hashed bag of words, L2-normalized. Tokens are lowercase
/// alphanumeric runs.
pub fn hash_text(text: &str, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; width];
    for token in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        let h = rng::stable_hash(&token.to_lowercase());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        out[(h % width as u64) as usize] += sign;
    }
    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|x| *x /= norm);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemFeatures {
    pub matrix: DMatrix<f64>,
    pub encoder: FeatureEncoder,
    pub missing_items: usize,
    pub unknown_ids: usize,
}

pub fn read_item_features<R: Read>(input: R, catalog: &Catalog, hash_width: usize) -> Result<ItemFeatures> {
    if hash_width == 0 {
        return Err(DppError::Config("hash width must be positive".into()));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    let id_col = headers.iter().position(|h| h == "item_id").ok_or_else(|| DppError::Parse {
        location: "line 1".into(),
        message: "missing 'item_id' column".into(),
    })?;
    let mut numeric_cols = Vec::new();
    let mut text_cols = Vec::new();
    for (c, h) in headers.iter().enumerate() {
        if c == id_col {
            continue;
        }
        match h.strip_prefix(TEXT_COLUMN_PREFIX) {
            Some(name) => text_cols.push((c, name.to_owned())),
            None => numeric_cols.push((c, h.to_owned())),
        }
    }

    let n = catalog.len();
    let mut numeric = vec![vec![0.0; numeric_cols.len()]; n];
    let mut text = vec![vec![String::new(); text_cols.len()]; n];
    let mut present = vec![false; n];
    let mut unknown_ids = 0;
    for (row, record) in reader.records().enumerate() {
        let location = format!("line {}", row + 2);
        let record = record.map_err(|e| DppError::Parse { location: location.clone(), message: e.to_string() })?;
        let id = record.get(id_col).unwrap_or_default();
        let Some(item) = catalog.index_of(id) else {
            unknown_ids += 1;
            continue;
        };
        for (slot, (c, name)) in numeric_cols.iter().enumerate() {
            let raw = record.get(*c).unwrap_or_default();
            numeric[item][slot] = raw.parse().map_err(|_| DppError::Parse {
                location: location.clone(),
                message: format!("non-numeric value '{raw}' in column '{name}'"),
            })?;
        }
        for (slot, (c, _)) in text_cols.iter().enumerate() {
            text[item][slot] = record.get(*c).unwrap_or_default().to_owned();
        }
        present[item] = true;
    }
    if unknown_ids > 0 {
        warn!("{unknown_ids} feature rows reference items outside the catalog and were ignored");
    }
    let missing_items = present.iter().filter(|p| !**p).count();
    if missing_items > 0 {
        warn!("{missing_items} catalog items have no feature row and get zero features");
    }

    let observed = present.iter().filter(|p| **p).count().max(1) as f64;
    let numeric_stats: Vec<NumericColumn> = numeric_cols
        .iter()
        .enumerate()
        .map(|(slot, (_, name))| {
            let values = || (0..n).filter(|&i| present[i]).map(|i| numeric[i][slot]);
            let mean = values().sum::<f64>() / observed;
            let var = values().map(|x| (x - mean).powi(2)).sum::<f64>() / observed;
            let std = var.sqrt();
            let std = if std > 1e-12 * mean.abs().max(1.0) { std } else { 0.0 };
            NumericColumn { name: name.clone(), mean, std }
        })
        .collect();

    let encoder = FeatureEncoder {
        numeric: numeric_stats,
        text: text_cols.into_iter().map(|(_, name)| name).collect(),
        hash_width,
    };
    let mut matrix = DMatrix::<f64>::zeros(n, encoder.width());
    for item in (0..n).filter(|&i| present[i]) {
        for (slot, col) in encoder.numeric.iter().enumerate() {
            if col.std > 0.0 {
                matrix[(item, slot)] = (numeric[item][slot] - col.mean) / col.std;
            }
        }
        for (t, description) in text[item].iter().enumerate() {
            let offset = encoder.numeric.len() + t * hash_width;
            for (j, x) in hash_text(description, hash_width).into_iter().enumerate() {
                matrix[(item, offset + j)] = x;
            }
        }
    }
    Ok(ItemFeatures { matrix, encoder, missing_items, unknown_ids })
}

pub fn load_item_features(path: &Path, catalog: &Catalog, hash_width: usize) -> Result<ItemFeatures> {
    read_item_features(File::open(path)?, catalog, hash_width)
}
