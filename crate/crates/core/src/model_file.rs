//! Versioned, self-describing JSON container for a trained model.
//!
//! The materialized embedding matrix is stored alongside the network so that
//! prediction and evaluation never need a forward pass. Floats are written in
//! shortest round-trip form, so saving and loading is lossless.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{BasketFormat, FeatureEncoder, SplitCounts};
use crate::dpp::{Catalog, EmbeddingMatrix};
use crate::error::{DppError, Result};
use crate::matrix_io::{vector_from, MatrixData};
use crate::net::{Architecture, Layer, NetworkParams};
use crate::training::{materialize, TrainingConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerData {
    pub weight: MatrixData,
    pub bias: Vec<f64>,
}

/// How the training data was prepared, so evaluation can rebuild the same split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSettings {
    pub format: BasketFormat,
    pub max_basket_size: usize,
    pub split: SplitCounts,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureState {
    pub encoder: FeatureEncoder,
    pub matrix: MatrixData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub catalog: Catalog,
    pub architecture: Architecture,
    pub layers: Vec<LayerData>,
    pub embeddings: MatrixData,
    pub training: Option<TrainingConfig>,
    pub data: Option<DataSettings>,
    pub features: Option<FeatureState>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

impl ModelFile {
    pub fn new(
        catalog: Catalog,
        params: &NetworkParams,
        embeddings: &EmbeddingMatrix,
        training: Option<TrainingConfig>,
        data: Option<DataSettings>,
        features: Option<(FeatureEncoder, &DMatrix<f64>)>,
    ) -> Result<Self> {
        if catalog.len() != embeddings.n_items() || catalog.len() != params.architecture().n_items {
            return Err(DppError::Config("catalog, network and embeddings disagree on the number of items".into()));
        }
        Ok(ModelFile {
            format_version: FORMAT_VERSION,
            catalog,
            architecture: params.architecture().clone(),
            layers: params
                .layers()
                .iter()
                .map(|l| LayerData { weight: MatrixData::from(&l.weight), bias: l.bias.as_slice().to_vec() })
                .collect(),
            embeddings: MatrixData::from(embeddings.matrix()),
            training,
            data,
            features: features.map(|(encoder, m)| FeatureState { encoder, matrix: MatrixData::from(m) }),
        })
    }

    /// Model holding only an embedding matrix, with the matching shallow network.
    pub fn from_embeddings(catalog: Catalog, embeddings: &EmbeddingMatrix) -> Result<Self> {
        let arch = Architecture::shallow(embeddings.n_items(), embeddings.rank_k());
        let mut params = NetworkParams::zeros(&arch);
        params.layers_mut()[0].weight.copy_from(embeddings.matrix());
        Self::new(catalog, &params, embeddings, None, None, None)
    }

    pub fn params(&self) -> Result<NetworkParams> {
        let layers = self
            .layers
            .iter()
            .map(|l| Ok(Layer { weight: l.weight.to_matrix()?, bias: vector_from(&l.bias) }))
            .collect::<Result<Vec<_>>>()?;
        NetworkParams::from_layers(self.architecture.clone(), layers)
    }

    pub fn embeddings(&self) -> Result<EmbeddingMatrix> {
        EmbeddingMatrix::new(self.embeddings.to_matrix()?)
    }

    pub fn feature_matrix(&self) -> Result<Option<DMatrix<f64>>> {
        self.features.as_ref().map(|f| f.matrix.to_matrix()).transpose()
    }

    /// Largest absolute difference between the stored embeddings and a fresh
    /// forward pass of the stored network.
    pub fn forward_discrepancy(&self) -> Result<f64> {
        let features = self.feature_matrix()?;
        let fresh = materialize(&self.params()?, features.as_ref())?;
        let stored = self.embeddings()?;
        Ok((fresh.matrix() - stored.matrix()).amax())
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer(out, self)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        let probe: VersionProbe = serde_json::from_str(&text)?;
        if probe.format_version != FORMAT_VERSION {
            return Err(DppError::VersionMismatch { found: probe.format_version, expected: FORMAT_VERSION });
        }
        let model: ModelFile = serde_json::from_str(&text)?;
        model.params()?;
        let v = model.embeddings()?;
        if v.n_items() != model.catalog.len() || v.rank_k() != model.architecture.k {
            return Err(DppError::Config("stored embeddings do not match the catalog and architecture".into()));
        }
        Ok(model)
    }
}

/// `item_id,v0,...,v{K-1}` rows.
pub fn write_embeddings_csv<W: Write>(out: W, catalog: &Catalog, v: &EmbeddingMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["item_id".to_owned()];
    header.extend((0..v.rank_k()).map(|j| format!("v{j}")));
    w.write_record(&header)?;
    for i in 0..v.n_items() {
        let mut row = vec![catalog.id(i).to_owned()];
        row.extend(v.matrix().row(i).iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings_csv<R: Read>(input: R) -> Result<(Catalog, EmbeddingMatrix)> {
    let mut reader = csv::Reader::from_reader(input);
    let k = reader.headers()?.len().saturating_sub(1);
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        ids.push(record.get(0).unwrap_or_default().to_owned());
        for field in record.iter().skip(1) {
            data.push(field.parse::<f64>().map_err(|e| DppError::Parse {
                location: format!("line {}", row + 2),
                message: e.to_string(),
            })?);
        }
    }
    let v = EmbeddingMatrix::from_row_slice(ids.len(), k, &data)?;
    Ok((Catalog::from_ids(ids)?, v))
}
