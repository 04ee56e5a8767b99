//! Feed-forward SELU tower mapping item identity (one-hot) plus optional
//! metadata features to a K-dimensional embedding row.
//!
//! Layer 0 has an `(n + d_meta) × h₁` weight matrix. Its first `n` rows act
//! as an id lookup table, which is exactly a dense layer applied to a one-hot
//! input; the remaining `d_meta` rows consume the metadata features. With no
//! hidden layers the tower is a single affine map and the model reduces to the
//! standard low-rank DPP.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DppError, Result};
use crate::rng;

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
    }
}

pub fn selu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub n_items: usize,
    pub meta_width: usize,
    pub hidden: Vec<usize>,
    pub k: usize,
}

impl Architecture {
    pub fn new(n_items: usize, meta_width: usize, hidden: Vec<usize>, k: usize) -> Result<Self> {
        let arch = Architecture { n_items, meta_width, hidden, k };
        arch.validate()?;
        Ok(arch)
    }

    pub fn shallow(n_items: usize, k: usize) -> Self {
        Architecture { n_items, meta_width: 0, hidden: Vec::new(), k }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_items == 0 || self.k == 0 || self.hidden.contains(&0) {
            return Err(DppError::Config(format!("all layer widths must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn is_shallow(&self) -> bool {
        self.hidden.is_empty()
    }

    pub fn input_width(&self) -> usize {
        self.n_items + self.meta_width
    }

    /// `(fan_in, fan_out)` of each layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_width()];
        widths.extend(&self.hidden);
        widths.push(self.k);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    arch: Architecture,
    layers: Vec<Layer>,
}

impl NetworkParams {
    pub fn zeros(arch: &Architecture) -> Self {
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| Layer {
                weight: DMatrix::zeros(fan_in, fan_out),
                bias: DVector::zeros(fan_out),
            })
            .collect();
        NetworkParams { arch: arch.clone(), layers }
    }

    pub fn from_layers(arch: Architecture, layers: Vec<Layer>) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(DppError::Config(format!(
                "architecture has {} layers, parameters have {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (i, ((fan_in, fan_out), layer)) in shapes.iter().zip(&layers).enumerate() {
            if layer.weight.shape() != (*fan_in, *fan_out) || layer.bias.len() != *fan_out {
                return Err(DppError::Config(format!("layer {i} does not match {fan_in}x{fan_out}")));
            }
        }
        let params = NetworkParams { arch, layers };
        if params.values().any(|x| !x.is_finite()) {
            return Err(DppError::Config("network parameters contain non-finite values".into()));
        }
        Ok(params)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// All parameters in a fixed order (per layer: weights column-major, then bias).
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.as_slice().iter().chain(l.bias.as_slice()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.as_mut_slice().iter_mut().chain(l.bias.as_mut_slice()))
    }

    /// Rows `0..n` of the first layer's weights: the id lookup table.
    pub fn id_table(&self) -> nalgebra::DMatrixView<'_, f64> {
        let n = self.arch.n_items;
        self.layers[0].weight.rows(0, n)
    }
}

/// LeCun-normal weights (variance `1 / fan_in`) and zero biases.
pub fn init_params(arch: &Architecture, seed: u64) -> NetworkParams {
    let mut rng = rng::substream(seed, rng::INIT);
    let mut params = NetworkParams::zeros(arch);
    for layer in &mut params.layers {
        let fan_in = layer.weight.nrows();
        let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
        for w in layer.weight.iter_mut() {
            *w = normal.sample(&mut rng);
        }
    }
    params
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    indices: Vec<usize>,
    /// Gathered metadata rows (`rows × d_meta`), if any.
    features: Option<DMatrix<f64>>,
    pre_activations: Vec<DMatrix<f64>>,
    /// Output of each hidden layer after SELU.
    activations: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn pre_activations(&self) -> &[DMatrix<f64>] {
        &self.pre_activations
    }

    pub fn activations(&self) -> &[DMatrix<f64>] {
        &self.activations
    }
}

fn add_bias(m: &mut DMatrix<f64>, bias: &DVector<f64>) {
    for (mut col, b) in m.column_iter_mut().zip(bias.iter()) {
        col.add_scalar_mut(*b);
    }
}

/// Embedding rows for `indices` (one output row per requested index).
pub fn forward(
    params: &NetworkParams,
    indices: &[usize],
    features: Option<&DMatrix<f64>>,
) -> Result<(DMatrix<f64>, ForwardCache)> {
    let arch = &params.arch;
    if let Some(&bad) = indices.iter().find(|&&i| i >= arch.n_items) {
        return Err(DppError::Config(format!("item index {bad} out of range for {} items", arch.n_items)));
    }
    let gathered = match (arch.meta_width, features) {
        (0, None) => None,
        (0, Some(_)) => return Err(DppError::Config("features supplied to a network without metadata inputs".into())),
        (_, None) => return Err(DppError::Config("network expects metadata features".into())),
        (d, Some(f)) => {
            if f.shape() != (arch.n_items, d) {
                return Err(DppError::Config(format!(
                    "feature matrix is {}x{}, expected {}x{d}",
                    f.nrows(),
                    f.ncols(),
                    arch.n_items
                )));
            }
            Some(f.select_rows(indices))
        }
    };

    let first = &params.layers[0];
    let mut pre = first.weight.select_rows(indices);
    if let Some(f) = &gathered {
        pre += f * first.weight.rows(arch.n_items, arch.meta_width);
    }
    add_bias(&mut pre, &first.bias);

    let last = params.layers.len() - 1;
    let mut pre_activations = Vec::with_capacity(params.layers.len());
    let mut activations = Vec::with_capacity(last);
    for layer in &params.layers[1..] {
        let act = pre.map(selu);
        let mut next = &act * &layer.weight;
        add_bias(&mut next, &layer.bias);
        pre_activations.push(std::mem::replace(&mut pre, next));
        activations.push(act);
    }
    let output = pre.clone();
    pre_activations.push(pre);
    let cache = ForwardCache { indices: indices.to_vec(), features: gathered, pre_activations, activations };
    Ok((output, cache))
}

/// Reverse-mode gradient of a scalar loss given `∂loss/∂output`.
pub fn backward(params: &NetworkParams, cache: &ForwardCache, grad_output: &DMatrix<f64>) -> Result<NetworkParams> {
    let layers = &params.layers;
    let rows = cache.indices.len();
    if cache.pre_activations.len() != layers.len()
        || cache.activations.len() + 1 != layers.len()
        || grad_output.shape() != (rows, params.arch.k)
        || cache
            .pre_activations
            .iter()
            .zip(layers)
            .any(|(p, l)| p.shape() != (rows, l.weight.ncols()))
    {
        return Err(DppError::Contract("forward cache does not match parameters or output gradient".into()));
    }

    let mut grads = NetworkParams::zeros(&params.arch);
    let mut delta = grad_output.clone();
    for l in (1..layers.len()).rev() {
        let input = &cache.activations[l - 1];
        grads.layers[l].weight = input.tr_mul(&delta);
        grads.layers[l].bias = column_sums(&delta);
        let mut upstream = &delta * layers[l].weight.transpose();
        upstream.zip_apply(&cache.pre_activations[l - 1], |d, z| *d *= selu_derivative(z));
        delta = upstream;
    }

    let n = params.arch.n_items;
    let first = &mut grads.layers[0];
    for (r, &item) in cache.indices.iter().enumerate() {
        let mut row = first.weight.row_mut(item);
        row += delta.row(r);
    }
    if let Some(f) = &cache.features {
        let meta = f.tr_mul(&delta);
        first.weight.rows_mut(n, params.arch.meta_width).copy_from(&meta);
    }
    first.bias = column_sums(&delta);
    Ok(grads)
}

fn column_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum()))
}
