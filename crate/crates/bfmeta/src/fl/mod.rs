//! Local training, evaluation, and flag-weighted federated aggregation over
//! small multilayer perceptrons.
//!
//! Model parameters are a flat `Vec<f64>` laid out per layer transition:
//! weight matrix (row-major, `out x in`) followed by the bias vector. The
//! canonical byte form hashed and checkpointed everywhere is the
//! architecture descriptor (layer sizes as little-endian `u32`) followed by
//! each parameter as a little-endian IEEE-754 64-bit pattern, in storage
//! order.

mod data;
mod mlp;

pub use data::{build_synthetic, load_csv, partition_dataset, SyntheticDataConfig};
pub use mlp::{
    cross_entropy_loss, evaluate, forward, init_model, local_train, loss_gradient,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden-layer activation. The output layer is always softmax with a
/// cross-entropy loss.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// Fully-connected network shape: input, hidden..., output sizes.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct MlpArchitecture {
    layer_sizes: Vec<u32>,
    activation: Activation,
}

impl MlpArchitecture {
    pub fn new(layer_sizes: Vec<u32>, activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid_input(
                "architecture needs at least an input and an output layer",
            ));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::invalid_input("layer sizes must be positive"));
        }
        let output = *layer_sizes.last().expect("at least two layers");
        if output < 2 {
            return Err(Error::invalid_input("output layer needs at least 2 classes"));
        }
        Ok(MlpArchitecture {
            layer_sizes,
            activation,
        })
    }

    pub fn layer_sizes(&self) -> &[u32] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0] as usize
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layers") as usize
    }

    /// Total number of weights and biases implied by the shape.
    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| (w[0] as usize) * (w[1] as usize) + w[1] as usize)
            .sum()
    }

    /// Descriptor half of the canonical serialization: each layer size as a
    /// little-endian `u32`.
    pub fn descriptor_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.layer_sizes.len() * 4);
        for &size in &self.layer_sizes {
            out.extend_from_slice(&size.to_le_bytes());
        }
        out
    }
}

/// A concrete set of network parameters tied to its architecture.
#[derive(Clone, PartialEq, Debug)]
pub struct ModelParameters {
    arch: MlpArchitecture,
    values: Vec<f64>,
}

impl ModelParameters {
    pub fn new(arch: MlpArchitecture, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::invalid_input(format!(
                "architecture implies {} parameters, got {}",
                arch.param_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_input("parameters must all be finite"));
        }
        Ok(ModelParameters { arch, values })
    }

    pub fn arch(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Canonical byte form: architecture descriptor, then each parameter as
    /// a little-endian IEEE-754 64-bit pattern, in storage order. Bit-exact,
    /// so equal parameter sets always serialize (and hash) identically.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = self.arch.descriptor_bytes();
        out.reserve(self.values.len() * 8);
        for v in &self.values {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        out
    }

    /// JSON checkpoint: architecture plus the hex of the canonical little-
    /// endian parameter bytes, so a reloaded checkpoint re-hashes to the
    /// same digest it was recorded under.
    pub fn to_checkpoint_json(&self) -> String {
        let mut param_bytes = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            param_bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        let chk = Checkpoint {
            layer_sizes: self.arch.layer_sizes.clone(),
            activation: self.arch.activation,
            params_hex: hex::encode(param_bytes),
        };
        serde_json::to_string_pretty(&chk).expect("checkpoint always serializes")
    }

    pub fn from_checkpoint_json(json: &str) -> Result<Self> {
        let chk: Checkpoint = serde_json::from_str(json)
            .map_err(|e| Error::invalid_input(format!("bad checkpoint: {e}")))?;
        let arch = MlpArchitecture::new(chk.layer_sizes, chk.activation)?;
        let bytes = hex::decode(&chk.params_hex)
            .map_err(|e| Error::invalid_input(format!("bad checkpoint hex: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::invalid_input(
                "checkpoint parameter bytes must be a multiple of 8",
            ));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        ModelParameters::new(arch, values)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    layer_sizes: Vec<u32>,
    activation: Activation,
    params_hex: String,
}

/// Labelled feature matrix, row-major.
#[derive(Clone, Debug)]
pub struct Dataset {
    features: Vec<f64>,
    width: usize,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, width: usize, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::invalid_input("feature width must be positive"));
        }
        if features.len() != labels.len() * width {
            return Err(Error::invalid_input(format!(
                "feature buffer holds {} values but {} rows of width {} need {}",
                features.len(),
                labels.len(),
                width,
                labels.len() * width
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::invalid_input(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        Ok(Dataset {
            features,
            width,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    /// Copies the given rows into a new dataset (used for sharding).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.width);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            width: self.width,
            labels,
            n_classes: self.n_classes,
        }
    }
}

/// Hyper-parameters for one client's local training pass.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
}

impl TrainConfig {
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::invalid_input("learning_rate must be finite and >= 0"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid_input("epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid_input("batch_size must be positive"));
        }
        if self.batch_size > dataset_len {
            return Err(Error::invalid_input(format!(
                "batch_size {} exceeds dataset size {}",
                self.batch_size, dataset_len
            )));
        }
        Ok(())
    }
}

/// One entry of an aggregation batch: parameters with the client's data size
/// and the screening indicators.
#[derive(Clone, Debug)]
pub struct AggregationInput {
    pub params: ModelParameters,
    pub data_size: u64,
    pub alpha: bool,
    pub beta: bool,
}

impl AggregationInput {
    pub fn included(&self) -> bool {
        !self.alpha && !self.beta
    }
}

/// Per-entry weights `(1-alpha)(1-beta) * n_k / n`, with `n` summed over the
/// entries whose indicators are both zero. Included weights therefore sum to
/// one and flagged entries get exactly zero.
pub fn aggregation_weights(inputs: &[AggregationInput]) -> Result<Vec<f64>> {
    let included_total: u64 = inputs
        .iter()
        .filter(|s| s.included())
        .map(|s| s.data_size)
        .sum();
    if included_total == 0 {
        return Err(Error::EmptyAggregation);
    }
    Ok(inputs
        .iter()
        .map(|s| {
            if s.included() {
                s.data_size as f64 / included_total as f64
            } else {
                0.0
            }
        })
        .collect())
}

/// Indicator-weighted federated averaging.
///
/// Returns the weighted sum of the included parameter vectors, accumulated
/// in input order. Errors if the batch mixes architectures, contains a
/// zero data size, or has no unflagged entry.
pub fn aggregate(inputs: &[AggregationInput]) -> Result<ModelParameters> {
    if inputs.is_empty() {
        return Err(Error::EmptyAggregation);
    }
    let arch = inputs[0].params.arch().clone();
    for s in inputs {
        if s.params.arch() != &arch {
            return Err(Error::invalid_input(
                "aggregation batch mixes architectures",
            ));
        }
        if s.data_size == 0 {
            return Err(Error::invalid_input("data_size must be positive"));
        }
    }
    let weights = aggregation_weights(inputs)?;
    let mut accum = vec![0.0f64; arch.param_count()];
    for (s, w) in inputs.iter().zip(&weights) {
        if *w == 0.0 {
            continue;
        }
        for (a, v) in accum.iter_mut().zip(s.params.values()) {
            *a += w * v;
        }
    }
    ModelParameters::new(arch, accum)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(sizes: &[u32]) -> MlpArchitecture {
        MlpArchitecture::new(sizes.to_vec(), Activation::Relu).unwrap()
    }

    fn params_with(a: &MlpArchitecture, fill: f64) -> ModelParameters {
        ModelParameters::new(a.clone(), vec![fill; a.param_count()]).unwrap()
    }

    #[test]
    fn param_count_matches_closed_form() {
        // 4*10+10 + 10*3+3 = 83
        assert_eq!(arch(&[4, 10, 3]).param_count(), 83);
    }

    #[test]
    fn arch_rejects_degenerate_shapes() {
        assert!(MlpArchitecture::new(vec![4], Activation::Relu).is_err());
        assert!(MlpArchitecture::new(vec![4, 0, 3], Activation::Relu).is_err());
        assert!(MlpArchitecture::new(vec![4, 1], Activation::Relu).is_err());
    }

    #[test]
    fn canonical_bytes_layout_is_descriptor_then_le_f64() {
        let a = MlpArchitecture::new(vec![1, 2], Activation::Relu).unwrap();
        let p = ModelParameters::new(a, vec![1.0, 2.0, 0.5, -0.5]).unwrap();
        let bytes = p.canonical_bytes();
        let mut expect = Vec::new();
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&2u32.to_le_bytes());
        for v in [1.0f64, 2.0, 0.5, -0.5] {
            expect.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        assert_eq!(bytes, expect);
    }

    #[test]
    fn parameters_must_match_arch_and_be_finite() {
        let a = arch(&[2, 2]);
        assert!(ModelParameters::new(a.clone(), vec![0.0; 5]).is_err());
        assert!(ModelParameters::new(a.clone(), vec![f64::NAN; 6]).is_err());
        assert!(ModelParameters::new(a, vec![0.0; 6]).is_ok());
    }

    #[test]
    fn aggregate_two_equal_clients_is_arithmetic_mean() {
        let a = MlpArchitecture::new(vec![1, 2], Activation::Relu).unwrap();
        let inputs = vec![
            AggregationInput {
                params: params_with(&a, 2.0),
                data_size: 10,
                alpha: false,
                beta: false,
            },
            AggregationInput {
                params: params_with(&a, 4.0),
                data_size: 10,
                alpha: false,
                beta: false,
            },
        ];
        let out = aggregate(&inputs).unwrap();
        assert!(out.values().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn flagged_client_is_equivalent_to_removal() {
        let a = arch(&[2, 3, 2]);
        let mk = |fill, n, beta| AggregationInput {
            params: params_with(&a, fill),
            data_size: n,
            alpha: false,
            beta,
        };
        let with_flag = vec![mk(1.0, 5, false), mk(2.0, 7, true), mk(3.0, 9, false)];
        let without = vec![with_flag[0].clone(), with_flag[2].clone()];
        let x = aggregate(&with_flag).unwrap();
        let y = aggregate(&without).unwrap();
        for (a, b) in x.values().iter().zip(y.values()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn single_included_client_passes_through_exactly() {
        let a = arch(&[2, 2]);
        let p = ModelParameters::new(a.clone(), vec![0.1, -0.7, 3.5, 0.0, 2.25, -1.5]).unwrap();
        let out = aggregate(&[AggregationInput {
            params: p.clone(),
            data_size: 42,
            alpha: false,
            beta: false,
        }])
        .unwrap();
        assert_eq!(out.values(), p.values());
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let a = MlpArchitecture::new(vec![2, 3, 2], Activation::Sigmoid).unwrap();
        let vals: Vec<f64> = (0..a.param_count())
            .map(|i| (i as f64 * 0.37 - 1.0) / 3.0)
            .collect();
        let p = ModelParameters::new(a, vals).unwrap();
        let json = p.to_checkpoint_json();
        let q = ModelParameters::from_checkpoint_json(&json).unwrap();
        assert_eq!(p.values(), q.values());
        assert_eq!(p.arch(), q.arch());
        assert_eq!(p.canonical_bytes(), q.canonical_bytes());
    }

    #[test]
    fn all_flagged_is_an_error() {
        let a = arch(&[2, 2]);
        let err = aggregate(&[AggregationInput {
            params: params_with(&a, 1.0),
            data_size: 3,
            alpha: true,
            beta: false,
        }])
        .unwrap_err();
        assert!(matches!(err, Error::EmptyAggregation));
    }
}
