//! Feed-forward pass, backpropagation, SGD training, and accuracy
//! evaluation for the flat-parameter MLP.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::fl::{Activation, Dataset, MlpArchitecture, ModelParameters, TrainConfig};

/// Offsets of one layer transition inside the flat parameter vector.
struct LayerSlice {
    weights: std::ops::Range<usize>,
    biases: std::ops::Range<usize>,
    in_size: usize,
    out_size: usize,
}

fn layer_slices(arch: &MlpArchitecture) -> Vec<LayerSlice> {
    let mut out = Vec::new();
    let mut offset = 0;
    for w in arch.layer_sizes().windows(2) {
        let (in_size, out_size) = (w[0] as usize, w[1] as usize);
        let weights = offset..offset + in_size * out_size;
        offset = weights.end;
        let biases = offset..offset + out_size;
        offset = biases.end;
        out.push(LayerSlice {
            weights,
            biases,
            in_size,
            out_size,
        });
    }
    out
}

fn apply_activation(kind: Activation, z: &mut [f64]) {
    match kind {
        Activation::Relu => {
            for v in z {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        Activation::Sigmoid => {
            for v in z {
                *v = 1.0 / (1.0 + (-*v).exp());
            }
        }
    }
}

/// Derivative of the activation expressed through the activation output.
fn activation_derivative(kind: Activation, activated: f64) -> f64 {
    match kind {
        Activation::Relu => {
            if activated > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Sigmoid => activated * (1.0 - activated),
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Per-layer activations for one example, input included; the last entry
/// holds the softmax probabilities.
fn forward_trace(values: &[f64], arch: &MlpArchitecture, row: &[f64]) -> Vec<Vec<f64>> {
    let slices = layer_slices(arch);
    let mut activations = Vec::with_capacity(slices.len() + 1);
    activations.push(row.to_vec());
    for (l, s) in slices.iter().enumerate() {
        let input = &activations[l];
        let mut z = vec![0.0f64; s.out_size];
        let weights = &values[s.weights.clone()];
        let biases = &values[s.biases.clone()];
        for (o, zo) in z.iter_mut().enumerate() {
            let row_w = &weights[o * s.in_size..(o + 1) * s.in_size];
            let mut acc = biases[o];
            for (w, x) in row_w.iter().zip(input) {
                acc += w * x;
            }
            *zo = acc;
        }
        if l + 1 == slices.len() {
            softmax_in_place(&mut z);
        } else {
            apply_activation(arch.activation(), &mut z);
        }
        activations.push(z);
    }
    activations
}

/// Seeded Xavier-style initialization: each transition's weights drawn
/// uniformly within `±sqrt(6 / (fan_in + fan_out))`, biases zero.
pub fn init_model(arch: &MlpArchitecture, seed: u64) -> ModelParameters {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut values = vec![0.0f64; arch.param_count()];
    for s in layer_slices(arch) {
        let limit = (6.0 / (s.in_size + s.out_size) as f64).sqrt();
        for v in &mut values[s.weights] {
            *v = rng.gen_range(-limit..limit);
        }
        // biases stay zero
    }
    ModelParameters::new(arch.clone(), values).expect("generated values match arch")
}

/// Runs the network over `features` (row-major, `width` columns) and returns
/// the class-probability rows, flattened row-major.
pub fn forward(model: &ModelParameters, features: &[f64], width: usize) -> Result<Vec<f64>> {
    if width != model.arch().input_dim() {
        return Err(Error::invalid_input(format!(
            "feature width {} does not match input layer {}",
            width,
            model.arch().input_dim()
        )));
    }
    if width == 0 || features.len() % width != 0 {
        return Err(Error::invalid_input(
            "feature buffer length must be a multiple of the width",
        ));
    }
    let n = features.len() / width;
    let classes = model.arch().output_dim();
    let mut out = Vec::with_capacity(n * classes);
    for i in 0..n {
        let row = &features[i * width..(i + 1) * width];
        let trace = forward_trace(model.values(), model.arch(), row);
        out.extend_from_slice(trace.last().expect("trace has output layer"));
    }
    Ok(out)
}

fn check_dataset(model: &ModelParameters, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid_input("dataset is empty"));
    }
    if data.width() != model.arch().input_dim() {
        return Err(Error::invalid_input(format!(
            "dataset width {} does not match input layer {}",
            data.width(),
            model.arch().input_dim()
        )));
    }
    if data.n_classes() > model.arch().output_dim() {
        return Err(Error::invalid_input(format!(
            "dataset has {} classes but the output layer only {}",
            data.n_classes(),
            model.arch().output_dim()
        )));
    }
    Ok(())
}

/// Mean loss and mean gradient over the given row indices.
fn batch_loss_gradient(
    values: &[f64],
    arch: &MlpArchitecture,
    data: &Dataset,
    rows: &[usize],
) -> (f64, Vec<f64>) {
    let slices = layer_slices(arch);
    let mut grad = vec![0.0f64; values.len()];
    let mut loss = 0.0f64;
    let scale = 1.0 / rows.len() as f64;
    for &r in rows {
        let activations = forward_trace(values, arch, data.row(r));
        let probs = activations.last().expect("output layer");
        let label = data.labels()[r];
        loss -= probs[label].ln() * scale;

        // dL/dz at the output for softmax + cross-entropy.
        let mut delta: Vec<f64> = probs.iter().map(|&p| p * scale).collect();
        delta[label] -= scale;

        for (l, s) in slices.iter().enumerate().rev() {
            let input = &activations[l];
            let weights = &values[s.weights.clone()];
            for (o, d) in delta.iter().enumerate() {
                let w_row = s.weights.start + o * s.in_size;
                for (i, x) in input.iter().enumerate() {
                    grad[w_row + i] += d * x;
                }
                grad[s.biases.start + o] += d;
            }
            if l > 0 {
                let mut next = vec![0.0f64; s.in_size];
                for (o, d) in delta.iter().enumerate() {
                    let row_w = &weights[o * s.in_size..(o + 1) * s.in_size];
                    for (i, w) in row_w.iter().enumerate() {
                        next[i] += w * d;
                    }
                }
                for (i, v) in next.iter_mut().enumerate() {
                    *v *= activation_derivative(arch.activation(), activations[l][i]);
                }
                delta = next;
            }
        }
    }
    (loss, grad)
}

/// Mean softmax cross-entropy loss of `model` over the whole dataset.
pub fn cross_entropy_loss(model: &ModelParameters, data: &Dataset) -> Result<f64> {
    check_dataset(model, data)?;
    let rows: Vec<usize> = (0..data.len()).collect();
    let (loss, _) = batch_loss_gradient(model.values(), model.arch(), data, &rows);
    Ok(loss)
}

/// Analytic gradient of [`cross_entropy_loss`] with respect to every
/// parameter, in storage order.
pub fn loss_gradient(model: &ModelParameters, data: &Dataset) -> Result<Vec<f64>> {
    check_dataset(model, data)?;
    let rows: Vec<usize> = (0..data.len()).collect();
    let (_, grad) = batch_loss_gradient(model.values(), model.arch(), data, &rows);
    Ok(grad)
}

/// Mini-batch SGD: `epochs` passes over a seeded shuffle of the dataset,
/// `ceil(len/batch)` steps per pass. The input model is untouched; the
/// returned parameters are the trained copy.
pub fn local_train(
    model: &ModelParameters,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<ModelParameters> {
    cfg.validate(data.len())?;
    check_dataset(model, data)?;
    let arch = model.arch().clone();
    let mut values = model.values().to_vec();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.rng_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grad) = batch_loss_gradient(&values, &arch, data, batch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { step });
            }
            for (v, g) in values.iter_mut().zip(&grad) {
                *v -= cfg.learning_rate * g;
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::TrainingDiverged { step });
            }
            step += 1;
        }
    }
    ModelParameters::new(arch, values)
}

/// Fraction of rows whose argmax prediction matches the label. Ties go to
/// the lowest class index.
pub fn evaluate(model: &ModelParameters, test_set: &Dataset) -> Result<f64> {
    check_dataset(model, test_set)?;
    let mut correct = 0usize;
    for i in 0..test_set.len() {
        let trace = forward_trace(model.values(), model.arch(), test_set.row(i));
        let probs = trace.last().expect("output layer");
        let mut best = 0usize;
        for (c, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = c;
            }
        }
        if best == test_set.labels()[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_set.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(sizes: &[u32], act: Activation) -> MlpArchitecture {
        MlpArchitecture::new(sizes.to_vec(), act).unwrap()
    }

    fn zero_model(a: &MlpArchitecture) -> ModelParameters {
        ModelParameters::new(a.clone(), vec![0.0; a.param_count()]).unwrap()
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = arch(&[4, 10, 3], Activation::Relu);
        assert_eq!(init_model(&a, 9).values(), init_model(&a, 9).values());
        assert_ne!(init_model(&a, 9).values(), init_model(&a, 10).values());
    }

    #[test]
    fn init_biases_are_zero() {
        let a = arch(&[4, 10, 3], Activation::Relu);
        let m = init_model(&a, 1);
        // bias ranges: [40..50) and [80..83)
        assert!(m.values()[40..50].iter().all(|&v| v == 0.0));
        assert!(m.values()[80..83].iter().all(|&v| v == 0.0));
        assert!(m.values()[..40].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let a = arch(&[3, 4], Activation::Relu);
        let m = zero_model(&a);
        let probs = forward(&m, &[0.3, -1.0, 2.0], 3).unwrap();
        for &p in &probs {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn probability_rows_sum_to_one() {
        let a = arch(&[5, 7, 3], Activation::Sigmoid);
        let m = init_model(&a, 3);
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let features: Vec<f64> = (0..50 * 5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let probs = forward(&m, &features, 5).unwrap();
        for row in probs.chunks(3) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-9);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn forward_rejects_width_mismatch() {
        let a = arch(&[3, 4], Activation::Relu);
        let m = zero_model(&a);
        assert!(forward(&m, &[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn forward_matches_hand_rolled_two_two_two() {
        // 2-2-2 sigmoid net, arithmetic done longhand below.
        let a = arch(&[2, 2, 2], Activation::Sigmoid);
        // layout: W0 (2x2 row-major), b0 (2), W1 (2x2), b1 (2)
        let values = vec![0.5, -0.25, 0.75, 1.0, 0.1, -0.1, 1.5, -0.5, 0.25, 0.5, 0.2, -0.2];
        let m = ModelParameters::new(a, values).unwrap();
        let x = [0.4f64, -0.8];

        // hidden pre-activation
        let z0: f64 = 0.5 * 0.4 + (-0.25) * (-0.8) + 0.1;
        let z1: f64 = 0.75 * 0.4 + 1.0 * (-0.8) + (-0.1);
        let h0 = 1.0 / (1.0 + (-z0).exp());
        let h1 = 1.0 / (1.0 + (-z1).exp());
        // output logits
        let o0: f64 = 1.5 * h0 + (-0.5) * h1 + 0.2;
        let o1: f64 = 0.25 * h0 + 0.5 * h1 + (-0.2);
        let e0 = (o0 - o0.max(o1)).exp();
        let e1 = (o1 - o0.max(o1)).exp();
        let expect = [e0 / (e0 + e1), e1 / (e0 + e1)];

        let probs = forward(&m, &x, 2).unwrap();
        assert!((probs[0] - expect[0]).abs() < 1e-12);
        assert!((probs[1] - expect[1]).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let a = arch(&[3, 5, 2], Activation::Relu);
        let m = init_model(&a, 4);
        let data = toy_data();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            batch_size: 2,
            rng_seed: 1,
        };
        let out = local_train(&m, &data, &cfg).unwrap();
        assert_eq!(out.values(), m.values());
    }

    #[test]
    fn one_step_matches_finite_difference_gradient() {
        let a = arch(&[3, 5, 2], Activation::Sigmoid);
        let m = init_model(&a, 17);
        let one = Dataset::new(vec![0.5, -1.0, 0.25], 3, vec![1], 2).unwrap();
        let eta = 0.05;
        let cfg = TrainConfig {
            learning_rate: eta,
            epochs: 1,
            batch_size: 1,
            rng_seed: 2,
        };
        let trained = local_train(&m, &one, &cfg).unwrap();

        let h = 1e-6;
        for idx in 0..m.values().len() {
            let mut plus = m.values().to_vec();
            plus[idx] += h;
            let mut minus = m.values().to_vec();
            minus[idx] -= h;
            let lp = cross_entropy_loss(
                &ModelParameters::new(a.clone(), plus).unwrap(),
                &one,
            )
            .unwrap();
            let lm = cross_entropy_loss(
                &ModelParameters::new(a.clone(), minus).unwrap(),
                &one,
            )
            .unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let expect = m.values()[idx] - eta * fd;
            let got = trained.values()[idx];
            let denom = expect.abs().max(1e-4);
            assert!(
                ((got - expect) / denom).abs() < 1e-4,
                "param {idx}: got {got}, expected {expect}"
            );
        }
    }

    fn toy_data() -> Dataset {
        // two well separated blobs on a line
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..10 {
            let off = i as f64 * 0.05;
            features.extend_from_slice(&[2.0 + off, 2.0 - off, 0.1]);
            labels.push(0);
            features.extend_from_slice(&[-2.0 - off, -2.0 + off, -0.1]);
            labels.push(1);
        }
        Dataset::new(features, 3, labels, 2).unwrap()
    }

    #[test]
    fn training_loss_decreases_on_separable_data() {
        let a = arch(&[3, 5, 2], Activation::Relu);
        let m = init_model(&a, 5);
        let data = toy_data();
        let cfg = TrainConfig {
            learning_rate: 0.2,
            epochs: 10,
            batch_size: 4,
            rng_seed: 3,
        };
        let before = cross_entropy_loss(&m, &data).unwrap();
        let trained = local_train(&m, &data, &cfg).unwrap();
        let after = cross_entropy_loss(&trained, &data).unwrap();
        assert!(after < before, "loss went {before} -> {after}");
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let a = arch(&[3, 5, 2], Activation::Relu);
        let m = init_model(&a, 5);
        let data = toy_data();
        let cfg = TrainConfig {
            learning_rate: 0.2,
            epochs: 4,
            batch_size: 3,
            rng_seed: 9,
        };
        let t1 = local_train(&m, &data, &cfg).unwrap();
        let t2 = local_train(&m, &data, &cfg).unwrap();
        assert_eq!(t1.values(), t2.values());
    }

    #[test]
    fn evaluate_perfect_and_uniform_models() {
        // identity-ish net on one-hot features predicts the label exactly
        let a = arch(&[3, 3], Activation::Relu);
        let mut values = vec![0.0; a.param_count()];
        for c in 0..3 {
            values[c * 3 + c] = 10.0; // strong diagonal
        }
        let m = ModelParameters::new(a.clone(), values).unwrap();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..30 {
            let c = i % 3;
            let mut row = [0.0; 3];
            row[c] = 1.0;
            features.extend_from_slice(&row);
            labels.push(c);
        }
        let data = Dataset::new(features, 3, labels, 3).unwrap();
        assert_eq!(evaluate(&m, &data).unwrap(), 1.0);

        // zero weights tie every class; lowest index wins, so accuracy is
        // the share of class 0 — about 1/C on balanced data
        let zero = zero_model(&a);
        let acc = evaluate(&zero, &data).unwrap();
        assert!((acc - 1.0 / 3.0).abs() <= 0.1);
    }

    #[test]
    fn evaluate_is_pure() {
        let a = arch(&[3, 5, 2], Activation::Relu);
        let m = init_model(&a, 21);
        let data = toy_data();
        let x = evaluate(&m, &data).unwrap();
        let y = evaluate(&m, &data).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn training_divergence_is_reported_with_step() {
        let a = arch(&[3, 5, 2], Activation::Relu);
        let m = init_model(&a, 5);
        let data = toy_data();
        let cfg = TrainConfig {
            learning_rate: 1e300,
            epochs: 2,
            batch_size: 4,
            rng_seed: 3,
        };
        match local_train(&m, &data, &cfg) {
            Err(Error::TrainingDiverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
