//! MLP parameters, forward pass, and SGD.
//!
//! Models are plain dense stacks: every hidden layer is ReLU, the output
//! layer emits raw logits. Softmax is applied by losses and callers, never
//! here — distillation needs the same logits softened at two different
//! temperatures.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::tape::{Gradients, NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// One dense layer: row-major `[out×in]` weight, length-`out` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Ordered layer stack. Two values with equal layer shapes are
/// element-wise combinable (averaging, SGD updates).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layers: Vec<Layer>,
}

/// Per-layer gradient pair produced by a backward pass.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ModelParams {
    /// Builds from explicit layers, checking that adjacent dimensions
    /// chain and that bias lengths match.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::dimension("model must have at least one layer"));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.numel() != layer.out_dim() {
                return Err(Error::dimension(format!(
                    "layer {i}: bias length {} vs {} output units",
                    layer.bias.numel(),
                    layer.out_dim()
                )));
            }
            if i + 1 < layers.len() && layers[i + 1].in_dim() != layer.out_dim() {
                return Err(Error::dimension(format!(
                    "layer {} input dim {} does not chain with layer {i} output dim {}",
                    i + 1,
                    layers[i + 1].in_dim(),
                    layer.out_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Seeded MLP over `dims = [in, hidden..., out]`, weights and biases
    /// uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`. Hidden layers are
    /// ReLU, the output layer identity.
    pub fn init_mlp(dims: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::parameter(format!(
                "init_mlp needs at least [in, out] dims, got {dims:?}"
            )));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            if fan_in == 0 || fan_out == 0 {
                return Err(Error::parameter(format!("init_mlp: zero dim in {dims:?}")));
            }
            let bound = 1.0 / math::sqrt(fan_in as f64);
            let weight = Tensor::matrix(
                fan_out,
                fan_in,
                (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect(),
            )?;
            let bias = Tensor::new(
                alloc::vec![fan_out],
                (0..fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect(),
            )?;
            let activation = if i + 1 == dims.len() - 1 {
                Activation::Identity
            } else {
                Activation::Relu
            };
            layers.push(Layer {
                weight,
                bias,
                activation,
            });
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Total number of f64 parameters; the per-round communication
    /// payload of one model.
    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.numel() + l.bias.numel())
            .sum()
    }

    pub fn same_architecture(&self, other: &ModelParams) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weight.shape() == b.weight.shape() && a.bias.shape() == b.bias.shape()
            })
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.all_finite() && l.bias.all_finite())
    }
}

/// Raw logits for a batch: `x [batch×in] -> [batch×classes]`.
/// Deterministic; no softmax.
pub fn forward(params: &ModelParams, x: &Tensor) -> Result<Tensor> {
    if !x.is_matrix() {
        return Err(Error::dimension(format!(
            "forward expects a [batch×features] matrix, got shape {:?}",
            x.shape()
        )));
    }
    let mut cur = x.clone();
    for (i, layer) in params.layers.iter().enumerate() {
        if cur.cols() != layer.in_dim() {
            return Err(Error::dimension(format!(
                "layer {i} expects {} input features, got {}",
                layer.in_dim(),
                cur.cols()
            )));
        }
        cur = cur.matmul_nt(&layer.weight)?.add_row(&layer.bias)?;
        if layer.activation == Activation::Relu {
            cur = cur.relu();
        }
    }
    Ok(cur)
}

/// `w - eta·g`, element-wise, for every layer. Pure: inputs unchanged.
pub fn sgd_step(params: &ModelParams, grads: &[LayerGrads], eta: f64) -> Result<ModelParams> {
    if !(eta >= 0.0) {
        return Err(Error::parameter(format!(
            "sgd_step learning rate must be non-negative, got {eta}"
        )));
    }
    if grads.len() != params.layers.len() {
        return Err(Error::dimension(format!(
            "sgd_step: {} gradient layers for {} parameter layers",
            grads.len(),
            params.layers.len()
        )));
    }
    let mut layers = Vec::with_capacity(params.layers.len());
    for (i, (layer, grad)) in params.layers.iter().zip(grads).enumerate() {
        if !layer.weight.same_shape(&grad.weight) || !layer.bias.same_shape(&grad.bias) {
            return Err(Error::dimension(format!(
                "sgd_step: gradient shape mismatch at layer {i}"
            )));
        }
        layers.push(Layer {
            weight: layer.weight.sub(&grad.weight.scale(eta))?,
            bias: layer.bias.sub(&grad.bias.scale(eta))?,
            activation: layer.activation,
        });
    }
    Ok(ModelParams { layers })
}

/// A model whose parameters have been recorded on a tape, ready for a
/// differentiable forward pass.
pub struct TapedModel {
    layers: Vec<(NodeId, NodeId, Activation)>,
}

impl TapedModel {
    /// Records every weight and bias as a leaf on `tape`.
    pub fn record(tape: &mut Tape, params: &ModelParams) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| {
                let w = tape.leaf(l.weight.clone());
                let b = tape.leaf(l.bias.clone());
                (w, b, l.activation)
            })
            .collect();
        Self { layers }
    }

    /// Forward pass on the tape; returns the logits node.
    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let mut cur = x;
        for &(w, b, activation) in &self.layers {
            cur = tape.matmul_t(cur, w)?;
            cur = tape.add_row(cur, b)?;
            if activation == Activation::Relu {
                cur = tape.relu(cur);
            }
        }
        Ok(cur)
    }

    /// Extracts per-layer parameter gradients (zeros where a parameter
    /// does not influence the loss).
    pub fn grads(&self, tape: &Tape, gradients: &Gradients) -> Vec<LayerGrads> {
        self.layers
            .iter()
            .map(|&(w, b, _)| LayerGrads {
                weight: gradients.get_or_zeros(w, tape.value(w).shape()),
                bias: gradients.get_or_zeros(b, tape.value(b).shape()),
            })
            .collect()
    }
}

/// Learning-rate / batch-size / local-epoch bundle shared by federated
/// training and distillation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub eta: f64,
    pub batch_size: usize,
    pub local_epochs: u32,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            eta: 0.05,
            batch_size: 32,
            local_epochs: 2,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(Error::parameter(format!(
                "learning rate must be positive, got {}",
                self.eta
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::parameter("batch size must be positive"));
        }
        if self.local_epochs == 0 {
            return Err(Error::parameter("local epoch count must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_model_gives_zero_logits() {
        let layers = vec![Layer {
            weight: Tensor::matrix(3, 2, vec![0.0; 6]).unwrap(),
            bias: Tensor::new(vec![3], vec![0.0; 3]).unwrap(),
            activation: Activation::Identity,
        }];
        let params = ModelParams::from_layers(layers).unwrap();
        let x = Tensor::matrix(2, 2, vec![1.0, -4.0, 2.5, 7.0]).unwrap();
        let y = forward(&params, &x).unwrap();
        assert_eq!(y.data(), &[0.0; 6]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layers = vec![Layer {
            weight: Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            bias: Tensor::new(vec![2], vec![0.0, 0.0]).unwrap(),
            activation: Activation::Identity,
        }];
        let params = ModelParams::from_layers(layers).unwrap();
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let y = forward(&params, &x).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    /// Straight-line reimplementation of the 2-4-3 MLP forward as an
    /// independent oracle.
    #[test]
    fn forward_matches_hand_rolled_oracle() {
        let mut rng = rng_from_seed(12345);
        let params = ModelParams::init_mlp(&[2, 4, 3], &mut rng).unwrap();
        let x = Tensor::matrix(2, 2, vec![0.3, -1.2, 2.0, 0.5]).unwrap();
        let y = forward(&params, &x).unwrap();

        for row in 0..2 {
            let xin = [x.at(row, 0), x.at(row, 1)];
            let l0 = &params.layers()[0];
            let mut h = [0.0; 4];
            for (j, hj) in h.iter_mut().enumerate() {
                let mut acc = l0.bias.data()[j];
                for (k, &xv) in xin.iter().enumerate() {
                    acc += l0.weight.at(j, k) * xv;
                }
                *hj = if acc > 0.0 { acc } else { 0.0 };
            }
            let l1 = &params.layers()[1];
            for c in 0..3 {
                let mut acc = l1.bias.data()[c];
                for (k, &hv) in h.iter().enumerate() {
                    acc += l1.weight.at(c, k) * hv;
                }
                assert_abs_diff_eq!(y.at(row, c), acc, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = rng_from_seed(99);
        let params = ModelParams::init_mlp(&[3, 5, 2], &mut rng).unwrap();
        let x = Tensor::matrix(4, 3, (0..12).map(|i| i as f64 * 0.17 - 1.0).collect()).unwrap();
        let y1 = forward(&params, &x).unwrap();
        let y2 = forward(&params, &x).unwrap();
        for (a, b) in y1.data().iter().zip(y2.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn forward_names_offending_layer() {
        let mut rng = rng_from_seed(1);
        let params = ModelParams::init_mlp(&[3, 4, 2], &mut rng).unwrap();
        let x = Tensor::matrix(1, 5, vec![0.0; 5]).unwrap();
        let err = forward(&params, &x).unwrap_err();
        assert!(err.message().contains("layer 0"), "{err}");
    }

    #[test]
    fn sgd_step_arithmetic() {
        let params = ModelParams::from_layers(vec![Layer {
            weight: Tensor::matrix(1, 1, vec![1.0]).unwrap(),
            bias: Tensor::new(vec![1], vec![0.0]).unwrap(),
            activation: Activation::Identity,
        }])
        .unwrap();
        let grads = vec![LayerGrads {
            weight: Tensor::matrix(1, 1, vec![2.0]).unwrap(),
            bias: Tensor::new(vec![1], vec![0.0]).unwrap(),
        }];
        let next = sgd_step(&params, &grads, 0.5).unwrap();
        assert_eq!(next.layers()[0].weight.data(), &[0.0]);

        // zero gradients leave params unchanged
        let zero = vec![LayerGrads {
            weight: Tensor::matrix(1, 1, vec![0.0]).unwrap(),
            bias: Tensor::new(vec![1], vec![0.0]).unwrap(),
        }];
        let same = sgd_step(&params, &zero, 0.5).unwrap();
        assert_eq!(same, params);
    }

    #[test]
    fn two_steps_equal_one_summed_step_for_fixed_grads() {
        let mut rng = rng_from_seed(5);
        let params = ModelParams::init_mlp(&[2, 3], &mut rng).unwrap();
        let grads = vec![LayerGrads {
            weight: Tensor::matrix(3, 2, (0..6).map(|i| 0.1 * i as f64).collect()).unwrap(),
            bias: Tensor::new(vec![3], vec![0.5, -0.25, 0.125]).unwrap(),
        }];
        let twice = sgd_step(&sgd_step(&params, &grads, 0.1).unwrap(), &grads, 0.1).unwrap();
        let doubled = vec![LayerGrads {
            weight: grads[0].weight.scale(2.0),
            bias: grads[0].bias.scale(2.0),
        }];
        let once = sgd_step(&params, &doubled, 0.1).unwrap();
        for (a, b) in twice.layers().iter().zip(once.layers()) {
            for (x, y) in a.weight.data().iter().zip(b.weight.data()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-15);
            }
        }
    }
}
