//! Dense feed-forward networks.
//!
//! Batches are row-major: one pattern per row. Layer weights are stored as
//! `[fan_out × fan_in]`, so a layer computes `z = a · Wᵀ + b` for an incoming
//! activation matrix `a` of shape `[batch × fan_in]`.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Softmax,
    Identity,
}

impl Activation {
    fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Sigmoid => z.mapv(sigmoid),
            Activation::Identity => z.clone(),
            Activation::Softmax => {
                let mut out = z.clone();
                for mut row in out.rows_mut() {
                    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    row.mapv_inplace(|v| (v - max).exp());
                    let sum = row.sum();
                    row.mapv_inplace(|v| v / sum);
                }
                out
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
            Activation::Identity => "identity",
        })
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub units: usize,
    pub activation: Activation,
}

/// Architecture description: input width plus one entry per dense layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
}

impl ArchSpec {
    /// ReLU hidden layers followed by one output layer.
    pub fn mlp(input_dim: usize, hidden: &[usize], output: usize, output_activation: Activation) -> Self {
        let mut layers: Vec<LayerSpec> = hidden
            .iter()
            .map(|&units| LayerSpec {
                units,
                activation: Activation::Relu,
            })
            .collect();
        layers.push(LayerSpec {
            units: output,
            activation: output_activation,
        });
        ArchSpec { input_dim, layers }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Architecture("input dimension must be at least 1".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Architecture("at least one layer is required".into()));
        }
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.units == 0 {
                return Err(Error::Architecture(format!("layer {i} has zero units")));
            }
            if layer.activation == Activation::Softmax && i != last {
                return Err(Error::Architecture(format!(
                    "softmax is only allowed on the output layer (found on layer {i})"
                )));
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        let mut fan_in = self.input_dim;
        let mut total = 0;
        for layer in &self.layers {
            total += fan_in * layer.units + layer.units;
            fan_in = layer.units;
        }
        total
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.units)
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.input_dim)?;
        for l in &self.layers {
            write!(f, "-{}({})", l.units, l.activation)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_dim: usize,
    layers: Vec<Layer>,
}

/// Intermediate values of one forward pass, kept for [`Network::backward`].
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub inputs: Array2<f64>,
    pub pre_activations: Vec<Array2<f64>>,
    pub activations: Vec<Array2<f64>>,
    pub output_activation: Activation,
}

impl ForwardTrace {
    pub fn outputs(&self) -> &Array2<f64> {
        self.activations.last().expect("trace has at least one layer")
    }

    pub fn output_pre_activations(&self) -> &Array2<f64> {
        self.pre_activations.last().expect("trace has at least one layer")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.biases.raw_dim())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Same layer-major, weights-then-biases order as [`Network::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub(crate) fn congruent_with(&self, net: &Network) -> bool {
        self.weights.len() == net.layers.len()
            && self.biases.len() == net.layers.len()
            && net.layers.iter().enumerate().all(|(i, l)| {
                self.weights[i].dim() == l.weights.dim() && self.biases[i].len() == l.biases.len()
            })
    }
}

impl Network {
    /// Builds a network with He-uniform weights on ReLU layers, Glorot-uniform
    /// weights elsewhere, and zero biases.
    pub fn build<R: Rng + ?Sized>(spec: &ArchSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut fan_in = spec.input_dim;
        for ls in &spec.layers {
            let limit = match ls.activation {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + ls.units) as f64).sqrt(),
            };
            let dist = Uniform::new_inclusive(-limit, limit);
            let weights = Array2::from_shape_simple_fn((ls.units, fan_in), || dist.sample(rng));
            layers.push(Layer {
                weights,
                biases: Array1::zeros(ls.units),
                activation: ls.activation,
            });
            fan_in = ls.units;
        }
        Ok(Network {
            input_dim: spec.input_dim,
            layers,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(spec: &ArchSpec) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut fan_in = spec.input_dim;
        for ls in &spec.layers {
            layers.push(Layer {
                weights: Array2::zeros((ls.units, fan_in)),
                biases: Array1::zeros(ls.units),
                activation: ls.activation,
            });
            fan_in = ls.units;
        }
        Ok(Network {
            input_dim: spec.input_dim,
            layers,
        })
    }

    pub fn from_layers(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let spec = ArchSpec {
            input_dim,
            layers: layers
                .iter()
                .map(|l| LayerSpec {
                    units: l.fan_out(),
                    activation: l.activation,
                })
                .collect(),
        };
        spec.validate()?;
        let mut fan_in = input_dim;
        for (i, l) in layers.iter().enumerate() {
            if l.fan_in() != fan_in {
                return Err(Error::Architecture(format!(
                    "layer {i} expects {} inputs but receives {fan_in}",
                    l.fan_in()
                )));
            }
            if l.biases.len() != l.fan_out() {
                return Err(Error::Architecture(format!(
                    "layer {i} has {} weight rows but {} biases",
                    l.fan_out(),
                    l.biases.len()
                )));
            }
            fan_in = l.fan_out();
        }
        Ok(Network { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::fan_out)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn output_activation(&self) -> Activation {
        self.layers.last().expect("network has layers").activation
    }

    pub fn spec(&self) -> ArchSpec {
        ArchSpec {
            input_dim: self.input_dim,
            layers: self
                .layers
                .iter()
                .map(|l| LayerSpec {
                    units: l.fan_out(),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    fn check_input(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim {
            return Err(Error::shape(
                format!("{} input columns", self.input_dim),
                format!("{} columns", batch.ncols()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<ForwardTrace> {
        self.check_input(&batch)?;
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = activations.last().map_or(batch.view(), |a| a.view());
            let z = input.dot(&layer.weights.t()) + &layer.biases;
            activations.push(layer.activation.apply(&z));
            pre_activations.push(z);
        }
        Ok(ForwardTrace {
            inputs: batch.to_owned(),
            pre_activations,
            activations,
            output_activation: self.output_activation(),
        })
    }

    /// Forward pass keeping only the final outputs.
    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&batch)?;
        let mut current: Option<Array2<f64>> = None;
        for layer in &self.layers {
            let input = current.as_ref().map_or(batch.view(), |a| a.view());
            let z = input.dot(&layer.weights.t()) + &layer.biases;
            current = Some(layer.activation.apply(&z));
        }
        Ok(current.expect("network has layers"))
    }

    /// Back-propagates `output_error` (∂E/∂z of the output layer, one row per
    /// pattern) through the network. Per-pattern contributions are summed, so
    /// any batch averaging belongs in `output_error`.
    pub fn backward(&self, trace: &ForwardTrace, output_error: ArrayView2<f64>) -> Result<Gradients> {
        let out_shape = trace.outputs().dim();
        if output_error.dim() != out_shape {
            return Err(Error::shape(
                format!("output error {:?}", out_shape),
                format!("{:?}", output_error.dim()),
            ));
        }
        if trace.pre_activations.len() != self.layers.len() {
            return Err(Error::shape(
                format!("trace with {} layers", self.layers.len()),
                trace.pre_activations.len(),
            ));
        }
        let n = self.layers.len();
        let mut weights = vec![Array2::zeros((0, 0)); n];
        let mut biases = vec![Array1::zeros(0); n];
        let mut delta = output_error.to_owned();
        for l in (0..n).rev() {
            let input = if l == 0 {
                trace.inputs.view()
            } else {
                trace.activations[l - 1].view()
            };
            weights[l] = delta.t().dot(&input);
            biases[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut next = delta.dot(&self.layers[l].weights);
                let below = &self.layers[l - 1];
                match below.activation {
                    Activation::Relu => {
                        Zip::from(&mut next)
                            .and(&trace.pre_activations[l - 1])
                            .for_each(|d, &z| {
                                if z <= 0.0 {
                                    *d = 0.0;
                                }
                            });
                    }
                    Activation::Sigmoid => {
                        Zip::from(&mut next)
                            .and(&trace.activations[l - 1])
                            .for_each(|d, &a| *d *= a * (1.0 - a));
                    }
                    Activation::Identity => {}
                    Activation::Softmax => unreachable!("softmax only on the output layer"),
                }
                delta = next;
            }
        }
        Ok(Gradients { weights, biases })
    }

    /// Layer-major flattening: each layer's weights (row-major) followed by its biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend(l.weights.iter().copied());
            out.extend(l.biases.iter().copied());
        }
        out
    }

    pub fn load_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::shape(
                format!("{} parameters", self.parameter_count()),
                values.len(),
            ));
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.biases.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn table_two_parameter_counts() {
        let cases = [
            (ArchSpec::mlp(30, &[10], 1, Activation::Sigmoid), 321),
            (ArchSpec::mlp(9, &[9], 6, Activation::Softmax), 150),
            (ArchSpec::mlp(8, &[8], 1, Activation::Sigmoid), 81),
            (ArchSpec::mlp(784, &[10], 10, Activation::Softmax), 7960),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (spec, expected) in cases {
            assert_eq!(spec.parameter_count(), expected);
            assert_eq!(Network::build(&spec, &mut rng).unwrap().parameter_count(), expected);
        }
    }

    #[test]
    fn rejects_bad_architectures() {
        assert!(Network::zeros(&ArchSpec::mlp(3, &[0], 1, Activation::Sigmoid)).is_err());
        assert!(Network::zeros(&ArchSpec::mlp(0, &[2], 1, Activation::Sigmoid)).is_err());
        let spec = ArchSpec {
            input_dim: 3,
            layers: vec![
                LayerSpec { units: 4, activation: Activation::Softmax },
                LayerSpec { units: 1, activation: Activation::Sigmoid },
            ],
        };
        assert!(matches!(Network::zeros(&spec), Err(Error::Architecture(_))));
    }

    #[test]
    fn zero_network_outputs() {
        let net = Network::zeros(&ArchSpec::mlp(4, &[3], 1, Activation::Sigmoid)).unwrap();
        let x = array![[1.0, -2.0, 3.0, 0.5], [9.0, 9.0, 9.0, 9.0]];
        assert!(net.predict(x.view()).unwrap().iter().all(|&o| o == 0.5));

        let net = Network::zeros(&ArchSpec::mlp(4, &[3], 10, Activation::Softmax)).unwrap();
        let out = net.predict(x.view()).unwrap();
        assert!(out.iter().all(|&o| (o - 0.1).abs() < 1e-15));
    }

    #[test]
    fn identity_network_passes_input_through() {
        let layer = Layer {
            weights: array![[1.0, 0.0], [0.0, 1.0]],
            biases: array![0.0, 0.0],
            activation: Activation::Identity,
        };
        let net = Network::from_layers(2, vec![layer]).unwrap();
        let out = net.predict(array![[1.0, 2.0]].view()).unwrap();
        assert_eq!(out, array![[1.0, 2.0]]);
    }

    #[test]
    fn from_layers_checks_chaining() {
        let a = Layer {
            weights: Array2::zeros((3, 2)),
            biases: Array1::zeros(3),
            activation: Activation::Relu,
        };
        let b = Layer {
            weights: Array2::zeros((1, 4)),
            biases: Array1::zeros(1),
            activation: Activation::Sigmoid,
        };
        assert!(Network::from_layers(2, vec![a.clone(), b]).is_err());
        let c = Layer {
            weights: Array2::zeros((1, 3)),
            biases: Array1::zeros(2),
            activation: Activation::Sigmoid,
        };
        assert!(Network::from_layers(2, vec![a, c]).is_err());
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = Network::zeros(&ArchSpec::mlp(4, &[3], 1, Activation::Sigmoid)).unwrap();
        assert!(matches!(
            net.forward(Array2::zeros((2, 3)).view()),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one_even_for_large_logits() {
        let layer = Layer {
            weights: array![[1000.0], [-1000.0], [999.0]],
            biases: array![0.0, 0.0, 0.0],
            activation: Activation::Softmax,
        };
        let net = Network::from_layers(1, vec![layer]).unwrap();
        let out = net.predict(array![[1.0], [-3.0], [0.0]].view()).unwrap();
        for row in out.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn zero_error_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::build(&ArchSpec::mlp(5, &[4], 3, Activation::Softmax), &mut rng).unwrap();
        let x = Array2::from_shape_fn((6, 5), |(i, j)| (i as f64 - j as f64) * 0.3);
        let trace = net.forward(x.view()).unwrap();
        let grads = net.backward(&trace, Array2::zeros((6, 3)).view()).unwrap();
        assert!(grads.to_flat().iter().all(|&g| g == 0.0));
        assert!(grads.congruent_with(&net));
    }

    #[test]
    fn backward_rejects_wrong_error_shape() {
        let net = Network::zeros(&ArchSpec::mlp(2, &[2], 1, Activation::Sigmoid)).unwrap();
        let trace = net.forward(Array2::zeros((3, 2)).view()).unwrap();
        assert!(net.backward(&trace, Array2::zeros((3, 2)).view()).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Network::build(&ArchSpec::mlp(30, &[10], 1, Activation::Sigmoid), &mut rng).unwrap();
        let flat = net.to_flat();
        assert_eq!(flat.len(), 321);
        let mut other = Network::zeros(&net.spec()).unwrap();
        other.load_flat(&flat).unwrap();
        assert_eq!(other, net);
        assert!(other.load_flat(&flat[1..]).is_err());
    }

    #[test]
    fn initialization_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Network::build(&ArchSpec::mlp(784, &[10], 10, Activation::Softmax), &mut rng).unwrap();
        let he = (6.0f64 / 784.0).sqrt();
        let glorot = (6.0f64 / 20.0).sqrt();
        assert!(net.layers()[0].weights.iter().all(|w| w.abs() <= he));
        assert!(net.layers()[1].weights.iter().all(|w| w.abs() <= glorot));
        assert!(net.layers().iter().all(|l| l.biases.iter().all(|&b| b == 0.0)));
    }
}
