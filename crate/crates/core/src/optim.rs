//! Adam with bias-corrected moment estimates.

use ndarray::{Array1, Array2, Zip};

use crate::error::{Error, Result};
use crate::nn::{Gradients, Network};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    m_weights: Vec<Array2<f64>>,
    v_weights: Vec<Array2<f64>>,
    m_biases: Vec<Array1<f64>>,
    v_biases: Vec<Array1<f64>>,
}

impl AdamState {
    pub fn new(net: &Network, learning_rate: f64) -> Result<Self> {
        Self::with_params(net, learning_rate, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS)
    }

    pub fn with_params(net: &Network, learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        let zeros = Gradients::zeros_like(net);
        Ok(AdamState {
            learning_rate,
            beta1,
            beta2,
            eps,
            step_count: 0,
            m_weights: zeros.weights.clone(),
            v_weights: zeros.weights,
            m_biases: zeros.biases.clone(),
            v_biases: zeros.biases,
        })
    }

    /// Applies one Adam update. Nothing is modified when the gradients contain
    /// a non-finite value.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        if !grads.congruent_with(net) || self.m_weights.len() != net.layers().len() {
            return Err(Error::shape("gradients congruent with the network", "mismatched layer shapes"));
        }
        if !grads.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite gradient at optimizer step {}",
                self.step_count + 1
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.learning_rate);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (i, layer) in net.layers_mut().iter_mut().enumerate() {
            Zip::from(&mut layer.weights)
                .and(&mut self.m_weights[i])
                .and(&mut self.v_weights[i])
                .and(&grads.weights[i])
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut layer.biases)
                .and(&mut self.m_biases[i])
                .and(&mut self.v_biases[i])
                .and(&grads.biases[i])
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        Ok(())
    }
}

/// Convenience wrapper over [`AdamState::step`].
pub fn adam_step(net: &mut Network, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    state.step(net, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};
    use ndarray::array;

    fn scalar_net(w: f64) -> Network {
        Network::from_layers(
            1,
            vec![Layer {
                weights: array![[w]],
                biases: array![0.0],
                activation: Activation::Identity,
            }],
        )
        .unwrap()
    }

    fn grads(gw: f64, gb: f64) -> Gradients {
        Gradients {
            weights: vec![array![[gw]]],
            biases: vec![array![gb]],
        }
    }

    /// Straight-line transcription of the Adam recurrences for one scalar.
    fn reference_adam(w0: f64, gs: &[f64], lr: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
        let mut out = Vec::new();
        for (k, &g) in gs.iter().enumerate() {
            let t = (k + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            w -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            out.push(w);
        }
        out
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        let mut net = scalar_net(0.7);
        let before = net.clone();
        let mut state = AdamState::new(&net, 0.001).unwrap();
        for _ in 0..5 {
            state.step(&mut net, &grads(0.0, 0.0)).unwrap();
        }
        assert_eq!(net, before);
        assert_eq!(state.step_count, 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = scalar_net(0.0);
        let mut state = AdamState::new(&net, 0.001).unwrap();
        adam_step(&mut net, &grads(1.0, 0.0), &mut state).unwrap();
        let w = net.layers()[0].weights[[0, 0]];
        assert!((w + 0.001).abs() < 1e-10, "w = {w}");
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn matches_reference_over_several_steps() {
        let gs = [1.0, 1.0, -0.5, 2.0, 0.1];
        let expected = reference_adam(0.3, &gs, 0.01);
        let mut net = scalar_net(0.3);
        let mut state = AdamState::new(&net, 0.01).unwrap();
        for (g, e) in gs.iter().zip(expected) {
            state.step(&mut net, &grads(*g, 0.0)).unwrap();
            assert_eq!(net.layers()[0].weights[[0, 0]], e);
        }
        let steps = reference_adam(0.0, &[1.0, 1.0], 0.001);
        let first = steps[0].abs();
        let second = (steps[1] - steps[0]).abs();
        assert!(second <= first * 1.1);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut net = scalar_net(0.5);
        let before = net.clone();
        let mut state = AdamState::new(&net, 0.001).unwrap();
        let err = state.step(&mut net, &grads(f64::NAN, 0.0)).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)));
        assert_eq!(net, before);
        assert_eq!(state.step_count, 0);
    }

    #[test]
    fn rejects_bad_learning_rate_and_shapes() {
        let net = scalar_net(0.0);
        assert!(AdamState::new(&net, 0.0).is_err());
        let mut state = AdamState::new(&net, 0.1).unwrap();
        let mut net = net;
        let wrong = Gradients {
            weights: vec![array![[1.0, 2.0]]],
            biases: vec![array![0.0]],
        };
        assert!(state.step(&mut net, &wrong).is_err());
    }
}
