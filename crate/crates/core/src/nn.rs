//! Fully connected tanh networks with hand-written forward and reverse
//! passes. Shared by the score network and the classifiers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `[out, in]`, row-major.
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl Dense {
    /// Uniform `±1/√fan_in` initialisation for weights and biases.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut weight = Tensor::zeros(&[fan_out, fan_in]);
        for w in weight.data_mut() {
            *w = rng.uniform(-bound, bound);
        }
        let mut bias = Tensor::zeros(&[fan_out]);
        for b in bias.data_mut() {
            *b = rng.uniform(-bound, bound);
        }
        Self { weight, bias }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[0]
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        let n_in = self.fan_in();
        out.clear();
        out.extend(
            self.weight
                .data()
                .chunks_exact(n_in)
                .zip(self.bias.data())
                .map(|(row, b)| b + crate::tensor::dot(row, input)),
        );
    }
}

/// `tanh` on every hidden layer, identity on the output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-layer activations recorded by [`Mlp::forward_cached`].
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    /// `inputs[l]` is the input fed to layer `l`.
    inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Parameter gradients with the same layout as [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<Dense>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense {
                    weight: Tensor::zeros_like(&l.weight),
                    bias: Tensor::zeros_like(&l.bias),
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for l in &mut self.layers {
            l.weight.scale_in_place(alpha);
            l.bias.scale_in_place(alpha);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.is_finite())
    }
}

impl Mlp {
    /// `widths = [in, h1, ..., out]`.
    pub fn init(widths: &[usize], rng: &mut RngStream) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|w| Dense::init(w[0], w[1], rng))
            .collect();
        Ok(Self { layers })
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Contract("network has no layers".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::Contract(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].fan_out(),
                    i + 1,
                    pair[1].fan_in()
                )));
            }
        }
        for l in &self.layers {
            if l.bias.len() != l.fan_out() {
                return Err(Error::Contract("bias length does not match layer width".into()));
            }
            if !l.weight.is_finite() || !l.bias.is_finite() {
                return Err(Error::Contract("non-finite network parameter".into()));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Dense::fan_out).unwrap_or(0)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(Dense::fan_out));
        w
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_cached(input).output
    }

    pub fn forward_cached(&self, input: &[f64]) -> ForwardCache {
        debug_assert_eq!(input.len(), self.input_dim());
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = input.to_vec();
        let mut next = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.apply(&current, &mut next);
            if l < last {
                for v in &mut next {
                    *v = v.tanh();
                }
            }
            inputs.push(std::mem::replace(&mut current, std::mem::take(&mut next)));
        }
        ForwardCache {
            inputs,
            output: current,
        }
    }

    /// Reverse pass. Returns `∂L/∂input` given `∂L/∂output`, accumulating
    /// parameter gradients into `grads` when provided.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: &[f64],
        mut grads: Option<&mut MlpGrads>,
    ) -> Vec<f64> {
        let mut delta = grad_output.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.inputs[l];
            let n_in = layer.fan_in();
            if let Some(g) = grads.as_deref_mut() {
                let gl = &mut g.layers[l];
                for ((row, gb), &d) in gl
                    .weight
                    .data_mut()
                    .chunks_exact_mut(n_in)
                    .zip(gl.bias.data_mut())
                    .zip(&delta)
                {
                    *gb += d;
                    for (w, &x) in row.iter_mut().zip(input) {
                        *w += d * x;
                    }
                }
            }
            let mut grad_in = vec![0.0; n_in];
            for (row, &d) in layer.weight.data().chunks_exact(n_in).zip(&delta) {
                for (gi, &w) in grad_in.iter_mut().zip(row) {
                    *gi += d * w;
                }
            }
            if l > 0 {
                // input to layer l is tanh of the previous pre-activation
                for (gi, &a) in grad_in.iter_mut().zip(input) {
                    *gi *= 1.0 - a * a;
                }
            }
            delta = grad_in;
        }
        delta
    }

    /// Flat views over all parameters, for the optimizer.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }
}

impl MlpGrads {
    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite_diff::{finite_diff_grad, relative_error};

    fn net() -> Mlp {
        Mlp::init(&[3, 5, 4, 2], &mut RngStream::new(3, 0)).unwrap()
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = net();
        let x = Tensor::from_vec(vec![0.3, -0.7, 1.1]);
        let w = [0.4, -1.3];
        let cache = net.forward_cached(x.data());
        let g = Tensor::from_vec(net.backward(&cache, &w, None));
        let fd = finite_diff_grad(
            |p| {
                let y = net.forward(p.data());
                w[0] * y[0] + w[1] * y[1]
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(relative_error(&g, &fd, 1e-8) < 1e-7);
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let net = net();
        let x = [0.2, 0.5, -0.4];
        let cache = net.forward_cached(&x);
        let mut grads = MlpGrads::zeros_like(&net);
        net.backward(&cache, &[1.0, 0.0], Some(&mut grads));
        for l in 0..net.layers.len() {
            let w0 = net.layers[l].weight.clone();
            let fd = finite_diff_grad(
                |w| {
                    let mut n = net.clone();
                    n.layers[l].weight = w.clone();
                    n.forward(&x)[0]
                },
                &w0,
                1e-6,
            )
            .unwrap();
            assert!(relative_error(&grads.layers[l].weight, &fd, 1e-8) < 1e-6);
        }
    }

    #[test]
    fn validate_catches_broken_chain() {
        let mut n = net();
        n.layers[1] = Dense::init(7, 4, &mut RngStream::new(0, 0));
        assert!(n.validate().is_err());
        assert!(Mlp::init(&[3], &mut RngStream::new(0, 0)).is_err());
    }
}
