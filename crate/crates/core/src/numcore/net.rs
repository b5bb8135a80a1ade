use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Linear => v,
        }
    }
}

/// One affine layer `y = act(x · W + b)`; `weight` is `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Feed-forward stack of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Gradients of a scalar loss with respect to every parameter of a [`DenseNet`],
/// plus the gradient with respect to the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    pub input: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Activations recorded during a forward pass; `values[0]` is the input.
#[derive(Debug, Clone)]
pub struct Trace {
    values: Vec<Matrix>,
}

impl Trace {
    pub fn output(&self) -> &Matrix {
        self.values.last().expect("trace holds at least the input")
    }
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("network needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::shape("layer bias", layer.output_dim(), layer.bias.len()));
            }
            if !layer.weight.is_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
            if i > 0 && layers[i - 1].output_dim() != layer.input_dim() {
                return Err(Error::shape(
                    "layer chain",
                    layers[i - 1].output_dim(),
                    layer.input_dim(),
                ));
            }
        }
        Ok(Self { layers })
    }

    /// Random network over `sizes` (`sizes[0]` inputs, `sizes.last()` outputs).
    /// Hidden layers use `hidden`, the final layer uses `output`. Weights are
    /// uniform in `±1/sqrt(fan_in)`, biases start at zero.
    pub fn init<R: Rng>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidInput(format!("invalid layer sizes {sizes:?}")));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Layer {
                    weight: Matrix::from_fn(w[0], w[1], |_, _| rng.gen_range(-bound..bound)),
                    bias: vec![0.0; w[1]],
                    activation: if i == last { output } else { hidden },
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut current = self.apply_layer(0, x)?;
        for i in 1..self.layers.len() {
            current = self.apply_layer(i, &current)?;
        }
        Ok(current)
    }

    pub fn forward_trace(&self, x: &Matrix) -> Result<Trace> {
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.clone());
        for i in 0..self.layers.len() {
            let next = self.apply_layer(i, &values[i])?;
            values.push(next);
        }
        Ok(Trace { values })
    }

    fn apply_layer(&self, i: usize, x: &Matrix) -> Result<Matrix> {
        let layer = &self.layers[i];
        if x.cols() != layer.input_dim() {
            return Err(Error::shape(
                "forward input columns",
                format!("{} (layer {i})", layer.input_dim()),
                x.cols(),
            ));
        }
        let mut out = x.matmul(&layer.weight)?;
        for r in 0..out.rows() {
            for (v, b) in out.row_mut(r).iter_mut().zip(&layer.bias) {
                *v = layer.activation.apply(*v + b);
            }
        }
        Ok(out)
    }

    /// Backpropagates `loss_grad` (dL/d output) through the network evaluated at `x`.
    pub fn backward(&self, x: &Matrix, loss_grad: &Matrix) -> Result<Gradients> {
        let trace = self.forward_trace(x)?;
        self.backward_trace(&trace, loss_grad)
    }

    pub fn backward_trace(&self, trace: &Trace, loss_grad: &Matrix) -> Result<Gradients> {
        let out = trace.output();
        if loss_grad.shape() != out.shape() {
            return Err(Error::shape(
                "backward loss gradient",
                format!("{:?}", out.shape()),
                format!("{:?}", loss_grad.shape()),
            ));
        }
        let mut upstream = loss_grad.clone();
        let mut grads = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let output = &trace.values[i + 1];
            if layer.activation == Activation::Relu {
                for (g, &o) in upstream.as_mut_slice().iter_mut().zip(output.as_slice()) {
                    if o <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let input = &trace.values[i];
            let weight = input.t_matmul(&upstream)?;
            let mut bias = vec![0.0; layer.output_dim()];
            for row in upstream.row_iter() {
                for (b, g) in bias.iter_mut().zip(row) {
                    *b += g;
                }
            }
            let next = upstream.matmul_t(&layer.weight)?;
            grads.push(LayerGrad { weight, bias });
            upstream = next;
        }
        grads.reverse();
        Ok(Gradients {
            layers: grads,
            input: upstream,
        })
    }

    /// Visits every parameter in a fixed order: per layer, weights row-major then bias.
    pub fn parameters(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.as_slice().iter().chain(&l.bias).copied())
    }
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers()
                .iter()
                .map(|l| LayerGrad {
                    weight: Matrix::zeros(l.input_dim(), l.output_dim()),
                    bias: vec![0.0; l.output_dim()],
                })
                .collect(),
            input: Matrix::zeros(0, net.input_dim()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.weight.is_finite() && g.bias.iter().all(|b| b.is_finite()))
    }
}
