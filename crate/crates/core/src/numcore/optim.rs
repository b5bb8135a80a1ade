use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::net::{DenseNet, Gradients};
use crate::error::{Error, Result};

/// Adam moments for one [`DenseNet`].
#[derive(Debug, Clone)]
pub struct OptimizerState {
    first: Vec<(Matrix, Vec<f64>)>,
    second: Vec<(Matrix, Vec<f64>)>,
    step: u64,
    pub hyper: AdamConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl OptimizerState {
    pub fn new(net: &DenseNet, hyper: AdamConfig) -> Self {
        let zeros = || {
            net.layers()
                .iter()
                .map(|l| (Matrix::zeros(l.input_dim(), l.output_dim()), vec![0.0; l.output_dim()]))
                .collect::<Vec<_>>()
        };
        Self {
            first: zeros(),
            second: zeros(),
            step: 0,
            hyper,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `net` in place.
///
/// Gradients are validated before anything is touched, so a rejected step leaves
/// both the network and the optimizer state unchanged.
pub fn optimizer_step(net: &mut DenseNet, grads: &Gradients, state: &mut OptimizerState) -> Result<()> {
    if grads.layers.len() != net.layers().len() || state.first.len() != net.layers().len() {
        return Err(Error::shape(
            "optimizer layers",
            net.layers().len(),
            grads.layers.len(),
        ));
    }
    for (i, (layer, g)) in net.layers().iter().zip(&grads.layers).enumerate() {
        if g.weight.shape() != layer.weight.shape() || g.bias.len() != layer.bias.len() {
            return Err(Error::shape(
                "optimizer gradient",
                format!("{:?}", layer.weight.shape()),
                format!("{:?} (layer {i})", g.weight.shape()),
            ));
        }
        if let Some(pos) = g.weight.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of layer {i} weight[{pos}]")));
        }
        if let Some(pos) = g.bias.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of layer {i} bias[{pos}]")));
        }
    }

    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.hyper;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);

    let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    };

    for (((layer, g), (m_w, m_b)), (v_w, v_b)) in net
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        update(
            layer.weight.as_mut_slice(),
            g.weight.as_slice(),
            m_w.as_mut_slice(),
            v_w.as_mut_slice(),
        );
        update(&mut layer.bias, &g.bias, m_b, v_b);
    }
    Ok(())
}
