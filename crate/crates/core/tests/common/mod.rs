//! Shared oracles for the integration tests.
#![allow(dead_code)]

use cemvc::clustering::{self, Centroids, TargetDistribution};
use cemvc::model::{Architecture, ClusterTarget, ViewModel};
use cemvc::numcore::{DenseNet, Gradients, Matrix};
use itertools::Itertools;
use rand::Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;

pub fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Gaussian biases, so no unit sits exactly on its relu kink for an all-zero input row.
pub fn randomize_biases<R: Rng>(net: &mut DenseNet, rng: &mut R) {
    for layer in net.layers_mut() {
        layer.bias.iter_mut().for_each(|b| *b = 0.5 * rng.sample::<f64, _>(StandardNormal));
    }
}

/// A freshly initialized model with random biases.
pub fn random_model<R: Rng>(input_dim: usize, arch: &Architecture, rng: &mut R) -> ViewModel {
    let mut m = ViewModel::init(0, input_dim, arch, rng.gen()).unwrap();
    randomize_biases(m.encoder_mut(), rng);
    randomize_biases(m.decoder_mut(), rng);
    m
}

/// Worst entry-wise `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

pub fn flatten(grads: &Gradients) -> Vec<f64> {
    grads
        .layers
        .iter()
        .flat_map(|g| g.weight.as_slice().iter().chain(&g.bias).copied())
        .collect()
}

/// Central differences of `f` over every parameter of `net`, in `flatten` order.
pub fn numeric_net_gradient(net: &DenseNet, f: impl Fn(&DenseNet) -> f64) -> Vec<f64> {
    let mut probe = net.clone();
    let mut out = Vec::new();
    for l in 0..net.layers().len() {
        let nw = net.layers()[l].weight.as_slice().len();
        for i in 0..nw {
            out.push(central(&mut probe, |n| &mut n.layers_mut()[l].weight.as_mut_slice()[i], &f));
        }
        for i in 0..net.layers()[l].bias.len() {
            out.push(central(&mut probe, |n| &mut n.layers_mut()[l].bias[i], &f));
        }
    }
    out
}

fn central<F: Fn(&DenseNet) -> f64>(net: &mut DenseNet, slot: impl Fn(&mut DenseNet) -> &mut f64, f: &F) -> f64 {
    let orig = *slot(net);
    *slot(net) = orig + FD_STEP;
    let up = f(net);
    *slot(net) = orig - FD_STEP;
    let down = f(net);
    *slot(net) = orig;
    (up - down) / (2.0 * FD_STEP)
}

/// Loss `Σ out ⊙ g` so that `g` is the upstream gradient.
pub fn net_gradient_error(net: &DenseNet, x: &Matrix, g: &Matrix) -> f64 {
    let analytic = flatten(&net.backward(x, g).unwrap());
    let numeric = numeric_net_gradient(net, |n| {
        let out = n.forward(x).unwrap();
        out.as_slice().iter().zip(g.as_slice()).map(|(a, b)| a * b).sum()
    });
    max_rel_error(&analytic, &numeric)
}

/// Worst relative error of the full model gradient (encoder then decoder) of
/// `reconstruction + λ · clustering`.
pub fn model_gradient_error(model: &ViewModel, x: &Matrix, cluster: Option<ClusterTarget<'_>>, lambda: f64) -> f64 {
    let (enc, dec) = model.gradients(x, cluster, lambda).unwrap();
    let mut analytic = flatten(&enc);
    analytic.extend(flatten(&dec));

    let loss = |m: &ViewModel| m.loss(x, cluster, lambda).unwrap().total;
    let mut numeric = numeric_net_gradient(model.encoder(), |e| {
        let mut m = model.clone();
        *m.encoder_mut() = e.clone();
        loss(&m)
    });
    numeric.extend(numeric_net_gradient(model.decoder(), |d| {
        let mut m = model.clone();
        *m.decoder_mut() = d.clone();
        loss(&m)
    }));
    max_rel_error(&analytic, &numeric)
}

/// A sharpened target and centroids for a model's latent space.
pub fn random_cluster_setup<R: Rng>(model: &ViewModel, x: &Matrix, k: usize, rng: &mut R) -> (TargetDistribution, Centroids) {
    let z = model.encode(x).unwrap();
    let centroids = Centroids::new(gaussian_matrix(k, z.cols(), rng)).unwrap();
    let other = Centroids::new(gaussian_matrix(k, z.cols(), rng)).unwrap();
    let q = clustering::soft_assign(&z, &other).unwrap();
    (clustering::target_distribution(&q), centroids)
}

/// Accuracy by trying every relabeling of the predicted clusters.
pub fn brute_force_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let kp = pred.iter().max().map_or(0, |m| m + 1);
    let kt = truth.iter().max().map_or(0, |m| m + 1);
    let slots = kp.max(kt);
    (0..slots)
        .permutations(slots)
        .map(|perm| pred.iter().zip(truth).filter(|(p, t)| perm[**p] == **t).count())
        .max()
        .unwrap_or(0) as f64
        / pred.len() as f64
}

/// Minimum within-cluster sum of squares over every labeling into at most `k` clusters.
pub fn exhaustive_inertia(x: &Matrix, k: usize) -> f64 {
    let n = x.rows();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let c = clustering::centroids_from_labels(x, &labels, k);
        let inertia: f64 = (0..n)
            .map(|i| cemvc::numcore::squared_distance(x.row(i), c.row(labels[i])))
            .sum();
        best = best.min(inertia);
        let mut pos = 0;
        loop {
            if pos == n {
                return best;
            }
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
            pos += 1;
        }
    }
}
