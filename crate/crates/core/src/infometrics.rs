//! Information measures over continuous representations and discrete labelings.
//!
//! Differential entropy uses the leave-one-out resubstitution estimator
//!
//! ```text
//! H(X) = -(1/N) Σ_i log p̂_{-i}(x_i)
//! p̂_{-i}(x) = 1/(N-1) Σ_{k≠i} Π_j φ((x_j - x_kj) / h_j) / h_j
//! ```
//!
//! with a Gaussian product kernel and per-dimension Silverman bandwidth
//! `h_j = 1.06 σ_j N^(-1/(4+D))`. Everything is in nats.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// Lower bound applied to per-dimension standard deviations before computing bandwidths.
pub const SIGMA_FLOOR: f64 = 1e-6;

const SILVERMAN: f64 = 1.06;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub value: f64,
    pub sample_count: usize,
    pub bandwidths: Vec<f64>,
}

/// Total conditional entropy of each view given all the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalEntropyVector(pub Vec<f64>);

impl ConditionalEntropyVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

pub fn silverman_bandwidths(samples: &Matrix) -> Vec<f64> {
    let n = samples.rows() as f64;
    let d = samples.cols() as f64;
    let factor = SILVERMAN * n.powf(-1.0 / (4.0 + d));
    samples
        .column_stds()
        .into_iter()
        .map(|s| s.max(SIGMA_FLOOR) * factor)
        .collect()
}

pub fn kde_entropy(samples: &Matrix) -> Result<EntropyEstimate> {
    let n = samples.rows();
    let d = samples.cols();
    if n < 2 {
        return Err(Error::InvalidInput(format!("entropy needs at least 2 samples, got {n}")));
    }
    if d == 0 {
        return Err(Error::InvalidInput("entropy needs at least one dimension".into()));
    }
    if !samples.is_finite() {
        return Err(Error::NonFinite("entropy samples".into()));
    }
    let bandwidths = silverman_bandwidths(samples);

    // Work in bandwidth units so the kernel exponent is a plain squared distance.
    let z = Matrix::from_fn(n, d, |r, c| samples[(r, c)] / bandwidths[c]);
    let log_norm = -((n - 1) as f64).ln()
        - bandwidths.iter().map(|h| h.ln()).sum::<f64>()
        - 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln();

    let log_density: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let zi = z.row(i);
            let mut exps = Vec::with_capacity(n - 1);
            let mut max = f64::NEG_INFINITY;
            for k in (0..n).filter(|&k| k != i) {
                let e = -0.5 * crate::numcore::squared_distance(zi, z.row(k));
                max = max.max(e);
                exps.push(e);
            }
            let sum: f64 = exps.iter().map(|e| (e - max).exp()).sum();
            log_norm + max + sum.ln()
        })
        .collect();

    let value = -log_density.iter().sum::<f64>() / n as f64;
    Ok(EntropyEstimate {
        value,
        sample_count: n,
        bandwidths,
    })
}

/// Entropy of the column-concatenation `[a | b]`.
pub fn joint_entropy(a: &Matrix, b: &Matrix) -> Result<EntropyEstimate> {
    if a.rows() != b.rows() {
        return Err(Error::shape("joint_entropy rows", a.rows(), b.rows()));
    }
    kde_entropy(&Matrix::hcat(&[a, b])?)
}

/// For each view `v`: `Σ_{u≠v} [H(R^v, R^u) − H(R^u)]`.
///
/// Each unordered pair is estimated once as `H(R^i, R^j)` with `i < j`.
pub fn total_conditional_entropy(reps: &[Matrix]) -> Result<ConditionalEntropyVector> {
    let v = reps.len();
    if v < 2 {
        return Err(Error::InvalidInput(format!(
            "conditional entropy needs at least 2 views, got {v}"
        )));
    }
    let n = reps[0].rows();
    if let Some(bad) = reps.iter().find(|r| r.rows() != n) {
        return Err(Error::shape("conditional entropy rows", n, bad.rows()));
    }
    let marginals = reps
        .par_iter()
        .map(|r| kde_entropy(r).map(|e| e.value))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(usize, usize)> = (0..v)
        .flat_map(|i| (i + 1..v).map(move |j| (i, j)))
        .collect();
    let joints = pairs
        .par_iter()
        .map(|&(i, j)| joint_entropy(&reps[i], &reps[j]).map(|e| e.value))
        .collect::<Result<Vec<_>>>()?;

    let mut total = vec![0.0; v];
    for (&(i, j), joint) in pairs.iter().zip(&joints) {
        total[i] += joint - marginals[j];
        total[j] += joint - marginals[i];
    }
    Ok(ConditionalEntropyVector(total))
}

/// Shannon entropy of the empirical label marginal.
pub fn label_entropy(labels: &[usize], k: usize) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::InvalidInput("label entropy of an empty labeling".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidInput(format!("label {bad} outside [0, {k})")));
    }
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&l| counts[l] += 1);
    Ok(entropy_of_counts(&counts, labels.len()))
}

fn entropy_of_counts(counts: &[usize], total: usize) -> f64 {
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Joint contingency table `counts[a][b]`, sized by the largest label on each side.
pub fn contingency(a: &[usize], b: &[usize]) -> Result<Vec<Vec<usize>>> {
    if a.len() != b.len() {
        return Err(Error::shape("contingency lengths", a.len(), b.len()));
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    Ok(table)
}

struct Marginals {
    mi: f64,
    h_a: f64,
    h_b: f64,
}

fn marginals(a: &[usize], b: &[usize]) -> Result<Marginals> {
    let table = contingency(a, b)?;
    let n = a.len();
    if n == 0 {
        return Ok(Marginals {
            mi: 0.0,
            h_a: 0.0,
            h_b: 0.0,
        });
    }
    let row: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let kb = table.first().map_or(0, Vec::len);
    let col: Vec<usize> = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let nf = n as f64;
    let mut mi = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, &c) in r.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / nf * (c * nf / (row[i] as f64 * col[j] as f64)).ln();
            }
        }
    }
    Ok(Marginals {
        mi: mi.max(0.0),
        h_a: entropy_of_counts(&row, n),
        h_b: entropy_of_counts(&col, n),
    })
}

pub fn mutual_information(a: &[usize], b: &[usize]) -> Result<f64> {
    Ok(marginals(a, b)?.mi)
}

/// `2 I(a;b) / (H(a) + H(b))`, with `0/0 := 0`.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    let m = marginals(a, b)?;
    let denom = m.h_a + m.h_b;
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok((2.0 * m.mi / denom).clamp(0.0, 1.0))
}
