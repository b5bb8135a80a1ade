//! Clustering accuracy under optimal cluster-to-class matching, and NMI.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infometrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub acc: f64,
    pub nmi: f64,
    /// `confusion[pred][truth]` counts.
    pub confusion: Vec<Vec<usize>>,
}

/// Minimum-cost assignment of rows to columns (Kuhn–Munkres with potentials).
///
/// The matrix is padded with zeros to square; returns `assignment[row] = column`
/// for every original row. When there are more rows than columns, some rows map
/// to a padding column index `>= cols`.
pub fn linear_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    let n = rows.max(cols);
    if n == 0 {
        return Vec::new();
    }
    let at = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            cost[i][j]
        } else {
            0.0
        }
    };

    // 1-based potentials formulation; column 0 is a virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if owner[j] > 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment.truncate(rows);
    assignment
}

/// Maximum-weight matching of predicted clusters onto classes: `mapping[pred] = class`
/// (or an index `>= #classes` when a cluster is left unmatched).
pub fn best_mapping(confusion: &[Vec<usize>]) -> Vec<usize> {
    let cost: Vec<Vec<f64>> = confusion
        .iter()
        .map(|r| r.iter().map(|&c| -(c as f64)).collect())
        .collect();
    linear_assignment(&cost)
}

fn confusion(pred: &[usize], truth: &[usize]) -> Result<Vec<Vec<usize>>> {
    if pred.len() != truth.len() {
        return Err(Error::shape("accuracy label lengths", truth.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("accuracy of empty labelings".into()));
    }
    infometrics::contingency(pred, truth)
}

fn matched(confusion: &[Vec<usize>]) -> usize {
    let k_true = confusion.first().map_or(0, Vec::len);
    best_mapping(confusion)
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c < k_true)
        .map(|(p, &c)| confusion[p][c])
        .sum()
}

pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = confusion(pred, truth)?;
    Ok(matched(&table) as f64 / pred.len() as f64)
}

pub fn evaluate(pred: &[usize], truth: &[usize]) -> Result<MetricReport> {
    let table = confusion(pred, truth)?;
    Ok(MetricReport {
        acc: matched(&table) as f64 / pred.len() as f64,
        nmi: infometrics::nmi(pred, truth)?,
        confusion: table,
    })
}
