//! k-means, Student-t soft assignment, and target sharpening.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{squared_distance, Matrix};
use crate::weighting::FusedRepresentation;

/// Tolerance on row sums of soft labels and targets.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// `K × d` cluster centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroids(Matrix);

impl Centroids {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() == 0 {
            return Err(Error::InvalidInput("centroids need K >= 1".into()));
        }
        if !m.is_finite() {
            return Err(Error::NonFinite("centroids".into()));
        }
        Ok(Self(m))
    }

    pub fn k(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    /// Reorders centroids so row `i` of the result is row `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Centroids {
        Centroids(self.0.select_rows(order))
    }
}

/// `N × K` row-stochastic cluster membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabels(Matrix);

/// Sharpened `N × K` regression target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetDistribution(Matrix);

fn check_row_stochastic(m: &Matrix, what: &str) -> Result<()> {
    for (i, row) in m.row_iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&v| v < 0.0 || !v.is_finite()) || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::InvalidInput(format!("{what} row {i} is not a distribution (sum {sum})")));
        }
    }
    Ok(())
}

impl SoftLabels {
    pub fn new(m: Matrix) -> Result<Self> {
        check_row_stochastic(&m, "soft labels")?;
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.cols()
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn hard_labels(&self) -> Vec<usize> {
        argmax_rows(&self.0)
    }
}

impl TargetDistribution {
    pub fn new(m: Matrix) -> Result<Self> {
        check_row_stochastic(&m, "target")?;
        Ok(Self(m))
    }

    /// Wraps a matrix without validation; used to feed sentinel targets in tests.
    pub fn new_unchecked(m: Matrix) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

/// Row-wise argmax, lowest index on ties.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.row_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Index of the nearest centroid for every row, plus the summed squared distance.
pub fn assign_nearest(x: &Matrix, centroids: &Matrix) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let labels = x
        .row_iter()
        .map(|p| {
            let (best, d) = nearest(p, centroids);
            inertia += d;
            best
        })
        .collect();
    (labels, inertia)
}

fn nearest(p: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in centroids.row_iter().enumerate() {
        let d = squared_distance(p, c);
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    (best, best_d)
}

/// Means of `x` grouped by `labels`; an empty group keeps a zero row.
pub fn centroids_from_labels(x: &Matrix, labels: &[usize], k: usize) -> Matrix {
    let mut sums = Matrix::zeros(k, x.cols());
    let mut counts = vec![0usize; k];
    for (row, &l) in x.row_iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums.row_mut(l).iter_mut().zip(row) {
            *s += v;
        }
    }
    for (k, &c) in counts.iter().enumerate() {
        if c > 0 {
            sums.row_mut(k).iter_mut().for_each(|s| *s /= c as f64);
        }
    }
    sums
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Number of k-means++ restarts; the lowest-inertia run wins.
    pub n_init: usize,
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centroids: Centroids,
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every assignment step.
    pub history: Vec<f64>,
}

impl KMeans {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            max_iter: 300,
            tol: 1e-6,
            n_init: 10,
        }
    }

    pub fn with_restarts(mut self, n_init: usize) -> Self {
        self.n_init = n_init.max(1);
        self
    }

    fn validate(&self, x: &Matrix) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidInput("k-means needs K >= 1".into()));
        }
        if x.rows() < self.k {
            return Err(Error::InvalidInput(format!(
                "k-means needs N >= K, got N = {} and K = {}",
                x.rows(),
                self.k
            )));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("k-means input".into()));
        }
        Ok(())
    }

    pub fn fit(&self, x: &Matrix, seed: u64) -> Result<KMeansFit> {
        self.validate(x)?;
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let seeds: Vec<u64> = (0..self.n_init.max(1)).map(|_| master.gen()).collect();
        let fits: Vec<KMeansFit> = seeds
            .par_iter()
            .map(|&s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let init = kmeans_plus_plus(x, self.k, &mut rng);
                self.lloyd(x, init)
            })
            .collect();
        Ok(pick_best(fits))
    }

    /// Lloyd iterations from caller-supplied initial centroids.
    pub fn fit_from(&self, x: &Matrix, init: &Matrix) -> Result<KMeansFit> {
        self.validate(x)?;
        if init.rows() != self.k || init.cols() != x.cols() {
            return Err(Error::shape(
                "k-means initial centroids",
                format!("{} x {}", self.k, x.cols()),
                format!("{} x {}", init.rows(), init.cols()),
            ));
        }
        Ok(self.lloyd(x, init.clone()))
    }

    fn lloyd(&self, x: &Matrix, mut centroids: Matrix) -> KMeansFit {
        let mut history = Vec::new();
        let mut iterations = 0;
        let (mut labels, mut inertia) = assign_nearest(x, &centroids);
        history.push(inertia);
        while iterations < self.max_iter {
            iterations += 1;
            let mut next = centroids_from_labels(x, &labels, self.k);
            self.reseed_empty(x, &labels, &centroids, &mut next);
            let shift = centroids
                .row_iter()
                .zip(next.row_iter())
                .map(|(a, b)| squared_distance(a, b).sqrt())
                .fold(0.0, f64::max);
            centroids = next;
            (labels, inertia) = assign_nearest(x, &centroids);
            history.push(inertia);
            if shift < self.tol {
                break;
            }
        }
        KMeansFit {
            centroids: Centroids(centroids),
            labels,
            inertia,
            iterations,
            history,
        }
    }

    /// Moves each empty cluster's centroid onto the point farthest from its current centroid.
    fn reseed_empty(&self, x: &Matrix, labels: &[usize], old: &Matrix, next: &mut Matrix) {
        let mut counts = vec![0usize; self.k];
        labels.iter().for_each(|&l| counts[l] += 1);
        if counts.iter().all(|&c| c > 0) {
            return;
        }
        let mut dist: Vec<f64> = x
            .row_iter()
            .zip(labels)
            .map(|(p, &l)| squared_distance(p, old.row(l)))
            .collect();
        for k in (0..self.k).filter(|&k| counts[k] == 0) {
            let far = (0..dist.len()).fold(0, |best, i| if dist[i] > dist[best] { i } else { best });
            next.row_mut(k).copy_from_slice(x.row(far));
            dist[far] = f64::NEG_INFINITY;
        }
    }
}

fn pick_best(fits: Vec<KMeansFit>) -> KMeansFit {
    fits.into_iter()
        .reduce(|best, f| if f.inertia < best.inertia { f } else { best })
        .expect("at least one k-means run")
}

fn kmeans_plus_plus(x: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = x.rows();
    let mut centroids = Matrix::zeros(k, x.cols());
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).copy_from_slice(x.row(first));
    let mut dist: Vec<f64> = x.row_iter().map(|p| squared_distance(p, x.row(first))).collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(x.row(pick));
        for (d, p) in dist.iter_mut().zip(x.row_iter()) {
            *d = d.min(squared_distance(p, x.row(pick)));
        }
    }
    centroids
}

/// Lloyd's k-means with k-means++ seeding and default restarts.
pub fn kmeans(x: &Matrix, k: usize, seed: u64) -> Result<(Centroids, Vec<usize>)> {
    let fit = KMeans::new(k).fit(x, seed)?;
    Ok((fit.centroids, fit.labels))
}

/// Student-t kernel (one degree of freedom) membership of each row against each centroid.
pub fn soft_assign(r: &Matrix, c: &Centroids) -> Result<SoftLabels> {
    if r.cols() != c.dim() {
        return Err(Error::shape("soft_assign feature dims", c.dim(), r.cols()));
    }
    let k = c.k();
    let mut q = Matrix::zeros(r.rows(), k);
    for i in 0..r.rows() {
        let p = r.row(i);
        let row = q.row_mut(i);
        for (j, cj) in c.0.row_iter().enumerate() {
            row[j] = 1.0 / (1.0 + squared_distance(p, cj));
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    Ok(SoftLabels(q))
}

/// Gradient of a loss with respect to the points `r`, given `dL/dq` for
/// `q = soft_assign(r, c)`. Centroids are treated as constants.
pub fn soft_assign_backward(r: &Matrix, c: &Centroids, grad_q: &Matrix) -> Result<Matrix> {
    if grad_q.rows() != r.rows() || grad_q.cols() != c.k() {
        return Err(Error::shape(
            "soft_assign_backward gradient",
            format!("{} x {}", r.rows(), c.k()),
            format!("{} x {}", grad_q.rows(), grad_q.cols()),
        ));
    }
    let k = c.k();
    let d = r.cols();
    let mut out = Matrix::zeros(r.rows(), d);
    let mut u = vec![0.0; k];
    for i in 0..r.rows() {
        let p = r.row(i);
        for (j, cj) in c.0.row_iter().enumerate() {
            u[j] = 1.0 / (1.0 + squared_distance(p, cj));
        }
        let s: f64 = u.iter().sum();
        let g = grad_q.row(i);
        // q_j = u_j / s  =>  dL/du_l = (g_l - Σ_j g_j q_j) / s
        let mean_g: f64 = g.iter().zip(&u).map(|(gj, uj)| gj * uj / s).sum();
        let out_row = out.row_mut(i);
        for (l, cl) in c.0.row_iter().enumerate() {
            let dl_du = (g[l] - mean_g) / s;
            // du_l/dp = -2 u_l^2 (p - c_l)
            let coef = -2.0 * dl_du * u[l] * u[l];
            for ((o, &pv), &cv) in out_row.iter_mut().zip(p).zip(cl) {
                *o += coef * (pv - cv);
            }
        }
    }
    Ok(out)
}

/// DEC sharpening: `p_ik ∝ q_ik² / f_k` with `f_k = Σ_i q_ik`; empty clusters get zero mass.
pub fn target_distribution(q: &SoftLabels) -> TargetDistribution {
    let m = &q.0;
    let k = m.cols();
    let mut freq = vec![0.0; k];
    for row in m.row_iter() {
        for (f, v) in freq.iter_mut().zip(row) {
            *f += v;
        }
    }
    let mut p = Matrix::zeros(m.rows(), k);
    for i in 0..m.rows() {
        let src = m.row(i);
        let dst = p.row_mut(i);
        for j in 0..k {
            dst[j] = if freq[j] > 0.0 { src[j] * src[j] / freq[j] } else { 0.0 };
        }
        let s: f64 = dst.iter().sum();
        if s > 0.0 {
            dst.iter_mut().for_each(|v| *v /= s);
        } else {
            dst.copy_from_slice(src);
        }
    }
    TargetDistribution(p)
}

/// k-means on the fused representation followed by soft assignment to the resulting centroids.
pub fn unified_soft_labels(fused: &FusedRepresentation, k: usize, seed: u64) -> Result<(SoftLabels, Centroids)> {
    let (centroids, _) = kmeans(fused.matrix(), k, seed)?;
    let q = soft_assign(fused.matrix(), &centroids)?;
    Ok((q, centroids))
}
