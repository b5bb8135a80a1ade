//! The outer loop: per-view pretraining, weighted fusion, unified soft labels,
//! entropy-aware weight updates and per-view finetuning. Also the shared-network
//! baseline and the weighting ablation.

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{self, Centroids, KMeans, SoftLabels};
use crate::data::MultiViewDataset;
use crate::error::{Error, Result};
use crate::eval::{self, MetricReport};
use crate::infometrics::{self, ConditionalEntropyVector};
use crate::model::{self, Architecture, TrainConfig, ViewModel};
use crate::numcore::Matrix;
use crate::weighting::{self, ViewWeights, WeightingMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub k: usize,
    pub max_outer_iters: usize,
    /// The loop stops once the fraction of changed unified labels drops below this.
    pub tolerance: f64,
    pub weighting_mode: WeightingMode,
    /// `true` runs per-view models; `false` the single shared network.
    pub decoupled: bool,
    pub kmeans_restarts: usize,
    pub arch: Architecture,
    /// `train.seed` is ignored by the pipeline; every stream derives from `seed`.
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 3,
            max_outer_iters: 30,
            tolerance: 1e-3,
            weighting_mode: WeightingMode::EnmiCe,
            decoupled: true,
            kmeans_restarts: 10,
            arch: Architecture::default(),
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidInput(format!("K must be >= 2, got {}", self.k)));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidInput("max_outer_iters must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tolerance) {
            return Err(Error::InvalidInput(format!(
                "tolerance must lie in [0, 1], got {}",
                self.tolerance
            )));
        }
        if self.kmeans_restarts == 0 {
            return Err(Error::InvalidInput("kmeans_restarts must be >= 1".into()));
        }
        if self.arch.latent_dim == 0 {
            return Err(Error::InvalidInput("latent_dim must be >= 1".into()));
        }
        self.train.validate()
    }
}

/// What one outer iteration did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub iteration: usize,
    /// Weights produced by this round's update; they scale the next fusion.
    pub weights: Vec<f64>,
    /// Per-view conditional entropy (absent for the shared baseline).
    pub conditional_entropies: Option<Vec<f64>>,
    /// Per-view NMI against the unified labels (absent for the shared baseline).
    pub view_nmi: Option<Vec<f64>>,
    /// Per-view total loss before this round's finetuning.
    pub losses_before: Vec<f64>,
    /// Per-view total loss after it.
    pub losses_after: Vec<f64>,
    /// Fraction of unified hard labels that changed during this round.
    pub label_change: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    pub labels: Vec<usize>,
    pub soft_labels: SoftLabels,
    pub traces: Vec<RoundTrace>,
    /// Present when the dataset carries ground truth.
    pub metrics: Option<MetricReport>,
    /// Weights that scaled the final fusion.
    pub weights: Vec<f64>,
    /// The final fused representation the labels were computed on.
    pub embedding: Matrix,
    pub converged: bool,
}

/// Parameter checksums of every view around one view's finetuning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinetuneEvent {
    pub iteration: usize,
    pub view: usize,
    pub before: Vec<String>,
    pub after: Vec<String>,
}

const STREAM_PRETRAIN: u64 = 1;
const STREAM_VIEW_KMEANS: u64 = 2;
const STREAM_FINETUNE: u64 = 3;
const STREAM_UNIFIED: u64 = 4;

/// Independent sub-seed for `(stream, index)`; splitmix64 finalizer.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .wrapping_add(0x94d0_49bb_1331_11eb);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn round_index(iteration: usize, view: usize) -> u64 {
    ((iteration as u64) << 32) | view as u64
}

fn check_dataset(data: &MultiViewDataset, cfg: &PipelineConfig, min_views: usize) -> Result<()> {
    cfg.validate()?;
    if data.view_count() < min_views {
        return Err(Error::InvalidInput(format!(
            "need at least {min_views} views, dataset has {}",
            data.view_count()
        )));
    }
    if data.len() < cfg.k {
        return Err(Error::InvalidInput(format!(
            "need N >= K, got N = {} and K = {}",
            data.len(),
            cfg.k
        )));
    }
    Ok(())
}

/// Column-wise z-scores (std floored at the entropy estimator's floor).
pub fn standardize(m: &Matrix) -> Matrix {
    let means = m.column_means();
    let stds: Vec<f64> = m
        .column_stds()
        .into_iter()
        .map(|s| s.max(infometrics::SIGMA_FLOOR))
        .collect();
    Matrix::from_fn(m.rows(), m.cols(), |r, c| (m[(r, c)] - means[c]) / stds[c])
}

/// `mapping[cluster of labels] = cluster of reference` maximizing agreement.
fn alignment(reference: &[usize], labels: &[usize], k: usize) -> Vec<usize> {
    let mut table = vec![vec![0usize; k]; k];
    for (&l, &r) in labels.iter().zip(reference) {
        table[l][r] += 1;
    }
    eval::best_mapping(&table)
}

/// Relabels a k-means fit so its cluster indices agree with `reference` as far as possible.
fn align_fit(reference: &[usize], labels: Vec<usize>, centroids: Centroids, k: usize) -> (Vec<usize>, Centroids) {
    let mapping = alignment(reference, &labels, k);
    let mut order = vec![0; k];
    for (from, &to) in mapping.iter().enumerate() {
        order[to] = from;
    }
    let labels = labels.into_iter().map(|l| mapping[l]).collect();
    (labels, centroids.permuted(&order))
}

fn change_fraction(a: &[usize], b: &[usize]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64
}

/// k-means on `x`: the previous partition's centroids (recomputed in the current
/// space) compete with fresh k-means++ restarts; the lower inertia wins and is
/// relabeled to match the previous partition.
fn warm_kmeans(x: &Matrix, previous: Option<&[usize]>, cfg: &PipelineConfig, seed: u64) -> Result<(Vec<usize>, Centroids)> {
    let km = KMeans::new(cfg.k).with_restarts(cfg.kmeans_restarts);
    let mut best = km.fit(x, seed)?;
    let Some(prev) = previous else {
        return Ok((best.labels, best.centroids));
    };
    let warm = km.fit_from(x, &clustering::centroids_from_labels(x, prev, cfg.k))?;
    if warm.inertia <= best.inertia {
        best = warm;
    }
    Ok(align_fit(prev, best.labels, best.centroids, cfg.k))
}

struct Unified {
    labels: Vec<usize>,
    soft: SoftLabels,
    embedding: Matrix,
}

fn unify(reps: &[Matrix], w: &ViewWeights, previous: Option<&[usize]>, cfg: &PipelineConfig, iteration: usize) -> Result<Unified> {
    let fused = weighting::scale_representations(w, reps)?.into_matrix();
    let (labels, centroids) = warm_kmeans(&fused, previous, cfg, derive_seed(cfg.seed, STREAM_UNIFIED, iteration as u64))?;
    let soft = clustering::soft_assign(&fused, &centroids)?;
    Ok(Unified {
        labels,
        soft,
        embedding: fused,
    })
}

fn view_train_config(cfg: &PipelineConfig, stream: u64, index: u64) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(cfg.seed, stream, index),
        ..cfg.train.clone()
    }
}

fn pretrain_views(data: &MultiViewDataset, cfg: &PipelineConfig) -> Result<Vec<ViewModel>> {
    data.views()
        .par_iter()
        .enumerate()
        .map(|(v, x)| {
            let tc = view_train_config(cfg, STREAM_PRETRAIN, v as u64);
            model::pretrain(v, x, &cfg.arch, &tc).map(|(m, _)| m)
        })
        .collect()
}

/// Conditional entropy of every view, computed on column-standardized latents.
pub fn view_conditional_entropies(reps: &[Matrix]) -> Result<ConditionalEntropyVector> {
    let standardized: Vec<Matrix> = reps.par_iter().map(standardize).collect();
    infometrics::total_conditional_entropy(&standardized)
}

/// Latents of every view right after pretraining, as the first outer round sees them.
pub fn pretrained_latents(data: &MultiViewDataset, cfg: &PipelineConfig) -> Result<Vec<Matrix>> {
    check_dataset(data, cfg, 2)?;
    encode_all(&pretrain_views(data, cfg)?, data)
}

fn encode_all(models: &[ViewModel], data: &MultiViewDataset) -> Result<Vec<Matrix>> {
    models
        .par_iter()
        .zip(data.views().par_iter())
        .map(|(m, x)| m.encode(x))
        .collect()
}

fn metrics_for(data: &MultiViewDataset, labels: &[usize]) -> Result<Option<MetricReport>> {
    data.labels().map(|truth| eval::evaluate(labels, truth)).transpose()
}

/// Dispatches on `cfg.decoupled`.
pub fn run(data: &MultiViewDataset, cfg: &PipelineConfig) -> Result<ClusteringResult> {
    if cfg.decoupled {
        run_cemvc(data, cfg)
    } else {
        run_shared_baseline(data, cfg)
    }
}

/// Full decoupled run with the default parallel finetuning.
pub fn run_cemvc(data: &MultiViewDataset, cfg: &PipelineConfig) -> Result<ClusteringResult> {
    check_dataset(data, cfg, 2)?;
    let models = pretrain_views(data, cfg)?;
    decoupled_loop(data, cfg, models, None)
}

/// Same computation as [`run_cemvc`], but views are finetuned one at a time and
/// `observer` sees every view's parameter checksum around each finetune.
pub fn run_cemvc_observed(
    data: &MultiViewDataset,
    cfg: &PipelineConfig,
    mut observer: impl FnMut(&FinetuneEvent),
) -> Result<ClusteringResult> {
    check_dataset(data, cfg, 2)?;
    let models = pretrain_views(data, cfg)?;
    decoupled_loop(data, cfg, models, Some(&mut observer))
}

/// The three weighting variants from one shared pretraining, keyed by mode.
pub fn run_ablation(data: &MultiViewDataset, cfg: &PipelineConfig) -> Result<Vec<(WeightingMode, ClusteringResult)>> {
    check_dataset(data, cfg, 2)?;
    let models = pretrain_views(data, cfg)?;
    WeightingMode::ALL
        .iter()
        .map(|&mode| {
            let cfg = PipelineConfig {
                weighting_mode: mode,
                ..cfg.clone()
            };
            decoupled_loop(data, &cfg, models.clone(), None).map(|r| (mode, r))
        })
        .collect()
}

struct ViewRound {
    centroids: Centroids,
    soft: SoftLabels,
}

fn view_clusters(reps: &[Matrix], unified: &[usize], cfg: &PipelineConfig, iteration: usize) -> Result<Vec<ViewRound>> {
    reps.par_iter()
        .enumerate()
        .map(|(v, r)| {
            let seed = derive_seed(cfg.seed, STREAM_VIEW_KMEANS, round_index(iteration, v));
            let fit = KMeans::new(cfg.k).with_restarts(cfg.kmeans_restarts).fit(r, seed)?;
            let (_, centroids) = align_fit(unified, fit.labels, fit.centroids, cfg.k);
            let soft = clustering::soft_assign(r, &centroids)?;
            Ok(ViewRound { centroids, soft })
        })
        .collect()
}

type Observer<'a> = Option<&'a mut dyn FnMut(&FinetuneEvent)>;

fn decoupled_loop(
    data: &MultiViewDataset,
    cfg: &PipelineConfig,
    mut models: Vec<ViewModel>,
    mut observer: Observer<'_>,
) -> Result<ClusteringResult> {
    let mut reps = encode_all(&models, data)?;
    let dims: Vec<usize> = reps.iter().map(Matrix::cols).collect();
    let mut weights = weighting::init_weights(&dims)?;
    let mut current = unify(&reps, &weights, None, cfg, 0)?;
    let mut traces = Vec::new();
    let mut converged = false;

    for t in 0..cfg.max_outer_iters {
        let ce = view_conditional_entropies(&reps)?;
        let views = view_clusters(&reps, &current.labels, cfg, t)?;
        let view_soft: Vec<SoftLabels> = views.iter().map(|v| v.soft.clone()).collect();
        let view_nmi = weighting::view_consistency(&view_soft, &current.soft)?;
        let next_weights = weighting::update_weights(&weights, &view_soft, &current.soft, &ce, cfg.weighting_mode)?;
        let target = clustering::target_distribution(&current.soft);

        let finetune = |m: &mut ViewModel, v: usize, round: &ViewRound| {
            let tc = view_train_config(cfg, STREAM_FINETUNE, round_index(t, v));
            model::finetune_view(m, &data.views()[v], &target, &round.centroids, &tc)
        };
        let reports = match observer.as_deref_mut() {
            None => models
                .par_iter_mut()
                .zip(views.par_iter())
                .enumerate()
                .map(|(v, (m, round))| finetune(m, v, round))
                .collect::<Result<Vec<_>>>()?,
            Some(observe) => {
                let mut reports = Vec::with_capacity(models.len());
                for v in 0..models.len() {
                    let before = models.iter().map(ViewModel::parameter_checksum).collect();
                    reports.push(finetune(&mut models[v], v, &views[v])?);
                    let after = models.iter().map(ViewModel::parameter_checksum).collect();
                    observe(&FinetuneEvent {
                        iteration: t,
                        view: v,
                        before,
                        after,
                    });
                }
                reports
            }
        };

        weights = next_weights;
        reps = encode_all(&models, data)?;
        let next = unify(&reps, &weights, Some(&current.labels), cfg, t + 1)?;
        let label_change = change_fraction(&current.labels, &next.labels);
        debug!(
            "round {t}: weights {:?} ce {:?} nmi {:?} change {label_change:.4}",
            weights.weights(),
            ce.values(),
            view_nmi
        );
        traces.push(RoundTrace {
            iteration: t,
            weights: weights.weights().to_vec(),
            conditional_entropies: Some(ce.0),
            view_nmi: Some(view_nmi),
            losses_before: reports.iter().map(|r| r.loss_before).collect(),
            losses_after: reports.iter().map(|r| r.loss_after).collect(),
            label_change,
        });
        current = next;
        if label_change < cfg.tolerance {
            converged = true;
            break;
        }
    }

    Ok(ClusteringResult {
        metrics: metrics_for(data, &current.labels)?,
        labels: current.labels,
        soft_labels: current.soft,
        traces,
        weights: weights.weights().to_vec(),
        embedding: current.embedding,
        converged,
    })
}

/// One autoencoder over the concatenated raw views, trained DEC-style against its
/// own target. Hidden and latent widths are the per-view ones times V.
pub fn run_shared_baseline(data: &MultiViewDataset, cfg: &PipelineConfig) -> Result<ClusteringResult> {
    check_dataset(data, cfg, 1)?;
    let v = data.view_count();
    let arch = Architecture {
        hidden: cfg.arch.hidden.iter().map(|h| h * v).collect(),
        latent_dim: cfg.arch.latent_dim * v,
    };
    let refs: Vec<&Matrix> = data.views().iter().collect();
    let x = Matrix::hcat(&refs)?;
    let (mut net, _) = model::pretrain(0, &x, &arch, &view_train_config(cfg, STREAM_PRETRAIN, 0))?;

    let mut r = net.encode(&x)?;
    let (mut labels, mut centroids) = warm_kmeans(&r, None, cfg, derive_seed(cfg.seed, STREAM_UNIFIED, 0))?;
    let mut soft = clustering::soft_assign(&r, &centroids)?;
    let mut traces = Vec::new();
    let mut converged = false;

    for t in 0..cfg.max_outer_iters {
        let target = clustering::target_distribution(&soft);
        let tc = view_train_config(cfg, STREAM_FINETUNE, round_index(t, 0));
        let report = model::finetune_view(&mut net, &x, &target, &centroids, &tc)?;
        r = net.encode(&x)?;
        let (next_labels, next_centroids) =
            warm_kmeans(&r, Some(&labels), cfg, derive_seed(cfg.seed, STREAM_UNIFIED, t as u64 + 1))?;
        let label_change = change_fraction(&labels, &next_labels);
        debug!("shared round {t}: loss {:.6} change {label_change:.4}", report.loss_after);
        traces.push(RoundTrace {
            iteration: t,
            weights: vec![1.0],
            conditional_entropies: None,
            view_nmi: None,
            losses_before: vec![report.loss_before],
            losses_after: vec![report.loss_after],
            label_change,
        });
        labels = next_labels;
        centroids = next_centroids;
        soft = clustering::soft_assign(&r, &centroids)?;
        if label_change < cfg.tolerance {
            converged = true;
            break;
        }
    }

    Ok(ClusteringResult {
        metrics: metrics_for(data, &labels)?,
        labels,
        soft_labels: soft,
        traces,
        weights: vec![1.0],
        embedding: r,
        converged,
    })
}
