//! Per-view autoencoders. Every [`ViewModel`] owns its encoder and decoder outright;
//! nothing is shared between views, so training one view cannot move another.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::{soft_assign, soft_assign_backward, Centroids, TargetDistribution};
use crate::error::{Error, Result};
use crate::numcore::{optimizer_step, Activation, AdamConfig, DenseNet, Gradients, Layer, Matrix, OptimizerState};

/// Hidden widths of the encoder (mirrored by the decoder) and the latent width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
}

impl Architecture {
    pub fn linear(latent_dim: usize) -> Self {
        Self {
            hidden: Vec::new(),
            latent_dim,
        }
    }

    fn encoder_sizes(&self, input_dim: usize) -> Vec<usize> {
        let mut sizes = vec![input_dim];
        sizes.extend(&self.hidden);
        sizes.push(self.latent_dim);
        sizes
    }
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            latent_dim: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub pretrain_epochs: usize,
    pub finetune_steps: usize,
    /// Rows per gradient step; values `>= N` mean full-batch.
    pub batch_size: usize,
    /// Adam step size during pretraining.
    pub learning_rate: f64,
    /// Adam step size during finetuning rounds.
    pub finetune_learning_rate: f64,
    /// Weight of the clustering loss against reconstruction.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pretrain_epochs: 500,
            finetune_steps: 50,
            batch_size: 4096,
            learning_rate: 5e-3,
            finetune_learning_rate: 1e-3,
            lambda: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.pretrain_epochs == 0 || self.finetune_steps == 0 || self.batch_size == 0 {
            return Err(Error::InvalidInput(
                "pretrain_epochs, finetune_steps and batch_size must all be >= 1".into(),
            ));
        }
        for (name, lr) in [
            ("learning_rate", self.learning_rate),
            ("finetune_learning_rate", self.finetune_learning_rate),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {lr}")));
            }
        }
        Ok(())
    }
}

/// Encoder/decoder pair for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewModel {
    view_index: usize,
    encoder: DenseNet,
    decoder: DenseNet,
}

/// Reconstruction and clustering parts of the per-view loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub reconstruction: f64,
    pub clustering: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub loss_before: f64,
    pub loss_after: f64,
}

/// What the clustering term regresses against during finetuning.
#[derive(Debug, Clone, Copy)]
pub struct ClusterTarget<'a> {
    pub target: &'a TargetDistribution,
    pub centroids: &'a Centroids,
}

impl ViewModel {
    /// Fresh model with relu hidden layers and linear latent/output layers.
    pub fn init(view_index: usize, input_dim: usize, arch: &Architecture, seed: u64) -> Result<Self> {
        if arch.latent_dim == 0 {
            return Err(Error::InvalidInput("latent dimension must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc_sizes = arch.encoder_sizes(input_dim);
        let dec_sizes: Vec<usize> = enc_sizes.iter().rev().copied().collect();
        let encoder = DenseNet::init(&enc_sizes, Activation::Relu, Activation::Linear, &mut rng)?;
        let decoder = DenseNet::init(&dec_sizes, Activation::Relu, Activation::Linear, &mut rng)?;
        Self::from_parts(view_index, encoder, decoder)
    }

    pub fn from_parts(view_index: usize, encoder: DenseNet, decoder: DenseNet) -> Result<Self> {
        if encoder.output_dim() != decoder.input_dim() {
            return Err(Error::shape("latent width", encoder.output_dim(), decoder.input_dim()));
        }
        if encoder.input_dim() != decoder.output_dim() {
            return Err(Error::shape("reconstruction width", encoder.input_dim(), decoder.output_dim()));
        }
        Ok(Self {
            view_index,
            encoder,
            decoder,
        })
    }

    pub fn view_index(&self) -> usize {
        self.view_index
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn encoder(&self) -> &DenseNet {
        &self.encoder
    }

    pub fn decoder(&self) -> &DenseNet {
        &self.decoder
    }

    pub fn encoder_mut(&mut self) -> &mut DenseNet {
        &mut self.encoder
    }

    pub fn decoder_mut(&mut self) -> &mut DenseNet {
        &mut self.decoder
    }

    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        self.encoder.forward(x)
    }

    pub fn reconstruct(&self, x: &Matrix) -> Result<Matrix> {
        self.decoder.forward(&self.encoder.forward(x)?)
    }

    /// Mean per-sample squared reconstruction error.
    pub fn reconstruction_loss(&self, x: &Matrix) -> Result<f64> {
        Ok(self.reconstruct(x)?.sub(x)?.squared_norm() / x.rows() as f64)
    }

    /// `L = ‖X − D(H(X))‖²/N + λ ‖T − Q‖²/N`, with `Q = soft_assign(H(X), C)`.
    /// The clustering term is skipped entirely when `lambda == 0`.
    pub fn loss(&self, x: &Matrix, cluster: Option<ClusterTarget<'_>>, lambda: f64) -> Result<LossParts> {
        let n = x.rows() as f64;
        let z = self.encode(x)?;
        let reconstruction = self.decoder.forward(&z)?.sub(x)?.squared_norm() / n;
        let clustering = match cluster {
            Some(c) if lambda != 0.0 => {
                check_cluster_shapes(&z, c)?;
                soft_assign(&z, c.centroids)?
                    .matrix()
                    .sub(c.target.matrix())?
                    .squared_norm()
                    / n
            }
            _ => 0.0,
        };
        Ok(LossParts {
            reconstruction,
            clustering,
            total: reconstruction + lambda * clustering,
        })
    }

    /// Analytic gradients of [`ViewModel::loss`] for the encoder and decoder.
    pub fn gradients(
        &self,
        x: &Matrix,
        cluster: Option<ClusterTarget<'_>>,
        lambda: f64,
    ) -> Result<(Gradients, Gradients)> {
        let n = x.rows() as f64;
        let enc_trace = self.encoder.forward_trace(x)?;
        let z = enc_trace.output();
        let dec_trace = self.decoder.forward_trace(z)?;
        let recon_grad = dec_trace.output().sub(x)?.scale(2.0 / n);
        let dec_grads = self.decoder.backward_trace(&dec_trace, &recon_grad)?;
        let mut latent_grad = dec_grads.input.clone();
        if let Some(c) = cluster.filter(|_| lambda != 0.0) {
            check_cluster_shapes(z, c)?;
            let q = soft_assign(z, c.centroids)?;
            let grad_q = q.matrix().sub(c.target.matrix())?.scale(2.0 * lambda / n);
            let extra = soft_assign_backward(z, c.centroids, &grad_q)?;
            for (g, e) in latent_grad.as_mut_slice().iter_mut().zip(extra.as_slice()) {
                *g += e;
            }
        }
        let enc_grads = self.encoder.backward_trace(&enc_trace, &latent_grad)?;
        Ok((enc_grads, dec_grads))
    }

    /// SHA-256 over the bit patterns of every parameter, encoder first.
    pub fn parameter_checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for p in self.encoder.parameters().chain(self.decoder.parameters()) {
            hasher.update(p.to_bits().to_le_bytes());
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn check_cluster_shapes(z: &Matrix, c: ClusterTarget<'_>) -> Result<()> {
    let t = c.target.matrix();
    if t.rows() != z.rows() || t.cols() != c.centroids.k() {
        return Err(Error::shape(
            "clustering target",
            format!("{} x {}", z.rows(), c.centroids.k()),
            format!("{} x {}", t.rows(), t.cols()),
        ));
    }
    if c.centroids.dim() != z.cols() {
        return Err(Error::shape("view centroids", z.cols(), c.centroids.dim()));
    }
    Ok(())
}

struct Batcher {
    order: Vec<usize>,
    batch: usize,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        Self {
            order: (0..n).collect(),
            batch: batch.min(n),
            cursor: n,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn full(&self) -> bool {
        self.batch == self.order.len()
    }

    /// Next batch of row indices; reshuffles at each pass over the data.
    fn next_batch(&mut self) -> Option<&[usize]> {
        if self.full() {
            return None;
        }
        if self.cursor + self.batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let start = self.cursor;
        self.cursor += self.batch;
        Some(&self.order[start..self.cursor])
    }

    fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch)
    }
}

struct Optimizers {
    encoder: OptimizerState,
    decoder: OptimizerState,
}

impl Optimizers {
    fn new(m: &ViewModel, lr: f64) -> Self {
        let hyper = AdamConfig::with_learning_rate(lr);
        Self {
            encoder: OptimizerState::new(&m.encoder, hyper),
            decoder: OptimizerState::new(&m.decoder, hyper),
        }
    }

    fn step(&mut self, m: &mut ViewModel, grads: (Gradients, Gradients)) -> Result<()> {
        optimizer_step(&mut m.encoder, &grads.0, &mut self.encoder)?;
        optimizer_step(&mut m.decoder, &grads.1, &mut self.decoder)
    }
}

fn select_target(t: &TargetDistribution, idx: &[usize]) -> TargetDistribution {
    TargetDistribution::new_unchecked(t.matrix().select_rows(idx))
}

/// Trains a fresh autoencoder on reconstruction alone. Returns the model and the
/// mean reconstruction loss of every epoch.
pub fn pretrain(view_index: usize, x: &Matrix, arch: &Architecture, cfg: &TrainConfig) -> Result<(ViewModel, Vec<f64>)> {
    cfg.validate()?;
    if x.rows() == 0 {
        return Err(Error::InvalidInput("cannot pretrain on an empty view".into()));
    }
    let mut model = ViewModel::init(view_index, x.cols(), arch, cfg.seed)?;
    let mut opt = Optimizers::new(&model, cfg.learning_rate);
    let mut batcher = Batcher::new(x.rows(), cfg.batch_size, cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut losses = Vec::with_capacity(cfg.pretrain_epochs);
    for epoch in 0..cfg.pretrain_epochs {
        let mut weighted = 0.0;
        for _ in 0..batcher.batches_per_epoch() {
            let batch = batcher.next_batch().map(|idx| x.select_rows(idx));
            let xb = batch.as_ref().unwrap_or(x);
            let loss = model.reconstruction_loss(xb)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "reconstruction loss of view {view_index} at epoch {epoch}"
                )));
            }
            weighted += loss * xb.rows() as f64;
            let grads = model.gradients(xb, None, 0.0)?;
            opt.step(&mut model, grads)?;
        }
        losses.push(weighted / (batcher.batches_per_epoch() * batcher.batch) as f64);
    }
    Ok((model, losses))
}

/// `finetune_steps` optimizer steps on reconstruction plus `lambda` times the
/// clustering loss against a fixed target and fixed per-view centroids.
pub fn finetune_view(
    model: &mut ViewModel,
    x: &Matrix,
    target: &TargetDistribution,
    centroids: &Centroids,
    cfg: &TrainConfig,
) -> Result<FinetuneReport> {
    cfg.validate()?;
    let cluster = ClusterTarget { target, centroids };
    let z = model.encode(x)?;
    check_cluster_shapes(&z, cluster)?;
    let loss_before = model.loss(x, Some(cluster), cfg.lambda)?.total;

    let mut opt = Optimizers::new(model, cfg.finetune_learning_rate);
    let mut batcher = Batcher::new(x.rows(), cfg.batch_size, cfg.seed ^ 0xd1b5_4a32_d192_ed03);
    for step in 0..cfg.finetune_steps {
        let grads = match batcher.next_batch() {
            None => model.gradients(x, Some(cluster), cfg.lambda)?,
            Some(idx) => {
                let xb = x.select_rows(idx);
                if cfg.lambda == 0.0 {
                    model.gradients(&xb, None, 0.0)?
                } else {
                    let tb = select_target(target, idx);
                    model.gradients(&xb, Some(ClusterTarget { target: &tb, centroids }), cfg.lambda)?
                }
            }
        };
        if !grads.0.is_finite() || !grads.1.is_finite() {
            return Err(Error::NonFinite(format!(
                "finetuning gradient of view {} at step {step}",
                model.view_index
            )));
        }
        opt.step(model, grads)?;
    }
    let loss_after = model.loss(x, Some(cluster), cfg.lambda)?.total;
    if !loss_after.is_finite() {
        return Err(Error::NonFinite(format!("finetuning loss of view {}", model.view_index)));
    }
    Ok(FinetuneReport {
        loss_before,
        loss_after,
    })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"CEMVCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes the model as: magic, version, view index, then encoder and decoder
/// (layer count, then per layer `in`, `out`, activation tag, weights row-major,
/// bias). All integers and floats little-endian.
pub fn save_checkpoint<W: Write>(model: &ViewModel, mut w: W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.view_index as u64).to_le_bytes());
    for net in [&model.encoder, &model.decoder] {
        buf.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
        for layer in net.layers() {
            buf.extend_from_slice(&(layer.input_dim() as u64).to_le_bytes());
            buf.extend_from_slice(&(layer.output_dim() as u64).to_le_bytes());
            buf.push(match layer.activation {
                Activation::Linear => 0,
                Activation::Relu => 1,
            });
            for v in layer.weight.as_slice().iter().chain(&layer.bias) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    w.write_all(&buf)
        .map_err(|e| Error::Checkpoint(format!("write failed: {e}")))
}

pub fn load_checkpoint<R: Read>(mut r: R) -> Result<ViewModel> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(format!("read failed: {e}")))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let view_index = cur.u64()? as usize;
    let mut nets = Vec::with_capacity(2);
    for _ in 0..2 {
        let n_layers = cur.u32()? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let rows = cur.u64()? as usize;
            let cols = cur.u64()? as usize;
            let activation = match cur.take(1)?[0] {
                0 => Activation::Linear,
                1 => Activation::Relu,
                t => return Err(Error::Checkpoint(format!("unknown activation tag {t}"))),
            };
            let count = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Checkpoint("layer size overflow".into()))?;
            let weight = Matrix::new(rows, cols, cur.f64s(count)?)?;
            let bias = cur.f64s(cols)?;
            layers.push(Layer {
                weight,
                bias,
                activation,
            });
        }
        nets.push(DenseNet::new(layers)?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    let decoder = nets.pop().expect("two nets");
    let encoder = nets.pop().expect("two nets");
    ViewModel::from_parts(view_index, encoder, decoder)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
