//! Projection finetuning on frozen raw features and frozen prototypes.
//!
//! Image features are `normalize(raw · P)`; only `P` is trained, with plain
//! gradient descent on either contrastive loss. Prototypes are unit-normalized
//! before use.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    build_batch, dot, infonce_loss, mscl_loss, norm, Embedding, LossOutput, PrototypeSet,
    DEFAULT_TEMPERATURE,
};
use crate::error::{Error, Result};

/// Which contrastive objective drives finetuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mscl,
    InfoNce,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mscl" => Ok(LossKind::Mscl),
            "infonce" => Ok(LossKind::InfoNce),
            other => Err(Error::Config(format!("unknown loss {other:?}"))),
        }
    }
}

/// Linear map from raw feature space to the prototype space, row-major `D_in × D_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub d_in: usize,
    pub d_out: usize,
    pub matrix: Vec<f64>,
}

impl Projection {
    /// Identity on the shared leading dimensions.
    pub fn identity(d_in: usize, d_out: usize) -> Self {
        let mut matrix = vec![0.0; d_in * d_out];
        for i in 0..d_in.min(d_out) {
            matrix[i * d_out + i] = 1.0;
        }
        Self { d_in, d_out, matrix }
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d_out];
        for (d, &r) in raw.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            let row = &self.matrix[d * self.d_out..(d + 1) * self.d_out];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += r * w;
            }
        }
        out
    }

    /// Projected and unit-normalized feature.
    pub fn embed(&self, raw: &[f64]) -> Result<Embedding> {
        let u = self.apply(raw);
        let n = norm(&u);
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(Embedding(u.into_iter().map(|v| v / n).collect()))
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(b"ISRP")?;
        out.write_all(&(self.d_in as u32).to_le_bytes())?;
        out.write_all(&(self.d_out as u32).to_le_bytes())?;
        for v in &self.matrix {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Raw features with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub dim: usize,
    pub num_labels: usize,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl FeatureDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub const FEATURE_MAGIC: &[u8; 4] = b"ISRD";
const FEATURE_VERSION: u16 = 1;

/// Writes `magic, version u16, D u32, C u32, count u64`, then per sample
/// `D` little-endian `f32` values followed by the `u16` label.
pub fn write_features<W: Write>(data: &FeatureDataset, mut out: W) -> Result<()> {
    out.write_all(FEATURE_MAGIC)?;
    out.write_all(&FEATURE_VERSION.to_le_bytes())?;
    out.write_all(&(data.dim as u32).to_le_bytes())?;
    out.write_all(&(data.num_labels as u32).to_le_bytes())?;
    out.write_all(&(data.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(data.len() * (data.dim * 4 + 2));
    for (f, &y) in data.features.iter().zip(&data.labels) {
        for &v in f {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        buf.extend_from_slice(&(y as u16).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_features<R: Read>(mut input: R) -> Result<FeatureDataset> {
    let err = |msg: String| Error::Format {
        what: "feature dataset",
        msg,
    };
    let mut header = [0u8; 22];
    input
        .read_exact(&mut header)
        .map_err(|e| err(format!("truncated header: {e}")))?;
    if &header[..4] != FEATURE_MAGIC {
        return Err(err("bad magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != FEATURE_VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
    let num_labels = u32::from_le_bytes(header[10..14].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(header[14..22].try_into().unwrap()) as usize;
    let record = dim * 4 + 2;
    let mut body = vec![0u8; count * record];
    input
        .read_exact(&mut body)
        .map_err(|e| err(format!("truncated records: {e}")))?;
    let mut features = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for rec in body.chunks_exact(record) {
        features.push(
            rec[..dim * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
        );
        let y = u16::from_le_bytes([rec[dim * 4], rec[dim * 4 + 1]]) as usize;
        if y >= num_labels {
            return Err(Error::LabelOutOfRange {
                index: y,
                count: num_labels,
            });
        }
        labels.push(y);
    }
    Ok(FeatureDataset {
        dim,
        num_labels,
        features,
        labels,
    })
}

/// Generator for stand-in "pretrained" features: each class is blended with a
/// fixed confuser class, so an untrained projection often prefers the wrong
/// prototype while a learned linear map can separate them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_labels: usize,
    pub dim: usize,
    pub train: usize,
    pub val: usize,
    /// Mean weight of the true prototype in the mixture.
    pub mix_weight: f64,
    /// Half-width of the uniform per-sample jitter on the mixing weight.
    pub mix_jitter: f64,
    /// Standard deviation of the isotropic noise, relative to unit prototypes.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_labels: 14,
            dim: 64,
            train: 5000,
            val: 1000,
            mix_weight: 0.45,
            mix_jitter: 0.15,
            noise: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub prototypes: PrototypeSet,
    pub train: FeatureDataset,
    pub val: FeatureDataset,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Class-conditional feature sampler behind [`generate_synthetic`].
#[derive(Debug, Clone)]
pub struct FeatureModel {
    pub prototypes: PrototypeSet,
    /// Class blended into each class's features.
    pub confuser: Vec<usize>,
    pub mix_weight: f64,
    pub mix_jitter: f64,
    pub noise: f64,
}

impl FeatureModel {
    pub fn new(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.num_labels < 2 || cfg.dim == 0 {
            return Err(Error::Config("synthetic data needs >= 2 labels and dim > 0".into()));
        }
        let prototypes: Vec<Embedding> = (0..cfg.num_labels)
            .map(|_| Embedding(gaussian_vec(rng, cfg.dim)).normalized())
            .collect::<Result<_>>()?;
        // Confuser assignment: a random cyclic permutation, so no class is its own confuser.
        let mut order: Vec<usize> = (0..cfg.num_labels).collect();
        order.shuffle(rng);
        let mut confuser = vec![0; cfg.num_labels];
        for k in 0..cfg.num_labels {
            confuser[order[k]] = order[(k + 1) % cfg.num_labels];
        }
        Ok(Self {
            prototypes: PrototypeSet::new(prototypes)?,
            confuser,
            mix_weight: cfg.mix_weight,
            mix_jitter: cfg.mix_jitter,
            noise: cfg.noise,
        })
    }

    pub fn draw(&self, label: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let dim = self.prototypes.dim();
        let noise_scale = self.noise / (dim as f64).sqrt();
        let w = self.mix_weight + rng.random_range(-1.0..=1.0) * self.mix_jitter;
        let p = &self.prototypes.get(label).expect("label in range").0;
        let q = &self.prototypes.get(self.confuser[label]).expect("label in range").0;
        let noise = gaussian_vec(rng, dim);
        (0..dim)
            .map(|k| w * p[k] + (1.0 - w) * q[k] + noise_scale * noise[k])
            .collect()
    }
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = FeatureModel::new(cfg, &mut rng)?;
    let sample = |rng: &mut ChaCha8Rng, count: usize| -> FeatureDataset {
        let mut features = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let y = rng.random_range(0..cfg.num_labels);
            features.push(model.draw(y, rng));
            labels.push(y);
        }
        FeatureDataset {
            dim: cfg.dim,
            num_labels: cfg.num_labels,
            features,
            labels,
        }
    };
    let train = sample(&mut rng, cfg.train);
    let val = sample(&mut rng, cfg.val);
    Ok(SyntheticData {
        prototypes: model.prototypes,
        train,
        val,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub loss: LossKind,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Mscl,
            lr: 1e-2,
            epochs: 10,
            batch_size: 32,
            temperature: DEFAULT_TEMPERATURE,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneResult {
    pub projection: Projection,
    pub history: Vec<EpochRecord>,
}

/// Contrastive loss of one batch of raw features under `projection`, and its
/// gradient with respect to the projection matrix.
pub fn projection_loss_and_grad(
    projection: &Projection,
    raws: &[&[f64]],
    labels: &[usize],
    prototypes: &PrototypeSet,
    loss: LossKind,
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut pre = Vec::with_capacity(raws.len());
    let mut images = Vec::with_capacity(raws.len());
    for raw in raws {
        let u = projection.apply(raw);
        let n = norm(&u);
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        images.push(Embedding(u.iter().map(|v| v / n).collect()));
        pre.push(n);
    }
    let batch = build_batch(&images, labels, prototypes, temperature)?;
    let LossOutput { loss: value, grad } = match loss {
        LossKind::Mscl => mscl_loss(&batch)?,
        LossKind::InfoNce => infonce_loss(&batch)?,
    };
    let d_out = projection.d_out;
    let mut grad_p = vec![0.0; projection.matrix.len()];
    for (i, raw) in raws.iter().enumerate() {
        let phi = &images[i].0;
        let g = &grad[i];
        // Back through the normalization: (I - φφᵀ) g / |u|.
        let along = dot(phi, g);
        let gu: Vec<f64> = (0..d_out).map(|k| (g[k] - phi[k] * along) / pre[i]).collect();
        for (d, &r) in raw.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            let row = &mut grad_p[d * d_out..(d + 1) * d_out];
            for (acc, &v) in row.iter_mut().zip(&gu) {
                *acc += r * v;
            }
        }
    }
    Ok((value, grad_p))
}

/// Fraction of samples whose cosine-nearest prototype is their label.
pub fn prototype_accuracy(
    projection: &Projection,
    data: &FeatureDataset,
    prototypes: &PrototypeSet,
) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let protos = prototypes.normalized()?;
    let mut correct = 0usize;
    for (raw, &y) in data.features.iter().zip(&data.labels) {
        let u = projection.apply(raw);
        let mut best = 0;
        let mut best_sim = f64::NEG_INFINITY;
        for (j, p) in protos.iter().enumerate() {
            let s = dot(&u, &p.0);
            if s > best_sim {
                best_sim = s;
                best = j;
            }
        }
        correct += usize::from(best == y);
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Gradient descent on the projection, starting from the identity.
pub fn finetune_projection(
    train: &FeatureDataset,
    val: &FeatureDataset,
    prototypes: &PrototypeSet,
    cfg: &FinetuneConfig,
) -> Result<FinetuneResult> {
    finetune_from(
        Projection::identity(train.dim, prototypes.dim()),
        train,
        val,
        prototypes,
        cfg,
    )
}

/// Same as [`finetune_projection`] with an explicit initial projection.
pub fn finetune_from(
    init: Projection,
    train: &FeatureDataset,
    val: &FeatureDataset,
    prototypes: &PrototypeSet,
    cfg: &FinetuneConfig,
) -> Result<FinetuneResult> {
    if train.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if train.dim != init.d_in {
        return Err(Error::DimensionMismatch {
            expected: init.d_in,
            got: train.dim,
        });
    }
    let protos = prototypes.normalized()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut projection = init;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let raws: Vec<&[f64]> = chunk.iter().map(|&i| train.features[i].as_slice()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let (loss, grad) =
                projection_loss_and_grad(&projection, &raws, &labels, &protos, cfg.loss, cfg.temperature)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "loss {loss} at epoch {epoch}, batch {b}"
                )));
            }
            for (p, g) in projection.matrix.iter_mut().zip(&grad) {
                *p -= cfg.lr * g;
            }
            total += loss;
            batches += 1;
        }
        history.push(EpochRecord {
            epoch,
            train_loss: total / batches as f64,
            val_acc: prototype_accuracy(&projection, val, &protos)?,
        });
    }
    Ok(FinetuneResult {
        projection,
        history,
    })
}

/// Loss history as `epoch,train_loss,val_acc` CSV.
pub fn write_history_csv<W: Write>(history: &[EpochRecord], mut out: W) -> Result<()> {
    writeln!(out, "epoch,train_loss,val_acc")?;
    for r in history {
        writeln!(out, "{},{:.6},{:.6}", r.epoch, r.train_loss, r.val_acc)?;
    }
    Ok(())
}
