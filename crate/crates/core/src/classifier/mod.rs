//! Region classification over embeddings.
//!
//! An observation feature is matched against one prototype embedding per
//! region label by cosine similarity. The temperature-scaled softmax of the
//! similarities is the categorical region distribution handed to the mapper.

mod contrastive;
mod finetune;
mod synth;

pub use contrastive::{build_batch, infonce_loss, mscl_loss, ContrastiveBatch, LossOutput};
pub use finetune::{
    prototype_accuracy, finetune_from, finetune_projection, generate_synthetic, projection_loss_and_grad,
    read_features, write_features, write_history_csv, EpochRecord, FeatureDataset, FeatureModel,
    FinetuneConfig, FinetuneResult, LossKind, Projection, SyntheticConfig, SyntheticData,
    FEATURE_MAGIC,
};
pub use synth::{synth_classify, ConfusionMatrix, ObservationDistribution, ObservationMode};

use crate::error::{Error, Result};

/// Default contrastive and classification temperature.
pub const DEFAULT_TEMPERATURE: f64 = 0.07;

/// Dense feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding entry {v}")));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// Unit-length copy.
    pub fn normalized(&self) -> Result<Embedding> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(Embedding(self.0.iter().map(|v| v / n).collect()))
    }
}

/// One embedding per region label, ordered like the label set.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    prototypes: Vec<Embedding>,
}

impl PrototypeSet {
    pub fn new(prototypes: Vec<Embedding>) -> Result<Self> {
        let first = prototypes.first().ok_or(Error::Empty("prototype set"))?;
        let dim = first.dim();
        for p in &prototypes {
            if p.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.dim(),
                });
            }
        }
        Ok(Self { prototypes })
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.prototypes[0].dim()
    }

    pub fn get(&self, label: usize) -> Option<&Embedding> {
        self.prototypes.get(label)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Embedding> {
        self.prototypes.iter()
    }

    pub fn normalized(&self) -> Result<PrototypeSet> {
        Ok(PrototypeSet {
            prototypes: self
                .prototypes
                .iter()
                .map(Embedding::normalized)
                .collect::<Result<_>>()?,
        })
    }
}

/// Result of classifying one observation feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub label: usize,
    /// Cosine similarity to each prototype.
    pub similarities: Vec<f64>,
    /// `softmax(similarities / τ)`.
    pub distribution: Vec<f64>,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Picks the prototype with the highest cosine similarity (ties go to the
/// lowest label) and returns the softmax distribution over all labels.
pub fn classify(
    feature: &Embedding,
    prototypes: &PrototypeSet,
    temperature: f64,
) -> Result<Classification> {
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::InvalidTemperature(temperature));
    }
    if feature.dim() != prototypes.dim() {
        return Err(Error::DimensionMismatch {
            expected: prototypes.dim(),
            got: feature.dim(),
        });
    }
    let fnorm = feature.norm();
    if fnorm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let mut similarities = Vec::with_capacity(prototypes.len());
    for p in prototypes.iter() {
        let pnorm = p.norm();
        if pnorm == 0.0 {
            return Err(Error::ZeroNorm);
        }
        similarities.push(dot(feature.as_slice(), p.as_slice()) / (fnorm * pnorm));
    }
    let mut label = 0;
    for (j, &s) in similarities.iter().enumerate() {
        if s > similarities[label] {
            label = j;
        }
    }
    let logits: Vec<f64> = similarities.iter().map(|s| s / temperature).collect();
    Ok(Classification {
        label,
        distribution: softmax(&logits),
        similarities,
    })
}
