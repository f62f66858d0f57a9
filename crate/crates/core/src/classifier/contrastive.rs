//! Multi-modal supervised contrastive loss and the symmetric InfoNCE baseline.
//!
//! A batch concatenates `N` image features with the `K` distinct text
//! prototypes of the labels present in the batch. For anchor `i` the
//! denominator runs over every other entry `A(i)` and the numerator averages
//! over the same-label entries `B(i)`:
//!
//! ```text
//! L = Σ_i -log( 1/|B(i)| Σ_{b∈B(i)} exp(s_ib) / Σ_{a∈A(i)} exp(s_ia) ),   s_ij = φ_i·φ_j / τ
//! ```
//!
//! Anchors with an empty `B(i)` contribute nothing.

use super::{dot, Embedding, PrototypeSet};
use crate::error::{Error, Result};

/// Concatenated image and deduplicated text features with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    /// `N` image features followed by `K` text features.
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub num_images: usize,
    pub temperature: f64,
}

/// Loss value and its gradient with respect to every batch feature.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Vec<Vec<f64>>,
}

impl ContrastiveBatch {
    /// Builds a batch from explicit parts. `features[num_images..]` are the text entries.
    pub fn from_parts(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        num_images: usize,
        temperature: f64,
    ) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.len(),
                got: labels.len(),
            });
        }
        if num_images == 0 || num_images > features.len() {
            return Err(Error::Empty("image features"));
        }
        Ok(Self {
            features,
            labels,
            num_images,
            temperature,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Number of distinct text features `K`.
    pub fn num_texts(&self) -> usize {
        self.features.len() - self.num_images
    }

    /// Index into `features` of the text entry carrying `label`.
    pub fn text_slot(&self, label: usize) -> Option<usize> {
        (self.num_images..self.len()).find(|&j| self.labels[j] == label)
    }

    /// `A(i)`: every index except `i`.
    pub fn denominator_set(&self, i: usize) -> impl Iterator<Item = usize> {
        (0..self.len()).filter(move |&j| j != i)
    }

    /// `B(i)`: indices other than `i` sharing its label.
    pub fn positive_set(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let y = self.labels[i];
        (0..self.len()).filter(move |&j| j != i && self.labels[j] == y)
    }
}

/// Assembles `𝒳 = images ++ 𝒯'` and `𝒴`, keeping one text feature per
/// distinct label in order of first appearance.
pub fn build_batch(
    images: &[Embedding],
    labels: &[usize],
    prototypes: &PrototypeSet,
    temperature: f64,
) -> Result<ContrastiveBatch> {
    if images.is_empty() {
        return Err(Error::Empty("image batch"));
    }
    if images.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: images.len(),
            got: labels.len(),
        });
    }
    let mut features: Vec<Vec<f64>> = images.iter().map(|e| e.0.clone()).collect();
    let mut all_labels = labels.to_vec();
    let mut seen: Vec<usize> = Vec::new();
    for &y in labels {
        let proto = prototypes.get(y).ok_or(Error::LabelOutOfRange {
            index: y,
            count: prototypes.len(),
        })?;
        if proto.dim() != images[0].dim() {
            return Err(Error::DimensionMismatch {
                expected: images[0].dim(),
                got: proto.dim(),
            });
        }
        if !seen.contains(&y) {
            seen.push(y);
            features.push(proto.0.clone());
            all_labels.push(y);
        }
    }
    ContrastiveBatch::from_parts(features, all_labels, images.len(), temperature)
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidTemperature(t))
    }
}

fn scaled_similarities(features: &[Vec<f64>], temperature: f64) -> Vec<Vec<f64>> {
    let m = features.len();
    let mut s = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i..m {
            let v = dot(&features[i], &features[j]) / temperature;
            s[i][j] = v;
            s[j][i] = v;
        }
    }
    s
}

/// Log-sum-exp over `row[j]` for `j` in `idx`, plus the normalized weights.
fn log_sum_exp(row: &[f64], idx: &[usize]) -> (f64, Vec<f64>) {
    let max = idx
        .iter()
        .map(|&j| row[j])
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = idx.iter().map(|&j| (row[j] - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let weights = exps.into_iter().map(|e| e / total).collect();
    (max + total.ln(), weights)
}

/// Multi-modal supervised contrastive loss with its analytic gradient.
pub fn mscl_loss(batch: &ContrastiveBatch) -> Result<LossOutput> {
    check_temperature(batch.temperature)?;
    let tau = batch.temperature;
    let m = batch.len();
    let dim = batch.features.first().map_or(0, Vec::len);
    let s = scaled_similarities(&batch.features, tau);
    let mut loss = 0.0;
    let mut grad = vec![vec![0.0; dim]; m];
    let mut any_positive = false;
    // dL/ds_ij, accumulated before the chain rule into features.
    let mut coeff = vec![vec![0.0; m]; m];

    for i in 0..m {
        let positives: Vec<usize> = batch.positive_set(i).collect();
        if positives.is_empty() {
            continue;
        }
        any_positive = true;
        let others: Vec<usize> = batch.denominator_set(i).collect();
        let (lse_all, w_all) = log_sum_exp(&s[i], &others);
        let (lse_pos, w_pos) = log_sum_exp(&s[i], &positives);
        loss += lse_all - lse_pos + (positives.len() as f64).ln();
        for (&j, w) in others.iter().zip(&w_all) {
            coeff[i][j] += w;
        }
        for (&j, w) in positives.iter().zip(&w_pos) {
            coeff[i][j] -= w;
        }
    }
    if !any_positive {
        return Err(Error::NoPositivePairs);
    }
    for i in 0..m {
        for j in 0..m {
            let c = coeff[i][j];
            if c == 0.0 {
                continue;
            }
            let c = c / tau;
            let (fi, fj) = (&batch.features[i], &batch.features[j]);
            for k in 0..dim {
                grad[i][k] += c * fj[k];
            }
            for k in 0..dim {
                grad[j][k] += c * fi[k];
            }
        }
    }
    Ok(LossOutput { loss, grad })
}

/// Symmetric image-text InfoNCE. Every image is paired with its label's text
/// feature and duplicated labels are not merged, so same-label entries act
/// as negatives. The loss is the mean over images of the image-to-text and
/// text-to-image cross-entropies; gradients of the repeated text copies are
/// accumulated onto the shared text entry of the batch.
pub fn infonce_loss(batch: &ContrastiveBatch) -> Result<LossOutput> {
    check_temperature(batch.temperature)?;
    let tau = batch.temperature;
    let n = batch.num_images;
    let dim = batch.features.first().map_or(0, Vec::len);
    let slots: Vec<usize> = (0..n)
        .map(|i| {
            batch.text_slot(batch.labels[i]).ok_or_else(|| {
                Error::Format {
                    what: "contrastive batch",
                    msg: format!("no text feature for label {}", batch.labels[i]),
                }
            })
        })
        .collect::<Result<_>>()?;

    let logits: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| dot(&batch.features[i], &batch.features[slots[j]]) / tau)
                .collect()
        })
        .collect();
    let all: Vec<usize> = (0..n).collect();
    let mut loss = 0.0;
    let mut coeff = vec![vec![0.0; n]; n];
    for i in 0..n {
        let (lse, w) = log_sum_exp(&logits[i], &all);
        loss += lse - logits[i][i];
        for j in 0..n {
            coeff[i][j] += w[j];
        }
        coeff[i][i] -= 1.0;
    }
    for j in 0..n {
        let column: Vec<f64> = (0..n).map(|i| logits[i][j]).collect();
        let (lse, w) = log_sum_exp(&column, &all);
        loss += lse - logits[j][j];
        for i in 0..n {
            coeff[i][j] += w[i];
        }
        coeff[j][j] -= 1.0;
    }
    let scale = 1.0 / n as f64;
    let mut grad = vec![vec![0.0; dim]; batch.len()];
    for i in 0..n {
        for j in 0..n {
            let c = coeff[i][j] * scale / tau;
            if c == 0.0 {
                continue;
            }
            let t = slots[j];
            for k in 0..dim {
                grad[i][k] += c * batch.features[t][k];
                grad[t][k] += c * batch.features[i][k];
            }
        }
    }
    Ok(LossOutput {
        loss: loss * scale,
        grad,
    })
}
