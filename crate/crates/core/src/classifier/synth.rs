//! Confusion-matrix classifier used inside the simulator in place of a
//! learned image encoder.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Row-stochastic `C × C` matrix; row `i` is the predicted distribution when
/// the true label is `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    rows: Vec<Vec<f64>>,
}

impl ConfusionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let c = rows.len();
        if c == 0 {
            return Err(Error::InvalidConfusion("no rows".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::InvalidConfusion(format!(
                    "row {i} has {} entries, expected {c}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidConfusion(format!("row {i} has entries outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfusion(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn identity(c: usize) -> Self {
        Self::diagonal(c, 1.0)
    }

    pub fn uniform(c: usize) -> Self {
        Self {
            rows: vec![vec![1.0 / c as f64; c]; c],
        }
    }

    /// `diag` on the diagonal, the remainder spread evenly off-diagonal.
    pub fn diagonal(c: usize, diag: f64) -> Self {
        let off = if c > 1 { (1.0 - diag) / (c - 1) as f64 } else { 0.0 };
        let rows = (0..c)
            .map(|i| (0..c).map(|j| if i == j { if c > 1 { diag } else { 1.0 } } else { off }).collect())
            .collect();
        Self { rows }
    }

    pub fn num_labels(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, label: usize) -> &[f64] {
        &self.rows[label]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationMode {
    /// One distribution for the whole observation.
    Repeated,
    /// One distribution per sensor ray.
    Spatial,
}

impl ObservationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ObservationMode::Repeated => "repeated",
            ObservationMode::Spatial => "spatial",
        }
    }
}

impl std::str::FromStr for ObservationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "repeated" => Ok(ObservationMode::Repeated),
            "spatial" => Ok(ObservationMode::Spatial),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// Classifier output consumed by egocentric painting.
#[derive(Debug, Clone, PartialEq)]
pub enum ObservationDistribution {
    Repeated(Vec<f64>),
    Spatial(Vec<Vec<f64>>),
}

impl ObservationDistribution {
    pub fn mode(&self) -> ObservationMode {
        match self {
            ObservationDistribution::Repeated(_) => ObservationMode::Repeated,
            ObservationDistribution::Spatial(_) => ObservationMode::Spatial,
        }
    }

    /// Distribution painted along ray `k`.
    pub fn for_ray(&self, k: usize) -> &[f64] {
        match self {
            ObservationDistribution::Repeated(d) => d,
            ObservationDistribution::Spatial(rays) => &rays[k],
        }
    }
}

/// Label covering the most rays; ties are resolved by a seeded draw.
fn majority_label(ray_labels: &[usize], num_labels: usize, seed: u64) -> usize {
    let mut counts = vec![0usize; num_labels];
    for &y in ray_labels {
        counts[y] += 1;
    }
    let top = *counts.iter().max().unwrap_or(&0);
    let tied: Vec<usize> = (0..num_labels).filter(|&y| counts[y] == top).collect();
    if tied.len() == 1 {
        return tied[0];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    *tied.choose(&mut rng).unwrap_or(&tied[0])
}

/// Maps the true label seen by every ray to predicted distributions.
pub fn synth_classify(
    ray_labels: &[usize],
    confusion: &ConfusionMatrix,
    mode: ObservationMode,
    seed: u64,
) -> Result<ObservationDistribution> {
    if ray_labels.is_empty() {
        return Err(Error::Empty("visible rays"));
    }
    let c = confusion.num_labels();
    if let Some(&bad) = ray_labels.iter().find(|&&y| y >= c) {
        return Err(Error::LabelOutOfRange { index: bad, count: c });
    }
    Ok(match mode {
        ObservationMode::Spatial => ObservationDistribution::Spatial(
            ray_labels.iter().map(|&y| confusion.row(y).to_vec()).collect(),
        ),
        ObservationMode::Repeated => ObservationDistribution::Repeated(
            confusion.row(majority_label(ray_labels, c, seed)).to_vec(),
        ),
    })
}
