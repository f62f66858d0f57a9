//! Offline dataset extraction: random walks through floorplans, storing an
//! observation and its ground-truth egocentric region map whenever the pose is
//! new.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::episode::random_start;
use super::floorplan::Floorplan;
use super::sensor::{sense, SensorConfig};
use crate::classifier::{FeatureDataset, FeatureModel, SyntheticConfig};
use crate::error::{Error, Result};
use crate::grid::{normalize_angle, Action, CellIndex, Pose, EGO_SIDE};
use crate::projection::{collapse_to_topdown, DepthScan};

/// Ground-truth egocentric cell that no ray reached.
pub const GT_HIDDEN: u8 = 255;
/// Visible cell whose world position is a wall or outside the plan.
pub const GT_WALL: u8 = 254;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub env: usize,
    pub split: Split,
    pub pose: Pose,
    pub scan: DepthScan,
    pub ray_labels: Vec<usize>,
    /// Label covering the most rays, lowest index on ties.
    pub majority: usize,
    /// Row-major `ego_side²` labels, [`GT_HIDDEN`] or [`GT_WALL`] where unlabeled.
    pub gt: Vec<u8>,
    pub ego_side: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub episodes_per_env: usize,
    pub steps_per_episode: usize,
    pub dedup_distance: f64,
    pub dedup_angle: f64,
    /// Fraction of environments held out for validation.
    pub val_fraction: f64,
    pub sensor: SensorConfig,
    pub ego_side: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            episodes_per_env: 2,
            steps_per_episode: 200,
            dedup_distance: 0.1,
            dedup_angle: 0.1,
            val_fraction: 0.2,
            sensor: SensorConfig::default(),
            ego_side: EGO_SIDE,
            seed: 0,
        }
    }
}

/// Spatially bucketed store of accepted poses.
pub struct PoseDeduper {
    distance: f64,
    angle: f64,
    buckets: BTreeMap<(i64, i64), Vec<Pose>>,
}

impl PoseDeduper {
    pub fn new(distance: f64, angle: f64) -> Self {
        Self {
            distance,
            angle,
            buckets: BTreeMap::new(),
        }
    }

    fn key(&self, x: f64, y: f64) -> (i64, i64) {
        let b = self.distance.max(1e-9);
        ((x / b).floor() as i64, (y / b).floor() as i64)
    }

    /// Accepts and stores `pose` unless a stored pose is within both thresholds.
    pub fn offer(&mut self, pose: &Pose) -> bool {
        let (kx, ky) = self.key(pose.x, pose.y);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(list) = self.buckets.get(&(kx + dx, ky + dy)) {
                    let dup = list.iter().any(|p| {
                        p.distance_to(pose.x, pose.y) <= self.distance
                            && normalize_angle(p.theta - pose.theta).abs() <= self.angle
                    });
                    if dup {
                        return false;
                    }
                }
            }
        }
        self.buckets.entry((kx, ky)).or_default().push(*pose);
        true
    }
}

/// Indices of the poses kept by the dedup rule, in order.
pub fn dedup_poses(poses: &[Pose], distance: f64, angle: f64) -> Vec<usize> {
    let mut d = PoseDeduper::new(distance, angle);
    (0..poses.len()).filter(|&i| d.offer(&poses[i])).collect()
}

/// Seeded random walk; forward moves into walls leave the pose unchanged.
pub fn random_walk(fp: &Floorplan, start: Pose, steps: usize, rng: &mut ChaCha8Rng) -> Vec<Pose> {
    let mut pose = start;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        out.push(pose);
        let u: f64 = rng.random();
        let action = if u < 0.6 {
            Action::Forward
        } else if u < 0.8 {
            Action::TurnLeft
        } else {
            Action::TurnRight
        };
        let next = pose.apply(action);
        let mid = pose.apply(Action::Forward);
        let clear = (1..=8).all(|i| {
            let t = i as f64 / 8.0;
            fp.is_free_at(pose.x + t * (mid.x - pose.x), pose.y + t * (mid.y - pose.y))
        });
        if action != Action::Forward || clear {
            pose = next;
        }
    }
    out
}

/// Labels of the floorplan seen through the projected footprint of `scan`.
pub fn ground_truth_egocentric(fp: &Floorplan, pose: &Pose, scan: &DepthScan, ego_side: usize) -> Vec<u8> {
    let proj = collapse_to_topdown(scan, ego_side, fp.cell_size);
    let half = (ego_side / 2) as f64;
    let mut gt = vec![GT_HIDDEN; ego_side * ego_side];
    for (flat, v) in proj.visibility.iter().enumerate() {
        if !v {
            continue;
        }
        let idx = CellIndex::new(flat % ego_side, flat / ego_side);
        let ax = (idx.col as f64 - half) * fp.cell_size;
        let ay = idx.row as f64 * fp.cell_size;
        let (wx, wy) = pose.agent_to_world(ax, ay);
        gt[flat] = fp.label_at(wx, wy).map_or(GT_WALL, |l| l as u8);
    }
    gt
}

fn majority(labels: &[usize], num_labels: usize) -> usize {
    let mut counts = vec![0usize; num_labels];
    for &l in labels {
        counts[l] += 1;
    }
    (0..num_labels).max_by_key(|&k| (counts[k], std::cmp::Reverse(k))).unwrap_or(0)
}

/// Environment-level split: a seeded shuffle puts the first share of
/// environments into validation, at least one when there are two or more.
pub fn split_environments(n: usize, val_fraction: f64, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5B17));
    let mut val = (n as f64 * val_fraction).round() as usize;
    if n >= 2 {
        val = val.clamp(1, n - 1);
    } else {
        val = 0;
    }
    let mut out = vec![Split::Train; n];
    for &e in &order[..val] {
        out[e] = Split::Val;
    }
    out
}

pub fn extract_dataset(floorplans: &[Floorplan], cfg: &DatasetConfig) -> Result<Vec<Sample>> {
    let splits = split_environments(floorplans.len(), cfg.val_fraction, cfg.seed);
    let mut samples = Vec::new();
    for (env, fp) in floorplans.iter().enumerate() {
        if fp.labels.len() > GT_WALL as usize {
            return Err(Error::Config("too many labels for the dataset format".into()));
        }
        let mut dedup = PoseDeduper::new(cfg.dedup_distance, cfg.dedup_angle);
        for ep in 0..cfg.episodes_per_env {
            let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add((env * 1000 + ep) as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start = random_start(fp, seed, 3)?;
            for pose in random_walk(fp, start, cfg.steps_per_episode, &mut rng) {
                if !dedup.offer(&pose) {
                    continue;
                }
                let obs = sense::<ChaCha8Rng>(fp, &pose, &cfg.sensor, None)?;
                let gt = ground_truth_egocentric(fp, &pose, &obs.scan, cfg.ego_side);
                samples.push(Sample {
                    env,
                    split: splits[env],
                    pose,
                    majority: majority(&obs.ray_labels, fp.labels.len()),
                    scan: obs.scan,
                    ray_labels: obs.ray_labels,
                    gt,
                    ego_side: cfg.ego_side,
                });
            }
        }
    }
    Ok(samples)
}

/// Stand-in image features: each sample's majority label drawn through the
/// synthetic feature model. Returns `(train, val)`.
pub fn embed_samples(
    samples: &[Sample],
    synth: &SyntheticConfig,
) -> Result<(FeatureModel, FeatureDataset, FeatureDataset)> {
    let mut rng = ChaCha8Rng::seed_from_u64(synth.seed);
    let model = FeatureModel::new(synth, &mut rng)?;
    let empty = || FeatureDataset {
        dim: synth.dim,
        num_labels: synth.num_labels,
        features: Vec::new(),
        labels: Vec::new(),
    };
    let (mut train, mut val) = (empty(), empty());
    for s in samples {
        if s.majority >= synth.num_labels {
            return Err(Error::LabelOutOfRange {
                index: s.majority,
                count: synth.num_labels,
            });
        }
        let target = if s.split == Split::Train { &mut train } else { &mut val };
        target.features.push(model.draw(s.majority, &mut rng));
        target.labels.push(s.majority);
    }
    Ok((model, train, val))
}

const SAMPLE_MAGIC: &[u8; 4] = b"ISRS";

pub fn write_samples<W: Write>(samples: &[Sample], mut out: W) -> Result<()> {
    out.write_all(SAMPLE_MAGIC)?;
    out.write_all(&1u16.to_le_bytes())?;
    out.write_all(&(samples.len() as u64).to_le_bytes())?;
    for s in samples {
        out.write_all(&(s.env as u32).to_le_bytes())?;
        out.write_all(&[(s.split == Split::Val) as u8])?;
        for v in [s.pose.x, s.pose.y, s.pose.theta, s.scan.hfov, s.scan.max_range, s.scan.min_range] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&(s.majority as u16).to_le_bytes())?;
        out.write_all(&(s.scan.width() as u32).to_le_bytes())?;
        for &d in &s.scan.depths {
            out.write_all(&d.to_le_bytes())?;
        }
        for &l in &s.ray_labels {
            out.write_all(&(l as u16).to_le_bytes())?;
        }
        out.write_all(&(s.ego_side as u32).to_le_bytes())?;
        out.write_all(&s.gt)?;
    }
    Ok(())
}

pub fn read_samples<R: Read>(mut input: R) -> Result<Vec<Sample>> {
    fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        r.read_exact(&mut b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format {
                what: "sample file",
                msg: "truncated".into(),
            },
            _ => Error::Io(e),
        })?;
        Ok(b)
    }
    if &take::<4, _>(&mut input)? != SAMPLE_MAGIC {
        return Err(Error::Format {
            what: "sample file",
            msg: "bad magic".into(),
        });
    }
    let _version = u16::from_le_bytes(take(&mut input)?);
    let count = u64::from_le_bytes(take(&mut input)?) as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let env = u32::from_le_bytes(take(&mut input)?) as usize;
        let split = if take::<1, _>(&mut input)?[0] == 1 { Split::Val } else { Split::Train };
        let mut f = [0.0f64; 6];
        for v in f.iter_mut() {
            *v = f64::from_le_bytes(take(&mut input)?);
        }
        let majority = u16::from_le_bytes(take(&mut input)?) as usize;
        let w = u32::from_le_bytes(take(&mut input)?) as usize;
        let mut depths = Vec::with_capacity(w);
        for _ in 0..w {
            depths.push(f64::from_le_bytes(take(&mut input)?));
        }
        let mut ray_labels = Vec::with_capacity(w);
        for _ in 0..w {
            ray_labels.push(u16::from_le_bytes(take(&mut input)?) as usize);
        }
        let ego_side = u32::from_le_bytes(take(&mut input)?) as usize;
        let mut gt = vec![0u8; ego_side * ego_side];
        input.read_exact(&mut gt)?;
        out.push(Sample {
            env,
            split,
            pose: Pose { x: f[0], y: f[1], theta: f[2] },
            scan: DepthScan::new(depths, f[3], f[4], f[5])?,
            ray_labels,
            majority,
            gt,
            ego_side,
        });
    }
    Ok(out)
}
