//! Raycast depth sensor over a floorplan and the analytic noise models.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::floorplan::Floorplan;
use crate::error::{Error, Result};
use crate::grid::Pose;
use crate::projection::{ray_bearing, DepthScan};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub pose_sigma_trans: f64,
    pub pose_sigma_rot: f64,
    pub depth_sigma_rel: f64,
    pub depth_dropout_p: f64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            pose_sigma_trans: 0.0,
            pose_sigma_rot: 0.0,
            depth_sigma_rel: 0.0,
            depth_dropout_p: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [self.pose_sigma_trans, self.pose_sigma_rot, self.depth_sigma_rel];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("noise sigmas must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.depth_dropout_p) {
            return Err(Error::Config(format!(
                "dropout probability {} outside [0, 1]",
                self.depth_dropout_p
            )));
        }
        Ok(())
    }

    pub fn is_none(&self) -> bool {
        *self == Self::none()
    }

    /// Reported pose: the true pose plus independent Gaussian errors.
    pub fn corrupt_pose<R: Rng>(&self, pose: &Pose, rng: &mut R) -> Pose {
        if self.pose_sigma_trans == 0.0 && self.pose_sigma_rot == 0.0 {
            return *pose;
        }
        let gauss = |rng: &mut R, sigma: f64| {
            if sigma > 0.0 {
                Normal::new(0.0, sigma).expect("validated sigma").sample(rng)
            } else {
                0.0
            }
        };
        let dx = gauss(rng, self.pose_sigma_trans);
        let dy = gauss(rng, self.pose_sigma_trans);
        let dt = gauss(rng, self.pose_sigma_rot);
        Pose::new(pose.x + dx, pose.y + dy, pose.theta + dt)
    }

    /// Multiplicative Gaussian error whose spread grows with range, then dropout.
    pub fn corrupt_depth<R: Rng>(&self, depth: f64, max_range: f64, rng: &mut R) -> f64 {
        let mut d = depth;
        if self.depth_sigma_rel > 0.0 && d > 0.0 {
            let n = Normal::new(0.0, self.depth_sigma_rel * d).expect("validated sigma").sample(rng);
            d *= 1.0 + n;
        }
        if self.depth_dropout_p > 0.0 && rng.random_bool(self.depth_dropout_p) {
            d = max_range;
        }
        d.clamp(0.0, max_range)
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            pose_sigma_trans: 0.01,
            pose_sigma_rot: 0.005,
            depth_sigma_rel: 0.02,
            depth_dropout_p: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorConfig {
    pub rays: usize,
    pub hfov: f64,
    pub max_range: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            rays: crate::projection::DEFAULT_RAYS,
            hfov: crate::projection::DEFAULT_HFOV,
            max_range: crate::projection::DEFAULT_MAX_RANGE,
        }
    }
}

/// Result of one ray: distance to the first wall boundary (or the range
/// limit) and the last free cell passed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub depth: f64,
    pub last_free: (usize, usize),
}

/// Grid walk from a free start point along a world heading.
pub fn cast_ray(fp: &Floorplan, x: f64, y: f64, angle: f64, max_range: f64) -> RayHit {
    let cs = fp.cell_size;
    let (ox, oy) = (x / cs, y / cs);
    let (dx, dy) = (angle.cos(), angle.sin());
    let (mut col, mut row) = (ox.floor() as i64, oy.floor() as i64);
    let step_c: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_r: i64 = if dy > 0.0 { 1 } else { -1 };
    let t_delta_c = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
    let t_delta_r = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };
    let mut t_max_c = if dx > 0.0 {
        (col as f64 + 1.0 - ox) * t_delta_c
    } else if dx < 0.0 {
        (ox - col as f64) * t_delta_c
    } else {
        f64::INFINITY
    };
    let mut t_max_r = if dy > 0.0 {
        (row as f64 + 1.0 - oy) * t_delta_r
    } else if dy < 0.0 {
        (oy - row as f64) * t_delta_r
    } else {
        f64::INFINITY
    };
    let limit = max_range / cs;
    let mut last_free = (col.max(0) as usize, row.max(0) as usize);
    loop {
        let t_enter;
        if t_max_c < t_max_r {
            t_enter = t_max_c;
            t_max_c += t_delta_c;
            col += step_c;
        } else {
            t_enter = t_max_r;
            t_max_r += t_delta_r;
            row += step_r;
        }
        if t_enter >= limit {
            return RayHit {
                depth: max_range,
                last_free,
            };
        }
        if fp.is_occupied(col, row) {
            return RayHit {
                depth: t_enter * cs,
                last_free,
            };
        }
        last_free = (col as usize, row as usize);
    }
}

/// One observation: the depth scan handed to the mapper, the true label seen
/// by each ray, and the pose reported to the mapper.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub scan: DepthScan,
    pub ray_labels: Vec<usize>,
    pub reported_pose: Pose,
}

/// Renders a scan from the true pose. Noise, when given, corrupts depths and
/// the reported pose; the true labels are unaffected.
pub fn sense<R: Rng>(
    fp: &Floorplan,
    pose: &Pose,
    sensor: &SensorConfig,
    noise: Option<(&NoiseModel, &mut R)>,
) -> Result<Observation> {
    if !fp.is_free_at(pose.x, pose.y) {
        return Err(Error::PoseInObstacle { x: pose.x, y: pose.y });
    }
    let mut depths = Vec::with_capacity(sensor.rays);
    let mut ray_labels = Vec::with_capacity(sensor.rays);
    for k in 0..sensor.rays {
        let angle = pose.theta - ray_bearing(k, sensor.rays, sensor.hfov);
        let hit = cast_ray(fp, pose.x, pose.y, angle, sensor.max_range);
        depths.push(hit.depth);
        let label = fp
            .label(hit.last_free.0, hit.last_free.1)
            .expect("last free cell carries a label");
        ray_labels.push(label);
    }
    let mut reported_pose = *pose;
    if let Some((model, rng)) = noise {
        for d in depths.iter_mut() {
            *d = model.corrupt_depth(*d, sensor.max_range, rng);
        }
        reported_pose = model.corrupt_pose(pose, rng);
    }
    let scan = DepthScan::new(depths, sensor.hfov, sensor.max_range, 0.0)?;
    Ok(Observation {
        scan,
        ray_labels,
        reported_pose,
    })
}
