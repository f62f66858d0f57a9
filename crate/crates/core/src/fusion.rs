//! Registration of egocentric maps into the global frame and per-cell fusion.

use crate::error::{Error, Result};
use crate::grid::{CategoricalCell, EgocentricMap, GlobalMap, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionRule {
    /// Count-weighted running mean.
    MovingAverage,
    /// Normalized product of region likelihoods, log-odds occupancy.
    Bayesian,
}

impl FusionRule {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionRule::MovingAverage => "avg",
            FusionRule::Bayesian => "bayes",
        }
    }
}

impl std::str::FromStr for FusionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" | "moving-average" => Ok(FusionRule::MovingAverage),
            "bayes" | "bayesian" => Ok(FusionRule::Bayesian),
            other => Err(Error::Config(format!("unknown fusion rule {other:?}"))),
        }
    }
}

/// Parameters of the Bayesian rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BayesParams {
    /// Lower bound applied to every incoming region likelihood.
    pub floor: f64,
    pub p_hit: f64,
    pub p_free: f64,
    /// Stored occupancy is kept inside `[limit, 1 - limit]` once updated.
    pub occupancy_limit: f64,
}

impl Default for BayesParams {
    fn default() -> Self {
        Self {
            floor: 1e-4,
            p_hit: 0.7,
            p_free: 0.3,
            occupancy_limit: 0.01,
        }
    }
}

/// Local cells resampled onto global cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registration {
    /// `(flat global index, cell)`, in increasing index order.
    pub cells: Vec<(usize, CategoricalCell)>,
    /// Observed samples that fell outside the global grid.
    pub dropped: usize,
}

/// Resamples `local` into the global grid: every global cell whose center,
/// expressed in the agent frame, lands in an observed local cell takes that
/// cell's contents (nearest neighbor).
pub fn register(local: &EgocentricMap, pose: &Pose, global: &GlobalMap) -> Registration {
    let cs = local.cell_size;
    let half = (local.side() / 2) as f64;
    let corners = [
        (-(half + 0.5) * cs, -0.5 * cs),
        ((half + 0.5) * cs, -0.5 * cs),
        (-(half + 0.5) * cs, (local.side() as f64 - 0.5) * cs),
        ((half + 0.5) * cs, (local.side() as f64 - 0.5) * cs),
    ];
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (ax, ay) in corners {
        let (wx, wy) = pose.agent_to_world(ax, ay);
        min_x = min_x.min(wx);
        min_y = min_y.min(wy);
        max_x = max_x.max(wx);
        max_y = max_y.max(wy);
    }
    let gcs = global.cell_size;
    let col_lo = ((min_x - global.origin.0) / gcs).floor() as i64 - 1;
    let col_hi = ((max_x - global.origin.0) / gcs).floor() as i64 + 1;
    let row_lo = ((min_y - global.origin.1) / gcs).floor() as i64 - 1;
    let row_hi = ((max_y - global.origin.1) / gcs).floor() as i64 + 1;

    let mut out = Registration::default();
    for row in row_lo..=row_hi {
        for col in col_lo..=col_hi {
            let wx = global.origin.0 + (col as f64 + 0.5) * gcs;
            let wy = global.origin.1 + (row as f64 + 0.5) * gcs;
            let (ax, ay) = pose.world_to_agent(wx, wy);
            let Some(idx) = local.locate(ax, ay) else {
                continue;
            };
            let flat = local.grid.flat(idx);
            if !local.grid.is_observed(flat) {
                continue;
            }
            if !global.grid.contains(col, row) {
                out.dropped += 1;
                continue;
            }
            let gflat = row as usize * global.side() + col as usize;
            out.cells.push((gflat, local.grid.cell(flat)));
        }
    }
    out
}

/// Counters reported by [`fuse`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FusionStats {
    pub updated: usize,
    /// Bayesian updates whose posterior vanished and fell back to the observation.
    pub fallbacks: usize,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(l: f64) -> f64 {
    1.0 / (1.0 + (-l).exp())
}

/// Fuses registered cells into the global map in place.
pub fn fuse(
    global: &mut GlobalMap,
    cells: &[(usize, CategoricalCell)],
    rule: FusionRule,
    params: &BayesParams,
) -> Result<FusionStats> {
    let num_labels = global.num_labels();
    let mut stats = FusionStats::default();
    for (flat, obs) in cells {
        let flat = *flat;
        if flat >= global.grid.len() {
            return Err(Error::GeometryMismatch(format!(
                "cell {flat} outside a map of {} cells",
                global.grid.len()
            )));
        }
        if obs.region.len() != num_labels {
            return Err(Error::DimensionMismatch {
                expected: num_labels,
                got: obs.region.len(),
            });
        }
        if !obs.is_observed() {
            continue;
        }
        let n = global.grid.obs_count(flat);
        stats.updated += 1;
        if n == 0 {
            let first = CategoricalCell {
                obs_count: 1,
                ..obs.clone()
            };
            global.grid.set_cell(flat, &first)?;
            continue;
        }
        let ch = global.grid.channels_mut(flat);
        match rule {
            FusionRule::MovingAverage => {
                let w_old = n as f64 / (n as f64 + 1.0);
                let w_new = 1.0 / (n as f64 + 1.0);
                ch[0] = w_old * ch[0] + w_new * obs.occupancy;
                ch[1] = w_old * ch[1] + w_new * obs.explored;
                for (r, o) in ch[2..].iter_mut().zip(&obs.region) {
                    *r = w_old * *r + w_new * o;
                }
            }
            FusionRule::Bayesian => {
                let lim = params.occupancy_limit;
                let sensor = params.p_free + obs.occupancy * (params.p_hit - params.p_free);
                let prior = ch[0].clamp(lim, 1.0 - lim);
                ch[0] = sigmoid(logit(prior) + logit(sensor)).clamp(lim, 1.0 - lim);
                ch[1] = ch[1].max(obs.explored);
                let mut total = 0.0;
                for (r, o) in ch[2..].iter_mut().zip(&obs.region) {
                    *r *= o.max(params.floor);
                    total += *r;
                }
                if total > 0.0 && total.is_finite() {
                    for r in &mut ch[2..] {
                        *r /= total;
                    }
                } else {
                    stats.fallbacks += 1;
                    let incoming: f64 = obs.region.iter().sum();
                    for (r, o) in ch[2..].iter_mut().zip(&obs.region) {
                        *r = o / incoming;
                    }
                }
            }
        }
        global.grid.set_count(flat, n + 1);
    }
    Ok(stats)
}
