//! The exploration loop: sense, classify, paint, register, fuse, plan, act.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::floorplan::Floorplan;
use super::sensor::{sense, NoiseModel, SensorConfig};
use crate::classifier::{synth_classify, ConfusionMatrix, ObservationMode};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, MapMetrics};
use crate::fusion::{fuse, register, BayesParams, FusionRule};
use crate::grid::write_map;
use crate::grid::{Action, CellIndex, GlobalMap, Pose, EGO_SIDE};
use crate::navigation::{heading_error, local_step, update_goals, NavConfig, NavState, RefreshEvent, RefreshReason};
use crate::projection::{collapse_to_topdown, paint_egocentric};

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    pub fusion: FusionRule,
    pub mode: ObservationMode,
    pub noise: bool,
    pub noise_model: NoiseModel,
    /// Diagonal of the synthetic classifier's confusion matrix.
    pub confusion_diag: f64,
    pub seed: u64,
    pub sensor: SensorConfig,
    pub ego_side: usize,
    pub nav: NavConfig,
    pub bayes: BayesParams,
    /// Random free start when `None`.
    pub start: Option<Pose>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: 500,
            fusion: FusionRule::MovingAverage,
            mode: ObservationMode::Spatial,
            noise: false,
            noise_model: NoiseModel::default(),
            confusion_diag: 1.0,
            seed: 0,
            sensor: SensorConfig::default(),
            ego_side: EGO_SIDE,
            nav: NavConfig::default(),
            bayes: BayesParams::default(),
            start: None,
        }
    }
}

impl EpisodeConfig {
    /// Parses `key=value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        match key {
            "max_steps" => self.max_steps = num(key, value)?,
            "fusion" => self.fusion = value.parse()?,
            "mode" => self.mode = value.parse()?,
            "noise" => {
                self.noise = match value {
                    "on" | "true" | "1" => true,
                    "off" | "false" | "0" => false,
                    _ => return Err(Error::Config(format!("bad value {value:?} for noise"))),
                }
            }
            "pose_sigma_trans" => self.noise_model.pose_sigma_trans = num(key, value)?,
            "pose_sigma_rot" => self.noise_model.pose_sigma_rot = num(key, value)?,
            "depth_sigma_rel" => self.noise_model.depth_sigma_rel = num(key, value)?,
            "depth_dropout_p" => self.noise_model.depth_dropout_p = num(key, value)?,
            "confusion_diag" => self.confusion_diag = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "rays" => self.sensor.rays = num(key, value)?,
            "hfov" => self.sensor.hfov = num(key, value)?,
            "max_range" => self.sensor.max_range = num(key, value)?,
            "ego_side" => self.ego_side = num(key, value)?,
            "eta" => self.nav.eta = num(key, value)?,
            "inflation_cells" => self.nav.inflation_cells = num(key, value)?,
            "bayes_floor" => self.bayes.floor = num(key, value)?,
            "start" => {
                let v: Vec<f64> = value
                    .split(',')
                    .map(|t| num(key, t.trim()))
                    .collect::<Result<_>>()?;
                if v.len() != 3 {
                    return Err(Error::Config("start needs x,y,theta".into()));
                }
                self.start = Some(Pose::new(v[0], v[1], v[2]));
            }
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k}={v}\n"));
        kv("max_steps", self.max_steps.to_string());
        kv("fusion", self.fusion.as_str().into());
        kv("mode", self.mode.as_str().into());
        kv("noise", if self.noise { "on" } else { "off" }.into());
        kv("pose_sigma_trans", format!("{:?}", self.noise_model.pose_sigma_trans));
        kv("pose_sigma_rot", format!("{:?}", self.noise_model.pose_sigma_rot));
        kv("depth_sigma_rel", format!("{:?}", self.noise_model.depth_sigma_rel));
        kv("depth_dropout_p", format!("{:?}", self.noise_model.depth_dropout_p));
        kv("confusion_diag", format!("{:?}", self.confusion_diag));
        kv("seed", self.seed.to_string());
        kv("rays", self.sensor.rays.to_string());
        kv("hfov", format!("{:?}", self.sensor.hfov));
        kv("max_range", format!("{:?}", self.sensor.max_range));
        kv("ego_side", self.ego_side.to_string());
        kv("eta", self.nav.eta.to_string());
        kv("inflation_cells", self.nav.inflation_cells.to_string());
        kv("bayes_floor", format!("{:?}", self.bayes.floor));
        if let Some(p) = self.start {
            kv("start", format!("{:?},{:?},{:?}", p.x, p.y, p.theta));
        }
        s
    }

    fn validate(&self, fp: &Floorplan) -> Result<()> {
        self.noise_model.validate()?;
        if self.ego_side.is_multiple_of(2) || self.ego_side < 3 {
            return Err(Error::Config(format!("ego_side {} must be odd and >= 3", self.ego_side)));
        }
        if self.sensor.rays < 2 {
            return Err(Error::Config("need at least two rays".into()));
        }
        if self.nav.eta == 0 {
            return Err(Error::Config("eta must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.confusion_diag) {
            return Err(Error::Config(format!("confusion_diag {} outside [0, 1]", self.confusion_diag)));
        }
        if fp.labels.len() < 2 {
            return Err(Error::Config("need at least two labels".into()));
        }
        Ok(())
    }
}

/// One logged step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    /// True pose before the action.
    pub pose: Pose,
    /// Pose reported to the mapper.
    pub reported: Pose,
    pub action: Action,
    pub global_goal: Option<CellIndex>,
    pub local_goal: Option<CellIndex>,
    pub refresh: Option<RefreshReason>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeStats {
    pub steps: usize,
    /// Forward actions whose destination cell was fused-occupied.
    pub forward_violations: usize,
    /// Forward actions replaced by a turn because the move crossed a fused obstacle.
    pub guard_events: usize,
    /// Forward actions stopped by a floorplan wall.
    pub collisions: usize,
    pub fusion_fallbacks: usize,
    pub dropped_cells: usize,
    pub max_steps_since_global: usize,
    pub refresh_events: Vec<(usize, RefreshEvent)>,
    pub complete: bool,
    /// Error that ended the episode early, as `kind: message`.
    pub aborted: Option<String>,
}

#[derive(Debug, Clone)]
pub struct EpisodeOutput {
    pub map: GlobalMap,
    pub log: Vec<StepRecord>,
    pub stats: EpisodeStats,
    pub metrics: MapMetrics,
}

/// Global map sized and aligned to the floorplan.
pub fn global_map_for(fp: &Floorplan) -> GlobalMap {
    GlobalMap::new(fp.width.max(fp.height), fp.labels.len(), fp.cell_size, (0.0, 0.0))
}

/// Seeded start pose at a cell center at least `clearance` cells from walls.
pub fn random_start(fp: &Floorplan, seed: u64, clearance: usize) -> Result<Pose> {
    let candidates: Vec<(usize, usize)> = (0..fp.height)
        .flat_map(|r| (0..fp.width).map(move |c| (c, r)))
        .filter(|&(c, r)| !fp.occupied[fp.flat(c, r)] && fp.wall_clearance(c, r, clearance) >= clearance)
        .collect();
    if candidates.is_empty() {
        return Err(Error::InfeasibleConfig("no free start cell".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_57A7);
    let (c, r) = candidates[rng.random_range(0..candidates.len())];
    let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    Ok(Pose::new((c as f64 + 0.5) * fp.cell_size, (r as f64 + 0.5) * fp.cell_size, theta))
}

/// Points spaced a quarter cell apart along a segment, endpoints included.
fn segment_samples(from: (f64, f64), to: (f64, f64), cell_size: f64) -> impl Iterator<Item = (f64, f64)> {
    let len = (to.0 - from.0).hypot(to.1 - from.1);
    let n = ((len / (cell_size / 4.0)).ceil() as usize).max(1);
    (0..=n).map(move |i| {
        let t = i as f64 / n as f64;
        (from.0 + t * (to.0 - from.0), from.1 + t * (to.1 - from.1))
    })
}

fn fused_occupied_at(map: &GlobalMap, x: f64, y: f64, threshold: f64) -> bool {
    match map.world_to_cell(x, y) {
        Ok(c) => {
            let f = map.grid.flat(c);
            map.grid.is_observed(f) && map.grid.occupancy(f) >= threshold
        }
        Err(_) => true,
    }
}

/// Whether a forward move from `pose` passes through a fused-occupied cell,
/// the start cell excepted.
pub fn forward_blocked(map: &GlobalMap, pose: &Pose, threshold: f64) -> bool {
    let next = pose.apply(Action::Forward);
    let start = map.world_to_cell(pose.x, pose.y).ok();
    segment_samples((pose.x, pose.y), (next.x, next.y), map.cell_size)
        .filter(|&(x, y)| map.world_to_cell(x, y).ok() != start)
        .any(|(x, y)| fused_occupied_at(map, x, y, threshold))
}

fn wall_between(fp: &Floorplan, from: &Pose, to: &Pose) -> bool {
    segment_samples((from.x, from.y), (to.x, to.y), fp.cell_size).any(|(x, y)| !fp.is_free_at(x, y))
}

/// Runs one episode. Component errors end the loop early; the partial map,
/// log and metrics are still returned with the error recorded in the stats.
pub fn run_episode(fp: &Floorplan, cfg: &EpisodeConfig) -> Result<EpisodeOutput> {
    cfg.validate(fp)?;
    let num_labels = fp.labels.len();
    let confusion = ConfusionMatrix::diagonal(num_labels, cfg.confusion_diag);
    let mut map = global_map_for(fp);
    let mut pose = match cfg.start {
        Some(p) => p,
        None => random_start(fp, cfg.seed, cfg.nav.inflation_cells + 2)?,
    };
    if !fp.is_free_at(pose.x, pose.y) {
        return Err(Error::PoseInObstacle { x: pose.x, y: pose.y });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut nav = NavState::new();
    let mut log = Vec::with_capacity(cfg.max_steps);
    let mut stats = EpisodeStats::default();
    let threshold = cfg.nav.occupied_threshold;

    let step = |t: usize,
                pose: &mut Pose,
                map: &mut GlobalMap,
                nav: &mut NavState,
                rng: &mut ChaCha8Rng,
                stats: &mut EpisodeStats,
                log: &mut Vec<StepRecord>|
     -> Result<bool> {
        let noise = cfg.noise.then_some((&cfg.noise_model, &mut *rng));
        let obs = sense(fp, pose, &cfg.sensor, noise)?;
        let proj = collapse_to_topdown(&obs.scan, cfg.ego_side, fp.cell_size);
        let dist = synth_classify(&obs.ray_labels, &confusion, cfg.mode, cfg.seed ^ (t as u64))?;
        let ego = paint_egocentric(&proj, &dist)?;
        let reg = register(&ego, &obs.reported_pose, map);
        stats.dropped_cells += reg.dropped;
        let fs = fuse(map, &reg.cells, cfg.fusion, &cfg.bayes)?;
        stats.fusion_fallbacks += fs.fallbacks;

        let event = match update_goals(nav, map, pose, &cfg.nav) {
            Ok(ev) => ev,
            Err(Error::ExplorationComplete) => return Ok(false),
            Err(e) => return Err(e),
        };
        if let Some(ev) = event {
            stats.refresh_events.push((t, ev));
        }
        let local = nav.local_goal.expect("local goal after update");
        let goal_xy = map.cell_center(local);
        let mut action = if pose.distance_to(goal_xy.0, goal_xy.1) <= cfg.nav.reach_threshold {
            // Standing on the end of the plan: look around.
            Action::TurnLeft
        } else {
            local_step(pose, goal_xy, cfg.nav.heading_tolerance)
        };
        if action == Action::Forward && forward_blocked(map, pose, threshold) {
            stats.guard_events += 1;
            action = if heading_error(pose, goal_xy.0, goal_xy.1) >= 0.0 {
                Action::TurnLeft
            } else {
                Action::TurnRight
            };
        }
        let next = pose.apply(action);
        if action == Action::Forward && fused_occupied_at(map, next.x, next.y, threshold) {
            stats.forward_violations += 1;
        }
        log.push(StepRecord {
            t,
            pose: *pose,
            reported: obs.reported_pose,
            action,
            global_goal: nav.global_goal,
            local_goal: nav.local_goal,
            refresh: event.map(|e| e.reason),
        });
        if action == Action::Forward && wall_between(fp, pose, &next) {
            stats.collisions += 1;
        } else {
            *pose = next;
        }
        nav.tick();
        stats.max_steps_since_global = stats.max_steps_since_global.max(nav.steps_since_global);
        Ok(true)
    };

    for t in 0..cfg.max_steps {
        match step(t, &mut pose, &mut map, &mut nav, &mut rng, &mut stats, &mut log) {
            Ok(true) => stats.steps += 1,
            Ok(false) => {
                stats.complete = true;
                break;
            }
            Err(e) => {
                stats.aborted = Some(format!("{}: {e}", e.kind()));
                break;
            }
        }
    }
    // Scored at file precision so a reloaded map reproduces the metrics.
    map.grid.quantize_f32();
    let metrics = compute_metrics(&map, fp)?;
    Ok(EpisodeOutput {
        map,
        log,
        stats,
        metrics,
    })
}

fn fmt_cell(c: Option<CellIndex>) -> String {
    c.map(|c| c.to_string()).unwrap_or_default()
}

pub const TRAJECTORY_HEADER: &str = "t,x,y,theta,action,g_t,l_t,refresh_reason,reported_x,reported_y,reported_theta";

pub fn write_trajectory<W: Write>(log: &[StepRecord], mut out: W) -> Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for r in log {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{},{},{},{},{:.6},{:.6},{:.6}",
            r.t,
            r.pose.x,
            r.pose.y,
            r.pose.theta,
            r.action,
            fmt_cell(r.global_goal),
            fmt_cell(r.local_goal),
            r.refresh.map(|x| x.as_str()).unwrap_or(""),
            r.reported.x,
            r.reported.y,
            r.reported.theta
        )?;
    }
    Ok(())
}

pub fn write_episode_metrics<W: Write>(fp: &Floorplan, out_ep: &EpisodeOutput, mut out: W) -> Result<()> {
    let labels: Vec<&str> = fp.labels.iter().collect();
    writeln!(
        out,
        "{},steps,complete,forward_violations,guard_events,collisions,fusion_fallbacks",
        MapMetrics::csv_header(&labels)
    )?;
    let s = &out_ep.stats;
    writeln!(
        out,
        "{},{},{},{},{},{},{}",
        out_ep.metrics.csv_row(),
        s.steps,
        s.complete as u8,
        s.forward_violations,
        s.guard_events,
        s.collisions,
        s.fusion_fallbacks
    )?;
    Ok(())
}

/// Writes `map.isrm`, `trajectory.csv`, `metrics.csv` and `config.txt` into `dir`.
pub fn write_episode_outputs(dir: &Path, fp: &Floorplan, cfg: &EpisodeConfig, ep: &EpisodeOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let create = |name: &str| -> Result<std::io::BufWriter<std::fs::File>> {
        Ok(std::io::BufWriter::new(std::fs::File::create(dir.join(name))?))
    };
    let mut f = create("map.isrm")?;
    write_map(&ep.map, &mut f)?;
    f.flush()?;
    let mut f = create("trajectory.csv")?;
    write_trajectory(&ep.log, &mut f)?;
    f.flush()?;
    let mut f = create("metrics.csv")?;
    write_episode_metrics(fp, ep, &mut f)?;
    f.flush()?;
    std::fs::write(dir.join("config.txt"), cfg.to_text())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::floorplan::{generate_floorplan, FloorplanConfig};

    fn one_room() -> Floorplan {
        generate_floorplan(&FloorplanConfig {
            width: 80,
            height: 80,
            min_room: 40,
            max_room: 80,
            ..FloorplanConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_steps() {
        let fp = one_room();
        let out = run_episode(&fp, &EpisodeConfig { max_steps: 0, ..EpisodeConfig::default() }).unwrap();
        assert!(out.log.is_empty());
        assert_eq!(out.map.grid.observed_count(), 0);
        assert!(out.metrics.mask_empty);
    }

    #[test]
    fn one_room_oracle_is_exact() {
        let fp = one_room();
        let out = run_episode(&fp, &EpisodeConfig { max_steps: 500, ..EpisodeConfig::default() }).unwrap();
        assert!(out.stats.aborted.is_none(), "{:?}", out.stats.aborted);
        assert_eq!(out.metrics.mask_acc, 1.0);
        assert!(out.metrics.explored_fraction > 0.5);
    }

    #[test]
    fn same_seed_same_everything() {
        let fp = generate_floorplan(&FloorplanConfig { seed: 2, ..FloorplanConfig::default() }).unwrap();
        let cfg = EpisodeConfig {
            max_steps: 150,
            noise: true,
            seed: 4,
            ..EpisodeConfig::default()
        };
        let a = run_episode(&fp, &cfg).unwrap();
        let b = run_episode(&fp, &cfg).unwrap();
        assert_eq!(a.map, b.map);
        assert_eq!(a.log, b.log);
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn kinematics_follow_the_true_pose() {
        let fp = generate_floorplan(&FloorplanConfig { seed: 6, ..FloorplanConfig::default() }).unwrap();
        let cfg = EpisodeConfig {
            max_steps: 200,
            noise: true,
            seed: 1,
            ..EpisodeConfig::default()
        };
        let out = run_episode(&fp, &cfg).unwrap();
        let mut differs = 0;
        for w in out.log.windows(2) {
            let expected = w[0].pose.apply(w[0].action);
            let stayed = w[1].pose == w[0].pose;
            assert!(w[1].pose == expected || (stayed && w[0].action == Action::Forward));
            if w[0].reported != w[0].pose {
                differs += 1;
            }
        }
        assert!(differs > out.log.len() / 2);
    }

    #[test]
    fn refresh_log_is_explained() {
        let fp = generate_floorplan(&FloorplanConfig { seed: 8, ..FloorplanConfig::default() }).unwrap();
        let cfg = EpisodeConfig { max_steps: 500, ..EpisodeConfig::default() };
        let out = run_episode(&fp, &cfg).unwrap();
        assert!(!out.stats.refresh_events.is_empty());
        for (t, ev) in &out.stats.refresh_events {
            assert!(ev.is_explained(cfg.nav.eta), "step {t}: {ev:?}");
        }
        assert!(out.stats.max_steps_since_global <= cfg.nav.eta);
        assert_eq!(out.stats.forward_violations, 0);
    }

    #[test]
    fn config_text_round_trip() {
        let cfg = EpisodeConfig {
            max_steps: 77,
            fusion: FusionRule::Bayesian,
            mode: ObservationMode::Repeated,
            noise: true,
            seed: 12,
            start: Some(Pose::new(1.0, 2.0, 0.5)),
            ..EpisodeConfig::default()
        };
        assert_eq!(EpisodeConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert!(EpisodeConfig::parse("bogus=1").is_err());
        assert!(EpisodeConfig::parse("max_steps").is_err());
    }

    #[test]
    fn start_in_wall_is_rejected() {
        let fp = one_room();
        let cfg = EpisodeConfig {
            start: Some(Pose::new(0.01, 0.01, 0.0)),
            ..EpisodeConfig::default()
        };
        assert!(matches!(run_episode(&fp, &cfg), Err(Error::PoseInObstacle { .. })));
    }
}
