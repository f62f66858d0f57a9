//! Map metrics against floorplan ground truth, PPM rendering and the
//! ablation grid.

use std::io::Write;

use rayon::prelude::*;

use crate::classifier::ObservationMode;
use crate::error::{Error, Result};
use crate::fusion::FusionRule;
use crate::grid::GlobalMap;
use crate::simulator::{run_episode, EpisodeConfig, Floorplan};

#[derive(Debug, Clone, PartialEq)]
pub struct MapMetrics {
    /// Accuracy over observed free cells; 0 when nothing was observed.
    pub mask_acc: f64,
    /// Accuracy over all free cells, unobserved cells counting as wrong.
    pub ovr_acc: f64,
    /// Mean IoU over classes present in the ground truth.
    pub mean_iou: f64,
    /// `None` for classes absent from both ground truth and prediction.
    pub per_class_iou: Vec<Option<f64>>,
    /// Fraction of free cells observed at least once.
    pub explored_fraction: f64,
    pub mask_empty: bool,
}

fn check_geometry(pred: &GlobalMap, gt: &Floorplan) -> Result<()> {
    let aligned = (pred.cell_size - gt.cell_size).abs() < 1e-12
        && pred.origin == (0.0, 0.0)
        && pred.side() >= gt.width
        && pred.side() >= gt.height;
    if !aligned {
        return Err(Error::GeometryMismatch(format!(
            "map of side {} at {:?} with cells of {} m does not cover a {}x{} plan with cells of {} m",
            pred.side(),
            pred.origin,
            pred.cell_size,
            gt.width,
            gt.height,
            gt.cell_size
        )));
    }
    if pred.num_labels() != gt.labels.len() {
        return Err(Error::DimensionMismatch {
            expected: gt.labels.len(),
            got: pred.num_labels(),
        });
    }
    Ok(())
}

pub fn compute_metrics(pred: &GlobalMap, gt: &Floorplan) -> Result<MapMetrics> {
    check_geometry(pred, gt)?;
    let c = gt.labels.len();
    let mut free = 0usize;
    let mut observed = 0usize;
    let mut correct = 0usize;
    let mut inter = vec![0usize; c];
    let mut union = vec![0usize; c];
    let mut gt_present = vec![false; c];
    for row in 0..gt.height {
        for col in 0..gt.width {
            let Some(truth) = gt.label(col, row) else {
                continue;
            };
            free += 1;
            gt_present[truth] = true;
            let flat = row * pred.side() + col;
            let guess = if pred.grid.is_observed(flat) {
                observed += 1;
                pred.grid.argmax(flat)
            } else {
                None
            };
            if guess == Some(truth) {
                correct += 1;
                inter[truth] += 1;
                union[truth] += 1;
            } else {
                union[truth] += 1;
                if let Some(g) = guess {
                    union[g] += 1;
                }
            }
        }
    }
    let per_class_iou: Vec<Option<f64>> = (0..c)
        .map(|k| (union[k] > 0).then(|| inter[k] as f64 / union[k] as f64))
        .collect();
    let present: Vec<f64> = (0..c).filter(|&k| gt_present[k]).filter_map(|k| per_class_iou[k]).collect();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(MapMetrics {
        mask_acc: ratio(correct, observed),
        ovr_acc: ratio(correct, free),
        mean_iou: if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 },
        per_class_iou,
        explored_fraction: ratio(observed, free),
        mask_empty: observed == 0,
    })
}

impl MapMetrics {
    pub fn csv_header(labels: &[&str]) -> String {
        let mut cols = vec![
            "mask_acc".to_string(),
            "ovr_acc".into(),
            "mean_iou".into(),
            "explored_fraction".into(),
            "mask_empty".into(),
        ];
        cols.extend(labels.iter().map(|l| format!("iou_{}", l.replace(' ', "_"))));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            format!("{:.6}", self.mask_acc),
            format!("{:.6}", self.ovr_acc),
            format!("{:.6}", self.mean_iou),
            format!("{:.6}", self.explored_fraction),
            (self.mask_empty as u8).to_string(),
        ];
        cols.extend(self.per_class_iou.iter().map(|v| v.map(|x| format!("{x:.6}")).unwrap_or_default()));
        cols.join(",")
    }
}

/// Label colors in label order. Unobserved cells render white, obstacles black.
pub const DEFAULT_PALETTE: [[u8; 3]; 14] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
    [174, 199, 232],
    [255, 187, 120],
    [152, 223, 138],
    [255, 152, 150],
];

pub const UNOBSERVED_COLOR: [u8; 3] = [255, 255, 255];
pub const OBSTACLE_COLOR: [u8; 3] = [0, 0, 0];

#[derive(Debug, Clone, PartialEq)]
pub struct Palette {
    pub colors: Vec<[u8; 3]>,
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            colors: DEFAULT_PALETTE.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pixel {
    Unobserved,
    Obstacle,
    Label(usize),
}

impl Palette {
    pub fn new(colors: Vec<[u8; 3]>) -> Result<Self> {
        for (i, c) in colors.iter().enumerate() {
            if *c == UNOBSERVED_COLOR || *c == OBSTACLE_COLOR || colors[..i].contains(c) {
                return Err(Error::Config(format!("palette color {i} is reserved or repeated")));
            }
        }
        Ok(Self { colors })
    }

    /// Inverse palette lookup.
    pub fn decode(&self, rgb: [u8; 3]) -> Option<Pixel> {
        match rgb {
            UNOBSERVED_COLOR => Some(Pixel::Unobserved),
            OBSTACLE_COLOR => Some(Pixel::Obstacle),
            _ => self.colors.iter().position(|&c| c == rgb).map(Pixel::Label),
        }
    }
}

/// What a cell renders as.
pub fn classify_cell(map: &GlobalMap, flat: usize) -> Pixel {
    if !map.grid.is_observed(flat) {
        Pixel::Unobserved
    } else if map.grid.occupancy(flat) >= 0.5 {
        Pixel::Obstacle
    } else {
        map.grid.argmax(flat).map_or(Pixel::Unobserved, Pixel::Label)
    }
}

/// Binary PPM, one pixel per cell, map row 0 at the bottom of the image.
pub fn render_map<W: Write>(map: &GlobalMap, palette: &Palette, mut out: W) -> Result<()> {
    if palette.colors.len() < map.num_labels() {
        return Err(Error::Config(format!(
            "palette has {} colors for {} labels",
            palette.colors.len(),
            map.num_labels()
        )));
    }
    let side = map.side();
    write!(out, "P6\n{side} {side}\n255\n")?;
    let mut buf = Vec::with_capacity(side * side * 3);
    for row in (0..side).rev() {
        for col in 0..side {
            let rgb = match classify_cell(map, row * side + col) {
                Pixel::Unobserved => UNOBSERVED_COLOR,
                Pixel::Obstacle => OBSTACLE_COLOR,
                Pixel::Label(k) => palette.colors[k],
            };
            buf.extend_from_slice(&rgb);
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Parses a binary PPM produced by [`render_map`] into rows of pixels, top row first.
pub fn read_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<[u8; 3]>)> {
    let bad = |msg: &str| Error::Format {
        what: "ppm",
        msg: msg.to_string(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("bad header"))?.to_string());
    }
    pos += 1;
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(bad("not an 8-bit P6 image"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let data = bytes.get(pos..pos + w * h * 3).ok_or_else(|| bad("truncated pixels"))?;
    Ok((w, h, data.chunks(3).map(|p| [p[0], p[1], p[2]]).collect()))
}

/// One cell of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationSetting {
    pub fusion: FusionRule,
    pub mode: ObservationMode,
    pub noise: bool,
}

impl AblationSetting {
    /// Fusion rule × observation mode × noise.
    pub fn full_grid() -> Vec<AblationSetting> {
        let mut out = Vec::new();
        for fusion in [FusionRule::MovingAverage, FusionRule::Bayesian] {
            for mode in [ObservationMode::Spatial, ObservationMode::Repeated] {
                for noise in [false, true] {
                    out.push(AblationSetting { fusion, mode, noise });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub setting: AblationSetting,
    pub episodes: usize,
    pub mask_acc: f64,
    pub ovr_acc: f64,
    pub mean_iou: f64,
    pub explored_fraction: f64,
    pub aborted: usize,
}

pub const ABLATION_HEADER: &str = "fusion,mode,noise,episodes,mask_acc,ovr_acc,mean_iou,explored_fraction,aborted";

impl AblationRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{}",
            self.setting.fusion.as_str(),
            self.setting.mode.as_str(),
            if self.setting.noise { "on" } else { "off" },
            self.episodes,
            self.mask_acc,
            self.ovr_acc,
            self.mean_iou,
            self.explored_fraction,
            self.aborted
        )
    }
}

/// Runs every setting on every floorplan in parallel. Per-episode metrics are
/// averaged per setting; episode seeds depend only on the floorplan index.
pub fn run_ablation(
    floorplans: &[Floorplan],
    base: &EpisodeConfig,
    settings: &[AblationSetting],
) -> Result<Vec<AblationRow>> {
    let jobs: Vec<(usize, usize)> = (0..settings.len())
        .flat_map(|s| (0..floorplans.len()).map(move |f| (s, f)))
        .collect();
    let results: Vec<Result<(usize, MapMetrics, bool)>> = jobs
        .par_iter()
        .map(|&(s, f)| {
            let setting = settings[s];
            let cfg = EpisodeConfig {
                fusion: setting.fusion,
                mode: setting.mode,
                noise: setting.noise,
                seed: base.seed.wrapping_add(f as u64),
                ..base.clone()
            };
            let out = run_episode(&floorplans[f], &cfg)?;
            Ok((s, out.metrics, out.stats.aborted.is_some()))
        })
        .collect();
    let mut rows: Vec<AblationRow> = settings
        .iter()
        .map(|&setting| AblationRow {
            setting,
            episodes: 0,
            mask_acc: 0.0,
            ovr_acc: 0.0,
            mean_iou: 0.0,
            explored_fraction: 0.0,
            aborted: 0,
        })
        .collect();
    for r in results {
        let (s, m, aborted) = r?;
        let row = &mut rows[s];
        row.episodes += 1;
        row.mask_acc += m.mask_acc;
        row.ovr_acc += m.ovr_acc;
        row.mean_iou += m.mean_iou;
        row.explored_fraction += m.explored_fraction;
        row.aborted += aborted as usize;
    }
    for row in &mut rows {
        let n = row.episodes.max(1) as f64;
        row.mask_acc /= n;
        row.ovr_acc /= n;
        row.mean_iou /= n;
        row.explored_fraction /= n;
    }
    Ok(rows)
}
