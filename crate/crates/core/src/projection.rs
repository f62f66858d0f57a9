//! Depth scan to egocentric map.
//!
//! A scan is a single row of `W` depths. Ray `k` has bearing
//! `hfov * (k / (W - 1) - 1/2)` measured clockwise from straight ahead, so
//! ray 0 is the leftmost. Each ray is traced through the egocentric grid from
//! the agent cell to its endpoint; traced cells are visible and the endpoint
//! cell is an obstacle hit when the ray returned before `max_range`.

use std::io::{Read, Write};

use crate::classifier::ObservationDistribution;
use crate::error::{Error, Result};
use crate::grid::{CellIndex, EgocentricMap};

pub const DEFAULT_RAYS: usize = 224;
pub const DEFAULT_HFOV: f64 = 1.379;
pub const DEFAULT_MAX_RANGE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthScan {
    pub depths: Vec<f64>,
    pub hfov: f64,
    pub max_range: f64,
    pub min_range: f64,
}

impl DepthScan {
    /// Builds a scan, clipping every depth into `[min_range, max_range]`.
    pub fn new(depths: Vec<f64>, hfov: f64, max_range: f64, min_range: f64) -> Result<Self> {
        if depths.is_empty() {
            return Err(Error::Empty("depth scan"));
        }
        if !(hfov > 0.0 && hfov < std::f64::consts::PI) {
            return Err(Error::Config(format!("hfov {hfov} outside (0, π)")));
        }
        if !(min_range >= 0.0 && max_range > min_range) {
            return Err(Error::Config(format!(
                "invalid depth range [{min_range}, {max_range}]"
            )));
        }
        let depths = depths
            .into_iter()
            .map(|d| if d.is_nan() { max_range } else { d.clamp(min_range, max_range) })
            .collect();
        Ok(Self {
            depths,
            hfov,
            max_range,
            min_range,
        })
    }

    pub fn with_defaults(depths: Vec<f64>) -> Result<Self> {
        Self::new(depths, DEFAULT_HFOV, DEFAULT_MAX_RANGE, 0.0)
    }

    pub fn width(&self) -> usize {
        self.depths.len()
    }

    pub fn bearing(&self, k: usize) -> f64 {
        ray_bearing(k, self.width(), self.hfov)
    }

    /// Whether ray `k` returned from an obstacle inside the sensing range.
    pub fn is_hit(&self, k: usize) -> bool {
        let d = self.depths[k];
        d > self.min_range && d < self.max_range
    }

    /// Header `W u32, hfov f64, max_range f64, min_range f64`, then `W` f32 depths.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&(self.width() as u32).to_le_bytes())?;
        out.write_all(&self.hfov.to_le_bytes())?;
        out.write_all(&self.max_range.to_le_bytes())?;
        out.write_all(&self.min_range.to_le_bytes())?;
        for &d in &self.depths {
            out.write_all(&(d as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut head = [0u8; 28];
        input.read_exact(&mut head)?;
        let w = u32::from_le_bytes(head[..4].try_into().unwrap()) as usize;
        let hfov = f64::from_le_bytes(head[4..12].try_into().unwrap());
        let max_range = f64::from_le_bytes(head[12..20].try_into().unwrap());
        let min_range = f64::from_le_bytes(head[20..28].try_into().unwrap());
        let mut body = vec![0u8; w * 4];
        input.read_exact(&mut body)?;
        let depths = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::new(depths, hfov, max_range, min_range)
    }
}

/// Bearing of ray `k` out of `width`, clockwise from the heading.
pub fn ray_bearing(k: usize, width: usize, hfov: f64) -> f64 {
    if width <= 1 {
        0.0
    } else {
        hfov * (k as f64 / (width - 1) as f64 - 0.5)
    }
}

/// Ray endpoint in the agent frame (`x` right, `y` forward).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayPoint {
    pub x: f64,
    pub y: f64,
    pub hit: bool,
}

pub fn rays_to_points(scan: &DepthScan) -> Vec<RayPoint> {
    (0..scan.width())
        .map(|k| {
            let (s, c) = scan.bearing(k).sin_cos();
            let d = scan.depths[k];
            RayPoint {
                x: d * s,
                y: d * c,
                hit: scan.is_hit(k),
            }
        })
        .collect()
}

/// Visits the cells crossed by a segment starting at `start` (continuous cell
/// coordinates, cell `i` spans `[i, i + 1)`) along the unit direction `dir`
/// for `length` cell units. Stops at the first cell outside `[0, side)²` and
/// returns whether the segment ended inside the grid. The visit order only depends on `start` and `dir`, so a longer segment
/// always extends the cell sequence of a shorter one.
pub fn traverse_cells(
    start: (f64, f64),
    dir: (f64, f64),
    length: f64,
    side: usize,
    mut visit: impl FnMut(usize, usize),
) -> bool {
    let mut col = start.0.floor() as i64;
    let mut row = start.1.floor() as i64;
    let step_c: i64 = if dir.0 > 0.0 { 1 } else { -1 };
    let step_r: i64 = if dir.1 > 0.0 { 1 } else { -1 };
    let boundary = |pos: f64, cell: i64, step: i64| -> f64 {
        if step > 0 {
            (cell + 1) as f64 - pos
        } else {
            pos - cell as f64
        }
    };
    let (mut t_c, delta_c) = if dir.0 != 0.0 {
        (boundary(start.0, col, step_c) / dir.0.abs(), 1.0 / dir.0.abs())
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    let (mut t_r, delta_r) = if dir.1 != 0.0 {
        (boundary(start.1, row, step_r) / dir.1.abs(), 1.0 / dir.1.abs())
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    let side = side as i64;
    loop {
        if col < 0 || row < 0 || col >= side || row >= side {
            return false;
        }
        visit(col as usize, row as usize);
        let next = t_c.min(t_r);
        if next > length {
            return true;
        }
        if t_c <= t_r {
            col += step_c;
            t_c += delta_c;
        } else {
            row += step_r;
            t_r += delta_r;
        }
    }
}

/// Top-down footprint of one scan on an `L × L` egocentric grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TopDownProjection {
    pub side: usize,
    pub cell_size: f64,
    pub width: usize,
    pub visibility: Vec<bool>,
    pub obstacle_hits: Vec<bool>,
    /// `(flat cell, ray)` pairs, one per ray per traversed cell.
    pub sweeps: Vec<(u32, u32)>,
}

impl TopDownProjection {
    pub fn flat(&self, idx: CellIndex) -> usize {
        idx.row * self.side + idx.col
    }

    pub fn is_visible(&self, idx: CellIndex) -> bool {
        self.visibility[self.flat(idx)]
    }

    pub fn is_hit(&self, idx: CellIndex) -> bool {
        self.obstacle_hits[self.flat(idx)]
    }

    pub fn visible_count(&self) -> usize {
        self.visibility.iter().filter(|&&v| v).count()
    }
}

pub fn collapse_to_topdown(scan: &DepthScan, side: usize, cell_size: f64) -> TopDownProjection {
    let cells = side * side;
    let mut visibility = vec![false; cells];
    let mut obstacle_hits = vec![false; cells];
    let mut sweeps = Vec::new();
    let half = (side / 2) as f64;
    let start = (half + 0.5, 0.5);
    for k in 0..scan.width() {
        let (s, c) = scan.bearing(k).sin_cos();
        let length = scan.depths[k] / cell_size;
        let mut last = None;
        let reached_end = traverse_cells(start, (s, c), length, side, |col, row| {
            let flat = row * side + col;
            visibility[flat] = true;
            sweeps.push((flat as u32, k as u32));
            last = Some(flat);
        });
        if reached_end && scan.is_hit(k) {
            if let Some(flat) = last {
                obstacle_hits[flat] = true;
            }
        }
    }
    TopDownProjection {
        side,
        cell_size,
        width: scan.width(),
        visibility,
        obstacle_hits,
        sweeps,
    }
}

/// Paints the region distribution over the visible footprint. Cells swept by
/// several rays get the uniform average of those rays' distributions.
pub fn paint_egocentric(
    proj: &TopDownProjection,
    dist: &ObservationDistribution,
) -> Result<EgocentricMap> {
    let num_labels = match dist {
        ObservationDistribution::Repeated(d) => d.len(),
        ObservationDistribution::Spatial(rays) => {
            if rays.len() != proj.width {
                return Err(Error::ModeMismatch(format!(
                    "{} ray distributions for a scan of width {}",
                    rays.len(),
                    proj.width
                )));
            }
            rays.first().map_or(0, Vec::len)
        }
    };
    if num_labels == 0 {
        return Err(Error::Empty("region distribution"));
    }
    let mut map = EgocentricMap::new(proj.side, num_labels, proj.cell_size);
    let mut hits = vec![0u32; proj.visibility.len()];
    for &(flat, ray) in &proj.sweeps {
        let (flat, ray) = (flat as usize, ray as usize);
        let d = dist.for_ray(ray);
        if d.len() != num_labels {
            return Err(Error::DimensionMismatch {
                expected: num_labels,
                got: d.len(),
            });
        }
        let ch = map.grid.channels_mut(flat);
        for (acc, p) in ch[2..].iter_mut().zip(d) {
            *acc += p;
        }
        hits[flat] += 1;
    }
    for (flat, &n) in hits.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let occupied = proj.obstacle_hits[flat];
        let ch = map.grid.channels_mut(flat);
        ch[0] = if occupied { 1.0 } else { 0.0 };
        ch[1] = 1.0;
        let inv = 1.0 / n as f64;
        for v in &mut ch[2..] {
            *v *= inv;
        }
        map.grid.set_count(flat, 1);
    }
    Ok(map)
}
