//! Procedural multi-room floorplans built by binary space partitioning.
//!
//! Every leaf rectangle paints a one-cell wall border, so interior walls are
//! two cells thick. Each split opens one door across the wall it created.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{CellIndex, RegionLabelSet, CELL_SIZE};

/// Inclusive-exclusive cell rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub col0: usize,
    pub row0: usize,
    pub col1: usize,
    pub row1: usize,
}

impl Rect {
    pub fn width(&self) -> usize {
        self.col1 - self.col0
    }

    pub fn height(&self) -> usize {
        self.row1 - self.row0
    }

    pub fn contains(&self, col: usize, row: usize) -> bool {
        (self.col0..self.col1).contains(&col) && (self.row0..self.row1).contains(&row)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Room {
    pub label: usize,
    pub rect: Rect,
}

/// Opened wall cells joining two rooms.
#[derive(Debug, Clone, PartialEq)]
pub struct Door {
    pub cells: Vec<CellIndex>,
}

pub const NO_REGION: u16 = u16::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Floorplan {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub labels: RegionLabelSet,
    /// Row-major, `true` for walls.
    pub occupied: Vec<bool>,
    /// Row-major room label per cell, [`NO_REGION`] on walls.
    pub region: Vec<u16>,
    pub rooms: Vec<Room>,
    pub doors: Vec<Door>,
}

impl Floorplan {
    pub fn flat(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    pub fn in_bounds(&self, col: i64, row: i64) -> bool {
        col >= 0 && row >= 0 && (col as usize) < self.width && (row as usize) < self.height
    }

    /// Walls and everything outside the plan block.
    pub fn is_occupied(&self, col: i64, row: i64) -> bool {
        !self.in_bounds(col, row) || self.occupied[self.flat(col as usize, row as usize)]
    }

    pub fn is_free_at(&self, x: f64, y: f64) -> bool {
        let (c, r) = self.cell_of(x, y);
        !self.is_occupied(c, r)
    }

    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        ((x / self.cell_size).floor() as i64, (y / self.cell_size).floor() as i64)
    }

    /// Region label of a free cell.
    pub fn label(&self, col: usize, row: usize) -> Option<usize> {
        let v = self.region[self.flat(col, row)];
        (v != NO_REGION).then_some(v as usize)
    }

    pub fn label_at(&self, x: f64, y: f64) -> Option<usize> {
        let (c, r) = self.cell_of(x, y);
        if self.is_occupied(c, r) {
            None
        } else {
            self.label(c as usize, r as usize)
        }
    }

    pub fn free_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| !o).count()
    }

    pub fn distinct_labels(&self) -> usize {
        self.rooms.iter().map(|r| r.label).collect::<BTreeSet<_>>().len()
    }

    /// Free cells reachable from the first free cell through 4-connected free space.
    pub fn reachable_mask(&self) -> Vec<bool> {
        let mut seen = vec![false; self.occupied.len()];
        let Some(seed) = self.occupied.iter().position(|&o| !o) else {
            return seen;
        };
        seen[seed] = true;
        let mut stack = vec![seed];
        while let Some(f) = stack.pop() {
            let (c, r) = ((f % self.width) as i64, (f / self.width) as i64);
            for (dc, dr) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let (nc, nr) = (c + dc, r + dr);
                if !self.is_occupied(nc, nr) {
                    let n = self.flat(nc as usize, nr as usize);
                    if !seen[n] {
                        seen[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        seen
    }

    pub fn is_connected(&self) -> bool {
        let seen = self.reachable_mask();
        self.occupied.iter().zip(&seen).all(|(&o, &s)| o || s)
    }

    /// Minimum 8-neighborhood distance (in cells, Chebyshev) from a free cell
    /// to the nearest wall, capped at `cap`.
    pub fn wall_clearance(&self, col: usize, row: usize, cap: usize) -> usize {
        for r in 0..=cap as i64 {
            for dr in -r..=r {
                for dc in -r..=r {
                    if dr.abs().max(dc.abs()) == r && self.is_occupied(col as i64 + dc, row as i64 + dr) {
                        return r as usize;
                    }
                }
            }
        }
        cap
    }

    /// Writes the plain-text header followed by run-length encoded rows.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "ISRM-FLOORPLAN 1")?;
        writeln!(out, "width {}", self.width)?;
        writeln!(out, "height {}", self.height)?;
        writeln!(out, "cell_size {:?}", self.cell_size)?;
        let names: Vec<&str> = self.labels.iter().collect();
        writeln!(out, "labels {}", names.join("|"))?;
        writeln!(out, "rooms {}", self.rooms.len())?;
        for room in &self.rooms {
            let r = room.rect;
            writeln!(out, "{} {} {} {} {}", room.label, r.col0, r.row0, r.col1, r.row1)?;
        }
        writeln!(out, "doors {}", self.doors.len())?;
        for door in &self.doors {
            let cells: Vec<String> = door.cells.iter().map(|c| format!("{}:{}", c.col, c.row)).collect();
            writeln!(out, "{}", cells.join(" "))?;
        }
        writeln!(out, "grid")?;
        for row in 0..self.height {
            let mut runs = Vec::new();
            let mut col = 0;
            while col < self.width {
                let v = self.region[self.flat(col, row)];
                let start = col;
                while col < self.width && self.region[self.flat(col, row)] == v {
                    col += 1;
                }
                let sym = if v == NO_REGION { "#".to_string() } else { v.to_string() };
                runs.push(format!("{}x{}", col - start, sym));
            }
            writeln!(out, "{}", runs.join(" "))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let bad = |msg: String| Error::Format { what: "floorplan", msg };
        let mut lines = input.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| bad("unexpected end of file".into()))?
                .map_err(Error::from)
        };
        if next()?.trim() != "ISRM-FLOORPLAN 1" {
            return Err(bad("bad header".into()));
        }
        let field = |line: String, key: &str| -> Result<String> {
            line.strip_prefix(key)
                .map(|s| s.trim().to_string())
                .ok_or_else(|| bad(format!("expected {key}")))
        };
        let num = |s: String| -> Result<usize> { s.parse().map_err(|_| bad(format!("bad number {s:?}"))) };
        let width = num(field(next()?, "width")?)?;
        let height = num(field(next()?, "height")?)?;
        let cell_size: f64 = field(next()?, "cell_size")?
            .parse()
            .map_err(|_| bad("bad cell size".into()))?;
        let labels = RegionLabelSet::new(field(next()?, "labels")?.split('|').map(str::to_string))?;
        let nrooms = num(field(next()?, "rooms")?)?;
        let mut rooms = Vec::with_capacity(nrooms);
        for _ in 0..nrooms {
            let v: Vec<usize> = next()?
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad(format!("bad room field {t:?}"))))
                .collect::<Result<_>>()?;
            if v.len() != 5 {
                return Err(bad("room needs 5 fields".into()));
            }
            rooms.push(Room {
                label: v[0],
                rect: Rect {
                    col0: v[1],
                    row0: v[2],
                    col1: v[3],
                    row1: v[4],
                },
            });
        }
        let ndoors = num(field(next()?, "doors")?)?;
        let mut doors = Vec::with_capacity(ndoors);
        for _ in 0..ndoors {
            let cells = next()?
                .split_whitespace()
                .map(|t| {
                    let (c, r) = t.split_once(':').ok_or_else(|| bad(format!("bad door cell {t:?}")))?;
                    Ok(CellIndex::new(num(c.into())?, num(r.into())?))
                })
                .collect::<Result<_>>()?;
            doors.push(Door { cells });
        }
        if next()?.trim() != "grid" {
            return Err(bad("expected grid".into()));
        }
        let mut region = Vec::with_capacity(width * height);
        for row in 0..height {
            let line = next()?;
            let before = region.len();
            for run in line.split_whitespace() {
                let (n, sym) = run.split_once('x').ok_or_else(|| bad(format!("bad run {run:?}")))?;
                let v = if sym == "#" {
                    NO_REGION
                } else {
                    let l: u16 = sym.parse().map_err(|_| bad(format!("bad label {sym:?}")))?;
                    if l as usize >= labels.len() {
                        return Err(Error::LabelOutOfRange {
                            index: l as usize,
                            count: labels.len(),
                        });
                    }
                    l
                };
                region.extend(std::iter::repeat_n(v, num(n.into())?));
            }
            if region.len() - before != width {
                return Err(bad(format!("row {row} has {} cells", region.len() - before)));
            }
        }
        let occupied = region.iter().map(|&v| v == NO_REGION).collect();
        Ok(Self {
            width,
            height,
            cell_size,
            labels,
            occupied,
            region,
            rooms,
            doors,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloorplanConfig {
    /// Extent in cells.
    pub width: usize,
    pub height: usize,
    /// Room side bounds in cells, walls included.
    pub min_room: usize,
    pub max_room: usize,
    pub door_width: usize,
    pub labels: RegionLabelSet,
    /// Sampling weight per label.
    pub label_weights: Vec<f64>,
    pub min_rooms: usize,
    pub min_distinct_labels: usize,
    pub max_retries: usize,
    pub seed: u64,
}

impl Default for FloorplanConfig {
    fn default() -> Self {
        let labels = RegionLabelSet::default();
        let label_weights = vec![1.0; labels.len()];
        Self {
            width: 160,
            height: 160,
            min_room: 40,
            max_room: 70,
            door_width: 14,
            labels,
            label_weights,
            min_rooms: 1,
            min_distinct_labels: 1,
            max_retries: 100,
            seed: 0,
        }
    }
}

enum Split {
    /// Wall between columns `at - 1` and `at`, spanning rows of `span`.
    Vertical { at: usize, span: Rect },
    Horizontal { at: usize, span: Rect },
}

fn partition(rect: Rect, cfg: &FloorplanConfig, rng: &mut ChaCha8Rng, leaves: &mut Vec<Rect>, splits: &mut Vec<Split>) {
    let can_w = rect.width() > cfg.max_room && rect.width() >= 2 * cfg.min_room;
    let can_h = rect.height() > cfg.max_room && rect.height() >= 2 * cfg.min_room;
    let vertical = match (can_w, can_h) {
        (false, false) => {
            leaves.push(rect);
            return;
        }
        (true, false) => true,
        (false, true) => false,
        (true, true) => rect.width() >= rect.height(),
    };
    let len = if vertical { rect.width() } else { rect.height() };
    let off = rng.random_range(cfg.min_room..=len - cfg.min_room);
    let (a, b) = if vertical {
        let at = rect.col0 + off;
        splits.push(Split::Vertical { at, span: rect });
        (Rect { col1: at, ..rect }, Rect { col0: at, ..rect })
    } else {
        let at = rect.row0 + off;
        splits.push(Split::Horizontal { at, span: rect });
        (Rect { row1: at, ..rect }, Rect { row0: at, ..rect })
    };
    partition(a, cfg, rng, leaves, splits);
    partition(b, cfg, rng, leaves, splits);
}

fn try_generate(cfg: &FloorplanConfig, rng: &mut ChaCha8Rng) -> Option<Floorplan> {
    let (w, h) = (cfg.width, cfg.height);
    let mut leaves = Vec::new();
    let mut splits = Vec::new();
    partition(
        Rect {
            col0: 0,
            row0: 0,
            col1: w,
            row1: h,
        },
        cfg,
        rng,
        &mut leaves,
        &mut splits,
    );
    let weights = WeightedIndex::new(&cfg.label_weights).ok()?;
    let rooms: Vec<Room> = leaves
        .iter()
        .map(|&rect| Room {
            label: weights.sample(rng),
            rect,
        })
        .collect();
    let mut occupied = vec![false; w * h];
    let mut region = vec![NO_REGION; w * h];
    for room in &rooms {
        let r = room.rect;
        for row in r.row0..r.row1 {
            for col in r.col0..r.col1 {
                let border = row == r.row0 || row + 1 == r.row1 || col == r.col0 || col + 1 == r.col1;
                occupied[row * w + col] = border;
                if !border {
                    region[row * w + col] = room.label as u16;
                }
            }
        }
    }
    let room_at = |col: usize, row: usize| rooms.iter().find(|r| r.rect.contains(col, row)).map(|r| r.label);
    let free = |occ: &[bool], col: usize, row: usize| !occ[row * w + col];

    let walls = occupied.clone();
    let mut doors = Vec::new();
    for split in &splits {
        // Candidate door offsets where both wall cells face room interiors on
        // each side for the full door width.
        let (lo, hi, vertical, at) = match *split {
            Split::Vertical { at, span } => (span.row0, span.row1, true, at),
            Split::Horizontal { at, span } => (span.col0, span.col1, false, at),
        };
        let valid_at = |p: usize| -> bool {
            if vertical {
                at >= 2 && at + 1 < w && free(&walls, at - 2, p) && free(&walls, at + 1, p)
            } else {
                at >= 2 && at + 1 < h && free(&walls, p, at - 2) && free(&walls, p, at + 1)
            }
        };
        let candidates: Vec<usize> = (lo..hi.saturating_sub(cfg.door_width - 1))
            .filter(|&p| (p..p + cfg.door_width).all(valid_at))
            .collect();
        if candidates.is_empty() {
            return None;
        }
        let p = candidates[rng.random_range(0..candidates.len())];
        let mut cells = Vec::new();
        for q in p..p + cfg.door_width {
            let pair = if vertical { [(at - 1, q), (at, q)] } else { [(q, at - 1), (q, at)] };
            for (col, row) in pair {
                occupied[row * w + col] = false;
                region[row * w + col] = room_at(col, row)? as u16;
                cells.push(CellIndex::new(col, row));
            }
        }
        doors.push(Door { cells });
    }
    let fp = Floorplan {
        width: w,
        height: h,
        cell_size: CELL_SIZE,
        labels: cfg.labels.clone(),
        occupied,
        region,
        rooms,
        doors,
    };
    let ok = fp.rooms.len() >= cfg.min_rooms && fp.distinct_labels() >= cfg.min_distinct_labels && fp.is_connected();
    ok.then_some(fp)
}

/// Generates a connected floorplan, retrying with fresh draws until the room
/// and label constraints hold.
pub fn generate_floorplan(cfg: &FloorplanConfig) -> Result<Floorplan> {
    if cfg.min_room < 4 || cfg.max_room < cfg.min_room {
        return Err(Error::InfeasibleConfig(format!(
            "room bounds [{}, {}] need min >= 4 and max >= min",
            cfg.min_room, cfg.max_room
        )));
    }
    if cfg.width.max(cfg.height) < 2 * cfg.min_room {
        return Err(Error::InfeasibleConfig(format!(
            "extent {}x{} is below twice the minimum room size {}",
            cfg.width, cfg.height, cfg.min_room
        )));
    }
    if cfg.door_width == 0 || cfg.door_width + 4 > cfg.min_room {
        return Err(Error::InfeasibleConfig(format!(
            "door width {} does not fit rooms of {} cells",
            cfg.door_width, cfg.min_room
        )));
    }
    if cfg.label_weights.len() != cfg.labels.len() {
        return Err(Error::DimensionMismatch {
            expected: cfg.labels.len(),
            got: cfg.label_weights.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.max_retries.max(1) {
        if let Some(fp) = try_generate(cfg, &mut rng) {
            return Ok(fp);
        }
    }
    Err(Error::InfeasibleConfig(format!(
        "no valid floorplan after {} attempts",
        cfg.max_retries
    )))
}
