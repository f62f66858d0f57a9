//! Spatial data model shared by every stage of the mapper.
//!
//! World frame: `x` to the right, `y` up, headings measured counter-clockwise
//! from `+x`. Grid indices are `(col, row)` with `col` along `x` and `row`
//! along `y`; storage is row-major.
//!
//! Egocentric maps put the agent at the center of row 0 and look towards
//! increasing rows. A local cell `(row, col)` has its center at
//! `((col - L/2) * cell_size, row * cell_size)` in the agent frame, where the
//! agent frame has `x` to the right of the heading and `y` straight ahead.

mod io;

pub use io::{read_map, read_map_text, write_map, write_map_text, MAP_MAGIC, MAP_VERSION};

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Metric side of one grid cell (5 cm).
pub const CELL_SIZE: f64 = 0.05;
/// Default egocentric map side, in cells.
pub const EGO_SIDE: usize = 101;
/// Default global map side, in cells.
pub const GLOBAL_SIDE: usize = 2001;
/// Distance covered by one `Forward` action.
pub const FORWARD_STEP: f64 = 0.25;
/// Rotation applied by one turn action, in degrees.
pub const TURN_STEP_DEG: f64 = 10.0;

/// The fourteen filtered region labels, in canonical order.
pub const DEFAULT_LABELS: [&str; 14] = [
    "bathroom",
    "bedroom",
    "closet",
    "dining room",
    "garage",
    "gym",
    "hallway",
    "kitchen",
    "library",
    "living room",
    "office",
    "other room",
    "outdoor",
    "stairs",
];

/// Ordered set of region label names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionLabelSet {
    labels: Vec<String>,
}

impl RegionLabelSet {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::InvalidLabels("label set is empty".into()));
        }
        for (i, label) in labels.iter().enumerate() {
            if label.is_empty() {
                return Err(Error::InvalidLabels(format!("label {i} is empty")));
            }
            if labels[..i].contains(label) {
                return Err(Error::InvalidLabels(format!("duplicate label {label:?}")));
            }
        }
        Ok(Self { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(String::as_str)
    }
}

impl Default for RegionLabelSet {
    fn default() -> Self {
        Self {
            labels: DEFAULT_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2π for tiny negative inputs.
    if wrapped >= PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Discrete agent action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Forward, Action::TurnLeft, Action::TurnRight];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Forward => "forward",
            Action::TurnLeft => "turn_left",
            Action::TurnRight => "turn_right",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Action::Forward),
            "turn_left" => Ok(Action::TurnLeft),
            "turn_right" => Ok(Action::TurnRight),
            other => Err(Error::Config(format!("unknown action {other:?}"))),
        }
    }
}

/// Planar agent pose. `theta` is kept in `[-π, π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    /// Pose reached by executing `action` with ideal kinematics.
    pub fn apply(&self, action: Action) -> Pose {
        let turn = TURN_STEP_DEG.to_radians();
        match action {
            Action::Forward => Pose::new(
                self.x + FORWARD_STEP * self.theta.cos(),
                self.y + FORWARD_STEP * self.theta.sin(),
                self.theta,
            ),
            Action::TurnLeft => Pose::new(self.x, self.y, self.theta + turn),
            Action::TurnRight => Pose::new(self.x, self.y, self.theta - turn),
        }
    }

    pub fn apply_all(&self, actions: &[Action]) -> Pose {
        actions.iter().fold(*self, |p, &a| p.apply(a))
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        (x - self.x).hypot(y - self.y)
    }

    /// Expresses a world point in the agent frame (`x` right, `y` forward).
    pub fn world_to_agent(&self, wx: f64, wy: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let dx = wx - self.x;
        let dy = wy - self.y;
        (dx * s - dy * c, dx * c + dy * s)
    }

    /// Inverse of [`Pose::world_to_agent`].
    pub fn agent_to_world(&self, ax: f64, ay: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (self.x + ax * s + ay * c, self.y - ax * c + ay * s)
    }
}

/// Index of a grid cell: `col` runs along world `x`, `row` along world `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellIndex {
    pub col: usize,
    pub row: usize,
}

impl CellIndex {
    pub fn new(col: usize, row: usize) -> Self {
        Self { col, row }
    }
}

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.col, self.row)
    }
}

/// Owned copy of one map cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalCell {
    pub occupancy: f64,
    pub explored: f64,
    pub region: Vec<f64>,
    pub obs_count: u32,
}

impl CategoricalCell {
    pub fn unobserved(num_labels: usize) -> Self {
        Self {
            occupancy: 0.0,
            explored: 0.0,
            region: vec![0.0; num_labels],
            obs_count: 0,
        }
    }

    pub fn is_observed(&self) -> bool {
        self.obs_count > 0
    }

    pub fn argmax(&self) -> Option<usize> {
        argmax_region(&self.region)
    }

    /// Checks the cell invariants, returning a description of the first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        validate_parts(self.occupancy, self.explored, &self.region, self.obs_count)
    }
}

/// Tolerance on region normalization.
pub const NORMALIZATION_TOL: f64 = 1e-6;

fn validate_parts(
    occupancy: f64,
    explored: f64,
    region: &[f64],
    obs_count: u32,
) -> std::result::Result<(), String> {
    if !(0.0..=1.0).contains(&occupancy) {
        return Err(format!("occupancy {occupancy} outside [0, 1]"));
    }
    if !(0.0..=1.0).contains(&explored) {
        return Err(format!("explored {explored} outside [0, 1]"));
    }
    if let Some(v) = region.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(format!("region entry {v} outside [0, 1]"));
    }
    let sum: f64 = region.iter().sum();
    let all_zero = region.iter().all(|&v| v == 0.0);
    if !all_zero && (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(format!("region sums to {sum}"));
    }
    let unobserved = obs_count == 0;
    if unobserved != (explored == 0.0) || unobserved != all_zero {
        return Err(format!(
            "observation markers disagree: obs_count={obs_count} explored={explored} region_all_zero={all_zero}"
        ));
    }
    Ok(())
}

/// Index of the most probable label, ties going to the lowest index.
/// Returns `None` for an all-zero (never observed) vector.
pub fn argmax_region(region: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &p) in region.iter().enumerate() {
        if p > 0.0 && best.is_none_or(|(_, b)| p > b) {
            best = Some((i, p));
        }
    }
    best.map(|(i, _)| i)
}

/// Square grid of categorical cells stored as interleaved channels
/// `[occupancy, explored, region_0 .. region_{C-1}]` plus an observation count.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    side: usize,
    num_labels: usize,
    data: Vec<f64>,
    counts: Vec<u32>,
}

impl CellGrid {
    pub fn new(side: usize, num_labels: usize) -> Self {
        let cells = side * side;
        Self {
            side,
            num_labels,
            data: vec![0.0; cells * (2 + num_labels)],
            counts: vec![0; cells],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    fn stride(&self) -> usize {
        2 + self.num_labels
    }

    pub fn flat(&self, idx: CellIndex) -> usize {
        idx.row * self.side + idx.col
    }

    pub fn unflat(&self, flat: usize) -> CellIndex {
        CellIndex::new(flat % self.side, flat / self.side)
    }

    pub fn contains(&self, col: i64, row: i64) -> bool {
        col >= 0 && row >= 0 && (col as usize) < self.side && (row as usize) < self.side
    }

    pub fn occupancy(&self, flat: usize) -> f64 {
        self.data[flat * self.stride()]
    }

    pub fn explored(&self, flat: usize) -> f64 {
        self.data[flat * self.stride() + 1]
    }

    pub fn obs_count(&self, flat: usize) -> u32 {
        self.counts[flat]
    }

    pub fn is_observed(&self, flat: usize) -> bool {
        self.counts[flat] > 0
    }

    pub fn region(&self, flat: usize) -> &[f64] {
        let s = self.stride();
        &self.data[flat * s + 2..(flat + 1) * s]
    }

    pub fn argmax(&self, flat: usize) -> Option<usize> {
        argmax_region(self.region(flat))
    }

    pub fn cell(&self, flat: usize) -> CategoricalCell {
        CategoricalCell {
            occupancy: self.occupancy(flat),
            explored: self.explored(flat),
            region: self.region(flat).to_vec(),
            obs_count: self.counts[flat],
        }
    }

    /// Channel slice of one cell: `[occupancy, explored, region..]`.
    pub(crate) fn channels_mut(&mut self, flat: usize) -> &mut [f64] {
        let s = self.stride();
        &mut self.data[flat * s..(flat + 1) * s]
    }

    pub(crate) fn channels(&self, flat: usize) -> &[f64] {
        let s = self.stride();
        &self.data[flat * s..(flat + 1) * s]
    }

    pub(crate) fn set_count(&mut self, flat: usize, count: u32) {
        self.counts[flat] = count;
    }

    pub fn set_cell(&mut self, flat: usize, cell: &CategoricalCell) -> Result<()> {
        if cell.region.len() != self.num_labels {
            return Err(Error::DimensionMismatch {
                expected: self.num_labels,
                got: cell.region.len(),
            });
        }
        let ch = self.channels_mut(flat);
        ch[0] = cell.occupancy;
        ch[1] = cell.explored;
        ch[2..].copy_from_slice(&cell.region);
        self.counts[flat] = cell.obs_count;
        Ok(())
    }

    /// Number of cells with at least one observation.
    pub fn observed_count(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Sweeps every cell and reports the first invariant violation.
    pub fn validate(&self) -> Result<()> {
        for flat in 0..self.len() {
            validate_parts(
                self.occupancy(flat),
                self.explored(flat),
                self.region(flat),
                self.counts[flat],
            )
            .map_err(|msg| {
                let idx = self.unflat(flat);
                Error::Format {
                    what: "cell",
                    msg: format!("cell {idx}: {msg}"),
                }
            })?;
        }
        Ok(())
    }
}

/// Agent-centered map of the current observation.
#[derive(Debug, Clone, PartialEq)]
pub struct EgocentricMap {
    pub grid: CellGrid,
    pub cell_size: f64,
}

impl EgocentricMap {
    pub fn new(side: usize, num_labels: usize, cell_size: f64) -> Self {
        assert!(side % 2 == 1, "egocentric map side must be odd");
        Self {
            grid: CellGrid::new(side, num_labels),
            cell_size,
        }
    }

    pub fn side(&self) -> usize {
        self.grid.side()
    }

    /// Cell holding the agent: center of the bottom row.
    pub fn anchor(&self) -> CellIndex {
        CellIndex::new(self.side() / 2, 0)
    }

    /// Agent-frame coordinates of a cell center.
    pub fn cell_center(&self, idx: CellIndex) -> (f64, f64) {
        let half = (self.side() / 2) as f64;
        (
            (idx.col as f64 - half) * self.cell_size,
            idx.row as f64 * self.cell_size,
        )
    }

    /// Local cell containing an agent-frame point, if inside the map.
    pub fn locate(&self, ax: f64, ay: f64) -> Option<CellIndex> {
        let half = (self.side() / 2) as f64;
        let col = (ax / self.cell_size + half + 0.5).floor();
        let row = (ay / self.cell_size + 0.5).floor();
        if col < 0.0 || row < 0.0 {
            return None;
        }
        let (col, row) = (col as usize, row as usize);
        (col < self.side() && row < self.side()).then_some(CellIndex::new(col, row))
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()
    }
}

/// World-anchored accumulated map.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMap {
    pub grid: CellGrid,
    pub cell_size: f64,
    /// World coordinates of the lower-left corner of cell `(0, 0)`.
    pub origin: (f64, f64),
}

impl GlobalMap {
    pub fn new(side: usize, num_labels: usize, cell_size: f64, origin: (f64, f64)) -> Self {
        Self {
            grid: CellGrid::new(side, num_labels),
            cell_size,
            origin,
        }
    }

    pub fn side(&self) -> usize {
        self.grid.side()
    }

    pub fn num_labels(&self) -> usize {
        self.grid.num_labels()
    }

    /// Cell containing a world point.
    pub fn world_to_cell(&self, x: f64, y: f64) -> Result<CellIndex> {
        let col = ((x - self.origin.0) / self.cell_size).floor();
        let row = ((y - self.origin.1) / self.cell_size).floor();
        if !col.is_finite() || !row.is_finite() || !self.grid.contains(col as i64, row as i64) {
            return Err(Error::OutOfBounds { x, y });
        }
        Ok(CellIndex::new(col as usize, row as usize))
    }

    /// World coordinates of a cell center.
    pub fn cell_center(&self, idx: CellIndex) -> (f64, f64) {
        (
            self.origin.0 + (idx.col as f64 + 0.5) * self.cell_size,
            self.origin.1 + (idx.row as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn cell(&self, idx: CellIndex) -> CategoricalCell {
        self.grid.cell(self.grid.flat(idx))
    }

    /// Fraction of all cells observed at least once.
    pub fn explored_fraction(&self) -> f64 {
        self.grid.observed_count() as f64 / self.grid.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()
    }
}
