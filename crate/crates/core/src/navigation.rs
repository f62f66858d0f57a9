//! Hierarchical exploration: frontier global goals, an A* planner on the
//! fused occupancy, local goals sampled along the plan and a turn-then-go
//! controller.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::grid::{normalize_angle, Action, CellIndex, GlobalMap, Pose};

#[derive(Debug, Clone, PartialEq)]
pub struct NavConfig {
    /// Global goal refresh period, in steps.
    pub eta: usize,
    /// Obstacle inflation radius in cells.
    pub inflation_cells: usize,
    /// Local goals are sampled within this distance of the agent (m).
    pub local_radius: f64,
    /// A local goal closer than this is reached (m).
    pub reach_threshold: f64,
    /// Controller turns while the heading error exceeds this (rad).
    pub heading_tolerance: f64,
    /// Fused occupancy at or above this blocks a cell.
    pub occupied_threshold: f64,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            eta: 25,
            inflation_cells: 2,
            local_radius: 0.25,
            reach_threshold: 0.1,
            heading_tolerance: 5f64.to_radians(),
            occupied_threshold: 0.5,
        }
    }
}

fn is_occupied(map: &GlobalMap, flat: usize, threshold: f64) -> bool {
    map.grid.is_observed(flat) && map.grid.occupancy(flat) >= threshold
}

/// Observed free cells with an unobserved 4-neighbor.
pub fn frontier_mask(map: &GlobalMap, threshold: f64) -> Vec<bool> {
    let side = map.side();
    let grid = &map.grid;
    let mut mask = vec![false; grid.len()];
    for row in 0..side {
        for col in 0..side {
            let flat = row * side + col;
            if !grid.is_observed(flat) || grid.occupancy(flat) >= threshold {
                continue;
            }
            let unknown_neighbor = [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)]
                .iter()
                .any(|&(dc, dr)| {
                    let (c, r) = (col as i64 + dc, row as i64 + dr);
                    grid.contains(c, r) && !grid.is_observed(r as usize * side + c as usize)
                });
            mask[flat] = unknown_neighbor;
        }
    }
    mask
}

/// 8-connected frontier components, each sorted by `(row, col)`, listed in
/// order of their first cell.
pub fn frontier_components(map: &GlobalMap, threshold: f64) -> Vec<Vec<CellIndex>> {
    let side = map.side();
    let mut mask = frontier_mask(map, threshold);
    let mut components = Vec::new();
    for seed in 0..mask.len() {
        if !mask[seed] {
            continue;
        }
        mask[seed] = false;
        let mut stack = vec![seed];
        let mut cells = Vec::new();
        while let Some(flat) = stack.pop() {
            let (col, row) = ((flat % side) as i64, (flat / side) as i64);
            cells.push(CellIndex::new(col as usize, row as usize));
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (c, r) = (col + dc, row + dr);
                    if map.grid.contains(c, r) {
                        let n = r as usize * side + c as usize;
                        if mask[n] {
                            mask[n] = false;
                            stack.push(n);
                        }
                    }
                }
            }
        }
        cells.sort_by_key(|c| (c.row, c.col));
        components.push(cells);
    }
    components
}

/// Cell of `component` nearest to its centroid, ties to the lowest `(row, col)`.
pub fn centroid_cell(component: &[CellIndex]) -> CellIndex {
    let n = component.len() as f64;
    let cx = component.iter().map(|c| c.col as f64).sum::<f64>() / n;
    let cy = component.iter().map(|c| c.row as f64).sum::<f64>() / n;
    let mut best = component[0];
    let mut best_d = f64::INFINITY;
    for &c in component {
        let d = (c.col as f64 - cx).powi(2) + (c.row as f64 - cy).powi(2);
        if d < best_d || (d == best_d && (c.row, c.col) < (best.row, best.col)) {
            best = c;
            best_d = d;
        }
    }
    best
}

/// Goal on the largest frontier component not touching `excluded`.
pub fn select_global_goal(
    map: &GlobalMap,
    excluded: &BTreeSet<CellIndex>,
    threshold: f64,
) -> Result<CellIndex> {
    let mut best: Option<(usize, CellIndex)> = None;
    for comp in frontier_components(map, threshold) {
        if comp.iter().any(|c| excluded.contains(c)) {
            continue;
        }
        let goal = centroid_cell(&comp);
        let better = match best {
            None => true,
            Some((size, g)) => {
                comp.len() > size || (comp.len() == size && (goal.row, goal.col) < (g.row, g.col))
            }
        };
        if better {
            best = Some((comp.len(), goal));
        }
    }
    best.map(|(_, g)| g).ok_or(Error::ExplorationComplete)
}

/// Traversability grid: observed cells at or above the threshold, grown by
/// the inflation radius, are blocked. Unobserved cells are free.
pub fn blocked_mask(map: &GlobalMap, cfg: &NavConfig) -> Vec<bool> {
    let side = map.side();
    let mut blocked = vec![false; map.grid.len()];
    let r = cfg.inflation_cells as i64;
    let offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dr| (-r..=r).map(move |dc| (dc, dr)))
        .filter(|&(dc, dr)| dc * dc + dr * dr <= r * r)
        .collect();
    for flat in 0..map.grid.len() {
        if !is_occupied(map, flat, cfg.occupied_threshold) {
            continue;
        }
        let (col, row) = ((flat % side) as i64, (flat / side) as i64);
        for &(dc, dr) in &offsets {
            let (c, r) = (col + dc, row + dr);
            if map.grid.contains(c, r) {
                blocked[r as usize * side + c as usize] = true;
            }
        }
    }
    blocked
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Node {
    f: f64,
    g: f64,
    flat: usize,
}

impl Eq for Node {}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on f, then prefer larger g, then lower index.
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| self.g.total_cmp(&other.g))
            .then_with(|| other.flat.cmp(&self.flat))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const NEIGHBORS: [(i64, i64, f64); 8] = [
    (1, 0, 1.0),
    (-1, 0, 1.0),
    (0, 1, 1.0),
    (0, -1, 1.0),
    (1, 1, SQRT_2),
    (1, -1, SQRT_2),
    (-1, 1, SQRT_2),
    (-1, -1, SQRT_2),
];

fn octile(a: CellIndex, b: CellIndex) -> f64 {
    let dx = a.col.abs_diff(b.col) as f64;
    let dy = a.row.abs_diff(b.row) as f64;
    dx.max(dy) + (SQRT_2 - 1.0) * dx.min(dy)
}

/// Shortest 8-connected path on a traversability grid, start and goal
/// included. Diagonal steps may not cut blocked corners. Cost is in cells.
pub fn plan_on_mask(
    blocked: &[bool],
    side: usize,
    start: CellIndex,
    goal: CellIndex,
) -> Result<(Vec<CellIndex>, f64)> {
    let unreachable = Error::Unreachable {
        col: goal.col,
        row: goal.row,
    };
    if goal.col >= side || goal.row >= side || blocked[goal.row * side + goal.col] {
        return Err(unreachable);
    }
    let start_flat = start.row * side + start.col;
    let goal_flat = goal.row * side + goal.col;
    let mut cost = vec![f64::INFINITY; side * side];
    let mut parent = vec![usize::MAX; side * side];
    let mut closed = vec![false; side * side];
    let mut heap = BinaryHeap::new();
    cost[start_flat] = 0.0;
    heap.push(Node {
        f: octile(start, goal),
        g: 0.0,
        flat: start_flat,
    });
    let free = |c: i64, r: i64| -> bool {
        c >= 0 && r >= 0 && (c as usize) < side && (r as usize) < side && !blocked[r as usize * side + c as usize]
    };
    while let Some(Node { g, flat, .. }) = heap.pop() {
        if closed[flat] {
            continue;
        }
        closed[flat] = true;
        if flat == goal_flat {
            let mut path = vec![goal];
            let mut cur = flat;
            while cur != start_flat {
                cur = parent[cur];
                path.push(CellIndex::new(cur % side, cur / side));
            }
            path.reverse();
            return Ok((path, g));
        }
        let (col, row) = ((flat % side) as i64, (flat / side) as i64);
        for &(dc, dr, step) in &NEIGHBORS {
            let (c, r) = (col + dc, row + dr);
            if !free(c, r) {
                continue;
            }
            if dc != 0 && dr != 0 && (!free(col + dc, row) || !free(col, row + dr)) {
                continue;
            }
            let n = r as usize * side + c as usize;
            let ng = g + step;
            if ng < cost[n] {
                cost[n] = ng;
                parent[n] = flat;
                heap.push(Node {
                    f: ng + octile(CellIndex::new(c as usize, r as usize), goal),
                    g: ng,
                    flat: n,
                });
            }
        }
    }
    Err(unreachable)
}

/// Plans on the fused map. Inflated cells around the start are released so
/// an agent that drifted close to a wall can leave it.
pub fn plan(
    map: &GlobalMap,
    start: CellIndex,
    goal: CellIndex,
    cfg: &NavConfig,
) -> Result<Vec<CellIndex>> {
    let side = map.side();
    let mut blocked = blocked_mask(map, cfg);
    let start_flat = map.grid.flat(start);
    if blocked[start_flat] {
        let r = cfg.inflation_cells as i64;
        for dr in -r..=r {
            for dc in -r..=r {
                let (c, rr) = (start.col as i64 + dc, start.row as i64 + dr);
                if map.grid.contains(c, rr) {
                    let f = rr as usize * side + c as usize;
                    if !is_occupied(map, f, cfg.occupied_threshold) && f != map.grid.flat(goal) {
                        blocked[f] = false;
                    }
                }
            }
        }
        blocked[start_flat] = false;
    }
    plan_on_mask(&blocked, side, start, goal).map(|(p, _)| p)
}

/// Farthest path cell (by position along the path) within `radius` of the
/// agent; the first cell if none qualifies.
pub fn sample_local_goal(path: &[CellIndex], pose: &Pose, map: &GlobalMap, radius: f64) -> CellIndex {
    let mut chosen = path[0];
    for &cell in path {
        let (x, y) = map.cell_center(cell);
        if pose.distance_to(x, y) <= radius + 1e-9 {
            chosen = cell;
        }
    }
    chosen
}

/// Heading error towards a world point, in `[-π, π)`.
pub fn heading_error(pose: &Pose, x: f64, y: f64) -> f64 {
    normalize_angle((y - pose.y).atan2(x - pose.x) - pose.theta)
}

/// Turn towards the goal until within tolerance, then move forward.
pub fn local_step(pose: &Pose, goal: (f64, f64), tolerance: f64) -> Action {
    let err = heading_error(pose, goal.0, goal.1);
    if err.abs() > tolerance {
        if err > 0.0 {
            Action::TurnLeft
        } else {
            Action::TurnRight
        }
    } else {
        Action::Forward
    }
}

/// Why the goals were refreshed on a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefreshReason {
    /// No global goal yet.
    Initial,
    /// `steps_since_global` reached `eta`.
    GlobalPeriod,
    /// The global goal could not be planned to and was replaced.
    GlobalUnreachable,
    /// The local goal now lies in an occupied cell.
    LocalOccupied,
    /// The agent is within the reach threshold of the local goal.
    LocalReached,
}

impl RefreshReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RefreshReason::Initial => "initial",
            RefreshReason::GlobalPeriod => "global_period",
            RefreshReason::GlobalUnreachable => "global_unreachable",
            RefreshReason::LocalOccupied => "local_occupied",
            RefreshReason::LocalReached => "local_reached",
        }
    }

    pub fn refreshes_global(self) -> bool {
        matches!(
            self,
            RefreshReason::Initial | RefreshReason::GlobalPeriod | RefreshReason::GlobalUnreachable
        )
    }
}

/// Conditions observed at the start of [`update_goals`], kept for auditing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoalConditions {
    pub had_global: bool,
    pub steps_since_global: usize,
    pub local_occupied: bool,
    pub local_reached: bool,
    pub plan_failed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefreshEvent {
    pub reason: RefreshReason,
    pub conditions: GoalConditions,
}

impl RefreshEvent {
    /// Whether the recorded conditions justify the reason.
    pub fn is_explained(&self, eta: usize) -> bool {
        let c = &self.conditions;
        match self.reason {
            RefreshReason::Initial => !c.had_global,
            RefreshReason::GlobalPeriod => c.had_global && c.steps_since_global >= eta,
            RefreshReason::GlobalUnreachable => c.plan_failed,
            RefreshReason::LocalOccupied => c.local_occupied,
            RefreshReason::LocalReached => c.local_reached,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NavState {
    pub global_goal: Option<CellIndex>,
    pub local_goal: Option<CellIndex>,
    pub steps_since_global: usize,
    pub path: Vec<CellIndex>,
    /// Goals that failed to plan since the last periodic refresh.
    pub excluded: BTreeSet<CellIndex>,
}

impl NavState {
    pub fn new() -> Self {
        Self {
            global_goal: None,
            local_goal: None,
            steps_since_global: 0,
            path: Vec::new(),
            excluded: BTreeSet::new(),
        }
    }

    /// Counts one executed step.
    pub fn tick(&mut self) {
        self.steps_since_global += 1;
    }
}

impl Default for NavState {
    fn default() -> Self {
        Self::new()
    }
}

fn pick_global_and_plan(
    state: &mut NavState,
    map: &GlobalMap,
    start: CellIndex,
    cfg: &NavConfig,
) -> Result<bool> {
    let mut failed = false;
    loop {
        let goal = select_global_goal(map, &state.excluded, cfg.occupied_threshold)?;
        match plan(map, start, goal, cfg) {
            Ok(path) => {
                state.global_goal = Some(goal);
                state.path = path;
                state.steps_since_global = 0;
                return Ok(failed);
            }
            Err(Error::Unreachable { .. }) => {
                failed = true;
                state.excluded.insert(goal);
            }
            Err(e) => return Err(e),
        }
    }
}

/// Refreshes the global goal every `eta` steps and the local goal when the
/// global goal changed, the local goal became occupied, or it was reached.
/// Replans on every refresh. Returns the refresh event, if any.
pub fn update_goals(
    state: &mut NavState,
    map: &GlobalMap,
    pose: &Pose,
    cfg: &NavConfig,
) -> Result<Option<RefreshEvent>> {
    let start = map.world_to_cell(pose.x, pose.y)?;
    let local_occupied = state
        .local_goal
        .is_some_and(|g| is_occupied(map, map.grid.flat(g), cfg.occupied_threshold));
    let local_reached = state.local_goal.is_some_and(|g| {
        let (x, y) = map.cell_center(g);
        pose.distance_to(x, y) <= cfg.reach_threshold
    });
    let mut conditions = GoalConditions {
        had_global: state.global_goal.is_some(),
        steps_since_global: state.steps_since_global,
        local_occupied,
        local_reached,
        plan_failed: false,
    };

    let mut reason = if state.global_goal.is_none() {
        Some(RefreshReason::Initial)
    } else if state.steps_since_global >= cfg.eta {
        state.excluded.clear();
        Some(RefreshReason::GlobalPeriod)
    } else if local_occupied {
        Some(RefreshReason::LocalOccupied)
    } else if local_reached {
        Some(RefreshReason::LocalReached)
    } else {
        None
    };

    match reason {
        None => return Ok(None),
        Some(r) if r.refreshes_global() => {
            conditions.plan_failed = pick_global_and_plan(state, map, start, cfg)?;
        }
        Some(_) => {
            let goal = state.global_goal.expect("global goal set");
            match plan(map, start, goal, cfg) {
                Ok(path) => state.path = path,
                Err(Error::Unreachable { .. }) => {
                    conditions.plan_failed = true;
                    state.excluded.insert(goal);
                    pick_global_and_plan(state, map, start, cfg)?;
                    reason = Some(RefreshReason::GlobalUnreachable);
                }
                Err(e) => return Err(e),
            }
        }
    }
    state.local_goal = Some(sample_local_goal(&state.path, pose, map, cfg.local_radius));
    Ok(reason.map(|reason| RefreshEvent { reason, conditions }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{CategoricalCell, CELL_SIZE};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mark(map: &mut GlobalMap, col: usize, row: usize, occupancy: f64) {
        let flat = map.grid.flat(CellIndex::new(col, row));
        let mut region = vec![0.0; map.num_labels()];
        region[0] = 1.0;
        let cell = CategoricalCell {
            occupancy,
            explored: 1.0,
            region,
            obs_count: 1,
        };
        map.grid.set_cell(flat, &cell).unwrap();
    }

    fn explored_free(side: usize) -> GlobalMap {
        let mut map = GlobalMap::new(side, 1, CELL_SIZE, (0.0, 0.0));
        for row in 0..side {
            for col in 0..side {
                mark(&mut map, col, row, 0.0);
            }
        }
        map
    }

    fn unobserve(map: &mut GlobalMap, col: usize, row: usize) {
        let flat = map.grid.flat(CellIndex::new(col, row));
        map.grid.set_cell(flat, &CategoricalCell::unobserved(map.num_labels())).unwrap();
    }

    #[test]
    fn single_strip_frontier() {
        let mut map = explored_free(20);
        for col in 0..20 {
            unobserve(&mut map, col, 19);
        }
        let goal = select_global_goal(&map, &BTreeSet::new(), 0.5).unwrap();
        assert_eq!(goal.row, 18);
        assert!(frontier_mask(&map, 0.5)[map.grid.flat(goal)]);
    }

    #[test]
    fn fully_explored_map_is_complete() {
        let map = explored_free(10);
        assert!(matches!(
            select_global_goal(&map, &BTreeSet::new(), 0.5),
            Err(Error::ExplorationComplete)
        ));
    }

    /// Brute-force labeling by repeated relaxation over the frontier mask.
    fn oracle_components(mask: &[bool], side: usize) -> Vec<usize> {
        let mut label: Vec<usize> = (0..mask.len()).collect();
        loop {
            let mut changed = false;
            for f in 0..mask.len() {
                if !mask[f] {
                    continue;
                }
                let (c, r) = ((f % side) as i64, (f / side) as i64);
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        let (nc, nr) = (c + dc, r + dr);
                        if nc < 0 || nr < 0 || nc >= side as i64 || nr >= side as i64 {
                            continue;
                        }
                        let n = nr as usize * side + nc as usize;
                        if mask[n] && label[n] < label[f] {
                            label[f] = label[n];
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                return label;
            }
        }
    }

    #[test]
    fn largest_component_wins() {
        let side = 30;
        let mut map = explored_free(side);
        // Unknown pockets: a 10-cell frontier ring around a small hole needs care,
        // so use unknown strips along the left (long) and bottom-right (short) edges.
        for row in 5..15 {
            unobserve(&mut map, 0, row);
        }
        for col in 25..28 {
            unobserve(&mut map, col, 0);
        }
        let comps = frontier_components(&map, 0.5);
        let mask = frontier_mask(&map, 0.5);
        let labels = oracle_components(&mask, side);
        let distinct: BTreeSet<usize> = (0..mask.len()).filter(|&f| mask[f]).map(|f| labels[f]).collect();
        assert_eq!(comps.len(), distinct.len());
        let mut sizes: Vec<usize> = comps.iter().map(Vec::len).collect();
        sizes.sort();
        let mut oracle_sizes: Vec<usize> = distinct
            .iter()
            .map(|&l| (0..mask.len()).filter(|&f| mask[f] && labels[f] == l).count())
            .collect();
        oracle_sizes.sort();
        assert_eq!(sizes, oracle_sizes);
        assert_eq!(sizes, vec![5, 12]);
        let goal = select_global_goal(&map, &BTreeSet::new(), 0.5).unwrap();
        assert_eq!(goal.col, 1);
        assert!((5..15).contains(&goal.row));
    }

    #[test]
    fn straight_path_on_empty_grid() {
        let map = GlobalMap::new(20, 1, CELL_SIZE, (0.0, 0.0));
        let path = plan(&map, CellIndex::new(2, 5), CellIndex::new(12, 5), &NavConfig::default()).unwrap();
        assert_eq!(path.len(), 11);
        assert!(path.iter().all(|c| c.row == 5));
    }

    /// Dijkstra over the same move set, without heuristic or ordering tricks.
    fn dijkstra_cost(blocked: &[bool], side: usize, start: CellIndex, goal: CellIndex) -> Option<f64> {
        let mut dist = vec![f64::INFINITY; side * side];
        let mut done = vec![false; side * side];
        dist[start.row * side + start.col] = 0.0;
        loop {
            let mut best = None;
            for f in 0..dist.len() {
                if !done[f] && dist[f].is_finite() && best.is_none_or(|b: usize| dist[f] < dist[b]) {
                    best = Some(f);
                }
            }
            let f = best?;
            if f == goal.row * side + goal.col {
                return Some(dist[f]);
            }
            done[f] = true;
            let (c, r) = ((f % side) as i64, (f / side) as i64);
            let ok = |c: i64, r: i64| c >= 0 && r >= 0 && c < side as i64 && r < side as i64 && !blocked[r as usize * side + c as usize];
            for (dc, dr, w) in NEIGHBORS {
                if !ok(c + dc, r + dr) || (dc != 0 && dr != 0 && (!ok(c + dc, r) || !ok(c, r + dr))) {
                    continue;
                }
                let n = (r + dr) as usize * side + (c + dc) as usize;
                dist[n] = dist[n].min(dist[f] + w);
            }
        }
    }

    #[test]
    fn wall_with_gap() {
        let side = 30;
        let mut map = GlobalMap::new(side, 1, CELL_SIZE, (0.0, 0.0));
        for row in 0..side {
            if !(20..27).contains(&row) {
                mark(&mut map, 15, row, 1.0);
            }
        }
        let cfg = NavConfig::default();
        let (start, goal) = (CellIndex::new(5, 5), CellIndex::new(25, 5));
        let path = plan(&map, start, goal, &cfg).unwrap();
        assert!(path.iter().any(|c| c.col == 15 && (22..25).contains(&c.row)));
        let blocked = blocked_mask(&map, &cfg);
        let (_, cost) = plan_on_mask(&blocked, side, start, goal).unwrap();
        let oracle = dijkstra_cost(&blocked, side, start, goal).unwrap();
        assert!((cost - oracle).abs() < 1e-9);
        let walked: f64 = path
            .windows(2)
            .map(|w| if w[0].col != w[1].col && w[0].row != w[1].row { SQRT_2 } else { 1.0 })
            .sum();
        assert!((walked - oracle).abs() < 1e-9);
    }

    #[test]
    fn random_grids_match_dijkstra() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let side = 24;
        for _ in 0..30 {
            let blocked: Vec<bool> = (0..side * side).map(|_| rng.random_bool(0.25)).collect();
            let start = CellIndex::new(rng.random_range(0..side), rng.random_range(0..side));
            let goal = CellIndex::new(rng.random_range(0..side), rng.random_range(0..side));
            let mut blocked = blocked;
            blocked[start.row * side + start.col] = false;
            let got = plan_on_mask(&blocked, side, start, goal).ok().map(|(_, c)| c);
            let want = if blocked[goal.row * side + goal.col] {
                None
            } else {
                dijkstra_cost(&blocked, side, start, goal)
            };
            match (got, want) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9),
                (None, None) => {}
                other => panic!("mismatch {other:?}"),
            }
        }
    }

    #[test]
    fn goal_inside_inflation_is_unreachable() {
        let mut map = GlobalMap::new(20, 1, CELL_SIZE, (0.0, 0.0));
        mark(&mut map, 10, 10, 1.0);
        let err = plan(&map, CellIndex::new(2, 2), CellIndex::new(11, 10), &NavConfig::default());
        assert!(matches!(err, Err(Error::Unreachable { .. })));
    }

    #[test]
    fn local_goal_sampling() {
        let map = GlobalMap::new(40, 1, CELL_SIZE, (0.0, 0.0));
        let agent = CellIndex::new(5, 5);
        let (x, y) = map.cell_center(agent);
        let pose = Pose::new(x, y, 0.0);
        let path: Vec<CellIndex> = (6..20).map(|c| CellIndex::new(c, 5)).collect();
        // Cells 0.05 m apart: the fifth is exactly 0.25 m away.
        assert_eq!(sample_local_goal(&path, &pose, &map, 0.25), path[4]);
        assert_eq!(sample_local_goal(&path[..1], &pose, &map, 0.25), path[0]);
        let far = [CellIndex::new(30, 30), CellIndex::new(31, 31)];
        assert_eq!(sample_local_goal(&far, &pose, &map, 0.25), far[0]);
    }

    #[test]
    fn local_goal_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let map = GlobalMap::new(60, 1, CELL_SIZE, (0.0, 0.0));
        for _ in 0..200 {
            let mut cell = (30i64, 30i64);
            let path: Vec<CellIndex> = (0..rng.random_range(1..30))
                .map(|_| {
                    cell.0 = (cell.0 + rng.random_range(-1..=1)).clamp(0, 59);
                    cell.1 = (cell.1 + rng.random_range(-1..=1)).clamp(0, 59);
                    CellIndex::new(cell.0 as usize, cell.1 as usize)
                })
                .collect();
            let pose = Pose::new(1.5 + rng.random_range(-0.1..0.1), 1.5 + rng.random_range(-0.1..0.1), 0.0);
            let mut want = path[0];
            for (i, c) in path.iter().enumerate() {
                let (x, y) = (0.05 * (c.col as f64 + 0.5), 0.05 * (c.row as f64 + 0.5));
                if ((x - pose.x).powi(2) + (y - pose.y).powi(2)).sqrt() <= 0.25 + 1e-9 {
                    want = path[i];
                }
            }
            assert_eq!(sample_local_goal(&path, &pose, &map, 0.25), want);
        }
    }

    #[test]
    fn controller_actions() {
        let pose = Pose::new(0.0, 0.0, 0.0);
        let tol = 5f64.to_radians();
        assert_eq!(local_step(&pose, (1.0, 0.0), tol), Action::Forward);
        assert_eq!(local_step(&pose, (0.0, 1.0), tol), Action::TurnLeft);
        assert_eq!(local_step(&pose, (0.0, -1.0), tol), Action::TurnRight);
    }

    /// Distance from `p` to the segment `a`-`b`.
    fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
        ((a.0 + t * dx - p.0).powi(2) + (a.1 + t * dy - p.1).powi(2)).sqrt()
    }

    #[test]
    fn controller_reaches_goals_within_step_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let tol = 5f64.to_radians();
        for _ in 0..500 {
            let mut pose = Pose::new(0.0, 0.0, rng.random_range(-3.14..3.14));
            let (r, a): (f64, f64) = (rng.random_range(0.0..1.0), rng.random_range(-3.14..3.14));
            let goal = (r * a.cos(), r * a.sin());
            let dtheta = heading_error(&pose, goal.0, goal.1).abs();
            let dist = pose.distance_to(goal.0, goal.1);
            let bound = (dtheta / 10f64.to_radians()).ceil() as usize + (dist / 0.25).ceil() as usize + 4;
            let mut reached = dist <= 0.05;
            let mut steps = 0;
            while !reached && steps < bound {
                let action = local_step(&pose, goal, tol);
                let next = pose.apply(action);
                steps += 1;
                reached = segment_distance(goal, (pose.x, pose.y), (next.x, next.y)) <= 0.05;
                pose = next;
            }
            assert!(reached, "goal {goal:?} not reached within {bound} steps");
        }
    }

    #[test]
    fn period_refreshes_both_goals() {
        let mut map = explored_free(40);
        for col in 0..40 {
            unobserve(&mut map, col, 39);
        }
        let cfg = NavConfig::default();
        let pose = Pose::new(1.0, 0.5, 0.0);
        let mut state = NavState::new();
        let ev = update_goals(&mut state, &map, &pose, &cfg).unwrap().unwrap();
        assert_eq!(ev.reason, RefreshReason::Initial);
        let first_local = state.local_goal;
        for _ in 0..cfg.eta {
            state.tick();
        }
        let ev = update_goals(&mut state, &map, &pose, &cfg).unwrap().unwrap();
        assert_eq!(ev.reason, RefreshReason::GlobalPeriod);
        assert!(ev.is_explained(cfg.eta));
        assert_eq!(state.steps_since_global, 0);
        assert_eq!(state.local_goal, first_local);
    }

    #[test]
    fn occupied_local_goal_refreshes_only_local() {
        let mut map = explored_free(40);
        for col in 0..40 {
            unobserve(&mut map, col, 39);
        }
        let cfg = NavConfig::default();
        let pose = Pose::new(1.0, 0.5, 0.0);
        let mut state = NavState::new();
        update_goals(&mut state, &map, &pose, &cfg).unwrap();
        let global = state.global_goal;
        let local = state.local_goal.unwrap();
        state.tick();
        assert_eq!(update_goals(&mut state, &map, &pose, &cfg).unwrap(), None);
        mark(&mut map, local.col, local.row, 1.0);
        let ev = update_goals(&mut state, &map, &pose, &cfg).unwrap().unwrap();
        assert_eq!(ev.reason, RefreshReason::LocalOccupied);
        assert!(ev.is_explained(cfg.eta));
        assert_eq!(state.global_goal, global);
        assert_ne!(state.local_goal, Some(local));
    }
}
