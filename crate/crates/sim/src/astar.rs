//! Grid path planning: A* with an exact Dijkstra reference.
//!
//! Costs are measured in *cell-traversal units*: entering any traversable
//! cell costs one unit, and entering a door cell costs one unit plus the
//! door penalty. A unit corresponds to `resolution / speed` seconds of
//! travel, so callers convert door dwell time into units before planning.
//!
//! Internally costs are quantized to integer milli-units. That keeps the
//! arithmetic exact, which lets tests demand bit-equal agreement between A*
//! and the Dijkstra reference instead of comparing within a tolerance.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::map::{Cell, GridMap, GridPos};

/// Milli-units per unit; all integer costs below are in milli-units.
const MILLI: u64 = 1000;

/// A planned route. `steps` lists the cells after the start, in order,
/// ending at the goal; planning from a cell to itself yields no steps.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPath {
    pub steps: Vec<GridPos>,
    /// Total cost in cell-traversal units.
    pub cost_units: f64,
    /// How many door cells the route enters.
    pub doors_crossed: usize,
}

impl PlannedPath {
    /// Number of cell transitions on the route.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn entry_cost_milli(map: &GridMap, pos: GridPos, door_penalty_milli: u64) -> u64 {
    match map.cell(pos) {
        Cell::Door => MILLI + door_penalty_milli,
        _ => MILLI,
    }
}

fn penalty_to_milli(door_penalty_units: f64) -> u64 {
    assert!(
        door_penalty_units.is_finite() && door_penalty_units >= 0.0,
        "door penalty must be a finite non-negative number of units, got {door_penalty_units}"
    );
    (door_penalty_units * MILLI as f64).round() as u64
}

/// Shortest route from `start` to `goal`, or `None` when the goal cannot be
/// reached (including when either endpoint sits on an obstacle).
///
/// Expansion is deterministic: the frontier is ordered by total estimate
/// `f`, then by remaining-distance estimate `h`, then by insertion order,
/// and neighbors are generated down, up, right, left. Two runs on the same
/// map always return the same route.
pub fn astar(
    map: &GridMap,
    start: GridPos,
    goal: GridPos,
    door_penalty_units: f64,
) -> Option<PlannedPath> {
    if !map.traversable(start) || !map.traversable(goal) {
        return None;
    }
    if start == goal {
        return Some(PlannedPath { steps: Vec::new(), cost_units: 0.0, doors_crossed: 0 });
    }
    let door_penalty_milli = penalty_to_milli(door_penalty_units);
    let n = map.width() * map.height();
    let idx = |p: GridPos| p.row * map.width() + p.col;
    // Manhattan distance in milli-units; admissible because every move
    // costs at least one unit.
    let h = |p: GridPos| (p.manhattan(&goal) as u64) * MILLI;

    let mut dist = vec![u64::MAX; n];
    let mut parent: Vec<Option<GridPos>> = vec![None; n];
    // Keyed (f, h, insertion sequence); Reverse turns BinaryHeap into a
    // min-heap over that lexicographic order.
    let mut heap: BinaryHeap<Reverse<(u64, u64, u64, GridPos)>> = BinaryHeap::new();
    let mut seq = 0u64;

    dist[idx(start)] = 0;
    heap.push(Reverse((h(start), h(start), seq, start)));

    while let Some(Reverse((_, _, _, pos))) = heap.pop() {
        if pos == goal {
            return Some(reconstruct(map, &parent, start, goal, &dist, idx));
        }
        let g = dist[idx(pos)];
        for next in map.neighbors(pos) {
            if !map.traversable(next) {
                continue;
            }
            let next_idx = idx(next);
            let candidate = g + entry_cost_milli(map, next, door_penalty_milli);
            if candidate < dist[next_idx] {
                dist[next_idx] = candidate;
                parent[next_idx] = Some(pos);
                seq += 1;
                let hn = h(next);
                heap.push(Reverse((candidate + hn, hn, seq, next)));
            }
        }
    }
    None
}

fn reconstruct(
    map: &GridMap,
    parent: &[Option<GridPos>],
    start: GridPos,
    goal: GridPos,
    dist: &[u64],
    idx: impl Fn(GridPos) -> usize,
) -> PlannedPath {
    let mut steps = Vec::new();
    let mut cur = goal;
    while cur != start {
        steps.push(cur);
        cur = parent[idx(cur)].expect("every reached cell has a parent");
    }
    steps.reverse();
    let doors_crossed = steps.iter().filter(|p| map.cell(**p) == Cell::Door).count();
    PlannedPath {
        steps,
        cost_units: dist[idx(goal)] as f64 / MILLI as f64,
        doors_crossed,
    }
}

/// Reference shortest-path cost in milli-units by plain Dijkstra, sharing
/// only the per-cell cost model with [`astar`]. Used to cross-check A*.
pub fn dijkstra_cost_milli(
    map: &GridMap,
    start: GridPos,
    goal: GridPos,
    door_penalty_units: f64,
) -> Option<u64> {
    if !map.traversable(start) || !map.traversable(goal) {
        return None;
    }
    let door_penalty_milli = penalty_to_milli(door_penalty_units);
    let n = map.width() * map.height();
    let idx = |p: GridPos| p.row * map.width() + p.col;
    let mut dist = vec![u64::MAX; n];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    dist[idx(start)] = 0;
    heap.push(Reverse((0, idx(start))));
    while let Some(Reverse((g, i))) = heap.pop() {
        if g > dist[i] {
            continue;
        }
        if i == idx(goal) {
            return Some(g);
        }
        let pos = GridPos::new(i / map.width(), i % map.width());
        for next in map.neighbors(pos) {
            if !map.traversable(next) {
                continue;
            }
            let ni = idx(next);
            let candidate = g + entry_cost_milli(map, next, door_penalty_milli);
            if candidate < dist[ni] {
                dist[ni] = candidate;
                heap.push(Reverse((candidate, ni)));
            }
        }
    }
    None
}

/// [`astar`]'s cost in milli-units, for exact comparison against
/// [`dijkstra_cost_milli`].
pub fn astar_cost_milli(
    map: &GridMap,
    start: GridPos,
    goal: GridPos,
    door_penalty_units: f64,
) -> Option<u64> {
    astar(map, start, goal, door_penalty_units)
        .map(|p| (p.cost_units * MILLI as f64).round() as u64)
}
