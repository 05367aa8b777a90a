//! ASCII floor-plan maps for the responder simulator.
//!
//! A map file is a `res <meters>` header line followed by a rectangular
//! character grid:
//!
//! ```text
//! res 0.25
//! #######
//! #R.D.F#
//! #######
//! ```
//!
//! Legend: `#` obstacle, `.` free, `D` closed door (traversable at a time
//! penalty), `R` robot start, `A`/`B` patrol points, `F` fall location.
//! The named cells stand on free floor. The border must be solid obstacle,
//! each named cell must appear exactly once, and the fall location must be
//! reachable from the robot start once doors are traversable.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use crate::SimError;

/// What occupies one grid cell once the name markers are lifted off.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Free,
    Obstacle,
    /// Closed door: traversable, but crossing costs extra time.
    Door,
}

/// Grid coordinate as (row, col), row 0 at the top.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridPos {
    pub row: usize,
    pub col: usize,
}

impl GridPos {
    pub fn new(row: usize, col: usize) -> Self {
        GridPos { row, col }
    }

    /// Manhattan distance in cells.
    pub fn manhattan(&self, other: &GridPos) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

impl fmt::Display for GridPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Parsed floor plan with named locations resolved.
#[derive(Debug, Clone)]
pub struct GridMap {
    width: usize,
    height: usize,
    /// Cell edge length in meters.
    resolution_m: f64,
    cells: Vec<Cell>,
    robot_start: GridPos,
    patrol_a: GridPos,
    patrol_b: GridPos,
    fall_location: GridPos,
}

impl GridMap {
    /// Parse a map from its text form (header line plus grid).
    pub fn parse(text: &str) -> Result<GridMap, SimError> {
        let map = Self::parse_shape(text)?;
        map.validate()?;
        Ok(map)
    }

    /// Parse without the border/reachability validation, so tests can build
    /// deliberately broken floors (e.g. a sealed-off fall location).
    #[cfg(test)]
    pub(crate) fn parse_unvalidated(text: &str) -> Result<GridMap, SimError> {
        Self::parse_shape(text)
    }

    fn parse_shape(text: &str) -> Result<GridMap, SimError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| SimError::Map("empty map file".into()))?;
        let resolution_m = parse_header(header)?;

        let rows: Vec<&str> = lines
            .filter(|l| !l.trim().is_empty())
            .collect();
        if rows.is_empty() {
            return Err(SimError::Map("map has a header but no grid rows".into()));
        }
        let width = rows[0].chars().count();
        let height = rows.len();
        if width < 3 || height < 3 {
            return Err(SimError::Map(format!(
                "grid must be at least 3x3 to have an interior, got {width}x{height}"
            )));
        }

        let mut cells = Vec::with_capacity(width * height);
        let mut robot_start = None;
        let mut patrol_a = None;
        let mut patrol_b = None;
        let mut fall_location = None;

        for (r, line) in rows.iter().enumerate() {
            let row_chars: Vec<char> = line.chars().collect();
            if row_chars.len() != width {
                return Err(SimError::Map(format!(
                    "ragged grid: row {r} has {} cells, expected {width}",
                    row_chars.len()
                )));
            }
            for (c, ch) in row_chars.iter().enumerate() {
                let pos = GridPos::new(r, c);
                let cell = match ch {
                    '#' => Cell::Obstacle,
                    '.' => Cell::Free,
                    'D' => Cell::Door,
                    'R' => {
                        claim_unique(&mut robot_start, pos, 'R')?;
                        Cell::Free
                    }
                    'A' => {
                        claim_unique(&mut patrol_a, pos, 'A')?;
                        Cell::Free
                    }
                    'B' => {
                        claim_unique(&mut patrol_b, pos, 'B')?;
                        Cell::Free
                    }
                    'F' => {
                        claim_unique(&mut fall_location, pos, 'F')?;
                        Cell::Free
                    }
                    other => {
                        return Err(SimError::Map(format!(
                            "unknown map character {other:?} at row {r}, col {c}"
                        )));
                    }
                };
                cells.push(cell);
            }
        }

        Ok(GridMap {
            width,
            height,
            resolution_m,
            cells,
            robot_start: claim_present(robot_start, 'R')?,
            patrol_a: claim_present(patrol_a, 'A')?,
            patrol_b: claim_present(patrol_b, 'B')?,
            fall_location: claim_present(fall_location, 'F')?,
        })
    }

    /// Load a map from a file on disk.
    pub fn load(path: &Path) -> Result<GridMap, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            SimError::Map(format!("cannot read map {}: {e}", path.display()))
        })?;
        GridMap::parse(&text)
    }

    /// The built-in floor plan: two rooms joined by a single closed door,
    /// patrol loop in the left room, fall location in the right room. Every
    /// robot-to-fall route crosses exactly one door.
    pub fn bundled_two_room() -> GridMap {
        GridMap::parse(DEFAULT_TWO_ROOM_MAP)
            .expect("bundled map must parse")
    }

    fn validate(&self) -> Result<(), SimError> {
        // Solid border: the simulator relies on it so path search never has
        // to bounds-check beyond neighbor generation.
        for c in 0..self.width {
            for r in [0, self.height - 1] {
                if self.cell(GridPos::new(r, c)) != Cell::Obstacle {
                    return Err(SimError::Map(format!(
                        "border must be obstacle, found open cell at row {r}, col {c}"
                    )));
                }
            }
        }
        for r in 0..self.height {
            for c in [0, self.width - 1] {
                if self.cell(GridPos::new(r, c)) != Cell::Obstacle {
                    return Err(SimError::Map(format!(
                        "border must be obstacle, found open cell at row {r}, col {c}"
                    )));
                }
            }
        }
        // The fall location must be reachable from the robot start when doors
        // count as traversable; otherwise no trial on this map can succeed.
        if !self.reachable(self.robot_start, self.fall_location) {
            return Err(SimError::Map(
                "fall location is sealed off from the robot start".into(),
            ));
        }
        for (name, pos) in [("patrol point A", self.patrol_a), ("patrol point B", self.patrol_b)] {
            if !self.reachable(self.robot_start, pos) {
                return Err(SimError::Map(format!(
                    "{name} at {pos} is sealed off from the robot start"
                )));
            }
        }
        Ok(())
    }

    /// Breadth-first reachability treating doors as traversable.
    fn reachable(&self, from: GridPos, to: GridPos) -> bool {
        let mut seen = vec![false; self.cells.len()];
        let mut queue = VecDeque::new();
        seen[self.index(from)] = true;
        queue.push_back(from);
        while let Some(pos) = queue.pop_front() {
            if pos == to {
                return true;
            }
            for next in self.neighbors(pos) {
                let idx = self.index(next);
                if !seen[idx] && self.cell(next) != Cell::Obstacle {
                    seen[idx] = true;
                    queue.push_back(next);
                }
            }
        }
        false
    }

    fn index(&self, pos: GridPos) -> usize {
        pos.row * self.width + pos.col
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Cell edge length in meters.
    pub fn resolution_m(&self) -> f64 {
        self.resolution_m
    }

    pub fn robot_start(&self) -> GridPos {
        self.robot_start
    }

    pub fn patrol_a(&self) -> GridPos {
        self.patrol_a
    }

    pub fn patrol_b(&self) -> GridPos {
        self.patrol_b
    }

    pub fn fall_location(&self) -> GridPos {
        self.fall_location
    }

    pub fn cell(&self, pos: GridPos) -> Cell {
        self.cells[self.index(pos)]
    }

    pub fn in_bounds(&self, row: isize, col: isize) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    /// Whether the robot may occupy this cell (free floor or a door).
    pub fn traversable(&self, pos: GridPos) -> bool {
        self.cell(pos) != Cell::Obstacle
    }

    /// In-bounds 4-neighbors in the fixed expansion order down, up, right,
    /// left. Path planning depends on this order for deterministic
    /// tie-breaking, so it is defined here once.
    pub fn neighbors(&self, pos: GridPos) -> impl Iterator<Item = GridPos> + '_ {
        const STEPS: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
        STEPS.iter().filter_map(move |&(dr, dc)| {
            let r = pos.row as isize + dr;
            let c = pos.col as isize + dc;
            self.in_bounds(r, c).then(|| GridPos::new(r as usize, c as usize))
        })
    }
}

fn parse_header(header: &str) -> Result<f64, SimError> {
    let mut parts = header.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some("res"), Some(value), None) => {
            let res: f64 = value.parse().map_err(|_| {
                SimError::Map(format!("header resolution {value:?} is not a number"))
            })?;
            if !res.is_finite() || res <= 0.0 {
                return Err(SimError::Map(format!(
                    "header resolution must be a positive length in meters, got {res}"
                )));
            }
            Ok(res)
        }
        _ => Err(SimError::Map(format!(
            "first line must be `res <meters>`, got {header:?}"
        ))),
    }
}

fn claim_unique(slot: &mut Option<GridPos>, pos: GridPos, marker: char) -> Result<(), SimError> {
    if let Some(prev) = slot {
        return Err(SimError::Map(format!(
            "marker {marker:?} appears at both {prev} and {pos}; it must be unique"
        )));
    }
    *slot = Some(pos);
    Ok(())
}

fn claim_present(slot: Option<GridPos>, marker: char) -> Result<GridPos, SimError> {
    slot.ok_or_else(|| SimError::Map(format!("map is missing required marker {marker:?}")))
}

/// Two rooms separated by a full-height wall with a single closed door.
/// The robot patrols A-B on the left; falls happen at F on the right.
pub const DEFAULT_TWO_ROOM_MAP: &str = "\
res 0.25
###############################
#.............#...............#
#.....A.......#...............#
#.............#.......F.......#
#.............#...............#
#......R......D...............#
#.............#...............#
#.....B.......#...............#
#.............#...............#
###############################
";
