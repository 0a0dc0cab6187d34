//! Grid maps, the move alphabet and single-source distance fields.
//!
//! Maps are rectangular ASCII grids. The header line is `height W H`,
//! followed by `H` rows of `W` characters where `.` is passable and `@`
//! is an obstacle (a compatible subset of the common MAPF benchmark
//! format). Rows are indexed top to bottom, columns left to right.

use std::fmt;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A grid coordinate, `row` before `col`, both zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

/// The five primitive moves. The declaration order doubles as the
/// universal tie-break order: whenever scores are exactly equal, the
/// earliest action in this order wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MoveAction {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl MoveAction {
    pub const ALL: [MoveAction; 5] = [
        MoveAction::Up,
        MoveAction::Down,
        MoveAction::Left,
        MoveAction::Right,
        MoveAction::Stay,
    ];

    /// Row/column delta of this move; `Up` decreases the row index.
    pub fn delta(self) -> (isize, isize) {
        match self {
            MoveAction::Up => (-1, 0),
            MoveAction::Down => (1, 0),
            MoveAction::Left => (0, -1),
            MoveAction::Right => (0, 1),
            MoveAction::Stay => (0, 0),
        }
    }

    /// Index of this action in [`MoveAction::ALL`].
    pub fn index(self) -> usize {
        match self {
            MoveAction::Up => 0,
            MoveAction::Down => 1,
            MoveAction::Left => 2,
            MoveAction::Right => 3,
            MoveAction::Stay => 4,
        }
    }

    /// The move that takes `from` to `to`, if they are identical or
    /// 4-adjacent.
    pub fn between(from: Cell, to: Cell) -> Option<MoveAction> {
        let dr = to.row as isize - from.row as isize;
        let dc = to.col as isize - from.col as isize;
        MoveAction::ALL.into_iter().find(|a| a.delta() == (dr, dc))
    }
}

impl fmt::Display for MoveAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MoveAction::Up => "up",
            MoveAction::Down => "down",
            MoveAction::Left => "left",
            MoveAction::Right => "right",
            MoveAction::Stay => "stay",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum MapError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("map has no passable cell")]
    Empty,
    #[error("cell {0} is out of bounds or an obstacle")]
    BadCell(Cell),
}

/// A static rectangular obstacle map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridMap {
    width: usize,
    height: usize,
    passable: Vec<bool>,
}

impl GridMap {
    /// Builds a map from dimensions and an obstacle predicate over
    /// row-major cells. `passable` must have `width * height` entries.
    pub fn from_passable(width: usize, height: usize, passable: Vec<bool>) -> Result<Self, MapError> {
        assert_eq!(passable.len(), width * height, "passable grid size mismatch");
        if !passable.iter().any(|&p| p) {
            return Err(MapError::Empty);
        }
        Ok(GridMap { width, height, passable })
    }

    /// Fully open map, useful for small fixtures.
    pub fn open(width: usize, height: usize) -> Self {
        GridMap { width, height, passable: vec![true; width * height] }
    }

    /// Parses the ASCII map format described in the module docs.
    pub fn parse(text: &str) -> Result<Self, MapError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| MapError::Parse { line: 1, msg: "empty map file".into() })?;
        let mut parts = header.split_whitespace();
        let tag = parts.next().unwrap_or("");
        if tag != "height" {
            return Err(MapError::Parse {
                line: 1,
                msg: format!("expected header `height W H`, got `{header}`"),
            });
        }
        let dim = |p: Option<&str>, what: &str| -> Result<usize, MapError> {
            p.and_then(|s| s.parse().ok()).ok_or_else(|| MapError::Parse {
                line: 1,
                msg: format!("bad {what} in header `{header}`"),
            })
        };
        let width = dim(parts.next(), "width")?;
        let height = dim(parts.next(), "height")?;
        if width == 0 || height == 0 {
            return Err(MapError::Parse { line: 1, msg: "zero map dimension".into() });
        }

        let mut passable = Vec::with_capacity(width * height);
        let mut rows = 0;
        for (idx, row) in lines {
            if rows == height {
                if row.trim().is_empty() {
                    continue;
                }
                return Err(MapError::Parse { line: idx + 1, msg: "trailing content".into() });
            }
            let chars: Vec<char> = row.chars().collect();
            if chars.len() != width {
                return Err(MapError::Parse {
                    line: idx + 1,
                    msg: format!("row has {} cells, expected {width}", chars.len()),
                });
            }
            for (c, ch) in chars.into_iter().enumerate() {
                match ch {
                    '.' => passable.push(true),
                    '@' => passable.push(false),
                    other => {
                        return Err(MapError::Parse {
                            line: idx + 1,
                            msg: format!("unknown cell `{other}` at column {c}"),
                        })
                    }
                }
            }
            rows += 1;
        }
        if rows != height {
            return Err(MapError::Parse {
                line: rows + 1,
                msg: format!("map has {rows} rows, header promised {height}"),
            });
        }
        GridMap::from_passable(width, height, passable)
    }

    /// Renders back to the parseable ASCII format.
    pub fn to_text(&self) -> String {
        let mut out = format!("height {} {}\n", self.width, self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                out.push(if self.passable[r * self.width + c] { '.' } else { '@' });
            }
            out.push('\n');
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn in_bounds(&self, row: isize, col: isize) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    pub fn is_passable(&self, cell: Cell) -> bool {
        cell.row < self.height && cell.col < self.width && self.passable[self.index(cell)]
    }

    pub fn index(&self, cell: Cell) -> usize {
        cell.row * self.width + cell.col
    }

    /// Number of passable cells.
    pub fn empty_cells(&self) -> usize {
        self.passable.iter().filter(|&&p| p).count()
    }

    /// All passable cells in row-major order.
    pub fn passable_cells(&self) -> Vec<Cell> {
        let mut cells = Vec::with_capacity(self.empty_cells());
        for r in 0..self.height {
            for c in 0..self.width {
                let cell = Cell::new(r, c);
                if self.passable[self.index(cell)] {
                    cells.push(cell);
                }
            }
        }
        cells
    }

    /// Destination of `action` from `cell`, or `None` when it leaves the
    /// grid or enters an obstacle. `Stay` is always valid on a passable
    /// cell.
    pub fn neighbor(&self, cell: Cell, action: MoveAction) -> Option<Cell> {
        let (dr, dc) = action.delta();
        let row = cell.row as isize + dr;
        let col = cell.col as isize + dc;
        if !self.in_bounds(row, col) {
            return None;
        }
        let next = Cell::new(row as usize, col as usize);
        if self.passable[self.index(next)] {
            Some(next)
        } else {
            None
        }
    }

    /// Where a move lands when invalid moves resolve to staying put.
    pub fn resolve(&self, cell: Cell, action: MoveAction) -> Cell {
        self.neighbor(cell, action).unwrap_or(cell)
    }

    /// Returns a copy with the given cells turned into obstacles.
    pub fn with_obstacles(&self, extra: &[Cell]) -> GridMap {
        let mut passable = self.passable.clone();
        for &cell in extra {
            if cell.row < self.height && cell.col < self.width {
                passable[self.index(cell)] = false;
            }
        }
        GridMap { width: self.width, height: self.height, passable }
    }
}

/// Dense shortest-distance table to one goal cell under 4-connectivity.
/// Unreachable cells (and obstacles) hold [`DistanceField::INFINITE`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistanceField {
    pub goal: Cell,
    width: usize,
    dist: Vec<u32>,
}

impl DistanceField {
    pub const INFINITE: u32 = u32::MAX;

    pub fn get(&self, cell: Cell) -> u32 {
        self.dist[cell.row * self.width + cell.col]
    }

    pub fn is_reachable(&self, cell: Cell) -> bool {
        self.get(cell) != Self::INFINITE
    }
}

/// Breadth-first distance-to-goal over passable cells.
pub fn bfs_distance(map: &GridMap, goal: Cell) -> Result<DistanceField, MapError> {
    if !map.is_passable(goal) {
        return Err(MapError::BadCell(goal));
    }
    let mut dist = vec![DistanceField::INFINITE; map.width() * map.height()];
    let mut queue = std::collections::VecDeque::new();
    dist[map.index(goal)] = 0;
    queue.push_back(goal);
    while let Some(cell) = queue.pop_front() {
        let d = dist[map.index(cell)];
        for action in &MoveAction::ALL[..4] {
            if let Some(next) = map.neighbor(cell, *action) {
                let slot = &mut dist[map.index(next)];
                if *slot == DistanceField::INFINITE {
                    *slot = d + 1;
                    queue.push_back(next);
                }
            }
        }
    }
    Ok(DistanceField { goal, width: map.width(), dist })
}

/// Number of distinct placements of `k` labelled agents on `empty`
/// passable cells with no two sharing a cell: `E! / (E - k)!`.
pub fn state_count(empty: usize, k: usize) -> BigUint {
    if k > empty {
        return BigUint::from(0u32);
    }
    let mut n = BigUint::from(1u32);
    for i in 0..k {
        n *= BigUint::from(empty - i);
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_roundtrip() {
        let text = "height 3 2\n.@.\n...\n";
        let map = GridMap::parse(text).unwrap();
        assert_eq!(map.width(), 3);
        assert_eq!(map.height(), 2);
        assert_eq!(map.empty_cells(), 5);
        assert!(!map.is_passable(Cell::new(0, 1)));
        assert_eq!(map.to_text(), text);
    }

    #[test]
    fn parse_rejects_bad_rows() {
        assert!(GridMap::parse("height 3 2\n..\n...\n").is_err());
        assert!(GridMap::parse("height 3 2\n...\n..x\n").is_err());
        assert!(GridMap::parse("width 3 2\n...\n...\n").is_err());
        assert!(GridMap::parse("height 3 2\n...\n").is_err());
    }

    #[test]
    fn neighbor_respects_obstacles_and_bounds() {
        let map = GridMap::parse("height 3 3\n.@.\n...\n...\n").unwrap();
        let origin = Cell::new(0, 0);
        assert_eq!(map.neighbor(origin, MoveAction::Up), None);
        assert_eq!(map.neighbor(origin, MoveAction::Left), None);
        assert_eq!(map.neighbor(origin, MoveAction::Right), None); // obstacle
        assert_eq!(map.neighbor(origin, MoveAction::Down), Some(Cell::new(1, 0)));
        assert_eq!(map.resolve(origin, MoveAction::Right), origin);
    }

    #[test]
    fn bfs_distances_route_around_walls() {
        let map = GridMap::parse("height 3 3\n.@.\n.@.\n...\n").unwrap();
        let field = bfs_distance(&map, Cell::new(0, 2)).unwrap();
        assert_eq!(field.get(Cell::new(0, 2)), 0);
        assert_eq!(field.get(Cell::new(0, 0)), 6);
        assert_eq!(field.get(Cell::new(0, 1)), DistanceField::INFINITE);
    }

    #[test]
    fn bfs_unreachable_pockets_stay_infinite() {
        let map = GridMap::parse("height 3 3\n..@\n.@.\n@..\n").unwrap();
        let field = bfs_distance(&map, Cell::new(0, 0)).unwrap();
        assert!(!field.is_reachable(Cell::new(1, 2)));
        assert!(!field.is_reachable(Cell::new(2, 1)));
    }

    #[test]
    fn state_count_matches_small_cases() {
        assert_eq!(state_count(9, 2), BigUint::from(72u32));
        assert_eq!(state_count(31, 2), BigUint::from(930u32));
        assert_eq!(state_count(86, 2), BigUint::from(7310u32));
        assert_eq!(state_count(1, 2), BigUint::from(0u32));
    }

    #[test]
    fn between_recovers_moves() {
        let a = Cell::new(2, 2);
        for action in MoveAction::ALL {
            let (dr, dc) = action.delta();
            let b = Cell::new((a.row as isize + dr) as usize, (a.col as isize + dc) as usize);
            assert_eq!(MoveAction::between(a, b), Some(action));
        }
        assert_eq!(MoveAction::between(a, Cell::new(0, 0)), None);
    }
}
