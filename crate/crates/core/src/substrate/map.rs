//! ASCII map loading. The format uses one character per tile:
//! `W` wall, `A` apple, `G` grass, `.` empty, `S` spawn tile (empty ground
//! where entities appear).

use std::collections::BTreeSet;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{Cell, CellKind, GridState, Position, Tree, TreeId, WorldConfig};

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("map is empty")]
    Empty,
    #[error("map is not rectangular: row {row} has width {found}, expected {expected}")]
    NotRectangular { row: usize, found: usize, expected: usize },
    #[error("unknown map character `{ch}` at {at}")]
    UnknownChar { ch: char, at: Position },
    #[error("map declares no spawn tiles")]
    NoSpawnTiles,
}

impl GridState {
    /// Parses an ASCII map into a fresh world. Trees are computed as
    /// 8-connected components over apple/grass tiles and numbered in
    /// row-major order of each component's first tile. The clock starts at
    /// a fixed placeholder date; scenarios override it before the episode
    /// begins.
    pub fn load_map(ascii_map: &str, config: WorldConfig) -> Result<GridState, MapError> {
        let lines: Vec<&str> = ascii_map
            .lines()
            .map(|l| l.trim_end_matches('\r'))
            .filter(|l| !l.is_empty())
            .collect();
        if lines.is_empty() {
            return Err(MapError::Empty);
        }
        let width = lines[0].chars().count();
        let height = lines.len();
        let mut cells = Vec::with_capacity(width * height);
        let mut spawn_tiles = BTreeSet::new();
        for (r, line) in lines.iter().enumerate() {
            let row: Vec<char> = line.chars().collect();
            if row.len() != width {
                return Err(MapError::NotRectangular { row: r, found: row.len(), expected: width });
            }
            for (c, ch) in row.iter().copied().enumerate() {
                let at = Position::new(r as i32, c as i32);
                let kind = match ch {
                    'W' => CellKind::Wall,
                    'A' => CellKind::Apple,
                    'G' => CellKind::Grass,
                    '.' => CellKind::Empty,
                    'S' => {
                        spawn_tiles.insert(at);
                        CellKind::Empty
                    }
                    other => return Err(MapError::UnknownChar { ch: other, at }),
                };
                cells.push(Cell { kind, tree_id: None });
            }
        }
        if spawn_tiles.is_empty() {
            return Err(MapError::NoSpawnTiles);
        }

        let trees = find_trees(&cells, width as i32, height as i32);
        for tree in &trees {
            for tile in &tree.member_tiles {
                let idx = (tile.row as usize) * width + tile.col as usize;
                cells[idx].tree_id = Some(tree.id);
            }
        }

        let mut config = config;
        if config.spawn_tiles.is_empty() {
            config.spawn_tiles = spawn_tiles;
        }

        Ok(GridState {
            config,
            width: width as i32,
            height: height as i32,
            cells,
            trees,
            entities: Vec::new(),
            step: 0,
            round: 0,
            clock: NaiveDate::from_ymd_opt(2023, 11, 19)
                .unwrap()
                .and_hms_opt(0, 0, 0)
                .unwrap(),
            rng: ChaCha8Rng::seed_from_u64(0),
        })
    }
}

/// Connected components of apple/grass tiles under the 8-neighborhood,
/// numbered by their row-major first member.
fn find_trees(cells: &[Cell], width: i32, height: i32) -> Vec<Tree> {
    let is_tree_tile = |p: Position| -> bool {
        if p.row < 0 || p.row >= height || p.col < 0 || p.col >= width {
            return false;
        }
        matches!(
            cells[(p.row * width + p.col) as usize].kind,
            CellKind::Apple | CellKind::Grass
        )
    };

    let mut seen = vec![false; cells.len()];
    let mut components: Vec<BTreeSet<Position>> = Vec::new();
    for row in 0..height {
        for col in 0..width {
            let start = Position::new(row, col);
            if !is_tree_tile(start) || seen[(row * width + col) as usize] {
                continue;
            }
            let mut members = BTreeSet::new();
            let mut stack = vec![start];
            seen[(row * width + col) as usize] = true;
            while let Some(p) = stack.pop() {
                members.insert(p);
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        if dr == 0 && dc == 0 {
                            continue;
                        }
                        let q = Position::new(p.row + dr, p.col + dc);
                        if is_tree_tile(q) && !seen[(q.row * width + q.col) as usize] {
                            seen[(q.row * width + q.col) as usize] = true;
                            stack.push(q);
                        }
                    }
                }
            }
            components.push(members);
        }
    }
    // The scan above visits components in row-major order of their first
    // tile already; sort anyway so the id assignment is explicit.
    components.sort_by_key(|m| *m.iter().next().expect("component is non-empty"));
    components
        .into_iter()
        .enumerate()
        .map(|(id, member_tiles)| Tree { id: id as TreeId, member_tiles })
        .collect()
}
