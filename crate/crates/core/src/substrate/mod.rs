//! The grid-world engine: cells, trees, apple regrowth, grass death and
//! rebirth, movement, zapping, removal, and respawn.
//!
//! All mutation goes through [`GridState`] methods that return the
//! [`WorldEvent`]s they caused. Folding those events back over the initial
//! state reproduces the final state, which is what replay verification
//! relies on.

mod map;
mod state;

use std::collections::BTreeSet;
use std::fmt;

use chrono::NaiveDateTime;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use map::MapError;
pub use state::{l2_offsets, DEFAULT_MAP, ONE_TREE_MAP};

/// Identifier of an apple tree (a connected patch of apple/grass tiles).
pub type TreeId = u32;

/// A tile coordinate, `[0, 0]` at the top left.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
pub struct Position {
    pub row: i32,
    pub col: i32,
}

impl Position {
    pub fn new(row: i32, col: i32) -> Self {
        Self { row, col }
    }

    /// Euclidean distance to another tile.
    pub fn l2_distance(&self, other: &Position) -> f64 {
        let dr = (self.row - other.row) as f64;
        let dc = (self.col - other.col) as f64;
        (dr * dr + dc * dc).sqrt()
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.row, self.col)
    }
}

/// Facing of an entity. `North` is towards row 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    North,
    East,
    South,
    West,
}

impl Orientation {
    /// Unit (row, col) delta of one step in this direction.
    pub fn delta(&self) -> (i32, i32) {
        match self {
            Orientation::North => (-1, 0),
            Orientation::East => (0, 1),
            Orientation::South => (1, 0),
            Orientation::West => (0, -1),
        }
    }

    pub fn turned_left(&self) -> Self {
        match self {
            Orientation::North => Orientation::West,
            Orientation::West => Orientation::South,
            Orientation::South => Orientation::East,
            Orientation::East => Orientation::North,
        }
    }

    pub fn turned_right(&self) -> Self {
        match self {
            Orientation::North => Orientation::East,
            Orientation::East => Orientation::South,
            Orientation::South => Orientation::West,
            Orientation::West => Orientation::North,
        }
    }

    /// Name used in observation text ("looking to the North").
    pub fn name(&self) -> &'static str {
        match self {
            Orientation::North => "North",
            Orientation::East => "East",
            Orientation::South => "South",
            Orientation::West => "West",
        }
    }
}

/// What currently occupies a tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKind {
    Wall,
    Empty,
    Apple,
    Grass,
    /// A tile where grass disappeared; eligible for rebirth when an apple
    /// grows within L2 radius 2.
    BareGround,
}

/// One tile of the map. `tree_id` is present exactly for apple and grass
/// tiles; bare ground recovers its tree through the fixed tree membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub kind: CellKind,
    pub tree_id: Option<TreeId>,
}

impl Cell {
    pub fn wall() -> Self {
        Cell { kind: CellKind::Wall, tree_id: None }
    }

    pub fn empty() -> Self {
        Cell { kind: CellKind::Empty, tree_id: None }
    }
}

/// A connected patch (8-neighborhood) of tiles that can hold apples.
/// Membership is fixed when the map is loaded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tree {
    pub id: TreeId,
    pub member_tiles: BTreeSet<Position>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntityKind {
    LlmAgent,
    Bot,
}

/// A player on the grid. `position` is `None` while the entity is removed
/// from the game after being hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityState {
    pub id: String,
    pub kind: EntityKind,
    pub position: Option<Position>,
    pub orientation: Orientation,
    pub cumulative_reward: f64,
    /// Scheduled moves this entity still has to sit out before it can
    /// respawn. Zero for active entities.
    pub skips_remaining: u32,
}

impl EntityState {
    pub fn is_active(&self) -> bool {
        self.position.is_some()
    }
}

/// A primitive movement of one entity. High-level actions decompose into
/// sequences of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Move {
    Forward,
    Back,
    StepLeft,
    StepRight,
    TurnLeft,
    TurnRight,
    Noop,
}

/// Static rules of the world. The regrowth table maps the number of apples
/// within L2 radius 2 of a grass tile (capped at 3) to a per-step growth
/// probability; index 0 must be 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub regrowth_probability: [f64; 4],
    pub removal_steps: u32,
    pub max_rounds: u32,
    pub beam_length: u32,
    pub beam_width: u32,
    pub window_height: u32,
    pub window_width: u32,
    pub spawn_tiles: BTreeSet<Position>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            regrowth_probability: [0.0, 0.0025, 0.005, 0.025],
            removal_steps: 5,
            max_rounds: 100,
            beam_length: 3,
            beam_width: 1,
            window_height: 11,
            window_width: 11,
            spawn_tiles: BTreeSet::new(),
        }
    }
}

/// Why an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Terminal {
    MaxRounds,
    ApplesExhausted,
}

impl fmt::Display for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Terminal::MaxRounds => write!(f, "max_rounds"),
            Terminal::ApplesExhausted => write!(f, "apples_exhausted"),
        }
    }
}

/// Everything that can change the world, in the order it happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WorldEvent {
    Moved { id: String, from: Position, to: Position },
    Turned { id: String, orientation: Orientation },
    MoveBlocked { id: String, at: Position, toward: Position },
    AppleTaken { id: String, at: Position, tree: TreeId },
    AppleGrew { at: Position, tree: TreeId },
    GrassDisappeared { at: Position, tree: TreeId },
    GrassGrew { at: Position, tree: TreeId },
    AttackAttempted { id: String, beam: Vec<Position> },
    AttackHit { attacker: String, target: String, at: Position },
    Respawned { id: String, at: Position },
    RespawnDeferred { id: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum SubstrateError {
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("entity `{0}` is removed from the game")]
    EntityRemoved(String),
    #[error("tile {0} is occupied")]
    TileOccupied(Position),
}

/// Full world state. A value type: it can be cloned for snapshots and sent
/// to other threads for read-only analysis; all mutation happens on one
/// thread through the methods in this module.
#[derive(Debug, Clone)]
pub struct GridState {
    pub config: WorldConfig,
    width: i32,
    height: i32,
    cells: Vec<Cell>,
    pub trees: Vec<Tree>,
    pub entities: Vec<EntityState>,
    /// Primitive moves performed by anyone since the episode started.
    pub step: u64,
    /// Completed rounds.
    pub round: u32,
    /// Game clock; advances by the scenario increment at each round end.
    pub clock: NaiveDateTime,
    pub rng: ChaCha8Rng,
}
