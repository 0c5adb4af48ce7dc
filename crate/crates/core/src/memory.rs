//! The three memory structures behind each agent: a long-term associative
//! store with weighted retrieval, a short-term key–value store for data
//! that must always be at hand, and a spatial memory that remembers seen
//! tiles and plans paths over them.

use std::collections::{BTreeMap, VecDeque};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{Embedder, LlmError};
use crate::substrate::{CellKind, GridState, Move, Orientation, Position, TreeId};
use crate::textifier::window_rect;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    Observation,
    Reflection,
    Plan,
}

/// One long-term memory. Embeddings have unit norm; poignancy is the fixed
/// importance score assigned at creation (10 under the reference settings).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub id: u64,
    pub kind: MemoryKind,
    pub text: String,
    #[serde(skip)]
    pub embedding: Vec<f64>,
    pub created_at: NaiveDateTime,
    pub poignancy: f64,
}

/// Weights of the retrieval score's three components. They only need to be
/// non-negative with a positive sum; the score normalizes by their total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalWeights {
    pub similarity: f64,
    pub recency: f64,
    pub poignancy: f64,
}

impl Default for RetrievalWeights {
    fn default() -> Self {
        RetrievalWeights { similarity: 1.0, recency: 1.0, poignancy: 1.0 }
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn hours_since(created_at: NaiveDateTime, now: NaiveDateTime) -> f64 {
    ((now - created_at).num_seconds() as f64 / 3600.0).max(0.0)
}

/// Retrieval score of one record: the weighted average of similarity
/// (cosine rescaled to [0,1]), recency `exp(-h)` with `h` the game hours
/// since the record was created, and poignancy divided by 10. Each
/// component lies in [0,1].
pub fn score(
    record: &MemoryRecord,
    query_embedding: &[f64],
    now: NaiveDateTime,
    weights: &RetrievalWeights,
) -> f64 {
    let s = ((cosine(&record.embedding, query_embedding) + 1.0) / 2.0).clamp(0.0, 1.0);
    let r = (-hours_since(record.created_at, now)).exp();
    let p = (record.poignancy / 10.0).clamp(0.0, 1.0);
    let total = weights.similarity + weights.recency + weights.poignancy;
    (weights.similarity * s + weights.recency * r + weights.poignancy * p) / total
}

#[derive(Debug, Error, PartialEq)]
pub enum PathError {
    #[error("no known route from {from} to {to}")]
    NoPath { from: Position, to: Position },
}

/// Long-term memory: a flat in-memory array scanned exhaustively. Stores
/// are tiny (thousands of records at most per episode), and a flat scan
/// keeps retrieval deterministic.
#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    records: Vec<MemoryRecord>,
    /// Score recency as the literal `e^h` (growing with age), min-max
    /// normalized per query, instead of the default `e^-h` decay.
    pub paper_literal_recency: bool,
}

impl MemoryStore {
    pub fn new() -> Self {
        MemoryStore::default()
    }

    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends a record with the next id and the embedder's vector for the
    /// text.
    pub fn store(
        &mut self,
        text: &str,
        kind: MemoryKind,
        now: NaiveDateTime,
        embedder: &dyn Embedder,
    ) -> Result<&MemoryRecord, LlmError> {
        let embedding = embedder.embed(text)?;
        let record = MemoryRecord {
            id: self.records.len() as u64,
            kind,
            text: text.to_string(),
            embedding,
            created_at: now,
            poignancy: 10.0,
        };
        self.records.push(record);
        Ok(self.records.last().unwrap())
    }

    /// Top-k records for a query, highest score first, ties going to the
    /// more recent (higher id) record.
    pub fn retrieve(
        &self,
        query: &str,
        k: usize,
        now: NaiveDateTime,
        weights: &RetrievalWeights,
        embedder: &dyn Embedder,
    ) -> Result<Vec<&MemoryRecord>, LlmError> {
        if self.records.is_empty() || k == 0 {
            return Ok(Vec::new());
        }
        let query_embedding = embedder.embed(query)?;
        let total = weights.similarity + weights.recency + weights.poignancy;
        let recency: Vec<f64> = if self.paper_literal_recency {
            // Literal mode: e^h grows with age; normalize the raw values to
            // [0,1] across the store for this query.
            let raw: Vec<f64> =
                self.records.iter().map(|r| hours_since(r.created_at, now).exp()).collect();
            let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max > min {
                raw.iter().map(|v| (v - min) / (max - min)).collect()
            } else {
                vec![1.0; raw.len()]
            }
        } else {
            self.records.iter().map(|r| (-hours_since(r.created_at, now)).exp()).collect()
        };
        let mut scored: Vec<(f64, &MemoryRecord)> = self
            .records
            .iter()
            .zip(recency)
            .map(|(record, r)| {
                let s =
                    ((cosine(&record.embedding, &query_embedding) + 1.0) / 2.0).clamp(0.0, 1.0);
                let p = (record.poignancy / 10.0).clamp(0.0, 1.0);
                let value = (weights.similarity * s + weights.recency * r + weights.poignancy * p)
                    / total;
                (value, record)
            })
            .collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(b.1.id.cmp(&a.1.id))
        });
        Ok(scored.into_iter().take(k).map(|(_, r)| r).collect())
    }

    /// The `n` most recent records of one kind, newest first.
    pub fn recent_of_kind(&self, kind: MemoryKind, n: usize) -> Vec<&MemoryRecord> {
        self.records.iter().rev().filter(|r| r.kind == kind).take(n).collect()
    }
}

// ---------------------------------------------------------------------------
// Short-term memory

/// The information an agent must always have at hand without retrieval:
/// name, personality, world context, current plan and goals, queued
/// actions, and the latest observations.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ShortTermMemory {
    entries: BTreeMap<String, String>,
}

pub mod short_term_keys {
    pub const NAME: &str = "name";
    pub const PERSONALITY: &str = "personality";
    pub const WORLD_CONTEXT: &str = "world_context";
    pub const PLAN: &str = "current_plan";
    pub const GOALS: &str = "goals";
    pub const ACTION_QUEUE: &str = "action_queue";
    pub const LAST_OBSERVATIONS: &str = "last_observations";
}

impl ShortTermMemory {
    pub fn get(&self, key: &str) -> &str {
        self.entries.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }
}

// ---------------------------------------------------------------------------
// Spatial memory

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeKnowledge {
    pub position: Position,
    pub apples: u32,
    pub grass: u32,
}

/// What the agent knows about the map: every tile it has ever seen (with
/// its last observed kind), its own pose, and a summary per known tree.
#[derive(Debug, Clone)]
pub struct SpatialMemory {
    pub rows: i32,
    pub cols: i32,
    pub known_tiles: BTreeMap<Position, CellKind>,
    pub position: Position,
    pub orientation: Orientation,
    pub known_trees: BTreeMap<TreeId, TreeKnowledge>,
}

impl SpatialMemory {
    pub fn new(rows: i32, cols: i32, position: Position, orientation: Orientation) -> Self {
        SpatialMemory {
            rows,
            cols,
            known_tiles: BTreeMap::new(),
            position,
            orientation,
            known_trees: BTreeMap::new(),
        }
    }

    /// Records everything currently visible: pose, the tiles of the
    /// observation window, and per-tree counts over that window.
    pub fn observe(&mut self, state: &GridState, agent_id: &str) {
        let Some(entity) = state.entity(agent_id) else { return };
        let Some(center) = entity.position else { return };
        self.position = center;
        self.orientation = entity.orientation;
        let rect = window_rect(state, center);
        let mut stats: BTreeMap<TreeId, TreeKnowledge> = BTreeMap::new();
        for row in rect.top..=rect.bottom {
            for col in rect.left..=rect.right {
                let p = Position::new(row, col);
                let cell = state.cell(p).expect("window is in bounds");
                self.known_tiles.insert(p, cell.kind);
                if let Some(tree) = cell.tree_id {
                    let entry = stats
                        .entry(tree)
                        .or_insert(TreeKnowledge { position: p, apples: 0, grass: 0 });
                    match cell.kind {
                        CellKind::Apple => entry.apples += 1,
                        CellKind::Grass => entry.grass += 1,
                        _ => {}
                    }
                }
            }
        }
        self.known_trees.extend(stats);
    }

    fn traversable(&self, p: Position) -> bool {
        if p.row < 0 || p.row >= self.rows || p.col < 0 || p.col >= self.cols {
            return false;
        }
        // Unknown tiles are assumed walkable; only remembered walls block.
        self.known_tiles.get(&p) != Some(&CellKind::Wall)
    }

    /// Shortest 4-neighbor tile path avoiding known walls, or `None` when
    /// the goal is unreachable through tiles not known to be walls.
    pub fn tile_path(&self, from: Position, to: Position) -> Option<Vec<Position>> {
        if from == to {
            return Some(Vec::new());
        }
        if !self.traversable(to) {
            return None;
        }
        let index = |p: Position| (p.row * self.cols + p.col) as usize;
        let mut parent: Vec<Option<Position>> = vec![None; (self.rows * self.cols) as usize];
        let mut queue = VecDeque::new();
        queue.push_back(from);
        parent[index(from)] = Some(from);
        while let Some(p) = queue.pop_front() {
            if p == to {
                break;
            }
            for (dr, dc) in [(-1, 0), (0, -1), (0, 1), (1, 0)] {
                let q = Position::new(p.row + dr, p.col + dc);
                if self.traversable(q) && parent[index(q)].is_none() {
                    parent[index(q)] = Some(p);
                    queue.push_back(q);
                }
            }
        }
        parent[index(to)]?;
        let mut path = vec![to];
        let mut cursor = to;
        while cursor != from {
            cursor = parent[index(cursor)].unwrap();
            path.push(cursor);
        }
        path.pop(); // drop `from`
        path.reverse();
        Some(path)
    }

    /// Shortest path translated into turn/forward primitives for the
    /// current orientation. Empty when already at the goal.
    pub fn path(&self, from: Position, to: Position) -> Result<Vec<Move>, PathError> {
        let tiles = self.tile_path(from, to).ok_or(PathError::NoPath { from, to })?;
        let mut moves = Vec::new();
        let mut pos = from;
        let mut facing = self.orientation;
        for next in tiles {
            let step = (next.row - pos.row, next.col - pos.col);
            let target = match step {
                (-1, 0) => Orientation::North,
                (1, 0) => Orientation::South,
                (0, 1) => Orientation::East,
                (0, -1) => Orientation::West,
                _ => unreachable!("tile path steps are 4-adjacent"),
            };
            let ring = |o: Orientation| match o {
                Orientation::North => 0i32,
                Orientation::East => 1,
                Orientation::South => 2,
                Orientation::West => 3,
            };
            match (ring(target) - ring(facing)).rem_euclid(4) {
                0 => {}
                1 => moves.push(Move::TurnRight),
                3 => moves.push(Move::TurnLeft),
                2 => {
                    moves.push(Move::TurnRight);
                    moves.push(Move::TurnRight);
                }
                _ => unreachable!(),
            }
            facing = target;
            moves.push(Move::Forward);
            pos = next;
        }
        Ok(moves)
    }

    /// ASCII rendering of everything seen so far; unseen tiles show as `?`.
    pub fn render_known_map(&self) -> String {
        let mut out = String::new();
        for row in 0..self.rows {
            for col in 0..self.cols {
                let ch = match self.known_tiles.get(&Position::new(row, col)) {
                    None => '?',
                    Some(CellKind::Wall) => 'W',
                    Some(CellKind::Empty) => '.',
                    Some(CellKind::Apple) => 'A',
                    Some(CellKind::Grass) => 'G',
                    Some(CellKind::BareGround) => ',',
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;
    use proptest::prelude::*;

    use super::*;
    use crate::llm::HashEmbedder;

    fn t(hour: u32, minute: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2023, 11, 19).unwrap().and_hms_opt(hour, minute, 0).unwrap()
    }

    #[test]
    fn store_assigns_increasing_ids() {
        let embedder = HashEmbedder::default();
        let mut store = MemoryStore::new();
        let id0 = store.store("first memory", MemoryKind::Observation, t(0, 0), &embedder).unwrap().id;
        let id1 = store.store("second memory", MemoryKind::Plan, t(1, 0), &embedder).unwrap().id;
        assert_eq!((id0, id1), (0, 1));
    }

    #[test]
    fn fresh_identical_record_scores_one() {
        let embedder = HashEmbedder::default();
        let mut store = MemoryStore::new();
        let text = "Observed an apple at position [9, 20].";
        store.store(text, MemoryKind::Observation, t(0, 0), &embedder).unwrap();
        let q = embedder.embed(text).unwrap();
        let value = score(&store.records()[0], &q, t(0, 0), &RetrievalWeights::default());
        assert!((value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_weights_reduce_to_cosine_ranking() {
        let embedder = HashEmbedder::default();
        let mut store = MemoryStore::new();
        let texts =
            ["apples grow near other apples", "the wall is far away", "bot_1 took an apple"];
        for text in texts {
            store.store(text, MemoryKind::Observation, t(0, 0), &embedder).unwrap();
        }
        let weights = RetrievalWeights { similarity: 1.0, recency: 0.0, poignancy: 0.0 };
        let query = "apples near apples";
        let got: Vec<u64> = store
            .retrieve(query, 3, t(5, 0), &weights, &embedder)
            .unwrap()
            .iter()
            .map(|r| r.id)
            .collect();

        let q = embedder.embed(query).unwrap();
        let mut oracle: Vec<(f64, u64)> = store
            .records()
            .iter()
            .map(|r| (cosine(&r.embedding, &q), r.id))
            .collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(b.1.cmp(&a.1)));
        let expected: Vec<u64> = oracle.into_iter().map(|(_, id)| id).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn retrieve_on_empty_store() {
        let store = MemoryStore::new();
        let got = store
            .retrieve("anything", 5, t(0, 0), &RetrievalWeights::default(), &HashEmbedder::default())
            .unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn retrieve_k_larger_than_store() {
        let embedder = HashEmbedder::default();
        let mut store = MemoryStore::new();
        store.store("one", MemoryKind::Observation, t(0, 0), &embedder).unwrap();
        store.store("two", MemoryKind::Observation, t(0, 30), &embedder).unwrap();
        let got =
            store.retrieve("one", 10, t(1, 0), &RetrievalWeights::default(), &embedder).unwrap();
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn exact_match_ranks_first() {
        let embedder = HashEmbedder::default();
        let mut store = MemoryStore::new();
        let texts = ["grass disappeared near the wall", "a ray beam crossed the field", "tree six holds one apple"];
        for text in texts {
            store.store(text, MemoryKind::Observation, t(2, 0), &embedder).unwrap();
        }
        let got = store
            .retrieve("tree six holds one apple", 1, t(2, 0), &RetrievalWeights::default(), &embedder)
            .unwrap();
        assert_eq!(got[0].text, "tree six holds one apple");
    }

    #[test]
    fn top_k_matches_brute_force() {
        let embedder = HashEmbedder::default();
        let mut store = MemoryStore::new();
        let vocab = ["apple", "grass", "tree", "wall", "bot", "beam", "north", "row", "col", "reward"];
        for i in 0..1000u64 {
            let text = format!(
                "{} {} {} {}",
                vocab[(i % 10) as usize],
                vocab[(i / 10 % 10) as usize],
                vocab[(i / 100 % 10) as usize],
                i
            );
            let minutes = (i * 7) % (48 * 60);
            store
                .store(&text, MemoryKind::Observation, t((minutes / 60) as u32 % 24, (minutes % 60) as u32), &embedder)
                .unwrap();
        }
        let now = t(23, 59);
        let weights = RetrievalWeights { similarity: 0.5, recency: 0.3, poignancy: 0.2 };
        let query = "apple tree reward";
        let got: Vec<u64> =
            store.retrieve(query, 25, now, &weights, &embedder).unwrap().iter().map(|r| r.id).collect();

        let q = embedder.embed(query).unwrap();
        let mut oracle: Vec<(f64, u64)> =
            store.records().iter().map(|r| (score(r, &q, now, &weights), r.id)).collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(b.1.cmp(&a.1)));
        let expected: Vec<u64> = oracle.into_iter().take(25).map(|(_, id)| id).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn newer_records_never_outrank_older_reversed() {
        // With equal similarity and poignancy and positive recency weight,
        // an older record can never beat a newer one.
        let embedder = HashEmbedder::default();
        let mut store = MemoryStore::new();
        for hour in [0, 3, 6, 9] {
            store.store("same text every time", MemoryKind::Observation, t(hour, 0), &embedder).unwrap();
        }
        let now = t(12, 0);
        let weights = RetrievalWeights::default();
        let q = embedder.embed("same text every time").unwrap();
        let scores: Vec<f64> =
            store.records().iter().map(|r| score(r, &q, now, &weights)).collect();
        for pair in scores.windows(2) {
            assert!(pair[0] < pair[1], "older record outranked newer: {scores:?}");
        }
    }

    #[test]
    fn literal_recency_prefers_older() {
        let embedder = HashEmbedder::default();
        let mut store = MemoryStore::new();
        store.paper_literal_recency = true;
        store.store("same text", MemoryKind::Observation, t(0, 0), &embedder).unwrap();
        store.store("same text", MemoryKind::Observation, t(6, 0), &embedder).unwrap();
        let got = store
            .retrieve("same text", 2, t(12, 0), &RetrievalWeights::default(), &embedder)
            .unwrap();
        assert_eq!(got[0].id, 0, "literal e^h mode ranks the older record first");
    }

    // -- spatial memory --------------------------------------------------

    fn open_room(rows: i32, cols: i32) -> SpatialMemory {
        let mut sm = SpatialMemory::new(rows, cols, Position::new(1, 1), Orientation::East);
        for row in 0..rows {
            for col in 0..cols {
                let kind = if row == 0 || row == rows - 1 || col == 0 || col == cols - 1 {
                    CellKind::Wall
                } else {
                    CellKind::Empty
                };
                sm.known_tiles.insert(Position::new(row, col), kind);
            }
        }
        sm
    }

    #[test]
    fn path_from_equals_to_is_empty() {
        let sm = open_room(5, 5);
        assert_eq!(sm.path(Position::new(2, 2), Position::new(2, 2)).unwrap(), vec![]);
    }

    #[test]
    fn straight_corridor_is_all_forward() {
        let sm = open_room(3, 6); // one open row, facing East
        let moves = sm.path(Position::new(1, 1), Position::new(1, 4)).unwrap();
        assert_eq!(moves, vec![Move::Forward, Move::Forward, Move::Forward]);
    }

    #[test]
    fn detour_length_matches_bfs_oracle() {
        // A wall with a side opening: route around it. Oracle is an
        // independent brute-force BFS over the same known tiles.
        let mut sm = open_room(7, 7);
        for row in 1..=4 {
            sm.known_tiles.insert(Position::new(row, 3), CellKind::Wall);
        }
        let from = Position::new(2, 1);
        let to = Position::new(2, 5);
        let tiles = sm.tile_path(from, to).unwrap();

        // Brute-force BFS distance.
        let mut dist = std::collections::BTreeMap::new();
        dist.insert(from, 0usize);
        let mut queue = std::collections::VecDeque::from([from]);
        while let Some(p) = queue.pop_front() {
            for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                let q = Position::new(p.row + dr, p.col + dc);
                if sm.known_tiles.get(&q) != Some(&CellKind::Wall)
                    && q.row >= 0 && q.row < 7 && q.col >= 0 && q.col < 7
                    && !dist.contains_key(&q)
                {
                    dist.insert(q, dist[&p] + 1);
                    queue.push_back(q);
                }
            }
        }
        assert_eq!(tiles.len(), dist[&to]);
    }

    #[test]
    fn enclosed_goal_is_no_path() {
        let mut sm = open_room(7, 7);
        let goal = Position::new(3, 3);
        for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
            sm.known_tiles.insert(Position::new(goal.row + dr, goal.col + dc), CellKind::Wall);
        }
        assert_eq!(
            sm.path(Position::new(1, 1), goal),
            Err(PathError::NoPath { from: Position::new(1, 1), to: goal })
        );
    }

    #[test]
    fn unknown_tiles_are_traversable() {
        // Nothing observed at all: the planner optimistically routes
        // through unexplored space.
        let sm = SpatialMemory::new(10, 10, Position::new(1, 1), Orientation::South);
        let moves = sm.path(Position::new(1, 1), Position::new(4, 1)).unwrap();
        assert_eq!(moves, vec![Move::Forward, Move::Forward, Move::Forward]);
    }

    proptest! {
        /// Replaying a returned path never enters a known wall and always
        /// ends at the goal.
        #[test]
        fn paths_are_valid_when_found(
            walls in proptest::collection::btree_set((1i32..8, 1i32..8), 0..20),
            from_seed in (1i32..8, 1i32..8),
            to_seed in (1i32..8, 1i32..8),
        ) {
            let mut sm = open_room(9, 9);
            for (row, col) in &walls {
                sm.known_tiles.insert(Position::new(*row, *col), CellKind::Wall);
            }
            let from = Position::new(from_seed.0, from_seed.1);
            let to = Position::new(to_seed.0, to_seed.1);
            prop_assume!(sm.known_tiles[&from] != CellKind::Wall);
            if let Ok(moves) = sm.path(from, to) {
                let mut pos = from;
                let mut facing = sm.orientation;
                for mv in moves {
                    match mv {
                        Move::TurnLeft => facing = facing.turned_left(),
                        Move::TurnRight => facing = facing.turned_right(),
                        Move::Forward => {
                            let (dr, dc) = facing.delta();
                            pos = Position::new(pos.row + dr, pos.col + dc);
                            prop_assert!(sm.known_tiles.get(&pos) != Some(&CellKind::Wall));
                        }
                        other => prop_assert!(false, "unexpected primitive {other:?}"),
                    }
                }
                prop_assert_eq!(pos, to);
            }
        }
    }
}
