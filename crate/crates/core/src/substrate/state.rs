//! World state operations: movement, regrowth, zapping, respawn,
//! termination, and the event fold used by replay.

use std::collections::BTreeSet;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::{
    Cell, CellKind, EntityKind, EntityState, GridState, Move, Orientation, Position,
    SubstrateError, Terminal, TreeId, WorldEvent,
};

/// The default 18x24 map with six apple trees and a spawn strip at the top.
pub const DEFAULT_MAP: &str = include_str!("../../data/maps/default.map");
/// A map with a single tree in the middle of the grid.
pub const ONE_TREE_MAP: &str = include_str!("../../data/maps/one_tree.map");

/// Integer offsets `(dr, dc)` with `0 < dr^2 + dc^2 <= radius^2`, row-major.
pub fn l2_offsets(radius: f64) -> Vec<(i32, i32)> {
    if radius <= 0.0 {
        return Vec::new();
    }
    let r = radius.floor() as i32;
    let mut out = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if (dr, dc) == (0, 0) {
                continue;
            }
            if ((dr * dr + dc * dc) as f64) <= radius * radius {
                out.push((dr, dc));
            }
        }
    }
    out
}

impl GridState {
    pub fn dims(&self) -> (i32, i32) {
        (self.height, self.width)
    }

    pub fn in_bounds(&self, p: Position) -> bool {
        p.row >= 0 && p.row < self.height && p.col >= 0 && p.col < self.width
    }

    pub fn cell(&self, p: Position) -> Option<&Cell> {
        if self.in_bounds(p) {
            Some(&self.cells[(p.row * self.width + p.col) as usize])
        } else {
            None
        }
    }

    fn cell_mut(&mut self, p: Position) -> &mut Cell {
        let idx = (p.row * self.width + p.col) as usize;
        &mut self.cells[idx]
    }

    /// Overwrites a cell directly. Fixture support for tests and synthetic
    /// states; episode dynamics never call this.
    pub fn cell_force(&mut self, p: Position, cell: Cell) {
        *self.cell_mut(p) = cell;
    }

    pub fn apple_count(&self) -> u32 {
        self.cells.iter().filter(|c| c.kind == CellKind::Apple).count() as u32
    }

    pub fn entity(&self, id: &str) -> Option<&EntityState> {
        self.entities.iter().find(|e| e.id == id)
    }

    fn entity_mut(&mut self, id: &str) -> Option<&mut EntityState> {
        self.entities.iter_mut().find(|e| e.id == id)
    }

    pub fn entity_at(&self, p: Position) -> Option<&EntityState> {
        self.entities.iter().find(|e| e.position == Some(p))
    }

    /// The tree a tile belongs to, through the fixed membership computed at
    /// map load. Works for bare ground, whose cell carries no tree id.
    pub fn tree_of_tile(&self, p: Position) -> Option<TreeId> {
        self.trees.iter().find(|t| t.member_tiles.contains(&p)).map(|t| t.id)
    }

    /// Apples currently on a given tree.
    pub fn tree_apple_count(&self, tree: TreeId) -> u32 {
        self.trees
            .get(tree as usize)
            .map(|t| {
                t.member_tiles
                    .iter()
                    .filter(|p| self.cell(**p).map(|c| c.kind) == Some(CellKind::Apple))
                    .count() as u32
            })
            .unwrap_or(0)
    }

    /// Places a new entity on the grid. Fails if the tile is a wall or
    /// already occupied.
    pub fn add_entity(
        &mut self,
        id: &str,
        kind: EntityKind,
        position: Position,
        orientation: Orientation,
    ) -> Result<(), SubstrateError> {
        if !self.is_walkable(position) {
            return Err(SubstrateError::TileOccupied(position));
        }
        self.entities.push(EntityState {
            id: id.to_string(),
            kind,
            position: Some(position),
            orientation,
            cumulative_reward: 0.0,
            skips_remaining: 0,
        });
        Ok(())
    }

    fn is_walkable(&self, p: Position) -> bool {
        match self.cell(p) {
            Some(c) if c.kind != CellKind::Wall => self.entity_at(p).is_none(),
            _ => false,
        }
    }

    /// All in-bounds tiles other than `p` within L2 distance `radius`,
    /// row-major.
    pub fn neighbors_l2(&self, p: Position, radius: f64) -> Vec<Position> {
        l2_offsets(radius)
            .into_iter()
            .map(|(dr, dc)| Position::new(p.row + dr, p.col + dc))
            .filter(|q| self.in_bounds(*q))
            .collect()
    }

    /// One synchronous regrowth pass. Apple counts are frozen at entry, so
    /// tile order cannot influence outcomes: every grass tile with no apple
    /// within radius 2 dies to bare ground; the rest may grow an apple with
    /// the configured probability for their neighborhood count. Afterwards
    /// bare ground within radius 2 of any apple that just grew reverts to
    /// grass. Tiles under an entity never grow an apple.
    pub fn regrowth_step(&mut self) -> Vec<WorldEvent> {
        let offsets = l2_offsets(2.0);
        let mut apples = BTreeSet::new();
        let mut grass = Vec::new();
        for row in 0..self.height {
            for col in 0..self.width {
                let p = Position::new(row, col);
                match self.cell(p).unwrap().kind {
                    CellKind::Apple => {
                        apples.insert(p);
                    }
                    CellKind::Grass => grass.push(p),
                    _ => {}
                }
            }
        }
        let occupied: BTreeSet<Position> =
            self.entities.iter().filter_map(|e| e.position).collect();

        let mut events = Vec::new();
        let mut new_apples = Vec::new();
        for g in grass {
            let k = offsets
                .iter()
                .filter(|(dr, dc)| apples.contains(&Position::new(g.row + dr, g.col + dc)))
                .count();
            if k == 0 {
                let tree = self.cell(g).unwrap().tree_id.expect("grass carries a tree id");
                let cell = self.cell_mut(g);
                *cell = Cell { kind: CellKind::BareGround, tree_id: None };
                events.push(WorldEvent::GrassDisappeared { at: g, tree });
                continue;
            }
            if occupied.contains(&g) {
                continue;
            }
            let p = self.config.regrowth_probability[k.min(3)];
            if self.rng.gen::<f64>() < p {
                let cell = self.cell_mut(g);
                cell.kind = CellKind::Apple;
                let tree = cell.tree_id.expect("grass carries a tree id");
                events.push(WorldEvent::AppleGrew { at: g, tree });
                new_apples.push(g);
            }
        }

        if !new_apples.is_empty() {
            for row in 0..self.height {
                for col in 0..self.width {
                    let b = Position::new(row, col);
                    if self.cell(b).unwrap().kind != CellKind::BareGround {
                        continue;
                    }
                    if new_apples.iter().any(|a| a.l2_distance(&b) <= 2.0) {
                        if let Some(tree) = self.tree_of_tile(b) {
                            *self.cell_mut(b) = Cell { kind: CellKind::Grass, tree_id: Some(tree) };
                            events.push(WorldEvent::GrassGrew { at: b, tree });
                        }
                    }
                }
            }
        }
        events
    }

    /// Performs one primitive move. Blocked translations (wall, edge, or an
    /// occupied tile) degrade to a no-op with a [`WorldEvent::MoveBlocked`].
    /// Stepping onto an apple takes it: the tile turns to grass and the
    /// entity earns a reward of 1.
    pub fn move_entity(&mut self, id: &str, mv: Move) -> Result<Vec<WorldEvent>, SubstrateError> {
        let entity =
            self.entity(id).ok_or_else(|| SubstrateError::UnknownEntity(id.to_string()))?;
        let from = entity.position.ok_or_else(|| SubstrateError::EntityRemoved(id.to_string()))?;
        let orientation = entity.orientation;
        self.step += 1;

        let mut events = Vec::new();
        match mv {
            Move::Noop => {}
            Move::TurnLeft | Move::TurnRight => {
                let next = if mv == Move::TurnLeft {
                    orientation.turned_left()
                } else {
                    orientation.turned_right()
                };
                self.entity_mut(id).unwrap().orientation = next;
                events.push(WorldEvent::Turned { id: id.to_string(), orientation: next });
            }
            Move::Forward | Move::Back | Move::StepLeft | Move::StepRight => {
                let (dr, dc) = match mv {
                    Move::Forward => orientation.delta(),
                    Move::Back => {
                        let (dr, dc) = orientation.delta();
                        (-dr, -dc)
                    }
                    Move::StepLeft => orientation.turned_left().delta(),
                    Move::StepRight => orientation.turned_right().delta(),
                    _ => unreachable!(),
                };
                let to = Position::new(from.row + dr, from.col + dc);
                if !self.is_walkable(to) {
                    events.push(WorldEvent::MoveBlocked {
                        id: id.to_string(),
                        at: from,
                        toward: to,
                    });
                } else {
                    self.entity_mut(id).unwrap().position = Some(to);
                    events.push(WorldEvent::Moved { id: id.to_string(), from, to });
                    let cell = *self.cell(to).unwrap();
                    if cell.kind == CellKind::Apple {
                        let tree = cell.tree_id.expect("apple carries a tree id");
                        self.cell_mut(to).kind = CellKind::Grass;
                        self.entity_mut(id).unwrap().cumulative_reward += 1.0;
                        events.push(WorldEvent::AppleTaken { id: id.to_string(), at: to, tree });
                    }
                }
            }
        }
        Ok(events)
    }

    /// Tiles covered by a beam fired from `from` facing `orientation`, in
    /// projection order (distance first, then lateral offset). Each lateral
    /// column stops at the first wall or the map edge.
    pub fn beam_tiles(&self, from: Position, orientation: Orientation) -> Vec<Position> {
        let (fr, fc) = orientation.delta();
        let (pr, pc) = orientation.turned_right().delta();
        let half = (self.config.beam_width as i32 - 1) / 2;
        let mut blocked = vec![false; self.config.beam_width as usize];
        let mut tiles = Vec::new();
        for d in 1..=self.config.beam_length as i32 {
            for (i, w) in (-half..=half).enumerate() {
                if blocked[i] {
                    continue;
                }
                let p = Position::new(from.row + fr * d + pr * w, from.col + fc * d + pc * w);
                match self.cell(p) {
                    Some(c) if c.kind != CellKind::Wall => tiles.push(p),
                    _ => blocked[i] = true,
                }
            }
        }
        tiles
    }

    /// Fires the attack beam. Always yields an `AttackAttempted`; if the
    /// beam reaches an active entity, the nearest one is hit and removed
    /// from the game for the configured number of its scheduled moves.
    pub fn fire_zap(&mut self, id: &str) -> Result<Vec<WorldEvent>, SubstrateError> {
        let entity =
            self.entity(id).ok_or_else(|| SubstrateError::UnknownEntity(id.to_string()))?;
        let from = entity.position.ok_or_else(|| SubstrateError::EntityRemoved(id.to_string()))?;
        let beam = self.beam_tiles(from, entity.orientation);
        self.step += 1;

        let mut events =
            vec![WorldEvent::AttackAttempted { id: id.to_string(), beam: beam.clone() }];
        let hit = beam.iter().find_map(|p| {
            self.entity_at(*p).filter(|e| e.id != id).map(|e| (e.id.clone(), *p))
        });
        if let Some((target, at)) = hit {
            let steps = self.config.removal_steps;
            let victim = self.entity_mut(&target).unwrap();
            victim.position = None;
            victim.skips_remaining = steps;
            events.push(WorldEvent::AttackHit { attacker: id.to_string(), target, at });
        }
        Ok(events)
    }

    /// Consumes one scheduled move of a removed entity. Returns true when
    /// that was the last one: the entity is now waiting for respawn.
    pub fn consume_removal_skip(&mut self, id: &str) -> bool {
        if let Some(e) = self.entity_mut(id) {
            if e.position.is_none() && e.skips_remaining > 0 {
                e.skips_remaining -= 1;
                return e.skips_remaining == 0;
            }
        }
        false
    }

    /// Revives every entity whose removal has elapsed on a uniformly drawn
    /// free spawn tile. When no spawn tile is free the respawn is deferred
    /// to a later tick.
    pub fn respawn_tick(&mut self) -> Vec<WorldEvent> {
        let due: Vec<String> = self
            .entities
            .iter()
            .filter(|e| e.position.is_none() && e.skips_remaining == 0)
            .map(|e| e.id.clone())
            .collect();
        let mut events = Vec::new();
        for id in due {
            let free: Vec<Position> = self
                .config
                .spawn_tiles
                .iter()
                .copied()
                .filter(|p| self.entity_at(*p).is_none())
                .collect();
            if free.is_empty() {
                events.push(WorldEvent::RespawnDeferred { id });
                continue;
            }
            let at = free[self.rng.gen_range(0..free.len())];
            self.entity_mut(&id).unwrap().position = Some(at);
            events.push(WorldEvent::Respawned { id, at });
        }
        events
    }

    /// Whether the episode is over: all apples consumed, or the configured
    /// round limit reached.
    pub fn is_terminal(&self) -> Option<Terminal> {
        if self.apple_count() == 0 {
            Some(Terminal::ApplesExhausted)
        } else if self.round >= self.config.max_rounds {
            Some(Terminal::MaxRounds)
        } else {
            None
        }
    }

    /// Applies one logged event to the state. This is the replay fold: a
    /// log's world events applied in order over the initial state reproduce
    /// the final state.
    pub fn apply_event(&mut self, event: &WorldEvent) {
        match event {
            WorldEvent::Moved { id, to, .. } => {
                self.entity_mut(id).unwrap().position = Some(*to);
            }
            WorldEvent::Turned { id, orientation } => {
                self.entity_mut(id).unwrap().orientation = *orientation;
            }
            WorldEvent::MoveBlocked { .. }
            | WorldEvent::AttackAttempted { .. }
            | WorldEvent::RespawnDeferred { .. } => {}
            WorldEvent::AppleTaken { id, at, tree } => {
                *self.cell_mut(*at) = Cell { kind: CellKind::Grass, tree_id: Some(*tree) };
                self.entity_mut(id).unwrap().cumulative_reward += 1.0;
            }
            WorldEvent::AppleGrew { at, tree } => {
                *self.cell_mut(*at) = Cell { kind: CellKind::Apple, tree_id: Some(*tree) };
            }
            WorldEvent::GrassDisappeared { at, .. } => {
                *self.cell_mut(*at) = Cell { kind: CellKind::BareGround, tree_id: None };
            }
            WorldEvent::GrassGrew { at, tree } => {
                *self.cell_mut(*at) = Cell { kind: CellKind::Grass, tree_id: Some(*tree) };
            }
            WorldEvent::AttackHit { target, .. } => {
                let steps = self.config.removal_steps;
                let victim = self.entity_mut(target).unwrap();
                victim.position = None;
                victim.skips_remaining = steps;
            }
            WorldEvent::Respawned { id, at } => {
                let e = self.entity_mut(id).unwrap();
                e.position = Some(*at);
                e.skips_remaining = 0;
            }
        }
    }

    /// SHA-256 over the observable state: cells, entities (in roster
    /// order), step, round, and clock. The removal countdown is scheduler
    /// bookkeeping that events do not carry, so it stays out of the hash.
    pub fn state_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.width.to_le_bytes());
        hasher.update(self.height.to_le_bytes());
        for cell in &self.cells {
            let kind = match cell.kind {
                CellKind::Wall => b'W',
                CellKind::Empty => b'.',
                CellKind::Apple => b'A',
                CellKind::Grass => b'G',
                CellKind::BareGround => b',',
            };
            hasher.update([kind]);
            hasher.update(cell.tree_id.map(|t| t + 1).unwrap_or(0).to_le_bytes());
        }
        for e in &self.entities {
            hasher.update(e.id.as_bytes());
            hasher.update([0u8, if e.kind == EntityKind::Bot { 1 } else { 0 }]);
            match e.position {
                Some(p) => {
                    hasher.update([1u8]);
                    hasher.update(p.row.to_le_bytes());
                    hasher.update(p.col.to_le_bytes());
                }
                None => hasher.update([0u8; 9]),
            }
            hasher.update([e.orientation.name().as_bytes()[0]]);
            hasher.update(e.cumulative_reward.to_bits().to_le_bytes());
        }
        hasher.update(self.step.to_le_bytes());
        hasher.update(self.round.to_le_bytes());
        hasher.update(self.clock.format("%Y-%m-%d %H:%M:%S").to_string().as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Text rendering of the grid with entities overlaid by their roster
    /// index (1-9, then a-z). Used by replay printing.
    pub fn render_ascii(&self) -> String {
        let mut out = String::new();
        for row in 0..self.height {
            for col in 0..self.width {
                let p = Position::new(row, col);
                let ch = if let Some(i) = self.entities.iter().position(|e| e.position == Some(p))
                {
                    const MARKS: &[u8] = b"123456789abcdefghijklmnopqrstuvwxyz";
                    MARKS[i.min(MARKS.len() - 1)] as char
                } else {
                    match self.cell(p).unwrap().kind {
                        CellKind::Wall => 'W',
                        CellKind::Empty => '.',
                        CellKind::Apple => 'A',
                        CellKind::Grass => 'G',
                        CellKind::BareGround => ',',
                    }
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}
