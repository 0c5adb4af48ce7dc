//! The scripted bot policy: harvest greedily when an apple is visible,
//! otherwise zap with a configured probability or wander. Bots never plan;
//! they stand in for the pretrained background population, matching its
//! described behavior (unsustainable harvesting, attacks when no apples
//! are in sight).

use std::collections::VecDeque;

use rand::Rng;

use crate::substrate::{CellKind, GridState, Move, Orientation, Position, WorldEvent};
use crate::textifier::window_rect;

/// One bot move: step along the shortest route to the nearest visible
/// apple (ties row-major); with no apple in the window, fire the zapper
/// with probability `p_attack` or take a uniformly random move. All
/// randomness comes from the world RNG.
pub fn bot_step(state: &mut GridState, bot_id: &str, p_attack: f64) -> Vec<WorldEvent> {
    let Some(center) = state.entity(bot_id).and_then(|e| e.position) else {
        return Vec::new();
    };
    let orientation = state.entity(bot_id).unwrap().orientation;
    let rect = window_rect(state, center);

    let mut nearest: Option<(i64, Position)> = None;
    for row in rect.top..=rect.bottom {
        for col in rect.left..=rect.right {
            let p = Position::new(row, col);
            if state.cell(p).map(|c| c.kind) == Some(CellKind::Apple) {
                let dr = i64::from(p.row - center.row);
                let dc = i64::from(p.col - center.col);
                let d2 = dr * dr + dc * dc;
                if nearest.map(|(best, at)| (d2, p) < (best, at)).unwrap_or(true) {
                    nearest = Some((d2, p));
                }
            }
        }
    }

    if let Some((_, apple)) = nearest {
        if let Some(next) = first_step(state, center, apple) {
            let delta = (next.row - center.row, next.col - center.col);
            if let Some(mv) = translation_for(orientation, delta) {
                return state.move_entity(bot_id, mv).expect("bot is active");
            }
        }
        // No route (walled off): fall through to the idle policy.
    }

    let roll: f64 = state.rng.gen();
    if roll < p_attack {
        state.fire_zap(bot_id).expect("bot is active")
    } else {
        const WANDER: [Move; 6] = [
            Move::Forward,
            Move::Back,
            Move::StepLeft,
            Move::StepRight,
            Move::TurnLeft,
            Move::TurnRight,
        ];
        let mv = WANDER[state.rng.gen_range(0..WANDER.len())];
        state.move_entity(bot_id, mv).expect("bot is active")
    }
}

/// First tile of a shortest 4-neighbor path over non-wall tiles, ignoring
/// other entities (collisions resolve as blocked moves at execution).
fn first_step(state: &GridState, from: Position, to: Position) -> Option<Position> {
    if from == to {
        return None;
    }
    let (rows, cols) = state.dims();
    let index = |p: Position| (p.row * cols + p.col) as usize;
    let walkable = |p: Position| {
        state.cell(p).map(|c| c.kind != CellKind::Wall).unwrap_or(false)
    };
    let mut parent: Vec<Option<Position>> = vec![None; (rows * cols) as usize];
    let mut queue = VecDeque::from([from]);
    parent[index(from)] = Some(from);
    while let Some(p) = queue.pop_front() {
        if p == to {
            break;
        }
        for (dr, dc) in [(-1, 0), (0, -1), (0, 1), (1, 0)] {
            let q = Position::new(p.row + dr, p.col + dc);
            if walkable(q) && parent[index(q)].is_none() {
                parent[index(q)] = Some(p);
                queue.push_back(q);
            }
        }
    }
    parent[index(to)]?;
    let mut cursor = to;
    while parent[index(cursor)] != Some(from) {
        cursor = parent[index(cursor)].unwrap();
    }
    Some(cursor)
}

/// The sidestep primitive that moves one tile in `delta` without turning.
fn translation_for(orientation: Orientation, delta: (i32, i32)) -> Option<Move> {
    let forward = orientation.delta();
    let back = (-forward.0, -forward.1);
    let left = orientation.turned_left().delta();
    let right = orientation.turned_right().delta();
    if delta == forward {
        Some(Move::Forward)
    } else if delta == back {
        Some(Move::Back)
    } else if delta == left {
        Some(Move::StepLeft)
    } else if delta == right {
        Some(Move::StepRight)
    } else {
        None
    }
}
