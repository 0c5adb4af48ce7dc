//! The high-level action grammar: `immobilize player (player_name) at
//! (x, y)`, `go to position (x, y)`, `stay put`, and `explore (x, y)`.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::substrate::Position;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum HighLevelAction {
    Immobilize { player: String, at: Position },
    GoTo { to: Position },
    StayPut,
    Explore { to: Position },
}

impl fmt::Display for HighLevelAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HighLevelAction::Immobilize { player, at } => {
                write!(f, "immobilize player {player} at ({}, {})", at.row, at.col)
            }
            HighLevelAction::GoTo { to } => write!(f, "go to position ({}, {})", to.row, to.col),
            HighLevelAction::StayPut => write!(f, "stay put"),
            HighLevelAction::Explore { to } => write!(f, "explore ({}, {})", to.row, to.col),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("`{0}` is not a valid action")]
pub struct NoMatch(pub String);

struct ActionGrammar {
    stay_put: Regex,
    go_to: Regex,
    explore: Regex,
    immobilize: Regex,
}

fn grammar() -> &'static ActionGrammar {
    static GRAMMAR: OnceLock<ActionGrammar> = OnceLock::new();
    GRAMMAR.get_or_init(|| ActionGrammar {
        stay_put: Regex::new(r"(?i)^stay\s+put$").unwrap(),
        go_to: Regex::new(r"(?i)^go\s+to\s+position\s*\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)$").unwrap(),
        explore: Regex::new(r"(?i)^explore\s*\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)$").unwrap(),
        immobilize: Regex::new(
            r"(?i)^immobilize\s+player\s+(\S+)\s+at\s*\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)$",
        )
        .unwrap(),
    })
}

/// Case-insensitive, whitespace-tolerant match against the four action
/// grammars. A trailing period is tolerated; out-of-range coordinates fail
/// to parse rather than panic.
pub fn parse_action(text: &str) -> Result<HighLevelAction, NoMatch> {
    let cleaned = text.trim().trim_end_matches('.').trim();
    let g = grammar();
    let coord = |c: &regex::Captures, i: usize| -> Option<Position> {
        Some(Position::new(c[i].parse().ok()?, c[i + 1].parse().ok()?))
    };
    if g.stay_put.is_match(cleaned) {
        return Ok(HighLevelAction::StayPut);
    }
    if let Some(c) = g.go_to.captures(cleaned) {
        if let Some(to) = coord(&c, 1) {
            return Ok(HighLevelAction::GoTo { to });
        }
    }
    if let Some(c) = g.explore.captures(cleaned) {
        if let Some(to) = coord(&c, 1) {
            return Ok(HighLevelAction::Explore { to });
        }
    }
    if let Some(c) = g.immobilize.captures(cleaned) {
        if let Some(at) = coord(&c, 2) {
            return Ok(HighLevelAction::Immobilize { player: c[1].to_string(), at });
        }
    }
    Err(NoMatch(text.to_string()))
}

/// Bounds and roster against which a parsed action is validated.
#[derive(Debug, Clone)]
pub struct ActionValidator {
    pub rows: i32,
    pub cols: i32,
    pub entities: Vec<String>,
}

impl ActionValidator {
    pub fn validate(&self, action: &HighLevelAction) -> Result<(), String> {
        let check_bounds = |p: &Position| -> Result<(), String> {
            if p.row < 0 || p.row >= self.rows || p.col < 0 || p.col >= self.cols {
                Err(format!("position ({}, {}) is out of bounds", p.row, p.col))
            } else {
                Ok(())
            }
        };
        match action {
            HighLevelAction::StayPut => Ok(()),
            HighLevelAction::GoTo { to } | HighLevelAction::Explore { to } => check_bounds(to),
            HighLevelAction::Immobilize { player, at } => {
                check_bounds(at)?;
                if self.entities.iter().any(|e| e == player) {
                    Ok(())
                } else {
                    Err(format!("unknown player `{player}`"))
                }
            }
        }
    }
}
