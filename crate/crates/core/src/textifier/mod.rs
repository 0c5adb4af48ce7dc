//! Converts grid state and world events into the natural-language lines and
//! turn reports the agents consume. Every line is produced by substituting
//! into one of the templates shipped in `data/templates/observations.txt`,
//! and [`parse_line`] maps any emitted line back to the template and
//! arguments that produced it.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use chrono::NaiveDateTime;
use regex::Regex;

use crate::substrate::{CellKind, GridState, Orientation, Position, TreeId, WorldEvent};

const TEMPLATE_DATA: &str = include_str!("../../data/templates/observations.txt");

/// Which observation template a line comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TemplateId {
    OtherAgent,
    Grass,
    Apple,
    Tree,
    SomeoneAttacked,
    RayBeam,
    AppleTaken,
    GrassDisappeared,
    GrassGrew,
    AppleGrew,
    WasAttacked,
    OutOfGame,
}

impl TemplateId {
    pub const ALL: [TemplateId; 12] = [
        TemplateId::OtherAgent,
        TemplateId::Grass,
        TemplateId::Apple,
        TemplateId::Tree,
        TemplateId::SomeoneAttacked,
        TemplateId::RayBeam,
        TemplateId::AppleTaken,
        TemplateId::GrassDisappeared,
        TemplateId::GrassGrew,
        TemplateId::AppleGrew,
        TemplateId::WasAttacked,
        TemplateId::OutOfGame,
    ];

    fn key(&self) -> &'static str {
        match self {
            TemplateId::OtherAgent => "other_agent",
            TemplateId::Grass => "grass",
            TemplateId::Apple => "apple",
            TemplateId::Tree => "tree",
            TemplateId::SomeoneAttacked => "someone_attacked",
            TemplateId::RayBeam => "ray_beam",
            TemplateId::AppleTaken => "apple_taken",
            TemplateId::GrassDisappeared => "grass_disappeared",
            TemplateId::GrassGrew => "grass_grew",
            TemplateId::AppleGrew => "apple_grew",
            TemplateId::WasAttacked => "was_attacked",
            TemplateId::OutOfGame => "out_of_game",
        }
    }
}

fn templates() -> &'static BTreeMap<&'static str, &'static str> {
    static TEMPLATES: OnceLock<BTreeMap<&'static str, &'static str>> = OnceLock::new();
    TEMPLATES.get_or_init(|| {
        TEMPLATE_DATA
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split_once(": ").expect("template line is `key: text`"))
            .collect()
    })
}

/// A fully-bound observation: template plus arguments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Descriptor {
    OtherAgent { name: String, at: Position },
    Grass { at: Position, tree: TreeId },
    Apple { at: Position, tree: TreeId },
    Tree { tree: TreeId, at: Position, apples: u32, grass: u32 },
    SomeoneAttacked { at: Position },
    RayBeam { at: Position },
    AppleTakenBy { name: String, at: Position },
    GrassDisappeared { at: Position },
    GrassGrew { at: Position },
    AppleGrew { at: Position },
    WasAttacked { attacker: String },
    OutOfGame,
}

impl Descriptor {
    pub fn template_id(&self) -> TemplateId {
        match self {
            Descriptor::OtherAgent { .. } => TemplateId::OtherAgent,
            Descriptor::Grass { .. } => TemplateId::Grass,
            Descriptor::Apple { .. } => TemplateId::Apple,
            Descriptor::Tree { .. } => TemplateId::Tree,
            Descriptor::SomeoneAttacked { .. } => TemplateId::SomeoneAttacked,
            Descriptor::RayBeam { .. } => TemplateId::RayBeam,
            Descriptor::AppleTakenBy { .. } => TemplateId::AppleTaken,
            Descriptor::GrassDisappeared { .. } => TemplateId::GrassDisappeared,
            Descriptor::GrassGrew { .. } => TemplateId::GrassGrew,
            Descriptor::AppleGrew { .. } => TemplateId::AppleGrew,
            Descriptor::WasAttacked { .. } => TemplateId::WasAttacked,
            Descriptor::OutOfGame => TemplateId::OutOfGame,
        }
    }

    /// Position the line refers to; drives proximity sorting.
    pub fn subject(&self) -> Option<Position> {
        match self {
            Descriptor::OtherAgent { at, .. }
            | Descriptor::Grass { at, .. }
            | Descriptor::Apple { at, .. }
            | Descriptor::Tree { at, .. }
            | Descriptor::SomeoneAttacked { at }
            | Descriptor::RayBeam { at }
            | Descriptor::AppleTakenBy { at, .. }
            | Descriptor::GrassDisappeared { at }
            | Descriptor::GrassGrew { at }
            | Descriptor::AppleGrew { at } => Some(*at),
            Descriptor::WasAttacked { .. } | Descriptor::OutOfGame => None,
        }
    }
}

/// Renders a descriptor through its template, byte-for-byte.
pub fn describe(d: &Descriptor) -> String {
    let body = templates()[d.template_id().key()];
    let mut out = body.to_string();
    let mut sub = |ph: &str, val: String| {
        out = out.replace(ph, &val);
    };
    match d {
        Descriptor::OtherAgent { name, at } => {
            sub("<agent_name>", name.clone());
            sub("<x>", at.row.to_string());
            sub("<y>", at.col.to_string());
        }
        Descriptor::Grass { at, tree } | Descriptor::Apple { at, tree } => {
            sub("<x>", at.row.to_string());
            sub("<y>", at.col.to_string());
            sub("<tree_id>", tree.to_string());
        }
        Descriptor::Tree { tree, at, apples, grass } => {
            sub("<tree_id>", tree.to_string());
            sub("<x>", at.row.to_string());
            sub("<y>", at.col.to_string());
            sub("<apples_number>", apples.to_string());
            sub("<grass_number>", grass.to_string());
        }
        Descriptor::SomeoneAttacked { at }
        | Descriptor::RayBeam { at }
        | Descriptor::GrassDisappeared { at }
        | Descriptor::GrassGrew { at }
        | Descriptor::AppleGrew { at } => {
            sub("<x>", at.row.to_string());
            sub("<y>", at.col.to_string());
        }
        Descriptor::AppleTakenBy { name, at } => {
            sub("<agent_name>", name.clone());
            sub("<x>", at.row.to_string());
            sub("<y>", at.col.to_string());
        }
        Descriptor::WasAttacked { attacker } => {
            sub("<agent_name>", attacker.clone());
        }
        Descriptor::OutOfGame => {}
    }
    out
}

/// One rendered observation with the metadata needed for sorting.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationLine {
    pub text: String,
    pub subject_position: Position,
    pub kind: TemplateId,
}

pub fn observation_line(d: &Descriptor) -> ObservationLine {
    ObservationLine {
        text: describe(d),
        subject_position: d.subject().unwrap_or_default(),
        kind: d.template_id(),
    }
}

struct LineParsers {
    other_agent: Regex,
    grass: Regex,
    apple: Regex,
    tree: Regex,
    someone_attacked: Regex,
    ray_beam: Regex,
    apple_taken: Regex,
    grass_disappeared: Regex,
    grass_grew: Regex,
    apple_grew: Regex,
    was_attacked: Regex,
    out_of_game: Regex,
}

fn parsers() -> &'static LineParsers {
    static PARSERS: OnceLock<LineParsers> = OnceLock::new();
    PARSERS.get_or_init(|| LineParsers {
        other_agent: Regex::new(r"^Observed agent (.+) at position \[(-?\d+), (-?\d+)\]\.$")
            .unwrap(),
        grass: Regex::new(
            r"^Observed grass to grow apples at position \[(-?\d+), (-?\d+)\]\. This grass belongs to tree (\d+)\.$",
        )
        .unwrap(),
        apple: Regex::new(
            r"^Observed an apple at position \[(-?\d+), (-?\d+)\]\. This apple belongs to tree (\d+)\.$",
        )
        .unwrap(),
        tree: Regex::new(
            r"^Observed tree (\d+) at position \[(-?\d+), (-?\d+)\]\. This tree has (\d+) apples remaining and (\d+) grass for apples growing on the observed map\. The tree might have more apples and grass on the global map\.$",
        )
        .unwrap(),
        someone_attacked: Regex::new(r"^Someone was attacked at position \[(-?\d+), (-?\d+)\]\.$")
            .unwrap(),
        ray_beam: Regex::new(
            r"^Observed a ray beam from an attack at position \[(-?\d+), (-?\d+)\]\.$",
        )
        .unwrap(),
        apple_taken: Regex::new(
            r"^Observed that agent (.+) took an apple from position \[(-?\d+), (-?\d+)\]\.$",
        )
        .unwrap(),
        grass_disappeared: Regex::new(
            r"^Observed that the grass at position \[(-?\d+), (-?\d+)\] disappeared\.$",
        )
        .unwrap(),
        grass_grew: Regex::new(
            r"^Observed that grass to grow apples appeared at position \[(-?\d+), (-?\d+)\]\.$",
        )
        .unwrap(),
        apple_grew: Regex::new(r"^Observed that an apple grew at position \[(-?\d+), (-?\d+)\]\.$")
            .unwrap(),
        was_attacked: Regex::new(
            r"^There are no observations: You were attacked by agent (.+) and currently you're out of the game\.$",
        )
        .unwrap(),
        out_of_game: Regex::new(r"^There are no observations: you're out of the game\.$").unwrap(),
    })
}

/// Maps an emitted line back to the (template, arguments) pair that made it.
/// Returns `None` for text the textifier never produces.
pub fn parse_line(text: &str) -> Option<Descriptor> {
    let p = parsers();
    let pos = |c: &regex::Captures, i: usize| -> Position {
        Position::new(c[i].parse().unwrap(), c[i + 1].parse().unwrap())
    };
    if let Some(c) = p.apple.captures(text) {
        return Some(Descriptor::Apple { at: pos(&c, 1), tree: c[3].parse().unwrap() });
    }
    if let Some(c) = p.grass.captures(text) {
        return Some(Descriptor::Grass { at: pos(&c, 1), tree: c[3].parse().unwrap() });
    }
    if let Some(c) = p.tree.captures(text) {
        return Some(Descriptor::Tree {
            tree: c[1].parse().unwrap(),
            at: pos(&c, 2),
            apples: c[4].parse().unwrap(),
            grass: c[5].parse().unwrap(),
        });
    }
    if let Some(c) = p.apple_taken.captures(text) {
        return Some(Descriptor::AppleTakenBy { name: c[1].to_string(), at: pos(&c, 2) });
    }
    if let Some(c) = p.other_agent.captures(text) {
        return Some(Descriptor::OtherAgent { name: c[1].to_string(), at: pos(&c, 2) });
    }
    if let Some(c) = p.someone_attacked.captures(text) {
        return Some(Descriptor::SomeoneAttacked { at: pos(&c, 1) });
    }
    if let Some(c) = p.ray_beam.captures(text) {
        return Some(Descriptor::RayBeam { at: pos(&c, 1) });
    }
    if let Some(c) = p.grass_disappeared.captures(text) {
        return Some(Descriptor::GrassDisappeared { at: pos(&c, 1) });
    }
    if let Some(c) = p.grass_grew.captures(text) {
        return Some(Descriptor::GrassGrew { at: pos(&c, 1) });
    }
    if let Some(c) = p.apple_grew.captures(text) {
        return Some(Descriptor::AppleGrew { at: pos(&c, 1) });
    }
    if let Some(c) = p.was_attacked.captures(text) {
        return Some(Descriptor::WasAttacked { attacker: c[1].to_string() });
    }
    if p.out_of_game.is_match(text) {
        return Some(Descriptor::OutOfGame);
    }
    None
}

/// An inclusive, bounds-clipped rectangle of visible tiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRect {
    pub top: i32,
    pub left: i32,
    pub bottom: i32,
    pub right: i32,
}

impl WindowRect {
    pub fn contains(&self, p: Position) -> bool {
        p.row >= self.top && p.row <= self.bottom && p.col >= self.left && p.col <= self.right
    }
}

/// The egocentric window around `center`, clipped at the map edges.
pub fn window_rect(state: &GridState, center: Position) -> WindowRect {
    let (rows, cols) = state.dims();
    let h = state.config.window_height as i32;
    let w = state.config.window_width as i32;
    WindowRect {
        top: (center.row - (h - 1) / 2).max(0),
        left: (center.col - (w - 1) / 2).max(0),
        bottom: (center.row + h / 2).min(rows - 1),
        right: (center.col + w / 2).min(cols - 1),
    }
}

/// Everything a given agent can currently see: apples, grass, other agents,
/// plus one summary per tree with tiles in view (apple and grass counts over
/// the visible window only). Removed agents see nothing.
pub fn visible_window(state: &GridState, agent_id: &str) -> Vec<Descriptor> {
    let Some(center) = state.entity(agent_id).and_then(|e| e.position) else {
        return Vec::new();
    };
    let rect = window_rect(state, center);
    let mut objects = Vec::new();
    let mut tree_stats: BTreeMap<TreeId, (Position, u32, u32)> = BTreeMap::new();
    for row in rect.top..=rect.bottom {
        for col in rect.left..=rect.right {
            let p = Position::new(row, col);
            let cell = state.cell(p).expect("window is clipped in-bounds");
            match (cell.kind, cell.tree_id) {
                (CellKind::Apple, Some(tree)) => {
                    objects.push(Descriptor::Apple { at: p, tree });
                    let entry = tree_stats.entry(tree).or_insert((p, 0, 0));
                    entry.1 += 1;
                }
                (CellKind::Grass, Some(tree)) => {
                    objects.push(Descriptor::Grass { at: p, tree });
                    let entry = tree_stats.entry(tree).or_insert((p, 0, 0));
                    entry.2 += 1;
                }
                _ => {}
            }
            if let Some(e) = state.entity_at(p) {
                if e.id != agent_id {
                    objects.push(Descriptor::OtherAgent { name: e.id.clone(), at: p });
                }
            }
        }
    }
    for (tree, (at, apples, grass)) in tree_stats {
        objects.push(Descriptor::Tree { tree, at, apples, grass });
    }
    objects
}

/// The observable pieces of a world event, if any. Movement and scheduling
/// events leave no line.
pub fn event_descriptors(event: &WorldEvent) -> Vec<Descriptor> {
    match event {
        WorldEvent::AppleTaken { id, at, .. } => {
            vec![Descriptor::AppleTakenBy { name: id.clone(), at: *at }]
        }
        WorldEvent::AppleGrew { at, .. } => vec![Descriptor::AppleGrew { at: *at }],
        WorldEvent::GrassDisappeared { at, .. } => vec![Descriptor::GrassDisappeared { at: *at }],
        WorldEvent::GrassGrew { at, .. } => vec![Descriptor::GrassGrew { at: *at }],
        WorldEvent::AttackAttempted { beam, .. } => {
            beam.iter().map(|p| Descriptor::RayBeam { at: *p }).collect()
        }
        WorldEvent::AttackHit { at, .. } => vec![Descriptor::SomeoneAttacked { at: *at }],
        WorldEvent::Moved { .. }
        | WorldEvent::Turned { .. }
        | WorldEvent::MoveBlocked { .. }
        | WorldEvent::Respawned { .. }
        | WorldEvent::RespawnDeferred { .. } => Vec::new(),
    }
}

pub fn format_datetime(t: NaiveDateTime) -> String {
    t.format("%Y-%m-%d %H:%M:%S").to_string()
}

/// Renders the state changes an agent observed while waiting: one
/// timestamped line per observable event that fell inside the given window
/// at its time, in chronological (input) order.
pub fn diff_events(events: &[(NaiveDateTime, WorldEvent)], window: &WindowRect) -> Vec<String> {
    let mut lines = Vec::new();
    for (time, event) in events {
        for d in event_descriptors(event) {
            match d.subject() {
                Some(p) if window.contains(p) => {
                    lines.push(format!("{} At {}", describe(&d), format_datetime(*time)));
                }
                _ => {}
            }
        }
    }
    lines
}

/// Inputs for one turn report, already filtered and ordered by the caller.
#[derive(Debug, Clone)]
pub struct ReportInputs<'a> {
    pub last_action: &'a str,
    pub event_lines: &'a [String],
    pub now: NaiveDateTime,
    pub reward: f64,
    pub position: Position,
    pub orientation: Orientation,
    pub current_lines: &'a [ObservationLine],
}

/// Renders the full turn report an active agent perceives.
pub fn compose_report(inputs: &ReportInputs) -> String {
    let mut out = String::new();
    out.push_str(&format!("I took the action \"{}\" in my last turn. \n", inputs.last_action));
    out.push_str("Since then, the following changes in the environment have been observed: \n");
    for line in inputs.event_lines {
        out.push_str(line);
        out.push('\n');
    }
    out.push_str(&format!(
        "Now it's {} and the reward obtained by me is {:?}. I am  at the position ({}, {}) looking to the {}. \n",
        format_datetime(inputs.now),
        inputs.reward,
        inputs.position.row,
        inputs.position.col,
        inputs.orientation.name(),
    ));
    out.push_str("I can currently observe the following:");
    for line in inputs.current_lines {
        out.push('\n');
        out.push_str(&line.text);
    }
    out
}

/// The report a removed agent receives: the attacker is named on the first
/// report after the hit, afterwards only the out-of-game marker remains.
pub fn compose_out_of_game_report(attacker: Option<&str>) -> String {
    match attacker {
        Some(name) => describe(&Descriptor::WasAttacked { attacker: name.to_string() }),
        None => describe(&Descriptor::OutOfGame),
    }
}
