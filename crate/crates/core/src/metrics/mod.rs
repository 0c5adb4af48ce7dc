//! Every evaluation indicator, computed purely from an episode log:
//! per-capita reward, attack counts, the last-apple approach indicator,
//! tree depletions, and apple availability, plus CSV/SVG export and batch
//! aggregation across seeds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::log::{EpisodeLog, Header, LogRecord, RecordBody, ReplayError};
use crate::substrate::{CellKind, EntityKind, GridState, Position, WorldEvent};
use crate::textifier::window_rect;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("log cannot be folded: {0}")]
    Replay(#[from] ReplayError),
    #[error("population `{0}` is empty in this log")]
    EmptyPopulation(String),
}

/// Which entities a metric aggregates over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Population {
    Focal,
    Bots,
    Entity(String),
}

impl Population {
    pub fn label(&self) -> String {
        match self {
            Population::Focal => "focal".into(),
            Population::Bots => "bots".into(),
            Population::Entity(id) => id.clone(),
        }
    }

    fn members(&self, header: &Header) -> Vec<String> {
        header
            .roster
            .iter()
            .filter(|e| match self {
                Population::Focal => e.kind == EntityKind::LlmAgent,
                Population::Bots => e.kind == EntityKind::Bot,
                Population::Entity(id) => &e.id == id,
            })
            .map(|e| e.id.clone())
            .collect()
    }
}

/// One per-round series. `points` pairs round indices with values; a
/// terminal partial round appears as one extra index past the last
/// completed round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub name: String,
    pub population: String,
    pub points: Vec<(u32, f64)>,
}

/// Folds the log's world events over the initial state without hash
/// verification, invoking `visit` with the state *before* each record.
fn fold_events(
    log: &EpisodeLog,
    mut visit: impl FnMut(&GridState, &LogRecord),
) -> Result<GridState, ReplayError> {
    let mut state = log.initial_state()?;
    for record in &log.records {
        visit(&state, record);
        if let RecordBody::Event(event) = &record.body {
            state.apply_event(event);
        }
        if let RecordBody::Round { completed } = &record.body {
            state.round = *completed;
        }
    }
    Ok(state)
}

fn header(log: &EpisodeLog) -> Result<&Header, ReplayError> {
    log.header().ok_or(ReplayError::MissingHeader)
}

/// Cumulative population reward divided by population size, at each round
/// boundary.
pub fn per_capita_reward(
    log: &EpisodeLog,
    population: &Population,
) -> Result<MetricSeries, MetricsError> {
    let members = population.members(header(log)?);
    if members.is_empty() {
        return Err(MetricsError::EmptyPopulation(population.label()));
    }
    let size = members.len() as f64;
    let mut points = vec![(0u32, 0.0)];
    let mut cumulative = 0.0;
    let mut last_round = 0u32;
    let final_state = fold_events(log, |_, record| match &record.body {
        RecordBody::Event(WorldEvent::AppleTaken { id, .. }) => {
            if members.iter().any(|m| m == id) {
                cumulative += 1.0;
            }
        }
        RecordBody::Round { completed } => {
            points.push((*completed, cumulative / size));
            last_round = *completed;
        }
        _ => {}
    })?;
    let tail: f64 =
        members.iter().filter_map(|m| final_state.entity(m)).map(|e| e.cumulative_reward).sum();
    if (tail / size - points.last().unwrap().1).abs() > 0.0 {
        points.push((last_round + 1, tail / size));
    }
    Ok(MetricSeries { name: "per_capita_reward".into(), population: population.label(), points })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackStats {
    pub attempted: u32,
    pub effective: u32,
}

/// Attack attempts and hits per entity plus the focal and bot aggregates.
pub fn attack_stats(log: &EpisodeLog) -> Result<BTreeMap<String, AttackStats>, MetricsError> {
    let header = header(log)?;
    let mut stats: BTreeMap<String, AttackStats> = BTreeMap::new();
    for entry in &header.roster {
        stats.insert(entry.id.clone(), AttackStats::default());
    }
    stats.insert("focal".into(), AttackStats::default());
    stats.insert("bots".into(), AttackStats::default());
    let kind_of = |id: &str| {
        header.roster.iter().find(|e| e.id == id).map(|e| e.kind)
    };
    for (_, event) in log.events() {
        let (attacker, effective) = match event {
            WorldEvent::AttackAttempted { id, .. } => (id, false),
            WorldEvent::AttackHit { attacker, .. } => (attacker, true),
            _ => continue,
        };
        let group = match kind_of(attacker) {
            Some(EntityKind::LlmAgent) => "focal",
            Some(EntityKind::Bot) => "bots",
            None => continue,
        };
        for key in [attacker.as_str(), group] {
            let entry = stats.entry(key.to_string()).or_default();
            if effective {
                entry.effective += 1;
            } else {
                entry.attempted += 1;
            }
        }
    }
    Ok(stats)
}

/// The last-apple indicator for one agent, in both the plain form (nearest
/// apple anywhere on the map) and the visibility-filtered variant (nearest
/// apple within the agent's window). Ratios are `None` when the agent was
/// never in the measured situation, never 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LastAppleStats {
    pub approaches: u32,
    pub opportunities: u32,
    pub ratio: Option<f64>,
    pub visible_approaches: u32,
    pub visible_opportunities: u32,
    pub visible_ratio: Option<f64>,
}

/// Counts, per primitive move of `agent`, how often it closed the distance
/// to a tree's sole remaining apple while that apple was its nearest,
/// divided by how often its nearest apple was a tree's sole remaining one.
pub fn last_apple_approach(
    log: &EpisodeLog,
    agent: &str,
) -> Result<LastAppleStats, MetricsError> {
    let mut stats = LastAppleStats::default();
    fold_events(log, |state, record| {
        let RecordBody::Event(event) = &record.body else { return };
        let (id, to) = match event {
            WorldEvent::Moved { id, to, .. } => (id, Some(*to)),
            WorldEvent::Turned { id, .. } => (id, None),
            WorldEvent::MoveBlocked { id, .. } => (id, None),
            _ => return,
        };
        if id != agent {
            return;
        }
        let Some(from) = state.entity(agent).and_then(|e| e.position) else { return };
        let after = to.unwrap_or(from);

        let dist2 = |a: Position, b: Position| -> i64 {
            let dr = i64::from(a.row - b.row);
            let dc = i64::from(a.col - b.col);
            dr * dr + dc * dc
        };
        let (rows, cols) = state.dims();
        let mut nearest: Option<(i64, Position)> = None;
        let mut nearest_visible: Option<(i64, Position)> = None;
        let window = window_rect(state, from);
        for row in 0..rows {
            for col in 0..cols {
                let p = Position::new(row, col);
                if state.cell(p).map(|c| c.kind) != Some(CellKind::Apple) {
                    continue;
                }
                let d = dist2(from, p);
                if nearest.map(|(bd, bp)| (d, p) < (bd, bp)).unwrap_or(true) {
                    nearest = Some((d, p));
                }
                if window.contains(p)
                    && nearest_visible.map(|(bd, bp)| (d, p) < (bd, bp)).unwrap_or(true)
                {
                    nearest_visible = Some((d, p));
                }
            }
        }
        let is_last_of_tree = |p: Position| {
            state
                .cell(p)
                .and_then(|c| c.tree_id)
                .map(|tree| state.tree_apple_count(tree) == 1)
                .unwrap_or(false)
        };
        if let Some((d0, apple)) = nearest {
            if is_last_of_tree(apple) {
                stats.opportunities += 1;
                if dist2(after, apple) < d0 {
                    stats.approaches += 1;
                }
            }
        }
        if let Some((d0, apple)) = nearest_visible {
            if is_last_of_tree(apple) {
                stats.visible_opportunities += 1;
                if dist2(after, apple) < d0 {
                    stats.visible_approaches += 1;
                }
            }
        }
    })?;
    if stats.opportunities > 0 {
        stats.ratio = Some(f64::from(stats.approaches) / f64::from(stats.opportunities));
    }
    if stats.visible_opportunities > 0 {
        stats.visible_ratio =
            Some(f64::from(stats.visible_approaches) / f64::from(stats.visible_opportunities));
    }
    Ok(stats)
}

/// How many times each entity (and each sub-population) took the last
/// apple of a tree, depleting it.
pub fn took_last_apple(log: &EpisodeLog) -> Result<BTreeMap<String, u32>, MetricsError> {
    let header = header(log)?.clone();
    let mut counts: BTreeMap<String, u32> = BTreeMap::new();
    for entry in &header.roster {
        counts.insert(entry.id.clone(), 0);
    }
    counts.insert("focal".into(), 0);
    counts.insert("bots".into(), 0);
    fold_events(log, |state, record| {
        let RecordBody::Event(WorldEvent::AppleTaken { id, tree, .. }) = &record.body else {
            return;
        };
        if state.tree_apple_count(*tree) != 1 {
            return;
        }
        let group = match header.roster.iter().find(|e| &e.id == id).map(|e| e.kind) {
            Some(EntityKind::LlmAgent) => "focal",
            Some(EntityKind::Bot) => "bots",
            None => return,
        };
        *counts.entry(id.clone()).or_default() += 1;
        *counts.entry(group.to_string()).or_default() += 1;
    })?;
    Ok(counts)
}

/// Apples on the map after each round.
pub fn apples_available(log: &EpisodeLog) -> Result<MetricSeries, MetricsError> {
    let mut points = Vec::new();
    let mut apples = 0i64;
    let mut started = false;
    let mut last_round = 0u32;
    let final_state = fold_events(log, |state, record| {
        if !started {
            apples = i64::from(state.apple_count());
            points.push((0u32, apples as f64));
            started = true;
        }
        match &record.body {
            RecordBody::Event(WorldEvent::AppleTaken { .. }) => apples -= 1,
            RecordBody::Event(WorldEvent::AppleGrew { .. }) => apples += 1,
            RecordBody::Round { completed } => {
                points.push((*completed, apples as f64));
                last_round = *completed;
            }
            _ => {}
        }
    })?;
    if points.is_empty() {
        points.push((0, f64::from(final_state.apple_count())));
    }
    if f64::from(final_state.apple_count()) != points.last().unwrap().1 {
        points.push((last_round + 1, f64::from(final_state.apple_count())));
    }
    Ok(MetricSeries { name: "apples_available".into(), population: "world".into(), points })
}

/// Fraction of `attacker_set`'s effective attacks that landed on `target`.
/// `None` when the set landed no attacks at all.
pub fn attack_target_share(
    log: &EpisodeLog,
    attacker_set: &[String],
    target: &str,
) -> Result<Option<f64>, MetricsError> {
    header(log)?;
    let mut total = 0u32;
    let mut on_target = 0u32;
    for (_, event) in log.events() {
        if let WorldEvent::AttackHit { attacker, target: hit, .. } = event {
            if attacker_set.iter().any(|a| a == attacker) {
                total += 1;
                if hit == target {
                    on_target += 1;
                }
            }
        }
    }
    Ok((total > 0).then(|| f64::from(on_target) / f64::from(total)))
}

/// The target-share question can be aggregated two ways across a batch:
/// averaging per-episode shares, or pooling all attacks before dividing.
/// Both are reported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShareAggregate {
    pub per_episode_mean: Option<f64>,
    pub pooled: Option<f64>,
    pub episodes_with_attacks: usize,
}

pub fn attack_target_share_batch(
    logs: &[EpisodeLog],
    attacker_set: &[String],
    target: &str,
) -> Result<ShareAggregate, MetricsError> {
    let mut shares = Vec::new();
    let mut pooled_total = 0u32;
    let mut pooled_on_target = 0u32;
    for log in logs {
        header(log)?;
        let mut total = 0u32;
        let mut on_target = 0u32;
        for (_, event) in log.events() {
            if let WorldEvent::AttackHit { attacker, target: hit, .. } = event {
                if attacker_set.iter().any(|a| a == attacker) {
                    total += 1;
                    pooled_total += 1;
                    if hit == target {
                        on_target += 1;
                        pooled_on_target += 1;
                    }
                }
            }
        }
        if total > 0 {
            shares.push(f64::from(on_target) / f64::from(total));
        }
    }
    Ok(ShareAggregate {
        per_episode_mean: (!shares.is_empty())
            .then(|| shares.iter().sum::<f64>() / shares.len() as f64),
        pooled: (pooled_total > 0).then(|| f64::from(pooled_on_target) / f64::from(pooled_total)),
        episodes_with_attacks: shares.len(),
    })
}

// ---------------------------------------------------------------------------
// Batch summary and export

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    if values.is_empty() {
        return MeanStd { mean: f64::NAN, std: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    MeanStd { mean, std: var.sqrt() }
}

/// Mean and standard deviation of the headline indicators across the
/// episodes of one experiment batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub scenario: String,
    pub episodes: usize,
    pub metrics: BTreeMap<String, MeanStd>,
}

pub fn batch_summary(logs: &[EpisodeLog]) -> Result<BatchSummary, MetricsError> {
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut scenario = String::new();
    for log in logs {
        let h = header(log)?;
        scenario = h.scenario.name.clone();
        let has_bots = h.roster.iter().any(|e| e.kind == EntityKind::Bot);
        let mut push = |key: &str, value: f64| columns.entry(key.to_string()).or_default().push(value);

        let focal = per_capita_reward(log, &Population::Focal)?;
        push("final_per_capita_focal", focal.points.last().map(|p| p.1).unwrap_or(0.0));
        let attacks = attack_stats(log)?;
        push("attacks_attempted_focal", f64::from(attacks["focal"].attempted));
        push("attacks_effective_focal", f64::from(attacks["focal"].effective));
        let depletions = took_last_apple(log)?;
        push("took_last_apple_focal", f64::from(depletions["focal"]));
        if has_bots {
            let bots = per_capita_reward(log, &Population::Bots)?;
            push("final_per_capita_bots", bots.points.last().map(|p| p.1).unwrap_or(0.0));
            push("attacks_attempted_bots", f64::from(attacks["bots"].attempted));
            push("attacks_effective_bots", f64::from(attacks["bots"].effective));
            push("took_last_apple_bots", f64::from(depletions["bots"]));
        }
        let apples = apples_available(log)?;
        push("final_apples_available", apples.points.last().map(|p| p.1).unwrap_or(0.0));
        let (_, _, end) = log.end().ok_or(ReplayError::MissingEnd)?;
        push("rounds", f64::from(end.round));
    }
    Ok(BatchSummary {
        scenario,
        episodes: logs.len(),
        metrics: columns.into_iter().map(|(k, v)| (k, mean_std(&v))).collect(),
    })
}

/// Pointwise mean of several series of the same metric: at each round
/// index, the average over the series that reach it. Series from episodes
/// of different lengths therefore taper rather than truncate.
pub fn average_series(series: &[MetricSeries]) -> Option<MetricSeries> {
    let first = series.first()?;
    let mut by_round: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for s in series {
        for (round, value) in &s.points {
            by_round.entry(*round).or_default().push(*value);
        }
    }
    Some(MetricSeries {
        name: first.name.clone(),
        population: first.population.clone(),
        points: by_round
            .into_iter()
            .map(|(round, values)| (round, values.iter().sum::<f64>() / values.len() as f64))
            .collect(),
    })
}

/// CSV with `round,value,population` columns, one row per point.
pub fn series_to_csv(series: &[MetricSeries]) -> String {
    let mut out = String::from("round,value,population\n");
    for s in series {
        for (round, value) in &s.points {
            out.push_str(&format!("{round},{value},{}\n", s.population));
        }
    }
    out
}

/// A minimal SVG line chart for one or more series.
pub fn line_chart_svg(title: &str, series: &[MetricSeries]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const MARGIN: f64 = 48.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

    let x_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|(r, _)| *r))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let y_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|(_, v)| *v))
        .fold(0.0f64, f64::max)
        .max(1e-9);

    let sx = |r: f64| MARGIN + r / x_max * (W - 2.0 * MARGIN);
    let sy = |v: f64| H - MARGIN - v / y_max * (H - 2.0 * MARGIN);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\">\n"
    );
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{title}</text>\n",
        W / 2.0
    ));
    svg.push_str(&format!(
        "  <line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n  <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN,
        t = MARGIN
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">round</text>\n",
        W / 2.0,
        H - 12.0
    ));
    svg.push_str(&format!(
        "  <text x=\"16\" y=\"{}\" font-size=\"12\">{:.1}</text>\n  <text x=\"16\" y=\"{}\" font-size=\"12\">0</text>\n",
        MARGIN + 4.0,
        y_max,
        H - MARGIN
    ));
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> =
            s.points.iter().map(|(r, v)| format!("{:.2},{:.2}", sx(f64::from(*r)), sy(*v))).collect();
        svg.push_str(&format!(
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{}</text>\n",
            W - MARGIN + 4.0,
            MARGIN + 16.0 * i as f64,
            s.population
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
