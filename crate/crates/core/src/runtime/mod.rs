//! Episode orchestration. Focal agents take turns in roster order; a turn
//! runs the cognitive pipeline once and executes the chosen high-level
//! action to completion, one primitive move per tick. Bots interleave one
//! move after every second focal move; apple regrowth and respawns run once
//! per tick. The whole episode is append-only logged and fully determined
//! by (scenario, seed, provider script).

mod bots;
#[cfg(test)]
mod tests;

pub use bots::bot_step;

use chrono::Duration;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cognition::{ActionValidator, AgentProfile, Cognition, HighLevelAction, PerceiveInputs};
use crate::llm::{CompletionProvider, Embedder, ProviderConfig};
use crate::log::{
    EpisodeLog, Header, MemoryDumpRecord, MetricsSnapshot, RecordBody, Recorder, RosterEntry,
};
use crate::memory::PathError;
use crate::scenario::{ScenarioConfig, ScenarioError, WORLD_CONTEXT};
use crate::substrate::{
    EntityKind, GridState, MapError, Move, Orientation, Position, SubstrateError, Terminal,
    WorldEvent,
};
use crate::textifier::{diff_events, observation_line, visible_window, window_rect, Descriptor,
    ObservationLine};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("substrate rejected an operation: {0}")]
    Substrate(#[from] SubstrateError),
    #[error("map has {spawns} spawn tiles but the roster needs {needed}")]
    NotEnoughSpawnTiles { spawns: usize, needed: usize },
}

/// Entity ids due to move after a focal primitive move slot: every bot,
/// after every second slot.
pub fn schedule_tick(focal_slots: u64, bot_ids: &[String]) -> Vec<String> {
    if focal_slots > 0 && focal_slots % 2 == 0 {
        bot_ids.to_vec()
    } else {
        Vec::new()
    }
}

/// One primitive execution step of a high-level action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ExecStep {
    Move(Move),
    Zap,
}

struct AgentRuntime {
    id: String,
    cognition: Cognition,
    /// Timestamped observation lines for events seen while waiting,
    /// filtered by this agent's window at each event's time.
    inbox: Vec<String>,
    /// Who hit us, reported once through the was-attacked line.
    attacker: Option<String>,
}

pub struct Episode<'p> {
    state: GridState,
    scenario: ScenarioConfig,
    provider: &'p mut dyn CompletionProvider,
    provider_config: ProviderConfig,
    embedder: &'p dyn Embedder,
    agents: Vec<AgentRuntime>,
    bot_ids: Vec<String>,
    log: EpisodeLog,
    /// Scheduled focal move slots so far (skipped slots included).
    focal_slots: u64,
    entity_moves: std::collections::BTreeMap<String, u64>,
    attacks_attempted: std::collections::BTreeMap<String, u32>,
    attacks_hit: std::collections::BTreeMap<String, u32>,
}

/// Runs one full episode and returns its log.
pub fn run_episode(
    scenario: &ScenarioConfig,
    seed: u64,
    provider: &mut dyn CompletionProvider,
    provider_config: &ProviderConfig,
    embedder: &dyn Embedder,
) -> Result<EpisodeLog, RuntimeError> {
    let mut episode = Episode::new(scenario, seed, provider, provider_config, embedder)?;
    episode.run();
    Ok(episode.log)
}

impl<'p> Episode<'p> {
    pub fn new(
        scenario: &ScenarioConfig,
        seed: u64,
        provider: &'p mut dyn CompletionProvider,
        provider_config: &ProviderConfig,
        embedder: &'p dyn Embedder,
    ) -> Result<Self, RuntimeError> {
        let map_ascii = scenario.map_ascii()?.to_string();
        let world = scenario.world_config();
        let mut state = GridState::load_map(&map_ascii, world.clone())?;
        state.clock = scenario.clock_start;
        state.rng = ChaCha8Rng::seed_from_u64(seed);

        let spawn_tiles: Vec<Position> = state.config.spawn_tiles.iter().copied().collect();
        let needed = scenario.agents.len() + scenario.bots.names.len();
        if spawn_tiles.len() < needed {
            return Err(RuntimeError::NotEnoughSpawnTiles { spawns: spawn_tiles.len(), needed });
        }

        // Deterministic initial placement: spawn tiles in row-major order,
        // agents first, everyone facing into the map.
        let mut roster = Vec::new();
        for (i, spec) in scenario.agents.iter().enumerate() {
            state.add_entity(&spec.name, EntityKind::LlmAgent, spawn_tiles[i], Orientation::South)?;
            roster.push(RosterEntry {
                id: spec.name.clone(),
                kind: EntityKind::LlmAgent,
                position: spawn_tiles[i],
                orientation: Orientation::South,
            });
        }
        for (j, name) in scenario.bots.names.iter().enumerate() {
            let at = spawn_tiles[scenario.agents.len() + j];
            state.add_entity(name, EntityKind::Bot, at, Orientation::South)?;
            roster.push(RosterEntry {
                id: name.clone(),
                kind: EntityKind::Bot,
                position: at,
                orientation: Orientation::South,
            });
        }

        let (rows, cols) = state.dims();
        let mut agents = Vec::new();
        for (i, spec) in scenario.agents.iter().enumerate() {
            let mut personality = spec.personality.trim_end().to_string();
            for knowledge in &spec.knowledge {
                if !personality.is_empty() {
                    personality.push('\n');
                }
                personality.push_str(knowledge);
            }
            let profile = AgentProfile {
                name: spec.name.clone(),
                personality,
                world_context: WORLD_CONTEXT.trim_end().to_string(),
            };
            let mut cognition = Cognition::new(
                profile,
                scenario.cognition.clone(),
                rows,
                cols,
                spawn_tiles[i],
                Orientation::South,
            );
            // Injected knowledge is also seeded into long-term memory so
            // retrieval can surface it later.
            for knowledge in &spec.knowledge {
                let _ = cognition.long_term.store(
                    knowledge,
                    crate::memory::MemoryKind::Observation,
                    state.clock,
                    embedder,
                );
            }
            agents.push(AgentRuntime {
                id: spec.name.clone(),
                cognition,
                inbox: Vec::new(),
                attacker: None,
            });
        }

        let mut log = EpisodeLog::new();
        let header = Header {
            scenario: scenario.clone(),
            seed,
            provider: provider.name().to_string(),
            map_ascii,
            world,
            roster,
        };
        Recorder::new(&mut log, &state).push(RecordBody::Header(Box::new(header)));

        Ok(Episode {
            state,
            scenario: scenario.clone(),
            provider,
            provider_config: provider_config.clone(),
            embedder,
            agents,
            bot_ids: scenario.bots.names.clone(),
            log,
            focal_slots: 0,
            entity_moves: std::collections::BTreeMap::new(),
            attacks_attempted: std::collections::BTreeMap::new(),
            attacks_hit: std::collections::BTreeMap::new(),
        })
    }

    pub fn run(&mut self) {
        'episode: loop {
            for idx in 0..self.agents.len() {
                self.take_agent_turn(idx);
                if self.state.apple_count() == 0 {
                    break 'episode;
                }
            }
            self.state.round += 1;
            self.state.clock += Duration::hours(i64::from(self.scenario.clock_increment_hours));
            let round = self.state.round;
            Recorder::new(&mut self.log, &self.state).push(RecordBody::Round { completed: round });
            let snapshot = self.snapshot();
            Recorder::new(&mut self.log, &self.state).push(RecordBody::Snapshot(snapshot));
            if self.state.is_terminal().is_some() {
                break;
            }
        }
        let terminal = match self.state.is_terminal() {
            Some(t) => t,
            None => Terminal::ApplesExhausted,
        };
        for agent in &self.agents {
            let records: Vec<MemoryDumpRecord> = agent
                .cognition
                .long_term
                .records()
                .iter()
                .map(|r| MemoryDumpRecord {
                    id: r.id,
                    kind: r.kind,
                    text: r.text.clone(),
                    created_at: r.created_at,
                    poignancy: r.poignancy,
                })
                .collect();
            let body = RecordBody::MemoryDump { agent: agent.id.clone(), records };
            Recorder::new(&mut self.log, &self.state).push(body);
        }
        let state_hash = self.state.state_hash();
        let events_hash = self.log.events_hash();
        Recorder::new(&mut self.log, &self.state).push(RecordBody::End {
            terminal: terminal.to_string(),
            state_hash,
            events_hash,
        });
    }

    pub fn into_log(self) -> EpisodeLog {
        self.log
    }

    fn snapshot(&self) -> MetricsSnapshot {
        MetricsSnapshot {
            apples_available: self.state.apple_count(),
            rewards: self
                .state
                .entities
                .iter()
                .map(|e| (e.id.clone(), e.cumulative_reward))
                .collect(),
            focal_primitive_moves: self.focal_slots,
            entity_moves: self.entity_moves.clone(),
            attacks_attempted: self.attacks_attempted.clone(),
            attacks_hit: self.attacks_hit.clone(),
        }
    }

    fn validator(&self) -> ActionValidator {
        let (rows, cols) = self.state.dims();
        ActionValidator {
            rows,
            cols,
            entities: self.state.entities.iter().map(|e| e.id.clone()).collect(),
        }
    }

    fn take_agent_turn(&mut self, idx: usize) {
        let id = self.agents[idx].id.clone();
        let active = self.state.entity(&id).map(|e| e.is_active()).unwrap_or(false);
        if !active {
            self.out_of_game_turn(idx);
            return;
        }

        self.agents[idx].cognition.spatial.observe(&self.state, &id);
        let inputs = self.drain_perceive_inputs(idx);
        let validator = self.validator();
        let action = {
            let Episode { agents, log, state, provider, provider_config, embedder, .. } = self;
            let mut rec = Recorder::new(log, state);
            agents[idx].cognition.take_turn(
                &inputs,
                &validator,
                &mut **provider,
                provider_config,
                *embedder,
                &mut rec,
            )
        };
        self.execute(idx, &action);
    }

    /// A removed agent's turn: it perceives the out-of-game report, then
    /// sits out its remaining scheduled moves while the world keeps
    /// ticking; the respawn lands on the tick that consumes the last one.
    fn out_of_game_turn(&mut self, idx: usize) {
        let attacker = self.agents[idx].attacker.take();
        self.agents[idx].inbox.clear();
        {
            let Episode { agents, log, state, embedder, .. } = self;
            let mut rec = Recorder::new(log, state);
            agents[idx].cognition.perceive_out_of_game(
                attacker.as_deref(),
                state.clock,
                *embedder,
                &mut rec,
            );
        }
        {
            let Episode { agents, log, state, provider, provider_config, embedder, .. } = self;
            let mut rec = Recorder::new(log, state);
            agents[idx].cognition.maybe_reflect(
                state.clock,
                &mut **provider,
                provider_config,
                *embedder,
                &mut rec,
            );
        }
        let id = self.agents[idx].id.clone();
        {
            let mut rec = Recorder::new(&mut self.log, &self.state);
            rec.push(RecordBody::Note {
                agent: Some(id.clone()),
                text: "out of the game: sitting out removed moves".into(),
            });
        }
        while self.state.entity(&id).map(|e| e.skips_remaining).unwrap_or(0) > 0 {
            self.tick(idx, None);
            if self.state.apple_count() == 0 {
                return;
            }
        }
    }

    /// Builds the perception inputs for an agent and drains its inbox.
    fn drain_perceive_inputs(&mut self, idx: usize) -> PerceiveInputs {
        let id = &self.agents[idx].id;
        let entity = self.state.entity(id).expect("roster entity exists");
        let position = entity.position.expect("caller checked activity");
        let window_lines: Vec<ObservationLine> = visible_window(&self.state, id)
            .iter()
            .filter(|d| !matches!(d, Descriptor::Tree { .. }))
            .map(observation_line)
            .collect();
        PerceiveInputs {
            now: self.state.clock,
            reward: entity.cumulative_reward,
            position,
            orientation: entity.orientation,
            window_lines,
            event_lines: std::mem::take(&mut self.agents[idx].inbox),
        }
    }

    /// Decomposes a high-level action into primitive steps from the
    /// agent's current pose and known map.
    fn plan_steps(&mut self, idx: usize, action: &HighLevelAction) -> Vec<ExecStep> {
        let id = self.agents[idx].id.clone();
        let position = self.state.entity(&id).and_then(|e| e.position).expect("active agent");
        let spatial = &self.agents[idx].cognition.spatial;
        match action {
            HighLevelAction::StayPut => vec![ExecStep::Move(Move::Noop)],
            HighLevelAction::GoTo { to } | HighLevelAction::Explore { to } => {
                match spatial.path(position, *to) {
                    Ok(moves) if moves.is_empty() => vec![ExecStep::Move(Move::Noop)],
                    Ok(moves) => moves.into_iter().map(ExecStep::Move).collect(),
                    Err(PathError::NoPath { .. }) => {
                        let mut rec = Recorder::new(&mut self.log, &self.state);
                        rec.push(RecordBody::Note {
                            agent: Some(id),
                            text: format!("no known path for `{action}`; action aborted"),
                        });
                        vec![ExecStep::Move(Move::Noop)]
                    }
                }
            }
            HighLevelAction::Immobilize { at, .. } => {
                match self.firing_plan(position, spatial.orientation, *at, idx) {
                    Some(steps) => steps,
                    None => {
                        let mut rec = Recorder::new(&mut self.log, &self.state);
                        rec.push(RecordBody::Note {
                            agent: Some(id),
                            text: format!("no firing position covers `{action}`; action aborted"),
                        });
                        vec![ExecStep::Move(Move::Noop)]
                    }
                }
            }
        }
    }

    /// Finds the nearest tile-and-facing from which the beam covers the
    /// target, then plans: walk there, orient, fire.
    fn firing_plan(
        &self,
        position: Position,
        orientation: Orientation,
        target: Position,
        idx: usize,
    ) -> Option<Vec<ExecStep>> {
        const ORIENTATIONS: [Orientation; 4] =
            [Orientation::North, Orientation::East, Orientation::South, Orientation::West];
        let spatial = &self.agents[idx].cognition.spatial;
        let half = (self.state.config.beam_width as i32 - 1) / 2;
        let mut best: Option<(usize, Position, usize, Vec<Move>)> = None;
        for (oi, o) in ORIENTATIONS.iter().enumerate() {
            let (fr, fc) = o.delta();
            let (pr, pc) = o.turned_right().delta();
            for d in 1..=self.state.config.beam_length as i32 {
                for w in -half..=half {
                    let spot = Position::new(
                        target.row - fr * d - pr * w,
                        target.col - fc * d - pc * w,
                    );
                    if !self.state.in_bounds(spot)
                        || !self.state.beam_tiles(spot, *o).contains(&target)
                    {
                        continue;
                    }
                    let Ok(moves) = spatial.path(position, spot) else { continue };
                    let key = (moves.len(), spot, oi);
                    if best.as_ref().map(|(l, s, i, _)| (key.0, key.1, key.2) < (*l, *s, *i)).unwrap_or(true)
                    {
                        best = Some((moves.len(), spot, oi, moves));
                    }
                }
            }
        }
        let (_, _, oi, moves) = best?;
        let target_facing = ORIENTATIONS[oi];
        let mut facing = orientation;
        for mv in &moves {
            facing = match mv {
                Move::TurnLeft => facing.turned_left(),
                Move::TurnRight => facing.turned_right(),
                _ => facing,
            };
        }
        let mut steps: Vec<ExecStep> = moves.into_iter().map(ExecStep::Move).collect();
        for mv in turns_between(facing, target_facing) {
            steps.push(ExecStep::Move(mv));
        }
        steps.push(ExecStep::Zap);
        Some(steps)
    }

    /// Executes the planned steps tick by tick, stopping early on removal,
    /// two consecutive blocked moves, the explore target entering the
    /// window, or a mid-action reaction.
    fn execute(&mut self, idx: usize, action: &HighLevelAction) {
        let steps = self.plan_steps(idx, action);
        let id = self.agents[idx].id.clone();
        let action_str = action.to_string();
        let mut consecutive_blocks = 0u32;
        for step in steps {
            let events = self.tick(idx, Some(step));
            if self.state.apple_count() == 0 {
                return;
            }
            if !self.state.entity(&id).map(|e| e.is_active()).unwrap_or(false) {
                return; // removed mid-action; queue dropped
            }
            let blocked = events
                .iter()
                .any(|e| matches!(e, WorldEvent::MoveBlocked { id: b, .. } if *b == id));
            consecutive_blocks = if blocked { consecutive_blocks + 1 } else { 0 };
            if consecutive_blocks >= 2 {
                let mut rec = Recorder::new(&mut self.log, &self.state);
                rec.push(RecordBody::Note {
                    agent: Some(id),
                    text: format!("`{action_str}` aborted after two blocked moves"),
                });
                return;
            }
            self.agents[idx].cognition.spatial.observe(&self.state, &id);
            if let HighLevelAction::Explore { to } = action {
                let here = self.state.entity(&id).and_then(|e| e.position).unwrap();
                if window_rect(&self.state, here).contains(*to) {
                    return;
                }
            }
            // Mid-action sensing: the react prompt fires only when this
            // tick left visible changes.
            if !self.agents[idx].inbox.is_empty() {
                let inputs = self.drain_perceive_inputs(idx);
                let halted = {
                    let Episode { agents, log, state, provider, provider_config, embedder, .. } =
                        self;
                    let mut rec = Recorder::new(log, state);
                    agents[idx].cognition.mid_action_check(
                        &inputs,
                        &action_str,
                        &mut **provider,
                        provider_config,
                        *embedder,
                        &mut rec,
                    )
                };
                if halted {
                    let mut rec = Recorder::new(&mut self.log, &self.state);
                    rec.push(RecordBody::Note {
                        agent: Some(id),
                        text: format!("`{action_str}` interrupted by reaction"),
                    });
                    return;
                }
            }
        }
    }

    /// One tick: the acting agent's primitive step (or a removal skip),
    /// due bots, regrowth, respawns; events are logged and routed to every
    /// agent's inbox filtered by its current window.
    fn tick(&mut self, acting: usize, step: Option<ExecStep>) -> Vec<WorldEvent> {
        let id = self.agents[acting].id.clone();
        let mut events = Vec::new();
        match step {
            Some(ExecStep::Move(mv)) => {
                events.extend(self.state.move_entity(&id, mv).expect("active acting agent"));
                *self.entity_moves.entry(id.clone()).or_default() += 1;
            }
            Some(ExecStep::Zap) => {
                events.extend(self.state.fire_zap(&id).expect("active acting agent"));
                *self.entity_moves.entry(id.clone()).or_default() += 1;
            }
            None => {
                self.state.consume_removal_skip(&id);
            }
        }
        self.focal_slots += 1;
        for bot_id in schedule_tick(self.focal_slots, &self.bot_ids) {
            let bot_active =
                self.state.entity(&bot_id).map(|e| e.is_active()).unwrap_or(false);
            if bot_active {
                events.extend(bot_step(&mut self.state, &bot_id, self.scenario.bots.p_attack));
                *self.entity_moves.entry(bot_id.clone()).or_default() += 1;
            } else {
                self.state.consume_removal_skip(&bot_id);
            }
        }
        events.extend(self.state.regrowth_step());
        events.extend(self.state.respawn_tick());

        for event in &events {
            match event {
                WorldEvent::AttackAttempted { id, .. } => {
                    *self.attacks_attempted.entry(id.clone()).or_default() += 1;
                }
                WorldEvent::AttackHit { attacker, target, .. } => {
                    *self.attacks_hit.entry(attacker.clone()).or_default() += 1;
                    if let Some(agent) = self.agents.iter_mut().find(|a| a.id == *target) {
                        agent.attacker = Some(attacker.clone());
                    }
                }
                _ => {}
            }
        }

        {
            let mut rec = Recorder::new(&mut self.log, &self.state);
            for event in &events {
                rec.push(RecordBody::Event(event.clone()));
            }
        }

        // Route observable lines into each agent's inbox, using the
        // agent's window at this moment.
        let stamped: Vec<(chrono::NaiveDateTime, WorldEvent)> =
            events.iter().map(|e| (self.state.clock, e.clone())).collect();
        for agent in &mut self.agents {
            let Some(center) = self.state.entity(&agent.id).and_then(|e| e.position) else {
                continue;
            };
            let window = window_rect(&self.state, center);
            agent.inbox.extend(diff_events(&stamped, &window));
        }
        events
    }
}

fn turns_between(from: Orientation, to: Orientation) -> Vec<Move> {
    let ring = |o: Orientation| match o {
        Orientation::North => 0i32,
        Orientation::East => 1,
        Orientation::South => 2,
        Orientation::West => 3,
    };
    match (ring(to) - ring(from)).rem_euclid(4) {
        0 => vec![],
        1 => vec![Move::TurnRight],
        3 => vec![Move::TurnLeft],
        2 => vec![Move::TurnRight, Move::TurnRight],
        _ => unreachable!(),
    }
}
