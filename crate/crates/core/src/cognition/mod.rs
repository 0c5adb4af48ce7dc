//! The cognitive pipeline each agent runs on its turn: perceive the world,
//! decide whether to react, replan, reflect when enough observations have
//! accumulated, and pick the next high-level action. Every prompt and raw
//! response passes through the episode log.

mod action;
mod templates;

pub use action::{parse_action, ActionValidator, HighLevelAction, NoMatch};
pub use templates::{
    parse_fenced_json, render_template, template_body, value_as_bool, ParseFailure, RenderError,
    ACT_TEMPLATE, PLAN_TEMPLATE, REACT_TEMPLATE, REFLECT_INSIGHTS_TEMPLATE,
    REFLECT_QUESTIONS_TEMPLATE,
};

use chrono::NaiveDateTime;
use serde_json::{Map, Value};

use crate::llm::{CompletionProvider, CompletionRequest, Embedder, PromptKind, ProviderConfig};
use crate::log::{RecordBody, Recorder};
use crate::memory::{
    short_term_keys as keys, MemoryKind, MemoryStore, ShortTermMemory, SpatialMemory,
};
use crate::scenario::CognitionParams;
use crate::substrate::{Orientation, Position};
use crate::textifier::{compose_out_of_game_report, compose_report, describe, format_datetime,
    Descriptor, ObservationLine, ReportInputs};

/// The list handed to the action prompt as the set of valid actions.
pub const VALID_ACTIONS: &str =
    "immobilize player (player_name) at (x, y)\ngo to position (x, y)\nstay put\nexplore (x, y)";

#[derive(Debug, Clone)]
pub struct AgentProfile {
    pub name: String,
    /// Personality text plus any injected knowledge; empty when the agent
    /// has no personality.
    pub personality: String,
    /// World rules text, identical for every agent in a scenario.
    pub world_context: String,
}

/// Everything the runtime hands cognition when an agent senses the world.
#[derive(Debug, Clone)]
pub struct PerceiveInputs {
    pub now: NaiveDateTime,
    pub reward: f64,
    pub position: Position,
    pub orientation: Orientation,
    pub window_lines: Vec<ObservationLine>,
    pub event_lines: Vec<String>,
}

pub struct Cognition {
    pub profile: AgentProfile,
    pub params: CognitionParams,
    pub long_term: MemoryStore,
    pub short_term: ShortTermMemory,
    pub spatial: SpatialMemory,
    observations_since_reflection: u32,
    retained_observations: Vec<String>,
    reason_to_react: String,
    pub past_actions: Vec<String>,
    pub last_action: String,
}

impl Cognition {
    pub fn new(
        profile: AgentProfile,
        params: CognitionParams,
        rows: i32,
        cols: i32,
        position: Position,
        orientation: Orientation,
    ) -> Self {
        let mut short_term = ShortTermMemory::default();
        short_term.set(keys::NAME, &profile.name);
        short_term.set(keys::PERSONALITY, &profile.personality);
        short_term.set(keys::WORLD_CONTEXT, &profile.world_context);
        let mut long_term = MemoryStore::new();
        long_term.paper_literal_recency = params.paper_literal_recency;
        Cognition {
            spatial: SpatialMemory::new(rows, cols, position, orientation),
            profile,
            params,
            long_term,
            short_term,
            observations_since_reflection: 0,
            retained_observations: Vec::new(),
            reason_to_react: String::new(),
            past_actions: Vec::new(),
            last_action: "none".to_string(),
        }
    }

    pub fn observations_since_reflection(&self) -> u32 {
        self.observations_since_reflection
    }

    // -- perception -------------------------------------------------------

    /// Sorts the window lines by distance (ties row-major), keeps the
    /// `attention_bandwidth` nearest, stores the rendered report as an
    /// observation memory, and returns the kept lines.
    pub fn perceive(
        &mut self,
        inputs: &PerceiveInputs,
        embedder: &dyn Embedder,
        rec: &mut Recorder,
    ) -> Vec<ObservationLine> {
        let mut lines = inputs.window_lines.clone();
        let origin = inputs.position;
        let dist2 = |p: Position| -> i64 {
            let dr = i64::from(p.row - origin.row);
            let dc = i64::from(p.col - origin.col);
            dr * dr + dc * dc
        };
        lines.sort_by(|a, b| {
            dist2(a.subject_position)
                .cmp(&dist2(b.subject_position))
                .then(a.subject_position.cmp(&b.subject_position))
        });
        lines.truncate(self.params.attention_bandwidth);

        let report = compose_report(&ReportInputs {
            last_action: &self.last_action,
            event_lines: &inputs.event_lines,
            now: inputs.now,
            reward: inputs.reward,
            position: inputs.position,
            orientation: inputs.orientation,
            current_lines: &lines,
        });
        self.record_observation(report, inputs.now, embedder, rec);
        let text = lines.iter().map(|l| l.text.as_str()).collect::<Vec<_>>().join("\n");
        self.short_term.set(keys::LAST_OBSERVATIONS, text);
        lines
    }

    /// The report a removed agent perceives; still stored and counted.
    pub fn perceive_out_of_game(
        &mut self,
        attacker: Option<&str>,
        now: NaiveDateTime,
        embedder: &dyn Embedder,
        rec: &mut Recorder,
    ) {
        let text = compose_out_of_game_report(attacker);
        self.short_term.set(keys::LAST_OBSERVATIONS, &text);
        self.record_observation(text, now, embedder, rec);
    }

    fn record_observation(
        &mut self,
        text: String,
        now: NaiveDateTime,
        embedder: &dyn Embedder,
        rec: &mut Recorder,
    ) {
        match self.long_term.store(&text, MemoryKind::Observation, now, embedder) {
            Ok(_) => {
                self.retained_observations.push(text);
                self.observations_since_reflection += 1;
            }
            Err(e) => rec.push(RecordBody::Note {
                agent: Some(self.profile.name.clone()),
                text: format!("observation not stored: {e}"),
            }),
        }
    }

    // -- provider plumbing -------------------------------------------------

    /// One prompt attempt: logs the prompt and raw response, returns the
    /// extracted value or `None` on provider error, parse failure, or
    /// failed extraction.
    fn query_once<T>(
        &self,
        kind: PromptKind,
        prompt: &str,
        provider: &mut dyn CompletionProvider,
        config: &ProviderConfig,
        rec: &mut Recorder,
        extract: &dyn Fn(&Map<String, Value>) -> Option<T>,
    ) -> Option<T> {
        let model = config.model_for(kind).to_string();
        rec.push(RecordBody::Prompt {
            agent: self.profile.name.clone(),
            template: kind,
            model: model.clone(),
            text: prompt.to_string(),
        });
        let request = CompletionRequest {
            prompt: prompt.to_string(),
            model,
            temperature: config.temperature,
            max_tokens: config.max_tokens,
        };
        match provider.complete(&request) {
            Ok(text) => {
                rec.push(RecordBody::Response {
                    agent: self.profile.name.clone(),
                    template: kind,
                    text: text.clone(),
                });
                parse_fenced_json(&text).ok().and_then(|map| extract(&map))
            }
            Err(e) => {
                rec.push(RecordBody::Note {
                    agent: Some(self.profile.name.clone()),
                    text: format!("provider error on {}: {e}", kind.key()),
                });
                None
            }
        }
    }

    /// Retries a prompt up to the retry budget, re-querying the provider on
    /// every malformed or invalid response.
    fn query<T>(
        &self,
        kind: PromptKind,
        prompt: &str,
        provider: &mut dyn CompletionProvider,
        config: &ProviderConfig,
        rec: &mut Recorder,
        extract: &dyn Fn(&Map<String, Value>) -> Option<T>,
    ) -> Option<T> {
        for _ in 0..self.params.retry_budget {
            if let Some(value) = self.query_once(kind, prompt, provider, config, rec, extract) {
                return Some(value);
            }
        }
        rec.push(RecordBody::Note {
            agent: Some(self.profile.name.clone()),
            text: format!("retries exhausted for {} prompt", kind.key()),
        });
        None
    }

    // -- prompt assembly ---------------------------------------------------

    fn recent_reflections(&self) -> String {
        let mut texts: Vec<&str> = self
            .long_term
            .recent_of_kind(MemoryKind::Reflection, 10)
            .into_iter()
            .map(|r| r.text.as_str())
            .collect();
        texts.reverse();
        texts.join("\n")
    }

    fn react_prompt(&self, observations: &str, changes: &str, actions: &str, now: NaiveDateTime) -> String {
        render_template(
            REACT_TEMPLATE,
            &[
                (1, self.profile.name.as_str()),
                (2, self.profile.world_context.as_str()),
                (3, observations),
                (4, self.short_term.get(keys::PLAN)),
                (5, actions),
                (6, self.profile.personality.as_str()),
                (7, &format_datetime(now)),
                (8, changes),
            ],
        )
        .expect("react bindings cover the template")
    }

    fn plan_prompt(&self, observations: &str, changes: &str, reason: &str) -> String {
        render_template(
            PLAN_TEMPLATE,
            &[
                (1, self.profile.name.as_str()),
                (2, self.profile.world_context.as_str()),
                (3, observations),
                (4, self.short_term.get(keys::PLAN)),
                (5, &self.recent_reflections()),
                (6, reason),
                (7, self.profile.personality.as_str()),
                (8, changes),
            ],
        )
        .expect("plan bindings cover the template")
    }

    fn act_prompt(&self, observations: &str, changes: &str, position: Position) -> String {
        let known_trees: Vec<String> = self
            .spatial
            .known_trees
            .iter()
            .map(|(tree, k)| {
                describe(&Descriptor::Tree {
                    tree: *tree,
                    at: k.position,
                    apples: k.apples,
                    grass: k.grass,
                })
            })
            .collect();
        let previous: Vec<&str> =
            self.past_actions.iter().rev().take(10).rev().map(String::as_str).collect();
        // The stock action template addresses the agent as Laura in its
        // static text; substitute the acting agent's name before binding so
        // observation content stays untouched.
        let body = ACT_TEMPLATE.replace("Laura", &self.profile.name);
        render_template(
            &body,
            &[
                (1, self.profile.name.as_str()),
                (2, self.profile.world_context.as_str()),
                (3, self.short_term.get(keys::PLAN)),
                (4, &self.recent_reflections()),
                (5, observations),
                (6, &format!("({}, {})", position.row, position.col)),
                (8, VALID_ACTIONS),
                (9, self.short_term.get(keys::GOALS)),
                (10, self.profile.personality.as_str()),
                (11, &known_trees.join("\n")),
                (12, &self.spatial.render_known_map()),
                (13, &previous.join("\n")),
                (14, changes),
            ],
        )
        .expect("act bindings cover the template")
    }

    // -- cognitive modules -------------------------------------------------

    /// Asks whether the current plan and queued actions still fit the
    /// observations. Falls back to "keep the plan" when retries run out.
    pub fn should_react(
        &mut self,
        observations: &str,
        changes: &str,
        actions_to_execute: &str,
        now: NaiveDateTime,
        provider: &mut dyn CompletionProvider,
        config: &ProviderConfig,
        rec: &mut Recorder,
    ) -> (String, bool) {
        let prompt = self.react_prompt(observations, changes, actions_to_execute, now);
        let outcome = self.query(
            PromptKind::React,
            &prompt,
            provider,
            config,
            rec,
            &|map: &Map<String, Value>| {
                let change = value_as_bool(map.get("Answer")?)?;
                let reasoning =
                    map.get("Reasoning").and_then(Value::as_str).unwrap_or("").to_string();
                Some((reasoning, change))
            },
        );
        outcome.unwrap_or_else(|| (String::new(), false))
    }

    /// Crafts a new plan and goals; a failed call retains the previous
    /// plan.
    pub fn make_plan(
        &mut self,
        observations: &str,
        changes: &str,
        reason: &str,
        now: NaiveDateTime,
        provider: &mut dyn CompletionProvider,
        config: &ProviderConfig,
        embedder: &dyn Embedder,
        rec: &mut Recorder,
    ) {
        let prompt = self.plan_prompt(observations, changes, reason);
        let outcome = self.query(
            PromptKind::Plan,
            &prompt,
            provider,
            config,
            rec,
            &|map: &Map<String, Value>| {
                let goals = map.get("Goals")?.as_str()?.to_string();
                let plan = map.get("Plan")?.as_str()?.to_string();
                Some((goals, plan))
            },
        );
        if let Some((goals, plan)) = outcome {
            self.short_term.set(keys::GOALS, &goals);
            self.short_term.set(keys::PLAN, &plan);
            if let Err(e) = self.long_term.store(&plan, MemoryKind::Plan, now, embedder) {
                rec.push(RecordBody::Note {
                    agent: Some(self.profile.name.clone()),
                    text: format!("plan not stored: {e}"),
                });
            }
        }
    }

    /// Runs the two-stage reflection once the observation threshold is
    /// reached: question formulation over the retained observations, then
    /// insight generation over memories retrieved per question. Stage-1
    /// failure aborts the reflection; stage-2 failure stores zero insights.
    /// Either way the counter restarts.
    pub fn maybe_reflect(
        &mut self,
        now: NaiveDateTime,
        provider: &mut dyn CompletionProvider,
        config: &ProviderConfig,
        embedder: &dyn Embedder,
        rec: &mut Recorder,
    ) {
        if self.observations_since_reflection < self.params.reflection_threshold {
            return;
        }
        self.observations_since_reflection = 0;
        let retained = std::mem::take(&mut self.retained_observations);
        let statements = retained.join("\n");

        let prompt = render_template(
            REFLECT_QUESTIONS_TEMPLATE,
            &[
                (1, self.profile.name.as_str()),
                (2, self.profile.world_context.as_str()),
                (3, statements.as_str()),
                (4, self.profile.personality.as_str()),
            ],
        )
        .expect("reflect-questions bindings cover the template");
        let questions = self.query(
            PromptKind::ReflectQuestions,
            &prompt,
            provider,
            config,
            rec,
            &|map: &Map<String, Value>| {
                let mut qs = Vec::new();
                for i in 1..=3 {
                    qs.push(
                        map.get(&format!("Question_{i}"))?.get("Question")?.as_str()?.to_string(),
                    );
                }
                Some(qs)
            },
        );
        let Some(questions) = questions else {
            rec.push(RecordBody::Note {
                agent: Some(self.profile.name.clone()),
                text: "reflection aborted: question formulation failed".into(),
            });
            return;
        };

        let mut groups = String::new();
        for (i, question) in questions.iter().enumerate() {
            let memories = match self.long_term.retrieve(
                question,
                self.params.reflection_retrieval_k,
                now,
                &self.params.retrieval_weights,
                embedder,
            ) {
                Ok(m) => m,
                Err(e) => {
                    rec.push(RecordBody::Note {
                        agent: Some(self.profile.name.clone()),
                        text: format!("reflection aborted: retrieval failed: {e}"),
                    });
                    return;
                }
            };
            groups.push_str(&format!("Group {}:\n", i + 1));
            for memory in memories {
                groups.push_str(&memory.text);
                groups.push('\n');
            }
            groups.push('\n');
        }

        let prompt = render_template(
            REFLECT_INSIGHTS_TEMPLATE,
            &[
                (1, self.profile.name.as_str()),
                (2, self.profile.world_context.as_str()),
                (3, groups.trim_end()),
                (4, self.profile.personality.as_str()),
            ],
        )
        .expect("reflect-insights bindings cover the template");
        let insights = self.query(
            PromptKind::ReflectInsights,
            &prompt,
            provider,
            config,
            rec,
            &|map: &Map<String, Value>| {
                let mut texts = Vec::new();
                for (key, value) in map {
                    if key.starts_with("Insight_") {
                        texts.push(value.get("Insight")?.as_str()?.to_string());
                    }
                }
                if texts.is_empty() {
                    None
                } else {
                    Some(texts)
                }
            },
        );
        let Some(insights) = insights else {
            rec.push(RecordBody::Note {
                agent: Some(self.profile.name.clone()),
                text: "reflection stage 2 failed: zero insights stored".into(),
            });
            return;
        };
        for text in insights {
            if let Err(e) = self.long_term.store(&text, MemoryKind::Reflection, now, embedder) {
                rec.push(RecordBody::Note {
                    agent: Some(self.profile.name.clone()),
                    text: format!("insight not stored: {e}"),
                });
            }
        }
    }

    /// Picks the next high-level action through the structured-reasoning
    /// prompt. Any unparseable or invalid answer re-queries the provider;
    /// after the retry budget the agent stays put.
    pub fn decide_action(
        &mut self,
        observations: &str,
        changes: &str,
        position: Position,
        validator: &ActionValidator,
        provider: &mut dyn CompletionProvider,
        config: &ProviderConfig,
        rec: &mut Recorder,
    ) -> HighLevelAction {
        let prompt = self.act_prompt(observations, changes, position);
        for _ in 0..self.params.retry_budget {
            let answer = self.query_once(
                PromptKind::Act,
                &prompt,
                provider,
                config,
                rec,
                &|map: &Map<String, Value>| Some(map.get("Answer")?.as_str()?.to_string()),
            );
            let Some(answer) = answer else { continue };
            match parse_action(&answer) {
                Ok(action) => match validator.validate(&action) {
                    Ok(()) => {
                        rec.push(RecordBody::Decision {
                            agent: self.profile.name.clone(),
                            action: action.to_string(),
                            fallback: false,
                            note: None,
                        });
                        return action;
                    }
                    Err(reason) => rec.push(RecordBody::Note {
                        agent: Some(self.profile.name.clone()),
                        text: format!("invalid action `{answer}`: {reason}"),
                    }),
                },
                Err(e) => rec.push(RecordBody::Note {
                    agent: Some(self.profile.name.clone()),
                    text: format!("unparseable action: {e}"),
                }),
            }
        }
        rec.push(RecordBody::Decision {
            agent: self.profile.name.clone(),
            action: HighLevelAction::StayPut.to_string(),
            fallback: true,
            note: Some("action retries exhausted".into()),
        });
        HighLevelAction::StayPut
    }

    // -- turn drivers ------------------------------------------------------

    /// The full pipeline for one turn: perceive, gate on the react prompt,
    /// replan (the action queue is empty at every turn start, which alone
    /// triggers replanning), reflect when due, then choose an action.
    pub fn take_turn(
        &mut self,
        inputs: &PerceiveInputs,
        validator: &ActionValidator,
        provider: &mut dyn CompletionProvider,
        config: &ProviderConfig,
        embedder: &dyn Embedder,
        rec: &mut Recorder,
    ) -> HighLevelAction {
        self.perceive(inputs, embedder, rec);
        let observations = self.short_term.get(keys::LAST_OBSERVATIONS).to_string();
        let changes = inputs.event_lines.join("\n");
        let (reasoning, change) =
            self.should_react(&observations, &changes, "none", inputs.now, provider, config, rec);
        let reason = if change {
            reasoning
        } else if !self.reason_to_react.is_empty() {
            std::mem::take(&mut self.reason_to_react)
        } else {
            "The actions queue is empty".to_string()
        };
        self.make_plan(&observations, &changes, &reason, inputs.now, provider, config, embedder, rec);
        self.maybe_reflect(inputs.now, provider, config, embedder, rec);
        let action = self.decide_action(
            &observations,
            &changes,
            inputs.position,
            validator,
            provider,
            config,
            rec,
        );
        self.last_action = action.to_string();
        self.past_actions.push(action.to_string());
        action
    }

    /// Mid-action sensing: store what changed, reflect if due, and ask
    /// whether to abandon the in-flight action. Called only when the tick
    /// produced events visible to this agent.
    pub fn mid_action_check(
        &mut self,
        inputs: &PerceiveInputs,
        in_flight: &str,
        provider: &mut dyn CompletionProvider,
        config: &ProviderConfig,
        embedder: &dyn Embedder,
        rec: &mut Recorder,
    ) -> bool {
        self.perceive(inputs, embedder, rec);
        self.maybe_reflect(inputs.now, provider, config, embedder, rec);
        let observations = self.short_term.get(keys::LAST_OBSERVATIONS).to_string();
        let changes = inputs.event_lines.join("\n");
        let (reasoning, change) =
            self.should_react(&observations, &changes, in_flight, inputs.now, provider, config, rec);
        if change {
            self.reason_to_react = reasoning;
        }
        change
    }
}
