//! Scenario configuration: who plays, on which map, with which
//! personalities, and under which engine and cognition parameters. One
//! human-editable TOML file per scenario; the shipped library covers the
//! five personality scenarios, the three one-tree scenarios, agents versus
//! bots, and the informed-selfish setup. The fully resolved config is
//! embedded in every episode log header, so logs are self-describing.

use std::collections::BTreeMap;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::RetrievalWeights;
use crate::substrate::{WorldConfig, DEFAULT_MAP, ONE_TREE_MAP};

/// The world rules text every agent receives, identical across agents.
pub const WORLD_CONTEXT: &str = include_str!("../data/world_context.txt");

macro_rules! embedded {
    ($($name:literal => $path:literal),+ $(,)?) => {
        &[$(($name, include_str!($path))),+]
    };
}

/// Shipped scenario files, by name.
pub const SCENARIO_LIBRARY: &[(&str, &str)] = embedded! {
    "without_personality" => "../data/scenarios/without_personality.toml",
    "all_coop" => "../data/scenarios/all_coop.toml",
    "all_coop_def" => "../data/scenarios/all_coop_def.toml",
    "all_selfish" => "../data/scenarios/all_selfish.toml",
    "all_selfish_def" => "../data/scenarios/all_selfish_def.toml",
    "one_tree_no_bio" => "../data/scenarios/one_tree_no_bio.toml",
    "one_tree_all_coop" => "../data/scenarios/one_tree_all_coop.toml",
    "one_tree_all_selfish" => "../data/scenarios/one_tree_all_selfish.toml",
    "agents_vs_bots" => "../data/scenarios/agents_vs_bots.toml",
    "informed_selfish" => "../data/scenarios/informed_selfish.toml",
};

/// Shipped personality and knowledge texts referenced by scenario files.
/// They are reconstructions meant to be edited; `<agent_name>` is replaced
/// with each agent's name at load time.
pub const PERSONALITY_LIBRARY: &[(&str, &str)] = embedded! {
    "cooperative.txt" => "../data/personalities/cooperative.txt",
    "cooperative_def.txt" => "../data/personalities/cooperative_def.txt",
    "selfish.txt" => "../data/personalities/selfish.txt",
    "selfish_def.txt" => "../data/personalities/selfish_def.txt",
    "informed_about_pedro.txt" => "../data/personalities/informed_about_pedro.txt",
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("scenario file is not valid TOML: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("unknown map `{0}`")]
    UnknownMap(String),
    #[error("unknown personality file `{0}`")]
    UnknownPersonality(String),
    #[error("scenario has no focal agents")]
    NoAgents,
    #[error("duplicate entity name `{0}`")]
    DuplicateName(String),
}

/// Optional per-scenario overrides of the world rules.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldOverrides {
    pub regrowth_probability: Option<[f64; 4]>,
    pub removal_steps: Option<u32>,
    pub beam_length: Option<u32>,
    pub beam_width: Option<u32>,
    pub window_height: Option<u32>,
    pub window_width: Option<u32>,
}

impl WorldOverrides {
    pub fn apply(&self, mut config: WorldConfig) -> WorldConfig {
        if let Some(v) = self.regrowth_probability {
            config.regrowth_probability = v;
        }
        if let Some(v) = self.removal_steps {
            config.removal_steps = v;
        }
        if let Some(v) = self.beam_length {
            config.beam_length = v;
        }
        if let Some(v) = self.beam_width {
            config.beam_width = v;
        }
        if let Some(v) = self.window_height {
            config.window_height = v;
        }
        if let Some(v) = self.window_width {
            config.window_width = v;
        }
        config
    }
}

/// Knobs of the cognitive pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CognitionParams {
    /// Maximum observation lines forwarded to the cognitive modules.
    pub attention_bandwidth: usize,
    /// Provider re-queries allowed on malformed responses before falling
    /// back.
    pub retry_budget: u32,
    /// Stored observations between reflections.
    pub reflection_threshold: u32,
    /// Memories retrieved per reflection question.
    pub reflection_retrieval_k: usize,
    pub retrieval_weights: RetrievalWeights,
    pub paper_literal_recency: bool,
}

impl Default for CognitionParams {
    fn default() -> Self {
        CognitionParams {
            attention_bandwidth: 10,
            retry_budget: 3,
            reflection_threshold: 30,
            reflection_retrieval_k: 10,
            retrieval_weights: RetrievalWeights::default(),
            paper_literal_recency: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BotConfig {
    pub names: Vec<String>,
    /// Probability of firing the zapper when no apple is visible.
    pub p_attack: f64,
}

impl Default for BotConfig {
    fn default() -> Self {
        BotConfig { names: Vec::new(), p_attack: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub name: String,
    /// Inline personality text; empty for no personality.
    #[serde(default)]
    pub personality: String,
    /// Name of a shipped personality file; overrides `personality`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub personality_file: Option<String>,
    /// Extra knowledge injected at episode start, verbatim.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub knowledge: Vec<String>,
    /// Knowledge texts taken from the personality library.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub knowledge_files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// `default`, `one_tree`, or `inline` (with `inline_map` set).
    pub map: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inline_map: Option<String>,
    pub max_rounds: u32,
    pub clock_start: NaiveDateTime,
    pub clock_increment_hours: u32,
    #[serde(default)]
    pub world: WorldOverrides,
    #[serde(default)]
    pub cognition: CognitionParams,
    #[serde(default)]
    pub bots: BotConfig,
    pub agents: Vec<AgentSpec>,
}

impl ScenarioConfig {
    /// Parses and validates a scenario file, resolving personality and
    /// knowledge file references into inline text.
    pub fn from_toml(text: &str) -> Result<ScenarioConfig, ScenarioError> {
        let mut config: ScenarioConfig = toml::from_str(text)?;
        config.resolve()?;
        Ok(config)
    }

    /// Loads a scenario from the shipped library by name.
    pub fn from_library(name: &str) -> Result<ScenarioConfig, ScenarioError> {
        let text = SCENARIO_LIBRARY
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| ScenarioError::UnknownScenario(name.to_string()))?;
        ScenarioConfig::from_toml(text)
    }

    pub fn library_names() -> Vec<&'static str> {
        SCENARIO_LIBRARY.iter().map(|(n, _)| *n).collect()
    }

    fn resolve(&mut self) -> Result<(), ScenarioError> {
        if self.agents.is_empty() {
            return Err(ScenarioError::NoAgents);
        }
        let personalities: BTreeMap<&str, &str> = PERSONALITY_LIBRARY.iter().copied().collect();
        for agent in &mut self.agents {
            if let Some(file) = agent.personality_file.take() {
                let text = personalities
                    .get(file.as_str())
                    .ok_or_else(|| ScenarioError::UnknownPersonality(file.clone()))?;
                agent.personality = text.trim_end().replace("<agent_name>", &agent.name);
            }
            for file in std::mem::take(&mut agent.knowledge_files) {
                let text = personalities
                    .get(file.as_str())
                    .ok_or_else(|| ScenarioError::UnknownPersonality(file.clone()))?;
                agent.knowledge.push(text.trim_end().replace("<agent_name>", &agent.name));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in self.agents.iter().map(|a| a.name.as_str()).chain(self.bots.names.iter().map(String::as_str))
        {
            if !seen.insert(name) {
                return Err(ScenarioError::DuplicateName(name.to_string()));
            }
        }
        self.map_ascii()?;
        Ok(())
    }

    /// The ASCII map this scenario plays on.
    pub fn map_ascii(&self) -> Result<&str, ScenarioError> {
        match self.map.as_str() {
            "default" => Ok(DEFAULT_MAP),
            "one_tree" => Ok(ONE_TREE_MAP),
            "inline" => self
                .inline_map
                .as_deref()
                .ok_or_else(|| ScenarioError::UnknownMap("inline (no inline_map)".into())),
            other => Err(ScenarioError::UnknownMap(other.to_string())),
        }
    }

    /// World rules after applying this scenario's overrides and round
    /// limit.
    pub fn world_config(&self) -> WorldConfig {
        let mut config = self.world.apply(WorldConfig::default());
        config.max_rounds = self.max_rounds;
        config
    }
}
