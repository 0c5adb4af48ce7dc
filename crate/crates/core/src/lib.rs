//! A deterministic, replayable commons-harvest grid world together with the
//! natural-language observation layer, generative-agent cognition, and the
//! cooperation metrics used to evaluate LLM-driven agents in it.
//!
//! The crate is organized around the life of an episode:
//!
//! * [`substrate`] — the grid engine: apples, grass, trees, movement, zapping.
//! * [`textifier`] — turns grid state and events into observation text.
//! * [`memory`] — long-term associative memory, short-term store, spatial map.
//! * [`cognition`] — the perceive/react/plan/reflect/act pipeline.
//! * [`llm`] — completion and embedding providers (live, scripted, hash).
//! * [`scenario`] — scenario configuration and the shipped scenario library.
//! * [`log`] — the append-only episode log and replay verification.
//! * [`runtime`] — episode orchestration: scheduling, execution, bots.
//! * [`metrics`] — every evaluation indicator, recomputed from logs.

pub mod cognition;
pub mod llm;
pub mod log;
pub mod memory;
pub mod metrics;
pub mod runtime;
pub mod scenario;
pub mod substrate;
pub mod textifier;

pub use substrate::{
    Cell, CellKind, EntityKind, EntityState, GridState, Move, Orientation, Position, Terminal,
    Tree, WorldConfig, WorldEvent,
};
