//! Stateless conversational engine: knowledge base, plan manager and
//! dialogue manager, plus the hub that chains them, a client SDK and a
//! load generator.
//!
//! Servers keep no per-user data. Every request carries the conversation
//! state and every response returns the updated copy.

pub mod client;
pub mod dialogmgr;
pub mod hub;
pub mod knowledge;
pub mod loadgen;
pub mod planmgr;
pub mod state;
pub mod text;

pub use client::{build_coverage_state, Fraction, LocalProfile, PlanHandlers};
pub use dialogmgr::{dialogue_step, DialogueOutcome};
pub use hub::{Hub, HubError, HubRequest, HubResponse};
pub use knowledge::{
    compile_dialogue_tree, parse_ontology, DialogueTree, LikelinessLevel, Ontology, SentenceType,
    TopicConcept, TreeStats,
};
pub use loadgen::{size_deployment, LoadRecord, LoadReport, LoadScenario, Ratio};
pub use planmgr::{load_intent_registry, match_intent, Action, IntentMatch, IntentRegistry};
pub use state::{ClientState, StateLayout, WireState};
