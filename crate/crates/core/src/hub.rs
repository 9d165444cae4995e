//! The facade service: plan manager first, dialogue manager second, outputs
//! merged into one response.
//!
//! Everything here is transport-agnostic. [`Hub::handle_json`] takes a route
//! and raw body bytes and returns status, body and the measured processing
//! time, so the HTTP layer only has to move bytes around. A [`Hub`] holds
//! immutable knowledge only and is shared by all request handlers.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tracing::{debug, info};

use crate::dialogmgr::{dialogue_step, entry_queue, rng_for, DialogueError};
use crate::knowledge::{compile_dialogue_tree, DialogueTree, Ontology, SentenceType};
use crate::planmgr::{match_intent, Action, IntentRegistry};
use crate::state::{ClientState, StateError, WireState};

pub const API_PREFIX: &str = "/cair/v1";
pub const PROCESSING_HEADER: &str = "X-CAIR-Processing-Ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HubRequest {
    pub client_sentence: String,
    pub client_state: WireState,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub culture: Option<String>,
}

/// Body of a hub or dialogue response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HubResponse {
    pub dialogue_sentence: String,
    pub plan_sentence: Option<String>,
    pub plan: Vec<Action>,
    pub client_state: WireState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialResponse {
    pub client_state: WireState,
    pub dialogue_sentence: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub client_sentence: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanReply {
    #[serde(default)]
    pub intent: Option<String>,
    pub plan_sentence: Option<String>,
    pub kbplan: Vec<Action>,
    pub plan: Vec<Action>,
}

impl PlanReply {
    pub fn matched(&self) -> bool {
        self.intent.is_some()
            || self.plan_sentence.is_some()
            || !self.kbplan.is_empty()
            || !self.plan.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueRequest {
    pub client_sentence: String,
    pub client_state: WireState,
    #[serde(default)]
    pub kbplan: Vec<Action>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub culture: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum HubError {
    #[error("malformed request: {0}")]
    BadRequest(String),
    #[error("invalid client state: {0}")]
    State(#[from] StateError),
    #[error("{0}")]
    Unavailable(String),
    #[error("upstream service failed: {0}")]
    Upstream(String),
}

impl HubError {
    pub fn status(&self) -> u16 {
        match self {
            HubError::BadRequest(_) => 400,
            HubError::State(_) => 422,
            HubError::Unavailable(_) => 503,
            HubError::Upstream(_) => 502,
        }
    }

    pub fn body(&self) -> Vec<u8> {
        serde_json::to_vec(&serde_json::json!({
            "error": self.to_string(),
            "status": self.status(),
        }))
        .expect("error body serializes")
    }
}

impl From<DialogueError> for HubError {
    fn from(e: DialogueError) -> Self {
        match e {
            DialogueError::InvalidState(s) => HubError::State(s),
        }
    }
}

/// Plan and plan sentence come from the plan manager whenever it matched;
/// only otherwise does an accepted proposal's plan get through.
pub fn merge_replies(plan: &PlanReply, mut dialogue: HubResponse) -> HubResponse {
    if plan.matched() {
        dialogue.plan = plan.plan.clone();
        dialogue.plan_sentence = plan.plan_sentence.clone();
    }
    dialogue
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route<'a> {
    State {
        culture: Option<&'a str>,
        seed: Option<u64>,
    },
    Hub,
    Plan,
    Dialogue,
}

impl Route<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Route::State { .. } => "state",
            Route::Hub => "hub",
            Route::Plan => "plan",
            Route::Dialogue => "dialogue",
        }
    }
}

#[derive(Debug, Clone)]
pub struct JsonReply {
    pub status: u16,
    pub body: Vec<u8>,
    pub processing_ms: f64,
    pub intent: Option<String>,
}

pub struct Hub {
    trees: BTreeMap<String, DialogueTree>,
    agnostic: DialogueTree,
    registry: IntentRegistry,
    default_culture: String,
}

impl Hub {
    /// Compiles one tree per culture mentioned in the ontology plus the
    /// culture-agnostic one.
    pub fn new(ontology: &Ontology, registry: IntentRegistry, default_culture: &str) -> Self {
        let trees = ontology
            .cultures()
            .into_iter()
            .map(|c| {
                let tree = compile_dialogue_tree(ontology, &c);
                (c, tree)
            })
            .collect();
        let agnostic = compile_dialogue_tree(ontology, "");
        Hub {
            trees,
            agnostic,
            registry,
            default_culture: default_culture.to_string(),
        }
    }

    pub fn registry(&self) -> &IntentRegistry {
        &self.registry
    }

    pub fn default_culture(&self) -> &str {
        &self.default_culture
    }

    /// The tree serving `culture`; unknown cultures get the culture-agnostic
    /// tree.
    pub fn tree(&self, culture: &str) -> &DialogueTree {
        self.trees.get(culture).unwrap_or(&self.agnostic)
    }

    pub fn trees(&self) -> impl Iterator<Item = &DialogueTree> {
        self.trees.values().chain(std::iter::once(&self.agnostic))
    }

    fn culture_of<'a>(&'a self, requested: Option<&'a str>, carried: &'a str) -> &'a str {
        requested
            .filter(|c| !c.is_empty())
            .or(Some(carried).filter(|c| !c.is_empty()))
            .unwrap_or(&self.default_culture)
    }

    /// Fresh state on the root topic plus the opening sentence.
    pub fn handle_initial(&self, culture: Option<&str>, seed: Option<u64>) -> Result<(ClientState, String), HubError> {
        let culture = culture.filter(|c| !c.is_empty()).unwrap_or(&self.default_culture);
        let tree = self.tree(culture);
        let root = tree.root();
        let mut rng = rng_for(seed);
        let mut state = ClientState::new(culture, &root.topic);
        state.queue = entry_queue(root, None, &mut rng);
        let greetings: Vec<&str> = root
            .sentences_of(SentenceType::Greeting)
            .map(|(_, s)| s.text.as_str())
            .collect();
        let greeting = if greetings.is_empty() {
            // No greeting on the root: open with its first regular sentence.
            let kind = state.queue.remove(0);
            let choice = crate::dialogmgr::choose_sentence_with(root, kind, None, &mut rng)
                .ok_or_else(|| HubError::Unavailable("root topic has no sentences".into()))?;
            state.used.entry(root.topic.clone()).or_default().insert(choice.index);
            state.last_type = kind;
            if kind == SentenceType::Proposal {
                state.pending_trigger = root.sentences[choice.index].trigger.clone();
            }
            choice.text
        } else {
            use rand::Rng;
            greetings[rng.gen_range(0..greetings.len())].to_string()
        };
        Ok((state, greeting))
    }

    pub fn plan(&self, request: &PlanRequest) -> PlanReply {
        match match_intent(&request.client_sentence, &self.registry) {
            Some(m) => PlanReply {
                intent: Some(m.intent),
                plan_sentence: m.plan_sentence,
                kbplan: m.kbplan,
                plan: m.plan,
            },
            None => PlanReply::default(),
        }
    }

    pub fn dialogue(&self, request: &DialogueRequest) -> Result<HubResponse, HubError> {
        let culture = self.culture_of(request.culture.as_deref(), &request.client_state.cu);
        let tree = self.tree(culture);
        let state = ClientState::from_wire(&request.client_state, tree.layout())?;
        let outcome = dialogue_step(
            &request.client_sentence,
            &state,
            &request.kbplan,
            tree,
            &self.registry,
            request.seed,
        )?;
        debug!(stage = "dialogue", topic = %outcome.state.topic, branch = ?outcome.branch);
        Ok(HubResponse {
            dialogue_sentence: outcome.dialogue_sentence,
            plan_sentence: outcome.plan_sentence,
            plan: outcome.plan,
            client_state: outcome.state.to_wire(tree.layout()),
        })
    }

    pub fn handle_hub(&self, request: &HubRequest) -> Result<HubResponse, HubError> {
        self.pipeline(request).map(|(response, _)| response)
    }

    fn pipeline(&self, request: &HubRequest) -> Result<(HubResponse, Option<String>), HubError> {
        let plan = self.plan(&PlanRequest {
            client_sentence: request.client_sentence.clone(),
        });
        info!(stage = "plan", intent = plan.intent.as_deref().unwrap_or("-"));
        let dialogue = self.dialogue(&DialogueRequest {
            client_sentence: request.client_sentence.clone(),
            client_state: request.client_state.clone(),
            kbplan: plan.kbplan.clone(),
            seed: request.seed,
            culture: request.culture.clone(),
        })?;
        info!(stage = "dialogue", topic = %dialogue.client_state.t);
        let intent = plan.intent.clone();
        Ok((merge_replies(&plan, dialogue), intent))
    }

    /// Decodes, serves and encodes one request, timing the whole span.
    pub fn handle_json(&self, route: Route<'_>, body: &[u8]) -> JsonReply {
        let started = Instant::now();
        let mut intent = None;
        let result: Result<Vec<u8>, HubError> = match route {
            Route::State { culture, seed } => self.handle_initial(culture, seed).map(|(state, greeting)| {
                let tree = self.tree(&state.culture);
                encode(&InitialResponse {
                    client_state: state.to_wire(tree.layout()),
                    dialogue_sentence: greeting,
                })
            }),
            Route::Hub => decode::<HubRequest>(body).and_then(|req| {
                let (response, matched) = self.pipeline(&req)?;
                intent = matched;
                Ok(encode(&response))
            }),
            Route::Plan => decode::<PlanRequest>(body).map(|req| {
                let reply = self.plan(&req);
                intent = reply.intent.clone();
                encode(&reply)
            }),
            Route::Dialogue => decode::<DialogueRequest>(body).and_then(|req| Ok(encode(&self.dialogue(&req)?))),
        };
        let (status, body) = match result {
            Ok(body) => (200, body),
            Err(e) => {
                debug!(error = %e, "request rejected");
                (e.status(), e.body())
            }
        };
        let processing_ms = started.elapsed().as_secs_f64() * 1000.0;
        JsonReply {
            status,
            body,
            processing_ms,
            intent,
        }
    }
}

pub fn decode<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, HubError> {
    serde_json::from_slice(body).map_err(|e| HubError::BadRequest(e.to_string()))
}

pub fn encode<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("response types serialize")
}
