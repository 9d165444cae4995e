//! Blocking conversation client: fetch the initial state, then send every
//! utterance with the stored state and keep whatever comes back.

use std::time::Duration;

use cair_core::client::{load_state, quarantine_state, render_turn, save_state, ClientError, LocalProfile, PlanHandlers};
use cair_core::hub::{HubRequest, HubResponse, InitialResponse, API_PREFIX};
use cair_core::state::WireState;

#[derive(Debug, thiserror::Error)]
pub enum ChatError {
    #[error("cannot reach {url}: {message} (is the server running? retry once it is up)")]
    Network { url: String, message: String },
    #[error("server answered {status}: {body}")]
    Protocol { status: u16, body: String },
    #[error("no saved conversation state; run bootstrap first")]
    NotBootstrapped,
    #[error(transparent)]
    Local(#[from] ClientError),
}

impl ChatError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ChatError::Network { .. } => 2,
            ChatError::Protocol { .. } => 3,
            ChatError::NotBootstrapped | ChatError::Local(_) => 4,
        }
    }
}

pub struct ChatClient {
    base: String,
    http: reqwest::blocking::Client,
    pub profile: LocalProfile,
    pub handlers: PlanHandlers,
    pub culture: Option<String>,
    pub seed: Option<u64>,
}

impl ChatClient {
    pub fn new(server: &str, profile: LocalProfile) -> Self {
        ChatClient {
            base: server.trim_end_matches('/').to_string(),
            http: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(30))
                .build()
                .expect("http client builds"),
            profile,
            handlers: PlanHandlers::default(),
            culture: None,
            seed: None,
        }
    }

    fn url(&self, route: &str) -> String {
        format!("{}{API_PREFIX}/{route}", self.base)
    }

    fn read(&self, request: reqwest::blocking::RequestBuilder, url: &str) -> Result<Vec<u8>, ChatError> {
        let network = |e: reqwest::Error| ChatError::Network {
            url: url.to_string(),
            message: e.to_string(),
        };
        let response = request.send().map_err(network)?;
        let status = response.status().as_u16();
        let body = response.bytes().map_err(network)?.to_vec();
        if status != 200 {
            return Err(ChatError::Protocol {
                status,
                body: String::from_utf8_lossy(&body).into_owned(),
            });
        }
        Ok(body)
    }

    fn protocol(e: serde_json::Error) -> ChatError {
        ChatError::Protocol {
            status: 200,
            body: format!("unreadable response: {e}"),
        }
    }

    /// Fetches a fresh state, stores it and returns the rendered greeting.
    /// Nothing is written when the server cannot be reached.
    pub fn bootstrap(&self) -> Result<String, ChatError> {
        let url = self.url("state");
        let mut query: Vec<(&str, String)> = Vec::new();
        if let Some(c) = &self.culture {
            query.push(("culture", c.clone()));
        }
        if let Some(s) = self.seed {
            query.push(("seed", s.to_string()));
        }
        let body = self.read(self.http.get(&url).query(&query), &url)?;
        let initial: InitialResponse = serde_json::from_slice(&body).map_err(Self::protocol)?;
        save_state(&self.profile.state_path, &initial.client_state)?;
        Ok(self.profile.render(&initial.dialogue_sentence))
    }

    /// The stored state, moving a corrupt file aside and bootstrapping
    /// again when needed. Returns a greeting when a new state was fetched.
    pub fn ensure_state(&self) -> Result<(WireState, Option<String>), ChatError> {
        let greeting = match load_state(&self.profile.state_path) {
            Ok(Some(state)) => return Ok((state, None)),
            Ok(None) => self.bootstrap()?,
            Err(ClientError::CorruptState { path, .. }) => {
                let backup = quarantine_state(&path)?;
                tracing::warn!(backup = %backup.display(), "corrupt state moved aside");
                self.bootstrap()?
            }
            Err(e) => return Err(e.into()),
        };
        let state = load_state(&self.profile.state_path)?.ok_or(ChatError::NotBootstrapped)?;
        Ok((state, Some(greeting)))
    }

    /// Sends one utterance. The stored state is replaced only after a
    /// complete, successful response.
    pub fn send(&self, utterance: &str) -> Result<HubResponse, ChatError> {
        let state = load_state(&self.profile.state_path)?.ok_or(ChatError::NotBootstrapped)?;
        let request = HubRequest {
            client_sentence: utterance.to_string(),
            client_state: state,
            seed: self.seed,
            culture: self.culture.clone(),
        };
        let url = self.url("hub");
        let body = self.read(self.http.post(&url).json(&request), &url)?;
        let response: HubResponse = serde_json::from_slice(&body).map_err(Self::protocol)?;
        save_state(&self.profile.state_path, &response.client_state)?;
        Ok(response)
    }

    /// Sends one utterance and returns the lines to show: plan sentence,
    /// plan actions (executed or skipped), dialogue sentence.
    pub fn converse_turn(&self, utterance: &str) -> Result<Vec<String>, ChatError> {
        let response = self.send(utterance)?;
        Ok(render_turn(&response, &self.profile, &self.handlers))
    }
}
