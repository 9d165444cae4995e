//! Intent recognition by trigger patterns.
//!
//! A trigger is a sentence with `<slot>` holes, e.g. `play the song <title>`.
//! Literal words are compared token by token after normalization; a slot
//! binds one or more consecutive tokens and yields the matching stretch of
//! the *original* sentence, so "Play the song Hey Brother!" binds
//! `title = "Hey Brother"`. A trigger must cover the whole sentence and
//! slots are filled greedily from the left.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::knowledge::{LikelinessLevel, SentenceType};
use crate::text::{tokenize, Token};

pub const SET_LIKELINESS: &str = "setlikeliness";
pub const JUMP: &str = "jump";

/// One step of a plan or KB-plan. In intent definitions the argument values
/// may contain `<slot>` placeholders; in a match result they never do.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub action: String,
    #[serde(default)]
    pub args: BTreeMap<String, String>,
}

impl Action {
    pub fn new<K: Into<String>, V: Into<String>>(
        action: impl Into<String>,
        args: impl IntoIterator<Item = (K, V)>,
    ) -> Self {
        Action {
            action: action.into(),
            args: args.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }

    pub fn arg(&self, name: &str) -> Option<&str> {
        self.args.get(name).map(String::as_str)
    }

    fn slots(&self) -> impl Iterator<Item = String> + '_ {
        self.args.values().flat_map(|v| slot_refs(v))
    }

    fn fill(&self, params: &BTreeMap<String, String>) -> Action {
        Action {
            action: self.action.clone(),
            args: self
                .args
                .iter()
                .map(|(k, v)| (k.clone(), substitute(v, params)))
                .collect(),
        }
    }
}

/// Knowledge-base actions understood by the dialogue manager.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KbAction {
    SetLikeliness { topic: String, value: LikelinessLevel },
    Jump { topic: String, start: SentenceType },
    /// Anything else: skipped by the dialogue manager.
    Other(String),
}

impl KbAction {
    /// `None` when a known action has missing or malformed arguments.
    pub fn interpret(action: &Action) -> Option<KbAction> {
        match action.action.as_str() {
            SET_LIKELINESS => Some(KbAction::SetLikeliness {
                topic: action.arg("topic")?.to_string(),
                value: action.arg("value")?.parse().ok()?,
            }),
            JUMP => Some(KbAction::Jump {
                topic: action.arg("topic")?.to_string(),
                start: action.arg("startsentence")?.parse().ok()?,
            }),
            other => Some(KbAction::Other(other.to_string())),
        }
    }

    pub fn set_likeliness(topic: &str, value: LikelinessLevel) -> Action {
        Action::new(SET_LIKELINESS, [("topic", topic), ("value", value.name())])
    }

    pub fn jump(topic: &str, start: SentenceType) -> Action {
        Action::new(JUMP, [("topic", topic.to_string()), ("startsentence", start.to_string())])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Part {
    Word(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriggerPattern {
    source: String,
    parts: Vec<Part>,
}

impl TriggerPattern {
    pub fn parse(source: &str) -> Result<Self, String> {
        let mut parts = Vec::new();
        let mut rest = source;
        while let Some(open) = rest.find('<') {
            parts.extend(tokenize(&rest[..open]).into_iter().map(|t| Part::Word(t.norm)));
            let close = rest[open..]
                .find('>')
                .map(|c| open + c)
                .ok_or_else(|| format!("unclosed slot in trigger {source:?}"))?;
            let name = &rest[open + 1..close];
            if !is_slot_name(name) {
                return Err(format!("bad slot name {name:?} in trigger {source:?}"));
            }
            if matches!(parts.last(), Some(Part::Slot(_))) {
                return Err(format!("adjacent slots in trigger {source:?} are ambiguous"));
            }
            if parts.iter().any(|p| p == &Part::Slot(name.to_string())) {
                return Err(format!("slot <{name}> repeated in trigger {source:?}"));
            }
            parts.push(Part::Slot(name.to_string()));
            rest = &rest[close + 1..];
        }
        parts.extend(tokenize(rest).into_iter().map(|t| Part::Word(t.norm)));
        if parts.is_empty() {
            return Err(format!("trigger {source:?} has no words"));
        }
        Ok(TriggerPattern {
            source: source.to_string(),
            parts,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn slots(&self) -> impl Iterator<Item = &str> {
        self.parts.iter().filter_map(|p| match p {
            Part::Slot(s) => Some(s.as_str()),
            Part::Word(_) => None,
        })
    }

    /// Fills every slot with its binding.
    pub fn render(&self, params: &BTreeMap<String, String>) -> String {
        substitute(&self.source, params)
    }

    pub fn match_sentence(&self, sentence: &str) -> Option<BTreeMap<String, String>> {
        let tokens = tokenize(sentence);
        let mut spans = Vec::new();
        if !self.match_from(0, &tokens, 0, &mut spans) {
            return None;
        }
        Some(
            spans
                .into_iter()
                .map(|(name, from, to): (&str, usize, usize)| {
                    let text = &sentence[tokens[from].span.start..tokens[to - 1].span.end];
                    (name.to_string(), text.to_string())
                })
                .collect(),
        )
    }

    fn match_from<'a>(
        &'a self,
        part: usize,
        tokens: &[Token],
        at: usize,
        spans: &mut Vec<(&'a str, usize, usize)>,
    ) -> bool {
        match self.parts.get(part) {
            None => at == tokens.len(),
            Some(Part::Word(w)) => {
                tokens.get(at).is_some_and(|t| &t.norm == w)
                    && self.match_from(part + 1, tokens, at + 1, spans)
            }
            Some(Part::Slot(name)) => {
                for end in (at + 1..=tokens.len()).rev() {
                    spans.push((name, at, end));
                    if self.match_from(part + 1, tokens, end, spans) {
                        return true;
                    }
                    spans.pop();
                }
                false
            }
        }
    }
}

fn is_slot_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn slot_refs(text: &str) -> Vec<String> {
    let mut refs = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('<') {
        match rest[open..].find('>') {
            Some(len) => {
                let name = &rest[open + 1..open + len];
                if is_slot_name(name) {
                    refs.push(name.to_string());
                }
                rest = &rest[open + len + 1..];
            }
            None => break,
        }
    }
    refs
}

/// Single left-to-right pass, so bound values are never re-scanned.
fn substitute(text: &str, params: &BTreeMap<String, String>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('<') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let bound = tail
            .find('>')
            .and_then(|close| params.get(&tail[1..close]).map(|v| (v, close)));
        match bound {
            Some((value, close)) => {
                out.push_str(value);
                rest = &tail[close + 1..];
            }
            None => {
                out.push('<');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntentDef", into = "IntentDef")]
pub struct Intent {
    pub name: String,
    pub triggers: Vec<TriggerPattern>,
    pub plan_sentences: Vec<String>,
    pub kbplan: Vec<Action>,
    pub plan: Vec<Action>,
}

#[derive(Serialize, Deserialize)]
struct IntentDef {
    name: String,
    triggers: Vec<String>,
    #[serde(default)]
    plan_sentences: Vec<String>,
    #[serde(default)]
    kbplan: Vec<Action>,
    #[serde(default)]
    plan: Vec<Action>,
}

impl TryFrom<IntentDef> for Intent {
    type Error = RegistryError;

    fn try_from(def: IntentDef) -> Result<Self, Self::Error> {
        let invalid = |problem: String| RegistryError::Invalid {
            intent: def.name.clone(),
            problem,
        };
        if def.name.trim().is_empty() {
            return Err(invalid("empty intent name".into()));
        }
        if def.triggers.is_empty() {
            return Err(invalid("no trigger sentences".into()));
        }
        if def.kbplan.is_empty() && def.plan.is_empty() && def.plan_sentences.is_empty() {
            return Err(invalid("needs a plan, a KB-plan or a plan sentence".into()));
        }
        let triggers = def
            .triggers
            .iter()
            .map(|t| TriggerPattern::parse(t))
            .collect::<Result<Vec<_>, _>>()
            .map_err(invalid)?;
        // A referenced slot must be bound whichever trigger fires, otherwise
        // the produced actions would carry unresolved placeholders.
        let referenced: BTreeSet<String> = def
            .plan_sentences
            .iter()
            .flat_map(|s| slot_refs(s))
            .chain(def.kbplan.iter().chain(&def.plan).flat_map(|a| a.slots().collect::<Vec<_>>()))
            .collect();
        for slot in &referenced {
            if let Some(t) = triggers.iter().find(|t| !t.slots().any(|s| s == slot)) {
                return Err(invalid(format!(
                    "slot <{slot}> is not bound by trigger {:?}",
                    t.source()
                )));
            }
        }
        for action in &def.kbplan {
            validate_kb_action(action).map_err(invalid)?;
        }
        Ok(Intent {
            name: def.name,
            triggers,
            plan_sentences: def.plan_sentences,
            kbplan: def.kbplan,
            plan: def.plan,
        })
    }
}

impl From<Intent> for IntentDef {
    fn from(i: Intent) -> Self {
        IntentDef {
            name: i.name,
            triggers: i.triggers.into_iter().map(|t| t.source).collect(),
            plan_sentences: i.plan_sentences,
            kbplan: i.kbplan,
            plan: i.plan,
        }
    }
}

fn validate_kb_action(action: &Action) -> Result<(), String> {
    let need = |arg: &str| {
        action
            .arg(arg)
            .ok_or_else(|| format!("{} action lacks {arg:?}", action.action))
    };
    let literal = |v: &str| slot_refs(v).is_empty();
    match action.action.as_str() {
        SET_LIKELINESS => {
            need("topic")?;
            let value = need("value")?;
            if literal(value) && value.parse::<LikelinessLevel>().is_err() {
                return Err(format!("unknown likeliness value {value:?}"));
            }
        }
        JUMP => {
            need("topic")?;
            let start = need("startsentence")?;
            if literal(start) && start.parse::<SentenceType>().is_err() {
                return Err(format!("unknown start sentence type {start:?}"));
            }
        }
        other => return Err(format!("{other:?} is not a knowledge-base action")),
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("intent file parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("intent {intent:?}: {problem}")]
    Invalid { intent: String, problem: String },
}

/// Ordered intent list; earlier intents win when triggers overlap.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntentRegistry {
    pub intents: Vec<Intent>,
}

#[derive(Deserialize)]
struct RegistryDocument {
    intents: Vec<IntentDef>,
}

pub fn load_intent_registry(document: &str) -> Result<IntentRegistry, RegistryError> {
    let doc: RegistryDocument =
        serde_json::from_str(document).map_err(|e| RegistryError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    let intents = doc
        .intents
        .into_iter()
        .map(Intent::try_from)
        .collect::<Result<Vec<_>, _>>()?;
    let mut names = BTreeSet::new();
    for intent in &intents {
        if !names.insert(intent.name.as_str()) {
            return Err(RegistryError::Invalid {
                intent: intent.name.clone(),
                problem: "duplicate intent name".into(),
            });
        }
    }
    Ok(IntentRegistry { intents })
}

impl IntentRegistry {
    pub fn len(&self) -> usize {
        self.intents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intents.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentMatch {
    pub intent: String,
    pub params: BTreeMap<String, String>,
    pub plan_sentence: Option<String>,
    pub kbplan: Vec<Action>,
    pub plan: Vec<Action>,
}

/// First intent (in registry order) with a trigger covering the sentence.
pub fn match_intent(user_sentence: &str, registry: &IntentRegistry) -> Option<IntentMatch> {
    registry.intents.iter().find_map(|intent| {
        let params = intent
            .triggers
            .iter()
            .find_map(|t| t.match_sentence(user_sentence))?;
        Some(IntentMatch {
            intent: intent.name.clone(),
            plan_sentence: intent.plan_sentences.first().map(|s| substitute(s, &params)),
            kbplan: intent.kbplan.iter().map(|a| a.fill(&params)).collect(),
            plan: intent.plan.iter().map(|a| a.fill(&params)).collect(),
            params,
        })
    })
}
