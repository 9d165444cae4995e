//! Layered topic ontology and its compilation into a dialogue tree.
//!
//! The ontology file carries three layers in one document: the culture
//! agnostic concepts (`topics[*]` with their parents, `related` links and
//! sentence templates), the culture-specific layer (`topics[*].cultures`)
//! and, since deployments load it the same way, any person-specific
//! sentences an operator chooses to add as an extra culture entry.

mod compile;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::text::KeywordPattern;

pub use compile::{
    compile_dialogue_tree, estimate_max_state_size, DialogueTree, DtNode, DtSentence, TreeStats,
};
pub use synth::generate_synthetic_ontology;

/// Only ontology schema version understood by this build.
pub const ONTOLOGY_VERSION: u32 = 1;

/// Culture used when a client does not name one.
pub const DEFAULT_CULTURE: &str = "EN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SentenceType {
    /// `p`
    Positive,
    /// `n`
    Negative,
    /// `y`
    YesNo,
    /// `o`
    Open,
    /// `a`: proposes an activity; carries a plan trigger.
    Proposal,
    /// `f`: first-encounter greeting.
    Greeting,
}

impl SentenceType {
    pub const ALL: [SentenceType; 6] = [
        SentenceType::Positive,
        SentenceType::Negative,
        SentenceType::YesNo,
        SentenceType::Open,
        SentenceType::Proposal,
        SentenceType::Greeting,
    ];

    pub fn code(self) -> char {
        match self {
            SentenceType::Positive => 'p',
            SentenceType::Negative => 'n',
            SentenceType::YesNo => 'y',
            SentenceType::Open => 'o',
            SentenceType::Proposal => 'a',
            SentenceType::Greeting => 'f',
        }
    }

    pub fn from_code(code: char) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.code() == code)
    }

    /// Questions are inherited by subclasses unless a template says otherwise.
    pub fn inheritable_by_default(self) -> bool {
        matches!(self, SentenceType::YesNo | SentenceType::Open)
    }
}

impl fmt::Display for SentenceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown sentence type {0:?}")]
pub struct UnknownSentenceType(pub String);

impl FromStr for SentenceType {
    type Err = UnknownSentenceType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Self::from_code(c).ok_or_else(|| UnknownSentenceType(s.into())),
            _ => Err(UnknownSentenceType(s.into())),
        }
    }
}

impl TryFrom<String> for SentenceType {
    type Error = UnknownSentenceType;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<SentenceType> for String {
    fn from(value: SentenceType) -> Self {
        value.code().to_string()
    }
}

/// Five-point attitude scale used to weight topic selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LikelinessLevel {
    VeryLow,
    Low,
    Medium,
    High,
    VeryHigh,
}

impl LikelinessLevel {
    pub const ALL: [LikelinessLevel; 5] = [
        LikelinessLevel::VeryLow,
        LikelinessLevel::Low,
        LikelinessLevel::Medium,
        LikelinessLevel::High,
        LikelinessLevel::VeryHigh,
    ];

    pub fn weight(self) -> f64 {
        match self {
            LikelinessLevel::VeryLow => 0.1,
            LikelinessLevel::Low => 0.3,
            LikelinessLevel::Medium => 0.5,
            LikelinessLevel::High => 0.7,
            LikelinessLevel::VeryHigh => 0.9,
        }
    }

    /// Inverse of [`weight`](Self::weight); exact for the five scale values.
    pub fn from_weight(weight: f64) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|l| (l.weight() - weight).abs() < 1e-9)
    }

    /// 1..=5, used by the compact wire encoding.
    pub fn rank(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_rank(rank: u8) -> Option<Self> {
        Self::ALL.get(usize::from(rank).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            LikelinessLevel::VeryLow => "VeryLow",
            LikelinessLevel::Low => "Low",
            LikelinessLevel::Medium => "Medium",
            LikelinessLevel::High => "High",
            LikelinessLevel::VeryHigh => "VeryHigh",
        }
    }
}

impl fmt::Display for LikelinessLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown likeliness level {0:?}")]
pub struct UnknownLikeliness(pub String);

impl FromStr for LikelinessLevel {
    type Err = UnknownLikeliness;

    /// Accepts `VeryHigh`, `very high`, `very_high` and similar spellings.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let squashed: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        Self::ALL
            .into_iter()
            .find(|l| l.name().to_lowercase() == squashed)
            .ok_or_else(|| UnknownLikeliness(s.into()))
    }
}

impl TryFrom<String> for LikelinessLevel {
    type Error = UnknownLikeliness;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<LikelinessLevel> for String {
    fn from(value: LikelinessLevel) -> Self {
        value.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceTemplate {
    #[serde(rename = "type")]
    pub kind: SentenceType,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<String>,
    /// Falls back to [`SentenceType::inheritable_by_default`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inheritable: Option<bool>,
}

impl SentenceTemplate {
    pub fn new(kind: SentenceType, text: impl Into<String>) -> Self {
        Self {
            kind,
            text: text.into(),
            trigger: None,
            inheritable: None,
        }
    }

    pub fn is_inheritable(&self) -> bool {
        self.inheritable
            .unwrap_or_else(|| self.kind.inheritable_by_default())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CultureOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub likeliness: Option<LikelinessLevel>,
    #[serde(default, rename = "sentences", skip_serializing_if = "Vec::is_empty")]
    pub extra_templates: Vec<SentenceTemplate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicConcept {
    pub id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub related: Vec<String>,
    #[serde(default)]
    pub keywords: Vec<KeywordPattern>,
    #[serde(default, rename = "sentences")]
    pub sentence_templates: Vec<SentenceTemplate>,
    #[serde(default, rename = "cultures", skip_serializing_if = "BTreeMap::is_empty")]
    pub culture_overrides: BTreeMap<String, CultureOverride>,
}

impl TopicConcept {
    pub fn new(id: impl Into<String>, name: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            parent: None,
            related: Vec::new(),
            keywords: Vec::new(),
            sentence_templates: Vec::new(),
            culture_overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum KnowledgeError {
    #[error("ontology parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported ontology version {0} (expected {ONTOLOGY_VERSION})")]
    Version(u32),
    #[error("ontology has no topics")]
    Empty,
    #[error("topic {topic:?}: {problem}")]
    Invalid { topic: String, problem: String },
}

impl KnowledgeError {
    fn invalid(topic: &str, problem: impl Into<String>) -> Self {
        KnowledgeError::Invalid {
            topic: topic.to_string(),
            problem: problem.into(),
        }
    }
}

impl From<serde_json::Error> for KnowledgeError {
    fn from(e: serde_json::Error) -> Self {
        KnowledgeError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

/// A validated ontology. Construct with [`parse_ontology`] or
/// [`Ontology::new`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OntologyDocument", into = "OntologyDocument")]
pub struct Ontology {
    topics: Vec<TopicConcept>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct OntologyDocument {
    version: u32,
    topics: Vec<TopicConcept>,
}

impl TryFrom<OntologyDocument> for Ontology {
    type Error = KnowledgeError;

    fn try_from(doc: OntologyDocument) -> Result<Self, Self::Error> {
        if doc.version != ONTOLOGY_VERSION {
            return Err(KnowledgeError::Version(doc.version));
        }
        Ontology::new(doc.topics)
    }
}

impl From<Ontology> for OntologyDocument {
    fn from(o: Ontology) -> Self {
        OntologyDocument {
            version: ONTOLOGY_VERSION,
            topics: o.topics,
        }
    }
}

pub fn parse_ontology(document: &str) -> Result<Ontology, KnowledgeError> {
    // Parse into the raw document first so syntax errors keep their location
    // and validation errors keep their own message.
    let doc: OntologyDocument = serde_json::from_str(document)?;
    Ontology::try_from(doc)
}

impl Ontology {
    pub fn new(topics: Vec<TopicConcept>) -> Result<Self, KnowledgeError> {
        if topics.is_empty() {
            return Err(KnowledgeError::Empty);
        }
        let mut index = HashMap::with_capacity(topics.len());
        for (i, topic) in topics.iter().enumerate() {
            if topic.id.trim().is_empty() {
                return Err(KnowledgeError::invalid(&topic.id, "empty topic id"));
            }
            if index.insert(topic.id.clone(), i).is_some() {
                return Err(KnowledgeError::invalid(&topic.id, "duplicate topic id"));
            }
        }
        let ontology = Ontology { topics, index };
        ontology.validate()?;
        Ok(ontology)
    }

    fn validate(&self) -> Result<(), KnowledgeError> {
        for topic in &self.topics {
            if let Some(parent) = &topic.parent {
                if !self.index.contains_key(parent) {
                    return Err(KnowledgeError::invalid(
                        &topic.id,
                        format!("parent {parent:?} does not exist"),
                    ));
                }
            }
            for rel in &topic.related {
                if !self.index.contains_key(rel) {
                    return Err(KnowledgeError::invalid(
                        &topic.id,
                        format!("related topic {rel:?} does not exist"),
                    ));
                }
            }
            let templates = topic.sentence_templates.iter().chain(
                topic
                    .culture_overrides
                    .values()
                    .flat_map(|c| c.extra_templates.iter()),
            );
            for template in templates {
                if template.kind == SentenceType::Proposal
                    && template.trigger.as_deref().is_none_or(|t| t.trim().is_empty())
                {
                    return Err(KnowledgeError::invalid(
                        &topic.id,
                        format!("activity proposal {:?} has no trigger", template.text),
                    ));
                }
                if template.text.trim().is_empty() {
                    return Err(KnowledgeError::invalid(&topic.id, "empty sentence template"));
                }
            }
            let distinct: BTreeSet<_> = topic.keywords.iter().collect();
            if distinct.len() < 2 {
                tracing::debug!(topic = %topic.id, "fewer than two keywords; unreachable by keyword search");
            }
        }
        self.check_forest()?;
        for topic in &self.topics {
            if topic.sentence_templates.is_empty() && !self.inherits_any(topic) {
                return Err(KnowledgeError::invalid(
                    &topic.id,
                    "no sentences of its own and none inherited",
                ));
            }
        }
        Ok(())
    }

    fn inherits_any(&self, topic: &TopicConcept) -> bool {
        self.ancestors(topic)
            .any(|a| a.sentence_templates.iter().any(SentenceTemplate::is_inheritable))
    }

    /// Parent, grandparent, ... up to the top of the topic's tree.
    pub fn ancestors<'a>(&'a self, topic: &'a TopicConcept) -> impl Iterator<Item = &'a TopicConcept> + 'a {
        std::iter::successors(topic.parent.as_deref().and_then(|p| self.topic(p)), move |t| {
            t.parent.as_deref().and_then(|p| self.topic(p))
        })
    }

    fn check_forest(&self) -> Result<(), KnowledgeError> {
        // 0 = unvisited, 1 = on current path, 2 = known to reach a root
        let mut mark = vec![0u8; self.topics.len()];
        for start in 0..self.topics.len() {
            let mut path = Vec::new();
            let mut cur = Some(start);
            while let Some(i) = cur {
                match mark[i] {
                    2 => break,
                    1 => {
                        return Err(KnowledgeError::invalid(
                            &self.topics[i].id,
                            "parent chain forms a cycle",
                        ))
                    }
                    _ => {}
                }
                mark[i] = 1;
                path.push(i);
                cur = self.topics[i].parent.as_ref().map(|p| self.index[p]);
            }
            for i in path {
                mark[i] = 2;
            }
        }
        Ok(())
    }

    pub fn topics(&self) -> &[TopicConcept] {
        &self.topics
    }

    pub fn topic(&self, id: &str) -> Option<&TopicConcept> {
        self.index.get(id).map(|&i| &self.topics[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }

    /// Every culture code mentioned by any topic.
    pub fn cultures(&self) -> BTreeSet<String> {
        self.topics
            .iter()
            .flat_map(|t| t.culture_overrides.keys().cloned())
            .collect()
    }

    /// Total number of templates (base plus every culture), before
    /// inheritance expands them.
    pub fn template_count(&self) -> usize {
        self.topics
            .iter()
            .map(|t| {
                t.sentence_templates.len()
                    + t.culture_overrides
                        .values()
                        .map(|c| c.extra_templates.len())
                        .sum::<usize>()
            })
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ontology serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const FIG5: &str = r#"{
      "version": 1,
      "topics": [
        {"id": "beverage", "name": "Beverage", "keywords": ["drink*", "beverage*"],
         "sentences": [{"type": "o", "text": "What do you like to drink?", "inheritable": false}]},
        {"id": "tea", "name": "Tea", "parent": "beverage", "related": ["milk"],
         "keywords": ["tea", "cup*"],
         "sentences": [{"type": "y", "text": "Do you like $hasName?"}],
         "cultures": {"EN": {"likeliness": "VeryHigh",
            "sentences": [{"type": "p", "text": "You can never get a cup of tea large enough."}]}}},
        {"id": "green_tea", "name": "Green Tea", "parent": "tea", "keywords": ["green", "tea"],
         "sentences": [{"type": "p", "text": "Green tea is rich in antioxidants."}]},
        {"id": "milk", "name": "Milk", "keywords": ["milk", "dairy"],
         "sentences": [{"type": "p", "text": "Milk is a good source of calcium."}]}
      ]
    }"#;

    #[test]
    fn parses_the_layered_fragment() {
        let o = parse_ontology(FIG5).unwrap();
        assert_eq!(o.len(), 4);
        assert_eq!(o.topic("tea").unwrap().related, ["milk"]);
        assert_eq!(o.topic("green_tea").unwrap().parent.as_deref(), Some("tea"));
        assert_eq!(o.cultures().into_iter().collect::<Vec<_>>(), ["EN"]);
    }

    #[test]
    fn minimal_single_topic() {
        let doc = r#"{"version":1,"topics":[{"id":"a","name":"A","keywords":["x","y"],
            "sentences":[{"type":"p","text":"Hi."}]}]}"#;
        let o = parse_ontology(doc).unwrap();
        assert_eq!(o.len(), 1);
    }

    #[test]
    fn parent_cycle_is_rejected() {
        let doc = r#"{"version":1,"topics":[
            {"id":"a","name":"A","parent":"b","sentences":[{"type":"p","text":"a"}]},
            {"id":"b","name":"B","parent":"a","sentences":[{"type":"p","text":"b"}]}]}"#;
        let err = parse_ontology(doc).unwrap_err();
        assert!(matches!(err, KnowledgeError::Invalid { ref problem, .. } if problem.contains("cycle")), "{err}");
    }

    #[test]
    fn dangling_and_duplicate_references_name_the_topic() {
        let dangling = r#"{"version":1,"topics":[{"id":"a","name":"A","related":["zz"]}]}"#;
        match parse_ontology(dangling).unwrap_err() {
            KnowledgeError::Invalid { topic, .. } => assert_eq!(topic, "a"),
            e => panic!("{e}"),
        }
        let dup = r#"{"version":1,"topics":[{"id":"a","name":"A"},{"id":"a","name":"B"}]}"#;
        assert!(parse_ontology(dup).unwrap_err().to_string().contains("duplicate"));
        let missing_parent = r#"{"version":1,"topics":[{"id":"a","name":"A","parent":"q"}]}"#;
        assert!(parse_ontology(missing_parent).unwrap_err().to_string().contains("parent"));
    }

    #[test]
    fn syntax_errors_carry_a_location() {
        let err = parse_ontology("{\n  \"version\": 1,\n  \"topics\": [ oops ]\n}").unwrap_err();
        match err {
            KnowledgeError::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn unknown_sentence_code_and_missing_trigger() {
        let bad_code = r#"{"version":1,"topics":[{"id":"a","name":"A","sentences":[{"type":"q","text":"?"}]}]}"#;
        assert!(parse_ontology(bad_code).is_err());
        let no_trigger = r#"{"version":1,"topics":[{"id":"a","name":"A","sentences":[{"type":"a","text":"Shall we?"}]}]}"#;
        assert!(parse_ontology(no_trigger).unwrap_err().to_string().contains("trigger"));
    }

    #[test]
    fn likeliness_scale_round_trips() {
        let mut prev = 0.0;
        for level in LikelinessLevel::ALL {
            assert!(level.weight() > prev);
            prev = level.weight();
            assert_eq!(LikelinessLevel::from_weight(level.weight()), Some(level));
            assert_eq!(LikelinessLevel::from_rank(level.rank()), Some(level));
            assert_eq!(level.name().parse::<LikelinessLevel>().unwrap(), level);
        }
        assert_eq!("very high".parse::<LikelinessLevel>().unwrap(), LikelinessLevel::VeryHigh);
        assert_eq!("Very High".parse::<LikelinessLevel>().unwrap(), LikelinessLevel::VeryHigh);
        assert!("huge".parse::<LikelinessLevel>().is_err());
        assert_eq!(LikelinessLevel::from_rank(0), None);
        assert_eq!(LikelinessLevel::from_rank(6), None);
    }

    #[test]
    fn sentence_codes_are_closed() {
        for t in SentenceType::ALL {
            assert_eq!(t.code().to_string().parse::<SentenceType>().unwrap(), t);
        }
        assert!("x".parse::<SentenceType>().is_err());
        assert!("pp".parse::<SentenceType>().is_err());
    }
}
