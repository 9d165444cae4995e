//! Client-carried conversation state and its compact wire encoding.
//!
//! The server keeps nothing between requests: every turn receives a
//! [`ClientState`] and hands back the updated copy. On the wire the state
//! refers to topics by their position in the compiled tree ([`StateLayout`])
//! so that a client that has touched every topic still ships only a few
//! bytes per topic:
//!
//! ```text
//! {"v":1,"k":"<layout fingerprint>","cu":"EN","t":"tea","lt":"y","q":"po",
//!  "p":"<pending trigger>","c":[gap, level, mask, gap, level, mask, ...]}
//! ```
//!
//! `c` is a flat list of triples, one per topic that has a likeliness
//! override or used sentences, in layout order. `gap` is the number of
//! layout positions skipped since the previous triple, `level` is the
//! override rank 1..=5 (0 = none) and `mask` is the used-sentence bitmask:
//! an integer for topics with at most 32 sentences, otherwise an array of
//! 32-bit words, least significant first.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::knowledge::{LikelinessLevel, SentenceType};

pub const STATE_VERSION: u32 = 1;

const MASK_WORD_BITS: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutTopic {
    pub id: String,
    pub sentences: usize,
}

/// Topic order and sentence counts of one compiled tree; everything the
/// wire encoding needs. Obtainable from a tree or from a stats file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "LayoutRepr", into = "LayoutRepr")]
pub struct StateLayout {
    fingerprint: String,
    culture: Option<String>,
    root: String,
    topics: Vec<LayoutTopic>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct LayoutRepr {
    fingerprint: String,
    culture: Option<String>,
    root: String,
    topics: Vec<LayoutTopic>,
}

impl From<LayoutRepr> for StateLayout {
    fn from(r: LayoutRepr) -> Self {
        let index = r
            .topics
            .iter()
            .enumerate()
            .map(|(i, t)| (t.id.clone(), i))
            .collect();
        StateLayout {
            fingerprint: r.fingerprint,
            culture: r.culture,
            root: r.root,
            topics: r.topics,
            index,
        }
    }
}

impl From<StateLayout> for LayoutRepr {
    fn from(l: StateLayout) -> Self {
        LayoutRepr {
            fingerprint: l.fingerprint,
            culture: l.culture,
            root: l.root,
            topics: l.topics,
        }
    }
}

impl StateLayout {
    pub fn new(culture: Option<String>, root: String, topics: Vec<LayoutTopic>) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"cair-layout/1\n");
        hasher.update(culture.as_deref().unwrap_or("").as_bytes());
        hasher.update(b"\n");
        for t in &topics {
            hasher.update(t.id.as_bytes());
            hasher.update(format!("\t{}\n", t.sentences).as_bytes());
        }
        let digest = hasher.finalize();
        let fingerprint = hex::encode(&digest[..8]);
        LayoutRepr {
            fingerprint,
            culture,
            root,
            topics,
        }
        .into()
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn culture(&self) -> Option<&str> {
        self.culture.as_deref()
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn topics(&self) -> &[LayoutTopic] {
        &self.topics
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn sentence_count(&self, id: &str) -> Option<usize> {
        self.position(id).map(|i| self.topics[i].sentences)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StateError {
    #[error("unsupported client state version {found} (server speaks {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("client state was built for dialogue tree {found}, server has {expected}")]
    LayoutMismatch { expected: String, found: String },
    #[error("unknown topic {0:?} in client state")]
    UnknownTopic(String),
    #[error("sentence index {index} out of range for topic {topic:?} ({count} sentences)")]
    IndexOutOfRange {
        topic: String,
        index: usize,
        count: usize,
    },
    #[error("pending trigger must be present exactly when the last sentence was a proposal")]
    PendingTrigger,
    #[error("malformed client state: {0}")]
    Malformed(String),
}

impl StateError {
    /// Version and layout problems are protocol-level incompatibilities;
    /// everything else is a structurally bad state.
    pub fn is_version_problem(&self) -> bool {
        matches!(
            self,
            StateError::UnsupportedVersion { .. } | StateError::LayoutMismatch { .. }
        )
    }
}

/// The full per-user conversation context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientState {
    pub version: u32,
    pub culture: String,
    pub topic: String,
    pub last_type: SentenceType,
    pub queue: Vec<SentenceType>,
    /// User overrides only; topics absent here use the culture default.
    pub likeliness: BTreeMap<String, LikelinessLevel>,
    pub used: BTreeMap<String, BTreeSet<usize>>,
    pub pending_trigger: Option<String>,
}

impl ClientState {
    pub fn new(culture: impl Into<String>, topic: impl Into<String>) -> Self {
        ClientState {
            version: STATE_VERSION,
            culture: culture.into(),
            topic: topic.into(),
            last_type: SentenceType::Greeting,
            queue: Vec::new(),
            likeliness: BTreeMap::new(),
            used: BTreeMap::new(),
            pending_trigger: None,
        }
    }

    pub fn used_on(&self, topic: &str) -> Option<&BTreeSet<usize>> {
        self.used.get(topic)
    }

    pub fn validate(&self, layout: &StateLayout) -> Result<(), StateError> {
        if self.version != STATE_VERSION {
            return Err(StateError::UnsupportedVersion {
                found: self.version,
                expected: STATE_VERSION,
            });
        }
        if layout.position(&self.topic).is_none() {
            return Err(StateError::UnknownTopic(self.topic.clone()));
        }
        for topic in self.likeliness.keys() {
            if layout.position(topic).is_none() {
                return Err(StateError::UnknownTopic(topic.clone()));
            }
        }
        for (topic, used) in &self.used {
            let count = layout
                .sentence_count(topic)
                .ok_or_else(|| StateError::UnknownTopic(topic.clone()))?;
            if let Some(&index) = used.iter().find(|&&i| i >= count) {
                return Err(StateError::IndexOutOfRange {
                    topic: topic.clone(),
                    index,
                    count,
                });
            }
        }
        let proposal = self.last_type == SentenceType::Proposal;
        let pending = self.pending_trigger.as_deref().is_some_and(|t| !t.is_empty());
        if proposal != pending {
            return Err(StateError::PendingTrigger);
        }
        Ok(())
    }

    pub fn to_wire(&self, layout: &StateLayout) -> WireState {
        let mut entries: BTreeMap<usize, (u8, Option<&BTreeSet<usize>>)> = BTreeMap::new();
        for (topic, level) in &self.likeliness {
            if let Some(pos) = layout.position(topic) {
                entries.entry(pos).or_insert((0, None)).0 = level.rank();
            }
        }
        for (topic, used) in &self.used {
            if used.is_empty() {
                continue;
            }
            if let Some(pos) = layout.position(topic) {
                entries.entry(pos).or_insert((0, None)).1 = Some(used);
            }
        }
        let mut c = Vec::with_capacity(entries.len() * 3);
        let mut next = 0usize;
        for (pos, (rank, used)) in entries {
            c.push(Value::from(pos - next));
            c.push(Value::from(rank));
            c.push(encode_mask(used, layout.topics[pos].sentences));
            next = pos + 1;
        }
        WireState {
            v: self.version,
            k: layout.fingerprint().to_string(),
            cu: self.culture.clone(),
            t: self.topic.clone(),
            lt: self.last_type,
            q: self.queue.iter().map(|t| t.code()).collect(),
            p: self.pending_trigger.clone(),
            c,
        }
    }

    pub fn from_wire(wire: &WireState, layout: &StateLayout) -> Result<Self, StateError> {
        if wire.v != STATE_VERSION {
            return Err(StateError::UnsupportedVersion {
                found: wire.v,
                expected: STATE_VERSION,
            });
        }
        if wire.k != layout.fingerprint() {
            return Err(StateError::LayoutMismatch {
                expected: layout.fingerprint().to_string(),
                found: wire.k.clone(),
            });
        }
        let queue = wire
            .q
            .chars()
            .map(|c| {
                SentenceType::from_code(c)
                    .ok_or_else(|| StateError::Malformed(format!("unknown sentence type {c:?} in queue")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if !wire.c.len().is_multiple_of(3) {
            return Err(StateError::Malformed("topic entries must come in triples".into()));
        }
        let mut likeliness = BTreeMap::new();
        let mut used = BTreeMap::new();
        let mut next = 0usize;
        for triple in wire.c.chunks(3) {
            let gap = as_index(&triple[0], "gap")?;
            let pos = next
                .checked_add(gap)
                .filter(|&p| p < layout.topics.len())
                .ok_or_else(|| StateError::Malformed("topic position past end of tree".into()))?;
            next = pos + 1;
            let topic = &layout.topics[pos];
            let rank = as_index(&triple[1], "level")?;
            if rank != 0 {
                let level = u8::try_from(rank)
                    .ok()
                    .and_then(LikelinessLevel::from_rank)
                    .ok_or_else(|| StateError::Malformed(format!("likeliness rank {rank}")))?;
                likeliness.insert(topic.id.clone(), level);
            }
            let set = decode_mask(&triple[2], topic)?;
            if !set.is_empty() {
                used.insert(topic.id.clone(), set);
            }
        }
        let state = ClientState {
            version: wire.v,
            culture: wire.cu.clone(),
            topic: wire.t.clone(),
            last_type: wire.lt,
            queue,
            likeliness,
            used,
            pending_trigger: wire.p.clone(),
        };
        state.validate(layout)?;
        Ok(state)
    }

    /// Size in bytes of the JSON wire form.
    pub fn wire_size(&self, layout: &StateLayout) -> usize {
        serde_json::to_vec(&self.to_wire(layout))
            .expect("wire state serializes")
            .len()
    }
}

/// The state exactly as it travels in request and response bodies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireState {
    pub v: u32,
    pub k: String,
    pub cu: String,
    pub t: String,
    pub lt: SentenceType,
    #[serde(default)]
    pub q: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<String>,
    #[serde(default)]
    pub c: Vec<Value>,
}

fn as_index(v: &Value, what: &str) -> Result<usize, StateError> {
    v.as_u64()
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| StateError::Malformed(format!("{what} must be a non-negative integer")))
}

fn encode_mask(used: Option<&BTreeSet<usize>>, sentences: usize) -> Value {
    let words = sentences.div_ceil(MASK_WORD_BITS).max(1);
    let mut mask = vec![0u32; words];
    for &i in used.into_iter().flatten() {
        mask[i / MASK_WORD_BITS] |= 1 << (i % MASK_WORD_BITS);
    }
    if words == 1 {
        Value::from(mask[0])
    } else {
        Value::from(mask)
    }
}

fn decode_mask(v: &Value, topic: &LayoutTopic) -> Result<BTreeSet<usize>, StateError> {
    let words: Vec<u64> = match v {
        Value::Array(items) => items
            .iter()
            .map(|w| w.as_u64().ok_or_else(|| StateError::Malformed("mask word".into())))
            .collect::<Result<_, _>>()?,
        other => vec![other
            .as_u64()
            .ok_or_else(|| StateError::Malformed("mask must be an integer or array".into()))?],
    };
    let mut set = BTreeSet::new();
    for (w, &word) in words.iter().enumerate() {
        if word >> MASK_WORD_BITS != 0 {
            return Err(StateError::Malformed("mask word wider than 32 bits".into()));
        }
        for bit in 0..MASK_WORD_BITS {
            if word & (1 << bit) != 0 {
                let index = w * MASK_WORD_BITS + bit;
                if index >= topic.sentences {
                    return Err(StateError::IndexOutOfRange {
                        topic: topic.id.clone(),
                        index,
                        count: topic.sentences,
                    });
                }
                set.insert(index);
            }
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout() -> StateLayout {
        StateLayout::new(
            Some("EN".into()),
            "root".into(),
            vec![
                LayoutTopic { id: "root".into(), sentences: 3 },
                LayoutTopic { id: "a".into(), sentences: 8 },
                LayoutTopic { id: "b".into(), sentences: 40 },
                LayoutTopic { id: "c".into(), sentences: 1 },
            ],
        )
    }

    #[test]
    fn fresh_state_is_tiny() {
        let l = layout();
        let s = ClientState::new("EN", "root");
        let json = serde_json::to_string(&s.to_wire(&l)).unwrap();
        assert!(json.len() < 120, "{json}");
        assert_eq!(ClientState::from_wire(&s.to_wire(&l), &l).unwrap(), s);
    }

    #[test]
    fn wide_masks_use_word_arrays() {
        let l = layout();
        let mut s = ClientState::new("EN", "b");
        s.used.insert("b".into(), [0, 31, 32, 39].into());
        let wire = s.to_wire(&l);
        assert_eq!(wire.c[0], Value::from(2));
        assert!(wire.c[2].is_array());
        assert_eq!(ClientState::from_wire(&wire, &l).unwrap(), s);
    }

    #[test]
    fn rejects_foreign_layouts_and_versions() {
        let l = layout();
        let s = ClientState::new("EN", "root");
        let mut wire = s.to_wire(&l);
        wire.k = "0000".into();
        assert!(matches!(ClientState::from_wire(&wire, &l), Err(StateError::LayoutMismatch { .. })));
        let mut wire = s.to_wire(&l);
        wire.v = 9;
        let err = ClientState::from_wire(&wire, &l).unwrap_err();
        assert!(err.is_version_problem());
    }

    #[test]
    fn rejects_out_of_range_bits_and_unknown_topics() {
        let l = layout();
        let mut wire = ClientState::new("EN", "root").to_wire(&l);
        wire.c = vec![Value::from(3), Value::from(0), Value::from(2)];
        assert!(matches!(
            ClientState::from_wire(&wire, &l),
            Err(StateError::IndexOutOfRange { index: 1, .. })
        ));
        wire.c = vec![Value::from(4), Value::from(0), Value::from(1)];
        assert!(ClientState::from_wire(&wire, &l).is_err());
        let mut wire = ClientState::new("EN", "nope").to_wire(&l);
        wire.c.clear();
        assert_eq!(
            ClientState::from_wire(&wire, &l),
            Err(StateError::UnknownTopic("nope".into()))
        );
    }

    #[test]
    fn pending_trigger_tracks_proposals() {
        let l = layout();
        let mut s = ClientState::new("EN", "root");
        s.last_type = SentenceType::Proposal;
        assert_eq!(s.validate(&l), Err(StateError::PendingTrigger));
        s.pending_trigger = Some("play some music".into());
        assert!(s.validate(&l).is_ok());
        s.last_type = SentenceType::Positive;
        assert_eq!(s.validate(&l), Err(StateError::PendingTrigger));
    }

    fn arb_state() -> impl Strategy<Value = ClientState> {
        let l = layout();
        let topics: Vec<(String, usize)> =
            l.topics().iter().map(|t| (t.id.clone(), t.sentences)).collect();
        let per_topic = topics
            .into_iter()
            .map(|(id, n)| {
                (
                    proptest::option::of(0u8..5),
                    proptest::collection::btree_set(0..n, 0..=n),
                )
                    .prop_map(move |(lvl, used)| (id.clone(), lvl, used))
            })
            .collect::<Vec<_>>();
        (per_topic, 0usize..4, "[pnyoa]{0,5}").prop_map(|(entries, t, q)| {
            let mut s = ClientState::new("EN", ["root", "a", "b", "c"][t]);
            s.queue = q.chars().map(|c| SentenceType::from_code(c).unwrap()).collect();
            for (id, lvl, used) in entries {
                if let Some(r) = lvl {
                    s.likeliness.insert(id.clone(), LikelinessLevel::ALL[r as usize]);
                }
                if !used.is_empty() {
                    s.used.insert(id, used);
                }
            }
            s
        })
    }

    proptest! {
        #[test]
        fn wire_round_trip(state in arb_state()) {
            let l = layout();
            let json = serde_json::to_string(&state.to_wire(&l)).unwrap();
            let back: WireState = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(ClientState::from_wire(&back, &l).unwrap(), state);
        }
    }
}
