//! Knowledge-driven dialogue turns.
//!
//! [`dialogue_step`] consumes the user sentence, the client state and the
//! KB-plan produced by the plan manager, and returns the next sentence
//! together with an updated copy of the state. Decision order:
//!
//! 1. KB actions in sequence: `setlikeliness` records a user override,
//!    `jump` moves to a topic and ends the turn, anything else is skipped.
//! 2. Keyword search: a topic is matched when two of its keywords are
//!    found; one of the matches is picked by likeliness.
//! 3. If the current topic is completed, move on along the tree;
//!    otherwise keep talking about it.
//!
//! Independently of the branch taken, an affirmative reply to an activity
//! proposal forwards the proposal's trigger sentence to the plan manager and
//! returns the resulting plan.
//!
//! # Randomness
//!
//! All choices draw from one ChaCha8 stream seeded by the request seed, in
//! this order: the weighted topic pick (only when there are two or more
//! candidates), the queue shuffle on topic entry, then the uniform pick
//! among unused sentences of the requested type.

use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tracing::debug;

use crate::knowledge::{DialogueTree, DtNode, SentenceType};
use crate::planmgr::{match_intent, Action, IntentRegistry, KbAction};
use crate::state::{ClientState, StateError};
use crate::text::{tokenize, KeywordPattern};

/// Sentence openers accepted as a "yes" to an activity proposal.
pub const AFFIRMATIONS: [&str; 8] = [
    "yes", "yeah", "yep", "sure", "ok", "okay", "of course", "please do",
];

pub type DialogueRng = ChaCha8Rng;

pub fn rng_for(seed: Option<u64>) -> DialogueRng {
    match seed {
        Some(s) => ChaCha8Rng::seed_from_u64(s),
        None => ChaCha8Rng::from_entropy(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Jump,
    Keyword,
    Advance,
    Stay,
}

/// A used-sentence set that was cleared to keep the conversation going.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsedReset {
    pub topic: String,
    /// `None` when the whole topic was cleared.
    pub kind: Option<SentenceType>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueOutcome {
    pub dialogue_sentence: String,
    pub plan_sentence: Option<String>,
    pub plan: Vec<Action>,
    pub state: ClientState,
    pub branch: Branch,
    /// Index of the produced sentence within the topic's node.
    pub sentence_index: usize,
    pub resets: Vec<UsedReset>,
}

#[derive(Debug, thiserror::Error)]
pub enum DialogueError {
    #[error(transparent)]
    InvalidState(#[from] StateError),
}

pub fn is_affirmative(sentence: &str) -> bool {
    let tokens: Vec<String> = tokenize(sentence).into_iter().map(|t| t.norm).collect();
    AFFIRMATIONS.iter().any(|phrase| {
        let words: Vec<String> = tokenize(phrase).into_iter().map(|t| t.norm).collect();
        tokens.len() >= words.len() && tokens[..words.len()] == words[..]
    })
}

/// Whether `keywords` has two distinct patterns hitting two distinct
/// tokens. With hit sets per pattern, that holds exactly when at least two
/// patterns hit something and together they hit at least two tokens.
fn two_keywords_hit(keywords: &[KeywordPattern], tokens: &BTreeSet<String>) -> bool {
    let mut hitting = 0;
    let mut hit_tokens: BTreeSet<&str> = BTreeSet::new();
    for k in keywords {
        let mut any = false;
        for t in tokens.iter().filter(|t| k.matches(t)) {
            any = true;
            hit_tokens.insert(t);
        }
        if any {
            hitting += 1;
        }
    }
    hitting >= 2 && hit_tokens.len() >= 2
}

/// Topics whose keyword rule fires on the sentence, in topic id order.
pub fn search_topics(sentence: &str, tree: &DialogueTree) -> Vec<String> {
    let tokens: BTreeSet<String> = tokenize(sentence).into_iter().map(|t| t.norm).collect();
    if tokens.len() < 2 {
        return Vec::new();
    }
    let mut found: Vec<String> = tree
        .nodes()
        .iter()
        .filter(|n| two_keywords_hit(&n.keywords, &tokens))
        .map(|n| n.topic.clone())
        .collect();
    found.sort();
    found
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceChoice {
    pub text: String,
    pub index: usize,
    /// Every sentence of the type had been used; the pick ignored history.
    pub reset: bool,
}

pub fn choose_sentence_with<R: Rng>(
    node: &DtNode,
    kind: SentenceType,
    used: Option<&BTreeSet<usize>>,
    rng: &mut R,
) -> Option<SentenceChoice> {
    let of_type: Vec<usize> = node.sentences_of(kind).map(|(i, _)| i).collect();
    if of_type.is_empty() {
        return None;
    }
    let unused: Vec<usize> = of_type
        .iter()
        .copied()
        .filter(|i| !used.is_some_and(|u| u.contains(i)))
        .collect();
    let (pool, reset) = if unused.is_empty() {
        (of_type, true)
    } else {
        (unused, false)
    };
    let index = pool[rng.gen_range(0..pool.len())];
    Some(SentenceChoice {
        text: node.sentences[index].text.clone(),
        index,
        reset,
    })
}

/// Uniform pick among the unused sentences of `kind`; when all are used the
/// history of that type is ignored for this pick. `None` if the node has no
/// sentence of that type at all.
pub fn choose_sentence(
    node: &DtNode,
    kind: SentenceType,
    used: &BTreeSet<usize>,
    seed: Option<u64>,
) -> Option<(String, usize)> {
    choose_sentence_with(node, kind, Some(used), &mut rng_for(seed)).map(|c| (c.text, c.index))
}

fn effective_weight(tree: &DialogueTree, state: &ClientState, topic: &str) -> f64 {
    state
        .likeliness
        .get(topic)
        .copied()
        .or_else(|| tree.node(topic).map(|n| n.default_likeliness))
        .map(|l| l.weight())
        .unwrap_or(0.5)
}

fn pick_weighted<R: Rng>(
    candidates: &[String],
    tree: &DialogueTree,
    state: &ClientState,
    rng: &mut R,
) -> String {
    if candidates.len() == 1 {
        return candidates[0].clone();
    }
    let weights: Vec<f64> = candidates
        .iter()
        .map(|t| effective_weight(tree, state, t))
        .collect();
    let dist = WeightedIndex::new(&weights).expect("likeliness weights are positive");
    candidates[dist.sample(rng)].clone()
}

fn completed(tree: &DialogueTree, state: &ClientState, topic: &str) -> bool {
    tree.node(topic)
        .is_some_and(|n| n.is_completed(state.used.get(topic)))
}

/// Where to go once `current` is exhausted; the flag is set when everything
/// was completed and the chosen topic must start over.
fn next_topic_with<R: Rng>(
    tree: &DialogueTree,
    current: &str,
    state: &ClientState,
    rng: &mut R,
) -> (String, bool) {
    let node = tree.node(current).expect("current topic is validated");
    let fresh = |id: &&String| !completed(tree, state, id);
    if let Some(child) = node.children.iter().find(fresh) {
        return (child.clone(), false);
    }
    if let Some(sibling) = node.siblings.iter().find(fresh) {
        return (sibling.clone(), false);
    }
    // Closest to the root first.
    let mut levels: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for n in tree.nodes() {
        if n.depth > 0 && !completed(tree, state, &n.topic) {
            levels.entry(n.depth).or_default().push(n.topic.clone());
        }
    }
    if let Some(candidates) = levels.into_values().next() {
        return (pick_weighted(&candidates, tree, state, rng), false);
    }
    if !completed(tree, state, tree.root_id()) {
        return (tree.root_id().to_string(), false);
    }
    let candidates = if tree.root().children.is_empty() {
        vec![tree.root_id().to_string()]
    } else {
        tree.root().children.clone()
    };
    (pick_weighted(&candidates, tree, state, rng), true)
}

pub fn next_topic(
    tree: &DialogueTree,
    current: &str,
    state: &ClientState,
    seed: Option<u64>,
) -> String {
    next_topic_with(tree, current, state, &mut rng_for(seed)).0
}

/// Conversational types that still have unused sentences on `node`.
fn open_types(node: &DtNode, used: Option<&BTreeSet<usize>>) -> Vec<SentenceType> {
    node.conversational_types()
        .into_iter()
        .filter(|&t| {
            node.sentences_of(t)
                .any(|(i, _)| !used.is_some_and(|u| u.contains(&i)))
        })
        .collect()
}

/// Shuffled sentence-type queue for a topic being entered.
pub fn entry_queue<R: Rng>(node: &DtNode, used: Option<&BTreeSet<usize>>, rng: &mut R) -> Vec<SentenceType> {
    let mut queue = open_types(node, used);
    if queue.is_empty() {
        queue = node.conversational_types();
    }
    if queue.is_empty() {
        queue.push(SentenceType::Greeting);
    }
    queue.shuffle(rng);
    queue
}

struct Turn<'a, R> {
    tree: &'a DialogueTree,
    state: ClientState,
    rng: R,
    resets: Vec<UsedReset>,
}

impl<R: Rng> Turn<'_, R> {
    fn say(&mut self, node: &DtNode, kind: SentenceType) -> (String, usize) {
        let choice = choose_sentence_with(node, kind, self.state.used.get(&node.topic), &mut self.rng)
            .expect("callers only request types present on the node");
        let used = self.state.used.entry(node.topic.clone()).or_default();
        if choice.reset {
            for (i, _) in node.sentences_of(kind) {
                used.remove(&i);
            }
            self.resets.push(UsedReset {
                topic: node.topic.clone(),
                kind: Some(kind),
            });
        }
        used.insert(choice.index);
        self.state.last_type = kind;
        self.state.pending_trigger = if kind == SentenceType::Proposal {
            node.sentences[choice.index].trigger.clone()
        } else {
            None
        };
        (choice.text, choice.index)
    }

    fn enter(&mut self, topic: &str, start: Option<SentenceType>) -> (String, usize) {
        let node = self.tree.node(topic).expect("entered topics exist");
        self.state.topic = node.topic.clone();
        let mut queue = entry_queue(node, self.state.used.get(topic), &mut self.rng);
        let first = match start {
            Some(t) if node.has_type(t) => {
                if let Some(pos) = queue.iter().position(|&q| q == t) {
                    queue.remove(pos);
                }
                t
            }
            _ => queue.remove(0),
        };
        self.state.queue = queue;
        self.say(node, first)
    }

    fn stay(&mut self) -> (String, usize) {
        let node = self.tree.node(&self.state.topic).expect("validated");
        loop {
            if self.state.queue.is_empty() {
                let mut refill = open_types(node, self.state.used.get(&node.topic));
                if refill.is_empty() {
                    refill = node.conversational_types();
                }
                if refill.is_empty() {
                    refill.push(SentenceType::Greeting);
                }
                refill.shuffle(&mut self.rng);
                self.state.queue = refill;
            }
            let kind = self.state.queue.remove(0);
            let has_unused = node
                .sentences_of(kind)
                .any(|(i, _)| !self.state.used.get(&node.topic).is_some_and(|u| u.contains(&i)));
            // Only called on uncompleted topics, so a refill always holds
            // at least one type that passes.
            if kind != SentenceType::Greeting && has_unused {
                return self.say(node, kind);
            }
        }
    }
}

/// One dialogue turn. The input state is not modified; the returned
/// outcome carries the updated copy.
pub fn dialogue_step(
    sentence: &str,
    state: &ClientState,
    kbplan: &[Action],
    tree: &DialogueTree,
    registry: &IntentRegistry,
    seed: Option<u64>,
) -> Result<DialogueOutcome, DialogueError> {
    state.validate(tree.layout())?;

    let (plan_sentence, plan) = match &state.pending_trigger {
        Some(trigger) if state.last_type == SentenceType::Proposal && is_affirmative(sentence) => {
            match match_intent(trigger, registry) {
                Some(m) => {
                    debug!(trigger = %trigger, intent = %m.intent, "proposal accepted");
                    (m.plan_sentence, m.plan)
                }
                None => {
                    debug!(trigger = %trigger, "accepted proposal matches no intent");
                    (None, Vec::new())
                }
            }
        }
        _ => (None, Vec::new()),
    };

    let mut turn = Turn {
        tree,
        state: state.clone(),
        rng: rng_for(seed),
        resets: Vec::new(),
    };
    turn.state.pending_trigger = None;

    let finish = |turn: Turn<'_, DialogueRng>, branch, (text, index): (String, usize)| DialogueOutcome {
        dialogue_sentence: text,
        plan_sentence: plan_sentence.clone(),
        plan: plan.clone(),
        state: turn.state,
        branch,
        sentence_index: index,
        resets: turn.resets,
    };

    for action in kbplan {
        match KbAction::interpret(action) {
            Some(KbAction::SetLikeliness { topic, value }) => {
                if let Some(id) = tree.resolve_topic(&topic) {
                    turn.state.likeliness.insert(id.to_string(), value);
                } else {
                    debug!(%topic, "setlikeliness on unknown topic ignored");
                }
            }
            Some(KbAction::Jump { topic, start }) => {
                if let Some(id) = tree.resolve_topic(&topic) {
                    let said = turn.enter(id, Some(start));
                    return Ok(finish(turn, Branch::Jump, said));
                }
                debug!(%topic, "jump to unknown topic ignored");
            }
            Some(KbAction::Other(name)) => debug!(action = %name, "unhandled KB action skipped"),
            None => debug!(action = %action.action, "malformed KB action skipped"),
        }
    }

    let matched = search_topics(sentence, tree);
    if !matched.is_empty() {
        let topic = pick_weighted(&matched, tree, &turn.state, &mut turn.rng);
        let said = turn.enter(&topic, None);
        return Ok(finish(turn, Branch::Keyword, said));
    }

    if completed(tree, &turn.state, &turn.state.topic) {
        let (topic, start_over) = next_topic_with(tree, &turn.state.topic, &turn.state, &mut turn.rng);
        if start_over {
            turn.state.used.remove(&topic);
            turn.resets.push(UsedReset {
                topic: topic.clone(),
                kind: None,
            });
        }
        let said = turn.enter(&topic, None);
        return Ok(finish(turn, Branch::Advance, said));
    }

    let said = turn.stay();
    Ok(finish(turn, Branch::Stay, said))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::{compile_dialogue_tree, parse_ontology, LikelinessLevel};
    use crate::planmgr::load_intent_registry;

    const TOY: &str = r#"{"version":1,"topics":[
      {"id":"beverage","name":"Beverage","keywords":["drink*","beverage*"],
       "sentences":[{"type":"f","text":"Hello $name, how are you?"},
                    {"type":"o","text":"What do you like to drink?","inheritable":false}]},
      {"id":"tea","name":"Tea","parent":"beverage","related":["milk"],"keywords":["tea","cup*"],
       "sentences":[{"type":"y","text":"Do you like $hasName?"},
                    {"type":"p","text":"Tea is lovely in the afternoon."}],
       "cultures":{"EN":{"likeliness":"VeryHigh",
          "sentences":[{"type":"p","text":"You can never get a cup of tea large enough."}]}}},
      {"id":"green_tea","name":"Green Tea","parent":"tea","keywords":["green","tea"],
       "sentences":[{"type":"p","text":"Green tea is rich in antioxidants."}]},
      {"id":"milk","name":"Milk","keywords":["milk","dairy"],
       "sentences":[{"type":"p","text":"Milk is a good source of calcium."},
                    {"type":"n","text":"Some people cannot digest milk."}]},
      {"id":"music","name":"Music","keywords":["music","song*"],
       "sentences":[{"type":"p","text":"Music is good for your health!"},
                    {"type":"a","text":"Do you want me to play some music?","trigger":"play some music"}]},
      {"id":"garden","name":"Garden","keywords":["garden*","plant*"],
       "sentences":[{"type":"p","text":"Gardens are relaxing."}]}
    ]}"#;

    const INTENTS: &str = r#"{"intents":[
      {"name":"play_music","triggers":["play some music"],"plan_sentences":["Here is some music."],
       "plan":[{"action":"play_music","args":{}}]},
      {"name":"appreciation","triggers":["i love <thing>"],
       "kbplan":[{"action":"setlikeliness","args":{"topic":"<thing>","value":"VeryHigh"}},
                 {"action":"jump","args":{"topic":"<thing>","startsentence":"p"}}]}
    ]}"#;

    fn tree() -> DialogueTree {
        compile_dialogue_tree(&parse_ontology(TOY).unwrap(), "EN")
    }

    fn registry() -> IntentRegistry {
        load_intent_registry(INTENTS).unwrap()
    }

    fn fresh(tree: &DialogueTree) -> ClientState {
        ClientState::new("EN", tree.root_id())
    }

    #[test]
    fn love_music_jumps_with_a_positive_sentence() {
        let t = tree();
        let kb = [
            KbAction::set_likeliness("music", LikelinessLevel::VeryHigh),
            KbAction::jump("music", SentenceType::Positive),
        ];
        let out = dialogue_step("whatever", &fresh(&t), &kb, &t, &registry(), Some(1)).unwrap();
        assert_eq!(out.dialogue_sentence, "Music is good for your health!");
        assert_eq!(out.state.topic, "music");
        assert_eq!(out.state.likeliness["music"], LikelinessLevel::VeryHigh);
        assert_eq!(out.branch, Branch::Jump);
    }

    #[test]
    fn jump_beats_keywords() {
        let t = tree();
        let kb = [KbAction::jump("milk", SentenceType::Negative)];
        let out = dialogue_step("green tea in a cup", &fresh(&t), &kb, &t, &registry(), Some(3)).unwrap();
        assert_eq!(out.state.topic, "milk");
        assert_eq!(out.dialogue_sentence, "Some people cannot digest milk.");
    }

    #[test]
    fn jump_to_unknown_topic_falls_through_to_keywords() {
        let t = tree();
        let kb = [KbAction::jump("whisky", SentenceType::Positive)];
        let out = dialogue_step("I brew green tea daily", &fresh(&t), &kb, &t, &registry(), Some(3)).unwrap();
        assert_eq!(out.branch, Branch::Keyword);
        assert_eq!(out.state.topic, "green_tea");
    }

    #[test]
    fn green_tea_by_keywords() {
        let t = tree();
        assert_eq!(search_topics("I brew green tea daily", &t), ["green_tea"]);
        let out = dialogue_step("I brew green tea daily", &fresh(&t), &[], &t, &registry(), Some(5)).unwrap();
        assert_eq!(out.state.topic, "green_tea");
        let node = t.node("green_tea").unwrap();
        assert_eq!(node.sentences.len(), 2, "own p plus inherited y");
        assert!(node.sentences[out.sentence_index].text == out.dialogue_sentence);
        assert_eq!(out.state.used["green_tea"], BTreeSet::from([out.sentence_index]));
    }

    #[test]
    fn keyword_search_edge_cases() {
        let t = tree();
        assert!(search_topics("", &t).is_empty());
        assert_eq!(search_topics("I love green tea", &t), ["green_tea"]);
        assert_eq!(search_topics("gardening means planting", &t), ["garden"]);
        // one token cannot satisfy two keywords
        assert!(search_topics("tea tea tea", &t).is_empty());
        assert_eq!(search_topics("a cup of green tea", &t), ["green_tea", "tea"]);
    }

    #[test]
    fn stays_on_topic_without_keywords() {
        let t = tree();
        let mut s = fresh(&t);
        s.topic = "tea".into();
        s.queue = vec![SentenceType::Positive, SentenceType::YesNo];
        let out = dialogue_step("hmm", &s, &[], &t, &registry(), Some(0)).unwrap();
        assert_eq!(out.branch, Branch::Stay);
        assert_eq!(out.state.topic, "tea");
        assert_eq!(out.state.last_type, SentenceType::Positive);
        assert_eq!(out.state.queue, [SentenceType::YesNo]);
        let node = t.node("tea").unwrap();
        assert_eq!(node.sentences[out.sentence_index].kind, SentenceType::Positive);
        assert!(out.state.used["tea"].contains(&out.sentence_index));
        // input untouched
        assert!(s.used.is_empty());
    }

    #[test]
    fn accepted_proposal_returns_the_plan() {
        let t = tree();
        let mut s = fresh(&t);
        s.topic = "music".into();
        s.last_type = SentenceType::Proposal;
        s.pending_trigger = Some("play some music".into());
        s.used.insert("music".into(), [1].into());
        let out = dialogue_step("yes please", &s, &[], &t, &registry(), Some(0)).unwrap();
        assert_eq!(out.plan, [Action::new::<&str, &str>("play_music", [])]);
        assert_eq!(out.plan_sentence.as_deref(), Some("Here is some music."));
        assert_eq!(out.state.pending_trigger, None);

        let declined = dialogue_step("no thanks", &s, &[], &t, &registry(), Some(0)).unwrap();
        assert!(declined.plan.is_empty());
    }

    #[test]
    fn affirmation_lexicon() {
        assert!(is_affirmative("yes please"));
        assert!(is_affirmative("Of course!"));
        assert!(is_affirmative("OK"));
        assert!(!is_affirmative(""));
        assert!(!is_affirmative("no thanks"));
        assert!(!is_affirmative("of"));
        assert!(!is_affirmative("yesterday was fine"));
    }

    #[test]
    fn advancement_child_then_sibling() {
        let t = tree();
        let mut s = fresh(&t);
        s.topic = "tea".into();
        s.used.insert("tea".into(), [0, 1, 2].into());
        assert_eq!(next_topic(&t, "tea", &s, Some(0)), "green_tea");
        s.used.insert("green_tea".into(), [0, 1].into());
        assert_eq!(next_topic(&t, "tea", &s, Some(0)), "milk");
    }

    #[test]
    fn single_topic_starts_over() {
        let doc = r#"{"version":1,"topics":[{"id":"a","name":"A","keywords":["x","y"],
            "sentences":[{"type":"p","text":"One."}]}]}"#;
        let t = compile_dialogue_tree(&parse_ontology(doc).unwrap(), "EN");
        let mut s = ClientState::new("EN", "a");
        s.used.insert("a".into(), [0].into());
        assert_eq!(next_topic(&t, "a", &s, Some(0)), "a");
        let out = dialogue_step("hmm", &s, &[], &t, &IntentRegistry::default(), Some(0)).unwrap();
        assert_eq!(out.dialogue_sentence, "One.");
        assert_eq!(out.resets, [UsedReset { topic: "a".into(), kind: None }]);
    }

    #[test]
    fn exhausted_type_falls_back_to_reset() {
        let t = tree();
        let node = t.node("green_tea").unwrap();
        let p = node.sentences_of(SentenceType::Positive).next().unwrap().0;
        let (text, idx) = choose_sentence(node, SentenceType::Positive, &[p].into(), Some(4)).unwrap();
        assert_eq!(idx, p);
        assert_eq!(text, "Green tea is rich in antioxidants.");
        assert!(choose_sentence(node, SentenceType::Open, &BTreeSet::new(), None).is_none());
    }

    #[test]
    fn invalid_state_is_an_error() {
        let t = tree();
        let s = ClientState::new("EN", "nowhere");
        assert!(dialogue_step("hi", &s, &[], &t, &registry(), None).is_err());
    }

    #[test]
    fn same_seed_same_outcome() {
        let t = tree();
        let s = fresh(&t);
        let a = dialogue_step("a cup of green tea", &s, &[], &t, &registry(), Some(99)).unwrap();
        let b = dialogue_step("a cup of green tea", &s, &[], &t, &registry(), Some(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_kb_actions_are_skipped() {
        let t = tree();
        let kb = [Action::new("dance", [("style", "waltz")])];
        let out = dialogue_step("gardening means planting", &fresh(&t), &kb, &t, &registry(), Some(2)).unwrap();
        assert_eq!(out.state.topic, "garden");
    }
}
