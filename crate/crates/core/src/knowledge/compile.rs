use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{LikelinessLevel, Ontology, SentenceTemplate, SentenceType, TopicConcept};
use crate::state::{ClientState, LayoutTopic, StateLayout, STATE_VERSION};
use crate::text::KeywordPattern;

/// Variable replaced by the owning topic's display name at compile time.
/// Other `$` words (e.g. `$name`) are left for the client to substitute.
const NAME_VARIABLE: &str = "$hasName";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DtSentence {
    #[serde(rename = "type")]
    pub kind: SentenceType,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<String>,
}

/// One conversation topic of the compiled tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtNode {
    pub topic: String,
    pub name: String,
    pub parent: Option<String>,
    pub depth: usize,
    pub children: Vec<String>,
    pub siblings: Vec<String>,
    /// Grouped by type in [`SentenceType::ALL`] order; a sentence's position
    /// in this list is the index recorded in the client state.
    pub sentences: Vec<DtSentence>,
    pub default_likeliness: LikelinessLevel,
    pub keywords: Vec<KeywordPattern>,
}

impl DtNode {
    pub fn sentences_of(&self, kind: SentenceType) -> impl Iterator<Item = (usize, &DtSentence)> {
        self.sentences
            .iter()
            .enumerate()
            .filter(move |(_, s)| s.kind == kind)
    }

    pub fn has_type(&self, kind: SentenceType) -> bool {
        self.sentences.iter().any(|s| s.kind == kind)
    }

    /// Sentence types used while talking about the topic, i.e. everything
    /// but greetings, in canonical order.
    pub fn conversational_types(&self) -> Vec<SentenceType> {
        SentenceType::ALL
            .into_iter()
            .filter(|&t| t != SentenceType::Greeting && self.has_type(t))
            .collect()
    }

    /// Completed once every non-greeting sentence has been used. Greetings
    /// are only spoken on the initial request and never recorded.
    pub fn is_completed(&self, used: Option<&std::collections::BTreeSet<usize>>) -> bool {
        self.sentences
            .iter()
            .enumerate()
            .filter(|(_, s)| s.kind != SentenceType::Greeting)
            .all(|(i, _)| used.is_some_and(|u| u.contains(&i)))
    }
}

/// The navigable conversation graph built from an ontology for one culture.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "TreeRepr", into = "TreeRepr")]
pub struct DialogueTree {
    culture: Option<String>,
    root: usize,
    nodes: Vec<DtNode>,
    index: HashMap<String, usize>,
    layout: StateLayout,
}

#[derive(Serialize, Deserialize)]
struct TreeRepr {
    culture: Option<String>,
    root: usize,
    nodes: Vec<DtNode>,
}

impl From<TreeRepr> for DialogueTree {
    fn from(r: TreeRepr) -> Self {
        DialogueTree::assemble(r.culture, r.root, r.nodes)
    }
}

impl From<DialogueTree> for TreeRepr {
    fn from(t: DialogueTree) -> Self {
        TreeRepr {
            culture: t.culture,
            root: t.root,
            nodes: t.nodes,
        }
    }
}

/// Summary written by `cair-kb stats`; enough to synthesize client states
/// without the tree itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeStats {
    pub culture: Option<String>,
    pub topic_count: usize,
    pub sentence_count: usize,
    pub max_state_bytes: usize,
    pub layout: StateLayout,
}

impl DialogueTree {
    fn assemble(culture: Option<String>, root: usize, nodes: Vec<DtNode>) -> Self {
        let index = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.topic.clone(), i))
            .collect();
        let layout = StateLayout::new(
            culture.clone(),
            nodes[root].topic.clone(),
            nodes
                .iter()
                .map(|n| LayoutTopic {
                    id: n.topic.clone(),
                    sentences: n.sentences.len(),
                })
                .collect(),
        );
        DialogueTree {
            culture,
            root,
            nodes,
            index,
            layout,
        }
    }

    pub fn culture(&self) -> Option<&str> {
        self.culture.as_deref()
    }

    pub fn root(&self) -> &DtNode {
        &self.nodes[self.root]
    }

    pub fn root_id(&self) -> &str {
        &self.nodes[self.root].topic
    }

    pub fn node(&self, topic: &str) -> Option<&DtNode> {
        self.index.get(topic).map(|&i| &self.nodes[i])
    }

    pub fn contains(&self, topic: &str) -> bool {
        self.index.contains_key(topic)
    }

    pub fn nodes(&self) -> &[DtNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn sentence_count(&self) -> usize {
        self.nodes.iter().map(|n| n.sentences.len()).sum()
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    /// Resolves a topic reference coming from user text or an action: an
    /// exact id, a display name, or an id with spaces for underscores.
    pub fn resolve_topic(&self, reference: &str) -> Option<&str> {
        if let Some(&i) = self.index.get(reference) {
            return Some(&self.nodes[i].topic);
        }
        let wanted = crate::text::normalize(reference);
        if wanted.is_empty() {
            return None;
        }
        let as_id = wanted.replace(' ', "_");
        self.nodes
            .iter()
            .find(|n| crate::text::normalize(&n.name) == wanted || n.topic.to_lowercase() == as_id)
            .map(|n| n.topic.as_str())
    }

    pub fn stats(&self) -> TreeStats {
        TreeStats {
            culture: self.culture.clone(),
            topic_count: self.len(),
            sentence_count: self.sentence_count(),
            max_state_bytes: estimate_max_state_size(self),
            layout: self.layout.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("dialogue tree serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

fn instantiate(template: &SentenceTemplate, name: &str) -> DtSentence {
    DtSentence {
        kind: template.kind,
        text: template.text.replace(NAME_VARIABLE, name),
        trigger: template.trigger.clone(),
    }
}

/// Compiles the tree for `culture`. Topics without an entry for that
/// culture contribute only their culture-agnostic content; a culture no
/// topic mentions yields the culture-agnostic tree.
pub fn compile_dialogue_tree(ontology: &Ontology, culture: &str) -> DialogueTree {
    let known = ontology.cultures().contains(culture);
    let culture = known.then(|| culture.to_string());
    let topics = ontology.topics();

    let root = topics
        .iter()
        .position(|t| t.parent.is_none())
        .expect("validated ontology is a forest, so it has a parentless topic");

    let mut children: Vec<Vec<String>> = vec![Vec::new(); topics.len()];
    for (i, t) in topics.iter().enumerate() {
        match &t.parent {
            Some(p) => children[ontology.position(p).expect("validated")].push(t.id.clone()),
            // Additional top-level concepts hang off the root.
            None if i != root => children[root].push(t.id.clone()),
            None => {}
        }
    }

    let mut depth = vec![0usize; topics.len()];
    let mut queue = VecDeque::from([root]);
    while let Some(i) = queue.pop_front() {
        for child in &children[i] {
            let c = ontology.position(child).expect("validated");
            depth[c] = depth[i] + 1;
            queue.push_back(c);
        }
    }

    let nodes = topics
        .iter()
        .enumerate()
        .map(|(i, t)| DtNode {
            topic: t.id.clone(),
            name: t.name.clone(),
            parent: if i == root {
                None
            } else {
                Some(
                    t.parent
                        .clone()
                        .unwrap_or_else(|| topics[root].id.clone()),
                )
            },
            depth: depth[i],
            children: children[i].clone(),
            siblings: t.related.clone(),
            sentences: node_sentences(ontology, t, culture.as_deref()),
            default_likeliness: culture
                .as_deref()
                .and_then(|c| t.culture_overrides.get(c))
                .and_then(|o| o.likeliness)
                .unwrap_or(LikelinessLevel::Medium),
            keywords: dedup(t.keywords.iter().cloned()),
        })
        .collect();

    DialogueTree::assemble(culture, root, nodes)
}

fn node_sentences(ontology: &Ontology, topic: &TopicConcept, culture: Option<&str>) -> Vec<DtSentence> {
    let ancestors: Vec<&TopicConcept> = ontology.ancestors(topic).collect();
    let culture_templates = |t: &'_ TopicConcept| -> Vec<SentenceTemplate> {
        culture
            .and_then(|c| t.culture_overrides.get(c))
            .map(|o| o.extra_templates.clone())
            .unwrap_or_default()
    };

    let mut templates: Vec<SentenceTemplate> = topic.sentence_templates.clone();
    for a in &ancestors {
        templates.extend(a.sentence_templates.iter().filter(|s| s.is_inheritable()).cloned());
    }
    templates.extend(culture_templates(topic));
    for a in &ancestors {
        templates.extend(culture_templates(a).into_iter().filter(|s| s.is_inheritable()));
    }

    let mut seen = HashSet::new();
    let mut sentences: Vec<DtSentence> = templates
        .iter()
        .map(|s| instantiate(s, &topic.name))
        .filter(|s| seen.insert((s.kind, s.text.clone())))
        .collect();
    sentences.sort_by_key(|s| s.kind);
    sentences
}

fn dedup<T: Eq + std::hash::Hash + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut seen = HashSet::new();
    items.filter(|i| seen.insert(i.clone())).collect()
}

/// Wire size of the largest state the tree admits: every topic carries a
/// likeliness override and every sentence is marked used.
pub fn estimate_max_state_size(tree: &DialogueTree) -> usize {
    let mut state = ClientState::new(
        tree.culture().unwrap_or(super::DEFAULT_CULTURE),
        tree.nodes
            .iter()
            .max_by_key(|n| n.topic.len())
            .map(|n| n.topic.clone())
            .unwrap_or_default(),
    );
    state.version = STATE_VERSION;
    let longest_trigger = tree
        .nodes
        .iter()
        .flat_map(|n| n.sentences.iter().filter_map(|s| s.trigger.as_ref()))
        .max_by_key(|t| t.len());
    if let Some(trigger) = longest_trigger {
        state.last_type = SentenceType::Proposal;
        state.pending_trigger = Some(trigger.clone());
    }
    state.queue = SentenceType::ALL
        .into_iter()
        .filter(|&t| t != SentenceType::Greeting)
        .collect();
    for node in &tree.nodes {
        state
            .likeliness
            .insert(node.topic.clone(), LikelinessLevel::VeryHigh);
        state
            .used
            .insert(node.topic.clone(), (0..node.sentences.len()).collect());
    }
    state.wire_size(tree.layout())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::{generate_synthetic_ontology, parse_ontology};

    fn fig5() -> Ontology {
        parse_ontology(crate::knowledge::tests::FIG5).unwrap()
    }

    #[test]
    fn fig5_fragment_for_english() {
        let tree = compile_dialogue_tree(&fig5(), "EN");
        assert_eq!(tree.culture(), Some("EN"));
        assert_eq!(tree.root_id(), "beverage");
        let tea = tree.node("tea").unwrap();
        assert_eq!(tea.children, ["green_tea"]);
        assert_eq!(tea.siblings, ["milk"]);
        assert_eq!(tea.default_likeliness, LikelinessLevel::VeryHigh);
        assert!(tea.sentences.iter().any(|s| s.text.starts_with("You can never get")));
        // milk has no parent, so it hangs off the root
        assert_eq!(tree.root().children, ["tea", "milk"]);
        assert_eq!(tree.node("milk").unwrap().depth, 1);
    }

    #[test]
    fn unknown_culture_yields_agnostic_tree() {
        let tree = compile_dialogue_tree(&fig5(), "IT");
        assert_eq!(tree.culture(), None);
        let tea = tree.node("tea").unwrap();
        assert_eq!(tea.default_likeliness, LikelinessLevel::Medium);
        assert!(!tea.sentences.iter().any(|s| s.text.starts_with("You can never get")));
        assert_ne!(
            tree.layout().fingerprint(),
            compile_dialogue_tree(&fig5(), "EN").layout().fingerprint()
        );
    }

    #[test]
    fn name_template_is_inherited_by_subclasses() {
        let doc = r#"{"version":1,"topics":[
            {"id":"coffee","name":"Coffee","keywords":["coffee","bean*"],
             "sentences":[{"type":"y","text":"Do you like $hasName?","inheritable":true},
                          {"type":"p","text":"$hasName wakes me up."}]},
            {"id":"espresso","name":"Espresso","parent":"coffee","keywords":["espresso","shot*"],
             "sentences":[{"type":"o","text":"Where do you drink it?","inheritable":false}]}]}"#;
        let tree = compile_dialogue_tree(&parse_ontology(doc).unwrap(), "EN");
        let texts = |id: &str| -> Vec<String> {
            tree.node(id).unwrap().sentences.iter().map(|s| s.text.clone()).collect()
        };
        assert!(texts("coffee").contains(&"Do you like Coffee?".to_string()));
        assert!(texts("espresso").contains(&"Do you like Espresso?".to_string()));
        // assertions are not inherited by default
        assert!(!texts("espresso").iter().any(|t| t.contains("wakes me up")));
    }

    #[test]
    fn single_topic_tree() {
        let doc = r#"{"version":1,"topics":[{"id":"a","name":"A","keywords":["x","y"],
            "sentences":[{"type":"p","text":"Hi."}]}]}"#;
        let tree = compile_dialogue_tree(&parse_ontology(doc).unwrap(), "EN");
        assert_eq!(tree.len(), 1);
        assert!(tree.root().children.is_empty());
        assert!(tree.root().siblings.is_empty());
        // one override plus one used index
        let size = estimate_max_state_size(&tree);
        let mut s = ClientState::new("EN", "a");
        s.likeliness.insert("a".into(), LikelinessLevel::VeryHigh);
        s.used.insert("a".into(), [0].into());
        s.queue = vec![
            SentenceType::Positive,
            SentenceType::Negative,
            SentenceType::YesNo,
            SentenceType::Open,
            SentenceType::Proposal,
        ];
        assert_eq!(size, s.wire_size(tree.layout()));
    }

    #[test]
    fn compilation_is_pure() {
        let o = generate_synthetic_ontology(40, 3, 6, 3);
        let a = compile_dialogue_tree(&o, "EN").to_bytes();
        let b = compile_dialogue_tree(&o, "EN").to_bytes();
        assert_eq!(a, b);
        let back = DialogueTree::from_bytes(&a).unwrap();
        assert_eq!(back.to_bytes(), a);
        assert_eq!(back.layout().fingerprint(), compile_dialogue_tree(&o, "EN").layout().fingerprint());
    }

    #[test]
    fn every_node_reaches_the_root() {
        let o = generate_synthetic_ontology(200, 4, 3, 11);
        let tree = compile_dialogue_tree(&o, "EN");
        for node in tree.nodes() {
            let mut cur = node;
            let mut steps = 0;
            while let Some(p) = &cur.parent {
                cur = tree.node(p).unwrap();
                steps += 1;
                assert!(steps <= tree.len());
            }
            assert_eq!(cur.topic, tree.root_id());
            assert_eq!(steps, node.depth);
        }
    }

    #[test]
    fn node_sentence_lists_are_duplicate_free() {
        let doc = r#"{"version":1,"topics":[
            {"id":"a","name":"A","sentences":[{"type":"y","text":"Like $hasName?"},{"type":"y","text":"Like $hasName?"}]},
            {"id":"b","name":"B","parent":"a","sentences":[{"type":"y","text":"Like B?"}]}]}"#;
        let tree = compile_dialogue_tree(&parse_ontology(doc).unwrap(), "EN");
        assert_eq!(tree.node("a").unwrap().sentences.len(), 1);
        assert_eq!(tree.node("b").unwrap().sentences.len(), 1);
    }

    #[test]
    fn resolves_names_and_ids() {
        let tree = compile_dialogue_tree(&fig5(), "EN");
        assert_eq!(tree.resolve_topic("green tea"), Some("green_tea"));
        assert_eq!(tree.resolve_topic("Green Tea"), Some("green_tea"));
        assert_eq!(tree.resolve_topic("tea"), Some("tea"));
        assert_eq!(tree.resolve_topic("whisky"), None);
        assert_eq!(tree.resolve_topic(""), None);
    }
}
