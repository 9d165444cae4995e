//! Seeded generator for ontologies at deployment scale.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    CultureOverride, LikelinessLevel, Ontology, SentenceTemplate, SentenceType, TopicConcept,
    DEFAULT_CULTURE,
};
use crate::text::KeywordPattern;

const SYLLABLES: [&str; 24] = [
    "ba", "ko", "ri", "ta", "mu", "le", "so", "ni", "pa", "ve", "do", "ga", "fi", "lu", "ze", "ro",
    "ki", "ma", "no", "se", "bu", "ha", "ti", "wo",
];

/// Sentence types cycle in this order so every code is represented once a
/// topic has six or more sentences.
const TYPE_CYCLE: [SentenceType; 6] = [
    SentenceType::Positive,
    SentenceType::Negative,
    SentenceType::YesNo,
    SentenceType::Open,
    SentenceType::Proposal,
    SentenceType::Greeting,
];

const PHRASES: [(SentenceType, &[&str]); 6] = [
    (
        SentenceType::Positive,
        &[
            "I think {} is wonderful.",
            "Many people enjoy {}.",
            "{} always cheers me up.",
            "There is a lot to like about {}.",
        ],
    ),
    (
        SentenceType::Negative,
        &[
            "Some people do not care much for {}.",
            "{} is not for everyone.",
            "I find {} a bit tiring sometimes.",
        ],
    ),
    (
        SentenceType::YesNo,
        &["Do you like {}?", "Have you ever tried {}?", "Is {} important to you?"],
    ),
    (
        SentenceType::Open,
        &[
            "What do you think about {}?",
            "What is your favourite memory of {}?",
            "How did you first discover {}?",
        ],
    ),
    (SentenceType::Proposal, &["Do you want me to {}?", "Shall I {} for you?"]),
    (SentenceType::Greeting, &["Hello $name, shall we talk about {}?", "Nice to see you, $name."]),
];

const TRIGGERS: [&str; 4] = [
    "play some music",
    "tell me a joke",
    "show me the weather",
    "read the news",
];

fn word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(2..=3);
    (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

/// Deterministic ontology with `topic_count` topics laid out as a complete
/// tree of the given branching factor (topic `i` is a child of
/// `(i - 1) / branching`), exactly two distinct keywords per topic and
/// `sentences_per_topic` non-inheritable sentences per topic.
pub fn generate_synthetic_ontology(
    topic_count: usize,
    branching: usize,
    sentences_per_topic: usize,
    seed: u64,
) -> Ontology {
    assert!(topic_count >= 1, "topic_count must be positive");
    let branching = branching.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phrases: BTreeMap<SentenceType, &[&str]> = PHRASES.into_iter().collect();

    let mut topics = Vec::with_capacity(topic_count);
    for i in 0..topic_count {
        let stem = word(&mut rng);
        let name = capitalize(&stem);
        let id = format!("t{i}");
        let mut second = word(&mut rng);
        if second == stem {
            second.push('x');
        }
        let keywords = [format!("{stem}{i}"), format!("{second}{i}")]
            .iter()
            .map(|k| KeywordPattern::parse(k).expect("generated keywords are single tokens"))
            .collect();

        let mut per_type_uses: BTreeMap<SentenceType, usize> = BTreeMap::new();
        let offsets: BTreeMap<SentenceType, usize> = TYPE_CYCLE
            .iter()
            .map(|&k| (k, rng.gen_range(0..phrases[&k].len())))
            .collect();
        let sentence_templates = (0..sentences_per_topic)
            .map(|j| {
                let kind = TYPE_CYCLE[j % TYPE_CYCLE.len()];
                let pool = phrases[&kind];
                let round = per_type_uses.entry(kind).or_insert(0);
                let phrase = pool[(offsets[&kind] + *round) % pool.len()];
                let mut trigger = None;
                let mut text = if kind == SentenceType::Proposal {
                    let t = *TRIGGERS.choose(&mut rng).expect("non-empty");
                    trigger = Some(t.to_string());
                    phrase.replace("{}", t)
                } else {
                    phrase.replace("{}", &name)
                };
                if *round >= pool.len() {
                    text = format!("{text} ({})", *round / pool.len());
                }
                *round += 1;
                SentenceTemplate {
                    kind,
                    text,
                    trigger,
                    inheritable: Some(false),
                }
            })
            .collect();

        let level = LikelinessLevel::ALL[rng.gen_range(0..LikelinessLevel::ALL.len())];
        let culture_overrides = BTreeMap::from([(
            DEFAULT_CULTURE.to_string(),
            CultureOverride {
                likeliness: Some(level),
                extra_templates: Vec::new(),
            },
        )]);

        topics.push(TopicConcept {
            id,
            name,
            parent: (i > 0).then(|| format!("t{}", (i - 1) / branching)),
            related: Vec::new(),
            keywords,
            sentence_templates,
            culture_overrides,
        });
    }

    // Link each topic to its next sibling so the `related` edges get
    // exercised at scale too.
    for i in 1..topic_count {
        let next = i + 1;
        if next < topic_count && (i - 1) / branching == (next - 1) / branching {
            let id = topics[next].id.clone();
            topics[i].related.push(id);
        }
    }

    Ontology::new(topics).expect("generated ontology is valid")
}
