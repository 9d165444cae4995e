use std::hint::black_box;

use cair_core::client::{build_coverage_state, Fraction};
use cair_core::dialogmgr::dialogue_step;
use cair_core::hub::{encode, Hub, HubRequest, Route};
use cair_core::knowledge::{compile_dialogue_tree, generate_synthetic_ontology};
use cair_core::planmgr::{load_intent_registry, match_intent};
use cair_core::state::ClientState;
use criterion::{criterion_group, criterion_main, Criterion};

const INTENTS: &str = include_str!("../../../data/intents.json");

fn planning(c: &mut Criterion) {
    let registry = load_intent_registry(INTENTS).unwrap();
    c.bench_function("match_intent/hit", |b| {
        b.iter(|| match_intent(black_box("Play the song Hey Brother"), &registry))
    });
    c.bench_function("match_intent/miss", |b| {
        b.iter(|| match_intent(black_box("tell me something else"), &registry))
    });
}

fn knowledge(c: &mut Criterion) {
    let ontology = generate_synthetic_ontology(2780, 3, 8, 42);
    let mut group = c.benchmark_group("compile");
    group.sample_size(10);
    group.bench_function("2780 topics", |b| b.iter(|| compile_dialogue_tree(black_box(&ontology), "EN")));
    group.finish();
}

fn dialogue(c: &mut Criterion) {
    let ontology = generate_synthetic_ontology(2780, 3, 8, 42);
    let registry = load_intent_registry(INTENTS).unwrap();
    let tree = compile_dialogue_tree(&ontology, "EN");
    let fresh = ClientState::new("EN", tree.root_id());
    let full = build_coverage_state(tree.layout(), Fraction::ONE, 0);
    c.bench_function("dialogue_step/fresh", |b| {
        b.iter(|| dialogue_step("tell me something else", black_box(&fresh), &[], &tree, &registry, Some(1)))
    });
    c.bench_function("dialogue_step/full coverage", |b| {
        b.iter(|| dialogue_step("tell me something else", black_box(&full), &[], &tree, &registry, Some(1)))
    });

    // The whole request path the server times: decode, plan, dialogue, encode.
    let hub = Hub::new(&ontology, registry, "EN");
    for (label, fraction) in [("hub/empty payload", Fraction::ZERO), ("hub/full payload", Fraction::ONE)] {
        let state = build_coverage_state(tree.layout(), fraction, 0).to_wire(tree.layout());
        let body = encode(&HubRequest {
            client_sentence: "tell me something else".into(),
            client_state: state,
            seed: Some(1),
            culture: None,
        });
        c.bench_function(label, |b| b.iter(|| hub.handle_json(Route::Hub, black_box(&body))));
    }
}

criterion_group!(benches, planning, knowledge, dialogue);
criterion_main!(benches);
