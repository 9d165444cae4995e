//! Published figures of the reference deployment and the worked examples
//! built on them.

use cair_core::client::{build_coverage_state, Fraction};
use cair_core::knowledge::{compile_dialogue_tree, generate_synthetic_ontology};
use cair_core::loadgen::{reference, size_deployment, Ratio, ASSUMED_REQUESTS_PER_MINUTE, DEFAULT_THRESHOLD_MS};

#[test]
fn reference_measurements() {
    assert_eq!(reference::BASELINE_RESPONSE_MS, 189.0);
    assert_eq!(reference::BASELINE_PROCESSING_MS, 107.4);
    assert_eq!(reference::BASELINE_FULL_PAYLOAD_BYTES, 18166);
    assert_eq!(reference::BASELINE_FRESH_PAYLOAD_BYTES, 369);
    assert_eq!(reference::BREAKPOINT_SIMULTANEOUS, 20);
    assert_eq!(reference::BREAKPOINT_RAMPED, 250);
    assert_eq!(reference::PROCESSING_PLATEAU_MS, 450.0);
    assert_eq!(DEFAULT_THRESHOLD_MS, 1000.0);
    assert_eq!(ASSUMED_REQUESTS_PER_MINUTE, 6.0);
}

#[test]
fn subscribers_for_the_measured_breakpoints() {
    let r: Ratio = "0.2".parse().unwrap();
    assert_eq!(size_deployment(20, r), 100);
    assert_eq!(size_deployment(250, r), 1250);
    // 200 subscribers at R = 0.2 is 40 concurrent users, and back.
    assert_eq!(size_deployment(40, r), 200);
}

#[test]
fn coverage_levels_of_the_baseline_payloads() {
    let tree = compile_dialogue_tree(&generate_synthetic_ontology(2780, 3, 8, 42), "EN");
    let covered: Vec<usize> = Fraction::PAYLOADS
        .iter()
        .map(|&f| build_coverage_state(tree.layout(), f, 1).likeliness.len())
        .collect();
    assert_eq!(covered, [0, 926, 1853, 2780]);
}
