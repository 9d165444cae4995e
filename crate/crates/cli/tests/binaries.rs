use std::process::Command;

fn data(name: &str) -> String {
    format!("{}/../../data/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn sizing_prints_the_user_count() {
    let out = Command::new(env!("CARGO_BIN_EXE_cair-load"))
        .args(["size", "--n", "1000", "--r", "0.2"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "M = 5000");
}

#[test]
fn sizing_rejects_ratios_above_one() {
    let out = Command::new(env!("CARGO_BIN_EXE_cair-load"))
        .args(["size", "--n", "1000", "--r", "1.5"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("got 1.5"));
}

#[test]
fn compiled_tree_feeds_the_stats_command() {
    let dir = tempfile::tempdir().unwrap();
    let tree = dir.path().join("dt.bin");
    let stats = dir.path().join("stats.json");
    let kb = env!("CARGO_BIN_EXE_cair-kb");
    let compiled = Command::new(kb)
        .args(["compile", &data("ontology.json"), "--out", tree.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(compiled.status.success(), "{}", String::from_utf8_lossy(&compiled.stderr));

    let out = Command::new(kb)
        .args(["stats", tree.to_str().unwrap(), "--out", stats.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("topics: 6"), "{text}");
    let written: serde_json::Value = serde_json::from_slice(&std::fs::read(&stats).unwrap()).unwrap();
    assert_eq!(written["layout"]["topics"].as_array().unwrap().len(), 6);
}
