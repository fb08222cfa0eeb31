use std::path::PathBuf;

use mlm_audit_core::gateway::MASK_PLACEHOLDER;
use mlm_audit_models::load_model;
use serde::Deserialize;

#[derive(Deserialize)]
struct Probe {
    text: String,
    ids: Vec<u32>,
    position: usize,
    probs: Vec<f64>,
}

#[derive(Deserialize)]
struct Pll {
    text: String,
    ids: Vec<u32>,
    pll: f64,
    tokens: usize,
}

#[derive(Deserialize)]
struct Reference {
    probes: Vec<Probe>,
    pll: Vec<Pll>,
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn check(name: &str) {
    let dir = fixture(name);
    let reference: Reference =
        serde_json::from_str(&std::fs::read_to_string(dir.join("reference.json")).unwrap()).unwrap();
    let handle = load_model(dir.to_str().unwrap()).unwrap();

    for probe in &reference.probes {
        let enc = handle.encode(&probe.text).unwrap();
        assert_eq!(enc.ids, probe.ids, "{name}: token ids for {}", probe.text);
        // The generic placeholder is rewritten to the model's own mask token.
        let generic = probe.text.replace(handle.mask_token(), MASK_PLACEHOLDER);
        let dist = handle.mask_distribution(&generic).unwrap();
        assert_eq!(dist.position, probe.position);
        assert!((dist.total() - 1.0).abs() < 1e-9);
        assert_eq!(dist.probs.len(), probe.probs.len());
        let worst = dist
            .probs
            .iter()
            .zip(&probe.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-5, "{name}: max probability error {worst} on {}", probe.text);
    }

    for case in &reference.pll {
        assert_eq!(handle.encode(&case.text).unwrap().ids, case.ids);
        let score = handle.pseudo_log_likelihood(&case.text).unwrap();
        assert_eq!(score.token_count, case.tokens);
        let rel = ((score.pll - case.pll) / case.pll).abs();
        assert!(rel < 1e-5, "{name}: pll {} vs {}", score.pll, case.pll);
    }
}

#[test]
fn bert_matches_reference() {
    check("bert");
}

#[test]
fn distilbert_matches_reference() {
    check("distilbert");
}

#[test]
fn roberta_matches_reference() {
    check("roberta");
}

#[test]
fn albert_matches_reference() {
    check("albert");
}

#[test]
fn multi_token_words_score_as_slot_products() {
    let handle = load_model(fixture("bert").to_str().unwrap()).unwrap();
    let p = handle
        .score_word_at_mask("It is a [MASK] that is cooked.", "penguin")
        .unwrap();
    assert!(p > 0.0 && p < 1.0);
    let single = handle.score_word_at_mask("It is a [MASK] that is cooked.", "cow").unwrap();
    let dist = handle.mask_distribution("It is a [MASK] that is cooked.").unwrap();
    assert_eq!(single, dist.probs[handle.token_id("cow").unwrap() as usize]);
}

#[test]
fn unknown_ids_are_reported() {
    assert!(load_model("no-such-model-anywhere").is_err());
    let synthetic = load_model("synthetic:3").unwrap();
    assert_eq!(synthetic.model_id(), "synthetic:3");
    assert!(load_model("synthetic:x").is_err());
}
