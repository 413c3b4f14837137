//! Golden-value checks for the evaluation metrics.
//!
//! The BLEU fixture under tests/data was scored with a separate
//! implementation of corpus BLEU (clipped precisions, corpus-level
//! statistics, closest-reference brevity penalty) written independently
//! of this crate; the expected number is frozen here.

use fgim_core::evalsuite::corpus_bleu;

const GOLDEN_BLEU: f64 = 73.58246092240614;

fn load_fixture() -> (Vec<Vec<String>>, Vec<Vec<Vec<String>>>) {
    let raw = include_str!("data/bleu_golden.tsv");
    let mut candidates = Vec::new();
    let mut references = Vec::new();
    for line in raw.lines() {
        let (cand, reference) = line.split_once('\t').expect("fixture rows are cand<TAB>ref");
        candidates.push(cand.split_whitespace().map(str::to_string).collect());
        references.push(vec![reference
            .split_whitespace()
            .map(str::to_string)
            .collect()]);
    }
    (candidates, references)
}

#[test]
fn golden_corpus_matches_the_independent_implementation() {
    let (candidates, references) = load_fixture();
    assert_eq!(candidates.len(), 20);
    let score = corpus_bleu(&candidates, &references).unwrap();
    assert!(
        (score - GOLDEN_BLEU).abs() < 1e-9,
        "score {score} differs from golden {GOLDEN_BLEU}"
    );
}

#[test]
fn golden_corpus_against_itself_is_100() {
    let (candidates, _) = load_fixture();
    let self_refs: Vec<Vec<Vec<String>>> =
        candidates.iter().map(|c| vec![c.clone()]).collect();
    let score = corpus_bleu(&candidates, &self_refs).unwrap();
    assert!((score - 100.0).abs() < 1e-9);
}
