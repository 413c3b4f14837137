//! Synthetic restaurant-review corpora for end-to-end exercises.
//!
//! Sentences are template fills over small word pools, so the full
//! combination space is enumerable. Splits are cut from one deterministic
//! shuffle of that space, which keeps train, dev, and test disjoint as
//! token sequences and balanced across attribute values. The single-aspect
//! corpus carries one sentiment; the two-aspect corpus fills a food slot
//! and a service slot independently, each from its own adjective pool, so
//! the aspects can be judged separately from surface text.

use std::io;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::numerics::{derive_seed, seeded_rng};
use crate::textdata::{Corpus, CorpusItem, DatasetSplits, Split};

/// Split sizes and the shuffle seed.
#[derive(Clone, Debug, PartialEq)]
pub struct ToySpec {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec { n_train: 2000, n_dev: 200, n_test: 200, seed: 1 }
    }
}

const NOUNS: &[&str] = &[
    "food", "pizza", "pasta", "steak", "soup", "salad", "dessert", "coffee", "bread", "wine",
    "service", "staff", "place", "kitchen", "menu",
];
const POS_ADJ: &[&str] = &[
    "great", "delicious", "fresh", "wonderful", "tasty", "perfect", "amazing", "lovely",
    "excellent", "superb",
];
const NEG_ADJ: &[&str] = &[
    "awful", "bland", "stale", "terrible", "soggy", "greasy", "cold", "disappointing",
    "horrible", "mediocre",
];

/// Every distinct sentence for one polarity of the single-aspect corpus.
/// One clause and one adjective per sentence, so polarity is a one-token
/// rewrite and the latent edit has a single word to change.
fn sentiment_pool(positive: bool) -> Vec<Vec<String>> {
    let adjs = if positive { POS_ADJ } else { NEG_ADJ };
    let mut out: Vec<Vec<String>> = Vec::new();
    let mut push = |words: Vec<&str>| out.push(words.into_iter().map(str::to_string).collect());
    for &n in NOUNS {
        for &a in adjs {
            push(vec![a, n]);
            push(vec!["really", a, n]);
            push(vec![a, n, "overall"]);
            push(vec!["the", n, "was", a]);
            push(vec!["the", n, "is", a]);
            push(vec!["the", n, "seemed", a]);
            push(vec!["the", n, "was", "really", a]);
            push(vec!["the", n, "was", "just", a]);
            push(vec!["honestly", "the", n, "was", a]);
            push(vec!["i", "thought", "the", n, "was", a]);
        }
    }
    out
}

/// Single-aspect sentiment corpus: attribute 0.0 is negative, 1.0 is
/// positive. Splits are disjoint and each is half negative, half positive.
pub fn sentiment_corpus(spec: &ToySpec) -> DatasetSplits {
    let pools = vec![
        (vec![0.0], sentiment_pool(false)),
        (vec![1.0], sentiment_pool(true)),
    ];
    assemble(spec, pools, &["sentiment"])
}

const FOOD_NOUNS: &[&str] =
    &["food", "pizza", "pasta", "steak", "soup", "salad", "dessert", "bread"];
const SERVICE_NOUNS: &[&str] = &["service", "staff", "waiter", "host", "crew"];
const FOOD_POS: &[&str] = &["delicious", "fresh", "tasty", "superb", "flavorful"];
const FOOD_NEG: &[&str] = &["bland", "stale", "soggy", "greasy", "overcooked"];
const SERVICE_POS: &[&str] = &["friendly", "attentive", "welcoming", "helpful", "prompt"];
const SERVICE_NEG: &[&str] = &["rude", "slow", "dismissive", "careless", "unhelpful"];

/// Every distinct sentence for one corner of the two-aspect corpus.
fn two_aspect_pool(food_positive: bool, service_positive: bool) -> Vec<Vec<String>> {
    let fas = if food_positive { FOOD_POS } else { FOOD_NEG };
    let sas = if service_positive { SERVICE_POS } else { SERVICE_NEG };
    let mut out: Vec<Vec<String>> = Vec::new();
    let mut push = |words: Vec<&str>| out.push(words.into_iter().map(str::to_string).collect());
    for &fn_ in FOOD_NOUNS {
        for &sn in SERVICE_NOUNS {
            for &fa in fas {
                for &sa in sas {
                    push(vec!["the", fn_, "was", fa, "and", "the", sn, "was", sa]);
                    push(vec![fa, fn_, "but", sa, sn]);
                    push(vec!["the", fn_, "was", fa, "but", "the", sn, "was", sa]);
                    push(vec![fn_, "was", fa, "and", sn, "was", sa]);
                }
            }
        }
    }
    out
}

/// Two-aspect corpus over (food sentiment, service sentiment). All four
/// corners appear equally often in every split.
pub fn two_aspect_corpus(spec: &ToySpec) -> DatasetSplits {
    let pools = vec![
        (vec![0.0, 0.0], two_aspect_pool(false, false)),
        (vec![0.0, 1.0], two_aspect_pool(false, true)),
        (vec![1.0, 0.0], two_aspect_pool(true, false)),
        (vec![1.0, 1.0], two_aspect_pool(true, true)),
    ];
    assemble(spec, pools, &["food", "service"])
}

/// Shuffles each attribute pool once, deals equal shares into the three
/// splits, then shuffles each split so attribute values interleave.
fn assemble(
    spec: &ToySpec,
    pools: Vec<(Vec<f64>, Vec<Vec<String>>)>,
    attr_names: &[&str],
) -> DatasetSplits {
    let groups = pools.len();
    let quota = |total: usize| {
        assert!(
            total % groups == 0,
            "split size {total} must divide evenly among {groups} attribute groups"
        );
        total / groups
    };
    let (tq, dq, eq) = (quota(spec.n_train), quota(spec.n_dev), quota(spec.n_test));

    let max_len = pools
        .iter()
        .flat_map(|(_, pool)| pool.iter().map(|s| s.len() + 1))
        .max()
        .expect("pools are never empty");
    let mut splits: Vec<Vec<CorpusItem>> = vec![Vec::new(), Vec::new(), Vec::new()];
    for (attrs, mut pool) in pools {
        assert!(
            pool.len() >= tq + dq + eq,
            "pool of {} sentences cannot fill {} slots",
            pool.len(),
            tq + dq + eq
        );
        let stream = format!("toy-{}", attrs.iter().map(|a| a.to_string()).collect::<String>());
        pool.shuffle(&mut seeded_rng(derive_seed(spec.seed, &stream)));
        let mut took = 0;
        for (slot, q) in [(0, tq), (1, dq), (2, eq)] {
            for tokens in &pool[took..took + q] {
                splits[slot].push(CorpusItem {
                    tokens: tokens.clone(),
                    attrs: attrs.clone(),
                    reference: None,
                });
            }
            took += q;
        }
    }
    let names: Vec<String> = attr_names.iter().map(|s| s.to_string()).collect();
    let mut make = |slot: usize, split: Split| {
        let mut items = std::mem::take(&mut splits[slot]);
        items.shuffle(&mut seeded_rng(derive_seed(spec.seed, split.name())));
        Corpus { split, items, attr_names: names.clone(), max_len }
    };
    DatasetSplits {
        train: make(0, Split::Train),
        dev: Some(make(1, Split::Dev)),
        test: Some(make(2, Split::Test)),
    }
}

/// Writes `<split>.<value name>` sentence files for a one-aspect corpus,
/// matching the file-per-attribute dataset layout.
pub fn write_file_per_attribute(
    splits: &DatasetSplits,
    dir: &Path,
    value_names: &[&str; 2],
) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let corpora = [Some(&splits.train), splits.dev.as_ref(), splits.test.as_ref()];
    for corpus in corpora.into_iter().flatten() {
        for (value, name) in value_names.iter().enumerate() {
            let lines: Vec<String> = corpus
                .items
                .iter()
                .filter(|it| it.attrs == [value as f64])
                .map(|it| it.tokens.join(" "))
                .collect();
            let path = dir.join(format!("{}.{name}", corpus.split.name()));
            std::fs::write(path, lines.join("\n") + "\n")?;
        }
    }
    Ok(())
}

/// Writes `<split>.tsv` files: sentence column, then one rating column per
/// aspect.
pub fn write_tsv(splits: &DatasetSplits, dir: &Path) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let corpora = [Some(&splits.train), splits.dev.as_ref(), splits.test.as_ref()];
    for corpus in corpora.into_iter().flatten() {
        let lines: Vec<String> = corpus
            .items
            .iter()
            .map(|it| {
                let ratings: Vec<String> = it.attrs.iter().map(f64::to_string).collect();
                format!("{}\t{}", it.tokens.join(" "), ratings.join("\t"))
            })
            .collect();
        let path = dir.join(format!("{}.tsv", corpus.split.name()));
        std::fs::write(path, lines.join("\n") + "\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn token_set(corpus: &Corpus) -> HashSet<&str> {
        corpus
            .items
            .iter()
            .flat_map(|it| it.tokens.iter().map(String::as_str))
            .collect()
    }

    fn sentence_set(corpus: &Corpus) -> HashSet<String> {
        corpus.items.iter().map(|it| it.tokens.join(" ")).collect()
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ToySpec::default();
        let a = sentiment_corpus(&spec);
        let b = sentiment_corpus(&spec);
        for (x, y) in a.train.items.iter().zip(&b.train.items) {
            assert_eq!(x.tokens, y.tokens);
            assert_eq!(x.attrs, y.attrs);
        }
        let c = sentiment_corpus(&ToySpec { seed: 2, ..spec });
        assert_ne!(
            a.train.items.iter().map(|i| i.tokens.clone()).collect::<Vec<_>>(),
            c.train.items.iter().map(|i| i.tokens.clone()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn splits_are_disjoint_and_sized() {
        let spec = ToySpec::default();
        let ds = sentiment_corpus(&spec);
        let (dev, test) = (ds.dev.unwrap(), ds.test.unwrap());
        assert_eq!(ds.train.len(), 2000);
        assert_eq!(dev.len(), 200);
        assert_eq!(test.len(), 200);
        let train_set = sentence_set(&ds.train);
        assert_eq!(train_set.len(), 2000, "train sentences repeat");
        assert!(sentence_set(&test).is_disjoint(&train_set));
        assert!(sentence_set(&dev).is_disjoint(&train_set));
    }

    #[test]
    fn vocabulary_stays_small_and_sentences_short() {
        let ds = sentiment_corpus(&ToySpec::default());
        let vocab = token_set(&ds.train);
        assert!(vocab.len() <= 200, "vocabulary has {} types", vocab.len());
        let longest = ds.train.items.iter().map(|it| it.tokens.len()).max().unwrap();
        assert!(longest + 1 <= ds.train.max_len);
        assert!(ds.train.max_len <= 12);
    }

    #[test]
    fn sentiment_labels_follow_the_adjective_pool() {
        let ds = sentiment_corpus(&ToySpec::default());
        let pos: HashSet<&str> = POS_ADJ.iter().copied().collect();
        let neg: HashSet<&str> = NEG_ADJ.iter().copied().collect();
        let mut positives = 0usize;
        for it in &ds.train.items {
            let has_pos = it.tokens.iter().any(|t| pos.contains(t.as_str()));
            let has_neg = it.tokens.iter().any(|t| neg.contains(t.as_str()));
            assert!(has_pos != has_neg, "mixed polarity in {:?}", it.tokens);
            assert_eq!(it.attrs, [if has_pos { 1.0 } else { 0.0 }]);
            positives += usize::from(has_pos);
        }
        assert_eq!(positives, ds.train.len() / 2);
    }

    #[test]
    fn two_aspect_corpus_covers_all_corners_evenly() {
        let spec = ToySpec { n_train: 400, n_dev: 40, n_test: 100, seed: 3 };
        let ds = two_aspect_corpus(&spec);
        let mut counts = [0usize; 4];
        for it in &ds.train.items {
            let corner = (it.attrs[0] as usize) * 2 + it.attrs[1] as usize;
            counts[corner] += 1;
        }
        assert_eq!(counts, [100, 100, 100, 100]);
        assert_eq!(ds.test.unwrap().len(), 100);
    }

    #[test]
    fn two_aspect_adjectives_stay_in_their_lane() {
        let ds = two_aspect_corpus(&ToySpec { n_train: 400, n_dev: 40, n_test: 40, seed: 3 });
        let fpos: HashSet<&str> = FOOD_POS.iter().copied().collect();
        let fneg: HashSet<&str> = FOOD_NEG.iter().copied().collect();
        let spos: HashSet<&str> = SERVICE_POS.iter().copied().collect();
        let sneg: HashSet<&str> = SERVICE_NEG.iter().copied().collect();
        for it in &ds.train.items {
            let food_pos = it.tokens.iter().any(|t| fpos.contains(t.as_str()));
            let food_neg = it.tokens.iter().any(|t| fneg.contains(t.as_str()));
            let svc_pos = it.tokens.iter().any(|t| spos.contains(t.as_str()));
            let svc_neg = it.tokens.iter().any(|t| sneg.contains(t.as_str()));
            assert!(food_pos != food_neg && svc_pos != svc_neg);
            assert_eq!(it.attrs[0], if food_pos { 1.0 } else { 0.0 });
            assert_eq!(it.attrs[1], if svc_pos { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn written_files_load_back_identically() {
        use crate::textdata::{load_dataset, Layout};
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().to_path_buf();
        let spec = ToySpec { n_train: 80, n_dev: 20, n_test: 20, seed: 5 };

        let ds = sentiment_corpus(&spec);
        write_file_per_attribute(&ds, &dir, &["neg", "pos"]).unwrap();
        let names = vec!["neg".to_string(), "pos".to_string()];
        let loaded = load_dataset(&dir, Layout::FilePerAttribute, &names, 12).unwrap();
        // File-per-attribute groups by value, so compare as multisets.
        let mut want: Vec<String> =
            ds.train.items.iter().map(|it| format!("{:?}{:?}", it.tokens, it.attrs)).collect();
        let mut got: Vec<String> = loaded
            .train
            .items
            .iter()
            .map(|it| format!("{:?}{:?}", it.tokens, it.attrs))
            .collect();
        want.sort();
        got.sort();
        assert_eq!(want, got);

        let ds2 = two_aspect_corpus(&spec);
        write_tsv(&ds2, &dir).unwrap();
        let cols = vec!["food".to_string(), "service".to_string()];
        let loaded2 = load_dataset(&dir, Layout::Tsv, &cols, 12).unwrap();
        for (a, b) in ds2.train.items.iter().zip(&loaded2.train.items) {
            assert_eq!(a.tokens, b.tokens);
            assert_eq!(a.attrs, b.attrs);
        }
    }
}
