//! Interpolated Kneser-Ney trigram language model.
//!
//! Raw trigram counts sit at the top; both lower orders use continuation
//! (type) counts derived from the trigram table, and the unigram level
//! interpolates with a uniform distribution over the closed vocabulary so
//! every token, including UNK, gets positive probability. With discount
//! 0 < D < 1 and all counts >= 1, each level normalizes exactly when the
//! level below it does, which makes the whole model sum to one over the
//! vocabulary for any context.
//!
//! The vocabulary is the set of training token types plus sentence-end and
//! UNK markers. Sentence starts are context-only symbols and are never
//! predicted.

use std::collections::HashMap;

use super::EvalError;

const DISCOUNT: f64 = 0.75;

/// Internal token ids: 0 is the start-of-sentence context marker, 1 the
/// end marker, 2 the unknown-word id; training types follow.
const SOS: u32 = 0;
const EOS_ID: u32 = 1;
const UNK_ID: u32 = 2;

#[derive(Clone, Debug)]
pub struct NGramLM {
    ids: HashMap<String, u32>,
    /// Number of predictable token types (training types + EOS + UNK).
    vocab: usize,
    trigram: HashMap<(u32, u32, u32), u64>,
    /// Per (u, v): total count and distinct-continuation count.
    tri_ctx: HashMap<(u32, u32), (u64, u64)>,
    /// Continuation bigrams: bt(v, w) = |{u : c(u,v,w) > 0}|.
    bigram_types: HashMap<(u32, u32), u64>,
    /// Per v: total bigram type mass and distinct continuations.
    bi_ctx: HashMap<u32, (u64, u64)>,
    /// Continuation unigrams: ut(w) = |{v : bt(v, w) > 0}|.
    unigram_types: HashMap<u32, u64>,
    /// Sum of all ut(w) and the count of w with ut(w) > 0.
    uni_total: u64,
    uni_distinct: u64,
}

/// Trains the trigram model on tokenized sentences.
pub fn train_lm<S: AsRef<str>>(sentences: &[Vec<S>]) -> Result<NGramLM, EvalError> {
    if sentences.is_empty() {
        return Err(EvalError::EmptyInput("language model corpus"));
    }
    let mut ids: HashMap<String, u32> = HashMap::new();
    let mut next = UNK_ID + 1;
    let mut trigram: HashMap<(u32, u32, u32), u64> = HashMap::new();
    for sent in sentences {
        let mut u = SOS;
        let mut v = SOS;
        for tok in sent.iter().map(|t| Some(t.as_ref())).chain(std::iter::once(None)) {
            let w = match tok {
                Some(t) => *ids.entry(t.to_string()).or_insert_with(|| {
                    let id = next;
                    next += 1;
                    id
                }),
                None => EOS_ID,
            };
            *trigram.entry((u, v, w)).or_insert(0) += 1;
            u = v;
            v = w;
        }
    }

    let mut tri_ctx: HashMap<(u32, u32), (u64, u64)> = HashMap::new();
    let mut bigram_types: HashMap<(u32, u32), u64> = HashMap::new();
    for (&(u, v, w), &count) in &trigram {
        let slot = tri_ctx.entry((u, v)).or_insert((0, 0));
        slot.0 += count;
        slot.1 += 1;
        *bigram_types.entry((v, w)).or_insert(0) += 1;
    }
    let mut bi_ctx: HashMap<u32, (u64, u64)> = HashMap::new();
    let mut unigram_types: HashMap<u32, u64> = HashMap::new();
    for (&(v, w), &types) in &bigram_types {
        let slot = bi_ctx.entry(v).or_insert((0, 0));
        slot.0 += types;
        slot.1 += 1;
        *unigram_types.entry(w).or_insert(0) += 1;
    }
    let uni_total: u64 = unigram_types.values().sum();
    let uni_distinct = unigram_types.len() as u64;

    // Predictable vocabulary: training types plus EOS plus UNK; SOS is
    // context-only.
    let vocab = ids.len() + 2;
    Ok(NGramLM {
        ids,
        vocab,
        trigram,
        tri_ctx,
        bigram_types,
        bi_ctx,
        unigram_types,
        uni_total,
        uni_distinct,
    })
}

impl NGramLM {
    /// A model with no n-gram evidence at all: every prediction falls
    /// through to the uniform base, so each token costs exactly 1/|V|.
    pub fn uniform<S: AsRef<str>>(vocabulary: &[S]) -> Result<Self, EvalError> {
        if vocabulary.is_empty() {
            return Err(EvalError::EmptyInput("uniform vocabulary"));
        }
        let mut ids = HashMap::new();
        let mut next = UNK_ID + 1;
        for tok in vocabulary {
            ids.entry(tok.as_ref().to_string()).or_insert_with(|| {
                let id = next;
                next += 1;
                id
            });
        }
        let vocab = ids.len() + 2;
        Ok(NGramLM {
            ids,
            vocab,
            trigram: HashMap::new(),
            tri_ctx: HashMap::new(),
            bigram_types: HashMap::new(),
            bi_ctx: HashMap::new(),
            unigram_types: HashMap::new(),
            uni_total: 0,
            uni_distinct: 0,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    fn p_unigram(&self, w: u32) -> f64 {
        let base = 1.0 / self.vocab as f64;
        if self.uni_total == 0 {
            return base;
        }
        let ut = self.unigram_types.get(&w).copied().unwrap_or(0) as f64;
        let total = self.uni_total as f64;
        (ut - DISCOUNT).max(0.0) / total
            + DISCOUNT * self.uni_distinct as f64 / total * base
    }

    fn p_bigram(&self, v: u32, w: u32) -> f64 {
        let Some(&(total, distinct)) = self.bi_ctx.get(&v) else {
            return self.p_unigram(w);
        };
        let bt = self.bigram_types.get(&(v, w)).copied().unwrap_or(0) as f64;
        let total = total as f64;
        (bt - DISCOUNT).max(0.0) / total
            + DISCOUNT * distinct as f64 / total * self.p_unigram(w)
    }

    fn p_trigram(&self, u: u32, v: u32, w: u32) -> f64 {
        let Some(&(total, distinct)) = self.tri_ctx.get(&(u, v)) else {
            return self.p_bigram(v, w);
        };
        let c = self.trigram.get(&(u, v, w)).copied().unwrap_or(0) as f64;
        let total = total as f64;
        (c - DISCOUNT).max(0.0) / total
            + DISCOUNT * distinct as f64 / total * self.p_bigram(v, w)
    }

    /// Probability of `token` after the two context tokens. `None` in the
    /// context stands for sentence start; `None` as the token stands for
    /// sentence end.
    pub fn prob(&self, context: (Option<&str>, Option<&str>), token: Option<&str>) -> f64 {
        let u = context.0.map_or(SOS, |t| self.id(t));
        let v = context.1.map_or(SOS, |t| self.id(t));
        let w = token.map_or(EOS_ID, |t| self.id(t));
        self.p_trigram(u, v, w)
    }

    /// Total negative log likelihood of one sentence (EOS included) and
    /// the number of predictions made.
    fn sentence_nll<S: AsRef<str>>(&self, tokens: &[S]) -> (f64, usize) {
        let mut u = SOS;
        let mut v = SOS;
        let mut nll = 0.0;
        let mut n = 0;
        for w in tokens
            .iter()
            .map(|t| self.id(t.as_ref()))
            .chain(std::iter::once(EOS_ID))
        {
            nll -= self.p_trigram(u, v, w).ln();
            n += 1;
            u = v;
            v = w;
        }
        (nll, n)
    }

    /// Corpus perplexity: exp of the mean negative log likelihood per
    /// predicted token, end-of-sentence predictions included.
    pub fn perplexity<S: AsRef<str>>(&self, sentences: &[Vec<S>]) -> Result<f64, EvalError> {
        if sentences.is_empty() {
            return Err(EvalError::EmptyInput("perplexity evaluation set"));
        }
        let mut nll = 0.0;
        let mut n = 0usize;
        for sent in sentences {
            let (s_nll, s_n) = self.sentence_nll(sent);
            nll += s_nll;
            n += s_n;
        }
        Ok((nll / n as f64).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;
    use rand::Rng;

    fn sentences(raw: &[&str]) -> Vec<Vec<String>> {
        raw.iter()
            .map(|s| s.split_whitespace().map(str::to_string).collect())
            .collect()
    }

    /// Every predictable token, exercised through the public prob path by
    /// name; the UNK row is reached with an out-of-vocabulary string.
    fn total_mass(lm: &NGramLM, context: (Option<&str>, Option<&str>)) -> f64 {
        let mut mass = lm.prob(context, None);
        mass += lm.prob(context, Some("\u{2}out-of-vocabulary\u{2}"));
        for tok in lm.ids.keys() {
            mass += lm.prob(context, Some(tok));
        }
        mass
    }

    #[test]
    fn hand_computed_probabilities_on_a_two_sentence_corpus() {
        // Corpus {"a b", "a c"}, D = 0.75, V = {a, b, c, EOS, UNK} so
        // |V| = 5. Trigram types (S = start, E = end):
        //   (S,S,a) count 2; (S,a,b) 1; (S,a,c) 1; (a,b,E) 1; (a,c,E) 1.
        // Continuation bigrams bt(v,w) are all 1: (S,a), (a,b), (a,c),
        // (b,E), (c,E). Continuation unigrams: ut(a)=ut(b)=ut(c)=1,
        // ut(E)=2, total 5, distinct 4.
        //
        // P1(b)     = (1-D)/5 + D*(4/5)*(1/5)            = 0.17
        // P1(E)     = (2-D)/5 + D*(4/5)*(1/5)            = 0.37
        // P2(b|a)   = (1-D)/2 + D*(2/2)*P1(b)            = 0.2525
        // P2(a|S)   = (1-D)/1 + D*(1/1)*P1(a)            = 0.3775
        // P2(E|b)   = (1-D)/1 + D*(1/1)*P1(E)            = 0.5275
        // P3(a|S,S) = (2-D)/2 + D*(1/2)*P2(a|S)          = 0.7665625
        // P3(b|S,a) = (1-D)/2 + D*(2/2)*P2(b|a)          = 0.314375
        // P3(E|a,b) = (1-D)/1 + D*(1/1)*P2(E|b)          = 0.645625
        let lm = train_lm(&sentences(&["a b", "a c"])).unwrap();
        assert_eq!(lm.vocab_size(), 5);
        let eps = 1e-12;
        assert!((lm.prob((None, None), Some("a")) - 0.7665625).abs() < eps);
        assert!((lm.prob((None, Some("a")), Some("b")) - 0.314375).abs() < eps);
        assert!((lm.prob((Some("a"), Some("b")), None) - 0.645625).abs() < eps);
        // Unseen continuation in a seen context backs off smoothly.
        let p_unseen = lm.prob((None, Some("a")), Some("a"));
        assert!(p_unseen > 0.0 && p_unseen < 0.314375);
    }

    #[test]
    fn conditional_distributions_normalize() {
        let corpus = sentences(&[
            "the cat sat on the mat",
            "the dog sat on the rug",
            "a cat and a dog",
            "the mat was warm",
            "dogs and cats play",
        ]);
        let lm = train_lm(&corpus).unwrap();
        // Seen trigram context, seen bigram-only context, start context,
        // and a fully unseen context.
        let contexts = [
            (Some("the"), Some("cat")),
            (Some("on"), Some("the")),
            (None, None),
            (None, Some("the")),
            (Some("warm"), Some("play")),
            (Some("\u{3}x"), Some("\u{3}y")),
        ];
        for ctx in contexts {
            let mass = total_mass(&lm, ctx);
            assert!(
                (mass - 1.0).abs() < 1e-6,
                "context {ctx:?} sums to {mass}"
            );
        }
    }

    #[test]
    fn repeated_single_token_corpus_is_nearly_certain() {
        let corpus: Vec<Vec<String>> = (0..50).map(|_| vec!["a".to_string()]).collect();
        let lm = train_lm(&corpus).unwrap();
        let ppl = lm.perplexity(&sentences(&["a"])).unwrap();
        assert!(ppl > 1.0 && ppl < 1.5, "ppl {ppl}");
    }

    #[test]
    fn uniform_model_costs_vocab_size() {
        let vocabulary: Vec<String> = (0..18).map(|i| format!("w{i}")).collect();
        let lm = NGramLM::uniform(&vocabulary).unwrap();
        // 18 words + EOS + UNK.
        assert_eq!(lm.vocab_size(), 20);
        let text = sentences(&["w0 w5 w17 w3", "w2 w2"]);
        let ppl = lm.perplexity(&text).unwrap();
        assert!((ppl - 20.0).abs() < 1e-9, "ppl {ppl}");
    }

    #[test]
    fn training_text_scores_better_than_random_strings() {
        let corpus = sentences(&[
            "the service was really good",
            "the food was really bad",
            "we loved the friendly staff",
            "the staff was very rude",
            "really great food and service",
            "the place was good",
        ]);
        let lm = train_lm(&corpus).unwrap();
        let train_ppl = lm.perplexity(&corpus).unwrap();

        // Same length profile, words drawn uniformly from the vocabulary.
        let words: Vec<&String> = lm.ids.keys().collect();
        let mut rng = seeded_rng(1234);
        let random: Vec<Vec<String>> = corpus
            .iter()
            .map(|s| {
                (0..s.len())
                    .map(|_| words[(rng.gen::<u64>() % words.len() as u64) as usize].clone())
                    .collect()
            })
            .collect();
        let random_ppl = lm.perplexity(&random).unwrap();
        assert!(
            train_ppl < random_ppl,
            "train {train_ppl} not below random {random_ppl}"
        );
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let lm = train_lm(&sentences(&["a b c"])).unwrap();
        let p1 = lm.prob((Some("a"), Some("b")), Some("zzz"));
        let p2 = lm.prob((Some("a"), Some("b")), Some("qqq"));
        assert!((p1 - p2).abs() < 1e-15);
        assert!(p1 > 0.0);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(matches!(
            train_lm(&Vec::<Vec<String>>::new()),
            Err(EvalError::EmptyInput(_))
        ));
        let lm = train_lm(&sentences(&["a"])).unwrap();
        assert!(matches!(
            lm.perplexity(&Vec::<Vec<String>>::new()),
            Err(EvalError::EmptyInput(_))
        ));
    }
}
