//! Corpus-level BLEU with clipped n-gram precision and no smoothing.
//!
//! Matching the classic multi-bleu script: matches and totals accumulate
//! over the whole corpus before any division, the brevity penalty uses the
//! closest reference length per sentence (ties broken toward the shorter),
//! and a zero precision at any order zeroes the score outright.

use std::collections::HashMap;

use super::EvalError;

const MAX_N: usize = 4;

/// BLEU in [0, 100] for `candidates[i]` against the reference set
/// `references[i]`. Every candidate needs at least one reference.
pub fn corpus_bleu(
    candidates: &[Vec<String>],
    references: &[Vec<Vec<String>>],
) -> Result<f64, EvalError> {
    if candidates.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(EvalError::EmptyInput("bleu corpus"));
    }
    for refs in references {
        if refs.is_empty() {
            return Err(EvalError::EmptyInput("reference set"));
        }
    }

    let mut matches = [0u64; MAX_N];
    let mut totals = [0u64; MAX_N];
    let mut cand_len = 0u64;
    let mut ref_len = 0u64;

    for (cand, refs) in candidates.iter().zip(references) {
        cand_len += cand.len() as u64;
        ref_len += closest_ref_len(cand.len(), refs) as u64;
        for n in 1..=MAX_N {
            let cand_counts = ngram_counts(cand, n);
            if cand_counts.is_empty() {
                continue;
            }
            // Clip each candidate n-gram by its maximum count in any
            // single reference.
            let mut ref_max: HashMap<&[String], u64> = HashMap::new();
            for r in refs {
                for (gram, count) in ngram_counts(r, n) {
                    let slot = ref_max.entry(gram).or_insert(0);
                    *slot = (*slot).max(count);
                }
            }
            for (gram, count) in &cand_counts {
                totals[n - 1] += count;
                matches[n - 1] += (*count).min(ref_max.get(gram).copied().unwrap_or(0));
            }
        }
    }

    let mut log_precision_sum = 0.0;
    for n in 0..MAX_N {
        if totals[n] == 0 || matches[n] == 0 {
            return Ok(0.0);
        }
        log_precision_sum += (matches[n] as f64 / totals[n] as f64).ln();
    }
    let brevity = if cand_len < ref_len {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * brevity * (log_precision_sum / MAX_N as f64).exp())
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for i in 0..=tokens.len() - n {
            *counts.entry(&tokens[i..i + n]).or_insert(0) += 1;
        }
    }
    counts
}

fn closest_ref_len(cand_len: usize, refs: &[Vec<String>]) -> usize {
    let mut best = refs[0].len();
    for r in &refs[1..] {
        let len = r.len();
        let better = len.abs_diff(cand_len) < best.abs_diff(cand_len)
            || (len.abs_diff(cand_len) == best.abs_diff(cand_len) && len < best);
        if better {
            best = len;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn single_ref(pairs: &[(&str, &str)]) -> (Vec<Vec<String>>, Vec<Vec<Vec<String>>>) {
        let cands = pairs.iter().map(|(c, _)| toks(c)).collect();
        let refs = pairs.iter().map(|(_, r)| vec![toks(r)]).collect();
        (cands, refs)
    }

    #[test]
    fn identical_corpus_scores_100() {
        let (c, r) = single_ref(&[
            ("the cat sat on the mat", "the cat sat on the mat"),
            ("a quick brown fox jumps", "a quick brown fox jumps"),
        ]);
        let score = corpus_bleu(&c, &r).unwrap();
        assert!((score - 100.0).abs() < 1e-9, "score {score}");
    }

    #[test]
    fn disjoint_corpus_scores_0() {
        let (c, r) = single_ref(&[("aa bb cc dd", "ee ff gg hh")]);
        assert_eq!(corpus_bleu(&c, &r).unwrap(), 0.0);
    }

    #[test]
    fn clipping_zeroes_repeated_token_spam() {
        // "the the the the" vs "the cat sat down": unigram precision is
        // clipped to 1/4 and there are no matching bigrams, so the score
        // collapses to 0 without smoothing.
        let (c, r) = single_ref(&[("the the the the", "the cat sat down")]);
        assert_eq!(corpus_bleu(&c, &r).unwrap(), 0.0);
    }

    #[test]
    fn short_candidates_with_no_4grams_score_0() {
        let (c, r) = single_ref(&[("one two", "one two")]);
        assert_eq!(corpus_bleu(&c, &r).unwrap(), 0.0);
    }

    #[test]
    fn brevity_penalty_uses_closest_reference_length() {
        // Candidate of 4 tokens, references of lengths 4 and 8: the
        // closest (4) wins and no penalty applies.
        let cand = vec![toks("a b c d")];
        let refs = vec![vec![toks("a b c d"), toks("a b c d e f g h")]];
        let score = corpus_bleu(&cand, &refs).unwrap();
        assert!((score - 100.0).abs() < 1e-9);

        // Ties break toward the shorter reference: candidate length 5,
        // references 6 and 4 away by 1 each. Every precision is 1 here,
        // so picking r = 4 <= c = 5 must leave the score at exactly 100;
        // picking r = 6 would have cost exp(1 - 6/5).
        let cand = vec![toks("a b c d e")];
        let refs = vec![vec![toks("a b c d e f"), toks("a b c d")]];
        let score = corpus_bleu(&cand, &refs).unwrap();
        assert!((score - 100.0).abs() < 1e-9, "score {score}");
    }

    #[test]
    fn brevity_penalty_formula_on_a_short_candidate() {
        // Perfect 4-token prefix of an 8-token reference: every precision
        // is 1, so the score is exactly 100 * exp(1 - 8/4).
        let (c, r) = single_ref(&[("a b c d", "a b c d e f g h")]);
        let score = corpus_bleu(&c, &r).unwrap();
        let want = 100.0 * (1.0f64 - 2.0).exp();
        assert!((score - want).abs() < 1e-9, "score {score} want {want}");
    }

    #[test]
    fn corpus_statistics_not_sentence_averages() {
        // Reordering the corpus must not change the score.
        let (c1, r1) = single_ref(&[
            ("the cat sat on the mat", "the cat sat on a mat"),
            ("dogs bark loudly at night", "dogs bark at night loudly"),
            ("a b c d e", "a b c d e"),
        ]);
        let (c2, r2) = single_ref(&[
            ("a b c d e", "a b c d e"),
            ("the cat sat on the mat", "the cat sat on a mat"),
            ("dogs bark loudly at night", "dogs bark at night loudly"),
        ]);
        let s1 = corpus_bleu(&c1, &r1).unwrap();
        let s2 = corpus_bleu(&c2, &r2).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
        assert!(s1 > 0.0 && s1 < 100.0);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let c = vec![toks("a b")];
        assert!(matches!(
            corpus_bleu(&c, &[]),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(matches!(
            corpus_bleu(&[], &[]),
            Err(EvalError::EmptyInput(_))
        ));
    }
}
