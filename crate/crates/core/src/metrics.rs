//! Evaluation metrics: answer normalization, accuracy, and BLEU.
//!
//! All text passes through one normalization rule before comparison:
//! lowercase, remove ASCII punctuation, collapse whitespace runs to single
//! spaces, trim. Tokens are the whitespace-separated pieces of the
//! normalized string.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // std-linked builds resolve float math inherently
use num_traits::Float;

use crate::contract_error;
use crate::error::Result;

/// Lowercases, removes ASCII punctuation, collapses whitespace, trims.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for ch in text.chars() {
        if ch.is_ascii_punctuation() {
            continue;
        }
        if ch.is_whitespace() {
            pending_space = true;
            continue;
        }
        if pending_space && !out.is_empty() {
            out.push(' ');
        }
        pending_space = false;
        for lc in ch.to_lowercase() {
            out.push(lc);
        }
    }
    out
}

/// Whitespace tokens of the normalized text.
pub fn tokenize(text: &str) -> Vec<String> {
    normalize(text)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

/// First standalone single-letter token of the normalized text, if any.
/// This is the choice-answer extraction rule: "The answer is B." → `b`.
pub fn extract_choice_letter(text: &str) -> Option<char> {
    for token in tokenize(text) {
        let mut chars = token.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            if c.is_ascii_alphabetic() {
                return Some(c);
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccuracyMode {
    /// Normalized exact match.
    Open,
    /// Compare extracted choice letters.
    Choice,
}

/// Fraction of predictions counted correct under the mode's rule.
pub fn accuracy(preds: &[&str], golds: &[&str], mode: AccuracyMode) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(contract_error!(
            "{} predictions vs {} golds",
            preds.len(),
            golds.len()
        ));
    }
    if preds.is_empty() {
        return Err(contract_error!("accuracy of an empty list"));
    }
    let correct = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| match mode {
            AccuracyMode::Open => normalize(p) == normalize(g),
            AccuracyMode::Choice => match (extract_choice_letter(p), extract_choice_letter(g)) {
                (Some(a), Some(b)) => a == b,
                _ => false,
            },
        })
        .count();
    Ok(correct as f64 / preds.len() as f64)
}

const BLEU_MAX_N: usize = 4;
const BLEU_EPS: f64 = 1e-9;

/// Clipped n-gram match and total counts for one candidate against its
/// references, plus candidate length and closest reference length.
struct SentenceStats {
    matches: [u64; BLEU_MAX_N],
    totals: [u64; BLEU_MAX_N],
    cand_len: u64,
    ref_len: u64,
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], u64> {
    let mut counts: BTreeMap<&[String], u64> = BTreeMap::new();
    if tokens.len() >= n {
        for start in 0..=tokens.len() - n {
            *counts.entry(&tokens[start..start + n]).or_insert(0) += 1;
        }
    }
    counts
}

fn sentence_stats(candidate: &str, references: &[&str]) -> Result<SentenceStats> {
    if references.is_empty() {
        return Err(contract_error!("BLEU needs at least one reference"));
    }
    let cand = tokenize(candidate);
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();

    let cand_len = cand.len() as u64;
    // Closest reference length; ties go to the shorter reference.
    let ref_len = refs
        .iter()
        .map(|r| r.len() as u64)
        .min_by_key(|&l| (l.abs_diff(cand_len), l))
        .expect("non-empty references");

    let mut stats = SentenceStats {
        matches: [0; BLEU_MAX_N],
        totals: [0; BLEU_MAX_N],
        cand_len,
        ref_len,
    };
    for n in 1..=BLEU_MAX_N {
        let cand_counts = ngram_counts(&cand, n);
        let mut max_ref: BTreeMap<&[String], u64> = BTreeMap::new();
        for r in &refs {
            for (gram, count) in ngram_counts(r, n) {
                let slot = max_ref.entry(gram).or_insert(0);
                *slot = (*slot).max(count);
            }
        }
        for (gram, count) in &cand_counts {
            stats.totals[n - 1] += count;
            let clip = max_ref.get(gram).copied().unwrap_or(0);
            stats.matches[n - 1] += (*count).min(clip);
        }
    }
    Ok(stats)
}

fn bleu_from_stats(stats: &[SentenceStats]) -> f64 {
    let cand_len: u64 = stats.iter().map(|s| s.cand_len).sum();
    if cand_len == 0 {
        return 0.0;
    }
    let ref_len: u64 = stats.iter().map(|s| s.ref_len).sum();
    let mut log_precision_sum = 0.0f64;
    for n in 0..BLEU_MAX_N {
        let m: u64 = stats.iter().map(|s| s.matches[n]).sum();
        let t: u64 = stats.iter().map(|s| s.totals[n]).sum();
        let p = (m as f64 + BLEU_EPS) / (t as f64 + BLEU_EPS);
        log_precision_sum += p.ln();
    }
    let geo_mean = (log_precision_sum / BLEU_MAX_N as f64).exp();
    let bp = if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    let score = bp * geo_mean;
    // Exact matches hit 1.0 despite the log/exp round trip.
    if score > 1.0 {
        1.0
    } else {
        score
    }
}

/// BLEU-4 of one candidate against its references, with add-ε smoothing
/// (ε = 1e-9) of zero-count precisions. Empty candidate scores 0.
pub fn bleu(candidate: &str, references: &[&str]) -> Result<f64> {
    Ok(bleu_from_stats(&[sentence_stats(candidate, references)?]))
}

/// Corpus-level BLEU-4: n-gram counts and lengths pool over all pairs
/// before the precision and brevity-penalty computation.
pub fn bleu_corpus(pairs: &[(&str, Vec<&str>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(contract_error!("BLEU over an empty corpus"));
    }
    let stats = pairs
        .iter()
        .map(|(c, refs)| sentence_stats(c, refs))
        .collect::<Result<Vec<_>>>()?;
    Ok(bleu_from_stats(&stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use alloc::vec;

    #[test]
    fn normalization_rule() {
        assert_eq!(normalize("  The ANSWER   is B. "), "the answer is b");
        assert_eq!(normalize("(A) red!"), "a red");
        assert_eq!(normalize("..."), "");
    }

    #[test]
    fn choice_extraction() {
        assert_eq!(extract_choice_letter("The answer is B."), Some('b'));
        assert_eq!(extract_choice_letter("b"), Some('b'));
        assert_eq!(extract_choice_letter("(C) two"), Some('c'));
        assert_eq!(extract_choice_letter("42"), None);
        assert_eq!(extract_choice_letter("none of these"), None);
    }

    #[test]
    fn accuracy_identical_lists() {
        let xs = ["yes", "2", "red"];
        assert_eq!(accuracy(&xs, &xs, AccuracyMode::Open).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_all_wrong() {
        assert_eq!(
            accuracy(&["a", "b"], &["x", "y"], AccuracyMode::Open).unwrap(),
            0.0
        );
    }

    #[test]
    fn accuracy_choice_extraction_case() {
        let a = accuracy(&["The answer is B."], &["B"], AccuracyMode::Choice).unwrap();
        assert_eq!(a, 1.0);
    }

    #[test]
    fn accuracy_length_mismatch_rejected() {
        assert!(matches!(
            accuracy(&["a"], &["a", "b"], AccuracyMode::Open),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn bleu_perfect_match() {
        let b = bleu("the red square is here", &["The red square is here."]).unwrap();
        assert_eq!(b, 1.0);
    }

    #[test]
    fn bleu_empty_candidate() {
        assert_eq!(bleu("", &["anything at all"]).unwrap(), 0.0);
    }

    #[test]
    fn bleu_empty_references_rejected() {
        assert!(bleu("a b", &[]).is_err());
    }

    #[test]
    fn bleu_short_candidate_hand_case() {
        // p1=p2=p3=1, p4 smoothed to 1 (0/0), BP=exp(1-6/3)=e^-1.
        let b = bleu("the cat sat", &["the cat sat on the mat"]).unwrap();
        assert!((b - (-1.0f64).exp()).abs() < 1e-9, "{b}");
    }

    #[test]
    fn bleu_clipping_repeated_tokens() {
        // "the the the" vs "the cat": clipped unigram matches = 1 of 3.
        let b = bleu("the the the", &["the cat"]).unwrap();
        // p1=1/3, p2..p4 smoothed over zero totals...p2: totals 2, matches 0.
        let p1: f64 = (1.0 + 1e-9) / (3.0 + 1e-9);
        let p2: f64 = 1e-9 / (2.0 + 1e-9);
        let p3: f64 = (0.0 + 1e-9) / (1.0 + 1e-9);
        let p4: f64 = 1.0;
        let geo = (p1.ln() / 4.0 + p2.ln() / 4.0 + p3.ln() / 4.0 + p4.ln() / 4.0).exp();
        let expect = geo * 1.0; // c=3 >= r=2
        assert!((b - expect).abs() < 1e-12, "{b} vs {expect}");
    }

    #[test]
    fn bleu_corpus_pools_counts() {
        let pairs = vec![
            ("the cat sat", vec!["the cat sat on the mat"]),
            ("a dog ran fast", vec!["a dog ran fast"]),
        ];
        let corpus = bleu_corpus(&pairs).unwrap();
        // Pooled: c=7, r=10 → BP=exp(1-10/7); p4 = (1+ε)/(1+ε)=1.
        let p1: f64 = (7.0 + 1e-9) / (7.0 + 1e-9);
        let p2: f64 = (5.0 + 1e-9) / (5.0 + 1e-9);
        let p3: f64 = (3.0 + 1e-9) / (3.0 + 1e-9);
        let p4: f64 = (1.0 + 1e-9) / (1.0 + 1e-9);
        let geo = ((p1.ln() + p2.ln() + p3.ln() + p4.ln()) / 4.0).exp();
        let expect = (1.0f64 - 10.0 / 7.0).exp() * geo;
        assert!((corpus - expect).abs() < 1e-12, "{corpus} vs {expect}");
    }

    #[test]
    fn bleu_closest_ref_length_breaks_ties_short() {
        // candidate length 3; refs of length 2 and 4 → r = 2 → BP = 1.
        let b = bleu("x y z", &["x y", "x y z w"]).unwrap();
        let with_short_r = {
            let p1 = (3.0f64 + 1e-9) / (3.0 + 1e-9);
            let p2 = (2.0f64 + 1e-9) / (2.0 + 1e-9);
            let p3 = (1.0f64 + 1e-9) / (1.0 + 1e-9);
            let p4 = 1.0f64;
            ((p1.ln() + p2.ln() + p3.ln() + p4.ln()) / 4.0).exp()
        };
        assert!((b - with_short_r).abs() < 1e-12, "{b}");
    }
}
